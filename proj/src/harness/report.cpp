#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "metacv/error.hpp"
#include "metacv/harness.hpp"

namespace metacv::harness {

namespace fs = std::filesystem;

namespace {

const char* const kSummaryHeader =
    "config_hash,train_hash,seed,version,axis,axis_value,estimator,n_tasks,n_failed,mae,ci95,"
    "total_fit_ms,total_wall_ms";
constexpr int kSummaryTimingColumns = 2;

std::string sanitize(std::string s) {
  for (char& c : s) {
    if (c == ',' || c == '\n' || c == '\r' || c == '"') c = ';';
  }
  return s;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::stringstream in(line);
  while (std::getline(in, item, sep)) out.push_back(item);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const std::string& where) {
  if (s == "nan") return std::nan("");
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw ConfigError(where + ": malformed number '" + s + "'");
  return v;
}

}  // namespace

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string per_task_csv(const RunResult& r) {
  std::ostringstream out;
  out << "config_hash,seed,version,estimator,task,estimate,std_error,truth,abs_error,status,fit_ms,"
         "wall_ms\n";
  for (const auto& t : r.per_task) {
    out << r.config_hash << ',' << r.seed << ',' << METACV_VERSION << ',' << to_string(t.estimator)
        << ',' << t.task << ',' << format_number(t.estimate) << ',' << format_number(t.std_error)
        << ',' << format_number(t.truth) << ',' << format_number(t.abs_error) << ','
        << (t.ok ? std::string("ok") : "failed: " + sanitize(t.failure)) << ','
        << format_number(t.fit_ms) << ',' << format_number(t.wall_ms) << '\n';
  }
  return out.str();
}

std::string summary_csv(const RunResult& r) {
  std::ostringstream out;
  out << kSummaryHeader << '\n';
  for (const auto& s : r.summary) {
    out << r.config_hash << ',' << r.train_hash << ',' << r.seed << ',' << METACV_VERSION << ','
        << r.axis << ',' << r.axis_value << ',' << to_string(s.estimator) << ',' << s.n_tasks << ','
        << s.n_failed << ',' << format_number(s.mae) << ',' << format_number(s.ci95) << ','
        << format_number(s.total_fit_ms) << ',' << format_number(s.total_wall_ms) << '\n';
  }
  return out.str();
}

std::string trace_csv(const std::vector<TraceRow>& trace) {
  std::ostringstream out;
  out << "iteration,mean_outer_loss,grad_norm_estimate,wall_ms\n";
  for (const auto& t : trace) {
    out << t.iteration << ',' << format_number(t.mean_outer_loss) << ','
        << format_number(t.grad_norm) << ',' << format_number(t.wall_ms) << '\n';
  }
  return out.str();
}

std::string strip_timing_columns(const std::string& text) {
  std::ostringstream out;
  std::stringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    auto cols = split(line, ',');
    const std::size_t keep = cols.size() > kSummaryTimingColumns ? cols.size() - kSummaryTimingColumns : 0;
    for (std::size_t i = 0; i < keep; ++i) out << (i ? "," : "") << cols[i];
    out << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Report

std::vector<ReportRow> collect_report(const std::vector<fs::path>& inputs) {
  if (inputs.empty()) throw ConfigError("report: no result files given");
  std::vector<fs::path> files;
  for (const auto& p : inputs) {
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::recursive_directory_iterator(p)) {
        if (e.is_regular_file() && e.path().filename() == "summary.csv") found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else if (fs::is_regular_file(p)) {
      files.push_back(p);
    } else {
      throw ConfigError("report: no such file or directory " + p.string());
    }
  }

  const auto expected = split(kSummaryHeader, ',');
  std::vector<ReportRow> rows;
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& f : files) {
    std::ifstream in(f);
    if (!in) throw ConfigError("report: cannot read " + f.string());
    std::string line;
    if (!std::getline(in, line) || split(line, ',') != expected) {
      throw ConfigError("report: " + f.string() + " is not a summary CSV (bad header)");
    }
    int lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const auto cols = split(line, ',');
      const std::string where = f.string() + ":" + std::to_string(lineno);
      if (cols.size() != expected.size()) throw ConfigError("report: " + where + ": wrong column count");
      ReportRow r{cols[0], cols[4], cols[5], cols[6], parse_double(cols[9], where),
                  parse_double(cols[10], where)};
      if (r.config_hash.empty() || r.estimator.empty()) {
        throw ConfigError("report: " + where + ": missing hash or estimator");
      }
      if (seen.insert({r.config_hash, r.estimator}).second) rows.push_back(std::move(r));
    }
  }
  if (rows.empty()) throw ConfigError("report: no estimator rows found");
  return rows;
}

std::vector<fs::path> write_report(const std::vector<ReportRow>& rows, const fs::path& out_dir) {
  if (rows.empty()) throw ConfigError("report: no estimator rows found");
  std::map<std::string, std::vector<const ReportRow*>> by_axis;
  for (const auto& r : rows) by_axis[r.axis.empty() ? "none" : r.axis].push_back(&r);
  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  for (const auto& [axis, group] : by_axis) {
    const fs::path path = out_dir / ("report_" + axis + ".csv");
    std::ofstream out(path);
    if (!out) throw ConfigError("report: cannot write " + path.string());
    out << "axis_value,estimator,mae,ci95\n";
    for (const auto* r : group) {
      out << r->axis_value << ',' << r->estimator << ',' << format_number(r->mae) << ','
          << format_number(r->ci95) << '\n';
    }
    written.push_back(path);
  }
  return written;
}

std::string format_report_table(const std::vector<ReportRow>& rows) {
  std::ostringstream out;
  out << std::left << std::setw(10) << "hash" << std::setw(6) << "axis" << std::setw(8) << "value"
      << std::setw(10) << "estimator" << std::right << std::setw(14) << "mae" << std::setw(14)
      << "ci95" << '\n';
  for (const auto& r : rows) {
    out << std::left << std::setw(10) << r.config_hash.substr(0, 8) << std::setw(6)
        << (r.axis.empty() ? "-" : r.axis) << std::setw(8)
        << (r.axis_value.empty() ? "-" : r.axis_value) << std::setw(10) << r.estimator
        << std::right << std::scientific << std::setprecision(4) << std::setw(14) << r.mae
        << std::setw(14) << r.ci95 << std::defaultfloat << '\n';
  }
  return out.str();
}

}  // namespace metacv::harness
