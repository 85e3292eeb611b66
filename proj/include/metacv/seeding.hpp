#pragma once

#include <cstdint>

namespace metacv {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Independent seed for (master seed, stream namespace, index). Streams are
/// never derived from execution order.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream,
                                    std::uint64_t index) {
  return mix64(mix64(mix64(master) ^ stream) ^ index);
}

namespace streams {
inline constexpr std::uint64_t kTrainTasks = 0x7472'6169'6e00'0001ULL;
inline constexpr std::uint64_t kTestTasks = 0x7465'7374'0000'0002ULL;
inline constexpr std::uint64_t kMetaInit = 0x6d65'7461'0000'0003ULL;
inline constexpr std::uint64_t kMetaBatches = 0x6261'7463'6800'0004ULL;
inline constexpr std::uint64_t kNeuralCv = 0x6e63'7600'0000'0005ULL;
}  // namespace streams

}  // namespace metacv
