#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "betoken/errors.hpp"

namespace betoken {

// FNV-1a, used both for seed-stream derivation and for weight checksums.
constexpr uint64_t kFnvOffset = 1469598103934665603ull;
constexpr uint64_t kFnvPrime = 1099511628211ull;

inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = kFnvOffset) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = kFnvOffset) {
  return fnv1a64(s.data(), s.size(), h);
}

// Deterministic RNG. All randomness in the project flows from one root seed
// through named sub-streams, so that two runs differing in one factor (say,
// teacher_source) consume identical random numbers everywhere else.
//
// Sampling helpers avoid std::uniform_*_distribution on purpose: their output
// is implementation-defined, and we want corpora and checkpoints to be
// reproducible across standard libraries, not just across runs.
class RngStream {
 public:
  explicit RngStream(uint64_t seed) : engine_(seed) {}

  static RngStream substream(uint64_t root_seed, std::string_view name) {
    uint64_t h = fnv1a64(name);
    h = fnv1a64(&root_seed, sizeof(root_seed), h);
    return RngStream(h);
  }

  uint64_t next_u64() { return engine_(); }

  // Uniform double in [0, 1) with 53 random bits.
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Inclusive bounds, rejection-sampled for exact uniformity.
  int uniform_int(int lo, int hi) {
    if (lo > hi) throw InvalidArgumentError("uniform_int: lo > hi");
    const uint64_t span = static_cast<uint64_t>(hi) - static_cast<uint64_t>(lo) + 1;
    const uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return lo + static_cast<int>(x % span);
  }

  size_t index(size_t n) {
    if (n == 0) throw InvalidArgumentError("index: empty range");
    return static_cast<size_t>(uniform_int(0, static_cast<int>(n - 1)));
  }

  // Box-Muller; always consumes two uniforms, never caches the spare.
  double normal(double mean = 0.0, double sd = 1.0) {
    double u1 = next_unit();
    double u2 = next_unit();
    while (u1 <= 0.0) u1 = next_unit();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    return mean + sd * r * std::cos(theta);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

// Named sub-streams (cli module contract). Keeping the names in one place so
// ablation cells differ only in the intended factor.
namespace seeds {
inline constexpr std::string_view kCorpus = "corpus";
inline constexpr std::string_view kInit = "init";
inline constexpr std::string_view kSampling = "sampling";
inline constexpr std::string_view kSplit = "split";
inline constexpr std::string_view kPrompt = "prompt";
inline constexpr std::string_view kQueries = "queries";
inline constexpr std::string_view kBench = "bench";
}  // namespace seeds

}  // namespace betoken
