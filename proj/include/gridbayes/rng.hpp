#pragma once

#include <cstdint>
#include <random>

namespace gridbayes {

// Explicit random stream. Every stochastic operation takes one of these by
// reference so results are a pure function of (inputs, seed). Independent
// work items (MC samples, scenes) get their own substream derived from a
// seed and an index, which keeps results independent of scheduling.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  double normal() { return normal_(engine_); }
  double normal(double mean, double stddev) {
    return mean + stddev * normal_(engine_);
  }
  double uniform() { return uniform_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform_(engine_); }
  // Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
  }
  bool bernoulli(double p) { return uniform_(engine_) < p; }
  std::uint64_t next_u64() { return engine_(); }

  std::mt19937_64& engine() { return engine_; }

  // Stream keyed on (seed, index); does not advance this stream.
  RngStream substream(std::uint64_t index) const {
    return RngStream(mix_seed(seed_, index));
  }

  static std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

inline std::uint64_t RngStream::mix_seed(std::uint64_t seed,
                                         std::uint64_t index) {
  // splitmix64 finalizer over the combined key
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace gridbayes
