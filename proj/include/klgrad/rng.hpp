#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace klgrad {

/**
 * Seeded random stream addressed by (master_seed, stream_index).
 *
 * Streams with the same address replay the same draws; distinct addresses
 * are decorrelated through a splitmix64 hash of the pair, so parallel
 * repetitions can each own stream_index = repetition without coordination.
 */
class RngStream {
public:
  explicit RngStream(std::uint64_t master_seed, std::uint64_t stream_index = 0)
      : gen_(mix(master_seed, stream_index)) {}

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform draw in [0, 1).
  double uniform() { return unif_(gen_); }

  /// Standard normal draw.
  double normal() { return normal_(gen_); }

  /// Index draw from an explicit probability vector (inverse CDF scan).
  int categorical(std::span<const double> probs) {
    const double u = uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < probs.size(); ++i) {
      acc += probs[i];
      if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size()) - 1;
  }

private:
  static std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
    return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
  }

  std::mt19937_64 gen_;
  std::uniform_real_distribution<double> unif_{0.0, 1.0};
  std::normal_distribution<double> normal_{0.0, 1.0};
};

} // namespace klgrad
