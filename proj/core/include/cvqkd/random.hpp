#pragma once

#include <cstdint>
#include <utility>

namespace cvqkd {

// Counter-based generator: output i is a pure function of (seed, i), so a
// consumer can seek to any position, and parallel workers can partition one
// logical stream without coordination. The mixer is the splitmix64 finalizer
// applied to seed + i*golden, which passes the usual statistical batteries.
class RandomSource {
public:
  explicit RandomSource(std::uint64_t seed, std::uint64_t position = 0)
      : seed_(seed), pos_(position) {}

  std::uint64_t next_u64() { return mix(seed_, pos_++); }

  // uniform in [0, 1), 53 significant bits
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // standard normal pair via Box-Muller; consumes exactly two counter slots,
  // so heterodyne sample i of a stream always sits at position 2i
  std::pair<double, double> normal_pair();

  double normal() { return normal_pair().first; }

  bool bernoulli(double prob) { return uniform() < prob; }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t position() const { return pos_; }
  void seek(std::uint64_t position) { pos_ = position; }

  // decorrelated substream; substream k is stable across runs and thread counts
  RandomSource stream(std::uint64_t id) const {
    return RandomSource(mix(seed_ ^ 0x9e3779b97f4a7c15ull, id));
  }

  static std::uint64_t mix(std::uint64_t seed, std::uint64_t i) {
    std::uint64_t z = seed + (i + 1) * 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

private:
  std::uint64_t seed_;
  std::uint64_t pos_ = 0;
};

}  // namespace cvqkd
