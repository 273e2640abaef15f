#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace craft {

/// Seeded pseudo-random stream.
///
/// Bits come from std::mt19937_64, whose output sequence is fixed by the C++
/// standard. The conversions to uniform, normal and index draws are
/// implemented here rather than through <random> distributions, whose
/// algorithms differ between standard library vendors. A given seed therefore
/// yields the same stream on every conforming platform.
///
/// Instances are single-owner; pass by reference, never share across threads.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform();

  /// Standard normal draw (Marsaglia polar method).
  double normal();

  /// Uniform integer in [0, n). n must be positive.
  std::size_t index(std::size_t n);

  /// Fisher-Yates shuffle.
  template <class T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[index(i)]);
    }
  }

  /// Independent stream derived from this generator's seed and `stream`.
  /// Does not advance this generator.
  Rng fork(std::uint64_t stream) const;

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace craft
