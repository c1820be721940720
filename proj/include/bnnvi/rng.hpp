#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace bnnvi {

// Deterministic random stream. Substreams are derived from the stream's seed
// (not its draw position), so `sub(tag)` yields the same stream no matter how
// many values were already drawn; parallel consumers stay schedule-independent.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  double uniform();  // [0, 1)
  double normal();   // standard normal
  std::uint64_t next_u64();
  // Uniform over {0, ..., n-1}, unbiased.
  std::size_t uniform_index(std::size_t n);

  Rng sub(std::uint64_t tag) const;
  Rng sub(std::uint64_t a, std::uint64_t b) const { return sub(a).sub(b); }

  std::uint64_t seed() const { return seed_; }

  void shuffle(std::span<std::size_t> v);
  void fill_normal(std::span<double> out);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Convenience: identity permutation of length n.
std::vector<std::size_t> iota_indices(std::size_t n);

}  // namespace bnnvi
