#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace assortmax {

// Thrown on any contract violation at a public API boundary.
class InvalidInput : public std::runtime_error {
 public:
  explicit InvalidInput(const std::string& what) : std::runtime_error(what) {}
};

// Counter-based generator: splitmix64 applied to a 128-bit (key, counter)
// mix. Output is identical on every platform, so seeded runs are
// bit-reproducible regardless of standard-library internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : key_(seed), ctr_(0) {}

  std::uint64_t next_u64() {
    std::uint64_t z = key_ + 0x9e3779b97f4a7c15ULL * ++ctr_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in {0, ..., bound-1} by rejection; unbiased.
  std::uint64_t next_below(std::uint64_t bound) {
    if (bound == 0) throw InvalidInput("Rng::next_below: bound must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % bound;
  }

  // Standard normal via Box-Muller (one value per call, cached pair).
  double next_normal();

  // Full state, for checkpoint/resume.
  struct State {
    std::uint64_t key = 0;
    std::uint64_t ctr = 0;
    bool have_cached = false;
    double cached = 0.0;
  };
  State state() const { return {key_, ctr_, have_cached_, cached_}; }
  void restore(const State& s) {
    key_ = s.key;
    ctr_ = s.ctr;
    have_cached_ = s.have_cached;
    cached_ = s.cached;
  }

 private:
  std::uint64_t key_;
  std::uint64_t ctr_;
  bool have_cached_ = false;
  double cached_ = 0.0;
};

// Derives an independent stream seed from a master seed and a list of
// stream tags (replicate id, policy id, grid index, ...).
std::uint64_t derive_seed(std::uint64_t master, const std::vector<std::uint64_t>& tags);

}  // namespace assortmax
