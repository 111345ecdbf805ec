#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>

namespace arise {

// SplitMix64 finalizer; used to derive independent stream seeds from one run seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

// Random source with a serializable state and sampling routines that do not
// depend on the standard library's distribution implementations, so streams
// are reproducible across toolchains and can be checkpointed mid-run.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; no cached second variate.
  double normal();

  // Uniform integer in [0, n).
  std::size_t index(std::size_t n);

  std::string serialize() const;
  static Rng deserialize(const std::string& state);

  bool operator==(const Rng& other) const { return engine_ == other.engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace arise
