#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <variant>

#include "asconv/tensor.hpp"

namespace asconv {

/// Seedable generator. The engine is std::mt19937_64, whose output sequence
/// is fixed by the C++ standard; the conversions to uniform and normal
/// variates are done here rather than through <random> distributions, which
/// differ between standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random mantissa bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double low, double high) { return low + (high - low) * uniform(); }

  /// Box-Muller; one normal variate per call (the paired value is dropped so
  /// the generator state alone determines the sequence).
  double normal(double mean, double stddev);

  /// Unbiased integer in [0, n).
  std::size_t index(std::size_t n);

  std::string state() const;
  void set_state(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

struct Uniform {
  double low = 0.0;
  double high = 1.0;
};

struct Normal {
  double mean = 0.0;
  double stddev = 1.0;
};

using Distribution = std::variant<Uniform, Normal>;

/// Fills a new tensor in row-major order. Throws ValueError when low >= high
/// or stddev <= 0.
template <typename Real>
Tensor<Real> rng_fill(Rng& rng, const Shape& shape, const Distribution& dist);

}  // namespace asconv
