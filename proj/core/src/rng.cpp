#include "asconv/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace asconv {

double Rng::normal(double mean, double stddev) {
  // 1 - uniform() lies in (0, 1], keeping the log finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  return mean + stddev * radius * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::index(std::size_t n) {
  if (n == 0) throw ValueError("Rng::index requires n > 0");
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % bound);
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return static_cast<std::size_t>(x % bound);
}

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::set_state(const std::string& state) {
  std::istringstream is(state);
  std::mt19937_64 engine;
  is >> engine;
  if (is.fail()) throw FormatError("malformed generator state");
  engine_ = engine;
}

template <typename Real>
Tensor<Real> rng_fill(Rng& rng, const Shape& shape, const Distribution& dist) {
  Tensor<Real> out(shape);
  if (const auto* u = std::get_if<Uniform>(&dist)) {
    if (!(u->low < u->high) || !std::isfinite(u->low) || !std::isfinite(u->high)) {
      throw ValueError("uniform distribution requires finite low < high");
    }
    for (auto& v : out.data()) v = static_cast<Real>(rng.uniform(u->low, u->high));
  } else {
    const auto& n = std::get<Normal>(dist);
    if (!(n.stddev > 0.0) || !std::isfinite(n.stddev) || !std::isfinite(n.mean)) {
      throw ValueError("normal distribution requires finite mean and stddev > 0");
    }
    for (auto& v : out.data()) v = static_cast<Real>(rng.normal(n.mean, n.stddev));
  }
  return out;
}

template Tensor<float> rng_fill<float>(Rng&, const Shape&, const Distribution&);
template Tensor<double> rng_fill<double>(Rng&, const Shape&, const Distribution&);

}  // namespace asconv
