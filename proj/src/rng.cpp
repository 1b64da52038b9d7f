#include "seqmi/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace seqmi {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

RngStream::RngStream(std::uint64_t seed) : key_(mix64(seed)), eng_(mix64(seed)) {}

RngStream RngStream::substream(const std::vector<std::uint64_t>& path) const {
  std::uint64_t k = key_;
  for (std::uint64_t id : path) k = mix64(k ^ mix64(id));
  return RngStream(k, true);
}

double RngStream::uniform() {
  // 53-bit mantissa in (0,1): shift to [0, 2^53), add 0.5, scale.
  const std::uint64_t bits = eng_() >> 11;
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

double RngStream::normal() {
  const double u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

double RngStream::gamma(double shape, double rate) {
  if (!(shape > 0.0) || !(rate > 0.0))
    throw std::invalid_argument("gamma: shape and rate must be positive");
  if (shape < 1.0) {
    const double g = gamma(shape + 1.0, rate);
    return g * std::pow(uniform(), 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v / rate;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v / rate;
  }
}

double RngStream::exponential(double rate) {
  if (!(rate > 0.0)) throw std::invalid_argument("exponential: rate must be positive");
  return -std::log(uniform()) / rate;
}

long RngStream::poisson(double mu) {
  if (mu < 0.0 || !std::isfinite(mu)) throw std::invalid_argument("poisson: mu must be finite and nonnegative");
  if (mu == 0.0) return 0;
  if (mu < 30.0) {
    // Knuth: count uniforms until their product drops below exp(-mu).
    const double limit = std::exp(-mu);
    long k = 0;
    double prod = uniform();
    while (prod > limit) {
      ++k;
      prod *= uniform();
    }
    return k;
  }
  // PTRS transformed rejection (Hormann 1993).
  const double b = 0.931 + 2.53 * std::sqrt(mu);
  const double a = -0.059 + 0.02483 * b;
  const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
  const double v_r = 0.9277 - 3.6224 / (b - 2.0);
  for (;;) {
    const double u = uniform() - 0.5;
    const double v = uniform();
    const double us = 0.5 - std::fabs(u);
    const double kf = std::floor((2.0 * a / us + b) * u + mu + 0.43);
    if (us >= 0.07 && v <= v_r) return static_cast<long>(kf);
    if (kf < 0.0 || (us < 0.013 && v > us)) continue;
    const double k = kf;
    if (std::log(v * inv_alpha / (a / (us * us) + b)) <=
        k * std::log(mu) - mu - std::lgamma(k + 1.0))
      return static_cast<long>(kf);
  }
}

std::uint64_t RngStream::uniform_int(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("uniform_int: n must be >= 1");
  // Reject the lowest t = 2^64 mod n values so the remainder is unbiased.
  const std::uint64_t t = (-n) % n;
  std::uint64_t x;
  do {
    x = eng_();
  } while (x < t);
  return x % n;
}

}  // namespace seqmi
