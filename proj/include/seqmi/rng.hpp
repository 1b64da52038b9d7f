#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace seqmi {

// 64-bit mix (splitmix64 finalizer). Used to derive substream keys.
std::uint64_t mix64(std::uint64_t x);

// Reproducible random stream with key-based substream derivation.
//
// All variate generation is implemented here against the raw 64-bit engine
// output so that results are identical across platforms and standard library
// versions. Do not swap in std:: distributions; their mappings are
// implementation-defined.
//
// substream() derives a child stream from the parent *key* and a path of
// integer ids. The child is independent of how many draws the parent has
// consumed, which lets callers assign one stream per (imputation, subject,
// ...) coordinate and replay it regardless of evaluation order.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed);

  RngStream substream(const std::vector<std::uint64_t>& path) const;
  RngStream substream(std::uint64_t id) const { return substream(std::vector<std::uint64_t>{id}); }

  std::uint64_t key() const { return key_; }

  // U(0,1) on the open interval (0,1): 53-bit mantissa, never exactly 0 or 1.
  double uniform();
  // Standard normal via Box-Muller (cosine branch only; two uniforms per draw).
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }
  // Gamma(shape, rate) by Marsaglia-Tsang, with the shape<1 boost.
  double gamma(double shape, double rate);
  double chisq(double df) { return gamma(0.5 * df, 0.5); }
  double exponential(double rate);
  // Poisson(mu): Knuth product method for mu<30, PTRS transformed rejection above.
  long poisson(double mu);
  // Uniform integer in {0, ..., n-1}, rejection sampled (n >= 1).
  std::uint64_t uniform_int(std::uint64_t n);

 private:
  RngStream(std::uint64_t key, bool) : key_(key), eng_(key) {}
  std::uint64_t key_;
  std::mt19937_64 eng_;
};

}  // namespace seqmi
