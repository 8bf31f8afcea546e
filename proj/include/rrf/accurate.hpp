#pragma once

// Compensated summation and dot products. The all-pairs decomposition has to
// agree with the cosine of mean embeddings to ~1e-9 relative even when the
// cosine is small, so every reduction on that path goes through these.

#include <cmath>
#include <cstddef>
#include <span>

namespace rrf::accurate {

/// Neumaier's improved Kahan-Babuska summation.
class Sum {
 public:
  void add(double v) noexcept {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v))
      comp_ += (sum_ - t) + v;
    else
      comp_ += (v - t) + sum_;
    sum_ = t;
  }
  double value() const noexcept { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline double sum(std::span<const double> values) noexcept {
  Sum s;
  for (double v : values) s.add(v);
  return s.value();
}

/// Dot product evaluated as if in twice the working precision (error-free
/// TwoProduct via fma, TwoSum accumulation).
inline double dot(const double* a, const double* b, std::size_t n) noexcept {
  double p = 0.0;
  double s = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double h = a[k] * b[k];
    const double r = std::fma(a[k], b[k], -h);
    const double t = p + h;
    const double z = t - p;
    s += ((p - (t - z)) + (h - z)) + r;
    p = t;
  }
  return p + s;
}

inline double dot(std::span<const double> a, std::span<const double> b) noexcept {
  return dot(a.data(), b.data(), a.size() < b.size() ? a.size() : b.size());
}

}  // namespace rrf::accurate
