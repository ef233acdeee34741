#pragma once

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <cstdlib>
#include <span>
#include <string>

namespace bml {

// Cascade summation over a fixed ordering. Used everywhere replication
// results are reduced, so aggregates are bit-stable no matter how many
// threads produced the inputs.
inline double pairwise_sum(std::span<const double> xs) {
  const std::size_t n = xs.size();
  if (n == 0) return 0.0;
  if (n <= 8) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

inline double mean(std::span<const double> xs) {
  return xs.empty() ? 0.0 : pairwise_sum(xs) / static_cast<double>(xs.size());
}

inline double sample_sd(std::span<const double> xs) {
  const std::size_t n = xs.size();
  if (n < 2) return 0.0;
  const double m = mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(n - 1));
}

// 95% confidence half-width under the normal approximation.
struct MeanCi {
  double mean = 0.0;
  double half_width = 0.0;
};

inline MeanCi mean_ci(std::span<const double> xs) {
  MeanCi out;
  out.mean = mean(xs);
  if (xs.size() >= 2)
    out.half_width = 1.96 * sample_sd(xs) / std::sqrt(static_cast<double>(xs.size()));
  return out;
}

// Least-squares slope of y on x.
inline double ls_slope(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxy / sxx;
}

// Shortest %g rendering with the given significant digits; the emitters all
// go through this so outputs are reproducible text.
inline std::string format_sig(double x, int digits = 12) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, x);
  return buf;
}

// Round to the given significant decimal digits (via the decimal rendering,
// so round_sig(x, 12) is exactly what format_sig(x, 12) parses back to).
inline double round_sig(double x, int digits = 12) {
  if (!std::isfinite(x)) return x;
  return std::strtod(format_sig(x, digits).c_str(), nullptr);
}

}  // namespace bml
