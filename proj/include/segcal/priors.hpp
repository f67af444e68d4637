#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <utility>
#include <vector>

#include "segcal/error.hpp"
#include "segcal/numerics.hpp"

namespace segcal {

// Nonnegative weight window with odd extents, so a unique center tap exists.
// Gaussian kernels are deliberately left unnormalized (center weight 1);
// every consumer divides by the weight sum explicitly.
struct Kernel {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> weights;  // rows * cols, row-major
  std::optional<double> sigma;  // populated for Gaussian kernels

  double at(std::size_t r, std::size_t c) const { return weights[r * cols + c]; }

  double sum() const { return std::accumulate(weights.begin(), weights.end(), 0.0); }

  double center_weight() const { return at(rows / 2, cols / 2); }
};

namespace detail {

inline void require_odd_size(std::size_t d1, std::size_t d2, const char* op) {
  if (d1 == 0 || d2 == 0 || d1 % 2 == 0 || d2 % 2 == 0)
    throw invalid_input(std::string(op) + ": kernel extents must be odd and positive");
}

}  // namespace detail

// Builds a kernel from explicit weights, enforcing the Kernel invariants.
inline Kernel make_kernel(std::size_t d1, std::size_t d2, std::vector<double> weights,
                          std::optional<double> sigma = std::nullopt) {
  detail::require_odd_size(d1, d2, "make_kernel");
  if (weights.size() != d1 * d2) throw invalid_input("make_kernel: weight count mismatch");
  bool any_positive = false;
  for (double w : weights) {
    if (!std::isfinite(w) || w < 0.0) throw invalid_input("make_kernel: weights must be finite and >= 0");
    if (w > 0.0) any_positive = true;
  }
  if (!any_positive) throw invalid_input("make_kernel: at least one weight must be positive");
  return Kernel{d1, d2, std::move(weights), sigma};
}

// Discrete Gaussian window w(dr,dc) = exp(-(dr^2 + dc^2) / (2 sigma^2)),
// center weight exactly 1 and symmetric under reflection through the center.
inline Kernel gaussian_kernel(std::size_t d1, std::size_t d2, double sigma) {
  detail::require_odd_size(d1, d2, "gaussian_kernel");
  if (!(sigma > 0.0) || !std::isfinite(sigma))
    throw invalid_input("gaussian_kernel: sigma must be positive");
  const double cr = static_cast<double>(d1 / 2);
  const double cc = static_cast<double>(d2 / 2);
  std::vector<double> w(d1 * d2);
  for (std::size_t r = 0; r < d1; ++r)
    for (std::size_t c = 0; c < d2; ++c) {
      const double dr = static_cast<double>(r) - cr;
      const double dc = static_cast<double>(c) - cc;
      w[r * d2 + c] = std::exp(-(dr * dr + dc * dc) / (2.0 * sigma * sigma));
    }
  return Kernel{d1, d2, std::move(w), sigma};
}

// Uniform window: the sigma -> infinity limit of the Gaussian, up to scale.
inline Kernel mean_kernel(std::size_t d1, std::size_t d2) {
  detail::require_odd_size(d1, d2, "mean_kernel");
  return Kernel{d1, d2, std::vector<double>(d1 * d2, 1.0), std::nullopt};
}

// Per-pixel K-vector of soft class proportions; every pixel lies on the
// probability simplex (channel sum 1 within 1e-9).
class PriorMap {
 public:
  PriorMap(DenseArray values) : values_(std::move(values)) {
    if (values_.rank() != 3) throw invalid_state("PriorMap: expected K x H x W values");
    const std::size_t k_n = values_.extent(0);
    const std::size_t hw = values_.extent(1) * values_.extent(2);
    for (std::size_t p = 0; p < hw; ++p) {
      double sum = 0.0;
      for (std::size_t k = 0; k < k_n; ++k) {
        const double v = values_[k * hw + p];
        if (!(v >= 0.0 && v <= 1.0 + 1e-12))
          throw invalid_state("PriorMap: value outside [0,1]");
        sum += v;
      }
      if (std::abs(sum - 1.0) > 1e-9) throw invalid_state("PriorMap: channel sum is not 1");
    }
  }

  int classes() const { return static_cast<int>(values_.extent(0)); }
  std::size_t height() const { return values_.extent(1); }
  std::size_t width() const { return values_.extent(2); }
  std::size_t pixel_count() const { return height() * width(); }

  double value(int k, std::size_t p) const {
    return values_[static_cast<std::size_t>(k) * pixel_count() + p];
  }

  const DenseArray& array() const { return values_; }

 private:
  DenseArray values_;
};

// Unnormalized weighted class occupancy around every pixel: channel k at
// pixel j accumulates the kernel weights of the patch positions whose label
// is k. The label map is replicate-padded, so every tap lands in bounds.
// With exclude_center the center tap is dropped from the aggregation.
inline DenseArray weighted_class_counts(const LabelMap& labels, const Kernel& kernel,
                                        bool exclude_center) {
  if (kernel.rows == 0 || kernel.cols == 0 || kernel.rows % 2 == 0 || kernel.cols % 2 == 0)
    throw invalid_input("weighted_class_counts: invalid kernel");
  const std::size_t h = labels.height();
  const std::size_t w = labels.width();
  const std::size_t hw = h * w;
  const std::size_t k_n = static_cast<std::size_t>(labels.classes());
  const std::ptrdiff_t cr = static_cast<std::ptrdiff_t>(kernel.rows / 2);
  const std::ptrdiff_t cc = static_cast<std::ptrdiff_t>(kernel.cols / 2);

  DenseArray counts({k_n, h, w}, 0.0);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t p = r * w + c;
      for (std::size_t kr = 0; kr < kernel.rows; ++kr) {
        for (std::size_t kc = 0; kc < kernel.cols; ++kc) {
          if (exclude_center && static_cast<std::ptrdiff_t>(kr) == cr &&
              static_cast<std::ptrdiff_t>(kc) == cc)
            continue;
          const double wt = kernel.at(kr, kc);
          std::ptrdiff_t rr = static_cast<std::ptrdiff_t>(r) + static_cast<std::ptrdiff_t>(kr) - cr;
          std::ptrdiff_t cx = static_cast<std::ptrdiff_t>(c) + static_cast<std::ptrdiff_t>(kc) - cc;
          rr = std::clamp<std::ptrdiff_t>(rr, 0, static_cast<std::ptrdiff_t>(h) - 1);
          cx = std::clamp<std::ptrdiff_t>(cx, 0, static_cast<std::ptrdiff_t>(w) - 1);
          const int cls = labels.at(static_cast<std::size_t>(rr), static_cast<std::size_t>(cx));
          counts[static_cast<std::size_t>(cls) * hw + p] += wt;
        }
      }
    }
  }
  return counts;
}

// Soft labels from kernel-weighted neighborhood aggregation, center tap
// included, divided by the full kernel weight sum.
inline PriorMap svls_smooth(const LabelMap& labels, const Kernel& kernel) {
  DenseArray counts = weighted_class_counts(labels, kernel, /*exclude_center=*/false);
  const double denom = kernel.sum();
  if (!(denom > 0.0)) throw invalid_input("svls_smooth: kernel weights sum to zero");
  for (double& v : counts.values()) v /= denom;
  return PriorMap(std::move(counts));
}

// Weighted class-proportion prior, normalized onto the simplex. When
// exclude_center is set the center weight is zeroed before aggregation and
// the remaining mass is renormalized.
inline PriorMap prior_map(const LabelMap& labels, const Kernel& kernel,
                          bool exclude_center = false) {
  const double denom = kernel.sum() - (exclude_center ? kernel.center_weight() : 0.0);
  if (!(denom > 0.0))
    throw invalid_input("prior_map: effective kernel weights sum to zero");
  DenseArray counts = weighted_class_counts(labels, kernel, exclude_center);
  for (double& v : counts.values()) v /= denom;
  return PriorMap(std::move(counts));
}

}  // namespace segcal
