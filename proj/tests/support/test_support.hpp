#pragma once

// Shared helpers for the unit and acceptance suites: seeded random
// instances and the central-difference gradient oracle. The oracle only
// ever evaluates loss *values*, so it stays independent of the analytic
// gradient paths it checks.

#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "segcal/losses.hpp"
#include "segcal/numerics.hpp"
#include "segcal/priors.hpp"

namespace testsupport {

inline segcal::DenseArray random_logits(std::mt19937_64& rng, std::size_t k, std::size_t h,
                                        std::size_t w, double scale = 3.0) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  segcal::DenseArray a({k, h, w});
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = dist(rng);
  return a;
}

inline segcal::LabelMap random_labels(std::mt19937_64& rng, std::size_t h, std::size_t w,
                                      int classes) {
  std::uniform_int_distribution<int> dist(0, classes - 1);
  std::vector<int> labels(h * w);
  for (int& v : labels) v = dist(rng);
  return segcal::LabelMap(h, w, classes, std::move(labels));
}

// Random probability map: positive values normalized per pixel.
inline segcal::DenseArray random_probs(std::mt19937_64& rng, std::size_t k, std::size_t h,
                                       std::size_t w) {
  std::uniform_real_distribution<double> dist(0.05, 1.0);
  segcal::DenseArray a({k, h, w});
  const std::size_t hw = h * w;
  for (std::size_t p = 0; p < hw; ++p) {
    double sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      a[c * hw + p] = dist(rng);
      sum += a[c * hw + p];
    }
    for (std::size_t c = 0; c < k; ++c) a[c * hw + p] /= sum;
  }
  return a;
}

inline segcal::Kernel random_kernel(std::mt19937_64& rng) {
  const std::size_t size = (rng() & 1) ? 3 : 5;
  if (rng() & 1) {
    std::uniform_real_distribution<double> sigma(0.5, 3.0);
    return segcal::gaussian_kernel(size, size, sigma(rng));
  }
  return segcal::mean_kernel(size, size);
}

struct FdReport {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
};

inline int sign_of(double v) { return v > 0.0 ? 1 : (v < 0.0 ? -1 : 0); }

// Central finite differences on the loss value, coordinate by coordinate.
// A coordinate is skipped when any kink indicator changes sign between the
// two perturbed evaluations (a hinge, absolute value or argmax crossing
// would poison the difference quotient there).
template <typename LossFn, typename KinkFn>
FdReport finite_diff_check(const segcal::DenseArray& logits,
                           const segcal::DenseArray& analytic_grad, LossFn&& value_of,
                           KinkFn&& kinks_of, double step = 1e-5) {
  FdReport report;
  segcal::DenseArray x = logits;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + step;
    const double f_plus = value_of(x);
    const std::vector<double> k_plus = kinks_of(x);
    x[i] = saved - step;
    const double f_minus = value_of(x);
    const std::vector<double> k_minus = kinks_of(x);
    x[i] = saved;

    bool crossed = k_plus.size() != k_minus.size();
    for (std::size_t j = 0; !crossed && j < k_plus.size(); ++j)
      crossed = sign_of(k_plus[j]) != sign_of(k_minus[j]);
    if (crossed) {
      ++report.skipped;
      continue;
    }

    const double fd = (f_plus - f_minus) / (2.0 * step);
    const double g = analytic_grad[i];
    const double denom = std::max({std::abs(fd), std::abs(g), 1e-6});
    report.max_rel_err = std::max(report.max_rel_err, std::abs(fd - g) / denom);
    ++report.checked;
  }
  return report;
}

// Kink indicators for the loss zoo. Smooth losses return an empty vector.
inline std::vector<double> loss_kinks(const segcal::LossConfig& config,
                                      const segcal::DenseArray& logits,
                                      const segcal::LabelMap& labels) {
  std::vector<double> kinks;
  const std::size_t k_n = logits.extent(0);
  const std::size_t hw = logits.extent(1) * logits.extent(2);

  if (config.kind == segcal::LossKind::MbLS && config.lambda > 0.0) {
    for (std::size_t p = 0; p < hw; ++p) {
      double top = logits[p];
      for (std::size_t k = 1; k < k_n; ++k) top = std::max(top, logits[k * hw + p]);
      for (std::size_t k = 0; k < k_n; ++k) {
        kinks.push_back(top - logits[k * hw + p] - config.margin);  // hinge activation
        kinks.push_back(top - logits[k * hw + p]);                  // argmax tie
      }
    }
  }
  if (config.kind == segcal::LossKind::NACL && config.lambda > 0.0 &&
      config.penalty == segcal::PenaltyKind::L1) {
    const segcal::PriorMap prior =
        segcal::prior_map(labels, config.prior.make_kernel(), config.prior.exclude_center);
    const segcal::DenseArray target = config.target_space == segcal::TargetSpace::Logits
                                          ? logits
                                          : segcal::softmax(logits);
    for (std::size_t i = 0; i < target.size(); ++i)
      kinks.push_back(target[i] - prior.array()[i]);
  }
  return kinks;
}

}  // namespace testsupport
