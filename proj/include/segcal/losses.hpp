#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "segcal/error.hpp"
#include "segcal/numerics.hpp"
#include "segcal/priors.hpp"

namespace segcal {

enum class LossKind { CE, LS, FL, ECP, SVLS, MbLS, NACL };
enum class PenaltyKind { L1, L2 };
enum class TargetSpace { Logits, Softmax };
enum class PriorKind { Mean, Gaussian };

// Neighborhood prior used by SVLS and NACL: kernel family, odd window size,
// Gaussian width, and whether the center pixel is dropped from the
// aggregation (NACL defaults to a pure class-proportion prior with the
// center included).
struct PriorSpec {
  PriorKind kind = PriorKind::Mean;
  std::size_t kernel_size = 3;
  double sigma = 2.0;
  bool exclude_center = false;

  Kernel make_kernel() const {
    if (kind == PriorKind::Gaussian) return gaussian_kernel(kernel_size, kernel_size, sigma);
    return mean_kernel(kernel_size, kernel_size);
  }
};

struct LossConfig {
  LossKind kind = LossKind::CE;
  double alpha = 0.1;    // LS smoothing mass / ECP entropy weight
  double gamma = 3.0;    // FL focusing exponent
  double margin = 5.0;   // MbLS margin
  double lambda = 0.1;   // penalty weight (MbLS, NACL)
  PenaltyKind penalty = PenaltyKind::L1;
  TargetSpace target_space = TargetSpace::Logits;
  PriorSpec prior;
  double dice_weight = 0.0;  // additive soft-Dice term; 1.0 gives the CE+DSC baseline

  void validate() const {
    auto nonneg = [](double v, const char* name) {
      if (!std::isfinite(v) || v < 0.0)
        throw invalid_input(std::string("LossConfig: ") + name + " must be finite and >= 0");
    };
    nonneg(alpha, "alpha");
    nonneg(gamma, "gamma");
    nonneg(margin, "margin");
    nonneg(lambda, "lambda");
    nonneg(dice_weight, "dice_weight");
    if (kind == LossKind::LS && alpha >= 1.0)
      throw invalid_input("LossConfig: LS alpha must be < 1");
    if (prior.kernel_size == 0 || prior.kernel_size % 2 == 0)
      throw invalid_input("LossConfig: prior kernel size must be odd");
    if (kind == LossKind::SVLS || (kind == LossKind::NACL && prior.kind == PriorKind::Gaussian)) {
      if (!(prior.sigma > 0.0) || !std::isfinite(prior.sigma))
        throw invalid_input("LossConfig: prior sigma must be positive");
    }
  }
};

// Scalar objective (mean over pixels) plus its exact gradient with respect
// to the logits.
struct LossResult {
  double value = 0.0;
  DenseArray grad;
};

namespace detail {

// Floor for log-probabilities consumed by loss formulas; exp(-745) sits at
// the bottom of the representable range, so values below it correspond to
// probabilities that underflow to zero.
constexpr double kMinLogProb = -745.0;

inline double floored_log(double log_p) { return log_p < kMinLogProb ? kMinLogProb : log_p; }

inline void check_pair(const DenseArray& logits, const OneHotMap& target, const char* op) {
  require_logit_map(logits, op);
  if (logits.extent(0) != static_cast<std::size_t>(target.classes()) ||
      logits.extent(1) != target.height() || logits.extent(2) != target.width())
    throw invalid_input(std::string(op) + ": logits and target shapes disagree");
}

inline void check_pair(const DenseArray& logits, const LabelMap& labels, const char* op) {
  require_logit_map(logits, op);
  if (logits.extent(0) != static_cast<std::size_t>(labels.classes()) ||
      logits.extent(1) != labels.height() || logits.extent(2) != labels.width())
    throw invalid_input(std::string(op) + ": logits and labels shapes disagree");
}

// Shared accumulation for every cross-entropy-flavored objective. The loop
// structure is identical across CE, LS, FL and SVLS so that the zero-knob
// reductions (alpha = 0, gamma = 0, one-hot prior) are bit-identical to CE.
template <typename TargetWeight>
LossResult weighted_nll(const DenseArray& logits, TargetWeight&& weight_of) {
  const std::size_t k_n = logits.extent(0);
  const std::size_t hw = logits.extent(1) * logits.extent(2);
  const double n = static_cast<double>(hw);
  DenseArray lsm = log_softmax(logits);
  LossResult res{0.0, DenseArray(logits.shape())};
  double acc = 0.0;
  for (std::size_t p = 0; p < hw; ++p) {
    for (std::size_t k = 0; k < k_n; ++k) {
      const std::size_t i = k * hw + p;
      const double log_p = floored_log(lsm[i]);
      const double prob = std::exp(lsm[i]);
      const double w = weight_of(k, p, prob);
      acc += w * -log_p;
      res.grad[i] = (prob - w) / n;
    }
  }
  res.value = acc / n;
  return res;
}

}  // namespace detail

// Mean cross-entropy against a one-hot target; gradient (p - y) / N.
inline LossResult ce_loss(const DenseArray& logits, const OneHotMap& target) {
  detail::check_pair(logits, target, "ce_loss");
  return detail::weighted_nll(logits, [&](std::size_t k, std::size_t p, double) {
    return target.value(static_cast<int>(k), p);
  });
}

// Cross-entropy against the label-smoothed target y*(1-alpha) + alpha/K.
inline LossResult ls_loss(const DenseArray& logits, const OneHotMap& target, double alpha) {
  detail::check_pair(logits, target, "ls_loss");
  if (!std::isfinite(alpha) || alpha < 0.0 || alpha >= 1.0)
    throw invalid_input("ls_loss: alpha must lie in [0, 1)");
  const double uniform = alpha / static_cast<double>(target.classes());
  return detail::weighted_nll(logits, [&](std::size_t k, std::size_t p, double) {
    return target.value(static_cast<int>(k), p) * (1.0 - alpha) + uniform;
  });
}

// Focal loss: per-pixel -sum_k y_k (1 - p_k)^gamma log p_k.
inline LossResult focal_loss(const DenseArray& logits, const OneHotMap& target, double gamma) {
  detail::check_pair(logits, target, "focal_loss");
  if (!std::isfinite(gamma) || gamma < 0.0)
    throw invalid_input("focal_loss: gamma must be finite and >= 0");

  const std::size_t k_n = logits.extent(0);
  const std::size_t hw = logits.extent(1) * logits.extent(2);
  const double n = static_cast<double>(hw);
  DenseArray lsm = log_softmax(logits);
  LossResult res{0.0, DenseArray(logits.shape())};
  std::vector<double> factor(k_n);  // d(pixel loss)/d(p_k) * p_k, per class
  std::vector<double> probs(k_n);
  double acc = 0.0;
  for (std::size_t p = 0; p < hw; ++p) {
    double weighted_factor_sum = 0.0;
    for (std::size_t k = 0; k < k_n; ++k) {
      const std::size_t i = k * hw + p;
      const double log_p = detail::floored_log(lsm[i]);
      const double prob = std::exp(lsm[i]);
      const double y = target.value(static_cast<int>(k), p);
      const double u = 1.0 - prob;
      const double u_pow = std::pow(u, gamma);
      acc += (y * u_pow) * -log_p;
      // d/dl of -(1-p)^g log p, with the p(1) and gamma(0) limits made explicit.
      double f = -u_pow;
      if (gamma > 0.0 && u > 0.0) f += gamma * prob * std::pow(u, gamma - 1.0) * log_p;
      probs[k] = prob;
      factor[k] = y * f;
      weighted_factor_sum += y * f;
    }
    for (std::size_t k = 0; k < k_n; ++k) {
      const std::size_t i = k * hw + p;
      res.grad[i] = (factor[k] - probs[k] * weighted_factor_sum) / n;
    }
  }
  res.value = acc / n;
  return res;
}

// Confidence penalty: CE minus alpha times the mean Shannon entropy of the
// predictions.
inline LossResult ecp_loss(const DenseArray& logits, const OneHotMap& target, double alpha) {
  detail::check_pair(logits, target, "ecp_loss");
  if (!std::isfinite(alpha) || alpha < 0.0)
    throw invalid_input("ecp_loss: alpha must be finite and >= 0");

  LossResult res = ce_loss(logits, target);
  if (alpha == 0.0) return res;

  const std::size_t k_n = logits.extent(0);
  const std::size_t hw = logits.extent(1) * logits.extent(2);
  const double n = static_cast<double>(hw);
  DenseArray lsm = log_softmax(logits);
  double entropy_acc = 0.0;
  for (std::size_t p = 0; p < hw; ++p) {
    double entropy = 0.0;
    for (std::size_t k = 0; k < k_n; ++k) {
      const std::size_t i = k * hw + p;
      entropy -= std::exp(lsm[i]) * detail::floored_log(lsm[i]);
    }
    entropy_acc += entropy;
    for (std::size_t k = 0; k < k_n; ++k) {
      const std::size_t i = k * hw + p;
      const double prob = std::exp(lsm[i]);
      res.grad[i] += alpha * prob * (detail::floored_log(lsm[i]) + entropy) / n;
    }
  }
  res.value -= alpha * (entropy_acc / n);
  return res;
}

// Cross-entropy against kernel-smoothed soft labels; gradient (p - y~) / N.
inline LossResult svls_loss(const DenseArray& logits, const LabelMap& labels,
                            const Kernel& kernel) {
  detail::check_pair(logits, labels, "svls_loss");
  const PriorMap smoothed = svls_smooth(labels, kernel);
  const std::size_t hw = labels.pixel_count();
  const DenseArray& y = smoothed.array();
  return detail::weighted_nll(
      logits, [&](std::size_t k, std::size_t p, double) { return y[k * hw + p]; });
}

// Evaluates both sides of the identity that rewrites the smoothed-label
// objective as plain CE plus a cross term on the off-center class
// proportions tau (unnormalized, center tap excluded):
//   lhs = |sum w| * svls_loss
//   rhs = ce_loss + mean_pixels(-sum_k tau_k log p_k)
// Exact (to 64-bit rounding) whenever the kernel center weight is 1, which
// gaussian_kernel and mean_kernel both guarantee.
inline std::pair<double, double> svls_decomposition(const DenseArray& logits,
                                                    const LabelMap& labels,
                                                    const Kernel& kernel) {
  detail::check_pair(logits, labels, "svls_decomposition");
  const double lhs = kernel.sum() * svls_loss(logits, labels, kernel).value;

  const double ce = ce_loss(logits, one_hot(labels)).value;
  const DenseArray tau = weighted_class_counts(labels, kernel, /*exclude_center=*/true);
  DenseArray lsm = log_softmax(logits);
  const std::size_t hw = labels.pixel_count();
  const std::size_t k_n = static_cast<std::size_t>(labels.classes());
  double cross = 0.0;
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t k = 0; k < k_n; ++k) {
      const std::size_t i = k * hw + p;
      cross += tau[i] * -detail::floored_log(lsm[i]);
    }
  const double rhs = ce + cross / static_cast<double>(hw);
  return {lhs, rhs};
}

// Margin hinge on logit distances to the per-pixel maximum:
//   CE + lambda * mean_pixels( sum_j max(0, max_k l_k - l_j - margin) ).
// Subgradient 0 exactly at hinge kinks and argmax ties.
inline LossResult mbls_loss(const DenseArray& logits, const OneHotMap& target, double margin,
                            double lambda) {
  detail::check_pair(logits, target, "mbls_loss");
  if (!std::isfinite(margin) || margin < 0.0)
    throw invalid_input("mbls_loss: margin must be finite and >= 0");
  if (!std::isfinite(lambda) || lambda < 0.0)
    throw invalid_input("mbls_loss: lambda must be finite and >= 0");

  LossResult res = ce_loss(logits, target);
  if (lambda == 0.0) return res;

  const std::size_t k_n = logits.extent(0);
  const std::size_t hw = logits.extent(1) * logits.extent(2);
  const double n = static_cast<double>(hw);
  double penalty_acc = 0.0;
  std::vector<char> active(k_n);
  for (std::size_t p = 0; p < hw; ++p) {
    double top = logits[p];
    std::size_t arg = 0;
    for (std::size_t k = 1; k < k_n; ++k) {
      const double v = logits[k * hw + p];
      if (v > top) {
        top = v;
        arg = k;
      }
    }
    int active_count = 0;
    for (std::size_t k = 0; k < k_n; ++k) {
      const double gap = top - logits[k * hw + p] - margin;
      active[k] = gap > 0.0;
      if (active[k]) {
        penalty_acc += gap;
        ++active_count;
      }
    }
    for (std::size_t k = 0; k < k_n; ++k) {
      double g = active[k] ? -1.0 : 0.0;
      if (k == arg) g += static_cast<double>(active_count);
      res.grad[k * hw + p] += lambda * g / n;
    }
  }
  res.value += lambda * (penalty_acc / n);
  return res;
}

// Differentiable soft-Dice objective, averaged over all classes; paired with
// CE for the CE+DSC baseline. Not a per-pixel mean: intersection and sums
// run over the whole image.
inline LossResult dice_loss(const DenseArray& logits, const OneHotMap& target) {
  detail::check_pair(logits, target, "dice_loss");
  constexpr double kSmooth = 1e-6;
  const std::size_t k_n = logits.extent(0);
  const std::size_t hw = logits.extent(1) * logits.extent(2);
  DenseArray probs = softmax(logits);
  LossResult res{0.0, DenseArray(logits.shape())};

  std::vector<double> inter(k_n, 0.0), psum(k_n, 0.0), ysum(k_n, 0.0);
  for (std::size_t k = 0; k < k_n; ++k)
    for (std::size_t p = 0; p < hw; ++p) {
      const double pr = probs[k * hw + p];
      const double y = target.value(static_cast<int>(k), p);
      inter[k] += pr * y;
      psum[k] += pr;
      ysum[k] += y;
    }

  double dice_sum = 0.0;
  std::vector<double> dnum(k_n), dden(k_n);
  for (std::size_t k = 0; k < k_n; ++k) {
    dnum[k] = 2.0 * inter[k] + kSmooth;
    dden[k] = psum[k] + ysum[k] + kSmooth;
    dice_sum += dnum[k] / dden[k];
  }
  res.value = 1.0 - dice_sum / static_cast<double>(k_n);

  // dL/dp_{k,p} = -(1/K) * (2 y dden - dnum) / dden^2, then chain through softmax.
  std::vector<double> dLdp(k_n);
  for (std::size_t p = 0; p < hw; ++p) {
    double dot = 0.0;
    for (std::size_t k = 0; k < k_n; ++k) {
      const double y = target.value(static_cast<int>(k), p);
      dLdp[k] = -(2.0 * y * dden[k] - dnum[k]) / (dden[k] * dden[k]) / static_cast<double>(k_n);
      dot += dLdp[k] * probs[k * hw + p];
    }
    for (std::size_t k = 0; k < k_n; ++k) {
      const std::size_t i = k * hw + p;
      res.grad[i] = probs[i] * (dLdp[k] - dot);
    }
  }
  return res;
}

// Cross-entropy plus a weighted penalty tying the logits (or softmax values)
// to the neighborhood class-proportion prior tau:
//   CE + lambda * mean_pixels( sum_k |tau_k - t_k| )       (L1)
//   CE + lambda * mean_pixels( sum_k (tau_k - t_k)^2 )     (L2)
// sign(0) = 0, so the L1 subgradient vanishes exactly at the constraint.
inline LossResult nacl_loss(const DenseArray& logits, const LabelMap& labels,
                            const LossConfig& config) {
  detail::check_pair(logits, labels, "nacl_loss");
  if (!std::isfinite(config.lambda) || config.lambda < 0.0)
    throw invalid_input("nacl_loss: lambda must be finite and >= 0");

  LossResult res = ce_loss(logits, one_hot(labels));
  if (config.lambda == 0.0) return res;

  const PriorMap prior = prior_map(labels, config.prior.make_kernel(), config.prior.exclude_center);
  const DenseArray& tau = prior.array();
  const std::size_t k_n = logits.extent(0);
  const std::size_t hw = logits.extent(1) * logits.extent(2);
  const double n = static_cast<double>(hw);
  const double lambda = config.lambda;
  const bool l1 = config.penalty == PenaltyKind::L1;
  auto sign = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };

  double penalty_acc = 0.0;
  if (config.target_space == TargetSpace::Logits) {
    for (std::size_t i = 0; i < logits.size(); ++i) {
      const double d = logits[i] - tau[i];
      if (l1) {
        penalty_acc += std::abs(d);
        res.grad[i] += lambda * sign(d) / n;
      } else {
        penalty_acc += d * d;
        res.grad[i] += lambda * 2.0 * d / n;
      }
    }
  } else {
    DenseArray probs = softmax(logits);
    std::vector<double> dPdp(k_n);
    for (std::size_t p = 0; p < hw; ++p) {
      double dot = 0.0;
      for (std::size_t k = 0; k < k_n; ++k) {
        const std::size_t i = k * hw + p;
        const double d = probs[i] - tau[i];
        if (l1) {
          penalty_acc += std::abs(d);
          dPdp[k] = sign(d);
        } else {
          penalty_acc += d * d;
          dPdp[k] = 2.0 * d;
        }
        dot += dPdp[k] * probs[i];
      }
      for (std::size_t k = 0; k < k_n; ++k) {
        const std::size_t i = k * hw + p;
        res.grad[i] += lambda * probs[i] * (dPdp[k] - dot) / n;
      }
    }
  }
  res.value += lambda * (penalty_acc / n);
  return res;
}

// Dispatch on LossConfig::kind, folding in the optional soft-Dice term.
// This is the single entry point the trainer uses.
inline LossResult compute_loss(const LossConfig& config, const DenseArray& logits,
                               const LabelMap& labels) {
  config.validate();
  LossResult res;
  switch (config.kind) {
    case LossKind::CE:
      res = ce_loss(logits, one_hot(labels));
      break;
    case LossKind::LS:
      res = ls_loss(logits, one_hot(labels), config.alpha);
      break;
    case LossKind::FL:
      res = focal_loss(logits, one_hot(labels), config.gamma);
      break;
    case LossKind::ECP:
      res = ecp_loss(logits, one_hot(labels), config.alpha);
      break;
    case LossKind::SVLS:
      res = svls_loss(logits, labels, config.prior.make_kernel());
      break;
    case LossKind::MbLS:
      res = mbls_loss(logits, one_hot(labels), config.margin, config.lambda);
      break;
    case LossKind::NACL:
      res = nacl_loss(logits, labels, config);
      break;
  }
  if (config.dice_weight > 0.0) {
    const LossResult d = dice_loss(logits, one_hot(labels));
    res.value += config.dice_weight * d.value;
    for (std::size_t i = 0; i < res.grad.size(); ++i)
      res.grad[i] += config.dice_weight * d.grad[i];
  }
  return res;
}

}  // namespace segcal
