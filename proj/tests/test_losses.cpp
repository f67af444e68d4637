#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "segcal/losses.hpp"
#include "support/test_support.hpp"

using namespace segcal;

namespace {

LossConfig nacl_config(PenaltyKind penalty = PenaltyKind::L1,
                       TargetSpace space = TargetSpace::Logits, double lambda = 0.1) {
  LossConfig cfg;
  cfg.kind = LossKind::NACL;
  cfg.lambda = lambda;
  cfg.penalty = penalty;
  cfg.target_space = space;
  return cfg;
}

}  // namespace

TEST_CASE("cross-entropy of uniform logits is ln K") {
  std::mt19937_64 rng(1);
  for (int k_n : {2, 3, 5}) {
    DenseArray logits({static_cast<std::size_t>(k_n), 3, 4}, 0.0);
    const LabelMap labels = testsupport::random_labels(rng, 3, 4, k_n);
    const LossResult res = ce_loss(logits, one_hot(labels));
    REQUIRE(res.value == Catch::Approx(std::log(static_cast<double>(k_n))).margin(1e-12));
  }
}

TEST_CASE("cross-entropy vanishes for strongly peaked logits") {
  const LabelMap labels(2, 2, 3, {0, 1, 2, 0});
  DenseArray logits({3, 2, 2}, 0.0);
  for (std::size_t p = 0; p < 4; ++p)
    logits[static_cast<std::size_t>(labels[p]) * 4 + p] = 60.0;
  const LossResult res = ce_loss(logits, one_hot(labels));
  REQUIRE(res.value < 1e-20);
}

TEST_CASE("cross-entropy gradient is (p - y) / N") {
  std::mt19937_64 rng(5);
  const DenseArray logits = testsupport::random_logits(rng, 3, 2, 2);
  const LabelMap labels = testsupport::random_labels(rng, 2, 2, 3);
  const LossResult res = ce_loss(logits, one_hot(labels));
  const DenseArray p = softmax(logits);
  const OneHotMap y = one_hot(labels);
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t pix = 0; pix < 4; ++pix)
      REQUIRE(res.grad[k * 4 + pix] ==
              Catch::Approx((p[k * 4 + pix] - y.value(static_cast<int>(k), pix)) / 4.0)
                  .margin(1e-15));
}

TEST_CASE("ce rejects mismatched shapes") {
  DenseArray logits({3, 2, 2}, 0.0);
  const LabelMap labels(2, 3, 3);
  REQUIRE_THROWS_AS(ce_loss(logits, one_hot(labels)), invalid_input);
}

TEST_CASE("zero-knob reductions are bit-identical to CE") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const int k_n = 2 + static_cast<int>(rng() % 3);
    const std::size_t h = 2 + rng() % 3, w = 2 + rng() % 3;
    const DenseArray logits = testsupport::random_logits(rng, k_n, h, w, 6.0);
    const LabelMap labels = testsupport::random_labels(rng, h, w, k_n);
    const OneHotMap target = one_hot(labels);

    const double ce = ce_loss(logits, target).value;
    REQUIRE(ls_loss(logits, target, 0.0).value == ce);
    REQUIRE(focal_loss(logits, target, 0.0).value == ce);
    REQUIRE(ecp_loss(logits, target, 0.0).value == ce);
    REQUIRE(mbls_loss(logits, target, 5.0, 0.0).value == ce);
    REQUIRE(nacl_loss(logits, labels, nacl_config(PenaltyKind::L1, TargetSpace::Logits, 0.0))
                .value == ce);

    // A constant label map makes the smoothed target one-hot, so SVLS
    // reduces to CE exactly as well.
    const LabelMap constant(h, w, k_n, std::vector<int>(h * w, 1 % k_n));
    REQUIRE(svls_loss(logits, constant, gaussian_kernel(3, 3, 2.0)).value ==
            ce_loss(logits, one_hot(constant)).value);
  }
}

TEST_CASE("label smoothing uses the blended target") {
  std::mt19937_64 rng(11);
  const DenseArray logits = testsupport::random_logits(rng, 3, 2, 2);
  const LabelMap labels = testsupport::random_labels(rng, 2, 2, 3);
  const OneHotMap y = one_hot(labels);
  const double alpha = 0.1;
  const LossResult res = ls_loss(logits, y, alpha);
  const DenseArray p = softmax(logits);
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t pix = 0; pix < 4; ++pix) {
      const double smoothed = y.value(static_cast<int>(k), pix) * (1.0 - alpha) + alpha / 3.0;
      REQUIRE(res.grad[k * 4 + pix] ==
              Catch::Approx((p[k * 4 + pix] - smoothed) / 4.0).margin(1e-15));
    }
  REQUIRE_THROWS_AS(ls_loss(logits, y, 1.0), invalid_input);
  REQUIRE_THROWS_AS(ls_loss(logits, y, -0.1), invalid_input);
}

TEST_CASE("entropy term of ECP is stationary at uniform logits") {
  const LabelMap labels(2, 2, 4, {0, 1, 2, 3});
  DenseArray logits({4, 2, 2}, 0.0);
  const LossResult with_entropy = ecp_loss(logits, one_hot(labels), 0.7);
  const LossResult plain = ce_loss(logits, one_hot(labels));
  for (std::size_t i = 0; i < logits.size(); ++i)
    REQUIRE(with_entropy.grad[i] == Catch::Approx(plain.grad[i]).margin(1e-14));
}

TEST_CASE("ECP value subtracts the mean entropy") {
  std::mt19937_64 rng(13);
  const DenseArray logits = testsupport::random_logits(rng, 3, 3, 3);
  const LabelMap labels = testsupport::random_labels(rng, 3, 3, 3);
  const double alpha = 0.25;
  const DenseArray p = softmax(logits);
  double entropy = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) entropy -= p[i] * std::log(p[i]);
  entropy /= 9.0;
  REQUIRE(ecp_loss(logits, one_hot(labels), alpha).value ==
          Catch::Approx(ce_loss(logits, one_hot(labels)).value - alpha * entropy).margin(1e-12));
}

TEST_CASE("mbls hinge activates per logit gap") {
  // Logits [6, 0, 0] with margin 5: two active gaps of 1 each.
  DenseArray logits = DenseArray::from_data({3, 1, 1}, {6.0, 0.0, 0.0});
  const LabelMap labels(1, 1, 3, {0});
  const double plain = ce_loss(logits, one_hot(labels)).value;
  const LossResult res = mbls_loss(logits, one_hot(labels), 5.0, 0.1);
  REQUIRE(res.value == Catch::Approx(plain + 0.1 * 2.0).margin(1e-12));
}

TEST_CASE("mbls penalty is inactive when gaps stay within the margin") {
  std::mt19937_64 rng(17);
  const DenseArray logits = testsupport::random_logits(rng, 3, 3, 3, 2.0);  // gaps < 5
  const LabelMap labels = testsupport::random_labels(rng, 3, 3, 3);
  REQUIRE(mbls_loss(logits, one_hot(labels), 5.0, 0.3).value ==
          ce_loss(logits, one_hot(labels)).value);
}

TEST_CASE("nacl penalty satisfied exactly when logits equal the prior") {
  // Uniform label patch: tau is one-hot; set the logits to tau itself.
  const LabelMap labels(4, 4, 2, std::vector<int>(16, 1));
  DenseArray logits({2, 4, 4}, 0.0);
  for (std::size_t p = 0; p < 16; ++p) logits[16 + p] = 1.0;
  const LossConfig cfg = nacl_config();
  const LossResult res = nacl_loss(logits, labels, cfg);
  REQUIRE(res.value == ce_loss(logits, one_hot(labels)).value);
}

TEST_CASE("nacl penalty matches the hand-evaluated single-pixel case") {
  // tau = [1, 0], logits [3, -2]: |3-1| + |-2-0| = 4, scaled by lambda 0.1.
  const LabelMap labels(1, 1, 2, {0});
  DenseArray logits = DenseArray::from_data({2, 1, 1}, {3.0, -2.0});
  const LossConfig cfg = nacl_config();
  const LossResult res = nacl_loss(logits, labels, cfg);
  const LossResult plain = ce_loss(logits, one_hot(labels));
  REQUIRE(res.value == Catch::Approx(plain.value + 0.1 * 4.0).margin(1e-12));
  REQUIRE(res.grad[0] - plain.grad[0] == Catch::Approx(0.1).margin(1e-15));
  REQUIRE(res.grad[1] - plain.grad[1] == Catch::Approx(-0.1).margin(1e-15));
}

TEST_CASE("nacl L1 penalty gradient entries lie in {-l/N, 0, +l/N}") {
  std::mt19937_64 rng(19);
  for (int trial = 0; trial < 25; ++trial) {
    const DenseArray logits = testsupport::random_logits(rng, 3, 4, 4);
    const LabelMap labels = testsupport::random_labels(rng, 4, 4, 3);
    const LossConfig cfg = nacl_config();
    const DenseArray pen =
        [&] {
          LossResult full = nacl_loss(logits, labels, cfg);
          const LossResult plain = ce_loss(logits, one_hot(labels));
          for (std::size_t i = 0; i < full.grad.size(); ++i) full.grad[i] -= plain.grad[i];
          return full.grad;
        }();
    const double unit = 0.1 / 16.0;
    for (std::size_t i = 0; i < pen.size(); ++i) {
      const bool member = std::abs(pen[i] - unit) < 1e-15 || std::abs(pen[i] + unit) < 1e-15 ||
                          std::abs(pen[i]) < 1e-15;
      REQUIRE(member);
    }
  }
}

TEST_CASE("a subgradient step on the nacl L1 penalty never increases it") {
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 25; ++trial) {
    const DenseArray logits = testsupport::random_logits(rng, 3, 3, 3);
    const LabelMap labels = testsupport::random_labels(rng, 3, 3, 3);
    const PriorMap tau = prior_map(labels, mean_kernel(3, 3), false);

    auto pixel_penalty = [&](const DenseArray& l, std::size_t pix) {
      double s = 0.0;
      for (std::size_t k = 0; k < 3; ++k)
        s += std::abs(tau.array()[k * 9 + pix] - l[k * 9 + pix]);
      return s;
    };

    // Largest safe step: strictly below the distance to the nearest kink.
    double nearest = 1e9;
    for (std::size_t i = 0; i < logits.size(); ++i) {
      const double d = std::abs(logits[i] - tau.array()[i]);
      if (d > 0.0) nearest = std::min(nearest, d);
    }
    const double step = 0.5 * nearest;

    DenseArray moved = logits;
    for (std::size_t i = 0; i < moved.size(); ++i) {
      const double d = logits[i] - tau.array()[i];
      moved[i] -= step * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
    }
    for (std::size_t pix = 0; pix < 9; ++pix)
      REQUIRE(pixel_penalty(moved, pix) <= pixel_penalty(logits, pix) + 1e-12);
  }
}

TEST_CASE("svls decomposition identity holds on random instances") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const int k_n = 2 + static_cast<int>(rng() % 3);
    const std::size_t h = 2 + rng() % 7, w = 2 + rng() % 7;
    const DenseArray logits = testsupport::random_logits(rng, k_n, h, w, 5.0);
    const LabelMap labels = testsupport::random_labels(rng, h, w, k_n);
    const Kernel kernel = (trial & 1) ? Kernel(gaussian_kernel(3, 3, 0.5 + (trial % 5)))
                                      : mean_kernel(3, 3);
    const auto [lhs, rhs] = svls_decomposition(logits, labels, kernel);
    REQUIRE(std::abs(lhs - rhs) < 1e-9);
  }
}

TEST_CASE("svls decomposition cross term collapses for constant label maps") {
  // One class everywhere: tau is one-hot on that class with mass equal to
  // the off-center kernel weight, so the cross term is that mass times the
  // center-pixel CE.
  const std::size_t h = 4, w = 4;
  const LabelMap labels(h, w, 3, std::vector<int>(h * w, 2));
  std::mt19937_64 rng(37);
  const DenseArray logits = testsupport::random_logits(rng, 3, h, w);
  const Kernel kernel = gaussian_kernel(3, 3, 2.0);
  const auto [lhs, rhs] = svls_decomposition(logits, labels, kernel);
  const double ce = ce_loss(logits, one_hot(labels)).value;
  const double off_center_mass = kernel.sum() - kernel.center_weight();
  REQUIRE(rhs == Catch::Approx(ce + off_center_mass * ce).margin(1e-9));
  REQUIRE(std::abs(lhs - rhs) < 1e-9);
}

TEST_CASE("loss values stay finite for extreme finite logits") {
  const LabelMap labels(2, 2, 3, {0, 1, 2, 0});
  DenseArray logits = DenseArray::from_data(
      {3, 2, 2}, {1e3, -1e3, 0.0, 5.0, -1e3, 1e3, 0.0, -5.0, 0.0, 0.0, 1e3, -1e3});
  const OneHotMap target = one_hot(labels);
  REQUIRE(std::isfinite(ce_loss(logits, target).value));
  REQUIRE(std::isfinite(ls_loss(logits, target, 0.1).value));
  REQUIRE(std::isfinite(focal_loss(logits, target, 3.0).value));
  REQUIRE(std::isfinite(ecp_loss(logits, target, 0.1).value));
  REQUIRE(std::isfinite(mbls_loss(logits, target, 5.0, 0.1).value));
  REQUIRE(std::isfinite(svls_loss(logits, labels, gaussian_kernel(3, 3, 2.0)).value));
  REQUIRE(std::isfinite(nacl_loss(logits, labels, nacl_config()).value));
  REQUIRE(std::isfinite(dice_loss(logits, target).value));
}

TEST_CASE("compute_loss dispatches and honors the dice weight") {
  std::mt19937_64 rng(41);
  const DenseArray logits = testsupport::random_logits(rng, 3, 4, 4);
  const LabelMap labels = testsupport::random_labels(rng, 4, 4, 3);

  LossConfig ce_cfg;
  ce_cfg.kind = LossKind::CE;
  REQUIRE(compute_loss(ce_cfg, logits, labels).value ==
          ce_loss(logits, one_hot(labels)).value);

  LossConfig baseline = ce_cfg;
  baseline.dice_weight = 1.0;
  const double expected =
      ce_loss(logits, one_hot(labels)).value + dice_loss(logits, one_hot(labels)).value;
  REQUIRE(compute_loss(baseline, logits, labels).value == Catch::Approx(expected).margin(1e-15));

  LossConfig bad = ce_cfg;
  bad.alpha = -1.0;
  REQUIRE_THROWS_AS(compute_loss(bad, logits, labels), invalid_input);
}

TEST_CASE("soft dice of a perfect sharp prediction is near zero") {
  const LabelMap labels(3, 3, 2, {0, 0, 0, 1, 1, 1, 0, 0, 0});
  DenseArray logits({2, 3, 3}, 0.0);
  for (std::size_t p = 0; p < 9; ++p)
    logits[static_cast<std::size_t>(labels[p]) * 9 + p] = 40.0;
  REQUIRE(dice_loss(logits, one_hot(labels)).value < 1e-6);
}
