#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <vector>

#include "segcal/losses.hpp"
#include "support/test_support.hpp"

using namespace segcal;

namespace {

// Runs the central-difference oracle for one loss configuration over a batch
// of random instances and returns the worst relative error seen.
double sweep(const LossConfig& config, int trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    const DenseArray logits = testsupport::random_logits(rng, 3, 4, 4);
    const LabelMap labels = testsupport::random_labels(rng, 4, 4, 3);
    const LossResult res = compute_loss(config, logits, labels);
    const auto report = testsupport::finite_diff_check(
        logits, res.grad,
        [&](const DenseArray& x) { return compute_loss(config, x, labels).value; },
        [&](const DenseArray& x) { return testsupport::loss_kinks(config, x, labels); });
    REQUIRE(report.checked > 0);
    worst = std::max(worst, report.max_rel_err);
  }
  return worst;
}

LossConfig config_for(LossKind kind) {
  LossConfig cfg;
  cfg.kind = kind;
  if (kind == LossKind::SVLS) cfg.prior.kind = PriorKind::Gaussian;
  return cfg;
}

}  // namespace

TEST_CASE("analytic gradients match finite differences for the plain losses") {
  REQUIRE(sweep(config_for(LossKind::CE), 20, 101) < 1e-4);
  REQUIRE(sweep(config_for(LossKind::LS), 20, 102) < 1e-4);
  REQUIRE(sweep(config_for(LossKind::FL), 20, 103) < 1e-4);
  REQUIRE(sweep(config_for(LossKind::ECP), 20, 104) < 1e-4);
  REQUIRE(sweep(config_for(LossKind::SVLS), 20, 105) < 1e-4);
}

TEST_CASE("analytic gradients match finite differences for the hinge loss") {
  REQUIRE(sweep(config_for(LossKind::MbLS), 20, 106) < 1e-4);
  LossConfig tight = config_for(LossKind::MbLS);
  tight.margin = 1.0;  // most hinges active
  REQUIRE(sweep(tight, 20, 107) < 1e-4);
}

TEST_CASE("analytic gradients match finite differences for nacl variants") {
  for (const PenaltyKind penalty : {PenaltyKind::L1, PenaltyKind::L2})
    for (const TargetSpace space : {TargetSpace::Logits, TargetSpace::Softmax}) {
      LossConfig cfg = config_for(LossKind::NACL);
      cfg.penalty = penalty;
      cfg.target_space = space;
      REQUIRE(sweep(cfg, 20, 108 + static_cast<int>(penalty) * 2 + static_cast<int>(space)) <
              1e-4);
    }
}

TEST_CASE("analytic gradients match finite differences for the dice composite") {
  LossConfig baseline = config_for(LossKind::CE);
  baseline.dice_weight = 1.0;
  REQUIRE(sweep(baseline, 20, 112) < 1e-4);
}

TEST_CASE("focal gradient is exact at extreme probabilities") {
  // Saturated logits push p to 0/1, the edge cases of the focal factor.
  const LabelMap labels(1, 2, 2, {0, 1});
  DenseArray logits = DenseArray::from_data({2, 1, 2}, {40.0, -40.0, -40.0, 40.0});
  const LossResult res = focal_loss(logits, one_hot(labels), 3.0);
  for (std::size_t i = 0; i < res.grad.size(); ++i) REQUIRE(std::isfinite(res.grad[i]));
  REQUIRE(res.value < 1e-10);
}
