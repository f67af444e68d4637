#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "segcal/priors.hpp"
#include "support/test_support.hpp"

using namespace segcal;

namespace {

// Brute-force oracle: class proportions of the replicate-padded patch around
// (r, c), weighted by the kernel, optionally dropping the center tap.
std::vector<double> patch_proportions(const LabelMap& labels, const Kernel& kernel,
                                      std::size_t r, std::size_t c, bool exclude_center) {
  std::vector<double> acc(labels.classes(), 0.0);
  double total = 0.0;
  const int cr = static_cast<int>(kernel.rows / 2);
  const int cc = static_cast<int>(kernel.cols / 2);
  for (std::size_t kr = 0; kr < kernel.rows; ++kr)
    for (std::size_t kc = 0; kc < kernel.cols; ++kc) {
      if (exclude_center && static_cast<int>(kr) == cr && static_cast<int>(kc) == cc) continue;
      const int rr = std::clamp(static_cast<int>(r) + static_cast<int>(kr) - cr, 0,
                                static_cast<int>(labels.height()) - 1);
      const int cx = std::clamp(static_cast<int>(c) + static_cast<int>(kc) - cc, 0,
                                static_cast<int>(labels.width()) - 1);
      acc[labels.at(rr, cx)] += kernel.at(kr, kc);
      total += kernel.at(kr, kc);
    }
  for (double& v : acc) v /= total;
  return acc;
}

}  // namespace

TEST_CASE("gaussian kernel 3x3 sigma=1 matches direct evaluation") {
  const Kernel k = gaussian_kernel(3, 3, 1.0);
  // exp(-1) at the corners, exp(-0.5) on the edge-adjacent taps, 1 center.
  const double corner = 0.36787944117144233;
  const double edge = 0.6065306597126334;
  REQUIRE(k.at(1, 1) == 1.0);
  for (auto [r, c] : {std::pair{0, 0}, {0, 2}, {2, 0}, {2, 2}})
    REQUIRE(k.at(r, c) == Catch::Approx(corner).margin(1e-12));
  for (auto [r, c] : {std::pair{0, 1}, {1, 0}, {1, 2}, {2, 1}})
    REQUIRE(k.at(r, c) == Catch::Approx(edge).margin(1e-12));
}

TEST_CASE("gaussian kernel is symmetric and center-dominant") {
  const Kernel k = gaussian_kernel(5, 3, 1.7);
  REQUIRE(k.sigma.has_value());
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 3; ++c) {
      REQUIRE(k.at(r, c) == Catch::Approx(k.at(4 - r, 2 - c)).margin(1e-15));
      REQUIRE(k.at(r, c) <= 1.0);
    }
  REQUIRE(k.center_weight() == 1.0);
}

TEST_CASE("gaussian kernel approaches the uniform kernel as sigma grows") {
  const Kernel k = gaussian_kernel(3, 3, 1e9);
  for (double w : k.weights) REQUIRE(w == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("sigma=2 size-3 kernel is constructible (default configuration)") {
  const Kernel k = gaussian_kernel(3, 3, 2.0);
  REQUIRE(k.rows == 3);
  REQUIRE(k.sigma == 2.0);
  REQUIRE(k.at(0, 0) == Catch::Approx(std::exp(-0.25)).margin(1e-15));
}

TEST_CASE("kernel constructors reject invalid sizes and sigma") {
  REQUIRE_THROWS_AS(gaussian_kernel(2, 3, 1.0), invalid_input);
  REQUIRE_THROWS_AS(gaussian_kernel(3, 4, 1.0), invalid_input);
  REQUIRE_THROWS_AS(gaussian_kernel(3, 3, 0.0), invalid_input);
  REQUIRE_THROWS_AS(gaussian_kernel(3, 3, -2.0), invalid_input);
  REQUIRE_THROWS_AS(mean_kernel(4, 3), invalid_input);
  REQUIRE_THROWS_AS(make_kernel(3, 3, std::vector<double>(9, 0.0)), invalid_input);
}

TEST_CASE("mean kernel has nine equal weights") {
  const Kernel k = mean_kernel(3, 3);
  REQUIRE(k.weights.size() == 9);
  for (double w : k.weights) REQUIRE(w == 1.0);
}

TEST_CASE("svls smoothing of a constant map is exactly one-hot") {
  for (const Kernel& k : {gaussian_kernel(3, 3, 2.0), mean_kernel(5, 5)}) {
    const LabelMap labels(6, 6, 3, std::vector<int>(36, 2));
    const PriorMap smoothed = svls_smooth(labels, k);
    for (std::size_t p = 0; p < 36; ++p) {
      REQUIRE(smoothed.value(2, p) == 1.0);
      REQUIRE(smoothed.value(0, p) == 0.0);
      REQUIRE(smoothed.value(1, p) == 0.0);
    }
  }
}

TEST_CASE("svls smoothing with a mean kernel counts patch labels") {
  // 3x3 patch with five center-class pixels and four of the other class.
  const LabelMap labels(3, 3, 2, {0, 1, 0, 1, 0, 1, 0, 1, 0});
  const PriorMap smoothed = svls_smooth(labels, mean_kernel(3, 3));
  REQUIRE(smoothed.value(0, 4) == Catch::Approx(5.0 / 9.0).margin(1e-15));
  REQUIRE(smoothed.value(1, 4) == Catch::Approx(4.0 / 9.0).margin(1e-15));
}

TEST_CASE("svls smoothing lands on the simplex for random inputs") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 30; ++trial) {
    const LabelMap labels = testsupport::random_labels(rng, 5, 7, 4);
    const Kernel kernel = testsupport::random_kernel(rng);
    const PriorMap smoothed = svls_smooth(labels, kernel);  // PriorMap validates sums
    for (std::size_t p = 0; p < labels.pixel_count(); ++p) {
      double sum = 0.0;
      for (int k = 0; k < 4; ++k) sum += smoothed.value(k, p);
      REQUIRE(sum == Catch::Approx(1.0).margin(1e-9));
    }
  }
}

TEST_CASE("svls smoothing matches the brute-force patch oracle") {
  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 10; ++trial) {
    const LabelMap labels = testsupport::random_labels(rng, 6, 5, 3);
    const Kernel kernel = testsupport::random_kernel(rng);
    const PriorMap smoothed = svls_smooth(labels, kernel);
    for (std::size_t r = 0; r < 6; ++r)
      for (std::size_t c = 0; c < 5; ++c) {
        // The oracle normalizes by the accumulated patch total, which for
        // replicate padding equals the kernel sum.
        const auto expected = patch_proportions(labels, kernel, r, c, false);
        for (int k = 0; k < 3; ++k)
          REQUIRE(smoothed.value(k, r * 5 + c) == Catch::Approx(expected[k]).margin(1e-12));
      }
  }
}

TEST_CASE("svls smoothing is equivariant to horizontal flips") {
  std::mt19937_64 rng(47);
  const LabelMap labels = testsupport::random_labels(rng, 6, 8, 3);
  Kernel kernel = gaussian_kernel(3, 3, 0.8);
  kernel.weights[1] = 0.9;  // break symmetry so the flip matters

  std::vector<int> flipped(labels.pixel_count());
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 8; ++c) flipped[r * 8 + c] = labels.at(r, 7 - c);
  const LabelMap labels_flipped(6, 8, 3, std::move(flipped));

  Kernel kernel_flipped = kernel;
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 3; ++c) kernel_flipped.weights[r * 3 + c] = kernel.at(r, 2 - c);

  const PriorMap a = svls_smooth(labels, kernel);
  const PriorMap b = svls_smooth(labels_flipped, kernel_flipped);
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 8; ++c)
      for (int k = 0; k < 3; ++k)
        REQUIRE(a.value(k, r * 8 + c) == Catch::Approx(b.value(k, r * 8 + 7 - c)).margin(1e-15));
}

TEST_CASE("prior map of a constant patch is one-hot") {
  const LabelMap labels(5, 5, 4, std::vector<int>(25, 1));
  const PriorMap tau = prior_map(labels, mean_kernel(3, 3), false);
  for (std::size_t p = 0; p < 25; ++p) REQUIRE(tau.value(1, p) == 1.0);
}

TEST_CASE("prior map with excluded center sees only the neighbors") {
  // Center pixel class 0 surrounded by eight pixels of class 1.
  std::vector<int> labels(9, 1);
  labels[4] = 0;
  const LabelMap map(3, 3, 2, std::move(labels));
  const PriorMap tau = prior_map(map, mean_kernel(3, 3), true);
  REQUIRE(tau.value(0, 4) == 0.0);
  REQUIRE(tau.value(1, 4) == 1.0);
}

TEST_CASE("prior map with a mean kernel equals the patch histogram") {
  std::mt19937_64 rng(53);
  for (int trial = 0; trial < 10; ++trial) {
    const LabelMap labels = testsupport::random_labels(rng, 7, 6, 3);
    for (bool exclude : {false, true}) {
      const PriorMap tau = prior_map(labels, mean_kernel(3, 3), exclude);
      for (std::size_t r = 0; r < 7; ++r)
        for (std::size_t c = 0; c < 6; ++c) {
          const auto expected = patch_proportions(labels, mean_kernel(3, 3), r, c, exclude);
          for (int k = 0; k < 3; ++k)
            REQUIRE(tau.value(k, r * 6 + c) == Catch::Approx(expected[k]).margin(1e-12));
        }
    }
  }
}

TEST_CASE("prior map values stay within [0,1]") {
  std::mt19937_64 rng(59);
  for (int trial = 0; trial < 20; ++trial) {
    const LabelMap labels = testsupport::random_labels(rng, 5, 5, 4);
    const Kernel kernel = testsupport::random_kernel(rng);
    const PriorMap tau = prior_map(labels, kernel, (trial & 1) != 0);
    for (std::size_t i = 0; i < tau.array().size(); ++i) {
      REQUIRE(tau.array()[i] >= 0.0);
      REQUIRE(tau.array()[i] <= 1.0 + 1e-12);
    }
  }
}

TEST_CASE("prior map rejects kernels with no off-center mass") {
  std::vector<double> w(9, 0.0);
  w[4] = 1.0;  // only the center tap carries weight
  const Kernel center_only = make_kernel(3, 3, std::move(w));
  const LabelMap labels(3, 3, 2);
  REQUIRE_NOTHROW(prior_map(labels, center_only, false));
  REQUIRE_THROWS_AS(prior_map(labels, center_only, true), invalid_input);
}
