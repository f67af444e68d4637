#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "segcal/error.hpp"
#include "segcal/numerics.hpp"

namespace segcal {

// Pixel set over which calibration metrics are computed. Class 0 is
// background by convention.
enum class ForegroundMode { GtForeground, UnionForeground, AllPixels };

inline const char* foreground_mode_name(ForegroundMode m) {
  switch (m) {
    case ForegroundMode::GtForeground: return "gt_foreground";
    case ForegroundMode::UnionForeground: return "union_foreground";
    case ForegroundMode::AllPixels: return "all_pixels";
  }
  return "?";
}

struct CalibConfig {
  int bins = 15;
  ForegroundMode mode = ForegroundMode::GtForeground;

  void validate() const {
    if (bins < 1) throw invalid_input("CalibConfig: bins must be >= 1");
  }
};

// Per-bin counts, accuracies and confidences; per-class slices populated by
// the classwise metric. Empty bins report accuracy/confidence 0.
struct BinStats {
  struct Bin {
    std::size_t count = 0;
    double accuracy = 0.0;
    double confidence = 0.0;
  };

  int bins = 0;
  std::size_t total = 0;             // number of evaluated samples
  std::vector<Bin> overall;          // [bins], from ece
  std::vector<std::vector<Bin>> per_class;  // [bins][classes], from cece

  double bin_lo(int i) const { return static_cast<double>(i) / bins; }
  double bin_hi(int i) const { return static_cast<double>(i + 1) / bins; }
};

// Dice overlap of the class-k masks; 1 when both masks are empty.
inline double dice(const LabelMap& pred, const LabelMap& gt, int k) {
  if (pred.height() != gt.height() || pred.width() != gt.width())
    throw invalid_input("dice: shape mismatch");
  std::size_t p_n = 0, g_n = 0, both = 0;
  for (std::size_t i = 0; i < gt.pixel_count(); ++i) {
    const bool in_p = pred[i] == k;
    const bool in_g = gt[i] == k;
    p_n += in_p;
    g_n += in_g;
    both += in_p && in_g;
  }
  if (p_n + g_n == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p_n + g_n);
}

struct HausdorffResult {
  double distance = 0.0;
  bool degenerate = false;  // exactly one mask empty; distance is the image diagonal
};

namespace detail {

inline std::vector<std::pair<int, int>> mask_pixels(const LabelMap& m, int k) {
  std::vector<std::pair<int, int>> pts;
  for (std::size_t r = 0; r < m.height(); ++r)
    for (std::size_t c = 0; c < m.width(); ++c)
      if (m.at(r, c) == k) pts.emplace_back(static_cast<int>(r), static_cast<int>(c));
  return pts;
}

// Directed nearest-neighbor distances from every point of a to b.
inline std::vector<double> directed_sq_distances(const std::vector<std::pair<int, int>>& a,
                                                 const std::vector<std::pair<int, int>>& b) {
  std::vector<double> out;
  out.reserve(a.size());
  for (const auto& [ar, ac] : a) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [br, bc] : b) {
      const double dr = ar - br;
      const double dc = ac - bc;
      best = std::min(best, dr * dr + dc * dc);
    }
    out.push_back(best);
  }
  return out;
}

// Nearest-rank percentile of squared distances (100 gives the maximum).
inline double directed_percentile(std::vector<double> sq, double percentile) {
  std::sort(sq.begin(), sq.end());
  const std::size_t n = sq.size();
  std::size_t rank = static_cast<std::size_t>(std::ceil(percentile / 100.0 * n));
  rank = std::clamp<std::size_t>(rank, 1, n);
  return std::sqrt(sq[rank - 1]);
}

}  // namespace detail

// Symmetric Hausdorff distance between the class-k pixel sets, in Euclidean
// pixel units. Both masks empty -> 0. Exactly one empty -> the image
// diagonal, flagged as degenerate so the caller can surface it. percentile
// < 100 gives the robust variant (never used by the default reports).
inline HausdorffResult hausdorff(const LabelMap& pred, const LabelMap& gt, int k,
                                 double percentile = 100.0) {
  if (pred.height() != gt.height() || pred.width() != gt.width())
    throw invalid_input("hausdorff: shape mismatch");
  if (!(percentile > 0.0) || percentile > 100.0)
    throw invalid_input("hausdorff: percentile must lie in (0, 100]");
  const auto a = detail::mask_pixels(pred, k);
  const auto b = detail::mask_pixels(gt, k);
  if (a.empty() && b.empty()) return {0.0, false};
  if (a.empty() || b.empty()) {
    const double dh = static_cast<double>(gt.height() - 1);
    const double dw = static_cast<double>(gt.width() - 1);
    return {std::sqrt(dh * dh + dw * dw), true};
  }
  const double ab = detail::directed_percentile(detail::directed_sq_distances(a, b), percentile);
  const double ba = detail::directed_percentile(detail::directed_sq_distances(b, a), percentile);
  return {std::max(ab, ba), false};
}

// Linear pixel indices selected for calibration evaluation.
inline std::vector<std::size_t> select_eval_pixels(const LabelMap& gt, const LabelMap& pred,
                                                   ForegroundMode mode) {
  if (pred.height() != gt.height() || pred.width() != gt.width())
    throw invalid_input("select_eval_pixels: shape mismatch");
  std::vector<std::size_t> idx;
  for (std::size_t p = 0; p < gt.pixel_count(); ++p) {
    const bool take = mode == ForegroundMode::AllPixels ||
                      (mode == ForegroundMode::GtForeground ? gt[p] != 0
                                                            : gt[p] != 0 || pred[p] != 0);
    if (take) idx.push_back(p);
  }
  return idx;
}

namespace detail {

inline void require_prob_map(const DenseArray& probs, const LabelMap& gt, const char* op) {
  require_logit_map(probs, op);
  if (probs.extent(0) != static_cast<std::size_t>(gt.classes()) ||
      probs.extent(1) != gt.height() || probs.extent(2) != gt.width())
    throw invalid_input(std::string(op) + ": probs and labels shapes disagree");
  const std::size_t k_n = probs.extent(0);
  const std::size_t hw = gt.pixel_count();
  for (std::size_t p = 0; p < hw; ++p) {
    double sum = 0.0;
    for (std::size_t k = 0; k < k_n; ++k) {
      const double v = probs[k * hw + p];
      if (v < 0.0 || v > 1.0 + 1e-9)
        throw invalid_input(std::string(op) + ": probabilities outside [0,1]");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6)
      throw invalid_input(std::string(op) + ": per-pixel probabilities do not sum to 1");
  }
}

// Bins are the M equispaced half-open intervals (lo, hi] covering (0, 1];
// a confidence of exactly 0 lands in the first bin.
inline int bin_index(double confidence, int bins) {
  if (confidence <= 0.0) return 0;
  const int idx = static_cast<int>(std::ceil(confidence * bins)) - 1;
  return std::clamp(idx, 0, bins - 1);
}

}  // namespace detail

// Expected calibration error over max-confidence predictions on the selected
// pixels, plus the per-bin stats backing a reliability diagram.
inline std::pair<double, BinStats> ece(const DenseArray& probs, const LabelMap& gt,
                                       const CalibConfig& config) {
  config.validate();
  detail::require_prob_map(probs, gt, "ece");
  const std::size_t k_n = probs.extent(0);
  const std::size_t hw = gt.pixel_count();
  const LabelMap pred = argmax_map(probs);
  const std::vector<std::size_t> sel = select_eval_pixels(gt, pred, config.mode);
  if (sel.empty()) throw empty_evaluation("ece: no pixels selected for evaluation");

  const int m = config.bins;
  std::vector<std::size_t> count(m, 0);
  std::vector<double> acc_sum(m, 0.0), conf_sum(m, 0.0);
  for (std::size_t p : sel) {
    double conf = probs[p];
    int arg = 0;
    for (std::size_t k = 1; k < k_n; ++k) {
      const double v = probs[k * hw + p];
      if (v > conf) {
        conf = v;
        arg = static_cast<int>(k);
      }
    }
    const int b = detail::bin_index(conf, m);
    count[b] += 1;
    acc_sum[b] += arg == gt[p] ? 1.0 : 0.0;
    conf_sum[b] += conf;
  }

  BinStats stats;
  stats.bins = m;
  stats.total = sel.size();
  stats.overall.resize(m);
  double err = 0.0;
  for (int b = 0; b < m; ++b) {
    stats.overall[b].count = count[b];
    if (count[b] > 0) {
      stats.overall[b].accuracy = acc_sum[b] / static_cast<double>(count[b]);
      stats.overall[b].confidence = conf_sum[b] / static_cast<double>(count[b]);
      err += static_cast<double>(count[b]) / static_cast<double>(sel.size()) *
             std::abs(stats.overall[b].accuracy - stats.overall[b].confidence);
    }
  }
  return {err, stats};
}

// Classwise expected calibration error: every sample contributes one entry
// per class, binned by that class's confidence. The normalizer is the
// selected-sample count.
inline std::pair<double, BinStats> cece(const DenseArray& probs, const LabelMap& gt,
                                        const CalibConfig& config) {
  config.validate();
  detail::require_prob_map(probs, gt, "cece");
  const std::size_t k_n = probs.extent(0);
  const std::size_t hw = gt.pixel_count();
  const LabelMap pred = argmax_map(probs);
  const std::vector<std::size_t> sel = select_eval_pixels(gt, pred, config.mode);
  if (sel.empty()) throw empty_evaluation("cece: no pixels selected for evaluation");

  const int m = config.bins;
  std::vector<std::vector<std::size_t>> count(m, std::vector<std::size_t>(k_n, 0));
  std::vector<std::vector<double>> acc_sum(m, std::vector<double>(k_n, 0.0));
  std::vector<std::vector<double>> conf_sum(m, std::vector<double>(k_n, 0.0));
  for (std::size_t p : sel) {
    for (std::size_t k = 0; k < k_n; ++k) {
      const double conf = probs[k * hw + p];
      const int b = detail::bin_index(conf, m);
      count[b][k] += 1;
      acc_sum[b][k] += gt[p] == static_cast<int>(k) ? 1.0 : 0.0;
      conf_sum[b][k] += conf;
    }
  }

  BinStats stats;
  stats.bins = m;
  stats.total = sel.size();
  stats.per_class.assign(m, std::vector<BinStats::Bin>(k_n));
  double err = 0.0;
  for (int b = 0; b < m; ++b)
    for (std::size_t k = 0; k < k_n; ++k) {
      auto& cell = stats.per_class[b][k];
      cell.count = count[b][k];
      if (cell.count > 0) {
        cell.accuracy = acc_sum[b][k] / static_cast<double>(cell.count);
        cell.confidence = conf_sum[b][k] / static_cast<double>(cell.count);
        err += static_cast<double>(cell.count) / static_cast<double>(sel.size()) *
               std::abs(cell.accuracy - cell.confidence);
      }
    }
  return {err, stats};
}

// Reliability-diagram data: one row per bin.
inline void write_reliability_csv(std::ostream& os, const BinStats& stats) {
  os << "bin_lo,bin_hi,count,accuracy,confidence\n";
  char buf[160];
  for (int b = 0; b < stats.bins; ++b) {
    const auto& bin = stats.overall[b];
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%zu,%.17g,%.17g\n", stats.bin_lo(b),
                  stats.bin_hi(b), bin.count, bin.accuracy, bin.confidence);
    os << buf;
  }
}

// Per-run evaluation summary: per-class and mean discrimination metrics plus
// calibration errors for both foreground modes.
struct MetricsRecord {
  std::string method;
  std::string run_id;
  std::string dataset;
  std::vector<double> dsc_per_class;  // foreground classes 1..K-1
  std::vector<double> hd_per_class;
  double dsc_mean = 0.0;
  double hd_mean = 0.0;
  double ece_gt = 0.0;
  double cece_gt = 0.0;
  double ece_union = 0.0;
  double cece_union = 0.0;
  int hd_degenerate_count = 0;
};

// One method's metric values, keyed by metric name, for rank aggregation.
struct MethodMetrics {
  std::string method;
  std::map<std::string, double> values;
};

struct RankTable {
  std::vector<std::string> metrics;
  std::vector<std::string> methods;                      // sorted by rank sum, best first
  std::map<std::string, std::vector<double>> per_metric; // method -> rank per metric
  std::map<std::string, double> rank_sum;
  std::map<std::string, double> mean_rank;
};

// Ranks methods 1..n per metric (ties share the mean rank) and sums the
// ranks across metrics; lower is better. `higher_is_better` gives the
// direction per metric; every method must carry every metric.
inline RankTable sum_rank(const std::vector<MethodMetrics>& records,
                          const std::map<std::string, bool>& higher_is_better) {
  if (records.empty()) throw invalid_input("sum_rank: no methods");
  RankTable table;
  for (const auto& [name, dir] : higher_is_better) {
    (void)dir;
    table.metrics.push_back(name);
  }
  for (const auto& rec : records) {
    for (const auto& metric : table.metrics)
      if (!rec.values.count(metric))
        throw invalid_input("sum_rank: method '" + rec.method + "' is missing metric '" +
                            metric + "'");
    table.per_metric[rec.method] = {};
    table.rank_sum[rec.method] = 0.0;
  }

  for (const auto& metric : table.metrics) {
    const bool higher = higher_is_better.at(metric);
    // Sort method indices so that better values come first.
    std::vector<std::size_t> order(records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const double va = records[a].values.at(metric);
      const double vb = records[b].values.at(metric);
      if (va != vb) return higher ? va > vb : va < vb;
      return records[a].method < records[b].method;
    });
    std::size_t i = 0;
    while (i < order.size()) {
      std::size_t j = i;
      while (j + 1 < order.size() && records[order[j + 1]].values.at(metric) ==
                                         records[order[i]].values.at(metric))
        ++j;
      const double shared = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
      for (std::size_t t = i; t <= j; ++t) {
        table.per_metric[records[order[t]].method].push_back(shared);
        table.rank_sum[records[order[t]].method] += shared;
      }
      i = j + 1;
    }
  }

  for (const auto& rec : records)
    table.mean_rank[rec.method] =
        table.rank_sum[rec.method] / static_cast<double>(table.metrics.size());

  for (const auto& rec : records) table.methods.push_back(rec.method);
  std::sort(table.methods.begin(), table.methods.end(), [&](const std::string& a,
                                                            const std::string& b) {
    if (table.rank_sum.at(a) != table.rank_sum.at(b))
      return table.rank_sum.at(a) < table.rank_sum.at(b);
    return a < b;
  });
  return table;
}

}  // namespace segcal
