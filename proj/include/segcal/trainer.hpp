#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "segcal/adam.hpp"
#include "segcal/error.hpp"
#include "segcal/losses.hpp"
#include "segcal/metrics.hpp"
#include "segcal/model.hpp"
#include "segcal/numerics.hpp"
#include "segcal/rng.hpp"
#include "segcal/synth.hpp"

namespace segcal {

struct TrainConfig {
  LossConfig loss;
  int epochs = 40;
  int batch_size = 16;
  double lr_first = 1e-3;   // first half of the epochs
  double lr_second = 1e-4;  // second half
  AdamConfig adam;
  std::uint64_t seed = 0;
  std::size_t train_count = 200;
  std::size_t val_count = 40;
  std::size_t test_count = 60;
  double train_fraction = 1.0;

  void validate() const {
    loss.validate();
    adam.validate();
    if (epochs < 1) throw invalid_input("TrainConfig: epochs must be >= 1");
    if (batch_size < 1) throw invalid_input("TrainConfig: batch size must be >= 1");
    if (!(lr_first >= 0.0) || !(lr_second >= 0.0) || !std::isfinite(lr_first) ||
        !std::isfinite(lr_second))
      throw invalid_input("TrainConfig: learning rates must be finite and >= 0");
    if (train_count < 1 || val_count < 1 || test_count < 1)
      throw invalid_input("TrainConfig: split sizes must be positive");
    if (!(train_fraction > 0.0) || train_fraction > 1.0)
      throw invalid_input("TrainConfig: train_fraction must lie in (0, 1]");
  }
};

struct EpochStats {
  double loss = 0.0;
  double val_mean_dsc = 0.0;
  double lr = 0.0;
};

// Per-epoch histogram of the winner (per-pixel maximum) logit, recorded on
// the validation set. Two extra buckets catch under/overflow.
struct LogitHistogram {
  double lo = -12.0;
  double hi = 12.0;
  int bins = 96;
  std::vector<std::vector<std::size_t>> counts;  // [epoch][bins + 2]

  void start_epoch() { counts.emplace_back(bins + 2, 0); }

  void record(double v) {
    auto& row = counts.back();
    if (v < lo) {
      row[0] += 1;
    } else if (v >= hi) {
      row[bins + 1] += 1;
    } else {
      const int b = static_cast<int>((v - lo) / (hi - lo) * bins);
      row[1 + std::clamp(b, 0, bins - 1)] += 1;
    }
  }

  double edge(int b) const { return lo + (hi - lo) * b / bins; }
};

// Everything a finished run reports.
struct RunArtifacts {
  ModelParams params;  // best epoch by validation mean DSC
  int best_epoch = 0;
  double best_val_dsc = 0.0;
  std::vector<EpochStats> curve;
  MetricsRecord val_metrics;
  MetricsRecord test_metrics;
  BinStats test_reliability_gt;
  BinStats test_reliability_union;
  LogitHistogram val_winner_logits;
  double test_mean_winner_abs_logit = 0.0;
};

namespace detail {

// Accumulates pooled reliability bins across images.
struct BinPool {
  std::vector<std::size_t> count;
  std::vector<double> acc_sum, conf_sum;

  void add(const BinStats& s) {
    if (count.empty()) {
      count.assign(s.bins, 0);
      acc_sum.assign(s.bins, 0.0);
      conf_sum.assign(s.bins, 0.0);
    }
    for (int b = 0; b < s.bins; ++b) {
      count[b] += s.overall[b].count;
      acc_sum[b] += s.overall[b].accuracy * static_cast<double>(s.overall[b].count);
      conf_sum[b] += s.overall[b].confidence * static_cast<double>(s.overall[b].count);
    }
  }

  BinStats finalize() const {
    BinStats s;
    s.bins = static_cast<int>(count.size());
    s.overall.resize(count.size());
    for (std::size_t b = 0; b < count.size(); ++b) {
      s.overall[b].count = count[b];
      s.total += count[b];
      if (count[b] > 0) {
        s.overall[b].accuracy = acc_sum[b] / static_cast<double>(count[b]);
        s.overall[b].confidence = conf_sum[b] / static_cast<double>(count[b]);
      }
    }
    return s;
  }
};

struct EvalOutput {
  MetricsRecord record;
  BinStats reliability_gt;
  BinStats reliability_union;
  double mean_winner_abs_logit = 0.0;
};

// Full evaluation pass: per-class DSC/HD averaged over images, calibration
// errors per image then averaged, pooled reliability bins, and the mean
// absolute winner logit over all pixels.
inline EvalOutput evaluate_dataset(const ModelParams& params,
                                   const std::vector<SynthSample>& samples, int bins) {
  if (samples.empty()) throw invalid_input("evaluate_dataset: empty dataset");
  const int k_n = params.classes();
  const int fg = k_n - 1;
  EvalOutput out;
  std::vector<double> dsc_sum(fg, 0.0), hd_sum(fg, 0.0);
  double ece_gt_sum = 0.0, cece_gt_sum = 0.0, ece_un_sum = 0.0, cece_un_sum = 0.0;
  double logit_sum = 0.0;
  std::size_t logit_count = 0;
  BinPool pool_gt, pool_union;

  for (const auto& sample : samples) {
    const DenseArray logits = forward(params, sample.image);
    const DenseArray probs = softmax(logits);
    const LabelMap pred = argmax_map(probs);
    const std::size_t hw = sample.labels.pixel_count();

    for (std::size_t p = 0; p < hw; ++p) {
      double top = logits[p];
      for (int k = 1; k < k_n; ++k)
        top = std::max(top, logits[static_cast<std::size_t>(k) * hw + p]);
      logit_sum += std::abs(top);
    }
    logit_count += hw;

    for (int k = 1; k < k_n; ++k) {
      dsc_sum[k - 1] += dice(pred, sample.labels, k);
      const HausdorffResult hd = hausdorff(pred, sample.labels, k);
      hd_sum[k - 1] += hd.distance;
      out.record.hd_degenerate_count += hd.degenerate ? 1 : 0;
    }

    const CalibConfig cfg_gt{bins, ForegroundMode::GtForeground};
    const CalibConfig cfg_un{bins, ForegroundMode::UnionForeground};
    const auto [e_gt, b_gt] = ece(probs, sample.labels, cfg_gt);
    const auto [c_gt, b2_gt] = cece(probs, sample.labels, cfg_gt);
    const auto [e_un, b_un] = ece(probs, sample.labels, cfg_un);
    const auto [c_un, b2_un] = cece(probs, sample.labels, cfg_un);
    ece_gt_sum += e_gt;
    cece_gt_sum += c_gt;
    ece_un_sum += e_un;
    cece_un_sum += c_un;
    pool_gt.add(b_gt);
    pool_union.add(b_un);
  }

  const double n = static_cast<double>(samples.size());
  out.record.dsc_per_class.resize(fg);
  out.record.hd_per_class.resize(fg);
  for (int k = 0; k < fg; ++k) {
    out.record.dsc_per_class[k] = dsc_sum[k] / n;
    out.record.hd_per_class[k] = hd_sum[k] / n;
  }
  out.record.dsc_mean =
      std::accumulate(out.record.dsc_per_class.begin(), out.record.dsc_per_class.end(), 0.0) / fg;
  out.record.hd_mean =
      std::accumulate(out.record.hd_per_class.begin(), out.record.hd_per_class.end(), 0.0) / fg;
  out.record.ece_gt = ece_gt_sum / n;
  out.record.cece_gt = cece_gt_sum / n;
  out.record.ece_union = ece_un_sum / n;
  out.record.cece_union = cece_un_sum / n;
  out.reliability_gt = pool_gt.finalize();
  out.reliability_union = pool_union.finalize();
  out.mean_winner_abs_logit = logit_sum / static_cast<double>(logit_count);
  return out;
}

}  // namespace detail

// Deterministic training: generates the three splits from independent seed
// streams, runs mini-batch Adam with the two-phase learning rate, tracks the
// winner-logit histogram on the validation set every epoch, and keeps the
// parameters of the epoch with the highest validation mean DSC.
inline RunArtifacts train(const TrainConfig& config, const SynthConfig& synth, int bins = 15) {
  config.validate();
  synth.validate();

  SynthConfig synth_train = synth, synth_val = synth, synth_test = synth;
  synth_train.seed = mix_seed(synth.seed, 0x7261u);  // independent split streams
  synth_val.seed = mix_seed(synth.seed, 0x7661u);
  synth_test.seed = mix_seed(synth.seed, 0x7465u);
  const std::size_t n_train = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(config.train_fraction *
                                               static_cast<double>(config.train_count))));
  const std::vector<SynthSample> train_set = generate_dataset(synth_train, n_train);
  const std::vector<SynthSample> val_set = generate_dataset(synth_val, config.val_count);
  const std::vector<SynthSample> test_set = generate_dataset(synth_test, config.test_count);

  constexpr int kHidden = 16;
  ModelParams params = ModelParams::init(1, kHidden, synth.classes, mix_seed(config.seed, 0x1A17u));
  AdamState state(params.size());
  std::mt19937_64 shuffle_rng = make_rng(config.seed, 0x5FFEu);

  RunArtifacts art{params};
  art.best_val_dsc = -1.0;
  const int k_n = synth.classes;
  const int fg = k_n - 1;

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> batch_grads(params.size());
  ForwardCache cache;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = epoch < (config.epochs + 1) / 2 ? config.lr_first : config.lr_second;

    // Fisher-Yates with our own RNG so the permutation does not depend on
    // library internals.
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng() % i]);

    double loss_acc = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      std::fill(batch_grads.begin(), batch_grads.end(), 0.0);
      for (std::size_t b = start; b < stop; ++b) {
        const SynthSample& sample = train_set[order[b]];
        const DenseArray logits = forward(params, sample.image, cache);
        if (!logits.all_finite())
          throw divergence_error("train: non-finite logits at epoch " + std::to_string(epoch) +
                                 ", batch starting at " + std::to_string(start));
        const LossResult res = compute_loss(config.loss, logits, sample.labels);
        if (!std::isfinite(res.value))
          throw divergence_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                 ", batch starting at " + std::to_string(start));
        loss_acc += res.value;
        const std::vector<double> g = backward(params, cache, res.grad);
        for (std::size_t i = 0; i < g.size(); ++i) batch_grads[i] += g[i];
      }
      const double inv = 1.0 / static_cast<double>(stop - start);
      for (double& g : batch_grads) g *= inv;
      adam_step(params.flat(), batch_grads, state, lr, config.adam);
      if (!params.all_finite())
        throw divergence_error("train: non-finite parameters after the update at epoch " +
                               std::to_string(epoch));
    }

    // Validation: mean DSC over foreground classes plus the winner-logit
    // histogram for this epoch.
    art.val_winner_logits.start_epoch();
    std::vector<double> dsc_sum(fg, 0.0);
    for (const auto& sample : val_set) {
      const DenseArray logits = forward(params, sample.image);
      const std::size_t hw = sample.labels.pixel_count();
      for (std::size_t p = 0; p < hw; ++p) {
        double top = logits[p];
        for (int k = 1; k < k_n; ++k)
          top = std::max(top, logits[static_cast<std::size_t>(k) * hw + p]);
        art.val_winner_logits.record(top);
      }
      const LabelMap pred = argmax_map(logits);
      for (int k = 1; k < k_n; ++k) dsc_sum[k - 1] += dice(pred, sample.labels, k);
    }
    double val_dsc = 0.0;
    for (int k = 0; k < fg; ++k) val_dsc += dsc_sum[k] / static_cast<double>(val_set.size());
    val_dsc /= static_cast<double>(fg);

    art.curve.push_back(EpochStats{loss_acc / static_cast<double>(train_set.size()), val_dsc, lr});
    if (val_dsc > art.best_val_dsc) {
      art.best_val_dsc = val_dsc;
      art.best_epoch = epoch;
      art.params = params;
    }
  }

  detail::EvalOutput val_eval = detail::evaluate_dataset(art.params, val_set, bins);
  detail::EvalOutput test_eval = detail::evaluate_dataset(art.params, test_set, bins);
  art.val_metrics = std::move(val_eval.record);
  art.test_metrics = std::move(test_eval.record);
  art.test_reliability_gt = std::move(test_eval.reliability_gt);
  art.test_reliability_union = std::move(test_eval.reliability_union);
  art.test_mean_winner_abs_logit = test_eval.mean_winner_abs_logit;
  return art;
}

// ---------------------------------------------------------------------------
// Checkpoints: flat 64-bit parameters behind a small versioned header.

namespace detail {

constexpr char kCheckpointMagic[4] = {'C', 'S', 'L', 'B'};
constexpr std::uint32_t kCheckpointVersion = 1;

inline std::uint64_t architecture_hash(const ModelParams& p) {
  const std::string desc = "conv3x3/relu:" + std::to_string(p.in_channels()) + "-" +
                           std::to_string(p.hidden()) + "-" + std::to_string(p.hidden()) + "-" +
                           std::to_string(p.classes());
  return fnv1a64(desc.data(), desc.size());
}

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace detail

struct Checkpoint {
  ModelParams params;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
};

inline void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                            std::uint32_t height, std::uint32_t width) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw invalid_input("save_checkpoint: cannot open " + path.string());
  os.write(detail::kCheckpointMagic, 4);
  detail::write_pod(os, detail::kCheckpointVersion);
  detail::write_pod(os, detail::architecture_hash(params));
  detail::write_pod(os, static_cast<std::uint32_t>(params.classes()));
  detail::write_pod(os, height);
  detail::write_pod(os, width);
  detail::write_pod(os, static_cast<std::uint32_t>(params.in_channels()));
  detail::write_pod(os, static_cast<std::uint32_t>(params.hidden()));
  detail::write_pod(os, static_cast<std::uint64_t>(params.size()));
  os.write(reinterpret_cast<const char*>(params.flat().data()),
           static_cast<std::streamsize>(params.size() * sizeof(double)));
  if (!os) throw invalid_input("save_checkpoint: write failed for " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw invalid_input("load_checkpoint: cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, detail::kCheckpointMagic, 4) != 0)
    throw invalid_input("load_checkpoint: bad magic");
  if (detail::read_pod<std::uint32_t>(is) != detail::kCheckpointVersion)
    throw invalid_input("load_checkpoint: unsupported version");
  const auto arch_hash = detail::read_pod<std::uint64_t>(is);
  const auto classes = detail::read_pod<std::uint32_t>(is);
  const auto height = detail::read_pod<std::uint32_t>(is);
  const auto width = detail::read_pod<std::uint32_t>(is);
  const auto in_ch = detail::read_pod<std::uint32_t>(is);
  const auto hidden = detail::read_pod<std::uint32_t>(is);
  const auto count = detail::read_pod<std::uint64_t>(is);

  ModelParams params(static_cast<int>(in_ch), static_cast<int>(hidden),
                     static_cast<int>(classes));
  if (detail::architecture_hash(params) != arch_hash)
    throw invalid_input("load_checkpoint: architecture hash mismatch");
  if (count != params.size()) throw invalid_input("load_checkpoint: parameter count mismatch");
  is.read(reinterpret_cast<char*>(params.flat().data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (!is) throw invalid_input("load_checkpoint: truncated file");
  return Checkpoint{std::move(params), height, width};
}

}  // namespace segcal
