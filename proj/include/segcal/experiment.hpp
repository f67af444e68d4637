#pragma once

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "segcal/error.hpp"
#include "segcal/losses.hpp"
#include "segcal/metrics.hpp"
#include "segcal/rng.hpp"
#include "segcal/synth.hpp"
#include "segcal/trainer.hpp"

namespace segcal {

// One named training run: everything needed to reproduce it.
struct RunSpec {
  std::string name;
  TrainConfig train;
  SynthConfig synth;
};

struct ExperimentSpec {
  std::string output_dir = "segcal-out";
  int bins = 15;
  std::vector<RunSpec> runs;

  void validate() const {
    if (bins < 1) throw invalid_input("spec: bins must be >= 1");
    std::vector<std::string> names;
    for (const auto& run : runs) {
      if (run.name.empty()) throw invalid_input("spec: run with empty name");
      for (char c : run.name)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-' && c != '.')
          throw invalid_input("spec: run name '" + run.name +
                              "' may only contain [A-Za-z0-9_.-]");
      names.push_back(run.name);
      run.train.validate();
      run.synth.validate();
    }
    std::sort(names.begin(), names.end());
    if (std::adjacent_find(names.begin(), names.end()) != names.end())
      throw invalid_input("spec: duplicate run name");
  }
};

// ---------------------------------------------------------------------------
// Spec files. Two encodings of the same schema: a sectioned key=value text
// format (grammar in the README) and JSON.

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

[[noreturn]] inline void spec_error(const std::string& where, const std::string& msg) {
  throw invalid_input(where + ": " + msg);
}

inline double parse_double(const std::string& where, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing characters");
    return d;
  } catch (const std::exception&) {
    spec_error(where, "expected a number, got '" + v + "'");
  }
}

inline long long parse_int(const std::string& where, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long i = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing characters");
    return i;
  } catch (const std::exception&) {
    spec_error(where, "expected an integer, got '" + v + "'");
  }
}

inline std::uint64_t parse_u64(const std::string& where, const std::string& v) {
  try {
    std::size_t used = 0;
    const std::uint64_t i = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing characters");
    return i;
  } catch (const std::exception&) {
    spec_error(where, "expected a non-negative integer, got '" + v + "'");
  }
}

inline bool parse_bool(const std::string& where, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  spec_error(where, "expected true/false, got '" + v + "'");
}

inline LossKind parse_loss_kind(const std::string& where, const std::string& v) {
  if (v == "ce") return LossKind::CE;
  if (v == "ls") return LossKind::LS;
  if (v == "fl") return LossKind::FL;
  if (v == "ecp") return LossKind::ECP;
  if (v == "svls") return LossKind::SVLS;
  if (v == "mbls") return LossKind::MbLS;
  if (v == "nacl") return LossKind::NACL;
  spec_error(where, "unknown loss '" + v + "' (ce|ls|fl|ecp|svls|mbls|nacl)");
}

inline const char* loss_kind_name(LossKind k) {
  switch (k) {
    case LossKind::CE: return "ce";
    case LossKind::LS: return "ls";
    case LossKind::FL: return "fl";
    case LossKind::ECP: return "ecp";
    case LossKind::SVLS: return "svls";
    case LossKind::MbLS: return "mbls";
    case LossKind::NACL: return "nacl";
  }
  return "?";
}

// Applies one key to a run. `where` anchors diagnostics ("file:line" for the
// text format, a JSON path otherwise).
inline void apply_run_key(RunSpec& run, const std::string& where, const std::string& key,
                          const std::string& value, bool& seed_set) {
  auto& loss = run.train.loss;
  if (key == "loss") {
    loss.kind = parse_loss_kind(where, value);
    if (loss.kind == LossKind::SVLS) loss.prior.kind = PriorKind::Gaussian;
  } else if (key == "alpha") {
    loss.alpha = parse_double(where, value);
  } else if (key == "gamma") {
    loss.gamma = parse_double(where, value);
  } else if (key == "margin") {
    loss.margin = parse_double(where, value);
  } else if (key == "lambda") {
    loss.lambda = parse_double(where, value);
  } else if (key == "penalty") {
    if (value == "l1")
      loss.penalty = PenaltyKind::L1;
    else if (value == "l2")
      loss.penalty = PenaltyKind::L2;
    else
      spec_error(where, "unknown penalty '" + value + "' (l1|l2)");
  } else if (key == "space") {
    if (value == "logits")
      loss.target_space = TargetSpace::Logits;
    else if (value == "softmax")
      loss.target_space = TargetSpace::Softmax;
    else
      spec_error(where, "unknown target space '" + value + "' (logits|softmax)");
  } else if (key == "prior") {
    if (value == "mean")
      loss.prior.kind = PriorKind::Mean;
    else if (value == "gaussian")
      loss.prior.kind = PriorKind::Gaussian;
    else
      spec_error(where, "unknown prior '" + value + "' (mean|gaussian)");
  } else if (key == "sigma") {
    loss.prior.sigma = parse_double(where, value);
  } else if (key == "kernel") {
    const long long v = parse_int(where, value);
    if (v < 1 || v % 2 == 0) spec_error(where, "kernel size must be odd and positive");
    loss.prior.kernel_size = static_cast<std::size_t>(v);
  } else if (key == "exclude_center") {
    loss.prior.exclude_center = parse_bool(where, value);
  } else if (key == "dice_weight") {
    loss.dice_weight = parse_double(where, value);
  } else if (key == "epochs") {
    run.train.epochs = static_cast<int>(parse_int(where, value));
  } else if (key == "batch") {
    run.train.batch_size = static_cast<int>(parse_int(where, value));
  } else if (key == "lr1") {
    run.train.lr_first = parse_double(where, value);
  } else if (key == "lr2") {
    run.train.lr_second = parse_double(where, value);
  } else if (key == "seed") {
    run.train.seed = parse_u64(where, value);
    run.synth.seed = run.train.seed;
    seed_set = true;
  } else if (key == "train") {
    run.train.train_count = static_cast<std::size_t>(parse_int(where, value));
  } else if (key == "val") {
    run.train.val_count = static_cast<std::size_t>(parse_int(where, value));
  } else if (key == "test") {
    run.train.test_count = static_cast<std::size_t>(parse_int(where, value));
  } else if (key == "train_fraction") {
    run.train.train_fraction = parse_double(where, value);
  } else if (key == "height") {
    run.synth.height = static_cast<std::size_t>(parse_int(where, value));
  } else if (key == "width") {
    run.synth.width = static_cast<std::size_t>(parse_int(where, value));
  } else if (key == "classes") {
    run.synth.classes = static_cast<int>(parse_int(where, value));
  } else if (key == "noise") {
    run.synth.noise = parse_double(where, value);
  } else if (key == "jitter") {
    run.synth.jitter = static_cast<int>(parse_int(where, value));
  } else {
    spec_error(where, "unknown run key '" + key + "'");
  }
}

}  // namespace detail

// Parses the sectioned key=value format. `origin` names the source in
// diagnostics, which are anchored to 1-based line numbers.
inline ExperimentSpec parse_spec_text(std::istream& is, const std::string& origin) {
  ExperimentSpec spec;
  std::optional<std::uint64_t> default_seed;
  std::vector<bool> run_seed_set;
  int current = -1;  // -1: global section
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const std::string where = origin + ":" + std::to_string(line_no);
    if (const std::size_t hash = line.find('#'); hash != std::string::npos)
      line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']') detail::spec_error(where, "unterminated section header");
      const std::string inner = detail::trim(line.substr(1, line.size() - 2));
      if (inner.rfind("run ", 0) != 0)
        detail::spec_error(where, "expected a [run NAME] section");
      RunSpec run;
      run.name = detail::trim(inner.substr(4));
      if (run.name.empty()) detail::spec_error(where, "run name is empty");
      spec.runs.push_back(std::move(run));
      run_seed_set.push_back(false);
      current = static_cast<int>(spec.runs.size()) - 1;
      continue;
    }

    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) detail::spec_error(where, "expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) detail::spec_error(where, "expected 'key = value'");

    if (current < 0) {
      if (key == "output_dir") {
        spec.output_dir = value;
      } else if (key == "bins") {
        spec.bins = static_cast<int>(detail::parse_int(where, value));
      } else if (key == "seed") {
        default_seed = detail::parse_u64(where, value);
      } else {
        detail::spec_error(where, "unknown global key '" + key + "'");
      }
    } else {
      bool seed_set = run_seed_set[current];
      detail::apply_run_key(spec.runs[current], where, key, value, seed_set);
      run_seed_set[current] = seed_set;
    }
  }

  if (default_seed)
    for (std::size_t i = 0; i < spec.runs.size(); ++i)
      if (!run_seed_set[i]) {
        spec.runs[i].train.seed = *default_seed;
        spec.runs[i].synth.seed = *default_seed;
      }
  spec.validate();
  return spec;
}

// JSON encoding of the same schema:
//   {"output_dir": ..., "bins": ..., "seed": ..., "runs": [{"name": ..., key: value, ...}]}
inline ExperimentSpec parse_spec_json(const std::string& text, const std::string& origin) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw invalid_input(origin + ": " + e.what());
  }
  if (!doc.is_object()) throw invalid_input(origin + ": top level must be an object");

  auto scalar_to_string = [](const nlohmann::json& v) -> std::string {
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
  };

  ExperimentSpec spec;
  std::optional<std::uint64_t> default_seed;
  for (const auto& [key, value] : doc.items()) {
    const std::string where = origin + ": " + key;
    if (key == "runs") continue;
    if (key == "output_dir")
      spec.output_dir = scalar_to_string(value);
    else if (key == "bins")
      spec.bins = static_cast<int>(detail::parse_int(where, scalar_to_string(value)));
    else if (key == "seed")
      default_seed = detail::parse_u64(where, scalar_to_string(value));
    else
      detail::spec_error(where, "unknown global key '" + key + "'");
  }
  if (doc.contains("runs")) {
    if (!doc["runs"].is_array()) throw invalid_input(origin + ": 'runs' must be an array");
    for (const auto& jrun : doc["runs"]) {
      if (!jrun.is_object()) throw invalid_input(origin + ": run entries must be objects");
      RunSpec run;
      bool seed_set = false;
      if (jrun.contains("name")) run.name = scalar_to_string(jrun["name"]);
      for (const auto& [key, value] : jrun.items()) {
        if (key == "name") continue;
        const std::string where = origin + ": runs['" + run.name + "']." + key;
        detail::apply_run_key(run, where, key, scalar_to_string(value), seed_set);
      }
      if (!seed_set && default_seed) {
        run.train.seed = *default_seed;
        run.synth.seed = *default_seed;
      }
      spec.runs.push_back(std::move(run));
    }
  }
  spec.validate();
  return spec;
}

// Dispatches on content: JSON when the first non-space byte is '{'.
inline ExperimentSpec parse_spec_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw invalid_input("cannot open spec file " + path.string());
  std::stringstream buffer;
  buffer << is.rdbuf();
  const std::string text = buffer.str();
  const std::size_t first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{')
    return parse_spec_json(text, path.filename().string());
  std::istringstream stream(text);
  return parse_spec_text(stream, path.filename().string());
}

// ---------------------------------------------------------------------------
// Presets.

namespace detail {

inline RunSpec preset_run(std::string name, LossKind kind) {
  RunSpec run;
  run.name = std::move(name);
  run.train.loss.kind = kind;
  if (kind == LossKind::SVLS) run.train.loss.prior.kind = PriorKind::Gaussian;
  return run;
}

}  // namespace detail

inline const std::vector<std::string>& ablation_preset_names() {
  static const std::vector<std::string> names = {
      "priors", "penalties", "target-space", "sigma-sweep", "lambda-sweep", "data-fraction"};
  return names;
}

// Multi-run specs for the hyperparameter studies; every other setting stays
// at the defaults the main comparison uses.
inline ExperimentSpec ablation_presets(const std::string& name) {
  ExperimentSpec spec;
  spec.output_dir = "segcal-out/" + name;
  if (name == "priors") {
    spec.runs.push_back(detail::preset_run("nacl_mean", LossKind::NACL));
    RunSpec gauss = detail::preset_run("nacl_gaussian", LossKind::NACL);
    gauss.train.loss.prior.kind = PriorKind::Gaussian;
    spec.runs.push_back(std::move(gauss));
  } else if (name == "penalties") {
    RunSpec l1 = detail::preset_run("nacl_l1", LossKind::NACL);
    l1.train.loss.penalty = PenaltyKind::L1;
    RunSpec l2 = detail::preset_run("nacl_l2", LossKind::NACL);
    l2.train.loss.penalty = PenaltyKind::L2;
    spec.runs.push_back(std::move(l1));
    spec.runs.push_back(std::move(l2));
  } else if (name == "target-space") {
    RunSpec lg = detail::preset_run("nacl_logits", LossKind::NACL);
    lg.train.loss.target_space = TargetSpace::Logits;
    RunSpec sm = detail::preset_run("nacl_softmax", LossKind::NACL);
    sm.train.loss.target_space = TargetSpace::Softmax;
    spec.runs.push_back(std::move(lg));
    spec.runs.push_back(std::move(sm));
  } else if (name == "sigma-sweep") {
    for (const double sigma : {1.0, 2.0, 3.0}) {
      const std::string tag = std::to_string(static_cast<int>(sigma));
      RunSpec svls = detail::preset_run("svls_sigma" + tag, LossKind::SVLS);
      svls.train.loss.prior.sigma = sigma;
      spec.runs.push_back(std::move(svls));
      RunSpec nacl = detail::preset_run("nacl_gauss_sigma" + tag, LossKind::NACL);
      nacl.train.loss.prior.kind = PriorKind::Gaussian;
      nacl.train.loss.prior.sigma = sigma;
      spec.runs.push_back(std::move(nacl));
    }
  } else if (name == "lambda-sweep") {
    for (const double lambda : {0.1, 0.2, 0.3}) {
      const std::string tag = "0" + std::to_string(static_cast<int>(lambda * 10.0 + 0.5));
      RunSpec run = detail::preset_run("nacl_lambda" + tag, LossKind::NACL);
      run.train.loss.lambda = lambda;
      spec.runs.push_back(std::move(run));
    }
  } else if (name == "data-fraction") {
    for (const double fraction : {0.25, 0.5, 0.75}) {
      const std::string tag = std::to_string(static_cast<int>(fraction * 100.0 + 0.5));
      RunSpec base = detail::preset_run("ce_dsc_f" + tag, LossKind::CE);
      base.train.loss.dice_weight = 1.0;
      base.train.train_fraction = fraction;
      spec.runs.push_back(std::move(base));
      RunSpec nacl = detail::preset_run("nacl_f" + tag, LossKind::NACL);
      nacl.train.train_fraction = fraction;
      spec.runs.push_back(std::move(nacl));
    }
  } else {
    std::string valid;
    for (const auto& n : ablation_preset_names()) valid += (valid.empty() ? "" : ", ") + n;
    throw invalid_input("unknown ablation preset '" + name + "' (valid: " + valid + ")");
  }
  spec.validate();
  return spec;
}

// All CLI presets: the seven-loss comparison at literature-default
// hyperparameters plus the ablations.
inline ExperimentSpec experiment_preset(const std::string& name) {
  if (name == "paper-defaults") {
    ExperimentSpec spec;
    spec.output_dir = "segcal-out/paper-defaults";
    RunSpec base = detail::preset_run("ce_dsc", LossKind::CE);
    base.train.loss.dice_weight = 1.0;
    spec.runs.push_back(std::move(base));
    spec.runs.push_back(detail::preset_run("fl", LossKind::FL));
    spec.runs.push_back(detail::preset_run("ecp", LossKind::ECP));
    spec.runs.push_back(detail::preset_run("ls", LossKind::LS));
    spec.runs.push_back(detail::preset_run("svls", LossKind::SVLS));
    spec.runs.push_back(detail::preset_run("mbls", LossKind::MbLS));
    spec.runs.push_back(detail::preset_run("nacl", LossKind::NACL));
    spec.validate();
    return spec;
  }
  for (const auto& n : ablation_preset_names())
    if (n == name) return ablation_presets(name);
  std::string valid = "paper-defaults";
  for (const auto& n : ablation_preset_names()) valid += ", " + n;
  throw invalid_input("unknown preset '" + name + "' (valid: " + valid + ")");
}

inline void override_seed(ExperimentSpec& spec, std::uint64_t seed) {
  for (auto& run : spec.runs) {
    run.train.seed = seed;
    run.synth.seed = seed;
  }
}

inline void override_epochs(ExperimentSpec& spec, int epochs) {
  for (auto& run : spec.runs) run.train.epochs = epochs;
}

inline void override_train_fraction(ExperimentSpec& spec, double fraction) {
  for (auto& run : spec.runs) run.train.train_fraction = fraction;
}

// ---------------------------------------------------------------------------
// Execution and reporting.

namespace detail {

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Canonical serialization of a run; hashed into the run directory name so
// sweeps never overwrite each other.
inline std::string canonical_run_config(const RunSpec& run) {
  const auto& t = run.train;
  const auto& l = t.loss;
  std::ostringstream os;
  os << "name=" << run.name << "\nloss=" << loss_kind_name(l.kind)
     << "\nalpha=" << fmt_double(l.alpha) << "\ngamma=" << fmt_double(l.gamma)
     << "\nmargin=" << fmt_double(l.margin) << "\nlambda=" << fmt_double(l.lambda)
     << "\npenalty=" << (l.penalty == PenaltyKind::L1 ? "l1" : "l2")
     << "\nspace=" << (l.target_space == TargetSpace::Logits ? "logits" : "softmax")
     << "\nprior=" << (l.prior.kind == PriorKind::Mean ? "mean" : "gaussian")
     << "\nkernel=" << l.prior.kernel_size << "\nsigma=" << fmt_double(l.prior.sigma)
     << "\nexclude_center=" << (l.prior.exclude_center ? "true" : "false")
     << "\ndice_weight=" << fmt_double(l.dice_weight) << "\nepochs=" << t.epochs
     << "\nbatch=" << t.batch_size << "\nlr1=" << fmt_double(t.lr_first)
     << "\nlr2=" << fmt_double(t.lr_second) << "\nseed=" << t.seed
     << "\ntrain=" << t.train_count << "\nval=" << t.val_count << "\ntest=" << t.test_count
     << "\ntrain_fraction=" << fmt_double(t.train_fraction) << "\nheight=" << run.synth.height
     << "\nwidth=" << run.synth.width << "\nclasses=" << run.synth.classes
     << "\nnoise=" << fmt_double(run.synth.noise) << "\njitter=" << run.synth.jitter << "\n";
  return os.str();
}

inline std::string run_dir_name(const RunSpec& run) {
  const std::string cfg = canonical_run_config(run);
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%08llx",
                static_cast<unsigned long long>(fnv1a64(cfg.data(), cfg.size()) & 0xffffffffull));
  return run.name + "-" + buf;
}

inline nlohmann::json hyperparameters_json(const RunSpec& run) {
  const auto& t = run.train;
  const auto& l = t.loss;
  nlohmann::json j;
  j["loss"] = loss_kind_name(l.kind);
  j["alpha"] = l.alpha;
  j["gamma"] = l.gamma;
  j["margin"] = l.margin;
  j["lambda"] = l.lambda;
  j["penalty"] = l.penalty == PenaltyKind::L1 ? "l1" : "l2";
  j["space"] = l.target_space == TargetSpace::Logits ? "logits" : "softmax";
  j["prior"] = l.prior.kind == PriorKind::Mean ? "mean" : "gaussian";
  j["kernel"] = l.prior.kernel_size;
  j["sigma"] = l.prior.sigma;
  j["exclude_center"] = l.prior.exclude_center;
  j["dice_weight"] = l.dice_weight;
  j["epochs"] = t.epochs;
  j["batch"] = t.batch_size;
  j["lr1"] = t.lr_first;
  j["lr2"] = t.lr_second;
  j["seed"] = t.seed;
  j["train"] = t.train_count;
  j["val"] = t.val_count;
  j["test"] = t.test_count;
  j["train_fraction"] = t.train_fraction;
  j["height"] = run.synth.height;
  j["width"] = run.synth.width;
  j["classes"] = run.synth.classes;
  j["noise"] = run.synth.noise;
  j["jitter"] = run.synth.jitter;
  return j;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw invalid_input("cannot write " + path.string());
  os << text;
}

inline void write_run_outputs(const std::filesystem::path& dir, const RunSpec& run,
                              const RunArtifacts& art) {
  nlohmann::json j;
  j["method"] = run.name;
  j["run"] = run.name;
  j["status"] = "ok";
  j["dataset"] = "synthetic";
  j["seed"] = run.train.seed;
  j["hyperparameters"] = hyperparameters_json(run);
  j["best_epoch"] = art.best_epoch;
  j["best_val_dsc"] = art.best_val_dsc;
  j["dsc"] = {{"per_class", art.test_metrics.dsc_per_class}, {"mean", art.test_metrics.dsc_mean}};
  j["hd"] = {{"per_class", art.test_metrics.hd_per_class},
             {"mean", art.test_metrics.hd_mean},
             {"degenerate_count", art.test_metrics.hd_degenerate_count}};
  j["calibration"] = {
      {"gt_foreground",
       {{"ece", art.test_metrics.ece_gt}, {"cece", art.test_metrics.cece_gt}}},
      {"union_foreground",
       {{"ece", art.test_metrics.ece_union}, {"cece", art.test_metrics.cece_union}}}};
  j["logits"] = {{"test_mean_winner_abs", art.test_mean_winner_abs_logit}};
  j["val"] = {{"dsc_mean", art.val_metrics.dsc_mean},
              {"ece_gt_foreground", art.val_metrics.ece_gt},
              {"cece_gt_foreground", art.val_metrics.cece_gt}};
  write_text_file(dir / "metrics.json", j.dump(2) + "\n");

  {
    std::ofstream os(dir / "reliability_gt_foreground.csv", std::ios::binary);
    write_reliability_csv(os, art.test_reliability_gt);
  }
  {
    std::ofstream os(dir / "reliability_union_foreground.csv", std::ios::binary);
    write_reliability_csv(os, art.test_reliability_union);
  }
  {
    std::ostringstream os;
    os << "epoch,loss,val_mean_dsc,lr\n";
    for (std::size_t e = 0; e < art.curve.size(); ++e)
      os << e << "," << fmt_double(art.curve[e].loss) << ","
         << fmt_double(art.curve[e].val_mean_dsc) << "," << fmt_double(art.curve[e].lr) << "\n";
    write_text_file(dir / "loss_curve.csv", os.str());
  }
  {
    const auto& hist = art.val_winner_logits;
    std::ostringstream os;
    os << "epoch,bin_lo,bin_hi,count\n";
    for (std::size_t e = 0; e < hist.counts.size(); ++e) {
      os << e << ",-inf," << fmt_double(hist.lo) << "," << hist.counts[e][0] << "\n";
      for (int b = 0; b < hist.bins; ++b)
        os << e << "," << fmt_double(hist.edge(b)) << "," << fmt_double(hist.edge(b + 1)) << ","
           << hist.counts[e][b + 1] << "\n";
      os << e << "," << fmt_double(hist.hi) << ",inf," << hist.counts[e][hist.bins + 1] << "\n";
    }
    write_text_file(dir / "logit_hist.csv", os.str());
  }
  save_checkpoint(dir / "model.ckpt", art.params, static_cast<std::uint32_t>(run.synth.height),
                  static_cast<std::uint32_t>(run.synth.width));
}

}  // namespace detail

struct RunOutcome {
  std::string name;
  std::string dir;  // relative to the experiment output dir
  bool ok = false;
  std::string error;
};

struct ExperimentResult {
  std::filesystem::path output_dir;
  std::vector<RunOutcome> outcomes;
  int failed = 0;
};

struct ReportIssue {
  std::string run_dir;
  std::string reason;
};

// Rebuilds the comparison artifacts from whatever run directories exist
// under `dir`. Pure function of the on-disk inputs, so re-running it yields
// identical files. Returns the runs it had to skip.
inline std::vector<ReportIssue> write_report(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::vector<ReportIssue> issues;

  struct Row {
    std::string run;
    std::string status;
    std::map<std::string, double> values;
    double winner_abs = 0.0;
    long long best_epoch = 0;
  };
  std::vector<Row> rows;

  std::vector<fs::path> run_dirs;
  if (fs::exists(dir))
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.is_directory() && fs::exists(entry.path() / "metrics.json"))
        run_dirs.push_back(entry.path());
  std::sort(run_dirs.begin(), run_dirs.end());

  for (const auto& rd : run_dirs) {
    try {
      std::ifstream is(rd / "metrics.json");
      const nlohmann::json j = nlohmann::json::parse(is);
      Row row;
      row.run = j.at("run").get<std::string>();
      row.status = j.at("status").get<std::string>();
      if (row.status == "ok") {
        row.values["dsc_mean"] = j.at("dsc").at("mean").get<double>();
        row.values["hd_mean"] = j.at("hd").at("mean").get<double>();
        row.values["ece_gt_foreground"] = j.at("calibration").at("gt_foreground").at("ece");
        row.values["cece_gt_foreground"] = j.at("calibration").at("gt_foreground").at("cece");
        row.values["ece_union_foreground"] = j.at("calibration").at("union_foreground").at("ece");
        row.values["cece_union_foreground"] =
            j.at("calibration").at("union_foreground").at("cece");
        row.winner_abs = j.at("logits").at("test_mean_winner_abs").get<double>();
        row.best_epoch = j.at("best_epoch").get<long long>();
      }
      rows.push_back(std::move(row));
    } catch (const std::exception& e) {
      issues.push_back({rd.filename().string(), e.what()});
    }
  }

  static const std::vector<std::string> kMetrics = {
      "dsc_mean",           "hd_mean",
      "ece_gt_foreground",  "cece_gt_foreground",
      "ece_union_foreground", "cece_union_foreground"};

  {
    std::ostringstream os;
    os << "run,status,dsc_mean,hd_mean,ece_gt_foreground,cece_gt_foreground,"
          "ece_union_foreground,cece_union_foreground,mean_winner_abs_logit,best_epoch\n";
    for (const auto& row : rows) {
      os << row.run << "," << row.status;
      if (row.status == "ok") {
        for (const auto& m : kMetrics) os << "," << detail::fmt_double(row.values.at(m));
        os << "," << detail::fmt_double(row.winner_abs) << "," << row.best_epoch;
      } else {
        os << ",,,,,,,,";
      }
      os << "\n";
    }
    detail::write_text_file(dir / "comparison.csv", os.str());
  }

  {
    std::ostringstream os;
    os << "run,metric,value\n";
    for (const auto& row : rows) {
      if (row.status != "ok") continue;
      for (const auto& m : kMetrics)
        os << row.run << "," << m << "," << detail::fmt_double(row.values.at(m)) << "\n";
      os << row.run << ",mean_winner_abs_logit," << detail::fmt_double(row.winner_abs) << "\n";
    }
    detail::write_text_file(dir / "radar.csv", os.str());
  }

  std::vector<MethodMetrics> records;
  for (const auto& row : rows)
    if (row.status == "ok") records.push_back({row.run, row.values});

  std::ostringstream sum_os, mean_os;
  sum_os << "run";
  for (const auto& m : kMetrics) sum_os << ",rank_" << m;
  sum_os << ",rank_sum\n";
  mean_os << "run,mean_rank\n";
  if (!records.empty()) {
    const std::map<std::string, bool> directions = {
        {"dsc_mean", true},           {"hd_mean", false},
        {"ece_gt_foreground", false}, {"cece_gt_foreground", false},
        {"ece_union_foreground", false}, {"cece_union_foreground", false}};
    const RankTable table = sum_rank(records, directions);
    // sum_rank orders its metric list alphabetically; remap to kMetrics order.
    for (const auto& method : table.methods) {
      sum_os << method;
      for (const auto& m : kMetrics) {
        const auto it = std::find(table.metrics.begin(), table.metrics.end(), m);
        const std::size_t idx = static_cast<std::size_t>(it - table.metrics.begin());
        sum_os << "," << detail::fmt_double(table.per_metric.at(method)[idx]);
      }
      sum_os << "," << detail::fmt_double(table.rank_sum.at(method)) << "\n";
      mean_os << method << "," << detail::fmt_double(table.mean_rank.at(method)) << "\n";
    }
  }
  detail::write_text_file(dir / "ranks_sum.csv", sum_os.str());
  detail::write_text_file(dir / "ranks_mean.csv", mean_os.str());

  return issues;
}

// Executes every run in the spec (optionally with a few worker threads; each
// run is internally sequential and seeded, and writes only to its own
// directory), then writes the comparison report. A diverged run is recorded
// and the remaining runs continue.
inline ExperimentResult run_experiment(const ExperimentSpec& spec, int jobs = 1,
                                       std::ostream* log = nullptr) {
  namespace fs = std::filesystem;
  spec.validate();
  if (jobs < 1) jobs = 1;

  const fs::path out_dir = spec.output_dir;
  fs::create_directories(out_dir);

  ExperimentResult result;
  result.output_dir = out_dir;
  result.outcomes.resize(spec.runs.size());

  std::mutex log_mutex;
  auto execute = [&](std::size_t i) {
    const RunSpec& run = spec.runs[i];
    RunOutcome& outcome = result.outcomes[i];
    outcome.name = run.name;
    outcome.dir = detail::run_dir_name(run);
    const fs::path rd = out_dir / outcome.dir;
    fs::create_directories(rd);
    if (log) {
      std::lock_guard<std::mutex> lock(log_mutex);
      *log << "[run] " << run.name << " -> " << rd.string() << "\n" << std::flush;
    }
    const auto record_failure = [&](const char* status, const std::string& what) {
      outcome.error = what;
      nlohmann::json j;
      j["method"] = run.name;
      j["run"] = run.name;
      j["status"] = status;
      j["error"] = outcome.error;
      j["hyperparameters"] = detail::hyperparameters_json(run);
      detail::write_text_file(rd / "metrics.json", j.dump(2) + "\n");
    };
    try {
      const RunArtifacts art = train(run.train, run.synth, spec.bins);
      detail::write_run_outputs(rd, run, art);
      outcome.ok = true;
    } catch (const divergence_error& e) {
      record_failure("diverged", e.what());
    } catch (const std::exception& e) {
      record_failure("failed", e.what());
    }
    if (log) {
      std::lock_guard<std::mutex> lock(log_mutex);
      *log << "[" << (outcome.ok ? "done" : "diverged") << "] " << run.name << "\n" << std::flush;
    }
  };

  std::size_t next = 0;
  while (next < spec.runs.size()) {
    const std::size_t batch = std::min<std::size_t>(jobs, spec.runs.size() - next);
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < batch; ++t) pool.emplace_back(execute, next + t);
    for (auto& th : pool) th.join();
    next += batch;
  }

  for (const auto& outcome : result.outcomes)
    if (!outcome.ok) ++result.failed;
  write_report(out_dir);
  return result;
}

}  // namespace segcal
