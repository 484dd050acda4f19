#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dfd/bench/recipes.hpp"
#include "dfd/core/error.hpp"
#include "dfd/mining/mask.hpp"
#include "dfd/mining/segments.hpp"
#include "dfd/nn/architecture.hpp"
#include "dfd/signal/temporal_noise.hpp"
#include "dfd/train/trainer.hpp"

namespace dfd::app {

using nlohmann::json;

// Every key a config file or override may set, with its default value.
inline json default_config() {
  const train::OptimizerConfig opt;
  const train::StoppingConfig stop;
  const signal::TemporalNoiseConfig tn;
  const bench::ExperimentConfig ex = bench::default_experiment();
  const bench::CorpusConfig& cc = ex.corpus;
  return json{
      {"seed", 0},
      {"model", {{"variant", "CST"}, {"width_scale", ex.width_scale}, {"input_size", cc.scene.crop_size}}},
      {"optimizer",
       {{"initial_lr", ex.train.optimizer.initial_lr},
        {"momentum", opt.momentum},
        {"weight_decay", opt.weight_decay},
        {"decay_per_epoch", opt.decay_per_epoch},
        {"decay_threshold", opt.decay_threshold},
        {"threshold_lr_scale", opt.threshold_lr_scale},
        {"threshold_min", opt.threshold_min},
        {"threshold_max", opt.threshold_max}}},
      {"stopping",
       {{"policy", "A"},
        {"max_epochs", ex.train.stopping.max_epochs},
        {"accuracy_bar", stop.accuracy_bar},
        {"good_epochs", stop.good_epochs},
        {"patience", stop.patience}}},
      {"sampling", {{"train_rate", ex.train.plan.train_rate}, {"val_rate", ex.train.plan.val_rate}}},
      {"training",
       {{"batch_size", ex.train.batch_size},
        {"eval_batch_size", ex.train.eval_batch_size},
        {"bn_recalibration_batches", ex.train.bn_recalibration_batches}}},
      {"temporal",
       {{"initial_threshold", tn.initial_threshold},
        {"difference_thresholded", tn.difference_thresholded},
        {"lowpass_sigma", tn.lowpass_sigma},
        {"lowpass_size", tn.lowpass_size}}},
      {"mining",
       {{"budget_lo", mining::FrameBudget{}.lo},
        {"budget_hi", mining::FrameBudget{}.hi},
        {"crop_margin", mining::MaskCropConfig{}.margin},
        {"crop_size", mining::MaskCropConfig{}.output_size},
        {"scene_cut_threshold", 0.5}}},
      {"preprocess",
       {{"target_side", 258.0},
        {"crf", 23},
        {"lossless", false},
        {"strict_encoder", false},
        {"encoder", ""},
        {"box_margin", 1.3},
        {"fps", 25.0},
        {"smoothing_window", 11},
        {"output_size", 299}}},
      {"corpus",
       {{"fake", bench::fake_kind_name(cc.recipe.kind)},
        {"strength", nullptr},
        {"subjects", cc.n_subjects},
        {"sequences", cc.n_sequences},
        {"val_subjects", cc.val_subjects},
        {"test_subjects", cc.test_subjects},
        {"frame_size", cc.scene.frame_size},
        {"frames", cc.scene.frames},
        {"noise_sigma", cc.scene.noise_sigma},
        {"real_delta", cc.real_delta}}},
      {"bench", {{"seeds", ex.seeds}}},
  };
}

inline bool same_kind(const json& a, const json& b) {
  if (a.is_null() || b.is_null()) return true;
  if (a.is_number() && b.is_number()) return !(a.is_number_integer() && b.is_number_float());
  return a.type() == b.type();
}

/**
 * Recursively copies `patch` into `base`. Keys that base does not have, and
 * values of a different kind, are rejected with their dotted path.
 */
inline void merge_config(json& base, const json& patch, const std::string& prefix = "") {
  require(patch.is_object(), "config: expected an object at '" + (prefix.empty() ? std::string("<root>") : prefix) + "'");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) throw ContractViolation("config: unknown key '" + key + "'");
    json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_config(slot, it.value(), key);
      continue;
    }
    if (!same_kind(slot, it.value()))
      throw ContractViolation("config: key '" + key + "' expects " + std::string(slot.type_name()) + ", got " +
                              it.value().type_name());
    slot = it.value();
  }
}

inline json load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw IoError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
}

// "a.b.c=value"; the value is read as JSON when it parses, as a string otherwise.
inline void apply_override(json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos && eq > 0, "override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json patch = value;
  std::string rest = key;
  std::vector<std::string> parts;
  for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1)) parts.push_back(rest.substr(0, pos));
  parts.push_back(rest);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
  merge_config(cfg, patch);
}

inline void write_config(const std::filesystem::path& dir, const json& cfg) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "config.json");
  if (!out) throw IoError("cannot write " + (dir / "config.json").string());
  out << cfg.dump(2) << "\n";
}

inline signal::TemporalNoiseConfig temporal_config(const json& c) {
  signal::TemporalNoiseConfig tn;
  const json& t = c.at("temporal");
  tn.initial_threshold = t.at("initial_threshold");
  tn.difference_thresholded = t.at("difference_thresholded");
  tn.lowpass_sigma = t.at("lowpass_sigma");
  tn.lowpass_size = t.at("lowpass_size");
  return tn;
}

inline nn::DetectorSpec model_spec(const json& c) {
  const json& m = c.at("model");
  return nn::make_spec(m.at("variant").get<std::string>(), m.at("width_scale").get<double>(),
                       m.at("input_size").get<std::size_t>());
}

inline train::TrainConfig train_config(const json& c) {
  train::TrainConfig t;
  const json& o = c.at("optimizer");
  t.optimizer.initial_lr = o.at("initial_lr");
  t.optimizer.momentum = o.at("momentum");
  t.optimizer.weight_decay = o.at("weight_decay");
  t.optimizer.decay_per_epoch = o.at("decay_per_epoch");
  t.optimizer.decay_threshold = o.at("decay_threshold");
  t.optimizer.threshold_lr_scale = o.at("threshold_lr_scale");
  t.optimizer.threshold_min = o.at("threshold_min");
  t.optimizer.threshold_max = o.at("threshold_max");
  const json& s = c.at("stopping");
  const std::string policy = s.at("policy");
  require(policy == "A" || policy == "B", "config: stopping.policy must be \"A\" or \"B\"");
  t.stopping.kind = policy == "A" ? train::StopPolicyKind::kA : train::StopPolicyKind::kB;
  t.stopping.max_epochs = s.at("max_epochs");
  t.stopping.accuracy_bar = s.at("accuracy_bar");
  t.stopping.good_epochs = s.at("good_epochs");
  t.stopping.patience = s.at("patience");
  t.plan.train_rate = c.at("sampling").at("train_rate");
  t.plan.val_rate = c.at("sampling").at("val_rate");
  const json& tr = c.at("training");
  t.batch_size = tr.at("batch_size");
  t.eval_batch_size = tr.at("eval_batch_size");
  t.bn_recalibration_batches = tr.at("bn_recalibration_batches");
  t.seed = c.at("seed");
  require(t.batch_size > 0 && t.eval_batch_size > 0, "config: batch sizes must be positive");
  return t;
}

inline mining::FrameBudget frame_budget(const json& c) {
  return {c.at("mining").at("budget_lo").get<std::size_t>(), c.at("mining").at("budget_hi").get<std::size_t>()};
}

inline bench::ExperimentConfig experiment_config(const json& c) {
  bench::ExperimentConfig e = bench::default_experiment();
  e.train = train_config(c);
  e.width_scale = c.at("model").at("width_scale");
  const json& k = c.at("corpus");
  auto& cc = e.corpus;
  cc.recipe = bench::FakeRecipe::defaults(bench::parse_fake_kind(k.at("fake")));
  if (!k.at("strength").is_null()) cc.recipe.strength = k.at("strength");
  cc.n_subjects = k.at("subjects");
  cc.n_sequences = k.at("sequences");
  cc.val_subjects = k.at("val_subjects");
  cc.test_subjects = k.at("test_subjects");
  cc.scene.frame_size = k.at("frame_size");
  cc.scene.frames = k.at("frames");
  cc.scene.noise_sigma = k.at("noise_sigma");
  cc.scene.crop_size = c.at("model").at("input_size");
  cc.scene.seed = c.at("seed").get<std::uint64_t>() + 1;
  cc.real_delta = k.at("real_delta");
  e.seeds = c.at("bench").at("seeds").get<std::vector<std::uint64_t>>();
  require(!e.seeds.empty(), "config: bench.seeds must not be empty");
  return e;
}

}  // namespace dfd::app
