#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dfd/bench/synthetic.hpp"
#include "dfd/core/error.hpp"
#include "dfd/core/log.hpp"
#include "dfd/data/compress.hpp"
#include "dfd/nn/architecture.hpp"
#include "dfd/train/sample_store.hpp"
#include "dfd/train/trainer.hpp"

namespace dfd::bench {

struct ExperimentConfig {
  CorpusConfig corpus{};
  double width_scale = 1.0 / 8;
  train::TrainConfig train{};
  std::vector<std::uint64_t> seeds{0};
};

inline ExperimentConfig default_experiment() {
  ExperimentConfig e;
  e.train.stopping.max_epochs = 30;
  e.train.optimizer.initial_lr = 0.01;
  e.train.plan.train_rate = 0.25;
  e.train.batch_size = 16;
  return e;
}

struct ExperimentResult {
  std::string variant;
  std::string fake;
  std::string quality = "lossless";
  std::uint64_t seed = 0;
  double test_accuracy = 0;
  double seconds = 0;
  train::RunRecord run;
};

inline nlohmann::json to_json(const ExperimentResult& r) {
  return {{"variant", r.variant},         {"fake", r.fake},         {"quality", r.quality},
          {"seed", r.seed},               {"test_accuracy", r.test_accuracy}, {"seconds", r.seconds},
          {"best_epoch", r.run.best_epoch}, {"epochs", r.run.epochs.size()}, {"stop_reason", r.run.stop_reason}};
}

template <typename S = float>
train::SampleStore<S> make_store(const Corpus& corpus) {
  train::SampleStore<S> store;
  for (const auto& c : corpus.clips) store.add(c.key, c.crops);
  return store;
}

/**
 * Trains one variant on the corpus with the given seed and reports the
 * weighted accuracy on the held-out subjects.
 */
template <typename S = float>
ExperimentResult run_experiment(const Corpus& corpus, const train::SampleStore<S>& store, const std::string& variant,
                                const ExperimentConfig& cfg, std::uint64_t seed,
                                const std::optional<std::filesystem::path>& checkpoint_dir = std::nullopt) {
  const auto t0 = std::chrono::steady_clock::now();
  nn::Detector<S> model(nn::make_spec(variant, cfg.width_scale, corpus.config.scene.crop_size), seed);
  train::TrainConfig tc = cfg.train;
  tc.seed = seed;
  ExperimentResult r;
  r.variant = variant;
  r.fake = fake_kind_name(corpus.config.recipe.kind);
  r.seed = seed;
  r.run = train::run_training(model, store, corpus.splits.train, corpus.splits.val, tc, checkpoint_dir);
  r.test_accuracy = train::weighted_test_accuracy(model, store, corpus.splits.test, tc.eval_batch_size);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  log().info("{} on {} seed {}: test accuracy {:.4f} after {} epochs ({:.1f}s)", variant, r.fake, seed,
             r.test_accuracy, r.run.epochs.size(), r.seconds);
  return r;
}

inline double mean_accuracy(const std::vector<ExperimentResult>& rs, const std::string& variant) {
  double sum = 0;
  std::size_t n = 0;
  for (const auto& r : rs)
    if (r.variant == variant) sum += r.test_accuracy, ++n;
  return n ? sum / static_cast<double>(n) : std::nan("");
}

struct RecipeOutput {
  std::string name;
  std::vector<ExperimentResult> results;
  nlohmann::json table;
};

using RecipeFn = std::function<RecipeOutput(const ExperimentConfig&)>;

inline Corpus corpus_for(const ExperimentConfig& cfg, FakeKind kind) {
  CorpusConfig c = cfg.corpus;
  if (c.recipe.kind != kind) c.recipe = FakeRecipe::defaults(kind);
  return generate_corpus(c);
}

// Every variant on each fake kind.
inline RecipeOutput recipe_main(const ExperimentConfig& cfg) {
  RecipeOutput out{"main", {}, nlohmann::json::object()};
  for (FakeKind kind : {FakeKind::kSpatialBlur, FakeKind::kColorShift, FakeKind::kTemporalFlicker}) {
    const Corpus corpus = corpus_for(cfg, kind);
    const auto store = make_store(corpus);
    for (const auto& v : nn::variant_names())
      for (auto seed : cfg.seeds) out.results.push_back(run_experiment(corpus, store, v, cfg, seed));
    for (const auto& v : nn::variant_names()) {
      std::vector<ExperimentResult> sub;
      for (const auto& r : out.results)
        if (r.fake == fake_kind_name(kind)) sub.push_back(r);
      out.table[fake_kind_name(kind)][v] = mean_accuracy(sub, v);
    }
  }
  return out;
}

// CST against CS_noT on temporal flicker.
inline RecipeOutput recipe_ablation(const ExperimentConfig& cfg) {
  RecipeOutput out{"ablation", {}, nlohmann::json::object()};
  const Corpus corpus = corpus_for(cfg, FakeKind::kTemporalFlicker);
  const auto store = make_store(corpus);
  for (const std::string v : {"CST", "CS_noT"})
    for (auto seed : cfg.seeds) out.results.push_back(run_experiment(corpus, store, v, cfg, seed));
  out.table["CST"] = mean_accuracy(out.results, "CST");
  out.table["CS_noT"] = mean_accuracy(out.results, "CS_noT");
  out.table["gap"] = out.table["CST"].get<double>() - out.table["CS_noT"].get<double>();
  return out;
}

// S trained and tested at each quality level.
inline RecipeOutput recipe_compression(const ExperimentConfig& cfg) {
  RecipeOutput out{"compression", {}, nlohmann::json::object()};
  auto encoder = data::make_encoder(false);
  for (const data::Quality q : {data::Quality{true, 0}, data::Quality{false, 23}, data::Quality{false, 40}}) {
    CorpusConfig cc = cfg.corpus;
    cc.recipe = FakeRecipe::defaults(FakeKind::kSpatialBlur);
    cc.quality = q;
    const Corpus corpus = generate_corpus(cc, encoder.get());
    const auto store = make_store(corpus);
    for (auto seed : cfg.seeds) {
      auto r = run_experiment(corpus, store, "S", cfg, seed);
      r.quality = q.str();
      out.results.push_back(r);
    }
    out.table[q.str()] = mean_accuracy(std::vector<ExperimentResult>(out.results.end() - static_cast<std::ptrdiff_t>(cfg.seeds.size()), out.results.end()), "S");
  }
  return out;
}

// Subject identities of train, validation and test are disjoint; S is tested
// on unseen subjects.
inline RecipeOutput recipe_identity_holdout(const ExperimentConfig& cfg) {
  RecipeOutput out{"identity_holdout", {}, nlohmann::json::object()};
  const Corpus corpus = corpus_for(cfg, cfg.corpus.recipe.kind);
  const auto tr = subjects_of(corpus.splits.train), va = subjects_of(corpus.splits.val),
             te = subjects_of(corpus.splits.test);
  std::size_t overlap = 0;
  for (const auto& s : te) overlap += tr.count(s) + va.count(s);
  for (const auto& s : va) overlap += tr.count(s);
  out.table["train_subjects"] = tr;
  out.table["val_subjects"] = va;
  out.table["test_subjects"] = te;
  out.table["overlap"] = overlap;
  require(overlap == 0, "identity_holdout: subject identities leak across splits");
  const auto store = make_store(corpus);
  for (auto seed : cfg.seeds) out.results.push_back(run_experiment(corpus, store, "S", cfg, seed));
  out.table["S"] = mean_accuracy(out.results, "S");
  return out;
}

inline const std::map<std::string, RecipeFn>& recipes() {
  static const std::map<std::string, RecipeFn> r{{"main", recipe_main},
                                                 {"ablation", recipe_ablation},
                                                 {"compression", recipe_compression},
                                                 {"identity_holdout", recipe_identity_holdout}};
  return r;
}

inline std::string recipe_list() {
  std::string s;
  for (const auto& [k, _] : recipes()) s += (s.empty() ? "" : ", ") + k;
  return s;
}

inline RecipeOutput run_recipe(const std::string& name, const ExperimentConfig& cfg) {
  auto it = recipes().find(name);
  if (it == recipes().end()) throw ContractViolation("unknown recipe '" + name + "'; available: " + recipe_list());
  return it->second(cfg);
}

}  // namespace dfd::bench
