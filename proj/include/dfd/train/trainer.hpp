#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "dfd/core/error.hpp"
#include "dfd/core/log.hpp"
#include "dfd/data/manifest.hpp"
#include "dfd/nn/architecture.hpp"
#include "dfd/nn/serialize.hpp"
#include "dfd/train/sample_store.hpp"

namespace dfd::train {

struct OptimizerConfig {
  double initial_lr = 0.03;
  double momentum = 0.9;
  double weight_decay = 1e-5;
  double decay_per_epoch = std::pow(0.97, 0.1);
  bool decay_threshold = false;  // include the temporal threshold in weight decay
  // The threshold is shared by every pixel of the batch, so its gradient is a
  // large sum against a value of order 1/40: it gets a scaled learning rate
  // and is projected back into [threshold_min, threshold_max] after each step.
  double threshold_lr_scale = 0.01;
  double threshold_min = 1e-4;
  double threshold_max = 0.5;

  // Learning rate for 0-based epoch index e.
  double lr(std::size_t e) const { return initial_lr * std::pow(decay_per_epoch, static_cast<double>(e)); }
};

template <typename S>
struct SgdState {
  std::vector<std::vector<S>> velocity;
};

/**
 * v <- momentum * v + g + wd * p ; p <- p - lr * v, for every parameter.
 * Returns false (and leaves everything untouched) if any gradient is not
 * finite.
 */
template <typename S>
bool sgd_step(const std::vector<nn::NamedParameter<S>>& params, SgdState<S>& state, const OptimizerConfig& cfg,
              double lr) {
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (S g : p.tensor.grad())
      if (!std::isfinite(static_cast<double>(g))) return false;
  }
  if (state.velocity.size() != params.size()) {
    state.velocity.clear();
    for (const auto& p : params) state.velocity.emplace_back(p.tensor.numel(), S(0));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    require(state.velocity[i].size() == p.tensor.numel(), "sgd_step: velocity shape mismatch for " + p.name);
    const auto values = p.tensor.has_grad() ? p.tensor.grad() : std::span<S>();
    const bool is_threshold = p.name == "temporal.threshold";
    const bool decay = p.weight_decay || (is_threshold && cfg.decay_threshold);
    const double step = is_threshold ? lr * cfg.threshold_lr_scale : lr;
    Tensor<S> t = p.tensor;
    auto pv = t.values();
    auto& v = state.velocity[i];
    for (std::size_t k = 0; k < v.size(); ++k) {
      const double g = values.empty() ? 0.0 : static_cast<double>(values[k]);
      const double wd = decay ? cfg.weight_decay * static_cast<double>(pv[k]) : 0.0;
      v[k] = static_cast<S>(cfg.momentum * static_cast<double>(v[k]) + g + wd);
      pv[k] = static_cast<S>(static_cast<double>(pv[k]) - step * static_cast<double>(v[k]));
      if (is_threshold)
        pv[k] = static_cast<S>(std::clamp(static_cast<double>(pv[k]), cfg.threshold_min, cfg.threshold_max));
    }
  }
  return true;
}

enum class StopPolicyKind { kA, kB };

struct StoppingConfig {
  StopPolicyKind kind = StopPolicyKind::kA;
  std::size_t max_epochs = 100;
  double accuracy_bar = 0.99;   // A: epochs strictly above this count
  std::size_t good_epochs = 5;  // A
  std::size_t patience = 10;    // B
};

// Epochs are numbered from 1.
class StoppingPolicy {
 public:
  explicit StoppingPolicy(StoppingConfig cfg = {}) : cfg_(cfg) {}

  // Records one epoch; returns true when training should stop after it.
  bool update(std::size_t epoch, double val_accuracy) {
    if (!best_epoch_ || val_accuracy > best_) {
      best_ = val_accuracy;
      best_epoch_ = epoch;
    }
    if (val_accuracy > cfg_.accuracy_bar) ++good_;
    if (epoch >= cfg_.max_epochs) return stop("max_epochs");
    if (cfg_.kind == StopPolicyKind::kA && good_ >= cfg_.good_epochs) return stop("accuracy_bar");
    if (cfg_.kind == StopPolicyKind::kB && epoch - *best_epoch_ >= cfg_.patience) return stop("patience");
    return false;
  }

  std::size_t best_epoch() const { return best_epoch_.value_or(0); }
  double best_accuracy() const { return best_; }
  const std::string& reason() const { return reason_; }

 private:
  bool stop(const char* r) {
    reason_ = r;
    return true;
  }
  StoppingConfig cfg_;
  double best_ = 0;
  std::optional<std::size_t> best_epoch_;
  std::size_t good_ = 0;
  std::string reason_;
};

struct TrainConfig {
  OptimizerConfig optimizer{};
  StoppingConfig stopping{};
  data::SamplingPlan plan{};
  std::size_t batch_size = 24;
  std::size_t eval_batch_size = 32;
  std::uint64_t seed = 0;
  // Batches of training frames used to re-estimate BN statistics before each
  // validation; 0 keeps the running averages from the training steps.
  std::size_t bn_recalibration_batches = 8;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0;
  double val_accuracy = 0;
  double lr = 0;
  std::optional<double> threshold;
  std::string checkpoint;
};

struct RunRecord {
  std::string variant;
  std::uint64_t seed = 0;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0;
  std::string stop_reason;
  bool diverged = false;
  std::string best_checkpoint;
};

inline nlohmann::json to_json(const EpochRecord& e) {
  nlohmann::json j{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_accuracy", e.val_accuracy}, {"lr", e.lr}};
  if (e.threshold) j["threshold"] = *e.threshold;
  if (!e.checkpoint.empty()) j["checkpoint"] = e.checkpoint;
  return j;
}

inline nlohmann::json summary_json(const RunRecord& r) {
  return {{"summary", true},          {"variant", r.variant},       {"seed", r.seed},
          {"best_epoch", r.best_epoch}, {"best_val_accuracy", r.best_val_accuracy},
          {"stop_reason", r.stop_reason}, {"diverged", r.diverged},  {"best_checkpoint", r.best_checkpoint}};
}

// One JSON object per line: epochs first, then a summary line.
inline void write_run_record(const std::filesystem::path& path, const RunRecord& r) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write run record " + path.string());
  for (const auto& e : r.epochs) out << to_json(e).dump() << "\n";
  out << summary_json(r).dump() << "\n";
}

inline int predicted_class(double real_score, double fake_score) { return fake_score > real_score ? 1 : 0; }

// Parameter/buffer snapshot used to restore the best-validation model.
template <typename S>
struct Snapshot {
  std::vector<std::vector<S>> values;

  static Snapshot take(const nn::Detector<S>& m) {
    Snapshot s;
    for (const auto& p : m.parameters()) s.values.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
    for (const auto& b : m.buffers()) s.values.push_back(*b.values);
    return s;
  }

  void restore(nn::Detector<S>& m) const {
    std::size_t i = 0;
    for (auto& p : m.parameters()) {
      Tensor<S> t = p.tensor;
      std::copy(values[i].begin(), values[i].end(), t.values().begin());
      ++i;
    }
    for (auto& b : m.buffers()) *b.values = values[i++];
  }
};

// Predicted classes for `refs`, evaluated in batches (eval-mode BN).
template <typename S>
std::vector<int> predict(const nn::Detector<S>& model, const SampleStore<S>& store, const data::DatasetManifest& m,
                         std::span<const data::FrameRef> refs, std::size_t batch_size) {
  const bool temporal = nn::uses_input(model.spec(), nn::InputKind::kTemporal);
  std::vector<int> out;
  out.reserve(refs.size());
  for (std::size_t i = 0; i < refs.size(); i += batch_size) {
    auto chunk = refs.subspan(i, std::min(batch_size, refs.size() - i));
    auto in = store.batch(m, chunk, temporal);
    Tape<S> tape;
    auto scores = model.forward(tape, in, nn::Mode::kEval);
    for (std::size_t k = 0; k < chunk.size(); ++k)
      out.push_back(predicted_class(scores.values()[2 * k], scores.values()[2 * k + 1]));
  }
  return out;
}

// Plain accuracy over a sample; labels from the manifest.
template <typename S>
double sample_accuracy(const nn::Detector<S>& model, const SampleStore<S>& store, const data::DatasetManifest& m,
                       std::span<const data::FrameRef> refs, std::size_t batch_size) {
  const auto pred = predict(model, store, m, refs, batch_size);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) ok += pred[i] == m.label(refs[i]);
  return refs.empty() ? 0.0 : static_cast<double>(ok) / static_cast<double>(refs.size());
}

// sum w_i [pred_i == label_i] / sum w_i over the given predictions.
inline double weighted_accuracy(const data::DatasetManifest& m, std::span<const data::FrameRef> refs,
                                std::span<const int> predictions) {
  require(refs.size() == predictions.size(), "weighted_accuracy: prediction count mismatch");
  require(!refs.empty(), "weighted_accuracy: no frames");
  double hit = 0, total = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const double w = data::frame_weight(m, refs[i]);
    total += w;
    if (predictions[i] == m.label(refs[i])) hit += w;
  }
  return hit / total;
}

// All frames of the manifest in a fixed shuffled order, so that every
// evaluation batch mixes classes the way training batches do.
inline std::vector<data::FrameRef> all_frames_shuffled(const data::DatasetManifest& m, std::uint64_t seed = 0) {
  std::vector<data::FrameRef> refs;
  m.for_each_frame([&](const data::FrameRef& r) { refs.push_back(r); });
  std::shuffle(refs.begin(), refs.end(), std::mt19937_64(seed));
  return refs;
}

template <typename S>
double weighted_test_accuracy(const nn::Detector<S>& model, const SampleStore<S>& store,
                              const data::DatasetManifest& test, std::size_t batch_size = 32) {
  test.validate();
  const auto refs = all_frames_shuffled(test);
  const auto pred = predict(model, store, test, refs, batch_size);
  return weighted_accuracy(test, refs, pred);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

/**
 * Replaces every BN running mean/variance with the plain average of the batch
 * statistics over `refs` under the current weights. The batch values are read
 * back from the exponential update the layers apply in training mode.
 */
template <typename S>
void recalibrate_batch_norm(const nn::Detector<S>& model, const SampleStore<S>& store, const data::DatasetManifest& m,
                            std::span<const data::FrameRef> refs, std::size_t batch_size) {
  if (refs.empty()) return;
  const double momentum = static_cast<double>(ops::BatchNormState<S>(1).momentum);
  const bool temporal = nn::uses_input(model.spec(), nn::InputKind::kTemporal);
  const auto bufs = model.buffers();
  std::vector<std::vector<double>> sum;
  for (const auto& b : bufs) sum.emplace_back(b.values->size(), 0.0);
  std::size_t batches = 0;
  for (std::size_t i = 0; i < refs.size(); i += batch_size) {
    auto chunk = refs.subspan(i, std::min(batch_size, refs.size() - i));
    if (chunk.size() < 2) break;
    std::vector<std::vector<S>> before;
    for (const auto& b : bufs) before.push_back(*b.values);
    Tape<S> tape;
    model.forward(tape, store.batch(m, chunk, temporal), nn::Mode::kTrain);
    for (std::size_t k = 0; k < bufs.size(); ++k)
      for (std::size_t j = 0; j < sum[k].size(); ++j)
        sum[k][j] += (static_cast<double>((*bufs[k].values)[j]) - (1 - momentum) * static_cast<double>(before[k][j])) / momentum;
    ++batches;
  }
  if (batches == 0) return;
  for (std::size_t k = 0; k < bufs.size(); ++k)
    for (std::size_t j = 0; j < sum[k].size(); ++j)
      (*bufs[k].values)[j] = static_cast<S>(sum[k][j] / static_cast<double>(batches));
}

/**
 * Trains until the stopping policy fires, then restores the parameters of the
 * epoch with the best validation accuracy (earliest on ties). If
 * checkpoint_dir is set, every new best is also written there.
 */
template <typename S>
RunRecord run_training(nn::Detector<S>& model, const SampleStore<S>& store, const data::DatasetManifest& train,
                       const data::DatasetManifest& val, const TrainConfig& cfg,
                       const std::optional<std::filesystem::path>& checkpoint_dir = std::nullopt) {
  train.validate();
  val.validate();
  RunRecord rec;
  rec.variant = model.spec().variant;
  rec.seed = cfg.seed;
  const bool temporal = nn::uses_input(model.spec(), nn::InputKind::kTemporal);
  const auto params = model.parameters();
  SgdState<S> sgd;
  StoppingPolicy policy(cfg.stopping);
  Snapshot<S> best = Snapshot<S>::take(model);
  if (checkpoint_dir) std::filesystem::create_directories(*checkpoint_dir);

  for (std::size_t epoch = 1;; ++epoch) {
    EpochRecord er;
    er.epoch = epoch;
    er.lr = cfg.optimizer.lr(epoch - 1);
    auto sample = data::sample_epoch(train, cfg.plan.train_rate, mix_seed(cfg.seed, 1, epoch));
    require(!sample.empty(), "run_training: empty epoch sample");
    double loss_sum = 0;
    std::size_t batches = 0;
    for (std::size_t i = 0; i < sample.size(); i += cfg.batch_size) {
      std::span<const data::FrameRef> chunk(sample.data() + i, std::min(cfg.batch_size, sample.size() - i));
      std::vector<int> labels;
      auto in = store.batch(train, chunk, temporal, &labels);
      Tape<S> tape;
      for (const auto& p : params) p.tensor.zero_grad();
      auto scores = model.forward(tape, in, nn::Mode::kTrain);
      auto loss = ops::softmax_cross_entropy(tape, scores, std::span<const int>(labels));
      tape.backward(loss);
      if (!sgd_step(params, sgd, cfg.optimizer, er.lr)) {
        log().error("run_training: non-finite gradient in epoch {}, run aborted", epoch);
        rec.diverged = true;
        break;
      }
      loss_sum += static_cast<double>(loss.item());
      ++batches;
    }
    if (rec.diverged) {
      rec.stop_reason = "diverged";
      break;
    }
    er.train_loss = loss_sum / static_cast<double>(std::max<std::size_t>(batches, 1));
    if (cfg.bn_recalibration_batches > 0) {
      auto bn_sample = data::sample_epoch(train, cfg.plan.train_rate, mix_seed(cfg.seed, 3, epoch));
      bn_sample.resize(std::min(bn_sample.size(), cfg.bn_recalibration_batches * cfg.batch_size));
      recalibrate_batch_norm(model, store, train, bn_sample, cfg.batch_size);
    }
    auto val_sample = data::sample_epoch(val, cfg.plan.val_rate, mix_seed(cfg.seed, 2, epoch));
    er.val_accuracy = sample_accuracy(model, store, val, val_sample, cfg.eval_batch_size);
    if (model.has_threshold()) er.threshold = static_cast<double>(model.threshold().item());
    const bool stop = policy.update(epoch, er.val_accuracy);
    if (policy.best_epoch() == epoch) {
      best = Snapshot<S>::take(model);
      if (checkpoint_dir) {
        er.checkpoint = (*checkpoint_dir / ("epoch" + std::to_string(epoch))).string();
        nn::save_checkpoint(model, er.checkpoint, {{"epoch", epoch}, {"val_accuracy", er.val_accuracy}});
        rec.best_checkpoint = er.checkpoint;
      }
    }
    log().debug("{} epoch {}: loss {:.4f} val {:.4f} lr {:.5f}", rec.variant, epoch, er.train_loss, er.val_accuracy,
                er.lr);
    rec.epochs.push_back(er);
    if (stop) {
      rec.stop_reason = policy.reason();
      break;
    }
  }
  rec.best_epoch = policy.best_epoch();
  rec.best_val_accuracy = policy.best_accuracy();
  best.restore(model);
  for (const auto& p : params) p.tensor.drop_grad();
  return rec;
}

}  // namespace dfd::train
