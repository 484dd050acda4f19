#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dfd/core/error.hpp"
#include "dfd/data/frame_io.hpp"
#include "dfd/data/manifest.hpp"
#include "dfd/nn/architecture.hpp"
#include "dfd/signal/filters.hpp"
#include "dfd/signal/temporal_noise.hpp"

namespace dfd::train {

/*
 * Preprocessed detector inputs for every stored clip: normalized color,
 * spatial high-pass and the temporal high-pass planes A_j (steps 1-2). The
 * thresholded part of the temporal noise is computed per batch because it
 * depends on the learnable threshold.
 */
template <typename S>
class SampleStore {
 public:
  struct Clip {
    std::vector<Tensor<S>> color;
    std::vector<Tensor<S>> spatial;
    std::vector<Tensor<S>> highpass;
  };

  explicit SampleStore(signal::TemporalNoiseConfig tn = {}, signal::SpatialHighpassConfig sp = {},
                       bool with_temporal = true)
      : tn_(tn), sp_(sp), with_temporal_(with_temporal) {}

  void add(const std::string& key, const FrameSequence& crops) {
    require(!crops.empty(), "SampleStore: clip '" + key + "' is empty");
    Clip c;
    for (const auto& f : crops.frames) {
      c.color.push_back(signal::normalize_color<S>(f));
      c.spatial.push_back(signal::spatial_highpass(c.color.back(), sp_));
    }
    if (with_temporal_) c.highpass = signal::clip_highpass(std::span<const Tensor<S>>(c.color), tn_);
    clips_[key] = std::move(c);
  }

  // Loads every sequence path of the manifest that is not stored yet.
  void load(const data::DatasetManifest& m) {
    m.for_each_sequence([&](const data::FrameRef&, const data::Sequence& s) {
      if (!clips_.count(s.path)) add(s.path, data::read_frames(s.path, s.fps));
    });
  }

  bool contains(const std::string& key) const { return clips_.count(key) > 0; }
  const Clip& clip(const std::string& key) const {
    auto it = clips_.find(key);
    if (it == clips_.end()) throw ContractViolation("SampleStore: no clip '" + key + "'");
    return it->second;
  }
  const signal::TemporalNoiseConfig& temporal_config() const { return tn_; }

  /**
   * Stacks the referenced frames into detector inputs. Frame ref.frame maps to
   * clip index first_frame + ref.frame.
   */
  nn::DetectorInputs<S> batch(const data::DatasetManifest& m, std::span<const data::FrameRef> refs,
                              bool temporal, std::vector<int>* labels = nullptr) const {
    require(!refs.empty(), "SampleStore: empty batch");
    std::vector<const Tensor<S>*> col, spa;
    std::vector<Tensor<S>> hp;
    if (labels) labels->clear();
    for (const auto& r : refs) {
      const auto& seq = m.sequence(r);
      const Clip& c = clip(seq.path);
      const std::size_t idx = seq.first_frame + r.frame;
      require(idx < c.color.size(), "SampleStore: frame " + std::to_string(idx) + " beyond clip " + seq.path);
      col.push_back(&c.color[idx]);
      spa.push_back(&c.spatial[idx]);
      if (temporal) {
        require(with_temporal_, "SampleStore: built without temporal planes");
        hp.push_back(signal::highpass_window(std::span<const Tensor<S>>(c.highpass), idx));
      }
      if (labels) labels->push_back(m.label(r));
    }
    nn::DetectorInputs<S> in;
    in.color = stack(col);
    in.spatial = stack(spa);
    if (temporal) {
      std::vector<const Tensor<S>*> p;
      for (const auto& t : hp) p.push_back(&t);
      in.temporal_highpass = stack(p);
    }
    return in;
  }

 private:
  static Tensor<S> stack(const std::vector<const Tensor<S>*>& items) {
    Shape shape{items.size()};
    const Shape& inner = items.front()->shape();
    shape.insert(shape.end(), inner.begin(), inner.end());
    Tensor<S> out(shape);
    const std::size_t n = items.front()->numel();
    for (std::size_t i = 0; i < items.size(); ++i)
      std::copy(items[i]->values().begin(), items[i]->values().end(), out.values().begin() + i * n);
    return out;
  }

  signal::TemporalNoiseConfig tn_;
  signal::SpatialHighpassConfig sp_;
  bool with_temporal_;
  std::map<std::string, Clip> clips_;
};

}  // namespace dfd::train
