#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dfd/core/error.hpp"
#include "dfd/core/log.hpp"
#include "dfd/nn/layers.hpp"
#include "dfd/signal/temporal_noise.hpp"

namespace dfd::nn {

// Widths [d, alpha, beta, gamma, delta, epsilon] of an entry flow. Zeros may
// only form a leading or trailing run and disable the matching layers.
struct EntryFlowSpec {
  std::array<std::size_t, 6> widths{};

  std::size_t d() const { return widths[0]; }

  std::size_t first_enabled() const {
    std::size_t i = 1;
    while (i < 6 && widths[i] == 0) ++i;
    return i;
  }

  std::size_t output_width() const {
    for (std::size_t i = 6; i-- > 1;)
      if (widths[i] != 0) return widths[i];
    return 0;
  }

  void validate() const {
    std::size_t i = 0;
    while (i < 6 && widths[i] == 0) ++i;
    std::size_t j = i;
    while (j < 6 && widths[j] != 0) ++j;
    for (std::size_t k = j; k < 6; ++k)
      require(widths[k] == 0, "EntryFlowSpec " + str() + ": zeros must form a leading or trailing run");
    require(first_enabled() < 6, "EntryFlowSpec " + str() + ": no enabled layer");
  }

  std::string str() const {
    std::string s = "In_{";
    for (std::size_t i = 0; i < 6; ++i) s += (i ? "," : "") + std::to_string(widths[i]);
    return s + "}";
  }
};

enum class InputKind { kColor, kSpatial, kTemporal, kZero, kFused };

inline const char* input_kind_name(InputKind k) {
  switch (k) {
    case InputKind::kColor: return "color";
    case InputKind::kSpatial: return "spatial";
    case InputKind::kTemporal: return "temporal";
    case InputKind::kZero: return "zero";
    case InputKind::kFused: return "fused";
  }
  return "?";
}

inline InputKind parse_input_kind(const std::string& s) {
  for (auto k : {InputKind::kColor, InputKind::kSpatial, InputKind::kTemporal, InputKind::kZero, InputKind::kFused})
    if (s == input_kind_name(k)) return k;
  throw ContractViolation("unknown stream input '" + s + "'");
}

// A leaf stream reads one network input; a fused stream concatenates its
// children along channels and continues with an entry flow whose d is 0.
struct StreamSpec {
  std::string name;
  InputKind input = InputKind::kColor;
  EntryFlowSpec entry;
  std::vector<StreamSpec> children;
};

struct DetectorSpec {
  std::string variant;
  double width_scale = 1.0;
  std::size_t input_size = 299;
  std::vector<StreamSpec> streams;  // concatenated before the middle flow
  std::size_t middle_repeats = 0;
};

inline std::size_t scale_width(std::size_t w, double scale) {
  if (w == 0) return 0;
  return static_cast<std::size_t>(std::ceil(static_cast<double>(w) * scale - 1e-9));
}

// Exit-flow widths r1, r2, r3 for a given input width zeta.
inline std::array<std::size_t, 3> exit_widths(std::size_t zeta) {
  auto prop = [&](std::size_t base) { return (base * zeta + 727) / 728; };
  return {prop(1024), prop(1536), prop(2048)};
}

inline const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names{"C", "S", "CS", "CST", "CS_noT"};
  return names;
}

inline DetectorSpec make_spec(const std::string& variant, double width_scale = 1.0, std::size_t input_size = 299) {
  auto leaf = [](std::string name, InputKind in, std::array<std::size_t, 6> w) {
    return StreamSpec{std::move(name), in, EntryFlowSpec{w}, {}};
  };
  DetectorSpec spec{variant, width_scale, input_size, {}, 0};
  if (variant == "C") {
    spec.streams = {leaf("color", InputKind::kColor, {3, 32, 64, 128, 256, 728})};
    spec.middle_repeats = 8;
  } else if (variant == "S") {
    spec.streams = {leaf("spatial", InputKind::kSpatial, {3, 32, 64, 128, 256, 728})};
  } else if (variant == "CS") {
    spec.streams = {leaf("color", InputKind::kColor, {3, 32, 64, 128, 256, 364}),
                    leaf("spatial", InputKind::kSpatial, {3, 32, 64, 128, 256, 364})};
    spec.middle_repeats = 2;
  } else if (variant == "CST" || variant == "CS_noT") {
    const InputKind t = variant == "CST" ? InputKind::kTemporal : InputKind::kZero;
    StreamSpec fused{"color_temporal", InputKind::kFused, EntryFlowSpec{{0, 0, 72, 128, 256, 512}},
                     {leaf("color", InputKind::kColor, {3, 32, 64, 0, 0, 0}), leaf("temporal", t, {3, 8, 8, 0, 0, 0})}};
    spec.streams = {fused, leaf("spatial", InputKind::kSpatial, {3, 16, 32, 64, 128, 256})};
    spec.middle_repeats = 1;
  } else {
    throw ContractViolation("unknown detector variant '" + variant + "' (expected C, S, CS, CST or CS_noT)");
  }
  return spec;
}

inline bool uses_input(const StreamSpec& s, InputKind k) {
  if (s.input == k) return true;
  return std::any_of(s.children.begin(), s.children.end(), [&](const StreamSpec& c) { return uses_input(c, k); });
}

inline bool uses_input(const DetectorSpec& spec, InputKind k) {
  return std::any_of(spec.streams.begin(), spec.streams.end(), [&](const StreamSpec& s) { return uses_input(s, k); });
}

// Channel count a stream hands to its successor, at unit width.
inline std::size_t stream_width(const StreamSpec& s) { return s.entry.output_width(); }

inline void validate_stream(const StreamSpec& s) {
  s.entry.validate();
  if (s.input == InputKind::kFused) {
    require(!s.children.empty(), "stream " + s.name + ": fused stream without children");
    require(s.entry.d() == 0, "stream " + s.name + ": fused stream must have d = 0");
    std::size_t concat = 0;
    for (const auto& c : s.children) {
      validate_stream(c);
      concat += stream_width(c);
    }
    // A leading conv consumes as many channels as it emits; a leading stage
    // accepts whatever its predecessor hands over.
    const std::size_t first = s.entry.first_enabled();
    if (first <= 2)
      require(concat == s.entry.widths[first], "stream " + s.name + ": children concatenate to " +
                                                   std::to_string(concat) + " channels but " + s.entry.str() +
                                                   " expects " + std::to_string(s.entry.widths[first]));
  } else {
    require(s.children.empty(), "stream " + s.name + ": leaf stream cannot have children");
    require(s.entry.d() == 3, "stream " + s.name + ": leaf streams read 3-channel images, got d = " +
                                  std::to_string(s.entry.d()));
  }
}

inline void validate(const DetectorSpec& spec) {
  require(spec.width_scale > 0 && spec.width_scale <= 1.0 + 1e-12, "width_scale must be in (0, 1]");
  require(spec.input_size >= 32, "input_size must be at least 32");
  require(!spec.streams.empty(), "detector needs at least one stream");
  for (const auto& s : spec.streams) validate_stream(s);
}

// Two separable convs (in -> mid -> out) with BN, a 3x3/s2 max-pool and a
// strided 1x1 projection on the residual path.
template <typename S>
class ResidualStage {
 public:
  ResidualStage(const std::string& name, std::size_t in, std::size_t mid, std::size_t out, bool leading_relu, Rng& rng)
      : name_(name),
        leading_relu_(leading_relu),
        sep1_(name + ".sep1", in, mid, rng),
        bn1_(name + ".bn1", mid),
        sep2_(name + ".sep2", mid, out, rng),
        bn2_(name + ".bn2", out),
        proj_(name + ".proj", in, out, 1, 2, 0, rng),
        proj_bn_(name + ".proj_bn", out) {}

  Tensor<S> forward(Tape<S>& tape, const Tensor<S>& x, Mode mode) const {
    Tensor<S> h = leading_relu_ ? ops::relu(tape, x) : x;
    h = ops::relu(tape, bn1_.forward(tape, sep1_.forward(tape, h), mode));
    h = bn2_.forward(tape, sep2_.forward(tape, h), mode);
    h = ops::maxpool2d(tape, h, 3, 2, 1);
    Tensor<S> r = proj_bn_.forward(tape, proj_.forward(tape, x), mode);
    return ops::add(tape, h, r);
  }

  void trace(TraceState& st, std::vector<TraceEntry>& out) const {
    TraceState side = st;
    sep1_.trace(st, out);
    bn1_.trace(st, out);
    sep2_.trace(st, out);
    bn2_.trace(st, out);
    trace_pool(name_ + ".pool", st, out);
    proj_.trace(side, out);
    proj_bn_.trace(side, out);
    require(side.shape == st.shape, name_ + ": residual shape mismatch");
  }

  void collect(std::vector<NamedParameter<S>>& p, std::vector<NamedBuffer<S>>& b) const {
    sep1_.collect(p);
    bn1_.collect(p);
    sep2_.collect(p);
    bn2_.collect(p);
    proj_.collect(p);
    proj_bn_.collect(p);
    for (auto* bn : {&bn1_, &bn2_, &proj_bn_}) bn->collect_buffers(b);
  }

 private:
  std::string name_;
  bool leading_relu_;
  SeparableConvLayer<S> sep1_;
  BatchNormLayer<S> bn1_;
  SeparableConvLayer<S> sep2_;
  BatchNormLayer<S> bn2_;
  Conv2dLayer<S> proj_;
  BatchNormLayer<S> proj_bn_;
};

template <typename S>
class EntryFlow {
 public:
  // `in` is the actual incoming channel count; `widths` are already scaled.
  EntryFlow(const std::string& name, std::size_t in, const std::array<std::size_t, 6>& widths, Rng& rng) {
    std::size_t c = in;
    bool after_stage = false;
    for (std::size_t i = 1; i < 3; ++i) {
      if (widths[i] == 0) continue;
      const std::string n = name + (i == 1 ? ".conv_a" : ".conv_b");
      convs_.push_back({Conv2dLayer<S>(n, c, widths[i], 3, i == 1 ? 2 : 1, 0, rng), BatchNormLayer<S>(n + "_bn", widths[i])});
      c = widths[i];
    }
    static const char* stage_names[] = {".stage_g", ".stage_d", ".stage_e"};
    for (std::size_t i = 3; i < 6; ++i) {
      if (widths[i] == 0) continue;
      stages_.emplace_back(name + stage_names[i - 3], c, widths[i], widths[i], after_stage, rng);
      c = widths[i];
      after_stage = true;
    }
    out_channels_ = c;
  }

  Tensor<S> forward(Tape<S>& tape, Tensor<S> x, Mode mode) const {
    for (const auto& [conv, bn] : convs_) x = ops::relu(tape, bn.forward(tape, conv.forward(tape, x), mode));
    for (const auto& s : stages_) x = s.forward(tape, x, mode);
    return x;
  }

  void trace(TraceState& st, std::vector<TraceEntry>& out) const {
    for (const auto& [conv, bn] : convs_) {
      conv.trace(st, out);
      bn.trace(st, out);
    }
    for (const auto& s : stages_) s.trace(st, out);
  }

  void collect(std::vector<NamedParameter<S>>& p, std::vector<NamedBuffer<S>>& b) const {
    for (const auto& [conv, bn] : convs_) {
      conv.collect(p);
      bn.collect(p);
      bn.collect_buffers(b);
    }
    for (const auto& s : stages_) s.collect(p, b);
  }

  std::size_t out_channels() const { return out_channels_; }

 private:
  std::vector<std::pair<Conv2dLayer<S>, BatchNormLayer<S>>> convs_;
  std::vector<ResidualStage<S>> stages_;
  std::size_t out_channels_ = 0;
};

// Three (ReLU, separable conv, BN) units at constant width plus identity.
template <typename S>
class MiddleBlock {
 public:
  MiddleBlock(const std::string& name, std::size_t width, Rng& rng) {
    for (int i = 0; i < 3; ++i) {
      const std::string n = name + ".sep" + std::to_string(i + 1);
      units_.push_back({SeparableConvLayer<S>(n, width, width, rng), BatchNormLayer<S>(n + "_bn", width)});
    }
  }

  Tensor<S> forward(Tape<S>& tape, const Tensor<S>& x, Mode mode) const {
    Tensor<S> h = x;
    for (const auto& [sep, bn] : units_) h = bn.forward(tape, sep.forward(tape, ops::relu(tape, h)), mode);
    return ops::add(tape, h, x);
  }

  void trace(TraceState& st, std::vector<TraceEntry>& out) const {
    for (const auto& [sep, bn] : units_) {
      sep.trace(st, out);
      bn.trace(st, out);
    }
  }

  void collect(std::vector<NamedParameter<S>>& p, std::vector<NamedBuffer<S>>& b) const {
    for (const auto& [sep, bn] : units_) {
      sep.collect(p);
      bn.collect(p);
      bn.collect_buffers(b);
    }
  }

 private:
  std::vector<std::pair<SeparableConvLayer<S>, BatchNormLayer<S>>> units_;
};

template <typename S>
class ExitFlow {
 public:
  ExitFlow(std::size_t zeta, Rng& rng) : ExitFlow(zeta, exit_widths(zeta), rng) {}

  Tensor<S> forward(Tape<S>& tape, const Tensor<S>& x, Mode mode) const {
    Tensor<S> h = stage_.forward(tape, x, mode);
    h = ops::relu(tape, bn2_.forward(tape, sep2_.forward(tape, h), mode));
    h = ops::relu(tape, bn3_.forward(tape, sep3_.forward(tape, h), mode));
    return dense_.forward(tape, ops::global_avg_pool(tape, h));
  }

  void trace(TraceState& st, std::vector<TraceEntry>& out) const {
    stage_.trace(st, out);
    sep2_.trace(st, out);
    bn2_.trace(st, out);
    sep3_.trace(st, out);
    bn3_.trace(st, out);
    st.apply_window(st.shape[1], 1);
    st.shape = {st.shape[0]};
    out.push_back({"exit.gap", "global_avg_pool", st.shape, 0, st.receptive_field});
    dense_.trace(st, out);
  }

  void collect(std::vector<NamedParameter<S>>& p, std::vector<NamedBuffer<S>>& b) const {
    stage_.collect(p, b);
    sep2_.collect(p);
    bn2_.collect(p);
    sep3_.collect(p);
    bn3_.collect(p);
    dense_.collect(p);
    bn2_.collect_buffers(b);
    bn3_.collect_buffers(b);
  }

 private:
  ExitFlow(std::size_t zeta, std::array<std::size_t, 3> r, Rng& rng)
      : stage_("exit.stage", zeta, zeta, r[0], true, rng),
        sep2_("exit.sep2", r[0], r[1], rng),
        bn2_("exit.sep2_bn", r[1]),
        sep3_("exit.sep3", r[1], r[2], rng),
        bn3_("exit.sep3_bn", r[2]),
        dense_("exit.dense", r[2], 2, rng) {}

  ResidualStage<S> stage_;
  SeparableConvLayer<S> sep2_;
  BatchNormLayer<S> bn2_;
  SeparableConvLayer<S> sep3_;
  BatchNormLayer<S> bn3_;
  DenseLayer<S> dense_;
};

// Network inputs, each [N,3,H,W] except temporal_highpass [N,6,3,H,W]. A
// detector that consumes temporal noise takes either the precomputed T image
// or the high-pass stack (then T is computed with the learnable threshold).
template <typename S>
struct DetectorInputs {
  Tensor<S> color;
  Tensor<S> spatial;
  std::optional<Tensor<S>> temporal;
  std::optional<Tensor<S>> temporal_highpass;
};

template <typename S>
class Detector {
 public:
  explicit Detector(DetectorSpec spec, std::uint64_t seed = 0, signal::TemporalNoiseConfig tn = {})
      : spec_(std::move(spec)), temporal_config_(tn) {
    validate(spec_);
    Rng rng(seed);
    std::size_t width = 0;
    for (const auto& s : spec_.streams) {
      streams_.push_back(build_stream(s, rng));
      width += streams_.back()->out_channels;
    }
    fused_width_ = width;
    for (std::size_t i = 0; i < spec_.middle_repeats; ++i)
      middle_.emplace_back("middle" + std::to_string(i + 1), width, rng);
    exit_ = std::make_unique<ExitFlow<S>>(width, rng);
    if (uses_input(spec_, InputKind::kTemporal))
      threshold_ = Tensor<S>::scalar(static_cast<S>(temporal_config_.initial_threshold), true);
    trace_ = run_trace();
  }

  const DetectorSpec& spec() const { return spec_; }
  std::size_t fused_width() const { return fused_width_; }
  const std::vector<TraceEntry>& trace() const { return trace_; }
  bool has_threshold() const { return threshold_.has_value(); }
  Tensor<S> threshold() const {
    require(threshold_.has_value(), "detector " + spec_.variant + " has no temporal threshold");
    return *threshold_;
  }
  const signal::TemporalNoiseConfig& temporal_config() const { return temporal_config_; }

  // Returns class scores [N,2].
  Tensor<S> forward(Tape<S>& tape, const DetectorInputs<S>& in, Mode mode) const {
    std::vector<Tensor<S>> parts;
    for (const auto& s : streams_) parts.push_back(forward_stream(tape, *s, in, mode));
    Tensor<S> x = parts.size() == 1 ? parts[0] : ops::concat_channels(tape, parts);
    for (const auto& m : middle_) x = m.forward(tape, x, mode);
    return exit_->forward(tape, x, mode);
  }

  // Trainable tensors; the temporal threshold is listed last and never decayed.
  std::vector<NamedParameter<S>> parameters() const {
    std::vector<NamedParameter<S>> p;
    std::vector<NamedBuffer<S>> b;
    collect(p, b);
    if (threshold_) p.push_back({"temporal.threshold", *threshold_, false});
    return p;
  }

  std::vector<NamedBuffer<S>> buffers() const {
    std::vector<NamedParameter<S>> p;
    std::vector<NamedBuffer<S>> b;
    collect(p, b);
    return b;
  }

  // Network weights only (excludes the temporal threshold).
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters())
      if (p.name != "temporal.threshold") n += p.tensor.numel();
    return n;
  }

 private:
  struct Stream {
    const StreamSpec* spec;
    std::vector<std::unique_ptr<Stream>> children;
    std::unique_ptr<EntryFlow<S>> entry;
    std::size_t out_channels = 0;
  };

  std::unique_ptr<Stream> build_stream(const StreamSpec& s, Rng& rng) const {
    auto node = std::make_unique<Stream>();
    node->spec = &s;
    std::size_t in = 3;
    if (s.input == InputKind::kFused) {
      in = 0;
      for (const auto& c : s.children) {
        node->children.push_back(build_stream(c, rng));
        in += node->children.back()->out_channels;
      }
    }
    std::array<std::size_t, 6> w = s.entry.widths;
    for (std::size_t i = 1; i < 6; ++i) w[i] = scale_width(w[i], spec_.width_scale);
    node->entry = std::make_unique<EntryFlow<S>>(s.name, in, w, rng);
    node->out_channels = node->entry->out_channels();
    return node;
  }

  Tensor<S> leaf_input(Tape<S>& tape, const Stream& s, const DetectorInputs<S>& in) const {
    switch (s.spec->input) {
      case InputKind::kColor: return in.color;
      case InputKind::kSpatial: return in.spatial;
      case InputKind::kZero: {
        const Tensor<S>& ref = in.color.numel() ? in.color : in.spatial;
        return Tensor<S>::zeros(ref.shape());
      }
      case InputKind::kTemporal:
        if (in.temporal) return *in.temporal;
        require(in.temporal_highpass.has_value(), "detector " + spec_.variant + ": temporal input missing");
        return signal::temporal_noise_from_highpass(tape, *in.temporal_highpass, *threshold_, temporal_config_);
      case InputKind::kFused: break;
    }
    throw ContractViolation("stream " + s.spec->name + ": not a leaf");
  }

  Tensor<S> forward_stream(Tape<S>& tape, const Stream& s, const DetectorInputs<S>& in, Mode mode) const {
    Tensor<S> x;
    if (s.spec->input == InputKind::kFused) {
      std::vector<Tensor<S>> parts;
      for (const auto& c : s.children) parts.push_back(forward_stream(tape, *c, in, mode));
      x = ops::concat_channels(tape, parts);
    } else {
      x = leaf_input(tape, s, in);
      require(x.rank() == 4 && x.dim(1) == 3,
              "stream " + s.spec->name + ": expected [N,3,H,W] input, got " + shape_str(x.shape()));
    }
    return s.entry->forward(tape, x, mode);
  }

  void collect_stream(const Stream& s, std::vector<NamedParameter<S>>& p, std::vector<NamedBuffer<S>>& b) const {
    for (const auto& c : s.children) collect_stream(*c, p, b);
    s.entry->collect(p, b);
  }

  void collect(std::vector<NamedParameter<S>>& p, std::vector<NamedBuffer<S>>& b) const {
    for (const auto& s : streams_) collect_stream(*s, p, b);
    for (const auto& m : middle_) m.collect(p, b);
    exit_->collect(p, b);
  }

  static TraceState fuse(const std::vector<std::pair<std::string, TraceState>>& parts, const std::string& at,
                         std::vector<TraceEntry>& out) {
    TraceState st = parts.front().second;
    st.shape[0] = 0;
    for (const auto& [name, ps] : parts) {
      const auto& ref = parts.front();
      if (ps.shape[1] != ref.second.shape[1] || ps.shape[2] != ref.second.shape[2])
        throw ContractViolation("fusion at " + at + ": stream '" + ref.first + "' is " +
                                std::to_string(ref.second.shape[1]) + "x" + std::to_string(ref.second.shape[2]) +
                                " but stream '" + name + "' is " + std::to_string(ps.shape[1]) + "x" +
                                std::to_string(ps.shape[2]));
      st.shape[0] += ps.shape[0];
      st.receptive_field = std::max(st.receptive_field, ps.receptive_field);
      st.jump = std::max(st.jump, ps.jump);
    }
    out.push_back({at, "concat", st.shape, 0, st.receptive_field});
    return st;
  }

  TraceState trace_stream(const Stream& s, std::vector<TraceEntry>& out) const {
    TraceState st;
    if (s.spec->input == InputKind::kFused) {
      std::vector<std::pair<std::string, TraceState>> parts;
      for (const auto& c : s.children) parts.emplace_back(c->spec->name, trace_stream(*c, out));
      st = fuse(parts, s.spec->name + ".concat", out);
    } else {
      st.shape = {3, spec_.input_size, spec_.input_size};
      out.push_back({s.spec->name + ".input", input_kind_name(s.spec->input), st.shape, 0, 1});
    }
    s.entry->trace(st, out);
    return st;
  }

  std::vector<TraceEntry> run_trace() const {
    std::vector<TraceEntry> out;
    std::vector<std::pair<std::string, TraceState>> parts;
    for (const auto& s : streams_) parts.emplace_back(s->spec->name, trace_stream(*s, out));
    TraceState st = parts.size() == 1 ? parts[0].second : fuse(parts, "fusion", out);
    require(st.shape[1] >= 1 && st.shape[2] >= 1, "detector " + spec_.variant + ": input too small");
    for (const auto& m : middle_) m.trace(st, out);
    exit_->trace(st, out);
    return out;
  }

  DetectorSpec spec_;
  signal::TemporalNoiseConfig temporal_config_;
  std::vector<std::unique_ptr<Stream>> streams_;
  std::vector<MiddleBlock<S>> middle_;
  std::unique_ptr<ExitFlow<S>> exit_;
  std::optional<Tensor<S>> threshold_;
  std::size_t fused_width_ = 0;
  std::vector<TraceEntry> trace_;
};

inline std::size_t total_parameters(const std::vector<TraceEntry>& trace) {
  std::size_t n = 0;
  for (const auto& e : trace) n += e.parameters;
  return n;
}

// Receptive field (input pixels) of the named trace entry.
inline std::size_t receptive_field(const std::vector<TraceEntry>& trace, const std::string& layer) {
  for (const auto& e : trace)
    if (e.name == layer) return e.receptive_field;
  throw ContractViolation("receptive_field: no layer named '" + layer + "'");
}

// Side of the receptive field of a plain chain of (kernel, stride) windows.
inline std::size_t receptive_field(const std::vector<std::pair<std::size_t, std::size_t>>& chain) {
  TraceState st;
  for (auto [k, s] : chain) st.apply_window(k, s);
  return st.receptive_field;
}

}  // namespace dfd::nn
