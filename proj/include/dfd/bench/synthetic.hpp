#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <numbers>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "dfd/bench/face_model.hpp"
#include "dfd/core/error.hpp"
#include "dfd/data/compress.hpp"
#include "dfd/data/extract.hpp"
#include "dfd/data/frame_io.hpp"
#include "dfd/data/manifest.hpp"
#include "dfd/mining/landmarks.hpp"
#include "dfd/mining/mask.hpp"
#include "dfd/mining/segments.hpp"
#include "dfd/signal/filters.hpp"
#include "dfd/signal/image.hpp"
#include "dfd/signal/temporal_noise.hpp"

namespace dfd::bench {

struct SyntheticSceneConfig {
  std::size_t frame_size = 96;
  std::size_t frames = 44;
  double fps = 25.0;
  double noise_sigma = 0.01;
  double face_size_min = 46, face_size_max = 54;
  std::size_t crop_size = 64;
  double crop_margin = 1.3;
  std::uint64_t seed = 1;
};

enum class FakeKind { kSpatialBlur, kColorShift, kTemporalFlicker };

inline const char* fake_kind_name(FakeKind k) {
  switch (k) {
    case FakeKind::kSpatialBlur: return "spatial_blur";
    case FakeKind::kColorShift: return "color_shift";
    case FakeKind::kTemporalFlicker: return "temporal_flicker";
  }
  return "?";
}

inline FakeKind parse_fake_kind(const std::string& s) {
  for (auto k : {FakeKind::kSpatialBlur, FakeKind::kColorShift, FakeKind::kTemporalFlicker})
    if (s == fake_kind_name(k)) return k;
  throw ContractViolation("unknown fake kind '" + s + "' (spatial_blur, color_shift, temporal_flicker)");
}

// strength: blur sigma in px, chroma offset, or flicker amplitude.
struct FakeRecipe {
  FakeKind kind = FakeKind::kTemporalFlicker;
  double strength = 0.05;

  static FakeRecipe defaults(FakeKind k) {
    switch (k) {
      case FakeKind::kSpatialBlur: return {k, 1.2};
      case FakeKind::kColorShift: return {k, 0.06};
      case FakeKind::kTemporalFlicker: return {k, 0.05};
    }
    return {k, 0};
  }
};

// Identity: background and face appearance.
struct SubjectLook {
  std::array<double, 3> bg_a{}, bg_b{}, skin{};
  double bg_angle = 0;
  std::array<double, 4> tex{};  // two (frequency, phase) pairs
};

// One clip's motion, lighting and brightness offset.
struct ClipMotion {
  double cx0 = 0, cy0 = 0, vx = 0, vy = 0, size = 50, bob_phase = 0, gain = 1;
  double offset_sign = 1;
  std::uint64_t noise_seed = 0;
};

struct RenderedClip {
  FrameSequence video;
  std::vector<std::array<mining::Point, mining::kLandmarkCount>> face;  // true landmark positions
  std::vector<double> face_offset;                       // o_k
  std::vector<Image> alpha;                              // face coverage masks
};

inline void clamp_unit(Image& img) {
  for (auto& v : img.pixels) v = std::clamp(v, 0.0f, 1.0f);
}

inline Tensor<double> planes_of(const Image& img) {
  Tensor<double> t(Shape{3, img.height, img.width});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x) t.values()[(c * img.height + y) * img.width + x] = img.at(y, x, c);
  return t;
}

inline SubjectLook random_look(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  SubjectLook s;
  for (int c = 0; c < 3; ++c) {
    s.bg_a[c] = 0.2 + 0.6 * u(rng);
    s.bg_b[c] = 0.2 + 0.6 * u(rng);
  }
  s.skin = {0.5 + 0.15 * u(rng), 0.38 + 0.15 * u(rng), 0.32 + 0.12 * u(rng)};
  s.bg_angle = 2 * std::numbers::pi * u(rng);
  s.tex = {0.5 + 0.6 * u(rng), 2 * std::numbers::pi * u(rng), 0.5 + 0.6 * u(rng), 2 * std::numbers::pi * u(rng)};
  return s;
}

inline ClipMotion random_motion(const SyntheticSceneConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  ClipMotion m;
  const double c = static_cast<double>(cfg.frame_size) / 2;
  m.cx0 = c + 4 * (u(rng) - 0.5);
  m.cy0 = c + 4 * (u(rng) - 0.5);
  m.vx = 0.15 * (u(rng) - 0.5);
  m.vy = 0.15 * (u(rng) - 0.5);
  m.size = cfg.face_size_min + (cfg.face_size_max - cfg.face_size_min) * u(rng);
  m.bob_phase = 2 * std::numbers::pi * u(rng);
  m.gain = 0.9 + 0.2 * u(rng);
  m.offset_sign = u(rng) < 0.5 ? -1.0 : 1.0;
  m.noise_seed = rng();
  return m;
}

/**
 * Renders a clip. offsets[k] is the brightness added to the face in frame k.
 * Sensor noise depends only on motion.noise_seed, so two renders with the same
 * motion share it.
 */
inline RenderedClip render_clip(const SyntheticSceneConfig& cfg, const SubjectLook& look, const ClipMotion& m,
                                const std::vector<double>& offsets) {
  RenderedClip out;
  out.video.fps = cfg.fps;
  out.face_offset = offsets;
  std::mt19937_64 noise_rng(m.noise_seed);
  std::normal_distribution<double> noise(0, cfg.noise_sigma);
  const std::size_t n = cfg.frame_size;
  const double ca = std::cos(look.bg_angle), sa = std::sin(look.bg_angle);
  for (std::size_t k = 0; k < cfg.frames; ++k) {
    const double t = static_cast<double>(k);
    const double cx = m.cx0 + m.vx * t + 1.5 * std::sin(2 * std::numbers::pi * t / 40 + m.bob_phase);
    const double cy = m.cy0 + m.vy * t + 1.0 * std::cos(2 * std::numbers::pi * t / 40 + m.bob_phase);
    const double r = m.size / 2;
    const double shift = 0.3 * t;
    out.face.push_back(place_face(cx - r, cy - r, m.size));
    Image img(n, n), alpha(n, n);
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        const double px = static_cast<double>(x), py = static_cast<double>(y);
        const double g = 0.5 + 0.5 * std::sin((px * ca + py * sa + shift) / 25.0);
        const double u = (px - cx) / r, v = (py - cy) / r;
        const double dist = std::sqrt(u * u + v * v);
        const double a = std::clamp((1.0 - dist) * r + 0.5, 0.0, 1.0);
        const double tex = 0.04 * std::sin(look.tex[0] * px + look.tex[1]) * std::sin(look.tex[2] * py + look.tex[3]);
        // eyes and mouth as dark blobs at their template positions
        double feat = 0;
        for (auto [fx, fy, s] : {std::array<double, 3>{0.3, 0.3, 0.06}, {0.7, 0.3, 0.06}, {0.5, 0.78, 0.1}}) {
          const double dx = (px - (cx - r + fx * m.size)) / (s * m.size), dy = (py - (cy - r + fy * m.size)) / (s * m.size * 0.6);
          feat += 0.15 * std::exp(-(dx * dx + dy * dy));
        }
        for (std::size_t c = 0; c < 3; ++c) {
          const double bg = look.bg_a[c] * (1 - g) + look.bg_b[c] * g;
          const double face = look.skin[c] * m.gain + tex - feat + offsets[k];
          img.at(y, x, c) = static_cast<float>(bg * (1 - a) + face * a + noise(noise_rng));
          alpha.at(y, x, c) = static_cast<float>(a);
        }
      }
    clamp_unit(img);
    out.video.frames.push_back(std::move(img));
    out.alpha.push_back(std::move(alpha));
  }
  return out;
}

// Slowly varying face brightness of a real clip: s * delta * (0.75 + 0.25 sin).
inline std::vector<double> real_offsets(const SyntheticSceneConfig& cfg, const ClipMotion& m, double delta) {
  std::vector<double> o(cfg.frames);
  for (std::size_t k = 0; k < cfg.frames; ++k)
    o[k] = m.offset_sign * delta * (0.75 + 0.25 * std::sin(2 * std::numbers::pi * static_cast<double>(k) / 60 + m.bob_phase));
  return o;
}

// Per-channel affine map of `img` onto the mean and standard deviation of `ref`.
inline void match_channel_statistics(Image& img, const Image& ref) {
  const std::size_t n = img.width * img.height;
  for (std::size_t c = 0; c < 3; ++c) {
    double ma = 0, mb = 0, va = 0, vb = 0;
    for (std::size_t p = 0; p < n; ++p) ma += img.pixels[3 * p + c], mb += ref.pixels[3 * p + c];
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    for (std::size_t p = 0; p < n; ++p) {
      va += std::pow(img.pixels[3 * p + c] - ma, 2);
      vb += std::pow(ref.pixels[3 * p + c] - mb, 2);
    }
    const double scale = va > 0 ? std::sqrt(vb / va) : 1.0;
    for (std::size_t p = 0; p < n; ++p)
      img.pixels[3 * p + c] = static_cast<float>((img.pixels[3 * p + c] - ma) * scale + mb);
  }
}

/**
 * Fake counterpart of a real clip rendered with the same look, motion and
 * noise. Only the face region is altered.
 */
inline FrameSequence make_fake(const SyntheticSceneConfig& cfg, const SubjectLook& look, const ClipMotion& m,
                               const RenderedClip& real, const FakeRecipe& recipe) {
  FrameSequence out;
  out.fps = real.video.fps;
  switch (recipe.kind) {
    case FakeKind::kTemporalFlicker: {
      std::vector<double> o(real.face_offset.size());
      for (std::size_t k = 0; k < o.size(); ++k)
        o[k] = (k % 2 ? -1.0 : 1.0) * recipe.strength * (0.75 + 0.25 * std::sin(2 * std::numbers::pi * static_cast<double>(k) / 60 + m.bob_phase));
      RenderedClip f = render_clip(cfg, look, m, o);
      for (std::size_t k = 0; k < f.video.size(); ++k) {
        match_channel_statistics(f.video.frames[k], real.video.frames[k]);
        clamp_unit(f.video.frames[k]);
      }
      return f.video;
    }
    case FakeKind::kSpatialBlur: {
      std::size_t ks = 2 * static_cast<std::size_t>(std::ceil(3 * recipe.strength)) + 1;
      const auto kernel = signal::gaussian_kernel_1d(ks, recipe.strength);
      for (std::size_t k = 0; k < real.video.size(); ++k) {
        const Image& src = real.video.frames[k];
        const Image blurred = signal::to_image(signal::blur_planes(planes_of(src), kernel));
        Image img = src;
        for (std::size_t p = 0; p < img.pixels.size(); ++p) {
          const float a = real.alpha[k].pixels[p];
          img.pixels[p] = (1 - a) * src.pixels[p] + a * blurred.pixels[p];
        }
        out.frames.push_back(std::move(img));
      }
      return out;
    }
    case FakeKind::kColorShift: {
      const std::array<double, 3> shift{recipe.strength, 0.0, -recipe.strength};
      for (std::size_t k = 0; k < real.video.size(); ++k) {
        Image img = real.video.frames[k];
        for (std::size_t p = 0; p < img.pixels.size(); ++p)
          img.pixels[p] += static_cast<float>(shift[p % 3] * real.alpha[k].pixels[p]);
        clamp_unit(img);
        out.frames.push_back(std::move(img));
      }
      return out;
    }
  }
  return out;
}

struct CorpusConfig {
  SyntheticSceneConfig scene{};
  FakeRecipe recipe{};
  std::size_t n_subjects = 12;
  std::size_t n_sequences = 2;
  std::size_t val_subjects = 2;
  std::size_t test_subjects = 2;
  double real_delta = 0.05;
  mining::FrameBudget budget{1, 1000000};
  // When set, clips go through resize -> encode -> crop instead of a direct crop.
  std::optional<data::Quality> quality;
  double target_side = 64;
};

struct CorpusClip {
  std::string key;  // also the sequence path
  std::string subject;
  int label = 0;
  mining::LandmarkTrack track;
  mining::MiningReport mining;
  FrameSequence video;   // full scene
  FrameSequence crops;   // detector crops of the mined segment
  std::size_t segment_start = 0;
  data::PipelineTrace trace;
};

struct Corpus {
  CorpusConfig config;
  std::vector<CorpusClip> clips;
  data::ManifestSplits splits;
  std::vector<std::string> train_subjects, val_subjects, test_subjects;

  const CorpusClip& clip(const std::string& key) const {
    for (const auto& c : clips)
      if (c.key == key) return c;
    throw ContractViolation("corpus has no clip '" + key + "'");
  }
};

/**
 * Landmark track for a clip: true positions with small jitter and confidence
 * around 0.9, plus a glitch near the start (frame 1 low confidence, frame 2
 * landmarks thrown by 20% of the face size) for mining to cut away.
 */
inline mining::LandmarkTrack synth_track(const SyntheticSceneConfig& cfg, const RenderedClip& clip, std::mt19937_64& rng,
                                         bool glitches = true) {
  std::normal_distribution<double> jitter(0, 0.3);
  std::uniform_real_distribution<double> conf(0.85, 0.95);
  mining::LandmarkTrack t;
  t.frame_width = t.frame_height = cfg.frame_size;
  for (std::size_t k = 0; k < clip.face.size(); ++k) {
    mining::LandmarkFrame f;
    const double size = mining::face_size(mining::LandmarkFrame{clip.face[k], {}});
    for (std::size_t i = 0; i < mining::kLandmarkCount; ++i) {
      f.points[i] = {clip.face[k][i].x + jitter(rng), clip.face[k][i].y + jitter(rng)};
      f.confidence[i] = conf(rng);
    }
    if (glitches && k == 1) f.confidence.fill(0.1);
    if (glitches && k == 2)
      for (auto& p : f.points) p.x += 0.2 * size;
    t.frames.push_back(f);
  }
  return t;
}

// Crop boxes for frames inside [start, end]; none elsewhere.
inline data::BoxTrack boxes_for_segment(const mining::LandmarkTrack& track, std::size_t start, std::size_t end,
                                        double margin) {
  data::BoxTrack boxes(track.size());
  for (std::size_t k = start; k <= end; ++k) {
    if (!track.frames[k]) continue;
    const mining::Box b = mining::face_crop_box(std::span<const mining::Point>(track.frames[k]->points), margin);
    boxes[k] = data::CropBox{b.cx(), b.cy(), b.width()};
  }
  return boxes;
}

/**
 * Builds paired real/fake clips per subject and sequence, mines each landmark
 * track, crops the longest suitable segment and registers the frames with
 * full temporal support in a manifest split by subject identity.
 */
inline Corpus generate_corpus(const CorpusConfig& cfg, data::EncoderClient* encoder = nullptr) {
  require(!cfg.quality || encoder, "generate_corpus: a quality setting needs an encoder");
  require(cfg.n_subjects >= cfg.val_subjects + cfg.test_subjects + 1, "generate_corpus: too few subjects for the splits");
  require(cfg.n_sequences >= 1, "generate_corpus: need at least one sequence per subject");
  Corpus corpus;
  corpus.config = cfg;
  std::mt19937_64 rng(cfg.scene.seed);
  std::vector<std::string> subjects;
  for (std::size_t s = 0; s < cfg.n_subjects; ++s) {
    char id[16];
    std::snprintf(id, sizeof id, "subject%02zu", s);
    subjects.push_back(id);
  }
  std::vector<std::string> order = subjects;
  std::shuffle(order.begin(), order.end(), std::mt19937_64(cfg.scene.seed ^ 0x5eedULL));
  corpus.test_subjects.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cfg.test_subjects));
  corpus.val_subjects.assign(order.begin() + static_cast<std::ptrdiff_t>(cfg.test_subjects),
                             order.begin() + static_cast<std::ptrdiff_t>(cfg.test_subjects + cfg.val_subjects));
  corpus.train_subjects.assign(order.begin() + static_cast<std::ptrdiff_t>(cfg.test_subjects + cfg.val_subjects), order.end());
  std::sort(corpus.train_subjects.begin(), corpus.train_subjects.end());
  std::sort(corpus.val_subjects.begin(), corpus.val_subjects.end());
  std::sort(corpus.test_subjects.begin(), corpus.test_subjects.end());

  auto split_of = [&](const std::string& s) -> data::DatasetManifest& {
    auto in = [&](const std::vector<std::string>& v) { return std::find(v.begin(), v.end(), s) != v.end(); };
    return in(corpus.test_subjects) ? corpus.splits.test : in(corpus.val_subjects) ? corpus.splits.val : corpus.splits.train;
  };
  for (auto* m : {&corpus.splits.train, &corpus.splits.val, &corpus.splits.test})
    m->classes = {data::ClassNode{"real", 0, {}}, data::ClassNode{"fake", 1, {}}};

  const std::size_t before = signal::kFramesBefore, after = signal::kFramesAfter;
  for (std::size_t s = 0; s < cfg.n_subjects; ++s) {
    const SubjectLook look = random_look(rng);
    const std::string subset = s % 2 ? "street" : "studio";
    for (std::size_t q = 0; q < cfg.n_sequences; ++q) {
      const ClipMotion motion = random_motion(cfg.scene, rng);
      RenderedClip real = render_clip(cfg.scene, look, motion, real_offsets(cfg.scene, motion, cfg.real_delta));
      FrameSequence fake = make_fake(cfg.scene, look, motion, real, cfg.recipe);
      mining::LandmarkTrack track = synth_track(cfg.scene, real, rng);
      mining::MiningReport report = mining::mine_track(track, {}, cfg.budget);
      require(!report.segments.empty(), "generate_corpus: mining left no usable segment");
      const mining::Segment seg = report.segments.front();
      const data::BoxTrack boxes = boxes_for_segment(track, seg.start, seg.end, cfg.scene.crop_margin);
      for (int label : {0, 1}) {
        CorpusClip c;
        c.subject = subjects[s];
        c.label = label;
        c.key = subjects[s] + "/seq" + std::to_string(q) + (label ? "/fake" : "/real");
        c.track = track;
        c.mining = report;
        c.video = label ? fake : real.video;
        c.segment_start = seg.start;
        const data::ExtractConfig ec{cfg.scene.fps, 11, cfg.scene.crop_size};
        auto ex = cfg.quality ? data::compression_pipeline(c.video, boxes, {cfg.target_side, *cfg.quality, ec}, *encoder, &c.trace)
                              : data::extract_detector_frames(c.video, boxes, ec);
        if (!cfg.quality) c.trace.add("extract_detector_frames");
        c.crops = std::move(ex.crops);
        require(c.crops.size() == seg.length(), "generate_corpus: crop count differs from segment length");
        require(c.crops.size() > before + after, "generate_corpus: segment shorter than the temporal window");
        data::Sequence sq{c.key, c.key, before, c.crops.size() - before - after, cfg.scene.fps};
        auto& cls = split_of(c.subject).classes[static_cast<std::size_t>(label)];
        auto sub_it = std::find_if(cls.subsets.begin(), cls.subsets.end(), [&](const data::Subset& x) { return x.name == subset; });
        if (sub_it == cls.subsets.end()) {
          cls.subsets.push_back({subset, {}});
          sub_it = cls.subsets.end() - 1;
        }
        auto subj_it = std::find_if(sub_it->subjects.begin(), sub_it->subjects.end(),
                                    [&](const data::Subject& x) { return x.id == c.subject; });
        if (subj_it == sub_it->subjects.end()) {
          sub_it->subjects.push_back({c.subject, {}});
          subj_it = sub_it->subjects.end() - 1;
        }
        subj_it->sequences.push_back(sq);
        corpus.clips.push_back(std::move(c));
      }
    }
  }
  return corpus;
}

// Subject ids present in a manifest.
inline std::set<std::string> subjects_of(const data::DatasetManifest& m) {
  std::set<std::string> out;
  for (const auto& c : m.classes)
    for (const auto& s : c.subsets)
      for (const auto& j : s.subjects) out.insert(j.id);
  return out;
}

/**
 * Writes <dir>/<key>/NNNNNN.png crops, <dir>/<key>.landmarks tracks and
 * <dir>/manifest.json with sequence paths rewritten to the crop directories.
 */
inline void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  for (const auto& c : corpus.clips) {
    data::write_frames(dir / c.key, c.crops);
    mining::write_track(dir / (c.key + ".landmarks"), c.track);
  }
  data::ManifestSplits splits = corpus.splits;
  for (auto* m : {&splits.train, &splits.val, &splits.test})
    for (auto& cl : m->classes)
      for (auto& s : cl.subsets)
        for (auto& j : s.subjects)
          for (auto& q : j.sequences) q.path = (dir / q.path).string();
  data::save_splits(dir / "manifest.json", splits);
}

}  // namespace dfd::bench
