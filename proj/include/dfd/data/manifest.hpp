#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "dfd/core/error.hpp"

namespace dfd::data {

/*
 * A sequence lists `frame_count` samplable frames starting at `first_frame`
 * of the stored clip in `path` (frames outside that range only provide
 * temporal context).
 */
struct Sequence {
  std::string id;
  std::string path;
  std::size_t first_frame = 0;
  std::size_t frame_count = 0;
  double fps = 25.0;
};

struct Subject {
  std::string id;
  std::vector<Sequence> sequences;
};

struct Subset {
  std::string name;
  std::vector<Subject> subjects;
};

struct ClassNode {
  std::string name;  // "real" or "fake"
  int label = 0;
  std::vector<Subset> subsets;
};

struct FrameRef {
  std::size_t cls = 0, subset = 0, subject = 0, sequence = 0;
  std::size_t frame = 0;  // offset within the sequence's samplable range
  auto operator<=>(const FrameRef&) const = default;
};

// Class -> subset -> subject -> sequence tree for one split.
struct DatasetManifest {
  std::vector<ClassNode> classes;

  const Sequence& sequence(const FrameRef& r) const {
    return classes.at(r.cls).subsets.at(r.subset).subjects.at(r.subject).sequences.at(r.sequence);
  }
  int label(const FrameRef& r) const { return classes.at(r.cls).label; }

  std::size_t total_frames() const {
    std::size_t n = 0;
    for_each_sequence([&](const FrameRef&, const Sequence& s) { n += s.frame_count; });
    return n;
  }

  template <typename Fn>
  void for_each_sequence(Fn&& fn) const {
    for (std::size_t c = 0; c < classes.size(); ++c)
      for (std::size_t s = 0; s < classes[c].subsets.size(); ++s)
        for (std::size_t j = 0; j < classes[c].subsets[s].subjects.size(); ++j)
          for (std::size_t q = 0; q < classes[c].subsets[s].subjects[j].sequences.size(); ++q)
            fn(FrameRef{c, s, j, q, 0}, classes[c].subsets[s].subjects[j].sequences[q]);
  }

  template <typename Fn>
  void for_each_frame(Fn&& fn) const {
    for_each_sequence([&](FrameRef r, const Sequence& s) {
      for (std::size_t f = 0; f < s.frame_count; ++f) {
        r.frame = f;
        fn(r);
      }
    });
  }

  // Every level must be non-empty so that each sampling step is defined.
  void validate() const {
    require(!classes.empty(), "manifest: no classes");
    for (const auto& c : classes) {
      require(!c.subsets.empty(), "manifest: class '" + c.name + "' is empty");
      for (const auto& s : c.subsets) {
        require(!s.subjects.empty(), "manifest: subset '" + s.name + "' of class '" + c.name + "' has no subjects");
        for (const auto& j : s.subjects) {
          require(!j.sequences.empty(), "manifest: subject '" + j.id + "' has no sequences");
          for (const auto& q : j.sequences)
            require(q.frame_count > 0, "manifest: sequence '" + q.id + "' has no samplable frames");
        }
      }
    }
  }
};

struct SamplingPlan {
  double train_rate = 0.10;
  double val_rate = 0.20;
};

/**
 * Probability that one hierarchical draw (uniform class, subset, subject,
 * sequence, frame) returns `ref`.
 */
inline double frame_weight(const DatasetManifest& m, const FrameRef& r) {
  const auto& c = m.classes.at(r.cls);
  const auto& s = c.subsets.at(r.subset);
  const auto& j = s.subjects.at(r.subject);
  const auto& q = j.sequences.at(r.sequence);
  require(r.frame < q.frame_count, "frame_weight: frame outside sequence " + q.id);
  return 1.0 / static_cast<double>(m.classes.size()) / static_cast<double>(c.subsets.size()) /
         static_cast<double>(s.subjects.size()) / static_cast<double>(j.sequences.size()) /
         static_cast<double>(q.frame_count);
}

inline FrameRef draw_frame(const DatasetManifest& m, std::mt19937_64& rng) {
  auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
  FrameRef r;
  r.cls = pick(m.classes.size());
  const auto& c = m.classes[r.cls];
  r.subset = pick(c.subsets.size());
  const auto& s = c.subsets[r.subset];
  r.subject = pick(s.subjects.size());
  const auto& j = s.subjects[r.subject];
  r.sequence = pick(j.sequences.size());
  r.frame = pick(j.sequences[r.sequence].frame_count);
  return r;
}

// rate x (frames in the split) hierarchical draws with replacement.
inline std::vector<FrameRef> sample_epoch(const DatasetManifest& m, double rate, std::uint64_t seed) {
  require(rate > 0 && rate <= 1, "sample_epoch: rate must be in (0,1]");
  m.validate();
  const auto n = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(rate * static_cast<double>(m.total_frames()))));
  std::mt19937_64 rng(seed);
  std::vector<FrameRef> out(n);
  for (auto& r : out) r = draw_frame(m, rng);
  return out;
}

// JSON schema:
// {"classes": [{"name", "label", "subsets": [{"name", "subjects": [{"id",
//   "sequences": [{"id", "path", "first_frame", "frame_count", "fps"}]}]}]}]}
inline nlohmann::json to_json(const DatasetManifest& m) {
  using nlohmann::json;
  json classes = json::array();
  for (const auto& c : m.classes) {
    json subsets = json::array();
    for (const auto& s : c.subsets) {
      json subjects = json::array();
      for (const auto& j : s.subjects) {
        json seqs = json::array();
        for (const auto& q : j.sequences)
          seqs.push_back({{"id", q.id},
                          {"path", q.path},
                          {"first_frame", q.first_frame},
                          {"frame_count", q.frame_count},
                          {"fps", q.fps}});
        subjects.push_back({{"id", j.id}, {"sequences", seqs}});
      }
      subsets.push_back({{"name", s.name}, {"subjects", subjects}});
    }
    classes.push_back({{"name", c.name}, {"label", c.label}, {"subsets", subsets}});
  }
  return json{{"classes", classes}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    for (const auto& c : j.at("classes")) {
      ClassNode cn{c.at("name").get<std::string>(), c.value("label", c.at("name") == "real" ? 0 : 1), {}};
      for (const auto& s : c.at("subsets")) {
        Subset sn{s.at("name").get<std::string>(), {}};
        for (const auto& jj : s.at("subjects")) {
          Subject sub{jj.at("id").get<std::string>(), {}};
          for (const auto& q : jj.at("sequences"))
            sub.sequences.push_back({q.at("id").get<std::string>(), q.value("path", std::string{}),
                                     q.value("first_frame", std::size_t{0}), q.at("frame_count").get<std::size_t>(),
                                     q.value("fps", 25.0)});
          sn.subjects.push_back(std::move(sub));
        }
        cn.subsets.push_back(std::move(sn));
      }
      m.classes.push_back(std::move(cn));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

struct ManifestSplits {
  DatasetManifest train, val, test;
};

inline void save_splits(const std::filesystem::path& path, const ManifestSplits& s) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << nlohmann::json{{"train", to_json(s.train)}, {"val", to_json(s.val)}, {"test", to_json(s.test)}}.dump(1)
      << "\n";
}

inline ManifestSplits load_splits(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read manifest " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest " + path.string() + ": " + e.what());
  }
  ManifestSplits s;
  if (j.contains("train")) s.train = manifest_from_json(j["train"]);
  if (j.contains("val")) s.val = manifest_from_json(j["val"]);
  if (j.contains("test")) s.test = manifest_from_json(j["test"]);
  return s;
}

}  // namespace dfd::data
