#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dfd/core/error.hpp"

namespace dfd::mining {

inline constexpr std::size_t kLandmarkCount = 66;

struct Point {
  double x = 0, y = 0;
};

struct LandmarkFrame {
  std::array<Point, kLandmarkCount> points{};
  std::array<double, kLandmarkCount> confidence{};
};

// One entry per video frame; frames the tracker lost are empty.
struct LandmarkTrack {
  std::size_t frame_width = 0;
  std::size_t frame_height = 0;
  std::vector<std::optional<LandmarkFrame>> frames;

  std::size_t size() const { return frames.size(); }
};

struct Box {
  double x0, y0, x1, y1;
  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double cx() const { return (x0 + x1) / 2; }
  double cy() const { return (y0 + y1) / 2; }
};

template <typename Points>
Box bounding_box(const Points& pts) {
  Box b{pts[0].x, pts[0].y, pts[0].x, pts[0].y};
  for (const auto& p : pts) {
    b.x0 = std::min(b.x0, p.x);
    b.y0 = std::min(b.y0, p.y);
    b.x1 = std::max(b.x1, p.x);
    b.y1 = std::max(b.y1, p.y);
  }
  return b;
}

/*
 * Text format, one line per frame:
 *   # width height            (header, optional)
 *   <index> x0 y0 c0 ... x65 y65 c65
 *   <index>                   (no landmarks for this frame)
 * Indices must be 0, 1, 2, ... in order.
 */
inline LandmarkTrack read_track(std::istream& in, const std::string& source = "<stream>") {
  LandmarkTrack track;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    if (line[line.find_first_not_of(" \t")] == '#') {
      std::string hash;
      ls >> hash >> track.frame_width >> track.frame_height;
      continue;
    }
    std::size_t index = 0;
    if (!(ls >> index)) throw IoError(source + ":" + std::to_string(lineno) + ": expected a frame index");
    if (index != track.frames.size())
      throw IoError(source + ":" + std::to_string(lineno) + ": frame index " + std::to_string(index) +
                    " out of order (expected " + std::to_string(track.frames.size()) + ")");
    std::vector<double> values;
    double v;
    while (ls >> v) values.push_back(v);
    if (!ls.eof()) throw IoError(source + ":" + std::to_string(lineno) + ": non-numeric field");
    if (values.empty()) {
      track.frames.emplace_back();
      continue;
    }
    if (values.size() != 3 * kLandmarkCount)
      throw IoError(source + ":" + std::to_string(lineno) + ": expected 198 values (66 x, y, confidence), got " +
                    std::to_string(values.size()));
    LandmarkFrame f;
    for (std::size_t k = 0; k < kLandmarkCount; ++k) {
      f.points[k] = {values[3 * k], values[3 * k + 1]};
      f.confidence[k] = values[3 * k + 2];
      if (!(f.confidence[k] >= 0 && f.confidence[k] <= 1))
        throw IoError(source + ":" + std::to_string(lineno) + ": confidence outside [0,1]");
    }
    track.frames.push_back(f);
  }
  return track;
}

inline LandmarkTrack read_track(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read landmark track " + path.string());
  return read_track(in, path.string());
}

inline void write_track(std::ostream& out, const LandmarkTrack& track) {
  out << "# " << track.frame_width << " " << track.frame_height << "\n" << std::setprecision(10);
  for (std::size_t i = 0; i < track.frames.size(); ++i) {
    out << i;
    if (const auto& f = track.frames[i])
      for (std::size_t k = 0; k < kLandmarkCount; ++k)
        out << " " << f->points[k].x << " " << f->points[k].y << " " << f->confidence[k];
    out << "\n";
  }
}

inline void write_track(const std::filesystem::path& path, const LandmarkTrack& track) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write landmark track " + path.string());
  write_track(out, track);
}

}  // namespace dfd::mining
