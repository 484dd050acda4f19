#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "dfd/core/error.hpp"
#include "dfd/signal/image.hpp"

namespace dfd::data {

namespace fs = std::filesystem;

inline void write_png(const fs::path& path, const Image& img) {
  cv::Mat m(static_cast<int>(img.height), static_cast<int>(img.width), CV_8UC3);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      auto& px = m.at<cv::Vec3b>(static_cast<int>(y), static_cast<int>(x));
      for (std::size_t c = 0; c < 3; ++c) px[2 - static_cast<int>(c)] = Image::to_8bit(img.at(y, x, c));
    }
  if (!cv::imwrite(path.string(), m)) throw IoError("cannot write image " + path.string());
}

inline Image read_png(const fs::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (m.empty()) throw IoError("cannot read image " + path.string());
  Image img(static_cast<std::size_t>(m.cols), static_cast<std::size_t>(m.rows));
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const auto& px = m.at<cv::Vec3b>(static_cast<int>(y), static_cast<int>(x));
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = Image::from_8bit(px[2 - static_cast<int>(c)]);
    }
  return img;
}

inline std::string frame_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu.png", i);
  return buf;
}

// Writes frames as 000000.png, 000001.png, ... (the directory is created).
inline void write_frames(const fs::path& dir, const FrameSequence& video) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < video.size(); ++i) write_png(dir / frame_name(i), video.frames[i]);
}

// Reads every *.png in lexicographic order.
inline FrameSequence read_frames(const fs::path& dir, double fps = 25.0) {
  if (!fs::is_directory(dir)) throw IoError("not a frame directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  FrameSequence out;
  out.fps = fps;
  for (const auto& f : files) out.frames.push_back(read_png(f));
  for (const auto& f : out.frames)
    if (!f.same_size(out.frames.front())) throw IoError("frames in " + dir.string() + " differ in size");
  return out;
}

}  // namespace dfd::data
