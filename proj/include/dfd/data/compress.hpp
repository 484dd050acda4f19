#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "dfd/core/error.hpp"
#include "dfd/core/log.hpp"
#include "dfd/data/extract.hpp"
#include "dfd/data/frame_io.hpp"
#include "dfd/signal/image.hpp"

namespace dfd::data {

// Constant-rate-factor setting; lossless bypasses quantization entirely.
struct Quality {
  bool lossless = false;
  int crf = 23;

  static Quality lossless_setting() { return {true, 0}; }
  static Quality crf_setting(int crf) { return {false, crf}; }
  std::string str() const { return lossless ? "lossless" : "crf" + std::to_string(crf); }
};

class EncoderClient {
 public:
  virtual ~EncoderClient() = default;
  virtual std::string name() const = 0;
  virtual FrameSequence encode(const FrameSequence& video, const Quality& q) = 0;
};

/*
 * Stand-in for a video encoder: each channel is split into 8x8 blocks, DCT
 * coefficients are rounded to multiples of step = 0.625 * 2^(crf/6) / 255,
 * and the block is transformed back. Same doubling-per-6-steps mapping as the
 * H.264 quantizer scale.
 */
class StubEncoder : public EncoderClient {
 public:
  static double quantization_step(int crf) { return 0.625 * std::pow(2.0, crf / 6.0) / 255.0; }

  std::string name() const override { return "stub-dct"; }

  FrameSequence encode(const FrameSequence& video, const Quality& q) override {
    if (q.lossless) return video;
    require(q.crf >= 0 && q.crf <= 51, "stub encoder: crf must be in [0,51]");
    const double step = quantization_step(q.crf);
    FrameSequence out;
    out.fps = video.fps;
    for (const auto& f : video.frames) out.frames.push_back(encode_frame(f, step));
    return out;
  }

  static Image encode_frame(const Image& img, double step) {
    const int h = static_cast<int>(img.height), w = static_cast<int>(img.width);
    const int ph = (h + 7) / 8 * 8, pw = (w + 7) / 8 * 8;
    Image out(img.width, img.height);
    cv::Mat plane(ph, pw, CV_64F), block, coef;
    for (std::size_t c = 0; c < 3; ++c) {
      for (int y = 0; y < ph; ++y)
        for (int x = 0; x < pw; ++x)
          plane.at<double>(y, x) = img.at(static_cast<std::size_t>(std::min(y, h - 1)),
                                          static_cast<std::size_t>(std::min(x, w - 1)), c);
      for (int by = 0; by < ph; by += 8)
        for (int bx = 0; bx < pw; bx += 8) {
          cv::Mat roi = plane(cv::Rect(bx, by, 8, 8));
          cv::dct(roi, coef);
          for (int i = 0; i < 64; ++i) {
            double& v = coef.at<double>(i / 8, i % 8);
            v = std::round(v / step) * step;
          }
          cv::idct(coef, block);
          block.copyTo(roi);
        }
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) =
              static_cast<float>(std::clamp(plane.at<double>(y, x), 0.0, 1.0));
    }
    return out;
  }
};

/*
 * Shells out to an H.264 encoder (ffmpeg with libx264). The binary is taken
 * from $DFD_ENCODER, else "ffmpeg" on PATH. Contract: frames directory in,
 * frames directory out.
 */
class FfmpegEncoder : public EncoderClient {
 public:
  explicit FfmpegEncoder(std::string binary = "") : binary_(std::move(binary)) {
    if (binary_.empty()) {
      const char* env = std::getenv("DFD_ENCODER");
      binary_ = env && *env ? env : "ffmpeg";
    }
  }

  std::string name() const override { return "ffmpeg:" + binary_; }

  bool available() const { return run(quote(binary_) + " -hide_banner -version > /dev/null 2>&1") == 0; }

  void encode_directory(const fs::path& in_dir, const fs::path& out_dir, const Quality& q, double fps) const {
    fs::create_directories(out_dir);
    const fs::path tmp = out_dir / "encoded.mp4";
    const std::string rate = std::to_string(fps);
    const std::string quality = q.lossless ? "-qp 0" : "-crf " + std::to_string(q.crf);
    const std::string enc = quote(binary_) + " -loglevel error -y -framerate " + rate + " -i " +
                            quote((in_dir / "%06d.png").string()) + " -c:v libx264 -preset medium " + quality +
                            (q.lossless ? " -pix_fmt yuv444p " : " -pix_fmt yuv420p ") + quote(tmp.string());
    if (run(enc) != 0) throw IoError("encoder failed: " + enc);
    const std::string dec =
        quote(binary_) + " -loglevel error -y -i " + quote(tmp.string()) + " " + quote((out_dir / "%06d.png").string());
    if (run(dec) != 0) throw IoError("decoder failed: " + dec);
    fs::remove(tmp);
  }

  FrameSequence encode(const FrameSequence& video, const Quality& q) override {
    const fs::path root = fs::temp_directory_path() / ("dfd_enc_" + std::to_string(std::random_device{}()));
    write_frames(root / "in", video);
    encode_directory(root / "in", root / "out", q, video.fps);
    FrameSequence out = read_frames(root / "out", video.fps);
    fs::remove_all(root);
    return out;
  }

 private:
  static std::string quote(const std::string& s) {
    std::string out = "'";
    for (char ch : s) out += ch == '\'' ? std::string("'\\''") : std::string(1, ch);
    return out + "'";
  }
  static int run(const std::string& cmd) { return std::system(cmd.c_str()); }

  std::string binary_;
};

// External encoder if present, stub otherwise (strict mode refuses the stub).
inline std::unique_ptr<EncoderClient> make_encoder(bool strict, const std::string& binary = "") {
  auto ff = std::make_unique<FfmpegEncoder>(binary);
  if (ff->available()) return ff;
  if (strict) throw IoError("external encoder '" + ff->name() + "' not available and strict mode is set");
  log().warn("external encoder not available; falling back to the DCT stub");
  return std::make_unique<StubEncoder>();
}

// Ordered record of the stages a video went through.
struct PipelineTrace {
  std::vector<std::string> stages;
  void add(std::string s) { stages.push_back(std::move(s)); }
};

struct CompressionPipelineConfig {
  double target_side = 258;
  Quality quality = Quality::crf_setting(23);
  ExtractConfig extract{};
};

// resize -> compress -> crop, the order used for the compression experiments.
inline ExtractedFrames compression_pipeline(const FrameSequence& video, const BoxTrack& boxes,
                                            const CompressionPipelineConfig& cfg, EncoderClient& encoder,
                                            PipelineTrace* trace = nullptr) {
  NormalizedVideo norm = normalize_resolution(video, boxes, cfg.target_side);
  if (trace) trace->add("normalize_resolution");
  FrameSequence encoded = encoder.encode(norm.video, cfg.quality);
  if (trace) trace->add("compress:" + encoder.name() + ":" + cfg.quality.str());
  ExtractedFrames crops = extract_detector_frames(encoded, norm.boxes, cfg.extract);
  if (trace) trace->add("extract_detector_frames");
  return crops;
}

}  // namespace dfd::data
