#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "asymtrack/image.hpp"
#include "asymtrack/rng.hpp"

namespace asymtrack {

// Deterministic synthetic tracking scene: a textured rectangle moving over a
// noisy background, with optional occluder and distractor rectangles.
struct SceneConfig {
  int frame_width = 160;
  int frame_height = 120;
  int num_frames = 60;
  std::uint64_t seed = 1;
  double background_noise = 0.08;
  std::uint64_t texture_seed = 7;
  double start_x = 60.0;  // target center, pixels
  double start_y = 50.0;
  double vel_x = 0.8;  // per-frame velocity, pixels
  double vel_y = 0.4;
  double target_w = 28.0;
  double target_h = 22.0;
  double scale_drift = 0.0;       // per-frame multiplicative size drift
  double appearance_drift = 0.0;  // per-frame texture phase shift
  double brightness_drift = 0.0;  // per-frame additive gain change on the target
  std::vector<std::pair<int, int>> occlusions;  // inclusive frame ranges
  int distractors = 0;
  double distractor_similarity = 0.7;
};

struct SyntheticSequence {
  std::vector<Image> frames;
  std::vector<Rect> gt;  // one box per frame, defined through occlusions
};

namespace detail {

struct TargetTexture {
  double base[3];
  double amp[3];
  double freq_u[3];
  double freq_v[3];
  double phase[3];
};

inline TargetTexture make_texture(std::uint64_t seed) {
  Rng rng(seed * 0x9e3779b97f4a7c15ULL + 1);
  TargetTexture t;
  for (int c = 0; c < 3; ++c) {
    t.base[c] = rng.uniform(0.3, 0.8);
    t.amp[c] = rng.uniform(0.1, 0.25);
    t.freq_u[c] = rng.uniform(1.0, 4.0);
    t.freq_v[c] = rng.uniform(1.0, 4.0);
    t.phase[c] = rng.uniform(0.0, 6.2831853);
  }
  return t;
}

inline double texture_at(const TargetTexture& t, int c, double u, double v, double drift,
                         double gain = 1.0) {
  constexpr double kTau = 6.28318530717958647692;
  double x = t.base[c] + t.amp[c] * std::sin(kTau * (t.freq_u[c] * u + t.freq_v[c] * v) +
                                             t.phase[c] + drift);
  return std::clamp(gain * x, 0.0, 1.0);
}

inline void draw_rect(Image& img, const Rect& r, const TargetTexture& tex, double drift,
                      double gain = 1.0) {
  int x0 = std::max(0, static_cast<int>(std::floor(r.x)));
  int y0 = std::max(0, static_cast<int>(std::floor(r.y)));
  int x1 = std::min(img.width, static_cast<int>(std::ceil(r.x + r.w)));
  int y1 = std::min(img.height, static_cast<int>(std::ceil(r.y + r.h)));
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      double u = (x - r.x) / r.w, v = (y - r.y) / r.h;
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = texture_at(tex, c, u, v, drift, gain);
    }
}

}  // namespace detail

inline bool frame_occluded(const SceneConfig& cfg, int frame) {
  for (auto [a, b] : cfg.occlusions)
    if (frame >= a && frame <= b) return true;
  return false;
}

inline SyntheticSequence generate_sequence(const SceneConfig& cfg) {
  if (cfg.num_frames < 1) throw std::invalid_argument("generate_sequence: need at least one frame");
  // pre-validate the path: the target box must stay at least partly in frame
  for (int f = 0; f < cfg.num_frames; ++f) {
    double s = std::pow(1.0 + cfg.scale_drift, f);
    double w = cfg.target_w * s, h = cfg.target_h * s;
    double cx = cfg.start_x + cfg.vel_x * f, cy = cfg.start_y + cfg.vel_y * f;
    if (cx + w / 2 <= 0 || cx - w / 2 >= cfg.frame_width || cy + h / 2 <= 0 ||
        cy - h / 2 >= cfg.frame_height)
      throw std::invalid_argument("generate_sequence: target leaves the frame at frame " +
                                  std::to_string(f));
  }
  detail::TargetTexture target_tex = detail::make_texture(cfg.texture_seed);
  detail::TargetTexture occluder_tex = detail::make_texture(cfg.texture_seed + 101);
  std::vector<detail::TargetTexture> distractor_tex;
  std::vector<double> dx0, dy0, dvx, dvy;
  {
    Rng drng(cfg.seed * 31 + 17);
    for (int i = 0; i < cfg.distractors; ++i) {
      detail::TargetTexture t = detail::make_texture(cfg.texture_seed + 1000 + i);
      // blend toward the target texture for configurable similarity
      for (int c = 0; c < 3; ++c) {
        t.base[c] = cfg.distractor_similarity * target_tex.base[c] +
                    (1 - cfg.distractor_similarity) * t.base[c];
        t.amp[c] = cfg.distractor_similarity * target_tex.amp[c] +
                   (1 - cfg.distractor_similarity) * t.amp[c];
      }
      distractor_tex.push_back(t);
      dx0.push_back(drng.uniform(0.2, 0.8) * cfg.frame_width);
      dy0.push_back(drng.uniform(0.2, 0.8) * cfg.frame_height);
      dvx.push_back(drng.uniform(-1.0, 1.0));
      dvy.push_back(drng.uniform(-1.0, 1.0));
    }
  }
  SyntheticSequence seq;
  seq.frames.reserve(static_cast<std::size_t>(cfg.num_frames));
  seq.gt.reserve(static_cast<std::size_t>(cfg.num_frames));
  for (int f = 0; f < cfg.num_frames; ++f) {
    Rng frng(cfg.seed * 1000003ULL + static_cast<std::uint64_t>(f));
    Image img(cfg.frame_height, cfg.frame_width);
    for (auto& v : img.pix) v = std::clamp(0.45 + frng.uniform(-1.0, 1.0) * cfg.background_noise, 0.0, 1.0);
    double drift = cfg.appearance_drift * f;
    for (int i = 0; i < cfg.distractors; ++i) {
      Rect dr{dx0[static_cast<std::size_t>(i)] + dvx[static_cast<std::size_t>(i)] * f - cfg.target_w / 2,
              dy0[static_cast<std::size_t>(i)] + dvy[static_cast<std::size_t>(i)] * f - cfg.target_h / 2,
              cfg.target_w, cfg.target_h};
      detail::draw_rect(img, dr, distractor_tex[static_cast<std::size_t>(i)], drift);
    }
    double s = std::pow(1.0 + cfg.scale_drift, f);
    double w = cfg.target_w * s, h = cfg.target_h * s;
    double cx = cfg.start_x + cfg.vel_x * f, cy = cfg.start_y + cfg.vel_y * f;
    Rect box{cx - w / 2, cy - h / 2, w, h};
    double gain = std::clamp(1.0 + cfg.brightness_drift * f, 0.25, 2.0);
    detail::draw_rect(img, box, target_tex, drift, gain);
    if (frame_occluded(cfg, f)) {
      // occluder centered on the target, covering >= 70% of its area
      Rect occ{cx - 0.475 * w, cy - 0.475 * h, 0.95 * w, 0.95 * h};
      detail::draw_rect(img, occ, occluder_tex, 0.0);
    }
    seq.frames.push_back(std::move(img));
    seq.gt.push_back(box);  // ground truth stays defined through occlusions
  }
  return seq;
}

// ----- ground-truth / result files: "x,y,w,h" per line, pixels -----

inline void write_boxes(const std::vector<Rect>& boxes, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_boxes: cannot open " + path);
  char buf[128];
  for (const auto& b : boxes) {
    std::snprintf(buf, sizeof(buf), "%.4f,%.4f,%.4f,%.4f\n", b.x, b.y, b.w, b.h);
    f << buf;
  }
}

inline std::vector<Rect> read_boxes(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("read_boxes: cannot open " + path);
  std::vector<Rect> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    Rect r;
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf", &r.x, &r.y, &r.w, &r.h) != 4)
      throw std::runtime_error("read_boxes: malformed line in " + path + ": " + line);
    out.push_back(r);
  }
  return out;
}

// Writes frames as zero-padded PPM files plus groundtruth.txt.
inline void write_sequence(const SyntheticSequence& seq, const std::string& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "%06zu.ppm", i);
    write_ppm(seq.frames[i], dir + "/" + name);
  }
  write_boxes(seq.gt, dir + "/groundtruth.txt");
}

inline SyntheticSequence read_sequence(const std::string& dir) {
  SyntheticSequence seq;
  seq.gt = read_boxes(dir + "/groundtruth.txt");
  for (std::size_t i = 0; i < seq.gt.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "%06zu.ppm", i);
    seq.frames.push_back(read_ppm(dir + "/" + name));
  }
  return seq;
}

}  // namespace asymtrack
