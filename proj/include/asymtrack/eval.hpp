#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "asymtrack/backbone.hpp"
#include "asymtrack/distill.hpp"
#include "asymtrack/image.hpp"

namespace asymtrack {

// One-pass evaluation result. Success thresholds 0:0.05:1 (21 points, strict
// IoU > t); precision thresholds 0..50 px step 1 (center error <= d).
struct OPEResult {
  std::vector<double> center_errors;  // per scored frame, pixels
  std::vector<double> ious;
  std::vector<double> precision_curve;  // 51 values
  std::vector<double> success_curve;    // 21 values
  double precision_at_20 = 0.0;
  double success_auc = 0.0;
};

inline OPEResult ope_evaluate(const std::vector<Rect>& pred, const std::vector<Rect>& gt) {
  if (pred.size() != gt.size()) throw std::invalid_argument("ope_evaluate: length mismatch");
  if (pred.empty()) throw std::invalid_argument("ope_evaluate: empty input");
  OPEResult r;
  for (std::size_t i = 1; i < pred.size(); ++i) {  // frame 0 is the initialization
    double dx = pred[i].cx() - gt[i].cx(), dy = pred[i].cy() - gt[i].cy();
    r.center_errors.push_back(std::sqrt(dx * dx + dy * dy));
    r.ious.push_back(rect_iou(pred[i], gt[i]));
  }
  double n = static_cast<double>(r.center_errors.size());
  r.precision_curve.resize(51, 0.0);
  for (int d = 0; d <= 50; ++d) {
    int count = 0;
    for (double e : r.center_errors)
      if (e <= static_cast<double>(d)) ++count;
    r.precision_curve[static_cast<std::size_t>(d)] = n > 0 ? count / n : 0.0;
  }
  r.success_curve.resize(21, 0.0);
  for (int k = 0; k <= 20; ++k) {
    double t = 0.05 * k;
    int count = 0;
    for (double iou : r.ious)
      if (iou > t) ++count;
    r.success_curve[static_cast<std::size_t>(k)] = n > 0 ? count / n : 0.0;
  }
  r.precision_at_20 = r.precision_curve[20];
  double s = 0.0;
  for (double v : r.success_curve) s += v;
  r.success_auc = s / 21.0;
  return r;
}

// Per-layer cosine similarity between aligned student/teacher taps, over the
// (optionally masked) search-token features.
inline std::vector<double> layer_cosine_similarity(const std::vector<TokenSeq>& student,
                                                   const std::vector<TokenSeq>& teacher,
                                                   int template_tokens,
                                                   const TargetMask* mask = nullptr) {
  if (student.size() != teacher.size())
    throw std::invalid_argument("layer_cosine_similarity: tap count mismatch");
  std::vector<double> sims;
  for (std::size_t k = 0; k < student.size(); ++k) {
    const auto& u = student[k].tokens;
    const auto& v = teacher[k].tokens;
    if (u.shape() != v.shape())
      throw std::invalid_argument("layer_cosine_similarity: tap shape mismatch");
    std::int64_t rows = u.shape()[0], d = u.shape()[1];
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (std::int64_t t = template_tokens; t < rows; ++t) {
      std::int64_t s_idx = t - template_tokens;
      if (mask && mask->values[static_cast<std::size_t>(s_idx)] == 0.0) continue;
      for (std::int64_t j = 0; j < d; ++j) {
        double a = u.data()[static_cast<std::size_t>(t * d + j)];
        double b = v.data()[static_cast<std::size_t>(t * d + j)];
        dot += a * b;
        nu += a * a;
        nv += b * b;
      }
    }
    if (nu == 0.0 || nv == 0.0)
      throw std::runtime_error("layer_cosine_similarity: zero-norm feature vector");
    sims.push_back(dot / (std::sqrt(nu) * std::sqrt(nv)));
  }
  return sims;
}

// Writes the (penalized) probability map as a graymap upsampled by `cell`
// pixels per grid cell, normalized so the max cell is white.
inline void dump_score_map(const std::vector<double>& prob, int rows, int cols, int cell,
                           const std::string& path) {
  if (static_cast<std::size_t>(rows) * cols != prob.size())
    throw std::invalid_argument("dump_score_map: size mismatch");
  double mx = 0.0;
  for (double v : prob) mx = std::max(mx, v);
  std::vector<double> img(static_cast<std::size_t>(rows) * cell * cols * cell);
  for (int r = 0; r < rows * cell; ++r)
    for (int c = 0; c < cols * cell; ++c) {
      double v = prob[static_cast<std::size_t>(r / cell) * cols + c / cell];
      img[static_cast<std::size_t>(r) * cols * cell + c] = mx > 0.0 ? v / mx : 0.0;
    }
  write_pgm(img, rows * cell, cols * cell, path);
}

// Plain-text report plus CSV curves for one evaluated sequence set.
inline void write_ope_report(const OPEResult& r, const std::string& report_path,
                             const std::string& curves_csv_path) {
  std::ofstream f(report_path);
  if (!f) throw std::runtime_error("write_ope_report: cannot open " + report_path);
  char buf[128];
  std::snprintf(buf, sizeof(buf), "frames_scored  %zu\n", r.ious.size());
  f << buf;
  std::snprintf(buf, sizeof(buf), "precision@20   %.6f\n", r.precision_at_20);
  f << buf;
  std::snprintf(buf, sizeof(buf), "success_auc    %.6f\n", r.success_auc);
  f << buf;
  std::ofstream c(curves_csv_path);
  if (!c) throw std::runtime_error("write_ope_report: cannot open " + curves_csv_path);
  c << "threshold,precision\n";
  for (std::size_t d = 0; d < r.precision_curve.size(); ++d) {
    std::snprintf(buf, sizeof(buf), "%zu,%.6f\n", d, r.precision_curve[d]);
    c << buf;
  }
  c << "iou_threshold,success\n";
  for (std::size_t k = 0; k < r.success_curve.size(); ++k) {
    std::snprintf(buf, sizeof(buf), "%.2f,%.6f\n", 0.05 * static_cast<double>(k),
                  r.success_curve[k]);
    c << buf;
  }
}

}  // namespace asymtrack
