#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "asymtrack/head.hpp"
#include "asymtrack/tensor.hpp"

namespace asymtrack {

// Binary per-token foreground mask over the H' x W' search grid.
struct TargetMask {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;  // 0.0 or 1.0, row-major

  int active_count() const {
    int n = 0;
    for (double v : values) n += v != 0.0 ? 1 : 0;
    return n;
  }
};

// A token is foreground iff its patch center lies inside the closed
// ground-truth rectangle; an empty intersection falls back to the single
// token nearest the box center.
inline TargetMask make_token_mask(const BBox& gt, int rows, int cols) {
  if (gt.w <= 0.0 || gt.h <= 0.0) throw std::invalid_argument("make_token_mask: degenerate box");
  if (rows <= 0 || cols <= 0) throw std::invalid_argument("make_token_mask: bad grid");
  TargetMask m;
  m.rows = rows;
  m.cols = cols;
  m.values.assign(static_cast<std::size_t>(rows) * cols, 0.0);
  double x0 = gt.cx - gt.w / 2.0, x1 = gt.cx + gt.w / 2.0;
  double y0 = gt.cy - gt.h / 2.0, y1 = gt.cy + gt.h / 2.0;
  int active = 0;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double px = (c + 0.5) / static_cast<double>(cols);
      double py = (r + 0.5) / static_cast<double>(rows);
      if (px >= x0 && px <= x1 && py >= y0 && py <= y1) {
        m.values[static_cast<std::size_t>(r) * cols + c] = 1.0;
        ++active;
      }
    }
  if (active == 0) {
    int best_r = 0, best_c = 0;
    double best = 1e300;
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) {
        double px = (c + 0.5) / static_cast<double>(cols);
        double py = (r + 0.5) / static_cast<double>(rows);
        double d2 = (px - gt.cx) * (px - gt.cx) + (py - gt.cy) * (py - gt.cy);
        if (d2 < best) {
          best = d2;
          best_r = r;
          best_c = c;
        }
      }
    m.values[static_cast<std::size_t>(best_r) * cols + best_c] = 1.0;
  }
  return m;
}

struct DistillConfig {
  double temperature = 2.0;
  bool normalize_by_mask = false;  // divide the feature loss also by sum(M_i)
  bool teacher_first_kl = false;   // conventional KL(p_t || p_s) instead
};

// Paired teacher/student taps for one batch. Feature tensors are joint
// (N_z + N_s) x D matrices; the mask applies to the N_s search rows only.
struct DistillBatch {
  std::vector<std::vector<Tensor>> student_feats;  // [B][K]
  std::vector<std::vector<Tensor>> teacher_feats;  // [B][K]
  std::vector<Tensor> student_logits;              // [B], H' x W'
  std::vector<Tensor> teacher_logits;              // [B], H' x W'
  std::vector<TargetMask> masks;                   // [B]
  int template_tokens = 0;                         // N_z rows receive weight 0

  std::size_t batch_size() const { return masks.size(); }
  std::size_t layer_count() const { return student_feats.empty() ? 0 : student_feats[0].size(); }
};

namespace detail {

// Expands the H'xW' token mask over the joint rows x D feature layout.
inline Tensor joint_feature_mask(const TargetMask& m, std::int64_t joint_rows, std::int64_t d,
                                 int template_tokens) {
  std::vector<double> v(static_cast<std::size_t>(joint_rows * d), 0.0);
  std::int64_t ns = static_cast<std::int64_t>(m.values.size());
  if (template_tokens + ns != joint_rows)
    throw std::invalid_argument("distill: mask size inconsistent with joint feature rows");
  for (std::int64_t t = 0; t < ns; ++t) {
    if (m.values[static_cast<std::size_t>(t)] == 0.0) continue;
    std::int64_t row = template_tokens + t;
    for (std::int64_t j = 0; j < d; ++j) v[static_cast<std::size_t>(row * d + j)] = 1.0;
  }
  return Tensor::from_data({joint_rows, d}, std::move(v));
}

}  // namespace detail

// Spatially weighted feature MSE: (1/(K*B)) sum_k sum_i ||M_i x_i^k - M_i y_i^k||^2.
inline Tensor feature_distill_loss(const DistillBatch& batch,
                                   const DistillConfig& cfg = DistillConfig{}) {
  std::size_t b = batch.batch_size();
  std::size_t k = batch.layer_count();
  if (b == 0 || k == 0) throw std::invalid_argument("feature_distill_loss: empty batch or no layers");
  if (batch.teacher_feats.size() != b || batch.student_feats.size() != b)
    throw std::invalid_argument("feature_distill_loss: batch size mismatch");
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t i = 0; i < b; ++i) {
    if (batch.student_feats[i].size() != k || batch.teacher_feats[i].size() != k)
      throw std::invalid_argument("feature_distill_loss: layer count mismatch");
    double mask_sum = 0.0;
    for (double v : batch.masks[i].values) mask_sum += v;
    for (std::size_t l = 0; l < k; ++l) {
      const Tensor& x = batch.student_feats[i][l];
      const Tensor& y = batch.teacher_feats[i][l];
      detail::check_same_shape(x, y, "feature_distill_loss");
      Tensor mask = detail::joint_feature_mask(batch.masks[i], x.shape()[0], x.shape()[1],
                                               batch.template_tokens);
      Tensor diff = sub(mul(mask, x), mul(mask, y));
      Tensor sq = sum(mul(diff, diff));
      if (cfg.normalize_by_mask && mask_sum > 0.0) sq = scale(sq, 1.0 / mask_sum);
      total = add(total, sq);
    }
  }
  return scale(total, 1.0 / (static_cast<double>(k) * static_cast<double>(b)));
}

// Masked temperature-scaled KL over confidence maps:
// (1/B) sum_i [ sum_j m_ij p_s,j ln(p_s,j / p_t,j) / sum_j m_ij ].
inline Tensor prediction_distill_loss(const DistillBatch& batch,
                                      const DistillConfig& cfg = DistillConfig{}) {
  std::size_t b = batch.batch_size();
  if (b == 0) throw std::invalid_argument("prediction_distill_loss: empty batch");
  if (batch.student_logits.size() != b || batch.teacher_logits.size() != b)
    throw std::invalid_argument("prediction_distill_loss: batch size mismatch");
  if (cfg.temperature <= 0.0)
    throw std::invalid_argument("prediction_distill_loss: temperature must be positive");
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t i = 0; i < b; ++i) {
    const TargetMask& m = batch.masks[i];
    double mask_sum = 0.0;
    for (double v : m.values) mask_sum += v;
    if (mask_sum <= 0.0) throw std::invalid_argument("prediction_distill_loss: all-zero mask");
    std::int64_t n = static_cast<std::int64_t>(m.values.size());
    Tensor sl = reshape(batch.student_logits[i], {n});
    Tensor tl = reshape(batch.teacher_logits[i], {n});
    Tensor ps = softmax_t(sl, cfg.temperature);
    Tensor pt = softmax_t(tl, cfg.temperature);
    Tensor mask = Tensor::from_data({n}, std::vector<double>(m.values));
    Tensor term;
    if (cfg.teacher_first_kl) {
      term = mul(pt, sub(vlog(pt), vlog(ps)));
    } else {
      term = mul(ps, sub(vlog(ps), vlog(pt)));
    }
    total = add(total, scale(sum(mul(mask, term)), 1.0 / mask_sum));
  }
  return scale(total, 1.0 / static_cast<double>(b));
}

}  // namespace asymtrack
