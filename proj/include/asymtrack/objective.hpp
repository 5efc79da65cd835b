#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "asymtrack/head.hpp"
#include "asymtrack/tensor.hpp"

namespace asymtrack {

struct LossWeights {
  double lambda1 = 5.0;  // L1
  double lambda2 = 2.0;  // GIoU
  double lambda3 = 1.0;  // feature distillation
  double lambda4 = 1.0;  // prediction distillation
};

// Supervision targets for the center head: Gaussian heatmap with value 1 at
// the ground-truth center cell, plus sub-cell offset and normalized size.
struct TargetMaps {
  int rows = 0;
  int cols = 0;
  std::vector<double> heatmap;  // in [0,1], exactly one cell equals 1
  int center_row = 0;
  int center_col = 0;
  double offset_x = 0;  // in [0,1)
  double offset_y = 0;
  double size_w = 0;
  double size_h = 0;
};

inline TargetMaps make_target_maps(const BBox& gt, int rows, int cols) {
  if (!(gt.w > 0.0 && gt.h > 0.0)) throw std::invalid_argument("make_target_maps: degenerate box");
  TargetMaps t;
  t.rows = rows;
  t.cols = cols;
  double fx = gt.cx * cols, fy = gt.cy * rows;
  t.center_col = std::min(cols - 1, std::max(0, static_cast<int>(std::floor(fx))));
  t.center_row = std::min(rows - 1, std::max(0, static_cast<int>(std::floor(fy))));
  t.offset_x = fx - t.center_col;
  t.offset_y = fy - t.center_row;
  t.size_w = gt.w;
  t.size_h = gt.h;
  double sigma = std::max(1.0, std::min(gt.w, gt.h) * rows / 6.0);
  t.heatmap.assign(static_cast<std::size_t>(rows) * cols, 0.0);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double dr = r - t.center_row, dc = c - t.center_col;
      t.heatmap[static_cast<std::size_t>(r) * cols + c] =
          std::exp(-(dr * dr + dc * dc) / (2.0 * sigma * sigma));
    }
  return t;
}

// Penalty-reduced pixelwise focal loss (alpha = 2, beta = 4), normalized by
// the number of positive cells.
inline Tensor focal_loss(const Tensor& score_logits, const TargetMaps& targets) {
  std::int64_t n = score_logits.numel();
  if (n != static_cast<std::int64_t>(targets.heatmap.size()))
    throw std::invalid_argument("focal_loss: shape mismatch");
  std::vector<double> pos(static_cast<std::size_t>(n), 0.0);
  std::vector<double> negw(static_cast<std::size_t>(n), 0.0);
  int n_pos = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    double t = targets.heatmap[static_cast<std::size_t>(i)];
    if (t == 1.0) {
      pos[static_cast<std::size_t>(i)] = 1.0;
      ++n_pos;
    } else {
      double u = 1.0 - t;
      negw[static_cast<std::size_t>(i)] = u * u * u * u;  // (1 - t)^beta
    }
  }
  if (n_pos == 0) throw std::invalid_argument("focal_loss: no positive cell");
  Tensor p = clamp(sigmoid(reshape(score_logits, {n})), 1e-12, 1.0 - 1e-12);
  Tensor one_minus_p = shift(scale(p, -1.0), 1.0);
  Tensor pos_mask = Tensor::from_data({n}, std::move(pos));
  Tensor neg_w = Tensor::from_data({n}, std::move(negw));
  Tensor pos_term = mul(pos_mask, mul(mul(one_minus_p, one_minus_p), vlog(p)));
  Tensor neg_term = mul(neg_w, mul(mul(p, p), vlog(one_minus_p)));
  return scale(add(sum(pos_term), sum(neg_term)), -1.0 / static_cast<double>(n_pos));
}

namespace detail {

inline Tensor element(const Tensor& t, std::int64_t i) {
  return reshape(slice_rows(reshape(t, {t.numel(), 1}), i, i + 1), {1});
}

}  // namespace detail

// 1 - GIoU for boxes given as rank-1 (cx, cy, w, h) tensors; differentiable
// through both arguments.
inline Tensor giou_loss(const Tensor& pred, const Tensor& gt) {
  if (pred.numel() != 4 || gt.numel() != 4)
    throw std::invalid_argument("giou_loss: boxes must have 4 coordinates");
  if (pred.at(2) <= 0.0 || pred.at(3) <= 0.0 || gt.at(2) <= 0.0 || gt.at(3) <= 0.0)
    throw std::invalid_argument("giou_loss: zero-area box");
  auto corners = [](const Tensor& b) {
    Tensor cx = detail::element(b, 0), cy = detail::element(b, 1);
    Tensor w = detail::element(b, 2), h = detail::element(b, 3);
    Tensor hw = scale(w, 0.5), hh = scale(h, 0.5);
    return std::array<Tensor, 6>{sub(cx, hw), sub(cy, hh), add(cx, hw), add(cy, hh), w, h};
  };
  auto [ax0, ay0, ax1, ay1, aw, ah] = corners(pred);
  auto [bx0, by0, bx1, by1, bw, bh] = corners(gt);
  Tensor zero = Tensor::scalar(0.0);
  Tensor iw = vmax(zero, sub(vmin(ax1, bx1), vmax(ax0, bx0)));
  Tensor ih = vmax(zero, sub(vmin(ay1, by1), vmax(ay0, by0)));
  Tensor inter = mul(iw, ih);
  Tensor uni = sub(add(mul(aw, ah), mul(bw, bh)), inter);
  Tensor iou = div(inter, uni);
  Tensor ew = sub(vmax(ax1, bx1), vmin(ax0, bx0));
  Tensor eh = sub(vmax(ay1, by1), vmin(ay0, by0));
  Tensor enc = mul(ew, eh);
  Tensor giou = sub(iou, div(sub(enc, uni), enc));
  return sub(Tensor::scalar(1.0), giou);
}

inline Tensor giou_loss(const BBox& pred, const BBox& gt) {
  return giou_loss(Tensor::from_data({4}, {pred.cx, pred.cy, pred.w, pred.h}),
                   Tensor::from_data({4}, {gt.cx, gt.cy, gt.w, gt.h}));
}

// Mean absolute difference over the 4 normalized coordinates.
inline Tensor l1_box_loss(const Tensor& pred, const Tensor& gt) {
  if (pred.numel() != 4 || gt.numel() != 4)
    throw std::invalid_argument("l1_box_loss: boxes must have 4 coordinates");
  return mean(vabs(sub(pred, gt)));
}

inline Tensor l1_box_loss(const BBox& pred, const BBox& gt) {
  return l1_box_loss(Tensor::from_data({4}, {pred.cx, pred.cy, pred.w, pred.h}),
                     Tensor::from_data({4}, {gt.cx, gt.cy, gt.w, gt.h}));
}

// L = L_cls + l1*L_1 + l2*L_GIoU + l3*L_feat + l4*L_pred
inline Tensor total_loss(const Tensor& cls, const Tensor& l1, const Tensor& giou,
                         const Tensor& feat, const Tensor& pred, const LossWeights& w) {
  Tensor t = add(cls, scale(l1, w.lambda1));
  t = add(t, scale(giou, w.lambda2));
  t = add(t, scale(feat, w.lambda3));
  return add(t, scale(pred, w.lambda4));
}

// Predicted box decoded at the ground-truth center cell, as a differentiable
// (cx, cy, w, h) tensor; the regression losses are evaluated on this box.
inline Tensor decode_at_center(const HeadOutput& out, const TargetMaps& t) {
  std::int64_t rows = t.rows, cols = t.cols;
  std::int64_t cell = static_cast<std::int64_t>(t.center_row) * cols + t.center_col;
  Tensor off_x = detail::element(out.offset, cell);
  Tensor off_y = detail::element(out.offset, rows * cols + cell);
  Tensor sz_w = detail::element(out.size, cell);
  Tensor sz_h = detail::element(out.size, rows * cols + cell);
  Tensor cx = scale(shift(off_x, static_cast<double>(t.center_col)), 1.0 / static_cast<double>(cols));
  Tensor cy = scale(shift(off_y, static_cast<double>(t.center_row)), 1.0 / static_cast<double>(rows));
  return reshape(concat_rows({reshape(cx, {1, 1}), reshape(cy, {1, 1}), reshape(sz_w, {1, 1}),
                              reshape(sz_h, {1, 1})}),
                 {4});
}

}  // namespace asymtrack
