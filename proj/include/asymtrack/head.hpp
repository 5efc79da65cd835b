#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "asymtrack/backbone.hpp"
#include "asymtrack/tensor.hpp"

namespace asymtrack {

// Box in normalized search-crop coordinates, center convention.
struct BBox {
  double cx = 0, cy = 0, w = 0, h = 0;

  bool valid() const {
    return cx >= 0.0 && cx <= 1.0 && cy >= 0.0 && cy <= 1.0 && w > 0.0 && w <= 1.0 && h > 0.0 &&
           h <= 1.0;
  }
};

struct ConvBnParams {
  Tensor conv_weight;  // (out, in, k, k)
  Tensor conv_bias;    // out
  Tensor bn_gamma;     // out
  Tensor bn_beta;      // out
  std::vector<double> bn_mean;  // fixed buffers (inference-mode statistics)
  std::vector<double> bn_var;
};

struct HeadBranchParams {
  std::vector<ConvBnParams> convs;  // four 3x3 Conv-BN-ReLU stages
  Tensor out_weight;                // (out_ch, in, 1, 1)
  Tensor out_bias;
};

struct HeadConfig {
  int embed_dim = 192;
  // output channels of the four Conv-BN-ReLU stages: D, D/2, D/4, D/8
  std::vector<int> stage_channels(int d) const { return {d, d / 2, d / 4, d / 8}; }
};

struct HeadParams {
  HeadBranchParams score;   // 1 channel
  HeadBranchParams offset;  // 2 channels
  HeadBranchParams size;    // 2 channels
};

struct HeadOutput {
  Tensor score_logits;  // H' x W'
  Tensor offset;        // 2 x H' x W', sigmoid, sub-cell displacement
  Tensor size;          // 2 x H' x W', sigmoid, normalized extents
};

inline HeadBranchParams init_head_branch(int embed_dim, int out_channels, Rng& rng,
                                         double out_bias_init = 0.0) {
  if (embed_dim % 8 != 0)
    throw std::invalid_argument("head: embed_dim must be divisible by 8");
  HeadBranchParams b;
  std::vector<int> outs = HeadConfig{}.stage_channels(embed_dim);
  int in = embed_dim;
  for (int oc : outs) {
    ConvBnParams c;
    double s = 1.0 / std::sqrt(static_cast<double>(in * 9));
    c.conv_weight = Tensor::param({oc, in, 3, 3}, rng, s);
    c.conv_bias = Tensor::zeros({oc}).set_requires_grad(true);
    c.bn_gamma = Tensor::full({oc}, 1.0).set_requires_grad(true);
    c.bn_beta = Tensor::zeros({oc}).set_requires_grad(true);
    c.bn_mean.assign(static_cast<std::size_t>(oc), 0.0);
    c.bn_var.assign(static_cast<std::size_t>(oc), 1.0);
    b.convs.push_back(std::move(c));
    in = oc;
  }
  b.out_weight = Tensor::param({out_channels, in, 1, 1}, rng, 1.0 / std::sqrt(static_cast<double>(in)));
  b.out_bias = Tensor::full({out_channels}, out_bias_init).set_requires_grad(true);
  return b;
}

inline HeadParams init_head(int embed_dim, Rng& rng) {
  HeadParams h;
  // Prior-probability bias on the score logits (pi = 0.01). Starting with the
  // negatives already satisfied keeps the focal gradient from collapsing the
  // branch to a constant-bias solution before the features can specialize.
  h.score = init_head_branch(embed_dim, 1, rng, std::log(0.01 / 0.99));
  h.offset = init_head_branch(embed_dim, 2, rng);
  // Sizes start at sigmoid(bias) = 0.25, the typical target extent inside a
  // 4x search window. Starting at 0.5 makes every early gradient push the
  // whole branch downward, which tends to zero out the ReLU features.
  h.size = init_head_branch(embed_dim, 2, rng, std::log(0.25 / 0.75));
  return h;
}

inline void visit_head_branch(HeadBranchParams& b, const std::string& prefix,
                              const ParamVisitor& fn) {
  for (std::size_t i = 0; i < b.convs.size(); ++i) {
    std::string p = prefix + ".conv" + std::to_string(i);
    fn(p + ".weight", b.convs[i].conv_weight);
    fn(p + ".bias", b.convs[i].conv_bias);
    fn(p + ".bn.gamma", b.convs[i].bn_gamma);
    fn(p + ".bn.beta", b.convs[i].bn_beta);
  }
  fn(prefix + ".out.weight", b.out_weight);
  fn(prefix + ".out.bias", b.out_bias);
}

inline void visit_head(HeadParams& h, const std::string& prefix, const ParamVisitor& fn) {
  visit_head_branch(h.score, prefix + ".score", fn);
  visit_head_branch(h.offset, prefix + ".offset", fn);
  visit_head_branch(h.size, prefix + ".size", fn);
}

inline Tensor head_branch_forward(const Tensor& feat_chw, const HeadBranchParams& b) {
  Tensor x = feat_chw;
  for (const auto& c : b.convs) {
    x = conv2d(x, c.conv_weight, c.conv_bias, 1);
    x = batch_norm_chw(x, c.bn_gamma, c.bn_beta, c.bn_mean, c.bn_var);
    x = relu(x);
  }
  return conv2d(x, b.out_weight, b.out_bias, 0);
}

// Consumes the N_s search tokens of the final joint features, reshaped onto
// the H' x W' grid, and runs the three parallel branches.
inline HeadOutput head_forward(const TokenSeq& joint, const HeadParams& params,
                               const BackboneConfig& cfg) {
  std::int64_t ns = cfg.search_tokens();
  std::int64_t nz = joint.count() - ns;
  if (nz < 0) throw std::invalid_argument("head_forward: too few tokens");
  std::int64_t g = static_cast<std::int64_t>(std::llround(std::sqrt(static_cast<double>(ns))));
  if (g * g != ns)
    throw std::invalid_argument("head_forward: search token count is not a perfect square");
  std::int64_t d = joint.dim();
  // (N_s, D) -> (D, H', W')
  Tensor search = slice_rows(joint.tokens, nz, nz + ns);
  Tensor feat = reshape(transpose(search), {d, g, g});
  HeadOutput out;
  out.score_logits = reshape(head_branch_forward(feat, params.score), {g, g});
  out.offset = sigmoid(head_branch_forward(feat, params.offset));
  out.size = sigmoid(head_branch_forward(feat, params.size));
  return out;
}

struct Decoded {
  BBox box;
  double confidence = 0.0;  // max of the softmaxed score map
  int argmax_row = 0;
  int argmax_col = 0;
};

inline std::pair<int, int> argmax_cell(const std::vector<double>& grid, int rows, int cols) {
  int best_r = 0, best_c = 0;
  double best = grid[0];
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double v = grid[static_cast<std::size_t>(r) * cols + c];
      if (v > best) {  // first occurrence wins on ties
        best = v;
        best_r = r;
        best_c = c;
      }
    }
  return {best_r, best_c};
}

// Decodes the center-head outputs at the score argmax. An optional penalty
// grid (e.g. a Hanning window) reweights the softmaxed map before the argmax;
// the confidence reported is the unpenalized probability at the chosen cell.
inline Decoded decode_box(const Tensor& score_logits, const Tensor& offset, const Tensor& size,
                          const std::vector<double>* penalty = nullptr) {
  if (score_logits.rank() != 2) throw std::invalid_argument("decode_box: score must be rank-2");
  int rows = static_cast<int>(score_logits.shape()[0]);
  int cols = static_cast<int>(score_logits.shape()[1]);
  if (offset.rank() != 3 || size.rank() != 3 || offset.shape()[0] != 2 || size.shape()[0] != 2 ||
      offset.shape()[1] != rows || offset.shape()[2] != cols || size.shape()[1] != rows ||
      size.shape()[2] != cols)
    throw std::invalid_argument("decode_box: inconsistent grid shapes");
  Tensor prob = softmax_t(reshape(score_logits, {static_cast<std::int64_t>(rows) * cols}), 1.0);
  std::vector<double> sel = prob.data();
  if (penalty) {
    if (penalty->size() != sel.size()) throw std::invalid_argument("decode_box: penalty size mismatch");
    for (std::size_t i = 0; i < sel.size(); ++i) sel[i] *= (*penalty)[i];
  }
  auto [r, c] = argmax_cell(sel, rows, cols);
  std::size_t cell = static_cast<std::size_t>(r) * cols + c;
  Decoded d;
  d.argmax_row = r;
  d.argmax_col = c;
  d.box.cx = (c + offset.data()[0 * rows * cols + cell]) / static_cast<double>(cols);
  d.box.cy = (r + offset.data()[1 * rows * cols + cell]) / static_cast<double>(rows);
  d.box.w = size.data()[0 * rows * cols + cell];
  d.box.h = size.data()[1 * rows * cols + cell];
  d.confidence = prob.data()[cell];
  return d;
}

}  // namespace asymtrack
