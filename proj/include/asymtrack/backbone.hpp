#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "asymtrack/image.hpp"
#include "asymtrack/rng.hpp"
#include "asymtrack/tensor.hpp"

namespace asymtrack {

enum class TokenOrigin { kTemplate, kSearch, kJoint };

struct TokenSeq {
  Tensor tokens;  // N x D
  TokenOrigin origin = TokenOrigin::kJoint;
  int grid_rows = 0;
  int grid_cols = 0;

  std::int64_t count() const { return tokens.shape()[0]; }
  std::int64_t dim() const { return tokens.shape()[1]; }
};

struct BackboneConfig {
  int embed_dim = 192;
  int num_heads = 3;
  double mlp_ratio = 4.0;
  int patch_size = 16;
  int teacher_layers = 12;   // L
  int student_stage1 = 6;    // L1
  int student_stage2 = 2;    // L2
  int template_size = 128;   // H_z = W_z
  int search_size = 256;     // H_s = W_s

  int student_layers() const { return student_stage1 + student_stage2; }
  int template_tokens() const {
    int g = template_size / patch_size;
    return g * g;
  }
  int search_tokens() const {
    int g = search_size / patch_size;
    return g * g;
  }
  int search_grid() const { return search_size / patch_size; }
  int mlp_hidden() const { return static_cast<int>(std::lround(mlp_ratio * embed_dim)); }

  void validate() const {
    if (embed_dim <= 0 || num_heads <= 0 || embed_dim % num_heads != 0)
      throw std::invalid_argument("backbone config: heads must divide embed_dim");
    if (patch_size <= 0 || template_size % patch_size != 0 || search_size % patch_size != 0)
      throw std::invalid_argument("backbone config: crop sizes must be divisible by patch size");
    if (student_layers() >= teacher_layers)
      throw std::invalid_argument("backbone config: student must be strictly shallower than teacher");
  }

  static BackboneConfig reference_default() { return BackboneConfig{}; }

  static BackboneConfig desk_test() {
    BackboneConfig c;
    c.embed_dim = 16;
    c.num_heads = 2;
    c.patch_size = 16;
    c.teacher_layers = 4;
    c.student_stage1 = 2;
    c.student_stage2 = 1;
    c.template_size = 64;
    c.search_size = 128;
    return c;
  }
};

// ----- parameters -----

struct PatchEmbedParams {
  Tensor weight;  // (3*P*P) x D, shared between streams
  Tensor bias;    // D
};

struct EncoderLayerParams {
  Tensor ln1_gamma, ln1_beta;
  Tensor qkv_weight, qkv_bias;    // D x 3D, 3D
  Tensor proj_weight, proj_bias;  // D x D, D
  Tensor ln2_gamma, ln2_beta;
  Tensor fc1_weight, fc1_bias;    // D x 4D, 4D
  Tensor fc2_weight, fc2_bias;    // 4D x D, D
};

struct BackboneParams {
  PatchEmbedParams embed;
  Tensor pos_template;  // N_z x D
  Tensor pos_search;    // N_s x D
  std::vector<EncoderLayerParams> layers;  // teacher: L; student: L1 then L2
};

using ParamVisitor = std::function<void(const std::string&, Tensor&)>;

inline void visit_encoder_layer(EncoderLayerParams& l, const std::string& prefix,
                                const ParamVisitor& fn) {
  fn(prefix + ".ln1.gamma", l.ln1_gamma);
  fn(prefix + ".ln1.beta", l.ln1_beta);
  fn(prefix + ".attn.qkv.weight", l.qkv_weight);
  fn(prefix + ".attn.qkv.bias", l.qkv_bias);
  fn(prefix + ".attn.proj.weight", l.proj_weight);
  fn(prefix + ".attn.proj.bias", l.proj_bias);
  fn(prefix + ".ln2.gamma", l.ln2_gamma);
  fn(prefix + ".ln2.beta", l.ln2_beta);
  fn(prefix + ".mlp.fc1.weight", l.fc1_weight);
  fn(prefix + ".mlp.fc1.bias", l.fc1_bias);
  fn(prefix + ".mlp.fc2.weight", l.fc2_weight);
  fn(prefix + ".mlp.fc2.bias", l.fc2_bias);
}

inline void visit_backbone(BackboneParams& b, const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".patch_embed.weight", b.embed.weight);
  fn(prefix + ".patch_embed.bias", b.embed.bias);
  fn(prefix + ".pos_template", b.pos_template);
  fn(prefix + ".pos_search", b.pos_search);
  for (std::size_t i = 0; i < b.layers.size(); ++i)
    visit_encoder_layer(b.layers[i], prefix + ".layer" + std::to_string(i), fn);
}

inline EncoderLayerParams init_encoder_layer(const BackboneConfig& cfg, Rng& rng) {
  int d = cfg.embed_dim;
  int hid = cfg.mlp_hidden();
  double s_d = 1.0 / std::sqrt(static_cast<double>(d));
  double s_h = 1.0 / std::sqrt(static_cast<double>(hid));
  EncoderLayerParams l;
  l.ln1_gamma = Tensor::full({d}, 1.0).set_requires_grad(true);
  l.ln1_beta = Tensor::zeros({d}).set_requires_grad(true);
  l.qkv_weight = Tensor::param({d, 3 * d}, rng, s_d);
  // Tie the key projection to the query projection at init. Attention then
  // starts out as a positive-definite similarity kernel, so patches with
  // matching appearance attend to each other from the first step — the
  // matching prior a pretrained backbone would otherwise provide.
  {
    auto& w = l.qkv_weight.data_mut();
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < d; ++c)
        w[static_cast<std::size_t>(r) * 3 * d + d + c] = w[static_cast<std::size_t>(r) * 3 * d + c];
  }
  l.qkv_bias = Tensor::zeros({3 * d}).set_requires_grad(true);
  l.proj_weight = Tensor::param({d, d}, rng, s_d);
  l.proj_bias = Tensor::zeros({d}).set_requires_grad(true);
  l.ln2_gamma = Tensor::full({d}, 1.0).set_requires_grad(true);
  l.ln2_beta = Tensor::zeros({d}).set_requires_grad(true);
  l.fc1_weight = Tensor::param({d, hid}, rng, s_d);
  l.fc1_bias = Tensor::zeros({hid}).set_requires_grad(true);
  l.fc2_weight = Tensor::param({hid, d}, rng, s_h);
  l.fc2_bias = Tensor::zeros({d}).set_requires_grad(true);
  return l;
}

inline BackboneParams init_backbone(const BackboneConfig& cfg, int num_layers, Rng& rng) {
  cfg.validate();
  int d = cfg.embed_dim;
  int patch_in = 3 * cfg.patch_size * cfg.patch_size;
  BackboneParams b;
  b.embed.weight = Tensor::param({patch_in, d}, rng, 1.0 / std::sqrt(static_cast<double>(patch_in)));
  b.embed.bias = Tensor::zeros({d}).set_requires_grad(true);
  double s_d = 1.0 / std::sqrt(static_cast<double>(d));
  b.pos_template = Tensor::param({cfg.template_tokens(), d}, rng, s_d);
  b.pos_search = Tensor::param({cfg.search_tokens(), d}, rng, s_d);
  b.layers.reserve(static_cast<std::size_t>(num_layers));
  for (int i = 0; i < num_layers; ++i) b.layers.push_back(init_encoder_layer(cfg, rng));
  return b;
}

// ----- forward -----

inline Tensor image_to_patch_matrix(const Image& crop, int patch) {
  if (crop.height % patch != 0 || crop.width % patch != 0)
    throw std::invalid_argument("embed_patches: crop size not divisible by patch size");
  int gr = crop.height / patch, gc = crop.width / patch;
  int pin = 3 * patch * patch;
  std::vector<double> v(static_cast<std::size_t>(gr) * gc * pin);
  std::size_t idx = 0;
  for (int py = 0; py < gr; ++py)
    for (int px = 0; px < gc; ++px)
      for (int dy = 0; dy < patch; ++dy)
        for (int dx = 0; dx < patch; ++dx)
          for (int c = 0; c < 3; ++c) v[idx++] = crop.at(py * patch + dy, px * patch + dx, c);
  return Tensor::from_data({static_cast<std::int64_t>(gr) * gc, pin}, std::move(v));
}

// Patch embedding plus the stream's learned position table.
inline TokenSeq embed_patches(const Image& crop, const BackboneParams& params,
                              const BackboneConfig& cfg, TokenOrigin origin) {
  if (origin == TokenOrigin::kJoint)
    throw std::invalid_argument("embed_patches: origin must be template or search");
  Tensor patches = image_to_patch_matrix(crop, cfg.patch_size);
  Tensor tok = add_rowvec(matmul(patches, params.embed.weight), params.embed.bias);
  const Tensor& pos = origin == TokenOrigin::kTemplate ? params.pos_template : params.pos_search;
  if (pos.shape()[0] != tok.shape()[0])
    throw std::invalid_argument("embed_patches: crop size inconsistent with position table");
  TokenSeq seq;
  seq.tokens = add(tok, pos);
  seq.origin = origin;
  seq.grid_rows = crop.height / cfg.patch_size;
  seq.grid_cols = crop.width / cfg.patch_size;
  return seq;
}

// Captures attention probability matrices when non-null (one per head per layer).
struct AttnCapture {
  std::vector<Tensor> maps;
};

// Pre-norm transformer encoder layer.
inline Tensor encoder_layer_forward(const Tensor& x, const EncoderLayerParams& l, int num_heads,
                                    AttnCapture* capture = nullptr) {
  std::int64_t d = x.shape()[1];
  std::int64_t dh = d / num_heads;
  Tensor h = layer_norm_rows(x, l.ln1_gamma, l.ln1_beta);
  Tensor qkv = add_rowvec(matmul(h, l.qkv_weight), l.qkv_bias);
  Tensor q = slice_cols(qkv, 0, d);
  Tensor k = slice_cols(qkv, d, 2 * d);
  Tensor v = slice_cols(qkv, 2 * d, 3 * d);
  double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> heads;
  heads.reserve(static_cast<std::size_t>(num_heads));
  for (int hd = 0; hd < num_heads; ++hd) {
    Tensor qh = slice_cols(q, hd * dh, (hd + 1) * dh);
    Tensor kh = slice_cols(k, hd * dh, (hd + 1) * dh);
    Tensor vh = slice_cols(v, hd * dh, (hd + 1) * dh);
    Tensor att = softmax_rows(scale(matmul(qh, transpose(kh)), att_scale));
    if (capture) capture->maps.push_back(att);
    heads.push_back(matmul(att, vh));
  }
  Tensor o = num_heads == 1 ? heads[0] : concat_cols(heads);
  Tensor x1 = add(x, add_rowvec(matmul(o, l.proj_weight), l.proj_bias));
  Tensor h2 = layer_norm_rows(x1, l.ln2_gamma, l.ln2_beta);
  Tensor m = add_rowvec(matmul(h2, l.fc1_weight), l.fc1_bias);
  m = add_rowvec(matmul(gelu(m), l.fc2_weight), l.fc2_bias);
  return add(x1, m);
}

inline TokenSeq make_joint(const TokenSeq& z, const TokenSeq& s) {
  if (z.dim() != s.dim())
    throw std::invalid_argument("joint tokens: embedding dimension mismatch");
  TokenSeq joint;
  joint.tokens = concat_rows({z.tokens, s.tokens});  // template first
  joint.origin = TokenOrigin::kJoint;
  joint.grid_rows = s.grid_rows;
  joint.grid_cols = s.grid_cols;
  return joint;
}

// Full-depth joint encoder: returns all L per-layer outputs; the last entry
// is the feature map fed to the head.
inline std::vector<TokenSeq> teacher_forward(const TokenSeq& z, const TokenSeq& s,
                                             const BackboneParams& params,
                                             const BackboneConfig& cfg,
                                             AttnCapture* capture = nullptr) {
  TokenSeq joint = make_joint(z, s);
  std::vector<TokenSeq> taps;
  taps.reserve(params.layers.size() + 1);
  Tensor x = joint.tokens;
  if (params.layers.empty()) {
    taps.push_back(joint);
    return taps;
  }
  for (const auto& layer : params.layers) {
    x = encoder_layer_forward(x, layer, cfg.num_heads, capture);
    TokenSeq t = joint;
    t.tokens = x;
    taps.push_back(t);
  }
  return taps;
}

// Stage 1: per-stream encoding, weights shared between template and search.
inline TokenSeq student_stage1(const TokenSeq& x, const BackboneParams& params,
                               const BackboneConfig& cfg) {
  if (x.origin == TokenOrigin::kJoint)
    throw std::invalid_argument("student_stage1: joint-origin input not allowed");
  Tensor t = x.tokens;
  for (int i = 0; i < cfg.student_stage1; ++i)
    t = encoder_layer_forward(t, params.layers[static_cast<std::size_t>(i)], cfg.num_heads);
  TokenSeq out = x;
  out.tokens = t;
  return out;
}

// Stage 2: joint encoding; returns all L2 per-layer outputs (the feature
// distillation taps).
inline std::vector<TokenSeq> student_stage2(const TokenSeq& z1, const TokenSeq& s1,
                                            const BackboneParams& params,
                                            const BackboneConfig& cfg,
                                            AttnCapture* capture = nullptr) {
  TokenSeq joint = make_joint(z1, s1);
  std::vector<TokenSeq> taps;
  taps.reserve(static_cast<std::size_t>(cfg.student_stage2));
  Tensor x = joint.tokens;
  for (int i = 0; i < cfg.student_stage2; ++i) {
    x = encoder_layer_forward(
        x, params.layers[static_cast<std::size_t>(cfg.student_stage1 + i)], cfg.num_heads,
        capture);
    TokenSeq t = joint;
    t.tokens = x;
    taps.push_back(t);
  }
  if (taps.empty()) taps.push_back(joint);
  return taps;
}

// Teacher layer index aligned with student Stage-2 tap k (0-based), last-K alignment.
inline int aligned_teacher_layer(const BackboneConfig& cfg, int k) {
  return cfg.teacher_layers - cfg.student_stage2 + k;
}

}  // namespace asymtrack
