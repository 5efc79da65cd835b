#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "asymtrack/backbone.hpp"
#include "asymtrack/head.hpp"

namespace asymtrack {

// Full L-layer joint model used only during training.
struct TeacherModel {
  BackboneConfig config;
  BackboneParams backbone;
  HeadParams head;

  static TeacherModel init(const BackboneConfig& cfg, Rng& rng) {
    TeacherModel m;
    m.config = cfg;
    m.backbone = init_backbone(cfg, cfg.teacher_layers, rng);
    m.head = init_head(cfg.embed_dim, rng);
    return m;
  }

  void visit_params(const ParamVisitor& fn) {
    visit_backbone(backbone, "backbone", fn);
    visit_head(head, "head", fn);
  }

  void set_trainable(bool b) {
    visit_params([b](const std::string&, Tensor& t) { t.set_requires_grad(b); });
  }
};

// Pruned L' = L1 + L2 model deployed at inference.
struct StudentModel {
  BackboneConfig config;
  BackboneParams backbone;  // layers: L1 stage-1 layers then L2 stage-2 layers
  HeadParams head;

  static StudentModel init(const BackboneConfig& cfg, Rng& rng) {
    StudentModel m;
    m.config = cfg;
    m.backbone = init_backbone(cfg, cfg.student_layers(), rng);
    m.head = init_head(cfg.embed_dim, rng);
    return m;
  }

  void visit_params(const ParamVisitor& fn) {
    visit_backbone(backbone, "backbone", fn);
    visit_head(head, "head", fn);
  }

  void set_trainable(bool b) {
    visit_params([b](const std::string&, Tensor& t) { t.set_requires_grad(b); });
  }
};

// ----- closed-form accounting -----

inline std::int64_t encoder_layer_params(std::int64_t d) {
  // qkv 3D^2+3D, proj D^2+D, mlp 4D^2+4D and 4D^2+D, two norms 4D
  return 12 * d * d + 13 * d;
}

inline std::int64_t head_branch_params(std::int64_t d, std::int64_t out_channels) {
  std::int64_t total = 0;
  std::int64_t in = d;
  for (std::int64_t oc : {d, d / 2, d / 4, d / 8}) {
    total += 9 * in * oc + oc;  // conv weight + bias
    total += 2 * oc;            // bn affine
    in = oc;
  }
  total += in * out_channels + out_channels;  // 1x1 projection
  return total;
}

inline std::int64_t head_params_count(std::int64_t d) {
  return head_branch_params(d, 1) + 2 * head_branch_params(d, 2);
}

// Exact learnable-parameter count of the student (backbone + head).
inline std::int64_t count_params(const BackboneConfig& cfg, int num_layers) {
  std::int64_t d = cfg.embed_dim;
  std::int64_t p = cfg.patch_size;
  std::int64_t total = num_layers * encoder_layer_params(d);
  total += 3 * p * p * d + d;  // patch embedding
  total += (cfg.template_tokens() + cfg.search_tokens()) * static_cast<std::int64_t>(d);
  total += head_params_count(d);
  return total;
}

inline std::int64_t count_student_params(const BackboneConfig& cfg) {
  return count_params(cfg, cfg.student_layers());
}

inline std::int64_t count_teacher_params(const BackboneConfig& cfg) {
  return count_params(cfg, cfg.teacher_layers);
}

// Multiply-accumulate count of one encoder layer on n tokens.
inline std::int64_t encoder_layer_macs(std::int64_t n, std::int64_t d, std::int64_t hidden) {
  std::int64_t macs = n * d * 3 * d;   // qkv projection
  macs += n * n * d;                   // attention scores (all heads combined)
  macs += n * n * d;                   // attention-weighted values
  macs += n * d * d;                   // output projection
  macs += 2 * n * d * hidden;          // mlp
  return macs;
}

inline std::int64_t head_branch_macs(std::int64_t d, std::int64_t grid, std::int64_t out_channels) {
  std::int64_t hw = grid * grid;
  std::int64_t macs = 0;
  std::int64_t in = d;
  for (std::int64_t oc : {d, d / 2, d / 4, d / 8}) {
    macs += hw * 9 * in * oc;
    in = oc;
  }
  macs += hw * in * out_channels;
  return macs;
}

// Per-frame inference cost of the student in multiply-accumulate operations
// (the convention used by the common FLOP profilers). The cached template
// stream is excluded: Stage 1 runs on the search tokens only.
inline std::int64_t count_student_flops(const BackboneConfig& cfg) {
  std::int64_t d = cfg.embed_dim;
  std::int64_t hidden = cfg.mlp_hidden();
  std::int64_t nz = cfg.template_tokens();
  std::int64_t ns = cfg.search_tokens();
  std::int64_t macs = ns * 3 * cfg.patch_size * cfg.patch_size * d;  // patch embedding
  macs += cfg.student_stage1 * encoder_layer_macs(ns, d, hidden);
  macs += cfg.student_stage2 * encoder_layer_macs(nz + ns, d, hidden);
  std::int64_t g = cfg.search_grid();
  macs += head_branch_macs(d, g, 1) + 2 * head_branch_macs(d, g, 2);
  return macs;
}

}  // namespace asymtrack
