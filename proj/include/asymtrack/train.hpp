#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "asymtrack/config.hpp"
#include "asymtrack/distill.hpp"
#include "asymtrack/eval.hpp"
#include "asymtrack/models.hpp"
#include "asymtrack/objective.hpp"
#include "asymtrack/optim.hpp"
#include "asymtrack/synth.hpp"

namespace asymtrack {

struct TrainConfig {
  int batch_size = 8;
  int steps = 400;  // desk-scale substitute for a full benchmark training schedule
  double lr_backbone = 4e-5;
  double lr_other = 4e-4;
  double weight_decay = 1e-4;
  double lr_decay_factor = 0.1;
  int lr_decay_step = -1;  // late-schedule decay point; -1 disables
  std::uint64_t seed = 0;
  bool feat_distill = true;
  bool pred_distill = true;
  LossWeights weights;
  double temperature = 2.0;
  bool use_triplet = true;  // second template frame, Stage-1 encodings averaged
  double template_factor = 2.0;
  double search_factor = 4.0;
  BackboneConfig backbone;  // shared dims; teacher uses teacher_layers, student L1+L2

  static TrainConfig desk_default() {
    TrainConfig c;
    c.backbone.embed_dim = 32;
    c.backbone.num_heads = 2;
    c.backbone.patch_size = 16;
    c.backbone.teacher_layers = 4;
    c.backbone.student_stage1 = 2;
    c.backbone.student_stage2 = 1;
    c.backbone.template_size = 64;
    c.backbone.search_size = 128;
    return c;
  }

  static TrainConfig from_file(const std::string& path) {
    TrainConfig c = desk_default();
    KeyValueConfig kv = KeyValueConfig::from_file(path);
    kv.get("batch_size", c.batch_size);
    kv.get("steps", c.steps);
    kv.get("lr_backbone", c.lr_backbone);
    kv.get("lr_other", c.lr_other);
    kv.get("weight_decay", c.weight_decay);
    kv.get("lr_decay_factor", c.lr_decay_factor);
    kv.get("lr_decay_step", c.lr_decay_step);
    unsigned long long seed = c.seed;
    kv.get("seed", seed);
    c.seed = seed;
    kv.get("feat_distill", c.feat_distill);
    kv.get("pred_distill", c.pred_distill);
    kv.get("lambda1", c.weights.lambda1);
    kv.get("lambda2", c.weights.lambda2);
    kv.get("lambda3", c.weights.lambda3);
    kv.get("lambda4", c.weights.lambda4);
    kv.get("temperature", c.temperature);
    kv.get("use_triplet", c.use_triplet);
    kv.get("template_factor", c.template_factor);
    kv.get("search_factor", c.search_factor);
    kv.get("embed_dim", c.backbone.embed_dim);
    kv.get("num_heads", c.backbone.num_heads);
    kv.get("patch_size", c.backbone.patch_size);
    kv.get("teacher_layers", c.backbone.teacher_layers);
    kv.get("student_stage1", c.backbone.student_stage1);
    kv.get("student_stage2", c.backbone.student_stage2);
    kv.get("template_size", c.backbone.template_size);
    kv.get("search_size", c.backbone.search_size);
    kv.reject_unknown();
    return c;
  }
};

// One training triplet: two template crops, one search crop, ground truth in
// normalized search-crop coordinates.
struct TrainingSample {
  Image template_a;
  Image template_b;
  Image search;
  BBox gt;
};

// Deterministic sampler over a set of synthetic sequences, with horizontal
// flip and brightness jitter at sample time.
class SampleSource {
 public:
  SampleSource(std::vector<SyntheticSequence> seqs, std::vector<SceneConfig> scene_cfgs,
               double template_factor, double search_factor, int template_size, int search_size,
               bool augment = true)
      : seqs_(std::move(seqs)),
        scene_cfgs_(std::move(scene_cfgs)),
        template_factor_(template_factor),
        search_factor_(search_factor),
        template_size_(template_size),
        search_size_(search_size),
        augment_(augment) {
    if (seqs_.empty()) throw std::invalid_argument("sample source: no sequences");
  }

  TrainingSample draw(Rng& rng) const {
    std::size_t s = static_cast<std::size_t>(rng.index(seqs_.size()));
    const auto& seq = seqs_[s];
    const auto& scene = scene_cfgs_[s];
    auto pick_visible = [&](void) {
      for (int tries = 0; tries < 64; ++tries) {
        int f = static_cast<int>(rng.index(seq.frames.size()));
        if (!frame_occluded(scene, f)) return f;
      }
      return 0;
    };
    int ft_a = pick_visible();
    int ft_b = pick_visible();
    int fs = pick_visible();
    TrainingSample sample;
    sample.template_a = template_crop(seq, ft_a);
    sample.template_b = template_crop(seq, ft_b);
    const Rect& gt = seq.gt[static_cast<std::size_t>(fs)];
    double side = search_factor_ * std::sqrt(gt.w * gt.h);
    // Scale jitter: without it every sample has sqrt(w*h)/side identically
    // equal to 1/search_factor, the size branch never needs to look at the
    // image, and any size bias compounds through the search-window feedback
    // loop at inference time.
    if (augment_) side *= std::exp(rng.uniform(-0.25, 0.25));
    // Wide translation jitter keeps "the pattern nearest the crop center"
    // from being a sufficient cue, otherwise the model never consults the
    // template and distractors become indistinguishable from the target.
    double jx = rng.uniform(-0.3, 0.3) * side;
    double jy = rng.uniform(-0.3, 0.3) * side;
    double ccx = gt.cx() + jx, ccy = gt.cy() + jy;
    sample.search = crop_resize(seq.frames[static_cast<std::size_t>(fs)], ccx, ccy, side,
                                search_size_);
    sample.gt.cx = (gt.cx() - (ccx - side / 2)) / side;
    sample.gt.cy = (gt.cy() - (ccy - side / 2)) / side;
    sample.gt.w = std::min(1.0, gt.w / side);
    sample.gt.h = std::min(1.0, gt.h / side);
    if (augment_) {
      if (rng.uniform() < 0.5) {
        sample.template_a = flip_horizontal(sample.template_a);
        sample.template_b = flip_horizontal(sample.template_b);
        sample.search = flip_horizontal(sample.search);
        sample.gt.cx = 1.0 - sample.gt.cx;
      }
      double brightness = rng.uniform(0.8, 1.2);
      sample.template_a = adjust_brightness(sample.template_a, brightness);
      sample.template_b = adjust_brightness(sample.template_b, brightness);
      sample.search = adjust_brightness(sample.search, brightness);
    }
    return sample;
  }

  const std::vector<SyntheticSequence>& sequences() const { return seqs_; }

 private:
  Image template_crop(const SyntheticSequence& seq, int frame) const {
    const Rect& gt = seq.gt[static_cast<std::size_t>(frame)];
    return crop_resize(seq.frames[static_cast<std::size_t>(frame)], gt.cx(), gt.cy(),
                       template_factor_ * std::sqrt(gt.w * gt.h), template_size_);
  }

  std::vector<SyntheticSequence> seqs_;
  std::vector<SceneConfig> scene_cfgs_;
  double template_factor_;
  double search_factor_;
  int template_size_;
  int search_size_;
  bool augment_;
};

// Builds a training set of simple moving-target scenes derived from a seed.
inline std::pair<std::vector<SyntheticSequence>, std::vector<SceneConfig>> make_training_scenes(
    std::uint64_t seed, int count, int frames_per_seq = 40) {
  std::vector<SyntheticSequence> seqs;
  std::vector<SceneConfig> cfgs;
  Rng rng(seed ^ 0xa5a5a5a5ULL);
  for (int i = 0; i < count; ++i) {
    SceneConfig sc;
    sc.seed = seed * 977 + static_cast<std::uint64_t>(i);
    sc.texture_seed = seed * 13 + static_cast<std::uint64_t>(i) * 7 + 3;
    sc.num_frames = frames_per_seq;
    sc.target_w = rng.uniform(18.0, 34.0);
    sc.target_h = rng.uniform(14.0, 28.0);
    sc.start_x = rng.uniform(0.3, 0.7) * sc.frame_width;
    sc.start_y = rng.uniform(0.3, 0.7) * sc.frame_height;
    double max_vx = std::min(sc.start_x, sc.frame_width - sc.start_x) / (2.0 * frames_per_seq);
    double max_vy = std::min(sc.start_y, sc.frame_height - sc.start_y) / (2.0 * frames_per_seq);
    sc.vel_x = rng.uniform(-1.0, 1.0) * max_vx;
    sc.vel_y = rng.uniform(-1.0, 1.0) * max_vy;
    // Every scene carries distractors with clearly different textures:
    // together with the wide crop jitter this makes template matching, not
    // saliency or centrality, the only reliable way to pick the target.
    sc.distractors = 1 + static_cast<int>(rng.index(2));
    sc.distractor_similarity = 0.3;
    cfgs.push_back(sc);
    seqs.push_back(generate_sequence(sc));
  }
  return {std::move(seqs), std::move(cfgs)};
}

struct LossRecord {
  double total = 0, cls = 0, l1 = 0, giou = 0, feat = 0, pred = 0;
};

struct StudentForward {
  std::vector<TokenSeq> taps;  // Stage-2 per-layer outputs
  HeadOutput head;
};

inline StudentForward student_forward(const StudentModel& m, const Image& template_a,
                                      const Image* template_b, const Image& search) {
  TokenSeq z = embed_patches(template_a, m.backbone, m.config, TokenOrigin::kTemplate);
  TokenSeq z1 = student_stage1(z, m.backbone, m.config);
  if (template_b) {
    TokenSeq zb = embed_patches(*template_b, m.backbone, m.config, TokenOrigin::kTemplate);
    TokenSeq zb1 = student_stage1(zb, m.backbone, m.config);
    z1.tokens = scale(add(z1.tokens, zb1.tokens), 0.5);
  }
  TokenSeq s = embed_patches(search, m.backbone, m.config, TokenOrigin::kSearch);
  TokenSeq s1 = student_stage1(s, m.backbone, m.config);
  StudentForward out;
  out.taps = student_stage2(z1, s1, m.backbone, m.config);
  out.head = head_forward(out.taps.back(), m.head, m.config);
  return out;
}

struct TeacherForward {
  std::vector<TokenSeq> taps;  // all L per-layer outputs
  HeadOutput head;
};

inline TeacherForward teacher_forward_full(const TeacherModel& m, const Image& template_a,
                                           const Image* template_b, const Image& search) {
  TokenSeq z = embed_patches(template_a, m.backbone, m.config, TokenOrigin::kTemplate);
  if (template_b) {
    TokenSeq zb = embed_patches(*template_b, m.backbone, m.config, TokenOrigin::kTemplate);
    z.tokens = scale(add(z.tokens, zb.tokens), 0.5);
  }
  TokenSeq s = embed_patches(search, m.backbone, m.config, TokenOrigin::kSearch);
  TeacherForward out;
  out.taps = teacher_forward(z, s, m.backbone, m.config);
  out.head = head_forward(out.taps.back(), m.head, m.config);
  return out;
}

// Classification + regression losses for one sample.
struct TrackingLosses {
  Tensor cls, l1, giou;
};

inline TrackingLosses tracking_losses(const HeadOutput& head, const BBox& gt, int grid) {
  TargetMaps targets = make_target_maps(gt, grid, grid);
  TrackingLosses out;
  out.cls = focal_loss(head.score_logits, targets);
  Tensor pred_box = decode_at_center(head, targets);
  Tensor gt_box = Tensor::from_data({4}, {gt.cx, gt.cy, gt.w, gt.h});
  out.l1 = l1_box_loss(pred_box, gt_box);
  out.giou = giou_loss(pred_box, gt_box);
  return out;
}

namespace detail {

using ParamGroup = std::vector<std::pair<std::string, Tensor>>;

template <typename Model>
inline std::pair<ParamGroup, ParamGroup> split_param_groups(Model& m) {
  ParamGroup backbone, other;
  m.visit_params([&](const std::string& name, Tensor& t) {
    if (name.rfind("backbone", 0) == 0)
      backbone.emplace_back(name, t);
    else
      other.emplace_back(name, t);
  });
  return {std::move(backbone), std::move(other)};
}

}  // namespace detail

// Trains the full-depth model on the plain tracking objective (no
// distillation terms).
inline std::vector<LossRecord> train_teacher(TeacherModel& teacher, const SampleSource& data,
                                             const TrainConfig& cfg) {
  Rng rng(cfg.seed);
  auto [backbone_params, other_params] = detail::split_param_groups(teacher);
  AdamW opt_backbone({cfg.lr_backbone, cfg.weight_decay});
  AdamW opt_other({cfg.lr_other, cfg.weight_decay});
  int grid = cfg.backbone.search_grid();
  std::vector<LossRecord> history;
  for (int step = 0; step < cfg.steps; ++step) {
    if (step == cfg.lr_decay_step) {
      opt_backbone.set_lr(opt_backbone.config().lr * cfg.lr_decay_factor);
      opt_other.set_lr(opt_other.config().lr * cfg.lr_decay_factor);
    }
    Tensor cls = Tensor::scalar(0.0), l1 = Tensor::scalar(0.0), giou = Tensor::scalar(0.0);
    for (int b = 0; b < cfg.batch_size; ++b) {
      TrainingSample s = data.draw(rng);
      TeacherForward fwd = teacher_forward_full(teacher, s.template_a,
                                                cfg.use_triplet ? &s.template_b : nullptr,
                                                s.search);
      TrackingLosses tl = tracking_losses(fwd.head, s.gt, grid);
      cls = add(cls, tl.cls);
      l1 = add(l1, tl.l1);
      giou = add(giou, tl.giou);
    }
    double inv_b = 1.0 / cfg.batch_size;
    cls = scale(cls, inv_b);
    l1 = scale(l1, inv_b);
    giou = scale(giou, inv_b);
    Tensor zero = Tensor::scalar(0.0);
    Tensor loss = total_loss(cls, l1, giou, zero, zero, cfg.weights);
    loss.backward();
    opt_backbone.step(backbone_params);
    opt_other.step(other_params);
    history.push_back({loss.item(), cls.item(), l1.item(), giou.item(), 0.0, 0.0});
  }
  return history;
}

// Distilled student training: frozen teacher, Eq.-style composite objective
// with configurable feature/prediction branches.
inline std::vector<LossRecord> train_student(TeacherModel& teacher, StudentModel& student,
                                             const SampleSource& data, const TrainConfig& cfg) {
  if (teacher.config.embed_dim != student.config.embed_dim ||
      teacher.config.patch_size != student.config.patch_size ||
      teacher.config.template_size != student.config.template_size ||
      teacher.config.search_size != student.config.search_size)
    throw std::invalid_argument("train_student: teacher/student dimensions incompatible");
  teacher.set_trainable(false);
  bool need_feat = cfg.feat_distill && cfg.weights.lambda3 != 0.0;
  bool need_pred = cfg.pred_distill && cfg.weights.lambda4 != 0.0;
  bool need_teacher = need_feat || need_pred;
  Rng rng(cfg.seed);
  auto [backbone_params, other_params] = detail::split_param_groups(student);
  AdamW opt_backbone({cfg.lr_backbone, cfg.weight_decay});
  AdamW opt_other({cfg.lr_other, cfg.weight_decay});
  int grid = cfg.backbone.search_grid();
  int nz = student.config.template_tokens();
  int k_layers = student.config.student_stage2;
  DistillConfig dcfg;
  dcfg.temperature = cfg.temperature;
  std::vector<LossRecord> history;
  for (int step = 0; step < cfg.steps; ++step) {
    if (step == cfg.lr_decay_step) {
      opt_backbone.set_lr(opt_backbone.config().lr * cfg.lr_decay_factor);
      opt_other.set_lr(opt_other.config().lr * cfg.lr_decay_factor);
    }
    Tensor cls = Tensor::scalar(0.0), l1 = Tensor::scalar(0.0), giou = Tensor::scalar(0.0);
    DistillBatch batch;
    batch.template_tokens = nz;
    for (int b = 0; b < cfg.batch_size; ++b) {
      TrainingSample s = data.draw(rng);
      StudentForward fwd = student_forward(student, s.template_a,
                                           cfg.use_triplet ? &s.template_b : nullptr, s.search);
      TrackingLosses tl = tracking_losses(fwd.head, s.gt, grid);
      cls = add(cls, tl.cls);
      l1 = add(l1, tl.l1);
      giou = add(giou, tl.giou);
      if (need_teacher) {
        TeacherForward tf = teacher_forward_full(teacher, s.template_a,
                                                 cfg.use_triplet ? &s.template_b : nullptr,
                                                 s.search);
        batch.masks.push_back(make_token_mask(s.gt, grid, grid));
        std::vector<Tensor> sf, yf;
        for (int k = 0; k < k_layers; ++k) {
          sf.push_back(fwd.taps[static_cast<std::size_t>(k)].tokens);
          int tk = aligned_teacher_layer(student.config, k);
          yf.push_back(tf.taps[static_cast<std::size_t>(tk)].tokens);
        }
        batch.student_feats.push_back(std::move(sf));
        batch.teacher_feats.push_back(std::move(yf));
        batch.student_logits.push_back(fwd.head.score_logits);
        batch.teacher_logits.push_back(tf.head.score_logits);
      }
    }
    double inv_b = 1.0 / cfg.batch_size;
    cls = scale(cls, inv_b);
    l1 = scale(l1, inv_b);
    giou = scale(giou, inv_b);
    Tensor feat = need_feat ? feature_distill_loss(batch, dcfg) : Tensor::scalar(0.0);
    Tensor pred = need_pred ? prediction_distill_loss(batch, dcfg) : Tensor::scalar(0.0);
    Tensor loss = total_loss(cls, l1, giou, feat, pred, cfg.weights);
    loss.backward();
    opt_backbone.step(backbone_params);
    opt_other.step(other_params);
    history.push_back({loss.item(), cls.item(), l1.item(), giou.item(), feat.item(), pred.item()});
  }
  return history;
}

// Mean Stage-2 masked cosine similarity between student and aligned teacher
// layers over a deterministic evaluation batch (the layer-similarity
// diagnostic used by the distillation-efficacy checks).
inline double mean_stage2_cosine(TeacherModel& teacher, const StudentModel& student,
                                 const SampleSource& data, std::uint64_t seed, int num_samples) {
  Rng rng(seed);
  int grid = student.config.search_grid();
  int k_layers = student.config.student_stage2;
  double total = 0.0;
  int count = 0;
  for (int i = 0; i < num_samples; ++i) {
    TrainingSample s = data.draw(rng);
    StudentForward fwd = student_forward(student, s.template_a, nullptr, s.search);
    TeacherForward tf = teacher_forward_full(teacher, s.template_a, nullptr, s.search);
    std::vector<TokenSeq> st, te;
    for (int k = 0; k < k_layers; ++k) {
      st.push_back(fwd.taps[static_cast<std::size_t>(k)]);
      te.push_back(tf.taps[static_cast<std::size_t>(aligned_teacher_layer(student.config, k))]);
    }
    TargetMask mask = make_token_mask(s.gt, grid, grid);
    auto sims = layer_cosine_similarity(st, te, student.config.template_tokens(), &mask);
    for (double v : sims) {
      total += v;
      ++count;
    }
  }
  return count > 0 ? total / count : 0.0;
}

}  // namespace asymtrack
