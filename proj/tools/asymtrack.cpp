#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "asymtrack/checkpoint.hpp"
#include "asymtrack/eval.hpp"
#include "asymtrack/gradcheck.hpp"
#include "asymtrack/models.hpp"
#include "asymtrack/synth.hpp"
#include "asymtrack/tracker.hpp"
#include "asymtrack/train.hpp"

using namespace asymtrack;

namespace {

SceneConfig scene_from_file(const std::string& path) {
  SceneConfig sc;
  KeyValueConfig kv = KeyValueConfig::from_file(path);
  kv.get("frame_width", sc.frame_width);
  kv.get("frame_height", sc.frame_height);
  kv.get("num_frames", sc.num_frames);
  unsigned long long seed = sc.seed;
  kv.get("seed", seed);
  sc.seed = seed;
  kv.get("background_noise", sc.background_noise);
  unsigned long long tex = sc.texture_seed;
  kv.get("texture_seed", tex);
  sc.texture_seed = tex;
  kv.get("start_x", sc.start_x);
  kv.get("start_y", sc.start_y);
  kv.get("vel_x", sc.vel_x);
  kv.get("vel_y", sc.vel_y);
  kv.get("target_w", sc.target_w);
  kv.get("target_h", sc.target_h);
  kv.get("scale_drift", sc.scale_drift);
  kv.get("appearance_drift", sc.appearance_drift);
  kv.get("brightness_drift", sc.brightness_drift);
  kv.get("distractors", sc.distractors);
  kv.get("distractor_similarity", sc.distractor_similarity);
  std::string occ;
  kv.get("occlusions", occ);  // e.g. "30-40;55-58"
  kv.reject_unknown();
  std::size_t pos = 0;
  while (pos < occ.size()) {
    std::size_t end = occ.find(';', pos);
    if (end == std::string::npos) end = occ.size();
    std::string span = occ.substr(pos, end - pos);
    int a, b;
    if (std::sscanf(span.c_str(), "%d-%d", &a, &b) != 2)
      throw std::runtime_error("scene config: bad occlusion span '" + span + "'");
    sc.occlusions.emplace_back(a, b);
    pos = end + 1;
  }
  return sc;
}

TrainConfig load_train_config(const std::string& path) {
  if (path.empty()) return TrainConfig::desk_default();
  return TrainConfig::from_file(path);
}

SampleSource make_source(const TrainConfig& cfg, int scene_count) {
  auto [seqs, scenes] = make_training_scenes(cfg.seed, scene_count);
  return SampleSource(std::move(seqs), std::move(scenes), cfg.template_factor, cfg.search_factor,
                      cfg.backbone.template_size, cfg.backbone.search_size);
}

void print_history_tail(const std::vector<LossRecord>& h) {
  if (h.empty()) return;
  const LossRecord& r = h.back();
  std::printf("final step %zu: total %.4f cls %.4f l1 %.4f giou %.4f feat %.4f pred %.4f\n",
              h.size(), r.total, r.cls, r.l1, r.giou, r.feat, r.pred);
}

int run_gradcheck() {
  Rng rng(1);
  auto rand_t = [&rng](const Shape& s, double lo, double hi) {
    std::vector<double> v(static_cast<std::size_t>(shape_numel(s)));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor::from_data(s, std::move(v));
  };
  double worst = 0.0;
  auto report = [&worst](const char* name, double err) {
    std::printf("%-22s %.3e\n", name, err);
    worst = std::max(worst, err);
  };
  Tensor w = rand_t({3, 4}, -1, 1);
  report("mul+sum", grad_check([&w](const Tensor& x) { return sum(mul(x, w)); },
                               rand_t({3, 4}, -2, 2)));
  Tensor m = rand_t({4, 5}, -1, 1);
  report("matmul", grad_check([&m](const Tensor& x) { return sum(matmul(x, m)); },
                              rand_t({3, 4}, -2, 2)));
  report("softmax_t", grad_check(
                          [](const Tensor& x) {
                            Tensor p = softmax_t(x, 2.0);
                            return sum(mul(p, p));
                          },
                          rand_t({7}, -3, 3)));
  report("gelu", grad_check([](const Tensor& x) { return sum(gelu(x)); }, rand_t({9}, -2, 2)));
  Tensor g = rand_t({5}, 0.5, 1.5);
  Tensor be = rand_t({5}, -1, 1);
  report("layer_norm", grad_check(
                           [&g, &be](const Tensor& x) {
                             Tensor y = layer_norm_rows(x, g, be);
                             return sum(mul(y, y));
                           },
                           rand_t({3, 5}, -2, 2)));
  Tensor cw = rand_t({2, 2, 3, 3}, -0.5, 0.5);
  Tensor cb = rand_t({2}, -0.5, 0.5);
  report("conv2d", grad_check(
                       [&cw, &cb](const Tensor& x) {
                         Tensor y = conv2d(x, cw, cb, 1);
                         return sum(mul(y, y));
                       },
                       rand_t({2, 4, 4}, -1, 1)));

  // composite distillation losses on random 2-token / 4-position inputs
  Tensor teach = rand_t({3, 2}, -1, 1);
  report("feature_distill", grad_check(
                                [&teach](const Tensor& x) {
                                  DistillBatch b;
                                  b.template_tokens = 1;
                                  b.student_feats = {{x}};
                                  b.teacher_feats = {{teach}};
                                  TargetMask mask;
                                  mask.rows = 1;
                                  mask.cols = 2;
                                  mask.values = {1.0, 0.0};
                                  b.masks = {mask};
                                  return feature_distill_loss(b);
                                },
                                rand_t({3, 2}, -1, 1)));
  Tensor tl = rand_t({2, 2}, -2, 2);
  report("prediction_distill", grad_check(
                                   [&tl](const Tensor& sl) {
                                     DistillBatch b;
                                     b.template_tokens = 0;
                                     TargetMask mask;
                                     mask.rows = 2;
                                     mask.cols = 2;
                                     mask.values = {1.0, 1.0, 0.0, 1.0};
                                     b.masks = {mask};
                                     b.student_logits = {sl};
                                     b.teacher_logits = {tl};
                                     return prediction_distill_loss(b);
                                   },
                                   rand_t({2, 2}, -2, 2)));
  std::printf("worst                  %.3e (%s)\n", worst, worst < 1e-4 ? "ok" : "FAIL");
  return worst < 1e-4 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"asymtrack: asymmetric two-stage tracker with teacher distillation"};
  app.require_subcommand(1);

  std::string config_path, teacher_path, checkpoint_path, out_path, sequence_dir;
  std::string results_path, gt_path, scene_path;
  int scene_count = 8;
  unsigned long long seed_override = 0;
  bool seed_set = false;

  auto* cmd_teacher = app.add_subcommand("train-teacher", "train the full-depth model");
  cmd_teacher->add_option("--config", config_path, "training config file");
  cmd_teacher->add_option("--scenes", scene_count, "number of synthetic training scenes");
  cmd_teacher->add_option("--out", out_path, "output checkpoint")->required();

  bool feat_distill = true, pred_distill = true;
  double temperature = -1.0;
  std::vector<double> lambdas(4, -1.0);
  auto* cmd_student = app.add_subcommand("train-student", "distill the two-stage student");
  cmd_student->add_option("--config", config_path, "training config file");
  cmd_student->add_option("--scenes", scene_count, "number of synthetic training scenes");
  cmd_student->add_option("--teacher", teacher_path, "teacher checkpoint")->required();
  cmd_student->add_option("--out", out_path, "output checkpoint")->required();
  cmd_student->add_flag("--feat-distill,!--no-feat-distill", feat_distill,
                        "feature-level distillation");
  cmd_student->add_flag("--pred-distill,!--no-pred-distill", pred_distill,
                        "prediction-level distillation");
  cmd_student->add_option("--temperature", temperature, "distillation temperature");
  cmd_student->add_option("--lambda1", lambdas[0], "L1 loss weight");
  cmd_student->add_option("--lambda2", lambdas[1], "GIoU loss weight");
  cmd_student->add_option("--lambda3", lambdas[2], "feature distillation weight");
  cmd_student->add_option("--lambda4", lambdas[3], "prediction distillation weight");

  auto* cmd_track = app.add_subcommand("track", "run the tracker over a sequence directory");
  cmd_track->add_option("--config", config_path, "training config file (architecture)");
  cmd_track->add_option("--checkpoint", checkpoint_path, "student checkpoint")->required();
  cmd_track->add_option("--sequence-dir", sequence_dir, "directory with frames + groundtruth.txt")
      ->required();
  cmd_track->add_option("--out", out_path, "output result file (x,y,w,h per line)")->required();

  auto* cmd_eval = app.add_subcommand("eval", "one-pass evaluation of a result file");
  cmd_eval->add_option("--results", results_path, "tracker result file")->required();
  cmd_eval->add_option("--gt", gt_path, "ground-truth file")->required();
  cmd_eval->add_option("--report", out_path, "optional report/curve file prefix");

  auto* cmd_grad = app.add_subcommand("gradcheck", "finite-difference gradient battery");
  (void)cmd_grad;

  auto* cmd_params = app.add_subcommand("params", "parameter and MAC accounting");
  cmd_params->add_option("--config", config_path, "training config file");

  auto* cmd_gen = app.add_subcommand("gen-data", "generate a synthetic sequence");
  cmd_gen->add_option("--seed", seed_override, "scene seed override");
  cmd_gen->add_option("--scene", scene_path, "scene config file");
  cmd_gen->add_option("--out", out_path, "output directory")->required();
  cmd_gen->callback([&] { seed_set = cmd_gen->count("--seed") > 0; });

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(cmd_teacher)) {
      TrainConfig cfg = load_train_config(config_path);
      SampleSource src = make_source(cfg, scene_count);
      Rng rng(cfg.seed + 1);
      TeacherModel teacher = TeacherModel::init(cfg.backbone, rng);
      auto history = train_teacher(teacher, src, cfg);
      print_history_tail(history);
      save_checkpoint(teacher, out_path);
      std::printf("saved %s (%lld params)\n", out_path.c_str(),
                  static_cast<long long>(count_teacher_params(cfg.backbone)));
    } else if (app.got_subcommand(cmd_student)) {
      TrainConfig cfg = load_train_config(config_path);
      cfg.feat_distill = feat_distill;
      cfg.pred_distill = pred_distill;
      if (temperature > 0.0) cfg.temperature = temperature;
      if (lambdas[0] >= 0.0) cfg.weights.lambda1 = lambdas[0];
      if (lambdas[1] >= 0.0) cfg.weights.lambda2 = lambdas[1];
      if (lambdas[2] >= 0.0) cfg.weights.lambda3 = lambdas[2];
      if (lambdas[3] >= 0.0) cfg.weights.lambda4 = lambdas[3];
      SampleSource src = make_source(cfg, scene_count);
      Rng trng(cfg.seed + 1);
      TeacherModel teacher = TeacherModel::init(cfg.backbone, trng);
      load_checkpoint(teacher, teacher_path);
      Rng srng(cfg.seed + 2);
      StudentModel student = StudentModel::init(cfg.backbone, srng);
      auto history = train_student(teacher, student, src, cfg);
      print_history_tail(history);
      save_checkpoint(student, out_path);
      std::printf("saved %s (%lld params)\n", out_path.c_str(),
                  static_cast<long long>(count_student_params(cfg.backbone)));
    } else if (app.got_subcommand(cmd_track)) {
      TrainConfig cfg = load_train_config(config_path);
      Rng rng(0);
      StudentModel student = StudentModel::init(cfg.backbone, rng);
      load_checkpoint(student, checkpoint_path);
      SyntheticSequence seq = read_sequence(sequence_dir);
      TrackerConfig tcfg;
      tcfg.search_factor = cfg.search_factor;
      tcfg.template_factor = cfg.template_factor;
      std::vector<Rect> boxes = track_sequence(student, tcfg, seq.frames, seq.gt.at(0));
      write_boxes(boxes, out_path);
      std::printf("tracked %zu frames -> %s\n", boxes.size(), out_path.c_str());
    } else if (app.got_subcommand(cmd_eval)) {
      std::vector<Rect> pred = read_boxes(results_path);
      std::vector<Rect> gt = read_boxes(gt_path);
      OPEResult r = ope_evaluate(pred, gt);
      std::printf("frames_scored  %zu\n", r.ious.size());
      std::printf("precision@20   %.6f\n", r.precision_at_20);
      std::printf("success_auc    %.6f\n", r.success_auc);
      if (!out_path.empty()) write_ope_report(r, out_path + ".txt", out_path + ".csv");
    } else if (app.got_subcommand(cmd_grad)) {
      return run_gradcheck();
    } else if (app.got_subcommand(cmd_params)) {
      TrainConfig cfg = load_train_config(config_path);
      const BackboneConfig& b = cfg.backbone;
      std::printf("embed_dim %d heads %d patch %d L %d L1 %d L2 %d\n", b.embed_dim, b.num_heads,
                  b.patch_size, b.teacher_layers, b.student_stage1, b.student_stage2);
      std::printf("teacher params  %lld\n", static_cast<long long>(count_teacher_params(b)));
      std::printf("student params  %lld\n", static_cast<long long>(count_student_params(b)));
      std::printf("student macs    %lld\n", static_cast<long long>(count_student_flops(b)));
    } else if (app.got_subcommand(cmd_gen)) {
      SceneConfig sc = scene_path.empty() ? SceneConfig{} : scene_from_file(scene_path);
      if (seed_set) sc.seed = seed_override;
      SyntheticSequence seq = generate_sequence(sc);
      write_sequence(seq, out_path);
      std::printf("wrote %d frames to %s\n", sc.num_frames, out_path.c_str());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
