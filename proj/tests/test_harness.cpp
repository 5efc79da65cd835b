#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "asymtrack/checkpoint.hpp"
#include "asymtrack/train.hpp"
#include "doctest.h"

using namespace asymtrack;

namespace {

std::string read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::vector<double> flatten_params(StudentModel& m) {
  std::vector<double> out;
  m.visit_params([&](const std::string&, Tensor& t) {
    out.insert(out.end(), t.data().begin(), t.data().end());
  });
  return out;
}

TrainConfig fast_config() {
  TrainConfig c;
  c.backbone = BackboneConfig::desk_test();
  c.batch_size = 2;
  c.steps = 4;
  c.seed = 3;
  return c;
}

SampleSource small_source(std::uint64_t seed, const TrainConfig& cfg) {
  auto [seqs, scenes] = make_training_scenes(seed, 2, 16);
  return SampleSource(std::move(seqs), std::move(scenes), cfg.template_factor, cfg.search_factor,
                      cfg.backbone.template_size, cfg.backbone.search_size);
}

}  // namespace

TEST_CASE("static scene has a constant ground truth") {
  SceneConfig sc;
  sc.vel_x = 0.0;
  sc.vel_y = 0.0;
  sc.num_frames = 10;
  SyntheticSequence seq = generate_sequence(sc);
  REQUIRE(seq.gt.size() == 10);
  for (const auto& b : seq.gt) {
    CHECK(b.x == seq.gt[0].x);
    CHECK(b.y == seq.gt[0].y);
    CHECK(b.w == seq.gt[0].w);
    CHECK(b.h == seq.gt[0].h);
  }
}

TEST_CASE("generation is bit-deterministic in the seed") {
  SceneConfig sc;
  sc.num_frames = 6;
  sc.distractors = 2;
  SyntheticSequence a = generate_sequence(sc);
  SyntheticSequence b = generate_sequence(sc);
  for (std::size_t f = 0; f < a.frames.size(); ++f) CHECK(a.frames[f].pix == b.frames[f].pix);
  sc.seed += 1;
  SyntheticSequence c = generate_sequence(sc);
  CHECK(a.frames[0].pix != c.frames[0].pix);
}

TEST_CASE("occluder covers the target exactly in the configured interval") {
  SceneConfig sc;
  sc.num_frames = 45;
  sc.occlusions = {{30, 40}};
  SceneConfig clean = sc;
  clean.occlusions.clear();
  SyntheticSequence occ = generate_sequence(sc);
  SyntheticSequence ref = generate_sequence(clean);
  for (int f = 0; f < sc.num_frames; ++f) {
    const Rect& b = occ.gt[static_cast<std::size_t>(f)];
    int x0 = static_cast<int>(std::ceil(b.x)), x1 = static_cast<int>(std::floor(b.x + b.w));
    int y0 = static_cast<int>(std::ceil(b.y)), y1 = static_cast<int>(std::floor(b.y + b.h));
    int total = 0, differing = 0;
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) {
        ++total;
        if (occ.frames[static_cast<std::size_t>(f)].at(y, x, 0) !=
            ref.frames[static_cast<std::size_t>(f)].at(y, x, 0))
          ++differing;
      }
    double cover = static_cast<double>(differing) / total;
    if (f >= 30 && f <= 40) {
      CHECK(frame_occluded(sc, f));
      CHECK(cover >= 0.7);
    } else {
      CHECK_FALSE(frame_occluded(sc, f));
      CHECK(cover == 0.0);
    }
  }
}

TEST_CASE("brightness drift dims the target but not the background") {
  SceneConfig sc;
  sc.num_frames = 40;
  sc.vel_x = 0.0;
  sc.vel_y = 0.0;
  SceneConfig dim = sc;
  dim.brightness_drift = -0.015;
  SyntheticSequence ref = generate_sequence(sc);
  SyntheticSequence drifted = generate_sequence(dim);
  const Rect& b = ref.gt[0];
  // frame 0 has gain 1: identical images
  CHECK(drifted.frames[0].pix == ref.frames[0].pix);
  auto target_mean = [&](const Image& img) {
    double s = 0.0;
    int n = 0;
    for (int y = static_cast<int>(b.y) + 2; y < static_cast<int>(b.y + b.h) - 2; ++y)
      for (int x = static_cast<int>(b.x) + 2; x < static_cast<int>(b.x + b.w) - 2; ++x) {
        s += img.at(y, x, 0);
        ++n;
      }
    return s / n;
  };
  double prev = target_mean(drifted.frames[0]);
  for (int f : {10, 25, 39}) {
    const Image& a = drifted.frames[static_cast<std::size_t>(f)];
    const Image& r = ref.frames[static_cast<std::size_t>(f)];
    double m = target_mean(a);
    CHECK(m < prev);  // target keeps dimming
    prev = m;
    CHECK(target_mean(r) > m);
    // background corner pixel untouched
    CHECK(a.at(1, 1, 0) == r.at(1, 1, 0));
  }
  // gain is clamped away from zero
  SceneConfig crushed = sc;
  crushed.brightness_drift = -1.0;
  SyntheticSequence dark = generate_sequence(crushed);
  double mx = 0.0;
  for (int y = static_cast<int>(b.y) + 2; y < static_cast<int>(b.y + b.h) - 2; ++y)
    for (int x = static_cast<int>(b.x) + 2; x < static_cast<int>(b.x + b.w) - 2; ++x)
      mx = std::max(mx, dark.frames[30].at(y, x, 0));
  CHECK(mx > 0.0);
}

TEST_CASE("a path leaving the frame is rejected") {
  SceneConfig sc;
  sc.vel_x = 10.0;
  sc.num_frames = 60;
  CHECK_THROWS_AS(generate_sequence(sc), std::invalid_argument);
}

TEST_CASE("sequence files round-trip through PPM quantization") {
  SceneConfig sc;
  sc.num_frames = 3;
  SyntheticSequence seq = generate_sequence(sc);
  std::string dir = "harness_seq_test";
  write_sequence(seq, dir);
  SyntheticSequence back = read_sequence(dir);
  REQUIRE(back.frames.size() == 3);
  for (std::size_t f = 0; f < 3; ++f)
    for (std::size_t i = 0; i < seq.frames[f].pix.size(); ++i)
      CHECK(back.frames[f].pix[i] == quantize_byte(seq.frames[f].pix[i]));
  for (std::size_t f = 0; f < 3; ++f) {
    CHECK(std::abs(back.gt[f].x - seq.gt[f].x) <= 5e-5);
    CHECK(std::abs(back.gt[f].w - seq.gt[f].w) <= 5e-5);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("key-value configuration parsing") {
  std::string path = "harness_cfg_test.txt";
  {
    std::ofstream f(path);
    f << "# comment\n\n  steps = 12 \nlr_backbone = 0.001\nfeat_distill = false\n";
  }
  TrainConfig c = TrainConfig::from_file(path);
  CHECK(c.steps == 12);
  CHECK(c.lr_backbone == 0.001);
  CHECK_FALSE(c.feat_distill);
  CHECK(c.batch_size == 8);  // untouched default

  {
    std::ofstream f(path);
    f << "steps = 5\nnot_a_key = 1\n";
  }
  CHECK_THROWS_AS(TrainConfig::from_file(path), std::runtime_error);

  {
    std::ofstream f(path);
    f << "steps 5\n";
  }
  CHECK_THROWS_AS(TrainConfig::from_file(path), std::runtime_error);

  {
    std::ofstream f(path);
    f << "feat_distill = maybe\n";
  }
  CHECK_THROWS_AS(TrainConfig::from_file(path), std::runtime_error);
  std::remove(path.c_str());
}

TEST_CASE("checkpoint round trip is bit-exact") {
  BackboneConfig cfg = BackboneConfig::desk_test();
  Rng rng(5);
  StudentModel a = StudentModel::init(cfg, rng);
  StudentModel b = StudentModel::init(cfg, rng);  // different values, same shapes
  std::string path = "harness_ckpt_test.bin";
  save_checkpoint(a, path);
  load_checkpoint(b, path);
  CHECK(flatten_params(a) == flatten_params(b));

  // a reload writes identical bytes
  std::string path2 = "harness_ckpt_test2.bin";
  save_checkpoint(b, path2);
  CHECK(read_file_bytes(path) == read_file_bytes(path2));

  // architecture mismatch is rejected
  Rng rng2(6);
  TeacherModel t = TeacherModel::init(cfg, rng2);
  CHECK_THROWS_AS(load_checkpoint(t, path), std::runtime_error);

  // trailing bytes are rejected
  {
    std::ofstream f(path, std::ios::binary | std::ios::app);
    f.put('\0');
  }
  CHECK_THROWS_AS(load_checkpoint(b, path), std::runtime_error);
  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("adamw update oracles") {
  auto single = [](double value, double grad, AdamWConfig cfg) {
    Tensor p = Tensor::from_data({1}, {value});
    p.set_requires_grad(true);
    p.grad_mut()[0] = grad;
    std::vector<std::pair<std::string, Tensor>> group{{"p", p}};
    AdamW opt(cfg);
    opt.step(group);
    return p.data()[0];
  };

  // zero gradient, zero decay: unchanged
  CHECK(single(1.5, 0.0, {0.1, 0.0}) == 1.5);
  // hand-expanded single step: p = 1 - lr * mhat/(sqrt(vhat)+eps) ~ 0.9
  CHECK(single(1.0, 1.0, {0.1, 0.0}) == doctest::Approx(0.9).epsilon(1e-7));
  // decoupled decay with zero gradient shrinks the weight multiplicatively
  CHECK(single(2.0, 0.0, {0.1, 0.01}) == doctest::Approx(2.0 * (1 - 0.1 * 0.01)).epsilon(1e-15));

  // constant gradient: per-step delta approaches lr * sign(g)
  Tensor p = Tensor::from_data({1}, {0.0});
  p.set_requires_grad(true);
  std::vector<std::pair<std::string, Tensor>> group{{"p", p}};
  AdamW opt({0.01, 0.0});
  double prev = 0.0;
  double delta = 0.0;
  for (int i = 0; i < 200; ++i) {
    p.grad_mut()[0] = -3.0;
    opt.step(group);
    delta = p.data()[0] - prev;
    prev = p.data()[0];
  }
  CHECK(delta == doctest::Approx(0.01).epsilon(1e-4));

  Tensor bad = Tensor::from_data({1}, {0.0});
  bad.set_requires_grad(true);
  bad.grad_mut()[0] = std::nan("");
  std::vector<std::pair<std::string, Tensor>> bg{{"q", bad}};
  AdamW opt2({0.01, 0.0});
  CHECK_THROWS_AS(opt2.step(bg), std::runtime_error);
}

TEST_CASE("drawn samples are well-formed") {
  TrainConfig cfg = fast_config();
  SampleSource src = small_source(11, cfg);
  Rng rng(12);
  for (int i = 0; i < 40; ++i) {
    TrainingSample s = src.draw(rng);
    CHECK(s.search.height == cfg.backbone.search_size);
    CHECK(s.template_a.height == cfg.backbone.template_size);
    CHECK(s.gt.valid());
    // the search crop is centered near the target: gt stays in the middle half
    CHECK(s.gt.cx > 0.2);
    CHECK(s.gt.cx < 0.8);
    CHECK(s.gt.cy > 0.2);
    CHECK(s.gt.cy < 0.8);
  }
}

TEST_CASE("horizontal flip maps boxes consistently") {
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    auto rand_box = [&rng] {
      BBox b;
      b.w = rng.uniform(0.1, 0.5);
      b.h = rng.uniform(0.1, 0.5);
      b.cx = rng.uniform(b.w / 2, 1.0 - b.w / 2);
      b.cy = rng.uniform(b.h / 2, 1.0 - b.h / 2);
      return b;
    };
    BBox a = rand_box(), g = rand_box();
    auto to_rect = [](const BBox& b) { return Rect{b.cx - b.w / 2, b.cy - b.h / 2, b.w, b.h}; };
    auto flip = [](BBox b) {
      b.cx = 1.0 - b.cx;
      return b;
    };
    double base = rect_iou(to_rect(a), to_rect(g));
    double flipped = rect_iou(to_rect(flip(a)), to_rect(flip(g)));
    CHECK(flipped == doctest::Approx(base).epsilon(1e-12));
    // top-left corner convention: x -> 1 - x - w
    BBox f = flip(a);
    CHECK(f.cx - f.w / 2 == doctest::Approx(1.0 - (a.cx - a.w / 2) - a.w).epsilon(1e-12));
  }
}

TEST_CASE("teacher training reduces the loss on a tiny run") {
  TrainConfig cfg = fast_config();
  cfg.steps = 40;
  cfg.lr_backbone = 4e-4;
  cfg.lr_other = 4e-3;
  SampleSource src = small_source(21, cfg);
  Rng rng(22);
  TeacherModel teacher = TeacherModel::init(cfg.backbone, rng);
  auto history = train_teacher(teacher, src, cfg);
  REQUIRE(static_cast<int>(history.size()) == cfg.steps);
  for (const auto& h : history) CHECK(std::isfinite(h.total));
  double head = (history[0].total + history[1].total + history[2].total) / 3.0;
  double tail = (history[cfg.steps - 3].total + history[cfg.steps - 2].total +
                 history[cfg.steps - 1].total) /
                3.0;
  CHECK(tail < head);
}

TEST_CASE("disabled distillation matches a zero-weight run bit-exactly") {
  TrainConfig cfg = fast_config();
  SampleSource src = small_source(31, cfg);
  Rng init_rng(32);
  TeacherModel teacher = TeacherModel::init(cfg.backbone, init_rng);

  Rng srng(33);
  StudentModel s1 = StudentModel::init(cfg.backbone, srng);
  Rng srng2(33);
  StudentModel s2 = StudentModel::init(cfg.backbone, srng2);

  TrainConfig toggles_off = cfg;
  toggles_off.feat_distill = false;
  toggles_off.pred_distill = false;
  TrainConfig weights_zero = cfg;
  weights_zero.weights.lambda3 = 0.0;
  weights_zero.weights.lambda4 = 0.0;
  auto h1 = train_student(teacher, s1, src, toggles_off);
  auto h2 = train_student(teacher, s2, src, weights_zero);
  CHECK(flatten_params(s1) == flatten_params(s2));
  for (std::size_t i = 0; i < h1.size(); ++i) {
    CHECK(h1[i].total == h2[i].total);
    CHECK(h1[i].feat == 0.0);
    CHECK(h2[i].pred == 0.0);
  }
}

TEST_CASE("student training is deterministic and freezes the teacher") {
  TrainConfig cfg = fast_config();
  SampleSource src = small_source(41, cfg);
  Rng trng(42);
  TeacherModel teacher = TeacherModel::init(cfg.backbone, trng);
  std::string before = "harness_teacher_before.bin";
  std::string after = "harness_teacher_after.bin";
  save_checkpoint(teacher, before);

  Rng srng(43);
  StudentModel sa = StudentModel::init(cfg.backbone, srng);
  Rng srng2(43);
  StudentModel sb = StudentModel::init(cfg.backbone, srng2);
  auto ha = train_student(teacher, sa, src, cfg);
  save_checkpoint(teacher, after);
  CHECK(read_file_bytes(before) == read_file_bytes(after));  // frozen teacher

  auto hb = train_student(teacher, sb, src, cfg);
  CHECK(flatten_params(sa) == flatten_params(sb));
  for (std::size_t i = 0; i < ha.size(); ++i) {
    CHECK(ha[i].total == hb[i].total);
    CHECK(ha[i].feat >= 0.0);
    CHECK(std::isfinite(ha[i].pred));
  }
  std::remove(before.c_str());
  std::remove(after.c_str());
}

TEST_CASE("stage-2 cosine diagnostic is a valid similarity") {
  TrainConfig cfg = fast_config();
  SampleSource src = small_source(51, cfg);
  Rng trng(52);
  TeacherModel teacher = TeacherModel::init(cfg.backbone, trng);
  Rng srng(53);
  StudentModel student = StudentModel::init(cfg.backbone, srng);
  double sim = mean_stage2_cosine(teacher, student, src, 54, 4);
  CHECK(std::isfinite(sim));
  CHECK(sim >= -1.0);
  CHECK(sim <= 1.0);
  double again = mean_stage2_cosine(teacher, student, src, 54, 4);
  CHECK(sim == again);
}
