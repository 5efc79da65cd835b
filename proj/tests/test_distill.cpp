#include <cmath>
#include <vector>

#include "asymtrack/distill.hpp"
#include "asymtrack/gradcheck.hpp"
#include "asymtrack/rng.hpp"
#include "doctest.h"

using namespace asymtrack;

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_data(shape, std::move(v));
}

TargetMask ones_mask(int rows, int cols) {
  TargetMask m;
  m.rows = rows;
  m.cols = cols;
  m.values.assign(static_cast<std::size_t>(rows) * cols, 1.0);
  return m;
}

// B=1, K=1 batch over a 1x2 search grid with D=2 and no template rows.
DistillBatch tiny_batch(std::vector<double> student, std::vector<double> teacher,
                        std::vector<double> mask) {
  DistillBatch b;
  b.template_tokens = 0;
  b.student_feats = {{Tensor::from_data({2, 2}, std::move(student))}};
  b.teacher_feats = {{Tensor::from_data({2, 2}, std::move(teacher))}};
  TargetMask m;
  m.rows = 1;
  m.cols = 2;
  m.values = std::move(mask);
  b.masks = {m};
  b.student_logits = {Tensor::zeros({1, 2})};
  b.teacher_logits = {Tensor::zeros({1, 2})};
  return b;
}

}  // namespace

TEST_CASE("token mask geometry") {
  BBox full{0.5, 0.5, 1.0, 1.0};
  CHECK(make_token_mask(full, 16, 16).active_count() == 256);

  // width and height of one cell centered exactly on a cell center
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) {
      BBox one{(c + 0.5) / 8.0, (r + 0.5) / 8.0, 1.0 / 8.0, 1.0 / 8.0};
      TargetMask m = make_token_mask(one, 8, 8);
      CHECK(m.active_count() == 1);
      CHECK(m.values[static_cast<std::size_t>(r) * 8 + c] == 1.0);
    }

  TargetMask half = make_token_mask(BBox{0.5, 0.5, 0.5, 0.5}, 16, 16);
  CHECK(half.active_count() == 64);  // the 8x8 block of centers in [0.25, 0.75]^2
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 16; ++c) {
      bool in = r >= 4 && r < 12 && c >= 4 && c < 12;
      CHECK(half.values[static_cast<std::size_t>(r) * 16 + c] == (in ? 1.0 : 0.0));
    }

  // a box smaller than any cell still activates its nearest token
  TargetMask tinybox = make_token_mask(BBox{0.26, 0.26, 0.001, 0.001}, 4, 4);
  CHECK(tinybox.active_count() == 1);
  CHECK(tinybox.values[1 * 4 + 1] == 1.0);

  CHECK_THROWS_AS(make_token_mask(BBox{0.5, 0.5, 0.0, 0.1}, 4, 4), std::invalid_argument);
  CHECK_THROWS_AS(make_token_mask(BBox{0.5, 0.5, 0.1, 0.1}, 0, 4), std::invalid_argument);
}

TEST_CASE("feature loss hand oracle equals 5") {
  DistillBatch b = tiny_batch({1, 2, 5, 5}, {0, 0, 0, 0}, {1.0, 0.0});
  CHECK(feature_distill_loss(b).item() == 5.0);
}

TEST_CASE("feature loss is zero iff masked features agree") {
  Rng rng(1);
  Tensor x = random_tensor({4, 3}, rng);
  DistillBatch b;
  b.template_tokens = 2;
  b.student_feats = {{x}};
  b.teacher_feats = {{x}};
  b.masks = {ones_mask(1, 2)};
  CHECK(feature_distill_loss(b).item() == 0.0);

  // disagreement on an active token makes it strictly positive
  Tensor y = x.detach();
  y.data_mut()[2 * 3 + 1] += 0.5;  // row 2 = first search token
  b.teacher_feats = {{y}};
  CHECK(feature_distill_loss(b).item() > 0.0);
}

TEST_CASE("feature loss ignores template rows and inactive tokens bit-exactly") {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor x = random_tensor({6, 4}, rng);
    Tensor y = random_tensor({6, 4}, rng);
    TargetMask m;
    m.rows = 2;
    m.cols = 2;
    m.values = {1.0, 0.0, 0.0, 1.0};
    DistillBatch b;
    b.template_tokens = 2;
    b.student_feats = {{x}};
    b.teacher_feats = {{y}};
    b.masks = {m};
    double base = feature_distill_loss(b).item();

    Tensor x2 = x.detach();
    for (std::int64_t j = 0; j < 4; ++j) {
      x2.data_mut()[0 * 4 + j] += rng.uniform(-10.0, 10.0);  // template row
      x2.data_mut()[3 * 4 + j] += rng.uniform(-10.0, 10.0);  // inactive search token
      x2.data_mut()[4 * 4 + j] += rng.uniform(-10.0, 10.0);  // inactive search token
    }
    b.student_feats = {{x2}};
    CHECK(feature_distill_loss(b).item() == base);
  }
}

TEST_CASE("duplicating layers leaves the feature loss unchanged") {
  Rng rng(3);
  Tensor x = random_tensor({4, 3}, rng);
  Tensor y = random_tensor({4, 3}, rng);
  DistillBatch b;
  b.template_tokens = 0;
  b.student_feats = {{x}};
  b.teacher_feats = {{y}};
  b.masks = {ones_mask(2, 2)};
  double k1 = feature_distill_loss(b).item();
  b.student_feats = {{x, x}};
  b.teacher_feats = {{y, y}};
  CHECK(feature_distill_loss(b).item() == doctest::Approx(k1).epsilon(1e-15));
}

TEST_CASE("feature loss rejects malformed batches") {
  DistillBatch empty;
  CHECK_THROWS_AS(feature_distill_loss(empty), std::invalid_argument);
  DistillBatch b = tiny_batch({1, 2, 3, 4}, {0, 0, 0, 0}, {1.0, 1.0});
  b.teacher_feats[0][0] = Tensor::zeros({3, 2});
  CHECK_THROWS_AS(feature_distill_loss(b), std::invalid_argument);
}

TEST_CASE("prediction loss hand oracles") {
  DistillBatch b;
  b.template_tokens = 0;
  TargetMask m;
  m.rows = 1;
  m.cols = 2;
  m.values = {1.0, 1.0};
  b.masks = {m};
  b.student_feats = {{Tensor::zeros({2, 1})}};
  b.teacher_feats = {{Tensor::zeros({2, 1})}};
  b.student_logits = {Tensor::from_data({1, 2}, {0.0, 0.0})};
  b.teacher_logits = {Tensor::from_data({1, 2}, {std::log(3.0), 0.0})};
  DistillConfig cfg;
  cfg.temperature = 1.0;
  double expect = 0.25 * std::log(4.0 / 3.0);  // (0.5 ln(2/3) + 0.5 ln 2)/2
  CHECK(prediction_distill_loss(b, cfg).item() == doctest::Approx(expect).epsilon(1e-12));

  b.masks[0].values = {0.0, 1.0};
  CHECK(prediction_distill_loss(b, cfg).item() ==
        doctest::Approx(0.5 * std::log(2.0)).epsilon(1e-12));

  b.teacher_logits = {Tensor::from_data({1, 2}, {0.0, 0.0})};
  b.masks[0].values = {1.0, 1.0};
  CHECK(std::abs(prediction_distill_loss(b, cfg).item()) < 1e-12);  // identical distributions
}

TEST_CASE("prediction loss rejects bad inputs") {
  DistillBatch b = tiny_batch({0, 0, 0, 0}, {0, 0, 0, 0}, {0.0, 0.0});
  CHECK_THROWS_AS(prediction_distill_loss(b), std::invalid_argument);  // all-zero mask
  b.masks[0].values = {1.0, 1.0};
  DistillConfig cfg;
  cfg.temperature = 0.0;
  CHECK_THROWS_AS(prediction_distill_loss(b, cfg), std::invalid_argument);
}

TEST_CASE("full-map KL is non-negative over random logit pairs") {
  Rng rng(4);
  for (int trial = 0; trial < 1000; ++trial) {
    std::int64_t n = 2 + static_cast<std::int64_t>(rng.index(8));
    DistillBatch b;
    b.template_tokens = 0;
    b.masks = {ones_mask(1, static_cast<int>(n))};
    b.student_logits = {random_tensor({1, n}, rng, -4.0, 4.0)};
    b.teacher_logits = {random_tensor({1, n}, rng, -4.0, 4.0)};
    b.student_feats = {{Tensor::zeros({n, 1})}};
    b.teacher_feats = {{Tensor::zeros({n, 1})}};
    DistillConfig cfg;
    cfg.temperature = rng.uniform(0.5, 4.0);
    // all-ones mask makes the loss the full-map KL divided by n
    CHECK(prediction_distill_loss(b, cfg).item() >= -1e-15);
  }
}

TEST_CASE("masked partial sums may be negative but stay finite") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    DistillBatch b;
    b.template_tokens = 0;
    TargetMask m = ones_mask(2, 2);
    m.values[static_cast<std::size_t>(rng.index(4))] = 0.0;
    b.masks = {m};
    b.student_logits = {random_tensor({2, 2}, rng, -4.0, 4.0)};
    b.teacher_logits = {random_tensor({2, 2}, rng, -4.0, 4.0)};
    double v = prediction_distill_loss(b).item();
    CHECK(std::isfinite(v));
  }
}

TEST_CASE("distillation losses pass grad_check on the student side") {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor y = random_tensor({4, 3}, rng);
    TargetMask m;
    m.rows = 1;
    m.cols = 2;
    m.values = {1.0, rng.uniform() < 0.5 ? 1.0 : 0.0};
    auto feat_f = [&](const Tensor& x) {
      DistillBatch b;
      b.template_tokens = 2;
      b.student_feats = {{x}};
      b.teacher_feats = {{y}};
      b.masks = {m};
      return feature_distill_loss(b);
    };
    CHECK(grad_check(feat_f, random_tensor({4, 3}, rng)) < 1e-4);

    Tensor tl = random_tensor({2, 2}, rng);
    auto pred_f = [&](const Tensor& sl) {
      DistillBatch b;
      b.template_tokens = 0;
      TargetMask m2 = ones_mask(2, 2);
      b.masks = {m2};
      b.student_logits = {sl};
      b.teacher_logits = {tl};
      return prediction_distill_loss(b);
    };
    CHECK(grad_check(pred_f, random_tensor({2, 2}, rng)) < 1e-4);
  }
}

TEST_CASE("teacher inputs receive no gradient") {
  Rng rng(7);
  Tensor x = random_tensor({4, 3}, rng);
  Tensor y = random_tensor({4, 3}, rng);
  x.set_requires_grad(true);
  // teacher stays a non-grad leaf, mirroring a frozen model
  DistillBatch b;
  b.template_tokens = 2;
  b.student_feats = {{x}};
  b.teacher_feats = {{y}};
  b.masks = {ones_mask(1, 2)};
  b.student_logits = {random_tensor({1, 2}, rng)};
  b.teacher_logits = {random_tensor({1, 2}, rng)};
  b.student_logits[0].set_requires_grad(true);
  add(feature_distill_loss(b), prediction_distill_loss(b)).backward();
  double sg = 0.0;
  for (double g : x.grad()) sg += std::abs(g);
  CHECK(sg > 0.0);
  for (double g : y.grad()) CHECK(g == 0.0);
  for (double g : b.teacher_logits[0].grad()) CHECK(g == 0.0);
}
