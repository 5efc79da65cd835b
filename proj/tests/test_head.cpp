#include <cmath>
#include <vector>

#include "asymtrack/gradcheck.hpp"
#include "asymtrack/head.hpp"
#include "asymtrack/objective.hpp"
#include "asymtrack/rng.hpp"
#include "doctest.h"

using namespace asymtrack;

namespace {

// Smallest legal head configuration: D=8, 2x2 search grid, 1 template token.
BackboneConfig micro_config() {
  BackboneConfig c;
  c.embed_dim = 8;
  c.num_heads = 1;
  c.patch_size = 16;
  c.template_size = 16;
  c.search_size = 32;
  return c;
}

TokenSeq random_joint(const BackboneConfig& c, Rng& rng) {
  std::int64_t n = c.template_tokens() + c.search_tokens();
  std::vector<double> v(static_cast<std::size_t>(n) * c.embed_dim);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  TokenSeq j;
  j.tokens = Tensor::from_data({n, c.embed_dim}, std::move(v));
  j.origin = TokenOrigin::kJoint;
  return j;
}

void zero_head(HeadParams& h) {
  visit_head(h, "head", [](const std::string&, Tensor& t) {
    for (auto& v : t.data_mut()) v = 0.0;
  });
}

}  // namespace

TEST_CASE("head output shapes") {
  BackboneConfig c = BackboneConfig::desk_test();
  Rng rng(1);
  HeadParams h = init_head(c.embed_dim, rng);
  TokenSeq joint = random_joint(c, rng);
  HeadOutput out = head_forward(joint, h, c);
  int g = c.search_grid();
  CHECK(out.score_logits.shape() == Shape{g, g});
  CHECK(out.offset.shape() == Shape{2, g, g});
  CHECK(out.size.shape() == Shape{2, g, g});
  for (double v : out.offset.data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  CHECK(out.score_logits.finite());
}

TEST_CASE("zero-weight head gives a uniform score map") {
  BackboneConfig c = BackboneConfig::desk_test();
  Rng rng(2);
  HeadParams h = init_head(c.embed_dim, rng);
  zero_head(h);
  TokenSeq joint = random_joint(c, rng);
  HeadOutput out = head_forward(joint, h, c);
  for (double v : out.score_logits.data()) CHECK(v == 0.0);
  Decoded d = decode_box(out.score_logits, out.offset, out.size);
  int cells = c.search_grid() * c.search_grid();
  CHECK(d.confidence == doctest::Approx(1.0 / cells).epsilon(1e-12));
  CHECK(d.argmax_row == 0);  // first occurrence on ties
  CHECK(d.argmax_col == 0);
}

TEST_CASE("decode oracle: delta at cell (8,8) of a 16x16 grid") {
  int g = 16;
  std::vector<double> logits(static_cast<std::size_t>(g) * g, 0.0);
  logits[8 * g + 8] = 50.0;
  // sigmoid output 0.5 everywhere
  std::vector<double> half(2 * static_cast<std::size_t>(g) * g, 0.5);
  std::vector<double> quarter(2 * static_cast<std::size_t>(g) * g, 0.25);
  Decoded d = decode_box(Tensor::from_data({g, g}, logits),
                         Tensor::from_data({2, g, g}, half),
                         Tensor::from_data({2, g, g}, quarter));
  CHECK(d.argmax_row == 8);
  CHECK(d.argmax_col == 8);
  CHECK(d.box.cx == doctest::Approx(0.53125).epsilon(1e-15));
  CHECK(d.box.cy == doctest::Approx(0.53125).epsilon(1e-15));
  CHECK(d.box.w == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(d.box.h == doctest::Approx(0.25).epsilon(1e-15));

  // corner case: argmax (0,0), zero offsets
  std::vector<double> corner(static_cast<std::size_t>(g) * g, 0.0);
  corner[0] = 50.0;
  std::vector<double> zeros(2 * static_cast<std::size_t>(g) * g, 0.0);
  Decoded dc = decode_box(Tensor::from_data({g, g}, corner),
                          Tensor::from_data({2, g, g}, zeros),
                          Tensor::from_data({2, g, g}, quarter));
  CHECK(dc.box.cx == 0.0);
  CHECK(dc.box.cy == 0.0);
}

TEST_CASE("decode rejects inconsistent shapes") {
  Tensor score = Tensor::zeros({4, 4});
  Tensor off = Tensor::zeros({2, 4, 4});
  CHECK_THROWS_AS(decode_box(score, off, Tensor::zeros({2, 3, 4})), std::invalid_argument);
  CHECK_THROWS_AS(decode_box(Tensor::zeros({16}), off, off), std::invalid_argument);
}

TEST_CASE("confidence is monotone in the argmax logit") {
  int g = 4;
  Rng rng(3);
  std::vector<double> logits(16);
  for (auto& v : logits) v = rng.uniform(-1.0, 1.0);
  std::vector<double> half(32, 0.5);
  Tensor off = Tensor::from_data({2, g, g}, half);
  double prev = 0.0;
  for (double boost : {1.0, 2.0, 3.0, 4.0}) {
    std::vector<double> l = logits;
    l[5] += 10.0 + boost;
    Decoded d = decode_box(Tensor::from_data({g, g}, l), off, off);
    CHECK(d.argmax_row == 1);
    CHECK(d.argmax_col == 1);
    CHECK(d.confidence > prev);
    prev = d.confidence;
  }
}

TEST_CASE("encode-decode round trip within half a cell") {
  int g = 16;
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    BBox gt;
    gt.w = rng.uniform(0.1, 0.6);
    gt.h = rng.uniform(0.1, 0.6);
    gt.cx = rng.uniform(gt.w / 2, 1.0 - gt.w / 2);
    gt.cy = rng.uniform(gt.h / 2, 1.0 - gt.h / 2);
    TargetMaps t = make_target_maps(gt, g, g);
    // ideal maps: spiked score at the center cell, constant offset/size
    std::vector<double> logits(static_cast<std::size_t>(g) * g, 0.0);
    logits[static_cast<std::size_t>(t.center_row) * g + t.center_col] = 50.0;
    std::vector<double> off(2 * static_cast<std::size_t>(g) * g);
    std::vector<double> sz(2 * static_cast<std::size_t>(g) * g);
    for (std::size_t i = 0; i < static_cast<std::size_t>(g) * g; ++i) {
      off[i] = t.offset_x;
      off[static_cast<std::size_t>(g) * g + i] = t.offset_y;
      sz[i] = t.size_w;
      sz[static_cast<std::size_t>(g) * g + i] = t.size_h;
    }
    Decoded d = decode_box(Tensor::from_data({g, g}, logits),
                           Tensor::from_data({2, g, g}, off), Tensor::from_data({2, g, g}, sz));
    CHECK(std::abs(d.box.cx - gt.cx) <= 0.5 / g + 1e-12);
    CHECK(std::abs(d.box.cy - gt.cy) <= 0.5 / g + 1e-12);
    CHECK(d.box.w == doctest::Approx(gt.w).epsilon(1e-12));
    CHECK(d.box.h == doctest::Approx(gt.h).epsilon(1e-12));
  }
}

TEST_CASE("focal loss gradient flows through the head") {
  BackboneConfig c = micro_config();
  Rng rng(5);
  HeadParams h = init_head(c.embed_dim, rng);
  BBox gt{0.6, 0.4, 0.5, 0.5};
  TargetMaps t = make_target_maps(gt, c.search_grid(), c.search_grid());
  std::int64_t n = c.template_tokens() + c.search_tokens();
  auto f = [&](const Tensor& tokens) {
    TokenSeq joint;
    joint.tokens = tokens;
    joint.origin = TokenOrigin::kJoint;
    HeadOutput out = head_forward(joint, h, c);
    return focal_loss(out.score_logits, t);
  };
  std::vector<double> v(static_cast<std::size_t>(n) * c.embed_dim);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  CHECK(grad_check(f, Tensor::from_data({n, c.embed_dim}, std::move(v))) < 1e-4);
}

TEST_CASE("head parameter gradients are populated") {
  BackboneConfig c = micro_config();
  Rng rng(6);
  HeadParams h = init_head(c.embed_dim, rng);
  TokenSeq joint = random_joint(c, rng);
  joint.tokens.set_requires_grad(true);
  HeadOutput out = head_forward(joint, h, c);
  add(sum(out.score_logits), add(sum(out.offset), sum(out.size))).backward();
  double grad_mass = 0.0;
  visit_head(h, "head", [&](const std::string&, Tensor& t) {
    for (double g : t.grad()) grad_mass += std::abs(g);
  });
  CHECK(grad_mass > 0.0);
  double in_grad = 0.0;
  for (double g : joint.tokens.grad()) in_grad += std::abs(g);
  CHECK(in_grad > 0.0);
}
