#include "harmonizer/losses.hpp"
#include "support.hpp"

#include <doctest.h>

using namespace harmonizer;
using harmonizer::testing::check_gradients;
using harmonizer::testing::random_image;
using harmonizer::testing::shifted;
using harmonizer::testing::textured_frame;

TEST_CASE("loss_l2: zero, constant offset and brute-force sum") {
  const Frame a = random_image(8, 8, 3, 1);
  CHECK(loss_l2(a, a) == 0.0);
  Image b = filled(4, 4, 3, 0.25), c = filled(4, 4, 3, 0.75);
  CHECK(loss_l2(c, b) == 0.25);
  const Frame d = random_image(8, 8, 3, 2);
  double acc = 0.0;
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      for (int ch = 0; ch < 3; ++ch) acc += (a.at(y, x, ch) - d.at(y, x, ch)) * (a.at(y, x, ch) - d.at(y, x, ch));
    }
  }
  CHECK(loss_l2(a, d) == doctest::Approx(acc / 192.0).epsilon(1e-14));
}

TEST_CASE("sample_patches stays inside the frame and within the size range") {
  LossWeights w;
  w.patch_min = 4;
  w.patch_max = 12;
  w.patches_per_step = 50;
  Rng rng(3);
  for (const PatchSample& p : sample_patches(w, 16, 20, rng)) {
    CHECK(p.size >= 4);
    CHECK(p.size <= 12);
    CHECK(p.y + p.size <= 16);
    CHECK(p.x + p.size <= 20);
  }
  w.patch_max = 17;
  CHECK_THROWS_AS(w.validate(16, 16), InvalidArgument);
}

TEST_CASE("loss_perceptual: zero on identical inputs and seeded") {
  const ConvFeatureExtractor fx;
  LossWeights w;
  w.patch_min = 8;
  w.patch_max = 16;
  const Frame a = random_image(16, 16, 3, 4), b = random_image(16, 16, 3, 5);
  Rng r0(1);
  CHECK(loss_perceptual(a, a, fx, w, r0) == 0.0);
  Rng r1(9), r2(9);
  const double v1 = loss_perceptual(a, b, fx, w, r1), v2 = loss_perceptual(a, b, fx, w, r2);
  CHECK(v1 == v2);
  CHECK(v1 > 0.0);
}

TEST_CASE("loss_perceptual: degenerate identity extractor gives the patch Frobenius distance") {
  ConvStage id;
  id.kernel = 1;
  id.in_channels = 3;
  id.out_channels = 3;
  id.relu = false;
  id.weight = Mat::Identity(3, 3);
  id.bias = Mat::Zero(1, 3);
  const ConvFeatureExtractor fx({id});
  LossWeights w;
  w.patch_min = w.patch_max = 5;
  w.patches_per_step = 1;
  w.layer_weights = {1.0};
  w.normalize_features = false;
  const Frame a = random_image(9, 9, 3, 6), b = random_image(9, 9, 3, 7);
  Rng draw(11), loss_rng(11);
  const PatchSample p = sample_patches(w, 9, 9, draw)[0];
  double frob = 0.0;
  for (int y = p.y; y < p.y + p.size; ++y) {
    for (int x = p.x; x < p.x + p.size; ++x) {
      for (int c = 0; c < 3; ++c) frob += std::pow(a.at(y, x, c) - b.at(y, x, c), 2);
    }
  }
  CHECK(loss_perceptual(a, b, fx, w, loss_rng) == doctest::Approx(frob).epsilon(1e-12));
}

TEST_CASE("loss_temporal: zero cases") {
  const Frame f = random_image(8, 8, 3, 8);
  CHECK(loss_temporal(f, f, FlowField(8, 8), ValidityMask(8, 8, true)) == 0.0);
  CHECK(loss_temporal(f, random_image(8, 8, 3, 9), FlowField(8, 8), ValidityMask(8, 8, false)) == 0.0);
  // pred_t(x) = pred_tm1(x + (2, 1)): the supplied flow explains it exactly.
  const Frame prev = textured_frame(12, 12, 10);
  const Frame cur = shifted(prev, -2, -1, random_image(12, 12, 3, 11));
  CHECK(loss_temporal(cur, prev, FlowField::constant(12, 12, 2, 1), ValidityMask(12, 12, true)) == 0.0);
}

TEST_CASE("loss_total: weight selection and term sum") {
  const ConvFeatureExtractor fx;
  LossWeights w;
  w.patch_min = 8;
  w.patch_max = 16;
  const Frame a = random_image(16, 16, 3, 12), b = random_image(16, 16, 3, 13), prev = random_image(16, 16, 3, 14);
  const FlowField flow = FlowField::constant(16, 16, 1, 0);
  const ValidityMask valid(16, 16, true);

  ag::Tape t;
  ag::Var pa = t.constant(a.pixels), pb = t.constant(b.pixels);
  {
    LossWeights only = w;
    only.lambda_perc = 0.0;
    only.lambda_temp = 0.0;
    Rng rng(1);
    CHECK(loss_total(pa, pb, 16, 16, std::nullopt, only, fx, rng).total.scalar() == loss_l2(a, b));
    Rng rng2(1);
    CHECK(loss_total(pa, pa, 16, 16, std::nullopt, only, fx, rng2).total.scalar() == 0.0);
  }
  {
    Rng rng(2), rng_ref(2);
    const TemporalInputs ti{t.constant(prev.pixels), &flow, &valid};
    const LossResult r = loss_total(pa, pb, 16, 16, ti, w, fx, rng);
    const double expected = loss_l2(a, b) + loss_perceptual(a, b, fx, w, rng_ref) + loss_temporal(a, prev, flow, valid);
    CHECK(std::abs(r.total.scalar() - expected) <= 1e-12);
    CHECK(r.breakdown.temp > 0.0);
  }
  {
    Rng rng(3);
    CHECK_THROWS_AS(loss_total(pa, pb, 16, 16, std::nullopt, w, fx, rng), LossContractError);
  }
}

TEST_CASE("loss gradients match finite differences") {
  const ConvFeatureExtractor fx;
  LossWeights w;
  w.patch_min = 4;
  w.patch_max = 8;
  w.patches_per_step = 2;
  const Mat target = random_image(8, 8, 3, 20).pixels;
  const FlowField flow = FlowField::constant(8, 8, 0.4, -0.7);
  const ValidityMask valid(8, 8, true);
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const Mat pred = random_image(8, 8, 3, seed).pixels, prev = random_image(8, 8, 3, seed + 10).pixels;
    auto l2 = [&](ag::Tape& t, const std::vector<ag::Var>& v) { return loss_l2(v[0], t.constant(target)); };
    auto perc = [&](ag::Tape& t, const std::vector<ag::Var>& v) {
      Rng rng(seed);
      return loss_perceptual(v[0], t.constant(target), 8, 8, fx, w, rng);
    };
    auto temp = [&](ag::Tape&, const std::vector<ag::Var>& v) { return loss_temporal(v[0], v[1], 8, 8, flow, valid); };
    CHECK(check_gradients(l2, {pred}).relative_error <= 1e-4);
    CHECK(check_gradients(perc, {pred}).relative_error <= 1e-4);
    CHECK(check_gradients(temp, {pred, prev}).relative_error <= 1e-4);
  }
}
