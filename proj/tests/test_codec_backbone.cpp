#include "harmonizer/backbone.hpp"
#include "harmonizer/codec.hpp"
#include "support.hpp"

#include <doctest.h>

using namespace harmonizer;
using harmonizer::testing::random_image;

TEST_CASE("codec: zero frame encodes to a zero latent") {
  const Codec codec({.patch = 2});
  const LatentGrid z = codec.encode(Image(8, 8, 3));
  CHECK(z.height == 4);
  CHECK(z.width == 4);
  CHECK(z.channels() == 12);
  CHECK(z.values.isZero(0.0));
  CHECK(codec.decode(z).pixels.isZero(0.0));
}

TEST_CASE("codec: round trip is lossless for every patch size") {
  for (int p : {1, 2, 4}) {
    const Codec codec({.patch = p});
    const Frame f = random_image(16, 16, 3, 100 + p);
    CHECK((codec.decode(codec.encode(f)).pixels - f.pixels).cwiseAbs().maxCoeff() <= 1e-6);
  }
  const Codec codec({.patch = 1});
  const Frame ones = filled(4, 4, 3, 1.0);
  CHECK((codec.decode(codec.encode(ones)).pixels - ones.pixels).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("codec: encoding preserves the Frobenius norm") {
  const Codec codec({.patch = 4});
  const Frame f = random_image(16, 16, 3, 7);
  const double fn = f.pixels.squaredNorm(), zn = codec.encode(f).values.squaredNorm();
  CHECK(std::abs(fn - zn) <= 1e-9 * fn);
  // Independent check of orthogonality of the mixing matrix.
  const Mat& q = codec.mixing();
  CHECK((q.transpose() * q - Mat::Identity(q.rows(), q.cols())).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("codec: graph encode/decode match the direct versions") {
  const Codec codec({.patch = 2});
  const Frame f = random_image(8, 8, 3, 9);
  ag::Tape t;
  ag::Var z = codec.encode(t.constant(f.pixels), 8, 8);
  CHECK(z.value() == codec.encode(f).values);
  CHECK(codec.decode(z, 8, 8).value() == codec.decode(codec.encode(f)).pixels);
}

TEST_CASE("codec: frames not divisible by the patch are rejected") {
  const Codec codec({.patch = 4});
  CHECK_THROWS(codec.encode(Image(6, 8, 3)));
}

using harmonizer::testing::perturbed_params;
using harmonizer::testing::tiny_config;

TEST_CASE("backbone: identity at initialisation") {
  const BackboneConfig c = tiny_config();
  const Backbone b(c);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const ModelParams p = init_params(c, seed);
    const Frame f = random_image(8, 8, 3, seed);
    CHECK((b.enhance_frame_unclamped(f, {}, p).pixels - f.pixels).cwiseAbs().maxCoeff() <= 1e-6);
    const LatentGrid z = b.codec().encode(f);
    CHECK((b.forward(z, {}, p).values - z.values).cwiseAbs().maxCoeff() <= 1e-6);
  }
}

TEST_CASE("backbone: init_params is seeded") {
  const BackboneConfig c = tiny_config();
  CHECK(init_params(c, 5) == init_params(c, 5));
  CHECK_FALSE(init_params(c, 5).at("embed.w") == init_params(c, 6).at("embed.w"));
}

TEST_CASE("backbone: deterministic and context sensitive") {
  const BackboneConfig c = tiny_config();
  const Backbone b(c);
  const ModelParams p = perturbed_params(c, 4);
  const LatentGrid z = b.codec().encode(random_image(8, 8, 3, 4));
  const LatentGrid a = b.forward(z, {}, p);
  CHECK(a == b.forward(z, {}, p));
  TemporalContext ctx;
  ctx.entries = {z, z};
  ctx.timestamps = {1, 0};
  const LatentGrid with = b.forward(z, ctx, p);
  CHECK((with.values - a.values).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("backbone: rejects oversize context and malformed parameters") {
  const BackboneConfig c = tiny_config();
  const Backbone b(c);
  const ModelParams p = init_params(c, 1);
  const LatentGrid z = b.codec().encode(random_image(8, 8, 3, 1));
  TemporalContext ctx;
  ctx.entries = {z, z, z};
  ctx.timestamps = {3, 2, 1};
  CHECK_THROWS_AS(b.forward(z, ctx, p), ContextError);
  ModelParams broken = p;
  broken.at("head.w") = Mat::Zero(1, 1);
  CHECK_THROWS(b.forward(z, {}, broken));
}

TEST_CASE("backbone: config validation") {
  BackboneConfig c = tiny_config();
  c.num_heads = 3;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = tiny_config();
  c.frame_width = 9;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
}

TEST_CASE("backbone: full-network gradients match finite differences") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    CHECK(harmonizer::testing::backbone_gradient_error(seed) <= 1e-4);
  }
}
