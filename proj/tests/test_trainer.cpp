#include "harmonizer/bytes.hpp"
#include "harmonizer/checkpoint.hpp"
#include "harmonizer/trainer.hpp"
#include "support.hpp"

#include <doctest.h>

#include <filesystem>

using namespace harmonizer;
using harmonizer::testing::random_image;

namespace fs = std::filesystem;

namespace {

TrainConfig small_config() {
  TrainConfig c;
  c.model.channels = 16;
  c.model.num_blocks = 1;
  c.model.num_heads = 2;
  c.model.ff_hidden = 32;
  c.model.context_K = 2;
  c.model.frame_height = c.model.frame_width = 32;
  c.model.codec = {.patch = 4};
  c.loss.patch_min = 8;
  c.loss.patch_max = 16;
  c.loss.patches_per_step = 2;
  c.pretrain_steps = 4;
  c.temporal_steps = 4;
  return c;
}

const Manifest& small_dataset() {
  static const Manifest m = [] {
    DatasetConfig d;
    d.width = d.height = 32;
    d.counts = {3, 3, 2, 3, 2};
    d.clip_length = 3;
    d.clip_fraction = 0.5;
    d.seed = 77;
    const fs::path root = fs::temp_directory_path() / "harmonizer_trainer_ds";
    fs::remove_all(root);
    return build_dataset(d, root);
  }();
  return m;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("harmonizer_" + name);
  fs::remove_all(p);
  return p;
}

/// Static clip (or image) whose input already equals its target.
PairedSample identity_sample(int frames, std::uint64_t seed) {
  PairedSample s;
  for (int t = 0; t < frames; ++t) {
    s.input.push_back(random_image(32, 32, 3, seed));
    s.masks.push_back(Mask(32, 32, 1));
  }
  s.target = s.input;
  s.temporal = frames > 1;
  for (int t = 1; t < frames; ++t) {
    s.flows.push_back(FlowField(32, 32));
    s.flow_valid.push_back(ValidityMask(32, 32, true));
  }
  return s;
}

}  // namespace

TEST_CASE("checkpoint: save/load round trip and corruption") {
  const TrainConfig c = small_config();
  const Trainer trainer(c);
  TrainState state = trainer.init_state();
  trainer.train_step(state, {identity_sample(1, 1), identity_sample(1, 2)});
  const Checkpoint ck = make_train_checkpoint(c, state);
  const auto bytes = encode_checkpoint(ck);
  const Checkpoint back = decode_checkpoint(bytes);
  CHECK(back.kind == CheckpointKind::train_state);
  CHECK(back.config == c.model);
  CHECK(back.state == state);
  CHECK(encode_checkpoint(back) == bytes);

  auto bad = bytes;
  bad[9] ^= 0x01;
  CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
  bad = bytes;
  bad.resize(bytes.size() / 2);
  CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
  bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);

  const fs::path p = scratch("ck.ckpt");
  save_checkpoint(p, ck);
  CHECK(load_checkpoint(p).state == state);
  fs::remove(p);
}

TEST_CASE("config: text round trip, unknown keys and invalid values") {
  TrainConfig c = small_config();
  c.loss.layer_weights = {0.5, 0.25, 0.25};
  c.strict_alternation = true;
  c.learning_rate = 3e-4;
  const TrainConfig back = parse_train_config(format_train_config(c));
  CHECK(format_train_config(back) == format_train_config(c));
  CHECK(back.model == c.model);
  CHECK(back.loss.layer_weights == c.loss.layer_weights);
  CHECK_THROWS_AS(parse_train_config("no_such_key = 1"), ConfigError);
  CHECK_THROWS_AS(parse_train_config("batch_size = two"), ConfigError);
  CHECK_THROWS_AS(parse_train_config("temporal_batch_fraction = 1.5").validate(), ConfigError);
  CHECK(parse_train_config("# comment\n  batch_size = 3  # trailing\n").batch_size == 3);
}

TEST_CASE("learning-rate schedule") {
  TrainConfig c;
  CHECK(c.learning_rate_at(0) == c.learning_rate);
  CHECK(c.learning_rate_at(2999) == c.learning_rate);
  c.lr_warmup_steps = 10;
  c.lr_cosine_decay = true;
  c.lr_final_fraction = 0.1;
  CHECK(c.learning_rate_at(0) == doctest::Approx(c.learning_rate / 10));
  CHECK(c.learning_rate_at(10) == doctest::Approx(c.learning_rate));
  CHECK(c.learning_rate_at(3000) == doctest::Approx(0.1 * c.learning_rate));
}

TEST_CASE("train_step: zero loss leaves parameters unchanged up to weight decay") {
  TrainConfig c = small_config();
  const Trainer trainer(c);
  TrainState state = trainer.init_state();
  const ModelParams before = state.params;
  const StepRecord r = trainer.train_step(state, {identity_sample(1, 3), identity_sample(1, 4)});
  // The identity holds up to the codec's floating-point round trip.
  CHECK(r.loss.total <= 1e-20);
  CHECK(r.loss.l2 <= 1e-20);
  CHECK(r.loss.perc <= 1e-20);
  CHECK(r.loss.temp == 0.0);
  for (std::size_t i = 0; i < before.tensors.size(); ++i) {
    const Mat& a = before.tensors[i].value;
    const Mat& b = state.params.tensors[i].value;
    // Decoupled decay, one single-precision ulp of rounding, and the
    // eps-damped step of a ~1e-16 gradient.
    const double ulp = 0x1.0p-23;
    CHECK(((b - a).array().abs() <= (c.learning_rate * c.weight_decay + ulp) * a.array().abs() + 1e-9).all());
  }

  c.weight_decay = 0.0;
  const Trainer plain(c);
  TrainState s2 = plain.init_state();
  plain.train_step(s2, {identity_sample(2, 5)});
  const ModelParams init = plain.init_state().params;
  for (std::size_t i = 0; i < init.tensors.size(); ++i) {
    CHECK((s2.params.tensors[i].value - init.tensors[i].value).cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("train_step: deterministic, forced temporal term, homogeneous batches") {
  const TrainConfig c = small_config();
  const Trainer trainer(c);
  const PairedSample img = load_sample(small_dataset(), small_dataset().select(false)[0]);
  const PairedSample clip = load_sample(small_dataset(), small_dataset().select(true)[0]);
  TrainState a = trainer.init_state(), b = trainer.init_state();
  const StepRecord ra = trainer.train_step(a, {img, img});
  trainer.train_step(b, {img, img});
  CHECK(a == b);
  CHECK(ra.loss.temp == 0.0);
  CHECK_FALSE(ra.temporal);
  CHECK_THROWS(trainer.train_step(a, {img, clip}));
}

TEST_CASE("train_step: temporal unroll conditions on the model's own outputs") {
  TrainConfig c = small_config();
  const Trainer trainer(c);
  TrainState state = trainer.init_state();
  // Move away from the identity so predictions differ from the inputs.
  state.params = harmonizer::testing::perturbed_params(c.model, 3, 0.05);
  const PairedSample clip = load_sample(small_dataset(), small_dataset().select(true)[0]);
  std::vector<Image> preds;
  std::vector<std::vector<Mat>> contexts;
  TrainHooks hooks;
  hooks.on_prediction = [&](int, int, const Image& p) { preds.push_back(p); };
  hooks.on_context = [&](int, int, const std::vector<Mat>& ctx) { contexts.push_back(ctx); };
  const StepRecord r = trainer.train_step(state, {clip}, hooks);
  CHECK(r.temporal);
  REQUIRE(preds.size() == static_cast<std::size_t>(clip.frames()));
  CHECK(contexts[0].empty());
  for (std::size_t t = 1; t < preds.size(); ++t) {
    REQUIRE(contexts[t].size() == std::min<std::size_t>(t, 2));
    for (std::size_t k = 0; k < contexts[t].size(); ++k) {
      Image clamped = preds[t - 1 - k];
      clamped.pixels = clamped.pixels.cwiseMax(0.0).cwiseMin(1.0);
      const LatentGrid expected = trainer.backbone().codec().encode(clamped);
      CHECK((contexts[t][k] - expected.values).cwiseAbs().maxCoeff() <= 1e-12);
      const LatentGrid truth = trainer.backbone().codec().encode(clip.target[t - 1 - k]);
      CHECK((contexts[t][k] - truth.values).cwiseAbs().maxCoeff() > 1e-6);
    }
  }
}

TEST_CASE("train_step: non-temporal batches never warp") {
  const TrainConfig c = small_config();
  const Trainer trainer(c);
  TrainState state = trainer.init_state();
  const PairedSample img = load_sample(small_dataset(), small_dataset().select(false)[0]);
  const auto before = warp_call_count();
  trainer.train_step(state, {img, img});
  CHECK(warp_call_count() == before);
  const PairedSample clip = load_sample(small_dataset(), small_dataset().select(true)[0]);
  trainer.train_step(state, {clip});
  CHECK(warp_call_count() > before);
}

TEST_CASE("run_training: zero steps reproduce the initialisation") {
  TrainConfig c = small_config();
  c.pretrain_steps = c.temporal_steps = 0;
  const fs::path out = scratch("run_zero");
  run_training(c, small_dataset(), out);
  CHECK(load_checkpoint(out / "model.ckpt").state.params == Trainer(c).init_state().params);
  fs::remove_all(out);
}

TEST_CASE("run_training: reproducible and resumable") {
  TrainConfig c = small_config();
  c.pretrain_steps = 3;
  c.temporal_steps = 3;
  const fs::path a = scratch("run_a"), b = scratch("run_b"), r = scratch("run_r");
  run_training(c, small_dataset(), a);
  run_training(c, small_dataset(), b);
  CHECK(read_file_bytes(a / "final.ckpt") == read_file_bytes(b / "final.ckpt"));
  RunOptions first;
  first.stop_at_step = 4;
  run_training(c, small_dataset(), r, first);
  RunOptions second;
  second.resume = r / "final.ckpt";
  run_training(c, small_dataset(), r, second);
  CHECK(read_file_bytes(a / "final.ckpt") == read_file_bytes(r / "final.ckpt"));
  CHECK(read_file_bytes(a / "model.ckpt") == read_file_bytes(r / "model.ckpt"));
  for (const fs::path& p : {a, b, r}) fs::remove_all(p);
}

TEST_CASE("run_training: phase schedule") {
  TrainConfig c = small_config();
  c.pretrain_steps = 3;
  c.temporal_steps = 6;
  c.strict_alternation = true;
  RunOptions o;
  o.write_log = false;
  const fs::path out = scratch("run_phase");
  const RunResult res = run_training(c, small_dataset(), out, o);
  REQUIRE(res.log.size() == 9u);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(res.log[i].phase == Phase::pretrain);
    CHECK_FALSE(res.log[i].temporal);
  }
  for (std::size_t i = 3; i < 9; ++i) {
    CHECK(res.log[i].phase == Phase::mixed);
    CHECK(res.log[i].temporal == ((i - 3) % 2 == 0));
  }
  fs::remove_all(out);
}
