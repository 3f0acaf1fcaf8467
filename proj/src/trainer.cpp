#include "harmonizer/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace harmonizer {

namespace fs = std::filesystem;

Trainer::Trainer(TrainConfig config) : config_(std::move(config)), backbone_(config_.model) { config_.validate(); }

TrainState Trainer::init_state() const {
  TrainState s;
  s.params = init_params(config_.model, config_.init_seed);
  round_to_f32(s.params);
  for (const auto& t : s.params.tensors) {
    s.optimizer.m.push_back(Mat::Zero(t.value.rows(), t.value.cols()));
    s.optimizer.v.push_back(Mat::Zero(t.value.rows(), t.value.cols()));
  }
  s.rng_state = Rng(config_.seed).state();
  return s;
}

StepRecord Trainer::train_step(TrainState& state, const std::vector<PairedSample>& batch, const TrainHooks& hooks) const {
  if (batch.empty()) throw InvalidArgument("train_step: empty batch");
  const bool temporal = batch.front().temporal;
  for (const PairedSample& s : batch) {
    if (s.temporal != temporal) throw InvalidArgument("train_step: batch mixes temporal and non-temporal samples");
  }
  const auto start = std::chrono::steady_clock::now();
  const BackboneConfig& mc = config_.model;
  const int h = mc.frame_height, w = mc.frame_width;
  const Codec& codec = backbone_.codec();
  const int clip = temporal ? config_.effective_clip_length() : 1;

  Rng rng;
  rng.set_state(state.rng_state);
  LossWeights weights = config_.loss;
  if (!temporal) weights.lambda_temp = 0.0;

  ag::Tape tape;
  const ParamBinding params(tape, state.params, true);
  ag::Var total = tape.constant(Mat::Zero(1, 1));
  LossBreakdown sum;
  int terms = 0;

  for (std::size_t si = 0; si < batch.size(); ++si) {
    const PairedSample& sample = batch[si];
    const int frames = std::min(sample.frames(), clip);
    if (temporal && static_cast<int>(sample.flows.size()) < frames - 1) {
      throw InvalidArgument("train_step: temporal sample without flow");
    }
    std::vector<ag::Var> preds;
    std::vector<ag::Var> history;  // latents of clamped predictions, oldest first
    for (int t = 0; t < frames; ++t) {
      const Frame& in = sample.input[static_cast<std::size_t>(t)];
      if (in.height != h || in.width != w) throw DimensionError("train_step: sample frame size differs from model");
      std::vector<ag::Var> context;
      if (!config_.disable_context) {
        const int k = std::min<int>(mc.context_K, t);
        for (int j = 0; j < k; ++j) context.push_back(history[static_cast<std::size_t>(t - 1 - j)]);
      }
      if (hooks.on_context) {
        std::vector<Mat> values;
        for (const ag::Var& c : context) values.push_back(c.value());
        hooks.on_context(static_cast<int>(si), t, values);
      }
      const ag::Var z = codec.encode(tape.constant(in.pixels), h, w);
      const ag::Var pred = codec.decode(backbone_.forward(params, z, context), h, w);
      if (hooks.on_prediction) hooks.on_prediction(static_cast<int>(si), t, Image(h, w, pred.value()));

      std::optional<TemporalInputs> ti;
      LossWeights wt = weights;
      if (temporal && t > 0) {
        ti = TemporalInputs{preds.back(), &sample.flows[static_cast<std::size_t>(t - 1)],
                            &sample.flow_valid[static_cast<std::size_t>(t - 1)]};
      } else {
        wt.lambda_temp = 0.0;
      }
      const LossResult lr = loss_total(pred, tape.constant(sample.target[static_cast<std::size_t>(t)].pixels), h, w, ti,
                                       wt, features_, rng, hooks.on_patch);
      total = ag::add(total, lr.total);
      sum.l2 += lr.breakdown.l2;
      sum.perc += lr.breakdown.perc;
      sum.temp += lr.breakdown.temp;
      ++terms;

      preds.push_back(pred);
      if (temporal) {
        ag::Var latent = codec.encode(ag::clamp(pred, 0.0, 1.0), h, w);
        history.push_back(config_.detach_context ? ag::detach(latent) : latent);
      }
    }
  }
  const double inv = 1.0 / terms;
  total = ag::scale(total, inv);
  tape.backward(total);

  // Decoupled weight decay adaptive-moment update. Moments and parameters
  // are kept single-precision representable so checkpoints are exact.
  AdamState& opt = state.optimizer;
  opt.t += 1;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(opt.t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(opt.t));
  const double lr = config_.learning_rate_at(state.step);
  const auto& vars = params.vars();
  for (std::size_t i = 0; i < vars.size(); ++i) {
    Mat& p = state.params.tensors[i].value;
    const Mat& g0 = vars[i].grad();
    const Mat g = g0.size() == 0 ? Mat(Mat::Zero(p.rows(), p.cols())) : g0;
    if (!g.allFinite()) throw std::runtime_error("train_step: non-finite gradient in " + state.params.tensors[i].name);
    opt.m[i] = b1 * opt.m[i] + (1.0 - b1) * g;
    opt.v[i] = b2 * opt.v[i] + (1.0 - b2) * g.cwiseProduct(g);
    round_to_f32(opt.m[i]);
    round_to_f32(opt.v[i]);
    const Mat update =
        (opt.m[i] / bc1).array() / ((opt.v[i] / bc2).array().sqrt() + config_.adam_eps) + config_.weight_decay * p.array();
    p -= lr * update;
    round_to_f32(p);
  }
  state.rng_state = rng.state();
  state.step += 1;

  StepRecord rec;
  rec.step = state.step;
  rec.phase = state.phase;
  rec.temporal = temporal;
  rec.loss = {sum.l2 * inv, sum.perc * inv, sum.temp * inv, total.scalar()};
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

Checkpoint make_model_checkpoint(const TrainConfig& config, const ModelParams& params) {
  Checkpoint c;
  c.kind = CheckpointKind::model;
  c.config = config.model;
  c.state.params = params;
  c.extra = {{"disable_context", config.disable_context}, {"train_config", format_train_config(config)}};
  return c;
}

Checkpoint make_train_checkpoint(const TrainConfig& config, const TrainState& state) {
  Checkpoint c = make_model_checkpoint(config, state.params);
  c.kind = CheckpointKind::train_state;
  c.state = state;
  return c;
}

RunResult run_training(const TrainConfig& config, const Manifest& manifest, const fs::path& out_dir,
                       const RunOptions& options) {
  config.validate();
  if (manifest.records.empty()) throw InvalidArgument("run_training: empty manifest");
  const Trainer trainer(config);
  RunResult result;
  if (options.resume) {
    Checkpoint c = load_checkpoint(*options.resume);
    if (c.kind != CheckpointKind::train_state) throw ConfigError("resume: checkpoint holds no training state");
    if (!(c.config == config.model)) throw ConfigError("resume: model configuration differs from checkpoint");
    result.state = std::move(c.state);
  } else {
    result.state = trainer.init_state();
  }
  TrainState& state = result.state;

  const auto images = manifest.select(false);
  const auto clips = manifest.select(true);
  const long total = config.pretrain_steps + config.temporal_steps;
  const long stop = options.stop_at_step ? std::min(total, *options.stop_at_step) : total;
  if (state.step < std::min(stop, config.pretrain_steps) && images.empty()) {
    throw InvalidArgument("run_training: pretraining needs non-temporal samples");
  }
  if (stop > config.pretrain_steps) {
    const bool need_clips = config.strict_alternation || config.temporal_batch_fraction > 0.0;
    const bool need_images = config.strict_alternation || config.temporal_batch_fraction < 1.0;
    if (need_clips && clips.empty()) throw InvalidArgument("run_training: temporal phase needs temporal samples");
    if (need_images && images.empty()) throw InvalidArgument("run_training: temporal phase needs non-temporal samples");
  }

  fs::create_directories(out_dir);
  std::ofstream log;
  if (options.write_log) {
    log.open(out_dir / "train_log.jsonl", options.resume ? std::ios::app : std::ios::trunc);
  }
  while (state.step < stop) {
    Rng rng;
    rng.set_state(state.rng_state);
    const bool mixed = state.step >= config.pretrain_steps;
    state.phase = mixed ? Phase::mixed : Phase::pretrain;
    bool temporal = false;
    if (mixed) {
      temporal = config.strict_alternation ? (state.step - config.pretrain_steps) % 2 == 0
                                           : rng.bernoulli(config.temporal_batch_fraction);
    }
    const auto& pool = temporal ? clips : images;
    const int n = temporal ? config.temporal_batch_size : config.batch_size;
    std::vector<PairedSample> batch;
    for (int k = 0; k < n; ++k) {
      batch.push_back(load_sample(manifest, pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(pool.size()) - 1))]));
    }
    state.rng_state = rng.state();
    const StepRecord rec = trainer.train_step(state, batch);
    if (log.is_open()) {
      const nlohmann::json j{{"step", rec.step},         {"phase", phase_name(rec.phase)}, {"temporal", rec.temporal},
                             {"l2", rec.loss.l2},       {"perc", rec.loss.perc},          {"temp", rec.loss.temp},
                             {"total", rec.loss.total}, {"seconds", rec.seconds}};
      log << j.dump() << "\n";
    }
    if (options.on_step) options.on_step(rec);
    result.log.push_back(rec);
    if (config.checkpoint_interval > 0 && state.step % config.checkpoint_interval == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "step_%06ld.ckpt", state.step);
      save_checkpoint(out_dir / name, make_train_checkpoint(config, state));
    }
  }
  save_checkpoint(out_dir / "final.ckpt", make_train_checkpoint(config, state));
  save_checkpoint(out_dir / "model.ckpt", make_model_checkpoint(config, state.params));
  return result;
}

}  // namespace harmonizer
