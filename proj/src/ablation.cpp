#include "harmonizer/ablation.hpp"

namespace harmonizer {

namespace fs = std::filesystem;

std::string variant_name(TemporalVariant v) {
  switch (v) {
    case TemporalVariant::full: return "full";
    case TemporalVariant::no_temporal_loss: return "no_temporal_loss";
    case TemporalVariant::no_temporal_modules: return "no_temporal_modules";
  }
  throw InvalidArgument("variant_name: unknown variant");
}

TrainConfig variant_config(const TrainConfig& base, TemporalVariant v) {
  TrainConfig c = base;
  if (v != TemporalVariant::full) c.loss.lambda_temp = 0.0;
  if (v == TemporalVariant::no_temporal_modules) c.disable_context = true;
  return c;
}

nlohmann::json TemporalAblation::to_json() const {
  nlohmann::json j{{"ordered", ordered}, {"margin", margin}};
  j["variants"] = nlohmann::json::array();
  for (const VariantResult& v : variants) {
    j["variants"].push_back({{"name", v.name}, {"flicker", v.flicker}, {"aggregate", v.report.aggregate}});
  }
  return j;
}

namespace {

RunOptions with_progress(const std::string& stage, const ProgressFn& progress) {
  RunOptions o;
  if (progress) o.on_step = [stage, progress](const StepRecord& r) { progress(stage, r); };
  return o;
}

}  // namespace

TemporalAblation run_temporal_ablation(const TrainConfig& base, const Manifest& train, const Manifest& holdout,
                                       const fs::path& out_dir, const ProgressFn& progress) {
  // Stopping (rather than shortening the run) keeps the learning-rate
  // schedule identical to an uninterrupted run of the full configuration.
  RunOptions pre = with_progress("pretrain", progress);
  pre.stop_at_step = base.pretrain_steps;
  run_training(base, train, out_dir / "pretrain", pre);

  TemporalAblation result;
  for (TemporalVariant v :
       {TemporalVariant::full, TemporalVariant::no_temporal_loss, TemporalVariant::no_temporal_modules}) {
    VariantResult r;
    r.name = variant_name(v);
    r.config = variant_config(base, v);
    RunOptions o = with_progress(r.name, progress);
    o.resume = out_dir / "pretrain" / "final.ckpt";
    run_training(r.config, train, out_dir / r.name, o);
    r.checkpoint = out_dir / r.name / "model.ckpt";
    EvalOptions eo;
    eo.temporal = true;
    eo.model_id = r.name;
    eo.dataset_id = holdout.root.string();
    r.report = evaluate(load_checkpoint(r.checkpoint), holdout, eo);
    r.flicker = r.report.aggregate.at("flicker_output");
    result.variants.push_back(std::move(r));
  }
  const double full = result.variants[0].flicker, loss = result.variants[1].flicker,
               mods = result.variants[2].flicker;
  result.ordered = full >= loss && loss >= mods;
  result.margin = full - mods;
  return result;
}

nlohmann::json PatchAblation::to_json() const {
  return {{"single_scale_hf_energy", single_scale_hf},
          {"multi_scale_hf_energy", multi_scale_hf},
          {"single_scale_psnr", single_scale_psnr},
          {"multi_scale_psnr", multi_scale_psnr}};
}

namespace {

std::pair<double, double> score_images(const fs::path& ckpt, const Manifest& holdout) {
  const auto model = std::make_shared<const LoadedModel>(load_checkpoint(ckpt));
  double hf = 0.0, p = 0.0;
  int n = 0;
  for (std::size_t idx : holdout.select(false)) {
    const PairedSample s = load_sample(holdout, idx);
    StreamSession session(model, {});
    const Frame out = session.push_frame(s.input[0]);
    Image residual = out;
    residual.pixels -= s.target[0].pixels;
    hf += high_frequency_energy(residual);
    p += psnr(out, s.target[0]);
    ++n;
  }
  if (n == 0) throw InvalidArgument("patch ablation: holdout has no images");
  return {hf / n, p / n};
}

}  // namespace

PatchAblation run_patch_ablation(const TrainConfig& base, long steps, const Manifest& train, const Manifest& holdout,
                                 const fs::path& out_dir, const ProgressFn& progress) {
  TrainConfig multi = base;
  multi.pretrain_steps = steps;
  multi.temporal_steps = 0;
  TrainConfig single = multi;
  single.loss.patch_min = single.loss.patch_max;
  single.loss.patches_per_step = 1;

  run_training(single, train, out_dir / "single_scale", with_progress("single_scale", progress));
  run_training(multi, train, out_dir / "multi_scale", with_progress("multi_scale", progress));
  PatchAblation r;
  std::tie(r.single_scale_hf, r.single_scale_psnr) = score_images(out_dir / "single_scale" / "model.ckpt", holdout);
  std::tie(r.multi_scale_hf, r.multi_scale_psnr) = score_images(out_dir / "multi_scale" / "model.ckpt", holdout);
  return r;
}

}  // namespace harmonizer
