#include "harmonizer/ablation.hpp"
#include "harmonizer/bytes.hpp"
#include "harmonizer/datagen.hpp"
#include "harmonizer/io.hpp"
#include "harmonizer/metrics.hpp"
#include "harmonizer/runtime.hpp"
#include "harmonizer/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace harmonizer;

namespace {

std::vector<double> split_numbers(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

void print_step(const std::string& stage, const StepRecord& r) {
  if (r.step % 50 != 0) return;
  std::fprintf(stderr, "[%s] step %ld %s total=%.5f l2=%.5f perc=%.5f temp=%.5f\n", stage.c_str(), r.step,
               r.temporal ? "clip " : "image", r.loss.total, r.loss.l2, r.loss.perc, r.loss.temp);
}

std::vector<fs::path> sorted_pngs(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online single-step generative video enhancer"};
  app.require_subcommand(1);

  // gen ---------------------------------------------------------------------
  auto* gen = app.add_subcommand("gen", "Generate a paired synthetic dataset");
  fs::path gen_out;
  DatasetConfig dc;
  std::string counts, proportions;
  int total = 0;
  gen->add_option("--out", gen_out, "Dataset root")->required();
  gen->add_option("--seed", dc.seed, "Master seed");
  gen->add_option("--counts", counts, "Samples per stream: artifact,isp,relight,shadow,reinsert");
  gen->add_option("--total", total, "Total samples, split by --proportions");
  gen->add_option("--proportions", proportions, "Stream weights (artifact,isp,relight,shadow,reinsert)")
      ->default_val("118,88,46,77,21");
  gen->add_option("--size", dc.width, "Frame side in pixels");
  gen->add_option("--clip-length", dc.clip_length, "Frames per clip");
  gen->add_option("--clip-fraction", dc.clip_fraction, "Probability of a clip for video-capable streams");
  gen->add_option("--isp-jitter", dc.isp_frame_jitter, "Per-frame ISP jitter in clips");

  // train -------------------------------------------------------------------
  auto* train = app.add_subcommand("train", "Train the enhancer");
  fs::path train_config, train_data, train_out, train_resume;
  long stop_at = -1;
  train->add_option("--config", train_config, "key = value configuration file")->required();
  train->add_option("--data", train_data, "Training manifest")->required();
  train->add_option("--out", train_out, "Checkpoint directory")->required();
  train->add_option("--resume", train_resume, "Training-state checkpoint to resume from");
  train->add_option("--stop-at", stop_at, "Stop after this many total updates");

  // enhance -----------------------------------------------------------------
  auto* enhance = app.add_subcommand("enhance", "Stream frames through a trained model");
  fs::path enh_ckpt, enh_in, enh_out, enh_report;
  bool enh_no_context = false;
  enhance->add_option("--ckpt", enh_ckpt, "Model checkpoint")->required();
  enhance->add_option("--in", enh_in, "Directory of PNG frames or a dataset manifest")->required();
  enhance->add_option("--out", enh_out, "Output directory")->required();
  enhance->add_option("--report", enh_report, "Latency report (JSON)");
  enhance->add_flag("--no-context", enh_no_context, "Enhance every frame independently");

  // eval --------------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "Score a model on a held-out manifest");
  fs::path ev_ckpt, ev_data, ev_out;
  std::string ev_stream;
  bool ev_clips = false, ev_images = false, ev_no_context = false;
  eval->add_option("--ckpt", ev_ckpt, "Model checkpoint")->required();
  eval->add_option("--data", ev_data, "Held-out manifest")->required();
  eval->add_option("--out", ev_out, "Report path (JSON)")->required();
  eval->add_option("--stream", ev_stream, "Restrict to one stream");
  eval->add_flag("--clips", ev_clips, "Only temporal samples");
  eval->add_flag("--images", ev_images, "Only image samples");
  eval->add_flag("--no-context", ev_no_context, "Disable temporal context");

  // ablate ------------------------------------------------------------------
  auto* ablate = app.add_subcommand("ablate", "Train and compare ablation variants");
  fs::path ab_config, ab_data, ab_holdout, ab_out;
  std::string ab_study = "temporal";
  long ab_steps = 1000;
  ablate->add_option("--config", ab_config, "Base configuration")->required();
  ablate->add_option("--data", ab_data, "Training manifest")->required();
  ablate->add_option("--holdout", ab_holdout, "Held-out manifest")->required();
  ablate->add_option("--out", ab_out, "Output directory")->required();
  ablate->add_option("--study", ab_study, "temporal or patches")->check(CLI::IsMember({"temporal", "patches"}));
  ablate->add_option("--steps", ab_steps, "Updates per variant for the patch study");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      if (!counts.empty()) {
        const auto v = split_numbers(counts);
        if (v.size() != 5) throw InvalidArgument("--counts needs five values");
        for (std::size_t i = 0; i < 5; ++i) dc.counts[i] = static_cast<int>(v[i]);
      } else if (total > 0) {
        const auto w = split_numbers(proportions);
        if (w.size() != 5) throw InvalidArgument("--proportions needs five values");
        dc.counts = counts_from_proportions(total, {w[0], w[1], w[2], w[3], w[4]});
      }
      dc.height = dc.width;
      const Manifest m = build_dataset(dc, gen_out);
      std::printf("wrote %zu samples to %s\n", m.records.size(), gen_out.c_str());
      for (Stream s : kAllStreams) std::printf("  %-9s %zu\n", stream_name(s).c_str(), m.count(s));
    } else if (train->parsed()) {
      const TrainConfig cfg = load_train_config(train_config);
      RunOptions o;
      if (!train_resume.empty()) o.resume = train_resume;
      if (stop_at >= 0) o.stop_at_step = stop_at;
      o.on_step = [](const StepRecord& r) { print_step("train", r); };
      const RunResult r = run_training(cfg, read_manifest(train_data), train_out, o);
      std::printf("trained to step %ld; checkpoints in %s\n", r.state.step, train_out.c_str());
    } else if (enhance->parsed()) {
      SessionOptions so;
      if (enh_no_context) so.disable_context = true;
      const Checkpoint ck = load_checkpoint(enh_ckpt);
      nlohmann::json report;
      fs::create_directories(enh_out);
      auto run = [&](const std::vector<Frame>& frames, const fs::path& dir) {
        ClipResult r = enhance_clip(ck, frames, so);
        fs::create_directories(dir);
        for (std::size_t t = 0; t < r.frames.size(); ++t) {
          char name[32];
          std::snprintf(name, sizeof name, "frame_%05zu.png", t);
          write_png(dir / name, r.frames[t]);
        }
        return r.report.to_json();
      };
      if (fs::is_directory(enh_in)) {
        std::vector<Frame> frames;
        for (const fs::path& p : sorted_pngs(enh_in)) frames.push_back(read_png(p));
        report = run(frames, enh_out);
      } else {
        const Manifest m = read_manifest(enh_in);
        for (std::size_t i = 0; i < m.records.size(); ++i) {
          report[m.records[i].id] = run(load_sample(m, i).input, enh_out / m.records[i].id);
        }
      }
      if (!enh_report.empty()) write_text(enh_report, report.dump(2) + "\n");
      std::printf("enhanced frames written to %s\n", enh_out.c_str());
    } else if (eval->parsed()) {
      EvalOptions eo;
      if (!ev_stream.empty()) eo.stream = parse_stream(ev_stream);
      if (ev_clips && ev_images) throw InvalidArgument("--clips and --images are exclusive");
      if (ev_clips) eo.temporal = true;
      if (ev_images) eo.temporal = false;
      if (ev_no_context) eo.session.disable_context = true;
      eo.model_id = ev_ckpt.string();
      eo.dataset_id = ev_data.string();
      const EvalReport r = evaluate(load_checkpoint(ev_ckpt), read_manifest(ev_data), eo);
      write_text(ev_out, r.to_json().dump(2) + "\n");
      for (const auto& [k, v] : r.aggregate) std::printf("%-18s %.6f\n", k.c_str(), v);
    } else if (ablate->parsed()) {
      const TrainConfig cfg = load_train_config(ab_config);
      const Manifest train_m = read_manifest(ab_data), hold = read_manifest(ab_holdout);
      nlohmann::json j;
      if (ab_study == "temporal") {
        const TemporalAblation a = run_temporal_ablation(cfg, train_m, hold, ab_out, print_step);
        j = a.to_json();
        for (const VariantResult& v : a.variants) std::printf("%-20s flicker %.6f\n", v.name.c_str(), v.flicker);
        std::printf("ordered: %s, margin %.6f\n", a.ordered ? "yes" : "no", a.margin);
      } else {
        const PatchAblation a = run_patch_ablation(cfg, ab_steps, train_m, hold, ab_out, print_step);
        j = a.to_json();
        std::printf("high-frequency energy: single-scale %.6g, multi-scale %.6g\n", a.single_scale_hf, a.multi_scale_hf);
      }
      write_text(ab_out / "ablation.json", j.dump(2) + "\n");
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
