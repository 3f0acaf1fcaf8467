// End-to-end acceptance run: prints one PASS/FAIL line per criterion.
//
// Exit status is 0 when every criterion ran to completion (a FAIL line is a
// measured result, not a crash); pass --strict to also fail on FAIL lines.

#include "harmonizer/ablation.hpp"
#include "harmonizer/bytes.hpp"
#include "harmonizer/datagen.hpp"
#include "harmonizer/flow.hpp"
#include "harmonizer/isp.hpp"
#include "harmonizer/losses.hpp"
#include "harmonizer/metrics.hpp"
#include "harmonizer/render.hpp"
#include "harmonizer/runtime.hpp"
#include "harmonizer/trainer.hpp"
#include "oracles.hpp"
#include "support.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>

using namespace harmonizer;
using namespace harmonizer::testing;

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

int failures = 0;

void report(int index, const std::string& name, Outcome& o, double secs) {
  if (!o.pass) ++failures;
  std::printf("criterion %d %-22s %s  (%.1f s) %s\n", index, name.c_str(), o.pass ? "PASS" : "FAIL", secs,
              o.detail.str().c_str());
  std::fflush(stdout);
}

bool same_tree(const fs::path& a, const fs::path& b) {
  auto files = [](const fs::path& root) {
    std::vector<fs::path> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
      if (e.is_regular_file()) out.push_back(fs::relative(e.path(), root));
    }
    std::sort(out.begin(), out.end());
    return out;
  };
  const auto fa = files(a), fb = files(b);
  if (fa != fb || fa.empty()) return false;
  for (const fs::path& p : fa) {
    if (read_file_bytes(a / p) != read_file_bytes(b / p)) return false;
  }
  return true;
}

DatasetConfig dataset_config(int total, std::uint64_t seed) {
  DatasetConfig d;
  d.counts = counts_from_proportions(total, {118, 88, 46, 77, 21});
  d.seed = seed;
  return d;
}

// 1 -------------------------------------------------------------------------

void exactness(Outcome& o) {
  double codec_err = 0.0;
  for (int p : {1, 2, 4}) {
    const Codec codec({.patch = p});
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const Frame f = random_image(64, 64, 3, seed * 10 + static_cast<std::uint64_t>(p));
      codec_err = std::max(codec_err, (codec.decode(codec.encode(f)).pixels - f.pixels).cwiseAbs().maxCoeff());
    }
  }
  o.require(codec_err <= 1e-6, "codec round trip");

  bool composite_exact = true;
  const Frame a = random_image(64, 64, 3, 1), b = random_image(64, 64, 3, 2);
  composite_exact = composite(a, b, filled(64, 64, 1, 1.0)) == a && composite(a, b, filled(64, 64, 1, 0.0)) == b;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Mask m = random_mask(64, 64, seed, seed % 2 == 0);
    const Frame c = composite(a, b, m);
    for (Eigen::Index i = 0; i < c.pixels.rows(); ++i) {
      const double w = m.pixels(i, 0);
      for (int ch = 0; ch < 3; ++ch) {
        composite_exact = composite_exact && c.pixels(i, ch) == w * a.pixels(i, ch) + (1.0 - w) * b.pixels(i, ch);
      }
    }
  }
  o.require(composite_exact, "composite");

  bool isp_identity = true;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Frame f = random_image(64, 64, 3, seed + 30);
    isp_identity = isp_identity && apply_isp(f, IspParams{}) == f;
  }
  o.require(isp_identity, "isp identity");

  bool monotone = true;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    const SceneSpec s = random_scene(rng, 1);
    const RenderResult lit = render_scene(s, true), flat = render_scene(s, false);
    monotone = monotone && (lit.frames[0].pixels.array() <= flat.frames[0].pixels.array()).all();
  }
  o.require(monotone, "shadow monotonicity");

  bool warp_identity = true;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Frame f = random_image(64, 64, 3, seed + 60);
    const WarpResult w = warp(f, FlowField(64, 64));
    warp_identity = warp_identity && w.frame == f &&
                    std::all_of(w.valid.valid.begin(), w.valid.valid.end(), [](auto v) { return v != 0; });
  }
  o.require(warp_identity, "warp(f, 0) = f");
  o.detail << "codec max err " << codec_err << "; composite, isp identity, 20 shadow scenes, zero warp exact";
}

// 2 -------------------------------------------------------------------------

void gradients(Outcome& o) {
  const ConvFeatureExtractor fx;
  LossWeights w;
  w.patch_min = 4;
  w.patch_max = 8;
  w.patches_per_step = 2;
  double worst_l2 = 0.0, worst_perc = 0.0, worst_temp = 0.0, worst_backbone = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng frng(seed + 500);
    const FlowField flow = FlowField::constant(8, 8, frng.uniform(-1.5, 1.5), frng.uniform(-1.5, 1.5));
    const ValidityMask valid = warp(Image(8, 8, 3), flow).valid;
    const Mat target = random_image(8, 8, 3, seed + 100).pixels;
    const Mat pred = random_image(8, 8, 3, seed).pixels, prev = random_image(8, 8, 3, seed + 200).pixels;
    auto l2 = [&](ag::Tape& t, const std::vector<ag::Var>& v) { return loss_l2(v[0], t.constant(target)); };
    auto perc = [&](ag::Tape& t, const std::vector<ag::Var>& v) {
      Rng rng(seed);
      return loss_perceptual(v[0], t.constant(target), 8, 8, fx, w, rng);
    };
    auto temp = [&](ag::Tape&, const std::vector<ag::Var>& v) { return loss_temporal(v[0], v[1], 8, 8, flow, valid); };
    worst_l2 = std::max(worst_l2, check_gradients(l2, {pred}).relative_error);
    worst_perc = std::max(worst_perc, check_gradients(perc, {pred}).relative_error);
    worst_temp = std::max(worst_temp, check_gradients(temp, {pred, prev}).relative_error);
    worst_backbone = std::max(worst_backbone, backbone_gradient_error(seed));
  }
  o.require(worst_l2 <= 1e-4, "loss_l2");
  o.require(worst_perc <= 1e-4, "loss_perceptual");
  o.require(worst_temp <= 1e-4, "loss_temporal");
  o.require(worst_backbone <= 1e-4, "backbone");
  o.detail << "max relative error over 10 seeds: l2 " << worst_l2 << ", perc " << worst_perc << ", temp " << worst_temp
           << ", backbone " << worst_backbone;
}

// 3 -------------------------------------------------------------------------

void oracles(Outcome& o) {
  int exact_translations = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    const int dx = rng.uniform_int(-3, 3), dy = rng.uniform_int(-3, 3);
    const Frame prev = random_image(32, 32, 3, seed);
    const Frame curr = shifted(prev, -dx, -dy, random_image(32, 32, 3, seed + 50));
    const FlowField flow = block_match_flow(prev, curr, 3, 4);
    bool exact = true;
    for (int y = 4; y < 28; ++y) {
      for (int x = 4; x < 28; ++x) exact = exact && flow.dx(y, x) == dx && flow.dy(y, x) == dy;
    }
    exact_translations += exact;
  }
  o.require(exact_translations == 10, "block matching");

  SceneSpec s;
  s.camera.width = s.camera.height = 64;
  s.camera.tilt = 0.9;
  s.camera.pixel_size = 0.1;
  s.light.direction = Vec3(0, 0, 1);
  s.light.softness = 0.0;
  const double r = 0.8;
  Primitive sphere;
  sphere.center = Vec3(0.3, -0.6, 4.0);
  sphere.size = Vec3(r, r, r);
  s.primitives.push_back(sphere);
  const RenderResult lit = render_scene(s, true), flat = render_scene(s, false);
  const double px = s.camera.pixel_size / std::cos(s.camera.tilt);
  int misplaced = 0, shadowed = 0;
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      if (lit.object_id[0][static_cast<std::size_t>(y * 64 + x)] != -1) continue;
      const Vec3 g = ground_point(s.camera, y, x);
      const double d = std::hypot(g.x() - sphere.center.x(), g.y() - sphere.center.y());
      const bool in_shadow = lit.frames[0].pixels.row(y * 64 + x) != flat.frames[0].pixels.row(y * 64 + x);
      shadowed += in_shadow;
      misplaced += in_shadow ? d > r + px : d < r - px;
    }
  }
  o.require(misplaced == 0 && shadowed > 100, "sphere shadow disk");

  bool isp_exact = true;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    const IspParams p = sample_isp_params(rng);
    const Frame f = random_image(16, 16, 3, seed + 100);
    const Frame out = apply_isp(f, p);
    for (int y = 0; y < 16; ++y) {
      for (int x = 0; x < 16; ++x) {
        const auto ref = ref_isp_pixel({f.at(y, x, 0), f.at(y, x, 1), f.at(y, x, 2)}, p);
        for (int c = 0; c < 3; ++c) isp_exact = isp_exact && out.at(y, x, c) == ref[c];
      }
    }
  }
  o.require(isp_exact, "isp scalar reference");

  double psnr_err = 0.0, ssim_err = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Frame a = textured_frame(32, 32, seed), b = random_image(32, 32, 3, seed + 40);
    const Mask m = random_mask(32, 32, seed + 80, true);
    psnr_err = std::max(psnr_err, std::abs(psnr(a, b) - ref_psnr(a, b, nullptr)));
    psnr_err = std::max(psnr_err, std::abs(psnr(a, b, &m) - ref_psnr(a, b, &m)));
    const Image map = ssim_map(a, b);
    Rng rng(seed);
    for (int k = 0; k < 5; ++k) {
      const int cy = rng.uniform_int(5, 26), cx = rng.uniform_int(5, 26);
      ssim_err = std::max(ssim_err, std::abs(map.at(cy - 5, cx - 5, 0) - ref_ssim_window(a, b, cy, cx)));
    }
  }
  o.require(psnr_err <= 1e-9, "psnr reference");
  o.require(ssim_err <= 1e-6, "ssim reference");
  o.detail << exact_translations << "/10 translations exact; sphere disk " << shadowed << " shadowed px, " << misplaced
           << " beyond 1 px; isp exact; psnr err " << psnr_err << ", ssim err " << ssim_err;
}

// 4 -------------------------------------------------------------------------

void determinism(Outcome& o, const TrainConfig& desk, const Manifest& train, const fs::path& work) {
  const DatasetConfig d = dataset_config(40, 3);
  build_dataset(d, work / "ds_a");
  build_dataset(d, work / "ds_b");
  const bool data_same = same_tree(work / "ds_a", work / "ds_b");
  o.require(data_same, "dataset");

  TrainConfig c = desk;
  c.pretrain_steps = 100;
  c.temporal_steps = 100;
  RunOptions quiet;
  quiet.write_log = false;
  run_training(c, train, work / "run_a", quiet);
  run_training(c, train, work / "run_b", quiet);
  const bool train_same = read_file_bytes(work / "run_a" / "final.ckpt") == read_file_bytes(work / "run_b" / "final.ckpt");
  o.require(train_same, "training");

  RunOptions first = quiet;
  first.stop_at_step = 150;
  run_training(c, train, work / "run_r", first);
  RunOptions second = quiet;
  second.resume = work / "run_r" / "final.ckpt";
  run_training(c, train, work / "run_r", second);
  const bool resume_same = read_file_bytes(work / "run_a" / "final.ckpt") == read_file_bytes(work / "run_r" / "final.ckpt");
  o.require(resume_same, "interrupt/resume");

  Rng rng(9);
  const RenderResult clip = render_scene(random_scene(rng, 20), true);
  const Checkpoint ck = load_checkpoint(work / "run_a" / "model.ckpt");
  const bool stream_same = enhance_clip(ck, clip.frames).frames == enhance_clip(ck, clip.frames).frames;
  o.require(stream_same, "streaming");
  o.detail << "dataset trees, 200-step checkpoints, 150+50 resume and 20-frame streams bitwise identical";
}

// 5 and 6 -------------------------------------------------------------------

struct StageLog {
  std::vector<double> losses;
  double last_step_at = 0.0;  // seconds since the ablation started
};

void desk_and_ablation(Outcome& o5, Outcome& o6, double& t5, double& t6, const TrainConfig& desk,
                       const Manifest& train, const Manifest& holdout, const fs::path& work) {
  std::map<std::string, StageLog> stages;
  const auto t0 = Clock::now();
  const TemporalAblation ab = run_temporal_ablation(desk, train, holdout, work / "ablation",
                                                    [&](const std::string& stage, const StepRecord& r) {
                                                      StageLog& s = stages[stage];
                                                      s.losses.push_back(r.loss.total);
                                                      s.last_step_at = seconds_since(t0);
                                                    });
  t6 = seconds_since(t0);

  // The desk run is the shared pretraining followed by the full variant.
  const double train_secs = stages["full"].last_step_at;
  std::vector<double> losses = stages["pretrain"].losses;
  losses.insert(losses.end(), stages["full"].losses.begin(), stages["full"].losses.end());
  const auto t1 = Clock::now();
  EvalOptions eo;
  eo.stream = Stream::isp;
  const Checkpoint trained = load_checkpoint(ab.variants[0].checkpoint);
  const Checkpoint identity = make_model_checkpoint(desk, Trainer(desk).init_state().params);
  const EvalReport after = evaluate(trained, holdout, eo), before = evaluate(identity, holdout, eo);
  t5 = train_secs + seconds_since(t1);
  const double gain = after.aggregate.at("psnr_output") - before.aggregate.at("psnr_output");

  const long n = static_cast<long>(losses.size());
  const long steps = desk.pretrain_steps + desk.temporal_steps;
  o5.require(n == steps && n >= 200, "loss log length");
  double early = 0.0, late = 0.0;
  if (n >= 200) {
    early = std::accumulate(losses.begin(), losses.begin() + 100, 0.0) / 100.0;
    late = std::accumulate(losses.end() - 100, losses.end(), 0.0) / 100.0;
  }
  o5.require(gain >= 2.0, "psnr gain >= 2 dB");
  o5.require(late < early, "loss trend");
  o5.require(t5 <= 15 * 60, "runtime <= 15 min");
  o5.detail << "isp psnr " << before.aggregate.at("psnr_output") << " -> " << after.aggregate.at("psnr_output")
            << " dB (gain " << gain << "); loss mean steps 1-100 " << early << ", last 100 " << late << "; "
            << trained.state.params.scalar_count() << " parameters";

  const double full = ab.variants[0].flicker, no_loss = ab.variants[1].flicker, no_mods = ab.variants[2].flicker;
  o6.require(ab.ordered, "ordering");
  o6.require(ab.margin >= 0.002, "margin >= 0.002");
  o6.require(t6 <= 30 * 60, "runtime <= 30 min");
  o6.detail << "flicker full " << full << ", no temporal loss " << no_loss << ", no temporal modules " << no_mods
            << "; margin " << ab.margin;
}

// 7 -------------------------------------------------------------------------

void patch_study(Outcome& o, const TrainConfig& desk, const Manifest& train, const Manifest& holdout,
                 const fs::path& work) {
  const PatchAblation p = run_patch_ablation(desk, 1000, train, holdout, work / "patches");
  // Report-only: the expectation is logged, not asserted.
  o.detail << "hf energy single-scale " << p.single_scale_hf << ", multi-scale " << p.multi_scale_hf
           << " (expectation multi <= single: " << (p.multi_scale_hf <= p.single_scale_hf ? "met" : "not met")
           << "); psnr single " << p.single_scale_psnr << ", multi " << p.multi_scale_psnr;
}

// 8 -------------------------------------------------------------------------

void streaming(Outcome& o, const fs::path& ckpt) {
  const Checkpoint ck = load_checkpoint(ckpt);
  Rng rng(21);
  const RenderResult clip = render_scene(random_scene(rng, 100), true);
  StreamSession s = open_session(ck);
  std::vector<Frame> pushed;
  for (const Frame& f : clip.frames) pushed.push_back(s.push_frame(f));
  const ClipResult batch = enhance_clip(ck, clip.frames);
  o.require(pushed == batch.frames, "push_frame == enhance_clip");
  bool cold_ok = true;
  for (std::size_t t = 0; t < 4; ++t) {
    const Mat& px = pushed[t].pixels;
    cold_ok = cold_ok && px.allFinite() && px.minCoeff() >= 0.0 && px.maxCoeff() <= 1.0;
  }
  o.require(cold_ok, "cold-start frames finite and in range");
  o.require(s.max_history_seen() <= 4, "history bound");
  o.require(s.backbone_evaluations() == 100, "one evaluation per frame");
  o.detail << "100 frames bitwise equal; max history " << s.max_history_seen() << "; "
           << s.backbone_evaluations() << " backbone evaluations; mean latency " << s.latency().mean_ms << " ms";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance run"};
  fs::path work = fs::temp_directory_path() / "harmonizer_acceptance";
  fs::path config_path = HARMONIZER_DESK_CONFIG;
  bool strict = false;
  app.add_option("--work", work, "Scratch directory (recreated)");
  app.add_option("--config", config_path, "Desk training configuration");
  app.add_flag("--strict", strict, "Exit non-zero when any criterion fails");
  CLI11_PARSE(app, argc, argv);

  try {
    fs::remove_all(work);
    fs::create_directories(work);
    const TrainConfig desk = load_train_config(config_path);

    auto timed = [](int index, const std::string& name, const std::function<void(Outcome&)>& fn, double limit) {
      Outcome o;
      const auto t0 = Clock::now();
      fn(o);
      const double secs = seconds_since(t0);
      if (limit > 0) o.require(secs < limit, "runtime");
      report(index, name, o, secs);
    };

    timed(1, "exactness", exactness, 60);
    timed(2, "gradients", gradients, 300);
    timed(3, "oracles", oracles, 300);

    const auto tg = Clock::now();
    const Manifest train = build_dataset(dataset_config(1000, 1), work / "train");
    const Manifest holdout = build_dataset(dataset_config(200, 2), work / "holdout");
    std::printf("generated %zu training and %zu held-out samples in %.1f s\n", train.records.size(),
                holdout.records.size(), seconds_since(tg));

    timed(4, "determinism", [&](Outcome& o) { determinism(o, desk, train, work / "determinism"); }, 0);

    Outcome o5, o6;
    double t5 = 0.0, t6 = 0.0;
    desk_and_ablation(o5, o6, t5, t6, desk, train, holdout, work);
    report(5, "desk training", o5, t5);
    report(6, "temporal ablation", o6, t6);

    timed(7, "multi-scale loss", [&](Outcome& o) { patch_study(o, desk, train, holdout, work); }, 0);
    timed(8, "streaming contract", [&](Outcome& o) { streaming(o, work / "ablation" / "full" / "model.ckpt"); }, 0);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "acceptance aborted: %s\n", e.what());
    return 2;
  }
  std::printf("%d of 8 criteria failed\n", failures);
  return strict && failures > 0 ? 1 : 0;
}
