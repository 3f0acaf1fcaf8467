#include "harmonizer/metrics.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>

namespace harmonizer {

namespace {

void check_region(const Frame& f, const Mask* region) {
  if (region && (region->height != f.height || region->width != f.width || region->channels() != 1)) {
    throw DimensionError("metric: region mask shape mismatch");
  }
}

}  // namespace

double psnr(const Frame& pred, const Frame& ref, const Mask* region) {
  require_same_shape(pred, ref, "psnr");
  check_region(pred, region);
  double sum = 0.0;
  std::size_t n = 0;
  for (Eigen::Index i = 0; i < pred.pixels.rows(); ++i) {
    if (region && region->pixels(i, 0) == 0.0) continue;
    for (Eigen::Index c = 0; c < pred.pixels.cols(); ++c) {
      const double d = pred.pixels(i, c) - ref.pixels(i, c);
      sum += d * d;
    }
    n += static_cast<std::size_t>(pred.pixels.cols());
  }
  if (n == 0) throw InvalidArgument("psnr: empty region");
  const double mse = sum / static_cast<double>(n);
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

namespace {

constexpr int kWin = 11;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, kWin> gaussian_window() {
  std::array<double, kWin> w{};
  double s = 0.0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - kWin / 2;
    s += w[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
  }
  for (double& v : w) v /= s;
  return w;
}

}  // namespace

Image ssim_map(const Frame& pred, const Frame& ref) {
  require_same_shape(pred, ref, "ssim");
  if (pred.height < kWin || pred.width < kWin) throw InvalidArgument("ssim: image smaller than the 11x11 window");
  static const auto g = gaussian_window();
  const int oh = pred.height - kWin + 1, ow = pred.width - kWin + 1, ch = pred.channels();
  Image map(oh, ow, 1);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int c = 0; c < ch; ++c) {
        double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
        for (int i = 0; i < kWin; ++i) {
          for (int j = 0; j < kWin; ++j) {
            const double w = g[static_cast<std::size_t>(i)] * g[static_cast<std::size_t>(j)];
            const double a = pred.at(y + i, x + j, c), b = ref.at(y + i, x + j, c);
            mx += w * a;
            my += w * b;
            xx += w * a * a;
            yy += w * b * b;
            xy += w * a * b;
          }
        }
        const double vx = xx - mx * mx, vy = yy - my * my, cov = xy - mx * my;
        acc += ((2 * mx * my + kC1) * (2 * cov + kC2)) / ((mx * mx + my * my + kC1) * (vx + vy + kC2));
      }
      map.at(y, x, 0) = acc / ch;
    }
  }
  return map;
}

double ssim(const Frame& pred, const Frame& ref, const Mask* region) {
  check_region(pred, region);
  const Image map = ssim_map(pred, ref);
  double sum = 0.0;
  std::size_t n = 0;
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) {
      if (region && region->at(y + kWin / 2, x + kWin / 2, 0) == 0.0) continue;
      sum += map.at(y, x, 0);
      ++n;
    }
  }
  if (n == 0) throw InvalidArgument("ssim: no window centre inside the region");
  return sum / static_cast<double>(n);
}

double perceptual_distance(const Frame& a, const Frame& b, const FeatureExtractor& fx) {
  require_same_shape(a, b, "perceptual_distance");
  ag::Tape tape;
  const auto fa = fx.extract(tape.constant(a.pixels), a.height, a.width);
  const auto fb = fx.extract(tape.constant(b.pixels), b.height, b.width);
  double d = 0.0;
  for (std::size_t l = 0; l < fa.size(); ++l) {
    const Mat& x = fa[l].values.value();
    d += (x - fb[l].values.value()).squaredNorm() / static_cast<double>(x.size()) / static_cast<double>(fa.size());
  }
  return d;
}

double cosine_similarity(const Eigen::Ref<const RowVec>& a, const Eigen::Ref<const RowVec>& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 && nb == 0.0) return 1.0;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

double struct_distance(const Frame& input, const Frame& output, const FeatureExtractor& fx) {
  require_same_shape(input, output, "struct_distance");
  ag::Tape tape;
  const Mat fa = fx.extract(tape.constant(input.pixels), input.height, input.width).back().values.value();
  const Mat fb = fx.extract(tape.constant(output.pixels), output.height, output.width).back().values.value();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < fa.rows(); ++i) {
    if (fa.row(i) == fb.row(i)) {
      sum += 1.0;  // exact for identical vectors, including zero ones
    } else {
      sum += cosine_similarity(fa.row(i), fb.row(i));
    }
  }
  return 1.0 - sum / static_cast<double>(fa.rows());
}

double flicker_score(const std::vector<Frame>& clip, const std::vector<FlowField>& flows,
                     const std::vector<ValidityMask>& validity) {
  if (clip.size() > 1 && (flows.size() != clip.size() - 1 || validity.size() != flows.size())) {
    throw InvalidArgument("flicker_score: need one flow and validity mask per adjacent pair");
  }
  double sum = 0.0;
  int pairs = 0;
  for (std::size_t t = 1; t < clip.size(); ++t) {
    require_same_shape(clip[t], clip[t - 1], "flicker_score");
    const WarpResult w = warp(clip[t - 1], flows[t - 1]);
    const ValidityMask omega = intersect(w.valid, validity[t - 1]);
    double mad = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < omega.valid.size(); ++i) {
      if (!omega.valid[i]) continue;
      const auto row = static_cast<Eigen::Index>(i);
      mad += (clip[t].pixels.row(row) - w.frame.pixels.row(row)).cwiseAbs().sum();
      n += static_cast<std::size_t>(clip[t].channels());
    }
    if (n == 0) continue;
    sum += mad / static_cast<double>(n);
    ++pairs;
  }
  return pairs == 0 ? 1.0 : 1.0 - sum / pairs;
}

double high_frequency_energy(const Image& r) {
  const int h = r.height, w = r.width;
  if (h <= 0 || w <= 0) throw InvalidArgument("high_frequency_energy: empty image");
  // Bins ranked by radial frequency; ties broken by index so the selection is fixed.
  std::vector<int> order(static_cast<std::size_t>(h) * w);
  std::iota(order.begin(), order.end(), 0);
  auto radius = [h, w](int idx) {
    const int ky = idx / w, kx = idx % w;
    const double fy = static_cast<double>(std::min(ky, h - ky)) / h, fx = static_cast<double>(std::min(kx, w - kx)) / w;
    return fy * fy + fx * fx;
  };
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return radius(a) < radius(b); });
  const std::size_t top = order.size() / 4;

  Eigen::FFT<double> fft;
  double energy = 0.0;
  for (int c = 0; c < r.channels(); ++c) {
    std::vector<std::complex<double>> grid(static_cast<std::size_t>(h) * w);
    for (int i = 0; i < h * w; ++i) grid[static_cast<std::size_t>(i)] = r.pixels(i, c);
    std::vector<std::complex<double>> line, out;
    for (int y = 0; y < h; ++y) {
      line.assign(grid.begin() + static_cast<long>(y) * w, grid.begin() + static_cast<long>(y + 1) * w);
      fft.fwd(out, line);
      std::copy(out.begin(), out.end(), grid.begin() + static_cast<long>(y) * w);
    }
    for (int x = 0; x < w; ++x) {
      line.resize(static_cast<std::size_t>(h));
      for (int y = 0; y < h; ++y) line[static_cast<std::size_t>(y)] = grid[static_cast<std::size_t>(y) * w + x];
      fft.fwd(out, line);
      for (int y = 0; y < h; ++y) grid[static_cast<std::size_t>(y) * w + x] = out[static_cast<std::size_t>(y)];
    }
    for (std::size_t k = order.size() - top; k < order.size(); ++k) energy += std::norm(grid[static_cast<std::size_t>(order[k])]);
  }
  const double hw = static_cast<double>(h) * w;
  return energy / (hw * hw * r.channels());
}

// ---------------------------------------------------------------------------

nlohmann::json ClipMetrics::to_json() const {
  nlohmann::json j{{"id", id},
                   {"stream", stream_name(stream)},
                   {"frames", frames},
                   {"psnr_input", psnr_input},
                   {"psnr_output", psnr_output},
                   {"ssim_output", ssim_output},
                   {"perceptual_output", perceptual_output},
                   {"struct_distance", struct_distance}};
  if (roi_psnr_input) j["roi_psnr_input"] = *roi_psnr_input;
  if (roi_psnr_output) j["roi_psnr_output"] = *roi_psnr_output;
  if (flicker_input) j["flicker_input"] = *flicker_input;
  if (flicker_output) j["flicker_output"] = *flicker_output;
  return j;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j{{"model", model_id}, {"dataset", dataset_id}, {"aggregate", aggregate}};
  j["clips"] = nlohmann::json::array();
  for (const ClipMetrics& c : clips) j["clips"].push_back(c.to_json());
  return j;
}

std::map<std::string, double> aggregate_metrics(std::vector<ClipMetrics> clips) {
  std::sort(clips.begin(), clips.end(), [](const ClipMetrics& a, const ClipMetrics& b) { return a.id < b.id; });
  std::map<std::string, std::pair<double, int>> acc;
  auto add = [&acc](const std::string& k, double v) {
    auto& e = acc[k];
    e.first += v;
    e.second += 1;
  };
  for (const ClipMetrics& c : clips) {
    add("psnr_input", c.psnr_input);
    add("psnr_output", c.psnr_output);
    add("psnr_gain", c.psnr_output - c.psnr_input);
    add("ssim_output", c.ssim_output);
    add("perceptual_output", c.perceptual_output);
    add("struct_distance", c.struct_distance);
    if (c.roi_psnr_input) add("roi_psnr_input", *c.roi_psnr_input);
    if (c.roi_psnr_output) add("roi_psnr_output", *c.roi_psnr_output);
    if (c.flicker_input) add("flicker_input", *c.flicker_input);
    if (c.flicker_output) add("flicker_output", *c.flicker_output);
  }
  std::map<std::string, double> out;
  for (const auto& [k, v] : acc) out[k] = v.first / v.second;
  out["clips"] = static_cast<double>(clips.size());
  return out;
}

EvalReport evaluate(const Checkpoint& checkpoint, const Manifest& manifest, const EvalOptions& options) {
  std::vector<std::size_t> selected;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const ManifestRecord& r = manifest.records[i];
    if (options.stream && r.stream != *options.stream) continue;
    if (options.temporal && r.temporal != *options.temporal) continue;
    selected.push_back(i);
  }
  if (selected.empty()) throw InvalidArgument("evaluate: empty dataset (no samples match the selection)");

  const auto model = std::make_shared<const LoadedModel>(checkpoint);
  const ConvFeatureExtractor fx;
  EvalReport report;
  report.model_id = options.model_id;
  report.dataset_id = options.dataset_id;
  for (std::size_t idx : selected) {
    const PairedSample s = load_sample(manifest, idx);
    StreamSession session(model, options.session);
    const ClipResult out = enhance_clip(session, s.input);
    ClipMetrics m;
    m.id = manifest.records[idx].id;
    m.stream = s.stream;
    m.frames = s.frames();
    double roi_in = 0.0, roi_out = 0.0;
    int roi_frames = 0;
    for (std::size_t t = 0; t < s.target.size(); ++t) {
      m.psnr_input += psnr(s.input[t], s.target[t]);
      m.psnr_output += psnr(out.frames[t], s.target[t]);
      m.ssim_output += ssim(out.frames[t], s.target[t]);
      m.perceptual_output += perceptual_distance(out.frames[t], s.target[t], fx);
      m.struct_distance += struct_distance(s.input[t], out.frames[t], fx);
      if (s.masks[t].pixels.maxCoeff() > 0.0) {
        roi_in += psnr(s.input[t], s.target[t], &s.masks[t]);
        roi_out += psnr(out.frames[t], s.target[t], &s.masks[t]);
        ++roi_frames;
      }
    }
    const double inv = 1.0 / m.frames;
    m.psnr_input *= inv;
    m.psnr_output *= inv;
    m.ssim_output *= inv;
    m.perceptual_output *= inv;
    m.struct_distance *= inv;
    if (roi_frames > 0) {
      m.roi_psnr_input = roi_in / roi_frames;
      m.roi_psnr_output = roi_out / roi_frames;
    }
    if (s.temporal && !s.flows.empty()) {
      m.flicker_input = flicker_score(s.input, s.flows, s.flow_valid);
      m.flicker_output = flicker_score(out.frames, s.flows, s.flow_valid);
    }
    report.clips.push_back(std::move(m));
  }
  std::sort(report.clips.begin(), report.clips.end(),
            [](const ClipMetrics& a, const ClipMetrics& b) { return a.id < b.id; });
  report.aggregate = aggregate_metrics(report.clips);
  return report;
}

}  // namespace harmonizer
