#include "harmonizer/datagen.hpp"

#include "harmonizer/bytes.hpp"
#include "harmonizer/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>

namespace harmonizer {

namespace fs = std::filesystem;

std::string stream_name(Stream s) {
  switch (s) {
    case Stream::artifact: return "artifact";
    case Stream::isp: return "isp";
    case Stream::relight: return "relight";
    case Stream::shadow: return "shadow";
    case Stream::reinsert: return "reinsert";
  }
  throw InvalidArgument("stream_name: unknown stream");
}

Stream parse_stream(const std::string& name) {
  for (Stream s : kAllStreams) {
    if (stream_name(s) == name) return s;
  }
  throw InvalidArgument("unknown stream '" + name + "'");
}

void PairedSample::validate() const {
  const std::size_t t = target.size();
  if (t == 0) throw InvalidArgument("PairedSample: no frames");
  if (input.size() != t || masks.size() != t) throw InvalidArgument("PairedSample: frame/mask count mismatch");
  if (temporal != (t > 1)) throw InvalidArgument("PairedSample: temporal flag must match the frame count");
  if (!flows.empty() && flows.size() != t - 1) throw InvalidArgument("PairedSample: need one flow per adjacent pair");
  if (flow_valid.size() != flows.size()) throw InvalidArgument("PairedSample: flow validity count mismatch");
  for (std::size_t i = 0; i < t; ++i) {
    validate_frame(input[i]);
    validate_frame(target[i]);
    require_same_shape(input[i], target[i], "PairedSample");
    if (masks[i].height != target[i].height || masks[i].width != target[i].width || masks[i].channels() != 1) {
      throw InvalidArgument("PairedSample: mask shape mismatch");
    }
  }
  for (std::size_t i = 0; i < flows.size(); ++i) {
    if (flows[i].height != target[0].height || flows[i].width != target[0].width ||
        flow_valid[i].height != target[0].height || flow_valid[i].width != target[0].width) {
      throw InvalidArgument("PairedSample: flow shape mismatch");
    }
  }
}

// ---------------------------------------------------------------------------

std::string degrade_mode_name(DegradeMode m) {
  switch (m) {
    case DegradeMode::blur: return "blur";
    case DegradeMode::holes: return "holes";
    case DegradeMode::ghost: return "ghost";
    case DegradeMode::spurious: return "spurious";
  }
  throw InvalidArgument("degrade_mode_name: unknown mode");
}

DegradeMode parse_degrade_mode(const std::string& name) {
  for (DegradeMode m : {DegradeMode::blur, DegradeMode::holes, DegradeMode::ghost, DegradeMode::spurious}) {
    if (degrade_mode_name(m) == name) return m;
  }
  throw InvalidArgument("unknown degradation mode '" + name + "'");
}

namespace {

Image gaussian_blur(const Image& in, double sigma) {
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) sum += k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= sum;
  const int h = in.height, w = in.width, c = in.channels();
  auto pass = [&](const Image& src, bool horizontal) {
    Image out(h, w, c);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int ch = 0; ch < c; ++ch) {
          double acc = 0.0;
          for (int i = -r; i <= r; ++i) {
            const int sx = horizontal ? std::clamp(x + i, 0, w - 1) : x;
            const int sy = horizontal ? y : std::clamp(y + i, 0, h - 1);
            acc += k[static_cast<std::size_t>(i + r)] * src.at(sy, sx, ch);
          }
          out.at(y, x, ch) = acc;
        }
      }
    }
    return out;
  };
  return pass(pass(in, true), false);
}

Image down_up(const Image& in, int f) {
  if (in.height % f != 0 || in.width % f != 0) throw InvalidArgument("degrade: frame size not divisible by blur_factor");
  const int h = in.height / f, w = in.width / f, c = in.channels();
  Image small(h, w, c);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int dy = 0; dy < f; ++dy) {
          for (int dx = 0; dx < f; ++dx) acc += in.at(y * f + dy, x * f + dx, ch);
        }
        small.at(y, x, ch) = acc / (f * f);
      }
    }
  }
  Image out(in.height, in.width, c);
  for (int y = 0; y < in.height; ++y) {
    const double sy = std::clamp((y + 0.5) / f - 0.5, 0.0, h - 1.0);
    const int y0 = std::min(static_cast<int>(sy), h - 1), y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - y0;
    for (int x = 0; x < in.width; ++x) {
      const double sx = std::clamp((x + 0.5) / f - 0.5, 0.0, w - 1.0);
      const int x0 = std::min(static_cast<int>(sx), w - 1), x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - x0;
      for (int ch = 0; ch < c; ++ch) {
        const double top = (1 - fx) * small.at(y0, x0, ch) + fx * small.at(y0, x1, ch);
        const double bot = (1 - fx) * small.at(y1, x0, ch) + fx * small.at(y1, x1, ch);
        out.at(y, x, ch) = (1 - fy) * top + fy * bot;
      }
    }
  }
  return out;
}

struct Rect {
  int y, x, h, w;
};

Rect random_rect(Rng& rng, int lo, int hi, int height, int width) {
  Rect r{};
  r.h = rng.uniform_int(lo, std::min(hi, height));
  r.w = rng.uniform_int(lo, std::min(hi, width));
  r.y = rng.uniform_int(0, height - r.h);
  r.x = rng.uniform_int(0, width - r.w);
  return r;
}

}  // namespace

PairedSample degrade(const std::vector<Frame>& target, DegradeMode mode, std::uint64_t seed,
                     const DegradeOptions& o) {
  if (target.empty()) throw InvalidArgument("degrade: empty clip");
  PairedSample s;
  s.stream = Stream::artifact;
  s.target = target;
  s.temporal = target.size() > 1;
  s.meta["mode"] = degrade_mode_name(mode);
  for (std::size_t t = 0; t < target.size(); ++t) {
    const Frame& f = target[t];
    validate_frame(f);
    require_same_shape(f, target.front(), "degrade");
    Frame in = f;
    Mask m(f.height, f.width, 1);
    Rng rng(derive_seed(seed, t));
    switch (mode) {
      case DegradeMode::blur:
        if (o.blur_sigma < 0.0) throw InvalidArgument("degrade: negative blur sigma");
        if (o.blur_sigma > 0.0) {
          in = gaussian_blur(f, o.blur_sigma);
          if (o.blur_factor > 1) in = down_up(in, o.blur_factor);
          m.pixels.setOnes();
        }
        break;
      case DegradeMode::holes:
        for (int k = 0; k < o.hole_count; ++k) {
          const Rect r = random_rect(rng, o.hole_min, o.hole_max, f.height, f.width);
          Eigen::RowVector3d mean = Eigen::RowVector3d::Zero();
          for (int y = r.y; y < r.y + r.h; ++y) {
            for (int x = r.x; x < r.x + r.w; ++x) mean += f.pixels.row(f.index(y, x));
          }
          mean /= static_cast<double>(r.h * r.w);
          for (int y = r.y; y < r.y + r.h; ++y) {
            for (int x = r.x; x < r.x + r.w; ++x) {
              in.pixels.row(f.index(y, x)) = mean;
              m.pixels(f.index(y, x), 0) = 1.0;
            }
          }
        }
        break;
      case DegradeMode::ghost: {
        const double a = o.ghost_alpha;
        if (!(a >= 0.0 && a <= 1.0)) throw InvalidArgument("degrade: ghost alpha outside [0, 1]");
        for (int y = 0; y < f.height; ++y) {
          for (int x = 0; x < f.width; ++x) {
            const int sy = y - o.ghost_dy, sx = x - o.ghost_dx;
            if (sy < 0 || sx < 0 || sy >= f.height || sx >= f.width) continue;
            for (int c = 0; c < 3; ++c) in.at(y, x, c) = (1.0 - a) * f.at(y, x, c) + a * f.at(sy, sx, c);
            m.pixels(f.index(y, x), 0) = 1.0;
          }
        }
        break;
      }
      case DegradeMode::spurious:
        for (int k = 0; k < o.spurious_count; ++k) {
          const Rect r = random_rect(rng, o.spurious_min, o.spurious_max, f.height, f.width);
          const Eigen::RowVector3d c1(rng.uniform(), rng.uniform(), rng.uniform());
          const Eigen::RowVector3d c2(rng.uniform(), rng.uniform(), rng.uniform());
          const int period = rng.uniform_int(2, 5);
          const int orientation = rng.uniform_int(0, 2);
          for (int y = 0; y < r.h; ++y) {
            for (int x = 0; x < r.w; ++x) {
              const int coord = orientation == 0 ? y : (orientation == 1 ? x : x + y);
              in.pixels.row(f.index(r.y + y, r.x + x)) = (coord / period) % 2 == 0 ? c1 : c2;
              m.pixels(f.index(r.y + y, r.x + x), 0) = 1.0;
            }
          }
        }
        break;
    }
    s.input.push_back(std::move(in));
    s.masks.push_back(std::move(m));
  }
  return s;
}

// ---------------------------------------------------------------------------

Frame composite(const Frame& a, const Frame& b, const Mask& m) {
  require_same_shape(a, b, "composite");
  if (m.height != a.height || m.width != a.width || m.channels() != 1) {
    throw DimensionError("composite: mask shape mismatch");
  }
  Frame out = b;
  for (Eigen::Index i = 0; i < out.pixels.rows(); ++i) {
    const double w = m.pixels(i, 0);
    for (Eigen::Index c = 0; c < out.pixels.cols(); ++c) out.pixels(i, c) = w * a.pixels(i, c) + (1.0 - w) * b.pixels(i, c);
  }
  return out;
}

namespace {

nlohmann::json isp_json(const IspParams& p) {
  nlohmann::json knots = nlohmann::json::array();
  for (const auto& [x, y] : p.tone_knots) knots.push_back({x, y});
  return {{"exposure_ev", p.exposure_ev},
          {"wb_gains", p.wb_gains},
          {"gamma", p.gamma},
          {"saturation", p.saturation},
          {"tone_knots", knots}};
}

std::vector<IspParams> draw_isp_sequence(std::uint64_t seed, std::size_t frames, const IspRanges& ranges,
                                         double jitter) {
  Rng rng(seed);
  const IspParams base = sample_isp_params(rng, ranges);
  std::vector<IspParams> seq;
  for (std::size_t t = 0; t < frames; ++t) {
    seq.push_back(jitter > 0.0 && frames > 1 ? jitter_isp_params(base, rng, jitter) : base);
  }
  return seq;
}

}  // namespace

PairedSample make_isp_pair(const std::vector<Frame>& orig, const std::vector<Mask>& masks, std::uint64_t seed,
                           const IspRanges& ranges, double frame_jitter) {
  if (orig.empty()) throw InvalidArgument("make_isp_pair: empty clip");
  if (masks.size() != orig.size()) throw DimensionError("make_isp_pair: need one mask per frame");
  const auto params = draw_isp_sequence(seed, orig.size(), ranges, frame_jitter);
  PairedSample s;
  s.stream = Stream::isp;
  s.target = orig;
  s.masks = masks;
  s.temporal = orig.size() > 1;
  s.meta["isp"] = nlohmann::json::array();
  for (std::size_t t = 0; t < orig.size(); ++t) {
    s.input.push_back(composite(apply_isp(orig[t], params[t]), orig[t], masks[t]));
    s.meta["isp"].push_back(isp_json(params[t]));
  }
  return s;
}

LightDelta sample_light_delta(Rng& rng) {
  LightDelta d;
  d.yaw = rng.uniform(-0.9, 0.9);
  d.pitch = rng.uniform(-0.3, 0.3);
  d.intensity_scale = rng.uniform(0.6, 1.5);
  return d;
}

Light perturb_light(const Light& light, const LightDelta& delta) {
  if (!(delta.intensity_scale > 0.0)) throw InvalidArgument("perturb_light: intensity scale must be positive");
  Light out = light;
  out.intensity = light.intensity * delta.intensity_scale;
  if (delta.yaw != 0.0 || delta.pitch != 0.0) {
    const Vec3& d = light.direction;
    const double az = std::atan2(d.y(), d.x()) + delta.yaw;
    const double el = std::clamp(std::asin(std::clamp(d.z(), -1.0, 1.0)) + delta.pitch, 0.1, std::numbers::pi / 2 - 1e-3);
    out.direction = Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
  }
  return out;
}

Image relight_linear(const RenderResult& render, const SceneSpec& spec, int t, const LightDelta& delta) {
  const auto n = static_cast<std::size_t>(t);
  if (t < 0 || n >= render.linear.size()) throw InvalidArgument("relight: frame index out of range");
  if (n >= render.normals.size() || n >= render.albedo.size() || n >= render.visibility.size() ||
      render.normals[n].pixels.rows() != render.linear[n].pixels.rows()) {
    throw InvalidArgument("relight: render is missing per-pixel normals/albedo/visibility");
  }
  const Light light = perturb_light(spec.light, delta);
  Image out = render.linear[n];
  const Mask& fg = render.fg_mask[n];
  for (Eigen::Index i = 0; i < out.pixels.rows(); ++i) {
    if (fg.pixels(i, 0) == 0.0) continue;
    const Vec3 albedo = render.albedo[n].pixels.row(i).transpose();
    const Vec3 normal = render.normals[n].pixels.row(i).transpose();
    out.pixels.row(i) = shade(albedo, normal, light, render.visibility[n].pixels(i, 0), spec.ambient).transpose();
  }
  return out;
}

PairedSample relight_fg(const RenderResult& render, const SceneSpec& spec, int t, const LightDelta& delta) {
  const Image lin = relight_linear(render, spec, t, delta);
  const auto n = static_cast<std::size_t>(t);
  PairedSample s;
  s.stream = Stream::relight;
  s.input.push_back(to_display(lin));
  s.target.push_back(render.frames[n]);
  s.masks.push_back(render.fg_mask[n]);
  s.meta["light_delta"] = {{"yaw", delta.yaw}, {"pitch", delta.pitch}, {"intensity_scale", delta.intensity_scale}};
  return s;
}

PairedSample make_shadow_pair(const SceneSpec& spec) {
  const RenderResult lit = render_scene(spec, true);
  const RenderResult flat = render_scene(spec, false);
  PairedSample s;
  s.stream = Stream::shadow;
  s.input = flat.frames;
  s.target = lit.frames;
  for (const Image& v : lit.visibility) {
    Mask m(v.height, v.width, 1);
    m.pixels = (v.pixels.array() < 1.0).cast<double>().matrix();
    s.masks.push_back(std::move(m));
  }
  s.flows = lit.flows;
  s.flow_valid = lit.flow_valid;
  s.temporal = spec.frames > 1;
  s.meta["softness"] = spec.light.softness;
  return s;
}

PairedSample make_reinsert_pair(const SceneSpec& spec, const std::vector<IspParams>& sprite_isp, bool target_shadows) {
  if (sprite_isp.size() != static_cast<std::size_t>(spec.frames)) {
    throw InvalidArgument("make_reinsert_pair: need one ISP parameter set per frame");
  }
  const RenderResult full = render_scene(spec, target_shadows);
  bool any = false;
  for (const Mask& m : full.fg_mask) any = any || m.pixels.maxCoeff() > 0.0;
  if (!any) throw InvalidArgument("make_reinsert_pair: foreground never visible");

  SceneSpec bg = spec;
  bg.primitives.clear();
  for (auto& row : bg.offsets) row.clear();
  for (std::size_t i = 0; i < spec.primitives.size(); ++i) {
    if (spec.primitives[i].foreground) continue;
    bg.primitives.push_back(spec.primitives[i]);
    for (int t = 0; t < spec.frames && !spec.offsets.empty(); ++t) {
      bg.offsets[static_cast<std::size_t>(t)].push_back(spec.offset(t, i));
    }
  }
  const RenderResult back = render_scene(bg, target_shadows);

  PairedSample s;
  s.stream = Stream::reinsert;
  s.target = full.frames;
  s.temporal = spec.frames > 1;
  s.flows = full.flows;
  s.flow_valid = full.flow_valid;
  s.meta["isp"] = nlohmann::json::array();
  for (std::size_t t = 0; t < full.frames.size(); ++t) {
    const Mask& fg = full.fg_mask[t];
    s.input.push_back(composite(apply_isp(full.frames[t], sprite_isp[t]), back.frames[t], fg));
    Mask region = fg;
    for (Eigen::Index i = 0; i < region.pixels.rows(); ++i) {
      if (full.visibility[t].pixels(i, 0) != back.visibility[t].pixels(i, 0)) region.pixels(i, 0) = 1.0;
    }
    s.masks.push_back(std::move(region));
    s.meta["isp"].push_back(isp_json(sprite_isp[t]));
  }
  return s;
}

PairedSample make_reinsert_pair(const SceneSpec& spec, std::uint64_t seed, bool target_shadows,
                                const IspRanges& ranges, double frame_jitter) {
  return make_reinsert_pair(spec, draw_isp_sequence(seed, static_cast<std::size_t>(spec.frames), ranges, frame_jitter),
                            target_shadows);
}

// ---------------------------------------------------------------------------

namespace {

const std::array<Vec3, 8> kObjectPalette{Vec3(0.75, 0.20, 0.15), Vec3(0.20, 0.60, 0.25), Vec3(0.20, 0.30, 0.75),
                                         Vec3(0.85, 0.75, 0.20), Vec3(0.80, 0.80, 0.80), Vec3(0.55, 0.25, 0.60),
                                         Vec3(0.90, 0.50, 0.15), Vec3(0.20, 0.65, 0.70)};
const std::array<Vec3, 4> kGroundPalette{Vec3(0.45, 0.42, 0.38), Vec3(0.35, 0.40, 0.33), Vec3(0.50, 0.50, 0.52),
                                         Vec3(0.40, 0.36, 0.30)};

}  // namespace

SceneSpec random_scene(Rng& rng, int frames, const SceneRandomization& r) {
  SceneSpec s;
  s.frames = frames;
  s.camera.width = r.width;
  s.camera.height = r.height;
  s.ground.cells_x = 8;
  s.ground.cells_y = 8;
  s.ground.cell_size = 0.9;
  s.ground.albedo.clear();
  for (int i = 0; i < 64; ++i) s.ground.albedo.push_back(kGroundPalette[static_cast<std::size_t>(rng.uniform_int(0, 3))]);
  const double az = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double el = rng.uniform(0.6, 1.2);
  s.light.direction = Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
  s.light.softness = rng.uniform(0.0, r.max_softness);
  s.light.intensity = rng.uniform(0.75, 1.0);
  s.ambient = rng.uniform(0.15, 0.3);

  const int n_fg = rng.uniform_int(r.min_foreground, r.max_foreground);
  const int n_bg = rng.uniform_int(0, r.max_background);
  const int margin = std::min(14, std::min(r.width, r.height) / 4);
  std::vector<std::pair<int, int>> velocity;
  for (int i = 0; i < n_fg + n_bg; ++i) {
    Primitive p;
    p.foreground = i < n_fg;
    p.shape = rng.bernoulli(0.5) ? Shape::sphere : Shape::box;
    double lift;
    if (p.shape == Shape::sphere) {
      p.size = Vec3::Constant(rng.uniform(0.35, 0.7));
      lift = p.size.x();
    } else {
      p.size = Vec3(rng.uniform(0.3, 0.6), rng.uniform(0.3, 0.6), rng.uniform(0.3, 0.6));
      lift = p.size.z();
    }
    const int u = rng.uniform_int(margin, r.width - margin);
    const int v = rng.uniform_int(margin, r.height - margin);
    p.center = s.camera.ground_shift(u - r.width / 2.0, v - r.height / 2.0) + Vec3(0, 0, lift);
    p.albedo = kObjectPalette[static_cast<std::size_t>(rng.uniform_int(0, 7))];
    p.texture = rng.bernoulli(0.5) ? 0.35 : 0.0;
    p.texture_scale = 0.3;
    s.primitives.push_back(p);
    velocity.emplace_back(p.foreground ? rng.uniform_int(-r.max_speed, r.max_speed) : 0,
                          p.foreground ? rng.uniform_int(-r.max_speed, r.max_speed) : 0);
  }
  if (frames > 1) {
    for (int t = 0; t < frames; ++t) {
      std::vector<Vec3> row;
      for (const auto& [vx, vy] : velocity) row.push_back(s.camera.ground_shift(vx * t, vy * t));
      s.offsets.push_back(std::move(row));
    }
  }
  return s;
}

void DatasetConfig::validate() const {
  for (int c : counts) {
    if (c < 0) throw InvalidArgument("DatasetConfig: negative sample count");
  }
  if (width <= 0 || height <= 0) throw InvalidArgument("DatasetConfig: invalid frame size");
  if (clip_length < 2) throw InvalidArgument("DatasetConfig: clip_length must be at least 2");
  if (!(clip_fraction >= 0.0 && clip_fraction <= 1.0)) throw InvalidArgument("DatasetConfig: clip_fraction outside [0, 1]");
  if (!(isp_frame_jitter >= 0.0)) throw InvalidArgument("DatasetConfig: negative jitter");
}

std::array<int, 5> counts_from_proportions(int total, const std::array<double, 5>& weights) {
  if (total < 0) throw InvalidArgument("counts_from_proportions: negative total");
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw InvalidArgument("counts_from_proportions: invalid weight");
    sum += w;
  }
  if (!(sum > 0.0)) throw InvalidArgument("counts_from_proportions: weights sum to zero");
  std::array<int, 5> counts{};
  std::array<double, 5> rem{};
  int assigned = 0;
  for (std::size_t i = 0; i < 5; ++i) {
    const double exact = total * weights[i] / sum;
    counts[i] = static_cast<int>(std::floor(exact));
    rem[i] = exact - counts[i];
    assigned += counts[i];
  }
  std::array<std::size_t, 5> order{0, 1, 2, 3, 4};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (int k = 0; k < total - assigned; ++k) ++counts[order[static_cast<std::size_t>(k)]];
  return counts;
}

std::size_t Manifest::count(Stream s) const {
  return static_cast<std::size_t>(
      std::count_if(records.begin(), records.end(), [s](const ManifestRecord& r) { return r.stream == s; }));
}

std::vector<std::size_t> Manifest::select(bool temporal) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].temporal == temporal) out.push_back(i);
  }
  return out;
}

PairedSample generate_sample(const DatasetConfig& config, Stream stream, int index) {
  config.validate();
  const auto ordinal = static_cast<std::uint64_t>(std::find(kAllStreams.begin(), kAllStreams.end(), stream) - kAllStreams.begin());
  const std::uint64_t seed = derive_seed(config.seed, ordinal * 1000003ULL + static_cast<std::uint64_t>(index));
  Rng rng(seed);
  const bool temporal = stream != Stream::relight && rng.bernoulli(config.clip_fraction);
  const int frames = temporal ? config.clip_length : 1;
  SceneRandomization sr;
  sr.width = config.width;
  sr.height = config.height;
  // Redraw scenes whose foreground is hidden in some frame.
  SceneSpec scene;
  RenderResult r;
  for (int attempt = 0;; ++attempt) {
    scene = random_scene(rng, frames, sr);
    r = render_scene(scene, true);
    bool visible = true;
    for (const Mask& m : r.fg_mask) visible = visible && m.pixels.maxCoeff() > 0.0;
    if (visible) break;
    if (attempt == 32) throw std::runtime_error("generate_sample: could not draw a scene with a visible foreground");
  }
  const double jitter = temporal ? config.isp_frame_jitter : 0.0;

  PairedSample s;
  switch (stream) {
    case Stream::artifact: {
      const auto mode = static_cast<DegradeMode>(rng.uniform_int(0, 3));
      DegradeOptions o;
      o.blur_sigma = rng.uniform(0.8, 2.0);
      o.ghost_alpha = rng.uniform(0.3, 0.6);
      do {
        o.ghost_dx = rng.uniform_int(-6, 6);
        o.ghost_dy = rng.uniform_int(-6, 6);
      } while (o.ghost_dx == 0 && o.ghost_dy == 0);
      s = degrade(r.frames, mode, rng.next_u64(), o);
      s.flows = r.flows;
      s.flow_valid = r.flow_valid;
      break;
    }
    case Stream::isp: {
      s = make_isp_pair(r.frames, r.fg_mask, rng.next_u64(), {}, jitter);
      s.flows = r.flows;
      s.flow_valid = r.flow_valid;
      break;
    }
    case Stream::relight: {
      s = relight_fg(r, scene, 0, sample_light_delta(rng));
      break;
    }
    case Stream::shadow:
      s = make_shadow_pair(scene);
      break;
    case Stream::reinsert:
      s = make_reinsert_pair(scene, rng.next_u64(), true, {}, jitter);
      break;
  }
  s.meta["seed"] = seed;
  s.meta["index"] = index;
  s.validate();
  return s;
}

namespace {

std::string numbered(const char* stem, std::size_t i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%03zu.%s", stem, i, ext);
  return buf;
}

}  // namespace

void write_sample(const PairedSample& s, const fs::path& dir) {
  s.validate();
  fs::create_directories(dir);
  for (std::size_t t = 0; t < s.target.size(); ++t) {
    write_png(dir / numbered("input", t, "png"), s.input[t]);
    write_png(dir / numbered("target", t, "png"), s.target[t]);
    write_png(dir / numbered("mask", t, "png"), s.masks[t]);
  }
  for (std::size_t t = 0; t < s.flows.size(); ++t) {
    write_flo(dir / numbered("flow", t, "flo"), s.flows[t]);
    write_png(dir / numbered("valid", t, "png"), to_mask(s.flow_valid[t]));
  }
  nlohmann::json meta = s.meta;
  meta["stream"] = stream_name(s.stream);
  meta["frames"] = s.frames();
  meta["temporal"] = s.temporal;
  meta["has_flow"] = !s.flows.empty();
  const std::string text = meta.dump(2) + "\n";
  write_file_bytes(dir / "meta.json", std::vector<std::uint8_t>(text.begin(), text.end()));
}

PairedSample read_sample(const fs::path& dir) {
  const auto bytes = read_file_bytes(dir / "meta.json");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("read_sample: bad meta.json in " + dir.string() + ": " + e.what());
  }
  PairedSample s;
  try {
    s.stream = parse_stream(meta.at("stream").get<std::string>());
    s.temporal = meta.at("temporal").get<bool>();
    const auto frames = meta.at("frames").get<std::size_t>();
    for (std::size_t t = 0; t < frames; ++t) {
      s.input.push_back(read_png(dir / numbered("input", t, "png")));
      s.target.push_back(read_png(dir / numbered("target", t, "png")));
      s.masks.push_back(read_png(dir / numbered("mask", t, "png")));
    }
    if (meta.at("has_flow").get<bool>()) {
      for (std::size_t t = 0; t + 1 < frames; ++t) {
        s.flows.push_back(read_flo(dir / numbered("flow", t, "flo")));
        s.flow_valid.push_back(from_mask(read_png(dir / numbered("valid", t, "png"))));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("read_sample: incomplete meta.json in " + dir.string() + ": " + e.what());
  }
  s.meta = std::move(meta);
  s.validate();
  return s;
}

void write_manifest(const Manifest& m, const fs::path& path) {
  std::string text;
  for (const ManifestRecord& r : m.records) {
    const nlohmann::json j{{"id", r.id}, {"stream", stream_name(r.stream)}, {"path", r.path}, {"frames", r.frames},
                           {"temporal", r.temporal}};
    text += j.dump() + "\n";
  }
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest " + path.string());
  Manifest m;
  m.root = path.parent_path();
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestRecord r;
      r.id = j.at("id").get<std::string>();
      r.stream = parse_stream(j.at("stream").get<std::string>());
      r.path = j.at("path").get<std::string>();
      r.frames = j.at("frames").get<int>();
      r.temporal = j.at("temporal").get<bool>();
      m.records.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return m;
}

PairedSample load_sample(const Manifest& m, std::size_t index) {
  if (index >= m.records.size()) throw InvalidArgument("load_sample: index out of range");
  return read_sample(m.root / m.records[index].path);
}

Manifest build_dataset(const DatasetConfig& config, const fs::path& root) {
  config.validate();
  fs::create_directories(root);
  Manifest m;
  m.root = root;
  for (std::size_t k = 0; k < kAllStreams.size(); ++k) {
    const Stream stream = kAllStreams[k];
    for (int i = 0; i < config.counts[k]; ++i) {
      const PairedSample s = generate_sample(config, stream, i);
      char id[64];
      std::snprintf(id, sizeof id, "%s_%05d", stream_name(stream).c_str(), i);
      ManifestRecord r{id, stream, stream_name(stream) + "/" + id, s.frames(), s.temporal};
      write_sample(s, root / r.path);
      m.records.push_back(std::move(r));
    }
  }
  write_manifest(m, root / "manifest.jsonl");
  return m;
}

}  // namespace harmonizer
