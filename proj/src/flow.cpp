#include "harmonizer/flow.hpp"

#include "harmonizer/bytes.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <tuple>

namespace harmonizer {

FlowField FlowField::constant(int h, int w, double dx, double dy) {
  FlowField f(h, w);
  f.vectors.col(0).setConstant(dx);
  f.vectors.col(1).setConstant(dy);
  return f;
}

std::size_t ValidityMask::count() const {
  std::size_t n = 0;
  for (auto v : valid) n += v != 0;
  return n;
}

ValidityMask intersect(const ValidityMask& a, const ValidityMask& b) {
  if (a.height != b.height || a.width != b.width) throw DimensionError("intersect: mask size mismatch");
  ValidityMask out(a.height, a.width, false);
  for (std::size_t i = 0; i < a.valid.size(); ++i) out.valid[i] = (a.valid[i] && b.valid[i]) ? 1 : 0;
  return out;
}

Mask to_mask(const ValidityMask& v) {
  Mask m(v.height, v.width, 1);
  for (std::size_t i = 0; i < v.valid.size(); ++i) m.pixels(static_cast<Eigen::Index>(i), 0) = v.valid[i] ? 1.0 : 0.0;
  return m;
}

ValidityMask from_mask(const Mask& m) {
  ValidityMask v(m.height, m.width, false);
  for (std::size_t i = 0; i < v.valid.size(); ++i) v.valid[i] = m.pixels(static_cast<Eigen::Index>(i), 0) > 0.5 ? 1 : 0;
  return v;
}

namespace {

thread_local std::uint64_t g_warp_calls = 0;

/// Bilinear taps for one output pixel; index -1 marks an unused tap.
struct Taps {
  std::array<int, 4> index{-1, -1, -1, -1};
  std::array<double, 4> weight{0, 0, 0, 0};
};

/// Returns false when (sx, sy) lies outside [0, W-1] x [0, H-1].
bool bilinear_taps(double sx, double sy, int height, int width, Taps& taps) {
  if (!(sx >= 0.0 && sy >= 0.0 && sx <= width - 1 && sy <= height - 1)) return false;
  const int x0 = static_cast<int>(std::floor(sx));
  const int y0 = static_cast<int>(std::floor(sy));
  const double fx = sx - x0, fy = sy - y0;
  const int x1 = x0 + 1 < width ? x0 + 1 : x0;
  const int y1 = y0 + 1 < height ? y0 + 1 : y0;
  taps.index = {y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1};
  taps.weight = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
  return true;
}

std::vector<Taps> warp_taps(int height, int width, const FlowField& flow, ValidityMask& valid) {
  if (flow.height != height || flow.width != width) throw DimensionError("warp: flow size does not match source");
  valid = ValidityMask(height, width, false);
  std::vector<Taps> taps(static_cast<std::size_t>(height) * width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const int i = y * width + x;
      if (bilinear_taps(x + flow.dx(y, x), y + flow.dy(y, x), height, width, taps[i])) valid.valid[i] = 1;
    }
  }
  return taps;
}

Mat apply_taps(const Mat& src, const std::vector<Taps>& taps) {
  Mat out = Mat::Zero(src.rows(), src.cols());
  for (std::size_t i = 0; i < taps.size(); ++i) {
    const Taps& t = taps[i];
    if (t.index[0] < 0) continue;
    for (int k = 0; k < 4; ++k) out.row(static_cast<Eigen::Index>(i)) += t.weight[k] * src.row(t.index[k]);
  }
  return out;
}

}  // namespace

std::uint64_t warp_call_count() { return g_warp_calls; }

WarpResult warp(const Image& source, const FlowField& flow) {
  ++g_warp_calls;
  WarpResult r;
  const auto taps = warp_taps(source.height, source.width, flow, r.valid);
  r.frame = Image(source.height, source.width, apply_taps(source.pixels, taps));
  return r;
}

ag::Var warp(ag::Var source, int height, int width, const FlowField& flow, ValidityMask* valid) {
  ++g_warp_calls;
  if (source.rows() != static_cast<Eigen::Index>(height) * width) throw DimensionError("warp: source shape mismatch");
  ValidityMask v;
  auto taps = std::make_shared<std::vector<Taps>>(warp_taps(height, width, flow, v));
  if (valid != nullptr) *valid = std::move(v);
  ag::Tape* tape = source.tape;
  Mat out = apply_taps(source.value(), *taps);
  return tape->push(std::move(out), source.requires_grad(), [tape, source, taps](const Mat& g) {
    Mat& gs = tape->grad_buffer(source.id);
    for (std::size_t i = 0; i < taps->size(); ++i) {
      const Taps& t = (*taps)[i];
      if (t.index[0] < 0) continue;
      for (int k = 0; k < 4; ++k) gs.row(t.index[k]) += t.weight[k] * g.row(static_cast<Eigen::Index>(i));
    }
  });
}

FlowField block_match_flow(const Image& prev, const Image& curr, int max_disp, int block) {
  require_same_shape(prev, curr, "block_match_flow");
  if (max_disp < 0) throw InvalidArgument("block_match_flow: max_disp must be non-negative");
  if (block <= 0) throw InvalidArgument("block_match_flow: block size must be positive");
  const int h = curr.height, w = curr.width, c = curr.channels();

  // Candidates in tie-break order: magnitude, then dy, then dx.
  std::vector<std::pair<int, int>> cand;
  for (int dy = -max_disp; dy <= max_disp; ++dy) {
    for (int dx = -max_disp; dx <= max_disp; ++dx) cand.emplace_back(dy, dx);
  }
  std::stable_sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) {
    const int ma = a.first * a.first + a.second * a.second;
    const int mb = b.first * b.first + b.second * b.second;
    return std::tie(ma, a.first, a.second) < std::tie(mb, b.first, b.second);
  });

  FlowField flow(h, w);
  for (int by = 0; by < h; by += block) {
    for (int bx = 0; bx < w; bx += block) {
      const int ey = std::min(by + block, h), ex = std::min(bx + block, w);
      double best = std::numeric_limits<double>::infinity();
      int best_dx = 0, best_dy = 0;
      for (const auto& [dy, dx] : cand) {
        if (by + dy < 0 || bx + dx < 0 || ey + dy > h || ex + dx > w) continue;
        double sad = 0.0;
        for (int y = by; y < ey; ++y) {
          for (int x = bx; x < ex; ++x) {
            const auto a = curr.pixels.row(curr.index(y, x));
            const auto b = prev.pixels.row(prev.index(y + dy, x + dx));
            for (int k = 0; k < c; ++k) sad += std::abs(a(k) - b(k));
          }
        }
        if (sad < best) {
          best = sad;
          best_dx = dx;
          best_dy = dy;
        }
      }
      for (int y = by; y < ey; ++y) {
        for (int x = bx; x < ex; ++x) {
          flow.vectors(y * w + x, 0) = best_dx;
          flow.vectors(y * w + x, 1) = best_dy;
        }
      }
    }
  }
  return flow;
}

ValidityMask occlusion_mask(const FlowField& flow_fwd, const FlowField& flow_bwd, double tol) {
  if (flow_fwd.height != flow_bwd.height || flow_fwd.width != flow_bwd.width) {
    throw DimensionError("occlusion_mask: flow size mismatch");
  }
  const int h = flow_fwd.height, w = flow_fwd.width;
  ValidityMask out(h, w, false);
  Taps taps;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double fx = flow_fwd.dx(y, x), fy = flow_fwd.dy(y, x);
      if (!bilinear_taps(x + fx, y + fy, h, w, taps)) continue;
      double bx = 0.0, by = 0.0;
      for (int k = 0; k < 4; ++k) {
        bx += taps.weight[k] * flow_bwd.vectors(taps.index[k], 0);
        by += taps.weight[k] * flow_bwd.vectors(taps.index[k], 1);
      }
      const double ex = fx + bx, ey = fy + by;
      if (std::sqrt(ex * ex + ey * ey) <= tol) out.valid[static_cast<std::size_t>(y) * w + x] = 1;
    }
  }
  return out;
}

std::vector<std::uint8_t> encode_flo(const FlowField& flow) {
  std::vector<std::uint8_t> out;
  out.reserve(12 + static_cast<std::size_t>(flow.vectors.size()) * 4);
  put_bytes(out, "FLO1");
  put_u32(out, static_cast<std::uint32_t>(flow.height));
  put_u32(out, static_cast<std::uint32_t>(flow.width));
  for (Eigen::Index i = 0; i < flow.vectors.rows(); ++i) {
    put_f32(out, static_cast<float>(flow.vectors(i, 0)));
    put_f32(out, static_cast<float>(flow.vectors(i, 1)));
  }
  return out;
}

FlowField decode_flo(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  if (r.str(4) != "FLO1") throw FormatError("flo: bad magic");
  const std::uint32_t h = r.u32(), w = r.u32();
  if (h == 0 || w == 0 || h > (1u << 15) || w > (1u << 15)) throw FormatError("flo: implausible dimensions");
  if (r.remaining() != static_cast<std::size_t>(h) * w * 8) throw FormatError("flo: payload size mismatch");
  FlowField f(static_cast<int>(h), static_cast<int>(w));
  for (Eigen::Index i = 0; i < f.vectors.rows(); ++i) {
    f.vectors(i, 0) = r.f32();
    f.vectors(i, 1) = r.f32();
  }
  return f;
}

void write_flo(const std::filesystem::path& path, const FlowField& flow) { write_file_bytes(path, encode_flo(flow)); }

FlowField read_flo(const std::filesystem::path& path) { return decode_flo(read_file_bytes(path)); }

}  // namespace harmonizer
