#pragma once

#include "harmonizer/autograd.hpp"
#include "harmonizer/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace harmonizer {

/// Per-pixel displacement in pixels. For a flow F_{t->t-1}, pixel x of frame t
/// corresponds to x + F(x) in frame t-1. Row y*W+x holds (dx, dy).
struct FlowField {
  int height = 0;
  int width = 0;
  Mat vectors;

  FlowField() = default;
  FlowField(int h, int w) : height(h), width(w), vectors(Mat::Zero(static_cast<Eigen::Index>(h) * w, 2)) {}
  static FlowField constant(int h, int w, double dx, double dy);

  double dx(int y, int x) const { return vectors(y * width + x, 0); }
  double dy(int y, int x) const { return vectors(y * width + x, 1); }
  bool operator==(const FlowField& o) const {
    return height == o.height && width == o.width && vectors == o.vectors;
  }
};

struct ValidityMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> valid;  // 1 = valid

  ValidityMask() = default;
  ValidityMask(int h, int w, bool v) : height(h), width(w), valid(static_cast<std::size_t>(h) * w, v ? 1 : 0) {}

  bool at(int y, int x) const { return valid[static_cast<std::size_t>(y) * width + x] != 0; }
  std::size_t count() const;
  bool operator==(const ValidityMask&) const = default;
};

ValidityMask intersect(const ValidityMask& a, const ValidityMask& b);
Mask to_mask(const ValidityMask& v);
ValidityMask from_mask(const Mask& m);

struct WarpResult {
  Image frame;
  ValidityMask valid;
};

/// Backward bilinear warp: out(x) = source(x + flow(x)). Sample points outside
/// the source are invalid and produce 0.
WarpResult warp(const Image& source, const FlowField& flow);

/// Differentiable warp of a (H*W) x C pixel matrix (gradient w.r.t. source
/// only). Writes the validity mask to `valid` when non-null.
ag::Var warp(ag::Var source, int height, int width, const FlowField& flow, ValidityMask* valid = nullptr);

/// Number of warp evaluations performed by this thread (instrumentation).
std::uint64_t warp_call_count();

/// Exhaustive integer block matching of `curr` against `prev`, producing
/// F_{curr->prev}. Ties break toward the smaller displacement magnitude, then
/// lexicographically on (dy, dx).
FlowField block_match_flow(const Image& prev, const Image& curr, int max_disp, int block);

/// Forward-backward consistency check. `flow_fwd` is F_{t->t-1}, `flow_bwd`
/// is F_{t-1->t}. Valid iff the sample stays in bounds and the round trip
/// returns within `tol` pixels.
ValidityMask occlusion_mask(const FlowField& flow_fwd, const FlowField& flow_bwd, double tol = 1.0);

// FLO1 files: magic, u32 height, u32 width, then (dx, dy) float32 pairs, all
// little-endian, row-major.
std::vector<std::uint8_t> encode_flo(const FlowField& flow);
FlowField decode_flo(const std::vector<std::uint8_t>& bytes);
void write_flo(const std::filesystem::path& path, const FlowField& flow);
FlowField read_flo(const std::filesystem::path& path);

}  // namespace harmonizer
