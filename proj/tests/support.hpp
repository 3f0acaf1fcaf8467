#pragma once

#include "harmonizer/autograd.hpp"
#include "harmonizer/backbone.hpp"
#include "harmonizer/rng.hpp"
#include "harmonizer/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace harmonizer::testing {

inline Image random_image(int h, int w, int c, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  Rng rng(seed);
  Image im(h, w, c);
  for (Eigen::Index i = 0; i < im.pixels.size(); ++i) im.pixels.data()[i] = rng.uniform(lo, hi);
  return im;
}

/// Smooth multi-frequency pattern plus noise: distinctive enough for block
/// matching, smooth enough for bilinear interpolation.
inline Frame textured_frame(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  const double fx = rng.uniform(0.2, 0.6), fy = rng.uniform(0.2, 0.6), ph = rng.uniform(0.0, 6.28);
  Frame f(h, w, 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = 0.5 + 0.2 * std::sin(fx * x + ph + c) * std::cos(fy * y - c) + 0.1 * (rng.uniform() - 0.5);
        f.at(y, x, c) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return f;
}

/// Frame whose pixel (y, x) is `src` at (y - dy, x - dx); uncovered pixels
/// are taken from `fill`.
inline Frame shifted(const Frame& src, int dx, int dy, const Frame& fill) {
  Frame out = fill;
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < src.width; ++x) {
      const int sy = y - dy, sx = x - dx;
      if (sy < 0 || sx < 0 || sy >= src.height || sx >= src.width) continue;
      out.pixels.row(out.index(y, x)) = src.pixels.row(src.index(sy, sx));
    }
  }
  return out;
}

inline Mask random_mask(int h, int w, std::uint64_t seed, bool binary) {
  Rng rng(seed);
  Mask m(h, w, 1);
  for (Eigen::Index i = 0; i < m.pixels.rows(); ++i) m.pixels(i, 0) = binary ? (rng.bernoulli(0.5) ? 1.0 : 0.0) : rng.uniform();
  return m;
}

/// Builds a scalar graph from leaf values (one leaf per input).
using GraphFn = std::function<ag::Var(ag::Tape&, const std::vector<ag::Var>&)>;

struct GradCheck {
  double relative_error = 0.0;
  double analytic_norm = 0.0;
};

/// Compares reverse-mode gradients against central finite differences over
/// the listed entries of each input (all entries when `entries` is empty).
/// The error is ||g_analytic - g_numeric|| / max(||g_analytic||, ||g_numeric||, 1e-12).
inline GradCheck check_gradients(const GraphFn& fn, const std::vector<Mat>& inputs,
                                 const std::vector<std::vector<Eigen::Index>>& entries = {}, double h = 1e-6) {
  std::vector<Mat> analytic;
  {
    ag::Tape tape;
    std::vector<ag::Var> leaves;
    for (const Mat& m : inputs) leaves.push_back(tape.leaf(m, true));
    ag::Var out = fn(tape, leaves);
    tape.backward(out);
    for (std::size_t i = 0; i < leaves.size(); ++i) {
      Mat g = leaves[i].grad();
      if (g.size() == 0) g = Mat::Zero(inputs[i].rows(), inputs[i].cols());
      analytic.push_back(g);
    }
  }
  auto eval = [&](const std::vector<Mat>& xs) {
    ag::Tape tape;
    std::vector<ag::Var> leaves;
    for (const Mat& m : xs) leaves.push_back(tape.constant(m));
    return fn(tape, leaves).scalar();
  };
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  std::vector<Mat> xs = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    std::vector<Eigen::Index> idx;
    if (entries.empty() || entries[i].empty()) {
      for (Eigen::Index k = 0; k < inputs[i].size(); ++k) idx.push_back(k);
    } else {
      idx = entries[i];
    }
    for (Eigen::Index k : idx) {
      const double orig = xs[i].data()[k];
      xs[i].data()[k] = orig + h;
      const double fp = eval(xs);
      xs[i].data()[k] = orig - h;
      const double fm = eval(xs);
      xs[i].data()[k] = orig;
      const double numeric = (fp - fm) / (2 * h);
      const double a = analytic[i].data()[k];
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
    }
  }
  GradCheck r;
  r.analytic_norm = std::sqrt(a2);
  r.relative_error = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
  return r;
}

/// Small backbone on 8x8 frames used for gradient and unit checks.
inline BackboneConfig tiny_config() {
  BackboneConfig c;
  c.channels = 8;
  c.num_blocks = 1;
  c.num_heads = 2;
  c.ff_hidden = 16;
  c.context_K = 2;
  c.frame_height = 8;
  c.frame_width = 8;
  c.codec = {.patch = 2};
  return c;
}

/// Initial parameters plus Gaussian noise, so that no layer is zero.
inline ModelParams perturbed_params(const BackboneConfig& c, std::uint64_t seed, double scale = 0.3) {
  ModelParams p = init_params(c, seed);
  Rng rng(seed ^ 0xabcULL);
  for (NamedTensor& t : p.tensors) {
    for (Eigen::Index i = 0; i < t.value.size(); ++i) t.value.data()[i] += scale * rng.normal();
  }
  return p;
}

/// Relative error between the analytic gradient of a random linear read-out
/// of the backbone output and central differences, over the current latent,
/// one context latent and a seeded sample of entries of every parameter
/// tensor.
inline double backbone_gradient_error(std::uint64_t seed, int entries_per_tensor = 3) {
  const BackboneConfig c = tiny_config();
  const Backbone b(c);
  const ModelParams p = perturbed_params(c, seed);
  const int n = c.token_rows() * c.token_cols(), ch = b.codec().latent_channels();
  const Mat cur = random_image(n, 1, ch, seed + 100).pixels;
  const Mat ctx = random_image(n, 1, ch, seed + 200).pixels;
  const Mat w = random_image(n, 1, ch, seed + 300, -1.0, 1.0).pixels;

  auto eval = [&](const ModelParams& q, const Mat& x, const Mat& y, std::vector<Mat>* param_grads,
                  std::vector<Mat>* input_grads) {
    ag::Tape t;
    const bool grad = param_grads != nullptr;
    ParamBinding binding(t, q, grad);
    ag::Var xv = t.leaf(x, grad), yv = t.leaf(y, grad);
    std::vector<ag::Var> context{yv};
    ag::Var out = ag::sum(ag::mul(b.forward(binding, xv, context), t.constant(w)));
    if (grad) {
      t.backward(out);
      for (std::size_t i = 0; i < binding.vars().size(); ++i) {
        Mat g = binding.vars()[i].grad();
        if (g.size() == 0) g = Mat::Zero(q.tensors[i].value.rows(), q.tensors[i].value.cols());
        param_grads->push_back(g);
      }
      input_grads->push_back(xv.grad().size() ? xv.grad() : Mat(Mat::Zero(x.rows(), x.cols())));
      input_grads->push_back(yv.grad().size() ? yv.grad() : Mat(Mat::Zero(y.rows(), y.cols())));
    }
    return out.scalar();
  };
  std::vector<Mat> pg, ig;
  eval(p, cur, ctx, &pg, &ig);

  const double h = 1e-6;
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  auto accumulate = [&](double analytic, double numeric) {
    diff2 += (analytic - numeric) * (analytic - numeric);
    a2 += analytic * analytic;
    n2 += numeric * numeric;
  };
  Mat x = cur, y = ctx;
  for (int which = 0; which < 2; ++which) {
    Mat& m = which == 0 ? x : y;
    for (Eigen::Index k = 0; k < m.size(); ++k) {
      const double orig = m.data()[k];
      m.data()[k] = orig + h;
      const double fp = eval(p, x, y, nullptr, nullptr);
      m.data()[k] = orig - h;
      const double fm = eval(p, x, y, nullptr, nullptr);
      m.data()[k] = orig;
      accumulate(ig[which].data()[k], (fp - fm) / (2 * h));
    }
  }
  Rng pick(seed);
  ModelParams q = p;
  for (std::size_t i = 0; i < q.tensors.size(); ++i) {
    Mat& m = q.tensors[i].value;
    for (int e = 0; e < entries_per_tensor; ++e) {
      const Eigen::Index k = pick.uniform_int(0, static_cast<int>(m.size()) - 1);
      const double orig = m.data()[k];
      m.data()[k] = orig + h;
      const double fp = eval(q, cur, ctx, nullptr, nullptr);
      m.data()[k] = orig - h;
      const double fm = eval(q, cur, ctx, nullptr, nullptr);
      m.data()[k] = orig;
      accumulate(pg[i].data()[k], (fp - fm) / (2 * h));
    }
  }
  return std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
}

}  // namespace harmonizer::testing
