#include "harmonizer/backbone.hpp"

#include "harmonizer/rng.hpp"

#include <cmath>

namespace harmonizer {

void BackboneConfig::validate() const {
  if (channels <= 0 || num_blocks <= 0 || num_heads <= 0 || ff_hidden <= 0) {
    throw InvalidArgument("BackboneConfig: widths and counts must be positive");
  }
  if (channels % num_heads != 0) throw InvalidArgument("BackboneConfig: channels must be divisible by num_heads");
  if (context_K < 0) throw InvalidArgument("BackboneConfig: context_K must be non-negative");
  if (codec.patch <= 0 || frame_height < codec.patch || frame_width < codec.patch ||
      frame_height % codec.patch != 0 || frame_width % codec.patch != 0) {
    throw InvalidArgument("BackboneConfig: frame size must be a positive multiple of the patch size");
  }
}

const Mat& ModelParams::at(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.value;
  }
  throw ParameterError("ModelParams: no tensor named " + name);
}

Mat& ModelParams::at(const std::string& name) {
  return const_cast<Mat&>(static_cast<const ModelParams&>(*this).at(name));
}

bool ModelParams::contains(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return true;
  }
  return false;
}

std::size_t ModelParams::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += static_cast<std::size_t>(t.value.size());
  return n;
}

bool ModelParams::all_finite() const {
  for (const auto& t : tensors) {
    if (!t.value.allFinite()) return false;
  }
  return true;
}

bool ModelParams::operator==(const ModelParams& o) const {
  if (version != o.version || tensors.size() != o.tensors.size()) return false;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& a = tensors[i];
    const auto& b = o.tensors[i];
    if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols() ||
        a.value != b.value) {
      return false;
    }
  }
  return true;
}

ParamBinding::ParamBinding(ag::Tape& tape, const ModelParams& params, bool requires_grad) : tape_(&tape) {
  vars_.reserve(params.tensors.size());
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    const auto& t = params.tensors[i];
    if (!index_.emplace(t.name, i).second) throw ParameterError("ModelParams: duplicate tensor name " + t.name);
    vars_.push_back(tape.leaf(t.value, requires_grad));
  }
}

ag::Var ParamBinding::operator[](const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ParameterError("ParamBinding: no tensor named " + name);
  return vars_[it->second];
}

namespace {

std::string block_name(int b, const char* leaf) { return "block" + std::to_string(b) + "." + leaf; }

Mat gaussian(Rng& rng, int rows, int cols, double stddev) {
  Mat m(rows, cols);
  // Values are single-precision representable so checkpoints store them exactly.
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(stddev * rng.normal());
  return m;
}

}  // namespace

ModelParams init_params(const BackboneConfig& config, std::uint64_t seed) {
  config.validate();
  const int d = config.channels;
  const int c = 3 * config.codec.patch * config.codec.patch;
  const int n = config.token_rows() * config.token_cols();
  const int f = config.ff_hidden;
  const double resid = 1.0 / std::sqrt(2.0 * config.num_blocks);
  Rng rng(seed);
  ModelParams p;
  auto add = [&p](std::string name, Mat m) { p.tensors.push_back({std::move(name), std::move(m)}); };
  auto ones = [](int cols) { return Mat(Mat::Ones(1, cols)); };
  auto zeros = [](int rows, int cols) { return Mat(Mat::Zero(rows, cols)); };

  add("embed.w", gaussian(rng, c, d, 1.0 / std::sqrt(c)));
  add("embed.b", zeros(1, d));
  add("embed.pos", gaussian(rng, n, d, 0.1));
  add("embed.time", gaussian(rng, config.context_K + 1, d, 0.1));
  for (int b = 0; b < config.num_blocks; ++b) {
    add(block_name(b, "ln1.g"), ones(d));
    add(block_name(b, "ln1.b"), zeros(1, d));
    add(block_name(b, "spatial.qkv.w"), gaussian(rng, d, 3 * d, 1.0 / std::sqrt(d)));
    add(block_name(b, "spatial.qkv.b"), zeros(1, 3 * d));
    add(block_name(b, "spatial.out.w"), gaussian(rng, d, d, resid / std::sqrt(d)));
    add(block_name(b, "spatial.out.b"), zeros(1, d));
    add(block_name(b, "ln2.g"), ones(d));
    add(block_name(b, "ln2.b"), zeros(1, d));
    add(block_name(b, "temporal.q.w"), gaussian(rng, d, d, 1.0 / std::sqrt(d)));
    add(block_name(b, "temporal.kv.w"), gaussian(rng, d, 2 * d, 1.0 / std::sqrt(d)));
    add(block_name(b, "temporal.out.w"), gaussian(rng, d, d, resid / std::sqrt(d)));
    add(block_name(b, "temporal.out.b"), zeros(1, d));
    add(block_name(b, "ln3.g"), ones(d));
    add(block_name(b, "ln3.b"), zeros(1, d));
    add(block_name(b, "ff.w1"), gaussian(rng, d, f, 1.0 / std::sqrt(d)));
    add(block_name(b, "ff.b1"), zeros(1, f));
    add(block_name(b, "ff.w2"), gaussian(rng, f, d, resid / std::sqrt(f)));
    add(block_name(b, "ff.b2"), zeros(1, d));
  }
  add("head.ln.g", ones(d));
  add("head.ln.b", zeros(1, d));
  // Zero output projection: the network starts as the identity map.
  add("head.w", zeros(d, c));
  add("head.b", zeros(1, c));
  return p;
}

Backbone::Backbone(BackboneConfig config) : config_(config), codec_(config.codec) { config_.validate(); }

void Backbone::check_params(const ModelParams& params) const {
  if (!params.all_finite()) throw ParameterError("backbone: non-finite parameter");
  const Mat& time = params.at("embed.time");
  if (time.rows() != config_.context_K + 1 || time.cols() != config_.channels) {
    throw ParameterError("backbone: parameters do not match configuration");
  }
  if (params.at("embed.pos").rows() != static_cast<Eigen::Index>(config_.token_rows()) * config_.token_cols()) {
    throw ParameterError("backbone: positional table does not match frame size");
  }
}

ag::Var Backbone::forward(const ParamBinding& p, ag::Var current, std::span<const ag::Var> context) const {
  const int n = config_.token_rows() * config_.token_cols();
  if (current.rows() != n || current.cols() != codec_.latent_channels()) {
    throw DimensionError("backbone: current latent shape mismatch");
  }
  if (static_cast<int>(context.size()) > config_.context_K) {
    throw ContextError("backbone: context longer than K=" + std::to_string(config_.context_K));
  }
  for (const ag::Var& z : context) {
    if (z.rows() != current.rows() || z.cols() != current.cols()) {
      throw ContextError("backbone: context latent shape differs from current latent");
    }
  }
  auto time_row = [&](int slot) {
    // Slicing the table is itself an op so gradients reach embed.time.
    std::vector<int> idx(static_cast<std::size_t>(config_.channels));
    for (int j = 0; j < config_.channels; ++j) idx[j] = slot * config_.channels + j;
    return ag::gather(p["embed.time"], idx, 1, config_.channels);
  };
  auto embed = [&](ag::Var z, int slot) {
    ag::Var h = ag::add_row(ag::matmul(z, p["embed.w"]), p["embed.b"]);
    h = ag::add(h, p["embed.pos"]);
    return ag::add_row(h, time_row(slot));
  };

  ag::Var h = embed(current, 0);
  std::vector<ag::Var> ctx_h;
  ctx_h.reserve(context.size());
  for (std::size_t j = 0; j < context.size(); ++j) ctx_h.push_back(embed(context[j], static_cast<int>(j) + 1));

  for (int b = 0; b < config_.num_blocks; ++b) {
    auto w = [&](const char* leaf) { return p[block_name(b, leaf)]; };
    ag::Var a = ag::layer_norm(h, w("ln1.g"), w("ln1.b"));
    ag::Var qkv = ag::add_row(ag::matmul(a, w("spatial.qkv.w")), w("spatial.qkv.b"));
    ag::Var sa = ag::self_attention(qkv, config_.num_heads);
    h = ag::add(h, ag::add_row(ag::matmul(sa, w("spatial.out.w")), w("spatial.out.b")));

    ag::Var t = ag::layer_norm(h, w("ln2.g"), w("ln2.b"));
    ag::Var q = ag::matmul(t, w("temporal.q.w"));
    std::vector<ag::Var> kv;
    kv.reserve(ctx_h.size() + 1);
    kv.push_back(ag::matmul(t, w("temporal.kv.w")));
    for (const ag::Var& hc : ctx_h) {
      kv.push_back(ag::matmul(ag::layer_norm(hc, w("ln2.g"), w("ln2.b")), w("temporal.kv.w")));
    }
    ag::Var ta = ag::frame_attention(q, kv, config_.num_heads);
    h = ag::add(h, ag::add_row(ag::matmul(ta, w("temporal.out.w")), w("temporal.out.b")));

    ag::Var u = ag::layer_norm(h, w("ln3.g"), w("ln3.b"));
    ag::Var ff = ag::gelu(ag::add_row(ag::matmul(u, w("ff.w1")), w("ff.b1")));
    h = ag::add(h, ag::add_row(ag::matmul(ff, w("ff.w2")), w("ff.b2")));
  }
  ag::Var out = ag::layer_norm(h, p["head.ln.g"], p["head.ln.b"]);
  out = ag::add_row(ag::matmul(out, p["head.w"]), p["head.b"]);
  return ag::add(current, out);
}

void Backbone::check_latent(const LatentGrid& z) const {
  if (z.height != config_.token_rows() || z.width != config_.token_cols() ||
      z.channels() != codec_.latent_channels() || z.values.rows() != static_cast<Eigen::Index>(z.height) * z.width) {
    throw DimensionError("backbone: latent grid does not match configuration");
  }
}

LatentGrid Backbone::forward(const LatentGrid& current, const TemporalContext& context, const ModelParams& params) const {
  check_params(params);
  check_latent(current);
  if (static_cast<int>(context.size()) > config_.context_K) {
    throw ContextError("backbone: context longer than K=" + std::to_string(config_.context_K));
  }
  if (context.timestamps.size() != context.entries.size() && !context.timestamps.empty()) {
    throw ContextError("backbone: context timestamps do not match entries");
  }
  for (std::size_t i = 1; i < context.timestamps.size(); ++i) {
    if (context.timestamps[i] >= context.timestamps[i - 1]) throw ContextError("backbone: context timestamps must decrease");
  }
  ag::Tape tape;
  ParamBinding bound(tape, params, false);
  std::vector<ag::Var> ctx;
  for (const auto& e : context.entries) {
    if (e.height != current.height || e.width != current.width || e.channels() != current.channels()) {
      throw ContextError("backbone: context latent shape differs from current latent");
    }
    ctx.push_back(tape.constant(e.values));
  }
  ag::Var out = forward(bound, tape.constant(current.values), ctx);
  return LatentGrid{current.height, current.width, out.value()};
}

Image Backbone::enhance_frame_unclamped(const Frame& frame, const TemporalContext& context, const ModelParams& params) const {
  validate_frame(frame);
  if (frame.height != config_.frame_height || frame.width != config_.frame_width) {
    throw DimensionError("enhance_frame: frame size does not match model configuration");
  }
  return codec_.decode(forward(codec_.encode(frame), context, params));
}

Frame Backbone::enhance_frame(const Frame& frame, const TemporalContext& context, const ModelParams& params) const {
  Image out = enhance_frame_unclamped(frame, context, params);
  out.pixels = out.pixels.cwiseMax(0.0).cwiseMin(1.0);
  return out;
}

}  // namespace harmonizer
