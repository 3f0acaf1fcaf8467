#include "harmonizer/checkpoint.hpp"

#include <zlib.h>

#include <cmath>

namespace harmonizer {

std::string phase_name(Phase p) { return p == Phase::pretrain ? "pretrain" : "mixed"; }

Phase parse_phase(const std::string& s) {
  if (s == "pretrain") return Phase::pretrain;
  if (s == "mixed") return Phase::mixed;
  throw InvalidArgument("unknown training phase '" + s + "'");
}

namespace {

bool same_mats(const std::vector<Mat>& a, const std::vector<Mat>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].rows() != b[i].rows() || a[i].cols() != b[i].cols() || a[i] != b[i]) return false;
  }
  return true;
}

}  // namespace

bool AdamState::operator==(const AdamState& o) const { return t == o.t && same_mats(m, o.m) && same_mats(v, o.v); }

bool TrainState::operator==(const TrainState& o) const {
  return step == o.step && params == o.params && optimizer == o.optimizer && rng_state == o.rng_state &&
         phase == o.phase;
}

nlohmann::json backbone_config_to_json(const BackboneConfig& c) {
  return {{"channels", c.channels},         {"num_blocks", c.num_blocks},   {"num_heads", c.num_heads},
          {"ff_hidden", c.ff_hidden},       {"context_K", c.context_K},     {"frame_height", c.frame_height},
          {"frame_width", c.frame_width},   {"codec_patch", c.codec.patch}, {"codec_mixing_seed", c.codec.mixing_seed}};
}

BackboneConfig backbone_config_from_json(const nlohmann::json& j) {
  BackboneConfig c;
  c.channels = j.at("channels").get<int>();
  c.num_blocks = j.at("num_blocks").get<int>();
  c.num_heads = j.at("num_heads").get<int>();
  c.ff_hidden = j.at("ff_hidden").get<int>();
  c.context_K = j.at("context_K").get<int>();
  c.frame_height = j.at("frame_height").get<int>();
  c.frame_width = j.at("frame_width").get<int>();
  c.codec.patch = j.at("codec_patch").get<int>();
  c.codec.mixing_seed = j.at("codec_mixing_seed").get<std::uint64_t>();
  return c;
}

void round_to_f32(Mat& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(m.data()[i]);
}

void round_to_f32(ModelParams& p) {
  for (auto& t : p.tensors) round_to_f32(t.value);
}

namespace {

constexpr char kMagic[] = "HMCK";

void put_tensor(std::vector<std::uint8_t>& out, const std::string& name, const Mat& m) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  put_bytes(out, name);
  put_u32(out, static_cast<std::uint32_t>(m.rows()));
  put_u32(out, static_cast<std::uint32_t>(m.cols()));
  // Values are stored rounded to f32; training keeps parameters and moments
  // f32-representable so its checkpoints are lossless.
  for (Eigen::Index i = 0; i < m.size(); ++i) put_f32(out, static_cast<float>(m.data()[i]));
}

std::uint32_t crc(const std::uint8_t* data, std::size_t n) {
  return static_cast<std::uint32_t>(crc32(crc32(0L, Z_NULL, 0), data, static_cast<uInt>(n)));
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  const bool train = c.kind == CheckpointKind::train_state;
  nlohmann::json header{{"kind", train ? "train_state" : "model"},
                        {"config", backbone_config_to_json(c.config)},
                        {"params_version", c.state.params.version},
                        {"extra", c.extra}};
  if (train) {
    header["step"] = c.state.step;
    header["phase"] = phase_name(c.state.phase);
    header["rng"] = c.state.rng_state;
    header["adam_t"] = c.state.optimizer.t;
  }
  const std::string h = header.dump();
  std::vector<std::uint8_t> out;
  put_bytes(out, kMagic);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(h.size()));
  put_bytes(out, h);
  const auto& tensors = c.state.params.tensors;
  const std::size_t count = tensors.size() * (train ? 3 : 1);
  put_u32(out, static_cast<std::uint32_t>(count));
  for (const auto& t : tensors) put_tensor(out, t.name, t.value);
  if (train) {
    const auto& opt = c.state.optimizer;
    if (opt.m.size() != tensors.size() || opt.v.size() != tensors.size()) {
      throw InvalidArgument("encode_checkpoint: optimizer state does not match parameters");
    }
    for (std::size_t i = 0; i < tensors.size(); ++i) put_tensor(out, "adam.m/" + tensors[i].name, opt.m[i]);
    for (std::size_t i = 0; i < tensors.size(); ++i) put_tensor(out, "adam.v/" + tensors[i].name, opt.v[i]);
  }
  put_u32(out, crc(out.data(), out.size()));
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16) throw FormatError("checkpoint: file too short");
  const std::size_t body = bytes.size() - 4;
  {
    ByteReader tail(bytes);
    tail.str(body);
    if (tail.u32() != crc(bytes.data(), body)) throw FormatError("checkpoint: checksum mismatch (corrupted or truncated)");
  }
  ByteReader r(bytes);
  if (r.str(4) != kMagic) throw FormatError("checkpoint: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported format version " + std::to_string(version));
  }
  Checkpoint c;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.str(r.u32()));
    const std::string kind = header.at("kind").get<std::string>();
    if (kind != "model" && kind != "train_state") throw FormatError("checkpoint: unknown kind " + kind);
    c.kind = kind == "model" ? CheckpointKind::model : CheckpointKind::train_state;
    c.config = backbone_config_from_json(header.at("config"));
    c.config.validate();
    c.extra = header.value("extra", nlohmann::json::object());
    c.state.params.version = header.at("params_version").get<int>();
    if (c.kind == CheckpointKind::train_state) {
      c.state.step = header.at("step").get<long>();
      c.state.phase = parse_phase(header.at("phase").get<std::string>());
      c.state.rng_state = header.at("rng").get<std::string>();
      c.state.optimizer.t = header.at("adam_t").get<long>();
    }
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception& e) {
    throw FormatError(std::string("checkpoint: bad header: ") + e.what());
  }

  // Shapes must match a fresh initialisation of the stored configuration.
  const ModelParams reference = init_params(c.config, 0);
  const std::size_t n = reference.tensors.size();
  const bool train = c.kind == CheckpointKind::train_state;
  if (r.u32() != n * (train ? 3 : 1)) throw FormatError("checkpoint: tensor count does not match configuration");
  auto read_tensor = [&](const std::string& expected, const Mat& like) {
    const std::string name = r.str(r.u32());
    if (name != expected) throw FormatError("checkpoint: expected tensor " + expected + ", found " + name);
    const std::uint32_t rows = r.u32(), cols = r.u32();
    if (rows != like.rows() || cols != like.cols()) throw FormatError("checkpoint: shape mismatch for " + name);
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = r.f32();
    return m;
  };
  for (const auto& t : reference.tensors) c.state.params.tensors.push_back({t.name, read_tensor(t.name, t.value)});
  if (train) {
    for (const auto& t : reference.tensors) c.state.optimizer.m.push_back(read_tensor("adam.m/" + t.name, t.value));
    for (const auto& t : reference.tensors) c.state.optimizer.v.push_back(read_tensor("adam.v/" + t.name, t.value));
  }
  if (r.remaining() != 4) throw FormatError("checkpoint: trailing bytes");
  if (!c.state.params.all_finite()) throw FormatError("checkpoint: non-finite parameter");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  write_file_bytes(path, encode_checkpoint(c));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file_bytes(path)); }

}  // namespace harmonizer
