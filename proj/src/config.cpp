#include "harmonizer/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>

namespace harmonizer {

void TrainConfig::validate() const {
  if (pretrain_steps < 0 || temporal_steps < 0) throw ConfigError("steps must be non-negative");
  if (batch_size <= 0 || temporal_batch_size <= 0) throw ConfigError("batch sizes must be positive");
  if (!(temporal_batch_fraction >= 0.0 && temporal_batch_fraction <= 1.0)) {
    throw ConfigError("temporal_batch_fraction must lie in [0, 1]");
  }
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (lr_warmup_steps < 0) throw ConfigError("lr_warmup_steps must be non-negative");
  if (!(lr_final_fraction >= 0.0 && lr_final_fraction <= 1.0)) throw ConfigError("lr_final_fraction must lie in [0, 1]");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(adam_eps > 0.0)) {
    throw ConfigError("invalid optimizer moments configuration");
  }
  if (clip_length < 0 || clip_length == 1) throw ConfigError("clip_length must be 0 (auto) or at least 2");
  if (checkpoint_interval < 0) throw ConfigError("checkpoint_interval must be non-negative");
  try {
    model.validate();
    loss.validate(model.frame_height, model.frame_width);
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
}

double TrainConfig::learning_rate_at(long step) const {
  double lr = learning_rate;
  if (lr_warmup_steps > 0 && step < lr_warmup_steps) lr *= static_cast<double>(step + 1) / lr_warmup_steps;
  const long total = pretrain_steps + temporal_steps;
  if (lr_cosine_decay && total > lr_warmup_steps && step >= lr_warmup_steps) {
    const double progress =
        std::min(1.0, static_cast<double>(step - lr_warmup_steps) / static_cast<double>(total - lr_warmup_steps));
    lr *= lr_final_fraction + (1.0 - lr_final_fraction) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  }
  return lr;
}

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("invalid value '" + v + "' for " + key);
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("invalid boolean '" + v + "' for " + key);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Field {
  const char* key;
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

#define HM_INT(KEY, MEMBER, TYPE)                                                               \
  Field {                                                                                       \
    KEY, [](TrainConfig& c, const std::string& v) { c.MEMBER = parse_number<TYPE>(KEY, v); }, \
        [](const TrainConfig& c) { return std::to_string(c.MEMBER); }                           \
  }
#define HM_REAL(KEY, MEMBER)                                                                      \
  Field {                                                                                         \
    KEY, [](TrainConfig& c, const std::string& v) { c.MEMBER = parse_number<double>(KEY, v); }, \
        [](const TrainConfig& c) { return fmt(c.MEMBER); }                                        \
  }
#define HM_BOOL(KEY, MEMBER)                                                              \
  Field {                                                                                 \
    KEY, [](TrainConfig& c, const std::string& v) { c.MEMBER = parse_bool(KEY, v); },   \
        [](const TrainConfig& c) { return std::string(c.MEMBER ? "true" : "false"); }   \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> f{
      HM_INT("pretrain_steps", pretrain_steps, long),
      HM_INT("temporal_steps", temporal_steps, long),
      HM_INT("batch_size", batch_size, int),
      HM_INT("temporal_batch_size", temporal_batch_size, int),
      HM_REAL("temporal_batch_fraction", temporal_batch_fraction),
      HM_BOOL("strict_alternation", strict_alternation),
      HM_REAL("learning_rate", learning_rate),
      HM_INT("lr_warmup_steps", lr_warmup_steps, long),
      HM_BOOL("lr_cosine_decay", lr_cosine_decay),
      HM_REAL("lr_final_fraction", lr_final_fraction),
      HM_REAL("weight_decay", weight_decay),
      HM_REAL("beta1", beta1),
      HM_REAL("beta2", beta2),
      HM_REAL("adam_eps", adam_eps),
      HM_INT("seed", seed, std::uint64_t),
      HM_INT("init_seed", init_seed, std::uint64_t),
      HM_INT("clip_length", clip_length, int),
      HM_INT("checkpoint_interval", checkpoint_interval, long),
      HM_BOOL("detach_context", detach_context),
      HM_BOOL("disable_context", disable_context),
      HM_REAL("lambda_l2", loss.lambda_l2),
      HM_REAL("lambda_perc", loss.lambda_perc),
      HM_REAL("lambda_temp", loss.lambda_temp),
      HM_INT("patch_min", loss.patch_min, int),
      HM_INT("patch_max", loss.patch_max, int),
      HM_INT("patches_per_step", loss.patches_per_step, int),
      HM_BOOL("normalize_features", loss.normalize_features),
      Field{"layer_weights",
            [](TrainConfig& c, const std::string& v) {
              c.loss.layer_weights.clear();
              std::stringstream ss(v);
              std::string item;
              while (std::getline(ss, item, ',')) {
                const auto b = item.find_first_not_of(' '), e = item.find_last_not_of(' ');
                if (b == std::string::npos) continue;
                c.loss.layer_weights.push_back(parse_number<double>("layer_weights", item.substr(b, e - b + 1)));
              }
            },
            [](const TrainConfig& c) {
              std::string s;
              for (std::size_t i = 0; i < c.loss.layer_weights.size(); ++i) {
                s += (i ? "," : "") + fmt(c.loss.layer_weights[i]);
              }
              return s;
            }},
      HM_INT("channels", model.channels, int),
      HM_INT("num_blocks", model.num_blocks, int),
      HM_INT("num_heads", model.num_heads, int),
      HM_INT("ff_hidden", model.ff_hidden, int),
      HM_INT("context_K", model.context_K, int),
      HM_INT("frame_height", model.frame_height, int),
      HM_INT("frame_width", model.frame_width, int),
      HM_INT("codec_patch", model.codec.patch, int),
      HM_INT("codec_mixing_seed", model.codec.mixing_seed, std::uint64_t),
  };
  return f;
}

#undef HM_INT
#undef HM_REAL
#undef HM_BOOL

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace

TrainConfig parse_train_config(const std::string& text, TrainConfig c) {
  std::stringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    bool found = false;
    for (const Field& f : fields()) {
      if (key == f.key) {
        f.set(c, value);
        found = true;
        break;
      }
    }
    if (!found) throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_train_config(ss.str(), std::move(base));
}

std::string format_train_config(const TrainConfig& c) {
  std::string out;
  for (const Field& f : fields()) out += std::string(f.key) + " = " + f.get(c) + "\n";
  return out;
}

}  // namespace harmonizer
