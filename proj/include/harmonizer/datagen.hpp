#pragma once

#include "harmonizer/flow.hpp"
#include "harmonizer/isp.hpp"
#include "harmonizer/render.hpp"
#include "harmonizer/rng.hpp"
#include "harmonizer/tensor.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace harmonizer {

enum class Stream { artifact, isp, relight, shadow, reinsert };
inline constexpr std::array<Stream, 5> kAllStreams{Stream::artifact, Stream::isp, Stream::relight, Stream::shadow,
                                                    Stream::reinsert};

std::string stream_name(Stream s);
/// Throws InvalidArgument for an unknown name.
Stream parse_stream(const std::string& name);

/// One supervised example: an image (T = 1) or a clip (T > 1).
struct PairedSample {
  Stream stream = Stream::artifact;
  std::vector<Frame> input;
  std::vector<Frame> target;
  /// Per-frame edit region: input and target agree exactly outside it.
  std::vector<Mask> masks;
  /// flows[t-1] = F_{t->t-1} of the target clip, with its validity.
  std::vector<FlowField> flows;
  std::vector<ValidityMask> flow_valid;
  bool temporal = false;
  nlohmann::json meta = nlohmann::json::object();

  int frames() const { return static_cast<int>(target.size()); }
  /// Checks the structural invariants; throws InvalidArgument.
  void validate() const;
};

// ---------------------------------------------------------------------------
// Novel-view artifact proxies.

enum class DegradeMode { blur, holes, ghost, spurious };
std::string degrade_mode_name(DegradeMode m);
DegradeMode parse_degrade_mode(const std::string& name);

struct DegradeOptions {
  double blur_sigma = 1.5;  // sigma 0 leaves the frame untouched
  int blur_factor = 2;      // down/up-sampling factor applied after the blur
  int hole_count = 3;
  int hole_min = 4;
  int hole_max = 12;
  double ghost_alpha = 0.5;
  int ghost_dx = 5;
  int ghost_dy = 0;
  int spurious_count = 2;
  int spurious_min = 6;
  int spurious_max = 14;
};

/// Corrupts a clean frame or clip. Holes and spurious patches are re-drawn per
/// frame from sub-seeds of `seed`; blur and ghost are identical for all frames.
PairedSample degrade(const std::vector<Frame>& target, DegradeMode mode, std::uint64_t seed,
                     const DegradeOptions& options = {});

// ---------------------------------------------------------------------------
// Harmonisation pairs.

/// Composite input = M * apply_isp(orig) + (1 - M) * orig with ISP parameters
/// drawn from `ranges`. For clips each frame uses a jitter of the base draw of
/// size `frame_jitter` (0 keeps the parameters fixed).
PairedSample make_isp_pair(const std::vector<Frame>& orig, const std::vector<Mask>& masks, std::uint64_t seed,
                           const IspRanges& ranges = {}, double frame_jitter = 0.0);

/// Per-pixel composite m * a + (1 - m) * b.
Frame composite(const Frame& a, const Frame& b, const Mask& m);

struct LightDelta {
  double yaw = 0.0;    // rotation of the light azimuth, radians
  double pitch = 0.0;  // change of elevation, radians
  double intensity_scale = 1.0;
};

LightDelta sample_light_delta(Rng& rng);
/// The light after applying `delta`. A zero rotation keeps the direction bit-exact.
Light perturb_light(const Light& light, const LightDelta& delta);

/// Linear-light re-shading of the foreground of frame `t` of `render` under the
/// perturbed light; background pixels keep their original linear value.
Image relight_linear(const RenderResult& render, const SceneSpec& spec, int t, const LightDelta& delta);
/// Image pair: input = display(relight_linear), target = the original frame.
PairedSample relight_fg(const RenderResult& render, const SceneSpec& spec, int t, const LightDelta& delta);

/// Shadow-free input, shadowed target; masks mark pixels touched by shadows.
PairedSample make_shadow_pair(const SceneSpec& spec);

/// Target: full render of `spec` (shadowed unless `target_shadows` is false).
/// Input: render of the background objects only, with the foreground sprite
/// of the target render composited on top after an independently sampled ISP.
/// Throws InvalidArgument when no frame shows any foreground.
PairedSample make_reinsert_pair(const SceneSpec& spec, std::uint64_t seed, bool target_shadows = true,
                                const IspRanges& ranges = {}, double frame_jitter = 0.0);
/// Overload with explicit ISP parameters per frame.
PairedSample make_reinsert_pair(const SceneSpec& spec, const std::vector<IspParams>& sprite_isp,
                                bool target_shadows = true);

// ---------------------------------------------------------------------------
// Scenes and datasets.

struct SceneRandomization {
  int width = 64;
  int height = 64;
  int min_foreground = 1;
  int max_foreground = 2;
  int max_background = 1;
  int max_speed = 2;  // pixels per frame, per axis
  double max_softness = 0.15;
};

/// Random scene drawn from fixed material palettes; foreground objects move by
/// whole-pixel steps so that flows are exact.
SceneSpec random_scene(Rng& rng, int frames, const SceneRandomization& r = {});

struct DatasetConfig {
  /// Samples per stream, in kAllStreams order.
  std::array<int, 5> counts{2, 2, 2, 2, 2};
  int width = 64;
  int height = 64;
  int clip_length = 5;
  /// Probability that a sample of a video-capable stream is a clip.
  double clip_fraction = 0.5;
  /// Per-frame ISP jitter for clips of the isp/reinsert streams.
  double isp_frame_jitter = 0.1;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Largest-remainder apportionment of `total` samples by `weights`.
std::array<int, 5> counts_from_proportions(int total, const std::array<double, 5>& weights);

struct ManifestRecord {
  std::string id;
  Stream stream = Stream::artifact;
  std::string path;  // relative to the manifest directory
  int frames = 1;
  bool temporal = false;
  bool operator==(const ManifestRecord&) const = default;
};

struct Manifest {
  std::filesystem::path root;
  std::vector<ManifestRecord> records;

  std::size_t count(Stream s) const;
  std::vector<std::size_t> select(bool temporal) const;
};

/// Deterministic sample `index` of `stream` for the given master seed.
PairedSample generate_sample(const DatasetConfig& config, Stream stream, int index);

/// Writes the dataset tree under `root` and returns the manifest, which is
/// also written to `root/manifest.jsonl`.
Manifest build_dataset(const DatasetConfig& config, const std::filesystem::path& root);

void write_sample(const PairedSample& sample, const std::filesystem::path& dir);
PairedSample read_sample(const std::filesystem::path& dir);

void write_manifest(const Manifest& manifest, const std::filesystem::path& path);
/// Throws FormatError on a malformed line.
Manifest read_manifest(const std::filesystem::path& path);
PairedSample load_sample(const Manifest& manifest, std::size_t index);

}  // namespace harmonizer
