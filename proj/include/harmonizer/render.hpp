#pragma once

#include "harmonizer/flow.hpp"
#include "harmonizer/tensor.hpp"

#include <Eigen/Dense>

#include <vector>

namespace harmonizer {

using Vec3 = Eigen::Vector3d;

enum class Shape { sphere, box };

struct Primitive {
  Shape shape = Shape::sphere;
  Vec3 center{0, 0, 1};
  /// Sphere: radius in x. Box: half extents.
  Vec3 size{1, 1, 1};
  Vec3 albedo{0.5, 0.5, 0.5};
  /// Contrast of an object-space checker pattern in [0, 1).
  double texture = 0.0;
  double texture_scale = 0.5;
  /// Foreground objects are masked; background objects are part of the set.
  bool foreground = true;
};

struct Ground {
  int cells_x = 8;
  int cells_y = 8;
  double cell_size = 1.0;
  std::vector<Vec3> albedo{Vec3(0.5, 0.5, 0.5)};  // cells_x * cells_y entries, or one

  Vec3 albedo_at(double x, double y) const;
};

struct Light {
  Vec3 direction{0, 0, 1};  // unit vector pointing towards the light
  double softness = 0.0;    // angular radius in radians
  double intensity = 1.0;
};

/// Orthographic camera looking down at the ground, tilted by `tilt` radians
/// from vertical towards +y. `center` projects to the image centre.
struct Camera {
  int width = 64;
  int height = 64;
  double pixel_size = 0.1;
  double tilt = 0.5;
  Vec3 center{0, 0, 0};

  Vec3 forward() const;
  Vec3 right() const;
  Vec3 down() const;
  /// World displacement parallel to the ground that moves a point by
  /// (du, dv) pixels in the image.
  Vec3 ground_shift(double du, double dv) const;
};

struct SceneSpec {
  Ground ground;
  std::vector<Primitive> primitives;
  Light light;
  double ambient = 0.2;
  Camera camera;
  int frames = 1;
  /// offsets[t][i]: translation of primitive i at frame t. Empty means static.
  std::vector<std::vector<Vec3>> offsets;

  void validate() const;
  Vec3 offset(int frame, std::size_t primitive) const;
};

/// Per-frame render output. Linear buffers are pre-clamp radiance; `frames`
/// are display-referred (clamp, then gamma 1/2.2).
struct RenderResult {
  std::vector<Image> linear;
  std::vector<Frame> frames;
  std::vector<Mask> fg_mask;
  std::vector<std::vector<int>> object_id;  // -1 ground, else primitive index
  std::vector<Image> normals;
  std::vector<Image> albedo;
  std::vector<Image> visibility;  // light visibility in [0, 1]
  /// flows[t-1] = F_{t->t-1} for t = 1..T-1, exact for the rigid animation.
  std::vector<FlowField> flows;
  /// Pixels whose flow correspondence is unoccluded and photometrically exact.
  std::vector<ValidityMask> flow_valid;
};

/// Number of stratified light samples used for soft shadows.
inline constexpr int kPenumbraSamples = 16;

/// Unit directions inside the light cone (all equal for softness 0).
std::vector<Vec3> penumbra_directions(const Light& light);

/// Linear shading: albedo * (ambient + intensity * max(0, n.l) * visibility).
Vec3 shade(const Vec3& albedo, const Vec3& normal, const Light& light, double visibility, double ambient);

/// Display transfer: clamp to [0, 1] then v^(1/2.2).
double to_display(double linear);
Frame to_display(const Image& linear);

RenderResult render_scene(const SceneSpec& spec, bool shadows);

}  // namespace harmonizer
