#include "harmonizer/render.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>

namespace harmonizer {

Vec3 Ground::albedo_at(double x, double y) const {
  if (albedo.size() == 1) return albedo.front();
  auto wrap = [](long v, int n) { return static_cast<int>(((v % n) + n) % n); };
  const int cx = wrap(static_cast<long>(std::floor(x / cell_size)), cells_x);
  const int cy = wrap(static_cast<long>(std::floor(y / cell_size)), cells_y);
  return albedo[static_cast<std::size_t>(cy) * cells_x + cx];
}

Vec3 Camera::forward() const { return Vec3(0.0, std::sin(tilt), -std::cos(tilt)); }
Vec3 Camera::right() const { return Vec3(1.0, 0.0, 0.0); }
Vec3 Camera::down() const { return Vec3(0.0, -std::cos(tilt), -std::sin(tilt)); }
Vec3 Camera::ground_shift(double du, double dv) const {
  return Vec3(du * pixel_size, -dv * pixel_size / std::cos(tilt), 0.0);
}

void SceneSpec::validate() const {
  if (frames < 1) throw InvalidArgument("SceneSpec: need at least one frame");
  if (camera.width <= 0 || camera.height <= 0 || !(camera.pixel_size > 0.0)) {
    throw InvalidArgument("SceneSpec: invalid camera");
  }
  if (!(camera.tilt >= 0.0 && camera.tilt < std::numbers::pi / 2)) throw InvalidArgument("SceneSpec: tilt out of range");
  if (std::abs(light.direction.norm() - 1.0) > 1e-9) throw InvalidArgument("SceneSpec: light direction not normalised");
  if (!(light.direction.z() > 0.0)) throw InvalidArgument("SceneSpec: light must be above the ground");
  if (!(light.softness >= 0.0) || !(light.intensity > 0.0) || !(ambient >= 0.0)) {
    throw InvalidArgument("SceneSpec: invalid light parameters");
  }
  if (ground.albedo.size() != 1 && ground.albedo.size() != static_cast<std::size_t>(ground.cells_x) * ground.cells_y) {
    throw InvalidArgument("SceneSpec: ground albedo grid size mismatch");
  }
  if (!offsets.empty()) {
    if (offsets.size() != static_cast<std::size_t>(frames)) throw InvalidArgument("SceneSpec: one offset row per frame");
    for (const auto& row : offsets) {
      if (row.size() != primitives.size()) throw InvalidArgument("SceneSpec: one offset per primitive");
    }
  }
  for (int t = 0; t < frames; ++t) {
    for (std::size_t i = 0; i < primitives.size(); ++i) {
      const Primitive& p = primitives[i];
      const double bottom = p.center.z() + offset(t, i).z() - (p.shape == Shape::sphere ? p.size.x() : p.size.z());
      if (bottom < -1e-9) throw InvalidArgument("SceneSpec: primitive below the ground plane");
      if (!(p.size.minCoeff() > 0.0) && p.shape == Shape::box) throw InvalidArgument("SceneSpec: box extents must be positive");
      if (p.shape == Shape::sphere && !(p.size.x() > 0.0)) throw InvalidArgument("SceneSpec: sphere radius must be positive");
    }
  }
}

Vec3 SceneSpec::offset(int frame, std::size_t primitive) const {
  if (offsets.empty()) return Vec3::Zero();
  return offsets[static_cast<std::size_t>(frame)][primitive];
}

std::vector<Vec3> penumbra_directions(const Light& light) {
  std::vector<Vec3> dirs;
  dirs.reserve(kPenumbraSamples);
  if (light.softness == 0.0) {
    dirs.assign(kPenumbraSamples, light.direction);
    return dirs;
  }
  const Vec3& l = light.direction;
  const Vec3 helper = std::abs(l.x()) < 0.9 ? Vec3(1, 0, 0) : Vec3(0, 1, 0);
  const Vec3 u = l.cross(helper).normalized();
  const Vec3 v = l.cross(u);
  // 4 rings x 4 azimuths, equal-area radii, alternate rings rotated by half a step.
  for (int ring = 0; ring < 4; ++ring) {
    const double radius = light.softness * std::sqrt((ring + 0.5) / 4.0);
    for (int j = 0; j < 4; ++j) {
      const double phi = 2.0 * std::numbers::pi * (j + 0.5 * (ring % 2)) / 4.0;
      dirs.push_back((std::cos(radius) * l + std::sin(radius) * (std::cos(phi) * u + std::sin(phi) * v)).normalized());
    }
  }
  return dirs;
}

Vec3 shade(const Vec3& albedo, const Vec3& normal, const Light& light, double visibility, double ambient) {
  const double ndl = std::max(0.0, normal.dot(light.direction));
  const double direct = light.intensity * ndl * visibility;
  return albedo * (ambient + direct);
}

double to_display(double linear) {
  const double c = linear < 0.0 ? 0.0 : (linear > 1.0 ? 1.0 : linear);
  return std::pow(c, 1.0 / 2.2);
}

Frame to_display(const Image& linear) {
  Frame f = linear;
  f.pixels = f.pixels.unaryExpr([](double v) { return to_display(v); });
  return f;
}

namespace {

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  int id = -1;  // -1 ground
  Vec3 normal{0, 0, 1};
};

std::optional<std::pair<double, Vec3>> intersect(const Primitive& p, const Vec3& center, const Vec3& o, const Vec3& d) {
  if (p.shape == Shape::sphere) {
    const double r = p.size.x();
    const Vec3 oc = o - center;
    const double b = oc.dot(d);
    const double c = oc.squaredNorm() - r * r;
    const double disc = b * b - c;
    if (disc < 0.0) return std::nullopt;
    const double s = std::sqrt(disc);
    double t = -b - s;
    if (t <= 1e-9) t = -b + s;
    if (t <= 1e-9) return std::nullopt;
    return std::make_pair(t, Vec3((o + t * d - center) / r));
  }
  double tmin = -std::numeric_limits<double>::infinity(), tmax = std::numeric_limits<double>::infinity();
  int axis = -1;
  double sign = 1.0;
  for (int a = 0; a < 3; ++a) {
    const double lo = center[a] - p.size[a], hi = center[a] + p.size[a];
    if (std::abs(d[a]) < 1e-15) {
      if (o[a] < lo || o[a] > hi) return std::nullopt;
      continue;
    }
    double t0 = (lo - o[a]) / d[a], t1 = (hi - o[a]) / d[a];
    double s = -1.0;
    if (t0 > t1) {
      std::swap(t0, t1);
      s = 1.0;
    }
    if (t0 > tmin) {
      tmin = t0;
      axis = a;
      sign = s;
    }
    tmax = std::min(tmax, t1);
  }
  if (tmin > tmax || tmin <= 1e-9 || axis < 0) return std::nullopt;
  Vec3 n = Vec3::Zero();
  n[axis] = sign;
  return std::make_pair(tmin, n);
}

double checker(const Vec3& local, double scale) {
  const long s = static_cast<long>(std::floor(local.x() / scale)) + static_cast<long>(std::floor(local.y() / scale)) +
                 static_cast<long>(std::floor(local.z() / scale));
  return (s % 2 + 2) % 2 == 0 ? 0.0 : 1.0;
}

double snap(double v) {
  const double r = std::round(v);
  return std::abs(v - r) < 1e-9 ? r : v;
}

}  // namespace

RenderResult render_scene(const SceneSpec& spec, bool shadows) {
  spec.validate();
  const Camera& cam = spec.camera;
  const int h = cam.height, w = cam.width;
  const Vec3 fwd = cam.forward(), right = cam.right(), down = cam.down();
  const double far = 1e3;
  const auto light_dirs = penumbra_directions(spec.light);

  RenderResult r;
  for (int t = 0; t < spec.frames; ++t) {
    std::vector<Vec3> centers;
    for (std::size_t i = 0; i < spec.primitives.size(); ++i) centers.push_back(spec.primitives[i].center + spec.offset(t, i));

    Image lin(h, w, 3), nrm(h, w, 3), alb(h, w, 3), vis(h, w, 1);
    Mask fg(h, w, 1);
    std::vector<int> ids(static_cast<std::size_t>(h) * w, -1);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const Vec3 o = cam.center + (x - w / 2.0 + 0.5) * cam.pixel_size * right +
                       (y - h / 2.0 + 0.5) * cam.pixel_size * down - far * fwd;
        Hit hit;
        hit.t = -o.z() / fwd.z();
        for (std::size_t i = 0; i < spec.primitives.size(); ++i) {
          if (auto is = intersect(spec.primitives[i], centers[i], o, fwd); is && is->first < hit.t) {
            hit.t = is->first;
            hit.id = static_cast<int>(i);
            hit.normal = is->second;
          }
        }
        const Vec3 p = o + hit.t * fwd;
        Vec3 albedo;
        if (hit.id < 0) {
          albedo = spec.ground.albedo_at(p.x(), p.y());
        } else {
          const Primitive& prim = spec.primitives[static_cast<std::size_t>(hit.id)];
          albedo = prim.albedo * (1.0 - prim.texture * checker(p - centers[static_cast<std::size_t>(hit.id)], prim.texture_scale));
        }
        double visibility = 1.0;
        if (shadows) {
          int blocked = 0;
          const Vec3 start = p + 1e-7 * hit.normal;
          for (const Vec3& ld : light_dirs) {
            for (std::size_t i = 0; i < spec.primitives.size(); ++i) {
              if (static_cast<int>(i) == hit.id) continue;
              if (intersect(spec.primitives[i], centers[i], start, ld)) {
                ++blocked;
                break;
              }
            }
          }
          visibility = 1.0 - static_cast<double>(blocked) / static_cast<double>(light_dirs.size());
        }
        const Vec3 c = shade(albedo, hit.normal, spec.light, visibility, spec.ambient);
        const int idx = y * w + x;
        ids[static_cast<std::size_t>(idx)] = hit.id;
        lin.pixels.row(idx) = c.transpose();
        nrm.pixels.row(idx) = hit.normal.transpose();
        alb.pixels.row(idx) = albedo.transpose();
        vis.pixels(idx, 0) = visibility;
        fg.pixels(idx, 0) = (hit.id >= 0 && spec.primitives[static_cast<std::size_t>(hit.id)].foreground) ? 1.0 : 0.0;
      }
    }
    r.frames.push_back(to_display(lin));
    r.linear.push_back(std::move(lin));
    r.normals.push_back(std::move(nrm));
    r.albedo.push_back(std::move(alb));
    r.visibility.push_back(std::move(vis));
    r.fg_mask.push_back(std::move(fg));
    r.object_id.push_back(std::move(ids));
  }

  for (int t = 1; t < spec.frames; ++t) {
    FlowField f(h, w);
    ValidityMask valid(h, w, false);
    const auto& ids = r.object_id[static_cast<std::size_t>(t)];
    const auto& prev_ids = r.object_id[static_cast<std::size_t>(t - 1)];
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const int idx = y * w + x;
        const int id = ids[static_cast<std::size_t>(idx)];
        double fx = 0.0, fy = 0.0;
        if (id >= 0) {
          const Vec3 delta = spec.offset(t, static_cast<std::size_t>(id)) - spec.offset(t - 1, static_cast<std::size_t>(id));
          fx = snap(-delta.dot(right) / cam.pixel_size);
          fy = snap(-delta.dot(down) / cam.pixel_size);
        }
        f.vectors(idx, 0) = fx;
        f.vectors(idx, 1) = fy;
        const long px = std::lround(x + fx), py = std::lround(y + fy);
        if (px < 0 || py < 0 || px >= w || py >= h) continue;
        const int pidx = static_cast<int>(py) * w + static_cast<int>(px);
        if (prev_ids[static_cast<std::size_t>(pidx)] != id) continue;
        if (r.visibility[static_cast<std::size_t>(t)].pixels(idx, 0) !=
            r.visibility[static_cast<std::size_t>(t - 1)].pixels(pidx, 0)) {
          continue;
        }
        valid.valid[static_cast<std::size_t>(idx)] = 1;
      }
    }
    r.flows.push_back(std::move(f));
    r.flow_valid.push_back(std::move(valid));
  }
  return r;
}

}  // namespace harmonizer
