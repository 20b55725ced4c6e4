// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mx2m/geom.hpp"
#include "mx2m/rng.hpp"
#include "mx2m/tensor.hpp"

namespace mx2m {

enum class Domain : uint8_t { Source = 0, Target = 1 };

// One paired 2D/3D sample. The image stays in raw [0,1] space; per-channel
// normalization constants live in the dataset header and are applied at load.
struct Scene {
  uint32_t id = 0;
  Tensor image;                  // H x W x 3
  Tensor points;                 // N x 3, camera frame, meters
  Tensor intensity;              // N x 1
  std::vector<uint16_t> labels;  // N, class ids in [0, C)
  Camera camera;
  Domain domain = Domain::Source;

  int n_points() const { return points.ndim() == 2 ? points.rows() : 0; }

  void validate(int n_classes) const {
    if (image.ndim() != 3 || image.dim(2) != 3)
      throw ShapeError("scene image must be H x W x 3");
    for (double v : image.data)
      if (v < 0.0 || v > 1.0) throw NumericError("scene image values must lie in [0,1]");
    if (static_cast<size_t>(n_points()) != labels.size())
      throw ShapeError("scene label count does not match points");
    for (uint16_t l : labels)
      if (l >= n_classes) throw UsageError("scene label out of range");
    if (!project_points(points, camera).all_valid())
      throw UsageError("scene contains points that do not project into the image");
  }
};

struct GenParams {
  int width = 64;
  int height = 64;
  int n_points = 256;
  int n_classes = 4;  // class 0 is the ground plane
  double focal = 64.0;
  double ground_y = 1.0;  // camera sits this far above the ground
  double z_near = 2.5;
  double z_far = 7.0;
  int extra_objects = 2;  // beyond the one object placed per non-ground class
  int max_layout_retries = 32;

  void validate() const {
    if (n_classes < 2) throw UsageError("scene generation needs at least 2 classes");
    if (n_points < 16) throw UsageError("scene generation needs at least 16 points");
    if (width <= 0 || height <= 0 || focal <= 0) throw UsageError("bad image geometry");
    if (z_far <= z_near || z_near <= 0) throw UsageError("bad depth range");
  }
};

// Source -> target perturbation knobs. class_prior_skew (empty = uniform)
// scales the dropout probability per class.
struct ShiftParams {
  double brightness_delta = 0.0;
  double hue_rotation = 0.0;  // radians around the gray axis
  double point_noise_sigma = 0.0;
  double point_dropout = 0.0;
  std::vector<double> class_prior_skew;

  void validate() const {
    if (point_dropout < 0.0 || point_dropout >= 1.0)
      throw UsageError("point dropout must lie in [0, 1)");
    if (point_noise_sigma < 0.0) throw UsageError("point noise sigma must be >= 0");
    for (double w : class_prior_skew)
      if (w < 0.0) throw UsageError("class prior skew weights must be >= 0");
  }
};

namespace scenegen {

constexpr uint8_t kSkyId = 255;

struct Object {
  int shape = 0;  // 0 sphere, 1 cube, 2 pillar
  int class_id = 0;
  std::array<double, 3> center{};
  std::array<double, 3> half{};  // sphere radius in half[0]
};

inline std::array<double, 3> class_color(int class_id) {
  static const std::array<double, 3> palette[] = {
      {0.36, 0.42, 0.32},  // ground
      {0.80, 0.25, 0.20}, {0.20, 0.35, 0.80}, {0.85, 0.75, 0.20}, {0.70, 0.20, 0.70},
      {0.20, 0.70, 0.70}, {0.90, 0.55, 0.15}, {0.30, 0.75, 0.35}, {0.55, 0.35, 0.20},
  };
  constexpr int n = static_cast<int>(std::size(palette));
  return palette[class_id < n ? class_id : 1 + (class_id - 1) % (n - 1)];
}

inline double class_base_intensity(int class_id, int n_classes) {
  if (n_classes <= 1) return 0.8;
  return 0.9 - 0.6 * static_cast<double>(class_id) / static_cast<double>(n_classes - 1);
}

inline std::array<double, 3> light_dir() {
  const double n = std::sqrt(0.3 * 0.3 + 0.85 * 0.85 + 0.4 * 0.4);
  return {0.3 / n, -0.85 / n, 0.4 / n};
}

struct Hit {
  double t = 0;
  int object = -1;  // index into objects, -2 for ground
  std::array<double, 3> normal{};
};

inline bool hit_sphere(const std::array<double, 3>& d, const Object& o, Hit& h) {
  const double r = o.half[0];
  const double a = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
  const double b = -2.0 * (o.center[0] * d[0] + o.center[1] * d[1] + o.center[2] * d[2]);
  const double c = o.center[0] * o.center[0] + o.center[1] * o.center[1] +
                   o.center[2] * o.center[2] - r * r;
  const double disc = b * b - 4.0 * a * c;
  if (disc < 0) return false;
  const double t = (-b - std::sqrt(disc)) / (2.0 * a);
  if (t <= 1e-6) return false;
  h.t = t;
  for (int i = 0; i < 3; ++i) h.normal[i] = (t * d[i] - o.center[i]) / r;
  return true;
}

inline bool hit_box(const std::array<double, 3>& d, const Object& o, Hit& h) {
  double tmin = -1e30, tmax = 1e30;
  int axis = -1;
  for (int i = 0; i < 3; ++i) {
    const double lo = o.center[i] - o.half[i], hi = o.center[i] + o.half[i];
    if (std::fabs(d[i]) < 1e-12) {
      if (0.0 < lo || 0.0 > hi) return false;  // ray origin at 0
      continue;
    }
    double t0 = lo / d[i], t1 = hi / d[i];
    if (t0 > t1) std::swap(t0, t1);
    if (t0 > tmin) {
      tmin = t0;
      axis = i;
    }
    if (t1 < tmax) tmax = t1;
    if (tmin > tmax) return false;
  }
  if (tmin <= 1e-6 || axis < 0) return false;
  h.t = tmin;
  h.normal = {0, 0, 0};
  h.normal[static_cast<size_t>(axis)] = d[static_cast<size_t>(axis)] > 0 ? -1.0 : 1.0;
  return true;
}

inline bool hit_object(const std::array<double, 3>& d, const Object& o, Hit& h) {
  return o.shape == 0 ? hit_sphere(d, o, h) : hit_box(d, o, h);
}

// Nearest intersection along the pixel-center ray; ground is object -2.
inline Hit cast_ray(const std::array<double, 3>& d, const std::vector<Object>& objects,
                    double ground_y) {
  Hit best;
  best.t = 1e30;
  if (d[1] > 1e-9) {
    const double t = ground_y / d[1];
    if (t > 1e-6 && t * d[2] < 60.0) {
      best.t = t;
      best.object = -2;
      best.normal = {0, -1, 0};
    }
  }
  for (size_t i = 0; i < objects.size(); ++i) {
    Hit h;
    if (hit_object(d, objects[i], h) && h.t < best.t) {
      best = h;
      best.object = static_cast<int>(i);
    }
  }
  return best;
}

inline double shade(const std::array<double, 3>& normal) {
  const auto l = light_dir();
  const double ndl = normal[0] * l[0] + normal[1] * l[1] + normal[2] * l[2];
  return 0.45 + 0.55 * (ndl > 0 ? ndl : 0);
}

// Uniform point on the object surface plus its normal.
inline std::array<double, 3> sample_surface(Rng& rng, const Object& o,
                                            std::array<double, 3>& normal) {
  if (o.shape == 0) {
    double n[3];
    double len = 0;
    do {
      for (double& v : n) v = rng.normal();
      len = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
    } while (len < 1e-9);
    normal = {n[0] / len, n[1] / len, n[2] / len};
    return {o.center[0] + o.half[0] * normal[0], o.center[1] + o.half[0] * normal[1],
            o.center[2] + o.half[0] * normal[2]};
  }
  // box: pick a face with probability proportional to its area
  const double ax = o.half[1] * o.half[2], ay = o.half[0] * o.half[2], az = o.half[0] * o.half[1];
  const std::array<double, 6> areas{ax, ax, ay, ay, az, az};
  const int face = rng.categorical(areas);
  const int axis = face / 2;
  const double sign = face % 2 == 0 ? 1.0 : -1.0;
  std::array<double, 3> p = o.center;
  p[static_cast<size_t>(axis)] += sign * o.half[static_cast<size_t>(axis)];
  for (int i = 0; i < 3; ++i)
    if (i != axis) p[static_cast<size_t>(i)] += rng.uniform(-1.0, 1.0) * o.half[static_cast<size_t>(i)];
  normal = {0, 0, 0};
  normal[static_cast<size_t>(axis)] = sign;
  return p;
}

}  // namespace scenegen

// A ground plane plus one object per non-ground class (and a few extras),
// ray-cast into the image with depth ordering. Points are sampled on the
// surfaces and kept only when the pixel they project to renders their own
// object, which makes point labels and rendered pixel classes consistent by
// construction.
inline Scene generate_scene(Rng& rng, const GenParams& params, uint32_t id = 0) {
  using namespace scenegen;
  params.validate();

  Camera cam;
  cam.fx = cam.fy = params.focal;
  cam.cx = (params.width - 1) / 2.0;
  cam.cy = (params.height - 1) / 2.0;
  cam.width = params.width;
  cam.height = params.height;

  for (int attempt = 0; attempt <= params.max_layout_retries; ++attempt) {
    // --- layout ---------------------------------------------------------
    std::vector<Object> objects;
    const int n_object_classes = params.n_classes - 1;
    const int n_extra = params.extra_objects > 0 ? rng.uniform_int(params.extra_objects + 1) : 0;
    bool layout_ok = true;
    for (int k = 0; k < n_object_classes + n_extra && layout_ok; ++k) {
      Object o;
      o.class_id = k < n_object_classes ? k + 1 : 1 + rng.uniform_int(n_object_classes);
      o.shape = (o.class_id - 1) % 3;
      bool placed = false;
      for (int t = 0; t < 40 && !placed; ++t) {
        const double size = rng.uniform(0.28, 0.45);
        if (o.shape == 0) {
          o.half = {size, size, size};
        } else if (o.shape == 1) {
          o.half = {size, size, size};
        } else {
          o.half = {size * 0.5, size * 1.5, size * 0.5};
        }
        const double z = rng.uniform(params.z_near + 0.4, params.z_far - 0.6);
        const double max_x = 0.40 * z - std::max({o.half[0], o.half[2]});
        if (max_x <= 0.05) continue;
        const double x = rng.uniform(-max_x, max_x);
        o.center = {x, params.ground_y - o.half[1], z};
        bool clash = false;
        for (const Object& other : objects) {
          const double dx = o.center[0] - other.center[0];
          const double dz = o.center[2] - other.center[2];
          const double min_sep = std::max(o.half[0], o.half[2]) +
                                 std::max(other.half[0], other.half[2]) + 0.10;
          if (dx * dx + dz * dz < min_sep * min_sep) {
            clash = true;
            break;
          }
        }
        if (!clash) placed = true;
      }
      if (!placed) layout_ok = false;
      objects.push_back(o);
    }
    if (!layout_ok) continue;

    // --- render -----------------------------------------------------------
    const int w = params.width, h = params.height;
    Tensor image(Shape{h, w, 3});
    std::vector<uint8_t> pixel_class(static_cast<size_t>(w) * h, kSkyId);
    std::vector<int> pixel_object(static_cast<size_t>(w) * h, -3);

    std::vector<std::array<double, 3>> tint(static_cast<size_t>(params.n_classes));
    for (auto& t : tint)
      for (double& v : t) v = 1.0 + 0.08 * (rng.uniform() - 0.5);

    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::array<double, 3> d{(x - cam.cx) / cam.fx, (y - cam.cy) / cam.fy, 1.0};
        const Hit hit = cast_ray(d, objects, params.ground_y);
        const size_t pix = static_cast<size_t>(y) * w + x;
        std::array<double, 3> rgb;
        if (hit.object == -3) {
          const double s = static_cast<double>(y) / h;
          rgb = {0.55 + 0.20 * s, 0.66 + 0.16 * s, 0.85 + 0.08 * s};
        } else {
          const int cls = hit.object == -2 ? 0 : objects[static_cast<size_t>(hit.object)].class_id;
          const auto base = class_color(cls);
          const double s = shade(hit.normal);
          for (int c = 0; c < 3; ++c) rgb[static_cast<size_t>(c)] = base[static_cast<size_t>(c)] * s * tint[static_cast<size_t>(cls)][static_cast<size_t>(c)];
          pixel_class[pix] = static_cast<uint8_t>(cls);
          pixel_object[pix] = hit.object;
        }
        for (int c = 0; c < 3; ++c) {
          double v = rgb[static_cast<size_t>(c)] + 0.01 * rng.normal();
          image.data[pix * 3 + c] = v < 0 ? 0 : (v > 1 ? 1 : v);
        }
      }
    }

    // --- point quotas -----------------------------------------------------
    const int n_obj = static_cast<int>(objects.size());
    const int ground_quota = params.n_points * 3 / 10;
    std::vector<int> quota(static_cast<size_t>(n_obj) + 1, 0);
    quota[0] = ground_quota;
    int rest = params.n_points - ground_quota;
    for (int i = 0; i < n_obj; ++i) quota[static_cast<size_t>(i) + 1] = rest / n_obj;
    quota[0] += rest - (rest / n_obj) * n_obj;

    std::vector<std::array<double, 3>> pts;
    std::vector<std::array<double, 3>> normals;
    std::vector<uint16_t> labels;
    pts.reserve(static_cast<size_t>(params.n_points));
    bool fill_ok = true;

    const auto lit = light_dir();
    for (int slot = 0; slot <= n_obj && fill_ok; ++slot) {
      const int want = quota[static_cast<size_t>(slot)];
      int got = 0, tries = 0;
      const int max_tries = 200 * want + 400;
      while (got < want && tries < max_tries) {
        ++tries;
        std::array<double, 3> p, nrm;
        uint16_t cls;
        int obj_id;
        if (slot == 0) {
          const double zr = rng.uniform();
          const double z = std::sqrt(params.z_near * params.z_near +
                                     zr * (params.z_far * params.z_far -
                                           params.z_near * params.z_near));
          const double x = rng.uniform(-0.48, 0.48) * z;
          p = {x, params.ground_y, z};
          nrm = {0, -1, 0};
          cls = 0;
          obj_id = -2;
        } else {
          const Object& o = objects[static_cast<size_t>(slot) - 1];
          p = sample_surface(rng, o, nrm);
          cls = static_cast<uint16_t>(o.class_id);
          obj_id = slot - 1;
        }
        if (p[2] <= 0) continue;
        const double u = cam.fx * p[0] / p[2] + cam.cx;
        const double v = cam.fy * p[1] / p[2] + cam.cy;
        if (u < 0 || u >= w || v < 0 || v >= h) continue;
        const int ui = static_cast<int>(std::lround(u));
        const int vi = static_cast<int>(std::lround(v));
        const size_t pix = static_cast<size_t>(std::min(vi, h - 1)) * w + std::min(ui, w - 1);
        if (pixel_object[pix] != obj_id) continue;  // occluded or off-object
        pts.push_back(p);
        normals.push_back(nrm);
        labels.push_back(cls);
        ++got;
      }
      if (got < want) fill_ok = false;
    }
    if (!fill_ok) continue;  // retry layout

    Scene scene;
    scene.id = id;
    scene.camera = cam;
    scene.domain = Domain::Source;
    scene.image = std::move(image);
    scene.points = Tensor(Shape{params.n_points, 3});
    scene.intensity = Tensor(Shape{params.n_points, 1});
    scene.labels = std::move(labels);
    for (int i = 0; i < params.n_points; ++i) {
      for (int c = 0; c < 3; ++c) scene.points.at(i, c) = pts[static_cast<size_t>(i)][static_cast<size_t>(c)];
      const auto& nrm = normals[static_cast<size_t>(i)];
      const double ndl = std::max(0.0, nrm[0] * lit[0] + nrm[1] * lit[1] + nrm[2] * lit[2]);
      double val = class_base_intensity(scene.labels[static_cast<size_t>(i)], params.n_classes) *
                       (0.75 + 0.25 * ndl) +
                   0.01 * rng.normal();
      scene.intensity.at(i, 0) = val < 0 ? 0 : (val > 1 ? 1 : val);
    }
    return scene;
  }
  throw GenerationError("generate_scene: could not place objects and fill point quotas after " +
                        std::to_string(GenParams{}.max_layout_retries) + " layout retries");
}

namespace scenegen {

// Rotation of RGB about the gray axis by the given angle (Rodrigues form).
inline std::array<std::array<double, 3>, 3> hue_matrix(double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  const double a = 1.0 / std::sqrt(3.0);
  std::array<std::array<double, 3>, 3> r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r[static_cast<size_t>(i)][static_cast<size_t>(j)] = (i == j ? c : 0.0) + (1.0 - c) * a * a;
  // skew-symmetric part of the unit gray axis
  r[0][1] += -s * a; r[0][2] += s * a;
  r[1][0] += s * a;  r[1][2] += -s * a;
  r[2][0] += -s * a; r[2][1] += s * a;
  return r;
}

}  // namespace scenegen

// Target-domain variant: color transform on the image, Gaussian jitter and
// dropout on the points. Surviving points keep their labels; points whose
// jittered position no longer projects into the image are dropped as well.
inline Scene apply_shift(const Scene& scene, const ShiftParams& params, Rng& rng) {
  params.validate();
  if (scene.domain != Domain::Source)
    throw UsageError("apply_shift expects a source-domain scene");

  Scene out = scene;
  out.domain = Domain::Target;

  if (params.hue_rotation != 0.0) {
    const auto m = scenegen::hue_matrix(params.hue_rotation);
    for (size_t i = 0; i < out.image.data.size(); i += 3) {
      const double r = out.image.data[i], g = out.image.data[i + 1], b = out.image.data[i + 2];
      for (int c = 0; c < 3; ++c) {
        double v = m[static_cast<size_t>(c)][0] * r + m[static_cast<size_t>(c)][1] * g + m[static_cast<size_t>(c)][2] * b;
        out.image.data[i + static_cast<size_t>(c)] = v < 0 ? 0 : (v > 1 ? 1 : v);
      }
    }
  }
  if (params.brightness_delta != 0.0) {
    for (double& v : out.image.data) {
      v += params.brightness_delta;
      v = v < 0 ? 0 : (v > 1 ? 1 : v);
    }
  }

  const int n = scene.n_points();
  std::vector<std::array<double, 3>> kept_pts;
  std::vector<double> kept_intensity;
  std::vector<uint16_t> kept_labels;
  for (int i = 0; i < n; ++i) {
    std::array<double, 3> p{scene.points.at(i, 0), scene.points.at(i, 1), scene.points.at(i, 2)};
    if (params.point_noise_sigma > 0.0)
      for (double& v : p) v += params.point_noise_sigma * rng.normal();
    double drop_p = params.point_dropout;
    if (!params.class_prior_skew.empty()) {
      const size_t cls = scene.labels[static_cast<size_t>(i)];
      if (cls < params.class_prior_skew.size()) drop_p *= params.class_prior_skew[cls];
      drop_p = drop_p > 0.98 ? 0.98 : drop_p;
    }
    if (drop_p > 0.0 && rng.uniform() < drop_p) continue;
    if (p[2] <= 0) continue;
    const double u = scene.camera.fx * p[0] / p[2] + scene.camera.cx;
    const double v = scene.camera.fy * p[1] / p[2] + scene.camera.cy;
    if (u < 0 || u >= scene.camera.width || v < 0 || v >= scene.camera.height) continue;
    kept_pts.push_back(p);
    kept_intensity.push_back(scene.intensity.at(i, 0));
    kept_labels.push_back(scene.labels[static_cast<size_t>(i)]);
  }
  if (kept_pts.empty()) throw GenerationError("apply_shift dropped every point");

  const int m = static_cast<int>(kept_pts.size());
  out.points = Tensor(Shape{m, 3});
  out.intensity = Tensor(Shape{m, 1});
  out.labels = std::move(kept_labels);
  for (int i = 0; i < m; ++i) {
    for (int c = 0; c < 3; ++c) out.points.at(i, c) = kept_pts[static_cast<size_t>(i)][static_cast<size_t>(c)];
    out.intensity.at(i, 0) = kept_intensity[static_cast<size_t>(i)];
  }
  return out;
}

}  // namespace mx2m
