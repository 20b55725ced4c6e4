// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "mx2m/graph.hpp"
#include "mx2m/tensor.hpp"

namespace mx2m {

struct Camera {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;

  void validate() const {
    if (fx <= 0 || fy <= 0) throw UsageError("camera focal lengths must be positive");
    if (cx < 0 || cx >= width || cy < 0 || cy >= height)
      throw UsageError("camera principal point outside image");
  }
};

struct Projection {
  std::vector<double> u, v;
  std::vector<uint8_t> valid;

  size_t size() const { return u.size(); }
  bool all_valid() const {
    for (uint8_t f : valid)
      if (!f) return false;
    return true;
  }
};

// Pinhole projection, camera frame: x right, y down, z forward.
// u = fx*x/z + cx, v = fy*y/z + cy; a point is valid when z > 0 and the
// pixel lands inside the image.
inline Projection project_points(const Tensor& points, const Camera& cam) {
  if (points.ndim() != 2 || points.cols() != 3)
    throw ShapeError("project_points: expected N x 3 points, got " + shape_str(points.shape));
  const int n = points.rows();
  Projection pr;
  pr.u.resize(static_cast<size_t>(n));
  pr.v.resize(static_cast<size_t>(n));
  pr.valid.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double x = points.at(i, 0), y = points.at(i, 1), z = points.at(i, 2);
    if (z <= 0.0) {
      pr.u[static_cast<size_t>(i)] = 0;
      pr.v[static_cast<size_t>(i)] = 0;
      pr.valid[static_cast<size_t>(i)] = 0;
      continue;
    }
    const double u = cam.fx * x / z + cam.cx;
    const double v = cam.fy * y / z + cam.cy;
    pr.u[static_cast<size_t>(i)] = u;
    pr.v[static_cast<size_t>(i)] = v;
    pr.valid[static_cast<size_t>(i)] =
        (u >= 0.0 && u < cam.width && v >= 0.0 && v < cam.height) ? 1 : 0;
  }
  return pr;
}

// Nearest-pixel flat indices (v*W + u after rounding, clamped to bounds).
inline std::vector<int> nearest_pixel_indices(const Projection& pr, const Camera& cam) {
  if (!pr.all_valid())
    throw UsageError("nearest_pixel_indices: projection contains invalid points");
  std::vector<int> idx(pr.size());
  for (size_t i = 0; i < pr.size(); ++i) {
    int ui = static_cast<int>(std::lround(pr.u[i]));
    int vi = static_cast<int>(std::lround(pr.v[i]));
    ui = ui < 0 ? 0 : (ui >= cam.width ? cam.width - 1 : ui);
    vi = vi < 0 ? 0 : (vi >= cam.height ? cam.height - 1 : vi);
    idx[i] = vi * cam.width + ui;
  }
  return idx;
}

// Per-point features sampled from a dense (H*W) x F map at the projected
// pixels. Differentiable: the gradient scatters back onto the selected pixels.
inline NodeRef sample_features(Graph& g, NodeRef feature_map, const Projection& pr,
                               const Camera& cam) {
  return g.gather_rows(feature_map, nearest_pixel_indices(pr, cam));
}

struct PatchGrid {
  int p = 0;
  int patches_x = 0;
  int patches_y = 0;

  PatchGrid() = default;
  PatchGrid(int width, int height, int patch) : p(patch) {
    if (patch <= 0) throw UsageError("patch side must be positive");
    if (width % patch != 0 || height % patch != 0)
      throw UsageError("patch side " + std::to_string(patch) + " does not divide image " +
                       std::to_string(width) + "x" + std::to_string(height));
    patches_x = width / patch;
    patches_y = height / patch;
  }

  int n_patches() const { return patches_x * patches_y; }
};

inline int patch_index(double u, double v, const PatchGrid& grid) {
  const int px = static_cast<int>(std::floor(u / grid.p));
  const int py = static_cast<int>(std::floor(v / grid.p));
  if (u < 0 || v < 0 || px >= grid.patches_x || py >= grid.patches_y)
    throw UsageError("patch_index: pixel (" + std::to_string(u) + ", " + std::to_string(v) +
                     ") outside image");
  return py * grid.patches_x + px;
}

struct VoxelKey {
  int64_t x = 0, y = 0, z = 0;
  bool operator==(const VoxelKey&) const = default;
};

struct VoxelKeyHash {
  size_t operator()(const VoxelKey& k) const {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (uint64_t w : {static_cast<uint64_t>(k.x), static_cast<uint64_t>(k.y),
                       static_cast<uint64_t>(k.z)}) {
      h ^= w;
      h *= 0x100000001b3ULL;
    }
    return static_cast<size_t>(h);
  }
};

struct VoxelTable {
  std::vector<VoxelKey> point_keys;                                        // per point
  std::unordered_map<VoxelKey, std::vector<int>, VoxelKeyHash> members;    // key -> point ids
};

// key = (floor(x/s), floor(y/s), floor(z/s))
inline VoxelTable voxelize(const Tensor& points, double voxel_size) {
  if (voxel_size <= 0) throw UsageError("voxel size must be positive");
  if (points.ndim() != 2 || points.cols() != 3)
    throw ShapeError("voxelize: expected N x 3 points, got " + shape_str(points.shape));
  VoxelTable t;
  const int n = points.rows();
  t.point_keys.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    VoxelKey k{static_cast<int64_t>(std::floor(points.at(i, 0) / voxel_size)),
               static_cast<int64_t>(std::floor(points.at(i, 1) / voxel_size)),
               static_cast<int64_t>(std::floor(points.at(i, 2) / voxel_size))};
    t.point_keys[static_cast<size_t>(i)] = k;
    t.members[k].push_back(i);
  }
  return t;
}

// Dense N x N matrix M with M[i,j] = 1/|voxel(i)| when j shares i's voxel.
// Left-multiplying per-point features by M yields each point's voxel mean.
inline Tensor voxel_mean_matrix(const VoxelTable& table, int n_points) {
  Tensor m(Shape{n_points, n_points});
  for (int i = 0; i < n_points; ++i) {
    const auto& members = table.members.at(table.point_keys[static_cast<size_t>(i)]);
    const double w = 1.0 / static_cast<double>(members.size());
    for (int j : members) m.at(i, j) = w;
  }
  return m;
}

}  // namespace mx2m
