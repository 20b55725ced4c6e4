// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "mx2m/geom.hpp"
#include "mx2m/rng.hpp"
#include "mx2m/tensor.hpp"

namespace mx2m {

// Removal hyper-parameters (p, mr, m2d, m3d). At most one modality is masked
// per sample, so m2d + m3d must stay <= 1 and is kept < 1 in practice.
struct MaskParams {
  int p = 16;
  double mr = 0.15;
  double m2d = 0.2;
  double m3d = 0.2;

  void validate() const {
    if (p <= 0) throw UsageError("mask patch side must be positive");
    if (mr < 0.0 || mr >= 1.0) throw UsageError("mask ratio must lie in [0, 1)");
    if (m2d < 0.0 || m3d < 0.0 || m2d + m3d > 1.0)
      throw UsageError("masking probabilities need m2d >= 0, m3d >= 0, m2d + m3d <= 1");
  }
};

enum class MaskMode : uint8_t { None = 0, Mask2D = 1, Mask3D = 2 };

struct MaskPlan {
  MaskMode mode = MaskMode::None;
  std::vector<int> masked_patches;  // sorted patch ids

  bool masks(int patch_id) const {
    return std::binary_search(masked_patches.begin(), masked_patches.end(), patch_id);
  }
};

// Draws the per-sample removal decision: the mode categorically with
// probabilities (m2d, m3d, 1-m2d-m3d), then floor(mr * n_patches) distinct
// patches uniformly.
inline MaskPlan sample_plan(Rng& rng, const MaskParams& params, const PatchGrid& grid) {
  params.validate();
  MaskPlan plan;
  const std::array<double, 3> probs{params.m2d, params.m3d, 1.0 - params.m2d - params.m3d};
  const int draw = rng.categorical(probs);
  plan.mode = draw == 0 ? MaskMode::Mask2D : (draw == 1 ? MaskMode::Mask3D : MaskMode::None);
  if (plan.mode == MaskMode::None) return plan;

  const int total = grid.n_patches();
  const int count = static_cast<int>(params.mr * total);  // floor
  if (count == 0) return plan;

  // partial Fisher-Yates
  std::vector<int> ids(static_cast<size_t>(total));
  for (int i = 0; i < total; ++i) ids[static_cast<size_t>(i)] = i;
  for (int i = 0; i < count; ++i) {
    const int j = i + rng.uniform_int(total - i);
    std::swap(ids[static_cast<size_t>(i)], ids[static_cast<size_t>(j)]);
  }
  plan.masked_patches.assign(ids.begin(), ids.begin() + count);
  std::sort(plan.masked_patches.begin(), plan.masked_patches.end());
  return plan;
}

// Zeroes every pixel of the masked patches; the fill value is 0 in the
// (normalized) input space. Identity unless the plan masks 2D.
inline Tensor apply_mask_2d(const Tensor& image, const MaskPlan& plan, const PatchGrid& grid) {
  if (image.ndim() != 3 || image.dim(2) < 1)
    throw ShapeError("apply_mask_2d: expected H x W x F image, got " + shape_str(image.shape));
  if (plan.mode != MaskMode::Mask2D) return image;
  const int h = image.dim(0), w = image.dim(1), f = image.dim(2);
  if (h % grid.p != 0 || w % grid.p != 0 || grid.patches_x != w / grid.p)
    throw ShapeError("apply_mask_2d: patch grid does not match image size");
  Tensor out = image;
  for (int patch : plan.masked_patches) {
    const int py = patch / grid.patches_x;
    const int px = patch % grid.patches_x;
    for (int y = py * grid.p; y < (py + 1) * grid.p; ++y)
      for (int x = px * grid.p; x < (px + 1) * grid.p; ++x)
        for (int c = 0; c < f; ++c)
          out.data[(static_cast<size_t>(y) * w + x) * f + c] = 0.0;
  }
  return out;
}

// A point is masked iff its projected pixel falls in a masked patch; masked
// points keep their coordinates (geometry stays intact for voxelization) but
// their input features are zeroed. Returns the per-point masked flags.
inline std::vector<uint8_t> apply_mask_3d(Tensor& point_features, const Projection& proj,
                                          const MaskPlan& plan, const PatchGrid& grid) {
  const size_t n = proj.size();
  if (point_features.ndim() != 2 || static_cast<size_t>(point_features.rows()) != n)
    throw ShapeError("apply_mask_3d: feature rows do not match projection size");
  if (plan.mode != MaskMode::Mask3D) return std::vector<uint8_t>(n, 0);
  if (!proj.all_valid()) throw UsageError("apply_mask_3d: projection contains invalid points");
  std::vector<uint8_t> flags(n, 0);
  const int f = point_features.cols();
  for (size_t i = 0; i < n; ++i) {
    if (!plan.masks(patch_index(proj.u[i], proj.v[i], grid))) continue;
    flags[i] = 1;
    for (int j = 0; j < f; ++j) point_features.at(static_cast<int>(i), j) = 0.0;
  }
  return flags;
}

// Rows (points) covered by the plan's masked patches, regardless of mode --
// used by the same-modality ablation strategies where the loss runs over
// removed portions only.
inline std::vector<uint8_t> masked_point_flags(const Projection& proj, const MaskPlan& plan,
                                               const PatchGrid& grid) {
  std::vector<uint8_t> flags(proj.size(), 0);
  if (plan.mode == MaskMode::None) return flags;
  for (size_t i = 0; i < proj.size(); ++i)
    if (plan.masks(patch_index(proj.u[i], proj.v[i], grid))) flags[i] = 1;
  return flags;
}

}  // namespace mx2m
