#pragma once

#include <optional>
#include <span>

#include "fpl/core/rng.hpp"
#include "fpl/core/types.hpp"

namespace fpl::data {

/// Half-open voxel box [lo, hi).
struct Box3 {
  Index3 lo;
  Index3 hi;
  bool empty() const { return hi.z <= lo.z || hi.y <= lo.y || hi.x <= lo.x; }
  Dims3 size() const { return {hi.z - lo.z, hi.y - lo.y, hi.x - lo.x}; }
};

template <typename Grid>
struct Cropped {
  Grid grid;
  Index3 offset;        // position of grid(0,0,0) in the source volume
  Dims3 source_dims;
};

/// Expands `bbox` by `margin` on every side, clamps to the volume and copies the region.
Cropped<Volume3D> crop_to_roi(const Volume3D& v, const Box3& bbox, int margin);
Cropped<LabelMap> crop_to_roi(const LabelMap& y, const Box3& bbox, int margin);

/// Writes `patch` back into `into` at `offset` (inverse of a crop).
void embed(const Volume3D& patch, const Index3& offset, Volume3D& into);
void embed(const LabelMap& patch, const Index3& offset, LabelMap& into);

/// Tight box around labels > 0; empty box when there is no foreground.
Box3 foreground_box(const LabelMap& y);
/// Smallest box containing every input box.
Box3 union_box(std::span<const Box3> boxes);

/// Per-volume zero-mean, unit-std normalisation; near-constant volumes map to zeros.
Volume3D znorm(const Volume3D& v);

/// Drops `n_front` leading and `n_back` trailing axial slices.
Volume3D trim_slices(const Volume3D& v, int n_front, int n_back);
LabelMap trim_slices(const LabelMap& y, int n_front, int n_back);

/// Reflect-pads at the high end of each axis up to at least `min_dims`.
Volume3D reflect_pad(const Volume3D& v, const Dims3& min_dims);
LabelMap reflect_pad(const LabelMap& y, const Dims3& min_dims);
WeightMap reflect_pad(const WeightMap& a, const Dims3& min_dims);

Volume3D extract(const Volume3D& v, const Index3& corner, const Dims3& size);
LabelMap extract(const LabelMap& y, const Index3& corner, const Dims3& size);
WeightMap extract(const WeightMap& a, const Index3& corner, const Dims3& size);

struct PatchSample {
  Volume3D image;
  std::optional<LabelMap> label;
  Index3 corner;  // in the (possibly padded) input
  bool forced_foreground = false;
};

inline constexpr double kForegroundForcing = 0.5;

/// Random patch. With probability 0.5 (labels present and non-empty) the corner is redrawn so the
/// patch contains a uniformly chosen foreground voxel.
PatchSample sample_patch(const Volume3D& v, const LabelMap* y, const Dims3& patch_dims, Rng& rng);

}  // namespace fpl::data
