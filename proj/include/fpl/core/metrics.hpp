#pragma once

#include <cstdint>
#include <vector>

#include "fpl/core/types.hpp"

namespace fpl {

/// 2|P∩G| / (|P|+|G|) for one class. Two empty masks score 1.0.
double dice_score(const LabelMap& pred, const LabelMap& gt, int class_index);

/// Average symmetric surface distance in millimetres for one class.
///
/// Surfaces are the foreground voxels with at least one of their six face neighbours outside the
/// mask; the volume border counts as outside. The result is the mean of the two directed mean
/// nearest-surface distances. If both masks are empty the result is 0; if exactly one is empty it
/// is the diagonal (in mm) of the non-empty mask's bounding box.
double assd(const LabelMap& pred, const LabelMap& gt, int class_index, const Spacing3& spacing);

/// Binary mask of voxels with the given label.
std::vector<std::uint8_t> class_mask(const LabelMap& labels, int class_index);

/// Six-connected surface of a binary mask.
std::vector<std::uint8_t> surface_voxels(const std::vector<std::uint8_t>& mask, const Dims3& dims);

/// Squared Euclidean distance (mm²) from every voxel to the nearest set voxel of `targets`;
/// +inf everywhere when `targets` is empty. Computed as exact separable minimisation, so each
/// value equals min over targets of ((dz·sz)² + (dy·sy)²) + (dx·sx)² bit for bit.
std::vector<double> squared_distance_field(const std::vector<std::uint8_t>& targets, const Dims3& dims,
                                           const Spacing3& spacing);

/// Bounding-box diagonal in mm of the set voxels, measured between extreme voxel centres.
double bounding_box_diagonal(const std::vector<std::uint8_t>& mask, const Dims3& dims, const Spacing3& spacing);

}  // namespace fpl
