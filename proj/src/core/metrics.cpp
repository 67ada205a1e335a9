#include "fpl/core/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fpl/core/error.hpp"

namespace fpl {

namespace {

void check_pair(const LabelMap& pred, const LabelMap& gt, int class_index) {
  require_same_dims(pred.dims(), gt.dims(), "metric inputs");
  if (class_index < 0 || class_index >= std::max(pred.num_classes(), gt.num_classes()))
    throw ValidationError("class_index " + std::to_string(class_index) + " out of range");
}

// In-place exact 1D pass: f[p] <- min_q f[q] + ((p - q) * step)^2 over one strided line.
void min_plus_line(double* f, int n, std::ptrdiff_t stride, double step, std::vector<double>& scratch) {
  scratch.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) scratch[static_cast<std::size_t>(i)] = f[i * stride];
  for (int p = 0; p < n; ++p) {
    double best = scratch[static_cast<std::size_t>(p)];
    for (int k = 1; k < n; ++k) {
      const double d = k * step;
      const double d2 = d * d;
      if (d2 >= best) break;
      if (p - k >= 0) best = std::min(best, scratch[static_cast<std::size_t>(p - k)] + d2);
      if (p + k < n) best = std::min(best, scratch[static_cast<std::size_t>(p + k)] + d2);
      if (p - k < 0 && p + k >= n) break;
    }
    f[p * stride] = best;
  }
}

}  // namespace

std::vector<std::uint8_t> class_mask(const LabelMap& labels, int class_index) {
  std::vector<std::uint8_t> mask(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) mask[i] = labels[i] == class_index;
  return mask;
}

double dice_score(const LabelMap& pred, const LabelMap& gt, int class_index) {
  check_pair(pred, gt, class_index);
  std::size_t p = 0, g = 0, both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred[i] == class_index;
    const bool b = gt[i] == class_index;
    p += a;
    g += b;
    both += (a && b);
  }
  if (p + g == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

std::vector<std::uint8_t> surface_voxels(const std::vector<std::uint8_t>& mask, const Dims3& dims) {
  std::vector<std::uint8_t> surface(mask.size(), 0);
  const auto at = [&](int z, int y, int x) -> bool {
    if (z < 0 || y < 0 || x < 0 || z >= dims.depth || y >= dims.height || x >= dims.width) return false;
    return mask[(static_cast<std::size_t>(z) * dims.height + y) * dims.width + x] != 0;
  };
  std::size_t i = 0;
  for (int z = 0; z < dims.depth; ++z)
    for (int y = 0; y < dims.height; ++y)
      for (int x = 0; x < dims.width; ++x, ++i) {
        if (!mask[i]) continue;
        const bool interior = at(z - 1, y, x) && at(z + 1, y, x) && at(z, y - 1, x) && at(z, y + 1, x) &&
                              at(z, y, x - 1) && at(z, y, x + 1);
        surface[i] = !interior;
      }
  return surface;
}

std::vector<double> squared_distance_field(const std::vector<std::uint8_t>& targets, const Dims3& dims,
                                           const Spacing3& spacing) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> f(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) f[i] = targets[i] ? 0.0 : inf;

  const std::ptrdiff_t plane = static_cast<std::ptrdiff_t>(dims.height) * dims.width;
  std::vector<double> scratch;
  // z, then y, then x: the additions happen in the same order as a direct evaluation of
  // ((dz*sz)^2 + (dy*sy)^2) + (dx*sx)^2, and rounding is monotone, so the minimum is exact.
  for (int y = 0; y < dims.height; ++y)
    for (int x = 0; x < dims.width; ++x)
      min_plus_line(f.data() + static_cast<std::ptrdiff_t>(y) * dims.width + x, dims.depth, plane, spacing.z, scratch);
  for (int z = 0; z < dims.depth; ++z)
    for (int x = 0; x < dims.width; ++x)
      min_plus_line(f.data() + z * plane + x, dims.height, dims.width, spacing.y, scratch);
  for (int z = 0; z < dims.depth; ++z)
    for (int y = 0; y < dims.height; ++y)
      min_plus_line(f.data() + z * plane + static_cast<std::ptrdiff_t>(y) * dims.width, dims.width, 1, spacing.x,
                    scratch);
  return f;
}

double bounding_box_diagonal(const std::vector<std::uint8_t>& mask, const Dims3& dims, const Spacing3& spacing) {
  int lo[3] = {dims.depth, dims.height, dims.width};
  int hi[3] = {-1, -1, -1};
  std::size_t i = 0;
  for (int z = 0; z < dims.depth; ++z)
    for (int y = 0; y < dims.height; ++y)
      for (int x = 0; x < dims.width; ++x, ++i) {
        if (!mask[i]) continue;
        lo[0] = std::min(lo[0], z), hi[0] = std::max(hi[0], z);
        lo[1] = std::min(lo[1], y), hi[1] = std::max(hi[1], y);
        lo[2] = std::min(lo[2], x), hi[2] = std::max(hi[2], x);
      }
  if (hi[0] < 0) return 0.0;
  const double dz = (hi[0] - lo[0]) * spacing.z;
  const double dy = (hi[1] - lo[1]) * spacing.y;
  const double dx = (hi[2] - lo[2]) * spacing.x;
  return std::sqrt(dz * dz + dy * dy + dx * dx);
}

double assd(const LabelMap& pred, const LabelMap& gt, int class_index, const Spacing3& spacing) {
  check_pair(pred, gt, class_index);
  if (!(spacing.z > 0 && spacing.y > 0 && spacing.x > 0)) throw ValidationError("spacing must be positive");
  const Dims3& dims = pred.dims();
  const auto pm = class_mask(pred, class_index);
  const auto gm = class_mask(gt, class_index);
  const bool p_empty = std::none_of(pm.begin(), pm.end(), [](auto v) { return v != 0; });
  const bool g_empty = std::none_of(gm.begin(), gm.end(), [](auto v) { return v != 0; });
  if (p_empty && g_empty) return 0.0;
  if (p_empty) return bounding_box_diagonal(gm, dims, spacing);
  if (g_empty) return bounding_box_diagonal(pm, dims, spacing);

  const auto ps = surface_voxels(pm, dims);
  const auto gs = surface_voxels(gm, dims);
  const auto directed = [&](const std::vector<std::uint8_t>& from, const std::vector<std::uint8_t>& to) {
    const auto field = squared_distance_field(to, dims, spacing);
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < from.size(); ++i) {
      if (!from[i]) continue;
      sum += std::sqrt(field[i]);
      ++n;
    }
    return sum / static_cast<double>(n);
  };
  return (directed(ps, gs) + directed(gs, ps)) / 2.0;
}

}  // namespace fpl
