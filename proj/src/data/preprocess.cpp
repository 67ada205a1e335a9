#include "fpl/data/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include "fpl/core/error.hpp"

namespace fpl::data {

namespace {

template <typename Grid>
Grid make_like(const Grid& like, const Dims3& dims) {
  if constexpr (std::is_same_v<Grid, LabelMap>)
    return LabelMap(dims, like.num_classes(), like.spacing());
  else
    return Grid(dims, like.spacing());
}

template <typename Grid>
Grid extract_impl(const Grid& src, const Index3& c, const Dims3& size) {
  const Dims3& d = src.dims();
  if (c.z < 0 || c.y < 0 || c.x < 0 || c.z + size.depth > d.depth || c.y + size.height > d.height ||
      c.x + size.width > d.width)
    throw ShapeError("region " + to_string(size) + " at corner does not fit in " + to_string(d));
  Grid out = make_like(src, size);
  for (int z = 0; z < size.depth; ++z)
    for (int y = 0; y < size.height; ++y) {
      const auto* from = &src.at(c.z + z, c.y + y, c.x);
      std::copy(from, from + size.width, &out.at(z, y, 0));
    }
  return out;
}

template <typename Grid>
Cropped<Grid> crop_impl(const Grid& src, const Box3& bbox, int margin) {
  if (bbox.empty()) throw ValidationError("crop_to_roi: empty bounding box");
  if (margin < 0) throw ValidationError("crop_to_roi: negative margin");
  const Dims3& d = src.dims();
  Box3 b;
  b.lo = {std::max(0, bbox.lo.z - margin), std::max(0, bbox.lo.y - margin), std::max(0, bbox.lo.x - margin)};
  b.hi = {std::min(d.depth, bbox.hi.z + margin), std::min(d.height, bbox.hi.y + margin),
          std::min(d.width, bbox.hi.x + margin)};
  if (b.empty()) throw ValidationError("crop_to_roi: bounding box lies outside the volume");
  return {extract_impl(src, b.lo, b.size()), b.lo, d};
}

template <typename Grid>
void embed_impl(const Grid& patch, const Index3& o, Grid& into) {
  const Dims3& p = patch.dims();
  const Dims3& d = into.dims();
  if (o.z < 0 || o.y < 0 || o.x < 0 || o.z + p.depth > d.depth || o.y + p.height > d.height ||
      o.x + p.width > d.width)
    throw ShapeError("embed: patch does not fit at offset");
  for (int z = 0; z < p.depth; ++z)
    for (int y = 0; y < p.height; ++y) {
      const auto* from = &patch.at(z, y, 0);
      std::copy(from, from + p.width, &into.at(o.z + z, o.y + y, o.x));
    }
}

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

template <typename Grid>
Grid pad_impl(const Grid& src, const Dims3& min_dims) {
  const Dims3& d = src.dims();
  const Dims3 out_dims{std::max(d.depth, min_dims.depth), std::max(d.height, min_dims.height),
                       std::max(d.width, min_dims.width)};
  if (out_dims == d) return src;
  Grid out = make_like(src, out_dims);
  for (int z = 0; z < out_dims.depth; ++z)
    for (int y = 0; y < out_dims.height; ++y)
      for (int x = 0; x < out_dims.width; ++x)
        out.at(z, y, x) = src.at(reflect_index(z, d.depth), reflect_index(y, d.height), reflect_index(x, d.width));
  return out;
}

template <typename Grid>
Grid trim_impl(const Grid& src, int n_front, int n_back) {
  const Dims3& d = src.dims();
  if (n_front < 0 || n_back < 0) throw ValidationError("trim_slices: negative trim");
  if (d.depth <= n_front + n_back)
    throw ValidationError("trim_slices: depth " + std::to_string(d.depth) + " cannot lose " +
                          std::to_string(n_front + n_back) + " slices");
  return extract_impl(src, {n_front, 0, 0}, {d.depth - n_front - n_back, d.height, d.width});
}

}  // namespace

Cropped<Volume3D> crop_to_roi(const Volume3D& v, const Box3& bbox, int margin) { return crop_impl(v, bbox, margin); }
Cropped<LabelMap> crop_to_roi(const LabelMap& y, const Box3& bbox, int margin) { return crop_impl(y, bbox, margin); }

void embed(const Volume3D& patch, const Index3& offset, Volume3D& into) { embed_impl(patch, offset, into); }
void embed(const LabelMap& patch, const Index3& offset, LabelMap& into) { embed_impl(patch, offset, into); }

Box3 foreground_box(const LabelMap& y) {
  const Dims3& d = y.dims();
  Box3 b{{d.depth, d.height, d.width}, {0, 0, 0}};
  for (int z = 0; z < d.depth; ++z)
    for (int yy = 0; yy < d.height; ++yy)
      for (int x = 0; x < d.width; ++x) {
        if (y.at(z, yy, x) == 0) continue;
        b.lo = {std::min(b.lo.z, z), std::min(b.lo.y, yy), std::min(b.lo.x, x)};
        b.hi = {std::max(b.hi.z, z + 1), std::max(b.hi.y, yy + 1), std::max(b.hi.x, x + 1)};
      }
  if (b.empty()) return {};
  return b;
}

Box3 union_box(std::span<const Box3> boxes) {
  Box3 out{};
  bool any = false;
  for (const auto& b : boxes) {
    if (b.empty()) continue;
    if (!any) {
      out = b;
      any = true;
      continue;
    }
    out.lo = {std::min(out.lo.z, b.lo.z), std::min(out.lo.y, b.lo.y), std::min(out.lo.x, b.lo.x)};
    out.hi = {std::max(out.hi.z, b.hi.z), std::max(out.hi.y, b.hi.y), std::max(out.hi.x, b.hi.x)};
  }
  return out;
}

Volume3D znorm(const Volume3D& v) {
  validate(v);
  double sum = 0.0;
  for (float x : v.values()) sum += x;
  const double mean = sum / static_cast<double>(v.size());
  double sq = 0.0;
  for (float x : v.values()) sq += (x - mean) * (x - mean);
  const double stddev = std::sqrt(sq / static_cast<double>(v.size()));
  Volume3D out(v.dims(), v.spacing());
  if (stddev < 1e-8) return out;
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>((v[i] - mean) / stddev);
  return out;
}

Volume3D trim_slices(const Volume3D& v, int n_front, int n_back) { return trim_impl(v, n_front, n_back); }
LabelMap trim_slices(const LabelMap& y, int n_front, int n_back) { return trim_impl(y, n_front, n_back); }

Volume3D reflect_pad(const Volume3D& v, const Dims3& min_dims) { return pad_impl(v, min_dims); }
LabelMap reflect_pad(const LabelMap& y, const Dims3& min_dims) { return pad_impl(y, min_dims); }
WeightMap reflect_pad(const WeightMap& a, const Dims3& min_dims) { return pad_impl(a, min_dims); }

Volume3D extract(const Volume3D& v, const Index3& corner, const Dims3& size) { return extract_impl(v, corner, size); }
LabelMap extract(const LabelMap& y, const Index3& corner, const Dims3& size) { return extract_impl(y, corner, size); }
WeightMap extract(const WeightMap& a, const Index3& corner, const Dims3& size) {
  return extract_impl(a, corner, size);
}

PatchSample sample_patch(const Volume3D& v, const LabelMap* y, const Dims3& patch_dims, Rng& rng) {
  if (y) require_same_dims(v.dims(), y->dims(), "sample_patch");
  const Volume3D* image = &v;
  const LabelMap* labels = y;
  Volume3D padded_image;
  LabelMap padded_labels;
  const Dims3& d0 = v.dims();
  if (patch_dims.depth > d0.depth || patch_dims.height > d0.height || patch_dims.width > d0.width) {
    padded_image = reflect_pad(v, patch_dims);
    image = &padded_image;
    if (y) {
      padded_labels = reflect_pad(*y, patch_dims);
      labels = &padded_labels;
    }
  }
  const Dims3& d = image->dims();

  PatchSample out;
  Index3 corner{rng.uniform_int(0, d.depth - patch_dims.depth), rng.uniform_int(0, d.height - patch_dims.height),
                rng.uniform_int(0, d.width - patch_dims.width)};
  if (labels && rng.bernoulli(kForegroundForcing)) {
    std::vector<std::size_t> fg;
    for (std::size_t i = 0; i < labels->size(); ++i)
      if ((*labels)[i] != 0) fg.push_back(i);
    if (!fg.empty()) {
      const std::size_t pick = fg[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(fg.size()) - 1))];
      const int fz = static_cast<int>(pick / (static_cast<std::size_t>(d.height) * d.width));
      const int fy = static_cast<int>((pick / d.width) % d.height);
      const int fx = static_cast<int>(pick % d.width);
      const auto axis = [&](int f, int n, int p) {
        return rng.uniform_int(std::max(0, f - p + 1), std::min(f, n - p));
      };
      corner = {axis(fz, d.depth, patch_dims.depth), axis(fy, d.height, patch_dims.height),
                axis(fx, d.width, patch_dims.width)};
      out.forced_foreground = true;
    }
  }
  out.corner = corner;
  out.image = extract(*image, corner, patch_dims);
  if (labels) out.label = extract(*labels, corner, patch_dims);
  return out;
}

}  // namespace fpl::data
