#include "fpl/core/types.hpp"

#include <cmath>

#include "fpl/core/error.hpp"

namespace fpl {

std::string to_string(const Dims3& dims) {
  return std::to_string(dims.depth) + "x" + std::to_string(dims.height) + "x" + std::to_string(dims.width);
}

std::string_view to_string(DomainTag domain) { return domain == DomainTag::source ? "source" : "target"; }

DomainTag parse_domain(std::string_view text) {
  if (text == "source") return DomainTag::source;
  if (text == "target") return DomainTag::target;
  throw ValidationError("unknown domain '" + std::string(text) + "'");
}

template <typename T>
VoxelGrid<T>::VoxelGrid(Dims3 dims, Spacing3 spacing, std::vector<T> data)
    : dims_(dims), spacing_(spacing), data_(std::move(data)) {
  if (data_.size() != dims_.voxels())
    throw ShapeError("voxel buffer of " + std::to_string(data_.size()) + " values does not match dims " +
                     to_string(dims_));
}

template class VoxelGrid<float>;
template class VoxelGrid<std::uint8_t>;

LabelMap::LabelMap(Dims3 dims, int num_classes, Spacing3 spacing, std::vector<std::uint8_t> labels)
    : VoxelGrid(dims, spacing, std::move(labels)), num_classes_(num_classes) {}

std::size_t LabelMap::count(int label) const {
  std::size_t n = 0;
  for (auto v : data_) n += (v == label);
  return n;
}

ProbabilityMap::ProbabilityMap(Dims3 dims, int channels, std::vector<float> data)
    : dims_(dims), channels_(channels), data_(std::move(data)) {
  if (data_.size() != dims_.voxels() * static_cast<std::size_t>(channels_))
    throw ShapeError("probability buffer does not match dims " + to_string(dims_) + " x " +
                     std::to_string(channels_) + " channels");
}

namespace {

void validate_geometry(const Dims3& dims, const Spacing3& spacing, std::size_t length) {
  if (dims.depth < 1 || dims.height < 1 || dims.width < 1)
    throw ValidationError("dims must all be >= 1, got " + to_string(dims));
  if (!(spacing.z > 0 && spacing.y > 0 && spacing.x > 0)) throw ValidationError("spacing must be positive");
  if (length != dims.voxels()) throw ShapeError("data length does not match dims " + to_string(dims));
}

}  // namespace

void validate(const Volume3D& v, bool require_finite) {
  validate_geometry(v.dims(), v.spacing(), v.size());
  if (require_finite) {
    for (float x : v.values())
      if (!std::isfinite(x)) throw ValidationError("volume contains NaN or Inf");
  }
}

void validate(const LabelMap& y) {
  validate_geometry(y.dims(), y.spacing(), y.size());
  if (y.num_classes() < 2) throw ValidationError("num_classes must be >= 2");
  for (auto v : y.values())
    if (v >= y.num_classes()) throw ValidationError("label " + std::to_string(v) + " out of range");
}

void validate(const ProbabilityMap& p, double sum_tol) {
  const std::size_t n = p.voxels();
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (int c = 0; c < p.channels(); ++c) {
      const float v = p.at(c, i);
      if (!(v >= 0.0f && v <= 1.0f)) throw ValidationError("probability outside [0,1]");
      sum += v;
    }
    if (std::abs(sum - 1.0) > sum_tol) throw ValidationError("channel sum deviates from 1");
  }
}

void require_same_dims(const Dims3& a, const Dims3& b, std::string_view what) {
  if (!(a == b))
    throw ShapeError(std::string(what) + ": dims " + to_string(a) + " vs " + to_string(b));
}

ProbabilityMap one_hot(const LabelMap& labels) {
  ProbabilityMap p(labels.dims(), labels.num_classes());
  for (std::size_t i = 0; i < labels.size(); ++i) p.at(labels[i], i) = 1.0f;
  return p;
}

LabelMap argmax(const ProbabilityMap& p, Spacing3 spacing) {
  LabelMap out(p.dims(), p.channels(), spacing);
  for (std::size_t i = 0; i < p.voxels(); ++i) {
    int best = 0;
    for (int c = 1; c < p.channels(); ++c)
      if (p.at(c, i) > p.at(best, i)) best = c;
    out[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

}  // namespace fpl
