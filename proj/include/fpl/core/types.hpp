#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fpl {

struct Dims3 {
  int depth = 1;
  int height = 1;
  int width = 1;

  std::size_t voxels() const {
    return static_cast<std::size_t>(depth) * static_cast<std::size_t>(height) *
           static_cast<std::size_t>(width);
  }
  int operator[](int axis) const { return axis == 0 ? depth : axis == 1 ? height : width; }
  bool operator==(const Dims3&) const = default;
};

std::string to_string(const Dims3& dims);

/// Millimetres per voxel along (z, y, x).
struct Spacing3 {
  double z = 1.0;
  double y = 1.0;
  double x = 1.0;

  double operator[](int axis) const { return axis == 0 ? z : axis == 1 ? y : x; }
  bool operator==(const Spacing3&) const = default;
};

struct Index3 {
  int z = 0;
  int y = 0;
  int x = 0;
  bool operator==(const Index3&) const = default;
};

enum class DomainTag : std::uint8_t { source, target };

std::string_view to_string(DomainTag domain);
DomainTag parse_domain(std::string_view text);

/// Dense scalar field stored z-major (x fastest).
template <typename T>
class VoxelGrid {
 public:
  using value_type = T;

  VoxelGrid() = default;
  explicit VoxelGrid(Dims3 dims, Spacing3 spacing = {}, T fill = T{})
      : dims_(dims), spacing_(spacing), data_(dims.voxels(), fill) {}
  VoxelGrid(Dims3 dims, Spacing3 spacing, std::vector<T> data);

  const Dims3& dims() const { return dims_; }
  const Spacing3& spacing() const { return spacing_; }
  void set_spacing(Spacing3 spacing) { spacing_ = spacing; }

  std::size_t size() const { return data_.size(); }
  std::size_t offset(int z, int y, int x) const {
    return (static_cast<std::size_t>(z) * dims_.height + static_cast<std::size_t>(y)) * dims_.width +
           static_cast<std::size_t>(x);
  }
  T& at(int z, int y, int x) { return data_[offset(z, y, x)]; }
  const T& at(int z, int y, int x) const { return data_[offset(z, y, x)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  bool operator==(const VoxelGrid&) const = default;

 protected:
  Dims3 dims_{};
  Spacing3 spacing_{};
  std::vector<T> data_;
};

/// 32-bit scalar intensity volume.
class Volume3D : public VoxelGrid<float> {
 public:
  using VoxelGrid::VoxelGrid;
};

/// Non-negative per-voxel weights (consensus map M, combined map A, variance V, entropy E).
class WeightMap : public VoxelGrid<float> {
 public:
  using VoxelGrid::VoxelGrid;
};

class LabelMap : public VoxelGrid<std::uint8_t> {
 public:
  LabelMap() = default;
  LabelMap(Dims3 dims, int num_classes, Spacing3 spacing = {}, std::uint8_t fill = 0)
      : VoxelGrid(dims, spacing, fill), num_classes_(num_classes) {}
  LabelMap(Dims3 dims, int num_classes, Spacing3 spacing, std::vector<std::uint8_t> labels);

  int num_classes() const { return num_classes_; }
  void set_num_classes(int c) { num_classes_ = c; }
  std::size_t count(int label) const;

  bool operator==(const LabelMap&) const = default;

 private:
  int num_classes_ = 2;
};

/// Per-class probabilities laid out channel-major: data[c * voxels + i].
class ProbabilityMap {
 public:
  ProbabilityMap() = default;
  ProbabilityMap(Dims3 dims, int channels, float fill = 0.0f)
      : dims_(dims), channels_(channels), data_(dims.voxels() * static_cast<std::size_t>(channels), fill) {}
  ProbabilityMap(Dims3 dims, int channels, std::vector<float> data);

  const Dims3& dims() const { return dims_; }
  int channels() const { return channels_; }
  std::size_t voxels() const { return dims_.voxels(); }

  float& at(int c, std::size_t i) { return data_[static_cast<std::size_t>(c) * voxels() + i]; }
  float at(int c, std::size_t i) const { return data_[static_cast<std::size_t>(c) * voxels() + i]; }
  std::span<float> channel(int c) { return {data_.data() + static_cast<std::size_t>(c) * voxels(), voxels()}; }
  std::span<const float> channel(int c) const {
    return {data_.data() + static_cast<std::size_t>(c) * voxels(), voxels()};
  }
  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }

  bool operator==(const ProbabilityMap&) const = default;

 private:
  Dims3 dims_{};
  int channels_ = 0;
  std::vector<float> data_;
};

/// Throws ValidationError unless dims >= 1, spacing > 0, and length matches.
void validate(const Volume3D& v, bool require_finite = true);
void validate(const LabelMap& y);
/// Range check plus per-voxel channel sum within `sum_tol` of 1.
void validate(const ProbabilityMap& p, double sum_tol = 1e-5);

void require_same_dims(const Dims3& a, const Dims3& b, std::string_view what);

ProbabilityMap one_hot(const LabelMap& labels);
LabelMap argmax(const ProbabilityMap& p, Spacing3 spacing = {});

}  // namespace fpl
