#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace fpl::nn {

/// Where a parameter sits in the shared/per-domain partition.
enum class ParamRole {
  shared,
  gamma_source,
  beta_source,
  gamma_target,
  beta_target,
  running_mean_source,
  running_var_source,
  running_mean_target,
  running_var_target,
};

std::string_view to_string(ParamRole role);
ParamRole parse_param_role(std::string_view text);
bool is_buffer(ParamRole role);  // running statistics: saved, never optimised

struct Parameter {
  std::string name;
  std::vector<int> shape;
  std::vector<float> value;
  std::vector<float> grad;
  ParamRole role = ParamRole::shared;
  /// Set by backward passes; the optimiser skips parameters that received no gradient.
  bool touched = false;

  Parameter() = default;
  Parameter(std::string name, std::vector<int> shape, ParamRole role, float fill = 0.0f);

  std::size_t size() const { return value.size(); }
  void zero_grad();
};

void zero_grad(std::span<Parameter* const> params);

/// Flat little-endian float32 concatenation of every parameter value, in order.
void write_blob(std::span<const Parameter* const> params, const std::filesystem::path& path);
void read_blob(std::span<Parameter* const> params, const std::filesystem::path& path);

}  // namespace fpl::nn
