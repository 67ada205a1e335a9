#include "fpl/nn/parameter.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <numeric>

#include "fpl/core/error.hpp"

namespace fpl::nn {

namespace {

constexpr std::pair<ParamRole, std::string_view> kRoleNames[] = {
    {ParamRole::shared, "shared"},
    {ParamRole::gamma_source, "gamma_s"},
    {ParamRole::beta_source, "beta_s"},
    {ParamRole::gamma_target, "gamma_t"},
    {ParamRole::beta_target, "beta_t"},
    {ParamRole::running_mean_source, "running_mean_s"},
    {ParamRole::running_var_source, "running_var_s"},
    {ParamRole::running_mean_target, "running_mean_t"},
    {ParamRole::running_var_target, "running_var_t"},
};

}  // namespace

std::string_view to_string(ParamRole role) {
  for (const auto& [r, name] : kRoleNames)
    if (r == role) return name;
  return "shared";
}

ParamRole parse_param_role(std::string_view text) {
  for (const auto& [r, name] : kRoleNames)
    if (name == text) return r;
  throw ParseError("unknown parameter role '" + std::string(text) + "'", 0);
}

bool is_buffer(ParamRole role) {
  return role == ParamRole::running_mean_source || role == ParamRole::running_var_source ||
         role == ParamRole::running_mean_target || role == ParamRole::running_var_target;
}

Parameter::Parameter(std::string n, std::vector<int> s, ParamRole r, float fill)
    : name(std::move(n)), shape(std::move(s)), role(r) {
  const auto count = static_cast<std::size_t>(std::accumulate(shape.begin(), shape.end(), 1L, std::multiplies<>()));
  value.assign(count, fill);
  grad.assign(is_buffer(role) ? 0 : count, 0.0f);
}

void Parameter::zero_grad() {
  std::fill(grad.begin(), grad.end(), 0.0f);
  touched = false;
}

void zero_grad(std::span<Parameter* const> params) {
  for (auto* p : params) p->zero_grad();
}

void write_blob(std::span<const Parameter* const> params, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto* p : params)
    out.write(reinterpret_cast<const char*>(p->value.data()), static_cast<std::streamsize>(p->size() * sizeof(float)));
  if (!out) throw IoError("short write to " + path.string());
}

void read_blob(std::span<Parameter* const> params, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open " + path.string());
  const auto bytes = static_cast<std::size_t>(in.tellg());
  std::size_t expected = 0;
  for (const auto* p : params) expected += p->size() * sizeof(float);
  if (bytes != expected)
    throw TruncationError(path.string() + ": blob has " + std::to_string(bytes) + " bytes, expected " +
                          std::to_string(expected));
  in.seekg(0);
  for (auto* p : params)
    in.read(reinterpret_cast<char*>(p->value.data()), static_cast<std::streamsize>(p->size() * sizeof(float)));
}

}  // namespace fpl::nn
