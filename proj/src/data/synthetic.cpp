#include "fpl/data/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "fpl/core/error.hpp"
#include "fpl/core/rng.hpp"
#include "fpl/data/volume_io.hpp"

namespace fpl::data {

namespace fs = std::filesystem;

namespace {

constexpr double kBackground = 0.10;
constexpr double kOrgan = 0.45;
constexpr double kFieldAmplitude = 0.04;

struct Ellipsoid {
  double cz, cy, cx;
  double rz, ry, rx;
  // Normalised radius: < 1 inside.
  double rho(double z, double y, double x) const {
    const double a = (z - cz) / rz, b = (y - cy) / ry, c = (x - cx) / rx;
    return std::sqrt(a * a + b * b + c * c);
  }
};

// Soft edge about one voxel wide.
double edge_weight(const Ellipsoid& e, double z, double y, double x) {
  const double r = e.rho(z, y, x);
  const double mean_radius = (e.rz + e.ry + e.rx) / 3.0;
  return std::clamp(0.5 + (1.0 - r) * mean_radius, 0.0, 1.0);
}

std::string case_name(const char* prefix, int i) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%03d", prefix, i);
  return buf;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (dims.depth < 16 || dims.height < 16 || dims.width < 16)
    throw ValidationError("synthetic dims must be >= 16 per axis, got " + to_string(dims));
  if (!(spacing.z > 0 && spacing.y > 0 && spacing.x > 0)) throw ValidationError("synthetic spacing must be positive");
  if (lesions_min < 0 || lesions_max < lesions_min) throw ValidationError("invalid lesion count range");
  if (!(radius_min > 0) || radius_max < radius_min) throw ValidationError("invalid lesion radius range");
  const int smallest = std::min({dims.depth, dims.height, dims.width});
  // Lesions sit inside the organ, whose radius is ~0.4 of the axis length.
  if (lesions_max > 0 && 2.0 * radius_max + 2.0 > 0.8 * smallest)
    throw ValidationError("lesion radius " + std::to_string(radius_max) + " does not fit in dims " + to_string(dims));
  if (num_source_train < 0 || num_target_train < 0 || num_target_val < 0 || num_target_test < 0)
    throw ValidationError("negative case count");
  for (const auto* a : {&source, &target}) {
    if (a->contrast_sign != 1 && a->contrast_sign != -1) throw ValidationError("contrast_sign must be +1 or -1");
    if (!(a->gamma > 0)) throw ValidationError("gamma must be positive");
    if (a->noise_min < 0 || a->noise_max < a->noise_min) throw ValidationError("invalid noise range");
  }
}

SyntheticCase synthesize_case(const SyntheticSpec& spec, DomainTag domain, const std::string& case_id) {
  spec.validate();
  Rng rng(substream_seed(spec.seed, case_id));
  const Dims3 d = spec.dims;
  const DomainAppearance& look = domain == DomainTag::source ? spec.source : spec.target;

  // Organ: a large ellipsoid around the centre.
  const Ellipsoid organ{d.depth / 2.0 + rng.uniform(-1.5, 1.5), d.height / 2.0 + rng.uniform(-1.5, 1.5),
                        d.width / 2.0 + rng.uniform(-1.5, 1.5), d.depth * rng.uniform(0.36, 0.42),
                        d.height * rng.uniform(0.36, 0.42), d.width * rng.uniform(0.36, 0.42)};

  // Lesions: centres inside the organ so that the whole lesion fits in the organ.
  std::vector<Ellipsoid> lesions;
  const int count = spec.lesions_max > 0 ? rng.uniform_int(spec.lesions_min, spec.lesions_max) : 0;
  for (int k = 0; k < count; ++k) {
    Ellipsoid e{};
    e.rz = rng.uniform(spec.radius_min, spec.radius_max);
    e.ry = rng.uniform(spec.radius_min, spec.radius_max);
    e.rx = rng.uniform(spec.radius_min, spec.radius_max);
    const double shrink_z = std::max(0.0, organ.rz - e.rz - 1.0);
    const double shrink_y = std::max(0.0, organ.ry - e.ry - 1.0);
    const double shrink_x = std::max(0.0, organ.rx - e.rx - 1.0);
    // Rejection-sample a point in the shrunken organ.
    e.cz = organ.cz, e.cy = organ.cy, e.cx = organ.cx;
    for (int attempt = 0; attempt < 64; ++attempt) {
      const double u = rng.uniform(-1, 1), v = rng.uniform(-1, 1), w = rng.uniform(-1, 1);
      if (u * u + v * v + w * w > 1.0) continue;
      e.cz = organ.cz + u * shrink_z;
      e.cy = organ.cy + v * shrink_y;
      e.cx = organ.cx + w * shrink_x;
      break;
    }
    lesions.push_back(e);
  }
  const double contrast = rng.uniform(spec.lesion_contrast_min, spec.lesion_contrast_max);
  const double noise = rng.uniform(look.noise_min, look.noise_max);

  // Smooth low-frequency bias field.
  double freq[3][3], phase[3];
  for (int k = 0; k < 3; ++k) {
    for (int a = 0; a < 3; ++a) freq[k][a] = rng.uniform(-1.5, 1.5) * 2.0 * std::numbers::pi / 32.0;
    phase[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }

  SyntheticCase out{Volume3D(d, spec.spacing), LabelMap(d, 2, spec.spacing)};
  for (int z = 0; z < d.depth; ++z)
    for (int y = 0; y < d.height; ++y)
      for (int x = 0; x < d.width; ++x) {
        double field = 0.0;
        for (int k = 0; k < 3; ++k) field += std::cos(freq[k][0] * z + freq[k][1] * y + freq[k][2] * x + phase[k]);
        field *= kFieldAmplitude / 3.0;

        const double in_organ = edge_weight(organ, z, y, x);
        double t = kBackground + (kOrgan - kBackground) * in_organ + field;
        double lesion_w = 0.0;
        bool inside = false;
        for (const auto& e : lesions) {
          lesion_w = std::max(lesion_w, edge_weight(e, z, y, x));
          inside = inside || e.rho(z, y, x) <= 1.0;
        }
        t += contrast * lesion_w;
        t = std::clamp(t, 0.0, 1.0);
        if (look.contrast_sign < 0) t = 1.0 - t;
        t = std::pow(t, look.gamma);
        t += look.base_intensity + noise * rng.normal();
        out.image.at(z, y, x) = static_cast<float>(t);
        out.label.at(z, y, x) = inside ? 1 : 0;
      }
  return out;
}

DatasetIndex generate_synthetic(const SyntheticSpec& spec, const fs::path& out_dir) {
  spec.validate();
  DatasetIndex index;
  index.num_classes = 2;
  index.normalized = false;
  nlohmann::json reference = nlohmann::json::object();

  const auto emit = [&](DomainTag domain, Split split, const char* prefix, int n, bool expose_label) {
    const fs::path dir = out_dir / std::string(fpl::to_string(domain));
    for (int i = 0; i < n; ++i) {
      const std::string id = case_name(prefix, i);
      const SyntheticCase c = synthesize_case(spec, domain, id);
      write_volume(c.image, dir / id);
      write_labels(c.label, dir / (id + "_label"));
      DatasetRecord rec{id, fs::absolute(dir / id), std::nullopt, domain, split};
      if (expose_label)
        rec.label = fs::absolute(dir / (id + "_label"));
      else
        reference[id] = (fs::path(std::string(fpl::to_string(domain))) / (id + "_label")).generic_string();
      index.records.push_back(std::move(rec));
    }
  };
  emit(DomainTag::source, Split::train, "src_train", spec.num_source_train, true);
  emit(DomainTag::target, Split::train, "tgt_train", spec.num_target_train, false);
  emit(DomainTag::target, Split::val, "tgt_val", spec.num_target_val, true);
  emit(DomainTag::target, Split::test, "tgt_test", spec.num_target_test, true);

  index.validate_unsupervised_contract();
  index.save(out_dir / "index.json");
  std::ofstream ref(out_dir / "reference_labels.json");
  ref << reference.dump(2) << "\n";
  return DatasetIndex::load(out_dir / "index.json");
}

}  // namespace fpl::data
