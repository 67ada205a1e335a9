#include "fpl/dualnorm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fpl/core/error.hpp"
#include "fpl/core/losses.hpp"
#include "fpl/data/preprocess.hpp"
#include "fpl/nn/adam.hpp"

namespace fpl::dualnorm {

using nn::Tensor;

namespace {

struct Batch {
  Tensor images;
  Tensor onehot;
  std::vector<std::vector<float>> weights;  // empty entries: unweighted
};

Batch draw(const TrainStream& s, const TrainConfig& cfg, int num_classes, Rng& rng) {
  const Dims3 p = cfg.patch;
  Batch b{Tensor({cfg.batch, 1, p.depth, p.height, p.width}), Tensor({cfg.batch, num_classes, p.depth, p.height, p.width}),
          {}};
  const std::size_t vox = p.voxels();
  for (int n = 0; n < cfg.batch; ++n) {
    const TrainCase& c = s.cases[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(s.cases.size()) - 1))];
    const auto sample = data::sample_patch(*c.image, c.label, p, rng);
    std::copy(sample.image.values().begin(), sample.image.values().end(), b.images.sample(n));
    float* oh = b.onehot.sample(n);
    const auto& lab = *sample.label;
    for (std::size_t i = 0; i < vox; ++i) oh[static_cast<std::size_t>(lab[i]) * vox + i] = 1.0f;
    if (c.weight) {
      const Dims3 d = c.image->dims();
      const WeightMap padded = data::reflect_pad(
          *c.weight, {std::max(d.depth, p.depth), std::max(d.height, p.height), std::max(d.width, p.width)});
      const WeightMap w = data::extract(padded, sample.corner, p);
      b.weights.emplace_back(w.values().begin(), w.values().end());
    } else {
      b.weights.emplace_back();
    }
  }
  return b;
}

}  // namespace

std::vector<EpochLog> train_segnet(DualDomainSegNet& net, const std::vector<TrainStream>& streams,
                                   const TrainConfig& cfg, const std::function<void(const EpochLog&)>& on_epoch) {
  if (streams.empty()) throw ValidationError("training needs at least one stream");
  if (cfg.epochs < 1 || cfg.batch < 1) throw ValidationError("training: epochs and batch must be positive");
  for (const auto& s : streams) {
    if (s.cases.empty()) throw ValidationError("training stream '" + s.name + "' is empty");
    for (const auto& c : s.cases)
      if (!c.image || !c.label) throw ValidationError("training stream '" + s.name + "' has an unlabelled case");
  }
  net.check_input({cfg.batch, 1, cfg.patch.depth, cfg.patch.height, cfg.patch.width});
  std::size_t largest = 0;
  for (const auto& s : streams) largest = std::max(largest, s.cases.size());
  const int steps = cfg.steps_per_epoch > 0
                        ? cfg.steps_per_epoch
                        : static_cast<int>((largest + static_cast<std::size_t>(cfg.batch) - 1) / static_cast<std::size_t>(cfg.batch));

  const int C = net.config().num_classes;
  nn::Adam opt(net.parameters(), {cfg.lr, 0.9, 0.999, 1e-8});
  std::vector<Rng> patch_rng, drop_rng;
  for (const auto& s : streams) {
    patch_rng.emplace_back(substream_seed(cfg.seed, "patches/" + s.name));
    drop_rng.emplace_back(substream_seed(cfg.seed, "dropout/" + s.name));
  }

  std::vector<EpochLog> logs;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochLog log;
    log.epoch = epoch;
    log.stream_loss.assign(streams.size(), 0.0);
    for (int step = 0; step < steps; ++step) {
      opt.zero_grad();
      for (std::size_t k = 0; k < streams.size(); ++k) {
        const Batch b = draw(streams[k], cfg, C, patch_rng[k]);
        const Tensor probs = net.forward(b.images, streams[k].domain, Mode::train, &drop_rng[k]);
        const std::size_t n_el = probs.shape().sample_size();
        Tensor grad(probs.shape());
        double loss = 0.0;
        std::vector<float> g(n_el);
        for (int n = 0; n < cfg.batch; ++n) {
          const std::span<const float> p(probs.sample(n), n_el), y(b.onehot.sample(n), n_el);
          const auto& w = b.weights[static_cast<std::size_t>(n)];
          loss += w.empty() ? soft_dice<float>(p, y, C, g) : weighted_dice<float>(p, y, w, C, g);
          float* dst = grad.sample(n);
          for (std::size_t i = 0; i < n_el; ++i) dst[i] = g[i] / static_cast<float>(cfg.batch);
        }
        loss /= cfg.batch;
        if (!std::isfinite(loss)) {
          std::ostringstream os;
          os << "non-finite loss in stream '" << streams[k].name << "' at epoch " << epoch << " step " << step;
          if (!logs.empty()) os << "; previous epoch total " << logs.back().total;
          throw NumericError(os.str());
        }
        net.backward(grad);
        log.stream_loss[k] += loss;
      }
      opt.step();
    }
    for (auto& l : log.stream_loss) {
      l /= steps;
      log.total += l;
    }
    logs.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return logs;
}

ProbabilityMap predict_volume(const DualDomainSegNet& net, const Volume3D& x, DomainTag d, Rng* dropout_rng) {
  const int f = net.config().downsample_factor();
  const Dims3 dims = x.dims();
  const Dims3 padded{(dims.depth + f - 1) / f * f, (dims.height + f - 1) / f * f, (dims.width + f - 1) / f * f};
  if (padded == dims) return to_probability_map(net.predict(to_tensor(x), d, dropout_rng));
  const ProbabilityMap full = to_probability_map(net.predict(to_tensor(data::reflect_pad(x, padded)), d, dropout_rng));
  ProbabilityMap out(dims, full.channels());
  for (int c = 0; c < full.channels(); ++c)
    for (int z = 0; z < dims.depth; ++z)
      for (int y = 0; y < dims.height; ++y)
        for (int xx = 0; xx < dims.width; ++xx)
          out.at(c, (static_cast<std::size_t>(z) * dims.height + y) * dims.width + xx) =
              full.at(c, (static_cast<std::size_t>(z) * padded.height + y) * padded.width + xx);
  return out;
}


std::vector<int> tile_starts(int extent, int patch, double overlap) {
  if (patch < 1 || !(overlap >= 0.0 && overlap < 1.0)) throw ValidationError("tiling: bad patch size or overlap");
  if (extent <= patch) return {0};
  const int stride = std::max(1, static_cast<int>(std::floor(patch * (1.0 - overlap))));
  std::vector<int> starts;
  for (int s = 0; s + patch < extent; s += stride) starts.push_back(s);
  starts.push_back(extent - patch);
  return starts;
}

ProbabilityMap predict_tiled(const DualDomainSegNet& net, const Volume3D& x, DomainTag d, const Tiling& tiling,
                             Rng* dropout_rng) {
  const Dims3 dims = x.dims();
  const Dims3 p = tiling.patch;
  net.check_input({1, 1, p.depth, p.height, p.width});
  const Dims3 padded{std::max(dims.depth, p.depth), std::max(dims.height, p.height), std::max(dims.width, p.width)};
  const Volume3D src = padded == dims ? x : data::reflect_pad(x, padded);

  std::vector<Index3> corners;
  for (int z : tile_starts(padded.depth, p.depth, tiling.z_overlap))
    for (int y : tile_starts(padded.height, p.height, tiling.inplane_overlap))
      for (int xx : tile_starts(padded.width, p.width, tiling.inplane_overlap)) corners.push_back({z, y, xx});

  const int C = net.config().num_classes;
  std::vector<double> acc(static_cast<std::size_t>(C) * padded.voxels(), 0.0);
  std::vector<int> hits(padded.voxels(), 0);
  const std::size_t chunk = static_cast<std::size_t>(std::max(1, tiling.tiles_per_forward));
  const std::size_t pv = p.voxels();
  for (std::size_t first = 0; first < corners.size(); first += chunk) {
    const std::size_t n = std::min(chunk, corners.size() - first);
    std::vector<Volume3D> tiles;
    std::vector<const Volume3D*> ptrs;
    tiles.reserve(n);
    for (std::size_t k = 0; k < n; ++k) tiles.push_back(data::extract(src, corners[first + k], p));
    for (const auto& t : tiles) ptrs.push_back(&t);
    const Tensor probs = net.predict(to_tensor(ptrs), d, dropout_rng);
    for (std::size_t k = 0; k < n; ++k) {
      const Index3 c = corners[first + k];
      const float* out = probs.sample(static_cast<int>(k));
      for (int z = 0; z < p.depth; ++z)
        for (int y = 0; y < p.height; ++y)
          for (int xx = 0; xx < p.width; ++xx) {
            const std::size_t local = (static_cast<std::size_t>(z) * p.height + y) * p.width + xx;
            const std::size_t global = src.offset(c.z + z, c.y + y, c.x + xx);
            ++hits[global];
            for (int ch = 0; ch < C; ++ch)
              acc[static_cast<std::size_t>(ch) * padded.voxels() + global] += out[static_cast<std::size_t>(ch) * pv + local];
          }
    }
  }

  ProbabilityMap result(dims, C);
  for (int z = 0; z < dims.depth; ++z)
    for (int y = 0; y < dims.height; ++y)
      for (int xx = 0; xx < dims.width; ++xx) {
        const std::size_t g = src.offset(z, y, xx);
        const std::size_t o = x.offset(z, y, xx);
        for (int ch = 0; ch < C; ++ch)
          result.at(ch, o) = static_cast<float>(acc[static_cast<std::size_t>(ch) * padded.voxels() + g] / hits[g]);
      }
  return result;
}

std::vector<ProbabilityMap> mc_dropout_predict(const DualDomainSegNet& net, const Volume3D& x, DomainTag d, int K,
                                               std::uint64_t seed, const Tiling& tiling) {
  if (K < 2) throw ValidationError("MC dropout needs K >= 2, got " + std::to_string(K));
  std::vector<ProbabilityMap> out;
  for (int k = 0; k < K; ++k) {
    Rng rng(substream_seed(seed, "mc" + std::to_string(k)));
    out.push_back(predict_tiled(net, x, d, tiling, &rng));
  }
  return out;
}

LabelMap argmax_labels(const ProbabilityMap& p, Spacing3 spacing) {
  LabelMap y(p.dims(), p.channels(), spacing);
  for (std::size_t i = 0; i < p.voxels(); ++i) {
    int best = 0;
    for (int c = 1; c < p.channels(); ++c)
      if (p.at(c, i) > p.at(best, i)) best = c;
    y[i] = static_cast<std::uint8_t>(best);
  }
  return y;
}

}  // namespace fpl::dualnorm
