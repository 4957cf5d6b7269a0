#include "refdrop/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "refdrop/random.hpp"

namespace refdrop::pipeline {

void validate(const PipelineConfig& c) {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument(what);
  };
  require(c.latent_size >= 1, "latent_size must be at least 1");
  require(c.model_dim >= 1 && c.key_dim >= 1 && c.value_dim >= 1,
          "model_dim, key_dim and value_dim must be positive");
  require(c.num_blocks >= 1, "num_blocks must be at least 1");
  require(c.steps >= 1, "steps must be at least 1");
  require(c.batch_size >= 1, "batch_size must be at least 1");
  const std::size_t refs = reference_count(c.policy);
  if (refs > 0) {
    require(c.batch_size >= refs + 1,
            "batch_size must be at least " + std::to_string(refs + 1) + " for policy " +
                policy_name(c.policy));
  }
  if (const auto* multi = std::get_if<policy::RfgMulti>(&c.policy)) {
    require(!multi->coefficients.empty(), "rfg_multi needs at least one coefficient");
  }
  if (!c.layer_coefficients.empty()) {
    require(std::holds_alternative<policy::Rfg>(c.policy),
            "layer_coefficients apply only to the rfg policy");
    require(c.layer_coefficients.size() == c.num_blocks,
            "layer_coefficients must have one entry per block");
  }
  for (std::size_t i : c.shared_noise) {
    require(i < c.batch_size, "shared_noise index " + std::to_string(i) + " is outside the batch");
  }
}

template <typename T>
DenoiserWeights<T> init_denoiser(std::uint64_t seed, const PipelineConfig& c) {
  Xoshiro256 rng(seed);
  auto draw = [&](std::size_t rows, std::size_t cols, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return random_matrix<T>(rng, rows, cols, -bound, bound);
  };
  Matrix<T> input = draw(1, c.model_dim, 1);
  Matrix<T> time = draw(1, c.model_dim, 1);
  Matrix<T> position = draw(c.tokens(), c.model_dim, 1);
  std::vector<BlockWeights<T>> blocks;
  for (std::size_t b = 0; b < c.num_blocks; ++b) {
    Matrix<T> q = draw(c.model_dim, c.key_dim, c.model_dim);
    Matrix<T> k = draw(c.model_dim, c.key_dim, c.model_dim);
    Matrix<T> v = draw(c.model_dim, c.value_dim, c.model_dim);
    Matrix<T> o = draw(c.value_dim, c.model_dim, c.value_dim);
    Matrix<T> m = draw(c.model_dim, c.model_dim, c.model_dim);
    blocks.push_back({std::move(q), std::move(k), std::move(v), std::move(o), std::move(m)});
  }
  Matrix<T> output = draw(c.model_dim, 1, c.model_dim);
  return {std::move(input), std::move(time), std::move(position), std::move(blocks),
          std::move(output)};
}

template <typename T>
std::uint64_t weights_digest(const DenoiserWeights<T>& w) {
  std::uint64_t h = 0;
  auto fold = [&h](const Matrix<T>& m) { h = h * 0x100000001b3ULL ^ digest(m); };
  fold(w.input);
  fold(w.time);
  fold(w.position);
  for (const auto& b : w.blocks) {
    fold(b.query);
    fold(b.key);
    fold(b.value);
    fold(b.output);
    fold(b.mix);
  }
  fold(w.output);
  return h;
}

template <typename T>
Batch<T> initial_noise(const PipelineConfig& c) {
  Batch<T> batch;
  for (std::size_t i = 0; i < c.batch_size; ++i) {
    Xoshiro256 rng(derive_seed(c.noise_seed, i));
    std::normal_distribution<double> normal;
    std::vector<T> data(c.tokens());
    for (T& x : data) x = static_cast<T>(normal(rng));
    batch.emplace_back(c.latent_size, c.latent_size, std::move(data));
  }
  for (std::size_t i : c.shared_noise) batch[i] = batch[0];
  return batch;
}

namespace {

template <typename T>
Matrix<T> rms_norm(const Matrix<T>& h) {
  Matrix<T> out(h.rows(), h.cols());
  for (std::size_t r = 0; r < h.rows(); ++r) {
    auto in = h.row(r);
    double ss = 0.0;
    for (T v : in) ss += static_cast<double>(v) * static_cast<double>(v);
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(in.size()) + 1e-6);
    auto o = out.row(r);
    for (std::size_t j = 0; j < in.size(); ++j) o[j] = static_cast<T>(in[j] * inv);
  }
  return out;
}

template <typename T>
void tanh_inplace(Matrix<T>& m) {
  for (T& v : m.values()) v = std::tanh(v);
}

// Either records the sample's keys/values (reference) or reads the caches
// (guided). Exactly one of `record` / `refs` is used.
template <typename T>
Matrix<T> forward(const Matrix<T>& latent, double noise_level, const DenoiserWeights<T>& w,
                  const PipelineConfig& c, ReferenceKV<T>* record,
                  std::span<const ReferenceKV<T>> refs) {
  const Matrix<T> tokens(c.tokens(), 1, std::vector<T>(latent.values().begin(),
                                                       latent.values().end()));
  Matrix<T> h = add(matmul(tokens, w.input), w.position);
  for (std::size_t r = 0; r < h.rows(); ++r) {
    auto row = h.row(r);
    auto te = w.time.row(0);
    for (std::size_t j = 0; j < row.size(); ++j)
      row[j] = static_cast<T>(row[j] + noise_level * te[j]);
  }

  if (record) record->layers.clear();
  for (std::size_t b = 0; b < w.blocks.size(); ++b) {
    const BlockWeights<T>& blk = w.blocks[b];
    const Matrix<T> n = rms_norm(h);
    Matrix<T> q = project(n, blk.query);
    Matrix<T> k = project(n, blk.key);
    Matrix<T> v = project(n, blk.value);
    Matrix<T> attended = [&] {
      if (record) {
        Matrix<T> out = attention(q, k, v);
        record->layers.push_back({std::move(k), std::move(v)});
        return out;
      }
      std::optional<double> layer_c;
      if (!c.layer_coefficients.empty()) layer_c = c.layer_coefficients[b];
      return apply_policy(q, k, v, c.policy, refs, b, layer_c);
    }();
    h = add(h, matmul(attended, blk.output));
    Matrix<T> mixed = matmul(rms_norm(h), blk.mix);
    tanh_inplace(mixed);
    h = add(h, mixed);
  }
  Matrix<T> pred = matmul(rms_norm(h), w.output);
  tanh_inplace(pred);
  return Matrix<T>(c.latent_size, c.latent_size,
                   std::vector<T>(pred.values().begin(), pred.values().end()));
}

template <typename T>
Matrix<T> sampler_update(const Matrix<T>& x, const Matrix<T>& pred, std::size_t step,
                         std::size_t total) {
  const double ratio = static_cast<double>(total - step - 1) / static_cast<double>(total - step);
  Matrix<T> out = pred;
  auto xs = x.values();
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i)
    o[i] = static_cast<T>(o[i] + ratio * (static_cast<double>(xs[i]) - o[i]));
  return out;
}

}  // namespace

template <typename T>
Batch<T> denoise_step(const Batch<T>& latents, std::size_t step, const DenoiserWeights<T>& w,
                      const PipelineConfig& c, std::vector<ReferenceKV<T>>& cache) {
  if (latents.size() != c.batch_size) {
    throw ShapeError("denoise_step: batch has " + std::to_string(latents.size()) +
                     " latents, config expects " + std::to_string(c.batch_size));
  }
  for (const auto& x : latents) {
    if (x.rows() != c.latent_size || x.cols() != c.latent_size) {
      throw ShapeError("denoise_step: latent shape " + shape_of(x) + " does not match " +
                       shape_string(c.latent_size, c.latent_size));
    }
  }
  const double noise_level = 1.0 - static_cast<double>(step) / static_cast<double>(c.steps);
  const std::size_t refs = reference_count(c.policy);
  Batch<T> next;
  next.reserve(latents.size());

  if (refs == 0) {
    cache.clear();
    for (const auto& x : latents) {
      const Matrix<T> pred = forward<T>(x, noise_level, w, c, nullptr, {});
      next.push_back(sampler_update(x, pred, step, c.steps));
    }
    return next;
  }

  // References first: their caches must be complete before any guided sample.
  cache.resize(refs);
  for (std::size_t j = 0; j < refs; ++j) {
    const Matrix<T> pred = forward<T>(latents[j], noise_level, w, c, &cache[j], {});
    next.push_back(sampler_update(latents[j], pred, step, c.steps));
  }
  const std::span<const ReferenceKV<T>> shared(cache);
  for (std::size_t i = refs; i < latents.size(); ++i) {
    const Matrix<T> pred = forward<T>(latents[i], noise_level, w, c, nullptr, shared);
    next.push_back(sampler_update(latents[i], pred, step, c.steps));
  }
  return next;
}

template <typename T>
Trajectory<T> generate_batch(const PipelineConfig& c, const DenoiserWeights<T>& w) {
  validate(c);
  check_coefficients(c.policy);
  Trajectory<T> traj;
  traj.steps.reserve(c.steps + 1);
  traj.steps.push_back(initial_noise<T>(c));
  std::vector<ReferenceKV<T>> cache;
  for (std::size_t s = 0; s < c.steps; ++s) {
    traj.steps.push_back(denoise_step(traj.steps.back(), s, w, c, cache));
  }
  return traj;
}

template <typename T>
Trajectory<T> generate_batch(const PipelineConfig& c) {
  validate(c);
  return generate_batch<T>(c, init_denoiser<T>(c.weight_seed, c));
}

template <typename T>
std::vector<double> trajectory_distance(const Trajectory<T>& traj, std::size_t sample) {
  if (traj.steps.empty() || sample == 0 || sample >= traj.steps.front().size()) {
    throw std::out_of_range("trajectory_distance: sample " + std::to_string(sample) +
                            " is not a guided sample of this trajectory");
  }
  std::vector<double> out;
  out.reserve(traj.steps.size());
  for (const auto& batch : traj.steps) {
    out.push_back(frobenius_norm(subtract(batch[sample], batch[0])));
  }
  return out;
}

#define REFDROP_INSTANTIATE(T)                                                                 \
  template DenoiserWeights<T> init_denoiser(std::uint64_t, const PipelineConfig&);             \
  template std::uint64_t weights_digest(const DenoiserWeights<T>&);                            \
  template Batch<T> initial_noise(const PipelineConfig&);                                      \
  template Batch<T> denoise_step(const Batch<T>&, std::size_t, const DenoiserWeights<T>&,      \
                                 const PipelineConfig&, std::vector<ReferenceKV<T>>&);         \
  template Trajectory<T> generate_batch(const PipelineConfig&);                                \
  template Trajectory<T> generate_batch(const PipelineConfig&, const DenoiserWeights<T>&);     \
  template std::vector<double> trajectory_distance(const Trajectory<T>&, std::size_t);

REFDROP_INSTANTIATE(float)
REFDROP_INSTANTIATE(double)

#undef REFDROP_INSTANTIATE

}  // namespace refdrop::pipeline
