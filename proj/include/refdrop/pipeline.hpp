#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "refdrop/attention.hpp"
#include "refdrop/matrix.hpp"

// A small untrained, seeded denoiser run as a batch. Sample 0 (or samples
// 0..N-1 for a multi-reference policy) is denoised with plain self-attention
// and publishes its per-layer keys/values every step; the remaining samples
// attend according to the configured policy at every attention layer.
//
// Network, per sample, on the flattened latent x (L = side*side tokens):
//   h = x * w_in + P + t * w_time
//   repeat per block:
//     n = rmsnorm(h); A = attend(n Wq, n Wk, n Wv)
//     h = h + A Wo
//     h = h + tanh(rmsnorm(h) Wmix)
//   prediction = tanh(rmsnorm(h) w_out)
// Sampler: noise level t_s = 1 - s/T, x <- pred + (t_{s+1}/t_s)(x - pred).

namespace refdrop::pipeline {

struct PipelineConfig {
  std::size_t latent_size = 16;
  std::size_t model_dim = 32;
  std::size_t num_blocks = 4;
  std::size_t key_dim = 32;
  std::size_t value_dim = 32;
  std::size_t steps = 20;
  std::size_t batch_size = 4;
  AttentionPolicy policy = policy::Rfg{0.35};
  // Optional per-block scalar for the Rfg policy; empty means the policy's own.
  std::vector<double> layer_coefficients;
  std::uint64_t weight_seed = 42;
  std::uint64_t noise_seed = 7;
  // Samples whose initial noise is copied from sample 0.
  std::vector<std::size_t> shared_noise;

  std::size_t tokens() const { return latent_size * latent_size; }
};

/// Throws std::invalid_argument naming the violated constraint.
void validate(const PipelineConfig& config);

template <typename T>
struct BlockWeights {
  Matrix<T> query;   // model_dim x key_dim
  Matrix<T> key;     // model_dim x key_dim
  Matrix<T> value;   // model_dim x value_dim
  Matrix<T> output;  // value_dim x model_dim
  Matrix<T> mix;     // model_dim x model_dim

  bool operator==(const BlockWeights&) const = default;
};

template <typename T>
struct DenoiserWeights {
  Matrix<T> input;     // 1 x model_dim
  Matrix<T> time;      // 1 x model_dim
  Matrix<T> position;  // L x model_dim
  std::vector<BlockWeights<T>> blocks;
  Matrix<T> output;    // model_dim x 1

  bool operator==(const DenoiserWeights&) const = default;
};

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)), drawn from one generator in
/// the order: input, time, position, then per block query, key, value, output,
/// mix, then output. Position uses fan_in = 1.
template <typename T>
DenoiserWeights<T> init_denoiser(std::uint64_t seed, const PipelineConfig& config);

/// FNV-1a digest over every weight matrix in initialization order.
template <typename T>
std::uint64_t weights_digest(const DenoiserWeights<T>& w);

template <typename T>
using Batch = std::vector<Matrix<T>>;

/// steps[t][i] is the latent of sample i after t denoising steps; steps[0] is
/// the initial noise.
template <typename T>
struct Trajectory {
  std::vector<Batch<T>> steps;

  const Batch<T>& final() const { return steps.back(); }
};

/// Standard-normal noise per sample from derive_seed(noise_seed, sample).
template <typename T>
Batch<T> initial_noise(const PipelineConfig& config);

/// One denoising step for the whole batch. References run first and refill
/// `cache` (one ReferenceKV per reference) from their own step-`step` latents;
/// guided samples then read it.
template <typename T>
Batch<T> denoise_step(const Batch<T>& latents, std::size_t step, const DenoiserWeights<T>& weights,
                      const PipelineConfig& config, std::vector<ReferenceKV<T>>& cache);

template <typename T>
Trajectory<T> generate_batch(const PipelineConfig& config);

template <typename T>
Trajectory<T> generate_batch(const PipelineConfig& config, const DenoiserWeights<T>& weights);

/// ||latent_i(t) - latent_0(t)||_F for every recorded step.
template <typename T>
std::vector<double> trajectory_distance(const Trajectory<T>& trajectory, std::size_t sample);

}  // namespace refdrop::pipeline
