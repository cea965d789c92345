#pragma once

#include <functional>
#include <random>
#include <vector>

#include "tensor/tensor.hpp"

namespace ds {

struct DiffusionSchedule {
  std::size_t step_count = 0;
  std::vector<double> betas;
  std::vector<double> alphas_cumprod;

  // Linear betas from beta_start to beta_end.
  static DiffusionSchedule linear(std::size_t steps = 1000, double beta_start = 1e-4, double beta_end = 0.02);
  void validate() const;
  double alpha_bar(std::size_t t) const { return alphas_cumprod.at(t); }
};

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) noise, elementwise.
std::vector<double> q_sample(const DiffusionSchedule& schedule, const std::vector<double>& x0, std::size_t t,
                             const std::vector<double>& noise);
Tensor q_sample(const DiffusionSchedule& schedule, const Tensor& x0, std::size_t t, const Tensor& noise);

inline constexpr double kDefaultCfgScale = 2.5;

// eps_u + s (eps_c - eps_u); returns eps_c unchanged when s == 1.
Tensor cfg_combine(const Tensor& eps_cond, const Tensor& eps_uncond, double scale);

struct DropDecision {
  bool drop_neighbor = false;
  bool drop_conditions = false;
};

struct DropoutPolicy {
  double p_neighbor = 0.5;
  double p_conditions = 0.2;

  void validate() const;
  // Two independent uniform draws, neighbor first.
  DropDecision draw(std::mt19937_64& rng) const;
};

// DDIM timesteps, descending, `steps` values evenly spaced over [0, step_count).
std::vector<std::size_t> ddim_timesteps(const DiffusionSchedule& schedule, std::size_t steps);

// Predicts noise for the current sample x_t at timestep t.
using NoisePredictor = std::function<Tensor(const Tensor& x_t, std::size_t t)>;

struct DdimOptions {
  std::size_t steps = 50;
  bool clip_x0 = true;
};

// Deterministic (eta = 0) reverse process starting from x_T. `fixed_mask` (same numel
// as x_T, or empty) marks entries that are held clean and never updated.
Tensor ddim_sample(const DiffusionSchedule& schedule, const NoisePredictor& predict, const Tensor& x_T,
                   const DdimOptions& options, const std::vector<bool>& fixed_mask = {});

}  // namespace ds
