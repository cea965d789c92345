#include "diffusion/schedule.hpp"

#include <algorithm>
#include <cmath>

#include "common/error.hpp"
#include "tensor/ops.hpp"

namespace ds {

DiffusionSchedule DiffusionSchedule::linear(std::size_t steps, double beta_start, double beta_end) {
  if (steps < 2) throw ConfigError("diffusion schedule needs at least 2 steps");
  DiffusionSchedule s;
  s.step_count = steps;
  double prod = 1.0;
  for (std::size_t i = 0; i < steps; ++i) {
    const double beta = beta_start + (beta_end - beta_start) * static_cast<double>(i) / static_cast<double>(steps - 1);
    s.betas.push_back(beta);
    prod *= 1.0 - beta;
    s.alphas_cumprod.push_back(prod);
  }
  s.validate();
  return s;
}

void DiffusionSchedule::validate() const {
  if (betas.size() != step_count || alphas_cumprod.size() != step_count) {
    throw ConfigError("diffusion schedule: table sizes differ from step_count");
  }
  for (std::size_t i = 0; i < step_count; ++i) {
    if (!(betas[i] > 0 && betas[i] < 1)) throw ConfigError("diffusion schedule: beta outside (0, 1)");
    if (i > 0 && betas[i] < betas[i - 1]) throw ConfigError("diffusion schedule: betas must be non-decreasing");
    if (i > 0 && !(alphas_cumprod[i] < alphas_cumprod[i - 1])) {
      throw ConfigError("diffusion schedule: alphas_cumprod must strictly decrease");
    }
  }
}

std::vector<double> q_sample(const DiffusionSchedule& schedule, const std::vector<double>& x0, std::size_t t,
                             const std::vector<double>& noise) {
  if (t >= schedule.step_count) throw ConfigError("timestep " + std::to_string(t) + " out of range");
  if (x0.size() != noise.size()) throw ShapeError("q_sample: x0 and noise sizes differ");
  const double a = std::sqrt(schedule.alpha_bar(t)), b = std::sqrt(1.0 - schedule.alpha_bar(t));
  std::vector<double> out(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + b * noise[i];
  return out;
}

Tensor q_sample(const DiffusionSchedule& schedule, const Tensor& x0, std::size_t t, const Tensor& noise) {
  if (x0.shape() != noise.shape()) throw ShapeError("q_sample: x0 and noise shapes differ");
  const std::vector<double> xv(x0.values().begin(), x0.values().end());
  const std::vector<double> nv(noise.values().begin(), noise.values().end());
  return Tensor(x0.shape(), q_sample(schedule, xv, t, nv));
}

Tensor cfg_combine(const Tensor& eps_cond, const Tensor& eps_uncond, double scale) {
  if (eps_cond.shape() != eps_uncond.shape()) throw ShapeError("cfg: prediction shapes differ");
  if (scale == 1.0) return eps_cond;
  return ops::add(eps_uncond, ops::scale(ops::sub(eps_cond, eps_uncond), scale));
}

void DropoutPolicy::validate() const {
  if (!(p_neighbor >= 0 && p_neighbor <= 1) || !(p_conditions >= 0 && p_conditions <= 1)) {
    throw ConfigError("dropout probabilities must lie in [0, 1]");
  }
}

DropDecision DropoutPolicy::draw(std::mt19937_64& rng) const {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  DropDecision d;
  d.drop_neighbor = u(rng) < p_neighbor;
  d.drop_conditions = u(rng) < p_conditions;
  return d;
}

std::vector<std::size_t> ddim_timesteps(const DiffusionSchedule& schedule, std::size_t steps) {
  if (steps == 0 || steps > schedule.step_count) {
    throw ConfigError("sampling steps must be in [1, " + std::to_string(schedule.step_count) + "]");
  }
  std::vector<std::size_t> ts;
  for (std::size_t i = 0; i < steps; ++i) {
    const double frac = static_cast<double>(steps - i) / static_cast<double>(steps);
    ts.push_back(static_cast<std::size_t>(std::llround(frac * static_cast<double>(schedule.step_count))) - 1);
  }
  return ts;
}

Tensor ddim_sample(const DiffusionSchedule& schedule, const NoisePredictor& predict, const Tensor& x_T,
                   const DdimOptions& options, const std::vector<bool>& fixed_mask) {
  if (!fixed_mask.empty() && fixed_mask.size() != x_T.numel()) throw ShapeError("ddim: mask size differs from sample");
  NoGradGuard no_grad;
  const auto ts = ddim_timesteps(schedule, options.steps);
  std::vector<double> x(x_T.values().begin(), x_T.values().end());
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const std::size_t t = ts[i];
    const double ab = schedule.alpha_bar(t);
    const double ab_prev = i + 1 < ts.size() ? schedule.alpha_bar(ts[i + 1]) : 1.0;
    const Tensor eps = predict(Tensor(x_T.shape(), x), t);
    if (eps.numel() != x.size()) throw ShapeError("ddim: predictor returned " + shape_str(eps.shape()));
    const auto& e = eps.values();
    const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
    const double sa_prev = std::sqrt(ab_prev), sb_prev = std::sqrt(1.0 - ab_prev);
    for (std::size_t j = 0; j < x.size(); ++j) {
      if (!fixed_mask.empty() && fixed_mask[j]) continue;
      double x0 = (x[j] - sb * e[j]) / sa;
      double eps_j = e[j];
      if (options.clip_x0 && (x0 > 1.0 || x0 < -1.0)) {
        x0 = std::clamp(x0, -1.0, 1.0);
        eps_j = (x[j] - sa * x0) / sb;
      }
      x[j] = sa_prev * x0 + sb_prev * eps_j;
    }
  }
  return Tensor(x_T.shape(), std::move(x));
}

}  // namespace ds
