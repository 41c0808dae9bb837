#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "swapdiff/tensor.hpp"

namespace swapdiff {

struct ConditioningBundle;  // denoiser.hpp

// Cumulative-alpha schedule for a linear beta grid. alpha_bar[t] is the
// product of (1 - beta_s) for s <= t and is strictly decreasing.
struct NoiseSchedule {
    int64_t T = 0;
    double beta_start = 0.0;
    double beta_end = 0.0;
    std::vector<double> alpha_bar;

    // t == -1 denotes the clean endpoint (alpha_bar == 1).
    double alpha_bar_at(int64_t t) const;
};

NoiseSchedule make_schedule(int64_t T, double beta_start, double beta_end);

struct SamplerConfig {
    double eta = 0.0;        // sigma scale; 0 = deterministic DDIM
    int64_t num_steps = 20;  // sub-sequence length, <= T
    double cfg_scale = 3.0;  // classifier-free guidance weight
    uint64_t seed = 0;

    void validate(const NoiseSchedule& sched) const;
};

struct SampleState {
    Tensor x_t;
    int64_t t = 0;       // current timestep index into the full grid
    int64_t step = 0;    // sampler step index, 0-based from the noisiest
    Tensor x0_pred;      // last predicted clean sample
};

// x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps
Tensor add_noise(const Tensor& x0, int64_t t, const Tensor& eps, const NoiseSchedule& sched);

// x0_hat = (x_t - sqrt(1 - alpha_bar_t) * eps_pred) / sqrt(alpha_bar_t)
Tensor predict_x0(const Tensor& x_t, const Tensor& eps_pred, int64_t t,
                  const NoiseSchedule& sched);

// sigma_t for the transition t -> t_prev under the given eta.
double ddim_sigma(double eta, double ab_t, double ab_prev);

// One transition of the deterministic/stochastic DDIM update. With eta == 0
// no randomness is consumed.
Tensor ddim_step(const Tensor& x_t, const Tensor& eps_pred, int64_t t, int64_t t_prev,
                 const SamplerConfig& cfg, const NoiseSchedule& sched, Rng& rng);

// Keeps generation inside the mask: known regions are re-noised from the
// target at level t. mask values must lie in [0,1]; shapes must agree.
Tensor inpaint_blend(const Tensor& x_t_gen, const Tensor& x_targ, const Tensor& mask, int64_t t,
                     const NoiseSchedule& sched, Rng& rng);

// Model callback: predicts eps for (x_t, t) under the given conditioning.
using EpsModel =
    std::function<Tensor(const Tensor& x_t, int64_t t, const ConditioningBundle& cond)>;

// Guidance hook runs after each eps prediction; it may update the bundle and
// hand back a recomputed eps for the transition.
struct GuidanceResult {
    Tensor eps;  // undefined => keep the sampler's eps
};
using GuidanceHook = std::function<GuidanceResult(const SampleState&, ConditioningBundle&)>;

// Inpainting hook runs after the transition; receives the new latent and the
// timestep it now lives at (or -1 for the clean output).
using InpaintHook = std::function<Tensor(const Tensor& x, int64_t t)>;

struct SamplerHooks {
    GuidanceHook guidance;
    InpaintHook inpaint;
};

// Uniformly spaced sub-sequence of timesteps, descending; pairs with the
// previous element (or -1) form the DDIM transitions.
std::vector<int64_t> sample_timesteps(int64_t T, int64_t num_steps);

// Full DDIM loop from x_T ~ N(0, I). Per step: predict eps, run the guidance
// hook, take the transition, then let the inpainting hook overwrite known
// regions. Returns x_0.
Tensor sample(const EpsModel& model, ConditioningBundle& cond, const SamplerConfig& cfg,
              const NoiseSchedule& sched, const std::vector<int64_t>& latent_shape,
              const SamplerHooks& hooks = {});

}  // namespace swapdiff
