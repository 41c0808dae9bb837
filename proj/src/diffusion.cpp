#include "swapdiff/diffusion.hpp"

#include <cmath>

namespace swapdiff {

double NoiseSchedule::alpha_bar_at(int64_t t) const {
    if (t < 0) return 1.0;
    if (t >= T) {
        throw ConfigError("timestep " + std::to_string(t) + " outside schedule of length " +
                          std::to_string(T));
    }
    return alpha_bar[static_cast<size_t>(t)];
}

NoiseSchedule make_schedule(int64_t T, double beta_start, double beta_end) {
    if (T < 1) throw ConfigError("make_schedule: T must be >= 1");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
        throw ConfigError("make_schedule: need 0 < beta_start <= beta_end < 1, got [" +
                          std::to_string(beta_start) + ", " + std::to_string(beta_end) + "]");
    }
    NoiseSchedule s;
    s.T = T;
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    s.alpha_bar.resize(static_cast<size_t>(T));
    double prod = 1.0;
    for (int64_t t = 0; t < T; ++t) {
        double beta = T == 1 ? beta_start
                             : beta_start + (beta_end - beta_start) * static_cast<double>(t) /
                                                static_cast<double>(T - 1);
        prod *= 1.0 - beta;
        s.alpha_bar[static_cast<size_t>(t)] = prod;
    }
    return s;
}

void SamplerConfig::validate(const NoiseSchedule& sched) const {
    if (eta < 0.0 || eta > 1.0) throw ConfigError("SamplerConfig: eta must be in [0,1]");
    if (num_steps < 1 || num_steps > sched.T) {
        throw ConfigError("SamplerConfig: num_steps must be in [1, T]");
    }
    if (cfg_scale < 0.0) throw ConfigError("SamplerConfig: cfg_scale must be >= 0");
}

Tensor add_noise(const Tensor& x0, int64_t t, const Tensor& eps, const NoiseSchedule& sched) {
    if (x0.shape() != eps.shape()) {
        throw DimensionError("add_noise: x0 " + x0.shape_str() + " vs eps " + eps.shape_str());
    }
    const double ab = sched.alpha_bar_at(t);
    return add(scale(x0, std::sqrt(ab)), scale(eps, std::sqrt(1.0 - ab)));
}

Tensor predict_x0(const Tensor& x_t, const Tensor& eps_pred, int64_t t,
                  const NoiseSchedule& sched) {
    if (x_t.shape() != eps_pred.shape()) {
        throw DimensionError("predict_x0: x_t " + x_t.shape_str() + " vs eps " +
                             eps_pred.shape_str());
    }
    const double ab = sched.alpha_bar_at(t);
    if (ab <= 0.0) throw SingularityError("predict_x0: alpha_bar is zero at t=" + std::to_string(t));
    return scale(sub(x_t, scale(eps_pred, std::sqrt(1.0 - ab))), 1.0 / std::sqrt(ab));
}

double ddim_sigma(double eta, double ab_t, double ab_prev) {
    if (eta == 0.0) return 0.0;
    return eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * std::sqrt(1.0 - ab_t / ab_prev);
}

Tensor ddim_step(const Tensor& x_t, const Tensor& eps_pred, int64_t t, int64_t t_prev,
                 const SamplerConfig& cfg, const NoiseSchedule& sched, Rng& rng) {
    if (t_prev >= t) {
        throw ContractError("ddim_step: t_prev must precede t (" + std::to_string(t_prev) +
                            " !< " + std::to_string(t) + ")");
    }
    const double ab_t = sched.alpha_bar_at(t);
    const double ab_prev = sched.alpha_bar_at(t_prev);
    const double sigma = ddim_sigma(cfg.eta, ab_t, ab_prev);
    const double dir_sq = 1.0 - ab_prev - sigma * sigma;
    if (dir_sq < -1e-15) {
        throw ConfigError("ddim_step: eta too large for schedule at t=" + std::to_string(t));
    }
    Tensor x0 = predict_x0(x_t, eps_pred, t, sched);
    Tensor out = add(scale(x0, std::sqrt(ab_prev)), scale(eps_pred, std::sqrt(std::max(0.0, dir_sq))));
    if (sigma > 0.0) {
        Tensor z = Tensor::randn(x_t.shape(), rng);
        out = add(out, scale(z, sigma));
    }
    return out;
}

Tensor inpaint_blend(const Tensor& x_t_gen, const Tensor& x_targ, const Tensor& mask, int64_t t,
                     const NoiseSchedule& sched, Rng& rng) {
    if (x_t_gen.shape() != x_targ.shape() || x_t_gen.shape() != mask.shape()) {
        throw DimensionError("inpaint_blend: shapes " + x_t_gen.shape_str() + ", " +
                             x_targ.shape_str() + ", " + mask.shape_str() + " must agree");
    }
    for (double m : mask.data()) {
        if (!(m >= 0.0 && m <= 1.0)) {
            throw ContractError("inpaint_blend: mask values must lie in [0,1]");
        }
    }
    Tensor z = Tensor::randn(x_targ.shape(), rng);
    Tensor known = t < 0 ? x_targ : add_noise(x_targ, t, z, sched);
    std::vector<double> out(x_t_gen.data().size());
    for (size_t i = 0; i < out.size(); ++i) {
        const double m = mask.data()[i];
        out[i] = m == 1.0 ? x_t_gen.data()[i]
                          : (m == 0.0 ? known.data()[i]
                                      : m * x_t_gen.data()[i] + (1.0 - m) * known.data()[i]);
    }
    return Tensor::from_data(x_t_gen.shape(), std::move(out));
}

std::vector<int64_t> sample_timesteps(int64_t T, int64_t num_steps) {
    std::vector<int64_t> ts(static_cast<size_t>(num_steps));
    for (int64_t i = 0; i < num_steps; ++i) {
        ts[static_cast<size_t>(i)] = (num_steps - 1 - i) * T / num_steps;
    }
    // descending, last transition targets t = -1 (clean)
    return ts;
}

Tensor sample(const EpsModel& model, ConditioningBundle& cond, const SamplerConfig& cfg,
              const NoiseSchedule& sched, const std::vector<int64_t>& latent_shape,
              const SamplerHooks& hooks) {
    cfg.validate(sched);
    Rng rng(cfg.seed);
    std::vector<int64_t> ts = sample_timesteps(sched.T, cfg.num_steps);

    Tensor x = Tensor::randn(latent_shape, rng);
    SampleState state;
    for (size_t i = 0; i < ts.size(); ++i) {
        const int64_t t = ts[i];
        const int64_t t_prev = i + 1 < ts.size() ? ts[i + 1] : -1;
        Tensor eps = model(x, t, cond);

        state.x_t = x;
        state.t = t;
        state.step = static_cast<int64_t>(i);
        state.x0_pred = predict_x0(x, eps, t, sched);
        if (hooks.guidance) {
            GuidanceResult res = hooks.guidance(state, cond);
            if (res.eps.defined()) {
                eps = res.eps;
                state.x0_pred = predict_x0(x, eps, t, sched);
            }
        }

        x = ddim_step(x, eps, t, t_prev, cfg, sched, rng);
        if (hooks.inpaint) x = hooks.inpaint(x, t_prev);
    }
    return x;
}

}  // namespace swapdiff
