#include "swapdiff/guidance.hpp"

#include <cmath>

#include "swapdiff/nn.hpp"

namespace swapdiff {

void GuidanceConfig::validate(int64_t num_steps) const {
    if (!(step_size > 0.0)) throw ConfigError("GuidanceConfig: step_size must be > 0");
    if (inner_iters < 1) throw ConfigError("GuidanceConfig: inner_iters must be >= 1");
    if (stop_loss < 0.0) throw ConfigError("GuidanceConfig: stop_loss must be >= 0");
    if (steps_active.has_value()) {
        for (int64_t s : *steps_active) {
            if (s < 0 || s >= num_steps) {
                throw ConfigError("GuidanceConfig: active step " + std::to_string(s) +
                                  " outside [0, " + std::to_string(num_steps) + ")");
            }
        }
    }
}

std::vector<int64_t> GuidanceConfig::active_steps(int64_t num_steps) const {
    if (!enabled) return {};
    if (steps_active.has_value()) return *steps_active;
    return {num_steps - 1};
}

Tensor facial_guidance_loss(const Tensor& x0_pred, const Tensor& x_targ, const ParserFn& parser) {
    if (x0_pred.shape() != x_targ.shape()) {
        throw DimensionError("facial_guidance_loss: " + x0_pred.shape_str() + " vs " +
                             x_targ.shape_str());
    }
    Tensor targ_features = parser(x_targ).detach();
    return sum_sq_diff(targ_features, parser(x0_pred));
}

namespace {

// diffusion signal -> [0,1] image, differentiable (no clamp)
Tensor to_image01(const Tensor& signal) {
    return add_scalar(scale(signal, 0.5), 0.5);
}

}  // namespace

GuidanceStepResult optimize_embedding_step(const SampleState& state,
                                           const ConditioningBundle& cond, const Tensor& x_targ,
                                           const GuidanceConfig& gcfg, const EpsModel& model,
                                           const NoiseSchedule& sched, const ParserFn& parser,
                                           const Tensor* region_mask) {
    Tensor targ_features = parser(to_image01(x_targ)).detach();
    Tensor inv_mask, masked_targ;
    if (region_mask) {
        inv_mask = scale(add_scalar(neg(*region_mask), 1.0), 1.0).detach();
        masked_targ = mul(inv_mask, x_targ).detach();
    }
    auto loss_of = [&](const Tensor& eps) {
        Tensor x0 = predict_x0(state.x_t, eps, state.t, sched);
        if (region_mask) {
            x0 = add(mul(*region_mask, x0), masked_targ);
        }
        return sum_sq_diff(targ_features, parser(to_image01(x0)));
    };

    GuidanceStepResult out;
    out.cond = cond;
    out.entry.step = state.step;

    Tensor emb = cond.text_emb.clone_data();
    Tensor eps_current;
    double loss_current = 0.0;

    for (int64_t iter = 0; iter < gcfg.inner_iters; ++iter) {
        emb.set_requires_grad(true);
        emb.zero_grad();
        ConditioningBundle tracked = cond;
        tracked.text_emb = emb;
        Tensor eps = model(state.x_t, state.t, tracked);
        Tensor loss = loss_of(eps);
        const double before = loss.item();
        if (iter == 0) out.entry.loss_before = before;
        eps_current = eps.detach();
        loss_current = before;
        if (before <= gcfg.stop_loss) break;

        backward(loss);
        if (!emb.has_grad()) break;  // embedding unreachable; nothing to do
        std::vector<double> grad = emb.grad();
        double sq = 0.0;
        for (double g : grad) {
            if (!std::isfinite(g)) {
                throw GuidanceError("guidance: non-finite gradient at sampler step " +
                                    std::to_string(state.step));
            }
            sq += g * g;
        }
        // RMS-normalized direction: step_size is the per-element displacement
        // scale regardless of the raw loss magnitude
        const double rms = std::sqrt(sq / static_cast<double>(grad.size())) + 1e-12;
        for (double& g : grad) g /= rms;

        // backtracking line search; reject the update entirely if five
        // halvings cannot avoid an increase
        double step = gcfg.step_size;
        bool accepted = false;
        for (int halving = 0; halving <= 5; ++halving) {
            Tensor cand = emb.detach();
            auto& data = cand.mutable_data();
            for (size_t i = 0; i < data.size(); ++i) data[i] -= step * grad[i];
            ConditioningBundle probe = cond;
            probe.text_emb = cand;
            Tensor eps_cand = model(state.x_t, state.t, probe);
            const double cand_loss = loss_of(eps_cand).item();
            if (cand_loss <= before) {
                emb = cand;
                eps_current = eps_cand;
                loss_current = cand_loss;
                accepted = true;
                break;
            }
            step /= 2.0;
        }
        if (!accepted) break;
    }

    emb.set_requires_grad(false);
    out.cond.text_emb = emb;
    out.eps = eps_current;
    out.entry.loss_after = loss_current;
    return out;
}

}  // namespace swapdiff
