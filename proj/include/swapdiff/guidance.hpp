#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "swapdiff/denoiser.hpp"
#include "swapdiff/diffusion.hpp"

namespace swapdiff {

struct GuidanceConfig {
    bool enabled = true;
    // Sampler step indices to guide; empty optional selects the final step,
    // where an accepted update maps one-to-one onto the sampled image.
    // Updates at earlier steps improve the local prediction but the
    // transitions that follow can spend the gain.
    std::optional<std::vector<int64_t>> steps_active;
    int64_t inner_iters = 8;
    double step_size = 0.1;
    double stop_loss = 0.0;  // skip the update once the loss falls below

    void validate(int64_t num_steps) const;
    std::vector<int64_t> active_steps(int64_t num_steps) const;
};

struct GuidanceTraceEntry {
    int64_t step = 0;
    double loss_before = 0.0;
    double loss_after = 0.0;
};
using GuidanceTrace = std::vector<GuidanceTraceEntry>;

// F_P: differentiable map from a [3,H,W] image in [0,1] to a feature map
// (the face parser's class scores).
using ParserFn = std::function<Tensor(const Tensor&)>;

// Sum of squared differences between parser outputs.
Tensor facial_guidance_loss(const Tensor& x0_pred, const Tensor& x_targ, const ParserFn& parser);

struct GuidanceStepResult {
    ConditioningBundle cond;  // updated bundle (only text_emb may change)
    Tensor eps;               // eps under the accepted embedding
    GuidanceTraceEntry entry;
};

// One guided update of the conditional text embedding: recompute eps, form
// the x0 prediction, evaluate the parsing loss against the target, and take
// a gradient step on the embedding with backtracking halving (max 5) so the
// loss never increases. Latents, adapters and base weights are untouched.
// x_targ lives in the [-1,1] signal domain, like state.x_t. When
// region_mask ([C,H,W], values in [0,1]) is given, the prediction is
// composited with the target outside the mask before parsing, so the loss
// measures exactly the region the inpainting keeps.
GuidanceStepResult optimize_embedding_step(const SampleState& state,
                                           const ConditioningBundle& cond, const Tensor& x_targ,
                                           const GuidanceConfig& gcfg, const EpsModel& model,
                                           const NoiseSchedule& sched, const ParserFn& parser,
                                           const Tensor* region_mask = nullptr);

}  // namespace swapdiff
