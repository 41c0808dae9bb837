#pragma once

#include <string>
#include <vector>

#include "swapdiff/control.hpp"
#include "swapdiff/customization.hpp"
#include "swapdiff/denoiser.hpp"
#include "swapdiff/faceworld.hpp"
#include "swapdiff/guidance.hpp"
#include "swapdiff/image_io.hpp"

namespace swapdiff {

struct SwapConfig {
    CustomizationConfig customization;
    SamplerConfig sampler;
    GuidanceConfig guidance;
    double canny_weight = 0.5;
    double annotation_weight = 1.0;
    int64_t mask_dilation = 3;
    int64_t feather_radius = 3;
    // mask interior value for the first third of sampling steps: < 1 lets
    // the target's coarse structure seed the generated region
    double structure_bleed = 0.7;
    std::string prompt_template = "a photo of sks person";
    uint64_t seed = 0;

    void validate() const;
};

// JSON round trip for SwapConfig. Keys mirror the field names exactly;
// unknown keys raise ConfigError.
SwapConfig swap_config_from_json_text(const std::string& text);
SwapConfig load_swap_config(const std::string& path);
std::string swap_config_to_json_text(const SwapConfig& cfg);

// Landmark sidecar files ({"left_eye": [x, y], ...}).
Landmarks landmarks_from_json_text(const std::string& text);
Landmarks load_landmarks(const std::string& path);
std::string landmarks_to_json_text(const Landmarks& lm);

// The frozen model stack a swap runs against: schedule, denoiser with the
// class-mean prior, prompt table, image-prompt encoder, control encoders.
// Everything is seeded; two stacks with the same seed are identical.
struct SwapEngine {
    NoiseSchedule sched;
    Denoiser net;
    TextEncoder text;
    ImagePromptEncoder image_encoder;
    ControlStack control;

    explicit SwapEngine(uint64_t model_seed = 4242);

    static DenoiserConfig pipeline_denoiser_config();
};

struct GroupDistances {
    double expr = 0.0;
    double pose = 0.0;
    double shape = 0.0;
    bool low_confidence = false;
};

struct StageTimings {
    double customization_s = 0.0;
    double conditions_s = 0.0;
    double sampling_s = 0.0;
    double blend_s = 0.0;
    double metrics_s = 0.0;
};

struct SwapReport {
    Tensor output;         // [3,S,S] in [0,1], after the restoration stage
    Tensor raw_composite;  // binary-mask composite before feather/restore
    GuidanceTrace guidance_trace;
    StageTimings timings;
    double cos_source = 0.0;
    double cos_target = 0.0;
    GroupDistances l1_source;
    GroupDistances l1_target;
};

struct DumpedConditions {
    Tensor canny_map;       // [H,W]
    Tensor annotation_map;  // [H,W]
    Tensor mask;            // [H,W]
};

// Full face swap: customize on the source, build conditions and mask from
// the target, run guided inpainting DDIM sampling with the adapter and
// image prompt active, composite through the feathered mask and run the
// blending stage. Deterministic given the config.
SwapReport swap(const SwapEngine& engine, const Tensor& source, const Tensor& target,
                const Landmarks& target_landmarks, const SwapConfig& cfg,
                DumpedConditions* dump = nullptr);

// Feathers the mask boundary (linear ramp over `feather` pixels inside the
// mask) and matches masked-region mean/variance per channel to the target's
// face-adjacent ring. feather == 0 disables the stage entirely. Pixels
// outside the feathered band pass through bit-exact.
Tensor blend_restore(const Tensor& composite, const Tensor& target, const Tensor& mask,
                     int64_t feather);

// Feathered mask used by the compositing step: 0 outside the mask, linear
// ramp over `feather` pixels just inside the boundary, 1 in the interior.
Tensor feathered_mask(const Tensor& mask, int64_t feather);

double cosine_id(const Tensor& a, const Tensor& b);
GroupDistances param_l1(const Tensor& a, const Tensor& b);

struct EvalPair {
    Tensor source;
    Tensor target;
    Landmarks target_landmarks;
};

struct EvalRow {
    bool ok = false;
    std::string error;
    double cos_out_source = 0.0;
    GroupDistances out_vs_target;
    double cos_target_source = 0.0;
    GroupDistances source_vs_target;
};

struct EvalSummary {
    std::vector<EvalRow> rows;
    // means over the successful rows
    double mean_cos = 0.0;
    GroupDistances mean_dist;
    double baseline_cos = 0.0;
    GroupDistances baseline_dist;
    int64_t failures = 0;

    std::string table_text() const;
    std::string json_text() const;
};

// Runs swap per pair with a per-pair derived seed; aggregation order is the
// input order. Per-pair failures are recorded and skipped in the means.
EvalSummary evaluate(const SwapEngine& engine, const std::vector<EvalPair>& pairs,
                     const SwapConfig& cfg);

}  // namespace swapdiff
