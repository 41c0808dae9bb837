#pragma once

#include <string>
#include <utility>
#include <vector>

#include "swapdiff/denoiser.hpp"
#include "swapdiff/diffusion.hpp"

namespace swapdiff {

// [0,1] image <-> [-1,1] diffusion signal. The maps are exact inverses in
// floating point for inputs in [0,1].
Tensor image_to_signal(const Tensor& image);
Tensor signal_to_image(const Tensor& signal);

struct CustomizationConfig {
    std::string identity_token = "sks";
    std::string instance_prompt = "a photo of sks person";
    std::string class_prompt = "a photo of person";
    int64_t train_steps = 200;
    int64_t prior_count = 20;  // toy default; 200 at full scale
    int64_t lora_rank = 4;
    double lora_alpha = 24.0;
    double learning_rate = 5e-3;
    double prior_weight = 1.0;
    int64_t prior_sample_steps = 8;  // DDIM steps when generating prior images
    uint64_t seed = 0;

    void validate() const;
};

struct TrainReport {
    std::vector<double> instance_loss;
    std::vector<double> prior_loss;
    std::vector<double> total_loss;
    uint64_t adapter_checksum = 0;
};

// Everything customization produces: the low-rank attention adapters plus
// the tuned identity-token embedding row.
struct IdentityAdapter {
    LoraSet lora;
    Tensor token_row;  // [1, token_dim]
    std::string token = "sks";

    std::map<std::string, Tensor> named_tensors() const;
    std::map<std::string, Tensor> text_overrides() const;
    void set_requires_grad(bool value);
};

void save_adapter(const std::string& path, const IdentityAdapter& adapter);
IdentityAdapter load_adapter(const std::string& path);

class AdamOptimizer {
public:
    AdamOptimizer(std::vector<Tensor> params, double lr, double beta1 = 0.9,
                  double beta2 = 0.999, double eps = 1e-8);

    void step();
    void zero_grad();

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

// Samples from the base (un-adapted) model under the class prompt; one
// deterministic substream per image. Returned images are in [0,1].
std::vector<Tensor> build_prior_set(const Denoiser& net, const TextEncoder& text,
                                    const std::string& class_prompt, int64_t n,
                                    const CustomizationConfig& cfg);

struct BatchItem {
    Tensor image;  // [0,1]
    std::string prompt;
    bool is_instance = true;
};

struct StepLosses {
    double instance = 0.0;
    double prior = 0.0;
    double total = 0.0;
};

// Denoising losses are mean squared eps error with fresh (t, eps) per item.
// Timesteps are drawn from [T/5, T); the probe helper uses the same range.
// Gradients reach only the adapter tensors; base weights are frozen.
StepLosses training_step(const Denoiser& net, const TextEncoder& text, IdentityAdapter& adapter,
                         AdamOptimizer& opt, const std::vector<BatchItem>& batch,
                         const CustomizationConfig& cfg, Rng& rng);

std::pair<IdentityAdapter, TrainReport> train_lora(const Denoiser& net, const TextEncoder& text,
                                                   const Tensor& source_image,
                                                   const CustomizationConfig& cfg);

// Mean denoising loss over n fixed (t, eps) probes; the fixture for the
// before/after training comparisons.
double denoising_loss_probes(const Denoiser& net, const TextEncoder& text,
                             const IdentityAdapter* adapter, const Tensor& image,
                             const std::string& prompt, int n_probes, uint64_t seed);

}  // namespace swapdiff
