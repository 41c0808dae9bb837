#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "swapdiff/diffusion.hpp"
#include "swapdiff/tensor.hpp"

namespace swapdiff {

struct DenoiserConfig {
    int64_t height = 32;
    int64_t width = 32;
    int64_t channels = 4;
    std::vector<int64_t> widths = {6, 10, 14};  // per resolution, halving spatially
    int64_t token_dim = 16;
    int64_t num_text_tokens = 8;
    int64_t num_image_tokens = 4;
    int64_t heads = 2;
    int64_t temb_dim = 16;
    // Spread of the analytic Gaussian prior head around prior.mean. The head
    // makes the untrained network behave like a weak pretrained model of the
    // class; the learned UNet residual is added on top.
    double prior_spread = 0.15;

    void validate() const;
};

// Whatever the denoiser is conditioned on for one forward pass.
struct ConditioningBundle {
    Tensor text_emb;                  // [num_text_tokens, token_dim]
    std::optional<Tensor> image_emb;  // [num_image_tokens, token_dim]
    double adapter_scale = 0.6;       // lambda for the image branch
    std::vector<Tensor> control_residuals;  // empty, or one per resolution
};

// Low-rank adapter for one projection: W + (alpha/r) * up * down.
struct LoraPair {
    Tensor down;  // [r, d_in]
    Tensor up;    // [d_out, r]
    double alpha = 1.0;

    int64_t rank() const { return down.defined() ? down.dim(0) : 0; }
    int64_t parameter_count() const {
        return down.defined() ? down.size() + up.size() : 0;
    }
};

struct LoraSet {
    std::map<std::string, LoraPair> pairs;

    int64_t parameter_count() const;
    std::vector<Tensor> all_tensors() const;
    void set_requires_grad(bool value);
};

// x: [d_in, n] columns. Applies W plus the scaled low-rank delta; a null or
// rank-0 adapter reduces to the base projection.
Tensor lora_forward(const Tensor& x, const Tensor& w, const LoraPair* lora);

struct CrossAttentionWeights {
    Tensor wk;       // [dk, token_dim] text keys
    Tensor wv;       // [dk, token_dim] text values
    Tensor wk_img;   // [dk, token_dim] image keys (adapter branch)
    Tensor wv_img;   // [dk, token_dim] image values
};

// Attn(q, K_text, V_text) + lambda * Attn(q, K_img, V_img) with separate
// key/value projections per branch. q: [dk, n_q] projected queries.
Tensor decoupled_cross_attention(const Tensor& q, const Tensor& text_emb,
                                 const std::optional<Tensor>& image_emb, double lambda,
                                 const CrossAttentionWeights& weights, int64_t heads,
                                 const LoraPair* lora_k = nullptr,
                                 const LoraPair* lora_v = nullptr);

// Toy eps-prediction UNet: three resolutions, one conv block per resolution
// on each of the encoder and decoder paths, one cross-attention block per
// resolution on the decoder, sinusoidal timestep bias in every conv block,
// control residuals added before each attention block, and an analytic
// Gaussian-prior head added to the learned output.
class Denoiser {
public:
    Denoiser(const DenoiserConfig& cfg, const NoiseSchedule& sched, uint64_t seed);

    Tensor forward(const Tensor& x_t, int64_t t, const ConditioningBundle& cond,
                   const LoraSet* lora = nullptr) const;

    const DenoiserConfig& config() const { return cfg_; }
    const NoiseSchedule& schedule() const { return sched_; }

    std::map<std::string, Tensor>& params() { return params_; }
    const std::map<std::string, Tensor>& params() const { return params_; }
    Tensor& param(const std::string& name);
    const Tensor& param(const std::string& name) const;

    // Zero-initialized (up matrices) adapters for every cross-attention
    // projection; adapted forward equals base forward until trained.
    LoraSet make_lora(int64_t rank, double alpha, uint64_t seed) const;

    // Names of the projections LoRA attaches to, with their [d_out, d_in].
    std::vector<std::pair<std::string, std::pair<int64_t, int64_t>>> adapted_projections() const;

private:
    Tensor attention_block(const Tensor& h, int level, const ConditioningBundle& cond,
                           const LoraSet* lora) const;

    DenoiserConfig cfg_;
    NoiseSchedule sched_;
    std::map<std::string, Tensor> params_;
};

// Promp-to-embedding table. Rows are deterministic functions of the token
// string and the encoder seed; selected rows can be overridden with live
// tensors so gradients reach a trained token row.
class TextEncoder {
public:
    TextEncoder(int64_t num_tokens, int64_t token_dim, uint64_t seed);

    // Base (procedural) row for a token.
    Tensor token_row(const std::string& token) const;

    // [num_tokens, token_dim]; short prompts are padded, long ones truncated.
    // Rows present in `overrides` join the output graph directly.
    Tensor embed(const std::string& prompt,
                 const std::map<std::string, Tensor>& overrides = {}) const;

    static std::vector<std::string> tokenize(const std::string& prompt);

    int64_t num_tokens() const { return num_tokens_; }
    int64_t token_dim() const { return token_dim_; }

private:
    int64_t num_tokens_;
    int64_t token_dim_;
    uint64_t seed_;
};

// Frozen, seeded random-projection encoder producing image-prompt tokens
// from a source image; a stand-in for a pretrained vision encoder.
class ImagePromptEncoder {
public:
    ImagePromptEncoder(int64_t num_tokens, int64_t token_dim, uint64_t seed);

    // image: [3,H,W] in [0,1] -> [num_tokens, token_dim]
    Tensor encode(const Tensor& image) const;

private:
    int64_t num_tokens_;
    int64_t token_dim_;
    int64_t pool_ = 16;  // images are pooled to pool_ x pool_ before projection
    Tensor proj_;        // [num_tokens*token_dim, 3*pool*pool]
};

}  // namespace swapdiff
