#include "swapdiff/denoiser.hpp"

#include <cmath>
#include <sstream>

#include "swapdiff/nn.hpp"

namespace swapdiff {

namespace {

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

Tensor init_normal(std::vector<int64_t> shape, double stddev, Rng& rng) {
    Tensor t = Tensor::randn(std::move(shape), rng);
    for (double& v : t.mutable_data()) v *= stddev;
    return t;
}

}  // namespace

namespace {

// Fixed positional basis concatenated to the latent at the stem: linear
// coordinates plus two sinusoidal octaves per axis. Queries built on these
// can form localized attention cells instead of half-plane partitions.
constexpr int64_t kPosPlanes = 10;

Tensor positional_planes(int64_t height, int64_t width) {
    std::vector<double> out(static_cast<size_t>(kPosPlanes * height * width));
    const int64_t hw = height * width;
    for (int64_t i = 0; i < height; ++i) {
        for (int64_t j = 0; j < width; ++j) {
            const double x = static_cast<double>(j) / static_cast<double>(width - 1) - 0.5;
            const double y = static_cast<double>(i) / static_cast<double>(height - 1) - 0.5;
            const int64_t px = i * width + j;
            out[static_cast<size_t>(0 * hw + px)] = x;
            out[static_cast<size_t>(1 * hw + px)] = y;
            out[static_cast<size_t>(2 * hw + px)] = std::sin(2.0 * M_PI * x);
            out[static_cast<size_t>(3 * hw + px)] = std::cos(2.0 * M_PI * x);
            out[static_cast<size_t>(4 * hw + px)] = std::sin(2.0 * M_PI * y);
            out[static_cast<size_t>(5 * hw + px)] = std::cos(2.0 * M_PI * y);
            out[static_cast<size_t>(6 * hw + px)] = std::sin(4.0 * M_PI * x);
            out[static_cast<size_t>(7 * hw + px)] = std::cos(4.0 * M_PI * x);
            out[static_cast<size_t>(8 * hw + px)] = std::sin(4.0 * M_PI * y);
            out[static_cast<size_t>(9 * hw + px)] = std::cos(4.0 * M_PI * y);
        }
    }
    return Tensor::from_data({kPosPlanes, height, width}, std::move(out));
}

}  // namespace

void DenoiserConfig::validate() const {
    if (height < 4 || width < 4 || channels < 1) {
        throw ConfigError("DenoiserConfig: latent size must be at least 4x4x1");
    }
    if (widths.size() != 3) throw ConfigError("DenoiserConfig: expects 3 resolution widths");
    for (int64_t w : widths) {
        if (w < 1) throw ConfigError("DenoiserConfig: channel widths must be positive");
    }
    if (height % 4 != 0 || width % 4 != 0) {
        throw ConfigError("DenoiserConfig: latent side lengths must be divisible by 4");
    }
    if (token_dim < 1 || num_text_tokens < 1 || heads < 1 || temb_dim < 2) {
        throw ConfigError("DenoiserConfig: embedding dimensions must be positive");
    }
    if (token_dim % heads != 0) {
        throw ConfigError("DenoiserConfig: token_dim must be divisible by head count");
    }
    if (prior_spread < 0.0) throw ConfigError("DenoiserConfig: prior_spread must be >= 0");
}

int64_t LoraSet::parameter_count() const {
    int64_t n = 0;
    for (const auto& [name, pair] : pairs) n += pair.parameter_count();
    return n;
}

std::vector<Tensor> LoraSet::all_tensors() const {
    std::vector<Tensor> out;
    for (const auto& [name, pair] : pairs) {
        out.push_back(pair.down);
        out.push_back(pair.up);
    }
    return out;
}

void LoraSet::set_requires_grad(bool value) {
    for (auto& [name, pair] : pairs) {
        pair.down.set_requires_grad(value);
        pair.up.set_requires_grad(value);
    }
}

Tensor lora_forward(const Tensor& x, const Tensor& w, const LoraPair* lora) {
    Tensor base = matmul(w, x);
    if (lora == nullptr || lora->rank() == 0) return base;
    if (lora->down.dim(1) != w.dim(1) || lora->up.dim(0) != w.dim(0) ||
        lora->up.dim(1) != lora->down.dim(0)) {
        throw ConfigError("lora_forward: adapter " + lora->down.shape_str() + "/" +
                          lora->up.shape_str() + " inconsistent with base " + w.shape_str());
    }
    Tensor delta = matmul(lora->up, matmul(lora->down, x));
    return add(base, scale(delta, lora->alpha / static_cast<double>(lora->rank())));
}

namespace {

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, int64_t heads) {
    const int64_t dk = q.dim(0);
    const int64_t dh = dk / heads;
    std::vector<Tensor> outs;
    outs.reserve(static_cast<size_t>(heads));
    for (int64_t h = 0; h < heads; ++h) {
        Tensor qh = slice0(q, h * dh, dh);
        Tensor kh = slice0(k, h * dh, dh);
        Tensor vh = slice0(v, h * dh, dh);
        Tensor scores = scale(matmul(transpose(qh), kh), 1.0 / std::sqrt(static_cast<double>(dh)));
        Tensor attn = softmax_lastdim(scores);            // [n_q, n_tok]
        outs.push_back(matmul(vh, transpose(attn)));      // [dh, n_q]
    }
    return heads == 1 ? outs[0] : concat0(outs);
}

}  // namespace

Tensor decoupled_cross_attention(const Tensor& q, const Tensor& text_emb,
                                 const std::optional<Tensor>& image_emb, double lambda,
                                 const CrossAttentionWeights& weights, int64_t heads,
                                 const LoraPair* lora_k, const LoraPair* lora_v) {
    Tensor k = lora_forward(transpose(text_emb), weights.wk, lora_k);
    Tensor v = lora_forward(transpose(text_emb), weights.wv, lora_v);
    Tensor out = multi_head_attention(q, k, v, heads);
    if (image_emb.has_value() && lambda != 0.0) {
        Tensor ki = matmul(weights.wk_img, transpose(*image_emb));
        Tensor vi = matmul(weights.wv_img, transpose(*image_emb));
        out = add(out, scale(multi_head_attention(q, ki, vi, heads), lambda));
    }
    return out;
}

// ---------------------------------------------------------------- Denoiser ---

Denoiser::Denoiser(const DenoiserConfig& cfg, const NoiseSchedule& sched, uint64_t seed)
    : cfg_(cfg), sched_(sched) {
    cfg_.validate();
    Rng rng(seed);
    const auto& w = cfg_.widths;
    const int64_t c = cfg_.channels, dk = cfg_.token_dim, td = cfg_.temb_dim;

    auto conv = [&](const std::string& name, int64_t out_ch, int64_t in_ch, double gain) {
        double stddev = gain / std::sqrt(static_cast<double>(in_ch * 9));
        params_[name + ".w"] = init_normal({out_ch, in_ch * 9}, stddev, rng);
        params_[name + ".b"] = Tensor::zeros({out_ch});
    };
    auto dense = [&](const std::string& name, int64_t out_d, int64_t in_d, double gain) {
        params_[name] = init_normal({out_d, in_d}, gain / std::sqrt(static_cast<double>(in_d)), rng);
    };

    conv("stem", w[0], c + kPosPlanes, 1.0);
    conv("enc0", w[0], w[0], 1.0);
    conv("down0", w[1], w[0], 1.0);
    conv("enc1", w[1], w[1], 1.0);
    conv("down1", w[2], w[1], 1.0);
    conv("enc2", w[2], w[2], 1.0);
    conv("up1", w[1], w[2], 1.0);
    conv("dec1", w[1], 2 * w[1], 1.0);
    conv("up0", w[0], w[1], 1.0);
    conv("dec0", w[0], 2 * w[0], 1.0);
    conv("out", c, w[0], 0.5);

    for (const char* blk : {"enc0", "enc1", "enc2", "dec1", "dec0"}) {
        int64_t ch = params_[std::string(blk) + ".w"].dim(0);
        dense(std::string(blk) + ".temb", ch, td, 0.5);
    }

    for (int level = 0; level < 3; ++level) {
        std::string base = "attn" + std::to_string(level);
        dense(base + ".q", dk, w[static_cast<size_t>(level)], 1.0);
        dense(base + ".k", dk, dk, 1.0);
        dense(base + ".v", dk, dk, 1.0);
        dense(base + ".k_img", dk, dk, 1.0);
        dense(base + ".v_img", dk, dk, 1.0);
        dense(base + ".o", w[static_cast<size_t>(level)], dk, 0.5);
    }

    params_["prior.mean"] = Tensor::zeros({c, cfg_.height, cfg_.width});

    for (auto& [name, tensor] : params_) tensor.set_requires_grad(false);
}

Tensor& Denoiser::param(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("Denoiser: no parameter named " + name);
    return it->second;
}

const Tensor& Denoiser::param(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("Denoiser: no parameter named " + name);
    return it->second;
}

std::vector<std::pair<std::string, std::pair<int64_t, int64_t>>> Denoiser::adapted_projections()
    const {
    std::vector<std::pair<std::string, std::pair<int64_t, int64_t>>> out;
    for (int level = 0; level < 3; ++level) {
        std::string base = "attn" + std::to_string(level);
        for (const char* proj : {".q", ".k", ".v", ".o"}) {
            const Tensor& w = param(base + proj);
            out.push_back({base + proj, {w.dim(0), w.dim(1)}});
        }
    }
    return out;
}

LoraSet Denoiser::make_lora(int64_t rank, double alpha, uint64_t seed) const {
    if (rank < 1) throw ConfigError("make_lora: rank must be >= 1");
    LoraSet set;
    Rng rng(seed);
    for (const auto& [name, dims] : adapted_projections()) {
        LoraPair pair;
        pair.alpha = alpha;
        pair.down = init_normal({rank, dims.second}, 1.0 / std::sqrt(static_cast<double>(rank)), rng);
        pair.up = Tensor::zeros({dims.first, rank});
        set.pairs[name] = pair;
    }
    return set;
}

Tensor Denoiser::attention_block(const Tensor& h, int level, const ConditioningBundle& cond,
                                 const LoraSet* lora) const {
    const std::string base = "attn" + std::to_string(level);
    auto lora_at = [&](const char* proj) -> const LoraPair* {
        if (!lora) return nullptr;
        auto it = lora->pairs.find(base + proj);
        return it == lora->pairs.end() ? nullptr : &it->second;
    };

    Tensor hmat = reshape(h, {h.dim(0), h.dim(1) * h.dim(2)});
    Tensor q = lora_forward(hmat, param(base + ".q"), lora_at(".q"));

    CrossAttentionWeights weights{param(base + ".k"), param(base + ".v"),
                                  param(base + ".k_img"), param(base + ".v_img")};
    Tensor att = decoupled_cross_attention(q, cond.text_emb, cond.image_emb, cond.adapter_scale,
                                           weights, cfg_.heads, lora_at(".k"), lora_at(".v"));
    Tensor out = lora_forward(att, param(base + ".o"), lora_at(".o"));
    return reshape(out, h.shape());
}

Tensor Denoiser::forward(const Tensor& x_t, int64_t t, const ConditioningBundle& cond,
                         const LoraSet* lora) const {
    if (x_t.rank() != 3 || x_t.dim(0) != cfg_.channels || x_t.dim(1) != cfg_.height ||
        x_t.dim(2) != cfg_.width) {
        throw DimensionError("Denoiser::forward: latent " + x_t.shape_str() + " does not match [" +
                             std::to_string(cfg_.channels) + "x" + std::to_string(cfg_.height) +
                             "x" + std::to_string(cfg_.width) + "]");
    }
    if (cond.text_emb.rank() != 2 || cond.text_emb.dim(0) != cfg_.num_text_tokens ||
        cond.text_emb.dim(1) != cfg_.token_dim) {
        throw DimensionError("Denoiser::forward: text embedding " + cond.text_emb.shape_str());
    }
    if (!cond.control_residuals.empty() && cond.control_residuals.size() != 3) {
        throw DimensionError("Denoiser::forward: expected one control residual per resolution");
    }
    for (int level = 0; level < static_cast<int>(cond.control_residuals.size()); ++level) {
        const Tensor& r = cond.control_residuals[static_cast<size_t>(level)];
        if (!r.defined()) continue;
        const int64_t hh = cfg_.height >> level, ww = cfg_.width >> level;
        if (r.rank() != 3 || r.dim(0) != cfg_.widths[static_cast<size_t>(level)] ||
            r.dim(1) != hh || r.dim(2) != ww) {
            throw DimensionError("Denoiser::forward: control residual at level " +
                                 std::to_string(level) + " has shape " + r.shape_str());
        }
    }

    Tensor temb = reshape(sinusoidal_embedding(t, cfg_.temb_dim), {cfg_.temb_dim, 1});
    auto temb_bias = [&](const std::string& blk) {
        Tensor proj = matmul(param(blk + ".temb"), temb);
        return reshape(proj, {proj.dim(0)});
    };
    auto block = [&](const Tensor& x, const std::string& name) {
        Tensor y = conv2d(x, param(name + ".w"), param(name + ".b"), 3, 1, 1);
        return silu(add_channel_bias(y, temb_bias(name)));
    };
    auto ctrl = [&](const Tensor& x, int level) {
        if (cond.control_residuals.empty()) return x;
        const Tensor& r = cond.control_residuals[static_cast<size_t>(level)];
        return r.defined() ? add(x, r) : x;
    };

    Tensor stem_in = concat0({x_t, positional_planes(cfg_.height, cfg_.width)});
    Tensor h = silu(conv2d(stem_in, param("stem.w"), param("stem.b"), 3, 1, 1));
    Tensor e0 = block(h, "enc0");
    Tensor d = silu(conv2d(e0, param("down0.w"), param("down0.b"), 3, 2, 1));
    Tensor e1 = block(d, "enc1");
    d = silu(conv2d(e1, param("down1.w"), param("down1.b"), 3, 2, 1));
    Tensor e2 = block(d, "enc2");

    Tensor d2 = ctrl(e2, 2);
    d2 = add(d2, attention_block(d2, 2, cond, lora));
    Tensor u1 = silu(conv2d(upsample_nearest2(d2), param("up1.w"), param("up1.b"), 3, 1, 1));
    Tensor d1 = block(concat0({u1, e1}), "dec1");
    d1 = ctrl(d1, 1);
    d1 = add(d1, attention_block(d1, 1, cond, lora));
    Tensor u0 = silu(conv2d(upsample_nearest2(d1), param("up0.w"), param("up0.b"), 3, 1, 1));
    Tensor d0 = block(concat0({u0, e0}), "dec0");
    d0 = ctrl(d0, 0);
    d0 = add(d0, attention_block(d0, 0, cond, lora));

    Tensor learned = conv2d(d0, param("out.w"), param("out.b"), 3, 1, 1);

    // Analytic Gaussian-prior head: optimal eps for x0 ~ N(mean, spread^2 I).
    const double ab = sched_.alpha_bar_at(t);
    const double s2 = cfg_.prior_spread * cfg_.prior_spread;
    const double denom = ab * s2 + (1.0 - ab);
    Tensor centered = sub(x_t, scale(param("prior.mean"), std::sqrt(ab)));
    Tensor prior = scale(centered, std::sqrt(1.0 - ab) / denom);

    return add(prior, learned);
}

// ------------------------------------------------------------- TextEncoder ---

TextEncoder::TextEncoder(int64_t num_tokens, int64_t token_dim, uint64_t seed)
    : num_tokens_(num_tokens), token_dim_(token_dim), seed_(seed) {}

std::vector<std::string> TextEncoder::tokenize(const std::string& prompt) {
    std::vector<std::string> tokens;
    std::istringstream is(prompt);
    std::string tok;
    while (is >> tok) tokens.push_back(tok);
    return tokens;
}

Tensor TextEncoder::token_row(const std::string& token) const {
    Rng rng(seed_ ^ fnv1a(token));
    Tensor row = Tensor::randn({1, token_dim_}, rng);
    return row;
}

Tensor TextEncoder::embed(const std::string& prompt,
                          const std::map<std::string, Tensor>& overrides) const {
    std::vector<std::string> tokens = tokenize(prompt);
    tokens.resize(static_cast<size_t>(num_tokens_), "<pad>");
    std::vector<Tensor> rows;
    rows.reserve(tokens.size());
    for (const std::string& tok : tokens) {
        auto it = overrides.find(tok);
        if (it != overrides.end()) {
            rows.push_back(it->second);
        } else {
            rows.push_back(token_row(tok));
        }
    }
    return concat0(rows);
}

// ------------------------------------------------------ ImagePromptEncoder ---

ImagePromptEncoder::ImagePromptEncoder(int64_t num_tokens, int64_t token_dim, uint64_t seed)
    : num_tokens_(num_tokens), token_dim_(token_dim) {
    Rng rng(seed);
    const int64_t in_dim = 3 * pool_ * pool_;
    proj_ = init_normal({num_tokens_ * token_dim_, in_dim},
                        1.0 / std::sqrt(static_cast<double>(in_dim)), rng);
}

Tensor ImagePromptEncoder::encode(const Tensor& image) const {
    if (image.rank() != 3 || image.dim(0) != 3) {
        throw DimensionError("ImagePromptEncoder: expects [3,H,W], got " + image.shape_str());
    }
    const int64_t h = image.dim(1), w = image.dim(2);
    std::vector<double> pooled(static_cast<size_t>(3 * pool_ * pool_), 0.0);
    std::vector<double> counts(static_cast<size_t>(pool_ * pool_), 0.0);
    for (int64_t i = 0; i < h; ++i) {
        const int64_t bi = i * pool_ / h;
        for (int64_t j = 0; j < w; ++j) {
            const int64_t bj = j * pool_ / w;
            counts[static_cast<size_t>(bi * pool_ + bj)] += 1.0;
            for (int64_t c = 0; c < 3; ++c) {
                pooled[static_cast<size_t>((c * pool_ + bi) * pool_ + bj)] +=
                    image.at((c * h + i) * w + j);
            }
        }
    }
    for (int64_t c = 0; c < 3; ++c) {
        for (int64_t p = 0; p < pool_ * pool_; ++p) {
            double n = counts[static_cast<size_t>(p)];
            if (n > 0) pooled[static_cast<size_t>(c * pool_ * pool_ + p)] /= n;
        }
    }
    Tensor flat = Tensor::from_data({3 * pool_ * pool_, 1}, std::move(pooled));
    Tensor tokens = matmul(proj_, flat);
    return reshape(tokens, {num_tokens_, token_dim_});
}

}  // namespace swapdiff
