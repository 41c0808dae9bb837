#include "swapdiff/customization.hpp"

#include <algorithm>
#include <cmath>

#include "swapdiff/nn.hpp"
#include "swapdiff/params_io.hpp"

namespace swapdiff {

Tensor image_to_signal(const Tensor& image) {
    Tensor out = image.detach();
    for (double& v : out.mutable_data()) v = 2.0 * v - 1.0;
    return out;
}

Tensor signal_to_image(const Tensor& signal) {
    Tensor out = signal.detach();
    for (double& v : out.mutable_data()) v = std::clamp((v + 1.0) / 2.0, 0.0, 1.0);
    return out;
}

void CustomizationConfig::validate() const {
    if (train_steps < 0) throw ConfigError("CustomizationConfig: train_steps must be >= 0");
    if (prior_count < 0) throw ConfigError("CustomizationConfig: prior_count must be >= 0");
    if (lora_rank < 1) throw ConfigError("CustomizationConfig: lora_rank must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("CustomizationConfig: learning_rate must be > 0");
    if (prior_weight < 0.0) throw ConfigError("CustomizationConfig: prior_weight must be >= 0");
    if (prior_sample_steps < 1) {
        throw ConfigError("CustomizationConfig: prior_sample_steps must be >= 1");
    }
    if (instance_prompt.find(identity_token) == std::string::npos) {
        throw ConfigError("CustomizationConfig: instance prompt must contain the identity token");
    }
}

std::map<std::string, Tensor> IdentityAdapter::named_tensors() const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, pair] : lora.pairs) {
        out["lora/" + name + ".down"] = pair.down;
        out["lora/" + name + ".up"] = pair.up;
        out["lora/" + name + ".alpha"] = Tensor::scalar(pair.alpha);
    }
    out["token/" + token] = token_row;
    return out;
}

std::map<std::string, Tensor> IdentityAdapter::text_overrides() const {
    return {{token, token_row}};
}

void IdentityAdapter::set_requires_grad(bool value) {
    lora.set_requires_grad(value);
    token_row.set_requires_grad(value);
}

void save_adapter(const std::string& path, const IdentityAdapter& adapter) {
    save_params(path, kSectionLora, adapter.named_tensors());
}

IdentityAdapter load_adapter(const std::string& path) {
    std::string tag;
    std::map<std::string, Tensor> tensors = load_params(path, &tag);
    if (tag != kSectionLora) throw Error("load_adapter: " + path + " is not an adapter file");
    IdentityAdapter adapter;
    for (const auto& [name, tensor] : tensors) {
        if (name.rfind("token/", 0) == 0) {
            adapter.token = name.substr(6);
            adapter.token_row = tensor;
        } else if (name.rfind("lora/", 0) == 0 && name.size() > 5) {
            std::string rest = name.substr(5);
            auto dot = rest.rfind('.');
            std::string proj = rest.substr(0, dot);
            std::string field = rest.substr(dot + 1);
            LoraPair& pair = adapter.lora.pairs[proj];
            if (field == "down") pair.down = tensor;
            else if (field == "up") pair.up = tensor;
            else if (field == "alpha") pair.alpha = tensor.item();
        }
    }
    return adapter;
}

// ------------------------------------------------------------------- Adam ---

AdamOptimizer::AdamOptimizer(std::vector<Tensor> params, double lr, double beta1, double beta2,
                             double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const Tensor& p : params_) {
        m_.emplace_back(static_cast<size_t>(p.size()), 0.0);
        v_.emplace_back(static_cast<size_t>(p.size()), 0.0);
    }
}

void AdamOptimizer::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i];
        const std::vector<double>& g = p.grad();
        if (g.empty()) continue;
        auto& m = m_[i];
        auto& v = v_[i];
        auto& data = p.mutable_data();
        for (size_t k = 0; k < data.size(); ++k) {
            m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
            v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
            const double mhat = m[k] / bc1;
            const double vhat = v[k] / bc2;
            data[k] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

void AdamOptimizer::zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
}

// -------------------------------------------------------------- prior set ---

std::vector<Tensor> build_prior_set(const Denoiser& net, const TextEncoder& text,
                                    const std::string& class_prompt, int64_t n,
                                    const CustomizationConfig& cfg) {
    if (n < 0) throw ContractError("build_prior_set: n must be >= 0");
    std::vector<Tensor> out;
    out.reserve(static_cast<size_t>(n));
    Rng root(cfg.seed ^ 0x9A1EC0DEULL);
    const DenoiserConfig& dc = net.config();
    EpsModel model = [&net](const Tensor& x, int64_t t, const ConditioningBundle& cond) {
        return net.forward(x, t, cond);
    };
    for (int64_t i = 0; i < n; ++i) {
        ConditioningBundle cond;
        cond.text_emb = text.embed(class_prompt);
        SamplerConfig scfg;
        scfg.eta = 0.0;
        scfg.num_steps = cfg.prior_sample_steps;
        scfg.cfg_scale = 1.0;
        scfg.seed = root.fork(static_cast<uint64_t>(i)).seed();
        Tensor x0 = sample(model, cond, scfg, net.schedule(), {dc.channels, dc.height, dc.width});
        out.push_back(signal_to_image(x0));
    }
    return out;
}

// ------------------------------------------------------------ training ---

namespace {

int64_t training_t_floor(const NoiseSchedule& sched) {
    return sched.T / 5;
}

Tensor item_loss(const Denoiser& net, const TextEncoder& text, const IdentityAdapter& adapter,
                 const BatchItem& item, int64_t t, const Tensor& eps) {
    Tensor x_t = add_noise(image_to_signal(item.image), t, eps, net.schedule());
    ConditioningBundle cond;
    cond.text_emb = text.embed(item.prompt, adapter.text_overrides());
    Tensor eps_pred = net.forward(x_t, t, cond, &adapter.lora);
    return mse(eps, eps_pred);
}

}  // namespace

StepLosses training_step(const Denoiser& net, const TextEncoder& text, IdentityAdapter& adapter,
                         AdamOptimizer& opt, const std::vector<BatchItem>& batch,
                         const CustomizationConfig& cfg, Rng& rng) {
    if (batch.empty()) throw ContractError("training_step: empty batch");
    const NoiseSchedule& sched = net.schedule();
    const int64_t t_floor = training_t_floor(sched);

    opt.zero_grad();
    Tensor instance_acc, prior_acc;
    int64_t n_instance = 0, n_prior = 0;
    for (const BatchItem& item : batch) {
        // quadratic bias toward the noisier end, where the denoising error
        // is largest and the adapter learns slowest
        const double u = rng.uniform();
        const int64_t t = t_floor + static_cast<int64_t>(
                              static_cast<double>(sched.T - 1 - t_floor) * u * u);
        Tensor eps = Tensor::randn(item.image.shape(), rng);
        Tensor loss = item_loss(net, text, adapter, item, t, eps);
        if (item.is_instance) {
            instance_acc = instance_acc.defined() ? add(instance_acc, loss) : loss;
            ++n_instance;
        } else {
            prior_acc = prior_acc.defined() ? add(prior_acc, loss) : loss;
            ++n_prior;
        }
    }
    StepLosses out;
    Tensor total;
    if (instance_acc.defined()) {
        instance_acc = scale(instance_acc, 1.0 / static_cast<double>(n_instance));
        out.instance = instance_acc.item();
        total = instance_acc;
    }
    if (prior_acc.defined()) {
        prior_acc = scale(prior_acc, 1.0 / static_cast<double>(n_prior));
        out.prior = prior_acc.item();
        Tensor weighted = scale(prior_acc, cfg.prior_weight);
        total = total.defined() ? add(total, weighted) : weighted;
    }
    out.total = total.item();
    backward(total);
    opt.step();
    return out;
}

std::pair<IdentityAdapter, TrainReport> train_lora(const Denoiser& net, const TextEncoder& text,
                                                   const Tensor& source_image,
                                                   const CustomizationConfig& cfg) {
    cfg.validate();
    const DenoiserConfig& dc = net.config();
    if (source_image.rank() != 3 || source_image.dim(0) != dc.channels ||
        source_image.dim(1) != dc.height || source_image.dim(2) != dc.width) {
        throw DimensionError("train_lora: source image " + source_image.shape_str() +
                             " does not match the denoiser latent size");
    }

    std::vector<Tensor> priors =
        build_prior_set(net, text, cfg.class_prompt, cfg.prior_count, cfg);

    IdentityAdapter adapter;
    adapter.token = cfg.identity_token;
    adapter.lora = net.make_lora(cfg.lora_rank, cfg.lora_alpha, cfg.seed ^ 0x10A4ULL);
    adapter.token_row = text.token_row(cfg.identity_token).clone_data();
    adapter.set_requires_grad(true);

    std::vector<Tensor> trainable = adapter.lora.all_tensors();
    trainable.push_back(adapter.token_row);
    AdamOptimizer opt(trainable, cfg.learning_rate);

    TrainReport report;
    Rng rng(cfg.seed ^ 0x77AA11ULL);
    for (int64_t step = 0; step < cfg.train_steps; ++step) {
        std::vector<BatchItem> batch;
        batch.push_back({source_image, cfg.instance_prompt, true});
        if (!priors.empty()) {
            batch.push_back(
                {priors[static_cast<size_t>(step) % priors.size()], cfg.class_prompt, false});
        }
        StepLosses losses = training_step(net, text, adapter, opt, batch, cfg, rng);
        if (!std::isfinite(losses.total)) {
            throw TrainingError("train_lora: non-finite loss at step " + std::to_string(step));
        }
        report.instance_loss.push_back(losses.instance);
        report.prior_loss.push_back(losses.prior);
        report.total_loss.push_back(losses.total);
    }

    adapter.set_requires_grad(false);
    report.adapter_checksum = params_checksum(adapter.named_tensors());
    return {std::move(adapter), std::move(report)};
}

double denoising_loss_probes(const Denoiser& net, const TextEncoder& text,
                             const IdentityAdapter* adapter, const Tensor& image,
                             const std::string& prompt, int n_probes, uint64_t seed) {
    const NoiseSchedule& sched = net.schedule();
    const int64_t t_floor = training_t_floor(sched);
    Rng rng(seed);
    double total = 0.0;
    for (int i = 0; i < n_probes; ++i) {
        const int64_t t = rng.uniform_int(t_floor, sched.T);
        Tensor eps = Tensor::randn(image.shape(), rng);
        Tensor x_t = add_noise(image_to_signal(image), t, eps, sched);
        ConditioningBundle cond;
        cond.text_emb =
            adapter ? text.embed(prompt, adapter->text_overrides()) : text.embed(prompt);
        Tensor eps_pred = net.forward(x_t, t, cond, adapter ? &adapter->lora : nullptr);
        total += mse(eps, eps_pred).item();
    }
    return total / static_cast<double>(n_probes);
}

}  // namespace swapdiff
