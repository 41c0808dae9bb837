#include "swapdiff/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace swapdiff {

using nlohmann::json;

namespace {

double elapsed_s(std::chrono::steady_clock::time_point since) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& ctx) {
    for (const auto& [key, value] : j.items()) {
        if (!allowed.count(key)) {
            throw ConfigError("config: unknown key \"" + key + "\" in " + ctx);
        }
    }
}

uint64_t mix_seed(uint64_t seed, uint64_t salt) {
    return Rng(seed).fork(salt).seed();
}

}  // namespace

// ----------------------------------------------------------------- config ---

void SwapConfig::validate() const {
    customization.validate();
    if (prompt_template.find(customization.identity_token) == std::string::npos) {
        throw ConfigError("SwapConfig: prompt template must contain the identity token");
    }
    if (canny_weight < 0.0 || annotation_weight < 0.0) {
        throw ConfigError("SwapConfig: condition weights must be >= 0");
    }
    if (mask_dilation < 0) throw ConfigError("SwapConfig: mask_dilation must be >= 0");
    if (structure_bleed < 0.0 || structure_bleed > 1.0) {
        throw ConfigError("SwapConfig: structure_bleed must lie in [0,1]");
    }
    if (feather_radius < 0) throw ConfigError("SwapConfig: feather_radius must be >= 0");
}

SwapConfig swap_config_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    SwapConfig cfg;
    check_keys(j,
               {"customization", "sampler", "guidance", "canny_weight", "annotation_weight",
                "mask_dilation", "feather_radius", "structure_bleed", "prompt_template", "seed"},
               "top level");

    if (j.contains("customization")) {
        const json& c = j["customization"];
        check_keys(c,
                   {"identity_token", "instance_prompt", "class_prompt", "train_steps",
                    "prior_count", "lora_rank", "lora_alpha", "learning_rate", "prior_weight",
                    "prior_sample_steps", "seed"},
                   "customization");
        auto& cc = cfg.customization;
        cc.identity_token = c.value("identity_token", cc.identity_token);
        cc.instance_prompt = c.value("instance_prompt", cc.instance_prompt);
        cc.class_prompt = c.value("class_prompt", cc.class_prompt);
        cc.train_steps = c.value("train_steps", cc.train_steps);
        cc.prior_count = c.value("prior_count", cc.prior_count);
        cc.lora_rank = c.value("lora_rank", cc.lora_rank);
        cc.lora_alpha = c.value("lora_alpha", cc.lora_alpha);
        cc.learning_rate = c.value("learning_rate", cc.learning_rate);
        cc.prior_weight = c.value("prior_weight", cc.prior_weight);
        cc.prior_sample_steps = c.value("prior_sample_steps", cc.prior_sample_steps);
        cc.seed = c.value("seed", cc.seed);
    }
    if (j.contains("sampler")) {
        const json& s = j["sampler"];
        check_keys(s, {"eta", "num_steps", "cfg_scale", "seed"}, "sampler");
        cfg.sampler.eta = s.value("eta", cfg.sampler.eta);
        cfg.sampler.num_steps = s.value("num_steps", cfg.sampler.num_steps);
        cfg.sampler.cfg_scale = s.value("cfg_scale", cfg.sampler.cfg_scale);
        cfg.sampler.seed = s.value("seed", cfg.sampler.seed);
    }
    if (j.contains("guidance")) {
        const json& g = j["guidance"];
        check_keys(g, {"enabled", "steps_active", "inner_iters", "step_size", "stop_loss"},
                   "guidance");
        cfg.guidance.enabled = g.value("enabled", cfg.guidance.enabled);
        if (g.contains("steps_active") && !g["steps_active"].is_null()) {
            cfg.guidance.steps_active = g["steps_active"].get<std::vector<int64_t>>();
        }
        cfg.guidance.inner_iters = g.value("inner_iters", cfg.guidance.inner_iters);
        cfg.guidance.step_size = g.value("step_size", cfg.guidance.step_size);
        cfg.guidance.stop_loss = g.value("stop_loss", cfg.guidance.stop_loss);
    }
    cfg.canny_weight = j.value("canny_weight", cfg.canny_weight);
    cfg.annotation_weight = j.value("annotation_weight", cfg.annotation_weight);
    cfg.mask_dilation = j.value("mask_dilation", cfg.mask_dilation);
    cfg.feather_radius = j.value("feather_radius", cfg.feather_radius);
    cfg.structure_bleed = j.value("structure_bleed", cfg.structure_bleed);
    cfg.prompt_template = j.value("prompt_template", cfg.prompt_template);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.validate();
    return cfg;
}

SwapConfig load_swap_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot open " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return swap_config_from_json_text(ss.str());
}

std::string swap_config_to_json_text(const SwapConfig& cfg) {
    json j;
    j["customization"] = {{"identity_token", cfg.customization.identity_token},
                          {"instance_prompt", cfg.customization.instance_prompt},
                          {"class_prompt", cfg.customization.class_prompt},
                          {"train_steps", cfg.customization.train_steps},
                          {"prior_count", cfg.customization.prior_count},
                          {"lora_rank", cfg.customization.lora_rank},
                          {"lora_alpha", cfg.customization.lora_alpha},
                          {"learning_rate", cfg.customization.learning_rate},
                          {"prior_weight", cfg.customization.prior_weight},
                          {"prior_sample_steps", cfg.customization.prior_sample_steps},
                          {"seed", cfg.customization.seed}};
    j["sampler"] = {{"eta", cfg.sampler.eta},
                    {"num_steps", cfg.sampler.num_steps},
                    {"cfg_scale", cfg.sampler.cfg_scale},
                    {"seed", cfg.sampler.seed}};
    j["guidance"] = {{"enabled", cfg.guidance.enabled},
                     {"inner_iters", cfg.guidance.inner_iters},
                     {"step_size", cfg.guidance.step_size},
                     {"stop_loss", cfg.guidance.stop_loss}};
    if (cfg.guidance.steps_active.has_value()) {
        j["guidance"]["steps_active"] = *cfg.guidance.steps_active;
    } else {
        j["guidance"]["steps_active"] = nullptr;
    }
    j["canny_weight"] = cfg.canny_weight;
    j["annotation_weight"] = cfg.annotation_weight;
    j["mask_dilation"] = cfg.mask_dilation;
    j["feather_radius"] = cfg.feather_radius;
    j["structure_bleed"] = cfg.structure_bleed;
    j["prompt_template"] = cfg.prompt_template;
    j["seed"] = cfg.seed;
    return j.dump(2);
}

Landmarks landmarks_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("landmarks: invalid JSON: ") + e.what());
    }
    Landmarks lm;
    auto get = [&](const char* name, Point& p) {
        if (!j.contains(name) || !j[name].is_array() || j[name].size() != 2) {
            throw ConfigError(std::string("landmarks: missing or malformed \"") + name + "\"");
        }
        p.x = j[name][0].get<double>();
        p.y = j[name][1].get<double>();
    };
    get("left_eye", lm.left_eye);
    get("right_eye", lm.right_eye);
    get("left_brow_outer", lm.left_brow_outer);
    get("left_brow_inner", lm.left_brow_inner);
    get("right_brow_inner", lm.right_brow_inner);
    get("right_brow_outer", lm.right_brow_outer);
    get("nose_tip", lm.nose_tip);
    get("mouth_left", lm.mouth_left);
    get("mouth_right", lm.mouth_right);
    return lm;
}

Landmarks load_landmarks(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("landmarks: cannot open " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return landmarks_from_json_text(ss.str());
}

std::string landmarks_to_json_text(const Landmarks& lm) {
    json j;
    for (const auto& [name, p] : lm.named()) j[name] = {p.x, p.y};
    return j.dump(2);
}

// ----------------------------------------------------------------- engine ---

DenoiserConfig SwapEngine::pipeline_denoiser_config() {
    DenoiserConfig cfg;
    cfg.height = 64;
    cfg.width = 64;
    cfg.channels = 3;
    cfg.widths = {8, 10, 12};
    cfg.token_dim = 16;
    cfg.num_text_tokens = 8;
    cfg.num_image_tokens = 4;
    cfg.heads = 4;
    cfg.temb_dim = 16;
    cfg.prior_spread = 0.15;
    return cfg;
}

SwapEngine::SwapEngine(uint64_t model_seed)
    : sched(make_schedule(1000, 1e-4, 0.02)),
      net(pipeline_denoiser_config(), sched, model_seed),
      text(pipeline_denoiser_config().num_text_tokens, pipeline_denoiser_config().token_dim,
           mix_seed(model_seed, 1)),
      image_encoder(pipeline_denoiser_config().num_image_tokens,
                    pipeline_denoiser_config().token_dim, mix_seed(model_seed, 2)),
      control(pipeline_denoiser_config().widths, mix_seed(model_seed, 3)) {
    net.param("prior.mean") = image_to_signal(render_face(FaceParams::centered(), 64).image);
}

// --------------------------------------------------------------- blending ---

Tensor feathered_mask(const Tensor& mask, int64_t feather) {
    if (mask.rank() != 2) throw DimensionError("feathered_mask: expects [H,W]");
    if (feather < 0) throw ContractError("feathered_mask: feather must be >= 0");
    const int64_t h = mask.dim(0), w = mask.dim(1);

    // Chebyshev distance to the mask complement, two-pass transform
    const double inf = 1e18;
    std::vector<double> dist(static_cast<size_t>(h * w));
    for (int64_t i = 0; i < h * w; ++i) dist[static_cast<size_t>(i)] = mask.at(i) == 0.0 ? 0.0 : inf;
    auto relax = [&](int64_t i, int64_t j, int64_t ni, int64_t nj) {
        if (ni < 0 || ni >= h || nj < 0 || nj >= w) {
            // outside the frame counts as complement
            dist[static_cast<size_t>(i * w + j)] =
                std::min(dist[static_cast<size_t>(i * w + j)], 1.0);
            return;
        }
        dist[static_cast<size_t>(i * w + j)] = std::min(
            dist[static_cast<size_t>(i * w + j)], dist[static_cast<size_t>(ni * w + nj)] + 1.0);
    };
    for (int64_t i = 0; i < h; ++i) {
        for (int64_t j = 0; j < w; ++j) {
            relax(i, j, i - 1, j - 1);
            relax(i, j, i - 1, j);
            relax(i, j, i - 1, j + 1);
            relax(i, j, i, j - 1);
        }
    }
    for (int64_t i = h - 1; i >= 0; --i) {
        for (int64_t j = w - 1; j >= 0; --j) {
            relax(i, j, i + 1, j + 1);
            relax(i, j, i + 1, j);
            relax(i, j, i + 1, j - 1);
            relax(i, j, i, j + 1);
        }
    }

    std::vector<double> out(static_cast<size_t>(h * w));
    const double ramp = static_cast<double>(feather + 1);
    for (int64_t i = 0; i < h * w; ++i) {
        out[static_cast<size_t>(i)] = std::min(1.0, dist[static_cast<size_t>(i)] / ramp);
    }
    return Tensor::from_data({h, w}, std::move(out));
}

Tensor blend_restore(const Tensor& composite, const Tensor& target, const Tensor& mask,
                     int64_t feather) {
    if (feather < 0) throw ContractError("blend_restore: feather must be >= 0");
    if (composite.shape() != target.shape() || composite.rank() != 3 ||
        mask.dim(0) != composite.dim(1) || mask.dim(1) != composite.dim(2)) {
        throw DimensionError("blend_restore: shape mismatch");
    }
    if (feather == 0) return composite.detach();

    const int64_t h = mask.dim(0), w = mask.dim(1), hw = h * w;
    Tensor mf = feathered_mask(mask, feather);

    // face-adjacent ring of the target: dilation band just outside the mask
    std::vector<double> ring(static_cast<size_t>(hw), 0.0);
    const int64_t ring_width = 3;
    for (int64_t i = 0; i < h; ++i) {
        for (int64_t j = 0; j < w; ++j) {
            if (mask.at(i * w + j) == 1.0) continue;
            bool near = false;
            for (int64_t ni = std::max<int64_t>(0, i - ring_width); !near && ni <= std::min(h - 1, i + ring_width); ++ni)
                for (int64_t nj = std::max<int64_t>(0, j - ring_width); !near && nj <= std::min(w - 1, j + ring_width); ++nj)
                    near = mask.at(ni * w + nj) == 1.0;
            if (near) ring[static_cast<size_t>(i * w + j)] = 1.0;
        }
    }

    std::vector<double> out = composite.data();
    for (int c = 0; c < 3; ++c) {
        double ring_sum = 0.0, ring_sq = 0.0, ring_n = 0.0;
        double in_sum = 0.0, in_sq = 0.0, in_n = 0.0;
        for (int64_t p = 0; p < hw; ++p) {
            const double tv = target.at(c * hw + p);
            const double cv = composite.at(c * hw + p);
            if (ring[static_cast<size_t>(p)] == 1.0) {
                ring_sum += tv;
                ring_sq += tv * tv;
                ring_n += 1.0;
            }
            if (mask.at(p) == 1.0) {
                in_sum += cv;
                in_sq += cv * cv;
                in_n += 1.0;
            }
        }
        if (ring_n < 1.0 || in_n < 1.0) continue;
        const double ring_mu = ring_sum / ring_n;
        const double ring_sd = std::sqrt(std::max(0.0, ring_sq / ring_n - ring_mu * ring_mu));
        const double in_mu = in_sum / in_n;
        const double in_sd = std::sqrt(std::max(0.0, in_sq / in_n - in_mu * in_mu));
        const double gain = in_sd > 1e-6 ? ring_sd / in_sd : 1.0;

        for (int64_t p = 0; p < hw; ++p) {
            const double m = mf.at(p);
            if (m == 0.0) continue;  // outside the feathered band: bit-exact
            const double cv = composite.at(c * hw + p);
            const double transferred =
                std::clamp((cv - in_mu) * gain + ring_mu, 0.0, 1.0);
            out[static_cast<size_t>(c * hw + p)] =
                m == 1.0 ? transferred : m * transferred + (1.0 - m) * cv;
        }
    }
    return Tensor::from_data(composite.shape(), std::move(out));
}

// ---------------------------------------------------------------- metrics ---

double cosine_id(const Tensor& a, const Tensor& b) {
    const FaceWorld& fw = default_faceworld();
    return IdentityEmbedder::cosine(fw.embedder.embed(a), fw.embedder.embed(b));
}

GroupDistances param_l1(const Tensor& a, const Tensor& b) {
    ParamEstimate ea = estimate_params(a);
    ParamEstimate eb = estimate_params(b);
    GroupDistances d;
    for (int i = 0; i < 4; ++i) {
        d.expr += std::abs(ea.params.expression[static_cast<size_t>(i)] -
                           eb.params.expression[static_cast<size_t>(i)]);
    }
    d.expr /= 4.0;
    for (int i = 0; i < 2; ++i) {
        d.pose += std::abs(ea.params.pose[static_cast<size_t>(i)] -
                           eb.params.pose[static_cast<size_t>(i)]);
    }
    d.pose /= 2.0;
    for (int i = 0; i < 8; ++i) {
        d.shape += std::abs(ea.params.identity[static_cast<size_t>(i)] -
                            eb.params.identity[static_cast<size_t>(i)]);
    }
    d.shape /= 8.0;
    d.low_confidence = ea.low_confidence || eb.low_confidence;
    return d;
}

// ------------------------------------------------------------------- swap ---

namespace {

Tensor grayscale(const Tensor& image) {
    const int64_t hw = image.dim(1) * image.dim(2);
    std::vector<double> g(static_cast<size_t>(hw));
    for (int64_t p = 0; p < hw; ++p) {
        g[static_cast<size_t>(p)] =
            0.299 * image.at(p) + 0.587 * image.at(hw + p) + 0.114 * image.at(2 * hw + p);
    }
    return Tensor::from_data({image.dim(1), image.dim(2)}, std::move(g));
}

Tensor expand_mask(const Tensor& mask, int64_t channels) {
    std::vector<Tensor> planes(static_cast<size_t>(channels),
                               reshape(mask, {1, mask.dim(0), mask.dim(1)}));
    return concat0(planes);
}

template <typename F>
auto run_stage(const char* stage, F&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const Error& e) {
        throw Error(std::string("[") + stage + "] " + e.what());
    }
}

}  // namespace

SwapReport swap(const SwapEngine& engine, const Tensor& source, const Tensor& target,
                const Landmarks& target_landmarks, const SwapConfig& cfg, DumpedConditions* dump) {
    cfg.validate();
    const DenoiserConfig& dc = engine.net.config();
    if (source.shape() != target.shape() || source.rank() != 3 || source.dim(0) != 3 ||
        source.dim(1) != dc.height || source.dim(2) != dc.width) {
        throw DimensionError("swap: images must both be [3," + std::to_string(dc.height) + "," +
                             std::to_string(dc.width) + "]");
    }
    if (!target_landmarks.in_bounds(static_cast<double>(dc.width),
                                    static_cast<double>(dc.height))) {
        throw ContractError("swap: target landmarks out of bounds");
    }
    cfg.guidance.validate(cfg.sampler.num_steps);

    SwapReport report;
    const auto t_start = std::chrono::steady_clock::now();

    // (1) bind the source identity to the rare token
    CustomizationConfig ccfg = cfg.customization;
    ccfg.seed = mix_seed(cfg.seed, ccfg.seed ^ 0xC057ULL);
    auto [adapter, train_report] = run_stage("customization", [&] {
        return train_lora(engine.net, engine.text, source, ccfg);
    });
    report.timings.customization_s = elapsed_s(t_start);

    // (2) conditions from the target
    const auto t_cond = std::chrono::steady_clock::now();
    auto conditions = run_stage("conditions", [&] {
        ConditionMap edges = canny(grayscale(target), 0.1, 0.2, 1.0);
        edges.weight = cfg.canny_weight;
        ConditionMap annot = render_annotation(target_landmarks, dc.height);
        annot.weight = cfg.annotation_weight;
        std::vector<Tensor> residuals = engine.control.control_forward({edges, annot});
        return std::make_tuple(edges, annot, residuals);
    });
    const ConditionMap& edges = std::get<0>(conditions);
    const ConditionMap& annot = std::get<1>(conditions);
    const std::vector<Tensor>& residuals = std::get<2>(conditions);

    // (3) face mask
    Tensor mask = run_stage("mask", [&] {
        return face_mask(target_landmarks, dc.height, cfg.mask_dilation);
    });
    if (dump) {
        dump->canny_map = edges.map;
        dump->annotation_map = annot.map;
        dump->mask = mask;
    }
    report.timings.conditions_s = elapsed_s(t_cond);

    // (4) guided, inpaint-blended DDIM sampling
    const auto t_sample = std::chrono::steady_clock::now();
    Tensor generated = run_stage("sampling", [&] {
        const Tensor target_sig = image_to_signal(target);
        const Tensor mask3 = expand_mask(mask, 3);

        ConditioningBundle uncond;
        uncond.text_emb = engine.text.embed("");
        uncond.control_residuals = residuals;

        ConditioningBundle cond;
        cond.text_emb = engine.text.embed(cfg.prompt_template, adapter.text_overrides());
        cond.image_emb = engine.image_encoder.encode(source);
        cond.control_residuals = residuals;

        const double cfg_scale = cfg.sampler.cfg_scale;
        EpsModel model = [&engine, &adapter, &uncond, cfg_scale](
                             const Tensor& x, int64_t t, const ConditioningBundle& c) {
            Tensor e_cond = engine.net.forward(x, t, c, &adapter.lora);
            if (cfg_scale == 1.0) return e_cond;
            Tensor e_uncond = engine.net.forward(x, t, uncond, &adapter.lora);
            return add(e_uncond, scale(sub(e_cond, e_uncond), cfg_scale));
        };

        const FaceWorld& fw = default_faceworld();
        ParserFn parser = [&fw](const Tensor& img) { return fw.parser.parse(img); };
        std::vector<int64_t> active = cfg.guidance.active_steps(cfg.sampler.num_steps);
        std::set<int64_t> active_set(active.begin(), active.end());

        SamplerHooks hooks;
        if (!active_set.empty()) {
            hooks.guidance = [&](const SampleState& state,
                                 ConditioningBundle& bundle) -> GuidanceResult {
                if (!active_set.count(state.step)) return {};
                GuidanceStepResult res =
                    optimize_embedding_step(state, bundle, target_sig, cfg.guidance, model,
                                            engine.sched, parser, &mask3);
                bundle = res.cond;
                report.guidance_trace.push_back(res.entry);
                return {res.eps};
            };
        }
        // during the structure-forming early steps the mask interior is
        // soft, so the target's coarse geometry seeds the face region; the
        // identity paint then works over that scaffold
        Tensor soft_mask3 = mask3.detach();
        for (double& v : soft_mask3.mutable_data()) {
            if (v == 1.0) v = cfg.structure_bleed;
        }
        const int64_t structure_steps = cfg.sampler.num_steps / 3;
        Rng inpaint_rng(mix_seed(cfg.seed, 0x1277ULL));
        int64_t step_counter = 0;
        hooks.inpaint = [&, structure_steps](const Tensor& x, int64_t t) {
            const bool early = step_counter < structure_steps;
            ++step_counter;
            return inpaint_blend(x, target_sig, early ? soft_mask3 : mask3, t, engine.sched,
                                 inpaint_rng);
        };

        SamplerConfig scfg = cfg.sampler;
        scfg.seed = mix_seed(cfg.seed, scfg.seed ^ 0x5A3DULL);
        Tensor x0 = sample(model, cond, scfg, engine.sched, {3, dc.height, dc.width}, hooks);
        return signal_to_image(x0);
    });
    report.timings.sampling_s = elapsed_s(t_sample);

    // (5)+(6) feathered composite, then the blending stage
    const auto t_blend = std::chrono::steady_clock::now();
    Tensor output = run_stage("blend", [&] {
        Tensor mf = feathered_mask(mask, cfg.feather_radius);
        const int64_t hw = dc.height * dc.width;
        std::vector<double> comp(static_cast<size_t>(3 * hw));
        std::vector<double> raw(static_cast<size_t>(3 * hw));
        for (int c = 0; c < 3; ++c) {
            for (int64_t p = 0; p < hw; ++p) {
                const double m = mf.at(p);
                const double gv = generated.at(c * hw + p);
                const double tv = target.at(c * hw + p);
                comp[static_cast<size_t>(c * hw + p)] =
                    m == 1.0 ? gv : (m == 0.0 ? tv : m * gv + (1.0 - m) * tv);
                raw[static_cast<size_t>(c * hw + p)] = mask.at(p) == 1.0 ? gv : tv;
            }
        }
        report.raw_composite = Tensor::from_data({3, dc.height, dc.width}, std::move(raw));
        Tensor composite = Tensor::from_data({3, dc.height, dc.width}, std::move(comp));
        return blend_restore(composite, target, mask, cfg.feather_radius);
    });
    report.output = output;
    report.timings.blend_s = elapsed_s(t_blend);

    // metrics vs source and target
    const auto t_metrics = std::chrono::steady_clock::now();
    run_stage("metrics", [&] {
        report.cos_source = cosine_id(report.output, source);
        report.cos_target = cosine_id(report.output, target);
        report.l1_source = param_l1(report.output, source);
        report.l1_target = param_l1(report.output, target);
        return 0;
    });
    report.timings.metrics_s = elapsed_s(t_metrics);
    return report;
}

// --------------------------------------------------------------- evaluate ---

EvalSummary evaluate(const SwapEngine& engine, const std::vector<EvalPair>& pairs,
                     const SwapConfig& cfg) {
    if (pairs.empty()) throw ContractError("evaluate: needs at least one pair");
    EvalSummary summary;
    summary.rows.resize(pairs.size());

    for (size_t i = 0; i < pairs.size(); ++i) {
        EvalRow& row = summary.rows[i];
        try {
            SwapConfig pair_cfg = cfg;
            pair_cfg.seed = mix_seed(cfg.seed, static_cast<uint64_t>(i));
            SwapReport rep =
                swap(engine, pairs[i].source, pairs[i].target, pairs[i].target_landmarks, pair_cfg);
            row.cos_out_source = rep.cos_source;
            row.out_vs_target = rep.l1_target;
            row.cos_target_source = cosine_id(pairs[i].target, pairs[i].source);
            row.source_vs_target = param_l1(pairs[i].source, pairs[i].target);
            row.ok = true;
        } catch (const Error& e) {
            row.ok = false;
            row.error = e.what();
            ++summary.failures;
        }
    }

    double n = 0.0;
    for (const EvalRow& row : summary.rows) {
        if (!row.ok) continue;
        n += 1.0;
        summary.mean_cos += row.cos_out_source;
        summary.mean_dist.expr += row.out_vs_target.expr;
        summary.mean_dist.pose += row.out_vs_target.pose;
        summary.mean_dist.shape += row.out_vs_target.shape;
        summary.baseline_cos += row.cos_target_source;
        summary.baseline_dist.expr += row.source_vs_target.expr;
        summary.baseline_dist.pose += row.source_vs_target.pose;
        summary.baseline_dist.shape += row.source_vs_target.shape;
    }
    if (n > 0.0) {
        summary.mean_cos /= n;
        summary.mean_dist.expr /= n;
        summary.mean_dist.pose /= n;
        summary.mean_dist.shape /= n;
        summary.baseline_cos /= n;
        summary.baseline_dist.expr /= n;
        summary.baseline_dist.pose /= n;
        summary.baseline_dist.shape /= n;
    }
    return summary;
}

std::string EvalSummary::table_text() const {
    char line[256];
    std::ostringstream os;
    os << "Method             Cos↑     Expr↓    Pose↓    Shape↓\n";
    std::snprintf(line, sizeof(line), "%-18s %-8.4f %-8.4f %-8.4f %-8.4f\n", "source vs target",
                  baseline_cos, baseline_dist.expr, baseline_dist.pose, baseline_dist.shape);
    os << line;
    std::snprintf(line, sizeof(line), "%-18s %-8.4f %-8.4f %-8.4f %-8.4f\n", "swap output",
                  mean_cos, mean_dist.expr, mean_dist.pose, mean_dist.shape);
    os << line;
    os << "pairs: " << rows.size() << "  failures: " << failures << "\n";
    return os.str();
}

std::string EvalSummary::json_text() const {
    json j;
    j["pairs"] = json::array();
    for (const EvalRow& row : rows) {
        json r;
        r["ok"] = row.ok;
        if (!row.ok) {
            r["error"] = row.error;
        } else {
            r["cos_output_source"] = row.cos_out_source;
            r["expr_output_target"] = row.out_vs_target.expr;
            r["pose_output_target"] = row.out_vs_target.pose;
            r["shape_output_target"] = row.out_vs_target.shape;
            r["cos_target_source"] = row.cos_target_source;
            r["expr_source_target"] = row.source_vs_target.expr;
            r["pose_source_target"] = row.source_vs_target.pose;
            r["shape_source_target"] = row.source_vs_target.shape;
        }
        j["pairs"].push_back(r);
    }
    j["mean"] = {{"cos", mean_cos},
                 {"expr", mean_dist.expr},
                 {"pose", mean_dist.pose},
                 {"shape", mean_dist.shape}};
    j["baseline"] = {{"cos", baseline_cos},
                     {"expr", baseline_dist.expr},
                     {"pose", baseline_dist.pose},
                     {"shape", baseline_dist.shape}};
    j["failures"] = failures;
    return j.dump(2);
}

}  // namespace swapdiff
