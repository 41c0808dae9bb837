#include <cmath>
#include <cstdio>

#include "doctest.h"
#include "swapdiff/denoiser.hpp"
#include "swapdiff/nn.hpp"
#include "swapdiff/params_io.hpp"

using namespace swapdiff;

namespace {

DenoiserConfig tiny_config() {
    DenoiserConfig cfg;
    cfg.height = 8;
    cfg.width = 8;
    cfg.channels = 2;
    cfg.widths = {3, 4, 5};
    cfg.token_dim = 8;
    cfg.num_text_tokens = 4;
    cfg.num_image_tokens = 2;
    cfg.heads = 2;
    cfg.temb_dim = 8;
    return cfg;
}

struct TinyWorld {
    NoiseSchedule sched = make_schedule(100, 1e-4, 0.02);
    Denoiser net{tiny_config(), sched, 1234};
    ConditioningBundle cond;

    TinyWorld() {
        Rng rng(55);
        cond.text_emb = Tensor::randn({4, 8}, rng);
    }
};

}  // namespace

TEST_CASE("denoiser: forward is a pure function") {
    TinyWorld w;
    Rng rng(1);
    Tensor x = Tensor::randn({2, 8, 8}, rng);
    Tensor a = w.net.forward(x, 17, w.cond);
    Tensor b = w.net.forward(x, 17, w.cond);
    REQUIRE(a.shape() == x.shape());
    for (int64_t i = 0; i < a.size(); ++i) CHECK(a.at(i) == b.at(i));
    CHECK(a.all_finite());
}

TEST_CASE("denoiser: zero control residuals equal absent residuals") {
    TinyWorld w;
    Rng rng(2);
    Tensor x = Tensor::randn({2, 8, 8}, rng);
    Tensor plain = w.net.forward(x, 9, w.cond);

    ConditioningBundle with_zero = w.cond;
    with_zero.control_residuals = {Tensor::zeros({3, 8, 8}), Tensor::zeros({4, 4, 4}),
                                   Tensor::zeros({5, 2, 2})};
    Tensor zeroed = w.net.forward(x, 9, with_zero);
    for (int64_t i = 0; i < plain.size(); ++i) CHECK(plain.at(i) == zeroed.at(i));

    ConditioningBundle bad = w.cond;
    bad.control_residuals = {Tensor::zeros({3, 8, 8}), Tensor::zeros({4, 8, 8}),
                             Tensor::zeros({5, 2, 2})};
    CHECK_THROWS_AS(w.net.forward(x, 9, bad), DimensionError);
}

TEST_CASE("denoiser: freshly initialized lora is the identity adapter") {
    TinyWorld w;
    Rng rng(3);
    Tensor x = Tensor::randn({2, 8, 8}, rng);
    LoraSet lora = w.net.make_lora(4, 4.0, 99);
    Tensor base = w.net.forward(x, 30, w.cond);
    Tensor adapted = w.net.forward(x, 30, w.cond, &lora);
    for (int64_t i = 0; i < base.size(); ++i) CHECK(base.at(i) == adapted.at(i));
}

TEST_CASE("lora_forward: hand case, base fallback, parameter count, bad shapes") {
    Tensor w = Tensor::from_data({1, 1}, {2.0});
    Tensor x = Tensor::from_data({1, 1}, {1.0});
    LoraPair lora;
    lora.down = Tensor::from_data({1, 1}, {1.0});
    lora.up = Tensor::from_data({1, 1}, {3.0});
    lora.alpha = 1.0;  // alpha/r == 1
    CHECK(lora_forward(x, w, &lora).item() == doctest::Approx(5.0).epsilon(1e-14));

    CHECK(lora_forward(x, w, nullptr).item() == doctest::Approx(2.0));

    LoraPair r2;
    r2.down = Tensor::zeros({2, 8});
    r2.up = Tensor::zeros({8, 2});
    CHECK(r2.parameter_count() == 32);  // r * (d_in + d_out)

    LoraPair bad;
    bad.down = Tensor::zeros({2, 3});
    bad.up = Tensor::zeros({1, 5});
    Tensor x3 = Tensor::zeros({3, 1});
    Tensor w13 = Tensor::zeros({1, 3});
    CHECK_THROWS_AS(lora_forward(x3, w13, &bad), ConfigError);
}

TEST_CASE("lora set: total trainable parameters match the construction rule") {
    TinyWorld w;
    const int64_t rank = 4;
    LoraSet lora = w.net.make_lora(rank, 4.0, 7);
    int64_t expected = 0;
    for (const auto& [name, dims] : w.net.adapted_projections()) {
        expected += rank * (dims.first + dims.second);
    }
    CHECK(lora.parameter_count() == expected);
    CHECK(lora.pairs.size() == 12);  // q/k/v/o at three resolutions
}

TEST_CASE("decoupled attention: disabled branch, symmetry, scalar hand case") {
    Rng rng(8);
    const int64_t dk = 4;
    CrossAttentionWeights weights;
    weights.wk = Tensor::randn({dk, dk}, rng);
    weights.wv = Tensor::randn({dk, dk}, rng);
    weights.wk_img = weights.wk;
    weights.wv_img = weights.wv;

    Tensor q = Tensor::randn({dk, 5}, rng);
    Tensor emb = Tensor::randn({3, dk}, rng);

    Tensor text_only = decoupled_cross_attention(q, emb, std::nullopt, 0.6, weights, 2);
    Tensor lambda0 = decoupled_cross_attention(q, emb, emb, 0.0, weights, 2);
    for (int64_t i = 0; i < text_only.size(); ++i) CHECK(text_only.at(i) == lambda0.at(i));

    // image branch == text branch with identical projections and lambda=1
    Tensor doubled = decoupled_cross_attention(q, emb, emb, 1.0, weights, 2);
    for (int64_t i = 0; i < text_only.size(); ++i) {
        CHECK(doubled.at(i) == doctest::Approx(2.0 * text_only.at(i)).epsilon(1e-14));
    }

    // single query, single token, scalar dims: softmax over one token is 1,
    // so the output is v = wv * e = 3 * 1.5
    CrossAttentionWeights s1;
    s1.wk = Tensor::from_data({1, 1}, {2.0});
    s1.wv = Tensor::from_data({1, 1}, {3.0});
    s1.wk_img = s1.wk;
    s1.wv_img = s1.wv;
    Tensor q1 = Tensor::from_data({1, 1}, {0.5});
    Tensor e1 = Tensor::from_data({1, 1}, {1.5});
    CHECK(decoupled_cross_attention(q1, e1, std::nullopt, 0.0, s1, 1).item() ==
          doctest::Approx(4.5).epsilon(1e-14));
}

TEST_CASE("decoupled attention: output is linear in the adapter scale") {
    Rng rng(9);
    CrossAttentionWeights weights;
    weights.wk = Tensor::randn({4, 4}, rng);
    weights.wv = Tensor::randn({4, 4}, rng);
    weights.wk_img = Tensor::randn({4, 4}, rng);
    weights.wv_img = Tensor::randn({4, 4}, rng);
    Tensor q = Tensor::randn({4, 6}, rng);
    Tensor text = Tensor::randn({3, 4}, rng);
    Tensor img = Tensor::randn({2, 4}, rng);

    Tensor at0 = decoupled_cross_attention(q, text, img, 0.0, weights, 2);
    Tensor at1 = decoupled_cross_attention(q, text, img, 1.0, weights, 2);
    Tensor at_half = decoupled_cross_attention(q, text, img, 0.5, weights, 2);
    // d(output)/d(lambda) is the image-branch output, so the midpoint is exact
    for (int64_t i = 0; i < at0.size(); ++i) {
        double branch = at1.at(i) - at0.at(i);
        CHECK(at_half.at(i) == doctest::Approx(at0.at(i) + 0.5 * branch).epsilon(1e-12));
    }
}

TEST_CASE("denoiser: gradients match finite differences") {
    TinyWorld w;
    Rng rng(10);
    LoraSet lora = w.net.make_lora(2, 2.0, 77);
    Rng up_rng(78);
    for (auto& [name, pair] : lora.pairs) {
        pair.up = Tensor::randn(pair.up.shape(), up_rng);
        for (double& v : pair.up.mutable_data()) v *= 0.3;
    }

    const int64_t t = 41;
    Tensor wsum = Tensor::randn({2, 8, 8}, rng);
    auto scalarize = [&](const Tensor& out) { return sum(mul(out, wsum)); };

    for (int probe = 0; probe < 3; ++probe) {
        Rng prng = rng.fork(static_cast<uint64_t>(probe) + 1);
        Tensor x = Tensor::randn({2, 8, 8}, prng);
        ConditioningBundle cond = w.cond;
        cond.text_emb = Tensor::randn({4, 8}, prng);

        double ex = check_gradient(
            [&](const Tensor& xt) { return scalarize(w.net.forward(xt, t, cond, &lora)); }, x,
            1e-5);
        CHECK(ex <= 1e-4);

        double ee = check_gradient(
            [&](const Tensor& emb) {
                ConditioningBundle c2 = cond;
                c2.text_emb = emb;
                return scalarize(w.net.forward(x, t, c2, &lora));
            },
            cond.text_emb, 1e-5);
        CHECK(ee <= 1e-4);

        double ea = check_gradient(
            [&](const Tensor& a) {
                LoraSet l2 = lora;
                l2.pairs["attn0.q"].down = a;
                return scalarize(w.net.forward(x, t, cond, &l2));
            },
            lora.pairs["attn0.q"].down, 1e-5);
        CHECK(ea <= 1e-4);

        double eb = check_gradient(
            [&](const Tensor& b) {
                LoraSet l2 = lora;
                l2.pairs["attn1.v"].up = b;
                return scalarize(w.net.forward(x, t, cond, &l2));
            },
            lora.pairs["attn1.v"].up, 1e-5);
        CHECK(eb <= 1e-4);
    }
}

TEST_CASE("denoiser: no discontinuities under small latent perturbations") {
    TinyWorld w;
    Rng rng(12);
    for (int probe = 0; probe < 5; ++probe) {
        Rng prng = rng.fork(static_cast<uint64_t>(probe));
        Tensor x = Tensor::randn({2, 8, 8}, prng);
        Tensor dir = Tensor::randn({2, 8, 8}, prng);
        Tensor base = w.net.forward(x, 23, w.cond);
        double prev_ratio = -1.0;
        for (double eps : {1e-3, 1e-4, 1e-5}) {
            Tensor xp = add(x, scale(dir, eps));
            Tensor out = w.net.forward(xp, 23, w.cond);
            double diff = 0.0;
            for (int64_t i = 0; i < out.size(); ++i) diff += std::abs(out.at(i) - base.at(i));
            double ratio = diff / eps;
            if (prev_ratio > 0.0) {
                CHECK(ratio < prev_ratio * 2.0 + 1e-9);  // stays O(||delta||)
            }
            prev_ratio = ratio;
        }
    }
}

TEST_CASE("params: save/load round trip is bit-exact") {
    TinyWorld w;
    const char* path = "tiny_params.swdf";
    save_params(path, kSectionParams, w.net.params());
    std::string tag;
    auto loaded = load_params(path, &tag);
    CHECK(tag == "PRMS");
    CHECK(loaded.size() == w.net.params().size());
    for (const auto& [name, tensor] : w.net.params()) {
        REQUIRE(loaded.count(name) == 1);
        const Tensor& got = loaded[name];
        REQUIRE(got.shape() == tensor.shape());
        for (int64_t i = 0; i < tensor.size(); ++i) CHECK(got.at(i) == tensor.at(i));
    }
    CHECK(params_checksum(loaded) == params_checksum(w.net.params()));
    std::remove(path);
}

TEST_CASE("text encoder: deterministic rows, padding, live overrides") {
    TextEncoder enc(6, 8, 42);
    Tensor a = enc.embed("a photo of sks person");
    Tensor b = enc.embed("a photo of sks person");
    REQUIRE(a.shape() == std::vector<int64_t>({6, 8}));
    for (int64_t i = 0; i < a.size(); ++i) CHECK(a.at(i) == b.at(i));

    // different prompt, different embedding
    Tensor c = enc.embed("a photo of person");
    bool same = true;
    for (int64_t i = 0; i < a.size(); ++i) same = same && a.at(i) == c.at(i);
    CHECK_FALSE(same);

    // override row joins the autodiff graph
    Tensor sks = enc.token_row("sks").clone_data();
    sks.set_requires_grad(true);
    Tensor emb = enc.embed("a photo of sks person", {{"sks", sks}});
    backward(sum(emb));
    REQUIRE(sks.has_grad());
    for (double g : sks.grad()) CHECK(g == 1.0);
}

TEST_CASE("image prompt encoder: deterministic, shape, input validation") {
    ImagePromptEncoder enc(2, 8, 404);
    Rng rng(5);
    Tensor img = Tensor::randn({3, 16, 16}, rng);
    Tensor e1 = enc.encode(img);
    Tensor e2 = enc.encode(img);
    REQUIRE(e1.shape() == std::vector<int64_t>({2, 8}));
    for (int64_t i = 0; i < e1.size(); ++i) CHECK(e1.at(i) == e2.at(i));
    CHECK_THROWS_AS(enc.encode(Tensor::zeros({1, 16, 16})), DimensionError);
}

TEST_CASE("denoiser config validation") {
    DenoiserConfig cfg = tiny_config();
    cfg.token_dim = 7;  // not divisible by heads
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.height = 10;  // not divisible by 4
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.widths = {3, 4};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
