#include <cmath>

#include "doctest.h"
#include "swapdiff/denoiser.hpp"
#include "swapdiff/diffusion.hpp"

using namespace swapdiff;

namespace {

NoiseSchedule hand_schedule(std::vector<double> alpha_bar) {
    NoiseSchedule s;
    s.T = static_cast<int64_t>(alpha_bar.size());
    s.beta_start = 1e-4;
    s.beta_end = 0.02;
    s.alpha_bar = std::move(alpha_bar);
    return s;
}

// Closed-form optimal eps for a point mass at x0.
EpsModel point_mass_denoiser(const Tensor& x0, const NoiseSchedule& sched) {
    return [x0, &sched](const Tensor& x_t, int64_t t, const ConditioningBundle&) {
        const double ab = sched.alpha_bar_at(t);
        return scale(sub(x_t, scale(x0, std::sqrt(ab))), 1.0 / std::sqrt(1.0 - ab));
    };
}

}  // namespace

TEST_CASE("make_schedule: endpoints injected correctly") {
    NoiseSchedule one = make_schedule(1, 1e-4, 1e-4);
    CHECK(one.alpha_bar[0] == doctest::Approx(0.9999).epsilon(1e-12));

    NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
    // independent product oracle
    double prod = 1.0;
    for (int t = 0; t < 1000; ++t) {
        double beta = 1e-4 + (0.02 - 1e-4) * t / 999.0;
        prod *= 1.0 - beta;
        CHECK(s.alpha_bar[static_cast<size_t>(t)] == doctest::Approx(prod).epsilon(1e-13));
    }
    CHECK(s.alpha_bar.back() == doctest::Approx(4.04e-5).epsilon(0.01));

    for (size_t t = 1; t < s.alpha_bar.size(); ++t) {
        CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
        CHECK(s.alpha_bar[t] > 0.0);
    }

    CHECK_THROWS_AS(make_schedule(0, 1e-4, 0.02), ConfigError);
    CHECK_THROWS_AS(make_schedule(10, 0.0, 0.02), ConfigError);
    CHECK_THROWS_AS(make_schedule(10, 0.03, 0.02), ConfigError);
    CHECK_THROWS_AS(make_schedule(10, 0.1, 1.0), ConfigError);
}

TEST_CASE("add_noise: endpoint, hand case, noiseless scaling") {
    NoiseSchedule unit = hand_schedule({1.0});
    Tensor x0 = Tensor::from_data({1}, {0.7});
    Tensor eps = Tensor::from_data({1}, {123.0});
    CHECK(add_noise(x0, 0, eps, unit).at(0) == 0.7);

    NoiseSchedule quarter = hand_schedule({0.25});
    Tensor one = Tensor::from_data({1}, {1.0});
    Tensor neg = Tensor::from_data({1}, {-0.5});
    CHECK(add_noise(one, 0, neg, quarter).at(0) == doctest::Approx(0.0669873).epsilon(1e-6));

    Tensor zero = Tensor::from_data({1}, {0.0});
    CHECK(add_noise(one, 0, zero, quarter).at(0) == doctest::Approx(0.5).epsilon(1e-12));

    Tensor bad = Tensor::from_data({2}, {0.0, 0.0});
    CHECK_THROWS_AS(add_noise(x0, 0, bad, quarter), DimensionError);
}

TEST_CASE("predict_x0: endpoint, rescale, inversion, singularity") {
    NoiseSchedule unit = hand_schedule({1.0});
    Tensor xt = Tensor::from_data({1}, {0.5});
    Tensor eps = Tensor::from_data({1}, {0.3});
    CHECK(predict_x0(xt, eps, 0, unit).at(0) == doctest::Approx(0.5).epsilon(1e-12));

    NoiseSchedule p64 = hand_schedule({0.64});
    Tensor x8 = Tensor::from_data({1}, {0.8});
    Tensor z = Tensor::from_data({1}, {0.0});
    CHECK(predict_x0(x8, z, 0, p64).at(0) == doctest::Approx(1.0).epsilon(1e-12));

    NoiseSchedule quarter = hand_schedule({0.25});
    Tensor noisy = Tensor::from_data({1}, {0.0669873});
    Tensor neg = Tensor::from_data({1}, {-0.5});
    CHECK(predict_x0(noisy, neg, 0, quarter).at(0) == doctest::Approx(1.0).epsilon(1e-6));

    NoiseSchedule degenerate = hand_schedule({0.0});
    CHECK_THROWS_AS(predict_x0(xt, eps, 0, degenerate), SingularityError);
}

TEST_CASE("round trip: predict_x0 inverts add_noise") {
    NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
    Rng rng(77);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor x0 = Tensor::randn({3, 4, 4}, rng);
        Tensor eps = Tensor::randn({3, 4, 4}, rng);
        int64_t t = rng.uniform_int(0, 1000);
        Tensor rec = predict_x0(add_noise(x0, t, eps, s), eps, t, s);
        for (int64_t i = 0; i < x0.size(); ++i) {
            CHECK(rec.at(i) == doctest::Approx(x0.at(i)).epsilon(1e-12));
        }
    }
}

TEST_CASE("ddim_step: collapse, hand case, fixed point, eta errors") {
    SamplerConfig cfg;
    cfg.eta = 0.0;
    Rng rng(3);

    NoiseSchedule two = hand_schedule({0.5, 0.25});
    Tensor xt = Tensor::from_data({1}, {0.0669873});
    Tensor eps = Tensor::from_data({1}, {-0.5});

    // final transition collapses onto the x0 prediction
    Tensor fin = ddim_step(xt, eps, 1, -1, cfg, two, rng);
    CHECK(fin.at(0) == doctest::Approx(1.0).epsilon(1e-6));

    Tensor step = ddim_step(xt, eps, 1, 0, cfg, two, rng);
    CHECK(step.at(0) == doctest::Approx(0.3535534).epsilon(1e-6));

    NoiseSchedule flat = hand_schedule({0.5, 0.5});
    Tensor x = Tensor::from_data({1}, {0.42});
    Tensor zero = Tensor::from_data({1}, {0.0});
    CHECK(ddim_step(x, zero, 1, 0, cfg, flat, rng).at(0) == doctest::Approx(0.42).epsilon(1e-12));

    CHECK_THROWS_AS(ddim_step(xt, eps, 0, 1, cfg, two, rng), ContractError);

    SamplerConfig wild;
    wild.eta = 5.0;  // bypasses validate(); the step itself must reject it
    CHECK_THROWS_AS(ddim_step(xt, eps, 1, 0, wild, two, rng), ConfigError);
}

TEST_CASE("ddim_step: eta=0 consumes no randomness, eta>0 does") {
    NoiseSchedule s = make_schedule(100, 1e-4, 0.02);
    Tensor xt = Tensor::from_data({4}, {0.1, -0.2, 0.3, 0.4});
    Tensor eps = Tensor::from_data({4}, {0.5, 0.5, -0.5, 0.0});

    SamplerConfig det;
    det.eta = 0.0;
    Rng r1(5);
    ddim_step(xt, eps, 50, 40, det, s, r1);
    CHECK(r1.next_u64() == Rng(5).next_u64());

    SamplerConfig sto;
    sto.eta = 0.5;
    Rng r2(5);
    ddim_step(xt, eps, 50, 40, sto, s, r2);
    CHECK(r2.next_u64() != Rng(5).next_u64());
}

TEST_CASE("sample: analytic point-mass denoiser recovers x0") {
    NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
    Rng rng(9);
    Tensor x0 = Tensor::randn({2, 4, 4}, rng);
    ConditioningBundle cond;
    for (int64_t steps : {5, 20, 50}) {
        SamplerConfig cfg;
        cfg.eta = 0.0;
        cfg.num_steps = steps;
        cfg.seed = 1234;
        Tensor out = sample(point_mass_denoiser(x0, s), cond, cfg, s, {2, 4, 4});
        for (int64_t i = 0; i < x0.size(); ++i) {
            CHECK(std::abs(out.at(i) - x0.at(i)) <= 1e-6);
        }
    }
}

TEST_CASE("sample: fixed seed is bit-identical; all-ones inpaint mask is a no-op") {
    NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
    Rng rng(10);
    Tensor x0 = Tensor::randn({2, 4, 4}, rng);
    ConditioningBundle cond;
    SamplerConfig cfg;
    cfg.eta = 0.0;
    cfg.num_steps = 10;
    cfg.seed = 42;

    Tensor a = sample(point_mass_denoiser(x0, s), cond, cfg, s, {2, 4, 4});
    Tensor b = sample(point_mass_denoiser(x0, s), cond, cfg, s, {2, 4, 4});
    for (int64_t i = 0; i < a.size(); ++i) CHECK(a.at(i) == b.at(i));

    Tensor ones = Tensor::full({2, 4, 4}, 1.0);
    Tensor targ = Tensor::randn({2, 4, 4}, rng);
    SamplerHooks hooks;
    Rng hook_rng(777);
    hooks.inpaint = [&](const Tensor& x, int64_t t) {
        return inpaint_blend(x, targ, ones, t, s, hook_rng);
    };
    Tensor c = sample(point_mass_denoiser(x0, s), cond, cfg, s, {2, 4, 4}, hooks);
    for (int64_t i = 0; i < a.size(); ++i) CHECK(a.at(i) == c.at(i));
}

TEST_CASE("sample: binary inpaint mask pins the known region to the target") {
    NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
    Rng rng(12);
    Tensor x0 = Tensor::randn({1, 4, 4}, rng);
    Tensor targ = Tensor::randn({1, 4, 4}, rng);
    std::vector<double> mvals(16, 0.0);
    for (int i = 0; i < 8; ++i) mvals[static_cast<size_t>(i)] = 1.0;
    Tensor mask = Tensor::from_data({1, 4, 4}, mvals);

    ConditioningBundle cond;
    SamplerConfig cfg;
    cfg.eta = 0.0;
    cfg.num_steps = 10;
    cfg.seed = 5;
    SamplerHooks hooks;
    Rng hook_rng(888);
    hooks.inpaint = [&](const Tensor& x, int64_t t) {
        return inpaint_blend(x, targ, mask, t, s, hook_rng);
    };
    Tensor out = sample(point_mass_denoiser(x0, s), cond, cfg, s, {1, 4, 4}, hooks);
    for (int64_t i = 8; i < 16; ++i) CHECK(out.at(i) == targ.at(i));  // bit-exact outside mask
}

TEST_CASE("inpaint_blend: endpoints and per-pixel oracle") {
    NoiseSchedule s = make_schedule(100, 1e-4, 0.02);
    Rng rng(14);
    Tensor gen = Tensor::randn({2, 3, 3}, rng);
    Tensor targ = Tensor::randn({2, 3, 3}, rng);

    Tensor ones = Tensor::full({2, 3, 3}, 1.0);
    Rng r1(50);
    Tensor kept = inpaint_blend(gen, targ, ones, 10, s, r1);
    for (int64_t i = 0; i < gen.size(); ++i) CHECK(kept.at(i) == gen.at(i));

    Tensor zeros = Tensor::zeros({2, 3, 3});
    Rng r2(51);
    Tensor replaced = inpaint_blend(gen, targ, zeros, 10, s, r2);
    Rng r2b(51);
    Tensor z = Tensor::randn({2, 3, 3}, r2b);
    Tensor expected = add_noise(targ, 10, z, s);
    for (int64_t i = 0; i < gen.size(); ++i) CHECK(replaced.at(i) == expected.at(i));

    std::vector<double> mv(18);
    Rng r3(52);
    for (double& v : mv) v = r3.uniform() < 0.5 ? 0.0 : 1.0;
    Tensor mask = Tensor::from_data({2, 3, 3}, mv);
    Rng r4(53);
    Tensor blended = inpaint_blend(gen, targ, mask, 10, s, r4);
    Rng r4b(53);
    Tensor z2 = Tensor::randn({2, 3, 3}, r4b);
    for (int64_t i = 0; i < gen.size(); ++i) {
        double m = mask.at(i);
        double noised = std::sqrt(s.alpha_bar_at(10)) * targ.at(i) +
                        std::sqrt(1.0 - s.alpha_bar_at(10)) * z2.at(i);
        double want = m * gen.at(i) + (1.0 - m) * noised;
        CHECK(blended.at(i) == doctest::Approx(want).epsilon(1e-12));
    }

    Tensor bad = Tensor::full({2, 3, 3}, 1.5);
    Rng r5(54);
    CHECK_THROWS_AS(inpaint_blend(gen, targ, bad, 10, s, r5), ContractError);
}

TEST_CASE("sampler config validation") {
    NoiseSchedule s = make_schedule(100, 1e-4, 0.02);
    SamplerConfig cfg;
    cfg.num_steps = 101;
    CHECK_THROWS_AS(cfg.validate(s), ConfigError);
    cfg.num_steps = 10;
    cfg.eta = 1.5;
    CHECK_THROWS_AS(cfg.validate(s), ConfigError);
    cfg.eta = 0.3;
    cfg.cfg_scale = -1.0;
    CHECK_THROWS_AS(cfg.validate(s), ConfigError);
}
