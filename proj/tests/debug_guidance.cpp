#include <cstdio>
#include "swapdiff/pipeline.hpp"

using namespace swapdiff;

int main(int argc, char** argv) {
    int pair_idx = argc > 1 ? std::atoi(argv[1]) : 2;
    int extend = argc > 2 ? std::atoi(argv[2]) : 0;
    double step_size = argc > 3 ? std::atof(argv[3]) : 0.05;
    SwapEngine engine;
    const FaceWorld& fw = default_faceworld();
    ParserFn parser = [&](const Tensor& img) { return fw.parser.parse(img); };

    Rng pair_rng(2025);
    RenderResult src, tgt;
    for (int i = 0; i <= pair_idx; ++i) {
        src = render_face(random_face_params(pair_rng), 64);
        tgt = render_face(random_face_params(pair_rng), 64);
    }

    SwapConfig cfg;
    cfg.customization.train_steps = 60;
    cfg.customization.prior_count = 8;
    cfg.customization.prior_sample_steps = 6;
    cfg.sampler.num_steps = 16;
    cfg.seed = 9000 + static_cast<uint64_t>(pair_idx);
    cfg.guidance.step_size = step_size;
    if (extend == 1) {
        cfg.guidance.steps_active = std::vector<int64_t>{15};
        cfg.guidance.inner_iters = 8;
        cfg.guidance.step_size = 0.1;
    } else if (extend == 2) {
        cfg.guidance.steps_active = std::vector<int64_t>{13, 14, 15};
    } else if (extend == 3) {
        cfg.guidance.steps_active = std::vector<int64_t>{12, 13, 14, 15};
        cfg.guidance.step_size = 0.02;
    }

    SwapReport on = swap(engine, src.image, tgt.image, tgt.landmarks, cfg);
    SwapConfig cfg_off = cfg;
    cfg_off.guidance.enabled = false;
    SwapReport off = swap(engine, src.image, tgt.image, tgt.landmarks, cfg_off);

    for (const auto& e : on.guidance_trace)
        std::printf("  step %lld: %.2f -> %.2f %s\n", (long long)e.step, e.loss_before,
                    e.loss_after, e.loss_after < e.loss_before ? "" : "(rejected)");
    double lp_on = facial_guidance_loss(on.output, tgt.image, parser).item();
    double lp_off = facial_guidance_loss(off.output, tgt.image, parser).item();
    // pre-blend comparison: composite with the raw feathered mask only
    Tensor mask = face_mask(tgt.landmarks, 64, cfg.mask_dilation);
    Tensor mf = feathered_mask(mask, cfg.feather_radius);
    auto pre = [&](const Tensor& genout, const SwapConfig& c) {
        SwapConfig cc = c; cc.feather_radius = 0;  // disable restore stage
        SwapReport r = swap(engine, src.image, tgt.image, tgt.landmarks, cc);
        return facial_guidance_loss(r.output, tgt.image, parser).item();
    };
    double pre_on = pre(on.output, cfg);
    double pre_off = pre(off.output, cfg_off);
    std::printf("final Lp: on %.2f off %.2f %s | pre-blend on %.2f off %.2f %s\n", lp_on, lp_off,
                lp_on <= lp_off ? "ok" : "MISS", pre_on, pre_off, pre_on <= pre_off ? "ok" : "MISS");
    return 0;
}
