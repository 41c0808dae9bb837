// Scratch driver for tuning the full swap; not part of the suite.
#include <chrono>
#include <cstdio>

#include "swapdiff/pipeline.hpp"

using namespace swapdiff;

namespace {

SwapConfig benchmark_config() {
    SwapConfig cfg;
    cfg.customization.train_steps = 200;
    cfg.customization.prior_count = 8;
    cfg.customization.prior_sample_steps = 6;
    cfg.sampler.num_steps = 16;
    cfg.sampler.cfg_scale = 3.0;
    cfg.seed = 0;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    const int n_pairs = argc > 1 ? std::atoi(argv[1]) : 6;
    const int window = argc > 2 ? std::atoi(argv[2]) : 0;
    SwapEngine engine;
    const FaceWorld& fw = default_faceworld();
    ParserFn parser = [&](const Tensor& img) { return fw.parser.parse(img); };

    Rng pair_rng(2025);
    int bg_ok = 0, guid_ok = 0, cos_trend = 0, expr_trend = 0, pose_trend = 0, shape_trend = 0;
    double sum_cos_out = 0, sum_cos_base = 0;
    GroupDistances sum_out, sum_base;

    auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < n_pairs; ++i) {
        RenderResult src = render_face(random_face_params(pair_rng), 64);
        RenderResult tgt = render_face(random_face_params(pair_rng), 64);

        SwapConfig cfg = benchmark_config();
        cfg.seed = 9000 + static_cast<uint64_t>(i);
        if (window == 1) {
            // defaults: final step, inner 8, step 0.1
        } else if (window == 2) {
            cfg.guidance.steps_active = std::vector<int64_t>{12, 13, 14, 15};
            cfg.guidance.inner_iters = 1;
            cfg.guidance.step_size = 0.03;
        }
        if (argc > 3) cfg.structure_bleed = std::atof(argv[3]);
        SwapReport rep = swap(engine, src.image, tgt.image, tgt.landmarks, cfg);

        SwapConfig cfg_off = cfg;
        cfg_off.guidance.enabled = false;
        SwapReport rep_off = swap(engine, src.image, tgt.image, tgt.landmarks, cfg_off);

        // background: bit-exact outside the mask
        Tensor mask = face_mask(tgt.landmarks, 64, cfg.mask_dilation);
        bool bg_exact = true;
        const int64_t hw = 64 * 64;
        for (int64_t p = 0; p < hw && bg_exact; ++p) {
            if (mask.at(p) == 1.0) continue;
            for (int c = 0; c < 3; ++c) {
                if (rep.output.at(c * hw + p) != tgt.image.at(c * hw + p)) {
                    bg_exact = false;
                    break;
                }
            }
        }
        bg_ok += bg_exact;

        double lp_on = facial_guidance_loss(rep.raw_composite, tgt.image, parser).item();
        double lp_off = facial_guidance_loss(rep_off.raw_composite, tgt.image, parser).item();
        guid_ok += lp_on <= lp_off;

        double cos_base = cosine_id(tgt.image, src.image);
        GroupDistances base = param_l1(src.image, tgt.image);
        sum_cos_out += rep.cos_source;
        sum_cos_base += cos_base;
        sum_out.expr += rep.l1_target.expr;
        sum_out.pose += rep.l1_target.pose;
        sum_out.shape += rep.l1_target.shape;
        sum_base.expr += base.expr;
        sum_base.pose += base.pose;
        sum_base.shape += base.shape;
        cos_trend += rep.cos_source > cos_base;
        expr_trend += rep.l1_target.expr < base.expr;
        pose_trend += rep.l1_target.pose < base.pose;
        shape_trend += rep.l1_target.shape < base.shape;

        std::printf(
            "pair %d: bg %s | Lp on %.2f off %.2f %s | cos out %.3f base %.3f | expr %.3f/%.3f "
            "pose %.3f/%.3f shape %.3f/%.3f | guid steps %zu\n",
            i, bg_exact ? "ok" : "FAIL", lp_on, lp_off, lp_on <= lp_off ? "ok" : "MISS",
            rep.cos_source, cos_base, rep.l1_target.expr, base.expr, rep.l1_target.pose, base.pose,
            rep.l1_target.shape, base.shape, rep.guidance_trace.size());
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("\n%d pairs in %.0fs (%.1fs/pair incl. both runs)\n", n_pairs, secs,
                secs / n_pairs);
    std::printf("background exact: %d/%d | guidance wins: %d/%d\n", bg_ok, n_pairs, guid_ok,
                n_pairs);
    std::printf("means: cos out %.4f vs base %.4f | expr %.4f vs %.4f | pose %.4f vs %.4f | "
                "shape %.4f vs %.4f\n",
                sum_cos_out / n_pairs, sum_cos_base / n_pairs, sum_out.expr / n_pairs,
                sum_base.expr / n_pairs, sum_out.pose / n_pairs, sum_base.pose / n_pairs,
                sum_out.shape / n_pairs, sum_base.shape / n_pairs);
    return 0;
}
