// Scratch driver used while tuning the face world; not part of the suite.
#include <cstdio>

#include "swapdiff/faceworld.hpp"

using namespace swapdiff;

int main() {
    // parser agreement on a fresh set of faces
    const FaceWorld& fw = default_faceworld();
    Rng rng(555);
    double agree = 0.0;
    for (int i = 0; i < 20; ++i) {
        RenderResult r = render_face(random_face_params(rng), 64);
        agree += FaceParser::agreement(fw.parser.parse(r.image), r.parse_map);
    }
    std::printf("parser agreement (20 fresh faces): %.4f\n", agree / 20.0);

    // embedder separation
    Rng prng(777);
    double same_sum = 0.0, cross_sum = 0.0;
    double same_min = 1.0, cross_max = -1.0;
    const int pairs = 100;
    for (int i = 0; i < pairs; ++i) {
        FaceParams a = random_face_params(prng);
        FaceParams a2 = random_variant(a, prng);
        FaceParams b = random_face_params(prng);
        Tensor ea = fw.embedder.embed(render_face(a, 64).image);
        Tensor ea2 = fw.embedder.embed(render_face(a2, 64).image);
        Tensor eb = fw.embedder.embed(render_face(b, 64).image);
        double cs = IdentityEmbedder::cosine(ea, ea2);
        double cx = IdentityEmbedder::cosine(ea, eb);
        same_sum += cs;
        cross_sum += cx;
        same_min = std::min(same_min, cs);
        cross_max = std::max(cross_max, cx);
    }
    std::printf("same-id cos: mean %.4f min %.4f | cross-id cos: mean %.4f max %.4f\n",
                same_sum / pairs, same_min, cross_sum / pairs, cross_max);

    // estimator round trip
    Rng erng(999);
    double worst = 0.0, sum_err = 0.0;
    int flagged = 0;
    for (int i = 0; i < 20; ++i) {
        FaceParams p = random_face_params(erng);
        RenderResult r = render_face(p, 64);
        ParamEstimate est = estimate_params(r.image);
        if (est.low_confidence) ++flagged;
        for (int d = 0; d < 8; ++d) {
            double e = std::abs(est.params.identity[d] - p.identity[d]);
            worst = std::max(worst, e);
            sum_err += e;
        }
        for (int d = 0; d < 4; ++d) {
            double e = std::abs(est.params.expression[d] - p.expression[d]);
            worst = std::max(worst, e);
            sum_err += e;
        }
        for (int d = 0; d < 2; ++d) {
            double e = std::abs(est.params.pose[d] - p.pose[d]);
            worst = std::max(worst, e);
            sum_err += e;
        }
    }
    std::printf("estimator: worst |err| %.4f mean %.4f flagged %d/20\n", worst,
                sum_err / (20.0 * 14.0), flagged);

    // mask coverage of feature classes
    Rng mrng(1212);
    double worst_cover = 1.0;
    for (int i = 0; i < 20; ++i) {
        RenderResult r = render_face(random_face_params(mrng), 64);
        Tensor mask = face_mask(r.landmarks, 64, 3);
        const int64_t hw = 64 * 64;
        int64_t feat = 0, covered = 0;
        for (int64_t p = 0; p < hw; ++p) {
            int best = 0;
            for (int c = 1; c < 6; ++c) {
                if (r.parse_map.at(c * hw + p) > r.parse_map.at(best * hw + p)) best = c;
            }
            if (best == kEyes || best == kNose || best == kMouth) {
                ++feat;
                if (mask.at(p) == 1.0) ++covered;
            }
        }
        worst_cover = std::min(worst_cover, feat ? static_cast<double>(covered) / feat : 1.0);
    }
    std::printf("mask coverage of eyes/nose/mouth pixels (worst of 20): %.4f\n", worst_cover);
    return 0;
}
