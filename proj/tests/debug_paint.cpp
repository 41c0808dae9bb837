#include <cmath>
#include <cstdio>
#include "swapdiff/customization.hpp"
#include "swapdiff/faceworld.hpp"
#include "swapdiff/nn.hpp"

using namespace swapdiff;

int main() {
    DenoiserConfig dc;
    dc.height = 64; dc.width = 64; dc.channels = 3;
    dc.widths = {8, 10, 12};
    dc.token_dim = 16; dc.num_text_tokens = 8; dc.num_image_tokens = 4;
    dc.heads = 4; dc.temb_dim = 16; dc.prior_spread = 0.15;
    NoiseSchedule sched = make_schedule(1000, 1e-4, 0.02);
    Denoiser net(dc, sched, 4242);
    TextEncoder text(8, 16, 777);
    net.param("prior.mean") = image_to_signal(render_face(FaceParams::centered(), 64).image);

    Rng rng(31337);
    Tensor source = render_face(random_face_params(rng), 64).image;

    CustomizationConfig cfg;
    cfg.seed = 99; cfg.learning_rate = 0.005; cfg.lora_alpha = 16.0;
    auto [adapter, report] = train_lora(net, text, source, cfg);

    Tensor sig = image_to_signal(source);
    for (int64_t t : {220L, 350L, 500L, 900L}) {
        Rng nrng(4000 + t);
        Tensor eps = Tensor::randn(sig.shape(), nrng);
        Tensor x_t = add_noise(sig, t, eps, sched);
        ConditioningBundle cb; cb.text_emb = text.embed(cfg.instance_prompt);
        ConditioningBundle ct; ct.text_emb = text.embed(cfg.instance_prompt, adapter.text_overrides());
        Tensor e_base = net.forward(x_t, t, cb);
        Tensor e_tuned = net.forward(x_t, t, ct, &adapter.lora);
        // needed: eps - e_base ; learned: e_tuned - e_base
        double dot = 0, nn = 0, ll = 0;
        for (int64_t i = 0; i < sig.size(); ++i) {
            double need = eps.at(i) - e_base.at(i);
            double got = e_tuned.at(i) - e_base.at(i);
            dot += need * got; nn += need * need; ll += got * got;
        }
        std::printf("t=%3lld: |need| %.3f |learned| %.3f cos %.3f\n",
                    (long long)t, std::sqrt(nn), std::sqrt(ll),
                    dot / std::max(1e-12, std::sqrt(nn * ll)));
    }
    return 0;
}
