#pragma once

#include <map>
#include <string>
#include <vector>

#include "swapdiff/landmarks.hpp"
#include "swapdiff/tensor.hpp"

namespace swapdiff {

enum class ConditionKind { canny, annotation };

struct ConditionMap {
    ConditionKind kind = ConditionKind::canny;
    Tensor map;           // [H,W], values in [0,1]
    double weight = 1.0;  // >= 0, scales this map's residual contribution
};

// Classic edge chain: Gaussian blur, Sobel gradients, non-maximum
// suppression along the quantized gradient direction, double-threshold
// hysteresis. Input is grayscale in [0,1]; output map is binary.
ConditionMap canny(const Tensor& image, double low, double high, double blur_sigma);

// Deterministic sprite map: filled discs at the eye centers, nose tip and
// mouth corners, line segments for the brows and the mouth. Binary output.
ConditionMap render_annotation(const Landmarks& lm, int64_t size);

// One small conv encoder per condition kind with zero-initialized 1x1 output
// taps, so an untrained encoder contributes nothing. Residual channel widths
// mirror the denoiser's per-resolution widths.
class ControlEncoder {
public:
    ControlEncoder(std::vector<int64_t> widths, uint64_t seed);

    // map: [H,W] -> residuals at [w0,H,W], [w1,H/2,W/2], [w2,H/4,W/4]
    std::vector<Tensor> forward(const Tensor& map) const;

    std::map<std::string, Tensor>& params() { return params_; }
    const std::map<std::string, Tensor>& params() const { return params_; }

private:
    std::vector<int64_t> widths_;
    std::map<std::string, Tensor> params_;
};

// Encoders for both condition kinds plus the weighted-sum combiner.
class ControlStack {
public:
    ControlStack(std::vector<int64_t> widths, uint64_t seed);

    // Weight-scaled sum over maps of each map's own encoder output; one
    // residual tensor per denoiser resolution. All maps must share H x W.
    std::vector<Tensor> control_forward(const std::vector<ConditionMap>& maps) const;

    ControlEncoder& encoder(ConditionKind kind);
    const ControlEncoder& encoder(ConditionKind kind) const;

private:
    ControlEncoder canny_enc_;
    ControlEncoder annotation_enc_;
};

}  // namespace swapdiff
