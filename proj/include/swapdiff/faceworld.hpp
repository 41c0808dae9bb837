#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "swapdiff/landmarks.hpp"
#include "swapdiff/tensor.hpp"

namespace swapdiff {

// Ground-truth parameters of a synthetic face. All metrics in the evaluation
// harness bottom out in these.
struct FaceParams {
    // skin tone, face width, face height, eye spacing, eye size, nose length,
    // brow thickness, mouth width; each in [-1, 1]
    std::array<double, 8> identity{};
    // mouth curve, mouth open, brow raise, eye openness; each in [-1, 1]
    std::array<double, 4> expression{};
    // yaw-like horizontal shear, in-plane tilt; each in [-0.3, 0.3]
    std::array<double, 2> pose{};

    void validate() const;
    static FaceParams centered() { return FaceParams{}; }
};

FaceParams random_face_params(Rng& rng);
// Same identity, fresh expression and pose.
FaceParams random_variant(const FaceParams& base, Rng& rng);

inline constexpr int64_t kParseClasses = 6;
enum ParseClass { kBackground = 0, kSkin, kEyes, kBrows, kNose, kMouth };

struct RenderResult {
    Tensor image;      // [3,S,S] in [0,1]
    Landmarks landmarks;
    Tensor parse_map;  // [6,S,S] soft class scores, per-pixel sum 1
};

// Deterministic soft raster of an elliptical face over a textured
// background. Landmarks and the per-pixel class map fall out analytically.
RenderResult render_face(const FaceParams& p, int64_t size);

// Convex-hull fill of the landmarks, dilated by `dilation` pixels
// (Chebyshev). Binary [S,S].
Tensor face_mask(const Landmarks& lm, int64_t size, int64_t dilation);

// Differentiable face parser F_P: fixed seeded conv net whose final linear
// layer is least-squares calibrated against ground-truth parse maps of a
// rendered calibration set.
class FaceParser {
public:
    explicit FaceParser(uint64_t seed);

    // image: [3,H,W] -> [6,H,W], softmax over classes per pixel.
    Tensor parse(const Tensor& image) const;

    // Mean per-pixel argmax agreement with a ground-truth parse map.
    static double agreement(const Tensor& predicted, const Tensor& truth);

    const std::map<std::string, Tensor>& params() const { return params_; }

private:
    Tensor features(const Tensor& image) const;  // penultimate activations

    std::map<std::string, Tensor> params_;
};

// Deterministic identity embedding: parse-weighted color and geometry
// statistics, standardized and reliability-weighted against a seeded
// calibration population, then L2-normalized.
class IdentityEmbedder {
public:
    IdentityEmbedder(const FaceParser& parser, uint64_t seed);

    // image: [3,H,W] in [0,1] -> unit-norm [16]
    Tensor embed(const Tensor& image) const;

    static double cosine(const Tensor& a, const Tensor& b);

private:
    std::vector<double> raw_features(const Tensor& image) const;

    const FaceParser* parser_;
    std::vector<double> mean_, stddev_, weight_;
};

struct ParamEstimate {
    FaceParams params;
    double residual_mse = 0.0;
    bool low_confidence = false;
};

// Derivative-free inversion of render_face: deterministic coordinate descent
// (two sweeps, nine-point line search per coordinate) on pixel MSE,
// initialized at the parameter-space center.
ParamEstimate estimate_params(const Tensor& image);

// Parser + embedder calibrated once per process; everything is seeded, so
// the instance is identical across runs.
struct FaceWorld {
    FaceParser parser;
    IdentityEmbedder embedder;

    explicit FaceWorld(uint64_t seed) : parser(seed), embedder(parser, seed + 1) {}
};

const FaceWorld& default_faceworld();

}  // namespace swapdiff
