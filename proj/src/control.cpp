#include "swapdiff/control.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "swapdiff/nn.hpp"

namespace swapdiff {

namespace {

double pixel(const std::vector<double>& img, int64_t h, int64_t w, int64_t i, int64_t j) {
    i = std::clamp<int64_t>(i, 0, h - 1);
    j = std::clamp<int64_t>(j, 0, w - 1);
    return img[static_cast<size_t>(i * w + j)];
}

std::vector<double> gaussian_blur(const std::vector<double>& img, int64_t h, int64_t w,
                                  double sigma) {
    if (sigma <= 0.0) return img;
    const int64_t radius = static_cast<int64_t>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
    double norm = 0.0;
    for (int64_t k = -radius; k <= radius; ++k) {
        double v = std::exp(-0.5 * (k * k) / (sigma * sigma));
        kernel[static_cast<size_t>(k + radius)] = v;
        norm += v;
    }
    for (double& v : kernel) v /= norm;

    std::vector<double> tmp(img.size()), out(img.size());
    for (int64_t i = 0; i < h; ++i) {
        for (int64_t j = 0; j < w; ++j) {
            double acc = 0.0;
            for (int64_t k = -radius; k <= radius; ++k)
                acc += kernel[static_cast<size_t>(k + radius)] * pixel(img, h, w, i, j + k);
            tmp[static_cast<size_t>(i * w + j)] = acc;
        }
    }
    for (int64_t i = 0; i < h; ++i) {
        for (int64_t j = 0; j < w; ++j) {
            double acc = 0.0;
            for (int64_t k = -radius; k <= radius; ++k)
                acc += kernel[static_cast<size_t>(k + radius)] * pixel(tmp, h, w, i + k, j);
            out[static_cast<size_t>(i * w + j)] = acc;
        }
    }
    return out;
}

}  // namespace

ConditionMap canny(const Tensor& image, double low, double high, double blur_sigma) {
    if (image.rank() != 2) throw DimensionError("canny: expects [H,W], got " + image.shape_str());
    if (low < 0.0 || low > high) {
        throw ConfigError("canny: thresholds must satisfy 0 <= low <= high");
    }
    const int64_t h = image.dim(0), w = image.dim(1);
    std::vector<double> blurred = gaussian_blur(image.data(), h, w, blur_sigma);

    std::vector<double> mag(static_cast<size_t>(h * w), 0.0);
    std::vector<int> dir(static_cast<size_t>(h * w), 0);
    for (int64_t i = 0; i < h; ++i) {
        for (int64_t j = 0; j < w; ++j) {
            double gx = pixel(blurred, h, w, i - 1, j + 1) + 2.0 * pixel(blurred, h, w, i, j + 1) +
                        pixel(blurred, h, w, i + 1, j + 1) - pixel(blurred, h, w, i - 1, j - 1) -
                        2.0 * pixel(blurred, h, w, i, j - 1) - pixel(blurred, h, w, i + 1, j - 1);
            double gy = pixel(blurred, h, w, i + 1, j - 1) + 2.0 * pixel(blurred, h, w, i + 1, j) +
                        pixel(blurred, h, w, i + 1, j + 1) - pixel(blurred, h, w, i - 1, j - 1) -
                        2.0 * pixel(blurred, h, w, i - 1, j) - pixel(blurred, h, w, i - 1, j + 1);
            mag[static_cast<size_t>(i * w + j)] = std::hypot(gx, gy);
            double angle = std::atan2(gy, gx);
            double deg = angle * 180.0 / M_PI;
            if (deg < 0) deg += 180.0;
            int bin;
            if (deg < 22.5 || deg >= 157.5) bin = 0;       // horizontal gradient
            else if (deg < 67.5) bin = 1;                  // diagonal /
            else if (deg < 112.5) bin = 2;                 // vertical gradient
            else bin = 3;                                  // diagonal backslash
            dir[static_cast<size_t>(i * w + j)] = bin;
        }
    }

    // non-maximum suppression along the gradient direction
    std::vector<double> thin(static_cast<size_t>(h * w), 0.0);
    const int di[4] = {0, -1, -1, -1};
    const int dj[4] = {1, 1, 0, -1};
    for (int64_t i = 0; i < h; ++i) {
        for (int64_t j = 0; j < w; ++j) {
            size_t idx = static_cast<size_t>(i * w + j);
            int b = dir[idx];
            double m = mag[idx];
            double m1 = pixel(mag, h, w, i + di[b], j + dj[b]);
            double m2 = pixel(mag, h, w, i - di[b], j - dj[b]);
            if (m >= m1 && m >= m2) thin[idx] = m;
        }
    }

    // double threshold plus hysteresis linking
    std::vector<double> out(static_cast<size_t>(h * w), 0.0);
    std::deque<std::pair<int64_t, int64_t>> frontier;
    for (int64_t i = 0; i < h; ++i) {
        for (int64_t j = 0; j < w; ++j) {
            if (thin[static_cast<size_t>(i * w + j)] >= high) {
                out[static_cast<size_t>(i * w + j)] = 1.0;
                frontier.emplace_back(i, j);
            }
        }
    }
    while (!frontier.empty()) {
        auto [i, j] = frontier.front();
        frontier.pop_front();
        for (int64_t ni = i - 1; ni <= i + 1; ++ni) {
            for (int64_t nj = j - 1; nj <= j + 1; ++nj) {
                if (ni < 0 || ni >= h || nj < 0 || nj >= w) continue;
                size_t nidx = static_cast<size_t>(ni * w + nj);
                if (out[nidx] == 0.0 && thin[nidx] >= low && thin[nidx] < high) {
                    out[nidx] = 1.0;
                    frontier.emplace_back(ni, nj);
                }
            }
        }
    }

    ConditionMap cm;
    cm.kind = ConditionKind::canny;
    cm.map = Tensor::from_data({h, w}, std::move(out));
    cm.weight = 1.0;
    return cm;
}

namespace {

void draw_disc(std::vector<double>& img, int64_t size, const Point& c, double radius) {
    for (int64_t i = 0; i < size; ++i) {
        for (int64_t j = 0; j < size; ++j) {
            double dx = static_cast<double>(j) - c.x;
            double dy = static_cast<double>(i) - c.y;
            if (dx * dx + dy * dy <= radius * radius) img[static_cast<size_t>(i * size + j)] = 1.0;
        }
    }
}

void draw_segment(std::vector<double>& img, int64_t size, const Point& a, const Point& b,
                  double half_width) {
    const double vx = b.x - a.x, vy = b.y - a.y;
    const double len_sq = vx * vx + vy * vy;
    for (int64_t i = 0; i < size; ++i) {
        for (int64_t j = 0; j < size; ++j) {
            double px = static_cast<double>(j) - a.x;
            double py = static_cast<double>(i) - a.y;
            double t = len_sq > 0.0 ? std::clamp((px * vx + py * vy) / len_sq, 0.0, 1.0) : 0.0;
            double dx = px - t * vx, dy = py - t * vy;
            if (dx * dx + dy * dy <= half_width * half_width) {
                img[static_cast<size_t>(i * size + j)] = 1.0;
            }
        }
    }
}

}  // namespace

ConditionMap render_annotation(const Landmarks& lm, int64_t size) {
    if (size < 4) throw ContractError("render_annotation: size too small");
    if (!lm.in_bounds(static_cast<double>(size), static_cast<double>(size))) {
        throw ContractError("render_annotation: landmark out of image bounds");
    }
    const double disc_r = std::max(1.0, static_cast<double>(size) / 32.0);
    const double seg_hw = std::max(0.7, static_cast<double>(size) / 64.0);

    std::vector<double> img(static_cast<size_t>(size * size), 0.0);
    draw_disc(img, size, lm.left_eye, disc_r);
    draw_disc(img, size, lm.right_eye, disc_r);
    draw_disc(img, size, lm.nose_tip, disc_r);
    draw_disc(img, size, lm.mouth_left, disc_r * 0.8);
    draw_disc(img, size, lm.mouth_right, disc_r * 0.8);
    draw_segment(img, size, lm.left_brow_outer, lm.left_brow_inner, seg_hw);
    draw_segment(img, size, lm.right_brow_inner, lm.right_brow_outer, seg_hw);
    draw_segment(img, size, lm.mouth_left, lm.mouth_right, seg_hw);

    ConditionMap cm;
    cm.kind = ConditionKind::annotation;
    cm.map = Tensor::from_data({size, size}, std::move(img));
    cm.weight = 1.0;
    return cm;
}

// ---------------------------------------------------------- ControlEncoder ---

ControlEncoder::ControlEncoder(std::vector<int64_t> widths, uint64_t seed)
    : widths_(std::move(widths)) {
    if (widths_.size() != 3) throw ConfigError("ControlEncoder: expects 3 resolution widths");
    Rng rng(seed);
    auto conv = [&](const std::string& name, int64_t out_ch, int64_t in_ch, int64_t k) {
        Tensor w = Tensor::randn({out_ch, in_ch * k * k}, rng);
        double stddev = 1.0 / std::sqrt(static_cast<double>(in_ch * k * k));
        for (double& v : w.mutable_data()) v *= stddev;
        params_[name + ".w"] = w;
        params_[name + ".b"] = Tensor::zeros({out_ch});
    };
    conv("c0", widths_[0], 1, 3);
    conv("c1", widths_[1], widths_[0], 3);
    conv("c2", widths_[2], widths_[1], 3);
    // zero-initialized output taps: an untrained encoder is a no-op
    for (int level = 0; level < 3; ++level) {
        int64_t ch = widths_[static_cast<size_t>(level)];
        params_["tap" + std::to_string(level) + ".w"] = Tensor::zeros({ch, ch});
        params_["tap" + std::to_string(level) + ".b"] = Tensor::zeros({ch});
    }
    for (auto& [name, tensor] : params_) tensor.set_requires_grad(false);
}

std::vector<Tensor> ControlEncoder::forward(const Tensor& map) const {
    if (map.rank() != 2) {
        throw DimensionError("ControlEncoder: expects [H,W], got " + map.shape_str());
    }
    auto p = [&](const std::string& name) { return params_.at(name); };
    Tensor x = reshape(map, {1, map.dim(0), map.dim(1)});
    Tensor f0 = silu(conv2d(x, p("c0.w"), p("c0.b"), 3, 1, 1));
    Tensor f1 = silu(conv2d(f0, p("c1.w"), p("c1.b"), 3, 2, 1));
    Tensor f2 = silu(conv2d(f1, p("c2.w"), p("c2.b"), 3, 2, 1));
    std::vector<Tensor> out;
    out.push_back(conv2d(f0, p("tap0.w"), p("tap0.b"), 1, 1, 0));
    out.push_back(conv2d(f1, p("tap1.w"), p("tap1.b"), 1, 1, 0));
    out.push_back(conv2d(f2, p("tap2.w"), p("tap2.b"), 1, 1, 0));
    return out;
}

// ------------------------------------------------------------ ControlStack ---

ControlStack::ControlStack(std::vector<int64_t> widths, uint64_t seed)
    : canny_enc_(widths, seed ^ 0xC0FFEEULL), annotation_enc_(widths, seed ^ 0xFACADEULL) {}

ControlEncoder& ControlStack::encoder(ConditionKind kind) {
    return kind == ConditionKind::canny ? canny_enc_ : annotation_enc_;
}

const ControlEncoder& ControlStack::encoder(ConditionKind kind) const {
    return kind == ConditionKind::canny ? canny_enc_ : annotation_enc_;
}

std::vector<Tensor> ControlStack::control_forward(const std::vector<ConditionMap>& maps) const {
    if (maps.empty()) throw ContractError("control_forward: no condition maps");
    const int64_t h = maps[0].map.dim(0), w = maps[0].map.dim(1);
    for (const ConditionMap& m : maps) {
        if (m.map.rank() != 2 || m.map.dim(0) != h || m.map.dim(1) != w) {
            throw DimensionError("control_forward: mixed map sizes " + m.map.shape_str() +
                                 " vs " + maps[0].map.shape_str());
        }
        if (!(m.weight >= 0.0) || !std::isfinite(m.weight)) {
            throw ContractError("control_forward: weight must be finite and >= 0");
        }
    }
    std::vector<Tensor> total;
    for (const ConditionMap& m : maps) {
        std::vector<Tensor> res = encoder(m.kind).forward(m.map);
        for (size_t level = 0; level < res.size(); ++level) {
            Tensor scaled = scale(res[level], m.weight);
            if (total.size() <= level) {
                total.push_back(scaled);
            } else {
                total[level] = add(total[level], scaled);
            }
        }
    }
    return total;
}

}  // namespace swapdiff
