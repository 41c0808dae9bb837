#include "swapdiff/faceworld.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "swapdiff/nn.hpp"

namespace swapdiff {

namespace {

constexpr double kParserSharpness = 4.0;
constexpr int kParserFeatures = 12;
constexpr int kCalibrationFaces = 50;
constexpr int kEmbedDim = 16;

double sigmoid(double z) {
    if (z > 40.0) return 1.0;
    if (z < -40.0) return 0.0;
    return 1.0 / (1.0 + std::exp(-z));
}

// Everything the raster loop needs, derived once per render.
struct FaceGeometry {
    double cx, cy;
    double a, b;  // face semi-axes
    double eye_u, eye_v, eye_rx, eye_ry;
    double brow_v, brow_half_len, brow_half_th;
    double nose_top_v, nose_bot_v, nose_half_w;
    double mouth_v, mouth_half_w, mouth_half_h, mouth_corner_dv;
    double yaw, cos_t, sin_t;

    double skin[3], eye_col[3], brow_col[3], nose_col[3], mouth_col[3];
};

FaceGeometry derive_geometry(const FaceParams& p, int64_t size) {
    const double S = static_cast<double>(size);
    FaceGeometry g;
    g.cx = (S - 1.0) / 2.0;
    g.cy = (S - 1.0) / 2.0;
    g.a = S * (0.30 + 0.05 * p.identity[1]);
    g.b = S * (0.38 + 0.05 * p.identity[2]);
    g.eye_u = g.a * (0.42 + 0.10 * p.identity[3]);
    g.eye_v = -0.18 * g.b;
    g.eye_rx = S * (0.055 + 0.018 * p.identity[4]);
    g.eye_ry = g.eye_rx * (0.40 + 0.22 * p.expression[3]);
    g.brow_half_len = g.eye_rx * 1.35;
    g.brow_half_th = S * (0.015 + 0.008 * p.identity[6]);
    // offset keeps the brow band clear of the widest-open eye
    g.brow_v = g.eye_v - g.b * (0.25 + 0.045 * p.expression[2]);
    g.nose_top_v = -0.02 * g.b;
    g.nose_bot_v = g.nose_top_v + g.b * (0.28 + 0.07 * p.identity[5]);
    g.nose_half_w = S * 0.032;
    g.mouth_v = 0.42 * g.b;
    g.mouth_half_w = g.a * (0.32 + 0.08 * p.identity[7]);
    g.mouth_half_h = S * (0.012 + 0.016 * (p.expression[1] + 1.0) / 2.0);
    g.mouth_corner_dv = -S * 0.018 * p.expression[0];
    g.yaw = p.pose[0];
    g.cos_t = std::cos(p.pose[1]);
    g.sin_t = std::sin(p.pose[1]);

    const double tone = 1.0 + 0.25 * p.identity[0];
    g.skin[0] = 0.78 * tone;
    g.skin[1] = 0.62 * tone;
    g.skin[2] = 0.50 * tone;
    g.eye_col[0] = 0.13;
    g.eye_col[1] = 0.11;
    g.eye_col[2] = 0.10;
    g.brow_col[0] = 0.24;
    g.brow_col[1] = 0.17;
    g.brow_col[2] = 0.12;
    g.nose_col[0] = g.skin[0] * 0.74;
    g.nose_col[1] = g.skin[1] * 0.70;
    g.nose_col[2] = g.skin[2] * 0.80;
    g.mouth_col[0] = 0.62;
    g.mouth_col[1] = 0.26;
    g.mouth_col[2] = 0.26;
    return g;
}

void background_color(double x, double y, double* rgb) {
    const double s1 = std::sin(0.38 * x + 0.67 * y);
    const double s2 = std::sin(0.81 * x - 0.29 * y);
    rgb[0] = 0.33 + 0.045 * s1;
    rgb[1] = 0.37 + 0.035 * s1 + 0.02 * s2;
    rgb[2] = 0.45 + 0.055 * s2;
}

struct PixelAlphas {
    double face, eye, brow, nose, mouth;
};

PixelAlphas field_alphas(const FaceGeometry& g, double u, double v) {
    PixelAlphas a;
    const double ef = (u / g.a) * (u / g.a) + (v / g.b) * (v / g.b);
    a.face = sigmoid(30.0 * (1.0 - ef));

    const double dul = u + g.eye_u, dur = u - g.eye_u, dv = v - g.eye_v;
    const double el = (dul / g.eye_rx) * (dul / g.eye_rx) + (dv / g.eye_ry) * (dv / g.eye_ry);
    const double er = (dur / g.eye_rx) * (dur / g.eye_rx) + (dv / g.eye_ry) * (dv / g.eye_ry);
    const double al = sigmoid(6.0 * (1.0 - el));
    const double ar = sigmoid(6.0 * (1.0 - er));
    a.eye = al + ar - al * ar;

    const double bvl = (v - g.brow_v) / g.brow_half_th;
    const double bl4 = (dul / g.brow_half_len) * (dul / g.brow_half_len);
    const double br4 = (dur / g.brow_half_len) * (dur / g.brow_half_len);
    const double ebl = bl4 * bl4 + bvl * bvl;
    const double ebr = br4 * br4 + bvl * bvl;
    const double abl = sigmoid(6.0 * (1.0 - ebl));
    const double abr = sigmoid(6.0 * (1.0 - ebr));
    a.brow = abl + abr - abl * abr;

    const double nose_cy = (g.nose_top_v + g.nose_bot_v) / 2.0;
    const double nose_ry = (g.nose_bot_v - g.nose_top_v) / 2.0;
    const double en = (u / g.nose_half_w) * (u / g.nose_half_w) +
                      ((v - nose_cy) / nose_ry) * ((v - nose_cy) / nose_ry);
    a.nose = sigmoid(6.0 * (1.0 - en));

    const double mu = u / g.mouth_half_w;
    const double vc = g.mouth_v + g.mouth_corner_dv * mu * mu;
    const double em = mu * mu + ((v - vc) / g.mouth_half_h) * ((v - vc) / g.mouth_half_h);
    a.mouth = sigmoid(6.0 * (1.0 - em));
    return a;
}

}  // namespace

void FaceParams::validate() const {
    for (double v : identity) {
        if (!(v >= -1.0 && v <= 1.0)) throw ContractError("FaceParams: identity out of [-1,1]");
    }
    for (double v : expression) {
        if (!(v >= -1.0 && v <= 1.0)) throw ContractError("FaceParams: expression out of [-1,1]");
    }
    for (double v : pose) {
        if (!(v >= -0.3 && v <= 0.3)) throw ContractError("FaceParams: pose out of [-0.3,0.3]");
    }
}

FaceParams random_face_params(Rng& rng) {
    FaceParams p;
    for (double& v : p.identity) v = rng.uniform() * 2.0 - 1.0;
    for (double& v : p.expression) v = rng.uniform() * 2.0 - 1.0;
    for (double& v : p.pose) v = (rng.uniform() * 2.0 - 1.0) * 0.3;
    return p;
}

FaceParams random_variant(const FaceParams& base, Rng& rng) {
    FaceParams p = base;
    for (double& v : p.expression) v = rng.uniform() * 2.0 - 1.0;
    for (double& v : p.pose) v = (rng.uniform() * 2.0 - 1.0) * 0.3;
    return p;
}

RenderResult render_face(const FaceParams& p, int64_t size) {
    p.validate();
    if (size < 16) throw ContractError("render_face: size must be >= 16");
    const FaceGeometry g = derive_geometry(p, size);

    std::vector<double> img(static_cast<size_t>(3 * size * size));
    std::vector<double> parse(static_cast<size_t>(kParseClasses * size * size));
    const int64_t hw = size * size;

    for (int64_t i = 0; i < size; ++i) {
        const double dy = static_cast<double>(i) - g.cy;
        for (int64_t j = 0; j < size; ++j) {
            const double dx = static_cast<double>(j) - g.cx;
            double xr, yr;
            if (g.sin_t == 0.0) {
                xr = dx;
                yr = dy;
            } else {
                xr = g.cos_t * dx + g.sin_t * dy;
                yr = -g.sin_t * dx + g.cos_t * dy;
            }
            const double u = xr - g.yaw * yr;
            const double v = yr;

            const PixelAlphas a = field_alphas(g, u, v);

            // priority composition inside the face budget
            const double p_eye = a.face * a.eye;
            double rem = a.face * (1.0 - a.eye);
            const double p_brow = rem * a.brow;
            rem *= 1.0 - a.brow;
            const double p_mouth = rem * a.mouth;
            rem *= 1.0 - a.mouth;
            const double p_nose = rem * a.nose;
            rem *= 1.0 - a.nose;
            const double p_skin = rem;
            const double p_bg = 1.0 - a.face;

            const size_t px = static_cast<size_t>(i * size + j);
            parse[static_cast<size_t>(kBackground * hw) + px] = p_bg;
            parse[static_cast<size_t>(kSkin * hw) + px] = p_skin;
            parse[static_cast<size_t>(kEyes * hw) + px] = p_eye;
            parse[static_cast<size_t>(kBrows * hw) + px] = p_brow;
            parse[static_cast<size_t>(kNose * hw) + px] = p_nose;
            parse[static_cast<size_t>(kMouth * hw) + px] = p_mouth;

            double bg[3];
            background_color(static_cast<double>(j), static_cast<double>(i), bg);
            for (int c = 0; c < 3; ++c) {
                const double col = p_bg * bg[c] + p_skin * g.skin[c] + p_eye * g.eye_col[c] +
                                   p_brow * g.brow_col[c] + p_nose * g.nose_col[c] +
                                   p_mouth * g.mouth_col[c];
                img[static_cast<size_t>(c * hw) + px] = col;
            }
        }
    }

    // landmarks live in face space; map them back to pixels
    auto to_world = [&](double u, double v) {
        const double xr = u + g.yaw * v;
        const double yr = v;
        const double dx = g.cos_t * xr - g.sin_t * yr;
        const double dy = g.sin_t * xr + g.cos_t * yr;
        return Point{g.cx + dx, g.cy + dy};
    };
    Landmarks lm;
    lm.left_eye = to_world(-g.eye_u, g.eye_v);
    lm.right_eye = to_world(g.eye_u, g.eye_v);
    lm.left_brow_outer = to_world(-(g.eye_u + g.brow_half_len), g.brow_v);
    lm.left_brow_inner = to_world(-(g.eye_u - g.brow_half_len), g.brow_v);
    lm.right_brow_inner = to_world(g.eye_u - g.brow_half_len, g.brow_v);
    lm.right_brow_outer = to_world(g.eye_u + g.brow_half_len, g.brow_v);
    lm.nose_tip = to_world(0.0, g.nose_bot_v);
    lm.mouth_left = to_world(-g.mouth_half_w, g.mouth_v + g.mouth_corner_dv);
    lm.mouth_right = to_world(g.mouth_half_w, g.mouth_v + g.mouth_corner_dv);

    RenderResult out;
    out.image = Tensor::from_data({3, size, size}, std::move(img));
    out.landmarks = lm;
    out.parse_map = Tensor::from_data({kParseClasses, size, size}, std::move(parse));
    return out;
}

// ---------------------------------------------------------------- face_mask ---

namespace {

double cross(const Point& o, const Point& a, const Point& b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

std::vector<Point> convex_hull(std::vector<Point> pts) {
    std::sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) {
        return a.x < b.x || (a.x == b.x && a.y < b.y);
    });
    pts.erase(std::unique(pts.begin(), pts.end(),
                          [](const Point& a, const Point& b) { return a.x == b.x && a.y == b.y; }),
              pts.end());
    if (pts.size() < 3) return pts;
    std::vector<Point> hull(2 * pts.size());
    size_t k = 0;
    for (size_t i = 0; i < pts.size(); ++i) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    for (size_t i = pts.size() - 1, t = k + 1; i > 0; --i) {
        while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i - 1]) <= 0) --k;
        hull[k++] = pts[i - 1];
    }
    hull.resize(k - 1);
    return hull;
}

}  // namespace

Tensor face_mask(const Landmarks& lm, int64_t size, int64_t dilation) {
    if (dilation < 0) throw ContractError("face_mask: dilation must be >= 0");
    if (!lm.in_bounds(static_cast<double>(size), static_cast<double>(size))) {
        throw ContractError("face_mask: landmark out of image bounds");
    }
    std::vector<Point> pts;
    for (const auto& [name, p] : lm.named()) pts.push_back(p);
    std::vector<Point> hull = convex_hull(pts);

    std::vector<double> mask(static_cast<size_t>(size * size), 0.0);
    for (int64_t i = 0; i < size; ++i) {
        for (int64_t j = 0; j < size; ++j) {
            const Point q{static_cast<double>(j), static_cast<double>(i)};
            bool inside = hull.size() >= 3;
            for (size_t e = 0; e < hull.size() && inside; ++e) {
                const Point& a = hull[e];
                const Point& b = hull[(e + 1) % hull.size()];
                if (cross(a, b, q) < 0) inside = false;
            }
            if (inside) mask[static_cast<size_t>(i * size + j)] = 1.0;
        }
    }

    for (int64_t d = 0; d < dilation; ++d) {
        std::vector<double> next = mask;
        for (int64_t i = 0; i < size; ++i) {
            for (int64_t j = 0; j < size; ++j) {
                if (mask[static_cast<size_t>(i * size + j)] == 1.0) continue;
                bool hit = false;
                for (int64_t ni = std::max<int64_t>(0, i - 1); !hit && ni <= std::min(size - 1, i + 1); ++ni)
                    for (int64_t nj = std::max<int64_t>(0, j - 1); !hit && nj <= std::min(size - 1, j + 1); ++nj)
                        hit = mask[static_cast<size_t>(ni * size + nj)] == 1.0;
                if (hit) next[static_cast<size_t>(i * size + j)] = 1.0;
            }
        }
        mask.swap(next);
    }
    return Tensor::from_data({size, size}, std::move(mask));
}

// --------------------------------------------------------------- FaceParser ---

FaceParser::FaceParser(uint64_t seed) {
    Rng rng(seed);
    auto conv = [&](const std::string& name, int64_t out_ch, int64_t in_ch, int64_t k) {
        Tensor w = Tensor::randn({out_ch, in_ch * k * k}, rng);
        const double stddev = 1.2 / std::sqrt(static_cast<double>(in_ch * k * k));
        for (double& v : w.mutable_data()) v *= stddev;
        params_[name + ".w"] = w;
        params_[name + ".b"] = Tensor::zeros({out_ch});
    };
    conv("c0", kParserFeatures, 3, 3);
    conv("c1", kParserFeatures, kParserFeatures, 3);

    // One-shot calibration: least-squares fit of the final 1x1 layer to
    // ground-truth parse maps of a rendered face set.
    Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(kParserFeatures + 1, kParserFeatures + 1);
    Eigen::MatrixXd xty = Eigen::MatrixXd::Zero(kParserFeatures + 1, kParseClasses);
    Rng face_rng(seed ^ 0x5EED5EEDULL);
    for (int f = 0; f < kCalibrationFaces; ++f) {
        RenderResult r = render_face(random_face_params(face_rng), 64);
        Tensor phi = features(r.image);  // [F,64,64]
        const int64_t hw = 64 * 64;
        Eigen::VectorXd x(kParserFeatures + 1);
        for (int64_t p = 0; p < hw; ++p) {
            for (int fi = 0; fi < kParserFeatures; ++fi) x(fi) = phi.at(fi * hw + p);
            x(kParserFeatures) = 1.0;
            xtx.noalias() += x * x.transpose();
            for (int c = 0; c < kParseClasses; ++c) {
                xty.col(c) += x * r.parse_map.at(c * hw + p);
            }
        }
    }
    xtx.diagonal().array() += 1e-8;
    Eigen::MatrixXd w = xtx.ldlt().solve(xty);  // [F+1, 6]

    Tensor head_w = Tensor::zeros({kParseClasses, kParserFeatures});
    Tensor head_b = Tensor::zeros({kParseClasses});
    for (int c = 0; c < kParseClasses; ++c) {
        for (int fi = 0; fi < kParserFeatures; ++fi) {
            head_w.mutable_data()[static_cast<size_t>(c * kParserFeatures + fi)] =
                kParserSharpness * w(fi, c);
        }
        head_b.mutable_data()[static_cast<size_t>(c)] = kParserSharpness * w(kParserFeatures, c);
    }
    params_["head.w"] = head_w;
    params_["head.b"] = head_b;
    for (auto& [name, tensor] : params_) tensor.set_requires_grad(false);
}

Tensor FaceParser::features(const Tensor& image) const {
    if (image.rank() != 3 || image.dim(0) != 3) {
        throw DimensionError("FaceParser: expects [3,H,W], got " + image.shape_str());
    }
    Tensor f = silu(conv2d(image, params_.at("c0.w"), params_.at("c0.b"), 3, 1, 1));
    return silu(conv2d(f, params_.at("c1.w"), params_.at("c1.b"), 3, 1, 1));
}

Tensor FaceParser::parse(const Tensor& image) const {
    Tensor logits = conv2d(features(image), params_.at("head.w"), params_.at("head.b"), 1, 1, 0);
    return softmax(logits, 0);
}

double FaceParser::agreement(const Tensor& predicted, const Tensor& truth) {
    const int64_t hw = predicted.dim(1) * predicted.dim(2);
    int64_t match = 0;
    for (int64_t p = 0; p < hw; ++p) {
        int best_pred = 0, best_true = 0;
        for (int c = 1; c < kParseClasses; ++c) {
            if (predicted.at(c * hw + p) > predicted.at(best_pred * hw + p)) best_pred = c;
            if (truth.at(c * hw + p) > truth.at(best_true * hw + p)) best_true = c;
        }
        if (best_pred == best_true) ++match;
    }
    return static_cast<double>(match) / static_cast<double>(hw);
}

// --------------------------------------------------------- IdentityEmbedder ---

namespace {

struct ClassStats {
    double mass = 1e-9;
    double sum_r = 0, sum_g = 0, sum_b = 0;
    double sum_x = 0, sum_y = 0, sum_xx = 0, sum_yy = 0;

    double mean_r() const { return sum_r / mass; }
    double mean_g() const { return sum_g / mass; }
    double mean_b() const { return sum_b / mass; }
    double lum() const { return (sum_r + sum_g + sum_b) / (3.0 * mass); }
    double mean_x() const { return sum_x / mass; }
    double mean_y() const { return sum_y / mass; }
    double var_x() const { return std::max(1e-9, sum_xx / mass - mean_x() * mean_x()); }
    double var_y() const { return std::max(1e-9, sum_yy / mass - mean_y() * mean_y()); }
};

}  // namespace

std::vector<double> IdentityEmbedder::raw_features(const Tensor& image) const {
    Tensor parse = parser_->parse(image);
    const int64_t h = image.dim(1), w = image.dim(2);
    const int64_t hw = h * w;

    ClassStats cls[kParseClasses];
    ClassStats face;
    double eye_left_mass = 1e-9, eye_left_x = 0.0;
    double eye_right_mass = 1e-9, eye_right_x = 0.0;
    const double mid_x = (static_cast<double>(w) - 1.0) / 2.0;

    for (int64_t p = 0; p < hw; ++p) {
        const double x = static_cast<double>(p % w);
        const double y = static_cast<double>(p / w);
        const double r = image.at(0 * hw + p), g = image.at(1 * hw + p), b = image.at(2 * hw + p);
        double face_mass = 0.0;
        for (int c = 0; c < kParseClasses; ++c) {
            const double m = parse.at(c * hw + p);
            cls[c].mass += m;
            cls[c].sum_r += m * r;
            cls[c].sum_g += m * g;
            cls[c].sum_b += m * b;
            cls[c].sum_x += m * x;
            cls[c].sum_y += m * y;
            cls[c].sum_xx += m * x * x;
            cls[c].sum_yy += m * y * y;
            if (c != kBackground) face_mass += m;
        }
        face.mass += face_mass;
        face.sum_r += face_mass * r;
        face.sum_g += face_mass * g;
        face.sum_b += face_mass * b;
        face.sum_x += face_mass * x;
        face.sum_y += face_mass * y;
        face.sum_xx += face_mass * x * x;
        face.sum_yy += face_mass * y * y;

        const double em = parse.at(kEyes * hw + p);
        if (x <= mid_x) {
            eye_left_mass += em;
            eye_left_x += em * x;
        } else {
            eye_right_mass += em;
            eye_right_x += em * x;
        }
    }

    const double face_w = std::sqrt(face.var_x());
    const double face_h = std::sqrt(face.var_y());
    std::vector<double> f(kEmbedDim);
    f[0] = cls[kSkin].mean_r();
    f[1] = cls[kSkin].mean_g();
    f[2] = cls[kSkin].mean_b();
    f[3] = face.mass / static_cast<double>(hw);
    f[4] = face_w / face_h;
    f[5] = cls[kEyes].mass / face.mass;
    f[6] = (eye_right_x / eye_right_mass - eye_left_x / eye_left_mass) / std::max(1.0, face_w);
    f[7] = std::sqrt(cls[kEyes].mass / face.mass);
    f[8] = std::sqrt(cls[kNose].var_y()) / face_h;
    f[9] = cls[kBrows].mass / face.mass;
    f[10] = std::sqrt(cls[kMouth].var_x()) / face_w;
    f[11] = cls[kBrows].lum();
    f[12] = cls[kMouth].mean_r() - cls[kMouth].mean_g();
    f[13] = face.lum() - cls[kBackground].lum();
    f[14] = cls[kEyes].lum();
    f[15] = cls[kNose].lum() / std::max(1e-6, cls[kSkin].lum());
    return f;
}

IdentityEmbedder::IdentityEmbedder(const FaceParser& parser, uint64_t seed) : parser_(&parser) {
    const int kIdentities = 36;
    const int kVariants = 3;
    Rng rng(seed);

    std::vector<std::vector<std::vector<double>>> samples(kIdentities);
    for (int i = 0; i < kIdentities; ++i) {
        FaceParams base = random_face_params(rng);
        for (int v = 0; v < kVariants; ++v) {
            FaceParams fp = v == 0 ? base : random_variant(base, rng);
            samples[static_cast<size_t>(i)].push_back(
                raw_features(render_face(fp, 64).image));
        }
    }

    mean_.assign(kEmbedDim, 0.0);
    stddev_.assign(kEmbedDim, 0.0);
    weight_.assign(kEmbedDim, 0.0);
    const double n_total = kIdentities * kVariants;
    for (int d = 0; d < kEmbedDim; ++d) {
        double s = 0.0, ss = 0.0;
        for (const auto& id_samples : samples) {
            for (const auto& f : id_samples) {
                s += f[static_cast<size_t>(d)];
                ss += f[static_cast<size_t>(d)] * f[static_cast<size_t>(d)];
            }
        }
        const double mu = s / n_total;
        const double var = std::max(1e-12, ss / n_total - mu * mu);

        double within = 0.0;
        for (const auto& id_samples : samples) {
            double is = 0.0, iss = 0.0;
            for (const auto& f : id_samples) {
                is += f[static_cast<size_t>(d)];
                iss += f[static_cast<size_t>(d)] * f[static_cast<size_t>(d)];
            }
            const double imu = is / kVariants;
            within += std::max(0.0, iss / kVariants - imu * imu);
        }
        within /= kIdentities;

        mean_[static_cast<size_t>(d)] = mu;
        stddev_[static_cast<size_t>(d)] = std::sqrt(var);
        // reliability: share of the population variance not explained by
        // expression/pose churn within an identity
        weight_[static_cast<size_t>(d)] = std::sqrt(std::max(0.0, var - within) / var);
    }
}

Tensor IdentityEmbedder::embed(const Tensor& image) const {
    std::vector<double> f = raw_features(image);
    std::vector<double> z(kEmbedDim);
    double norm_sq = 0.0;
    for (int d = 0; d < kEmbedDim; ++d) {
        z[static_cast<size_t>(d)] = weight_[static_cast<size_t>(d)] *
                                    (f[static_cast<size_t>(d)] - mean_[static_cast<size_t>(d)]) /
                                    stddev_[static_cast<size_t>(d)];
        norm_sq += z[static_cast<size_t>(d)] * z[static_cast<size_t>(d)];
    }
    const double norm = std::sqrt(std::max(norm_sq, 1e-24));
    for (double& v : z) v /= norm;
    return Tensor::from_data({kEmbedDim}, std::move(z));
}

double IdentityEmbedder::cosine(const Tensor& a, const Tensor& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) {
        dot += a.at(i) * b.at(i);
        na += a.at(i) * a.at(i);
        nb += b.at(i) * b.at(i);
    }
    return dot / std::max(1e-12, std::sqrt(na) * std::sqrt(nb));
}

// ----------------------------------------------------------- estimate_params ---

namespace {

double render_mse(const FaceParams& p, const Tensor& target, int64_t size) {
    RenderResult r = render_face(p, size);
    double acc = 0.0;
    for (int64_t i = 0; i < target.size(); ++i) {
        const double d = r.image.at(i) - target.at(i);
        acc += d * d;
    }
    return acc / static_cast<double>(target.size());
}

Tensor box_downsample2(const Tensor& image) {
    const int64_t c = image.dim(0), h = image.dim(1) / 2, w = image.dim(2) / 2;
    std::vector<double> out(static_cast<size_t>(c * h * w));
    for (int64_t ci = 0; ci < c; ++ci) {
        for (int64_t i = 0; i < h; ++i) {
            for (int64_t j = 0; j < w; ++j) {
                const int64_t base = (ci * 2 * h + 2 * i) * 2 * w + 2 * j;
                out[static_cast<size_t>((ci * h + i) * w + j)] =
                    0.25 * (image.at(base) + image.at(base + 1) + image.at(base + 2 * w) +
                            image.at(base + 2 * w + 1));
            }
        }
    }
    return Tensor::from_data({c, h, w}, std::move(out));
}

struct Coordinate {
    int group;  // 0 identity, 1 expression, 2 pose
    int index;
    double lo, hi;
};

double* coord_ptr(FaceParams& p, const Coordinate& c) {
    if (c.group == 0) return &p.identity[static_cast<size_t>(c.index)];
    if (c.group == 1) return &p.expression[static_cast<size_t>(c.index)];
    return &p.pose[static_cast<size_t>(c.index)];
}

}  // namespace

ParamEstimate estimate_params(const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != image.dim(2)) {
        throw DimensionError("estimate_params: expects square [3,S,S], got " + image.shape_str());
    }
    const int64_t size = image.dim(1);

    // near-independent coordinates first, coupled details afterwards
    const std::vector<Coordinate> coords = {
        {0, 0, -1, 1},  // skin tone
        {0, 1, -1, 1},  // face width
        {0, 2, -1, 1},  // face height
        {2, 0, -0.3, 0.3},  // yaw shear
        {2, 1, -0.3, 0.3},  // tilt
        {0, 3, -1, 1},  // eye spacing
        {0, 4, -1, 1},  // eye size
        {1, 3, -1, 1},  // eye openness
        {0, 6, -1, 1},  // brow thickness
        {1, 2, -1, 1},  // brow raise
        {0, 5, -1, 1},  // nose length
        {0, 7, -1, 1},  // mouth width
        {1, 0, -1, 1},  // mouth curve
        {1, 1, -1, 1},  // mouth open
    };

    FaceParams current = FaceParams::centered();
    double best = render_mse(current, image, size);

    // strongly coupled coordinate pairs get joint grid passes; per-coordinate
    // sweeps alone stall in their diagonal valleys
    const std::vector<std::pair<Coordinate, Coordinate>> pairs = {
        {{0, 1, -1, 1}, {0, 2, -1, 1}},          // face width x height
        {{2, 0, -0.3, 0.3}, {2, 1, -0.3, 0.3}},  // yaw x tilt
        {{0, 4, -1, 1}, {1, 3, -1, 1}},          // eye size x openness
        {{0, 6, -1, 1}, {1, 2, -1, 1}},          // brow thickness x raise
        {{1, 0, -1, 1}, {1, 1, -1, 1}},          // mouth curve x open
    };

    const int kPoints = 9;
    auto line_sweep = [&](const Coordinate& c, double frac) {
        const double span = c.hi - c.lo;
        const double cur = *coord_ptr(current, c);
        const double lo = frac >= 1.0 ? c.lo : std::max(c.lo, cur - span * frac);
        const double hi = frac >= 1.0 ? c.hi : std::min(c.hi, cur + span * frac);
        double best_val = cur;
        for (int k = 0; k < kPoints; ++k) {
            const double cand = lo + (hi - lo) * static_cast<double>(k) / (kPoints - 1);
            FaceParams trial = current;
            *coord_ptr(trial, c) = cand;
            const double mse = render_mse(trial, image, size);
            if (mse < best - 1e-12) {
                best = mse;
                best_val = cand;
            }
        }
        const bool moved = best_val != cur;
        *coord_ptr(current, c) = best_val;
        return moved;
    };
    auto pair_grid = [&](const Coordinate& a, const Coordinate& b, double frac, int points) {
        const double span_a = a.hi - a.lo, span_b = b.hi - b.lo;
        const double cur_a = *coord_ptr(current, a), cur_b = *coord_ptr(current, b);
        const double lo_a = frac >= 1.0 ? a.lo : std::max(a.lo, cur_a - span_a * frac);
        const double hi_a = frac >= 1.0 ? a.hi : std::min(a.hi, cur_a + span_a * frac);
        const double lo_b = frac >= 1.0 ? b.lo : std::max(b.lo, cur_b - span_b * frac);
        const double hi_b = frac >= 1.0 ? b.hi : std::min(b.hi, cur_b + span_b * frac);
        double best_a = cur_a, best_b = cur_b;
        for (int i = 0; i < points; ++i) {
            for (int j = 0; j < points; ++j) {
                FaceParams trial = current;
                *coord_ptr(trial, a) = lo_a + (hi_a - lo_a) * static_cast<double>(i) / (points - 1);
                *coord_ptr(trial, b) = lo_b + (hi_b - lo_b) * static_cast<double>(j) / (points - 1);
                const double mse = render_mse(trial, image, size);
                if (mse < best - 1e-12) {
                    best = mse;
                    best_a = *coord_ptr(trial, a);
                    best_b = *coord_ptr(trial, b);
                }
            }
        }
        *coord_ptr(current, a) = best_a;
        *coord_ptr(current, b) = best_b;
    };

    // coarse stage at half resolution: skin tone, then a joint grid over the
    // global shape/pose coordinates, which per-coordinate sweeps cannot
    // untangle from a cold start
    if (size % 2 == 0 && size / 2 >= 16) {
        const Tensor small = box_downsample2(image);
        const int64_t half = size / 2;
        auto small_mse = [&](const FaceParams& p) { return render_mse(p, small, half); };

        double best_small = small_mse(current);
        for (int k = 0; k < kPoints; ++k) {
            FaceParams trial = current;
            trial.identity[0] = -1.0 + 2.0 * static_cast<double>(k) / (kPoints - 1);
            const double mse = small_mse(trial);
            if (mse < best_small - 1e-12) {
                best_small = mse;
                current.identity[0] = trial.identity[0];
            }
        }
        for (int fw = 0; fw < 5; ++fw) {
            for (int fh = 0; fh < 5; ++fh) {
                for (int yw = 0; yw < 5; ++yw) {
                    for (int tl = 0; tl < 5; ++tl) {
                        FaceParams trial = current;
                        trial.identity[1] = -1.0 + 0.5 * fw;
                        trial.identity[2] = -1.0 + 0.5 * fh;
                        trial.pose[0] = -0.3 + 0.15 * yw;
                        trial.pose[1] = -0.3 + 0.15 * tl;
                        const double mse = small_mse(trial);
                        if (mse < best_small - 1e-12) {
                            best_small = mse;
                            current = trial;
                        }
                    }
                }
            }
        }
        best = render_mse(current, image, size);
    }

    for (int sweep = 0; sweep < 2; ++sweep) {
        for (const Coordinate& c : coords) line_sweep(c, 1.0);
    }
    for (const auto& [a, b] : pairs) pair_grid(a, b, 1.0, 9);
    for (const Coordinate& c : coords) line_sweep(c, 0.125);
    for (const auto& [a, b] : pairs) pair_grid(a, b, 0.125, 5);

    // damped Gauss-Newton polish on the pixel residuals; the renderer is
    // smooth, so this pins the small-amplitude coordinates (mouth curve,
    // brow raise) that grid search cannot resolve
    {
        const int n_coords = static_cast<int>(coords.size());
        const int64_t n_res = image.size();
        auto render_vec = [&](const FaceParams& p) { return render_face(p, size).image; };
        auto residual_mse = [&](const std::vector<double>& r) {
            double acc = 0.0;
            for (double v : r) acc += v * v;
            return acc / static_cast<double>(n_res);
        };
        auto residuals = [&](const FaceParams& p) {
            Tensor img = render_vec(p);
            std::vector<double> r(static_cast<size_t>(n_res));
            for (int64_t i = 0; i < n_res; ++i) r[static_cast<size_t>(i)] = img.at(i) - image.at(i);
            return r;
        };

        std::vector<double> r0 = residuals(current);
        double mse = residual_mse(r0);
        double lambda = 1e-3;
        for (int iter = 0; iter < 12 && mse > 1e-12; ++iter) {
            // central-difference Jacobian in span-normalized coordinates
            Eigen::MatrixXd jac(n_res, n_coords);
            for (int c = 0; c < n_coords; ++c) {
                const Coordinate& co = coords[static_cast<size_t>(c)];
                const double span = co.hi - co.lo;
                const double h = 0.01 * span;
                FaceParams pp = current, pm = current;
                *coord_ptr(pp, co) = std::min(co.hi, *coord_ptr(current, co) + h);
                *coord_ptr(pm, co) = std::max(co.lo, *coord_ptr(current, co) - h);
                const double dh = *coord_ptr(pp, co) - *coord_ptr(pm, co);
                Tensor ip = render_vec(pp), im = render_vec(pm);
                for (int64_t i = 0; i < n_res; ++i) {
                    jac(i, c) = dh > 0.0 ? (ip.at(i) - im.at(i)) / dh * span : 0.0;
                }
            }
            Eigen::VectorXd rv = Eigen::Map<Eigen::VectorXd>(r0.data(), n_res);
            Eigen::MatrixXd jtj = jac.transpose() * jac;
            Eigen::VectorXd jtr = jac.transpose() * rv;

            bool accepted = false;
            for (int attempt = 0; attempt < 8; ++attempt) {
                Eigen::MatrixXd damped = jtj;
                damped.diagonal() += lambda * jtj.diagonal().cwiseMax(1e-12);
                Eigen::VectorXd delta = damped.ldlt().solve(-jtr);
                FaceParams trial = current;
                for (int c = 0; c < n_coords; ++c) {
                    const Coordinate& co = coords[static_cast<size_t>(c)];
                    double* v = coord_ptr(trial, co);
                    *v = std::clamp(*v + delta(c) * (co.hi - co.lo), co.lo, co.hi);
                }
                std::vector<double> rt = residuals(trial);
                const double trial_mse = residual_mse(rt);
                if (trial_mse < mse) {
                    current = trial;
                    r0 = std::move(rt);
                    mse = trial_mse;
                    lambda = std::max(1e-7, lambda / 3.0);
                    accepted = true;
                    break;
                }
                lambda *= 10.0;
            }
            if (!accepted) break;
        }
        best = mse;
    }

    ParamEstimate out;
    out.params = current;
    out.residual_mse = best;
    out.low_confidence = best > 0.02;
    return out;
}

const FaceWorld& default_faceworld() {
    static const FaceWorld world(1847);
    return world;
}

}  // namespace swapdiff
