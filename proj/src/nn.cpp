#include "swapdiff/nn.hpp"

#include <cmath>

namespace swapdiff {

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int64_t k, int64_t stride,
              int64_t pad) {
    if (w.rank() != 2 || w.dim(1) != x.dim(0) * k * k) {
        throw DimensionError("conv2d: weight " + w.shape_str() + " does not match input " +
                             x.shape_str() + " with kernel " + std::to_string(k));
    }
    const int64_t h = x.dim(1), wd = x.dim(2);
    const int64_t ho = (h + 2 * pad - k) / stride + 1;
    const int64_t wo = (wd + 2 * pad - k) / stride + 1;
    Tensor col = im2col(x, k, stride, pad);
    Tensor out = matmul(w, col);  // [O, Ho*Wo]
    out = reshape(out, {w.dim(0), ho, wo});
    return add_channel_bias(out, b);
}

Tensor linear_cols(const Tensor& w, const Tensor& x, const Tensor& b) {
    Tensor out = matmul(w, x);
    const int64_t o = out.dim(0), n = out.dim(1);
    return reshape(add_channel_bias(reshape(out, {o, n, 1}), b), {o, n});
}

Tensor sinusoidal_embedding(int64_t t, int64_t dim) {
    std::vector<double> v(static_cast<size_t>(dim));
    const int64_t half = dim / 2;
    for (int64_t i = 0; i < half; ++i) {
        double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                               static_cast<double>(half));
        v[static_cast<size_t>(i)] = std::sin(static_cast<double>(t) * freq);
        v[static_cast<size_t>(half + i)] = std::cos(static_cast<double>(t) * freq);
    }
    if (dim % 2 == 1) v[static_cast<size_t>(dim - 1)] = 0.0;
    return Tensor::from_data({dim}, std::move(v));
}

Tensor mse(const Tensor& a, const Tensor& b) {
    Tensor d = sub(a, b);
    return scale(sum(mul(d, d)), 1.0 / static_cast<double>(a.size()));
}

Tensor sum_sq_diff(const Tensor& a, const Tensor& b) {
    Tensor d = sub(a, b);
    return sum(mul(d, d));
}

}  // namespace swapdiff
