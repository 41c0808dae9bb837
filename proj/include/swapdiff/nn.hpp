#pragma once

#include "swapdiff/tensor.hpp"

namespace swapdiff {

// Shared layer helpers built from tensor ops; gradients flow through all of
// them. Conv weights are stored flattened as [out_channels, in_channels*k*k]
// so the convolution lowers to a single matmul over the unfolded input.

// x: [C,H,W], w: [O, C*k*k], b: [O] -> [O,Ho,Wo]
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int64_t k, int64_t stride,
              int64_t pad);

// w: [O, I], x: [I, N] (columns are samples), b: [O] -> [O, N]
Tensor linear_cols(const Tensor& w, const Tensor& x, const Tensor& b);

// Sinusoidal position/timestep features; plain data, no gradient.
Tensor sinusoidal_embedding(int64_t t, int64_t dim);

// mean((a-b)^2) as a scalar tensor.
Tensor mse(const Tensor& a, const Tensor& b);

// sum((a-b)^2) as a scalar tensor.
Tensor sum_sq_diff(const Tensor& a, const Tensor& b);

}  // namespace swapdiff
