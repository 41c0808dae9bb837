#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "swapdiff/error.hpp"
#include "swapdiff/rng.hpp"

namespace swapdiff {

// Dense row-major f64 tensor with reverse-mode differentiation.
//
// Tensors are cheap shared handles. Every operation is a pure function of
// its inputs; when any input has requires_grad set, the output records a
// graph node so backward() can push adjoints to the leaves. Graphs are
// per-value (no global tape), so independent computations on different
// threads never interact.
class Tensor {
public:
    struct Node;

    struct Impl {
        std::vector<int64_t> shape;
        std::vector<double> data;
        bool requires_grad = false;
        std::vector<double> grad;  // lazily sized; persists until zero_grad
        std::shared_ptr<Node> grad_fn;
    };

    struct Node {
        std::vector<std::shared_ptr<Impl>> inputs;
        // Reads out->grad, accumulates into each input's grad.
        std::function<void(const Impl& out)> backprop;
    };

    Tensor() = default;

    static Tensor zeros(std::vector<int64_t> shape);
    static Tensor full(std::vector<int64_t> shape, double value);
    static Tensor from_data(std::vector<int64_t> shape, std::vector<double> data);
    static Tensor scalar(double value);
    static Tensor randn(std::vector<int64_t> shape, Rng& rng, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const std::vector<int64_t>& shape() const { return impl_->shape; }
    int64_t size() const { return static_cast<int64_t>(impl_->data.size()); }
    int64_t dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    std::string shape_str() const;

    double item() const;                        // scalar tensors only
    double at(int64_t flat_index) const { return impl_->data[static_cast<size_t>(flat_index)]; }
    const std::vector<double>& data() const { return impl_->data; }
    std::vector<double>& mutable_data() { return impl_->data; }  // leaf in-place updates

    bool requires_grad() const { return impl_ && impl_->requires_grad; }
    Tensor& set_requires_grad(bool value);
    bool has_grad() const { return impl_ && !impl_->grad.empty(); }
    const std::vector<double>& grad() const;
    std::vector<double>& mutable_grad();
    void zero_grad();

    // Same data, no graph, no grad tracking.
    Tensor detach() const;
    // Deep copy of the data (leaf, no graph).
    Tensor clone_data() const;

    bool all_finite() const;

    std::shared_ptr<Impl> impl() const { return impl_; }
    static Tensor wrap(std::shared_ptr<Impl> impl) { Tensor t; t.impl_ = std::move(impl); return t; }

private:
    std::shared_ptr<Impl> impl_;
};

// ---- elementwise / scalar ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // Hadamard
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor silu(const Tensor& a);  // x * sigmoid(x)
Tensor exp(const Tensor& a);

// ---- linear algebra (2-D) ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// ---- shape ----
Tensor reshape(const Tensor& a, std::vector<int64_t> shape);
Tensor concat0(const std::vector<Tensor>& parts);        // along axis 0
Tensor slice0(const Tensor& a, int64_t start, int64_t len);  // along axis 0

// ---- reductions / nonlinearities ----
Tensor sum(const Tensor& a);                   // scalar
Tensor softmax_lastdim(const Tensor& a);       // max-subtracted, any rank >= 1
Tensor softmax(const Tensor& a, int axis);     // general axis

// ---- image / conv plumbing ([C,H,W] layout) ----
// Unfolds k x k patches into a [C*k*k, Hout*Wout] matrix.
Tensor im2col(const Tensor& x, int64_t k, int64_t stride, int64_t pad);
Tensor upsample_nearest2(const Tensor& x);     // [C,H,W] -> [C,2H,2W]
Tensor add_channel_bias(const Tensor& x, const Tensor& b);  // b: [C]

// ---- autodiff driver ----
// Pushes d(loss)/d(leaf) into every reachable requires_grad leaf.
// Repeated calls accumulate. `loss` must be scalar.
void backward(const Tensor& loss);

// Max over coordinates of |ad - fd| / max(1, |ad|, |fd|), where fd is the
// central difference (f(x+h e_i) - f(x-h e_i)) / 2h. Independent oracle for
// every differentiable operation.
double check_gradient(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h);

}  // namespace swapdiff
