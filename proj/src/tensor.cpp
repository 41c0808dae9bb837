#include "swapdiff/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace swapdiff {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

int64_t numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

std::string to_str(const std::vector<int64_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
}

std::vector<double>& grad_buf(const std::shared_ptr<Tensor::Impl>& impl) {
    if (impl->grad.empty()) impl->grad.assign(impl->data.size(), 0.0);
    return impl->grad;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                             b.shape_str());
    }
}

}  // namespace

// ---------------------------------------------------------------- Tensor ---

Tensor Tensor::zeros(std::vector<int64_t> shape) {
    return full(std::move(shape), 0.0);
}

Tensor Tensor::full(std::vector<int64_t> shape, double value) {
    auto impl = std::make_shared<Impl>();
    impl->data.assign(static_cast<size_t>(numel(shape)), value);
    impl->shape = std::move(shape);
    return wrap(impl);
}

Tensor Tensor::from_data(std::vector<int64_t> shape, std::vector<double> data) {
    if (numel(shape) != static_cast<int64_t>(data.size())) {
        throw DimensionError("from_data: shape " + to_str(shape) + " wants " +
                             std::to_string(numel(shape)) + " values, got " +
                             std::to_string(data.size()));
    }
    auto impl = std::make_shared<Impl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    return wrap(impl);
}

Tensor Tensor::scalar(double value) {
    return from_data({1}, {value});
}

Tensor Tensor::randn(std::vector<int64_t> shape, Rng& rng, bool requires_grad) {
    auto impl = std::make_shared<Impl>();
    impl->data.resize(static_cast<size_t>(numel(shape)));
    impl->shape = std::move(shape);
    for (double& v : impl->data) v = rng.normal();
    impl->requires_grad = requires_grad;
    return wrap(impl);
}

std::string Tensor::shape_str() const {
    return to_str(impl_->shape);
}

double Tensor::item() const {
    if (!impl_ || impl_->data.size() != 1) {
        throw ContractError("item(): tensor is not scalar, shape " +
                            (impl_ ? shape_str() : std::string("<empty>")));
    }
    return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool value) {
    impl_->requires_grad = value;
    return *this;
}

const std::vector<double>& Tensor::grad() const {
    static const std::vector<double> kEmpty;
    return impl_->grad.empty() ? kEmpty : impl_->grad;
}

std::vector<double>& Tensor::mutable_grad() {
    return grad_buf(impl_);
}

void Tensor::zero_grad() {
    impl_->grad.clear();
}

Tensor Tensor::detach() const {
    auto impl = std::make_shared<Impl>();
    impl->shape = impl_->shape;
    impl->data = impl_->data;
    return wrap(impl);
}

Tensor Tensor::clone_data() const {
    return detach();
}

bool Tensor::all_finite() const {
    for (double v : impl_->data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

// ------------------------------------------------------------ op plumbing ---

namespace {

Tensor make_result(std::vector<int64_t> shape, std::vector<double> data,
                   const std::vector<Tensor>& inputs,
                   std::function<void(const Tensor::Impl&)> backprop) {
    auto impl = std::make_shared<Tensor::Impl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    bool needs = false;
    for (const Tensor& t : inputs) needs = needs || t.requires_grad();
    if (needs) {
        auto node = std::make_shared<Tensor::Node>();
        for (const Tensor& t : inputs) node->inputs.push_back(t.impl());
        node->backprop = std::move(backprop);
        impl->grad_fn = node;
        impl->requires_grad = true;
    }
    return Tensor::wrap(impl);
}

}  // namespace

// ------------------------------------------------------------- elementwise ---

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    auto ai = a.impl(), bi = b.impl();
    return make_result(a.shape(), std::move(out), {a, b}, [ai, bi](const Tensor::Impl& o) {
        if (ai->requires_grad) {
            auto& g = grad_buf(ai);
            for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
        }
        if (bi->requires_grad) {
            auto& g = grad_buf(bi);
            for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    auto ai = a.impl(), bi = b.impl();
    return make_result(a.shape(), std::move(out), {a, b}, [ai, bi](const Tensor::Impl& o) {
        if (ai->requires_grad) {
            auto& g = grad_buf(ai);
            for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
        }
        if (bi->requires_grad) {
            auto& g = grad_buf(bi);
            for (size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    auto ai = a.impl(), bi = b.impl();
    return make_result(a.shape(), std::move(out), {a, b}, [ai, bi](const Tensor::Impl& o) {
        if (ai->requires_grad) {
            auto& g = grad_buf(ai);
            for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * bi->data[i];
        }
        if (bi->requires_grad) {
            auto& g = grad_buf(bi);
            for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * ai->data[i];
        }
    });
}

Tensor neg(const Tensor& a) {
    return scale(a, -1.0);
}

Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
    auto ai = a.impl();
    return make_result(a.shape(), std::move(out), {a}, [ai, s](const Tensor::Impl& o) {
        if (!ai->requires_grad) return;
        auto& g = grad_buf(ai);
        for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * s;
    });
}

Tensor add_scalar(const Tensor& a, double s) {
    std::vector<double> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + s;
    auto ai = a.impl();
    return make_result(a.shape(), std::move(out), {a}, [ai](const Tensor::Impl& o) {
        if (!ai->requires_grad) return;
        auto& g = grad_buf(ai);
        for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    });
}

Tensor silu(const Tensor& a) {
    std::vector<double> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) {
        double x = a.data()[i];
        out[i] = x / (1.0 + std::exp(-x));
    }
    auto ai = a.impl();
    return make_result(a.shape(), std::move(out), {a}, [ai](const Tensor::Impl& o) {
        if (!ai->requires_grad) return;
        auto& g = grad_buf(ai);
        for (size_t i = 0; i < g.size(); ++i) {
            double x = ai->data[i];
            double s = 1.0 / (1.0 + std::exp(-x));
            g[i] += o.grad[i] * s * (1.0 + x * (1.0 - s));
        }
    });
}

Tensor exp(const Tensor& a) {
    std::vector<double> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.data()[i]);
    auto ai = a.impl();
    return make_result(a.shape(), std::move(out), {a}, [ai](const Tensor::Impl& o) {
        if (!ai->requires_grad) return;
        auto& g = grad_buf(ai);
        for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * o.data[i];
    });
}

// ---------------------------------------------------------- linear algebra ---

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw DimensionError("matmul: expects rank-2 operands, got " + a.shape_str() + " and " +
                             b.shape_str());
    }
    if (a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: inner dimensions disagree, " + a.shape_str() + " vs " +
                             b.shape_str());
    }
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(static_cast<size_t>(m * n));
    {
        CMapMat ma(a.data().data(), m, k);
        CMapMat mb(b.data().data(), k, n);
        MapMat mo(out.data(), m, n);
        mo.noalias() = ma * mb;
    }
    auto ai = a.impl(), bi = b.impl();
    return make_result({m, n}, std::move(out), {a, b}, [ai, bi, m, k, n](const Tensor::Impl& o) {
        CMapMat go(o.grad.data(), m, n);
        if (ai->requires_grad) {
            CMapMat mb(bi->data.data(), k, n);
            MapMat ga(grad_buf(ai).data(), m, k);
            ga.noalias() += go * mb.transpose();
        }
        if (bi->requires_grad) {
            CMapMat ma(ai->data.data(), m, k);
            MapMat gb(grad_buf(bi).data(), k, n);
            gb.noalias() += ma.transpose() * go;
        }
    });
}

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) {
        throw DimensionError("transpose: expects rank-2, got " + a.shape_str());
    }
    const int64_t m = a.dim(0), n = a.dim(1);
    std::vector<double> out(static_cast<size_t>(m * n));
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) out[static_cast<size_t>(j * m + i)] = a.data()[static_cast<size_t>(i * n + j)];
    auto ai = a.impl();
    return make_result({n, m}, std::move(out), {a}, [ai, m, n](const Tensor::Impl& o) {
        if (!ai->requires_grad) return;
        auto& g = grad_buf(ai);
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j)
                g[static_cast<size_t>(i * n + j)] += o.grad[static_cast<size_t>(j * m + i)];
    });
}

// ------------------------------------------------------------------- shape ---

Tensor reshape(const Tensor& a, std::vector<int64_t> shape) {
    if (numel(shape) != a.size()) {
        throw DimensionError("reshape: cannot view " + a.shape_str() + " as " + to_str(shape));
    }
    std::vector<double> out = a.data();
    auto ai = a.impl();
    return make_result(std::move(shape), std::move(out), {a}, [ai](const Tensor::Impl& o) {
        if (!ai->requires_grad) return;
        auto& g = grad_buf(ai);
        for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    });
}

Tensor concat0(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat0: no inputs");
    std::vector<int64_t> shape = parts[0].shape();
    int64_t rows = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != parts[0].rank()) {
            throw DimensionError("concat0: rank mismatch " + p.shape_str() + " vs " +
                                 parts[0].shape_str());
        }
        for (int d = 1; d < p.rank(); ++d) {
            if (p.dim(d) != parts[0].dim(d)) {
                throw DimensionError("concat0: trailing dims differ, " + p.shape_str() + " vs " +
                                     parts[0].shape_str());
            }
        }
        rows += p.dim(0);
    }
    shape[0] = rows;
    std::vector<double> out;
    out.reserve(static_cast<size_t>(numel(shape)));
    for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());

    std::vector<std::shared_ptr<Tensor::Impl>> impls;
    for (const Tensor& p : parts) impls.push_back(p.impl());
    return make_result(std::move(shape), std::move(out), parts, [impls](const Tensor::Impl& o) {
        size_t offset = 0;
        for (const auto& pi : impls) {
            size_t n = pi->data.size();
            if (pi->requires_grad) {
                auto& g = grad_buf(pi);
                for (size_t i = 0; i < n; ++i) g[i] += o.grad[offset + i];
            }
            offset += n;
        }
    });
}

Tensor slice0(const Tensor& a, int64_t start, int64_t len) {
    if (start < 0 || len < 0 || start + len > a.dim(0)) {
        throw DimensionError("slice0: range [" + std::to_string(start) + ", " +
                             std::to_string(start + len) + ") out of bounds for " + a.shape_str());
    }
    int64_t inner = a.size() / a.dim(0);
    std::vector<int64_t> shape = a.shape();
    shape[0] = len;
    std::vector<double> out(a.data().begin() + start * inner,
                            a.data().begin() + (start + len) * inner);
    auto ai = a.impl();
    return make_result(std::move(shape), std::move(out), {a},
                       [ai, start, inner](const Tensor::Impl& o) {
                           if (!ai->requires_grad) return;
                           auto& g = grad_buf(ai);
                           size_t base = static_cast<size_t>(start * inner);
                           for (size_t i = 0; i < o.grad.size(); ++i) g[base + i] += o.grad[i];
                       });
}

// -------------------------------------------------------------- reductions ---

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    auto ai = a.impl();
    return make_result({1}, {s}, {a}, [ai](const Tensor::Impl& o) {
        if (!ai->requires_grad) return;
        auto& g = grad_buf(ai);
        for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[0];
    });
}

Tensor softmax(const Tensor& a, int axis) {
    if (axis < 0 || axis >= a.rank()) {
        throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for " +
                             a.shape_str());
    }
    const int64_t mid = a.dim(axis);
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= a.dim(d);
    for (int d = axis + 1; d < a.rank(); ++d) inner *= a.dim(d);

    std::vector<double> out(a.data().size());
    for (int64_t ou = 0; ou < outer; ++ou) {
        for (int64_t in = 0; in < inner; ++in) {
            const int64_t base = ou * mid * inner + in;
            double mx = a.data()[static_cast<size_t>(base)];
            for (int64_t j = 1; j < mid; ++j)
                mx = std::max(mx, a.data()[static_cast<size_t>(base + j * inner)]);
            double z = 0.0;
            for (int64_t j = 0; j < mid; ++j) {
                double e = std::exp(a.data()[static_cast<size_t>(base + j * inner)] - mx);
                out[static_cast<size_t>(base + j * inner)] = e;
                z += e;
            }
            for (int64_t j = 0; j < mid; ++j) out[static_cast<size_t>(base + j * inner)] /= z;
        }
    }
    auto ai = a.impl();
    return make_result(a.shape(), std::move(out), {a},
                       [ai, outer, mid, inner](const Tensor::Impl& o) {
                           if (!ai->requires_grad) return;
                           auto& g = grad_buf(ai);
                           for (int64_t ou = 0; ou < outer; ++ou) {
                               for (int64_t in = 0; in < inner; ++in) {
                                   const int64_t base = ou * mid * inner + in;
                                   double dot = 0.0;
                                   for (int64_t j = 0; j < mid; ++j) {
                                       size_t idx = static_cast<size_t>(base + j * inner);
                                       dot += o.grad[idx] * o.data[idx];
                                   }
                                   for (int64_t j = 0; j < mid; ++j) {
                                       size_t idx = static_cast<size_t>(base + j * inner);
                                       g[idx] += o.data[idx] * (o.grad[idx] - dot);
                                   }
                               }
                           }
                       });
}

Tensor softmax_lastdim(const Tensor& a) {
    return softmax(a, a.rank() - 1);
}

// ---------------------------------------------------------- image plumbing ---

Tensor im2col(const Tensor& x, int64_t k, int64_t stride, int64_t pad) {
    if (x.rank() != 3) throw DimensionError("im2col: expects [C,H,W], got " + x.shape_str());
    const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int64_t ho = (h + 2 * pad - k) / stride + 1;
    const int64_t wo = (w + 2 * pad - k) / stride + 1;
    if (ho < 1 || wo < 1) {
        throw DimensionError("im2col: kernel " + std::to_string(k) + " too large for " +
                             x.shape_str());
    }
    std::vector<double> out(static_cast<size_t>(c * k * k * ho * wo), 0.0);
    const int64_t ncols = ho * wo;
    for (int64_t ci = 0; ci < c; ++ci) {
        for (int64_t ki = 0; ki < k; ++ki) {
            for (int64_t kj = 0; kj < k; ++kj) {
                const int64_t row = (ci * k + ki) * k + kj;
                double* dst = out.data() + row * ncols;
                for (int64_t oi = 0; oi < ho; ++oi) {
                    const int64_t si = oi * stride + ki - pad;
                    if (si < 0 || si >= h) continue;
                    const double* src = x.data().data() + (ci * h + si) * w;
                    for (int64_t oj = 0; oj < wo; ++oj) {
                        const int64_t sj = oj * stride + kj - pad;
                        if (sj < 0 || sj >= w) continue;
                        dst[oi * wo + oj] = src[sj];
                    }
                }
            }
        }
    }
    auto xi = x.impl();
    return make_result({c * k * k, ncols}, std::move(out), {x},
                       [xi, c, h, w, k, stride, pad, ho, wo](const Tensor::Impl& o) {
                           if (!xi->requires_grad) return;
                           auto& g = grad_buf(xi);
                           const int64_t ncols = ho * wo;
                           for (int64_t ci = 0; ci < c; ++ci) {
                               for (int64_t ki = 0; ki < k; ++ki) {
                                   for (int64_t kj = 0; kj < k; ++kj) {
                                       const int64_t row = (ci * k + ki) * k + kj;
                                       const double* src = o.grad.data() + row * ncols;
                                       for (int64_t oi = 0; oi < ho; ++oi) {
                                           const int64_t si = oi * stride + ki - pad;
                                           if (si < 0 || si >= h) continue;
                                           double* dst = g.data() + (ci * h + si) * w;
                                           for (int64_t oj = 0; oj < wo; ++oj) {
                                               const int64_t sj = oj * stride + kj - pad;
                                               if (sj < 0 || sj >= w) continue;
                                               dst[sj] += src[oi * wo + oj];
                                           }
                                       }
                                   }
                               }
                           }
                       });
}

Tensor upsample_nearest2(const Tensor& x) {
    if (x.rank() != 3) throw DimensionError("upsample_nearest2: expects [C,H,W], got " + x.shape_str());
    const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    std::vector<double> out(static_cast<size_t>(c * 4 * h * w));
    for (int64_t ci = 0; ci < c; ++ci) {
        for (int64_t i = 0; i < h; ++i) {
            for (int64_t j = 0; j < w; ++j) {
                double v = x.data()[static_cast<size_t>((ci * h + i) * w + j)];
                size_t o0 = static_cast<size_t>((ci * 2 * h + 2 * i) * 2 * w + 2 * j);
                out[o0] = v;
                out[o0 + 1] = v;
                out[o0 + static_cast<size_t>(2 * w)] = v;
                out[o0 + static_cast<size_t>(2 * w) + 1] = v;
            }
        }
    }
    auto xi = x.impl();
    return make_result({c, 2 * h, 2 * w}, std::move(out), {x},
                       [xi, c, h, w](const Tensor::Impl& o) {
                           if (!xi->requires_grad) return;
                           auto& g = grad_buf(xi);
                           for (int64_t ci = 0; ci < c; ++ci) {
                               for (int64_t i = 0; i < h; ++i) {
                                   for (int64_t j = 0; j < w; ++j) {
                                       size_t o0 = static_cast<size_t>((ci * 2 * h + 2 * i) * 2 * w + 2 * j);
                                       g[static_cast<size_t>((ci * h + i) * w + j)] +=
                                           o.grad[o0] + o.grad[o0 + 1] +
                                           o.grad[o0 + static_cast<size_t>(2 * w)] +
                                           o.grad[o0 + static_cast<size_t>(2 * w) + 1];
                                   }
                               }
                           }
                       });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
    if (x.rank() != 3 || b.rank() != 1 || b.dim(0) != x.dim(0)) {
        throw DimensionError("add_channel_bias: " + x.shape_str() + " with bias " + b.shape_str());
    }
    const int64_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
    std::vector<double> out(x.data().size());
    for (int64_t ci = 0; ci < c; ++ci) {
        const double bias = b.data()[static_cast<size_t>(ci)];
        for (int64_t p = 0; p < hw; ++p)
            out[static_cast<size_t>(ci * hw + p)] = x.data()[static_cast<size_t>(ci * hw + p)] + bias;
    }
    auto xi = x.impl(), bi = b.impl();
    return make_result(x.shape(), std::move(out), {x, b},
                       [xi, bi, c, hw](const Tensor::Impl& o) {
                           if (xi->requires_grad) {
                               auto& g = grad_buf(xi);
                               for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                           }
                           if (bi->requires_grad) {
                               auto& g = grad_buf(bi);
                               for (int64_t ci = 0; ci < c; ++ci) {
                                   double s = 0.0;
                                   for (int64_t p = 0; p < hw; ++p)
                                       s += o.grad[static_cast<size_t>(ci * hw + p)];
                                   g[static_cast<size_t>(ci)] += s;
                               }
                           }
                       });
}

// ---------------------------------------------------------------- backward ---

void backward(const Tensor& loss) {
    if (loss.size() != 1) {
        throw ContractError("backward: loss must be scalar, got " + loss.shape_str());
    }
    if (!loss.impl()->grad_fn && !loss.requires_grad()) {
        return;  // constant graph, nothing to do
    }

    // Post-order DFS; reverse gives a valid topological order for backprop.
    std::vector<Tensor::Impl*> order;
    std::unordered_set<Tensor::Impl*> seen;
    struct Frame {
        Tensor::Impl* node;
        size_t next_child;
    };
    std::vector<Frame> stack;
    stack.push_back({loss.impl().get(), 0});
    seen.insert(loss.impl().get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        auto& fn = f.node->grad_fn;
        if (!fn || f.next_child >= fn->inputs.size()) {
            order.push_back(f.node);
            stack.pop_back();
            continue;
        }
        Tensor::Impl* child = fn->inputs[f.next_child++].get();
        if ((child->grad_fn || child->requires_grad) && !seen.count(child)) {
            seen.insert(child);
            stack.push_back({child, 0});
        }
    }

    grad_buf(loss.impl())[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Tensor::Impl* node = *it;
        if (!node->grad_fn || node->grad.empty()) continue;
        node->grad_fn->backprop(*node);
    }
}

double check_gradient(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
    if (h <= 0.0) throw ContractError("check_gradient: step must be positive");

    Tensor xg = x.clone_data();
    xg.set_requires_grad(true);
    Tensor loss = f(xg);
    if (loss.size() != 1) throw ContractError("check_gradient: f must be scalar-valued");
    backward(loss);
    std::vector<double> ad(static_cast<size_t>(x.size()), 0.0);
    if (xg.has_grad()) ad = xg.grad();

    Tensor xp = x.clone_data();
    double max_err = 0.0;
    for (int64_t i = 0; i < x.size(); ++i) {
        double orig = xp.data()[static_cast<size_t>(i)];
        xp.mutable_data()[static_cast<size_t>(i)] = orig + h;
        double fp = f(xp).item();
        xp.mutable_data()[static_cast<size_t>(i)] = orig - h;
        double fm = f(xp).item();
        xp.mutable_data()[static_cast<size_t>(i)] = orig;
        double fd = (fp - fm) / (2.0 * h);
        double a = ad[static_cast<size_t>(i)];
        double err = std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)});
        max_err = std::max(max_err, err);
    }
    return max_err;
}

}  // namespace swapdiff
