#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cpda/common.hpp"

namespace cpda {

using Shape = std::vector<int>;

inline int64_t numel_of(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

// Multiply-accumulate sink for the analytic-vs-measured FLOP cross-check.
// Only matmul contributes; pointer is installed around the code region being measured.
namespace macs {

inline thread_local std::uint64_t* sink = nullptr;

struct Scope {
    std::uint64_t* prev;
    explicit Scope(std::uint64_t* s) : prev(sink) { sink = s; }
    ~Scope() { sink = prev; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;
};

inline void add(std::uint64_t n) {
    if (sink) *sink += n;
}

}  // namespace macs

// Boolean query x key allowance table consumed by masked_softmax.
struct MaskMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<std::uint8_t> allow;

    MaskMatrix() = default;
    MaskMatrix(int r, int c, bool value) : rows(r), cols(c), allow(static_cast<size_t>(r) * c, value ? 1 : 0) {}

    bool at(int q, int k) const { return allow[static_cast<size_t>(q) * cols + k] != 0; }
    void set(int q, int k, bool v) { allow[static_cast<size_t>(q) * cols + k] = v ? 1 : 0; }
};

namespace detail {

struct TensorImpl {
    Shape shape;
    std::vector<double> v;    // values, row-major
    std::vector<double> g;    // accumulated gradient (leaves only), lazily sized
    std::vector<double> tmp;  // scratch gradient used during one backward() sweep
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void(TensorImpl&)> backprop;  // pulls self.tmp into parents' tmp

    int64_t numel() const { return static_cast<int64_t>(v.size()); }
    bool is_leaf() const { return !backprop; }
};

}  // namespace detail

// Dense double-precision tensor participating in a reverse-mode graph.
// Value semantics on the handle; the node itself is shared.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return full(std::move(shape), 0.0, requires_grad);
    }

    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        auto impl = std::make_shared<detail::TensorImpl>();
        impl->v.assign(static_cast<size_t>(numel_of(shape)), value);
        impl->shape = std::move(shape);
        impl->requires_grad = requires_grad;
        return Tensor(std::move(impl));
    }

    static Tensor from_vector(Shape shape, std::vector<double> data, bool requires_grad = false) {
        check_shape(numel_of(shape) == static_cast<int64_t>(data.size()),
                    "from_vector: data length does not match shape");
        auto impl = std::make_shared<detail::TensorImpl>();
        impl->shape = std::move(shape);
        impl->v = std::move(data);
        impl->requires_grad = requires_grad;
        return Tensor(std::move(impl));
    }

    static Tensor scalar(double value, bool requires_grad = false) {
        return from_vector({1}, {value}, requires_grad);
    }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    int64_t numel() const { return impl_->numel(); }
    bool requires_grad() const { return impl_->requires_grad; }

    int rows() const {
        check_shape(rank() == 2, "rows: tensor is not rank 2");
        return impl_->shape[0];
    }
    int cols() const {
        check_shape(rank() == 2, "cols: tensor is not rank 2");
        return impl_->shape[1];
    }

    const std::vector<double>& data() const { return impl_->v; }
    std::vector<double>& mutable_data() { return impl_->v; }

    double value() const {
        check_contract(numel() == 1, "value: tensor is not scalar");
        return impl_->v[0];
    }
    double at(int64_t i) const { return impl_->v[static_cast<size_t>(i)]; }
    double at(int r, int c) const { return impl_->v[static_cast<size_t>(r) * cols() + c]; }

    bool has_grad() const { return !impl_->g.empty(); }
    const std::vector<double>& grad() const {
        check_contract(has_grad(), "grad: no gradient accumulated");
        return impl_->g;
    }
    void zero_grad() {
        if (!impl_->g.empty()) std::fill(impl_->g.begin(), impl_->g.end(), 0.0);
    }

    // Accumulates dL/dp additively into every reachable requires_grad leaf.
    void backward() const;

    detail::TensorImpl* impl() const { return impl_.get(); }
    const std::shared_ptr<detail::TensorImpl>& node() const { return impl_; }

  private:
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<detail::TensorImpl> impl_;

    friend Tensor make_op(Shape shape, std::vector<Tensor> inputs,
                          std::function<void(detail::TensorImpl&)> backprop);
};

// Builds a graph node. The backprop closure is attached only when some input
// actually requires gradients; inference graphs stay plain buffers.
inline Tensor make_op(Shape shape, std::vector<Tensor> inputs,
                      std::function<void(detail::TensorImpl&)> backprop) {
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->v.resize(static_cast<size_t>(numel_of(shape)));
    impl->shape = std::move(shape);
    bool rg = false;
    for (const Tensor& t : inputs) rg = rg || t.requires_grad();
    if (rg) {
        impl->requires_grad = true;
        impl->parents.reserve(inputs.size());
        for (const Tensor& t : inputs) impl->parents.push_back(t.node());
        impl->backprop = std::move(backprop);
    }
    return Tensor(std::move(impl));
}

inline void Tensor::backward() const {
    check_contract(defined() && numel() == 1, "backward: loss must be a defined scalar tensor");
    for (double x : impl_->v)
        if (!std::isfinite(x)) throw NumericalError("backward: loss is not finite");

    // Iterative topological sort over the requires_grad subgraph.
    std::vector<detail::TensorImpl*> topo;
    std::unordered_set<detail::TensorImpl*> done;
    std::vector<std::pair<detail::TensorImpl*, size_t>> stack;
    if (impl_->requires_grad) stack.emplace_back(impl_.get(), 0);
    done.insert(impl_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::TensorImpl* p = node->parents[next++].get();
            if (p->requires_grad && done.insert(p).second) stack.emplace_back(p, 0);
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }

    for (detail::TensorImpl* n : topo) n->tmp.assign(n->v.size(), 0.0);
    if (impl_->requires_grad) impl_->tmp[0] = 1.0;

    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        detail::TensorImpl* n = *it;
        if (n->backprop) {
            n->backprop(*n);
        } else if (n->requires_grad) {
            if (n->g.empty()) n->g.assign(n->v.size(), 0.0);
            for (size_t i = 0; i < n->g.size(); ++i) n->g[i] += n->tmp[i];
        }
    }
    for (detail::TensorImpl* n : topo) {
        n->tmp.clear();
        n->tmp.shrink_to_fit();
    }
}

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    check_shape(a.shape() == b.shape(), std::string(op) + ": operand shapes differ");
}

}  // namespace detail

// Seeded in-place initializers; draw order is fixed so runs replay exactly.
inline void fill_uniform(Tensor& t, Rng& rng, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    for (double& x : t.mutable_data()) x = d(rng);
}

inline void fill_normal(Tensor& t, Rng& rng, double stddev) {
    std::normal_distribution<double> d(0.0, stddev);
    for (double& x : t.mutable_data()) x = d(rng);
}

// ---------------------------------------------------------------------------
// elementwise ops

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    Tensor out = make_op(a.shape(), {a, b}, [](detail::TensorImpl& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad)
            for (size_t i = 0; i < self.tmp.size(); ++i) pa.tmp[i] += self.tmp[i];
        if (pb.requires_grad)
            for (size_t i = 0; i < self.tmp.size(); ++i) pb.tmp[i] += self.tmp[i];
    });
    auto& o = out.mutable_data();
    const auto& av = a.data();
    const auto& bv = b.data();
    for (size_t i = 0; i < o.size(); ++i) o[i] = av[i] + bv[i];
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    Tensor out = make_op(a.shape(), {a, b}, [](detail::TensorImpl& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad)
            for (size_t i = 0; i < self.tmp.size(); ++i) pa.tmp[i] += self.tmp[i];
        if (pb.requires_grad)
            for (size_t i = 0; i < self.tmp.size(); ++i) pb.tmp[i] -= self.tmp[i];
    });
    auto& o = out.mutable_data();
    for (size_t i = 0; i < o.size(); ++i) o[i] = a.data()[i] - b.data()[i];
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    Tensor out = make_op(a.shape(), {a, b}, [](detail::TensorImpl& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad)
            for (size_t i = 0; i < self.tmp.size(); ++i) pa.tmp[i] += self.tmp[i] * pb.v[i];
        if (pb.requires_grad)
            for (size_t i = 0; i < self.tmp.size(); ++i) pb.tmp[i] += self.tmp[i] * pa.v[i];
    });
    auto& o = out.mutable_data();
    for (size_t i = 0; i < o.size(); ++i) o[i] = a.data()[i] * b.data()[i];
    return out;
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "div");
    Tensor out = make_op(a.shape(), {a, b}, [](detail::TensorImpl& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad)
            for (size_t i = 0; i < self.tmp.size(); ++i) pa.tmp[i] += self.tmp[i] / pb.v[i];
        if (pb.requires_grad)
            for (size_t i = 0; i < self.tmp.size(); ++i)
                pb.tmp[i] -= self.tmp[i] * pa.v[i] / (pb.v[i] * pb.v[i]);
    });
    auto& o = out.mutable_data();
    for (size_t i = 0; i < o.size(); ++i) o[i] = a.data()[i] / b.data()[i];
    return out;
}

inline Tensor scale(const Tensor& a, double c) {
    Tensor out = make_op(a.shape(), {a}, [c](detail::TensorImpl& self) {
        auto& pa = *self.parents[0];
        for (size_t i = 0; i < self.tmp.size(); ++i) pa.tmp[i] += self.tmp[i] * c;
    });
    auto& o = out.mutable_data();
    for (size_t i = 0; i < o.size(); ++i) o[i] = a.data()[i] * c;
    return out;
}

inline Tensor add_const(const Tensor& a, double c) {
    Tensor out = make_op(a.shape(), {a}, [](detail::TensorImpl& self) {
        auto& pa = *self.parents[0];
        for (size_t i = 0; i < self.tmp.size(); ++i) pa.tmp[i] += self.tmp[i];
    });
    auto& o = out.mutable_data();
    for (size_t i = 0; i < o.size(); ++i) o[i] = a.data()[i] + c;
    return out;
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

// m[R x C] + row[C], broadcast over rows. The only broadcast the engine has.
inline Tensor add_rowwise(const Tensor& m, const Tensor& row) {
    check_shape(m.rank() == 2 && row.rank() == 1 && m.cols() == row.dim(0),
                "add_rowwise: expected [RxC] and [C]");
    const int r = m.rows(), c = m.cols();
    Tensor out = make_op(m.shape(), {m, row}, [r, c](detail::TensorImpl& self) {
        auto& pm = *self.parents[0];
        auto& pr = *self.parents[1];
        if (pm.requires_grad)
            for (size_t i = 0; i < self.tmp.size(); ++i) pm.tmp[i] += self.tmp[i];
        if (pr.requires_grad)
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) pr.tmp[j] += self.tmp[static_cast<size_t>(i) * c + j];
    });
    auto& o = out.mutable_data();
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
            o[static_cast<size_t>(i) * c + j] = m.data()[static_cast<size_t>(i) * c + j] + row.data()[j];
    return out;
}

inline Tensor sigmoid(const Tensor& a) {
    Tensor out = make_op(a.shape(), {a}, [](detail::TensorImpl& self) {
        auto& pa = *self.parents[0];
        for (size_t i = 0; i < self.tmp.size(); ++i)
            pa.tmp[i] += self.tmp[i] * self.v[i] * (1.0 - self.v[i]);
    });
    auto& o = out.mutable_data();
    for (size_t i = 0; i < o.size(); ++i) {
        double x = a.data()[i];
        o[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }
    return out;
}

// log(sigmoid(x)) = -softplus(-x), stable at both tails.
inline Tensor log_sigmoid(const Tensor& a) {
    Tensor out = make_op(a.shape(), {a}, [](detail::TensorImpl& self) {
        auto& pa = *self.parents[0];
        for (size_t i = 0; i < self.tmp.size(); ++i) {
            double x = pa.v[i];
            double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
            pa.tmp[i] += self.tmp[i] * (1.0 - s);
        }
    });
    auto& o = out.mutable_data();
    for (size_t i = 0; i < o.size(); ++i) {
        double x = a.data()[i];
        o[i] = -(std::max(-x, 0.0) + std::log1p(std::exp(-std::abs(x))));
    }
    return out;
}

inline Tensor gelu(const Tensor& a) {
    constexpr double kInvSqrt2 = 0.7071067811865475244;
    constexpr double kInvSqrt2Pi = 0.3989422804014326779;
    Tensor out = make_op(a.shape(), {a}, [](detail::TensorImpl& self) {
        auto& pa = *self.parents[0];
        for (size_t i = 0; i < self.tmp.size(); ++i) {
            double x = pa.v[i];
            double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
            double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            pa.tmp[i] += self.tmp[i] * (cdf + x * pdf);
        }
    });
    auto& o = out.mutable_data();
    for (size_t i = 0; i < o.size(); ++i) {
        double x = a.data()[i];
        o[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    }
    return out;
}

inline Tensor exp(const Tensor& a) {
    Tensor out = make_op(a.shape(), {a}, [](detail::TensorImpl& self) {
        auto& pa = *self.parents[0];
        for (size_t i = 0; i < self.tmp.size(); ++i) pa.tmp[i] += self.tmp[i] * self.v[i];
    });
    auto& o = out.mutable_data();
    for (size_t i = 0; i < o.size(); ++i) o[i] = std::exp(a.data()[i]);
    return out;
}

inline Tensor log(const Tensor& a) {
    Tensor out = make_op(a.shape(), {a}, [](detail::TensorImpl& self) {
        auto& pa = *self.parents[0];
        for (size_t i = 0; i < self.tmp.size(); ++i) pa.tmp[i] += self.tmp[i] / pa.v[i];
    });
    auto& o = out.mutable_data();
    for (size_t i = 0; i < o.size(); ++i) o[i] = std::log(a.data()[i]);
    return out;
}

inline Tensor absval(const Tensor& a) {
    Tensor out = make_op(a.shape(), {a}, [](detail::TensorImpl& self) {
        auto& pa = *self.parents[0];
        for (size_t i = 0; i < self.tmp.size(); ++i) {
            double s = pa.v[i] > 0.0 ? 1.0 : (pa.v[i] < 0.0 ? -1.0 : 0.0);
            pa.tmp[i] += self.tmp[i] * s;
        }
    });
    auto& o = out.mutable_data();
    for (size_t i = 0; i < o.size(); ++i) o[i] = std::abs(a.data()[i]);
    return out;
}

// Elementwise min/max; ties route the gradient to the first argument.
inline Tensor emax(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "emax");
    Tensor out = make_op(a.shape(), {a, b}, [](detail::TensorImpl& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        for (size_t i = 0; i < self.tmp.size(); ++i) {
            if (pa.v[i] >= pb.v[i]) {
                if (pa.requires_grad) pa.tmp[i] += self.tmp[i];
            } else if (pb.requires_grad) {
                pb.tmp[i] += self.tmp[i];
            }
        }
    });
    auto& o = out.mutable_data();
    for (size_t i = 0; i < o.size(); ++i) o[i] = a.data()[i] >= b.data()[i] ? a.data()[i] : b.data()[i];
    return out;
}

inline Tensor emin(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "emin");
    Tensor out = make_op(a.shape(), {a, b}, [](detail::TensorImpl& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        for (size_t i = 0; i < self.tmp.size(); ++i) {
            if (pa.v[i] <= pb.v[i]) {
                if (pa.requires_grad) pa.tmp[i] += self.tmp[i];
            } else if (pb.requires_grad) {
                pb.tmp[i] += self.tmp[i];
            }
        }
    });
    auto& o = out.mutable_data();
    for (size_t i = 0; i < o.size(); ++i) o[i] = a.data()[i] <= b.data()[i] ? a.data()[i] : b.data()[i];
    return out;
}

// ---------------------------------------------------------------------------
// linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    check_shape(a.rank() == 2 && b.rank() == 2, "matmul: operands must be rank 2");
    check_shape(a.cols() == b.rows(), "matmul: inner dimensions disagree");
    const int m = a.rows(), k = a.cols(), n = b.cols();
    macs::add(static_cast<std::uint64_t>(m) * k * n);
    Tensor out = make_op({m, n}, {a, b}, [m, k, n](detail::TensorImpl& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const double* go = self.tmp.data();
        if (pa.requires_grad) {
            // dA = dOut * B^T
            double* ga = pa.tmp.data();
            const double* bv = pb.v.data();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) {
                    double gij = go[static_cast<size_t>(i) * n + j];
                    if (gij == 0.0) continue;
                    const double* brow = bv;  // iterate B rows via kk
                    for (int kk = 0; kk < k; ++kk)
                        ga[static_cast<size_t>(i) * k + kk] += gij * brow[static_cast<size_t>(kk) * n + j];
                }
        }
        if (pb.requires_grad) {
            // dB = A^T * dOut
            double* gb = pb.tmp.data();
            const double* av = pa.v.data();
            for (int i = 0; i < m; ++i)
                for (int kk = 0; kk < k; ++kk) {
                    double aik = av[static_cast<size_t>(i) * k + kk];
                    if (aik == 0.0) continue;
                    for (int j = 0; j < n; ++j)
                        gb[static_cast<size_t>(kk) * n + j] += aik * go[static_cast<size_t>(i) * n + j];
                }
        }
    });
    auto& o = out.mutable_data();
    const double* av = a.data().data();
    const double* bv = b.data().data();
    for (int i = 0; i < m; ++i) {
        double* orow = o.data() + static_cast<size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            double aik = av[static_cast<size_t>(i) * k + kk];
            const double* brow = bv + static_cast<size_t>(kk) * n;
            for (int j = 0; j < n; ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

inline Tensor transpose(const Tensor& a) {
    check_shape(a.rank() == 2, "transpose: rank 2 expected");
    const int r = a.rows(), c = a.cols();
    Tensor out = make_op({c, r}, {a}, [r, c](detail::TensorImpl& self) {
        auto& pa = *self.parents[0];
        for (int i = 0; i < c; ++i)
            for (int j = 0; j < r; ++j)
                pa.tmp[static_cast<size_t>(j) * c + i] += self.tmp[static_cast<size_t>(i) * r + j];
    });
    auto& o = out.mutable_data();
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) o[static_cast<size_t>(j) * r + i] = a.data()[static_cast<size_t>(i) * c + j];
    return out;
}

inline Tensor reshape(const Tensor& a, Shape shape) {
    check_shape(numel_of(shape) == a.numel(), "reshape: element count mismatch");
    Tensor out = make_op(std::move(shape), {a}, [](detail::TensorImpl& self) {
        auto& pa = *self.parents[0];
        for (size_t i = 0; i < self.tmp.size(); ++i) pa.tmp[i] += self.tmp[i];
    });
    out.mutable_data() = a.data();
    return out;
}

// ---------------------------------------------------------------------------
// row/column restructuring

inline Tensor slice_cols(const Tensor& a, int c0, int n) {
    check_shape(a.rank() == 2 && c0 >= 0 && n > 0 && c0 + n <= a.cols(), "slice_cols: range out of bounds");
    const int r = a.rows(), c = a.cols();
    Tensor out = make_op({r, n}, {a}, [r, c, c0, n](detail::TensorImpl& self) {
        auto& pa = *self.parents[0];
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < n; ++j)
                pa.tmp[static_cast<size_t>(i) * c + c0 + j] += self.tmp[static_cast<size_t>(i) * n + j];
    });
    auto& o = out.mutable_data();
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < n; ++j)
            o[static_cast<size_t>(i) * n + j] = a.data()[static_cast<size_t>(i) * c + c0 + j];
    return out;
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    check_shape(!parts.empty(), "concat_cols: no inputs");
    const int r = parts[0].rows();
    int total = 0;
    for (const Tensor& t : parts) {
        check_shape(t.rank() == 2 && t.rows() == r, "concat_cols: row counts differ");
        total += t.cols();
    }
    std::vector<int> widths;
    for (const Tensor& t : parts) widths.push_back(t.cols());
    Tensor out = make_op({r, total}, parts, [r, total, widths](detail::TensorImpl& self) {
        int off = 0;
        for (size_t p = 0; p < self.parents.size(); ++p) {
            auto& pp = *self.parents[p];
            const int w = widths[p];
            if (pp.requires_grad)
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < w; ++j)
                        pp.tmp[static_cast<size_t>(i) * w + j] +=
                            self.tmp[static_cast<size_t>(i) * total + off + j];
            off += w;
        }
    });
    auto& o = out.mutable_data();
    int off = 0;
    for (const Tensor& t : parts) {
        const int w = t.cols();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < w; ++j)
                o[static_cast<size_t>(i) * total + off + j] = t.data()[static_cast<size_t>(i) * w + j];
        off += w;
    }
    return out;
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    check_shape(!parts.empty(), "concat_rows: no inputs");
    const int c = parts[0].cols();
    int total = 0;
    for (const Tensor& t : parts) {
        check_shape(t.rank() == 2 && t.cols() == c, "concat_rows: column counts differ");
        total += t.rows();
    }
    std::vector<int> heights;
    for (const Tensor& t : parts) heights.push_back(t.rows());
    Tensor out = make_op({total, c}, parts, [c, heights](detail::TensorImpl& self) {
        size_t off = 0;
        for (size_t p = 0; p < self.parents.size(); ++p) {
            auto& pp = *self.parents[p];
            const size_t cnt = static_cast<size_t>(heights[p]) * c;
            if (pp.requires_grad)
                for (size_t i = 0; i < cnt; ++i) pp.tmp[i] += self.tmp[off + i];
            off += cnt;
        }
    });
    auto& o = out.mutable_data();
    size_t off = 0;
    for (const Tensor& t : parts) {
        std::copy(t.data().begin(), t.data().end(), o.begin() + static_cast<long>(off));
        off += t.data().size();
    }
    return out;
}

inline Tensor gather_rows(const Tensor& a, std::vector<int> idx) {
    check_shape(a.rank() == 2, "gather_rows: rank 2 expected");
    const int c = a.cols();
    for (int i : idx) check_shape(i >= 0 && i < a.rows(), "gather_rows: index out of range");
    const int n = static_cast<int>(idx.size());
    Tensor out = make_op({n, c}, {a}, [c, idx](detail::TensorImpl& self) {
        auto& pa = *self.parents[0];
        for (size_t r = 0; r < idx.size(); ++r)
            for (int j = 0; j < c; ++j)
                pa.tmp[static_cast<size_t>(idx[r]) * c + j] += self.tmp[r * c + j];
    });
    auto& o = out.mutable_data();
    for (size_t r = 0; r < idx.size(); ++r)
        for (int j = 0; j < c; ++j)
            o[r * c + j] = a.data()[static_cast<size_t>(idx[r]) * c + j];
    return out;
}

// Places values row r at destination row idx[r]; remaining rows hold `fill`.
// Used to restore compacted tokens to their grid positions.
inline Tensor scatter_rows(const std::vector<int>& idx, const Tensor& values, double fill, int nrows) {
    check_shape(values.rank() == 2 && static_cast<int>(idx.size()) == values.rows(),
                "scatter_rows: one destination index per value row");
    const int c = values.cols();
    std::vector<char> seen(static_cast<size_t>(nrows), 0);
    for (int i : idx) {
        check_shape(i >= 0 && i < nrows, "scatter_rows: index out of range");
        check_contract(!seen[static_cast<size_t>(i)], "scatter_rows: destination row collision");
        seen[static_cast<size_t>(i)] = 1;
    }
    Tensor out = make_op({nrows, c}, {values}, [c, idx](detail::TensorImpl& self) {
        auto& pv = *self.parents[0];
        for (size_t r = 0; r < idx.size(); ++r)
            for (int j = 0; j < c; ++j)
                pv.tmp[r * c + j] += self.tmp[static_cast<size_t>(idx[r]) * c + j];
    });
    auto& o = out.mutable_data();
    std::fill(o.begin(), o.end(), fill);
    for (size_t r = 0; r < idx.size(); ++r)
        for (int j = 0; j < c; ++j)
            o[static_cast<size_t>(idx[r]) * c + j] = values.data()[r * c + j];
    return out;
}

inline Tensor repeat_row(const Tensor& row, int n) {
    check_shape(row.rank() == 1, "repeat_row: rank 1 expected");
    const int c = row.dim(0);
    Tensor out = make_op({n, c}, {row}, [n, c](detail::TensorImpl& self) {
        auto& pr = *self.parents[0];
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j) pr.tmp[j] += self.tmp[static_cast<size_t>(i) * c + j];
    });
    auto& o = out.mutable_data();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) o[static_cast<size_t>(i) * c + j] = row.data()[j];
    return out;
}

// ---------------------------------------------------------------------------
// reductions

inline Tensor sum(const Tensor& a) {
    Tensor out = make_op({1}, {a}, [](detail::TensorImpl& self) {
        auto& pa = *self.parents[0];
        for (size_t i = 0; i < pa.tmp.size(); ++i) pa.tmp[i] += self.tmp[0];
    });
    double s = 0.0;
    for (double x : a.data()) s += x;
    out.mutable_data()[0] = s;
    return out;
}

inline Tensor mean(const Tensor& a) {
    check_shape(a.numel() > 0, "mean: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

// Per-column maximum over rows; gradient flows to the first row attaining the max.
inline Tensor max_over_rows(const Tensor& a) {
    check_shape(a.rank() == 2 && a.rows() > 0, "max_over_rows: nonempty rank-2 expected");
    const int r = a.rows(), c = a.cols();
    auto argmax = std::make_shared<std::vector<int>>(static_cast<size_t>(c), 0);
    Tensor out = make_op({c}, {a}, [c, argmax](detail::TensorImpl& self) {
        auto& pa = *self.parents[0];
        for (int j = 0; j < c; ++j)
            pa.tmp[static_cast<size_t>((*argmax)[static_cast<size_t>(j)]) * c + j] += self.tmp[j];
    });
    auto& o = out.mutable_data();
    for (int j = 0; j < c; ++j) {
        int best = 0;
        double bv = a.data()[j];
        for (int i = 1; i < r; ++i) {
            double x = a.data()[static_cast<size_t>(i) * c + j];
            if (x > bv) {
                bv = x;
                best = i;
            }
        }
        o[j] = bv;
        (*argmax)[static_cast<size_t>(j)] = best;
    }
    return out;
}

// ---------------------------------------------------------------------------
// normalization and attention

inline Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-6) {
    check_shape(x.rank() == 2 && gain.rank() == 1 && bias.rank() == 1 && gain.dim(0) == x.cols() &&
                    bias.dim(0) == x.cols(),
                "layernorm: expected x[RxC], gain[C], bias[C]");
    const int r = x.rows(), c = x.cols();
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(r));
    auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(r) * c);
    Tensor out = make_op(x.shape(), {x, gain, bias}, [r, c, inv_std, xhat](detail::TensorImpl& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        const auto& gv = pg.v;
        for (int i = 0; i < r; ++i) {
            const double* go = self.tmp.data() + static_cast<size_t>(i) * c;
            const double* xh = xhat->data() + static_cast<size_t>(i) * c;
            if (pg.requires_grad)
                for (int j = 0; j < c; ++j) pg.tmp[j] += go[j] * xh[j];
            if (pb.requires_grad)
                for (int j = 0; j < c; ++j) pb.tmp[j] += go[j];
            if (px.requires_grad) {
                double m1 = 0.0, m2 = 0.0;  // mean(g*dy), mean(g*dy*xhat)
                for (int j = 0; j < c; ++j) {
                    double t = gv[j] * go[j];
                    m1 += t;
                    m2 += t * xh[j];
                }
                m1 /= c;
                m2 /= c;
                const double is = (*inv_std)[static_cast<size_t>(i)];
                for (int j = 0; j < c; ++j)
                    px.tmp[static_cast<size_t>(i) * c + j] += is * (gv[j] * go[j] - m1 - xh[j] * m2);
            }
        }
    });
    auto& o = out.mutable_data();
    for (int i = 0; i < r; ++i) {
        const double* xr = x.data().data() + static_cast<size_t>(i) * c;
        double mu = 0.0;
        for (int j = 0; j < c; ++j) mu += xr[j];
        mu /= c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= c;
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[static_cast<size_t>(i)] = is;
        for (int j = 0; j < c; ++j) {
            double xh = (xr[j] - mu) * is;
            (*xhat)[static_cast<size_t>(i) * c + j] = xh;
            o[static_cast<size_t>(i) * c + j] = xh * gain.data()[j] + bias.data()[j];
        }
    }
    return out;
}

// Row-wise softmax restricted to allowed keys. Disallowed cells are exactly 0
// in the output and receive exactly zero gradient; the row max and the
// normalizer are taken over allowed cells only, so masked logits never
// influence the result. A fully masked row is a mask-construction bug.
inline Tensor masked_softmax(const Tensor& logits, const MaskMatrix& mask) {
    check_shape(logits.rank() == 2 && logits.rows() == mask.rows && logits.cols() == mask.cols,
                "masked_softmax: logits and mask dimensions differ");
    const int q = logits.rows(), k = logits.cols();
    auto mask_copy = std::make_shared<MaskMatrix>(mask);
    Tensor out = make_op(logits.shape(), {logits}, [q, k, mask_copy](detail::TensorImpl& self) {
        auto& pl = *self.parents[0];
        for (int i = 0; i < q; ++i) {
            const double* y = self.v.data() + static_cast<size_t>(i) * k;
            const double* gy = self.tmp.data() + static_cast<size_t>(i) * k;
            double dot = 0.0;
            for (int j = 0; j < k; ++j)
                if (mask_copy->at(i, j)) dot += y[j] * gy[j];
            for (int j = 0; j < k; ++j)
                if (mask_copy->at(i, j))
                    pl.tmp[static_cast<size_t>(i) * k + j] += y[j] * (gy[j] - dot);
        }
    });
    auto& o = out.mutable_data();
    for (int i = 0; i < q; ++i) {
        const double* lr = logits.data().data() + static_cast<size_t>(i) * k;
        double mx = -std::numeric_limits<double>::infinity();
        bool any = false;
        for (int j = 0; j < k; ++j)
            if (mask.at(i, j)) {
                any = true;
                mx = std::max(mx, lr[j]);
            }
        if (!any) throw ContractError("masked_softmax: fully masked query row " + std::to_string(i));
        double denom = 0.0;
        for (int j = 0; j < k; ++j)
            if (mask.at(i, j)) denom += std::exp(lr[j] - mx);
        for (int j = 0; j < k; ++j)
            o[static_cast<size_t>(i) * k + j] = mask.at(i, j) ? std::exp(lr[j] - mx) / denom : 0.0;
    }
    return out;
}

}  // namespace cpda
