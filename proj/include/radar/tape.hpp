#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "radar/sparse.hpp"
#include "radar/tensor.hpp"

namespace radar {

// ============================================================================
// Dense matmul kernels (plain tensors). Loop orders keep the innermost stride
// unit-length so -O3 vectorizes them; summation order is fixed.
// ============================================================================

// C = A B
inline Tensor matmul_nn(const Tensor& a, const Tensor& b) {
    require(a.shape.size() == 2 && b.shape.size() == 2, "matmul: operands must be matrices");
    require(a.cols() == b.rows(), "matmul: inner dimensions disagree");
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    Tensor c({n, m});
    for (std::size_t i = 0; i < n; ++i) {
        double* ci = &c.data[i * m];
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a.data[i * k + p];
            const double* bp = &b.data[p * m];
            for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
        }
    }
    return c;
}

// C = A B^T
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require(a.shape.size() == 2 && b.shape.size() == 2, "matmul_nt: operands must be matrices");
    require(a.cols() == b.cols(), "matmul_nt: inner dimensions disagree");
    const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
    Tensor c({n, m});
    for (std::size_t i = 0; i < n; ++i) {
        const double* ai = &a.data[i * k];
        double* ci = &c.data[i * m];
        for (std::size_t j = 0; j < m; ++j) {
            const double* bj = &b.data[j * k];
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
            ci[j] = s;
        }
    }
    return c;
}

// C = A^T B
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    require(a.shape.size() == 2 && b.shape.size() == 2, "matmul_tn: operands must be matrices");
    require(a.rows() == b.rows(), "matmul_tn: inner dimensions disagree");
    const std::size_t n = a.cols(), k = a.rows(), m = b.cols();
    Tensor c({n, m});
    for (std::size_t i = 0; i < k; ++i) {
        const double* bi = &b.data[i * m];
        for (std::size_t p = 0; p < n; ++p) {
            const double av = a.data[i * n + p];
            double* cp = &c.data[p * m];
            for (std::size_t j = 0; j < m; ++j) cp[j] += av * bi[j];
        }
    }
    return c;
}

// ============================================================================
// Reverse-mode autodiff
// ============================================================================

// Handle into a Tape. Only valid for the tape that produced it.
struct Var {
    std::uint32_t id = UINT32_MAX;
    bool valid() const { return id != UINT32_MAX; }
};

// Gradients keyed by Var, returned by Tape::backward.
class GradMap {
public:
    explicit GradMap(std::vector<Tensor> grads) : grads_(std::move(grads)) {}

    // Null when the node got no gradient (constant, or unreachable from the loss).
    const Tensor* get(Var v) const {
        if (v.id >= grads_.size() || grads_[v.id].data.empty()) return nullptr;
        return &grads_[v.id];
    }

    bool has(Var v) const { return get(v) != nullptr; }

private:
    std::vector<Tensor> grads_;
};

// Records one forward pass as a topologically ordered list of primitive ops and
// plays it backward exactly once. Single-owner, not copyable; saved forward values
// live in the nodes. Sparse operands are captured by reference and must outlive
// the tape.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    std::size_t size() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

    const Tensor& value(Var v) const {
        require(v.id < nodes_.size(), "value: stale or foreign Var");
        return nodes_[v.id].value;
    }

    // ---- leaves ----------------------------------------------------------

    // Differentiable leaf if t.requires_grad is set.
    // Trainable leaf; use constant() for data the sweep must not differentiate.
    Var input(Tensor t) {
        t.requires_grad = true;
        return push(std::move(t), true, nullptr, "input");
    }

    Var leaf(Tensor t, bool requires_grad) {
        t.requires_grad = requires_grad;
        return push(std::move(t), requires_grad, nullptr, "input");
    }

    Var constant(Tensor t) {
        t.requires_grad = false;
        return push(std::move(t), false, nullptr, "constant");
    }

    Var constant_scalar(double v) { return constant(Tensor::scalar(v)); }

    // ---- elementwise binary ----------------------------------------------

    Var add(Var a, Var b) {
        check_same_shape(value(a), value(b), "add");
        Tensor y = value(a);
        for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += value(b).data[i];
        return binary(std::move(y), a, b, "add", [this, a, b](const Tensor& g) {
            accum(a, g);
            accum(b, g);
        });
    }

    Var sub(Var a, Var b) {
        check_same_shape(value(a), value(b), "sub");
        Tensor y = value(a);
        for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] -= value(b).data[i];
        return binary(std::move(y), a, b, "sub", [this, a, b](const Tensor& g) {
            accum(a, g);
            Tensor gb = g;
            for (auto& v : gb.data) v = -v;
            accum(b, std::move(gb));
        });
    }

    Var mul(Var a, Var b) {
        check_same_shape(value(a), value(b), "mul");
        Tensor y = value(a);
        for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] *= value(b).data[i];
        return binary(std::move(y), a, b, "mul", [this, a, b](const Tensor& g) {
            Tensor ga = g, gb = g;
            const Tensor& va = value(a);
            const Tensor& vb = value(b);
            for (std::size_t i = 0; i < g.data.size(); ++i) {
                ga.data[i] *= vb.data[i];
                gb.data[i] *= va.data[i];
            }
            accum(a, std::move(ga));
            accum(b, std::move(gb));
        });
    }

    Var div(Var a, Var b) {
        check_same_shape(value(a), value(b), "div");
        Tensor y = value(a);
        for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] /= value(b).data[i];
        return binary(std::move(y), a, b, "div", [this, a, b](const Tensor& g) {
            Tensor ga = g, gb = g;
            const Tensor& va = value(a);
            const Tensor& vb = value(b);
            for (std::size_t i = 0; i < g.data.size(); ++i) {
                ga.data[i] /= vb.data[i];
                gb.data[i] *= -va.data[i] / (vb.data[i] * vb.data[i]);
            }
            accum(a, std::move(ga));
            accum(b, std::move(gb));
        });
    }

    // ---- scalar-constant and scalar-Var broadcasts -------------------------

    Var scale(Var a, double c) {
        Tensor y = value(a);
        for (auto& v : y.data) v *= c;
        return unary(std::move(y), a, "scale", [this, a, c](const Tensor& g) {
            Tensor ga = g;
            for (auto& v : ga.data) v *= c;
            accum(a, std::move(ga));
        });
    }

    Var add_const(Var a, double c) {
        Tensor y = value(a);
        for (auto& v : y.data) v += c;
        return unary(std::move(y), a, "add_const", [this, a](const Tensor& g) { accum(a, g); });
    }

    Var neg(Var a) { return scale(a, -1.0); }

    // y = x * s with s a scalar Var broadcast over x.
    Var mul_scalar(Var x, Var s) {
        require(value(s).numel() == 1, "mul_scalar: s must be scalar");
        const double sv = value(s).item();
        Tensor y = value(x);
        for (auto& v : y.data) v *= sv;
        return binary(std::move(y), x, s, "mul_scalar", [this, x, s, sv](const Tensor& g) {
            Tensor gx = g;
            for (auto& v : gx.data) v *= sv;
            accum(x, std::move(gx));
            Tensor gs(value(s).shape);
            gs.data[0] = dot_all(g, value(x));
            accum(s, std::move(gs));
        });
    }

    // y = x / s with s a scalar Var.
    Var div_scalar(Var x, Var s) {
        require(value(s).numel() == 1, "div_scalar: s must be scalar");
        const double sv = value(s).item();
        Tensor y = value(x);
        for (auto& v : y.data) v /= sv;
        return binary(std::move(y), x, s, "div_scalar", [this, x, s, sv](const Tensor& g) {
            Tensor gx = g;
            for (auto& v : gx.data) v /= sv;
            accum(x, std::move(gx));
            Tensor gs(value(s).shape);
            gs.data[0] = -dot_all(g, value(x)) / (sv * sv);
            accum(s, std::move(gs));
        });
    }

    // Scalar Var s replicated to the given shape.
    Var broadcast_scalar(Var s, std::vector<std::size_t> shape) {
        require(value(s).numel() == 1, "broadcast_scalar: s must be scalar");
        Tensor y(std::move(shape), value(s).item());
        return unary(std::move(y), s, "broadcast_scalar", [this, s](const Tensor& g) {
            Tensor gs(value(s).shape);
            for (double v : g.data) gs.data[0] += v;
            accum(s, std::move(gs));
        });
    }

    // ---- elementwise unary --------------------------------------------------

    Var sigmoid(Var a) {
        Tensor y = value(a);
        for (auto& v : y.data) v = stable_sigmoid(v);
        return unary_with_y(std::move(y), a, "sigmoid", [](double yv, double) { return yv * (1.0 - yv); });
    }

    Var tanh_(Var a) {
        Tensor y = value(a);
        for (auto& v : y.data) v = std::tanh(v);
        return unary_with_y(std::move(y), a, "tanh", [](double yv, double) { return 1.0 - yv * yv; });
    }

    Var exp_(Var a) {
        Tensor y = value(a);
        for (auto& v : y.data) v = std::exp(v);
        return unary_with_y(std::move(y), a, "exp", [](double yv, double) { return yv; });
    }

    Var log_(Var a) {
        Tensor y = value(a);
        for (auto& v : y.data) v = std::log(v);
        return unary_with_y(std::move(y), a, "log", [](double, double xv) { return 1.0 / xv; });
    }

    // log(1 + e^x), computed without overflow.
    Var softplus(Var a) {
        Tensor y = value(a);
        for (auto& v : y.data) v = stable_softplus(v);
        return unary_with_y(std::move(y), a, "softplus",
                            [](double, double xv) { return stable_sigmoid(xv); });
    }

    Var sqrt_(Var a) {
        Tensor y = value(a);
        for (auto& v : y.data) v = std::sqrt(v);
        return unary_with_y(std::move(y), a, "sqrt", [](double yv, double) { return 0.5 / yv; });
    }

    Var square(Var a) {
        Tensor y = value(a);
        for (auto& v : y.data) v *= v;
        return unary_with_y(std::move(y), a, "square", [](double, double xv) { return 2.0 * xv; });
    }

    Var relu(Var a) {
        Tensor y = value(a);
        for (auto& v : y.data) v = v > 0.0 ? v : 0.0;
        return unary_with_y(std::move(y), a, "relu", [](double, double xv) { return xv > 0.0 ? 1.0 : 0.0; });
    }

    // clip(0.2 x + 0.5, 0, 1); subgradient 0 at and beyond the clip points.
    Var hard_sigmoid(Var a) {
        Tensor y = value(a);
        for (auto& v : y.data) v = std::clamp(0.2 * v + 0.5, 0.0, 1.0);
        return unary_with_y(std::move(y), a, "hard_sigmoid", [](double, double xv) {
            const double t = 0.2 * xv + 0.5;
            return (t > 0.0 && t < 1.0) ? 0.2 : 0.0;
        });
    }

    // ---- shape ops ----------------------------------------------------------

    Var transpose(Var a) {
        const Tensor& x = value(a);
        require(x.shape.size() == 2, "transpose: operand must be a matrix");
        Tensor y({x.cols(), x.rows()});
        for (std::size_t i = 0; i < x.rows(); ++i)
            for (std::size_t j = 0; j < x.cols(); ++j) y.at(j, i) = x.at(i, j);
        return unary(std::move(y), a, "transpose", [this, a](const Tensor& g) {
            Tensor ga({g.cols(), g.rows()});
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < g.cols(); ++j) ga.at(j, i) = g.at(i, j);
            accum(a, std::move(ga));
        });
    }

    Var concat_cols(Var a, Var b) {
        const Tensor& x = value(a);
        const Tensor& z = value(b);
        require(x.shape.size() == 2 && z.shape.size() == 2 && x.rows() == z.rows(),
                "concat_cols: row counts disagree");
        const std::size_t n = x.rows(), p = x.cols(), q = z.cols();
        Tensor y({n, p + q});
        for (std::size_t i = 0; i < n; ++i) {
            std::copy_n(&x.data[i * p], p, &y.data[i * (p + q)]);
            std::copy_n(&z.data[i * q], q, &y.data[i * (p + q) + p]);
        }
        return binary(std::move(y), a, b, "concat_cols", [this, a, b, n, p, q](const Tensor& g) {
            Tensor ga({n, p}), gb({n, q});
            for (std::size_t i = 0; i < n; ++i) {
                std::copy_n(&g.data[i * (p + q)], p, &ga.data[i * p]);
                std::copy_n(&g.data[i * (p + q) + p], q, &gb.data[i * q]);
            }
            accum(a, std::move(ga));
            accum(b, std::move(gb));
        });
    }

    Var concat_rows(Var a, Var b) {
        const Tensor& x = value(a);
        const Tensor& z = value(b);
        require(x.shape.size() == 2 && z.shape.size() == 2 && x.cols() == z.cols(),
                "concat_rows: column counts disagree");
        const std::size_t p = x.rows(), q = z.rows(), d = x.cols();
        Tensor y({p + q, d});
        std::copy(x.data.begin(), x.data.end(), y.data.begin());
        std::copy(z.data.begin(), z.data.end(), y.data.begin() + static_cast<std::ptrdiff_t>(p * d));
        return binary(std::move(y), a, b, "concat_rows", [this, a, b, p, q, d](const Tensor& g) {
            Tensor ga({p, d}), gb({q, d});
            std::copy_n(g.data.begin(), p * d, ga.data.begin());
            std::copy_n(g.data.begin() + static_cast<std::ptrdiff_t>(p * d), q * d, gb.data.begin());
            accum(a, std::move(ga));
            accum(b, std::move(gb));
        });
    }

    Var slice_rows(Var a, std::size_t r0, std::size_t r1) {
        const Tensor& x = value(a);
        require(x.shape.size() == 2 && r0 <= r1 && r1 <= x.rows(), "slice_rows: bad range");
        const std::size_t d = x.cols(), nr = x.rows();
        Tensor y({r1 - r0, d});
        std::copy_n(&x.data[r0 * d], (r1 - r0) * d, y.data.begin());
        return unary(std::move(y), a, "slice_rows", [this, a, r0, d, nr](const Tensor& g) {
            Tensor ga({nr, d});
            std::copy(g.data.begin(), g.data.end(), ga.data.begin() + static_cast<std::ptrdiff_t>(r0 * d));
            accum(a, std::move(ga));
        });
    }

    // Output row k is x.row(idx[k]); indices may repeat. Backward scatter-adds in
    // output-row order (deterministic).
    Var gather_rows(Var a, std::vector<std::size_t> idx) {
        const Tensor& x = value(a);
        require(x.shape.size() == 2, "gather_rows: operand must be a matrix");
        const std::size_t d = x.cols(), nr = x.rows();
        for (auto i : idx) require(i < nr, "gather_rows: index out of range");
        Tensor y({idx.size(), d});
        for (std::size_t k = 0; k < idx.size(); ++k)
            std::copy_n(&x.data[idx[k] * d], d, &y.data[k * d]);
        auto ix = std::make_shared<std::vector<std::size_t>>(std::move(idx));
        return unary(std::move(y), a, "gather_rows", [this, a, ix, d, nr](const Tensor& g) {
            Tensor ga({nr, d});
            for (std::size_t k = 0; k < ix->size(); ++k) {
                const double* gk = &g.data[k * d];
                double* dst = &ga.data[(*ix)[k] * d];
                for (std::size_t c = 0; c < d; ++c) dst[c] += gk[c];
            }
            accum(a, std::move(ga));
        });
    }

    // y = base with y[positions[k]] = vals[k]. base is typically a constant cache;
    // gradient into base is masked out at the overwritten positions.
    Var overlay(Var base, Var vals, std::vector<std::size_t> positions) {
        const Tensor& b = value(base);
        const Tensor& v = value(vals);
        require(v.numel() == positions.size(), "overlay: vals length mismatch");
        Tensor y = b;
        std::vector<bool> seen(b.numel(), false);
        for (std::size_t k = 0; k < positions.size(); ++k) {
            require(positions[k] < y.numel(), "overlay: position out of range");
            require(!seen[positions[k]], "overlay: duplicate position");
            seen[positions[k]] = true;
            y.data[positions[k]] = v.data[k];
        }
        auto pos = std::make_shared<std::vector<std::size_t>>(std::move(positions));
        return binary(std::move(y), base, vals, "overlay", [this, base, vals, pos](const Tensor& g) {
            Tensor gv({pos->size(), 1});
            for (std::size_t k = 0; k < pos->size(); ++k) gv.data[k] = g.data[(*pos)[k]];
            if (node_needs_grad(base)) {
                Tensor gb = g;
                for (auto p : *pos) gb.data[p] = 0.0;
                accum(base, std::move(gb));
            }
            accum(vals, std::move(gv));
        });
    }

    // ---- matmul and sparse products ----------------------------------------

    Var matmul(Var a, Var b) {
        Tensor y = matmul_nn(value(a), value(b));
        return binary(std::move(y), a, b, "matmul", [this, a, b](const Tensor& g) {
            if (node_needs_grad(a)) accum(a, matmul_nt(g, value(b)));
            if (node_needs_grad(b)) accum(b, matmul_tn(value(a), g));
        });
    }

    // y = A x (or A^T x). A captured by reference; caller keeps it alive.
    Var spmm(const SparseMatrix& a, Var x, bool transpose_a = false) {
        Tensor y = transpose_a ? spmm_t(a, value(x)) : radar::spmm(a, value(x));
        const SparseMatrix* ap = &a;
        return unary(std::move(y), x, "spmm", [this, x, ap, transpose_a](const Tensor& g) {
            accum(x, transpose_a ? radar::spmm(*ap, g) : spmm_t(*ap, g));
        });
    }

    // y = (A entrywise* mask) x, mask a [nnz x 1] Var in nonzero order. Gradient
    // reaches both x and the mask; the pattern matrix A itself is fixed.
    Var spmm_masked(const SparseMatrix& a, Var mask, Var x, bool transpose_a = false) {
        const Tensor& m = value(mask);
        require(m.numel() == a.nnz(), "spmm_masked: mask length must equal nnz");
        auto masked = std::make_shared<SparseMatrix>(a.hadamard(std::span<const double>(m.data)));
        Tensor y = transpose_a ? spmm_t(*masked, value(x)) : radar::spmm(*masked, value(x));
        const SparseMatrix* ap = &a;
        return binary(std::move(y), mask, x, "spmm_masked",
                      [this, mask, x, ap, masked, transpose_a](const Tensor& g) {
            if (node_needs_grad(x))
                accum(x, transpose_a ? radar::spmm(*masked, g) : spmm_t(*masked, g));
            if (node_needs_grad(mask)) {
                const Tensor& xv = value(x);
                const std::size_t d = xv.cols();
                Tensor gm({ap->nnz(), 1});
                for (std::size_t i = 0; i < ap->n_rows; ++i) {
                    for (std::size_t k = ap->row_offsets[i]; k < ap->row_offsets[i + 1]; ++k) {
                        const std::size_t j = ap->col_indices[k];
                        const double* gr = &g.data[(transpose_a ? j : i) * d];
                        const double* xr = &xv.data[(transpose_a ? i : j) * d];
                        double s = 0.0;
                        for (std::size_t c = 0; c < d; ++c) s += gr[c] * xr[c];
                        gm.data[k] = ap->values[k] * s;
                    }
                }
                accum(mask, std::move(gm));
            }
        });
    }

    // ---- reductions and row ops ---------------------------------------------

    Var sum(Var a) {
        double s = 0.0;
        for (double v : value(a).data) s += v;
        return unary(Tensor::scalar(s), a, "sum", [this, a](const Tensor& g) {
            Tensor ga(value(a).shape, g.item());
            accum(a, std::move(ga));
        });
    }

    Var mean(Var a) {
        const std::size_t n = value(a).numel();
        require(n > 0, "mean of empty tensor");
        double s = 0.0;
        for (double v : value(a).data) s += v;
        return unary(Tensor::scalar(s / static_cast<double>(n)), a, "mean", [this, a, n](const Tensor& g) {
            Tensor ga(value(a).shape, g.item() / static_cast<double>(n));
            accum(a, std::move(ga));
        });
    }

    Var row_sum(Var a) {
        const Tensor& x = value(a);
        require(x.shape.size() == 2, "row_sum: operand must be a matrix");
        const std::size_t n = x.rows(), d = x.cols();
        Tensor y({n, 1});
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += x.at(i, j);
            y.data[i] = s;
        }
        return unary(std::move(y), a, "row_sum", [this, a, n, d](const Tensor& g) {
            Tensor ga({n, d});
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j) ga.at(i, j) = g.data[i];
            accum(a, std::move(ga));
        });
    }

    // X [n x d] + b [1 x d], b broadcast over rows.
    Var add_rowvec(Var x, Var b) {
        const Tensor& xv = value(x);
        const Tensor& bv = value(b);
        require(xv.shape.size() == 2 && bv.shape.size() == 2 && bv.rows() == 1 && bv.cols() == xv.cols(),
                "add_rowvec: bias must be [1 x cols]");
        Tensor y = xv;
        const std::size_t n = xv.rows(), d = xv.cols();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) y.at(i, j) += bv.data[j];
        return binary(std::move(y), x, b, "add_rowvec", [this, x, b, n, d](const Tensor& g) {
            accum(x, g);
            Tensor gb({1, d});
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j) gb.data[j] += g.at(i, j);
            accum(b, std::move(gb));
        });
    }

    // X [n x d] * c [n x 1], c broadcast over columns.
    Var mul_colvec(Var x, Var c) {
        const Tensor& xv = value(x);
        const Tensor& cv = value(c);
        require(xv.shape.size() == 2 && cv.shape.size() == 2 && cv.cols() == 1 && cv.rows() == xv.rows(),
                "mul_colvec: scale must be [rows x 1]");
        Tensor y = xv;
        const std::size_t n = xv.rows(), d = xv.cols();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) y.at(i, j) *= cv.data[i];
        return binary(std::move(y), x, c, "mul_colvec", [this, x, c, n, d](const Tensor& g) {
            const Tensor& xv2 = value(x);
            const Tensor& cv2 = value(c);
            Tensor gx = g;
            Tensor gc({n, 1});
            for (std::size_t i = 0; i < n; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    s += g.at(i, j) * xv2.at(i, j);
                    gx.at(i, j) *= cv2.data[i];
                }
                gc.data[i] = s;
            }
            accum(x, std::move(gx));
            accum(c, std::move(gc));
        });
    }

    // Row-by-row inner product of two [n x d] matrices, result [n x 1].
    Var rowwise_dot(Var a, Var b) {
        const Tensor& av = value(a);
        const Tensor& bv = value(b);
        check_same_shape(av, bv, "rowwise_dot");
        require(av.shape.size() == 2, "rowwise_dot: operands must be matrices");
        const std::size_t n = av.rows(), d = av.cols();
        Tensor y({n, 1});
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += av.at(i, j) * bv.at(i, j);
            y.data[i] = s;
        }
        return binary(std::move(y), a, b, "rowwise_dot", [this, a, b, n, d](const Tensor& g) {
            const Tensor& av2 = value(a);
            const Tensor& bv2 = value(b);
            Tensor ga({n, d}), gb({n, d});
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j) {
                    ga.at(i, j) = g.data[i] * bv2.at(i, j);
                    gb.at(i, j) = g.data[i] * av2.at(i, j);
                }
            accum(a, std::move(ga));
            accum(b, std::move(gb));
        });
    }

    // Rows scaled to unit L2 norm; rows with norm <= eps are scaled by 1/eps instead
    // so the op never divides by zero.
    Var l2_normalize_rows(Var a, double eps = 1e-12) {
        const Tensor& x = value(a);
        require(x.shape.size() == 2, "l2_normalize_rows: operand must be a matrix");
        const std::size_t n = x.rows(), d = x.cols();
        Tensor y = x;
        auto norms = std::make_shared<std::vector<double>>(n);
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += x.at(i, j) * x.at(i, j);
            const double nm = std::max(std::sqrt(s), eps);
            (*norms)[i] = nm;
            for (std::size_t j = 0; j < d; ++j) y.at(i, j) /= nm;
        }
        Var out = unary(std::move(y), a, "l2_normalize_rows", nullptr);
        set_backward(out, [this, a, out, norms, n, d](const Tensor& g) {
            const Tensor& yv = value(out);
            Tensor ga({n, d});
            for (std::size_t i = 0; i < n; ++i) {
                double gy = 0.0;
                for (std::size_t j = 0; j < d; ++j) gy += g.at(i, j) * yv.at(i, j);
                for (std::size_t j = 0; j < d; ++j)
                    ga.at(i, j) = (g.at(i, j) - yv.at(i, j) * gy) / (*norms)[i];
            }
            accum(a, std::move(ga));
        });
        return out;
    }

    // Row-wise log(sum(exp(x))), shifted by the row max so large logits cannot overflow.
    Var log_sum_exp_rows(Var a) {
        const Tensor& x = value(a);
        require(x.shape.size() == 2, "log_sum_exp_rows: operand must be a matrix");
        const std::size_t n = x.rows(), d = x.cols();
        require(d > 0, "log_sum_exp_rows: empty rows");
        Tensor y({n, 1});
        for (std::size_t i = 0; i < n; ++i) {
            double mx = x.at(i, 0);
            for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, x.at(i, j));
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += std::exp(x.at(i, j) - mx);
            y.data[i] = mx + std::log(s);
        }
        Var out = unary(std::move(y), a, "log_sum_exp_rows", nullptr);
        set_backward(out, [this, a, out, n, d](const Tensor& g) {
            const Tensor& xv = value(a);
            const Tensor& lse = value(out);
            Tensor ga({n, d});
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j)
                    ga.at(i, j) = g.data[i] * std::exp(xv.at(i, j) - lse.data[i]);
            accum(a, std::move(ga));
        });
        return out;
    }

    Var softmax_rows(Var a) {
        const Tensor& x = value(a);
        require(x.shape.size() == 2, "softmax_rows: operand must be a matrix");
        const std::size_t n = x.rows(), d = x.cols();
        require(d > 0, "softmax_rows: empty rows");
        Tensor y({n, d});
        for (std::size_t i = 0; i < n; ++i) {
            double mx = x.at(i, 0);
            for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, x.at(i, j));
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += (y.at(i, j) = std::exp(x.at(i, j) - mx));
            for (std::size_t j = 0; j < d; ++j) y.at(i, j) /= s;
        }
        Var out = unary(std::move(y), a, "softmax_rows", nullptr);
        set_backward(out, [this, a, out, n, d](const Tensor& g) {
            const Tensor& yv = value(out);
            Tensor ga({n, d});
            for (std::size_t i = 0; i < n; ++i) {
                double gy = 0.0;
                for (std::size_t j = 0; j < d; ++j) gy += g.at(i, j) * yv.at(i, j);
                for (std::size_t j = 0; j < d; ++j) ga.at(i, j) = yv.at(i, j) * (g.at(i, j) - gy);
            }
            accum(a, std::move(ga));
        });
        return out;
    }

    // Diagonal of a square matrix as [n x 1].
    Var diag(Var a) {
        const Tensor& x = value(a);
        require(x.shape.size() == 2 && x.rows() == x.cols(), "diag: operand must be square");
        const std::size_t n = x.rows();
        Tensor y({n, 1});
        for (std::size_t i = 0; i < n; ++i) y.data[i] = x.at(i, i);
        return unary(std::move(y), a, "diag", [this, a, n](const Tensor& g) {
            Tensor ga({n, n});
            for (std::size_t i = 0; i < n; ++i) ga.at(i, i) = g.data[i];
            accum(a, std::move(ga));
        });
    }

    // ---- backward -----------------------------------------------------------

    // Reverse sweep from a scalar loss. Consumes the tape: a second call is a
    // contract error. Returns gradients for every grad-requiring leaf reachable
    // from the loss.
    GradMap backward(Var loss) {
        require(!consumed_, "backward: tape already consumed");
        require(loss.id < nodes_.size(), "backward: stale or foreign Var");
        require(nodes_[loss.id].value.numel() == 1, "backward: loss must be scalar");
        consumed_ = true;
        grads_.assign(nodes_.size(), Tensor{});
        if (nodes_[loss.id].needs_grad) {
            grads_[loss.id] = Tensor(nodes_[loss.id].value.shape, 1.0);
            for (std::size_t i = loss.id + 1; i-- > 0;) {
                Node& nd = nodes_[i];
                if (grads_[i].data.empty() || !nd.needs_grad) continue;
                if (nd.backward) {
                    nd.backward(grads_[i]);
                    grads_[i] = Tensor{};  // interior grads are no longer needed
                }
            }
        }
        return GradMap(std::move(grads_));
    }

private:
    struct Node {
        Tensor value;
        bool needs_grad = false;
        std::function<void(const Tensor&)> backward;  // null for leaves
    };

    bool node_needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

    Var push(Tensor value, bool needs_grad, std::function<void(const Tensor&)> back, const char* where) {
        require(!consumed_, "op on a consumed tape");
        check_finite(value, where);
        nodes_.push_back(Node{std::move(value), needs_grad, std::move(back)});
        return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
    }

    Var unary(Tensor y, Var a, const char* where, std::function<void(const Tensor&)> back) {
        const bool ng = node_needs_grad(a);
        return push(std::move(y), ng, ng ? std::move(back) : nullptr, where);
    }

    Var binary(Tensor y, Var a, Var b, const char* where, std::function<void(const Tensor&)> back) {
        const bool ng = node_needs_grad(a) || node_needs_grad(b);
        return push(std::move(y), ng, ng ? std::move(back) : nullptr, where);
    }

    // For ops whose backward closure needs the output Var (created after push).
    void set_backward(Var v, std::function<void(const Tensor&)> back) {
        if (nodes_[v.id].needs_grad) nodes_[v.id].backward = std::move(back);
    }

    // df is (y, x) -> local derivative; product rule applied entrywise.
    Var unary_with_y(Tensor y, Var a, const char* where, double (*df)(double, double)) {
        Var out = unary(std::move(y), a, where, nullptr);
        set_backward(out, [this, a, out, df](const Tensor& g) {
            const Tensor& xv = value(a);
            const Tensor& yv = value(out);
            Tensor ga = g;
            for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] *= df(yv.data[i], xv.data[i]);
            accum(a, std::move(ga));
        });
        return out;
    }

    void accum(Var v, Tensor delta) {
        if (!nodes_[v.id].needs_grad) return;
        Tensor& slot = grads_[v.id];
        if (slot.data.empty()) {
            slot = std::move(delta);
        } else {
            check_same_shape(slot, delta, "grad accumulation");
            for (std::size_t i = 0; i < slot.data.size(); ++i) slot.data[i] += delta.data[i];
        }
    }

    static double stable_sigmoid(double x) {
        if (x >= 0.0) {
            const double e = std::exp(-x);
            return 1.0 / (1.0 + e);
        }
        const double e = std::exp(x);
        return e / (1.0 + e);
    }

    static double stable_softplus(double x) {
        if (x > 0.0) return x + std::log1p(std::exp(-x));
        return std::log1p(std::exp(x));
    }

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
    bool consumed_ = false;
};

}  // namespace radar
