#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "radar/error.hpp"
#include "radar/rng.hpp"

namespace radar {

// Dense row-major tensor of doubles. Rank is 0 (scalar), 1, or 2 in practice.
// Invariant: data.size() == product of shape. All consumers treat NaN/Inf as fatal;
// ops in the tape check outputs with check_finite.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    bool requires_grad = false;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> s, double fill = 0.0) : shape(std::move(s)) {
        data.assign(numel_of(shape), fill);
    }

    Tensor(std::vector<std::size_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        require(data.size() == numel_of(shape), "tensor data length does not match shape");
    }

    static Tensor scalar(double v) { return Tensor(std::vector<std::size_t>{}, std::vector<double>{v}); }

    static Tensor zeros(std::size_t r, std::size_t c) { return Tensor({r, c}); }

    static Tensor full(std::size_t r, std::size_t c, double v) { return Tensor({r, c}, v); }

    static Tensor matrix(std::size_t r, std::size_t c, std::vector<double> vals) {
        return Tensor(std::vector<std::size_t>{r, c}, std::move(vals));
    }

    static Tensor column(std::vector<double> vals) {
        const std::size_t n = vals.size();
        return Tensor(std::vector<std::size_t>{n, 1}, std::move(vals));
    }

    // Entries i.i.d. Normal(0, sigma).
    static Tensor randn(std::size_t r, std::size_t c, double sigma, Rng& rng) {
        Tensor t({r, c});
        for (auto& v : t.data) v = sigma * rng.normal();
        return t;
    }

    static std::size_t numel_of(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (auto d : s) n *= d;
        return n;
    }

    std::size_t numel() const { return data.size(); }
    bool is_scalar() const { return shape.empty() || (numel() == 1 && shape.size() <= 2); }

    double item() const {
        require(numel() == 1, "item() on non-scalar tensor");
        return data[0];
    }

    std::size_t rows() const {
        require(shape.size() == 2, "rows() on non-matrix tensor");
        return shape[0];
    }
    std::size_t cols() const {
        require(shape.size() == 2, "cols() on non-matrix tensor");
        return shape[1];
    }

    double& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "x" : "") + std::to_string(shape[i]);
        return s + "]";
    }
};

inline void check_finite(const Tensor& t, const char* where) {
    for (double v : t.data) {
        if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + where);
    }
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* where) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(where) + ": " + a.shape_str() + " vs " + b.shape_str());
}

// Frobenius inner product; fixed left-to-right summation order.
inline double dot_all(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "dot_all");
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}

inline double max_abs(const Tensor& t) {
    double m = 0.0;
    for (double v : t.data) m = std::max(m, std::abs(v));
    return m;
}

}  // namespace radar
