#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <tuple>
#include <vector>

#include "radar/tensor.hpp"

namespace radar {

// Compressed sparse row matrix. Column indices are strictly increasing within each
// row, so the nonzero order (the "edge order" used by per-edge mask vectors) is the
// row-major order of the coordinates and is canonical for a given pattern.
struct SparseMatrix {
    std::size_t n_rows = 0;
    std::size_t n_cols = 0;
    std::vector<std::size_t> row_offsets;  // size n_rows + 1
    std::vector<std::size_t> col_indices;  // size nnz
    std::vector<double> values;            // size nnz

    SparseMatrix() : row_offsets{0} {}

    SparseMatrix(std::size_t r, std::size_t c) : n_rows(r), n_cols(c), row_offsets(r + 1, 0) {}

    std::size_t nnz() const { return col_indices.size(); }

    // Builds from unordered coordinates. Duplicate coordinates are a contract error;
    // callers that may hold duplicates must merge first.
    static SparseMatrix from_coo(std::size_t r, std::size_t c,
                                 std::vector<std::tuple<std::size_t, std::size_t, double>> coo) {
        for (const auto& [i, j, v] : coo) {
            require(i < r && j < c, "from_coo: coordinate out of range");
            (void)v;
        }
        std::sort(coo.begin(), coo.end(), [](const auto& a, const auto& b) {
            return std::get<0>(a) != std::get<0>(b) ? std::get<0>(a) < std::get<0>(b)
                                                    : std::get<1>(a) < std::get<1>(b);
        });
        SparseMatrix m(r, c);
        m.col_indices.reserve(coo.size());
        m.values.reserve(coo.size());
        std::size_t row = 0;
        for (std::size_t k = 0; k < coo.size(); ++k) {
            const auto& [i, j, v] = coo[k];
            if (k > 0 && std::get<0>(coo[k - 1]) == i && std::get<1>(coo[k - 1]) == j)
                throw ContractError("from_coo: duplicate coordinate");
            while (row < i) m.row_offsets[++row] = m.col_indices.size();
            m.col_indices.push_back(j);
            m.values.push_back(v);
        }
        while (row < r) m.row_offsets[++row] = m.col_indices.size();
        return m;
    }

    static SparseMatrix identity(std::size_t n) {
        SparseMatrix m(n, n);
        m.col_indices.resize(n);
        m.values.assign(n, 1.0);
        for (std::size_t i = 0; i < n; ++i) {
            m.col_indices[i] = i;
            m.row_offsets[i + 1] = i + 1;
        }
        return m;
    }

    // Same pattern, new values.
    SparseMatrix with_values(std::span<const double> vals) const {
        require(vals.size() == nnz(), "with_values: length mismatch");
        SparseMatrix m = *this;
        m.values.assign(vals.begin(), vals.end());
        return m;
    }

    // Same pattern, values multiplied entrywise by mask (mask indexed in nonzero order).
    SparseMatrix hadamard(std::span<const double> mask) const {
        require(mask.size() == nnz(), "hadamard: mask length mismatch");
        SparseMatrix m = *this;
        for (std::size_t k = 0; k < m.values.size(); ++k) m.values[k] *= mask[k];
        return m;
    }

    Tensor densify() const {
        Tensor d({n_rows, n_cols});
        for (std::size_t i = 0; i < n_rows; ++i)
            for (std::size_t k = row_offsets[i]; k < row_offsets[i + 1]; ++k)
                d.at(i, col_indices[k]) = values[k];
        return d;
    }

    // Row index of each nonzero, in nonzero order.
    std::vector<std::size_t> nonzero_rows() const {
        std::vector<std::size_t> out(nnz());
        for (std::size_t i = 0; i < n_rows; ++i)
            for (std::size_t k = row_offsets[i]; k < row_offsets[i + 1]; ++k) out[k] = i;
        return out;
    }
};

// Y = A X, deterministic per-row left-to-right accumulation.
inline Tensor spmm(const SparseMatrix& a, const Tensor& x) {
    require(x.shape.size() == 2, "spmm: dense operand must be a matrix");
    require(a.n_cols == x.rows(), "spmm: inner dimensions disagree");
    const std::size_t d = x.cols();
    Tensor y({a.n_rows, d});
    for (std::size_t i = 0; i < a.n_rows; ++i) {
        double* yi = &y.data[i * d];
        for (std::size_t k = a.row_offsets[i]; k < a.row_offsets[i + 1]; ++k) {
            const double v = a.values[k];
            const double* xj = &x.data[a.col_indices[k] * d];
            for (std::size_t c = 0; c < d; ++c) yi[c] += v * xj[c];
        }
    }
    return y;
}

// Y = A^T X without materializing the transpose: scatter in nonzero order, which is a
// fixed deterministic accumulation order for each output row.
inline Tensor spmm_t(const SparseMatrix& a, const Tensor& x) {
    require(x.shape.size() == 2, "spmm_t: dense operand must be a matrix");
    require(a.n_rows == x.rows(), "spmm_t: inner dimensions disagree");
    const std::size_t d = x.cols();
    Tensor y({a.n_cols, d});
    for (std::size_t i = 0; i < a.n_rows; ++i) {
        const double* xi = &x.data[i * d];
        for (std::size_t k = a.row_offsets[i]; k < a.row_offsets[i + 1]; ++k) {
            const double v = a.values[k];
            double* yj = &y.data[a.col_indices[k] * d];
            for (std::size_t c = 0; c < d; ++c) yj[c] += v * xi[c];
        }
    }
    return y;
}

}  // namespace radar
