#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "radar/dataset.hpp"
#include "radar/sparse.hpp"

namespace radar::graph {

// Degree-normalized bipartite train adjacency: entry (u, i) is
// w_ui / sqrt(deg_u * deg_i) with weighted degree sums. Nodes without train
// edges simply have empty rows/columns; no entry ever divides by zero because
// every stored entry contributes to both of its endpoint degrees.
// edge_user/edge_item give the endpoints of each nonzero in nonzero order,
// which is the canonical order for every per-edge vector (masks, scores).
struct NormalizedAdjacency {
    SparseMatrix a;          // n_users x n_items, normalized values
    SparseMatrix user_mean;  // same pattern, value w / deg_u  (row-stochastic)
    SparseMatrix item_mean;  // same pattern, value w / deg_i  (column-stochastic)
    std::vector<double> user_degree;
    std::vector<double> item_degree;
    std::vector<std::uint32_t> edge_user;
    std::vector<std::uint32_t> edge_item;

    std::size_t n_users() const { return a.n_rows; }
    std::size_t n_items() const { return a.n_cols; }
    std::size_t n_edges() const { return a.nnz(); }
};

inline NormalizedAdjacency build_normalized_adjacency(const data::InteractionDataset& ds) {
    std::vector<std::tuple<std::size_t, std::size_t, double>> coo;
    for (const auto& e : ds.edges)
        if (e.split == data::Split::train) coo.emplace_back(e.user, e.item, e.weight);
    require(!coo.empty(), "dataset has no train edges");

    NormalizedAdjacency out;
    out.a = SparseMatrix::from_coo(ds.n_users(), ds.n_items(), std::move(coo));
    out.user_degree.assign(ds.n_users(), 0.0);
    out.item_degree.assign(ds.n_items(), 0.0);
    for (std::size_t u = 0; u < out.a.n_rows; ++u)
        for (std::size_t k = out.a.row_offsets[u]; k < out.a.row_offsets[u + 1]; ++k) {
            out.user_degree[u] += out.a.values[k];
            out.item_degree[out.a.col_indices[k]] += out.a.values[k];
        }

    out.user_mean = out.a;
    out.item_mean = out.a;
    out.edge_user.resize(out.a.nnz());
    out.edge_item.resize(out.a.nnz());
    for (std::size_t u = 0; u < out.a.n_rows; ++u)
        for (std::size_t k = out.a.row_offsets[u]; k < out.a.row_offsets[u + 1]; ++k) {
            const std::size_t i = out.a.col_indices[k];
            const double w = out.a.values[k];
            out.a.values[k] = w / std::sqrt(out.user_degree[u] * out.item_degree[i]);
            out.user_mean.values[k] = w / out.user_degree[u];
            out.item_mean.values[k] = w / out.item_degree[i];
            out.edge_user[k] = static_cast<std::uint32_t>(u);
            out.edge_item[k] = static_cast<std::uint32_t>(i);
        }
    return out;
}

// One layer's masked adjacency: base entrywise* mask over the original support.
// Masks cannot create edges, only keep (1), drop (0), or dampen them.
struct MaskedAdjacency {
    std::size_t layer = 0;
    SparseMatrix a;          // masked normalized adjacency
    std::size_t mask_l0 = 0; // count of strictly positive mask entries

    std::size_t support() const { return a.nnz(); }
};

inline MaskedAdjacency apply_edge_mask(const NormalizedAdjacency& adj, std::span<const double> mask,
                                       std::size_t layer = 0) {
    require(mask.size() == adj.n_edges(), "edge mask length must equal edge count");
    for (double m : mask)
        require(m >= 0.0 && m <= 1.0, "edge mask values must lie in [0, 1]");
    MaskedAdjacency out;
    out.layer = layer;
    out.a = adj.a.hadamard(mask);
    for (double m : mask)
        if (m > 0.0) ++out.mask_l0;
    return out;
}

}  // namespace radar::graph
