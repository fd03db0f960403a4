#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "radar/dataset.hpp"
#include "radar/graph.hpp"
#include "testutil.hpp"

using namespace radar;
using namespace radar::data;
using namespace radar::graph;

namespace {

InteractionDataset tiny(std::size_t n_users, std::size_t n_items,
                        const std::vector<std::pair<std::uint32_t, std::uint32_t>>& train,
                        const std::vector<double>& weights = {}) {
    InteractionDataset ds;
    for (std::size_t u = 0; u < n_users; ++u) ds.user_ids.push_back("u" + std::to_string(u));
    for (std::size_t i = 0; i < n_items; ++i) ds.item_ids.push_back("i" + std::to_string(i));
    for (std::size_t k = 0; k < train.size(); ++k) {
        double w = weights.empty() ? 1.0 : weights[k];
        ds.edges.push_back(Edge{train[k].first, train[k].second, w, Split::train});
    }
    return ds;
}

// Dense oracle: D_u^{-1/2} A D_v^{-1/2} with weighted degrees.
std::vector<std::vector<double>> dense_normalized(const InteractionDataset& ds) {
    std::vector<std::vector<double>> A(ds.n_users(), std::vector<double>(ds.n_items(), 0.0));
    std::vector<double> du(ds.n_users(), 0.0), dv(ds.n_items(), 0.0);
    for (const auto& e : ds.edges) {
        if (e.split != Split::train) continue;
        A[e.user][e.item] += e.weight;
        du[e.user] += e.weight;
        dv[e.item] += e.weight;
    }
    for (std::size_t u = 0; u < ds.n_users(); ++u)
        for (std::size_t i = 0; i < ds.n_items(); ++i)
            if (A[u][i] != 0.0) A[u][i] /= std::sqrt(du[u] * dv[i]);
    return A;
}

}  // namespace

TEST_CASE("single edge normalizes to exactly one") {
    auto ds = tiny(1, 1, {{0, 0}});
    auto adj = build_normalized_adjacency(ds);
    REQUIRE(adj.a.values.size() == 1);
    REQUIRE(adj.a.values[0] == 1.0);
    REQUIRE(adj.user_degree[0] == 1.0);
    REQUIRE(adj.item_degree[0] == 1.0);
}

TEST_CASE("two-item star splits mass as inverse root two") {
    auto ds = tiny(1, 2, {{0, 0}, {0, 1}});
    auto adj = build_normalized_adjacency(ds);
    REQUIRE(adj.a.values.size() == 2);
    const double expect = 1.0 / std::sqrt(2.0);
    REQUIRE(adj.a.values[0] == Catch::Approx(expect).epsilon(1e-12));
    REQUIRE(adj.a.values[1] == Catch::Approx(expect).epsilon(1e-12));
}

TEST_CASE("normalized adjacency matches the dense oracle on random graphs") {
    Rng rng(411);
    for (int rep = 0; rep < 20; ++rep) {
        const std::size_t n = 3 + rng.uniform_int(60);
        const std::size_t m = 3 + rng.uniform_int(60);
        std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
        std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
        std::vector<double> weights;
        const std::size_t target = 1 + rng.uniform_int(n * m / 2);
        while (edges.size() < target) {
            auto u = static_cast<std::uint32_t>(rng.uniform_int(n));
            auto i = static_cast<std::uint32_t>(rng.uniform_int(m));
            if (!seen.insert({u, i}).second) continue;
            edges.push_back({u, i});
            weights.push_back(rep % 2 == 0 ? 1.0 : 0.5 + rng.uniform());
        }
        auto ds = tiny(n, m, edges, weights);
        auto adj = build_normalized_adjacency(ds);
        auto oracle = dense_normalized(ds);
        auto dense = adj.a.densify();
        double worst = 0.0;
        for (std::size_t u = 0; u < n; ++u)
            for (std::size_t i = 0; i < m; ++i)
                worst = std::max(worst, std::abs(dense.at(u, i) - oracle[u][i]));
        REQUIRE(worst < 1e-12);
    }
}

TEST_CASE("validation and test edges never reach the adjacency") {
    auto ds = tiny(2, 2, {{0, 0}});
    ds.edges.push_back(Edge{1, 1, 1.0, Split::valid});
    ds.edges.push_back(Edge{0, 1, 1.0, Split::test});
    auto adj = build_normalized_adjacency(ds);
    REQUIRE(adj.n_edges() == 1);
    REQUIRE(adj.edge_user[0] == 0);
    REQUIRE(adj.edge_item[0] == 0);
}

TEST_CASE("isolated nodes keep zero rows and finite values") {
    auto ds = tiny(3, 3, {{0, 0}});
    auto adj = build_normalized_adjacency(ds);
    auto dense = adj.a.densify();
    check_finite(dense, "adjacency");
    for (std::size_t i = 0; i < 3; ++i) {
        if (i == 0) continue;
        for (std::size_t j = 0; j < 3; ++j) REQUIRE(dense.at(i, j) == 0.0);
    }
    REQUIRE(adj.user_degree[1] == 0.0);
    REQUIRE(adj.item_degree[2] == 0.0);
}

TEST_CASE("neighbor-mean matrices are row-stochastic over support") {
    Rng rng(77);
    std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
    std::vector<double> weights;
    while (edges.size() < 40) {
        auto u = static_cast<std::uint32_t>(rng.uniform_int(8));
        auto i = static_cast<std::uint32_t>(rng.uniform_int(9));
        if (!seen.insert({u, i}).second) continue;
        edges.push_back({u, i});
        weights.push_back(0.5 + rng.uniform());
    }
    auto ds = tiny(8, 9, edges, weights);
    auto adj = build_normalized_adjacency(ds);
    auto um = adj.user_mean.densify();
    auto im = adj.item_mean.densify();
    std::vector<double> urow(8, 0.0), icol(9, 0.0);
    for (std::size_t u = 0; u < 8; ++u)
        for (std::size_t i = 0; i < 9; ++i) {
            urow[u] += um.at(u, i);
            icol[i] += im.at(u, i);
        }
    for (std::size_t u = 0; u < 8; ++u)
        if (adj.user_degree[u] > 0) REQUIRE(urow[u] == Catch::Approx(1.0).epsilon(1e-12));
    for (std::size_t i = 0; i < 9; ++i)
        if (adj.item_degree[i] > 0) REQUIRE(icol[i] == Catch::Approx(1.0).epsilon(1e-12));
    // all three matrices share the sparsity pattern
    REQUIRE(adj.user_mean.col_indices == adj.a.col_indices);
    REQUIRE(adj.item_mean.row_offsets == adj.a.row_offsets);
}

TEST_CASE("edge endpoint arrays follow nonzero order") {
    auto ds = tiny(3, 3, {{2, 0}, {0, 1}, {1, 2}, {0, 0}});
    auto adj = build_normalized_adjacency(ds);
    // row-major nonzero order: (0,0) (0,1) (1,2) (2,0)
    REQUIRE(adj.edge_user == std::vector<std::uint32_t>{0, 0, 1, 2});
    REQUIRE(adj.edge_item == std::vector<std::uint32_t>{0, 1, 2, 0});
}

TEST_CASE("all-ones mask reproduces the base matrix") {
    auto ds = tiny(4, 4, {{0, 0}, {0, 1}, {1, 1}, {2, 3}, {3, 2}});
    auto adj = build_normalized_adjacency(ds);
    std::vector<double> ones(adj.n_edges(), 1.0);
    auto masked = apply_edge_mask(adj, ones, 1);
    REQUIRE(masked.layer == 1);
    REQUIRE(masked.a.values == adj.a.values);
    REQUIRE(masked.support() == adj.n_edges());
    REQUIRE(masked.mask_l0 == adj.n_edges());
}

TEST_CASE("all-zeros mask empties values but keeps the pattern") {
    auto ds = tiny(4, 4, {{0, 0}, {1, 1}, {2, 3}});
    auto adj = build_normalized_adjacency(ds);
    std::vector<double> zeros(adj.n_edges(), 0.0);
    auto masked = apply_edge_mask(adj, zeros, 0);
    REQUIRE(masked.mask_l0 == 0);
    REQUIRE(masked.a.col_indices == adj.a.col_indices);
    for (double v : masked.a.values) REQUIRE(v == 0.0);
}

TEST_CASE("fractional masks scale entries and count support") {
    auto ds = tiny(2, 2, {{0, 0}, {0, 1}, {1, 0}});
    auto adj = build_normalized_adjacency(ds);
    std::vector<double> mask = {0.5, 0.0, 1.0};
    auto masked = apply_edge_mask(adj, mask, 2);
    REQUIRE(masked.mask_l0 == 2);
    for (std::size_t k = 0; k < 3; ++k)
        REQUIRE(masked.a.values[k] == Catch::Approx(adj.a.values[k] * mask[k]).margin(1e-15));
}

TEST_CASE("masks outside the unit interval are rejected") {
    auto ds = tiny(2, 2, {{0, 0}, {1, 1}});
    auto adj = build_normalized_adjacency(ds);
    std::vector<double> bad = {1.2, 0.5};
    REQUIRE_THROWS_AS(apply_edge_mask(adj, bad, 0), ContractError);
    std::vector<double> neg = {-0.1, 0.5};
    REQUIRE_THROWS_AS(apply_edge_mask(adj, neg, 0), ContractError);
    std::vector<double> short_mask = {1.0};
    REQUIRE_THROWS_AS(apply_edge_mask(adj, short_mask, 0), ContractError);
}

TEST_CASE("adjacency construction requires train edges") {
    auto ds = tiny(2, 2, {});
    ds.edges.push_back(Edge{0, 0, 1.0, Split::test});
    REQUIRE_THROWS_AS(build_normalized_adjacency(ds), ContractError);
}
