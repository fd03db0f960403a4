#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "radar/encoder.hpp"
#include "radar/graph.hpp"
#include "radar/tape.hpp"

namespace radar::vgae {

// Variational view generator. A two-layer graph convolution encoder (weights
// shared between the user and item sides) produces per-node Gaussians; sampled
// codes feed an edge discriminator whose probabilities soften the adjacency
// into a generated view. The std head is floored so the KL term stays finite.

constexpr double kStdFloor = 1e-6;

struct Params {
    Tensor w1, w2;    // d x d convolution weights
    Tensor w_mu;      // d x d mean head
    Tensor w_sd;      // d x d std head (pre-softplus)
    Tensor w_dis;     // d x 1 edge discriminator
    Tensor b_dis;     // 1 x 1 discriminator bias

    static Params init(std::size_t d, Rng& rng) {
        const double s = 1.0 / std::sqrt(static_cast<double>(d));
        Params p;
        p.w1 = Tensor::randn(d, d, s, rng);
        p.w2 = Tensor::randn(d, d, s, rng);
        p.w_mu = Tensor::randn(d, d, s, rng);
        p.w_sd = Tensor::randn(d, d, s, rng);
        p.w_dis = Tensor::randn(d, 1, s, rng);
        p.b_dis = Tensor::zeros(1, 1);
        return p;
    }

    std::vector<Tensor*> tensors() { return {&w1, &w2, &w_mu, &w_sd, &w_dis, &b_dis}; }
};

struct ParamVars {
    Var w1, w2, w_mu, w_sd, w_dis, b_dis;

    std::vector<Var> all() const { return {w1, w2, w_mu, w_sd, w_dis, b_dis}; }
};

inline ParamVars load_params(Tape& t, Params& p) {
    return ParamVars{t.input(p.w1), t.input(p.w2), t.input(p.w_mu), t.input(p.w_sd),
                     t.input(p.w_dis), t.input(p.b_dis)};
}

struct Encoded {
    Var mu_u, mu_v;  // per-node means
    Var sd_u, sd_v;  // per-node stds, >= kStdFloor
    Var z_u, z_v;    // sampled codes (mean when rng is null)
};

// Layer rule mirrors the recommender propagation before each linear map:
//   H_l(user) = tanh((A H_{l-1}(item) + H_{l-1}(user)) W_l)
// rng drives the reparameterized sample z = mu + sd * eps; pass nullptr for
// the deterministic mean code.
inline Encoded encode(Tape& t, const ParamVars& pv, const SparseMatrix& a, Var h0_u, Var h0_v,
                      Rng* rng) {
    auto hop = [&](Var hu, Var hv, Var w) {
        Var nu = t.matmul(t.add(t.spmm(a, hv), hu), w);
        Var nv = t.matmul(t.add(t.spmm(a, hu, true), hv), w);
        return std::pair<Var, Var>{t.tanh_(nu), t.tanh_(nv)};
    };
    auto [h1u, h1v] = hop(h0_u, h0_v, pv.w1);
    auto [h2u, h2v] = hop(h1u, h1v, pv.w2);

    Encoded e;
    e.mu_u = t.matmul(h2u, pv.w_mu);
    e.mu_v = t.matmul(h2v, pv.w_mu);
    e.sd_u = t.add_const(t.softplus(t.matmul(h2u, pv.w_sd)), kStdFloor);
    e.sd_v = t.add_const(t.softplus(t.matmul(h2v, pv.w_sd)), kStdFloor);
    if (rng != nullptr) {
        const Tensor& mu = t.value(e.mu_u);
        const Tensor& mv = t.value(e.mu_v);
        Tensor eps_u = Tensor::randn(mu.rows(), mu.cols(), 1.0, *rng);
        Tensor eps_v = Tensor::randn(mv.rows(), mv.cols(), 1.0, *rng);
        e.z_u = t.add(e.mu_u, t.mul(e.sd_u, t.constant(std::move(eps_u))));
        e.z_v = t.add(e.mu_v, t.mul(e.sd_v, t.constant(std::move(eps_v))));
    } else {
        e.z_u = e.mu_u;
        e.z_v = e.mu_v;
    }
    return e;
}

// Divergence from the standard normal prior, averaged over nodes (users and
// items pooled): mean_n -1/2 sum_d (1 + 2 log sd - mu^2 - sd^2).
inline Var kl_divergence(Tape& t, Var mu, Var sd) {
    Var inner = t.sub(t.sub(t.add_const(t.scale(t.log_(sd), 2.0), 1.0), t.square(mu)), t.square(sd));
    return t.mean(t.scale(t.row_sum(inner), -0.5));
}

inline Var kl_divergence(Tape& t, const Encoded& e) {
    Var mu = t.concat_rows(e.mu_u, e.mu_v);
    Var sd = t.concat_rows(e.sd_u, e.sd_v);
    return kl_divergence(t, mu, sd);
}

// Discriminator logit per (user, item) pair: f(z_u * z_i) with a linear map.
inline Var pair_logits(Tape& t, const ParamVars& pv, Var z_u, Var z_v,
                       std::span<const std::uint32_t> users, std::span<const std::uint32_t> items) {
    require(users.size() == items.size() && !users.empty(), "pair_logits: endpoint lists must match");
    std::vector<std::size_t> iu(users.begin(), users.end());
    std::vector<std::size_t> ii(items.begin(), items.end());
    Var prod = t.mul(t.gather_rows(z_u, iu), t.gather_rows(z_v, ii));
    return t.add_rowvec(t.matmul(prod, pv.w_dis), pv.b_dis);
}

// Binary cross-entropy with matched positive/negative pairs, averaged per
// pair: softplus(-s_pos) + softplus(s_neg). Both logits at zero give 2 ln 2.
inline Var discriminator_loss(Tape& t, Var pos_logits, Var neg_logits) {
    require(t.value(pos_logits).rows() == t.value(neg_logits).rows(),
            "discriminator_loss: pair counts must match");
    return t.add(t.mean(t.softplus(t.neg(pos_logits))), t.mean(t.softplus(neg_logits)));
}

// Per-edge retention probabilities over the canonical edge list; entries land
// in (0, 1) so the softened view is a valid mask.
inline Var edge_probabilities(Tape& t, const ParamVars& pv, const Encoded& e,
                              const graph::NormalizedAdjacency& adj) {
    return t.sigmoid(pair_logits(t, pv, e.z_u, e.z_v, adj.edge_user, adj.edge_item));
}

// Plain evaluation path for view regeneration outside a training step.
inline std::vector<double> view_probabilities(Params& p, const graph::NormalizedAdjacency& adj,
                                              const Tensor& e0_user, const Tensor& e0_item, Rng* rng) {
    Tape t;
    auto pv = load_params(t, p);
    auto enc = encode(t, pv, adj.a, t.constant(e0_user), t.constant(e0_item), rng);
    Var probs = edge_probabilities(t, pv, enc, adj);
    const Tensor& val = t.value(probs);
    return std::vector<double>(val.data.begin(), val.data.end());
}

}  // namespace radar::vgae
