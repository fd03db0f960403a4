#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "radar/graph.hpp"
#include "radar/tape.hpp"

namespace radar::denoise {

// Relation-aware edge denoiser. Each propagation hop owns one scorer: edge
// endpoints are composed with their one-hop relational context through a
// learned gate, the composed pair plus the raw endpoints feed a small MLP,
// and the resulting score drives a rectified-concrete edge mask. Temperatures
// are stored in log space so they stay positive under gradient steps.

struct LayerParams {
    Tensor w_gate;     // 2d x d
    Tensor b_gate;     // 1 x d
    Tensor w_comp;     // 2d x d composition map
    Tensor w_att1;     // 4d x d scorer hidden layer
    Tensor b_att1;     // 1 x d
    Tensor w_att2;     // d x 1 scorer output layer
    Tensor b_att2;     // 1 x 1
    Tensor log_theta;  // 1 x 1, temperature = exp(log_theta)

    static LayerParams init(std::size_t d, Rng& rng) {
        LayerParams p;
        const double s2 = 1.0 / std::sqrt(2.0 * d);
        const double s4 = 1.0 / std::sqrt(4.0 * d);
        const double s1 = 1.0 / std::sqrt(static_cast<double>(d));
        p.w_gate = Tensor::randn(2 * d, d, s2, rng);
        p.b_gate = Tensor::zeros(1, d);
        p.w_comp = Tensor::randn(2 * d, d, s2, rng);
        p.w_att1 = Tensor::randn(4 * d, d, s4, rng);
        p.b_att1 = Tensor::zeros(1, d);
        p.w_att2 = Tensor::randn(d, 1, s1, rng);
        p.b_att2 = Tensor::zeros(1, 1);
        p.log_theta = Tensor::zeros(1, 1);  // theta starts at 1
        return p;
    }

    std::vector<Tensor*> tensors() {
        return {&w_gate, &b_gate, &w_comp, &w_att1, &b_att1, &w_att2, &b_att2, &log_theta};
    }
};

struct Params {
    std::vector<LayerParams> layers;

    static Params init(std::size_t d, std::size_t L, Rng& rng) {
        Params p;
        for (std::size_t l = 0; l < L; ++l) p.layers.push_back(LayerParams::init(d, rng));
        return p;
    }

    std::vector<Tensor*> tensors() {
        std::vector<Tensor*> out;
        for (auto& l : layers)
            for (auto* t : l.tensors()) out.push_back(t);
        return out;
    }
};

struct LayerVars {
    Var w_gate, b_gate, w_comp, w_att1, b_att1, w_att2, b_att2, log_theta;

    std::vector<Var> all() const {
        return {w_gate, b_gate, w_comp, w_att1, b_att1, w_att2, b_att2, log_theta};
    }
};

inline LayerVars load_layer(Tape& t, LayerParams& p) {
    return LayerVars{t.input(p.w_gate), t.input(p.b_gate), t.input(p.w_comp), t.input(p.w_att1),
                     t.input(p.b_att1), t.input(p.w_att2), t.input(p.b_att2), t.input(p.log_theta)};
}

// One-hop relational context: each user averages its train items, each item
// averages its train users (weighted means). Isolated nodes get zero context.
inline std::pair<Var, Var> relational_context(Tape& t, const graph::NormalizedAdjacency& adj,
                                              Var e_user, Var e_item) {
    Var ctx_u = t.spmm(adj.user_mean, e_item);
    Var ctx_v = t.spmm(adj.item_mean, e_user, true);
    return {ctx_u, ctx_v};
}

namespace detail {

// Gated composition G(e, e_other, ctx_e): the gate reads both endpoints, the
// candidate mixes the endpoint with its relational context.
inline Var compose(Tape& t, const LayerVars& lv, Var e, Var e_other, Var ctx) {
    Var gate = t.sigmoid(t.add_rowvec(t.matmul(t.concat_cols(e, e_other), lv.w_gate), lv.b_gate));
    Var cand = t.tanh_(t.matmul(t.concat_cols(e, ctx), lv.w_comp));
    Var keep = t.mul(t.add_const(t.neg(gate), 1.0), e);
    return t.add(t.mul(gate, cand), keep);
}

}  // namespace detail

// Edge scores for the listed (user, item) pairs. Gathered endpoint and context
// rows flow through the gated composition both ways; the scorer sees
// [G(u,i) | G(i,u) | e_u | e_i].
inline Var edge_scores(Tape& t, const LayerVars& lv, Var e_user, Var e_item, Var ctx_user, Var ctx_item,
                       std::span<const std::uint32_t> users, std::span<const std::uint32_t> items) {
    require(users.size() == items.size() && !users.empty(), "edge_scores: endpoint lists must match");
    std::vector<std::size_t> iu(users.begin(), users.end());
    std::vector<std::size_t> ii(items.begin(), items.end());
    Var eu = t.gather_rows(e_user, iu);
    Var ei = t.gather_rows(e_item, ii);
    Var cu = t.gather_rows(ctx_user, iu);
    Var ci = t.gather_rows(ctx_item, ii);
    Var gu = detail::compose(t, lv, eu, ei, cu);
    Var gi = detail::compose(t, lv, ei, eu, ci);
    Var feat = t.concat_cols(t.concat_cols(gu, gi), t.concat_cols(eu, ei));
    Var hidden = t.tanh_(t.add_rowvec(t.matmul(feat, lv.w_att1), lv.b_att1));
    return t.add_rowvec(t.matmul(hidden, lv.w_att2), lv.b_att2);
}

// Rectified-concrete mask, training mode: hard_sigmoid((s + logit(u)) / theta)
// with fresh uniform noise per edge. Values live in [0, 1] with point masses
// at the ends.
inline Var sample_mask(Tape& t, Var scores, Var log_theta, Rng& rng) {
    const Tensor& s = t.value(scores);
    Tensor noise(s.shape);
    for (auto& v : noise.data) {
        const double u = rng.uniform();
        v = std::log(u) - std::log1p(-u);
    }
    Var theta = t.exp_(log_theta);
    return t.hard_sigmoid(t.div_scalar(t.add(scores, t.constant(std::move(noise))), theta));
}

// Deterministic mask for evaluation passes: hard_sigmoid(s / theta).
inline Var eval_mask(Tape& t, Var scores, Var log_theta) {
    return t.hard_sigmoid(t.div_scalar(scores, t.exp_(log_theta)));
}

// Expected mask value under the uniform noise, in closed form. With
// a = slope / theta, u1 = -s - theta/(2 slope), u2 = -s + theta/(2 slope):
//   E[m] = (1 - sig(u2)) + (a s + 1/2)(sig(u2) - sig(u1))
//        + a ([x sig(x) - softplus(x)] at u2 minus at u1)
// where slope = 0.2 is the hard-sigmoid slope. Differentiable in both the
// scores and the temperature.
inline Var retention_probability(Tape& t, Var scores, Var log_theta) {
    Var theta = t.exp_(log_theta);
    Var a = t.div_scalar(t.constant(Tensor::full(1, 1, 0.2)), theta);  // slope / theta
    Var halfspan = t.scale(theta, 2.5);                                // theta / (2 * slope)
    const auto& shp = t.value(scores).shape;
    Var hs = t.broadcast_scalar(halfspan, shp);
    Var u1 = t.sub(t.neg(scores), hs);
    Var u2 = t.add(t.neg(scores), hs);
    Var s1 = t.sigmoid(u1);
    Var s2 = t.sigmoid(u2);
    Var term1 = t.add_const(t.neg(s2), 1.0);
    Var term2 = t.mul(t.add_const(t.mul_scalar(scores, a), 0.5), t.sub(s2, s1));
    Var bracket = t.sub(t.sub(t.mul(u2, s2), t.softplus(u2)), t.sub(t.mul(u1, s1), t.softplus(u1)));
    Var term3 = t.mul_scalar(bracket, a);
    return t.add(t.add(term1, term2), term3);
}

// Sparsity pressure: sum over edges of (1 - retention). scale lifts a
// minibatch estimate to the full edge set.
inline Var sparsity_cost(Tape& t, Var retention, double scale = 1.0) {
    Var cost = t.sum(t.add_const(t.neg(retention), 1.0));
    return scale == 1.0 ? cost : t.scale(cost, scale);
}

}  // namespace radar::denoise
