#pragma once

#include <vector>

#include "radar/tape.hpp"

namespace radar::contrastive {

// Contrastive objectives over aligned view batches. Row k of each operand
// refers to the same node under two views; every similarity is cosine scaled
// by 1/tau.

// Symmetric alignment: mean_k [ LSE_j(C_kj) - C_kk ] with C = cos-sim / tau.
inline Var info_nce(Tape& t, Var a_rows, Var b_rows, double tau) {
    require(tau > 0.0, "info_nce: tau must be positive");
    Var na = t.l2_normalize_rows(a_rows);
    Var nb = t.l2_normalize_rows(b_rows);
    Var sim = t.scale(t.matmul(na, t.transpose(nb)), 1.0 / tau);
    return t.mean(t.sub(t.log_sum_exp_rows(sim), t.diag(sim)));
}

// Two-layer bridge network used by the asymmetric loss.
struct Predictor {
    Tensor w1, b1, w2, b2;

    static Predictor init(std::size_t d, Rng& rng) {
        const double s = 1.0 / std::sqrt(static_cast<double>(d));
        Predictor p;
        p.w1 = Tensor::randn(d, d, s, rng);
        p.b1 = Tensor::zeros(1, d);
        p.w2 = Tensor::randn(d, d, s, rng);
        p.b2 = Tensor::zeros(1, d);
        return p;
    }

    std::vector<Tensor*> tensors() { return {&w1, &b1, &w2, &b2}; }
};

struct PredictorVars {
    Var w1, b1, w2, b2;

    std::vector<Var> all() const { return {w1, b1, w2, b2}; }
};

inline PredictorVars load_predictor(Tape& t, Predictor& p) {
    return PredictorVars{t.input(p.w1), t.input(p.b1), t.input(p.w2), t.input(p.b2)};
}

inline PredictorVars constant_predictor(Tape& t, const Predictor& p) {
    return PredictorVars{t.constant(p.w1), t.constant(p.b1), t.constant(p.w2), t.constant(p.b2)};
}

inline Var predict(Tape& t, const PredictorVars& pv, Var x) {
    Var hidden = t.tanh_(t.add_rowvec(t.matmul(x, pv.w1), pv.b1));
    return t.add_rowvec(t.matmul(hidden, pv.w2), pv.b2);
}

// Asymmetric anchor loss. Per aligned pair (context u_k, identity v_k) the
// positive logit is a_k = <n(g(v_k)), n(u_k)> / tau; negatives are the other
// identity rows, self excluded by an additive floor on the diagonal. A batch
// of one has no negatives and costs exactly zero.
inline Var acl_loss(Tape& t, const PredictorVars& pv, Var context_rows, Var identity_rows, double tau) {
    require(tau > 0.0, "acl_loss: tau must be positive");
    const std::size_t B = t.value(context_rows).rows();
    require(t.value(identity_rows).rows() == B, "acl_loss: batch sizes must match");

    Var nu = t.l2_normalize_rows(context_rows);
    Var nv = t.l2_normalize_rows(identity_rows);
    Var ng = t.l2_normalize_rows(predict(t, pv, identity_rows));
    Var a_col = t.scale(t.rowwise_dot(ng, nu), 1.0 / tau);

    Var sim = t.scale(t.matmul(nv, t.transpose(nv)), 1.0 / tau);
    Tensor diag_floor = Tensor::zeros(B, B);
    for (std::size_t k = 0; k < B; ++k) diag_floor.at(k, k) = -1e30;
    Var masked = t.add(sim, t.constant(std::move(diag_floor)));

    Var aug = t.concat_cols(a_col, masked);
    return t.mean(t.sub(t.log_sum_exp_rows(aug), a_col));
}

// Per-side embeddings of one node set under two views plus their
// diffusion-denoised counterparts, all row-aligned.
struct SslViews {
    Var v1, v2;          // raw view embeddings
    Var v1_den, v2_den;  // denoised view embeddings
};

// Composite self-supervised objective over a user-side and an item-side view
// bundle: plain cross-view alignment, plus lambda1 * intra-view alignment of
// each view with its denoised self, plus lambda2 * inter-view alignment of the
// two denoised sets.
inline Var diff_ssl_loss(Tape& t, const SslViews& users, const SslViews& items, double lambda1,
                         double lambda2, double tau) {
    auto both = [&](Var au, Var bu, Var ai, Var bi) {
        return t.add(info_nce(t, au, bu, tau), info_nce(t, ai, bi, tau));
    };
    Var ssl = both(users.v1, users.v2, items.v1, items.v2);
    Var intra1 = both(users.v1, users.v1_den, items.v1, items.v1_den);
    Var intra2 = both(users.v2, users.v2_den, items.v2, items.v2_den);
    Var intra = t.scale(t.add(intra1, intra2), 0.5);
    Var inter = both(users.v1_den, users.v2_den, items.v1_den, items.v2_den);
    return t.add(t.add(ssl, t.scale(intra, lambda1)), t.scale(inter, lambda2));
}

// Bottleneck objective: anchor the current view representations (context) to
// slow-moving historical identities, once per view generator, with the
// denoised-view term weighted by lambda_ratio. Each term sums user and item
// sides.
inline Var ib_loss(Tape& t, const PredictorVars& pv, Var ctx_g_user, Var ctx_g_item, Var ctx_d_user,
                   Var ctx_d_item, Var id_user, Var id_item, double lambda_ratio, double tau) {
    Var g = t.add(acl_loss(t, pv, ctx_g_user, id_user, tau), acl_loss(t, pv, ctx_g_item, id_item, tau));
    Var d = t.add(acl_loss(t, pv, ctx_d_user, id_user, tau), acl_loss(t, pv, ctx_d_item, id_item, tau));
    return t.add(g, t.scale(d, lambda_ratio));
}

// Slow-moving identity representations, refreshed at epoch boundaries:
// y* <- decay y* + (1 - decay) y. The first update adopts y wholesale.
struct EmaState {
    Tensor user, item;
    bool initialized = false;

    void update(const Tensor& u, const Tensor& v, double decay) {
        require(decay >= 0.0 && decay < 1.0, "ema: decay must lie in [0, 1)");
        if (!initialized) {
            user = u;
            item = v;
            initialized = true;
            return;
        }
        check_same_shape(user, u, "ema user update");
        check_same_shape(item, v, "ema item update");
        for (std::size_t k = 0; k < user.data.size(); ++k)
            user.data[k] = decay * user.data[k] + (1.0 - decay) * u.data[k];
        for (std::size_t k = 0; k < item.data.size(); ++k)
            item.data[k] = decay * item.data[k] + (1.0 - decay) * v.data[k];
    }
};

}  // namespace radar::contrastive
