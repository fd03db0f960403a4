#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "radar/config.hpp"
#include "radar/contrastive.hpp"
#include "radar/dataset.hpp"
#include "radar/denoise.hpp"
#include "radar/diffusion.hpp"
#include "radar/encoder.hpp"
#include "radar/eval.hpp"
#include "radar/graph.hpp"
#include "radar/vgae.hpp"

namespace radar::train {

constexpr std::size_t kEvalK = 20;

enum class Variant { full, gen_gen, gen_linear, no_dacl, acl_only };

inline const char* to_string(Variant v) {
    switch (v) {
        case Variant::full: return "full";
        case Variant::gen_gen: return "gen+gen";
        case Variant::gen_linear: return "gen+linear";
        case Variant::no_dacl: return "no-dacl";
        case Variant::acl_only: return "acl-only";
    }
    return "full";
}

inline bool variant_from_string(const std::string& s, Variant& out) {
    if (s == "full") { out = Variant::full; return true; }
    if (s == "gen+gen") { out = Variant::gen_gen; return true; }
    if (s == "gen+linear") { out = Variant::gen_linear; return true; }
    if (s == "no-dacl") { out = Variant::no_dacl; return true; }
    if (s == "acl-only") { out = Variant::acl_only; return true; }
    return false;
}

inline std::vector<Variant> all_variants() {
    return {Variant::full, Variant::gen_gen, Variant::gen_linear, Variant::no_dacl, Variant::acl_only};
}

// ---------------------------------------------------------------------------
// Optimizer

// Adam with bias correction over one parameter group. Moments live here,
// parameters are borrowed; a missing gradient is a zero gradient.
struct AdamGroup {
    std::vector<Tensor*> params;
    std::vector<Tensor> m1, m2;
    std::size_t steps = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static AdamGroup attach(std::vector<Tensor*> ps) {
        AdamGroup g;
        g.params = std::move(ps);
        for (Tensor* p : g.params) {
            g.m1.emplace_back(p->shape);
            g.m2.emplace_back(p->shape);
        }
        return g;
    }

    void step(const std::vector<const Tensor*>& grads, double lr) {
        require(grads.size() == params.size(), "optimizer: gradient count mismatch");
        ++steps;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(steps));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(steps));
        for (std::size_t k = 0; k < params.size(); ++k) {
            Tensor& p = *params[k];
            const Tensor* g = grads[k];
            if (g != nullptr)
                require(g->shape == p.shape, "optimizer: gradient shape mismatch in group slot " +
                                                 std::to_string(k));
            for (std::size_t i = 0; i < p.data.size(); ++i) {
                const double gi = g ? g->data[i] : 0.0;
                if (!std::isfinite(gi))
                    throw NumericError("optimizer: non-finite gradient in group slot " +
                                       std::to_string(k));
                m1[k].data[i] = beta1 * m1[k].data[i] + (1.0 - beta1) * gi;
                m2[k].data[i] = beta2 * m2[k].data[i] + (1.0 - beta2) * gi * gi;
                p.data[i] -= lr * (m1[k].data[i] / c1) / (std::sqrt(m2[k].data[i] / c2) + eps);
            }
        }
    }

    void step(const GradMap& grads, std::span<const Var> vars, double lr) {
        require(vars.size() == params.size(), "optimizer: var count mismatch");
        std::vector<const Tensor*> gs;
        gs.reserve(vars.size());
        for (Var v : vars) gs.push_back(grads.get(v));
        step(gs, lr);
    }
};

// ---------------------------------------------------------------------------
// Model state

struct Model {
    TrainConfig cfg;
    std::size_t n_users = 0, n_items = 0;
    Tensor e_user, e_item;
    vgae::Params vgae_p;
    denoise::Params den_p;
    diffusion::Params diff_p;
    diffusion::Schedule schedule;
    contrastive::Predictor pred;
    contrastive::EmaState ema;

    static Model init(const TrainConfig& cfg, std::size_t n_users, std::size_t n_items, Rng& rng) {
        require(n_users >= 1 && n_items >= 1, "model: need at least one user and one item");
        Model m;
        m.cfg = cfg;
        m.n_users = n_users;
        m.n_items = n_items;
        const std::size_t d = cfg.embed_dim;
        const double sigma = 0.1 / std::sqrt(static_cast<double>(d));
        m.e_user = Tensor::randn(n_users, d, sigma, rng);
        m.e_item = Tensor::randn(n_items, d, sigma, rng);
        m.vgae_p = vgae::Params::init(d, rng);
        m.den_p = denoise::Params::init(d, cfg.layers, rng);
        m.diff_p = diffusion::Params::init(d, d, rng);
        m.schedule =
            diffusion::Schedule::make(cfg.diffusion_steps, cfg.noise_shrink, cfg.alpha_low, cfg.alpha_up);
        m.pred = contrastive::Predictor::init(d, rng);
        return m;
    }
};

// ---------------------------------------------------------------------------
// Views

// The two augmentation views, frozen between regenerations. View one keeps
// every edge at its reconstruction probability (one matrix, shared by all
// hops); view two carries one masked adjacency per hop.
struct ViewSet {
    std::vector<double> g_probs;
    std::vector<std::vector<double>> d_masks;
    std::vector<SparseMatrix> g_layers;  // size 1
    std::vector<SparseMatrix> d_layers;  // size 1 (paired generators) or L
};

namespace detail {

inline std::vector<std::size_t> to_index(std::span<const std::uint32_t> v) {
    return std::vector<std::size_t>(v.begin(), v.end());
}

inline Tensor take_rows(const Tensor& t, std::span<const std::size_t> idx) {
    Tensor out({idx.size(), t.cols()});
    for (std::size_t r = 0; r < idx.size(); ++r) {
        require(idx[r] < t.rows(), "take_rows: index out of range");
        for (std::size_t c = 0; c < t.cols(); ++c) out.at(r, c) = t.at(idx[r], c);
    }
    return out;
}

inline Tensor stack_rows(const std::vector<const Tensor*>& parts) {
    std::size_t rows = 0;
    const std::size_t cols = parts.front()->cols();
    for (const Tensor* p : parts) rows += p->rows();
    Tensor out({rows, cols});
    std::size_t r0 = 0;
    for (const Tensor* p : parts) {
        std::copy(p->data.begin(), p->data.end(), out.data.begin() + r0 * cols);
        r0 += p->rows();
    }
    return out;
}

inline Var sum_squares(Tape& t, std::span<const Var> vars) {
    std::optional<Var> acc;
    for (Var v : vars) {
        Var s = t.sum(t.square(v));
        acc = acc ? t.add(*acc, s) : s;
    }
    return *acc;
}

struct TripleBatch {
    std::vector<encoder::Triple> triples;
    std::vector<std::size_t> users, pos, neg;
    std::vector<std::uint32_t> users32, pos32, neg32;
};

inline TripleBatch draw_triples(const encoder::TripleSampler& sampler, std::size_t batch, Rng& rng) {
    TripleBatch b;
    b.triples = sampler.sample(batch, rng);
    for (const encoder::Triple& t : b.triples) {
        b.users.push_back(t.user);
        b.pos.push_back(t.pos);
        b.neg.push_back(t.neg);
        b.users32.push_back(t.user);
        b.pos32.push_back(t.pos);
        b.neg32.push_back(t.neg);
    }
    return b;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Trainer

struct EpochMetrics {
    std::size_t epoch = 0;  // 1-based
    double phase1_loss = 0.0, phase2_loss = 0.0, phase3_loss = 0.0;
    double val_recall = 0.0, val_ndcg = 0.0;
    std::size_t val_users = 0;
    bool best = false;

    std::string to_json_line() const {
        nlohmann::ordered_json j;
        j["epoch"] = epoch;
        j["phase1_loss"] = phase1_loss;
        j["phase2_loss"] = phase2_loss;
        j["phase3_loss"] = phase3_loss;
        j["val_recall20"] = val_recall;
        j["val_ndcg20"] = val_ndcg;
        j["val_users"] = val_users;
        j["best"] = best;
        return j.dump();
    }
};

struct TrainResult {
    Model model;
    Tensor best_user, best_item;
    std::size_t best_epoch = 0;  // 0 means "initial state was never beaten"
    eval::MetricSummary best_valid;
    std::vector<EpochMetrics> history;
    std::vector<std::string> metrics_lines;
};

class Trainer {
public:
    Trainer(const data::InteractionDataset& ds, const TrainConfig& cfg, Variant variant)
        : ds_(&ds),
          cfg_(cfg),
          variant_(variant),
          adj_(graph::build_normalized_adjacency(ds)),
          sampler_(encoder::TripleSampler::from(adj_)),
          rng_(Rng(cfg.seed).derive(0x7261646172ull)) {
        require(validate(cfg).empty(), "trainer: config failed validation");
        Rng init_rng = Rng(cfg.seed).derive(0x696e6974ull);
        model = Model::init(cfg, ds.n_users(), ds.n_items(), init_rng);
        opt_backbone_ = AdamGroup::attach({&model.e_user, &model.e_item});
        opt_predictor_ = AdamGroup::attach(model.pred.tensors());
        opt_vgae_ = AdamGroup::attach(model.vgae_p.tensors());
        std::vector<Tensor*> den_params;
        if (variant == Variant::gen_linear) {
            // dot-product scorer: the temperature is the only trainable piece
            for (auto& l : model.den_p.layers) den_params.push_back(&l.log_theta);
        } else {
            den_params = model.den_p.tensors();
        }
        opt_denoiser_ = AdamGroup::attach(den_params);
        opt_diffusion_ = AdamGroup::attach(model.diff_p.tensors());
        steps_per_epoch_ = std::max<std::size_t>(1, (ds.count(data::Split::train) + cfg.batch_size - 1) /
                                                        cfg.batch_size);
        regenerate_views(&rng_);
        refresh_ema();
    }

    Model model;

    const graph::NormalizedAdjacency& adjacency() const { return adj_; }
    const ViewSet& views() const { return views_; }
    std::size_t steps_per_epoch() const { return steps_per_epoch_; }

    // Deterministic state snapshot used by the freeze-contract tests.
    static std::uint64_t signature(const std::vector<Tensor*>& ts) {
        std::uint64_t h = 1469598103934665603ull;
        auto mix = [&h](std::uint64_t v) {
            h ^= v;
            h *= 1099511628211ull;
        };
        for (const Tensor* t : ts)
            for (double d : t->data) {
                std::uint64_t bits;
                std::memcpy(&bits, &d, 8);
                mix(bits);
            }
        return h;
    }

    // Fresh soft views from the current generator parameters. Passing an rng
    // samples latent codes and edge masks; nullptr takes the deterministic
    // (mean / expected-mask) path.
    void regenerate_views(Rng* rng) {
        views_.g_probs = vgae::view_probabilities(model.vgae_p, adj_, model.e_user, model.e_item, rng);
        views_.g_layers.clear();
        views_.g_layers.push_back(graph::apply_edge_mask(adj_, views_.g_probs).a);
        if (variant_ == Variant::gen_gen) {
            // paired-generator ablation: the second view is an independent
            // sample from the same reconstruction generator
            views_.d_masks.clear();
            views_.d_masks.push_back(
                vgae::view_probabilities(model.vgae_p, adj_, model.e_user, model.e_item, rng));
        } else {
            views_.d_masks = denoiser_masks(rng);
        }
        views_.d_layers.clear();
        for (std::size_t l = 0; l < views_.d_masks.size(); ++l)
            views_.d_layers.push_back(graph::apply_edge_mask(adj_, views_.d_masks[l], l).a);
    }

    // Hop-by-hop mask generation: each hop's edge scores come from the
    // embeddings already filtered by the previous hops' masks. Edge scoring is
    // chunked so the tape never materializes all per-edge features at once.
    std::vector<std::vector<double>> denoiser_masks(Rng* rng) {
        constexpr std::size_t kChunk = 16384;
        const std::size_t n_edges = adj_.n_edges();
        Tensor e_u = model.e_user, e_v = model.e_item;
        std::vector<std::vector<double>> masks;
        for (std::size_t l = 0; l < cfg_.layers; ++l) {
            Tensor ctx_u = spmm(adj_.user_mean, e_v);
            Tensor ctx_v = spmm_t(adj_.item_mean, e_u);
            std::vector<double> mask(n_edges);
            for (std::size_t e0 = 0; e0 < n_edges; e0 += kChunk) {
                const std::size_t e1 = std::min(n_edges, e0 + kChunk);
                std::vector<std::uint32_t> cu(adj_.edge_user.begin() + e0, adj_.edge_user.begin() + e1);
                std::vector<std::uint32_t> ci(adj_.edge_item.begin() + e0, adj_.edge_item.begin() + e1);
                Tape t;
                auto lv = denoise::load_layer(t, model.den_p.layers[l]);
                Var s = chunk_scores(t, lv, t.constant(e_u), t.constant(e_v), t.constant(ctx_u),
                                     t.constant(ctx_v), cu, ci);
                Var m = rng ? denoise::sample_mask(t, s, lv.log_theta, *rng)
                            : denoise::eval_mask(t, s, lv.log_theta);
                const Tensor& mv = t.value(m);
                std::copy(mv.data.begin(), mv.data.end(), mask.begin() + e0);
            }
            graph::MaskedAdjacency ma = graph::apply_edge_mask(adj_, mask, l);
            Tensor un = spmm(ma.a, e_v);
            Tensor vn = spmm_t(ma.a, e_u);
            for (std::size_t k = 0; k < un.data.size(); ++k) un.data[k] += e_u.data[k];
            for (std::size_t k = 0; k < vn.data.size(); ++k) vn.data[k] += e_v.data[k];
            e_u = std::move(un);
            e_v = std::move(vn);
            masks.push_back(std::move(mask));
        }
        return masks;
    }

    // y* <- EMA of the propagated backbone representations.
    void refresh_ema() {
        auto base = encoder::propagate_plain(base_span(), model.e_user, model.e_item, cfg_.layers);
        model.ema.update(base.user_final, base.item_final, cfg_.ema_decay);
    }

    eval::MetricSummary validate_split(data::Split split) const {
        auto base = encoder::propagate_plain(base_span(), model.e_user, model.e_item, cfg_.layers);
        Tensor scores = encoder::score_matrix(base.user_final, base.item_final);
        auto rows = eval::rank_users(scores, *ds_, split, kEvalK);
        return eval::summarize(rows);
    }

    // Ranking objective plus the weighted composite view objective; the
    // denoising network trains alongside on its own reconstruction target.
    double run_phase1(std::size_t outer_epoch, Rng& rng) {
        double total = 0.0;
        std::size_t n_steps = 0;
        const bool ddr_on = cfg_.ddr_weight > 0.0 && outer_epoch >= cfg_.warmup_epochs;
        for (std::size_t ep = 0; ep < cfg_.phase1_epochs; ++ep) {
            for (std::size_t s = 0; s < steps_per_epoch_; ++s, ++n_steps) {
                Tape t;
                Var veu = t.input(model.e_user);
                Var vei = t.input(model.e_item);
                auto batch = detail::draw_triples(sampler_, cfg_.batch_size, rng);
                auto base = encoder::propagate(t, base_span(), veu, vei, cfg_.layers);
                Var loss = encoder::bpr_loss(t, base.user_final, base.item_final, batch.triples);

                std::vector<Var> recon_vars;
                if (cfg_.lambda3 > 0.0) {
                    auto nv = diffusion::constant_params(t, model.diff_p);
                    auto pg = encoder::propagate(t, std::span<const SparseMatrix>(views_.g_layers), veu, vei,
                                        cfg_.layers);
                    auto pd = encoder::propagate(t, std::span<const SparseMatrix>(views_.d_layers), veu, vei,
                                        cfg_.layers);
                    Var gu = t.gather_rows(pg.user_final, batch.users);
                    Var gi = t.gather_rows(pg.item_final, batch.pos);
                    Var hu = t.gather_rows(pd.user_final, batch.users);
                    Var hi = t.gather_rows(pd.item_final, batch.pos);
                    const bool on_users = cfg_.denoise_target != DenoiseTarget::items;
                    const bool on_items = cfg_.denoise_target != DenoiseTarget::users;
                    auto denoised = [&](Var x, bool on) {
                        return on ? diffusion::denoise(t, model.schedule, nv, x, cfg_.denoise_steps, &rng)
                                  : x;
                    };
                    Var gu_d = denoised(gu, on_users);
                    Var hu_d = denoised(hu, on_users);
                    Var gi_d = denoised(gi, on_items);
                    Var hi_d = denoised(hi, on_items);
                    contrastive::SslViews users{gu, hu, gu_d, hu_d};
                    contrastive::SslViews items{gi, hi, gi_d, hi_d};
                    Var ssl = contrastive::diff_ssl_loss(t, users, items, cfg_.lambda1, cfg_.lambda2,
                                                         cfg_.tau);
                    loss = t.add(loss, t.scale(ssl, cfg_.lambda3));
                    for (Var v : {gu, gi, hu, hi}) recon_vars.push_back(v);
                }
                if (cfg_.lambda4 > 0.0) {
                    std::vector<Var> emb{veu, vei};
                    loss = t.add(loss, t.scale(detail::sum_squares(t, emb), cfg_.lambda4));
                }
                if (ddr_on) {
                    auto nv = diffusion::constant_params(t, model.diff_p);
                    Var items = t.gather_rows(base.item_final, batch.pos);
                    Var ddr = diffusion::reconstruction_loss(t, model.schedule, nv, items, rng);
                    loss = t.add(loss, t.scale(ddr, cfg_.ddr_weight));
                    recon_vars.push_back(items);
                }
                total += checked_loss(t, loss, "phase1", outer_epoch, n_steps);
                auto grads = t.backward(loss);
                std::vector<Var> emb_vars{veu, vei};
                opt_backbone_.step(grads, emb_vars, cfg_.learning_rate);

                if (!recon_vars.empty()) {
                    // the tape adds no nodes past this point, so value refs are stable
                    std::vector<const Tensor*> recon_rows;
                    for (Var v : recon_vars) recon_rows.push_back(&t.value(v));
                    Tensor x0 = detail::stack_rows(recon_rows);
                    Tape t2;
                    auto nv2 = diffusion::load_params(t2, model.diff_p);
                    Var l2 = diffusion::reconstruction_loss(t2, model.schedule, nv2, t2.constant(x0), rng);
                    checked_loss(t2, l2, "phase1-recon", outer_epoch, n_steps);
                    auto g2 = t2.backward(l2);
                    opt_diffusion_.step(g2, nv2.all(), cfg_.learning_rate);
                }
            }
        }
        return n_steps ? total / static_cast<double>(n_steps) : 0.0;
    }

    // Bottleneck phase: current view representations against the slow EMA
    // identities; embeddings and the bridge network update, generators do not.
    double run_phase2(Rng& rng) {
        if (variant_ == Variant::no_dacl) return 0.0;
        double total = 0.0;
        std::size_t n_steps = 0;
        for (std::size_t ep = 0; ep < cfg_.phase2_epochs; ++ep) {
            for (std::size_t s = 0; s < steps_per_epoch_; ++s, ++n_steps) {
                Tape t;
                Var veu = t.input(model.e_user);
                Var vei = t.input(model.e_item);
                auto ppv = contrastive::load_predictor(t, model.pred);
                auto batch = detail::draw_triples(sampler_, cfg_.batch_size, rng);
                Var id_u = t.constant(detail::take_rows(model.ema.user, batch.users));
                Var id_i = t.constant(detail::take_rows(model.ema.item, batch.pos));

                Var loss;
                if (variant_ == Variant::acl_only) {
                    auto base = encoder::propagate(t, base_span(), veu, vei, cfg_.layers);
                    Var cu = t.gather_rows(base.user_final, batch.users);
                    Var ci = t.gather_rows(base.item_final, batch.pos);
                    loss = t.add(contrastive::acl_loss(t, ppv, cu, id_u, cfg_.tau),
                                 contrastive::acl_loss(t, ppv, ci, id_i, cfg_.tau));
                } else {
                    auto pg = encoder::propagate(t, std::span<const SparseMatrix>(views_.g_layers), veu, vei,
                                        cfg_.layers);
                    auto pd = encoder::propagate(t, std::span<const SparseMatrix>(views_.d_layers), veu, vei,
                                        cfg_.layers);
                    Var gu = t.gather_rows(pg.user_final, batch.users);
                    Var gi = t.gather_rows(pg.item_final, batch.pos);
                    Var hu = t.gather_rows(pd.user_final, batch.users);
                    Var hi = t.gather_rows(pd.item_final, batch.pos);
                    loss = contrastive::ib_loss(t, ppv, gu, gi, hu, hi, id_u, id_i, cfg_.lambda_ratio,
                                                cfg_.tau);
                }
                total += checked_loss(t, loss, "phase2", 0, n_steps);
                auto grads = t.backward(loss);
                std::vector<Var> emb_vars{veu, vei};
                opt_backbone_.step(grads, emb_vars, cfg_.learning_rate);
                opt_predictor_.step(grads, ppv.all(), cfg_.learning_rate);
            }
        }
        return n_steps ? total / static_cast<double>(n_steps) : 0.0;
    }

    // Generator phase: the backbone is frozen; the reconstruction generator
    // trains on its full objective, the denoiser on masked-recommendation plus
    // sparsity pressure, with a minibatch of edges differentiable per step.
    double run_phase3(Rng& rng) {
        double total = 0.0;
        std::size_t n_steps = 0;
        for (std::size_t ep = 0; ep < cfg_.phase3_epochs; ++ep) {
            for (std::size_t s = 0; s < steps_per_epoch_; ++s, ++n_steps) {
                Tape t;
                Var ceu = t.constant(model.e_user);
                Var cei = t.constant(model.e_item);
                auto batch = detail::draw_triples(sampler_, cfg_.batch_size, rng);

                auto pv = vgae::load_params(t, model.vgae_p);
                auto enc = vgae::encode(t, pv, adj_.a, ceu, cei, &rng);
                Var l_kl = vgae::kl_divergence(t, enc);
                Var pos_lg = vgae::pair_logits(t, pv, enc.z_u, enc.z_v, batch.users32, batch.pos32);
                Var neg_lg = vgae::pair_logits(t, pv, enc.z_u, enc.z_v, batch.users32, batch.neg32);
                Var l_dis = vgae::discriminator_loss(t, pos_lg, neg_lg);
                Var probs = vgae::edge_probabilities(t, pv, enc, adj_);
                std::vector<Var> prob_masks{probs};
                auto pgen = encoder::propagate_masked(t, adj_.a, prob_masks, ceu, cei, cfg_.layers);
                Var l_bpr_g = encoder::bpr_loss(t, pgen.user_final, pgen.item_final, batch.triples);
                auto gvars = pv.all();
                Var loss = t.add(t.add(l_kl, l_dis),
                                 t.add(l_bpr_g, t.scale(detail::sum_squares(t, gvars), cfg_.lambda2_reg)));

                std::vector<Var> den_vars;
                SparseMatrix sel;  // batch scatter matrix; must outlive backward()
                if (variant_ != Variant::gen_gen) {
                    Var l_den = denoiser_objective(t, ceu, cei, batch, rng, den_vars, sel);
                    loss = t.add(loss, l_den);
                }

                total += checked_loss(t, loss, "phase3", 0, n_steps);
                auto grads = t.backward(loss);
                opt_vgae_.step(grads, gvars, cfg_.learning_rate);
                if (variant_ != Variant::gen_gen)
                    opt_denoiser_.step(grads, den_vars, cfg_.learning_rate);
            }
        }
        return n_steps ? total / static_cast<double>(n_steps) : 0.0;
    }

    // One full pass: the three phases per outer epoch, then view refresh, EMA
    // refresh, validation, and best-checkpoint tracking.
    TrainResult train(const std::string& out_dir = "") {
        TrainResult res;
        res.best_user = model.e_user;
        res.best_item = model.e_item;
        res.best_valid.recall = -1.0;
        auto repeat = [](std::size_t n, auto&& fn) {
            double sum = 0.0;
            for (std::size_t k = 0; k < n; ++k) sum += fn();
            return n > 0 ? sum / static_cast<double>(n) : 0.0;
        };
        for (std::size_t epoch = 1; epoch <= cfg_.outer_epochs; ++epoch) {
            EpochMetrics em;
            em.epoch = epoch;
            em.phase1_loss = repeat(cfg_.phase1_epochs, [&] { return run_phase1(epoch - 1, rng_); });
            em.phase2_loss = repeat(cfg_.phase2_epochs, [&] { return run_phase2(rng_); });
            em.phase3_loss = repeat(cfg_.phase3_epochs, [&] { return run_phase3(rng_); });
            regenerate_views(&rng_);
            refresh_ema();
            auto val = validate_split(data::Split::valid);
            em.val_recall = val.recall;
            em.val_ndcg = val.ndcg;
            em.val_users = val.users;
            if (val.recall > res.best_valid.recall) {
                res.best_valid = val;
                res.best_epoch = epoch;
                res.best_user = model.e_user;
                res.best_item = model.e_item;
                em.best = true;
                if (!out_dir.empty())
                    encoder::save_checkpoint(out_dir + "/epoch_" + std::to_string(epoch) + ".ckpt", model.e_user,
                                    model.e_item, cfg_.layers);
            }
            res.metrics_lines.push_back(em.to_json_line());
            res.history.push_back(em);
        }
        res.model = model;
        return res;
    }

private:
    std::span<const SparseMatrix> base_span() const { return {&adj_.a, 1}; }

    double checked_loss(Tape& t, Var loss, const char* phase, std::size_t epoch, std::size_t step) {
        const double v = t.value(loss).data[0];
        if (!std::isfinite(v))
            throw NumericError(std::string("training aborted: non-finite loss in ") + phase +
                               " (outer epoch " + std::to_string(epoch) + ", step " +
                               std::to_string(step) + ", loss " + std::to_string(v) +
                               "); snapshot: |e_user|^2 first cell " +
                               std::to_string(model.e_user.data.empty() ? 0.0 : model.e_user.data[0]));
        return v;
    }

    Var chunk_scores(Tape& t, const denoise::LayerVars& lv, Var e_u, Var e_v, Var ctx_u, Var ctx_v,
                     std::span<const std::uint32_t> users, std::span<const std::uint32_t> items) {
        if (variant_ == Variant::gen_linear) {
            // single dot-product score per edge
            Var eu = t.gather_rows(e_u, detail::to_index(users));
            Var ei = t.gather_rows(e_v, detail::to_index(items));
            return t.rowwise_dot(eu, ei);
        }
        return denoise::edge_scores(t, lv, e_u, e_v, ctx_u, ctx_v, users, items);
    }

    // Denoiser training objective on one minibatch of edges. The cached view
    // masks stay in place for every other edge so propagation sees the whole
    // graph; only the batch entries are regenerated differentiably.
    Var denoiser_objective(Tape& t, Var ceu, Var cei, const detail::TripleBatch& batch, Rng& rng,
                           std::vector<Var>& den_vars, SparseMatrix& sel) {
        const std::size_t n_edges = adj_.n_edges();
        std::vector<std::size_t> edge_idx;
        edge_idx.reserve(cfg_.batch_size);
        for (std::size_t k = 0; k < cfg_.batch_size; ++k) edge_idx.push_back(rng.uniform_int(n_edges));
        std::sort(edge_idx.begin(), edge_idx.end());
        edge_idx.erase(std::unique(edge_idx.begin(), edge_idx.end()), edge_idx.end());
        const std::size_t K = edge_idx.size();

        std::vector<std::tuple<std::size_t, std::size_t, double>> coo;
        coo.reserve(K);
        for (std::size_t k = 0; k < K; ++k) coo.emplace_back(edge_idx[k], k, 1.0);
        sel = SparseMatrix::from_coo(n_edges, K, std::move(coo));

        std::vector<std::uint32_t> bu(K), bi(K);
        for (std::size_t k = 0; k < K; ++k) {
            bu[k] = adj_.edge_user[edge_idx[k]];
            bi[k] = adj_.edge_item[edge_idx[k]];
        }

        Var e_u = ceu, e_v = cei;
        Var su = ceu, sv = cei;
        std::optional<Var> l_c;
        for (std::size_t l = 0; l < cfg_.layers; ++l) {
            auto lv = denoise::load_layer(t, model.den_p.layers[l]);
            auto [ctx_u, ctx_v] = denoise::relational_context(t, adj_, e_u, e_v);
            Var s_batch = chunk_scores(t, lv, e_u, e_v, ctx_u, ctx_v, bu, bi);
            Var m_batch = denoise::sample_mask(t, s_batch, lv.log_theta, rng);
            Var retention = denoise::retention_probability(t, s_batch, lv.log_theta);
            Var cost = denoise::sparsity_cost(t, retention, 1.0 / static_cast<double>(K));
            l_c = l_c ? t.add(*l_c, cost) : cost;
            if (variant_ == Variant::gen_linear) {
                den_vars.push_back(lv.log_theta);
            } else {
                auto lvars = lv.all();
                den_vars.insert(den_vars.end(), lvars.begin(), lvars.end());
            }

            Tensor hole({n_edges, 1});
            const auto& cached = views_.d_masks.size() == cfg_.layers ? views_.d_masks[l]
                                                                      : views_.d_masks.front();
            for (std::size_t e = 0; e < n_edges; ++e) hole.data[e] = cached[e];
            for (std::size_t e : edge_idx) hole.data[e] = 0.0;
            Var full_mask = t.add(t.constant(std::move(hole)), t.spmm(sel, m_batch));

            Var un = t.add(t.spmm_masked(adj_.a, full_mask, e_v), e_u);
            Var vn = t.add(t.spmm_masked(adj_.a, full_mask, e_u, true), e_v);
            e_u = un;
            e_v = vn;
            su = t.add(su, e_u);
            sv = t.add(sv, e_v);
        }
        Var l_bpr_d = encoder::bpr_loss(t, su, sv, batch.triples);
        Var reg = detail::sum_squares(t, den_vars);
        return t.add(t.add(*l_c, l_bpr_d), t.scale(reg, cfg_.lambda2_reg));
    }

    const data::InteractionDataset* ds_;
    TrainConfig cfg_;
    Variant variant_;
    graph::NormalizedAdjacency adj_;
    encoder::TripleSampler sampler_;
    Rng rng_;
    ViewSet views_;
    AdamGroup opt_backbone_, opt_predictor_, opt_vgae_, opt_denoiser_, opt_diffusion_;
    std::size_t steps_per_epoch_ = 1;
};

inline TrainResult train(const data::InteractionDataset& ds, const TrainConfig& cfg,
                         Variant variant = Variant::full, const std::string& out_dir = "") {
    Trainer tr(ds, cfg, variant);
    return tr.train(out_dir);
}

// Ranked metrics for a frozen embedding table pair: propagate over the train
// graph, score all pairs, rank against the requested split.
inline eval::MetricSummary evaluate_tables(const data::InteractionDataset& ds, const Tensor& e_user,
                                           const Tensor& e_item, std::size_t layers, data::Split split) {
    auto adj = graph::build_normalized_adjacency(ds);
    std::span<const SparseMatrix> one(&adj.a, 1);
    auto state = encoder::propagate_plain(one, e_user, e_item, layers);
    Tensor scores = encoder::score_matrix(state.user_final, state.item_final);
    return eval::summarize(eval::rank_users(scores, ds, split, kEvalK));
}

inline std::vector<eval::RankedUser> rank_tables(const data::InteractionDataset& ds, const Tensor& e_user,
                                                 const Tensor& e_item, std::size_t layers,
                                                 data::Split split) {
    auto adj = graph::build_normalized_adjacency(ds);
    std::span<const SparseMatrix> one(&adj.a, 1);
    auto state = encoder::propagate_plain(one, e_user, e_item, layers);
    Tensor scores = encoder::score_matrix(state.user_final, state.item_final);
    return eval::rank_users(scores, ds, split, kEvalK);
}

// ---------------------------------------------------------------------------
// Plain pairwise-ranking matrix factorization, the reference baseline: same
// optimizer and step budget as phase 1, raw inner-product scoring, no
// propagation, no auxiliary objectives beyond weight decay.

struct MfResult {
    Tensor user, item;
    Tensor best_user, best_item;
    std::size_t best_epoch = 0;
    eval::MetricSummary best_valid;
    std::vector<std::string> metrics_lines;
};

inline MfResult train_bpr_mf(const data::InteractionDataset& ds, const TrainConfig& cfg) {
    require(validate(cfg).empty(), "baseline: config failed validation");
    auto adj = graph::build_normalized_adjacency(ds);
    auto sampler = encoder::TripleSampler::from(adj);
    Rng init_rng = Rng(cfg.seed).derive(0x696e6974ull);
    Rng rng = Rng(cfg.seed).derive(0x6d66ull);
    const double sigma = 0.1 / std::sqrt(static_cast<double>(cfg.embed_dim));
    MfResult res;
    res.user = Tensor::randn(ds.n_users(), cfg.embed_dim, sigma, init_rng);
    res.item = Tensor::randn(ds.n_items(), cfg.embed_dim, sigma, init_rng);
    res.best_user = res.user;
    res.best_item = res.item;
    res.best_valid.recall = -1.0;
    auto opt = AdamGroup::attach({&res.user, &res.item});
    const std::size_t steps =
        std::max<std::size_t>(1, (ds.count(data::Split::train) + cfg.batch_size - 1) / cfg.batch_size);
    const std::size_t epochs = cfg.outer_epochs * std::max<std::size_t>(1, cfg.phase1_epochs);
    for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
        double total = 0.0;
        for (std::size_t s = 0; s < steps; ++s) {
            Tape t;
            Var vu = t.input(res.user);
            Var vi = t.input(res.item);
            auto batch = detail::draw_triples(sampler, cfg.batch_size, rng);
            Var loss = encoder::bpr_loss(t, vu, vi, batch.triples);
            if (cfg.lambda4 > 0.0) {
                std::vector<Var> emb{vu, vi};
                loss = t.add(loss, t.scale(detail::sum_squares(t, emb), cfg.lambda4));
            }
            const double v = t.value(loss).data[0];
            if (!std::isfinite(v))
                throw NumericError("baseline aborted: non-finite loss at epoch " + std::to_string(epoch));
            total += v;
            auto grads = t.backward(loss);
            std::vector<Var> emb_vars{vu, vi};
            opt.step(grads, emb_vars, cfg.learning_rate);
        }
        Tensor scores = encoder::score_matrix(res.user, res.item);
        auto val = eval::summarize(eval::rank_users(scores, ds, data::Split::valid, kEvalK));
        bool best = val.recall > res.best_valid.recall;
        if (best) {
            res.best_valid = val;
            res.best_epoch = epoch;
            res.best_user = res.user;
            res.best_item = res.item;
        }
        nlohmann::ordered_json j;
        j["epoch"] = epoch;
        j["bpr_loss"] = total / static_cast<double>(steps);
        j["val_recall20"] = val.recall;
        j["val_ndcg20"] = val.ndcg;
        j["best"] = best;
        res.metrics_lines.push_back(j.dump());
    }
    return res;
}

}  // namespace radar::train
