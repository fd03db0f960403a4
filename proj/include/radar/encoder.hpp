#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "radar/graph.hpp"
#include "radar/rng.hpp"
#include "radar/tape.hpp"

namespace radar::encoder {

// ---------------------------------------------------------------------------
// Residual propagation
//
// Layer rule (both sides read the previous layer):
//   E_l(user) = A_l E_{l-1}(item) + E_{l-1}(user)
//   E_l(item) = A_l^T E_{l-1}(user) + E_{l-1}(item)
// Final representation is the sum over layers 0..L. A_l is the normalized
// adjacency, optionally a different masked matrix per layer.
// ---------------------------------------------------------------------------

// Plain-tensor propagation output; layer 0 is the embedding table itself.
struct EmbeddingState {
    std::vector<Tensor> user_layers;
    std::vector<Tensor> item_layers;
    Tensor user_final;
    Tensor item_final;
};

// Tape-side propagation output for training passes.
struct PropagationVars {
    std::vector<Var> user_layers;
    std::vector<Var> item_layers;
    Var user_final;
    Var item_final;
};

namespace detail {
inline const SparseMatrix& layer_mat(std::span<const SparseMatrix> layers, std::size_t l) {
    return layers.size() == 1 ? layers[0] : layers[l];
}
}  // namespace detail

// layers holds either one matrix reused every hop or exactly L matrices.
inline PropagationVars propagate(Tape& t, std::span<const SparseMatrix> layers, Var e0_user, Var e0_item,
                                 std::size_t L) {
    require(L == 0 || layers.size() == 1 || layers.size() == L,
            "propagate: layer stack must hold 1 or L matrices");
    PropagationVars out;
    out.user_layers = {e0_user};
    out.item_layers = {e0_item};
    Var su = e0_user, sv = e0_item;
    for (std::size_t l = 0; l < L; ++l) {
        const SparseMatrix& A = detail::layer_mat(layers, l);
        Var un = t.add(t.spmm(A, out.item_layers[l]), out.user_layers[l]);
        Var vn = t.add(t.spmm(A, out.user_layers[l], true), out.item_layers[l]);
        out.user_layers.push_back(un);
        out.item_layers.push_back(vn);
        su = t.add(su, un);
        sv = t.add(sv, vn);
    }
    out.user_final = su;
    out.item_final = sv;
    return out;
}

// Same recurrence with per-edge mask Vars so gradients reach the masks
// (one mask reused per hop, or L masks). base carries the pattern and the
// normalized values the masks multiply.
inline PropagationVars propagate_masked(Tape& t, const SparseMatrix& base, std::span<const Var> masks,
                                        Var e0_user, Var e0_item, std::size_t L) {
    require(L == 0 || masks.size() == 1 || masks.size() == L,
            "propagate_masked: mask stack must hold 1 or L masks");
    PropagationVars out;
    out.user_layers = {e0_user};
    out.item_layers = {e0_item};
    Var su = e0_user, sv = e0_item;
    for (std::size_t l = 0; l < L; ++l) {
        Var m = masks.size() == 1 ? masks[0] : masks[l];
        Var un = t.add(t.spmm_masked(base, m, out.item_layers[l]), out.user_layers[l]);
        Var vn = t.add(t.spmm_masked(base, m, out.user_layers[l], true), out.item_layers[l]);
        out.user_layers.push_back(un);
        out.item_layers.push_back(vn);
        su = t.add(su, un);
        sv = t.add(sv, vn);
    }
    out.user_final = su;
    out.item_final = sv;
    return out;
}

inline EmbeddingState propagate_plain(std::span<const SparseMatrix> layers, const Tensor& e0_user,
                                      const Tensor& e0_item, std::size_t L) {
    require(L == 0 || layers.size() == 1 || layers.size() == L,
            "propagate_plain: layer stack must hold 1 or L matrices");
    EmbeddingState out;
    out.user_layers = {e0_user};
    out.item_layers = {e0_item};
    out.user_final = e0_user;
    out.item_final = e0_item;
    for (std::size_t l = 0; l < L; ++l) {
        const SparseMatrix& A = detail::layer_mat(layers, l);
        Tensor un = spmm(A, out.item_layers[l]);
        Tensor vn = spmm_t(A, out.user_layers[l]);
        for (std::size_t i = 0; i < un.data.size(); ++i) un.data[i] += out.user_layers[l].data[i];
        for (std::size_t i = 0; i < vn.data.size(); ++i) vn.data[i] += out.item_layers[l].data[i];
        for (std::size_t i = 0; i < un.data.size(); ++i) out.user_final.data[i] += un.data[i];
        for (std::size_t i = 0; i < vn.data.size(); ++i) out.item_final.data[i] += vn.data[i];
        out.user_layers.push_back(std::move(un));
        out.item_layers.push_back(std::move(vn));
    }
    return out;
}

// Preference score is the embedding inner product.
inline double score(std::span<const double> user_emb, std::span<const double> item_emb) {
    require(user_emb.size() == item_emb.size(), "score: dimension mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < user_emb.size(); ++i) s += user_emb[i] * item_emb[i];
    return s;
}

// All-pairs score matrix (users x items) for ranking.
inline Tensor score_matrix(const Tensor& user_final, const Tensor& item_final) {
    return matmul_nt(user_final, item_final);
}

// ---------------------------------------------------------------------------
// Pairwise ranking loss
// ---------------------------------------------------------------------------

struct Triple {
    std::uint32_t user;
    std::uint32_t pos;
    std::uint32_t neg;
};

// Mean over triples of -log sigmoid(s_up - s_un), computed as
// softplus(-(margin)) for stability. Zero margin contributes ln 2.
inline Var bpr_loss(Tape& t, Var user_final, Var item_final, std::span<const Triple> triples) {
    require(!triples.empty(), "bpr_loss: empty batch");
    std::vector<std::size_t> iu(triples.size()), ip(triples.size()), in(triples.size());
    for (std::size_t k = 0; k < triples.size(); ++k) {
        iu[k] = triples[k].user;
        ip[k] = triples[k].pos;
        in[k] = triples[k].neg;
    }
    Var u = t.gather_rows(user_final, iu);
    Var p = t.gather_rows(item_final, ip);
    Var n = t.gather_rows(item_final, in);
    Var margin = t.sub(t.rowwise_dot(u, p), t.rowwise_dot(u, n));
    return t.mean(t.softplus(t.neg(margin)));
}

// Uniform positive edge, uniform negative item outside the user's train
// positives. Bounded rejection; a user holding every item raises SamplingError.
struct TripleSampler {
    std::vector<std::uint32_t> edge_user;             // one entry per train edge
    std::vector<std::uint32_t> edge_item;
    std::vector<std::vector<std::uint32_t>> user_pos; // sorted train positives
    std::size_t n_items = 0;

    static TripleSampler from(const graph::NormalizedAdjacency& adj) {
        TripleSampler s;
        s.edge_user = adj.edge_user;
        s.edge_item = adj.edge_item;
        s.n_items = adj.n_items();
        s.user_pos.assign(adj.n_users(), {});
        for (std::size_t k = 0; k < adj.n_edges(); ++k)
            s.user_pos[adj.edge_user[k]].push_back(adj.edge_item[k]);
        // nonzero order is row-major, so each list is already sorted
        return s;
    }

    std::vector<Triple> sample(std::size_t batch, Rng& rng) const {
        require(!edge_user.empty(), "sample: no train edges");
        std::vector<Triple> out;
        out.reserve(batch);
        for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t e = rng.uniform_int(edge_user.size());
            const std::uint32_t u = edge_user[e];
            const auto& pos = user_pos[u];
            std::uint32_t j = 0;
            bool found = false;
            for (int tries = 0; tries < 200; ++tries) {
                j = static_cast<std::uint32_t>(rng.uniform_int(n_items));
                if (!std::binary_search(pos.begin(), pos.end(), j)) {
                    found = true;
                    break;
                }
            }
            if (!found) throw SamplingError("negative sampling exhausted retries for user " + std::to_string(u));
            out.push_back(Triple{u, edge_item[e], j});
        }
        return out;
    }
};

// ---------------------------------------------------------------------------
// Embedding checkpoints
//
// Layout: four unsigned 64-bit little-endian integers (N, M, d, L), then the
// user table (N*d doubles) and the item table (M*d doubles), row-major,
// little-endian IEEE-754.
// ---------------------------------------------------------------------------

struct Checkpoint {
    std::uint64_t n_users = 0, n_items = 0, d = 0, layers = 0;
    Tensor e0_user, e0_item;
};

namespace detail {

inline void put_u64(std::ofstream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t get_u64(std::ifstream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw ParseError("checkpoint truncated in header");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Tensor& e0_user, const Tensor& e0_item,
                            std::uint64_t layers) {
    require(e0_user.shape.size() == 2 && e0_item.shape.size() == 2 && e0_user.cols() == e0_item.cols(),
            "save_checkpoint: tables must share the embedding dimension");
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), "cannot write checkpoint: " + path);
    detail::put_u64(out, e0_user.rows());
    detail::put_u64(out, e0_item.rows());
    detail::put_u64(out, e0_user.cols());
    detail::put_u64(out, layers);
    auto dump = [&out](const Tensor& t) {
        for (double d : t.data) {
            std::uint64_t v;
            std::memcpy(&v, &d, 8);
            unsigned char b[8];
            for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
            out.write(reinterpret_cast<const char*>(b), 8);
        }
    };
    dump(e0_user);
    dump(e0_item);
    require(static_cast<bool>(out), "checkpoint write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ContractError("cannot open checkpoint: " + path);
    Checkpoint ck;
    ck.n_users = detail::get_u64(in);
    ck.n_items = detail::get_u64(in);
    ck.d = detail::get_u64(in);
    ck.layers = detail::get_u64(in);
    auto slurp = [&in, &path](std::size_t rows, std::size_t cols) {
        Tensor t({rows, cols});
        for (auto& d : t.data) {
            unsigned char b[8];
            in.read(reinterpret_cast<char*>(b), 8);
            if (!in) throw ParseError("checkpoint truncated in payload: " + path);
            std::uint64_t v = 0;
            for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
            double d2;
            std::memcpy(&d2, &v, 8);
            d = d2;
        }
        return t;
    };
    ck.e0_user = slurp(ck.n_users, ck.d);
    ck.e0_item = slurp(ck.n_items, ck.d);
    return ck;
}

}  // namespace radar::encoder
