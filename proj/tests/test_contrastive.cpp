#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "radar/contrastive.hpp"
#include "radar/fd.hpp"
#include "testutil.hpp"

using namespace radar;
using namespace radar::contrastive;

namespace {

std::vector<double> normalize(std::vector<double> v) {
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(std::max(n, 1e-24));
    for (double& x : v) x /= n;
    return v;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
    return s;
}

std::vector<std::vector<double>> rows_of(const Tensor& t) {
    std::vector<std::vector<double>> out(t.rows());
    for (std::size_t r = 0; r < t.rows(); ++r)
        for (std::size_t c = 0; c < t.cols(); ++c) out[r].push_back(t.at(r, c));
    return out;
}

// scalar-loop alignment loss oracle
double nce_oracle(const Tensor& a, const Tensor& b, double tau) {
    auto ra = rows_of(a), rb = rows_of(b);
    for (auto& r : ra) r = normalize(r);
    for (auto& r : rb) r = normalize(r);
    double loss = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        double mx = -1e300;
        std::vector<double> logits;
        for (std::size_t j = 0; j < rb.size(); ++j) {
            logits.push_back(dot(ra[i], rb[j]) / tau);
            mx = std::max(mx, logits.back());
        }
        double acc = 0.0;
        for (double l : logits) acc += std::exp(l - mx);
        loss += mx + std::log(acc) - logits[i];
    }
    return loss / ra.size();
}

}  // namespace

TEST_CASE("alignment loss matches a scalar oracle") {
    Rng rng(3);
    for (int rep = 0; rep < 8; ++rep) {
        const std::size_t B = 2 + rng.uniform_int(6), d = 2 + rng.uniform_int(5);
        Tensor a = Tensor::randn(B, d, 1.0, rng), b = Tensor::randn(B, d, 1.0, rng);
        const double tau = 0.1 + rng.uniform();
        Tape t;
        double got = t.value(info_nce(t, t.constant(a), t.constant(b), tau)).item();
        REQUIRE(got == Catch::Approx(nce_oracle(a, b, tau)).epsilon(1e-11));
    }
}

TEST_CASE("alignment loss hits the orthogonal anchor value") {
    // identical views whose rows are orthogonal: positives at 1/tau,
    // negatives at 0, so loss = log(e^{1/tau} + (B-1)) - 1/tau
    const double tau = 0.2;
    Tensor a = Tensor::zeros(3, 3);
    for (std::size_t k = 0; k < 3; ++k) a.at(k, k) = 2.0 + double(k);  // scale must wash out
    Tape t;
    double got = t.value(info_nce(t, t.constant(a), t.constant(a), tau)).item();
    const double want = std::log(std::exp(1.0 / tau) + 2.0) - 1.0 / tau;
    REQUIRE(got == Catch::Approx(want).epsilon(1e-12));
}

TEST_CASE("alignment loss is scale invariant and temperature sensitive") {
    Rng rng(7);
    Tensor a = Tensor::randn(5, 4, 1.0, rng), b = Tensor::randn(5, 4, 1.0, rng);
    Tensor a2 = a, b2 = b;
    for (std::size_t r = 0; r < 5; ++r) {
        const double sa = 0.1 + 3.0 * rng.uniform(), sb = 0.1 + 3.0 * rng.uniform();
        for (std::size_t c = 0; c < 4; ++c) {
            a2.at(r, c) *= sa;
            b2.at(r, c) *= sb;
        }
    }
    Tape t;
    double base = t.value(info_nce(t, t.constant(a), t.constant(b), 0.2)).item();
    double scaled = t.value(info_nce(t, t.constant(a2), t.constant(b2), 0.2)).item();
    REQUIRE(base == Catch::Approx(scaled).epsilon(1e-10));

    double warm = t.value(info_nce(t, t.constant(a), t.constant(a), 1.0)).item();
    double sharp = t.value(info_nce(t, t.constant(a), t.constant(a), 0.05)).item();
    REQUIRE(sharp < warm);  // aligned views separate faster at low temperature
}

TEST_CASE("alignment gradients pass finite differences") {
    Rng rng(11);
    Tensor a0 = Tensor::randn(4, 3, 0.8, rng), b0 = Tensor::randn(4, 3, 0.8, rng);
    Tape t;
    Var a = t.input(a0), b = t.input(b0);
    auto grads = t.backward(info_nce(t, a, b, 0.3));
    auto fd_a = finite_difference_gradient(
        [&](const Tensor& x) { return nce_oracle(x, b0, 0.3); }, a0);
    auto fd_b = finite_difference_gradient(
        [&](const Tensor& x) { return nce_oracle(a0, x, 0.3); }, b0);
    REQUIRE(gradient_rel_error(*grads.get(a), fd_a) < 1e-6);
    REQUIRE(gradient_rel_error(*grads.get(b), fd_b) < 1e-6);
}

TEST_CASE("bridge network matches a dense reference and differentiates") {
    Rng rng(13);
    const std::size_t d = 4, B = 3;
    Predictor p = Predictor::init(d, rng);
    for (auto& v : p.b1.data) v = 0.05;
    for (auto& v : p.b2.data) v = -0.1;
    Tensor x = Tensor::randn(B, d, 0.6, rng);

    Tape t;
    auto pv = load_predictor(t, p);
    const Tensor& got = t.value(predict(t, pv, t.constant(x)));
    for (std::size_t r = 0; r < B; ++r) {
        std::vector<double> h(d, 0.0);
        for (std::size_t j = 0; j < d; ++j) {
            for (std::size_t k = 0; k < d; ++k) h[j] += x.at(r, k) * p.w1.at(k, j);
            h[j] = std::tanh(h[j] + p.b1.at(0, j));
        }
        for (std::size_t c = 0; c < d; ++c) {
            double o = p.b2.at(0, c);
            for (std::size_t j = 0; j < d; ++j) o += h[j] * p.w2.at(j, c);
            REQUIRE(got.at(r, c) == Catch::Approx(o).margin(1e-12));
        }
    }
}

TEST_CASE("asymmetric loss vanishes without negatives") {
    Rng rng(17);
    Predictor p = Predictor::init(3, rng);
    Tensor u = Tensor::randn(1, 3, 0.5, rng), v = Tensor::randn(1, 3, 0.5, rng);
    Tape t;
    auto pv = load_predictor(t, p);
    double got = t.value(acl_loss(t, pv, t.constant(u), t.constant(v), 0.2)).item();
    REQUIRE(got == 0.0);
}

TEST_CASE("asymmetric loss matches a scalar oracle") {
    Rng rng(19);
    const std::size_t d = 3, B = 5;
    Predictor p = Predictor::init(d, rng);
    Tensor u = Tensor::randn(B, d, 0.7, rng), v = Tensor::randn(B, d, 0.7, rng);
    const double tau = 0.25;

    Tape t;
    auto pv = load_predictor(t, p);
    double got = t.value(acl_loss(t, pv, t.constant(u), t.constant(v), tau)).item();

    // oracle: g through dense loops, then per-anchor LSE over [a | negatives]
    auto ru = rows_of(u), rv = rows_of(v);
    double want = 0.0;
    for (std::size_t k = 0; k < B; ++k) {
        std::vector<double> h(d, 0.0);
        for (std::size_t j = 0; j < d; ++j) {
            for (std::size_t q = 0; q < d; ++q) h[j] += rv[k][q] * p.w1.at(q, j);
            h[j] = std::tanh(h[j] + p.b1.at(0, j));
        }
        std::vector<double> g(d, 0.0);
        for (std::size_t c = 0; c < d; ++c) {
            g[c] = p.b2.at(0, c);
            for (std::size_t j = 0; j < d; ++j) g[c] += h[j] * p.w2.at(j, c);
        }
        const double a = dot(normalize(g), normalize(ru[k])) / tau;
        std::vector<double> logits = {a};
        for (std::size_t j = 0; j < B; ++j)
            if (j != k) logits.push_back(dot(normalize(rv[k]), normalize(rv[j])) / tau);
        double mx = -1e300;
        for (double l : logits) mx = std::max(mx, l);
        double acc = 0.0;
        for (double l : logits) acc += std::exp(l - mx);
        want += mx + std::log(acc) - a;
    }
    want /= B;
    REQUIRE(got == Catch::Approx(want).epsilon(1e-10));
    REQUIRE(got >= 0.0);  // LSE dominates its first logit
}

TEST_CASE("asymmetric loss gradients reach predictor and both views") {
    Rng rng(23);
    const std::size_t d = 3, B = 4;
    Predictor p = Predictor::init(d, rng);
    Tensor u0 = Tensor::randn(B, d, 0.6, rng), v0 = Tensor::randn(B, d, 0.6, rng);
    const double tau = 0.3;

    Tape t;
    auto pv = load_predictor(t, p);
    Var u = t.input(u0), v = t.input(v0);
    auto grads = t.backward(acl_loss(t, pv, u, v, tau));

    auto loss_with = [&](const Predictor& q, const Tensor& uu, const Tensor& vv) {
        Predictor local = q;
        Tape t2;
        auto pv2 = load_predictor(t2, local);
        return t2.value(acl_loss(t2, pv2, t2.constant(uu), t2.constant(vv), tau)).item();
    };
    auto fd_u = finite_difference_gradient(
        [&](const Tensor& x) { return loss_with(p, x, v0); }, u0);
    auto fd_v = finite_difference_gradient(
        [&](const Tensor& x) { return loss_with(p, u0, x); }, v0);
    REQUIRE(gradient_rel_error(*grads.get(u), fd_u) < 2e-5);
    REQUIRE(gradient_rel_error(*grads.get(v), fd_v) < 2e-5);

    auto check = [&](Var var, Tensor Predictor::* field, const char* label) {
        INFO(label);
        auto fd = finite_difference_gradient(
            [&](const Tensor& x) {
                Predictor q = p;
                q.*field = x;
                return loss_with(q, u0, v0);
            },
            p.*field, 1e-5);
        REQUIRE(gradient_rel_error(*grads.get(var), fd) < 2e-5);
    };
    check(pv.w1, &Predictor::w1, "w1");
    check(pv.b1, &Predictor::b1, "b1");
    check(pv.w2, &Predictor::w2, "w2");
    check(pv.b2, &Predictor::b2, "b2");

    // frozen predictor wiring keeps parameters out of the sweep
    Tape t3;
    auto cp = constant_predictor(t3, p);
    auto g3 = t3.backward(acl_loss(t3, cp, t3.input(u0), t3.input(v0), tau));
    REQUIRE_FALSE(g3.has(cp.w1));
}

TEST_CASE("slow identity state blends with the configured decay") {
    EmaState ema;
    Tensor u1 = Tensor::full(2, 2, 1.0), v1 = Tensor::full(1, 2, 4.0);
    ema.update(u1, v1, 0.9);
    REQUIRE(ema.initialized);
    REQUIRE(ema.user.data == u1.data);  // first update adopts wholesale
    Tensor u2 = Tensor::full(2, 2, 2.0), v2 = Tensor::full(1, 2, 0.0);
    ema.update(u2, v2, 0.9);
    for (double x : ema.user.data) REQUIRE(x == Catch::Approx(0.9 * 1.0 + 0.1 * 2.0).epsilon(1e-15));
    for (double x : ema.item.data) REQUIRE(x == Catch::Approx(3.6).epsilon(1e-15));

    Tensor wrong = Tensor::full(3, 2, 1.0);
    REQUIRE_THROWS_AS(ema.update(wrong, v2, 0.9), ShapeError);
    REQUIRE_THROWS_AS(ema.update(u2, v2, 1.0), ContractError);
}

TEST_CASE("composite view objective recombines its three parts") {
    Rng rng(512);
    const std::size_t B = 5, d = 4;
    const double tau = 0.2;
    Tensor g_u = Tensor::randn(B, d, 1.0, rng), g_i = Tensor::randn(B, d, 1.0, rng);
    Tensor d_u = Tensor::randn(B, d, 1.0, rng), d_i = Tensor::randn(B, d, 1.0, rng);
    Tensor g_ud = Tensor::randn(B, d, 1.0, rng), g_id = Tensor::randn(B, d, 1.0, rng);
    Tensor d_ud = Tensor::randn(B, d, 1.0, rng), d_id = Tensor::randn(B, d, 1.0, rng);

    auto total_at = [&](double l1, double l2) {
        Tape t;
        SslViews users{t.constant(g_u), t.constant(d_u), t.constant(g_ud), t.constant(d_ud)};
        SslViews items{t.constant(g_i), t.constant(d_i), t.constant(g_id), t.constant(d_id)};
        return t.value(diff_ssl_loss(t, users, items, l1, l2, tau)).data[0];
    };

    // independent recombination from the scalar oracle
    const double ssl = nce_oracle(g_u, d_u, tau) + nce_oracle(g_i, d_i, tau);
    const double intra = 0.5 * (nce_oracle(g_u, g_ud, tau) + nce_oracle(g_i, g_id, tau) +
                                nce_oracle(d_u, d_ud, tau) + nce_oracle(d_i, d_id, tau));
    const double inter = nce_oracle(g_ud, d_ud, tau) + nce_oracle(g_id, d_id, tau);

    REQUIRE(total_at(0.7, 0.3) == Catch::Approx(ssl + 0.7 * intra + 0.3 * inter).epsilon(1e-12));
    REQUIRE(total_at(0.0, 0.0) == Catch::Approx(ssl).epsilon(1e-12));
}

TEST_CASE("composite view objective vanishes for one node with identical views") {
    Tape t;
    Tensor row = Tensor::matrix(1, 3, {0.3, -0.2, 0.9});
    Var v = t.constant(row);
    SslViews users{v, v, v, v};
    Var vi = t.constant(row);
    SslViews items{vi, vi, vi, vi};
    REQUIRE(t.value(diff_ssl_loss(t, users, items, 0.5, 0.5, 0.2)).data[0] ==
            Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("bottleneck objective weights the denoised term by the ratio") {
    Rng rng(77);
    const std::size_t B = 4, d = 3;
    const double tau = 0.2;
    Predictor p = Predictor::init(d, rng);
    Tensor ctx_g_u = Tensor::randn(B, d, 1.0, rng), ctx_g_i = Tensor::randn(B, d, 1.0, rng);
    Tensor ctx_d_u = Tensor::randn(B, d, 1.0, rng), ctx_d_i = Tensor::randn(B, d, 1.0, rng);
    Tensor id_u = Tensor::randn(B, d, 1.0, rng), id_i = Tensor::randn(B, d, 1.0, rng);

    auto term = [&](const Tensor& cu, const Tensor& ci) {
        Tape t;
        auto pv = load_predictor(t, p);
        Var loss = t.add(acl_loss(t, pv, t.constant(cu), t.constant(id_u), tau),
                         acl_loss(t, pv, t.constant(ci), t.constant(id_i), tau));
        return t.value(loss).data[0];
    };
    const double g_term = term(ctx_g_u, ctx_g_i);
    const double d_term = term(ctx_d_u, ctx_d_i);

    auto total_at = [&](double ratio) {
        Tape t;
        auto pv = load_predictor(t, p);
        Var loss = ib_loss(t, pv, t.constant(ctx_g_u), t.constant(ctx_g_i), t.constant(ctx_d_u),
                           t.constant(ctx_d_i), t.constant(id_u), t.constant(id_i), ratio, tau);
        return t.value(loss).data[0];
    };

    REQUIRE(total_at(0.0) == Catch::Approx(g_term).epsilon(1e-12));
    REQUIRE(total_at(2.5) == Catch::Approx(g_term + 2.5 * d_term).epsilon(1e-12));

    // equal-term sanity: identical context bundles double up at ratio 1
    Tape t;
    auto pv = load_predictor(t, p);
    Var same = ib_loss(t, pv, t.constant(ctx_g_u), t.constant(ctx_g_i), t.constant(ctx_g_u),
                       t.constant(ctx_g_i), t.constant(id_u), t.constant(id_i), 1.0, tau);
    REQUIRE(t.value(same).data[0] == Catch::Approx(2.0 * g_term).epsilon(1e-12));
}
