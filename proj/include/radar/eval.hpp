#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "radar/dataset.hpp"
#include "radar/tensor.hpp"

namespace radar::eval {

// All-ranking evaluation: every user with at least one positive in the target
// split ranks the full item catalog, with train positives masked out so only
// unseen items compete. Ties break toward the lower item index.

struct RankedUser {
    std::uint32_t user = 0;
    double recall = 0.0;
    double ndcg = 0.0;
};

struct MetricSummary {
    double recall = 0.0;
    double ndcg = 0.0;
    std::size_t users = 0;
};

inline std::vector<RankedUser> rank_users(const Tensor& scores, const data::InteractionDataset& ds,
                                          data::Split target, std::size_t K) {
    require(scores.rows() == ds.n_users() && scores.cols() == ds.n_items(),
            "rank_users: score matrix must cover all users and items");
    require(K >= 1, "rank_users: K must be positive");
    const auto train_pos = ds.positives(data::Split::train);
    const auto targ_pos = ds.positives(target);
    const std::size_t n_items = ds.n_items();
    const std::size_t k_eff = std::min(K, n_items);

    std::vector<RankedUser> out;
    std::vector<double> row(n_items);
    std::vector<std::uint32_t> order(n_items);
    for (std::size_t u = 0; u < ds.n_users(); ++u) {
        const auto& pos = targ_pos[u];
        if (pos.empty()) continue;
        for (std::size_t i = 0; i < n_items; ++i) row[i] = scores.at(u, i);
        for (std::uint32_t i : train_pos[u]) row[i] = -std::numeric_limits<double>::infinity();
        std::iota(order.begin(), order.end(), 0u);
        std::partial_sort(order.begin(), order.begin() + k_eff, order.end(),
                          [&row](std::uint32_t a, std::uint32_t b) {
                              if (row[a] != row[b]) return row[a] > row[b];
                              return a < b;
                          });
        double hits = 0.0, dcg = 0.0;
        for (std::size_t r = 0; r < k_eff; ++r)
            if (std::binary_search(pos.begin(), pos.end(), order[r])) {
                hits += 1.0;
                dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
            }
        double idcg = 0.0;
        const std::size_t ideal = std::min(k_eff, pos.size());
        for (std::size_t r = 0; r < ideal; ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
        RankedUser ru;
        ru.user = static_cast<std::uint32_t>(u);
        ru.recall = hits / static_cast<double>(pos.size());
        ru.ndcg = idcg > 0.0 ? dcg / idcg : 0.0;
        out.push_back(ru);
    }
    return out;
}

inline MetricSummary summarize(std::span<const RankedUser> rows) {
    MetricSummary s;
    for (const auto& r : rows) {
        s.recall += r.recall;
        s.ndcg += r.ndcg;
    }
    s.users = rows.size();
    if (s.users > 0) {
        s.recall /= static_cast<double>(s.users);
        s.ndcg /= static_cast<double>(s.users);
    }
    return s;
}

// Aggregate only the listed users (degree buckets, cohort slices). subset must
// be sorted ascending.
inline MetricSummary summarize_subset(std::span<const RankedUser> rows,
                                      std::span<const std::uint32_t> subset) {
    MetricSummary s;
    for (const auto& r : rows) {
        if (!std::binary_search(subset.begin(), subset.end(), r.user)) continue;
        s.recall += r.recall;
        s.ndcg += r.ndcg;
        ++s.users;
    }
    if (s.users > 0) {
        s.recall /= static_cast<double>(s.users);
        s.ndcg /= static_cast<double>(s.users);
    }
    return s;
}

// ---------------------------------------------------------------------------
// Paired comparison
// ---------------------------------------------------------------------------

namespace detail {

// Continued fraction for the regularized incomplete beta (Lentz's method).
inline double betacf(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 3e-16, kFloor = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::abs(d) < kFloor) d = kFloor;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kFloor) d = kFloor;
        c = 1.0 + aa / c;
        if (std::abs(c) < kFloor) c = kFloor;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kFloor) d = kFloor;
        c = 1.0 + aa / c;
        if (std::abs(c) < kFloor) c = kFloor;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) return h;
    }
    throw NumericError("incomplete beta continued fraction did not converge");
}

inline double betai(double a, double b, double x) {
    require(a > 0.0 && b > 0.0, "betai: shape parameters must be positive");
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double bt = std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                               a * std::log(x) + b * std::log1p(-x));
    if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
    return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

}  // namespace detail

// Two-sided tail mass of Student's t with `dof` degrees of freedom.
inline double student_t_two_sided_p(double t_stat, double dof) {
    require(dof > 0.0, "student_t_two_sided_p: dof must be positive");
    if (!std::isfinite(t_stat)) return 0.0;
    return detail::betai(0.5 * dof, 0.5, dof / (dof + t_stat * t_stat));
}

struct PairedTest {
    double mean_diff = 0.0;
    double t_stat = 0.0;
    double p_value = 1.0;
    std::size_t n = 0;
};

// Paired two-sided t-test on per-user metric pairs. A zero-variance diff
// vector short-circuits: identical samples are maximally insignificant,
// a constant nonzero shift maximally significant.
inline PairedTest paired_t_test(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size(), "paired_t_test: samples must pair up");
    require(a.size() >= 2, "paired_t_test: need at least two pairs");
    const std::size_t n = a.size();
    PairedTest r;
    r.n = n;
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
    mean /= static_cast<double>(n);
    r.mean_diff = mean;
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i] - mean;
        ss += d * d;
    }
    const double var = ss / static_cast<double>(n - 1);
    if (var == 0.0) {
        r.t_stat = mean == 0.0 ? 0.0 : std::numeric_limits<double>::infinity() * (mean > 0 ? 1 : -1);
        r.p_value = mean == 0.0 ? 1.0 : 0.0;
        return r;
    }
    r.t_stat = mean / std::sqrt(var / static_cast<double>(n));
    r.p_value = student_t_two_sided_p(r.t_stat, static_cast<double>(n - 1));
    return r;
}

}  // namespace radar::eval
