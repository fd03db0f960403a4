#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "radar/trainer.hpp"

namespace radar::experiments {

// ---------------------------------------------------------------------------
// Noise robustness
//
// Replace a fraction of train edges with random false interactions, retrain
// from scratch, measure test recall. Degradation is relative to the clean run
// of the same seed, so each seed is its own control.
// ---------------------------------------------------------------------------

struct RobustnessCell {
    double ratio = 0.0;
    std::uint64_t seed = 0;
    double recall = 0.0;
    double ndcg = 0.0;
};

struct RobustnessPoint {
    double ratio = 0.0;
    double mean_recall = 0.0;
    double mean_degradation = 0.0;  // mean over seeds of (clean - noisy) / clean
    std::vector<RobustnessCell> cells;
};

struct RobustnessReport {
    train::Variant variant = train::Variant::full;
    std::vector<RobustnessPoint> points;  // first entry is always ratio 0
};

inline RobustnessReport noise_robustness_sweep(const data::InteractionDataset& ds, TrainConfig cfg,
                                               train::Variant variant, std::span<const double> ratios,
                                               std::span<const std::uint64_t> seeds) {
    require(!seeds.empty(), "robustness sweep: need at least one seed");
    RobustnessReport rep;
    rep.variant = variant;

    RobustnessPoint clean;
    clean.ratio = 0.0;
    for (std::uint64_t seed : seeds) {
        cfg.seed = seed;
        auto res = train::train(ds, cfg, variant);
        auto m = train::evaluate_tables(ds, res.best_user, res.best_item, cfg.layers, data::Split::test);
        clean.cells.push_back({0.0, seed, m.recall, m.ndcg});
        clean.mean_recall += m.recall;
    }
    clean.mean_recall /= static_cast<double>(seeds.size());
    rep.points.push_back(clean);

    for (double ratio : ratios) {
        if (ratio == 0.0) continue;
        RobustnessPoint pt;
        pt.ratio = ratio;
        for (std::size_t k = 0; k < seeds.size(); ++k) {
            cfg.seed = seeds[k];
            auto noisy = data::inject_noise(ds, {ratio, seeds[k]});
            auto res = train::train(noisy, cfg, variant);
            auto m =
                train::evaluate_tables(noisy, res.best_user, res.best_item, cfg.layers, data::Split::test);
            pt.cells.push_back({ratio, seeds[k], m.recall, m.ndcg});
            pt.mean_recall += m.recall;
            const double base = rep.points[0].cells[k].recall;
            if (base > 0.0) pt.mean_degradation += (base - m.recall) / base;
        }
        pt.mean_recall /= static_cast<double>(seeds.size());
        pt.mean_degradation /= static_cast<double>(seeds.size());
        rep.points.push_back(pt);
    }
    return rep;
}

inline nlohmann::ordered_json robustness_json(const RobustnessReport& rep) {
    nlohmann::ordered_json j;
    j["variant"] = train::to_string(rep.variant);
    j["points"] = nlohmann::ordered_json::array();
    for (const auto& pt : rep.points) {
        nlohmann::ordered_json p;
        p["ratio"] = pt.ratio;
        p["mean_recall20"] = pt.mean_recall;
        p["mean_degradation"] = pt.mean_degradation;
        p["cells"] = nlohmann::ordered_json::array();
        for (const auto& c : pt.cells) {
            nlohmann::ordered_json cj;
            cj["seed"] = c.seed;
            cj["recall20"] = c.recall;
            cj["ndcg20"] = c.ndcg;
            p["cells"].push_back(cj);
        }
        j["points"].push_back(p);
    }
    return j;
}

// ---------------------------------------------------------------------------
// Sparsity profile: ranked metrics split by train-degree bucket, so the
// long-tail behaviour is visible separately from the head.
// ---------------------------------------------------------------------------

struct BucketRow {
    std::string label;
    std::size_t population = 0;  // users in the bucket
    eval::MetricSummary metrics; // users field counts only those with ranked rows
};

inline std::vector<BucketRow> sparsity_profile(const data::InteractionDataset& ds, const Tensor& e_user,
                                               const Tensor& e_item, std::size_t layers, data::Split split,
                                               const std::vector<std::size_t>& boundaries) {
    auto rows = train::rank_tables(ds, e_user, e_item, layers, split);
    auto buckets = data::bucket_by_degree(ds, true, boundaries);
    std::vector<BucketRow> out;
    for (std::size_t b = 0; b < buckets.size(); ++b) {
        BucketRow row;
        if (b == 0)
            row.label = "deg <= " + std::to_string(boundaries.empty() ? 0 : boundaries[0]);
        else if (b == boundaries.size())
            row.label = "deg > " + std::to_string(boundaries[b - 1]);
        else
            row.label = std::to_string(boundaries[b - 1] + 1) + " <= deg <= " + std::to_string(boundaries[b]);
        row.population = buckets[b].size();
        row.metrics = eval::summarize_subset(rows, buckets[b]);
        out.push_back(std::move(row));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Ablation grid: every variant trained on the same data and budget.
// ---------------------------------------------------------------------------

struct AblationRow {
    train::Variant variant = train::Variant::full;
    eval::MetricSummary valid;
    eval::MetricSummary test;
    std::size_t best_epoch = 0;
};

inline std::vector<AblationRow> ablation_grid(const data::InteractionDataset& ds, const TrainConfig& cfg,
                                              std::span<const train::Variant> variants) {
    std::vector<AblationRow> out;
    for (auto v : variants) {
        auto res = train::train(ds, cfg, v);
        AblationRow row;
        row.variant = v;
        row.valid = res.best_valid;
        row.test = train::evaluate_tables(ds, res.best_user, res.best_item, cfg.layers, data::Split::test);
        row.best_epoch = res.best_epoch;
        out.push_back(row);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Ratio sweep for the bottleneck weighting.
// ---------------------------------------------------------------------------

struct SweepRow {
    double lambda_ratio = 0.0;
    eval::MetricSummary valid;
    eval::MetricSummary test;
};

inline std::vector<SweepRow> lambda_ratio_sweep(const data::InteractionDataset& ds, TrainConfig cfg,
                                                std::span<const double> values) {
    std::vector<SweepRow> out;
    for (double v : values) {
        cfg.lambda_ratio = v;
        auto res = train::train(ds, cfg);
        SweepRow row;
        row.lambda_ratio = v;
        row.valid = res.best_valid;
        row.test = train::evaluate_tables(ds, res.best_user, res.best_item, cfg.layers, data::Split::test);
        out.push_back(row);
    }
    return out;
}

}  // namespace radar::experiments
