#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "radar/error.hpp"
#include "radar/rng.hpp"

namespace radar::data {

enum class Split : std::uint8_t { train = 0, valid = 1, test = 2 };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::valid: return "valid";
        default: return "test";
    }
}

struct Edge {
    std::uint32_t user = 0;
    std::uint32_t item = 0;
    double weight = 1.0;
    Split split = Split::train;
};

// One raw parsed row before id remapping.
struct InteractionRecord {
    std::string user;
    std::string item;
    double weight = 1.0;
    std::string behavior;
};

// Interaction set with contiguous integer ids (first-seen order), optional split
// tags, and optional planted-cluster labels from the synthetic generator.
// Invariants: every edge references a valid user/item; (user, item) pairs are
// unique after merge_behaviors; weights are positive.
struct InteractionDataset {
    std::vector<std::string> user_ids;  // index -> raw id
    std::vector<std::string> item_ids;
    std::vector<Edge> edges;
    std::vector<std::uint32_t> user_cluster;  // empty unless synthetic
    std::vector<std::uint32_t> item_cluster;

    std::size_t n_users() const { return user_ids.size(); }
    std::size_t n_items() const { return item_ids.size(); }

    std::size_t count(Split s) const {
        std::size_t n = 0;
        for (const auto& e : edges)
            if (e.split == s) ++n;
        return n;
    }

    // Train-split degree per user (or per item).
    std::vector<std::size_t> train_degrees(bool users) const {
        std::vector<std::size_t> deg(users ? n_users() : n_items(), 0);
        for (const auto& e : edges)
            if (e.split == Split::train) ++deg[users ? e.user : e.item];
        return deg;
    }

    // Per-user sorted item lists for one split.
    std::vector<std::vector<std::uint32_t>> positives(Split s) const {
        std::vector<std::vector<std::uint32_t>> pos(n_users());
        for (const auto& e : edges)
            if (e.split == s) pos[e.user].push_back(e.item);
        for (auto& v : pos) std::sort(v.begin(), v.end());
        return pos;
    }

    // FNV-1a over a canonical serialization; split tags included.
    std::uint64_t checksum() const {
        std::uint64_t h = 1469598103934665603ull;
        auto mix = [&h](std::uint64_t x) {
            for (int b = 0; b < 8; ++b) {
                h ^= (x >> (8 * b)) & 0xff;
                h *= 1099511628211ull;
            }
        };
        auto mix_str = [&h](const std::string& s) {
            for (unsigned char c : s) {
                h ^= c;
                h *= 1099511628211ull;
            }
            h ^= 0xff;
            h *= 1099511628211ull;
        };
        mix(n_users());
        mix(n_items());
        for (const auto& s : user_ids) mix_str(s);
        for (const auto& s : item_ids) mix_str(s);
        std::vector<Edge> sorted = edges;
        std::sort(sorted.begin(), sorted.end(), [](const Edge& a, const Edge& b) {
            return a.user != b.user ? a.user < b.user : a.item < b.item;
        });
        for (const auto& e : sorted) {
            mix(e.user);
            mix(e.item);
            std::uint64_t wbits;
            static_assert(sizeof(wbits) == sizeof(e.weight));
            std::memcpy(&wbits, &e.weight, sizeof(wbits));
            mix(wbits);
            mix(static_cast<std::uint64_t>(e.split));
        }
        return h;
    }
};

// ---------------------------------------------------------------------------
// Ingest
// ---------------------------------------------------------------------------

enum class Format { tsv, csv };

inline Format parse_format(const std::string& s) {
    if (s == "tsv") return Format::tsv;
    if (s == "csv") return Format::csv;
    throw ContractError("unknown format '" + s + "' (expected tsv or csv)");
}

namespace detail {

inline std::vector<std::string> split_fields(const std::string& line, char delim) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == delim) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

inline bool parse_double(const std::string& s, double& out) {
    try {
        std::size_t used = 0;
        out = std::stod(s, &used);
        return used == s.size();
    } catch (...) {
        return false;
    }
}

inline std::string strip_cr(std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
}

}  // namespace detail

// Rows are `user<delim>item[<delim>weight][<delim>behavior]`; '#' lines are
// comments. A first non-comment line whose weight column is non-numeric is
// treated as a column header and skipped; malformed rows elsewhere raise
// ParseError with their line number. Weights must be positive.
inline std::vector<InteractionRecord> load_interactions(const std::string& path, Format format) {
    std::ifstream in(path);
    if (!in) throw ContractError("cannot open interaction file: " + path);
    const char delim = format == Format::tsv ? '\t' : ',';
    std::vector<InteractionRecord> records;
    std::string line;
    std::size_t line_no = 0;
    bool saw_data = false;
    while (std::getline(in, line)) {
        ++line_no;
        line = detail::strip_cr(line);
        if (line.empty() || line[0] == '#') continue;
        auto fields = detail::split_fields(line, delim);
        if (fields.size() < 2 || fields.size() > 4)
            throw ParseError("expected 2-4 fields, got " + std::to_string(fields.size()), line_no);
        InteractionRecord rec;
        rec.user = fields[0];
        rec.item = fields[1];
        if (fields.size() >= 3) {
            double w;
            if (!detail::parse_double(fields[2], w)) {
                if (!saw_data) continue;  // header row
                throw ParseError("weight '" + fields[2] + "' is not a number", line_no);
            }
            if (!(w > 0.0)) throw ParseError("weight must be positive", line_no);
            rec.weight = w;
        }
        if (fields.size() == 4) rec.behavior = fields[3];
        if (rec.user.empty() || rec.item.empty()) throw ParseError("empty id field", line_no);
        records.push_back(std::move(rec));
        saw_data = true;
    }
    return records;
}

enum class Regime { binary, weighted };

inline Regime parse_regime(const std::string& s) {
    if (s == "binary") return Regime::binary;
    if (s == "weighted") return Regime::weighted;
    throw ContractError("unknown regime '" + s + "' (expected binary or weighted)");
}

// Collapses raw records to unique (user, item) edges. Binary regime assigns
// weight 1; weighted sums the per-row weights, so rows without a weight column
// contribute a behavior count. Ids get contiguous indices in first-seen order.
inline InteractionDataset merge_behaviors(const std::vector<InteractionRecord>& records, Regime regime) {
    InteractionDataset ds;
    std::unordered_map<std::string, std::uint32_t> umap, imap;
    std::map<std::pair<std::uint32_t, std::uint32_t>, double> agg;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> order;
    for (const auto& r : records) {
        auto [uit, unew] = umap.try_emplace(r.user, static_cast<std::uint32_t>(ds.user_ids.size()));
        if (unew) ds.user_ids.push_back(r.user);
        auto [iit, inew] = imap.try_emplace(r.item, static_cast<std::uint32_t>(ds.item_ids.size()));
        if (inew) ds.item_ids.push_back(r.item);
        const std::pair<std::uint32_t, std::uint32_t> key{uit->second, iit->second};
        auto [eit, enew] = agg.try_emplace(key, 0.0);
        if (enew) order.push_back(key);
        eit->second += r.weight;
    }
    ds.edges.reserve(order.size());
    for (const auto& key : order) {
        Edge e;
        e.user = key.first;
        e.item = key.second;
        e.weight = regime == Regime::binary ? 1.0 : agg[key];
        ds.edges.push_back(e);
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

struct SplitFractions {
    double train = 0.7;
    double valid = 0.2;
    double test = 0.1;
};

// Per-user stratified split. Users with fewer than 3 interactions keep
// everything in train; every user with >= 3 keeps at least one train edge.
// Per-user allocation: valid = round(f_v n), test = round(f_t n), train takes
// the rest (stealing back from valid, then test, if train would be empty).
inline InteractionDataset split_dataset(const InteractionDataset& input, SplitFractions f, std::uint64_t seed) {
    require(std::abs(f.train + f.valid + f.test - 1.0) < 1e-9, "split fractions must sum to 1");
    require(f.train > 0.0 && f.valid >= 0.0 && f.test >= 0.0, "split fractions must be non-negative");
    InteractionDataset ds = input;
    std::vector<std::vector<std::size_t>> per_user(ds.n_users());
    for (std::size_t k = 0; k < ds.edges.size(); ++k) per_user[ds.edges[k].user].push_back(k);

    Rng root(seed);
    for (std::size_t u = 0; u < per_user.size(); ++u) {
        auto& idx = per_user[u];
        const std::size_t n = idx.size();
        if (n < 3) {
            for (auto k : idx) ds.edges[k].split = Split::train;
            continue;
        }
        Rng r = root.derive(0x5e11f00d, u);
        for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[r.uniform_int(i)]);
        std::size_t nv = static_cast<std::size_t>(std::llround(f.valid * static_cast<double>(n)));
        std::size_t nt = static_cast<std::size_t>(std::llround(f.test * static_cast<double>(n)));
        while (nv + nt >= n && nv > 0) --nv;  // train keeps at least one edge
        while (nv + nt >= n && nt > 0) --nt;
        std::size_t p = 0;
        for (; p < n - nv - nt; ++p) ds.edges[idx[p]].split = Split::train;
        for (; p < n - nt; ++p) ds.edges[idx[p]].split = Split::valid;
        for (; p < n; ++p) ds.edges[idx[p]].split = Split::test;
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Noise injection
// ---------------------------------------------------------------------------

struct NoiseSpec {
    double ratio = 0.0;  // in [0, 0.5]
    std::uint64_t seed = 0;
};

// Replaces floor(ratio * |train|) uniformly chosen train edges with uniformly
// sampled non-existing (user, item) pairs (weight 1, train split). Valid/test
// splits are untouched. Bounded rejection sampling; a graph too dense to host
// the replacements raises SamplingError.
inline InteractionDataset inject_noise(const InteractionDataset& input, const NoiseSpec& spec) {
    require(spec.ratio >= 0.0 && spec.ratio <= 0.5, "noise ratio must lie in [0, 0.5]");
    InteractionDataset ds = input;
    std::vector<std::size_t> train_idx;
    for (std::size_t k = 0; k < ds.edges.size(); ++k)
        if (ds.edges[k].split == Split::train) train_idx.push_back(k);
    const std::size_t n_replace = static_cast<std::size_t>(spec.ratio * static_cast<double>(train_idx.size()));
    if (n_replace == 0) return ds;

    // replacements must be absent from the original edge set (any split) and
    // from one another, so removed originals never reappear as "noise"
    std::set<std::pair<std::uint32_t, std::uint32_t>> forbidden;
    for (const auto& e : ds.edges) forbidden.insert({e.user, e.item});

    Rng rng = Rng(spec.seed).derive(0x6e015e);
    // choose victims without replacement
    for (std::size_t i = train_idx.size(); i > 1; --i)
        std::swap(train_idx[i - 1], train_idx[rng.uniform_int(i)]);
    const std::size_t budget = 100 * n_replace + 1000;
    std::size_t attempts = 0;
    for (std::size_t k = 0; k < n_replace; ++k) {
        Edge& victim = ds.edges[train_idx[k]];
        for (;;) {
            if (++attempts > budget)
                throw SamplingError("noise injection could not find enough absent pairs");
            const std::uint32_t u = static_cast<std::uint32_t>(rng.uniform_int(ds.n_users()));
            const std::uint32_t i = static_cast<std::uint32_t>(rng.uniform_int(ds.n_items()));
            if (forbidden.insert({u, i}).second) {
                victim = Edge{u, i, 1.0, Split::train};
                break;
            }
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

struct SyntheticSpec {
    std::size_t n_users = 200;
    std::size_t n_items = 200;
    std::size_t n_clusters = 4;
    std::size_t edges_per_user = 30;
    double cross_fraction = 0.1;  // probability an edge is drawn uniformly over all items
};

// Planted-cluster bipartite graph: users and items are partitioned into
// matching contiguous clusters (remainder folded into the last one); each user
// draws edges_per_user distinct items, each draw in-cluster with probability
// 1 - cross_fraction and uniform over all items otherwise. Cluster labels are
// retained for diagnostics. Edges are unsplit (all train) until split_dataset.
inline InteractionDataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
    require(spec.n_clusters >= 1, "need at least one cluster");
    require(spec.n_users >= spec.n_clusters && spec.n_items >= spec.n_clusters,
            "cluster count exceeds node count");
    require(spec.cross_fraction >= 0.0 && spec.cross_fraction <= 1.0, "cross_fraction must lie in [0,1]");
    const std::size_t items_per_cluster = spec.n_items / spec.n_clusters;
    require(spec.edges_per_user <= items_per_cluster,
            "edges_per_user exceeds items per cluster");

    InteractionDataset ds;
    ds.user_ids.reserve(spec.n_users);
    ds.item_ids.reserve(spec.n_items);
    for (std::size_t u = 0; u < spec.n_users; ++u) ds.user_ids.push_back("u" + std::to_string(u));
    for (std::size_t i = 0; i < spec.n_items; ++i) ds.item_ids.push_back("i" + std::to_string(i));

    auto cluster_of = [&](std::size_t idx, std::size_t count) {
        const std::size_t base = count / spec.n_clusters;
        const std::size_t c = idx / base;
        return static_cast<std::uint32_t>(std::min(c, spec.n_clusters - 1));
    };
    ds.user_cluster.resize(spec.n_users);
    ds.item_cluster.resize(spec.n_items);
    for (std::size_t u = 0; u < spec.n_users; ++u) ds.user_cluster[u] = cluster_of(u, spec.n_users);
    for (std::size_t i = 0; i < spec.n_items; ++i) ds.item_cluster[i] = cluster_of(i, spec.n_items);

    // item ranges per cluster (contiguous by construction)
    std::vector<std::pair<std::size_t, std::size_t>> item_range(spec.n_clusters, {spec.n_items, 0});
    for (std::size_t i = 0; i < spec.n_items; ++i) {
        auto& r = item_range[ds.item_cluster[i]];
        r.first = std::min(r.first, i);
        r.second = std::max(r.second, i + 1);
    }

    Rng root(seed);
    for (std::size_t u = 0; u < spec.n_users; ++u) {
        Rng r = root.derive(0x5a17, u);
        const auto [lo, hi] = item_range[ds.user_cluster[u]];
        std::set<std::uint32_t> chosen;
        std::size_t guard = 0;
        while (chosen.size() < spec.edges_per_user) {
            require(++guard < 100000, "synthetic generator stuck; relax the request");
            std::size_t item;
            if (r.uniform() < spec.cross_fraction)
                item = r.uniform_int(spec.n_items);
            else
                item = lo + r.uniform_int(hi - lo);
            chosen.insert(static_cast<std::uint32_t>(item));
        }
        for (auto i : chosen) ds.edges.push_back(Edge{static_cast<std::uint32_t>(u), i, 1.0, Split::train});
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Degree buckets
// ---------------------------------------------------------------------------

// Partition of user (or item) indices by train degree into bands
// (-inf, b0], (b0, b1], ..., (b_last, inf). Boundaries strictly increasing.
inline std::vector<std::vector<std::uint32_t>> bucket_by_degree(const InteractionDataset& ds, bool users,
                                                                const std::vector<std::size_t>& boundaries) {
    for (std::size_t i = 1; i < boundaries.size(); ++i)
        require(boundaries[i - 1] < boundaries[i], "bucket boundaries must be strictly increasing");
    const auto deg = ds.train_degrees(users);
    std::vector<std::vector<std::uint32_t>> buckets(boundaries.size() + 1);
    for (std::size_t n = 0; n < deg.size(); ++n) {
        std::size_t b = 0;
        while (b < boundaries.size() && deg[n] > boundaries[b]) ++b;
        buckets[b].push_back(static_cast<std::uint32_t>(n));
    }
    return buckets;
}

// ---------------------------------------------------------------------------
// Manifest + canonical on-disk form
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json dataset_manifest(const InteractionDataset& ds) {
    nlohmann::ordered_json j;
    j["users"] = ds.n_users();
    j["items"] = ds.n_items();
    j["interactions"] = ds.edges.size();
    j["split_sizes"] = {{"train", ds.count(Split::train)},
                        {"valid", ds.count(Split::valid)},
                        {"test", ds.count(Split::test)}};
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(ds.checksum()));
    j["checksum"] = std::string(buf);
    j["clustered"] = !ds.user_cluster.empty();
    return j;
}

// Tagged text format: vocabulary in index order, then edges by index, then
// optional cluster labels. Reload restores indices exactly.
inline void save_canonical(const InteractionDataset& ds, const std::string& path) {
    std::ofstream out(path);
    require(static_cast<bool>(out), "cannot write canonical dataset: " + path);
    out << "#radar-canonical\tv1\n";
    out << "N\t" << ds.n_users() << "\t" << ds.n_items() << "\n";
    for (const auto& s : ds.user_ids) out << "U\t" << s << "\n";
    for (const auto& s : ds.item_ids) out << "I\t" << s << "\n";
    char wbuf[64];
    for (const auto& e : ds.edges) {
        std::snprintf(wbuf, sizeof wbuf, "%.17g", e.weight);
        out << "E\t" << e.user << "\t" << e.item << "\t" << wbuf << "\t" << split_name(e.split) << "\n";
    }
    for (std::size_t u = 0; u < ds.user_cluster.size(); ++u) out << "CU\t" << u << "\t" << ds.user_cluster[u] << "\n";
    for (std::size_t i = 0; i < ds.item_cluster.size(); ++i) out << "CI\t" << i << "\t" << ds.item_cluster[i] << "\n";
    require(static_cast<bool>(out), "write failed: " + path);
}

inline InteractionDataset load_canonical(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ContractError("cannot open canonical dataset: " + path);
    InteractionDataset ds;
    std::string line;
    std::size_t line_no = 0;
    std::size_t want_users = 0, want_items = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = detail::strip_cr(line);
        if (line.empty() || line[0] == '#') continue;
        auto f = detail::split_fields(line, '\t');
        try {
            if (f[0] == "N" && f.size() == 3) {
                want_users = std::stoull(f[1]);
                want_items = std::stoull(f[2]);
            } else if (f[0] == "U" && f.size() == 2) {
                ds.user_ids.push_back(f[1]);
            } else if (f[0] == "I" && f.size() == 2) {
                ds.item_ids.push_back(f[1]);
            } else if (f[0] == "E" && f.size() == 5) {
                Edge e;
                e.user = static_cast<std::uint32_t>(std::stoul(f[1]));
                e.item = static_cast<std::uint32_t>(std::stoul(f[2]));
                e.weight = std::stod(f[3]);
                if (f[4] == "train")
                    e.split = Split::train;
                else if (f[4] == "valid")
                    e.split = Split::valid;
                else if (f[4] == "test")
                    e.split = Split::test;
                else
                    throw ParseError("unknown split tag '" + f[4] + "'", line_no);
                require(e.user < ds.user_ids.size() && e.item < ds.item_ids.size(),
                        "edge index out of range");
                ds.edges.push_back(e);
            } else if (f[0] == "CU" && f.size() == 3) {
                ds.user_cluster.resize(ds.n_users());
                ds.user_cluster.at(std::stoull(f[1])) = static_cast<std::uint32_t>(std::stoul(f[2]));
            } else if (f[0] == "CI" && f.size() == 3) {
                ds.item_cluster.resize(ds.n_items());
                ds.item_cluster.at(std::stoull(f[1])) = static_cast<std::uint32_t>(std::stoul(f[2]));
            } else {
                throw ParseError("unrecognized record '" + f[0] + "'", line_no);
            }
        } catch (const ParseError&) {
            throw;
        } catch (const std::exception& ex) {
            throw ParseError(ex.what(), line_no);
        }
    }
    require(ds.n_users() == want_users && ds.n_items() == want_items,
            "canonical dataset vocabulary does not match its declared counts");
    return ds;
}

}  // namespace radar::data
