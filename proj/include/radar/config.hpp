#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "radar/error.hpp"

namespace radar {

enum class DenoiseTarget { users, items, both };

inline const char* to_string(DenoiseTarget t) {
    switch (t) {
        case DenoiseTarget::users: return "users";
        case DenoiseTarget::items: return "items";
        default: return "both";
    }
}

inline bool denoise_target_from_string(const std::string& s, DenoiseTarget& out) {
    if (s == "users") { out = DenoiseTarget::users; return true; }
    if (s == "items") { out = DenoiseTarget::items; return true; }
    if (s == "both") { out = DenoiseTarget::both; return true; }
    return false;
}

// Every knob the training pipeline reads. Defaults are the desk-scale
// settings; configs/lastfm.conf overrides the capacity fields.
struct TrainConfig {
    std::size_t embed_dim = 32;
    std::size_t layers = 2;

    std::size_t diffusion_steps = 50;
    std::size_t denoise_steps = 5;
    double noise_shrink = 0.1;
    double alpha_low = 1e-3;
    double alpha_up = 1e-2;

    double tau = 0.2;
    double lambda1 = 0.1;
    double lambda2 = 0.1;
    double lambda2_reg = 1e-5;
    double lambda3 = 0.1;
    double lambda4 = 1e-5;
    double lambda_ratio = 5.5;

    std::size_t batch_size = 1024;
    double learning_rate = 1e-3;
    std::size_t outer_epochs = 10;
    std::size_t phase1_epochs = 1;
    std::size_t phase2_epochs = 1;
    std::size_t phase3_epochs = 1;
    double ema_decay = 0.9;

    std::size_t warmup_epochs = 3;
    double ddr_weight = 0.0;
    DenoiseTarget denoise_target = DenoiseTarget::both;

    std::uint64_t seed = 1;

    bool operator==(const TrainConfig&) const = default;
};

namespace detail {

inline bool parse_u64(const std::string& s, std::uint64_t& out) {
    if (s.empty()) return false;
    const char* b = s.data();
    const char* e = b + s.size();
    auto r = std::from_chars(b, e, out, 10);
    return r.ec == std::errc{} && r.ptr == e;
}

inline bool parse_f64(const std::string& s, double& out) {
    if (s.empty()) return false;
    const char* b = s.data();
    const char* e = b + s.size();
    auto r = std::from_chars(b, e, out, std::chars_format::general);
    return r.ec == std::errc{} && r.ptr == e;
}

inline std::string format_f64(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct ConfigField {
    const char* key;
    std::string (*get)(const TrainConfig&);
    bool (*set)(TrainConfig&, const std::string&);
};

// Single source of truth for key names, file order, and env mapping.
inline const std::vector<ConfigField>& config_fields() {
    static const std::vector<ConfigField> fields = {
#define RADAR_CFG_U64(name)                                                     \
    ConfigField{#name,                                                          \
                [](const TrainConfig& c) { return std::to_string(c.name); },    \
                [](TrainConfig& c, const std::string& s) {                      \
                    std::uint64_t v;                                            \
                    if (!parse_u64(s, v)) return false;                         \
                    c.name = v;                                                 \
                    return true;                                                \
                }}
#define RADAR_CFG_F64(name)                                                     \
    ConfigField{#name,                                                          \
                [](const TrainConfig& c) { return format_f64(c.name); },        \
                [](TrainConfig& c, const std::string& s) {                      \
                    return parse_f64(s, c.name);                                \
                }}
        RADAR_CFG_U64(embed_dim),
        RADAR_CFG_U64(layers),
        RADAR_CFG_U64(diffusion_steps),
        RADAR_CFG_U64(denoise_steps),
        RADAR_CFG_F64(noise_shrink),
        RADAR_CFG_F64(alpha_low),
        RADAR_CFG_F64(alpha_up),
        RADAR_CFG_F64(tau),
        RADAR_CFG_F64(lambda1),
        RADAR_CFG_F64(lambda2),
        RADAR_CFG_F64(lambda2_reg),
        RADAR_CFG_F64(lambda3),
        RADAR_CFG_F64(lambda4),
        RADAR_CFG_F64(lambda_ratio),
        RADAR_CFG_U64(batch_size),
        RADAR_CFG_F64(learning_rate),
        RADAR_CFG_U64(outer_epochs),
        RADAR_CFG_U64(phase1_epochs),
        RADAR_CFG_U64(phase2_epochs),
        RADAR_CFG_U64(phase3_epochs),
        RADAR_CFG_F64(ema_decay),
        RADAR_CFG_U64(warmup_epochs),
        RADAR_CFG_F64(ddr_weight),
        ConfigField{"denoise_target",
                    [](const TrainConfig& c) { return std::string(to_string(c.denoise_target)); },
                    [](TrainConfig& c, const std::string& s) {
                        return denoise_target_from_string(s, c.denoise_target);
                    }},
        RADAR_CFG_U64(seed),
#undef RADAR_CFG_U64
#undef RADAR_CFG_F64
    };
    return fields;
}

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace detail

// Flat key=value text; '#' starts a comment, blank lines skipped.
// Errors (malformed line, duplicate key) are appended, not thrown, so the
// caller can report every problem at once.
inline std::map<std::string, std::string> parse_config_text(const std::string& text,
                                                            std::vector<std::string>& errors) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            errors.push_back("line " + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
            continue;
        }
        std::string key = detail::trim(line.substr(0, eq));
        std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty()) {
            errors.push_back("line " + std::to_string(lineno) + ": empty key");
            continue;
        }
        if (value.empty()) {
            errors.push_back("line " + std::to_string(lineno) + ": empty value for '" + key + "'");
            continue;
        }
        if (kv.count(key)) {
            errors.push_back("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
            continue;
        }
        kv.emplace(std::move(key), std::move(value));
    }
    return kv;
}

// Unknown keys and unparsable values are reported by field name.
inline void apply_config_map(TrainConfig& cfg, const std::map<std::string, std::string>& kv,
                             std::vector<std::string>& errors) {
    for (const auto& [key, value] : kv) {
        bool known = false;
        for (const auto& f : detail::config_fields()) {
            if (key == f.key) {
                known = true;
                if (!f.set(cfg, value)) {
                    errors.push_back(key + ": cannot parse value '" + value + "'");
                }
                break;
            }
        }
        if (!known) errors.push_back("unknown key '" + key + "'");
    }
}

// RADAR_<KEY> (key upper-cased) overrides the corresponding field.
inline void apply_env_overrides(TrainConfig& cfg, std::vector<std::string>& errors) {
    for (const auto& f : detail::config_fields()) {
        std::string name = "RADAR_";
        for (const char* p = f.key; *p; ++p) {
            name += static_cast<char>(*p >= 'a' && *p <= 'z' ? *p - 'a' + 'A' : *p);
        }
        const char* v = std::getenv(name.c_str());
        if (v == nullptr) continue;
        if (!f.set(cfg, v)) {
            errors.push_back(std::string(f.key) + ": cannot parse " + name + "='" + v + "'");
        }
    }
}

// Every violated constraint yields one message naming the field.
inline std::vector<std::string> validate(const TrainConfig& c) {
    std::vector<std::string> errors;
    auto bad = [&](const std::string& m) { errors.push_back(m); };
    if (c.embed_dim < 1) bad("embed_dim: must be >= 1");
    if (c.layers < 1) bad("layers: must be >= 1");
    if (c.diffusion_steps < 1) bad("diffusion_steps: must be >= 1");
    if (c.denoise_steps > c.diffusion_steps)
        bad("denoise_steps: must be <= diffusion_steps (" + std::to_string(c.denoise_steps) + " > " +
            std::to_string(c.diffusion_steps) + ")");
    if (!(c.noise_shrink >= 0.0 && c.noise_shrink < 1.0))
        bad("noise_shrink: must lie in [0, 1), got " + detail::format_f64(c.noise_shrink));
    if (!(c.alpha_low > 0.0)) bad("alpha_low: must be > 0, got " + detail::format_f64(c.alpha_low));
    if (!(c.alpha_up >= c.alpha_low))
        bad("alpha_up: must be >= alpha_low, got " + detail::format_f64(c.alpha_up) + " < " +
            detail::format_f64(c.alpha_low));
    if (!(c.alpha_up < 1.0)) bad("alpha_up: must be < 1, got " + detail::format_f64(c.alpha_up));
    if (!(c.tau > 0.0)) bad("tau: must be > 0, got " + detail::format_f64(c.tau));
    auto nonneg = [&](const char* name, double v) {
        if (!(v >= 0.0)) bad(std::string(name) + ": must be >= 0, got " + detail::format_f64(v));
    };
    nonneg("lambda1", c.lambda1);
    nonneg("lambda2", c.lambda2);
    nonneg("lambda2_reg", c.lambda2_reg);
    nonneg("lambda3", c.lambda3);
    nonneg("lambda4", c.lambda4);
    nonneg("lambda_ratio", c.lambda_ratio);
    if (c.batch_size < 1) bad("batch_size: must be >= 1");
    nonneg("learning_rate", c.learning_rate);
    if (!(c.ema_decay >= 0.0 && c.ema_decay < 1.0))
        bad("ema_decay: must lie in [0, 1), got " + detail::format_f64(c.ema_decay));
    nonneg("ddr_weight", c.ddr_weight);
    return errors;
}

// Deterministic field order; doubles printed with full round-trip precision.
inline std::string config_to_text(const TrainConfig& cfg) {
    std::string out;
    for (const auto& f : detail::config_fields()) {
        out += f.key;
        out += " = ";
        out += f.get(cfg);
        out += "\n";
    }
    return out;
}

// defaults -> file (optional) -> env; validation runs last. All problems
// land in `errors`; the returned config is only meaningful when it is empty.
inline TrainConfig load_train_config(const std::string& path, bool use_env,
                                     std::vector<std::string>& errors) {
    TrainConfig cfg;
    if (!path.empty()) {
        std::ifstream in(path, std::ios::binary);
        if (!in) {
            errors.push_back("config file '" + path + "' cannot be opened");
            return cfg;
        }
        std::ostringstream buf;
        buf << in.rdbuf();
        auto kv = parse_config_text(buf.str(), errors);
        apply_config_map(cfg, kv, errors);
    }
    if (use_env) apply_env_overrides(cfg, errors);
    auto v = validate(cfg);
    errors.insert(errors.end(), v.begin(), v.end());
    return cfg;
}

}  // namespace radar
