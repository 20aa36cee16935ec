/*
 * Tracker configuration: every tunable of the pipeline in one flat struct,
 * serialized as flat JSON. Unknown keys are rejected on load so typos in
 * config files fail loudly instead of silently running defaults.
 */
#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

namespace sdt {

struct TrackerConfig {
    // Prior map stage
    double sigma_b = 0.2;           // binarization threshold on the normalized penalized map
    double sigma_s_factor = 0.4;    // min component area = factor * box area (map scale)
    double sigma_c = 0.2;           // template-match confidence gate for using the prior ROI
    double delta_s = 2.0;           // center-penalty scaler
    double delta_c = 20.0;          // match sharpness: c = exp(-delta_c * mean sq diff)
    bool center_prior_literal = false;  // true: penalty grows with distance (A/B switch)
    double lambda_s = 1.0;          // ridge penalty for the first-frame weight fit
    double roi_scale = 2.0;         // ROI window side = roi_scale * max(w, h)

    // Target maps
    double gaussian_sigma_factor = 0.25;  // sigma = factor * box extent

    // Network shapes and training
    int n_select = 384;             // channels kept per stack after selection
    int head_hidden_channels = 8;
    double weight_init_std = 0.01;
    double dropout_ratio = 0.3;
    int init_iterations = 100;
    int selector_iterations = 50;
    int finetune_iterations = 20;
    double head_learning_rate = 2e-5;
    double selector_learning_rate = 2e-5;
    double finetune_learning_rate = 1e-5;
    double beta_w = 1e-3;           // Frobenius weight decay on conv kernels

    // Localization
    int particle_count = 700;
    double particle_translation_factor = 0.1;  // stddev = factor * box extent
    double particle_scale_jitter = 0.05;       // log-normal scale stddev
    double gamma = 0.7;             // scale compensation exponent in C = v * sigma^gamma
    double lambda_sigma = 0.5;      // scale modification ratio
    double peak_keep_ratio = 0.8;   // peaks below ratio * max are dropped
    int rectify_min_peaks = 2;      // rectification fires at this many surviving peaks
    double freeze_factor = 0.1;     // freeze when C < factor * median(recent C)
    int freeze_window = 20;         // unfrozen frames feeding that median

    // Online update
    int pool_capacity = 10;
    double pool_insert_ratio = 0.85;
    int update_period = 10;
    double update_confidence_ratio = 2.0;  // fire when sampled C > ratio * current C
    double theta = 0.7;             // temporal weight floor
    double trunc_k = 20.0;
    double trunc_mu = 30.0;
    double trunc_epsilon_factor = 1.0;  // epsilon = factor * max |residual| at update time

    uint64_t seed = 1;
};

namespace detail {

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

#define SDT_CONFIG_FIELDS(X)          \
    X(sigma_b)                        \
    X(sigma_s_factor)                 \
    X(sigma_c)                        \
    X(delta_s)                        \
    X(delta_c)                        \
    X(center_prior_literal)           \
    X(lambda_s)                       \
    X(roi_scale)                      \
    X(gaussian_sigma_factor)          \
    X(n_select)                       \
    X(head_hidden_channels)           \
    X(weight_init_std)                \
    X(dropout_ratio)                  \
    X(init_iterations)                \
    X(selector_iterations)            \
    X(finetune_iterations)            \
    X(head_learning_rate)             \
    X(selector_learning_rate)         \
    X(finetune_learning_rate)         \
    X(beta_w)                         \
    X(particle_count)                 \
    X(particle_translation_factor)    \
    X(particle_scale_jitter)          \
    X(gamma)                          \
    X(lambda_sigma)                   \
    X(peak_keep_ratio)                \
    X(rectify_min_peaks)              \
    X(freeze_factor)                  \
    X(freeze_window)                  \
    X(pool_capacity)                  \
    X(pool_insert_ratio)              \
    X(update_period)                  \
    X(update_confidence_ratio)        \
    X(theta)                          \
    X(trunc_k)                        \
    X(trunc_mu)                       \
    X(trunc_epsilon_factor)           \
    X(seed)

inline nlohmann::ordered_json config_to_json(const TrackerConfig& cfg) {
    nlohmann::ordered_json j;
#define SDT_CONFIG_WRITE(name) j[#name] = cfg.name;
    SDT_CONFIG_FIELDS(SDT_CONFIG_WRITE)
#undef SDT_CONFIG_WRITE
    return j;
}

inline void validate(const TrackerConfig& cfg);

// Missing keys keep their defaults; unknown keys are an error.
inline TrackerConfig config_from_json(const nlohmann::json& j) {
    static const char* known[] = {
#define SDT_CONFIG_NAME(name) #name,
        SDT_CONFIG_FIELDS(SDT_CONFIG_NAME)
#undef SDT_CONFIG_NAME
    };
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known)
            if (it.key() == k) { ok = true; break; }
        if (!ok) throw std::invalid_argument("config: unknown key '" + it.key() + "'");
    }
    TrackerConfig cfg;
#define SDT_CONFIG_READ(name) detail::read_key(j, #name, cfg.name);
    SDT_CONFIG_FIELDS(SDT_CONFIG_READ)
#undef SDT_CONFIG_READ
    validate(cfg);
    return cfg;
}

inline void validate(const TrackerConfig& cfg) {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
    if (cfg.sigma_b < 0.0 || cfg.sigma_b > 1.0) fail("sigma_b must be in [0,1]");
    if (cfg.sigma_s_factor < 0.0) fail("sigma_s_factor must be >= 0");
    if (cfg.sigma_c < 0.0 || cfg.sigma_c > 1.0) fail("sigma_c must be in [0,1]");
    if (cfg.lambda_s < 0.0) fail("lambda_s must be >= 0");
    if (cfg.roi_scale <= 0.0) fail("roi_scale must be > 0");
    if (cfg.gaussian_sigma_factor <= 0.0) fail("gaussian_sigma_factor must be > 0");
    if (cfg.n_select < 1) fail("n_select must be >= 1");
    if (cfg.head_hidden_channels < 1) fail("head_hidden_channels must be >= 1");
    if (cfg.dropout_ratio < 0.0 || cfg.dropout_ratio >= 1.0) fail("dropout_ratio must be in [0,1)");
    if (cfg.init_iterations < 1 || cfg.selector_iterations < 1 || cfg.finetune_iterations < 1)
        fail("iteration counts must be >= 1");
    if (cfg.head_learning_rate <= 0.0 || cfg.selector_learning_rate <= 0.0 ||
        cfg.finetune_learning_rate <= 0.0)
        fail("learning rates must be > 0");
    if (cfg.particle_count < 1) fail("particle_count must be >= 1");
    if (cfg.gamma < 0.0 || cfg.gamma >= 1.0) fail("gamma must be in [0,1)");
    if (cfg.lambda_sigma < 0.0 || cfg.lambda_sigma > 1.0) fail("lambda_sigma must be in [0,1]");
    if (cfg.peak_keep_ratio < 0.0 || cfg.peak_keep_ratio > 1.0) fail("peak_keep_ratio must be in [0,1]");
    if (cfg.rectify_min_peaks < 2) fail("rectify_min_peaks must be >= 2");
    if (cfg.pool_capacity < 1) fail("pool_capacity must be >= 1");
    if (cfg.pool_insert_ratio <= 0.0 || cfg.pool_insert_ratio > 1.0) fail("pool_insert_ratio must be in (0,1]");
    if (cfg.update_period < 1) fail("update_period must be >= 1");
    if (cfg.update_confidence_ratio <= 0.0) fail("update_confidence_ratio must be > 0");
    if (cfg.theta >= 1.0) fail("theta must be < 1");
    if (cfg.trunc_k <= 0.0 || cfg.trunc_mu < 0.0) fail("truncation parameters out of range");
    if (cfg.trunc_epsilon_factor < 0.0) fail("trunc_epsilon_factor must be >= 0");
}

inline TrackerConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("config: cannot open " + path);
    nlohmann::json j;
    in >> j;
    return config_from_json(j);
}

inline void save_config(const TrackerConfig& cfg, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("config: cannot write " + path);
    out << config_to_json(cfg).dump(2) << "\n";
}

#undef SDT_CONFIG_FIELDS

}  // namespace sdt
