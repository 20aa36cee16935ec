#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "sdt/config.hpp"

using namespace sdt;

TEST_CASE("default config validates and round-trips through json") {
    TrackerConfig cfg;
    CHECK_NOTHROW(validate(cfg));
    const auto j = config_to_json(cfg);
    const TrackerConfig back = config_from_json(nlohmann::json::parse(j.dump()));
    CHECK(config_to_json(back).dump() == j.dump());
}

TEST_CASE("modified fields survive a round trip exactly") {
    TrackerConfig cfg;
    cfg.sigma_b = 0.0;
    cfg.delta_c = 13.25;
    cfg.center_prior_literal = true;
    cfg.n_select = 32;
    cfg.head_learning_rate = 3.5e-6;
    cfg.particle_count = 123;
    cfg.theta = 0.25;
    cfg.seed = 987654321;
    const auto j = config_to_json(cfg);
    const TrackerConfig back = config_from_json(nlohmann::json::parse(j.dump()));
    CHECK(back.sigma_b == cfg.sigma_b);
    CHECK(back.delta_c == cfg.delta_c);
    CHECK(back.center_prior_literal == cfg.center_prior_literal);
    CHECK(back.n_select == cfg.n_select);
    CHECK(back.head_learning_rate == cfg.head_learning_rate);
    CHECK(back.particle_count == cfg.particle_count);
    CHECK(back.theta == cfg.theta);
    CHECK(back.seed == cfg.seed);
    CHECK(config_to_json(back).dump() == j.dump());
}

TEST_CASE("unknown keys are rejected by name") {
    const auto j = nlohmann::json::parse(R"({"bogus_knob": 1})");
    CHECK_THROWS_WITH_AS(config_from_json(j), "config: unknown key 'bogus_knob'",
                         std::invalid_argument);
}

TEST_CASE("missing keys keep their defaults") {
    const auto j = nlohmann::json::parse(R"({"seed": 42, "n_select": 64})");
    const TrackerConfig cfg = config_from_json(j);
    const TrackerConfig defaults;
    CHECK(cfg.seed == 42);
    CHECK(cfg.n_select == 64);
    CHECK(cfg.theta == defaults.theta);
    CHECK(cfg.particle_count == defaults.particle_count);
    CHECK(cfg.pool_capacity == defaults.pool_capacity);
}

TEST_CASE("out-of-range values fail validation") {
    auto with = [](const char* key, double value) {
        nlohmann::json j;
        j[key] = value;
        return j;
    };
    CHECK_THROWS_AS(config_from_json(with("gamma", 1.5)), std::invalid_argument);
    CHECK_THROWS_AS(config_from_json(with("theta", 1.0)), std::invalid_argument);
    CHECK_THROWS_AS(config_from_json(with("dropout_ratio", 1.0)), std::invalid_argument);
    CHECK_THROWS_AS(config_from_json(with("pool_insert_ratio", 0.0)), std::invalid_argument);
    CHECK_THROWS_AS(config_from_json(with("particle_count", 0)), std::invalid_argument);
    CHECK_THROWS_AS(config_from_json(with("peak_keep_ratio", -0.1)), std::invalid_argument);
    CHECK_THROWS_AS(config_from_json(with("rectify_min_peaks", 1)), std::invalid_argument);
    CHECK_THROWS_AS(config_from_json(with("head_learning_rate", 0.0)), std::invalid_argument);
}

TEST_CASE("config files save and load") {
    namespace fs = std::filesystem;
    const fs::path path = fs::temp_directory_path() / "sdt_test_config.json";
    TrackerConfig cfg;
    cfg.update_period = 7;
    cfg.lambda_sigma = 0.125;
    save_config(cfg, path.string());
    const TrackerConfig back = load_config(path.string());
    CHECK(back.update_period == 7);
    CHECK(back.lambda_sigma == 0.125);
    CHECK(config_to_json(back).dump() == config_to_json(cfg).dump());
    fs::remove(path);

    CHECK_THROWS_AS(load_config("/nonexistent/sdt_config.json"), std::invalid_argument);
}
