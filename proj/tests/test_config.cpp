#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "hfn/config.hpp"
#include "hfn/errors.hpp"

using namespace hfn;
using nlohmann::json;

TEST_CASE("minimal config fills the standard defaults") {
    const auto cfg = parse_config_json(json{{"algorithm", "hfn"}});
    CHECK(cfg.local_epochs == 4);
    CHECK(cfg.fine_tune_epochs == 4);
    CHECK(cfg.batch_size == 128);
    CHECK(cfg.clients == 100);
    CHECK(cfg.participation == 0.25);
    CHECK(cfg.optimizer.momentum == 0.9);
    CHECK(cfg.optimizer.nesterov);
    CHECK(cfg.optimizer.weight_decay == 5e-4);
    CHECK(cfg.split_ratio == 0.8);
    CHECK(cfg.hypernet.embedding_size == 128);
    CHECK(cfg.hypernet.hidden_size == 128);  // d follows N_v
    CHECK(cfg.hypernet.basic_in == 16);
    CHECK(cfg.hypernet.kernel == 3);
}

TEST_CASE("out-of-range participation is rejected naming C") {
    try {
        parse_config_json(json{{"participation", 1.5}});
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("C") != std::string::npos);
        CHECK(msg.find("participation") != std::string::npos);
    }
}

TEST_CASE("unknown keys are rejected by name") {
    CHECK_THROWS_WITH_AS(parse_config_json(json{{"epocs", 4}}), doctest::Contains("epocs"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_json(json{{"optimizer", json{{"lr", 0.1}, {"momentom", 0.9}}}}),
                         doctest::Contains("momentom"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_json(json{{"dataset", json{{"type", "synth"}, {"sigma", 0.1}}}}),
                         doctest::Contains("sigma"), ConfigError);
}

TEST_CASE("cross-field validation") {
    CHECK_THROWS_AS(parse_config_json(json{{"local_epochs", 0}}), ConfigError);
    CHECK_THROWS_AS(parse_config_json(json{{"precision", "f16"}}), ConfigError);
    CHECK_THROWS_AS(parse_config_json(json{{"rounds", -1}}), ConfigError);
    CHECK_THROWS_AS(parse_config_json(json{{"optimizer", json{{"lr", 0.0}}}}), ConfigError);
    // group partition must tile K exactly
    CHECK_THROWS_AS(parse_config_json(json{{"clients", 21},
                                           {"partition", json{{"type", "group"},
                                                              {"groups", 5},
                                                              {"clients_per_group", 4},
                                                              {"classes_per_client", 2}}}}),
                    ConfigError);
    // arch/hypernet tiling feasibility: desk needs multiples of the basic filter
    CHECK_THROWS_AS(parse_config_json(json{{"hypernet", json{{"basic_in", 5}, {"basic_out", 5}}}}),
                    ConfigError);
    CHECK_THROWS_AS(parse_config_json(json{{"dataset", json{{"type", "idx"}}}}), ConfigError);
    CHECK_THROWS_AS(parse_config_json(json{{"algorithm", "fedbn"}}), ConfigError);
}

TEST_CASE("config files parse and echo round-trips every field") {
    const auto path = std::filesystem::temp_directory_path() / "hfn_cfg_test.json";
    {
        std::ofstream out(path, std::ios::trunc);
        out << R"({
            "algorithm": "fedprox",
            "seed": 12,
            "rounds": 7,
            "clients": 20,
            "participation": 0.25,
            "batch_size": 16,
            "fedprox_mu": 0.1,
            "dataset": {"type": "synth", "classes": 4, "samples_per_class": 50, "image_size": 8},
            "partition": {"type": "group", "groups": 5, "clients_per_group": 4, "classes_per_client": 2},
            "optimizer": {"lr": 0.05, "lr_milestones": [4, 6]},
            "hypernet": {"embedding_size": 8}
        })";
    }
    const auto cfg = parse_config(path);
    CHECK(cfg.algorithm == Algorithm::fedprox);
    CHECK(cfg.seed == 12);
    CHECK(cfg.partition.kind == PartitionConfig::Kind::group);
    CHECK(cfg.optimizer.lr == 0.05);
    CHECK(cfg.hypernet.embedding_size == 8);
    CHECK(cfg.hypernet.hidden_size == 8);

    // multi-step decay from the configured base
    CHECK(cfg.optimizer.effective_lr(1) == doctest::Approx(0.05));
    CHECK(cfg.optimizer.effective_lr(4) == doctest::Approx(0.005));
    CHECK(cfg.optimizer.effective_lr(6) == doctest::Approx(0.0005));

    const json echo = config_echo(cfg);
    const auto back = parse_config_json(echo);
    CHECK(back.algorithm == cfg.algorithm);
    CHECK(back.seed == cfg.seed);
    CHECK(back.rounds == cfg.rounds);
    CHECK(back.optimizer.lr_milestones == cfg.optimizer.lr_milestones);
    CHECK(back.partition.groups == cfg.partition.groups);
    CHECK(config_echo(back) == echo);

    CHECK_THROWS_AS(parse_config(path.parent_path() / "does_not_exist.json"), IoError);
    const auto bad = std::filesystem::temp_directory_path() / "hfn_cfg_bad.json";
    {
        std::ofstream out(bad, std::ios::trunc);
        out << "{not json";
    }
    CHECK_THROWS_AS(parse_config(bad), ConfigError);
}
