#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hfn/hypernet.hpp"

namespace hfn {

enum class Algorithm { hfn, fedavg, fedprox, fedper, local };

Algorithm algorithm_from_string(const std::string& s);
std::string to_string(Algorithm a);

struct OptimizerSpec {
    double lr = 0.01;
    double momentum = 0.9;
    bool nesterov = true;
    double weight_decay = 5e-4;
    std::vector<int> lr_milestones;  // rounds at which lr decays
    double lr_decay = 0.1;

    double effective_lr(int round) const {
        double out = lr;
        for (int m : lr_milestones)
            if (round >= m) out *= lr_decay;
        return out;
    }
};

struct DatasetConfig {
    enum class Kind { synth, idx } kind = Kind::synth;
    // synth
    int classes = 4;
    int samples_per_class = 250;
    int image_size = 8;
    int channels = 3;
    double noise_sigma = 0.25;
    // idx
    std::string images_path;
    std::string labels_path;
};

struct PartitionConfig {
    enum class Kind { dirichlet, group } kind = Kind::dirichlet;
    double alpha = 0.5;
    int groups = 5;
    int clients_per_group = 4;
    int classes_per_client = 2;
};

struct RunConfig {
    Algorithm algorithm = Algorithm::hfn;
    uint64_t seed = 1;
    int rounds = 90;
    int clients = 100;           // K
    double participation = 0.25; // C
    int local_epochs = 4;        // E
    int fine_tune_epochs = 4;
    int batch_size = 128;        // B
    double split_ratio = 0.8;
    std::string precision = "f64";  // f64 | f32
    int parallel = 1;
    int eval_every = 0;  // 0 = only at the end
    std::string out;     // output directory; empty = no files
    bool dump_thetas = false;
    bool fine_tune_embeddings = false;
    double fedprox_mu = 0.01;
    std::string arch = "desk";

    DatasetConfig dataset;
    PartitionConfig partition;
    OptimizerSpec optimizer;
    HyperNetConfig hypernet = HyperNetConfig::make(128, -1, 16, 16, 3);
};

// Strict parse: unknown keys anywhere are rejected by name.
RunConfig parse_config(const std::filesystem::path& path);
RunConfig parse_config_json(const nlohmann::json& j);

// Cross-field validation (also called by parse).
void validate(const RunConfig& cfg);

// Canonical echo of every field, suitable for manifests.
nlohmann::json config_echo(const RunConfig& cfg);

}  // namespace hfn
