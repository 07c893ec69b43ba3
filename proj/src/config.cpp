#include "hfn/config.hpp"

#include <fstream>
#include <set>

#include "hfn/errors.hpp"

namespace hfn {

Algorithm algorithm_from_string(const std::string& s) {
    if (s == "hfn") return Algorithm::hfn;
    if (s == "fedavg") return Algorithm::fedavg;
    if (s == "fedprox") return Algorithm::fedprox;
    if (s == "fedper") return Algorithm::fedper;
    if (s == "local") return Algorithm::local;
    throw ConfigError("unknown algorithm \"" + s + "\" (hfn|fedavg|fedprox|fedper|local)");
}

std::string to_string(Algorithm a) {
    switch (a) {
        case Algorithm::hfn: return "hfn";
        case Algorithm::fedavg: return "fedavg";
        case Algorithm::fedprox: return "fedprox";
        case Algorithm::fedper: return "fedper";
        case Algorithm::local: return "local";
    }
    return "?";
}

namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    for (const auto& [key, _] : obj.items()) {
        if (!allowed.count(key))
            throw ConfigError("unknown key \"" + key + "\" in " + where);
    }
}

template <typename T>
T get_or(const json& obj, const std::string& key, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("key \"" + key + "\" has the wrong type");
    }
}

DatasetConfig parse_dataset(const json& j) {
    DatasetConfig ds;
    check_keys(j, {"type", "classes", "samples_per_class", "image_size", "channels", "noise_sigma", "images",
                   "labels"},
               "dataset");
    const std::string type = get_or<std::string>(j, "type", "synth");
    if (type == "synth") {
        ds.kind = DatasetConfig::Kind::synth;
        ds.classes = get_or(j, "classes", ds.classes);
        ds.samples_per_class = get_or(j, "samples_per_class", ds.samples_per_class);
        ds.image_size = get_or(j, "image_size", ds.image_size);
        ds.channels = get_or(j, "channels", ds.channels);
        ds.noise_sigma = get_or(j, "noise_sigma", ds.noise_sigma);
    } else if (type == "idx") {
        ds.kind = DatasetConfig::Kind::idx;
        if (!j.contains("images") || !j.contains("labels"))
            throw ConfigError("dataset type \"idx\" needs \"images\" and \"labels\" paths");
        ds.images_path = j.at("images").get<std::string>();
        ds.labels_path = j.at("labels").get<std::string>();
    } else {
        throw ConfigError("unknown dataset type \"" + type + "\" (synth|idx)");
    }
    return ds;
}

PartitionConfig parse_partition(const json& j) {
    PartitionConfig p;
    check_keys(j, {"type", "alpha", "groups", "clients_per_group", "classes_per_client"}, "partition");
    const std::string type = get_or<std::string>(j, "type", "dirichlet");
    if (type == "dirichlet") {
        p.kind = PartitionConfig::Kind::dirichlet;
        p.alpha = get_or(j, "alpha", p.alpha);
    } else if (type == "group") {
        p.kind = PartitionConfig::Kind::group;
        p.groups = get_or(j, "groups", p.groups);
        p.clients_per_group = get_or(j, "clients_per_group", p.clients_per_group);
        p.classes_per_client = get_or(j, "classes_per_client", p.classes_per_client);
    } else {
        throw ConfigError("unknown partition type \"" + type + "\" (dirichlet|group)");
    }
    return p;
}

OptimizerSpec parse_optimizer(const json& j) {
    OptimizerSpec o;
    check_keys(j, {"lr", "momentum", "nesterov", "weight_decay", "lr_milestones", "lr_decay"}, "optimizer");
    o.lr = get_or(j, "lr", o.lr);
    o.momentum = get_or(j, "momentum", o.momentum);
    o.nesterov = get_or(j, "nesterov", o.nesterov);
    o.weight_decay = get_or(j, "weight_decay", o.weight_decay);
    o.lr_milestones = get_or(j, "lr_milestones", o.lr_milestones);
    o.lr_decay = get_or(j, "lr_decay", o.lr_decay);
    return o;
}

HyperNetConfig parse_hypernet(const json& j) {
    check_keys(j, {"embedding_size", "hidden_size", "basic_in", "basic_out", "kernel"}, "hypernet");
    const int nv = get_or(j, "embedding_size", 128);
    const int d = get_or(j, "hidden_size", -1);  // -1: follow embedding_size
    const int ni = get_or(j, "basic_in", 16);
    const int no = get_or(j, "basic_out", 16);
    const int f = get_or(j, "kernel", 3);
    return HyperNetConfig::make(nv, d, ni, no, f);
}

}  // namespace

RunConfig parse_config_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config root must be a JSON object");
    check_keys(j,
               {"algorithm", "seed", "rounds", "clients", "participation", "local_epochs", "fine_tune_epochs",
                "batch_size", "split_ratio", "precision", "parallel", "eval_every", "out", "dump_thetas",
                "fine_tune_embeddings", "fedprox_mu", "arch", "dataset", "partition", "optimizer", "hypernet"},
               "config root");

    RunConfig cfg;
    cfg.algorithm = algorithm_from_string(get_or<std::string>(j, "algorithm", "hfn"));
    cfg.seed = get_or<uint64_t>(j, "seed", cfg.seed);
    cfg.rounds = get_or(j, "rounds", cfg.rounds);
    cfg.clients = get_or(j, "clients", cfg.clients);
    cfg.participation = get_or(j, "participation", cfg.participation);
    cfg.local_epochs = get_or(j, "local_epochs", cfg.local_epochs);
    cfg.fine_tune_epochs = get_or(j, "fine_tune_epochs", cfg.fine_tune_epochs);
    cfg.batch_size = get_or(j, "batch_size", cfg.batch_size);
    cfg.split_ratio = get_or(j, "split_ratio", cfg.split_ratio);
    cfg.precision = get_or(j, "precision", cfg.precision);
    cfg.parallel = get_or(j, "parallel", cfg.parallel);
    cfg.eval_every = get_or(j, "eval_every", cfg.eval_every);
    cfg.out = get_or(j, "out", cfg.out);
    cfg.dump_thetas = get_or(j, "dump_thetas", cfg.dump_thetas);
    cfg.fine_tune_embeddings = get_or(j, "fine_tune_embeddings", cfg.fine_tune_embeddings);
    cfg.fedprox_mu = get_or(j, "fedprox_mu", cfg.fedprox_mu);
    cfg.arch = get_or(j, "arch", cfg.arch);
    if (j.contains("dataset")) cfg.dataset = parse_dataset(j.at("dataset"));
    if (j.contains("partition")) cfg.partition = parse_partition(j.at("partition"));
    if (j.contains("optimizer")) cfg.optimizer = parse_optimizer(j.at("optimizer"));
    if (j.contains("hypernet")) cfg.hypernet = parse_hypernet(j.at("hypernet"));

    validate(cfg);
    return cfg;
}

RunConfig parse_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return parse_config_json(j);
}

void validate(const RunConfig& cfg) {
    if (cfg.clients < 1) throw ConfigError("clients (K) must be >= 1");
    if (!(cfg.participation > 0.0 && cfg.participation <= 1.0))
        throw ConfigError("participation C must be in (0, 1], got " + std::to_string(cfg.participation));
    if (cfg.rounds < 0) throw ConfigError("rounds must be >= 0");
    if (cfg.local_epochs < 1) throw ConfigError("local_epochs E must be >= 1");
    if (cfg.fine_tune_epochs < 0) throw ConfigError("fine_tune_epochs must be >= 0");
    if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(cfg.split_ratio > 0.0 && cfg.split_ratio < 1.0)) throw ConfigError("split_ratio must be in (0, 1)");
    if (cfg.precision != "f64" && cfg.precision != "f32")
        throw ConfigError("precision must be \"f64\" or \"f32\"");
    if (cfg.parallel < 1) throw ConfigError("parallel must be >= 1");
    if (cfg.eval_every < 0) throw ConfigError("eval_every must be >= 0");
    if (!(cfg.optimizer.lr > 0.0)) throw ConfigError("optimizer.lr must be positive");
    if (!(cfg.optimizer.momentum >= 0.0 && cfg.optimizer.momentum < 1.0))
        throw ConfigError("optimizer.momentum must be in [0, 1)");
    if (cfg.optimizer.weight_decay < 0.0) throw ConfigError("optimizer.weight_decay must be >= 0");
    if (cfg.fedprox_mu < 0.0) throw ConfigError("fedprox_mu must be >= 0");
    if (cfg.partition.kind == PartitionConfig::Kind::dirichlet && !(cfg.partition.alpha > 0.0))
        throw ConfigError("partition.alpha must be positive");
    if (cfg.partition.kind == PartitionConfig::Kind::group) {
        if (cfg.partition.groups * cfg.partition.clients_per_group != cfg.clients)
            throw ConfigError("group partition: groups x clients_per_group must equal clients (K)");
    }

    // Tiling feasibility of the chosen arch against the basic filter; the
    // first conv's input channel count comes from the dataset.
    const int in_ch = cfg.dataset.kind == DatasetConfig::Kind::synth ? cfg.dataset.channels : 1;
    const int classes = cfg.dataset.kind == DatasetConfig::Kind::synth ? cfg.dataset.classes : 10;
    const MainNetArch arch = build_arch(cfg.arch, in_ch, classes);
    validate_tiling(arch, cfg.hypernet.basic_in, cfg.hypernet.basic_out, cfg.hypernet.kernel);
}

nlohmann::json config_echo(const RunConfig& cfg) {
    json j;
    j["algorithm"] = to_string(cfg.algorithm);
    j["seed"] = cfg.seed;
    j["rounds"] = cfg.rounds;
    j["clients"] = cfg.clients;
    j["participation"] = cfg.participation;
    j["local_epochs"] = cfg.local_epochs;
    j["fine_tune_epochs"] = cfg.fine_tune_epochs;
    j["batch_size"] = cfg.batch_size;
    j["split_ratio"] = cfg.split_ratio;
    j["precision"] = cfg.precision;
    j["parallel"] = cfg.parallel;
    j["eval_every"] = cfg.eval_every;
    j["out"] = cfg.out;
    j["dump_thetas"] = cfg.dump_thetas;
    j["fine_tune_embeddings"] = cfg.fine_tune_embeddings;
    j["fedprox_mu"] = cfg.fedprox_mu;
    j["arch"] = cfg.arch;
    if (cfg.dataset.kind == DatasetConfig::Kind::synth) {
        j["dataset"] = {{"type", "synth"},
                        {"classes", cfg.dataset.classes},
                        {"samples_per_class", cfg.dataset.samples_per_class},
                        {"image_size", cfg.dataset.image_size},
                        {"channels", cfg.dataset.channels},
                        {"noise_sigma", cfg.dataset.noise_sigma}};
    } else {
        j["dataset"] = {{"type", "idx"}, {"images", cfg.dataset.images_path}, {"labels", cfg.dataset.labels_path}};
    }
    if (cfg.partition.kind == PartitionConfig::Kind::dirichlet) {
        j["partition"] = {{"type", "dirichlet"}, {"alpha", cfg.partition.alpha}};
    } else {
        j["partition"] = {{"type", "group"},
                          {"groups", cfg.partition.groups},
                          {"clients_per_group", cfg.partition.clients_per_group},
                          {"classes_per_client", cfg.partition.classes_per_client}};
    }
    j["optimizer"] = {{"lr", cfg.optimizer.lr},
                      {"momentum", cfg.optimizer.momentum},
                      {"nesterov", cfg.optimizer.nesterov},
                      {"weight_decay", cfg.optimizer.weight_decay},
                      {"lr_milestones", cfg.optimizer.lr_milestones},
                      {"lr_decay", cfg.optimizer.lr_decay}};
    j["hypernet"] = {{"embedding_size", cfg.hypernet.embedding_size},
                     {"hidden_size", cfg.hypernet.hidden_size},
                     {"basic_in", cfg.hypernet.basic_in},
                     {"basic_out", cfg.hypernet.basic_out},
                     {"kernel", cfg.hypernet.kernel}};
    return j;
}

}  // namespace hfn
