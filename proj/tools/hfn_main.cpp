// hfn: config-driven federated-learning experiment runner.
//
// Subcommands: run, sweep-embedding, partition-stats, similarity, gradcheck.
// Exit codes: 0 ok, 1 unexpected, 2 config, 3 data format, 4 numeric, 5 io.

#include <cinttypes>
#include <cstdio>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "hfn/analysis.hpp"
#include "hfn/config.hpp"
#include "hfn/federation.hpp"
#include "hfn/gradcheck.hpp"

namespace {

struct CommonFlags {
    std::string config_path;
    std::optional<uint64_t> seed;
    std::optional<std::string> out;
    std::optional<int> parallel;
    std::optional<int> rounds;
    std::optional<std::string> algorithm;
    std::optional<int> embedding_size;
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool config_required) {
    auto* opt = cmd->add_option("--config", flags.config_path, "JSON run configuration");
    if (config_required) opt->required();
    cmd->add_option("--seed", flags.seed, "master seed (overrides config)");
    cmd->add_option("--out", flags.out, "output directory (overrides config)");
    cmd->add_option("--parallel", flags.parallel, "max concurrent client updates");
    cmd->add_option("--rounds", flags.rounds, "communication rounds (overrides config)");
    cmd->add_option("--algorithm", flags.algorithm, "hfn|fedavg|fedprox|fedper|local");
    cmd->add_option("--embedding-size", flags.embedding_size, "hypernet embedding size N_v");
}

hfn::RunConfig load_config(const CommonFlags& flags) {
    hfn::RunConfig cfg =
        flags.config_path.empty() ? hfn::RunConfig{} : hfn::parse_config(flags.config_path);
    if (flags.seed) cfg.seed = *flags.seed;
    if (flags.out) cfg.out = *flags.out;
    if (flags.parallel) cfg.parallel = *flags.parallel;
    if (flags.rounds) cfg.rounds = *flags.rounds;
    if (flags.algorithm) cfg.algorithm = hfn::algorithm_from_string(*flags.algorithm);
    if (flags.embedding_size) {
        cfg.hypernet = hfn::HyperNetConfig::make(*flags.embedding_size, -1, cfg.hypernet.basic_in,
                                                 cfg.hypernet.basic_out, cfg.hypernet.kernel);
    }
    hfn::validate(cfg);
    return cfg;
}

int cmd_run(const CommonFlags& flags) {
    const hfn::RunConfig cfg = load_config(flags);
    std::optional<hfn::ResultWriter> writer;
    if (!cfg.out.empty()) writer.emplace(cfg.out);
    const hfn::RunResult result = hfn::run_experiment(cfg, writer ? &*writer : nullptr);
    std::printf("algorithm=%s rounds=%d clients=%d\n", hfn::to_string(cfg.algorithm).c_str(), cfg.rounds,
                cfg.clients);
    std::printf("mean_accuracy=%.4f std=%.4f\n", result.summary.mean_accuracy, result.summary.std_accuracy);
    std::printf("cpr_params_per_round=%" PRId64 " cumulative_params=%" PRId64 "\n", result.summary.cpr,
                result.summary.cumulative_params);
    if (writer) std::printf("artifacts written to %s\n", writer->dir().string().c_str());
    return 0;
}

int cmd_sweep(const CommonFlags& flags, std::vector<int> sizes, int seeds_per_size) {
    hfn::RunConfig base = load_config(flags);
    if (sizes.empty()) sizes = {1, 4, 16, 64};
    std::optional<hfn::ResultWriter> writer;
    if (!base.out.empty()) writer.emplace(base.out);

    std::printf("%12s %16s %14s\n", "N_v", "CPR(params)", "mean_accuracy");
    std::vector<std::pair<double, double>> cpr_pts, acc_pts;
    for (int nv : sizes) {
        hfn::RunConfig cfg = base;
        cfg.out.clear();
        cfg.hypernet =
            hfn::HyperNetConfig::make(nv, -1, base.hypernet.basic_in, base.hypernet.basic_out, base.hypernet.kernel);
        hfn::validate(cfg);
        double acc_sum = 0.0;
        for (int s = 0; s < seeds_per_size; ++s) {
            cfg.seed = base.seed + static_cast<uint64_t>(s);
            acc_sum += hfn::run_experiment(cfg).summary.mean_accuracy;
        }
        const double acc = acc_sum / seeds_per_size;
        const int64_t cpr = 2 * hfn::param_count(cfg.hypernet);
        std::printf("%12d %16" PRId64 " %14.4f\n", nv, cpr, acc);
        cpr_pts.emplace_back(nv, static_cast<double>(cpr));
        acc_pts.emplace_back(nv, acc);
    }
    if (writer) {
        writer->write_dat("cpr_vs_embedding.dat", cpr_pts);
        writer->write_dat("accuracy_vs_embedding.dat", acc_pts);
        std::printf("artifacts written to %s\n", writer->dir().string().c_str());
    }
    return 0;
}

int cmd_partition_stats(const CommonFlags& flags) {
    const hfn::RunConfig cfg = load_config(flags);
    const hfn::Dataset ds = hfn::build_dataset(cfg);
    hfn::SeedSplitter seeds(cfg.seed);
    hfn::Partition part;
    if (cfg.partition.kind == hfn::PartitionConfig::Kind::dirichlet) {
        part = hfn::dirichlet_partition(ds, cfg.clients, cfg.partition.alpha, seeds.derive("partition"));
    } else {
        part = hfn::group_partition(ds, cfg.partition.groups, cfg.partition.clients_per_group,
                                    cfg.partition.classes_per_client, seeds.derive("partition"));
    }
    hfn::split_train_test(part, ds, cfg.split_ratio, seeds.derive("split"));

    const auto hist = hfn::class_histograms(part, ds);
    std::printf("client  n_train n_test  entropy  per-class counts\n");
    for (std::size_t k = 0; k < part.clients.size(); ++k) {
        std::printf("%6zu %8zu %6zu %8.4f  ", k, part.clients[k].train.size(), part.clients[k].test.size(),
                    hfn::entropy(hist[k]));
        for (int c : hist[k]) std::printf("%d ", c);
        std::printf("\n");
    }
    return 0;
}

int cmd_similarity(const CommonFlags& flags, const std::string& load_dir) {
    hfn::RunConfig cfg = load_config(flags);
    std::vector<std::vector<double>> thetas;
    std::vector<int> groups;
    if (!load_dir.empty()) {
        thetas = hfn::read_thetas(std::filesystem::path(load_dir) / "thetas.bin");
    } else {
        cfg.dump_thetas = true;
        hfn::Dataset ds = hfn::build_dataset(cfg);
        hfn::RunResult result;
        if (cfg.precision == "f32") {
            hfn::Simulation<float> sim(cfg, std::move(ds));
            result = sim.run(nullptr);
        } else {
            hfn::Simulation<double> sim(cfg, std::move(ds));
            result = sim.run(nullptr);
        }
        thetas = std::move(result.thetas);
        groups = std::move(result.groups);
    }

    const hfn::SimilarityMatrix m = hfn::cosine_similarity_matrix(thetas);
    if (!groups.empty()) {
        const auto [intra, inter] = hfn::group_similarity_gap(m, groups);
        std::printf("intra_group_mean=%.6f inter_group_mean=%.6f gap=%.6f\n", intra, inter, intra - inter);
    }
    if (!cfg.out.empty()) {
        hfn::ResultWriter writer(cfg.out);
        writer.write_similarity(m);
        writer.write_thetas(thetas);
        std::printf("similarity matrix written to %s\n", writer.dir().string().c_str());
    } else {
        for (int i = 0; i < m.n; ++i) {
            for (int j = 0; j < m.n; ++j) std::printf("%s%.4f", j ? "," : "", m.at(i, j));
            std::printf("\n");
        }
    }
    return 0;
}

// Full-composition gradient check: loss(forward(arch, h(v, phi), beta, batch))
// probed coordinate-wise against central differences.
int cmd_gradcheck(uint64_t seed, double eps, long coords, double tolerance) {
    const auto hncfg = hfn::HyperNetConfig::make(6, 6, 4, 4, 3);
    // shrunken desk-style net tiled from 4x4 basic filters
    const hfn::MainNetArch small = hfn::make_arch(
        "gradcheck",
        {hfn::MainNetArch::Block{hfn::ConvSpec{3, 4, 3, 1}, std::nullopt},
         hfn::MainNetArch::Block{hfn::ConvSpec{4, 8, 3, 2}, std::nullopt}},
        3, 4);

    const hfn::HyperNet<double> hn = hfn::init_hypernet<double>(hncfg, seed);
    const hfn::EmbeddingTable<double> table = hfn::init_embeddings<double>(hncfg, small, seed + 1);
    hfn::Rng brng(seed + 2);
    hfn::BetaParams<double> beta = hfn::init_beta<double>(small, brng);

    hfn::Tensor<double> images({4, 3, 6, 6});
    for (auto& v : images.values()) v = brng.uniform();
    std::vector<int> labels{0, 1, 2, 3};

    std::vector<hfn::Tensor<double>> params;
    for (const auto* blk : hfn::phi_blocks(hn)) params.push_back(*blk);
    const std::size_t n_phi = params.size();
    for (const auto& v : table) params.push_back(v);
    params.push_back(beta.weight);
    params.push_back(beta.bias);

    auto build = [&](hfn::Tape<double>& tape, std::span<const hfn::Tape<double>::Id> ids) {
        hfn::HyperNetIds<double> hn_ids;
        std::size_t i = 0;
        for (int k = 0; k < hncfg.basic_in; ++k) hn_ids.w.push_back(ids[i++]);
        for (int k = 0; k < hncfg.basic_in; ++k) hn_ids.b.push_back(ids[i++]);
        hn_ids.w_out = ids[i++];
        hn_ids.b_out = ids[i++];
        std::vector<hfn::Tape<double>::Id> emb(ids.begin() + n_phi, ids.end() - 2);
        const auto theta = hfn::generate_theta<double>(tape, hn_ids, hncfg, emb, small);
        return hfn::main_net_forward<double>(tape, small, theta, ids[ids.size() - 2], ids[ids.size() - 1],
                                             images, labels)
            .loss;
    };

    const auto report = hfn::gradient_check(build, params, eps, coords, seed + 3);
    std::printf("gradcheck: %zu coordinates, max relative error %.3e (tolerance %.1e)\n",
                report.coords_checked, report.max_rel_err, tolerance);
    if (!(report.max_rel_err < tolerance)) {
        std::fprintf(stderr, "gradcheck FAILED\n");
        return 4;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"federated-learning simulator with a hypernetwork-generated main network"};
    app.require_subcommand(1);

    CommonFlags run_flags, sweep_flags, part_flags, sim_flags;
    std::vector<int> sweep_sizes;
    int sweep_seeds = 1;
    std::string sim_load;
    uint64_t gc_seed = 7;
    double gc_eps = 1e-5;
    long gc_coords = 240;
    double gc_tol = 1e-4;

    auto* run = app.add_subcommand("run", "execute one federated experiment");
    add_common(run, run_flags, true);

    auto* sweep = app.add_subcommand("sweep-embedding", "repeat runs over embedding sizes");
    add_common(sweep, sweep_flags, true);
    sweep->add_option("--sizes", sweep_sizes, "embedding sizes to sweep (default 1 4 16 64)");
    sweep->add_option("--seeds-per-size", sweep_seeds, "seeds averaged per size");

    auto* pstats = app.add_subcommand("partition-stats", "print per-client class histograms");
    add_common(pstats, part_flags, true);

    auto* sim = app.add_subcommand("similarity", "cosine similarity of generated parameters");
    add_common(sim, sim_flags, true);
    sim->add_option("--load", sim_load, "read thetas.bin from a previous run directory");

    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the full composition");
    gc->add_option("--seed", gc_seed, "seed");
    gc->add_option("--eps", gc_eps, "central-difference step");
    gc->add_option("--coords", gc_coords, "sampled coordinates");
    gc->add_option("--tolerance", gc_tol, "max allowed relative error");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(run_flags);
        if (sweep->parsed()) return cmd_sweep(sweep_flags, sweep_sizes, sweep_seeds);
        if (pstats->parsed()) return cmd_partition_stats(part_flags);
        if (sim->parsed()) return cmd_similarity(sim_flags, sim_load);
        if (gc->parsed()) return cmd_gradcheck(gc_seed, gc_eps, gc_coords, gc_tol);
    } catch (const hfn::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const hfn::DataFormatError& e) {
        std::fprintf(stderr, "data format error: %s\n", e.what());
        return 3;
    } catch (const hfn::PartitionError& e) {
        std::fprintf(stderr, "partition error: %s\n", e.what());
        return 3;
    } catch (const hfn::NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 4;
    } catch (const hfn::IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 5;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
