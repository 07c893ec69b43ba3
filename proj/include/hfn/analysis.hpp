#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hfn/report.hpp"

namespace hfn {

// Dense symmetric similarity matrix.
struct SimilarityMatrix {
    int n = 0;
    std::vector<double> m;  // n x n row-major
    double at(int i, int j) const { return m[static_cast<std::size_t>(i) * n + j]; }
};

// M[i][j] = <v_i, v_j> / (|v_i| |v_j|); diagonal pinned to exactly 1 and
// off-diagonal entries clamped into [-1, 1].
SimilarityMatrix cosine_similarity_matrix(const std::vector<std::vector<double>>& vectors);

// Mean similarity over same-group pairs (i != j) vs cross-group pairs.
std::pair<double, double> group_similarity_gap(const SimilarityMatrix& m, std::span<const int> group_of);

// PSNR in dB; equal inputs report +infinity.
double psnr(std::span<const double> a, std::span<const double> b, double peak = 255.0);

// Parameters (not bytes) a single user moves per round, upload + download.
int64_t cpr_params(const std::string& algorithm, int64_t phi_params, int64_t conv_params,
                   int64_t classifier_params);

double mean(std::span<const double> v);
double stddev(std::span<const double> v);
double entropy(std::span<const int> counts);  // natural log, of the normalized histogram

// Serializes run artifacts under one directory:
//   manifest.json  - config echo, seed, code version, CPR (written up front)
//   rounds.csv     - round,client_id,loss,n_k,up_params,down_params (per-round flush)
//   summary.json   - final per-client accuracies, CPR, cumulative params
//   similarity.csv / thetas.bin / *.dat on request
class ResultWriter {
public:
    explicit ResultWriter(std::filesystem::path out_dir);

    const std::filesystem::path& dir() const { return dir_; }

    void write_manifest(const nlohmann::json& config_echo, uint64_t seed, int64_t cpr,
                        const std::string& code_version, const std::string& kernel_isa);
    void on_round(const RoundRecord& rec);
    void write_summary(const FinalSummary& summary, const nlohmann::json& config_echo, uint64_t seed,
                       const std::string& code_version);
    void write_similarity(const SimilarityMatrix& m);
    void write_thetas(const std::vector<std::vector<double>>& thetas);
    // Two-column gnuplot-style series.
    void write_dat(const std::string& name, std::span<const std::pair<double, double>> points);

    // Ensures rounds.csv exists even for empty runs.
    void finalize_rounds();

private:
    std::filesystem::path dir_;
    std::ofstream rounds_;
    bool rounds_open_ = false;
    void open_rounds();
};

// Reads back rounds.csv (for self-consistency checks and tooling).
struct RoundsCsvRow {
    int round, client_id, n_k;
    double loss;
    int64_t up_params, down_params;
};
std::vector<RoundsCsvRow> read_rounds_csv(const std::filesystem::path& path);

std::vector<std::vector<double>> read_thetas(const std::filesystem::path& path);

}  // namespace hfn
