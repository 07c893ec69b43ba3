#include "hfn/analysis.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>

// thetas.bin and the phi wire format are little-endian by contract.
static_assert(std::endian::native == std::endian::little,
              "binary artifact writers assume a little-endian host");

#include "hfn/errors.hpp"
#include "hfn/kernels.hpp"

namespace hfn {

SimilarityMatrix cosine_similarity_matrix(const std::vector<std::vector<double>>& vectors) {
    const int n = static_cast<int>(vectors.size());
    if (n == 0) throw ContractError("cosine_similarity_matrix: no vectors");
    const std::size_t len = vectors[0].size();
    std::vector<double> norms(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        if (vectors[static_cast<std::size_t>(i)].size() != len)
            throw ContractError("cosine_similarity_matrix: unequal vector lengths");
        const double sq = kernels::dot(len, vectors[i].data(), vectors[i].data());
        if (sq == 0.0) throw DomainError("cosine_similarity_matrix: zero vector at index " + std::to_string(i));
        norms[static_cast<std::size_t>(i)] = std::sqrt(sq);
    }

    SimilarityMatrix out;
    out.n = n;
    out.m.assign(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) {
        out.m[static_cast<std::size_t>(i) * n + i] = 1.0;
        for (int j = i + 1; j < n; ++j) {
            double s = kernels::dot(len, vectors[i].data(), vectors[j].data()) / (norms[i] * norms[j]);
            s = std::clamp(s, -1.0, 1.0);
            out.m[static_cast<std::size_t>(i) * n + j] = s;
            out.m[static_cast<std::size_t>(j) * n + i] = s;
        }
    }
    return out;
}

std::pair<double, double> group_similarity_gap(const SimilarityMatrix& m, std::span<const int> group_of) {
    if (static_cast<int>(group_of.size()) != m.n)
        throw ContractError("group_similarity_gap: group labels do not cover the matrix");
    double intra = 0.0, inter = 0.0;
    long n_intra = 0, n_inter = 0;
    for (int i = 0; i < m.n; ++i) {
        for (int j = i + 1; j < m.n; ++j) {
            if (group_of[static_cast<std::size_t>(i)] == group_of[static_cast<std::size_t>(j)]) {
                intra += m.at(i, j);
                ++n_intra;
            } else {
                inter += m.at(i, j);
                ++n_inter;
            }
        }
    }
    if (n_intra == 0) throw DomainError("group_similarity_gap: no intra-group pairs (singleton groups)");
    return {intra / n_intra, n_inter > 0 ? inter / n_inter : 0.0};
}

double psnr(std::span<const double> a, std::span<const double> b, double peak) {
    if (a.size() != b.size()) throw ContractError("psnr: shape mismatch");
    if (a.empty()) throw ContractError("psnr: empty input");
    double mse = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 20.0 * std::log10(peak / std::sqrt(mse));
}

int64_t cpr_params(const std::string& algorithm, int64_t phi_params, int64_t conv_params,
                   int64_t classifier_params) {
    if (algorithm == "hfn") return 2 * phi_params;
    if (algorithm == "fedavg" || algorithm == "fedprox") return 2 * (conv_params + classifier_params);
    if (algorithm == "fedper") return 2 * conv_params;
    if (algorithm == "local") return 0;
    throw ConfigError("cpr: unknown algorithm \"" + algorithm + "\"");
}

double mean(std::span<const double> v) {
    if (v.empty()) return 0.0;
    return kernels::sum(v.size(), v.data()) / static_cast<double>(v.size());
}

double stddev(std::span<const double> v) {
    if (v.size() < 2) return 0.0;
    const double mu = mean(v);
    double acc = 0.0;
    for (double x : v) acc += (x - mu) * (x - mu);
    return std::sqrt(acc / static_cast<double>(v.size()));
}

double entropy(std::span<const int> counts) {
    long total = 0;
    for (int c : counts) total += c;
    if (total == 0) return 0.0;
    double h = 0.0;
    for (int c : counts) {
        if (c == 0) continue;
        const double p = static_cast<double>(c) / static_cast<double>(total);
        h -= p * std::log(p);
    }
    return h;
}

namespace {

// %.17g round-trips doubles exactly, keeping reruns byte-identical.
std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

ResultWriter::ResultWriter(std::filesystem::path out_dir) : dir_(std::move(out_dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw IoError("cannot create output directory " + dir_.string() + ": " + ec.message());
}

void ResultWriter::open_rounds() {
    if (rounds_open_) return;
    rounds_.open(dir_ / "rounds.csv", std::ios::trunc);
    if (!rounds_) throw IoError("cannot write " + (dir_ / "rounds.csv").string());
    rounds_ << "round,client_id,loss,n_k,up_params,down_params\n";
    rounds_.flush();
    rounds_open_ = true;
}

void ResultWriter::write_manifest(const nlohmann::json& config_echo, uint64_t seed, int64_t cpr,
                                  const std::string& code_version, const std::string& kernel_isa) {
    nlohmann::json j;
    j["config"] = config_echo;
    j["seed"] = seed;
    j["cpr_params_per_round"] = cpr;
    j["code_version"] = code_version;
    j["kernel_isa"] = kernel_isa;
    std::ofstream out(dir_ / "manifest.json", std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir_ / "manifest.json").string());
    out << j.dump(2) << "\n";
}

void ResultWriter::on_round(const RoundRecord& rec) {
    open_rounds();
    for (const ClientRoundStat& c : rec.clients) {
        rounds_ << rec.round << ',' << c.client_id << ',' << fmt_g17(c.loss) << ',' << c.n_k << ','
                << c.up_params << ',' << c.down_params << '\n';
    }
    rounds_.flush();
    if (!rounds_) throw IoError("failed writing " + (dir_ / "rounds.csv").string());
}

void ResultWriter::finalize_rounds() { open_rounds(); }

void ResultWriter::write_summary(const FinalSummary& s, const nlohmann::json& config_echo, uint64_t seed,
                                 const std::string& code_version) {
    nlohmann::json j;
    j["accuracy"] = s.accuracy;
    j["accuracy_pre_finetune"] = s.accuracy_pre;
    j["mean_accuracy"] = s.mean_accuracy;
    j["std_accuracy"] = s.std_accuracy;
    j["cpr_params_per_round"] = s.cpr;
    j["cumulative_params"] = s.cumulative_params;
    j["rounds"] = s.rounds;
    j["clients"] = s.clients;
    j["seed"] = seed;
    j["code_version"] = code_version;
    j["config"] = config_echo;
    std::ofstream out(dir_ / "summary.json", std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir_ / "summary.json").string());
    out << j.dump(2) << "\n";
}

void ResultWriter::write_similarity(const SimilarityMatrix& m) {
    std::ofstream out(dir_ / "similarity.csv", std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir_ / "similarity.csv").string());
    for (int i = 0; i < m.n; ++i) {
        for (int j = 0; j < m.n; ++j) {
            if (j) out << ',';
            out << fmt_g17(m.at(i, j));
        }
        out << '\n';
    }
}

void ResultWriter::write_thetas(const std::vector<std::vector<double>>& thetas) {
    std::ofstream out(dir_ / "thetas.bin", std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir_ / "thetas.bin").string());
    const uint32_t magic = 0x48464e54;  // "HFNT"
    const uint32_t k = static_cast<uint32_t>(thetas.size());
    const uint64_t len = thetas.empty() ? 0 : thetas[0].size();
    out.write(reinterpret_cast<const char*>(&magic), 4);
    out.write(reinterpret_cast<const char*>(&k), 4);
    out.write(reinterpret_cast<const char*>(&len), 8);
    for (const auto& t : thetas) {
        if (t.size() != len) throw ContractError("write_thetas: unequal theta lengths");
        out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * 8));
    }
    if (!out) throw IoError("failed writing " + (dir_ / "thetas.bin").string());
}

void ResultWriter::write_dat(const std::string& name, std::span<const std::pair<double, double>> points) {
    std::ofstream out(dir_ / name, std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir_ / name).string());
    for (const auto& [x, y] : points) out << fmt_g17(x) << ' ' << fmt_g17(y) << '\n';
}

std::vector<RoundsCsvRow> read_rounds_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw DataFormatError(path.string() + ": missing header");
    if (line != "round,client_id,loss,n_k,up_params,down_params")
        throw DataFormatError(path.string() + ": unexpected header \"" + line + "\"");
    std::vector<RoundsCsvRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        RoundsCsvRow r{};
        long long up = 0, down = 0;
        if (std::sscanf(line.c_str(), "%d,%d,%lf,%d,%lld,%lld", &r.round, &r.client_id, &r.loss, &r.n_k, &up,
                        &down) != 6)
            throw DataFormatError(path.string() + ": bad row \"" + line + "\"");
        r.up_params = up;
        r.down_params = down;
        rows.push_back(r);
    }
    return rows;
}

std::vector<std::vector<double>> read_thetas(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    uint32_t magic = 0, k = 0;
    uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&magic), 4);
    in.read(reinterpret_cast<char*>(&k), 4);
    in.read(reinterpret_cast<char*>(&len), 8);
    if (!in || magic != 0x48464e54) throw DataFormatError(path.string() + ": not a thetas.bin file");
    std::vector<std::vector<double>> out(k, std::vector<double>(len));
    for (auto& t : out) {
        in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(len * 8));
        if (!in) throw DataFormatError(path.string() + ": truncated theta block");
    }
    return out;
}

}  // namespace hfn
