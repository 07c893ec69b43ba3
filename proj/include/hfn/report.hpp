#pragma once

#include <cstdint>
#include <optional>
#include <vector>

namespace hfn {

struct ClientRoundStat {
    int client_id = 0;
    double loss = 0.0;
    int n_k = 0;
    int64_t up_params = 0;
    int64_t down_params = 0;
    bool skipped = false;
};

struct RoundRecord {
    int round = 0;
    std::vector<ClientRoundStat> clients;  // ascending client id
    double cpr = 0.0;                      // mean (up+down) over selected clients
    std::optional<double> mean_eval_accuracy;
};

struct FinalSummary {
    std::vector<double> accuracy;      // per client, after fine-tuning
    std::vector<double> accuracy_pre;  // per client, before fine-tuning
    double mean_accuracy = 0.0;
    double std_accuracy = 0.0;
    int64_t cpr = 0;                // formula value: params per user per round (up+down)
    int64_t cumulative_params = 0;  // measured over all rounds
    int rounds = 0;
    int clients = 0;
};

struct RunResult {
    std::vector<RoundRecord> rounds;
    FinalSummary summary;
    std::vector<std::vector<double>> thetas;    // flattened generated weights per client (when kept)
    std::vector<int> groups;                    // client -> group, when group-partitioned
};

}  // namespace hfn
