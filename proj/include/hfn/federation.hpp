#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <mutex>
#include <span>
#include <thread>
#include <vector>

#include "hfn/analysis.hpp"
#include "hfn/config.hpp"
#include "hfn/data.hpp"
#include "hfn/hypernet.hpp"
#include "hfn/kernels.hpp"
#include "hfn/log.hpp"
#include "hfn/mainnet.hpp"
#include "hfn/report.hpp"
#include "hfn/rng.hpp"

namespace hfn {

// One user's local, never-transmitted state.
template <typename T>
struct ClientState {
    int id = 0;
    std::vector<int> train_idx, test_idx;
    int group = -1;
    EmbeddingTable<T> embeddings;    // hfn
    std::vector<Tensor<T>> conv_w;   // baseline algorithms
    BetaParams<T> beta;

    int n_k() const { return static_cast<int>(train_idx.size()); }
};

// Transmitted parameter vector plus a provenance tag naming the parameter
// groups it was built from; round audits assert hfn payloads are phi-only.
struct Payload {
    enum : uint32_t { kPhi = 1u, kConv = 2u, kClassifier = 4u, kEmbeddings = 8u };
    std::vector<double> values;
    uint32_t provenance = 0;
};

inline std::vector<int> select_clients(int total_clients, double participation, Rng& rng) {
    if (total_clients < 1) throw ContractError("select_clients: need at least one client");
    if (!(participation > 0.0 && participation <= 1.0))
        throw ContractError("select_clients: participation must be in (0, 1]");
    const int m = std::max(static_cast<int>(participation * total_clients), 1);
    // Partial Fisher-Yates over the id range, then ascending order.
    std::vector<int> ids(static_cast<std::size_t>(total_clients));
    for (int i = 0; i < total_clients; ++i) ids[static_cast<std::size_t>(i)] = i;
    for (int i = 0; i < m; ++i) {
        const int j = i + static_cast<int>(rng.below(static_cast<uint64_t>(total_clients - i)));
        std::swap(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(j)]);
    }
    ids.resize(static_cast<std::size_t>(m));
    std::sort(ids.begin(), ids.end());
    return ids;
}

// Nesterov momentum step on one parameter tensor:
//   g' = g + wd*p;  u = mu*u + g';  p -= lr*(g' + mu*u)
// With nesterov off it falls back to classic momentum (p -= lr*u).
template <typename T>
void sgd_step(Tensor<T>& p, const Tensor<T>& g, std::vector<T>& velocity, const OptimizerSpec& spec, double lr) {
    if (g.size() != p.size() || velocity.size() != p.size())
        throw ContractError("sgd_step: parameter/gradient/velocity sizes differ");
    if (spec.nesterov) {
        kernels::nesterov_update(p.size(), static_cast<T>(lr), static_cast<T>(spec.momentum),
                                 static_cast<T>(spec.weight_decay), g.data(), velocity.data(), p.data());
        return;
    }
    const T mu = static_cast<T>(spec.momentum), wd = static_cast<T>(spec.weight_decay), eta = static_cast<T>(lr);
    for (std::size_t i = 0; i < p.size(); ++i) {
        const T gp = g[i] + wd * p[i];
        velocity[i] = mu * velocity[i] + gp;
        p[i] -= eta * velocity[i];
    }
}

// Coordinate-wise weighted mean with weights w_k / sum(w); payloads must be
// passed in ascending client-id order (the reduction order is theirs).
// Computed as p_0 + sum_k w~_k (p_k - p_0), which is the same mean but
// returns an all-equal payload bit-exactly whatever the weights.
inline std::vector<double> aggregate_payloads(const std::vector<std::vector<double>>& payloads,
                                              std::span<const double> weights) {
    if (payloads.empty()) throw ContractError("aggregate: no payloads");
    if (payloads.size() != weights.size()) throw ContractError("aggregate: payload/weight count mismatch");
    const std::size_t len = payloads[0].size();
    double total = 0.0;
    for (double w : weights) {
        if (!(w > 0.0)) throw ContractError("aggregate: weights must be positive");
        total += w;
    }
    std::vector<double> out = payloads[0];
    for (std::size_t k = 1; k < payloads.size(); ++k) {
        if (payloads[k].size() != len) throw ContractError("aggregate: payload length mismatch");
        const double wk = weights[k] / total;
        const double* pk = payloads[k].data();
        for (std::size_t i = 0; i < len; ++i) out[i] += wk * (pk[i] - payloads[0][i]);
    }
    return out;
}

namespace detail {

template <typename T>
struct BatchGraph {
    typename Tape<T>::Id loss;
    std::vector<typename Tape<T>::Id> params;  // leaves aligned with the mutable stores
};

template <typename T>
using GraphBuilder = std::function<BatchGraph<T>(Tape<T>&, Tensor<T> images, std::span<const int> labels)>;

struct LocalSgdStats {
    std::vector<double> epoch_losses;  // sample-weighted mean per epoch
    double round_loss = 0.0;           // sample-weighted mean over all batches
};

// Mini-batch SGD over one client's training indices. The builder rebuilds the
// graph (and for hfn regenerates theta) for every batch; parameter stores are
// updated in place through the Nesterov kernel. Velocity buffers start at
// zero for each call, matching a per-round optimizer.
template <typename T>
LocalSgdStats run_local_sgd(const Dataset& ds, std::span<const int> train_idx,
                            std::span<Tensor<T>* const> params, const GraphBuilder<T>& build,
                            const OptimizerSpec& spec, double lr, int epochs, int batch_size, Rng& rng,
                            int client_id) {
    std::vector<std::vector<T>> velocity;
    velocity.reserve(params.size());
    for (Tensor<T>* p : params) velocity.emplace_back(p->size(), T(0));

    LocalSgdStats stats;
    std::vector<int> order(train_idx.begin(), train_idx.end());
    double total_loss = 0.0;
    long total_count = 0;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        rng.shuffle(order.begin(), order.end());
        double epoch_loss = 0.0;
        long epoch_count = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
            const std::span<const int> batch(order.data() + start, stop - start);
            Tape<T> tape;
            BatchGraph<T> bg = build(tape, gather_images<T>(ds, batch), gather_labels(ds, batch));
            if (bg.params.size() != params.size())
                throw ContractError("run_local_sgd: builder registered a different parameter count");
            const double loss = static_cast<double>(tape.value(bg.loss)[0]);
            if (!std::isfinite(loss))
                throw NumericError("client " + std::to_string(client_id) + ": non-finite training loss");
            const Gradients<T> grads = tape.backward(bg.loss);
            for (std::size_t i = 0; i < params.size(); ++i) {
                const Tensor<T>& g = grads.wrt(bg.params[i]);
                sgd_step(*params[i], g, velocity[i], spec, lr);
            }
            epoch_loss += loss * static_cast<double>(batch.size());
            epoch_count += static_cast<long>(batch.size());
        }
        stats.epoch_losses.push_back(epoch_loss / static_cast<double>(epoch_count));
        total_loss += epoch_loss;
        total_count += epoch_count;
    }
    stats.round_loss = total_count > 0 ? total_loss / static_cast<double>(total_count) : 0.0;
    return stats;
}

template <typename F>
void parallel_for(int n, int workers, F&& fn) {
    if (workers <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::mutex err_mu;
    std::exception_ptr err;
    auto worker = [&] {
        for (;;) {
            const int i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mu);
                if (!err) err = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    const int nw = std::min(workers, n);
    pool.reserve(static_cast<std::size_t>(nw));
    for (int i = 0; i < nw; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
}

template <typename T>
std::vector<Tensor<T>> init_conv_stack(const MainNetArch& arch, Rng& rng) {
    std::vector<Tensor<T>> out;
    for (const ConvSpec& c : arch.conv_layers()) {
        Tensor<T> w({c.out_ch, c.in_ch, c.kernel, c.kernel});
        const double bound = 1.0 / std::sqrt(static_cast<double>(c.in_ch * c.kernel * c.kernel));
        for (auto& v : w.values()) v = static_cast<T>(rng.uniform(-bound, bound));
        out.push_back(std::move(w));
    }
    return out;
}

}  // namespace detail

// --- HFN client update -------------------------------------------------------

template <typename T>
struct HfnUpdateResult {
    HyperNet<T> phi;
    std::vector<double> epoch_losses;
    double round_loss = std::numeric_limits<double>::quiet_NaN();
    bool skipped = false;
};

// Algorithm: copy phi locally, then for E epochs over batches regenerate
// theta = h(v, phi) on the tape, forward, backward, and take one joint
// Nesterov step on (phi, v, beta). beta and v never leave the client.
template <typename T>
HfnUpdateResult<T> client_update_hfn(ClientState<T>& client, const HyperNet<T>& phi_global,
                                     const MainNetArch& arch, const Dataset& ds, const OptimizerSpec& spec,
                                     double lr, int epochs, int batch_size, uint64_t stream_seed) {
    HfnUpdateResult<T> res;
    res.phi = phi_global;
    if (client.train_idx.empty()) {
        log::warn("client " + std::to_string(client.id) + ": no training data, skipping update");
        res.skipped = true;
        return res;
    }

    std::vector<Tensor<T>*> params = phi_blocks(res.phi);
    for (auto& v : client.embeddings) params.push_back(&v);
    params.push_back(&client.beta.weight);
    params.push_back(&client.beta.bias);

    detail::GraphBuilder<T> build = [&](Tape<T>& tape, Tensor<T> images, std::span<const int> labels) {
        detail::BatchGraph<T> bg;
        const HyperNetIds<T> ids = register_hypernet(tape, res.phi, true);
        bg.params = ids.all();
        std::vector<typename Tape<T>::Id> emb_ids;
        emb_ids.reserve(client.embeddings.size());
        for (const auto& v : client.embeddings) {
            emb_ids.push_back(tape.leaf(v, true));
            bg.params.push_back(emb_ids.back());
        }
        const auto bw = tape.leaf(client.beta.weight, true);
        const auto bb = tape.leaf(client.beta.bias, true);
        bg.params.push_back(bw);
        bg.params.push_back(bb);
        const auto theta = generate_theta<T>(tape, ids, res.phi.cfg, emb_ids, arch);
        bg.loss = main_net_forward<T>(tape, arch, theta, bw, bb, std::move(images), labels).loss;
        return bg;
    };

    Rng rng(stream_seed);
    const auto stats = detail::run_local_sgd<T>(ds, client.train_idx, params, build, spec, lr, epochs,
                                                batch_size, rng, client.id);
    res.epoch_losses = stats.epoch_losses;
    res.round_loss = stats.round_loss;
    if (!phi_finite(res.phi))
        throw NumericError("client " + std::to_string(client.id) + ": non-finite phi after local update");
    return res;
}

// --- baseline client updates -------------------------------------------------

template <typename T>
struct GlobalModel {
    std::vector<Tensor<T>> conv_w;
    BetaParams<T> beta;  // used by fedavg/fedprox only
};

template <typename T>
std::vector<double> flatten_model(std::span<const Tensor<T>> conv_w, const BetaParams<T>* beta) {
    std::vector<double> out;
    for (const auto& t : conv_w)
        for (const T& v : t.values()) out.push_back(static_cast<double>(v));
    if (beta) {
        for (const T& v : beta->weight.values()) out.push_back(static_cast<double>(v));
        for (const T& v : beta->bias.values()) out.push_back(static_cast<double>(v));
    }
    return out;
}

template <typename T>
void unflatten_model(std::span<const double> wire, std::span<Tensor<T>> conv_w, BetaParams<T>* beta) {
    std::size_t want = 0;
    for (const auto& t : conv_w) want += t.size();
    if (beta) want += beta->weight.size() + beta->bias.size();
    if (wire.size() != want)
        throw ContractError("model payload length " + std::to_string(wire.size()) + " != expected " +
                            std::to_string(want));
    std::size_t i = 0;
    for (auto& t : conv_w)
        for (T& v : t.values()) v = static_cast<T>(wire[i++]);
    if (beta) {
        for (T& v : beta->weight.values()) v = static_cast<T>(wire[i++]);
        for (T& v : beta->bias.values()) v = static_cast<T>(wire[i++]);
    }
}

template <typename T>
struct BaselineUpdateResult {
    Payload upload;
    std::vector<double> epoch_losses;
    double round_loss = std::numeric_limits<double>::quiet_NaN();
    bool skipped = false;
};

// fedavg: train full w, upload full w. fedprox: fedavg plus (mu/2)*|w - w_global|^2
// in the loss. fedper: download/upload the conv stack only, classifier stays
// local. local: train own model, upload nothing.
template <typename T>
BaselineUpdateResult<T> client_update_baseline(Algorithm alg, ClientState<T>& client,
                                               const GlobalModel<T>& global, const MainNetArch& arch,
                                               const Dataset& ds, const OptimizerSpec& spec, double lr,
                                               int epochs, int batch_size, double prox_mu,
                                               uint64_t stream_seed) {
    if (alg == Algorithm::hfn) throw ContractError("client_update_baseline: use client_update_hfn");
    BaselineUpdateResult<T> res;

    // Download.
    switch (alg) {
        case Algorithm::fedavg:
        case Algorithm::fedprox:
            client.conv_w = global.conv_w;
            client.beta = global.beta;
            break;
        case Algorithm::fedper:
            client.conv_w = global.conv_w;
            break;
        default:
            break;  // local: nothing received
    }

    if (client.train_idx.empty()) {
        log::warn("client " + std::to_string(client.id) + ": no training data, skipping update");
        res.skipped = true;
        return res;
    }

    std::vector<Tensor<T>*> params;
    for (auto& t : client.conv_w) params.push_back(&t);
    params.push_back(&client.beta.weight);
    params.push_back(&client.beta.bias);

    const bool prox = alg == Algorithm::fedprox && prox_mu > 0.0;
    detail::GraphBuilder<T> build = [&](Tape<T>& tape, Tensor<T> images, std::span<const int> labels) {
        detail::BatchGraph<T> bg;
        std::vector<typename Tape<T>::Id> theta;
        for (auto& t : client.conv_w) {
            theta.push_back(tape.leaf(t, true));
            bg.params.push_back(theta.back());
        }
        const auto bw = tape.leaf(client.beta.weight, true);
        const auto bb = tape.leaf(client.beta.bias, true);
        bg.params.push_back(bw);
        bg.params.push_back(bb);
        auto loss = main_net_forward<T>(tape, arch, theta, bw, bb, std::move(images), labels).loss;
        if (prox) {
            typename Tape<T>::Id penalty = -1;
            auto add_term = [&](typename Tape<T>::Id p, const Tensor<T>& ref) {
                const auto term = tape.sumsq(tape.sub(p, tape.leaf(ref, false)));
                penalty = penalty < 0 ? term : tape.add(penalty, term);
            };
            for (std::size_t i = 0; i < client.conv_w.size(); ++i) add_term(theta[i], global.conv_w[i]);
            add_term(bw, global.beta.weight);
            add_term(bb, global.beta.bias);
            loss = tape.add(loss, tape.scale(penalty, static_cast<T>(prox_mu / 2.0)));
        }
        bg.loss = loss;
        return bg;
    };

    Rng rng(stream_seed);
    const auto stats = detail::run_local_sgd<T>(ds, client.train_idx, params, build, spec, lr, epochs,
                                                batch_size, rng, client.id);
    res.epoch_losses = stats.epoch_losses;
    res.round_loss = stats.round_loss;

    // Upload.
    switch (alg) {
        case Algorithm::fedavg:
        case Algorithm::fedprox:
            res.upload.values = flatten_model<T>(client.conv_w, &client.beta);
            res.upload.provenance = Payload::kConv | Payload::kClassifier;
            break;
        case Algorithm::fedper:
            res.upload.values = flatten_model<T>(client.conv_w, nullptr);
            res.upload.provenance = Payload::kConv;
            break;
        default:
            break;  // local: empty payload
    }
    return res;
}

// --- fine-tuning ---------------------------------------------------------------

template <typename T>
struct FineTuneResult {
    double accuracy_pre = std::numeric_limits<double>::quiet_NaN();
    double accuracy_post = std::numeric_limits<double>::quiet_NaN();
};

// Adapts the classifier head to a frozen deployed theta, then evaluates on
// the client's test split.
template <typename T>
FineTuneResult<T> fine_tune_client(ClientState<T>& client, std::span<const Tensor<T>> theta,
                                   const MainNetArch& arch, const Dataset& ds, const OptimizerSpec& spec,
                                   double lr, int epochs, int batch_size, uint64_t stream_seed) {
    if (client.test_idx.empty()) throw DomainError("fine_tune: client " + std::to_string(client.id) + " has no test data");
    const Tensor<T> test_images = gather_images<T>(ds, client.test_idx);
    const std::vector<int> test_labels = gather_labels(ds, client.test_idx);

    FineTuneResult<T> res;
    res.accuracy_pre = evaluate<T>(arch, theta, client.beta, test_images, test_labels);
    if (epochs > 0 && !client.train_idx.empty()) {
        std::vector<Tensor<T>*> params{&client.beta.weight, &client.beta.bias};
        detail::GraphBuilder<T> build = [&](Tape<T>& tape, Tensor<T> images, std::span<const int> labels) {
            detail::BatchGraph<T> bg;
            std::vector<typename Tape<T>::Id> theta_ids;
            for (const auto& t : theta) theta_ids.push_back(tape.leaf(t, false));
            const auto bw = tape.leaf(client.beta.weight, true);
            const auto bb = tape.leaf(client.beta.bias, true);
            bg.params = {bw, bb};
            bg.loss = main_net_forward<T>(tape, arch, theta_ids, bw, bb, std::move(images), labels).loss;
            return bg;
        };
        Rng rng(stream_seed);
        detail::run_local_sgd<T>(ds, client.train_idx, params, build, spec, lr, epochs, batch_size, rng,
                                 client.id);
    }
    res.accuracy_post = evaluate<T>(arch, theta, client.beta, test_images, test_labels);
    return res;
}

// HFN variant: theta is deployed from (phi_final, v_k). With
// tune_embeddings the embeddings join the fine-tune (phi always frozen).
template <typename T>
FineTuneResult<T> fine_tune_client_hfn(ClientState<T>& client, const HyperNet<T>& phi, const MainNetArch& arch,
                                       const Dataset& ds, const OptimizerSpec& spec, double lr, int epochs,
                                       int batch_size, uint64_t stream_seed, bool tune_embeddings = false) {
    if (!tune_embeddings) {
        const std::vector<Tensor<T>> theta = generate_theta_values(phi, client.embeddings, arch);
        return fine_tune_client<T>(client, theta, arch, ds, spec, lr, epochs, batch_size, stream_seed);
    }

    if (client.test_idx.empty()) throw DomainError("fine_tune: client " + std::to_string(client.id) + " has no test data");
    const Tensor<T> test_images = gather_images<T>(ds, client.test_idx);
    const std::vector<int> test_labels = gather_labels(ds, client.test_idx);

    FineTuneResult<T> res;
    {
        const auto theta = generate_theta_values(phi, client.embeddings, arch);
        res.accuracy_pre = evaluate<T>(arch, theta, client.beta, test_images, test_labels);
    }
    if (epochs > 0 && !client.train_idx.empty()) {
        std::vector<Tensor<T>*> params;
        for (auto& v : client.embeddings) params.push_back(&v);
        params.push_back(&client.beta.weight);
        params.push_back(&client.beta.bias);
        detail::GraphBuilder<T> build = [&](Tape<T>& tape, Tensor<T> images, std::span<const int> labels) {
            detail::BatchGraph<T> bg;
            const HyperNetIds<T> ids = register_hypernet(tape, phi, false);
            std::vector<typename Tape<T>::Id> emb_ids;
            for (const auto& v : client.embeddings) {
                emb_ids.push_back(tape.leaf(v, true));
                bg.params.push_back(emb_ids.back());
            }
            const auto bw = tape.leaf(client.beta.weight, true);
            const auto bb = tape.leaf(client.beta.bias, true);
            bg.params.push_back(bw);
            bg.params.push_back(bb);
            const auto theta = generate_theta<T>(tape, ids, phi.cfg, emb_ids, arch);
            bg.loss = main_net_forward<T>(tape, arch, theta, bw, bb, std::move(images), labels).loss;
            return bg;
        };
        Rng rng(stream_seed);
        detail::run_local_sgd<T>(ds, client.train_idx, params, build, spec, lr, epochs, batch_size, rng,
                                 client.id);
    }
    {
        const auto theta = generate_theta_values(phi, client.embeddings, arch);
        res.accuracy_post = evaluate<T>(arch, theta, client.beta, test_images, test_labels);
    }
    return res;
}

// --- simulation ---------------------------------------------------------------

template <typename T>
class Simulation {
public:
    Simulation(RunConfig cfg, Dataset ds) : cfg_(std::move(cfg)), ds_(std::move(ds)), seeds_(cfg_.seed) {
        validate(cfg_);
        arch_ = build_arch(cfg_.arch, ds_.channels, ds_.num_classes);
        validate_tiling(arch_, cfg_.hypernet.basic_in, cfg_.hypernet.basic_out, cfg_.hypernet.kernel);

        if (cfg_.partition.kind == PartitionConfig::Kind::dirichlet) {
            part_ = dirichlet_partition(ds_, cfg_.clients, cfg_.partition.alpha, seeds_.derive("partition"));
        } else {
            part_ = group_partition(ds_, cfg_.partition.groups, cfg_.partition.clients_per_group,
                                    cfg_.partition.classes_per_client, seeds_.derive("partition"));
        }
        split_train_test(part_, ds_, cfg_.split_ratio, seeds_.derive("split"));

        if (cfg_.algorithm == Algorithm::hfn) {
            phi_ = init_hypernet<T>(cfg_.hypernet, seeds_.derive("init"));
        } else {
            Rng rng(seeds_.derive("init"));
            global_.conv_w = detail::init_conv_stack<T>(arch_, rng);
            global_.beta = init_beta<T>(arch_, rng);
        }

        // Every client starts from the same broadcast initialization (the
        // usual FL setup); identical clients therefore stay interchangeable
        // until their local data drives them apart.
        Rng beta_rng(seeds_.derive("client-init"));
        const BetaParams<T> beta0 = init_beta<T>(arch_, beta_rng);
        EmbeddingTable<T> table0;
        std::vector<Tensor<T>> conv0;
        if (cfg_.algorithm == Algorithm::hfn) {
            table0 = init_embeddings<T>(cfg_.hypernet, arch_, seeds_.derive("client-embed"));
        } else {
            Rng conv_rng(seeds_.derive("client-conv"));
            conv0 = detail::init_conv_stack<T>(arch_, conv_rng);
        }
        clients_.resize(static_cast<std::size_t>(cfg_.clients));
        for (int k = 0; k < cfg_.clients; ++k) {
            ClientState<T>& c = clients_[static_cast<std::size_t>(k)];
            c.id = k;
            c.train_idx = part_.clients[static_cast<std::size_t>(k)].train;
            c.test_idx = part_.clients[static_cast<std::size_t>(k)].test;
            c.group = part_.group_of.empty() ? -1 : part_.group_of[static_cast<std::size_t>(k)];
            c.beta = beta0;
            c.embeddings = table0;
            c.conv_w = conv0;
        }
    }

    const MainNetArch& arch() const { return arch_; }
    const Dataset& dataset() const { return ds_; }
    const Partition& partition() const { return part_; }
    const HyperNet<T>& phi() const { return phi_; }
    std::vector<ClientState<T>>& clients() { return clients_; }

    int64_t cpr() const {
        return cpr_params(to_string(cfg_.algorithm), param_count(cfg_.hypernet), conv_param_count(arch_),
                          classifier_param_count(arch_));
    }

    int64_t download_params() const {
        switch (cfg_.algorithm) {
            case Algorithm::hfn: return param_count(cfg_.hypernet);
            case Algorithm::fedavg:
            case Algorithm::fedprox: return conv_param_count(arch_) + classifier_param_count(arch_);
            case Algorithm::fedper: return conv_param_count(arch_);
            case Algorithm::local: return 0;
        }
        return 0;
    }

    RoundRecord run_round(int round) {
        const double lr = cfg_.optimizer.effective_lr(round);
        Rng sel_rng = seeds_.stream("selection", static_cast<uint64_t>(round));
        const std::vector<int> selected = select_clients(cfg_.clients, cfg_.participation, sel_rng);
        const int m = static_cast<int>(selected.size());

        RoundRecord rec;
        rec.round = round;
        rec.clients.resize(static_cast<std::size_t>(m));

        std::vector<Payload> uploads(static_cast<std::size_t>(m));
        std::vector<double> losses(static_cast<std::size_t>(m));
        std::vector<char> skipped(static_cast<std::size_t>(m), 0);

        int64_t measured_down = 0;
        if (cfg_.algorithm == Algorithm::hfn) {
            // Measured downlink: every selected client receives this wire copy.
            const std::vector<double> wire_down = serialize_phi(phi_);
            measured_down = static_cast<int64_t>(wire_down.size());
            detail::parallel_for(m, cfg_.parallel, [&](int i) {
                const int k = selected[static_cast<std::size_t>(i)];
                const HyperNet<T> phi_local = deserialize_phi<T>(cfg_.hypernet, wire_down);
                auto res = client_update_hfn<T>(clients_[static_cast<std::size_t>(k)], phi_local, arch_, ds_,
                                                cfg_.optimizer, lr, cfg_.local_epochs, cfg_.batch_size,
                                                seeds_.derive("batching", static_cast<uint64_t>(round)));
                losses[static_cast<std::size_t>(i)] = res.round_loss;
                skipped[static_cast<std::size_t>(i)] = res.skipped ? 1 : 0;
                if (!res.skipped) {
                    uploads[static_cast<std::size_t>(i)].values = serialize_phi(res.phi);
                    uploads[static_cast<std::size_t>(i)].provenance = Payload::kPhi;
                }
            });

            std::vector<std::vector<double>> payloads;
            std::vector<double> weights;
            for (int i = 0; i < m; ++i) {
                if (skipped[static_cast<std::size_t>(i)]) continue;
                const Payload& up = uploads[static_cast<std::size_t>(i)];
                if (up.provenance & (Payload::kEmbeddings | Payload::kClassifier))
                    throw ContractError("transmission audit: hfn payload tagged with local-only parameters");
                payloads.push_back(up.values);
                weights.push_back(static_cast<double>(clients_[static_cast<std::size_t>(selected[i])].n_k()));
            }
            if (!payloads.empty()) {
                phi_ = deserialize_phi<T>(cfg_.hypernet, aggregate_payloads(payloads, weights));
                if (!phi_finite(phi_))
                    throw NumericError("round " + std::to_string(round) + ": non-finite phi after aggregation");
            }
        } else {
            if (cfg_.algorithm != Algorithm::local) {
                const bool with_beta = cfg_.algorithm != Algorithm::fedper;
                measured_down = static_cast<int64_t>(
                    flatten_model<T>(global_.conv_w, with_beta ? &global_.beta : nullptr).size());
            }
            detail::parallel_for(m, cfg_.parallel, [&](int i) {
                const int k = selected[static_cast<std::size_t>(i)];
                auto res = client_update_baseline<T>(cfg_.algorithm, clients_[static_cast<std::size_t>(k)],
                                                     global_, arch_, ds_, cfg_.optimizer, lr, cfg_.local_epochs,
                                                     cfg_.batch_size, cfg_.fedprox_mu,
                                                     seeds_.derive("batching", static_cast<uint64_t>(round)));
                losses[static_cast<std::size_t>(i)] = res.round_loss;
                skipped[static_cast<std::size_t>(i)] = res.skipped ? 1 : 0;
                uploads[static_cast<std::size_t>(i)] = std::move(res.upload);
            });

            if (cfg_.algorithm != Algorithm::local) {
                std::vector<std::vector<double>> payloads;
                std::vector<double> weights;
                for (int i = 0; i < m; ++i) {
                    if (skipped[static_cast<std::size_t>(i)]) continue;
                    payloads.push_back(uploads[static_cast<std::size_t>(i)].values);
                    weights.push_back(static_cast<double>(clients_[static_cast<std::size_t>(selected[i])].n_k()));
                }
                if (!payloads.empty()) {
                    const std::vector<double> agg = aggregate_payloads(payloads, weights);
                    const bool with_beta = cfg_.algorithm != Algorithm::fedper;
                    unflatten_model<T>(agg, global_.conv_w, with_beta ? &global_.beta : nullptr);
                }
            }
        }

        if (measured_down != download_params())
            throw ContractError("transmission audit: measured downlink " + std::to_string(measured_down) +
                                " != accounted " + std::to_string(download_params()));
        const int64_t down = measured_down;
        int64_t round_total = 0;
        for (int i = 0; i < m; ++i) {
            ClientRoundStat& st = rec.clients[static_cast<std::size_t>(i)];
            const int k = selected[static_cast<std::size_t>(i)];
            st.client_id = k;
            st.loss = losses[static_cast<std::size_t>(i)];
            st.n_k = clients_[static_cast<std::size_t>(k)].n_k();
            st.skipped = skipped[static_cast<std::size_t>(i)] != 0;
            st.up_params = static_cast<int64_t>(uploads[static_cast<std::size_t>(i)].values.size());
            st.down_params = down;
            round_total += st.up_params + st.down_params;
        }
        cumulative_ += round_total;
        rec.cpr = m > 0 ? static_cast<double>(round_total) / m : 0.0;

        if (cfg_.eval_every > 0 && round % cfg_.eval_every == 0) rec.mean_eval_accuracy = mean_accuracy_now();
        return rec;
    }

    // Mean personalized accuracy of the currently deployed state, no
    // fine-tuning (used for accuracy-vs-round curves).
    double mean_accuracy_now() {
        std::vector<double> accs(clients_.size(), std::numeric_limits<double>::quiet_NaN());
        detail::parallel_for(static_cast<int>(clients_.size()), cfg_.parallel, [&](int k) {
            ClientState<T>& c = clients_[static_cast<std::size_t>(k)];
            if (c.test_idx.empty()) return;
            const auto theta = deployed_theta(c);
            const BetaParams<T>& beta = deployed_beta(c);
            accs[static_cast<std::size_t>(k)] =
                evaluate<T>(arch_, theta, beta, gather_images<T>(ds_, c.test_idx), gather_labels(ds_, c.test_idx));
        });
        double total = 0.0;
        int n = 0;
        for (double a : accs)
            if (!std::isnan(a)) {
                total += a;
                ++n;
            }
        return n > 0 ? total / n : 0.0;
    }

    void finalize(RunResult& result) {
        FinalSummary& s = result.summary;
        s.rounds = cfg_.rounds;
        s.clients = cfg_.clients;
        s.cpr = cpr();
        s.cumulative_params = cumulative_;
        s.accuracy.assign(clients_.size(), std::numeric_limits<double>::quiet_NaN());
        s.accuracy_pre.assign(clients_.size(), std::numeric_limits<double>::quiet_NaN());

        detail::parallel_for(static_cast<int>(clients_.size()), cfg_.parallel, [&](int k) {
            ClientState<T>& c = clients_[static_cast<std::size_t>(k)];
            if (c.test_idx.empty()) {
                log::warn("client " + std::to_string(k) + ": empty test split, excluded from accuracy");
                return;
            }
            const uint64_t seed = seeds_.derive("finetune");
            FineTuneResult<T> ft;
            switch (cfg_.algorithm) {
                case Algorithm::hfn:
                    ft = fine_tune_client_hfn<T>(c, phi_, arch_, ds_, cfg_.optimizer, cfg_.optimizer.lr,
                                                 cfg_.fine_tune_epochs, cfg_.batch_size, seed,
                                                 cfg_.fine_tune_embeddings);
                    break;
                case Algorithm::fedavg:
                case Algorithm::fedprox:
                    c.conv_w = global_.conv_w;
                    c.beta = global_.beta;
                    ft = fine_tune_client<T>(c, c.conv_w, arch_, ds_, cfg_.optimizer, cfg_.optimizer.lr,
                                             cfg_.fine_tune_epochs, cfg_.batch_size, seed);
                    break;
                case Algorithm::fedper:
                    c.conv_w = global_.conv_w;
                    ft = fine_tune_client<T>(c, c.conv_w, arch_, ds_, cfg_.optimizer, cfg_.optimizer.lr,
                                             cfg_.fine_tune_epochs, cfg_.batch_size, seed);
                    break;
                case Algorithm::local:
                    ft = fine_tune_client<T>(c, c.conv_w, arch_, ds_, cfg_.optimizer, cfg_.optimizer.lr,
                                             cfg_.fine_tune_epochs, cfg_.batch_size, seed);
                    break;
            }
            s.accuracy_pre[static_cast<std::size_t>(k)] = ft.accuracy_pre;
            s.accuracy[static_cast<std::size_t>(k)] = ft.accuracy_post;
        });

        std::vector<double> valid;
        for (double a : s.accuracy)
            if (!std::isnan(a)) valid.push_back(a);
        s.mean_accuracy = mean(valid);
        s.std_accuracy = stddev(valid);
        result.groups = part_.group_of;
    }

    // Flattened deployed weights per client (for similarity analysis).
    std::vector<std::vector<double>> personalized_thetas() {
        std::vector<std::vector<double>> out(clients_.size());
        detail::parallel_for(static_cast<int>(clients_.size()), cfg_.parallel, [&](int k) {
            const auto theta = deployed_theta(clients_[static_cast<std::size_t>(k)]);
            out[static_cast<std::size_t>(k)] = flatten_theta<T>(theta);
        });
        return out;
    }

    RunResult run(ResultWriter* writer = nullptr) {
        if (writer) {
            writer->write_manifest(config_echo(cfg_), cfg_.seed, cpr(), HFN_CODE_VERSION,
                                   kernels::isa_name(kernels::active_isa()));
        }
        RunResult result;
        result.rounds.reserve(static_cast<std::size_t>(cfg_.rounds));
        for (int t = 1; t <= cfg_.rounds; ++t) {
            RoundRecord rec;
            try {
                rec = run_round(t);
            } catch (const NumericError& e) {
                // rounds.csv is flushed per round, so partial results survive
                throw NumericError("round " + std::to_string(t) + ": " + e.what());
            }
            if (writer) writer->on_round(rec);
            result.rounds.push_back(std::move(rec));
        }
        finalize(result);
        if (cfg_.dump_thetas) result.thetas = personalized_thetas();
        if (writer) {
            writer->finalize_rounds();
            writer->write_summary(result.summary, config_echo(cfg_), cfg_.seed, HFN_CODE_VERSION);
            if (!result.thetas.empty()) writer->write_thetas(result.thetas);
            if (cfg_.eval_every > 0) {
                std::vector<std::pair<double, double>> pts;
                for (const RoundRecord& r : result.rounds)
                    if (r.mean_eval_accuracy) pts.emplace_back(r.round, *r.mean_eval_accuracy);
                writer->write_dat("accuracy_vs_round.dat", pts);
            }
        }
        return result;
    }

private:
    RunConfig cfg_;
    Dataset ds_;
    SeedSplitter seeds_;
    MainNetArch arch_;
    Partition part_;
    HyperNet<T> phi_;
    GlobalModel<T> global_;
    std::vector<ClientState<T>> clients_;
    int64_t cumulative_ = 0;

    std::vector<Tensor<T>> deployed_theta(const ClientState<T>& c) const {
        if (cfg_.algorithm == Algorithm::hfn) return generate_theta_values(phi_, c.embeddings, arch_);
        if (cfg_.algorithm == Algorithm::local) return c.conv_w;
        return global_.conv_w;
    }

    const BetaParams<T>& deployed_beta(const ClientState<T>& c) const {
        if (cfg_.algorithm == Algorithm::fedavg || cfg_.algorithm == Algorithm::fedprox) return global_.beta;
        return c.beta;
    }
};

template <typename T>
RunResult run_experiment(const RunConfig& cfg, Dataset ds, ResultWriter* writer = nullptr) {
    Simulation<T> sim(cfg, std::move(ds));
    return sim.run(writer);
}

inline Dataset build_dataset(const RunConfig& cfg) {
    if (cfg.dataset.kind == DatasetConfig::Kind::synth) {
        SeedSplitter seeds(cfg.seed);
        return synth_task(cfg.dataset.classes, cfg.dataset.samples_per_class, cfg.dataset.image_size,
                          cfg.dataset.noise_sigma, seeds.derive("dataset"), cfg.dataset.channels);
    }
    return load_idx(cfg.dataset.images_path, cfg.dataset.labels_path);
}

// Precision-dispatched entry point used by the CLI.
inline RunResult run_experiment(const RunConfig& cfg, ResultWriter* writer = nullptr) {
    Dataset ds = build_dataset(cfg);
    if (cfg.precision == "f32") return run_experiment<float>(cfg, std::move(ds), writer);
    return run_experiment<double>(cfg, std::move(ds), writer);
}

}  // namespace hfn
