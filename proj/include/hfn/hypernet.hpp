#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hfn/mainnet.hpp"
#include "hfn/rng.hpp"
#include "hfn/tape.hpp"

namespace hfn {

// Shape of the shared filter generator. hidden_size defaults to
// embedding_size when built through make().
struct HyperNetConfig {
    int embedding_size = 128;  // N_v
    int hidden_size = 128;     // d
    int basic_in = 16;         // input channels of one basic filter
    int basic_out = 16;        // output channels of one basic filter
    int kernel = 3;            // f

    static HyperNetConfig make(int embedding_size, int hidden_size, int basic_in, int basic_out, int kernel) {
        HyperNetConfig cfg{embedding_size, hidden_size > 0 ? hidden_size : embedding_size, basic_in, basic_out,
                           kernel};
        if (cfg.embedding_size < 1 || cfg.hidden_size < 1 || cfg.basic_in < 1 || cfg.basic_out < 1 || cfg.kernel < 1)
            throw ConfigError("hypernet: all config fields must be >= 1");
        return cfg;
    }
};

// Exact size of the transmitted parameter vector phi.
inline int64_t param_count(const HyperNetConfig& c) {
    const int64_t nv = c.embedding_size, d = c.hidden_size, ni = c.basic_in, no = c.basic_out, f = c.kernel;
    return nv * d * ni + d * ni + f * f * no * d + f * f * no;
}

// The shared two-layer linear generator phi = {W_i, B_i, W_out, B_out}.
// An embedding v maps through each W_i to a hidden vector a_i, and W_out
// expands every a_i into one f x (basic_out*f) slab of the basic filter.
template <typename T>
struct HyperNet {
    HyperNetConfig cfg;
    std::vector<Tensor<T>> w;  // basic_in matrices [d x N_v]
    std::vector<Tensor<T>> b;  // basic_in vectors [d]
    Tensor<T> w_out;           // [f, basic_out*f, d]
    Tensor<T> b_out;           // [f, basic_out*f]
};

template <typename T>
HyperNet<T> init_hypernet(const HyperNetConfig& cfg, uint64_t seed) {
    HyperNet<T> hn;
    hn.cfg = cfg;
    Rng rng(seed);
    const double w_bound = 1.0 / std::sqrt(static_cast<double>(cfg.embedding_size));
    const double wo_bound = 1.0 / std::sqrt(static_cast<double>(cfg.hidden_size));
    hn.w.reserve(cfg.basic_in);
    hn.b.reserve(cfg.basic_in);
    for (int i = 0; i < cfg.basic_in; ++i) {
        Tensor<T> wi({cfg.hidden_size, cfg.embedding_size});
        for (auto& v : wi.values()) v = static_cast<T>(rng.uniform(-w_bound, w_bound));
        hn.w.push_back(std::move(wi));
        hn.b.emplace_back(std::vector<int>{cfg.hidden_size});
    }
    hn.w_out = Tensor<T>({cfg.kernel, cfg.basic_out * cfg.kernel, cfg.hidden_size});
    for (auto& v : hn.w_out.values()) v = static_cast<T>(rng.uniform(-wo_bound, wo_bound));
    hn.b_out = Tensor<T>({cfg.kernel, cfg.basic_out * cfg.kernel});
    return hn;
}

// Parameter blocks in wire order [W_1..W_n, B_1..B_n, W_out, B_out].
template <typename T>
std::vector<Tensor<T>*> phi_blocks(HyperNet<T>& hn) {
    std::vector<Tensor<T>*> out;
    for (auto& t : hn.w) out.push_back(&t);
    for (auto& t : hn.b) out.push_back(&t);
    out.push_back(&hn.w_out);
    out.push_back(&hn.b_out);
    return out;
}

template <typename T>
std::vector<const Tensor<T>*> phi_blocks(const HyperNet<T>& hn) {
    std::vector<const Tensor<T>*> out;
    for (const auto& t : hn.w) out.push_back(&t);
    for (const auto& t : hn.b) out.push_back(&t);
    out.push_back(&hn.w_out);
    out.push_back(&hn.b_out);
    return out;
}

// Wire/aggregation format: flat array of 64-bit floats in block order,
// row-major within each block.
template <typename T>
std::vector<double> serialize_phi(const HyperNet<T>& hn) {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(param_count(hn.cfg)));
    for (const Tensor<T>* blk : phi_blocks(hn))
        for (const T& v : blk->values()) out.push_back(static_cast<double>(v));
    return out;
}

template <typename T>
HyperNet<T> deserialize_phi(const HyperNetConfig& cfg, std::span<const double> wire) {
    if (static_cast<int64_t>(wire.size()) != param_count(cfg))
        throw ContractError("phi payload length " + std::to_string(wire.size()) + " does not match config (" +
                            std::to_string(param_count(cfg)) + ")");
    HyperNet<T> hn = init_hypernet<T>(cfg, 0);
    std::size_t i = 0;
    for (Tensor<T>* blk : phi_blocks(hn))
        for (T& v : blk->values()) v = static_cast<T>(wire[i++]);
    return hn;
}

template <typename T>
bool phi_finite(const HyperNet<T>& hn) {
    for (const Tensor<T>* blk : phi_blocks(hn))
        if (!all_finite(*blk)) return false;
    return true;
}

// --- tape-side generation ---------------------------------------------------

template <typename T>
struct HyperNetIds {
    std::vector<typename Tape<T>::Id> w, b;
    typename Tape<T>::Id w_out, b_out;

    std::vector<typename Tape<T>::Id> all() const {
        std::vector<typename Tape<T>::Id> out(w);
        out.insert(out.end(), b.begin(), b.end());
        out.push_back(w_out);
        out.push_back(b_out);
        return out;
    }
};

template <typename T>
HyperNetIds<T> register_hypernet(Tape<T>& tape, const HyperNet<T>& hn, bool requires_grad) {
    HyperNetIds<T> ids;
    for (const auto& t : hn.w) ids.w.push_back(tape.leaf(t, requires_grad));
    for (const auto& t : hn.b) ids.b.push_back(tape.leaf(t, requires_grad));
    ids.w_out = tape.leaf(hn.w_out, requires_grad);
    ids.b_out = tape.leaf(hn.b_out, requires_grad);
    return ids;
}

// Reshaped views shared by all tiles generated on one tape.
template <typename T>
struct GeneratorCtx {
    HyperNetConfig cfg;
    HyperNetIds<T> ids;
    std::vector<typename Tape<T>::Id> b_cols;       // [d x 1]
    typename Tape<T>::Id w_out_mat, b_out_col;      // [f*basic_out*f x d], [f*basic_out*f x 1]
};

template <typename T>
GeneratorCtx<T> prepare_generator(Tape<T>& tape, const HyperNetIds<T>& ids, const HyperNetConfig& cfg) {
    GeneratorCtx<T> ctx;
    ctx.cfg = cfg;
    ctx.ids = ids;
    const int out_rows = cfg.kernel * cfg.basic_out * cfg.kernel;
    for (auto b : ids.b) ctx.b_cols.push_back(tape.reshape(b, {cfg.hidden_size, 1}));
    ctx.w_out_mat = tape.reshape(ids.w_out, {out_rows, cfg.hidden_size});
    ctx.b_out_col = tape.reshape(ids.b_out, {out_rows, 1});
    return ctx;
}

// One basic filter F from one embedding: a_i = W_i v + B_i (two-layer linear
// network, no activation), slab_i = W_out a_i + B_out, F = vstack(slab_i).
template <typename T>
typename Tape<T>::Id generate_basic_filter(Tape<T>& tape, const GeneratorCtx<T>& ctx,
                                           typename Tape<T>::Id embedding) {
    const HyperNetConfig& cfg = ctx.cfg;
    if (tape.value(embedding).size() != static_cast<std::size_t>(cfg.embedding_size))
        throw DimensionError("generate_basic_filter: embedding length != N_v");
    const auto v_col = tape.reshape(embedding, {cfg.embedding_size, 1});
    std::vector<typename Tape<T>::Id> slabs;
    slabs.reserve(cfg.basic_in);
    for (int i = 0; i < cfg.basic_in; ++i) {
        const auto a = tape.add(tape.matmul(ctx.ids.w[i], v_col), ctx.b_cols[i]);
        const auto slab_col = tape.add(tape.matmul(ctx.w_out_mat, a), ctx.b_out_col);
        slabs.push_back(tape.reshape(slab_col, {cfg.kernel, cfg.basic_out * cfg.kernel}));
    }
    return tape.vstack(slabs);
}

template <typename T>
typename Tape<T>::Id generate_basic_filter(Tape<T>& tape, const HyperNetIds<T>& ids, const HyperNetConfig& cfg,
                                           typename Tape<T>::Id embedding) {
    return generate_basic_filter(tape, prepare_generator(tape, ids, cfg), embedding);
}

// Per-client embedding table: one vector per tile, ordered by
// (conv layer, row-major tile index).
template <typename T>
using EmbeddingTable = std::vector<Tensor<T>>;

inline int64_t embedding_count(const HyperNetConfig& cfg, const MainNetArch& arch) {
    int64_t n = 0;
    for (const FilterLayout& lt : filter_layouts(arch, cfg.basic_in, cfg.basic_out, cfg.kernel))
        n += lt.tile_count();
    return n;
}

template <typename T>
EmbeddingTable<T> init_embeddings(const HyperNetConfig& cfg, const MainNetArch& arch, uint64_t seed) {
    Rng rng(seed);
    EmbeddingTable<T> table;
    const int64_t count = embedding_count(cfg, arch);
    table.reserve(static_cast<std::size_t>(count));
    for (int64_t i = 0; i < count; ++i) {
        Tensor<T> v({cfg.embedding_size});
        for (auto& x : v.values()) x = static_cast<T>(rng.normal());
        table.push_back(std::move(v));
    }
    return table;
}

// Full generated theta: one conv weight tensor per layer, assembled from the
// tile grid; a first layer with fewer input channels than basic_in slices the
// top rows of its tiles (handled by FilterLayout).
template <typename T>
std::vector<typename Tape<T>::Id> generate_theta(Tape<T>& tape, const HyperNetIds<T>& ids,
                                                 const HyperNetConfig& cfg,
                                                 std::span<const typename Tape<T>::Id> embeddings,
                                                 const MainNetArch& arch) {
    const auto layouts = filter_layouts(arch, cfg.basic_in, cfg.basic_out, cfg.kernel);
    int64_t expected = 0;
    for (const auto& lt : layouts) expected += lt.tile_count();
    if (static_cast<int64_t>(embeddings.size()) != expected)
        throw ContractError("generate_theta: embedding table has " + std::to_string(embeddings.size()) +
                            " tiles, arch needs " + std::to_string(expected));

    const GeneratorCtx<T> ctx = prepare_generator(tape, ids, cfg);
    std::vector<typename Tape<T>::Id> theta;
    theta.reserve(layouts.size());
    std::size_t next = 0;
    for (const FilterLayout& lt : layouts) {
        std::vector<typename Tape<T>::Id> tiles;
        tiles.reserve(static_cast<std::size_t>(lt.tile_count()));
        for (int j = 0; j < lt.tile_count(); ++j)
            tiles.push_back(generate_basic_filter(tape, ctx, embeddings[next++]));
        theta.push_back(tape.assemble_filters(tiles, lt));
    }
    return theta;
}

// Value-only generation (deployment/evaluation path).
template <typename T>
std::vector<Tensor<T>> generate_theta_values(const HyperNet<T>& hn, const EmbeddingTable<T>& table,
                                             const MainNetArch& arch) {
    Tape<T> tape;
    const auto ids = register_hypernet(tape, hn, false);
    std::vector<typename Tape<T>::Id> emb_ids;
    emb_ids.reserve(table.size());
    for (const auto& v : table) emb_ids.push_back(tape.leaf(v, false));
    const auto theta_ids = generate_theta<T>(tape, ids, hn.cfg, emb_ids, arch);
    std::vector<Tensor<T>> out;
    out.reserve(theta_ids.size());
    for (auto id : theta_ids) out.push_back(tape.value(id));
    return out;
}

template <typename T>
std::vector<double> flatten_theta(std::span<const Tensor<T>> theta) {
    std::vector<double> out;
    std::size_t total = 0;
    for (const auto& t : theta) total += t.size();
    out.reserve(total);
    for (const auto& t : theta)
        for (const T& v : t.values()) out.push_back(static_cast<double>(v));
    return out;
}

}  // namespace hfn
