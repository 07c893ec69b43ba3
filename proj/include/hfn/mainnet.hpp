#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hfn/rng.hpp"
#include "hfn/tape.hpp"

namespace hfn {

struct ConvSpec {
    int in_ch = 0;
    int out_ch = 0;
    int kernel = 3;
    int stride = 1;
};

// Declarative CNN: a chain of plain convs and two-conv residual blocks
// (identity shortcut, or zero-padded subsampling when shape changes),
// followed by global average pooling and a linear classifier. All conv
// weights are injected (theta); the classifier is the local beta head.
// No batch normalization and no conv bias.
struct MainNetArch {
    struct Block {
        ConvSpec conv_a;
        std::optional<ConvSpec> conv_b;  // present => residual block
        bool residual() const { return conv_b.has_value(); }
    };

    std::string preset;
    int in_channels = 0;
    int num_classes = 0;
    int classifier_in = 0;
    std::vector<Block> blocks;

    // Flattened conv order; defines the order of theta tensors and tiles.
    std::vector<ConvSpec> conv_layers() const {
        std::vector<ConvSpec> out;
        for (const Block& b : blocks) {
            out.push_back(b.conv_a);
            if (b.conv_b) out.push_back(*b.conv_b);
        }
        return out;
    }
};

inline MainNetArch make_arch(std::string preset, std::vector<MainNetArch::Block> blocks, int in_channels,
                             int num_classes) {
    if (blocks.empty()) throw ConfigError("arch: needs at least one conv block");
    if (in_channels < 1 || num_classes < 1) throw ConfigError("arch: channels and classes must be positive");
    int ch = in_channels;
    for (const auto& b : blocks) {
        if (b.conv_a.in_ch != ch)
            throw ConfigError("arch: conv expects " + std::to_string(b.conv_a.in_ch) + " input channels, chain has " +
                              std::to_string(ch));
        ch = b.conv_a.out_ch;
        if (b.conv_b) {
            if (b.conv_b->in_ch != ch) throw ConfigError("arch: residual block channels do not chain");
            if (b.conv_b->stride != 1) throw ConfigError("arch: second conv of a residual block must have stride 1");
            ch = b.conv_b->out_ch;
        }
    }
    MainNetArch arch;
    arch.preset = std::move(preset);
    arch.in_channels = in_channels;
    arch.num_classes = num_classes;
    arch.classifier_in = ch;
    arch.blocks = std::move(blocks);
    return arch;
}

// Presets. "desk" is the small three-conv net used for desk-scale runs; the
// named dataset presets follow the usual 16/32/64 (and 32/64/128) residual
// channel plans.
inline MainNetArch build_arch(const std::string& preset, int in_channels, int num_classes) {
    using Block = MainNetArch::Block;
    auto plain = [](int ic, int oc, int s = 1) { return Block{ConvSpec{ic, oc, 3, s}, std::nullopt}; };
    auto res = [](int ic, int oc, int s = 1) {
        return Block{ConvSpec{ic, oc, 3, s}, ConvSpec{oc, oc, 3, 1}};
    };

    std::vector<Block> blocks;
    if (preset == "desk") {
        blocks = {plain(in_channels, 16), plain(16, 16), plain(16, 32, 2)};
    } else if (preset == "mnist") {
        blocks = {plain(in_channels, 16), res(16, 16), res(16, 32, 2), res(32, 64, 2)};
    } else if (preset == "fmnist" || preset == "cifar10") {
        blocks.push_back(plain(in_channels, 16));
        for (int i = 0; i < 6; ++i) blocks.push_back(res(16, 16));
        blocks.push_back(res(16, 32, 2));
        for (int i = 0; i < 5; ++i) blocks.push_back(res(32, 32));
        blocks.push_back(res(32, 64, 2));
        for (int i = 0; i < 5; ++i) blocks.push_back(res(64, 64));
    } else if (preset == "cifar100") {
        blocks.push_back(plain(in_channels, 32));
        for (int i = 0; i < 6; ++i) blocks.push_back(res(32, 32));
        blocks.push_back(res(32, 64, 2));
        for (int i = 0; i < 5; ++i) blocks.push_back(res(64, 64));
        blocks.push_back(res(64, 128, 2));
        for (int i = 0; i < 5; ++i) blocks.push_back(res(128, 128));
    } else {
        throw ConfigError("arch: unknown preset \"" + preset + "\"");
    }
    return make_arch(preset, std::move(blocks), in_channels, num_classes);
}

// One FilterLayout per conv layer; throws ConfigError when a layer cannot be
// tiled from the basic filter (or its kernel size differs).
inline std::vector<FilterLayout> filter_layouts(const MainNetArch& arch, int n_in, int n_out, int f) {
    std::vector<FilterLayout> out;
    for (const ConvSpec& c : arch.conv_layers()) {
        if (c.kernel != f)
            throw ConfigError("arch: conv kernel " + std::to_string(c.kernel) +
                              " does not match basic filter kernel " + std::to_string(f));
        out.push_back(FilterLayout::make(c.in_ch, c.out_ch, n_in, n_out, c.kernel));
    }
    return out;
}

inline void validate_tiling(const MainNetArch& arch, int n_in, int n_out, int f) {
    (void)filter_layouts(arch, n_in, n_out, f);
}

inline int64_t conv_param_count(const MainNetArch& arch) {
    int64_t n = 0;
    for (const ConvSpec& c : arch.conv_layers())
        n += static_cast<int64_t>(c.out_ch) * c.in_ch * c.kernel * c.kernel;
    return n;
}

inline int64_t classifier_param_count(const MainNetArch& arch) {
    return static_cast<int64_t>(arch.num_classes) * arch.classifier_in + arch.num_classes;
}

// Classifier head (the only personalization parameters).
template <typename T>
struct BetaParams {
    Tensor<T> weight;  // [num_classes x classifier_in]
    Tensor<T> bias;    // [num_classes]
};

template <typename T>
BetaParams<T> init_beta(const MainNetArch& arch, Rng& rng) {
    BetaParams<T> beta;
    beta.weight = Tensor<T>({arch.num_classes, arch.classifier_in});
    beta.bias = Tensor<T>({arch.num_classes});
    const double bound = 1.0 / std::sqrt(static_cast<double>(arch.classifier_in));
    for (auto& v : beta.weight.values()) v = static_cast<T>(rng.uniform(-bound, bound));
    return beta;
}

template <typename T>
struct ForwardResult {
    typename Tape<T>::Id logits;
    typename Tape<T>::Id loss;
};

template <typename T>
typename Tape<T>::Id main_net_logits(Tape<T>& tape, const MainNetArch& arch,
                                     std::span<const typename Tape<T>::Id> theta,
                                     typename Tape<T>::Id beta_w, typename Tape<T>::Id beta_b,
                                     typename Tape<T>::Id images) {
    const auto convs = arch.conv_layers();
    if (theta.size() != convs.size())
        throw ContractError("forward: got " + std::to_string(theta.size()) + " conv weights for " +
                            std::to_string(convs.size()) + " layers");
    std::size_t li = 0;
    auto x = images;
    for (const MainNetArch::Block& blk : arch.blocks) {
        const int pad_a = blk.conv_a.kernel / 2;
        if (!blk.residual()) {
            x = tape.relu(tape.conv2d(x, theta[li++], blk.conv_a.stride, pad_a));
            continue;
        }
        auto t = tape.relu(tape.conv2d(x, theta[li++], blk.conv_a.stride, pad_a));
        t = tape.conv2d(t, theta[li++], 1, blk.conv_b->kernel / 2);
        auto shortcut = x;
        if (!tape.value(x).same_shape(tape.value(t)))
            shortcut = tape.zeropad_downsample(x, blk.conv_a.stride, blk.conv_b->out_ch);
        x = tape.relu(tape.add(t, shortcut));
    }
    const auto& feat = tape.value(x);
    x = tape.avg_pool2d(x, feat.extent(2), feat.extent(3));
    x = tape.flatten(x);
    return tape.linear(x, beta_w, beta_b);
}

template <typename T>
ForwardResult<T> main_net_forward(Tape<T>& tape, const MainNetArch& arch,
                                  std::span<const typename Tape<T>::Id> theta,
                                  typename Tape<T>::Id beta_w, typename Tape<T>::Id beta_b,
                                  Tensor<T> images, std::span<const int> labels) {
    const auto img_id = tape.leaf(std::move(images), false);
    const auto logits = main_net_logits(tape, arch, theta, beta_w, beta_b, img_id);
    const auto loss = tape.softmax_cross_entropy(logits, labels);
    return {logits, loss};
}

// Argmax with ties broken toward the lowest class index.
template <typename T>
int argmax_row(const T* row, int n) {
    int best = 0;
    for (int j = 1; j < n; ++j)
        if (row[j] > row[best]) best = j;
    return best;
}

// Personalized accuracy of (theta, beta) on an evaluation set. Runs in
// chunks to bound tape memory.
template <typename T>
double evaluate(const MainNetArch& arch, std::span<const Tensor<T>> theta, const BetaParams<T>& beta,
                const Tensor<T>& images, std::span<const int> labels, int chunk = 128) {
    const int n = images.extent(0);
    if (n == 0 || labels.empty()) throw DomainError("evaluate: empty dataset");
    if (static_cast<int>(labels.size()) != n) throw ContractError("evaluate: image/label count mismatch");

    const int c = images.extent(1), h = images.extent(2), w = images.extent(3);
    const std::size_t img_sz = static_cast<std::size_t>(c) * h * w;
    int correct = 0;
    for (int start = 0; start < n; start += chunk) {
        const int m = std::min(chunk, n - start);
        Tensor<T> batch({m, c, h, w});
        std::copy(images.data() + start * img_sz, images.data() + (start + m) * img_sz, batch.data());
        Tape<T> tape;
        std::vector<typename Tape<T>::Id> theta_ids;
        theta_ids.reserve(theta.size());
        for (const auto& t : theta) theta_ids.push_back(tape.leaf(t, false));
        const auto bw = tape.leaf(beta.weight, false);
        const auto bb = tape.leaf(beta.bias, false);
        const auto img_id = tape.leaf(std::move(batch), false);
        const auto logits = main_net_logits<T>(tape, arch, theta_ids, bw, bb, img_id);
        const Tensor<T>& lv = tape.value(logits);
        for (int r = 0; r < m; ++r)
            if (argmax_row(lv.data() + static_cast<std::size_t>(r) * lv.cols(), lv.cols()) == labels[start + r])
                ++correct;
    }
    return static_cast<double>(correct) / n;
}

}  // namespace hfn
