#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hfn/errors.hpp"
#include "hfn/kernels.hpp"
#include "hfn/tensor.hpp"

namespace hfn {

// Block layout of one conv layer's weights as a grid of basic-filter tiles.
// Tile (r, c) covers input-channel block r and output-channel block c and is
// numbered j = r * block_cols + c (row-major). A first layer whose input
// channel count is below n_in uses a single block row of tiles and only their
// top c_in input-channel rows.
struct FilterLayout {
    int c_in = 0, c_out = 0;
    int n_in = 0, n_out = 0;
    int f = 0;

    bool sliced() const { return c_in < n_in; }
    int block_rows() const { return sliced() ? 1 : c_in / n_in; }
    int block_cols() const { return c_out / n_out; }
    int tile_count() const { return block_rows() * block_cols(); }

    static FilterLayout make(int c_in, int c_out, int n_in, int n_out, int f) {
        if (c_in <= 0 || c_out <= 0 || n_in <= 0 || n_out <= 0 || f <= 0)
            throw ConfigError("filter layout: all dimensions must be positive");
        if (c_in >= n_in && c_in % n_in != 0)
            throw ConfigError("filter layout: input channels " + std::to_string(c_in) +
                              " are not a multiple of the basic filter's " + std::to_string(n_in));
        if (c_out % n_out != 0)
            throw ConfigError("filter layout: output channels " + std::to_string(c_out) +
                              " are not a multiple of the basic filter's " + std::to_string(n_out));
        return FilterLayout{c_in, c_out, n_in, n_out, f};
    }
};

template <typename T>
class Tape;

// Result of Tape::backward. Leaves that the loss never reached report a zero
// gradient of the right shape.
template <typename T>
class Gradients {
public:
    const Tensor<T>& wrt(int id) const {
        auto& slot = grads_[static_cast<std::size_t>(id)];
        if (!slot.has_value()) slot.emplace(shapes_[static_cast<std::size_t>(id)]);
        return *slot;
    }

    bool reached(int id) const { return grads_[static_cast<std::size_t>(id)].has_value(); }

private:
    friend class Tape<T>;
    mutable std::vector<std::optional<Tensor<T>>> grads_;
    std::vector<std::vector<int>> shapes_;
};

// Reverse-mode tape. Nodes are appended in creation order (so the order is
// already topological); backward walks them once in reverse and does not
// mutate the tape, so it can be replayed.
template <typename T>
class Tape {
public:
    using Id = int;

    Tape() { nodes_.reserve(64); }

    Id leaf(Tensor<T> value) {
        const bool rg = value.requires_grad;
        return leaf(std::move(value), rg);
    }

    Id leaf(Tensor<T> value, bool requires_grad) {
        Node n;
        n.op = Op::leaf;
        n.requires_grad = requires_grad;
        n.val = std::move(value);
        return push(std::move(n));
    }

    Id matmul(Id a, Id b) {
        const Tensor<T>& A = value(a);
        const Tensor<T>& B = value(b);
        if (A.ndim() != 2 || B.ndim() != 2)
            throw DimensionError("matmul: operands must be 2-d");
        if (A.cols() != B.rows())
            throw DimensionError("matmul: inner extents differ, " + shape_str(A.shape()) + " vs " +
                                 shape_str(B.shape()));
        Node n;
        n.op = Op::matmul;
        n.in = {a, b};
        n.val = Tensor<T>({A.rows(), B.cols()});
        kernels::gemm_nn_acc(A.rows(), A.cols(), B.cols(), A.data(), B.data(), n.val.data());
        return push(std::move(n));
    }

    Id transpose(Id a) {
        const Tensor<T>& A = value(a);
        if (A.ndim() != 2) throw DimensionError("transpose: operand must be 2-d");
        Node n;
        n.op = Op::transpose;
        n.in = {a, kNoId};
        n.val = Tensor<T>({A.cols(), A.rows()});
        kernels::transpose(A.rows(), A.cols(), A.data(), n.val.data());
        return push(std::move(n));
    }

    Id add(Id a, Id b) {
        const Tensor<T>& A = value(a);
        const Tensor<T>& B = value(b);
        if (!A.same_shape(B)) throw DimensionError("add: shape mismatch");
        Node n;
        n.op = Op::add;
        n.in = {a, b};
        n.val = A;
        n.val.requires_grad = false;
        kernels::axpy(B.size(), T(1), B.data(), n.val.data());
        return push(std::move(n));
    }

    Id sub(Id a, Id b) {
        const Tensor<T>& A = value(a);
        const Tensor<T>& B = value(b);
        if (!A.same_shape(B)) throw DimensionError("sub: shape mismatch");
        Node n;
        n.op = Op::sub;
        n.in = {a, b};
        n.val = A;
        n.val.requires_grad = false;
        kernels::axpy(B.size(), T(-1), B.data(), n.val.data());
        return push(std::move(n));
    }

    Id scale(Id a, T factor) {
        const Tensor<T>& A = value(a);
        Node n;
        n.op = Op::scale;
        n.in = {a, kNoId};
        n.scalar_aux = factor;
        n.val = Tensor<T>(A.shape());
        kernels::axpy(A.size(), factor, A.data(), n.val.data());
        return push(std::move(n));
    }

    // x[m x n] + bias[n], broadcast over rows.
    Id add_rowvec(Id x, Id bias) {
        const Tensor<T>& X = value(x);
        const Tensor<T>& B = value(bias);
        if (X.ndim() != 2 || B.ndim() != 1 || B.extent(0) != X.cols())
            throw DimensionError("add_rowvec: need x[m x n] and bias[n]");
        Node n;
        n.op = Op::add_rowvec;
        n.in = {x, bias};
        n.val = X;
        n.val.requires_grad = false;
        for (int r = 0; r < X.rows(); ++r)
            kernels::axpy(static_cast<std::size_t>(X.cols()), T(1), B.data(),
                          n.val.data() + static_cast<std::size_t>(r) * X.cols());
        return push(std::move(n));
    }

    Id relu(Id x) {
        const Tensor<T>& X = value(x);
        Node n;
        n.op = Op::relu;
        n.in = {x, kNoId};
        n.val = Tensor<T>(X.shape());
        kernels::relu_forward(X.size(), X.data(), n.val.data());
        return push(std::move(n));
    }

    // input [N x C x H x W], kernel [Co x C x f x f]; cross-correlation, no bias.
    Id conv2d(Id input, Id kernel, int stride, int padding) {
        const Tensor<T>& X = value(input);
        const Tensor<T>& K = value(kernel);
        if (X.ndim() != 4 || K.ndim() != 4) throw DimensionError("conv2d: need 4-d input and kernel");
        if (K.extent(1) != X.extent(1))
            throw DimensionError("conv2d: kernel expects " + std::to_string(K.extent(1)) +
                                 " input channels, got " + std::to_string(X.extent(1)));
        if (K.extent(2) != K.extent(3)) throw DimensionError("conv2d: kernel must be square");
        if (stride < 1) throw DimensionError("conv2d: stride must be >= 1");
        if (padding < 0) throw DimensionError("conv2d: padding must be >= 0");
        const int f = K.extent(2);
        const int oh = (X.extent(2) + 2 * padding - f) / stride + 1;
        const int ow = (X.extent(3) + 2 * padding - f) / stride + 1;
        if (X.extent(2) + 2 * padding < f || X.extent(3) + 2 * padding < f)
            throw DimensionError("conv2d: kernel larger than padded input");

        Node n;
        n.op = Op::conv2d;
        n.in = {input, kernel};
        n.i0 = stride;
        n.i1 = padding;
        n.val = Tensor<T>({X.extent(0), K.extent(0), oh, ow});

        const int ck = X.extent(1) * f * f;
        const int patches = oh * ow;
        std::vector<T> col(static_cast<std::size_t>(ck) * patches);
        for (int img = 0; img < X.extent(0); ++img) {
            im2col(X, img, f, stride, padding, oh, ow, col.data());
            kernels::gemm_nn_acc(K.extent(0), ck, patches, K.data(), col.data(),
                                 n.val.data() + static_cast<std::size_t>(img) * K.extent(0) * patches);
        }
        return push(std::move(n));
    }

    // Non-overlapping average pooling; window extents must divide the input.
    Id avg_pool2d(Id x, int window_h, int window_w) {
        const Tensor<T>& X = value(x);
        if (X.ndim() != 4) throw DimensionError("avg_pool2d: need 4-d input");
        if (window_h < 1 || window_w < 1) throw DimensionError("avg_pool2d: window must be >= 1");
        if (X.extent(2) % window_h != 0 || X.extent(3) % window_w != 0)
            throw DimensionError("avg_pool2d: window " + std::to_string(window_h) + "x" +
                                 std::to_string(window_w) + " does not divide " + shape_str(X.shape()));
        const int oh = X.extent(2) / window_h;
        const int ow = X.extent(3) / window_w;
        Node n;
        n.op = Op::avg_pool2d;
        n.in = {x, kNoId};
        n.i0 = window_h;
        n.i1 = window_w;
        n.val = Tensor<T>({X.extent(0), X.extent(1), oh, ow});
        const T inv = T(1) / static_cast<T>(window_h * window_w);
        const int H = X.extent(2), W = X.extent(3);
        std::size_t out_i = 0;
        for (int img = 0; img < X.extent(0); ++img) {
            for (int c = 0; c < X.extent(1); ++c) {
                const T* plane = X.data() + (static_cast<std::size_t>(img) * X.extent(1) + c) * H * W;
                for (int i = 0; i < oh; ++i) {
                    for (int j = 0; j < ow; ++j) {
                        T acc = T(0);
                        for (int a = 0; a < window_h; ++a)
                            for (int b = 0; b < window_w; ++b)
                                acc += plane[(i * window_h + a) * W + (j * window_w + b)];
                        n.val[out_i++] = acc * inv;
                    }
                }
            }
        }
        return push(std::move(n));
    }

    Id reshape(Id x, std::vector<int> shape) {
        const Tensor<T>& X = value(x);
        if (shape_numel(shape) != X.size())
            throw DimensionError("reshape: " + shape_str(X.shape()) + " to " + shape_str(shape) +
                                 " changes element count");
        Node n;
        n.op = Op::reshape;
        n.in = {x, kNoId};
        n.val = Tensor<T>(std::move(shape), X.values());
        return push(std::move(n));
    }

    Id flatten(Id x) {
        const Tensor<T>& X = value(x);
        if (X.ndim() < 1) throw DimensionError("flatten: need at least 1-d");
        const int rows = X.extent(0);
        const int cols = static_cast<int>(X.size()) / rows;
        return reshape(x, {rows, cols});
    }

    // Stack 2-d blocks vertically (equal column counts).
    Id vstack(std::span<const Id> parts) {
        if (parts.empty()) throw ContractError("vstack: no inputs");
        int cols = value(parts[0]).cols();
        int rows = 0;
        for (Id p : parts) {
            const Tensor<T>& P = value(p);
            if (P.ndim() != 2 || P.cols() != cols) throw DimensionError("vstack: parts must be 2-d with equal columns");
            rows += P.rows();
        }
        Node n;
        n.op = Op::vstack;
        n.many.assign(parts.begin(), parts.end());
        n.val = Tensor<T>({rows, cols});
        T* out = n.val.data();
        for (Id p : parts) {
            const Tensor<T>& P = value(p);
            std::copy(P.data(), P.data() + P.size(), out);
            out += P.size();
        }
        return push(std::move(n));
    }

    // Tiles [(n_in*f) x (n_out*f)] -> conv weights [c_out x c_in x f x f] via
    // the block grid: weight[o][i][a][b] = F[i*f + a, o*f + b] where F is the
    // stacked big matrix. Pure index mapping; backward is the exact scatter.
    Id assemble_filters(std::span<const Id> tiles, const FilterLayout& layout) {
        if (static_cast<int>(tiles.size()) != layout.tile_count())
            throw ContractError("assemble_filters: expected " + std::to_string(layout.tile_count()) +
                                " tiles, got " + std::to_string(tiles.size()));
        for (Id t : tiles) {
            const Tensor<T>& tile = value(t);
            if (tile.ndim() != 2 || tile.rows() != layout.n_in * layout.f || tile.cols() != layout.n_out * layout.f)
                throw DimensionError("assemble_filters: tile shape " + shape_str(tile.shape()) +
                                     " does not match basic filter");
        }
        Node n;
        n.op = Op::assemble;
        n.many.assign(tiles.begin(), tiles.end());
        n.layout = layout;
        n.val = Tensor<T>({layout.c_out, layout.c_in, layout.f, layout.f});
        const int f = layout.f;
        const int tile_cols = layout.n_out * f;
        std::size_t w = 0;
        for (int o = 0; o < layout.c_out; ++o) {
            const int bc = o / layout.n_out;
            const int ol = o % layout.n_out;
            for (int i = 0; i < layout.c_in; ++i) {
                const int br = layout.sliced() ? 0 : i / layout.n_in;
                const int il = layout.sliced() ? i : i % layout.n_in;
                const Tensor<T>& tile = value(n.many[static_cast<std::size_t>(br) * layout.block_cols() + bc]);
                for (int a = 0; a < f; ++a)
                    for (int b = 0; b < f; ++b)
                        n.val[w++] = tile[static_cast<std::size_t>(il * f + a) * tile_cols + (ol * f + b)];
            }
        }
        return push(std::move(n));
    }

    // Parameter-free residual shortcut: spatial subsampling by `stride` plus
    // zero padding up to out_channels. Output extents match a stride-`stride`
    // 3x3/pad-1 convolution.
    Id zeropad_downsample(Id x, int stride, int out_channels) {
        const Tensor<T>& X = value(x);
        if (X.ndim() != 4) throw DimensionError("zeropad_downsample: need 4-d input");
        if (out_channels < X.extent(1))
            throw DimensionError("zeropad_downsample: cannot drop channels");
        if (stride < 1) throw DimensionError("zeropad_downsample: stride must be >= 1");
        const int oh = (X.extent(2) - 1) / stride + 1;
        const int ow = (X.extent(3) - 1) / stride + 1;
        Node n;
        n.op = Op::zeropad_downsample;
        n.in = {x, kNoId};
        n.i0 = stride;
        n.val = Tensor<T>({X.extent(0), out_channels, oh, ow});
        const int H = X.extent(2), W = X.extent(3);
        for (int img = 0; img < X.extent(0); ++img) {
            for (int c = 0; c < X.extent(1); ++c) {
                const T* src = X.data() + (static_cast<std::size_t>(img) * X.extent(1) + c) * H * W;
                T* dst = n.val.data() + (static_cast<std::size_t>(img) * out_channels + c) * oh * ow;
                for (int i = 0; i < oh; ++i)
                    for (int j = 0; j < ow; ++j) dst[i * ow + j] = src[(i * stride) * W + (j * stride)];
            }
        }
        return push(std::move(n));
    }

    // Mean softmax cross-entropy over the batch; max-subtracted for stability.
    Id softmax_cross_entropy(Id logits, std::span<const int> labels) {
        const Tensor<T>& L = value(logits);
        if (L.ndim() != 2) throw DimensionError("softmax_cross_entropy: logits must be [batch x classes]");
        const int m = L.rows(), c = L.cols();
        if (static_cast<int>(labels.size()) != m)
            throw DimensionError("softmax_cross_entropy: got " + std::to_string(labels.size()) +
                                 " labels for " + std::to_string(m) + " rows");
        for (int r = 0; r < m; ++r)
            if (labels[r] < 0 || labels[r] >= c)
                throw DomainError("softmax_cross_entropy: label " + std::to_string(labels[r]) +
                                  " outside [0, " + std::to_string(c) + ")");
        Node n;
        n.op = Op::sce;
        n.in = {logits, kNoId};
        n.labels.assign(labels.begin(), labels.end());
        n.saved = Tensor<T>({m, c});  // softmax probabilities
        double total = 0.0;
        for (int r = 0; r < m; ++r) {
            const T* row = L.data() + static_cast<std::size_t>(r) * c;
            T* prow = n.saved.data() + static_cast<std::size_t>(r) * c;
            T mx = row[0];
            for (int j = 1; j < c; ++j) mx = row[j] > mx ? row[j] : mx;
            T denom = T(0);
            for (int j = 0; j < c; ++j) {
                prow[j] = std::exp(row[j] - mx);
                denom += prow[j];
            }
            for (int j = 0; j < c; ++j) prow[j] /= denom;
            total += static_cast<double>(std::log(denom)) - static_cast<double>(row[labels[r]] - mx);
        }
        n.val = Tensor<T>::scalar(static_cast<T>(total / m));
        return push(std::move(n));
    }

    Id sum(Id x) {
        const Tensor<T>& X = value(x);
        Node n;
        n.op = Op::sum;
        n.in = {x, kNoId};
        n.val = Tensor<T>::scalar(kernels::sum(X.size(), X.data()));
        return push(std::move(n));
    }

    Id sumsq(Id x) {
        const Tensor<T>& X = value(x);
        Node n;
        n.op = Op::sumsq;
        n.in = {x, kNoId};
        n.val = Tensor<T>::scalar(kernels::dot(X.size(), X.data(), X.data()));
        return push(std::move(n));
    }

    // x[m x in] * w[out x in]^T + b[out]
    Id linear(Id x, Id w, Id b) { return add_rowvec(matmul(x, transpose(w)), b); }

    const Tensor<T>& value(Id id) const { return nodes_[check(id)].val; }

    std::size_t node_count() const { return nodes_.size(); }

    bool requires_grad(Id id) const { return nodes_[check(id)].requires_grad; }

    Gradients<T> backward(Id loss) const {
        if (value(loss).size() != 1)
            throw ContractError("backward: loss must be scalar, got " + shape_str(value(loss).shape()));
        Gradients<T> out;
        out.grads_.resize(nodes_.size());
        out.shapes_.reserve(nodes_.size());
        for (const Node& n : nodes_) out.shapes_.push_back(n.val.shape());
        out.grads_[static_cast<std::size_t>(loss)] = Tensor<T>::scalar(T(1));

        for (Id id = loss; id >= 0; --id) {
            const auto& slot = out.grads_[static_cast<std::size_t>(id)];
            if (!slot.has_value()) continue;
            backprop_node(nodes_[static_cast<std::size_t>(id)], *slot, out);
        }
        return out;
    }

private:
    enum class Op : uint8_t {
        leaf,
        matmul,
        transpose,
        add,
        sub,
        scale,
        add_rowvec,
        relu,
        conv2d,
        avg_pool2d,
        reshape,
        vstack,
        assemble,
        zeropad_downsample,
        sce,
        sum,
        sumsq,
    };

    static constexpr Id kNoId = -1;

    struct Node {
        Op op = Op::leaf;
        std::array<Id, 2> in{kNoId, kNoId};
        std::vector<Id> many;
        Tensor<T> val;
        Tensor<T> saved;
        std::vector<int> labels;
        FilterLayout layout{};
        T scalar_aux{};
        int i0 = 0, i1 = 0;  // stride/padding or pooling window
        bool requires_grad = false;
    };

    std::vector<Node> nodes_;

    Id push(Node n) {
        nodes_.push_back(std::move(n));
        return static_cast<Id>(nodes_.size() - 1);
    }

    Id check(Id id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
            throw ContractError("tape: bad node id " + std::to_string(id));
        return id;
    }

    Tensor<T>& grad_buf(Gradients<T>& g, Id id) const {
        auto& slot = g.grads_[static_cast<std::size_t>(id)];
        if (!slot.has_value()) slot.emplace(nodes_[static_cast<std::size_t>(id)].val.shape());
        return *slot;
    }

    void im2col(const Tensor<T>& x, int img, int f, int stride, int pad, int oh, int ow, T* col) const {
        const int C = x.extent(1), H = x.extent(2), W = x.extent(3);
        const T* base = x.data() + static_cast<std::size_t>(img) * C * H * W;
        std::size_t idx = 0;
        for (int c = 0; c < C; ++c) {
            const T* plane = base + static_cast<std::size_t>(c) * H * W;
            for (int ky = 0; ky < f; ++ky) {
                for (int kx = 0; kx < f; ++kx) {
                    for (int i = 0; i < oh; ++i) {
                        const int y = i * stride + ky - pad;
                        for (int j = 0; j < ow; ++j) {
                            const int xx = j * stride + kx - pad;
                            col[idx++] = (y >= 0 && y < H && xx >= 0 && xx < W) ? plane[y * W + xx] : T(0);
                        }
                    }
                }
            }
        }
    }

    void col2im_acc(const T* col, int C, int H, int W, int f, int stride, int pad, int oh, int ow, T* img) const {
        std::size_t idx = 0;
        for (int c = 0; c < C; ++c) {
            T* plane = img + static_cast<std::size_t>(c) * H * W;
            for (int ky = 0; ky < f; ++ky) {
                for (int kx = 0; kx < f; ++kx) {
                    for (int i = 0; i < oh; ++i) {
                        const int y = i * stride + ky - pad;
                        for (int j = 0; j < ow; ++j) {
                            const int xx = j * stride + kx - pad;
                            if (y >= 0 && y < H && xx >= 0 && xx < W) plane[y * W + xx] += col[idx];
                            ++idx;
                        }
                    }
                }
            }
        }
    }

    void backprop_node(const Node& n, const Tensor<T>& g, Gradients<T>& out) const {
        switch (n.op) {
            case Op::leaf:
                break;
            case Op::matmul: {
                const Tensor<T>& A = nodes_[n.in[0]].val;
                const Tensor<T>& B = nodes_[n.in[1]].val;
                // dA += g * B^T
                std::vector<T> bt(B.size());
                kernels::transpose(B.rows(), B.cols(), B.data(), bt.data());
                kernels::gemm_nn_acc(A.rows(), B.cols(), A.cols(), g.data(), bt.data(),
                                     grad_buf(out, n.in[0]).data());
                // dB += A^T * g
                std::vector<T> at(A.size());
                kernels::transpose(A.rows(), A.cols(), A.data(), at.data());
                kernels::gemm_nn_acc(B.rows(), A.rows(), B.cols(), at.data(), g.data(),
                                     grad_buf(out, n.in[1]).data());
                break;
            }
            case Op::transpose: {
                const Tensor<T>& X = nodes_[n.in[0]].val;
                std::vector<T> gt(g.size());
                kernels::transpose(g.rows(), g.cols(), g.data(), gt.data());
                kernels::axpy(X.size(), T(1), gt.data(), grad_buf(out, n.in[0]).data());
                break;
            }
            case Op::add:
                kernels::axpy(g.size(), T(1), g.data(), grad_buf(out, n.in[0]).data());
                kernels::axpy(g.size(), T(1), g.data(), grad_buf(out, n.in[1]).data());
                break;
            case Op::sub:
                kernels::axpy(g.size(), T(1), g.data(), grad_buf(out, n.in[0]).data());
                kernels::axpy(g.size(), T(-1), g.data(), grad_buf(out, n.in[1]).data());
                break;
            case Op::scale:
                kernels::axpy(g.size(), n.scalar_aux, g.data(), grad_buf(out, n.in[0]).data());
                break;
            case Op::add_rowvec: {
                kernels::axpy(g.size(), T(1), g.data(), grad_buf(out, n.in[0]).data());
                Tensor<T>& db = grad_buf(out, n.in[1]);
                for (int r = 0; r < g.rows(); ++r)
                    kernels::axpy(static_cast<std::size_t>(g.cols()), T(1),
                                  g.data() + static_cast<std::size_t>(r) * g.cols(), db.data());
                break;
            }
            case Op::relu: {
                const Tensor<T>& X = nodes_[n.in[0]].val;
                kernels::relu_backward_acc(X.size(), X.data(), g.data(), grad_buf(out, n.in[0]).data());
                break;
            }
            case Op::conv2d: {
                const Tensor<T>& X = nodes_[n.in[0]].val;
                const Tensor<T>& K = nodes_[n.in[1]].val;
                const int stride = n.i0, pad = n.i1;
                const int f = K.extent(2);
                const int oh = n.val.extent(2), ow = n.val.extent(3);
                const int ck = X.extent(1) * f * f;
                const int patches = oh * ow;
                Tensor<T>& dx = grad_buf(out, n.in[0]);
                Tensor<T>& dk = grad_buf(out, n.in[1]);
                std::vector<T> col(static_cast<std::size_t>(ck) * patches);
                std::vector<T> colt(col.size());
                std::vector<T> colgrad(col.size());
                std::vector<T> kt(K.size());
                kernels::transpose(K.extent(0), ck, K.data(), kt.data());
                for (int img = 0; img < X.extent(0); ++img) {
                    const T* g_img = g.data() + static_cast<std::size_t>(img) * K.extent(0) * patches;
                    // dK += g_img * col^T
                    im2col(X, img, f, stride, pad, oh, ow, col.data());
                    kernels::transpose(ck, patches, col.data(), colt.data());
                    kernels::gemm_nn_acc(K.extent(0), patches, ck, g_img, colt.data(), dk.data());
                    // dX += col2im(K^T * g_img)
                    std::fill(colgrad.begin(), colgrad.end(), T(0));
                    kernels::gemm_nn_acc(ck, K.extent(0), patches, kt.data(), g_img, colgrad.data());
                    col2im_acc(colgrad.data(), X.extent(1), X.extent(2), X.extent(3), f, stride, pad, oh, ow,
                               dx.data() + static_cast<std::size_t>(img) * X.extent(1) * X.extent(2) * X.extent(3));
                }
                break;
            }
            case Op::avg_pool2d: {
                const Tensor<T>& X = nodes_[n.in[0]].val;
                Tensor<T>& dx = grad_buf(out, n.in[0]);
                const int wh = n.i0, ww = n.i1;
                const T inv = T(1) / static_cast<T>(wh * ww);
                const int H = X.extent(2), W = X.extent(3);
                const int oh = n.val.extent(2), ow = n.val.extent(3);
                std::size_t gi = 0;
                for (int img = 0; img < X.extent(0); ++img) {
                    for (int c = 0; c < X.extent(1); ++c) {
                        T* plane = dx.data() + (static_cast<std::size_t>(img) * X.extent(1) + c) * H * W;
                        for (int i = 0; i < oh; ++i)
                            for (int j = 0; j < ow; ++j) {
                                const T gv = g[gi++] * inv;
                                for (int a = 0; a < wh; ++a)
                                    for (int b = 0; b < ww; ++b) plane[(i * wh + a) * W + (j * ww + b)] += gv;
                            }
                    }
                }
                break;
            }
            case Op::reshape:
                kernels::axpy(g.size(), T(1), g.data(), grad_buf(out, n.in[0]).data());
                break;
            case Op::vstack: {
                const T* gp = g.data();
                for (Id part : n.many) {
                    Tensor<T>& dp = grad_buf(out, part);
                    kernels::axpy(dp.size(), T(1), gp, dp.data());
                    gp += dp.size();
                }
                break;
            }
            case Op::assemble: {
                const FilterLayout& lt = n.layout;
                const int f = lt.f;
                const int tile_cols = lt.n_out * f;
                std::size_t w = 0;
                for (int o = 0; o < lt.c_out; ++o) {
                    const int bc = o / lt.n_out;
                    const int ol = o % lt.n_out;
                    for (int i = 0; i < lt.c_in; ++i) {
                        const int br = lt.sliced() ? 0 : i / lt.n_in;
                        const int il = lt.sliced() ? i : i % lt.n_in;
                        Tensor<T>& dt = grad_buf(out, n.many[static_cast<std::size_t>(br) * lt.block_cols() + bc]);
                        for (int a = 0; a < f; ++a)
                            for (int b = 0; b < f; ++b)
                                dt[static_cast<std::size_t>(il * f + a) * tile_cols + (ol * f + b)] += g[w++];
                    }
                }
                break;
            }
            case Op::zeropad_downsample: {
                const Tensor<T>& X = nodes_[n.in[0]].val;
                Tensor<T>& dx = grad_buf(out, n.in[0]);
                const int stride = n.i0;
                const int H = X.extent(2), W = X.extent(3);
                const int oh = n.val.extent(2), ow = n.val.extent(3);
                const int out_ch = n.val.extent(1);
                for (int img = 0; img < X.extent(0); ++img) {
                    for (int c = 0; c < X.extent(1); ++c) {
                        const T* gsrc = g.data() + (static_cast<std::size_t>(img) * out_ch + c) * oh * ow;
                        T* dst = dx.data() + (static_cast<std::size_t>(img) * X.extent(1) + c) * H * W;
                        for (int i = 0; i < oh; ++i)
                            for (int j = 0; j < ow; ++j) dst[(i * stride) * W + (j * stride)] += gsrc[i * ow + j];
                    }
                }
                break;
            }
            case Op::sce: {
                Tensor<T>& dl = grad_buf(out, n.in[0]);
                const int m = n.saved.rows(), c = n.saved.cols();
                const T gv = g[0] / static_cast<T>(m);
                for (int r = 0; r < m; ++r) {
                    const T* prow = n.saved.data() + static_cast<std::size_t>(r) * c;
                    T* drow = dl.data() + static_cast<std::size_t>(r) * c;
                    for (int j = 0; j < c; ++j) drow[j] += gv * (prow[j] - (j == n.labels[r] ? T(1) : T(0)));
                }
                break;
            }
            case Op::sum: {
                Tensor<T>& dx = grad_buf(out, n.in[0]);
                const T gv = g[0];
                for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += gv;
                break;
            }
            case Op::sumsq: {
                const Tensor<T>& X = nodes_[n.in[0]].val;
                kernels::axpy(X.size(), T(2) * g[0], X.data(), grad_buf(out, n.in[0]).data());
                break;
            }
        }
    }
};

}  // namespace hfn
