#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hfn/tensor.hpp"

namespace hfn {

// Image classification dataset, pixels scaled to [0, 1].
struct Dataset {
    int count = 0;
    int channels = 0;
    int height = 0;
    int width = 0;
    int num_classes = 0;
    std::vector<double> images;  // count * channels * height * width, row-major
    std::vector<int> labels;
    std::string provenance;

    std::size_t image_size() const {
        return static_cast<std::size_t>(channels) * height * width;
    }
};

// Per-client index assignment. Partitioners fill `train` with every index a
// client owns; split_train_test then carves out the stratified test part.
struct Partition {
    struct ClientSplit {
        std::vector<int> train;
        std::vector<int> test;
    };
    std::vector<ClientSplit> clients;
    std::vector<int> group_of;  // client -> group id; empty unless group-partitioned
};

// IDX (MNIST-format) ingestion: big-endian header, magic 0x00000803 for
// images and 0x00000801 for labels; byte counts validated against the dims.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

// Export a single-channel dataset as an IDX pair (pixels quantized to u8).
void write_idx(const Dataset& ds, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

// Prototype-per-class synthetic task: sample = clamp(prototype + N(0, sigma)).
Dataset synth_task(int num_classes, int samples_per_class, int image_size, double noise_sigma, uint64_t seed,
                   int channels = 3);

// Per class, split that class's indices across K clients by proportions drawn
// from Dir(alpha); integerized by largest remainder. Draws are retried (up to
// 100 times) until every client owns at least one sample.
Partition dirichlet_partition(const Dataset& ds, int num_clients, double alpha, uint64_t seed);

// Groups of clients with a shared class subset; class subsets are disjoint
// across groups and indices are split evenly within the group.
Partition group_partition(const Dataset& ds, int num_groups, int clients_per_group, int classes_per_client,
                          uint64_t seed);

// Stratified per-client train/test split so both sides follow the client's
// class distribution. A class with a single sample goes to train (warned).
void split_train_test(Partition& partition, const Dataset& ds, double train_ratio, uint64_t seed);

std::vector<std::vector<int>> class_histograms(const Partition& partition, const Dataset& ds);

// Batch assembly for the training loop.
template <typename T>
Tensor<T> gather_images(const Dataset& ds, std::span<const int> idx) {
    const std::size_t isz = ds.image_size();
    Tensor<T> out({static_cast<int>(idx.size()), ds.channels, ds.height, ds.width});
    T* dst = out.data();
    for (int i : idx) {
        const double* src = ds.images.data() + static_cast<std::size_t>(i) * isz;
        for (std::size_t k = 0; k < isz; ++k) *dst++ = static_cast<T>(src[k]);
    }
    return out;
}

inline std::vector<int> gather_labels(const Dataset& ds, std::span<const int> idx) {
    std::vector<int> out;
    out.reserve(idx.size());
    for (int i : idx) out.push_back(ds.labels[static_cast<std::size_t>(i)]);
    return out;
}

}  // namespace hfn
