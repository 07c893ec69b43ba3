#include "hfn/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "hfn/errors.hpp"
#include "hfn/log.hpp"
#include "hfn/rng.hpp"

namespace hfn {

namespace {

constexpr uint32_t kImagesMagic = 0x00000803;
constexpr uint32_t kLabelsMagic = 0x00000801;

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t offset, const std::filesystem::path& path) {
    if (offset + 4 > b.size())
        throw DataFormatError(path.string() + ": truncated header at offset " + std::to_string(offset));
    return (static_cast<uint32_t>(b[offset]) << 24) | (static_cast<uint32_t>(b[offset + 1]) << 16) |
           (static_cast<uint32_t>(b[offset + 2]) << 8) | static_cast<uint32_t>(b[offset + 3]);
}

void check_size(const std::filesystem::path& path, std::size_t expected, std::size_t actual) {
    if (expected != actual)
        throw DataFormatError(path.string() + ": expected " + std::to_string(expected) + " bytes, got " +
                              std::to_string(actual));
}

std::vector<std::vector<int>> indices_by_class(const Dataset& ds) {
    std::vector<std::vector<int>> byc(static_cast<std::size_t>(ds.num_classes));
    for (int i = 0; i < ds.count; ++i) byc[static_cast<std::size_t>(ds.labels[i])].push_back(i);
    return byc;
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    const auto img = read_file(images_path);
    const auto lbl = read_file(labels_path);

    const uint32_t img_magic = read_be32(img, 0, images_path);
    if (img_magic != kImagesMagic)
        throw DataFormatError(images_path.string() + ": bad magic at offset 0 (expected 0x00000803)");
    const uint32_t n = read_be32(img, 4, images_path);
    const uint32_t h = read_be32(img, 8, images_path);
    const uint32_t w = read_be32(img, 12, images_path);
    check_size(images_path, 16 + static_cast<std::size_t>(n) * h * w, img.size());

    const uint32_t lbl_magic = read_be32(lbl, 0, labels_path);
    if (lbl_magic != kLabelsMagic)
        throw DataFormatError(labels_path.string() + ": bad magic at offset 0 (expected 0x00000801)");
    const uint32_t ln = read_be32(lbl, 4, labels_path);
    check_size(labels_path, 8 + static_cast<std::size_t>(ln), lbl.size());
    if (ln != n)
        throw DataFormatError(labels_path.string() + ": " + std::to_string(ln) + " labels for " +
                              std::to_string(n) + " images");

    Dataset ds;
    ds.count = static_cast<int>(n);
    ds.channels = 1;
    ds.height = static_cast<int>(h);
    ds.width = static_cast<int>(w);
    ds.provenance = "idx:" + images_path.filename().string();
    ds.images.resize(static_cast<std::size_t>(n) * h * w);
    for (std::size_t i = 0; i < ds.images.size(); ++i) ds.images[i] = img[16 + i] / 255.0;
    ds.labels.resize(n);
    int max_label = 0;
    for (uint32_t i = 0; i < n; ++i) {
        ds.labels[i] = lbl[8 + i];
        max_label = std::max(max_label, ds.labels[i]);
    }
    ds.num_classes = max_label + 1;
    return ds;
}

void write_idx(const Dataset& ds, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path) {
    if (ds.channels != 1) throw ContractError("write_idx: only single-channel datasets fit the IDX layout");
    auto put_be32 = [](std::ofstream& out, uint32_t v) {
        const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                                    static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
        out.write(reinterpret_cast<const char*>(b), 4);
    };

    std::ofstream imgs(images_path, std::ios::binary);
    if (!imgs) throw IoError("cannot write " + images_path.string());
    put_be32(imgs, kImagesMagic);
    put_be32(imgs, static_cast<uint32_t>(ds.count));
    put_be32(imgs, static_cast<uint32_t>(ds.height));
    put_be32(imgs, static_cast<uint32_t>(ds.width));
    for (double v : ds.images) {
        const int q = std::clamp(static_cast<int>(std::lround(v * 255.0)), 0, 255);
        const unsigned char byte = static_cast<unsigned char>(q);
        imgs.write(reinterpret_cast<const char*>(&byte), 1);
    }
    if (!imgs) throw IoError("failed writing " + images_path.string());

    std::ofstream lbls(labels_path, std::ios::binary);
    if (!lbls) throw IoError("cannot write " + labels_path.string());
    put_be32(lbls, kLabelsMagic);
    put_be32(lbls, static_cast<uint32_t>(ds.count));
    for (int l : ds.labels) {
        const unsigned char byte = static_cast<unsigned char>(l);
        lbls.write(reinterpret_cast<const char*>(&byte), 1);
    }
    if (!lbls) throw IoError("failed writing " + labels_path.string());
}

Dataset synth_task(int num_classes, int samples_per_class, int image_size, double noise_sigma, uint64_t seed,
                   int channels) {
    if (num_classes < 1 || samples_per_class < 1 || image_size < 1 || channels < 1)
        throw ConfigError("synth_task: counts and sizes must be positive");
    if (noise_sigma < 0.0) throw ConfigError("synth_task: noise_sigma must be >= 0");

    Dataset ds;
    ds.count = num_classes * samples_per_class;
    ds.channels = channels;
    ds.height = image_size;
    ds.width = image_size;
    ds.num_classes = num_classes;
    ds.provenance = "synth";
    const std::size_t isz = ds.image_size();

    Rng rng(seed);
    std::vector<double> prototypes(static_cast<std::size_t>(num_classes) * isz);
    for (double& v : prototypes) v = rng.uniform();

    ds.images.resize(static_cast<std::size_t>(ds.count) * isz);
    ds.labels.resize(static_cast<std::size_t>(ds.count));
    std::size_t out = 0;
    for (int c = 0; c < num_classes; ++c) {
        const double* proto = prototypes.data() + static_cast<std::size_t>(c) * isz;
        for (int s = 0; s < samples_per_class; ++s) {
            const std::size_t sample = out / isz;
            ds.labels[sample] = c;
            for (std::size_t k = 0; k < isz; ++k) {
                double v = proto[k];
                if (noise_sigma > 0.0) v = std::clamp(v + rng.normal(0.0, noise_sigma), 0.0, 1.0);
                ds.images[out++] = v;
            }
        }
    }
    return ds;
}

Partition dirichlet_partition(const Dataset& ds, int num_clients, double alpha, uint64_t seed) {
    if (num_clients < 1) throw ConfigError("dirichlet_partition: need at least one client");
    if (!(alpha > 0.0)) throw ConfigError("dirichlet_partition: alpha must be positive");

    const auto byc = indices_by_class(ds);
    Rng rng(seed);
    constexpr int kMaxRetries = 100;
    for (int attempt = 0; attempt < kMaxRetries; ++attempt) {
        Partition part;
        part.clients.resize(static_cast<std::size_t>(num_clients));
        for (const auto& class_indices : byc) {
            if (class_indices.empty()) continue;
            std::vector<int> shuffled = class_indices;
            rng.shuffle(shuffled.begin(), shuffled.end());

            // Dir(alpha * 1_K) via normalized gammas.
            std::vector<double> prop(static_cast<std::size_t>(num_clients));
            double total = 0.0;
            for (double& p : prop) {
                p = rng.gamma(alpha);
                total += p;
            }

            // Largest-remainder rounding: counts sum exactly to the class size.
            const int n = static_cast<int>(shuffled.size());
            std::vector<int> counts(prop.size());
            std::vector<std::pair<double, int>> remainders;
            int assigned = 0;
            for (int k = 0; k < num_clients; ++k) {
                const double target = total > 0.0 ? prop[k] / total * n : static_cast<double>(n) / num_clients;
                counts[k] = static_cast<int>(target);
                assigned += counts[k];
                remainders.emplace_back(target - counts[k], k);
            }
            std::stable_sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
                if (a.first != b.first) return a.first > b.first;
                return a.second < b.second;
            });
            for (int r = 0; r < n - assigned; ++r) ++counts[remainders[static_cast<std::size_t>(r)].second];

            int pos = 0;
            for (int k = 0; k < num_clients; ++k) {
                auto& dst = part.clients[static_cast<std::size_t>(k)].train;
                dst.insert(dst.end(), shuffled.begin() + pos, shuffled.begin() + pos + counts[k]);
                pos += counts[k];
            }
        }

        const bool ok = std::all_of(part.clients.begin(), part.clients.end(),
                                    [](const auto& c) { return !c.train.empty(); });
        if (ok) return part;
    }
    throw PartitionError("dirichlet_partition: no valid draw in 100 attempts; increase alpha or reduce clients");
}

Partition group_partition(const Dataset& ds, int num_groups, int clients_per_group, int classes_per_client,
                          uint64_t seed) {
    if (num_groups < 1 || clients_per_group < 1 || classes_per_client < 1)
        throw ConfigError("group_partition: counts must be positive");
    if (num_groups * classes_per_client > ds.num_classes)
        throw ConfigError("group_partition: " + std::to_string(num_groups) + " groups x " +
                          std::to_string(classes_per_client) + " classes need more classes than the dataset's " +
                          std::to_string(ds.num_classes));

    Rng rng(seed);
    std::vector<int> classes(static_cast<std::size_t>(ds.num_classes));
    for (int c = 0; c < ds.num_classes; ++c) classes[static_cast<std::size_t>(c)] = c;
    rng.shuffle(classes.begin(), classes.end());

    const auto byc = indices_by_class(ds);
    Partition part;
    part.clients.resize(static_cast<std::size_t>(num_groups) * clients_per_group);
    part.group_of.resize(part.clients.size());
    for (int g = 0; g < num_groups; ++g) {
        for (int j = 0; j < clients_per_group; ++j)
            part.group_of[static_cast<std::size_t>(g) * clients_per_group + j] = g;
        for (int s = 0; s < classes_per_client; ++s) {
            const int cls = classes[static_cast<std::size_t>(g) * classes_per_client + s];
            std::vector<int> shuffled = byc[static_cast<std::size_t>(cls)];
            rng.shuffle(shuffled.begin(), shuffled.end());
            // Even split of this class across the group's clients.
            for (std::size_t i = 0; i < shuffled.size(); ++i) {
                const int member = static_cast<int>(i % static_cast<std::size_t>(clients_per_group));
                part.clients[static_cast<std::size_t>(g) * clients_per_group + member].train.push_back(shuffled[i]);
            }
        }
    }
    return part;
}

void split_train_test(Partition& partition, const Dataset& ds, double train_ratio, uint64_t seed) {
    if (!(train_ratio > 0.0 && train_ratio < 1.0))
        throw ConfigError("split_train_test: ratio must be in (0, 1)");

    Rng rng(seed);
    for (std::size_t k = 0; k < partition.clients.size(); ++k) {
        auto& client = partition.clients[k];
        std::vector<int> all = std::move(client.train);
        all.insert(all.end(), client.test.begin(), client.test.end());
        client.train.clear();
        client.test.clear();

        std::vector<std::vector<int>> byc(static_cast<std::size_t>(ds.num_classes));
        for (int i : all) byc[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(i)])].push_back(i);
        for (auto& cls : byc) {
            if (cls.empty()) continue;
            rng.shuffle(cls.begin(), cls.end());
            const int n = static_cast<int>(cls.size());
            int n_train = static_cast<int>(n * train_ratio);
            if (n_train == 0) {
                n_train = 1;
                log::warn("split_train_test: client " + std::to_string(k) + " has a " + std::to_string(n) +
                          "-sample class; keeping it in train");
            }
            client.train.insert(client.train.end(), cls.begin(), cls.begin() + n_train);
            client.test.insert(client.test.end(), cls.begin() + n_train, cls.end());
        }
    }
}

std::vector<std::vector<int>> class_histograms(const Partition& partition, const Dataset& ds) {
    std::vector<std::vector<int>> out(partition.clients.size(),
                                      std::vector<int>(static_cast<std::size_t>(ds.num_classes), 0));
    for (std::size_t k = 0; k < partition.clients.size(); ++k) {
        for (int i : partition.clients[k].train) ++out[k][static_cast<std::size_t>(ds.labels[i])];
        for (int i : partition.clients[k].test) ++out[k][static_cast<std::size_t>(ds.labels[i])];
    }
    return out;
}

}  // namespace hfn
