#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "hfn/analysis.hpp"
#include "hfn/data.hpp"
#include "hfn/errors.hpp"
#include "oracles.hpp"

using namespace hfn;

namespace {

std::filesystem::path tmp_dir() {
    const auto dir = std::filesystem::temp_directory_path() / "hfn_data_test";
    std::filesystem::create_directories(dir);
    return dir;
}

void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<unsigned char> be32(uint32_t v) {
    return {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
            static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
}

void append(std::vector<unsigned char>& dst, const std::vector<unsigned char>& src) {
    dst.insert(dst.end(), src.begin(), src.end());
}

// All indices land in exactly one client.
void check_disjoint_cover(const Partition& p, int dataset_size) {
    std::set<int> seen;
    for (const auto& c : p.clients) {
        for (int i : c.train) {
            CHECK(seen.insert(i).second);
            CHECK(i >= 0);
            CHECK(i < dataset_size);
        }
        for (int i : c.test) {
            CHECK(seen.insert(i).second);
            CHECK(i >= 0);
            CHECK(i < dataset_size);
        }
    }
}

}  // namespace

TEST_CASE("load_idx: hand-built 2-image 2x2 fixture") {
    const auto dir = tmp_dir();
    std::vector<unsigned char> img;
    append(img, be32(0x00000803));
    append(img, be32(2));  // images
    append(img, be32(2));  // rows
    append(img, be32(2));  // cols
    for (unsigned char b : {0, 51, 102, 153, 204, 255, 10, 20}) img.push_back(b);
    std::vector<unsigned char> lbl;
    append(lbl, be32(0x00000801));
    append(lbl, be32(2));
    lbl.push_back(7);
    lbl.push_back(3);
    write_bytes(dir / "fix-images", img);
    write_bytes(dir / "fix-labels", lbl);

    const Dataset ds = load_idx(dir / "fix-images", dir / "fix-labels");
    CHECK(ds.count == 2);
    CHECK(ds.channels == 1);
    CHECK(ds.height == 2);
    CHECK(ds.width == 2);
    CHECK(ds.num_classes == 8);
    CHECK(ds.labels == std::vector<int>{7, 3});
    const std::vector<double> want{0 / 255.0,   51 / 255.0,  102 / 255.0, 153 / 255.0,
                                   204 / 255.0, 255 / 255.0, 10 / 255.0,  20 / 255.0};
    REQUIRE(ds.images.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(ds.images[i] == want[i]);
}

TEST_CASE("load_idx error paths name the defect") {
    const auto dir = tmp_dir();
    std::vector<unsigned char> img;
    append(img, be32(0x00000803));
    append(img, be32(2));
    append(img, be32(2));
    append(img, be32(2));
    for (int i = 0; i < 5; ++i) img.push_back(0);  // truncated: 5 of 8 pixel bytes
    write_bytes(dir / "trunc-images", img);
    std::vector<unsigned char> lbl;
    append(lbl, be32(0x00000801));
    append(lbl, be32(2));
    lbl.push_back(0);
    lbl.push_back(1);
    write_bytes(dir / "ok-labels", lbl);

    CHECK_THROWS_WITH_AS(load_idx(dir / "trunc-images", dir / "ok-labels"),
                         doctest::Contains("expected 24 bytes, got 21"), DataFormatError);

    std::vector<unsigned char> bad_magic = img;
    bad_magic[3] = 0x04;
    write_bytes(dir / "badmagic-images", bad_magic);
    CHECK_THROWS_WITH_AS(load_idx(dir / "badmagic-images", dir / "ok-labels"), doctest::Contains("magic"),
                         DataFormatError);

    // three labels for two images
    std::vector<unsigned char> img_ok;
    append(img_ok, be32(0x00000803));
    append(img_ok, be32(2));
    append(img_ok, be32(1));
    append(img_ok, be32(1));
    img_ok.push_back(9);
    img_ok.push_back(9);
    write_bytes(dir / "ok-images", img_ok);
    std::vector<unsigned char> lbl3;
    append(lbl3, be32(0x00000801));
    append(lbl3, be32(3));
    for (int i = 0; i < 3; ++i) lbl3.push_back(0);
    write_bytes(dir / "three-labels", lbl3);
    CHECK_THROWS_WITH_AS(load_idx(dir / "ok-images", dir / "three-labels"),
                         doctest::Contains("3 labels for 2 images"), DataFormatError);

    CHECK_THROWS_AS(load_idx(dir / "missing", dir / "ok-labels"), IoError);
}

TEST_CASE("write_idx round-trips through u8 quantization") {
    const auto dir = tmp_dir();
    Dataset ds = synth_task(3, 5, 4, 0.3, 77, /*channels=*/1);
    write_idx(ds, dir / "rt-images", dir / "rt-labels");
    const Dataset back = load_idx(dir / "rt-images", dir / "rt-labels");
    CHECK(back.count == ds.count);
    CHECK(back.labels == ds.labels);
    REQUIRE(back.images.size() == ds.images.size());
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        const double quantized = std::lround(ds.images[i] * 255.0) / 255.0;
        CHECK(back.images[i] == doctest::Approx(quantized).epsilon(1e-12));
    }

    Dataset rgb = synth_task(2, 2, 4, 0.0, 1, /*channels=*/3);
    CHECK_THROWS_AS(write_idx(rgb, dir / "x", dir / "y"), ContractError);
}

TEST_CASE("synth_task: prototypes, determinism, separability") {
    const Dataset clean = synth_task(4, 6, 8, 0.0, 42);
    const std::size_t isz = clean.image_size();
    // sigma = 0: every sample equals its class prototype
    for (int c = 0; c < 4; ++c) {
        const double* first = clean.images.data() + static_cast<std::size_t>(c) * 6 * isz;
        for (int s = 1; s < 6; ++s)
            for (std::size_t k = 0; k < isz; ++k)
                CHECK(clean.images[(static_cast<std::size_t>(c) * 6 + s) * isz + k] == first[k]);
    }

    const Dataset a = synth_task(4, 10, 8, 0.25, 42);
    const Dataset b = synth_task(4, 10, 8, 0.25, 42);
    CHECK(a.images == b.images);
    CHECK(a.labels == b.labels);
    for (double v : a.images) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }

    const Dataset noisy = synth_task(4, 50, 8, 0.1, 7, /*channels=*/1);
    CHECK(oracle::nearest_prototype_accuracy(noisy) >= 0.95);
}

TEST_CASE("dirichlet_partition: K=1 owns everything; audits pass") {
    const Dataset ds = synth_task(4, 25, 4, 0.1, 5, 1);
    Partition p = dirichlet_partition(ds, 1, 0.5, 9);
    CHECK(p.clients.size() == 1);
    CHECK(static_cast<int>(p.clients[0].train.size()) == ds.count);
    check_disjoint_cover(p, ds.count);

    Partition p2 = dirichlet_partition(ds, 10, 0.5, 9);
    check_disjoint_cover(p2, ds.count);
    int total = 0;
    for (const auto& c : p2.clients) total += static_cast<int>(c.train.size());
    CHECK(total == ds.count);  // largest-remainder rounding drops nothing
    for (const auto& c : p2.clients) CHECK(!c.train.empty());

    // determinism
    Partition p3 = dirichlet_partition(ds, 10, 0.5, 9);
    for (std::size_t k = 0; k < p2.clients.size(); ++k) CHECK(p2.clients[k].train == p3.clients[k].train);
}

TEST_CASE("dirichlet statistics: alpha=1000 near-uniform, alpha=0.1 skewed") {
    const Dataset ds = synth_task(10, 100, 4, 0.1, 6, 1);
    int near_uniform_ok = 0;
    double entropy_high = 0.0, entropy_low = 0.0;
    const int seeds = 10;
    for (int s = 0; s < seeds; ++s) {
        const Partition high = dirichlet_partition(ds, 10, 1000.0, 100 + static_cast<uint64_t>(s));
        const Partition low = dirichlet_partition(ds, 10, 0.1, 100 + static_cast<uint64_t>(s));
        const auto hist_high = class_histograms(high, ds);
        const auto hist_low = class_histograms(low, ds);

        bool all_within = true;
        for (const auto& h : hist_high) {
            int n = 0;
            for (int c : h) n += c;
            const double expect = static_cast<double>(n) / 10.0;
            for (int c : h)
                if (std::abs(c - expect) > 0.2 * expect) all_within = false;
        }
        if (all_within) ++near_uniform_ok;

        for (const auto& h : hist_high) entropy_high += entropy(h);
        for (const auto& h : hist_low) entropy_low += entropy(h);
    }
    CHECK(near_uniform_ok >= 9);
    CHECK(entropy_low < entropy_high);
}

TEST_CASE("group_partition: disjoint class pairs, shared support within groups") {
    const Dataset ds = synth_task(10, 40, 4, 0.1, 8, 1);
    Partition p = group_partition(ds, 5, 4, 2, 13);
    REQUIRE(p.clients.size() == 20);
    REQUIRE(p.group_of.size() == 20);
    check_disjoint_cover(p, ds.count);

    const auto hist = class_histograms(p, ds);
    auto support = [&](std::size_t k) {
        std::set<int> s;
        for (int c = 0; c < 10; ++c)
            if (hist[k][static_cast<std::size_t>(c)] > 0) s.insert(c);
        return s;
    };
    std::set<int> all_claimed;
    for (int g = 0; g < 5; ++g) {
        const auto ref = support(static_cast<std::size_t>(g) * 4);
        CHECK(ref.size() == 2);
        for (int j = 1; j < 4; ++j) CHECK(support(static_cast<std::size_t>(g) * 4 + j) == ref);
        for (int c : ref) CHECK(all_claimed.insert(c).second);  // groups own disjoint class pairs
    }

    CHECK_THROWS_AS(group_partition(ds, 6, 4, 2, 13), ConfigError);  // 12 classes needed, 10 present
}

TEST_CASE("split_train_test: stratified 80/20") {
    const Dataset ds = synth_task(4, 50, 4, 0.1, 3, 1);
    Partition p = dirichlet_partition(ds, 5, 10.0, 4);
    const auto before = class_histograms(p, ds);
    split_train_test(p, ds, 0.8, 5);
    check_disjoint_cover(p, ds.count);
    const auto after = class_histograms(p, ds);
    CHECK(before == after);  // split moves indices, never drops them

    for (std::size_t k = 0; k < p.clients.size(); ++k) {
        std::vector<int> train_hist(4, 0), test_hist(4, 0);
        for (int i : p.clients[k].train) ++train_hist[static_cast<std::size_t>(ds.labels[i])];
        for (int i : p.clients[k].test) ++test_hist[static_cast<std::size_t>(ds.labels[i])];
        for (int c = 0; c < 4; ++c) {
            const int n = train_hist[c] + test_hist[c];
            if (n == 0) continue;
            // per-class train fraction within one sample of the ratio
            CHECK(std::abs(train_hist[c] - 0.8 * n) <= 1.0);
            if (n == 1) CHECK(train_hist[c] == 1);  // singleton goes to train
        }
    }

    // exact division: 10 per class -> 8 train / 2 test
    const Dataset tiny = synth_task(2, 10, 4, 0.1, 6, 1);
    Partition one = dirichlet_partition(tiny, 1, 1.0, 7);
    split_train_test(one, tiny, 0.8, 8);
    std::vector<int> train_hist(2, 0), test_hist(2, 0);
    for (int i : one.clients[0].train) ++train_hist[static_cast<std::size_t>(tiny.labels[i])];
    for (int i : one.clients[0].test) ++test_hist[static_cast<std::size_t>(tiny.labels[i])];
    CHECK(train_hist == std::vector<int>{8, 8});
    CHECK(test_hist == std::vector<int>{2, 2});

    CHECK_THROWS_AS(split_train_test(one, tiny, 1.5, 9), ConfigError);
}
