#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hfn/gradcheck.hpp"
#include "hfn/mainnet.hpp"
#include "oracles.hpp"

using namespace hfn;
using Id = Tape<double>::Id;

TEST_CASE("desk preset: three convs into a 32-feature classifier") {
    const auto arch = build_arch("desk", 3, 10);
    const auto convs = arch.conv_layers();
    REQUIRE(convs.size() == 3);
    CHECK(convs[0].in_ch == 3);
    CHECK(convs[0].out_ch == 16);
    CHECK(convs[2].out_ch == 32);
    CHECK(convs[2].stride == 2);
    CHECK(arch.classifier_in == 32);
    CHECK(conv_param_count(arch) == (3 * 16 + 16 * 16 + 16 * 32) * 9);
    CHECK(classifier_param_count(arch) == 10 * 32 + 10);
}

TEST_CASE("mnist preset follows the 16/16/32/64 channel plan") {
    const auto arch = build_arch("mnist", 1, 10);
    const auto convs = arch.conv_layers();
    REQUIRE(convs.size() == 7);  // conv1 + three residual blocks
    CHECK(convs[0].out_ch == 16);
    CHECK(convs[1].out_ch == 16);
    CHECK(convs[2].out_ch == 16);
    CHECK(convs[3].out_ch == 32);
    CHECK(convs[3].stride == 2);
    CHECK(convs[5].out_ch == 64);
    CHECK(convs[5].stride == 2);
    CHECK(arch.classifier_in == 64);

    const auto big = build_arch("cifar100", 3, 100);
    CHECK(big.classifier_in == 128);
    CHECK(big.conv_layers().size() == 1 + 2 * 18);

    CHECK_THROWS_AS(build_arch("lenet", 1, 10), ConfigError);
}

TEST_CASE("tiling validation flags non-multiple channels") {
    const auto bad = make_arch("bad", {MainNetArch::Block{ConvSpec{16, 17, 3, 1}, std::nullopt}}, 16, 10);
    CHECK_THROWS_AS(validate_tiling(bad, 16, 16, 3), ConfigError);
    const auto good = build_arch("desk", 3, 10);
    CHECK_NOTHROW(validate_tiling(good, 16, 16, 3));
    CHECK_THROWS_AS(validate_tiling(good, 16, 16, 5), ConfigError);  // kernel mismatch
}

TEST_CASE("zero parameters give the uniform loss ln(C)") {
    const auto arch = build_arch("desk", 3, 10);
    Tape<double> tape;
    std::vector<Id> theta;
    for (const ConvSpec& c : arch.conv_layers())
        theta.push_back(tape.leaf(Tensor<double>({c.out_ch, c.in_ch, c.kernel, c.kernel}), false));
    const auto bw = tape.leaf(Tensor<double>({10, 32}), false);
    const auto bb = tape.leaf(Tensor<double>({10}), false);
    Rng rng(3);
    const auto images = oracle::random_tensor({4, 3, 8, 8}, rng, 0.0, 1.0);
    const std::vector<int> labels{1, 3, 5, 9};
    const auto fwd = main_net_forward<double>(tape, arch, theta, bw, bb, images, labels);
    CHECK(tape.value(fwd.loss)[0] == doctest::Approx(std::log(10.0)).epsilon(1e-12));
}

TEST_CASE("one-pixel identity net: logits equal beta * pixel + bias") {
    const auto arch = make_arch("pixel", {MainNetArch::Block{ConvSpec{1, 1, 1, 1}, std::nullopt}}, 1, 3);
    Tape<double> tape;
    const std::vector<Id> theta{tape.leaf(Tensor<double>({1, 1, 1, 1}, {1.0}), false)};
    const auto bw = tape.leaf(Tensor<double>({3, 1}, {0.5, -1.0, 2.0}), false);
    const auto bb = tape.leaf(Tensor<double>({3}, {0.1, 0.2, 0.3}), false);
    const double pixel = 0.7;  // > 0 so the relu is transparent
    const Tensor<double> img({1, 1, 1, 1}, {pixel});
    const std::vector<int> labels{0};
    const auto fwd = main_net_forward<double>(tape, arch, theta, bw, bb, img, labels);
    const auto& logits = tape.value(fwd.logits);
    CHECK(logits[0] == doctest::Approx(0.5 * pixel + 0.1).epsilon(1e-12));
    CHECK(logits[1] == doctest::Approx(-1.0 * pixel + 0.2).epsilon(1e-12));
    CHECK(logits[2] == doctest::Approx(2.0 * pixel + 0.3).epsilon(1e-12));
}

TEST_CASE("duplicating the batch leaves the mean loss unchanged") {
    const auto arch = build_arch("desk", 3, 4);
    Rng rng(4);
    std::vector<Tensor<double>> theta_vals;
    for (const ConvSpec& c : arch.conv_layers())
        theta_vals.push_back(oracle::random_tensor({c.out_ch, c.in_ch, c.kernel, c.kernel}, rng, -0.3, 0.3));
    const auto bw = oracle::random_tensor({4, 32}, rng, -0.5, 0.5);
    const auto bb = oracle::random_tensor({4}, rng, -0.5, 0.5);
    const auto images = oracle::random_tensor({3, 3, 8, 8}, rng, 0.0, 1.0);
    const std::vector<int> labels{0, 2, 3};

    Tensor<double> doubled({6, 3, 8, 8});
    std::copy(images.values().begin(), images.values().end(), doubled.data());
    std::copy(images.values().begin(), images.values().end(), doubled.data() + images.size());
    const std::vector<int> labels2{0, 2, 3, 0, 2, 3};

    auto loss_of = [&](const Tensor<double>& imgs, std::span<const int> lbl) {
        Tape<double> tape;
        std::vector<Id> theta;
        for (const auto& t : theta_vals) theta.push_back(tape.leaf(t, false));
        const auto fwd = main_net_forward<double>(tape, arch, theta, tape.leaf(bw, false),
                                                  tape.leaf(bb, false), imgs, lbl);
        return tape.value(fwd.loss)[0];
    };
    CHECK(loss_of(doubled, labels2) == doctest::Approx(loss_of(images, labels)).epsilon(1e-12));
}

TEST_CASE("evaluate: ties, scaling, and perfect constant classifiers") {
    const auto arch = make_arch("pixel", {MainNetArch::Block{ConvSpec{1, 1, 1, 1}, std::nullopt}}, 1, 3);
    const std::vector<Tensor<double>> theta{Tensor<double>({1, 1, 1, 1}, {1.0})};
    BetaParams<double> beta;
    beta.weight = Tensor<double>({3, 1});  // constant logits -> tie -> class 0
    beta.bias = Tensor<double>({3});
    Tensor<double> images({4, 1, 1, 1}, {0.1, 0.4, 0.7, 0.9});

    const std::vector<int> zeros{0, 0, 0, 0};
    CHECK(evaluate<double>(arch, theta, beta, images, zeros) == 1.0);
    const std::vector<int> ones{1, 1, 1, 1};
    CHECK(evaluate<double>(arch, theta, beta, images, ones) == 0.0);

    // scale invariance of argmax
    Rng rng(5);
    BetaParams<double> rand_beta;
    rand_beta.weight = oracle::random_tensor({3, 1}, rng);
    rand_beta.bias = oracle::random_tensor({3}, rng);
    BetaParams<double> scaled;
    scaled.weight = rand_beta.weight;
    scaled.bias = rand_beta.bias;
    for (auto& v : scaled.weight.values()) v *= 2.0;
    for (auto& v : scaled.bias.values()) v *= 2.0;
    const std::vector<int> labels{0, 1, 2, 0};
    CHECK(evaluate<double>(arch, theta, rand_beta, images, labels) ==
          evaluate<double>(arch, theta, scaled, images, labels));

    const Tensor<double> empty;
    CHECK_THROWS_AS(evaluate<double>(arch, theta, beta, images, std::span<const int>{}), DomainError);
}

TEST_CASE("random classifier on balanced 2-class data is near chance") {
    const auto arch = make_arch("pixel", {MainNetArch::Block{ConvSpec{1, 1, 1, 1}, std::nullopt}}, 1, 2);
    const std::vector<Tensor<double>> theta{Tensor<double>({1, 1, 1, 1}, {1.0})};
    Tensor<double> images({40, 1, 1, 1});
    std::vector<int> labels(40);
    Rng data_rng(17);
    for (int i = 0; i < 40; ++i) {
        images[static_cast<std::size_t>(i)] = data_rng.uniform();
        labels[static_cast<std::size_t>(i)] = i % 2;
    }
    double total = 0.0;
    const int seeds = 24;
    for (int s = 0; s < seeds; ++s) {
        Rng rng(1000 + static_cast<uint64_t>(s));
        BetaParams<double> beta;
        beta.weight = oracle::random_tensor({2, 1}, rng);
        beta.bias = oracle::random_tensor({2}, rng);
        total += evaluate<double>(arch, theta, beta, images, labels);
    }
    CHECK(std::abs(total / seeds - 0.5) < 0.1);
}

TEST_CASE("classifier gradient matches finite differences") {
    const auto arch = build_arch("desk", 3, 4);
    Rng rng(6);
    std::vector<Tensor<double>> theta_vals;
    for (const ConvSpec& c : arch.conv_layers())
        theta_vals.push_back(oracle::random_tensor({c.out_ch, c.in_ch, c.kernel, c.kernel}, rng, -0.3, 0.3));
    const auto images = oracle::random_tensor({2, 3, 8, 8}, rng, 0.0, 1.0);
    const std::vector<int> labels{1, 3};
    std::vector<Tensor<double>> params{oracle::random_tensor({4, 32}, rng, -0.5, 0.5),
                                       oracle::random_tensor({4}, rng, -0.5, 0.5)};
    const auto rep = gradient_check(
        [&](Tape<double>& tape, std::span<const Id> ids) {
            std::vector<Id> theta;
            for (const auto& t : theta_vals) theta.push_back(tape.leaf(t, false));
            return main_net_forward<double>(tape, arch, theta, ids[0], ids[1], images, labels).loss;
        },
        params);
    CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("residual preset forward runs and differentiates") {
    const auto arch = build_arch("mnist", 1, 10);
    Rng rng(7);
    std::vector<Tensor<double>> theta_vals;
    for (const ConvSpec& c : arch.conv_layers())
        theta_vals.push_back(oracle::random_tensor({c.out_ch, c.in_ch, c.kernel, c.kernel}, rng, -0.1, 0.1));
    const auto images = oracle::random_tensor({2, 1, 12, 12}, rng, 0.0, 1.0);
    const std::vector<int> labels{3, 7};

    Tape<double> tape;
    std::vector<Id> theta;
    for (const auto& t : theta_vals) theta.push_back(tape.leaf(t, true));
    const auto bw = tape.leaf(oracle::random_tensor({10, 64}, rng, -0.3, 0.3), true);
    const auto bb = tape.leaf(Tensor<double>({10}), true);
    const auto fwd = main_net_forward<double>(tape, arch, theta, bw, bb, images, labels);
    CHECK(std::isfinite(tape.value(fwd.loss)[0]));
    const auto grads = tape.backward(fwd.loss);
    CHECK(grads.reached(theta[0]));  // gradient reaches the very first conv
    CHECK(all_finite(grads.wrt(theta[0])));
}
