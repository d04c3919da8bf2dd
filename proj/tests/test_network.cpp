#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "sfp/grad_check.hpp"
#include "sfp/network.hpp"

using namespace sfp;

namespace {

ModelSpec tiny_chain_spec() {
    ModelSpec spec;
    spec.architecture = Architecture::plain_chain;
    spec.widths = {4, 6};
    spec.strides = {1, 2};
    spec.input_channels = 1;
    spec.input_h = spec.input_w = 8;
    spec.classes = 3;
    return spec;
}

ModelSpec resnet_spec(std::size_t depth, std::size_t input = 16) {
    ModelSpec spec;
    spec.architecture = Architecture::resnet_basic;
    spec.depth = depth;
    spec.input_channels = 3;
    spec.input_h = spec.input_w = input;
    spec.classes = 10;
    return spec;
}

} // namespace

TEST_CASE("resnet-20 has 19 prunable weighted convs plus classifier") {
    const auto model = build_model<float>(resnet_spec(20, 32), 1);
    const auto prunable = enumerate_prunable(model);
    CHECK(prunable.size() == 19);
    CHECK(model.spec.weighted_layer_count() == 20);
    // Stage widths 16/32/64.
    CHECK(find_layer(model, "stem")->out_channels() == 16);
    CHECK(find_layer(model, "s1b3c2")->out_channels() == 16);
    CHECK(find_layer(model, "s2b1c1")->out_channels() == 32);
    CHECK(find_layer(model, "s3b3c2")->out_channels() == 64);
    // Two projection shortcuts at the stage transitions, never prunable.
    CHECK(find_layer(model, "s2b1p") != nullptr);
    CHECK(find_layer(model, "s3b1p") != nullptr);
    CHECK_FALSE(find_layer(model, "s2b1p")->prunable);
    CHECK_FALSE(find_layer(model, "s2b1p")->compactable);
    // 21 convs total: 19 weighted + 2 projections.
    CHECK(model.convs.size() == 21);
    // Residual-add producers are not compactable.
    CHECK_FALSE(find_layer(model, "stem")->compactable);
    CHECK_FALSE(find_layer(model, "s1b1c2")->compactable);
    CHECK(find_layer(model, "s1b1c1")->compactable);
}

TEST_CASE("invalid resnet depth names the 6n+2 rule") {
    CHECK_THROWS_WITH_AS(build_model<float>(resnet_spec(21), 1), doctest::Contains("6n+2"),
                         ConfigError);
    CHECK_THROWS_AS(build_model<float>(resnet_spec(6), 1), ConfigError);
}

TEST_CASE("plain chain with zero conv layers is rejected") {
    ModelSpec spec = tiny_chain_spec();
    spec.widths.clear();
    spec.strides.clear();
    CHECK_THROWS_AS(build_model<float>(spec, 1), ConfigError);
}

TEST_CASE("same spec and seed build bitwise identical weights") {
    const auto a = build_model<float>(resnet_spec(8), 7);
    const auto b = build_model<float>(resnet_spec(8), 7);
    REQUIRE(a.convs.size() == b.convs.size());
    for (std::size_t i = 0; i < a.convs.size(); ++i) {
        CHECK(a.convs[i].filters.data == b.convs[i].filters.data);
    }
    CHECK(a.fc_weight.data == b.fc_weight.data);
    const auto c = build_model<float>(resnet_spec(8), 8);
    CHECK(a.convs[0].filters.data != c.convs[0].filters.data);
}

TEST_CASE("all-zero model produces all-zero logits") {
    auto model = build_model<float>(tiny_chain_spec(), 3);
    for (auto& conv : model.convs) {
        conv.filters.fill(0.0f);
        conv.bn_gamma.fill(0.0f);
        conv.bn_beta.fill(0.0f);
    }
    model.fc_weight.fill(0.0f);
    model.fc_bias.fill(0.0f);
    Rng rng(4);
    const TensorF batch = testing::random_tensor<float>({2, 1, 8, 8}, rng);
    const TensorF logits = forward_eval(model, batch, nullptr);
    for (const float v : logits.data) CHECK(v == 0.0f);
}

TEST_CASE("zeroed second conv reduces a residual block to its shortcut") {
    auto model = build_model<float>(resnet_spec(8), 5);
    // Zero every parameter of s1b1c2 so the main branch contributes nothing.
    auto* c2 = find_layer(model, "s1b1c2");
    c2->filters.fill(0.0f);
    c2->bn_gamma.fill(0.0f);
    c2->bn_beta.fill(0.0f);

    Rng rng(6);
    const TensorF batch = testing::random_tensor<float>({2, 3, 16, 16}, rng);
    std::vector<TensorF> post_bn;
    forward_eval(model, batch, &post_bn);

    // Expected: block output = relu(shortcut + 0) = stem activation, since
    // the shortcut is the identity and activations are nonnegative. Verify
    // through the next conv's post-BN map, which is observable.
    const TensorF stem_act = ops::relu(post_bn[0]);
    const auto* next = find_layer(model, "s2b1c1");
    const TensorF z = ops::conv2d(stem_act, next->filters, next->stride, next->pad);
    auto stats = next->bn_stats;
    const TensorF expect_bn = ops::batch_norm(z, next->bn_gamma, next->bn_beta, stats,
                                              ops::Mode::eval, kBnEps, kBnStatMomentum, nullptr);
    std::size_t idx = 0;
    for (std::size_t i = 0; i < model.convs.size(); ++i) {
        if (model.convs[i].id == "s2b1c1") idx = i;
    }
    REQUIRE(expect_bn.shape == post_bn[idx].shape);
    for (std::size_t i = 0; i < expect_bn.numel(); ++i) {
        CHECK(std::fabs(expect_bn[i] - post_bn[idx][i]) < 1e-5f);
    }
}

TEST_CASE("chain forward equals hand composition of tensor ops") {
    auto model = build_model<float>(tiny_chain_spec(), 21);
    model.mode = ops::Mode::eval;
    Rng rng(22);
    const TensorF batch = testing::random_tensor<float>({3, 1, 8, 8}, rng);
    const TensorF logits = forward_eval(model, batch, nullptr);

    TensorF cur = batch;
    for (auto layer : model.convs) {
        const TensorF z = ops::conv2d(cur, layer.filters, layer.stride, layer.pad);
        const TensorF h = ops::batch_norm(z, layer.bn_gamma, layer.bn_beta, layer.bn_stats,
                                          ops::Mode::eval, kBnEps, kBnStatMomentum, nullptr);
        cur = ops::relu(h);
    }
    const TensorF pooled = ops::avg_pool_global(cur);
    const TensorF expect = ops::linear(pooled, model.fc_weight, model.fc_bias);
    REQUIRE(logits.shape == expect.shape);
    for (std::size_t i = 0; i < logits.numel(); ++i) CHECK(logits[i] == expect[i]);
}

TEST_CASE("eval-mode forward is purely functional") {
    auto model = build_model<float>(resnet_spec(8), 9);
    model.mode = ops::Mode::eval;
    Rng rng(33);
    const TensorF batch = testing::random_tensor<float>({2, 3, 16, 16}, rng);
    const TensorF a = forward_eval(model, batch, nullptr);
    const TensorF b = forward_eval(model, batch, nullptr);
    CHECK(a.data == b.data);
}

TEST_CASE("forward rejects wrong batch shape") {
    auto model = build_model<float>(tiny_chain_spec(), 2);
    TensorF bad({2, 2, 8, 8});
    CHECK_THROWS_AS(forward_eval(model, bad, nullptr), DimensionError);
}

TEST_CASE("backward requires train mode") {
    auto model = build_model<float>(tiny_chain_spec(), 2);
    model.mode = ops::Mode::eval;
    TensorF batch({1, 1, 8, 8});
    CHECK_THROWS_AS(backward(model, batch, {0}), StateError);
}

TEST_CASE("full-model gradient matches finite differences on a 2-layer toy") {
    ModelSpec spec;
    spec.architecture = Architecture::plain_chain;
    spec.widths = {3, 4};
    spec.strides = {1, 1};
    spec.input_channels = 2;
    spec.input_h = spec.input_w = 5;
    spec.classes = 3;
    auto model = build_model<double>(spec, 77);
    model.mode = ops::Mode::train;

    Rng rng(78);
    const TensorD batch = testing::random_tensor<double>({3, 2, 5, 5}, rng);
    const std::vector<int> labels{0, 2, 1};

    auto result = backward(model, batch, labels);

    // Finite differences rerun the full forward pass on a fresh model copy.
    // The 1e-6 step keeps probes from crossing interior relu kinks.
    auto objective = [&] {
        auto probe = model;
        const TensorD logits = forward_train(probe, batch);
        return ops::softmax_cross_entropy(logits, labels).loss;
    };

    for (std::size_t c = 0; c < model.convs.size(); ++c) {
        CHECK(grad_check(objective, model.convs[c].filters, result.grads.convs[c].filters, 1e-6) <
              1e-4);
        CHECK(grad_check(objective, model.convs[c].bn_gamma, result.grads.convs[c].bn_gamma,
                         1e-6) < 1e-4);
        CHECK(grad_check(objective, model.convs[c].bn_beta, result.grads.convs[c].bn_beta, 1e-6) <
              1e-4);
    }
    CHECK(grad_check(objective, model.fc_weight, result.grads.fc_weight, 1e-6) < 1e-4);
    CHECK(grad_check(objective, model.fc_bias, result.grads.fc_bias, 1e-6) < 1e-4);
}

TEST_CASE("resnet full-model gradient matches finite differences") {
    auto model = build_model<double>(resnet_spec(8, 8), 101);
    model.mode = ops::Mode::train;
    Rng rng(102);
    const TensorD batch = testing::random_tensor<double>({2, 3, 8, 8}, rng);
    const std::vector<int> labels{1, 4};

    auto result = backward(model, batch, labels);
    auto objective = [&] {
        auto probe = model;
        const TensorD logits = forward_train(probe, batch);
        return ops::softmax_cross_entropy(logits, labels).loss;
    };

    // BN keeps interior activations centered on the relu kink, so a few
    // probes cross it and central differences go bad there. Validate each
    // probe with two step sizes: where the two estimates agree the point is
    // locally smooth and the analytic gradient must match.
    auto checked_fd = [&](TensorD& param, const TensorD& analytic) {
        std::size_t skipped = 0;
        double worst = 0.0;
        auto fd = [&](std::size_t i, double eps) {
            const double saved = param[i];
            param[i] = saved + eps;
            const double fp = objective();
            param[i] = saved - eps;
            const double fm = objective();
            param[i] = saved;
            return (fp - fm) / (2.0 * eps);
        };
        for (std::size_t i = 0; i < param.numel(); ++i) {
            const double n1 = fd(i, 1e-6);
            const double n2 = fd(i, 4e-7);
            const double agree =
                std::fabs(n1 - n2) / std::max({std::fabs(n1), std::fabs(n2), 1e-8});
            if (agree > 1e-4) {
                ++skipped;
                continue;
            }
            const double a = analytic[i];
            worst = std::max(worst,
                             std::fabs(a - n1) / std::max({std::fabs(a), std::fabs(n1), 1e-8}));
        }
        CHECK(skipped < param.numel() / 5);
        return worst;
    };

    const std::vector<std::string> ids{"stem", "s1b1c1", "s2b1c2", "s2b1p", "s3b1c1"};
    for (const auto& id : ids) {
        for (std::size_t c = 0; c < model.convs.size(); ++c) {
            if (model.convs[c].id != id) continue;
            CHECK(checked_fd(model.convs[c].filters, result.grads.convs[c].filters) < 1e-4);
        }
    }
    CHECK(grad_check(objective, model.fc_weight, result.grads.fc_weight, 1e-6) < 1e-4);
}

TEST_CASE("zeroing a filter and its BN affine kills that feature map") {
    auto model = build_model<float>(tiny_chain_spec(), 55);
    auto* layer = find_layer(model, "conv1");
    const std::size_t kill = 2;
    std::fill_n(layer->filters.ptr() + kill * layer->filters.numel() / layer->out_channels(),
                layer->filters.numel() / layer->out_channels(), 0.0f);
    layer->bn_gamma[kill] = 0.0f;
    layer->bn_beta[kill] = 0.0f;

    Rng rng(56);
    for (int trial = 0; trial < 3; ++trial) {
        const TensorF batch = testing::random_tensor<float>({2, 1, 8, 8}, rng);
        std::vector<TensorF> post_bn;
        forward_eval(model, batch, &post_bn);
        const auto& map = post_bn[0];
        const std::size_t plane = map.shape[2] * map.shape[3];
        for (std::size_t b = 0; b < map.shape[0]; ++b) {
            const float* p = map.ptr() + (b * map.shape[1] + kill) * plane;
            for (std::size_t i = 0; i < plane; ++i) CHECK(p[i] == 0.0f);
        }
    }
}

TEST_CASE("train-mode forward updates BN running statistics") {
    auto model = build_model<float>(tiny_chain_spec(), 60);
    const TensorF before = model.convs[0].bn_stats.mean;
    Rng rng(61);
    const TensorF batch = testing::random_tensor<float>({4, 1, 8, 8}, rng);
    forward_train(model, batch);
    CHECK(model.convs[0].bn_stats.mean.data != before.data);
}
