#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "embedlab/error.hpp"
#include "embedlab/network.hpp"
#include "embedlab/ops.hpp"
#include "embedlab/rng.hpp"
#include "embedlab/tensor.hpp"

using namespace embedlab;

namespace {

NetworkConfig tiny_config() {
    NetworkConfig cfg;
    cfg.input_shape = {1, 4, 4};
    cfg.conv_channels = {2};
    cfg.fc_width = 3;
    cfg.embed_dim = 2;
    return cfg;
}

std::string temp_path(const char* name) {
    return std::string("/tmp/embedlab_test_") + name;
}

}  // namespace

TEST_CASE("config validation rejects bad dimensions") {
    NetworkConfig cfg = tiny_config();
    cfg.embed_dim = 4;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.conv_channels = {};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.input_shape = {28, 28};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    CHECK_NOTHROW(tiny_config().validate());
}

TEST_CASE("feature shape chain for the reference inputs") {
    // 28x28: conv 26, pool 13, conv 11, crop 10, pool 5, conv 3 -> 128*3*3.
    NetworkConfig mnist;
    mnist.input_shape = {1, 28, 28};
    const auto shapes_m = compute_feature_shapes(mnist);
    CHECK(shapes_m.back() == std::vector<std::size_t>{128 * 3 * 3});

    // 32x32: conv 30, pool 15, conv 13, crop 12, pool 6, conv 4 -> 128*4*4.
    NetworkConfig cifar;
    cifar.input_shape = {3, 32, 32};
    const auto shapes_c = compute_feature_shapes(cifar);
    CHECK(shapes_c.back() == std::vector<std::size_t>{128 * 4 * 4});

    // Too small for the chain.
    NetworkConfig bad;
    bad.input_shape = {1, 6, 6};
    CHECK_THROWS_AS(compute_feature_shapes(bad), ConfigError);
}

TEST_CASE("same seed gives bit-identical parameters") {
    const NetworkConfig cfg = tiny_config();
    Rng a(7), b(7);
    FeatureExtractor fa(cfg, a), fb(cfg, b);
    auto pa = fa.params(), pb = fb.params();
    REQUIRE(pa.size() == pb.size());
    REQUIRE(!pa.empty());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        REQUIRE(pa[i].value->size() == pb[i].value->size());
        for (std::size_t j = 0; j < pa[i].value->size(); ++j)
            REQUIRE((*pa[i].value)[j] == (*pb[i].value)[j]);
    }
}

TEST_CASE("forward yields batch x embed_dim and is deterministic") {
    const NetworkConfig cfg = tiny_config();
    Rng rng(9);
    FeatureExtractor fe(cfg, rng);
    const Tensor batch = Tensor::zeros({3, 1, 4, 4});
    const Tensor z1 = fe.forward(batch);
    CHECK(z1.shape() == std::vector<std::size_t>{3, 2});
    const Tensor z2 = fe.forward(batch);
    for (std::size_t i = 0; i < z1.size(); ++i) REQUIRE(z1[i] == z2[i]);
}

TEST_CASE("zero parameters with linear penultimate give zero embeddings") {
    const NetworkConfig cfg = tiny_config();
    Rng rng(11);
    FeatureExtractor fe(cfg, rng);
    for (auto& p : fe.params()) p.value->fill(0.0);
    Rng data_rng(12);
    const Tensor batch = Tensor::randn({2, 1, 4, 4}, data_rng);
    const Tensor z = fe.forward(batch);
    for (std::size_t i = 0; i < z.size(); ++i) CHECK(z[i] == 0.0);
}

TEST_CASE("embedding of a sample is independent of its batch") {
    const NetworkConfig cfg = tiny_config();
    Rng rng(13);
    FeatureExtractor fe(cfg, rng);
    Rng data_rng(14);
    const Tensor batch = Tensor::randn({3, 1, 4, 4}, data_rng);

    const Tensor all = fe.forward(batch);
    Tensor solo_in({1, 1, 4, 4});
    for (std::size_t i = 0; i < 16; ++i) solo_in[i] = batch[16 + i];
    const Tensor solo = fe.forward(solo_in);
    for (std::size_t k = 0; k < 2; ++k)
        CHECK(all.at(1, k) == doctest::Approx(solo.at(0, k)).epsilon(1e-12));
}

TEST_CASE("backward before forward is a state error") {
    const NetworkConfig cfg = tiny_config();
    Rng rng(15);
    FeatureExtractor fe(cfg, rng);
    CHECK_THROWS_AS(fe.backward(Tensor::zeros({1, 2})), StateError);
}

TEST_CASE("zero upstream gradient produces zero parameter gradients") {
    const NetworkConfig cfg = tiny_config();
    Rng rng(16);
    FeatureExtractor fe(cfg, rng);
    Rng data_rng(17);
    const Tensor batch = Tensor::randn({2, 1, 4, 4}, data_rng);
    fe.forward(batch);
    fe.zero_grads();
    fe.backward(Tensor::zeros({2, 2}));
    for (auto& p : fe.params())
        for (std::size_t i = 0; i < p.grad->size(); ++i) CHECK((*p.grad)[i] == 0.0);
}

TEST_CASE("identical samples get identical input gradients") {
    const NetworkConfig cfg = tiny_config();
    Rng rng(18);
    FeatureExtractor fe(cfg, rng);
    Rng data_rng(19);
    const Tensor one = Tensor::randn({1, 1, 4, 4}, data_rng);
    Tensor batch({2, 1, 4, 4});
    for (std::size_t i = 0; i < one.size(); ++i) {
        batch[i] = one[i];
        batch[one.size() + i] = one[i];
    }
    fe.forward(batch);
    fe.zero_grads();
    const Tensor coeffs({2, 2}, {0.3, -0.7, 0.3, -0.7});
    const Tensor gin = fe.backward(coeffs);
    for (std::size_t i = 0; i < one.size(); ++i)
        CHECK(gin[i] == doctest::Approx(gin[one.size() + i]).epsilon(1e-12));
}

TEST_CASE("extractor gradients match finite differences on a tiny net") {
    const NetworkConfig cfg = tiny_config();
    Rng rng(21);
    FeatureExtractor fe(cfg, rng);
    Rng data_rng(22);
    const Tensor batch = Tensor::randn({2, 1, 4, 4}, data_rng);
    const Tensor coeffs = Tensor::randn({2, 2}, data_rng);

    fe.forward(batch);
    fe.zero_grads();
    fe.backward(coeffs);

    for (auto& p : fe.params()) {
        const Tensor analytic = *p.grad;
        Tensor* value = p.value;
        const auto loss = [&](const Tensor& candidate) {
            const Tensor saved = *value;
            *value = candidate;
            const Tensor z = fe.forward(batch);
            *value = saved;
            double acc = 0.0;
            for (std::size_t i = 0; i < z.size(); ++i) acc += z[i] * coeffs[i];
            return acc;
        };
        const Tensor fd = finite_diff_grad(loss, *value);
        INFO("parameter ", p.name);
        CHECK(max_rel_error(analytic, fd) < 1e-4);
    }
}

TEST_CASE("forward_logits basis, bias-only, and oracle cases") {
    Rng rng(23);
    ClassifierHead head = make_classifier_head(2, 3, rng, false);

    // Basis case: W columns are unit basis responses.
    head.W.fill(0.0);
    head.W.at(0, 0) = 1.0;
    head.W.at(1, 1) = 1.0;
    head.b.fill(0.0);
    const Tensor z({1, 2}, {1.0, 0.0});
    const Tensor logits = forward_logits(head, z);
    CHECK(logits.at(0, 0) == doctest::Approx(1.0));
    CHECK(logits.at(0, 1) == doctest::Approx(0.0));
    CHECK(logits.at(0, 2) == doctest::Approx(0.0));

    // Bias-only: W = 0 gives b for any z.
    head.W.fill(0.0);
    head.b = Tensor({3}, {0.5, -1.0, 2.0});
    const Tensor z2({2, 2}, {3.0, -2.0, 0.1, 0.9});
    const Tensor only_b = forward_logits(head, z2);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            CHECK(only_b.at(i, j) == doctest::Approx(head.b[j]));

    // Random case vs explicit matmul-plus-bias oracle.
    Rng r2(24);
    ClassifierHead h2 = make_classifier_head(2, 4, r2, false);
    const Tensor z3 = Tensor::randn({3, 2}, r2);
    const Tensor got = forward_logits(h2, z3);
    const Tensor prod = matmul(z3, h2.W);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 4; ++j)
            CHECK(got.at(i, j) == doctest::Approx(prod.at(i, j) + h2.b[j]).epsilon(1e-12));

    CHECK_THROWS_AS(forward_logits(h2, Tensor::zeros({3, 5})), DimensionError);
}

TEST_CASE("backward_logits matches finite differences") {
    Rng rng(25);
    ClassifierHead head = make_classifier_head(2, 3, rng, false);
    const Tensor z = Tensor::randn({4, 2}, rng);
    const Tensor coeffs = Tensor::randn({4, 3}, rng);

    head.zero_grads();
    const Tensor gz = backward_logits(head, z, coeffs);

    const auto loss_of_z = [&](const Tensor& zz) {
        const Tensor out = forward_logits(head, zz);
        double acc = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) acc += out[i] * coeffs[i];
        return acc;
    };
    CHECK(max_rel_error(gz, finite_diff_grad(loss_of_z, z)) < 1e-6);

    const auto loss_of_w = [&](const Tensor& w) {
        ClassifierHead h = head;
        h.W = w;
        const Tensor out = forward_logits(h, z);
        double acc = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) acc += out[i] * coeffs[i];
        return acc;
    };
    CHECK(max_rel_error(head.grad_W, finite_diff_grad(loss_of_w, head.W)) < 1e-6);

    const auto loss_of_b = [&](const Tensor& b) {
        ClassifierHead h = head;
        h.b = b;
        const Tensor out = forward_logits(h, z);
        double acc = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) acc += out[i] * coeffs[i];
        return acc;
    };
    CHECK(max_rel_error(head.grad_b, finite_diff_grad(loss_of_b, head.b)) < 1e-6);
}

TEST_CASE("renormalize_classifier unit-norms columns and zeroes biases") {
    Rng rng(26);
    ClassifierHead head = make_classifier_head(2, 2, rng, true);
    head.W = Tensor({2, 2}, {3.0, 1.0, 4.0, 1.0});  // column 0 = (3,4)
    head.b = Tensor({2}, {0.5, -0.5});
    renormalize_classifier(head);
    CHECK(head.W.at(0, 0) == doctest::Approx(0.6));
    CHECK(head.W.at(1, 0) == doctest::Approx(0.8));
    CHECK(head.b[0] == 0.0);
    CHECK(head.b[1] == 0.0);

    // Idempotence within 1e-12.
    const Tensor before = head.W;
    renormalize_classifier(head);
    for (std::size_t i = 0; i < before.size(); ++i)
        CHECK(std::abs(head.W[i] - before[i]) < 1e-12);

    head.W.at(0, 1) = 0.0;
    head.W.at(1, 1) = 0.0;
    CHECK_THROWS_AS(renormalize_classifier(head), DegenerateInputError);
}

TEST_CASE("normalized head starts satisfying its invariant") {
    Rng rng(27);
    const ClassifierHead head = make_classifier_head(3, 5, rng, true);
    for (std::size_t j = 0; j < 5; ++j) {
        double norm = 0.0;
        for (std::size_t k = 0; k < 3; ++k) norm += head.W.at(k, j) * head.W.at(k, j);
        CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-6);
        CHECK(head.b[j] == 0.0);
    }
}

TEST_CASE("checkpoint round-trip is bit-exact") {
    Rng rng(28);
    const Tensor a = Tensor::randn({2, 3}, rng);
    const Tensor b = Tensor::randn({4}, rng, 100.0);
    const std::string cfg_text = "loss = softmax\nseed = 42\n";
    const std::string path = temp_path("ckpt.bin");

    save_checkpoint(path, cfg_text, {&a, &b});
    const Checkpoint loaded = load_checkpoint(path);

    CHECK(loaded.config_text == cfg_text);
    REQUIRE(loaded.tensors.size() == 2);
    REQUIRE(loaded.tensors[0].shape() == a.shape());
    REQUIRE(loaded.tensors[1].shape() == b.shape());
    for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(loaded.tensors[0][i] == a[i]);
    for (std::size_t i = 0; i < b.size(); ++i) REQUIRE(loaded.tensors[1][i] == b[i]);
    std::remove(path.c_str());
}

TEST_CASE("checkpoint loader rejects malformed files") {
    const std::string path = temp_path("ckpt_bad.bin");

    {
        FILE* f = std::fopen(path.c_str(), "wb");
        REQUIRE(f != nullptr);
        std::fwrite("NOPE", 1, 4, f);
        std::fclose(f);
    }
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);

    // Valid header then truncated tensor payload.
    Rng rng(29);
    const Tensor a = Tensor::randn({4, 4}, rng);
    save_checkpoint(path, "x = 1\n", {&a});
    {
        FILE* f = std::fopen(path.c_str(), "rb");
        REQUIRE(f != nullptr);
        std::fseek(f, 0, SEEK_END);
        const long full = std::ftell(f);
        std::fclose(f);
        REQUIRE(full > 16);
        std::string bytes(static_cast<std::size_t>(full), '\0');
        f = std::fopen(path.c_str(), "rb");
        REQUIRE(std::fread(bytes.data(), 1, bytes.size(), f) == bytes.size());
        std::fclose(f);
        f = std::fopen(path.c_str(), "wb");
        std::fwrite(bytes.data(), 1, bytes.size() - 9, f);
        std::fclose(f);
    }
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);

    CHECK_THROWS_AS(load_checkpoint(temp_path("missing_ckpt.bin")), IoError);
    std::remove(path.c_str());
}

TEST_CASE("init_network wires head presence by loss family") {
    NetworkConfig cfg = tiny_config();
    Rng rng(31);
    const Network with = init_network(cfg, 4, rng, true);
    CHECK(with.has_head);
    CHECK(with.head.num_classes() == 4);
    CHECK(with.head.embed_dim() == cfg.embed_dim);

    Rng rng2(31);
    const Network without = init_network(cfg, 4, rng2, false);
    CHECK(!without.has_head);
}
