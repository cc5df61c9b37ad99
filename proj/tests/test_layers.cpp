#include <cmath>
#include <cstdio>

#include "doctest.h"
#include "mnn/layers.hpp"

using namespace mnn;

namespace {

Network zero_dense_net() {
    Network net;
    net.input_shape = {3};
    Dense d;
    d.in = 3;
    d.out = 2;
    d.weight = Tensor::zeros({2, 3}, true);
    d.bias = Tensor::zeros({2}, true);
    Block chain;
    chain.layers.push_back(std::move(d));
    net.blocks.push_back(std::move(chain));
    return net;
}

}  // namespace

TEST_CASE("zero-weight dense network maps everything to zero") {
    Network net = zero_dense_net();
    Rng rng(1);
    Tensor x = Tensor::uniform({4, 3}, -5, 5, rng);
    Tensor y = forward(net, x, {});
    for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("gates off equals the gate-free network") {
    Rng rng(2);
    Network gated;
    gated.input_shape = {4};
    Block chain;
    chain.layers.push_back(make_dense(4, 6, rng));
    chain.layers.push_back(Activation{Act::Tanh});
    chain.layers.push_back(GateLayer{6, false, "g0"});
    Dense head = make_dense(6, 2, rng);
    Dense head_copy;
    head_copy.in = head.in;
    head_copy.out = head.out;
    head_copy.weight = Tensor::from(head.weight.shape(), head.weight.data(), true);
    head_copy.bias = Tensor::from(head.bias.shape(), head.bias.data(), true);
    chain.layers.push_back(std::move(head));
    gated.blocks.push_back(chain);
    Rng grng(3);
    gated.gates["g0"] = std::make_shared<GateParams>(GateParams::init(6, grng));
    validate_network(gated);

    Network plain;
    plain.input_shape = {4};
    Block pchain;
    const Dense& d0 = std::get<Dense>(gated.blocks[0].layers[0]);
    Dense d0_copy;
    d0_copy.in = d0.in;
    d0_copy.out = d0.out;
    d0_copy.weight = Tensor::from(d0.weight.shape(), d0.weight.data(), true);
    d0_copy.bias = Tensor::from(d0.bias.shape(), d0.bias.data(), true);
    pchain.layers.push_back(std::move(d0_copy));
    pchain.layers.push_back(Activation{Act::Tanh});
    pchain.layers.push_back(std::move(head_copy));
    plain.blocks.push_back(std::move(pchain));

    Tensor x = Tensor::uniform({5, 4}, -1, 1, rng);
    Tensor yg = forward(gated, x, {});
    Tensor yp = forward(plain, x, {});
    CHECK(yg.data() == yp.data());
}

TEST_CASE("two layers sharing a gate id see one realization per pass") {
    Network net;
    net.input_shape = {2};
    Block chain;
    chain.layers.push_back(GateLayer{2, false, "shared"});
    chain.layers.push_back(GateLayer{2, false, "shared"});
    net.blocks.push_back(std::move(chain));
    auto gp = std::make_shared<GateParams>();
    gp->log_alpha = Tensor::from({2}, {0.0, 0.0}, true);
    net.gates["shared"] = gp;

    Tensor x = Tensor::from({1, 2}, {1.0, 1.0});
    Rng fwd_rng(77), probe_rng(77);
    ForwardOptions opts;
    opts.gate_mode = GateMode::Stochastic;
    opts.rng = &fwd_rng;
    Tensor y = forward(net, x, opts);
    Tensor g = sample_gates(*gp, probe_rng);  // the pass consumes one sample
    for (int i = 0; i < 2; ++i)
        CHECK(y.data()[i] == doctest::Approx(g.data()[i] * g.data()[i]).epsilon(1e-12));
}

TEST_CASE("residual block with shared gate closed on one channel") {
    // 2-channel 1x1-conv body; gate (1, 0) forced: channel 1 must vanish.
    Network net;
    net.input_shape = {2, 2, 2};
    Block res;
    res.residual = true;
    Conv body;
    body.in_ch = body.out_ch = 2;
    body.kh = body.kw = 1;
    body.stride = 1;
    body.pad = 0;
    body.weight = Tensor::from({2, 2, 1, 1}, {0.5, -0.3, 0.2, 0.7}, true);
    res.layers.push_back(std::move(body));
    res.gate_id = "s0";
    net.blocks.push_back(std::move(res));
    auto gp = std::make_shared<GateParams>();
    gp->log_alpha = Tensor::from({2}, {0.0, 0.0}, true);
    net.gates["s0"] = gp;
    validate_network(net);

    Rng rng(4);
    Tensor x = Tensor::uniform({1, 2, 2, 2}, -1, 1, rng);
    std::unordered_map<std::string, std::vector<double>> forced{{"s0", {1.0, 0.0}}};
    ForwardOptions opts;
    opts.gate_values = &forced;
    Tensor y = forward(net, x, opts);

    const auto& w = std::get<Conv>(net.blocks[0].layers[0]).weight.data();
    for (int s = 0; s < 4; ++s) {
        double x0 = x.data()[s], x1 = x.data()[4 + s];
        double b0 = w[0] * x0 + w[1] * x1;
        double expect0 = std::max(0.0, x0 + b0);
        CHECK(y.data()[s] == doctest::Approx(expect0).epsilon(1e-12));
        CHECK(y.data()[4 + s] == 0.0);
    }
}

TEST_CASE("builder architectures") {
    Rng rng(5);
    Network mlp = build_sine_mlp(rng);
    auto sig = shape_signature(mlp);
    REQUIRE(sig.size() == 3);
    CHECK(sig[0] == "dense 1->100");
    CHECK(sig[1] == "relu");
    CHECK(sig[2] == "dense 100->1");

    Network lenet = build_lenet(rng);
    Tensor img = Tensor::uniform({2, 3, 28, 28}, -1, 1, rng);
    Tensor logits = forward(lenet, img, {});
    CHECK(logits.shape() == std::vector<int>{2, 10});

    Network resnet = build_tiny_resnet(rng, 8, 2, 10);
    Tensor small = Tensor::uniform({2, 3, 8, 8}, -1, 1, rng);
    CHECK(forward(resnet, small, {}).shape() == std::vector<int>{2, 10});
}

TEST_CASE("construction rejects non-composing sequences") {
    Rng rng(6);
    Network net;
    net.input_shape = {4};
    Block chain;
    chain.layers.push_back(make_dense(4, 6, rng));
    chain.layers.push_back(make_dense(5, 2, rng));  // expects 5, gets 6
    net.blocks.push_back(std::move(chain));
    CHECK_THROWS_WITH_AS(validate_network(net), doctest::Contains("layer 1"), ShapeError);
}

TEST_CASE("missing gate id is rejected") {
    Network net;
    net.input_shape = {3};
    Block chain;
    chain.layers.push_back(GateLayer{3, false, "nope"});
    net.blocks.push_back(std::move(chain));
    CHECK_THROWS_AS(validate_network(net), ContractError);
}

TEST_CASE("batchnorm eval is the explicit per-channel affine") {
    Rng rng(7);
    BatchNorm bn = make_batchnorm(3);
    bn.gamma = Tensor::uniform({3}, 0.5, 1.5, rng, true);
    bn.beta = Tensor::uniform({3}, -0.5, 0.5, rng, true);
    bn.running_mean = {0.1, -0.2, 0.3};
    bn.running_var = {1.2, 0.8, 2.0};

    Network net;
    net.input_shape = {3, 2, 2};
    Block chain;
    chain.layers.push_back(bn);
    net.blocks.push_back(std::move(chain));

    Tensor x = Tensor::uniform({2, 3, 2, 2}, -2, 2, rng);
    Tensor y = forward(net, x, {});
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 3; ++c)
            for (int s = 0; s < 4; ++s) {
                size_t i = (n * 3 + c) * 4 + s;
                double expect = (x.data()[i] - bn.running_mean[c]) /
                                    std::sqrt(bn.running_var[c] + bn.eps) *
                                    bn.gamma.data()[c] +
                                bn.beta.data()[c];
                CHECK(y.data()[i] == doctest::Approx(expect).epsilon(1e-12));
            }
}

TEST_CASE("batchnorm train mode updates running statistics") {
    Rng rng(8);
    Network net;
    net.input_shape = {2, 2, 2};
    Block chain;
    chain.layers.push_back(make_batchnorm(2));
    net.blocks.push_back(std::move(chain));

    Tensor x = Tensor::uniform({4, 2, 2, 2}, -1, 1, rng);
    ForwardOptions train;
    train.mode = Mode::Train;
    forward(net, x, train);
    const auto& bn = std::get<BatchNorm>(net.blocks[0].layers[0]);
    CHECK(bn.running_mean != std::vector<double>{0.0, 0.0});
    for (double v : bn.running_var) CHECK(v > 0.0);
}

TEST_CASE("parameter enumeration") {
    Rng rng(9);
    Network resnet = build_tiny_resnet(rng, 4, 1, 3);
    // stem conv + bn(2) + block: 2 convs + 2 bns(4) + head dense(2) = 11 tensors
    CHECK(parameters(resnet).size() == 11);
    CHECK(gate_parameters(resnet).empty());
}

TEST_CASE("mutating a registry gate is seen through every reference") {
    Network net;
    net.input_shape = {2};
    Block chain;
    chain.layers.push_back(GateLayer{2, false, "g"});
    chain.layers.push_back(GateLayer{2, false, "g"});
    net.blocks.push_back(std::move(chain));
    auto gp = std::make_shared<GateParams>();
    gp->log_alpha = Tensor::from({2}, {-40.0, -40.0}, true);
    net.gates["g"] = gp;

    Tensor x = Tensor::from({1, 2}, {1.0, 1.0});
    ForwardOptions det;
    det.gate_mode = GateMode::Deterministic;
    Tensor closed = forward(net, x, det);
    CHECK(closed.data() == std::vector<double>{0.0, 0.0});

    gp->log_alpha.data() = {40.0, 40.0};  // now fully open, through both layers
    Tensor open = forward(net, x, det);
    CHECK(open.data()[0] == doctest::Approx(1.0));
    CHECK(open.data()[1] == doctest::Approx(1.0));
}

TEST_CASE("serialization round-trips bitwise") {
    Rng rng(10);
    Network resnet = build_tiny_resnet(rng, 6, 2, 5);
    Rng grng(11);
    resnet.gates["s0"] = std::make_shared<GateParams>(GateParams::init(6, grng));
    for (auto& block : resnet.blocks)
        if (block.residual) block.gate_id = "s0";

    Network back = deserialize(serialize(resnet));
    CHECK(shape_signature(back) == shape_signature(resnet));
    auto p1 = parameters(resnet);
    auto p2 = parameters(back);
    REQUIRE(p1.size() == p2.size());
    for (size_t i = 0; i < p1.size(); ++i) CHECK(p1[i].data() == p2[i].data());
    REQUIRE(back.gates.count("s0"));
    CHECK(back.gates["s0"]->log_alpha.data() == resnet.gates["s0"]->log_alpha.data());
    CHECK(back.gates["s0"]->beta == resnet.gates["s0"]->beta);

    // eval forward agrees exactly
    Tensor x = Tensor::uniform({2, 3, 8, 8}, -1, 1, rng);
    CHECK(forward(back, x, {}).data() == forward(resnet, x, {}).data());
}

TEST_CASE("save/load round trip and io errors") {
    Rng rng(12);
    Network mlp = build_sine_mlp(rng);
    const std::string path = "roundtrip_test_net.json";
    save_network(mlp, path);
    Network back = load_network(path);
    CHECK(parameters(back)[0].data() == parameters(mlp)[0].data());
    std::remove(path.c_str());

    CHECK_THROWS_AS(load_network("does_not_exist_12345.json"), IoError);
    CHECK_THROWS_AS(deserialize("{not json"), IoError);
}
