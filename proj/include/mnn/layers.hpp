#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "mnn/gates.hpp"
#include "mnn/tensor.hpp"

namespace mnn {

enum class Act { Relu, Tanh };

struct Dense {
    Tensor weight;  // [out, in]
    Tensor bias;    // [out], undefined when has_bias == false
    bool has_bias = true;
    int in = 0, out = 0;
};

struct Conv {
    Tensor weight;  // [out_ch, in_ch, kh, kw], no bias
    int in_ch = 0, out_ch = 0, kh = 0, kw = 0, stride = 1, pad = 0;
};

struct BatchNorm {
    Tensor gamma, beta;  // [ch]
    std::vector<double> running_mean, running_var;
    double eps = 1e-5;
    double momentum = 0.1;
    int ch = 0;
};

struct Activation {
    Act act = Act::Relu;
};

struct MaxPool {
    int k = 2;
};

struct Flatten {};

// Multiplicative hard-concrete gate over features (spatial=false) or channels
// (spatial=true). Parameters live in the network's gate registry so several
// layers may reference the same gate.
struct GateLayer {
    int width = 0;
    bool spatial = false;
    std::string id;
};

using Layer = std::variant<Dense, Conv, BatchNorm, Activation, MaxPool, Flatten, GateLayer>;

// A plain chain of layers, or a residual block computing
// relu(x + body(x)) followed by the block's shared exit gate (big-student
// form only; gate_id empty for teachers). The gate preceding the block in
// the chain and the block's exit gate carry the same id, so one realization
// gates both the skip input and the joined output.
struct Block {
    bool residual = false;
    std::vector<Layer> layers;
    std::string gate_id;  // residual big-student blocks only
};

struct Network {
    std::vector<Block> blocks;
    std::map<std::string, std::shared_ptr<GateParams>> gates;
    std::vector<int> input_shape;  // per-sample shape, e.g. {1} or {3,28,28}

    bool has_gates() const { return !gates.empty(); }
};

enum class Mode { Train, Eval };
enum class GateMode { Off, Stochastic, Deterministic };

struct ForwardOptions {
    Mode mode = Mode::Eval;
    GateMode gate_mode = GateMode::Off;
    Rng* rng = nullptr;  // required for stochastic gates
    // Test hook: force specific gate values per gate id (bypasses sampling).
    const std::unordered_map<std::string, std::vector<double>>* gate_values = nullptr;
};

Tensor forward(Network& net, const Tensor& x, const ForwardOptions& opts);

// Trainable weight tensors (excluding gate log_alphas), in layer order.
std::vector<Tensor> parameters(Network& net);
// Trainable gate log_alphas, in registry order.
std::vector<Tensor> gate_parameters(Network& net);
// Gate params in registry order (for losses).
std::vector<std::shared_ptr<GateParams>> gate_list(const Network& net);

// Per-layer shape signature, for architecture comparisons.
std::vector<std::string> shape_signature(const Network& net);

// Checks that adjacent layers compose and every referenced gate id exists.
void validate_network(const Network& net);

// PyTorch-style default init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Dense make_dense(int in, int out, Rng& rng, bool bias = true);
Conv make_conv(int in_ch, int out_ch, int k, int stride, int pad, Rng& rng);
BatchNorm make_batchnorm(int ch);

// Dense(1,100) -> tanh -> Dense(100,1)
Network build_sine_mlp(Rng& rng);
// Conv(3,6,5) relu pool Conv(6,16,5) relu pool flatten Dense(400,120) relu
// Dense(120,80) relu Dense(80,10); 28x28x3 input
Network build_lenet(Rng& rng, int in_ch = 3, int classes = 10);
// Conv stem + BN + relu, `blocks` residual blocks, maxpool head, dense classifier.
Network build_tiny_resnet(Rng& rng, int channels, int blocks, int classes,
                          int in_ch = 3, int spatial = 8);

// JSON serialization; round-trips weights bitwise.
std::string serialize(const Network& net);
Network deserialize(const std::string& json_text);
void save_network(const Network& net, const std::string& path);
Network load_network(const std::string& path);

}  // namespace mnn
