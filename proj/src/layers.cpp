#include "mnn/layers.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace mnn {

namespace {

using nlohmann::json;

std::string dims(const std::vector<int>& s) {
    std::ostringstream os;
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    return os.str();
}

// Symbolic per-sample shape propagation through one layer; throws on mismatch.
std::vector<int> propagate(const Layer& layer, const std::vector<int>& in, int index) {
    auto fail = [&](const std::string& what) {
        throw ShapeError("layer " + std::to_string(index) + ": " + what +
                         " (input " + dims(in) + ")");
    };
    if (const auto* d = std::get_if<Dense>(&layer)) {
        if (in.size() != 1 || in[0] != d->in) fail("dense expects " + std::to_string(d->in) + " features");
        return {d->out};
    }
    if (const auto* c = std::get_if<Conv>(&layer)) {
        if (in.size() != 3 || in[0] != c->in_ch) fail("conv expects " + std::to_string(c->in_ch) + " channels");
        const int H = in[1], W = in[2];
        if (c->kh > H + 2 * c->pad || c->kw > W + 2 * c->pad) fail("conv kernel larger than padded input");
        return {c->out_ch, (H + 2 * c->pad - c->kh) / c->stride + 1,
                (W + 2 * c->pad - c->kw) / c->stride + 1};
    }
    if (const auto* b = std::get_if<BatchNorm>(&layer)) {
        if (in.size() != 3 || in[0] != b->ch) fail("batchnorm expects " + std::to_string(b->ch) + " channels");
        return in;
    }
    if (std::holds_alternative<Activation>(layer)) return in;
    if (const auto* p = std::get_if<MaxPool>(&layer)) {
        if (in.size() != 3) fail("maxpool expects [C,H,W]");
        if (p->k > in[1] || p->k > in[2]) fail("maxpool kernel larger than input");
        return {in[0], in[1] / p->k, in[2] / p->k};
    }
    if (std::holds_alternative<Flatten>(layer)) {
        int n = 1;
        for (int d : in) n *= d;
        return {n};
    }
    if (const auto* g = std::get_if<GateLayer>(&layer)) {
        if (g->spatial) {
            if (in.size() != 3 || in[0] != g->width) fail("gate2d width mismatch");
        } else {
            if (in.size() != 1 || in[0] != g->width) fail("gate1d width mismatch");
        }
        return in;
    }
    fail("unknown layer kind");
    return {};
}

}  // namespace

void validate_network(const Network& net);

namespace {

// Per-pass cache of gate realizations, keyed by gate id, so layers sharing a
// gate see the same values within one forward.
struct GateCache {
    std::unordered_map<std::string, Tensor> realized;

    Tensor get(Network& net, const std::string& id, const ForwardOptions& opts) {
        auto it = realized.find(id);
        if (it != realized.end()) return it->second;
        auto git = net.gates.find(id);
        if (git == net.gates.end())
            throw ContractError("forward: gate id '" + id + "' missing from registry");
        Tensor g;
        if (opts.gate_values && opts.gate_values->count(id)) {
            const auto& vals = opts.gate_values->at(id);
            g = Tensor::from({static_cast<int>(vals.size())}, vals);
        } else if (opts.gate_mode == GateMode::Stochastic) {
            if (!opts.rng) throw ContractError("forward: stochastic gates need an rng");
            g = sample_gates(*git->second, *opts.rng);
        } else {
            g = deterministic_gate(*git->second);
        }
        realized.emplace(id, g);
        return g;
    }
};

Tensor apply_layer(Network& net, Layer& layer, const Tensor& x, const ForwardOptions& opts,
                   GateCache& cache, int index) {
    if (auto* d = std::get_if<Dense>(&layer)) {
        if (x.shape().size() != 2 || x.shape()[1] != d->in)
            throw ShapeError("layer " + std::to_string(index) + ": dense expects [N," +
                             std::to_string(d->in) + "]");
        Tensor y = linear(x, d->weight);
        return d->has_bias ? add_bias(y, d->bias) : y;
    }
    if (auto* c = std::get_if<Conv>(&layer)) {
        return conv2d(x, c->weight, c->stride, c->pad);
    }
    if (auto* b = std::get_if<BatchNorm>(&layer)) {
        if (opts.mode == Mode::Train) {
            std::vector<double> bmean, bvar;
            Tensor y = batchnorm2d_train(x, b->gamma, b->beta, b->eps, bmean, bvar);
            const double M = static_cast<double>(x.shape()[0]) * x.shape()[2] * x.shape()[3];
            const double unbias = M > 1.0 ? M / (M - 1.0) : 1.0;
            for (int c = 0; c < b->ch; ++c) {
                b->running_mean[c] = (1.0 - b->momentum) * b->running_mean[c] + b->momentum * bmean[c];
                b->running_var[c] =
                    (1.0 - b->momentum) * b->running_var[c] + b->momentum * bvar[c] * unbias;
            }
            return y;
        }
        return batchnorm2d_eval(x, b->gamma.data(), b->beta.data(), b->running_mean,
                                b->running_var, b->eps);
    }
    if (auto* a = std::get_if<Activation>(&layer)) {
        return a->act == Act::Relu ? relu(x) : mnn::tanh(x);
    }
    if (auto* p = std::get_if<MaxPool>(&layer)) {
        return maxpool2d(x, p->k);
    }
    if (std::holds_alternative<Flatten>(layer)) {
        int n = 1;
        for (size_t i = 1; i < x.shape().size(); ++i) n *= x.shape()[i];
        return reshape(x, {x.shape()[0], n});
    }
    if (auto* g = std::get_if<GateLayer>(&layer)) {
        if (opts.gate_mode == GateMode::Off && !(opts.gate_values && opts.gate_values->count(g->id)))
            return x;
        return channel_scale(x, cache.get(net, g->id, opts));
    }
    throw ContractError("layer " + std::to_string(index) + ": unknown layer kind");
}

}  // namespace

Tensor forward(Network& net, const Tensor& x, const ForwardOptions& opts) {
    GateCache cache;
    Tensor cur = x;
    int index = 0;
    for (auto& block : net.blocks) {
        if (!block.residual) {
            for (auto& layer : block.layers) {
                cur = apply_layer(net, layer, cur, opts, cache, index);
                ++index;
            }
            continue;
        }
        Tensor skip = cur;
        Tensor body = cur;
        for (auto& layer : block.layers) {
            body = apply_layer(net, layer, body, opts, cache, index);
            ++index;
        }
        if (body.shape() != skip.shape())
            throw ShapeError("layer " + std::to_string(index) +
                             ": residual body does not preserve shape");
        cur = relu(add(skip, body));
        if (!block.gate_id.empty() &&
            (opts.gate_mode != GateMode::Off ||
             (opts.gate_values && opts.gate_values->count(block.gate_id))))
            cur = channel_scale(cur, cache.get(net, block.gate_id, opts));
    }
    return cur;
}

std::vector<Tensor> parameters(Network& net) {
    std::vector<Tensor> out;
    for (auto& block : net.blocks)
        for (auto& layer : block.layers) {
            if (auto* d = std::get_if<Dense>(&layer)) {
                out.push_back(d->weight);
                if (d->has_bias) out.push_back(d->bias);
            } else if (auto* c = std::get_if<Conv>(&layer)) {
                out.push_back(c->weight);
            } else if (auto* b = std::get_if<BatchNorm>(&layer)) {
                out.push_back(b->gamma);
                out.push_back(b->beta);
            }
        }
    return out;
}

std::vector<Tensor> gate_parameters(Network& net) {
    std::vector<Tensor> out;
    for (auto& [id, gp] : net.gates) out.push_back(gp->log_alpha);
    return out;
}

std::vector<std::shared_ptr<GateParams>> gate_list(const Network& net) {
    std::vector<std::shared_ptr<GateParams>> out;
    for (const auto& [id, gp] : net.gates) out.push_back(gp);
    return out;
}

std::vector<std::string> shape_signature(const Network& net) {
    std::vector<std::string> sig;
    for (const auto& block : net.blocks) {
        if (block.residual) sig.push_back("residual{");
        for (const auto& layer : block.layers) {
            std::ostringstream os;
            if (const auto* d = std::get_if<Dense>(&layer))
                os << "dense " << d->in << "->" << d->out << (d->has_bias ? "" : " nobias");
            else if (const auto* c = std::get_if<Conv>(&layer))
                os << "conv " << c->in_ch << "->" << c->out_ch << " k" << c->kh << "x" << c->kw
                   << " s" << c->stride << " p" << c->pad;
            else if (const auto* b = std::get_if<BatchNorm>(&layer))
                os << "batchnorm " << b->ch;
            else if (const auto* a = std::get_if<Activation>(&layer))
                os << (a->act == Act::Relu ? "relu" : "tanh");
            else if (const auto* p = std::get_if<MaxPool>(&layer))
                os << "maxpool " << p->k;
            else if (std::holds_alternative<Flatten>(layer))
                os << "flatten";
            else if (const auto* g = std::get_if<GateLayer>(&layer))
                os << (g->spatial ? "gate2d " : "gate1d ") << g->width;
            sig.push_back(os.str());
        }
        if (block.residual) sig.push_back("}");
    }
    return sig;
}

void validate_network(const Network& net) {
    std::vector<int> shape = net.input_shape;
    int index = 0;
    for (const auto& block : net.blocks) {
        const std::vector<int> entry = shape;
        for (const auto& layer : block.layers) {
            shape = propagate(layer, shape, index);
            ++index;
            if (const auto* g = std::get_if<GateLayer>(&layer))
                if (!net.gates.count(g->id))
                    throw ContractError("gate id '" + g->id + "' missing from registry");
        }
        if (block.residual) {
            if (shape != entry)
                throw ShapeError("residual block ending at layer " + std::to_string(index) +
                                 " does not preserve shape");
            if (!block.gate_id.empty() && !net.gates.count(block.gate_id))
                throw ContractError("gate id '" + block.gate_id + "' missing from registry");
        }
    }
}

Dense make_dense(int in, int out, Rng& rng, bool bias) {
    Dense d;
    d.in = in;
    d.out = out;
    d.has_bias = bias;
    const double k = 1.0 / std::sqrt(static_cast<double>(in));
    d.weight = Tensor::uniform({out, in}, -k, k, rng, true);
    if (bias) d.bias = Tensor::uniform({out}, -k, k, rng, true);
    return d;
}

Conv make_conv(int in_ch, int out_ch, int k, int stride, int pad, Rng& rng) {
    Conv c;
    c.in_ch = in_ch;
    c.out_ch = out_ch;
    c.kh = c.kw = k;
    c.stride = stride;
    c.pad = pad;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_ch * k * k));
    c.weight = Tensor::uniform({out_ch, in_ch, k, k}, -bound, bound, rng, true);
    return c;
}

BatchNorm make_batchnorm(int ch) {
    BatchNorm b;
    b.ch = ch;
    b.gamma = Tensor::full({ch}, 1.0, true);
    b.beta = Tensor::zeros({ch}, true);
    b.running_mean.assign(ch, 0.0);
    b.running_var.assign(ch, 1.0);
    return b;
}

Network build_sine_mlp(Rng& rng) {
    Network net;
    net.input_shape = {1};
    Block chain;
    chain.layers.push_back(make_dense(1, 100, rng));
    chain.layers.push_back(Activation{Act::Relu});
    chain.layers.push_back(make_dense(100, 1, rng));
    net.blocks.push_back(std::move(chain));
    validate_network(net);
    return net;
}

Network build_lenet(Rng& rng, int in_ch, int classes) {
    Network net;
    net.input_shape = {in_ch, 28, 28};
    Block chain;
    chain.layers.push_back(make_conv(in_ch, 6, 5, 1, 2, rng));
    chain.layers.push_back(Activation{Act::Relu});
    chain.layers.push_back(MaxPool{2});
    chain.layers.push_back(make_conv(6, 16, 5, 1, 0, rng));
    chain.layers.push_back(Activation{Act::Relu});
    chain.layers.push_back(MaxPool{2});
    chain.layers.push_back(Flatten{});
    chain.layers.push_back(make_dense(400, 120, rng));
    chain.layers.push_back(Activation{Act::Relu});
    chain.layers.push_back(make_dense(120, 80, rng));
    chain.layers.push_back(Activation{Act::Relu});
    chain.layers.push_back(make_dense(80, classes, rng));
    net.blocks.push_back(std::move(chain));
    validate_network(net);
    return net;
}

Network build_tiny_resnet(Rng& rng, int channels, int blocks, int classes, int in_ch,
                          int spatial) {
    Network net;
    net.input_shape = {in_ch, spatial, spatial};
    Block stem;
    stem.layers.push_back(make_conv(in_ch, channels, 3, 1, 1, rng));
    stem.layers.push_back(make_batchnorm(channels));
    stem.layers.push_back(Activation{Act::Relu});
    net.blocks.push_back(std::move(stem));
    for (int i = 0; i < blocks; ++i) {
        Block res;
        res.residual = true;
        res.layers.push_back(make_conv(channels, channels, 3, 1, 1, rng));
        res.layers.push_back(make_batchnorm(channels));
        res.layers.push_back(Activation{Act::Relu});
        res.layers.push_back(make_conv(channels, channels, 3, 1, 1, rng));
        res.layers.push_back(make_batchnorm(channels));
        net.blocks.push_back(std::move(res));
    }
    Block head;
    head.layers.push_back(MaxPool{2});
    head.layers.push_back(Flatten{});
    head.layers.push_back(make_dense(channels * (spatial / 2) * (spatial / 2), classes, rng));
    net.blocks.push_back(std::move(head));
    validate_network(net);
    return net;
}

// --- serialization ----------------------------------------------------------

namespace {

Tensor tensor_from_json(const json& j, bool requires_grad) {
    std::vector<int> shape = j.at("shape").get<std::vector<int>>();
    std::vector<double> data = j.at("data").get<std::vector<double>>();
    return Tensor::from(std::move(shape), std::move(data), requires_grad);
}

json layer_to_json(const Layer& layer) {
    json j;
    if (const auto* d = std::get_if<Dense>(&layer)) {
        j["kind"] = "dense";
        j["in"] = d->in;
        j["out"] = d->out;
        j["shape"] = d->weight.shape();
        j["data"] = d->weight.data();
        if (d->has_bias) j["bias"] = d->bias.data();
    } else if (const auto* c = std::get_if<Conv>(&layer)) {
        j["kind"] = "conv2d";
        j["in_ch"] = c->in_ch;
        j["out_ch"] = c->out_ch;
        j["kh"] = c->kh;
        j["kw"] = c->kw;
        j["stride"] = c->stride;
        j["pad"] = c->pad;
        j["shape"] = c->weight.shape();
        j["data"] = c->weight.data();
    } else if (const auto* b = std::get_if<BatchNorm>(&layer)) {
        j["kind"] = "batchnorm2d";
        j["ch"] = b->ch;
        j["eps"] = b->eps;
        j["momentum"] = b->momentum;
        j["shape"] = b->gamma.shape();
        j["data"] = b->gamma.data();
        j["beta"] = b->beta.data();
        j["running_mean"] = b->running_mean;
        j["running_var"] = b->running_var;
    } else if (const auto* a = std::get_if<Activation>(&layer)) {
        j["kind"] = a->act == Act::Relu ? "relu" : "tanh";
    } else if (const auto* p = std::get_if<MaxPool>(&layer)) {
        j["kind"] = "maxpool";
        j["k"] = p->k;
    } else if (std::holds_alternative<Flatten>(layer)) {
        j["kind"] = "flatten";
    } else if (const auto* g = std::get_if<GateLayer>(&layer)) {
        j["kind"] = g->spatial ? "gate2d" : "gate1d";
        j["width"] = g->width;
        j["gate_id"] = g->id;
    }
    return j;
}

Layer layer_from_json(const json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "dense") {
        Dense d;
        d.in = j.at("in").get<int>();
        d.out = j.at("out").get<int>();
        d.weight = tensor_from_json(j, true);
        d.has_bias = j.contains("bias");
        if (d.has_bias)
            d.bias = Tensor::from({d.out}, j.at("bias").get<std::vector<double>>(), true);
        return d;
    }
    if (kind == "conv2d") {
        Conv c;
        c.in_ch = j.at("in_ch").get<int>();
        c.out_ch = j.at("out_ch").get<int>();
        c.kh = j.at("kh").get<int>();
        c.kw = j.at("kw").get<int>();
        c.stride = j.at("stride").get<int>();
        c.pad = j.at("pad").get<int>();
        c.weight = tensor_from_json(j, true);
        return c;
    }
    if (kind == "batchnorm2d") {
        BatchNorm b;
        b.ch = j.at("ch").get<int>();
        b.eps = j.at("eps").get<double>();
        b.momentum = j.at("momentum").get<double>();
        b.gamma = tensor_from_json(j, true);
        b.beta = Tensor::from({b.ch}, j.at("beta").get<std::vector<double>>(), true);
        b.running_mean = j.at("running_mean").get<std::vector<double>>();
        b.running_var = j.at("running_var").get<std::vector<double>>();
        return b;
    }
    if (kind == "relu") return Activation{Act::Relu};
    if (kind == "tanh") return Activation{Act::Tanh};
    if (kind == "maxpool") return MaxPool{j.at("k").get<int>()};
    if (kind == "flatten") return Flatten{};
    if (kind == "gate1d" || kind == "gate2d") {
        GateLayer g;
        g.width = j.at("width").get<int>();
        g.spatial = kind == "gate2d";
        g.id = j.at("gate_id").get<std::string>();
        return g;
    }
    throw IoError("deserialize: unknown layer kind '" + kind + "'");
}

}  // namespace

std::string serialize(const Network& net) {
    json j;
    j["format_version"] = 1;
    j["input_shape"] = net.input_shape;
    json layers = json::array();
    for (const auto& block : net.blocks) {
        if (block.residual) {
            json rb;
            rb["kind"] = "residual";
            rb["gate_id"] = block.gate_id;
            json body = json::array();
            for (const auto& layer : block.layers) body.push_back(layer_to_json(layer));
            rb["layers"] = std::move(body);
            layers.push_back(std::move(rb));
        } else {
            for (const auto& layer : block.layers) layers.push_back(layer_to_json(layer));
        }
    }
    j["layers"] = std::move(layers);
    json gates = json::object();
    for (const auto& [id, gp] : net.gates) {
        gates[id] = json{{"log_alpha", gp->log_alpha.data()},
                         {"beta", gp->beta},
                         {"gamma", gp->gamma},
                         {"zeta", gp->zeta}};
    }
    j["gates"] = std::move(gates);
    return j.dump();
}

Network deserialize(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw IoError(std::string("deserialize: invalid JSON: ") + e.what());
    }
    if (j.value("format_version", 0) != 1)
        throw IoError("deserialize: unsupported format_version");
    Network net;
    net.input_shape = j.at("input_shape").get<std::vector<int>>();
    Block chain;
    for (const auto& lj : j.at("layers")) {
        if (lj.at("kind").get<std::string>() == "residual") {
            if (!chain.layers.empty()) {
                net.blocks.push_back(std::move(chain));
                chain = Block{};
            }
            Block res;
            res.residual = true;
            res.gate_id = lj.at("gate_id").get<std::string>();
            for (const auto& bl : lj.at("layers")) res.layers.push_back(layer_from_json(bl));
            net.blocks.push_back(std::move(res));
        } else {
            chain.layers.push_back(layer_from_json(lj));
        }
    }
    if (!chain.layers.empty()) net.blocks.push_back(std::move(chain));
    for (auto it = j.at("gates").begin(); it != j.at("gates").end(); ++it) {
        auto gp = std::make_shared<GateParams>();
        gp->log_alpha =
            Tensor::from({static_cast<int>(it.value().at("log_alpha").size())},
                         it.value().at("log_alpha").get<std::vector<double>>(), true);
        gp->beta = it.value().at("beta").get<double>();
        gp->gamma = it.value().at("gamma").get<double>();
        gp->zeta = it.value().at("zeta").get<double>();
        net.gates[it.key()] = std::move(gp);
    }
    validate_network(net);
    return net;
}

void save_network(const Network& net, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << serialize(net);
    if (!out) throw IoError("write failed: " + path);
}

Network load_network(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open network file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return deserialize(ss.str());
}

}  // namespace mnn
