#include "mnn/merging.hpp"

#include <sstream>

namespace mnn {

Dense merge_dense(const Dense& l1, const Dense& l2, bool first_layer, bool last_layer) {
    if (l1.in != l2.in || l1.out != l2.out || l1.has_bias != l2.has_bias)
        throw MergeError("merge_dense: teachers have different dense shapes");
    const int in = l1.in, out = l1.out;
    Dense m;
    m.has_bias = l1.has_bias;
    if (first_layer && last_layer) {
        // single-layer network: the average is taken directly
        m.in = in;
        m.out = out;
        m.weight = Tensor::zeros({out, in}, true);
        for (size_t i = 0; i < m.weight.size(); ++i)
            m.weight.data()[i] = 0.5 * (l1.weight.data()[i] + l2.weight.data()[i]);
        if (m.has_bias) {
            m.bias = Tensor::zeros({out}, true);
            for (int i = 0; i < out; ++i)
                m.bias.data()[i] = 0.5 * (l1.bias.data()[i] + l2.bias.data()[i]);
        }
        return m;
    }
    if (first_layer) {
        // stacked rows: [W1; W2], input not duplicated
        m.in = in;
        m.out = 2 * out;
        m.weight = Tensor::zeros({2 * out, in}, true);
        for (int r = 0; r < out; ++r)
            for (int c = 0; c < in; ++c) {
                m.weight.data()[static_cast<size_t>(r) * in + c] =
                    l1.weight.data()[static_cast<size_t>(r) * in + c];
                m.weight.data()[static_cast<size_t>(r + out) * in + c] =
                    l2.weight.data()[static_cast<size_t>(r) * in + c];
            }
        if (m.has_bias) {
            m.bias = Tensor::zeros({2 * out}, true);
            for (int r = 0; r < out; ++r) {
                m.bias.data()[r] = l1.bias.data()[r];
                m.bias.data()[r + out] = l2.bias.data()[r];
            }
        }
        return m;
    }
    if (last_layer) {
        // side-by-side halved: [W1/2 | W2/2], bias (b1+b2)/2
        m.in = 2 * in;
        m.out = out;
        m.weight = Tensor::zeros({out, 2 * in}, true);
        for (int r = 0; r < out; ++r)
            for (int c = 0; c < in; ++c) {
                m.weight.data()[static_cast<size_t>(r) * 2 * in + c] =
                    0.5 * l1.weight.data()[static_cast<size_t>(r) * in + c];
                m.weight.data()[static_cast<size_t>(r) * 2 * in + in + c] =
                    0.5 * l2.weight.data()[static_cast<size_t>(r) * in + c];
            }
        if (m.has_bias) {
            m.bias = Tensor::zeros({out}, true);
            for (int r = 0; r < out; ++r)
                m.bias.data()[r] = 0.5 * (l1.bias.data()[r] + l2.bias.data()[r]);
        }
        return m;
    }
    // interior: block diagonal, off-blocks zero
    m.in = 2 * in;
    m.out = 2 * out;
    m.weight = Tensor::zeros({2 * out, 2 * in}, true);
    for (int r = 0; r < out; ++r)
        for (int c = 0; c < in; ++c) {
            m.weight.data()[static_cast<size_t>(r) * 2 * in + c] =
                l1.weight.data()[static_cast<size_t>(r) * in + c];
            m.weight.data()[static_cast<size_t>(r + out) * 2 * in + in + c] =
                l2.weight.data()[static_cast<size_t>(r) * in + c];
        }
    if (m.has_bias) {
        m.bias = Tensor::zeros({2 * out}, true);
        for (int r = 0; r < out; ++r) {
            m.bias.data()[r] = l1.bias.data()[r];
            m.bias.data()[r + out] = l2.bias.data()[r];
        }
    }
    return m;
}

Conv merge_conv(const Conv& c1, const Conv& c2, bool first_layer) {
    if (c1.in_ch != c2.in_ch || c1.out_ch != c2.out_ch || c1.kh != c2.kh ||
        c1.kw != c2.kw || c1.stride != c2.stride || c1.pad != c2.pad)
        throw MergeError("merge_conv: teachers have different conv hyperparameters");
    const int in = c1.in_ch, out = c1.out_ch, kh = c1.kh, kw = c1.kw;
    const size_t ksz = static_cast<size_t>(kh) * kw;
    Conv m;
    m.kh = kh;
    m.kw = kw;
    m.stride = c1.stride;
    m.pad = c1.pad;
    m.out_ch = 2 * out;
    m.in_ch = first_layer ? in : 2 * in;
    m.weight = Tensor::zeros({m.out_ch, m.in_ch, kh, kw}, true);
    auto src = [&](const Conv& c, int co, int ci) {
        return c.weight.data().data() + ((static_cast<size_t>(co) * in + ci) * ksz);
    };
    auto dst = [&](int co, int ci) {
        return m.weight.data().data() + ((static_cast<size_t>(co) * m.in_ch + ci) * ksz);
    };
    for (int co = 0; co < out; ++co)
        for (int ci = 0; ci < in; ++ci) {
            std::copy_n(src(c1, co, ci), ksz, dst(co, ci));
            std::copy_n(src(c2, co, ci), ksz, dst(co + out, first_layer ? ci : ci + in));
        }
    return m;
}

BatchNorm merge_batchnorm(const BatchNorm& b1, const BatchNorm& b2) {
    if (b1.ch != b2.ch || b1.eps != b2.eps || b1.momentum != b2.momentum)
        throw MergeError("merge_batchnorm: teachers have different batch-norm parameters");
    BatchNorm m = make_batchnorm(2 * b1.ch);
    m.eps = b1.eps;
    m.momentum = b1.momentum;
    for (int c = 0; c < b1.ch; ++c) {
        m.gamma.data()[c] = b1.gamma.data()[c];
        m.gamma.data()[c + b1.ch] = b2.gamma.data()[c];
        m.beta.data()[c] = b1.beta.data()[c];
        m.beta.data()[c + b1.ch] = b2.beta.data()[c];
        m.running_mean[c] = b1.running_mean[c];
        m.running_mean[c + b1.ch] = b2.running_mean[c];
        m.running_var[c] = b1.running_var[c];
        m.running_var[c + b1.ch] = b2.running_var[c];
    }
    return m;
}

namespace {

bool is_weighted(const Layer& l) {
    return std::holds_alternative<Dense>(l) || std::holds_alternative<Conv>(l);
}

void check_same_structure(const Network& t1, const Network& t2) {
    if (t1.has_gates() || t2.has_gates())
        throw MergeError("merge_networks: teachers must not contain gate layers");
    if (t1.input_shape != t2.input_shape)
        throw MergeError("merge_networks: teachers have different input shapes");
    auto s1 = shape_signature(t1);
    auto s2 = shape_signature(t2);
    if (s1.size() != s2.size())
        throw MergeError("merge_networks: teachers have different layer counts");
    for (size_t i = 0; i < s1.size(); ++i)
        if (s1[i] != s2[i])
            throw MergeError("merge_networks: teachers differ at layer " + std::to_string(i) +
                             ": '" + s1[i] + "' vs '" + s2[i] + "'");
}

}  // namespace

Network merge_networks(const Network& t1, const Network& t2, Rng& rng,
                       double log_alpha_mean, double log_alpha_std) {
    check_same_structure(t1, t2);

    // locate first and last weighted layers of the whole network
    int n_weighted = 0;
    for (const auto& b : t1.blocks)
        for (const auto& l : b.layers)
            if (is_weighted(l)) ++n_weighted;
    if (n_weighted == 0) throw MergeError("merge_networks: no weighted layers to merge");

    Network big;
    big.input_shape = t1.input_shape;
    int gate_counter = 0;
    int weighted_seen = 0;
    bool after_residual_gate = false;  // suppresses the gate before the stage's consumer

    auto new_gate = [&](int width, bool spatial, const std::string& explicit_id = "") {
        std::string id = explicit_id.empty() ? "g" + std::to_string(gate_counter++) : explicit_id;
        big.gates[id] = std::make_shared<GateParams>(
            GateParams::init(width, rng, log_alpha_mean, log_alpha_std));
        return GateLayer{width, spatial, id};
    };

    int stage_counter = 0;
    std::string open_stage_id;  // id of the stage whose residual run is in progress

    for (size_t bi = 0; bi < t1.blocks.size(); ++bi) {
        const Block& b1 = t1.blocks[bi];
        const Block& b2 = t2.blocks[bi];
        if (b1.residual != b2.residual)
            throw MergeError("merge_networks: teachers differ in residual structure");

        if (!b1.residual) {
            open_stage_id.clear();
            Block out;
            for (size_t li = 0; li < b1.layers.size(); ++li) {
                const Layer& l1 = b1.layers[li];
                const Layer& l2 = b2.layers[li];
                if (const auto* d1 = std::get_if<Dense>(&l1)) {
                    const auto& d2 = std::get<Dense>(l2);
                    const bool first = weighted_seen == 0;
                    const bool last = weighted_seen == n_weighted - 1;
                    if (!first && !after_residual_gate) {
                        // gate the consumer's inputs; on channels when a
                        // flatten sits directly in front of this layer
                        if (!out.layers.empty() &&
                            std::holds_alternative<Flatten>(out.layers.back())) {
                            // find channel count from the preceding conv space
                            Layer fl = out.layers.back();
                            out.layers.pop_back();
                            int ch = 0;
                            for (auto it = out.layers.rbegin(); it != out.layers.rend(); ++it) {
                                if (const auto* c = std::get_if<Conv>(&*it)) { ch = c->out_ch; break; }
                                if (const auto* bn = std::get_if<BatchNorm>(&*it)) { ch = bn->ch; break; }
                            }
                            if (ch == 0)
                                throw MergeError("merge_networks: flatten without conv producer");
                            out.layers.push_back(new_gate(ch, true));
                            out.layers.push_back(fl);
                        } else {
                            out.layers.push_back(new_gate(2 * d1->in, false));
                        }
                    }
                    after_residual_gate = false;
                    out.layers.push_back(merge_dense(*d1, d2, first, last));
                    ++weighted_seen;
                } else if (const auto* c1 = std::get_if<Conv>(&l1)) {
                    const auto& c2 = std::get<Conv>(l2);
                    const bool first = weighted_seen == 0;
                    if (weighted_seen == n_weighted - 1)
                        throw MergeError("merge_networks: conv as final layer is unsupported");
                    if (!first && !after_residual_gate)
                        out.layers.push_back(new_gate(2 * c1->in_ch, true));
                    after_residual_gate = false;
                    out.layers.push_back(merge_conv(*c1, c2, first));
                    ++weighted_seen;
                } else if (const auto* bn1 = std::get_if<BatchNorm>(&l1)) {
                    out.layers.push_back(merge_batchnorm(*bn1, std::get<BatchNorm>(l2)));
                } else {
                    out.layers.push_back(l1);  // activation / pool / flatten
                }
            }
            big.blocks.push_back(std::move(out));
            continue;
        }

        // residual block: one shared gate per contiguous residual run (stage)
        const int ch2 = [&] {
            for (const auto& l : b1.layers)
                if (const auto* c = std::get_if<Conv>(&l)) return 2 * c->in_ch;
            throw MergeError("merge_networks: residual block without conv");
        }();
        if (open_stage_id.empty()) {
            open_stage_id = "s" + std::to_string(stage_counter++);
            GateLayer stage_gate = new_gate(ch2, true, open_stage_id);
            if (big.blocks.empty() || big.blocks.back().residual)
                big.blocks.push_back(Block{});
            big.blocks.back().layers.push_back(stage_gate);
        }

        Block out;
        out.residual = true;
        out.gate_id = open_stage_id;
        bool first_conv_done = false;
        for (size_t li = 0; li < b1.layers.size(); ++li) {
            const Layer& l1 = b1.layers[li];
            const Layer& l2 = b2.layers[li];
            if (const auto* c1 = std::get_if<Conv>(&l1)) {
                if (first_conv_done)
                    out.layers.push_back(new_gate(2 * c1->in_ch, true));
                out.layers.push_back(merge_conv(*c1, std::get<Conv>(l2), false));
                first_conv_done = true;
                ++weighted_seen;
            } else if (const auto* bn1 = std::get_if<BatchNorm>(&l1)) {
                out.layers.push_back(merge_batchnorm(*bn1, std::get<BatchNorm>(l2)));
            } else if (std::holds_alternative<Dense>(l1)) {
                throw MergeError("merge_networks: dense layers inside residual blocks unsupported");
            } else {
                out.layers.push_back(l1);
            }
        }
        big.blocks.push_back(std::move(out));
        after_residual_gate = true;  // stage exit gate already covers the next consumer
    }

    validate_network(big);
    return big;
}

}  // namespace mnn
