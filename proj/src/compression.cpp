#include "mnn/compression.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>

namespace mnn {

std::vector<int> rank_units(const GateParams& gp) {
    Tensor p = p_open(gp);
    std::vector<int> order(p.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (p.data()[a] != p.data()[b]) return p.data()[a] > p.data()[b];
        return a < b;
    });
    return order;
}

namespace {

int gate_use_count(const Network& net, const std::string& id) {
    int n = 0;
    for (const auto& block : net.blocks) {
        for (const auto& layer : block.layers)
            if (const auto* g = std::get_if<GateLayer>(&layer))
                if (g->id == id) ++n;
        if (block.residual && block.gate_id == id) ++n;
    }
    return n;
}

}  // namespace

std::map<std::string, KeptSet> kept_sets(const Network& big) {
    std::map<std::string, KeptSet> out;
    for (const auto& [id, gp] : big.gates) {
        const int k = gp->units();
        if (k % 2 != 0)
            throw ContractError("compress: gate '" + id + "' has odd width " +
                                std::to_string(k));
        KeptSet ks;
        ks.shared = gate_use_count(big, id) > 1;
        std::vector<int> order = rank_units(*gp);
        ks.kept.assign(order.begin(), order.begin() + k / 2);
        std::sort(ks.kept.begin(), ks.kept.end());
        Tensor ghat = deterministic_gate(*gp);
        ks.fold_scale.reserve(ks.kept.size());
        for (int idx : ks.kept)
            ks.fold_scale.push_back(ks.shared ? 1.0 : ghat.data()[idx]);
        out.emplace(id, std::move(ks));
    }
    return out;
}

std::vector<CompressionRow> compression_report(const Network& big) {
    auto sets = kept_sets(big);
    std::vector<CompressionRow> rows;
    for (const auto& [id, gp] : big.gates) {
        Tensor p = p_open(*gp);
        const auto& ks = sets.at(id);
        for (int u = 0; u < gp->units(); ++u) {
            const bool kept = std::binary_search(ks.kept.begin(), ks.kept.end(), u);
            rows.push_back({id, u, p.data()[u], kept});
        }
    }
    return rows;
}

void write_compression_report_csv(const std::vector<CompressionRow>& rows,
                                  const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "layer,unit_index,p_open,kept\n";
    out.precision(17);
    for (const auto& r : rows)
        out << r.gate_id << "," << r.unit << "," << r.p_open << "," << (r.kept ? 1 : 0)
            << "\n";
}

namespace {

// Input-side selection pending application to the next weighted layer.
struct Sel {
    std::vector<int> idx;        // unit indices in the consumer's original input space
    std::vector<double> scale;   // folded gate value per index
    bool channels = false;       // true while still in channel space
};

Dense slice_dense(const Dense& d, const std::optional<Sel>& in_sel,
                  const std::vector<int>* out_keep) {
    const int new_in = in_sel ? static_cast<int>(in_sel->idx.size()) : d.in;
    std::vector<int> rows;
    if (out_keep) rows = *out_keep;
    else {
        rows.resize(d.out);
        std::iota(rows.begin(), rows.end(), 0);
    }
    Dense nd;
    nd.in = new_in;
    nd.out = static_cast<int>(rows.size());
    nd.has_bias = d.has_bias;
    nd.weight = Tensor::zeros({nd.out, nd.in}, true);
    for (int r = 0; r < nd.out; ++r) {
        const double* src = d.weight.data().data() + static_cast<size_t>(rows[r]) * d.in;
        double* dst = nd.weight.data().data() + static_cast<size_t>(r) * nd.in;
        if (in_sel)
            for (int c = 0; c < nd.in; ++c) dst[c] = src[in_sel->idx[c]] * in_sel->scale[c];
        else
            std::copy_n(src, d.in, dst);
    }
    if (d.has_bias) {
        nd.bias = Tensor::zeros({nd.out}, true);
        for (int r = 0; r < nd.out; ++r) nd.bias.data()[r] = d.bias.data()[rows[r]];
    }
    return nd;
}

Conv slice_conv(const Conv& c, const std::optional<Sel>& in_sel,
                const std::vector<int>* out_keep) {
    std::vector<int> rows;
    if (out_keep) rows = *out_keep;
    else {
        rows.resize(c.out_ch);
        std::iota(rows.begin(), rows.end(), 0);
    }
    Conv nc;
    nc.kh = c.kh;
    nc.kw = c.kw;
    nc.stride = c.stride;
    nc.pad = c.pad;
    nc.in_ch = in_sel ? static_cast<int>(in_sel->idx.size()) : c.in_ch;
    nc.out_ch = static_cast<int>(rows.size());
    nc.weight = Tensor::zeros({nc.out_ch, nc.in_ch, c.kh, c.kw}, true);
    const size_t ksz = static_cast<size_t>(c.kh) * c.kw;
    for (int r = 0; r < nc.out_ch; ++r)
        for (int ci = 0; ci < nc.in_ch; ++ci) {
            const int src_ci = in_sel ? in_sel->idx[ci] : ci;
            const double s = in_sel ? in_sel->scale[ci] : 1.0;
            const double* src =
                c.weight.data().data() + (static_cast<size_t>(rows[r]) * c.in_ch + src_ci) * ksz;
            double* dst =
                nc.weight.data().data() + (static_cast<size_t>(r) * nc.in_ch + ci) * ksz;
            for (size_t i = 0; i < ksz; ++i) dst[i] = src[i] * s;
        }
    return nc;
}

BatchNorm slice_bn(const BatchNorm& b, const std::vector<int>& keep) {
    BatchNorm nb = make_batchnorm(static_cast<int>(keep.size()));
    nb.eps = b.eps;
    nb.momentum = b.momentum;
    for (size_t i = 0; i < keep.size(); ++i) {
        nb.gamma.data()[i] = b.gamma.data()[keep[i]];
        nb.beta.data()[i] = b.beta.data()[keep[i]];
        nb.running_mean[i] = b.running_mean[keep[i]];
        nb.running_var[i] = b.running_var[keep[i]];
    }
    return nb;
}

// Coordinates of the last weighted layer (and its batch norms) in the network
// being rebuilt; sliced retroactively when the gate consuming their output is
// reached.
struct Coord {
    size_t block, layer;
};

struct ProducerGroup {
    std::optional<Coord> weighted;
    std::vector<Coord> bns;
};

struct Rebuilder {
    Network out;
    std::map<std::string, KeptSet> sets;
    std::optional<Sel> pending;
    ProducerGroup producer;
    // current per-sample shape, tracked for the flatten expansion
    std::vector<int> shape;

    Layer& at(const Coord& c) { return out.blocks[c.block].layers[c.layer]; }

    void slice_producer_outputs(const KeptSet& ks) {
        if (!producer.weighted)
            throw ContractError("compress: gate without a producing layer");
        Layer& w = at(*producer.weighted);
        if (auto* d = std::get_if<Dense>(&w))
            *d = slice_dense(*d, std::nullopt, &ks.kept);
        else if (auto* c = std::get_if<Conv>(&w))
            *c = slice_conv(*c, std::nullopt, &ks.kept);
        for (const Coord& bc : producer.bns) {
            auto& bn = std::get<BatchNorm>(at(bc));
            bn = slice_bn(bn, ks.kept);
        }
    }

    void apply_gate(const std::string& id, bool spatial) {
        const KeptSet& ks = sets.at(id);
        slice_producer_outputs(ks);
        Sel sel;
        sel.idx = ks.kept;
        sel.scale = ks.fold_scale;
        sel.channels = spatial;
        pending = std::move(sel);
        if (spatial)
            shape[0] = static_cast<int>(ks.kept.size());
        else
            shape = {static_cast<int>(ks.kept.size())};
    }

    void push(Layer layer) {
        if (out.blocks.empty()) out.blocks.push_back(Block{});
        out.blocks.back().layers.push_back(std::move(layer));
    }

    Coord last_coord() {
        return {out.blocks.size() - 1, out.blocks.back().layers.size() - 1};
    }

    void handle(const Layer& layer) {
        if (const auto* d = std::get_if<Dense>(&layer)) {
            push(slice_dense(*d, pending, nullptr));
            pending.reset();
            producer = ProducerGroup{last_coord(), {}};
            shape = {std::get<Dense>(at(last_coord())).out};
        } else if (const auto* c = std::get_if<Conv>(&layer)) {
            push(slice_conv(*c, pending, nullptr));
            pending.reset();
            producer = ProducerGroup{last_coord(), {}};
            const Conv& nc = std::get<Conv>(at(last_coord()));
            shape = {nc.out_ch, (shape[1] + 2 * nc.pad - nc.kh) / nc.stride + 1,
                     (shape[2] + 2 * nc.pad - nc.kw) / nc.stride + 1};
        } else if (const auto* b = std::get_if<BatchNorm>(&layer)) {
            push(slice_bn(*b, [&] {
                std::vector<int> all(b->ch);
                std::iota(all.begin(), all.end(), 0);
                return all;
            }()));
            producer.bns.push_back(last_coord());
        } else if (const auto* g = std::get_if<GateLayer>(&layer)) {
            apply_gate(g->id, g->spatial);  // gate layer itself is dropped
        } else if (const auto* p = std::get_if<MaxPool>(&layer)) {
            push(*p);
            shape = {shape[0], shape[1] / p->k, shape[2] / p->k};
        } else if (std::holds_alternative<Flatten>(layer)) {
            push(Flatten{});
            if (pending && pending->channels) {
                // keep a channel => keep all its spatial positions
                const int hw = shape[1] * shape[2];
                Sel exp;
                exp.channels = false;
                exp.idx.reserve(pending->idx.size() * hw);
                exp.scale.reserve(pending->idx.size() * hw);
                for (size_t i = 0; i < pending->idx.size(); ++i)
                    for (int s = 0; s < hw; ++s) {
                        exp.idx.push_back(pending->idx[i] * hw + s);
                        exp.scale.push_back(pending->scale[i]);
                    }
                pending = std::move(exp);
            }
            shape = {shape[0] * shape[1] * shape[2]};
        } else {
            push(layer);  // activation
        }
    }
};

}  // namespace

Network compress(const Network& big) {
    if (!big.has_gates())
        throw ContractError("compress: network has no gates");
    Rebuilder rb;
    rb.sets = kept_sets(big);
    rb.out.input_shape = big.input_shape;
    rb.shape = big.input_shape;

    for (const auto& block : big.blocks) {
        if (!block.residual) {
            if (rb.out.blocks.empty() || rb.out.blocks.back().residual)
                rb.out.blocks.push_back(Block{});
            for (const auto& layer : block.layers) rb.handle(layer);
            continue;
        }
        if (block.gate_id.empty())
            throw ContractError("compress: residual block without a shared gate");
        Block nb;
        nb.residual = true;
        rb.out.blocks.push_back(std::move(nb));
        // the stage gate has already sliced the producing layers and set the
        // pending selection; body conv1 consumes it
        for (const auto& layer : block.layers) rb.handle(layer);
        // the exit gate slices the body's last conv/BN outputs and re-arms the
        // selection for the next consumer
        rb.apply_gate(block.gate_id, true);
    }

    rb.out.gates.clear();
    validate_network(rb.out);
    return rb.out;
}

}  // namespace mnn
