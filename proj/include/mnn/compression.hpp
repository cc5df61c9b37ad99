#pragma once

#include "mnn/layers.hpp"

namespace mnn {

// Unit indices sorted by p_open descending, ties broken by ascending index.
std::vector<int> rank_units(const GateParams& gp);

// Keeps the top half of units at every gate, slices adjacent weights, folds
// the deterministic gate value into the consuming layer's input weights
// (shared residual-stage gates are binarized instead; a fractional scale on
// a skip connection cannot be folded into the restored architecture), and
// removes the gate layers. The result has the teacher architecture.
Network compress(const Network& big);

struct CompressionRow {
    std::string gate_id;
    int unit;
    double p_open;
    bool kept;
};

std::vector<CompressionRow> compression_report(const Network& big);
void write_compression_report_csv(const std::vector<CompressionRow>& rows,
                                  const std::string& path);

// Per-gate kept sets and the gate values compress folds, exposed so callers
// (and tests) can reproduce the masked-gate view of the big student.
struct KeptSet {
    std::vector<int> kept;          // ascending unit indices
    std::vector<double> fold_scale;  // per kept unit; 1.0 for shared gates
    bool shared = false;
};

std::map<std::string, KeptSet> kept_sets(const Network& big);

}  // namespace mnn
