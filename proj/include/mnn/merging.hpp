#pragma once

#include "mnn/layers.hpp"

namespace mnn {

// Layerwise concatenation. first_layer: the network input is not duplicated,
// so teacher weights are stacked over the output dimension only. last_layer:
// weights are halved and concatenated over the input dimension so the output
// is the exact mean of the two teachers' outputs.
Dense merge_dense(const Dense& l1, const Dense& l2, bool first_layer, bool last_layer);
Conv merge_conv(const Conv& c1, const Conv& c2, bool first_layer);
BatchNorm merge_batchnorm(const BatchNorm& b1, const BatchNorm& b2);

// Builds the double-width big student from two architecturally identical
// teachers, inserting freshly initialized gate layers in front of every
// interior weighted layer (on channels when the consumer sits behind a
// flatten) and one shared gate per residual stage.
Network merge_networks(const Network& t1, const Network& t2, Rng& rng,
                       double log_alpha_mean = 2.0, double log_alpha_std = 0.01);

}  // namespace mnn
