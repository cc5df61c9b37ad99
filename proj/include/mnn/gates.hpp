#pragma once

#include <memory>
#include <vector>

#include "mnn/tensor.hpp"

namespace mnn {

// Hard-concrete gate parameters for one gated layer: a trainable log_alpha
// per unit plus the fixed stretch constants. gamma < 0 < 1 < zeta gives the
// distribution point mass at both 0 and 1.
struct GateParams {
    Tensor log_alpha;  // [k], requires_grad
    double beta = 2.0 / 3.0;
    double gamma = -0.1;
    double zeta = 1.1;

    int units() const { return log_alpha.defined() ? log_alpha.shape()[0] : 0; }

    static GateParams init(int k, Rng& rng, double log_alpha_mean = 2.0,
                           double log_alpha_std = 0.01);
};

// One stochastic realization: u ~ U(0,1) per unit,
// s = sigmoid((log u - log(1-u) + log_alpha)/beta),
// g = clamp(s*(zeta-gamma)+gamma, 0, 1). Differentiable w.r.t. log_alpha.
Tensor sample_gates(const GateParams& gp, Rng& rng);

// Same construction with the noise fixed to the given u values (test hook).
Tensor gates_from_uniform(const GateParams& gp, const std::vector<double>& u);

// P[g_i > 0] = sigmoid(log_alpha_i - beta*log(-gamma/zeta)); differentiable.
Tensor p_open(const GateParams& gp);

// Test-time gate estimate: clamp(sigmoid(log_alpha)*(zeta-gamma)+gamma, 0, 1).
Tensor deterministic_gate(const GateParams& gp);

// (1/2 - mean_i P[g_i>0])^2
Tensor l_half(const GateParams& gp);

// error_loss + lambda * sum of per-layer l_half
Tensor total_loss(const Tensor& error_loss,
                  const std::vector<std::shared_ptr<GateParams>>& gates, double lambda);

// lambda_{t+1} = lambda_t + c*sqrt(lambda_t), iterated from lambda0.
struct LambdaSchedule {
    double lambda0 = 0.01;
    double c = 0.05;
};

double lambda_at(const LambdaSchedule& sched, int epoch);

}  // namespace mnn
