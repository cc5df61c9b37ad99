#include "mnn/gates.hpp"

#include <cmath>

namespace mnn {

GateParams GateParams::init(int k, Rng& rng, double log_alpha_mean, double log_alpha_std) {
    if (k <= 0) throw ContractError("GateParams::init: unit count must be positive");
    GateParams gp;
    gp.log_alpha = Tensor::normal({k}, log_alpha_mean, log_alpha_std, rng, true);
    return gp;
}

Tensor gates_from_uniform(const GateParams& gp, const std::vector<double>& u) {
    const int k = gp.units();
    if (k == 0) throw ContractError("gates: empty gate parameters");
    if (static_cast<int>(u.size()) != k)
        throw ContractError("gates: noise length does not match unit count");
    std::vector<double> noise(k);
    for (int i = 0; i < k; ++i) {
        if (!(u[i] > 0.0 && u[i] < 1.0))
            throw DomainError("gates: uniform noise must lie in (0,1)");
        noise[i] = std::log(u[i]) - std::log(1.0 - u[i]);
    }
    Tensor noise_t = Tensor::from({k}, std::move(noise));
    Tensor s = sigmoid(affine(add(gp.log_alpha, noise_t), 1.0 / gp.beta, 0.0));
    return clamp(affine(s, gp.zeta - gp.gamma, gp.gamma), 0.0, 1.0);
}

Tensor sample_gates(const GateParams& gp, Rng& rng) {
    const int k = gp.units();
    if (k == 0) throw ContractError("sample_gates: empty gate parameters");
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    std::vector<double> u(k);
    for (int i = 0; i < k; ++i) {
        double v;
        do {
            v = dist(rng);
        } while (v <= 0.0 || v >= 1.0);
        u[i] = v;
    }
    return gates_from_uniform(gp, u);
}

Tensor p_open(const GateParams& gp) {
    if (gp.units() == 0) throw ContractError("p_open: empty gate parameters");
    const double shift = gp.beta * std::log(-gp.gamma / gp.zeta);
    return sigmoid(affine(gp.log_alpha, 1.0, -shift));
}

Tensor deterministic_gate(const GateParams& gp) {
    if (gp.units() == 0) throw ContractError("deterministic_gate: empty gate parameters");
    Tensor s = sigmoid(gp.log_alpha);
    return clamp(affine(s, gp.zeta - gp.gamma, gp.gamma), 0.0, 1.0);
}

Tensor l_half(const GateParams& gp) {
    if (gp.units() == 0) throw ContractError("l_half: empty gate parameters");
    Tensor dev = affine(mean(p_open(gp)), -1.0, 0.5);
    return mul(dev, dev);
}

Tensor total_loss(const Tensor& error_loss,
                  const std::vector<std::shared_ptr<GateParams>>& gates, double lambda) {
    Tensor acc;
    for (const auto& gp : gates) {
        Tensor term = l_half(*gp);
        acc = acc.defined() ? add(acc, term) : term;
    }
    if (!acc.defined()) return error_loss;
    return add(error_loss, affine(acc, lambda, 0.0));
}

double lambda_at(const LambdaSchedule& sched, int epoch) {
    if (epoch < 0) throw ContractError("lambda_at: epoch must be nonnegative");
    if (sched.lambda0 < 0.0) throw ContractError("lambda_at: lambda0 must be nonnegative");
    double lam = sched.lambda0;
    for (int t = 0; t < epoch; ++t) lam += sched.c * std::sqrt(lam);
    return lam;
}

}  // namespace mnn
