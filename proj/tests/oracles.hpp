// Test-only reference implementations, independent of the library's
// backward/merge/compress paths.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "mnn/tensor.hpp"

namespace oracle {

// Central finite differences of a scalar-valued builder with respect to the
// given leaf tensors. The builder must rebuild the graph from current values.
struct GradCheckResult {
    double max_rel_err = 0.0;
    bool ok = true;
};

inline GradCheckResult check_gradients(std::vector<mnn::Tensor> params,
                                       const std::function<mnn::Tensor()>& build_loss,
                                       double tol = 1e-4, double h = 1e-5) {
    for (auto& p : params) p.zero_grad();
    mnn::Tensor loss = build_loss();
    mnn::backward(loss);
    GradCheckResult res;
    for (auto& p : params) {
        std::vector<double> analytic = p.grad();
        if (analytic.empty()) analytic.assign(p.size(), 0.0);
        for (size_t i = 0; i < p.size(); ++i) {
            const double orig = p.data()[i];
            p.data()[i] = orig + h;
            const double fp = build_loss().item();
            p.data()[i] = orig - h;
            const double fm = build_loss().item();
            p.data()[i] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double denom =
                std::max({1.0, std::fabs(analytic[i]), std::fabs(numeric)});
            const double rel = std::fabs(analytic[i] - numeric) / denom;
            res.max_rel_err = std::max(res.max_rel_err, rel);
            if (rel > tol) res.ok = false;
        }
    }
    return res;
}

// 6-loop cross-correlation reference for conv2d.
inline std::vector<double> naive_conv2d(const std::vector<double>& x, int N, int Ci, int H,
                                        int W, const std::vector<double>& w, int Co, int kh,
                                        int kw, int stride, int pad) {
    const int Ho = (H + 2 * pad - kh) / stride + 1;
    const int Wo = (W + 2 * pad - kw) / stride + 1;
    std::vector<double> y(static_cast<size_t>(N) * Co * Ho * Wo, 0.0);
    for (int n = 0; n < N; ++n)
        for (int co = 0; co < Co; ++co)
            for (int oh = 0; oh < Ho; ++oh)
                for (int ow = 0; ow < Wo; ++ow) {
                    double acc = 0.0;
                    for (int ci = 0; ci < Ci; ++ci)
                        for (int r = 0; r < kh; ++r)
                            for (int c = 0; c < kw; ++c) {
                                const int ih = oh * stride - pad + r;
                                const int iw = ow * stride - pad + c;
                                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                                acc += x[((static_cast<size_t>(n) * Ci + ci) * H + ih) * W + iw] *
                                       w[((static_cast<size_t>(co) * Ci + ci) * kh + r) * kw + c];
                            }
                    y[((static_cast<size_t>(n) * Co + co) * Ho + oh) * Wo + ow] = acc;
                }
    return y;
}

// Scalar SGD-with-momentum trajectory on f(p) = p^2 (grad 2p).
inline std::vector<double> sgd_quadratic_trajectory(double p0, double lr, double momentum,
                                                    int steps) {
    std::vector<double> traj;
    double p = p0, v = 0.0;
    for (int i = 0; i < steps; ++i) {
        v = momentum * v + 2.0 * p;
        p -= lr * v;
        traj.push_back(p);
    }
    return traj;
}

struct Stats {
    double min, max, median, mean, std_dev;
};

inline Stats reference_stats(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    Stats s{};
    s.min = v.front();
    s.max = v.back();
    const size_t n = v.size();
    s.median = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    double sum = 0.0;
    for (double x : v) sum += x;
    s.mean = sum / n;
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std_dev = n > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
    return s;
}

}  // namespace oracle
