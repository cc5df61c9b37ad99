// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Criteria 1/2 share a set of full sine runs and dominate runtime.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "mnn/compression.hpp"
#include "mnn/harness.hpp"
#include "mnn/merging.hpp"
#include "oracles.hpp"

using namespace mnn;

namespace {

int failures = 0;

void report(int criterion, bool pass, const std::string& detail) {
    std::printf("criterion %d: %s — %s\n", criterion, pass ? "PASS" : "FAIL",
                detail.c_str());
    std::fflush(stdout);
    if (!pass) ++failures;
}

double mean_of(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / v.size();
}

// ---- criteria 1 and 2: sine benchmark runs --------------------------------

struct SineRuns {
    std::vector<RunReport> student, bo3, one_model;
};

SineRuns run_sine_benchmark(int runs, uint64_t master_seed) {
    Dataset train = make_sine_dataset(10000, derive_seed(master_seed, 1000));
    Dataset test = make_sine_dataset(2000, derive_seed(master_seed, 2000));
    SineRuns out;
    for (int r = 0; r < runs; ++r) {
        StrategyConfig cfg = sine_config(derive_seed(master_seed, 37 + r));
        for (Strategy s : {Strategy::Student, Strategy::Bo3, Strategy::OneModel}) {
            auto [net, rep] = run_strategy(s, cfg, train, test);
            std::fprintf(stderr, "  run %d/%d %s: test mse %.4f (%.0fs)\n", r + 1, runs,
                         rep.strategy.c_str(), rep.final_test_metric, rep.wall_seconds);
            (s == Strategy::Student ? out.student
             : s == Strategy::Bo3   ? out.bo3
                                    : out.one_model)
                .push_back(std::move(rep));
        }
    }
    return out;
}

std::vector<double> metrics_of(const std::vector<RunReport>& reps) {
    std::vector<double> m;
    for (const auto& r : reps) m.push_back(r.final_test_metric);
    return m;
}

void criterion_1(const SineRuns& runs) {
    const double student = mean_of(metrics_of(runs.student));
    const double bo3 = mean_of(metrics_of(runs.bo3));
    const double one = mean_of(metrics_of(runs.one_model));
    const bool pass = student >= 0.05 && student <= 0.13 && bo3 > 0.15 && one > 0.15 &&
                      student < std::min(bo3, one);
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "mean test mse: student %.4f (need [0.05,0.13]), bo3 %.4f, one_model "
                  "%.4f (both need >0.15 and > student)",
                  student, bo3, one);
    report(1, pass, buf);
}

// Every extremum center of sin(10*pi*x) on (0,1): x = (2j+1)/20, alternating
// sign starting positive. A curve covers a peak when, somewhere within 0.03
// of the center, its sign-adjusted value reaches 0.5.
bool covers_all_peaks(const std::vector<double>& curve) {
    const int n = static_cast<int>(curve.size());
    for (int j = 0; j < 10; ++j) {
        const double c = (2.0 * j + 1.0) / 20.0;
        const double sign = j % 2 == 0 ? 1.0 : -1.0;
        double best = -1e9;
        for (int i = 0; i < n; ++i) {
            const double x = (i + 0.5) / n;
            if (std::fabs(x - c) <= 0.03) best = std::max(best, sign * curve[i]);
        }
        if (best < 0.5) return false;
    }
    return true;
}

void criterion_2(const SineRuns& runs) {
    int student_ok = 0;
    for (const auto& r : runs.student)
        if (covers_all_peaks(r.curve)) ++student_ok;
    int baseline_misses = 0;
    for (const auto& r : runs.bo3)
        if (!covers_all_peaks(r.curve)) ++baseline_misses;
    for (const auto& r : runs.one_model)
        if (!covers_all_peaks(r.curve)) ++baseline_misses;
    const bool pass = student_ok == static_cast<int>(runs.student.size()) &&
                      baseline_misses >= 1;
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "%d/%zu student runs cover all 10 peaks; %d baseline runs miss at "
                  "least one (need >= 1)",
                  student_ok, runs.student.size(), baseline_misses);
    report(2, pass, buf);
}

// ---- criterion 3: merge equivalence ----------------------------------------

double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
    double worst = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double denom = std::max({1.0, std::fabs(a[i]), std::fabs(b[i])});
        worst = std::max(worst, std::fabs(a[i] - b[i]) / denom);
    }
    return worst;
}

void criterion_3() {
    double worst = 0;
    uint64_t seed = 10000;
    for (int pair = 0; pair < 20; ++pair) {
        const int arch = pair % 3;
        Rng r1(seed++), r2(seed++), rg(seed++), rx(seed++);
        Network t1, t2;
        std::vector<int> shape;
        if (arch == 0) {
            t1 = build_sine_mlp(r1);
            t2 = build_sine_mlp(r2);
            shape = {100, 1};
        } else if (arch == 1) {
            t1 = build_lenet(r1);
            t2 = build_lenet(r2);
            shape = {100, 3, 28, 28};
        } else {
            t1 = build_tiny_resnet(r1, 8, 2, 10);
            t2 = build_tiny_resnet(r2, 8, 2, 10);
            shape = {100, 3, 8, 8};
        }
        Network big = merge_networks(t1, t2, rg);
        Tensor x = Tensor::uniform(shape, -1, 1, rx);
        Tensor y1 = forward(t1, x, {});
        Tensor y2 = forward(t2, x, {});
        Tensor yb = forward(big, x, {});
        std::vector<double> avg(y1.size());
        for (size_t i = 0; i < avg.size(); ++i)
            avg[i] = 0.5 * (y1.data()[i] + y2.data()[i]);
        worst = std::max(worst, max_rel_err(yb.data(), avg));
    }
    char buf[128];
    std::snprintf(buf, sizeof(buf),
                  "20 teacher pairs, 100 inputs each: max relative error %.2e (need < 1e-9)",
                  worst);
    report(3, worst < 1e-9, buf);
}

// ---- criterion 4: compression equivalence ----------------------------------

void criterion_4() {
    double worst = 0;
    uint64_t seed = 20000;
    for (int arch = 0; arch < 3; ++arch) {
        Rng r1(seed++), r2(seed++), rg(seed++), rx(seed++), noise(seed++);
        Network t1, t2;
        std::vector<int> shape;
        if (arch == 0) {
            t1 = build_sine_mlp(r1);
            t2 = build_sine_mlp(r2);
            shape = {100, 1};
        } else if (arch == 1) {
            t1 = build_lenet(r1);
            t2 = build_lenet(r2);
            shape = {100, 3, 28, 28};
        } else {
            t1 = build_tiny_resnet(r1, 8, 2, 10);
            t2 = build_tiny_resnet(r2, 8, 2, 10);
            shape = {100, 3, 8, 8};
        }
        Network big = merge_networks(t1, t2, rg);
        std::uniform_real_distribution<double> ula(-2, 2);
        for (auto& [id, gp] : big.gates)
            for (auto& la : gp->log_alpha.data()) la = ula(noise);

        Network small = compress(big);
        auto sets = kept_sets(big);
        std::unordered_map<std::string, std::vector<double>> vals;
        for (const auto& [id, gp] : big.gates) {
            std::vector<double> v(gp->units(), 0.0);
            const KeptSet& ks = sets.at(id);
            for (size_t i = 0; i < ks.kept.size(); ++i) v[ks.kept[i]] = ks.fold_scale[i];
            vals[id] = std::move(v);
        }
        ForwardOptions masked;
        masked.gate_values = &vals;
        Tensor x = Tensor::uniform(shape, -1, 1, rx);
        Tensor yb = forward(big, x, masked);
        Tensor ys = forward(small, x, {});
        worst = std::max(worst, max_rel_err(ys.data(), yb.data()));
    }
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "masked big vs compressed on 100 inputs, 3 architectures (incl. shared "
                  "residual gate): max relative error %.2e (need < 1e-9)",
                  worst);
    report(4, worst < 1e-9, buf);
}

// ---- criterion 5: gate distribution ----------------------------------------

void criterion_5() {
    const int k = 20, n = 1000000;
    Rng init(555);
    GateParams gp;
    gp.log_alpha = Tensor::uniform({k}, -3.0, 3.0, init, true);
    Tensor p = p_open(gp);

    std::vector<int> open(k, 0), zeros(k, 0), ones(k, 0);
    Rng rng(777);
    for (int s = 0; s < n; ++s) {
        Tensor g = sample_gates(gp, rng);
        for (int i = 0; i < k; ++i) {
            if (g.data()[i] > 0.0) ++open[i];
            if (g.data()[i] == 0.0) ++zeros[i];
            if (g.data()[i] == 1.0) ++ones[i];
        }
    }
    bool pass = true;
    double worst_sigmas = 0;
    for (int i = 0; i < k; ++i) {
        const double phat = static_cast<double>(open[i]) / n;
        const double sigma = std::sqrt(p.data()[i] * (1.0 - p.data()[i]) / n);
        const double dist = std::fabs(phat - p.data()[i]) / sigma;
        worst_sigmas = std::max(worst_sigmas, dist);
        if (dist > 3.0) pass = false;
        if (zeros[i] == 0 || ones[i] == 0) pass = false;
    }
    char buf[192];
    std::snprintf(buf, sizeof(buf),
                  "20 log_alpha values in [-3,3], 1e6 samples: worst |P_hat - p_open| = "
                  "%.2f sigma (need <= 3); P[g=0], P[g=1] > 0 everywhere",
                  worst_sigmas);
    report(5, pass, buf);
}

// ---- criterion 6: gradient suite -------------------------------------------

void criterion_6() {
    Rng rng(606);
    bool pass = true;
    double worst = 0;
    std::string first_fail;
    auto run = [&](const char* name, std::vector<Tensor> params,
                   const std::function<Tensor()>& loss) {
        auto res = oracle::check_gradients(std::move(params), loss);
        worst = std::max(worst, res.max_rel_err);
        if (!res.ok) {
            pass = false;
            if (first_fail.empty()) first_fail = name;
        }
    };

    {
        Tensor a = Tensor::uniform({3, 4}, -1, 1, rng, true);
        Tensor b = Tensor::uniform({4, 2}, -1, 1, rng, true);
        run("matmul", {a, b}, [&] { return mean(matmul(a, b)); });
    }
    {
        Tensor x = Tensor::uniform({2, 5}, -1, 1, rng);
        Tensor w = Tensor::uniform({3, 5}, -1, 1, rng, true);
        Tensor bias = Tensor::uniform({3}, -1, 1, rng, true);
        run("linear", {w, bias}, [&] { return mean(add_bias(linear(x, w), bias)); });
    }
    {
        Tensor x = Tensor::uniform({1, 2, 6, 6}, -1, 1, rng, true);
        Tensor w = Tensor::uniform({3, 2, 3, 3}, -1, 1, rng, true);
        run("conv2d", {x, w}, [&] { return mean(conv2d(x, w, 1, 1)); });
    }
    {
        Tensor a = Tensor::uniform({8}, -2, 2, rng, true);
        run("activations", {a}, [&] {
            return sum(add(relu(a), add(mnn::tanh(a), sigmoid(a))));
        });
        Tensor b = Tensor::uniform({8}, 0.5, 2.0, rng, true);
        run("log/sqrt/mul", {b}, [&] { return sum(mul(mnn::log(b), mnn::sqrt(b))); });
    }
    {
        Tensor pred = Tensor::uniform({4, 3}, -1, 1, rng, true);
        Tensor target = Tensor::uniform({4, 3}, -1, 1, rng);
        run("mse", {pred}, [&] { return mse_loss(pred, target); });
        Tensor logits = Tensor::uniform({4, 5}, -1, 1, rng, true);
        std::vector<int> labels{1, 0, 4, 2};
        run("cross_entropy", {logits}, [&] { return cross_entropy(logits, labels); });
    }
    {
        Tensor x = Tensor::uniform({1, 2, 4, 4}, -1, 1, rng, true);
        run("maxpool", {x}, [&] { return sum(maxpool2d(x, 2)); });
        Tensor g = Tensor::uniform({2}, 0.2, 0.9, rng, true);
        run("channel_scale", {x, g}, [&] { return sum(channel_scale(x, g)); });
    }
    {
        Tensor x = Tensor::uniform({3, 2, 3, 3}, -1, 1, rng, true);
        Tensor gamma = Tensor::uniform({2}, 0.5, 1.5, rng, true);
        Tensor beta = Tensor::uniform({2}, -0.5, 0.5, rng, true);
        std::vector<double> bm, bv;
        run("batchnorm", {x, gamma, beta}, [&] {
            return mean(batchnorm2d_train(x, gamma, beta, 1e-5, bm, bv));
        });
    }
    {
        GateParams gp;
        gp.log_alpha = Tensor::from({4}, {0.5, -0.3, 1.2, 0.0}, true);
        std::vector<double> u{0.31, 0.62, 0.47, 0.55};
        run("sample_gates", {gp.log_alpha},
            [&] { return sum(gates_from_uniform(gp, u)); });
        run("l_half", {gp.log_alpha}, [&] { return l_half(gp); });
        run("p_open", {gp.log_alpha}, [&] { return sum(p_open(gp)); });
    }

    char buf[192];
    std::snprintf(buf, sizeof(buf),
                  "central finite differences over all differentiable ops: max relative "
                  "error %.2e (need < 1e-4)%s%s",
                  worst, first_fail.empty() ? "" : ", first failure: ",
                  first_fail.c_str());
    report(6, pass, buf);
}

// ---- criterion 7: L_half-only gate dynamics --------------------------------

void criterion_7() {
    Rng r1(701), r2(702), rg(703);
    Network big = merge_networks(build_lenet(r1), build_lenet(r2), rg);

    std::vector<Tensor> gates_only = gate_parameters(big);
    auto gps = gate_list(big);
    std::vector<std::vector<double>> velocity;
    int steps_taken = 0;
    bool converged = false;
    for (int step = 0; step < 2000 && !converged; ++step) {
        for (auto& p : gates_only) p.zero_grad();
        Tensor loss = total_loss(Tensor::scalar(0.0), gps, 1.0);
        backward(loss);
        sgd_step(gates_only, 20.0, 0.9, velocity);
        ++steps_taken;
        converged = true;
        for (const auto& gp : gps) {
            Tensor p = p_open(*gp);
            if (std::fabs(mean_of(p.data()) - 0.5) > 0.02) converged = false;
        }
    }
    double worst_dev = 0;
    for (const auto& gp : gps) {
        Tensor p = p_open(*gp);
        worst_dev = std::max(worst_dev, std::fabs(mean_of(p.data()) - 0.5));
    }
    char buf[192];
    std::snprintf(buf, sizeof(buf),
                  "gates-only training under lambda*L_half: worst |mean p_open - 0.5| = "
                  "%.4f after %d steps (need <= 0.02 within 2000 steps)",
                  worst_dev, steps_taken);
    report(7, converged, buf);
}

// ---- criterion 8: synthetic-image pipeline ---------------------------------

void criterion_8() {
    Dataset train = make_synthetic_images(32, derive_seed(8, 1000));
    Dataset test = make_synthetic_images(20, derive_seed(8, 2000));
    std::vector<double> student, bo3, one;
    for (int r = 0; r < 3; ++r) {
        StrategyConfig cfg = synth_config(derive_seed(8, 37 + r));
        for (Strategy s : {Strategy::Student, Strategy::Bo3, Strategy::OneModel}) {
            auto [net, rep] = run_strategy(s, cfg, train, test);
            std::fprintf(stderr, "  synth run %d/3 %s: test acc %.3f (%.0fs)\n", r + 1,
                         rep.strategy.c_str(), rep.final_test_metric, rep.wall_seconds);
            (s == Strategy::Student ? student : s == Strategy::Bo3 ? bo3 : one)
                .push_back(rep.final_test_metric);
        }
    }
    const double ms = mean_of(student), mb = mean_of(bo3), mo = mean_of(one);
    const bool pass = ms >= std::max(mb, mo) - 0.01;
    char buf[192];
    std::snprintf(buf, sizeof(buf),
                  "LeNet on synthetic images, 3 seeds: student acc %.3f vs bo3 %.3f, "
                  "one_model %.3f (need student >= max - 0.01)",
                  ms, mb, mo);
    report(8, pass, buf);
}

}  // namespace

int main(int argc, char** argv) {
    // optional: run a subset, e.g. "acceptance 3 4 5 6 7"
    std::vector<int> which;
    for (int i = 1; i < argc; ++i) which.push_back(std::atoi(argv[i]));
    auto wanted = [&](int c) {
        return which.empty() || std::find(which.begin(), which.end(), c) != which.end();
    };

    const auto t0 = std::chrono::steady_clock::now();
    if (wanted(1) || wanted(2)) {
        std::fprintf(stderr, "running sine benchmark (10 seeds x 3 strategies)...\n");
        SineRuns runs = run_sine_benchmark(10, 1);
        if (wanted(1)) criterion_1(runs);
        if (wanted(2)) criterion_2(runs);
    }
    if (wanted(3)) criterion_3();
    if (wanted(4)) criterion_4();
    if (wanted(5)) criterion_5();
    if (wanted(6)) criterion_6();
    if (wanted(7)) criterion_7();
    if (wanted(8)) criterion_8();
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s (%d failure%s, %.0fs)\n", failures == 0 ? "ALL PASS" : "FAILURES",
                failures, failures == 1 ? "" : "s", secs);
    return failures == 0 ? 0 : 1;
}
