#include "mnn/strategies.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "mnn/compression.hpp"
#include "mnn/merging.hpp"

namespace mnn {

Dataset Dataset::subset(const std::vector<int>& indices) const {
    Dataset out;
    out.classification = classification;
    const auto& shape = inputs.shape();
    size_t per = 1;
    for (size_t i = 1; i < shape.size(); ++i) per *= shape[i];
    std::vector<int> nshape = shape;
    nshape[0] = static_cast<int>(indices.size());
    out.inputs = Tensor::zeros(nshape);
    for (size_t i = 0; i < indices.size(); ++i)
        std::copy_n(inputs.data().data() + indices[i] * per, per,
                    out.inputs.data().data() + i * per);
    if (classification) {
        out.labels.reserve(indices.size());
        for (int idx : indices) out.labels.push_back(labels[idx]);
    } else {
        const size_t tper = targets.size() / size();
        std::vector<int> tshape = targets.shape();
        tshape[0] = static_cast<int>(indices.size());
        out.targets = Tensor::zeros(tshape);
        for (size_t i = 0; i < indices.size(); ++i)
            std::copy_n(targets.data().data() + indices[i] * tper, tper,
                        out.targets.data().data() + i * tper);
    }
    return out;
}

StrategyConfig sine_config(uint64_t seed) {
    StrategyConfig cfg;
    cfg.task = Task::Sine;
    cfg.seed = seed;
    cfg.eval_metric = Metric::Mse;
    return cfg;
}

StrategyConfig synth_config(uint64_t seed, int total_epochs, int batch_size) {
    StrategyConfig cfg;
    cfg.task = Task::SynthImages;
    cfg.seed = seed;
    cfg.total_epochs = total_epochs;
    cfg.batch_size = batch_size;
    cfg.eval_metric = Metric::Accuracy;
    // drops at half and three quarters of the phase length
    const auto drops = [](int epochs) {
        return std::vector<std::pair<int, double>>{{epochs / 2, 0.001},
                                                   {epochs * 3 / 4, 0.0001}};
    };
    cfg.teacher_lr = {0.01, drops(cfg.teacher_epochs())};
    cfg.importance_lr = {0.01, {}};
    cfg.finetune_lr = {0.01, drops(cfg.finetune_epochs())};
    cfg.one_model_lr = {0.01, drops(total_epochs)};
    cfg.lambda_schedule = {0.05, 0.3};
    return cfg;
}

double lr_at(const LrSchedule& sched, int epoch) {
    double lr = sched.start;
    for (const auto& [at, value] : sched.drops)
        if (epoch >= at) lr = value;
    return lr;
}

double lr_at(const StrategyConfig& cfg, Phase phase, int epoch) {
    switch (phase) {
        case Phase::Teacher: return lr_at(cfg.teacher_lr, epoch);
        case Phase::Importance: return lr_at(cfg.importance_lr, epoch);
        case Phase::Finetune: return lr_at(cfg.finetune_lr, epoch);
        case Phase::OneModel: return lr_at(cfg.one_model_lr, epoch);
    }
    throw ContractError("lr_at: unknown phase");
}

Network build_model(const StrategyConfig& cfg, Rng& rng) {
    switch (cfg.task) {
        case Task::Sine: return build_sine_mlp(rng);
        case Task::SynthImages: return build_lenet(rng);
    }
    throw ContractError("build_model: unknown task");
}

namespace {

Tensor gather_inputs(const Dataset& data, const std::vector<int>& order, int begin, int end) {
    std::vector<int> idx(order.begin() + begin, order.begin() + end);
    size_t per = 1;
    for (size_t i = 1; i < data.inputs.shape().size(); ++i) per *= data.inputs.shape()[i];
    std::vector<int> shape = data.inputs.shape();
    shape[0] = end - begin;
    Tensor out = Tensor::zeros(shape);
    for (int i = 0; i < end - begin; ++i)
        std::copy_n(data.inputs.data().data() + idx[i] * per, per,
                    out.data().data() + static_cast<size_t>(i) * per);
    return out;
}

}  // namespace

double train_epoch(Network& net, const Dataset& data, std::vector<Tensor>& params,
                   std::vector<std::vector<double>>& velocity, double lr, double momentum,
                   int batch_size, Rng& order_rng, Rng& gate_rng, double lambda,
                   double gate_lr) {
    const int n = data.size();
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), order_rng);

    const bool gated = lambda >= 0.0 && net.has_gates();
    auto gates = gated ? gate_list(net) : std::vector<std::shared_ptr<GateParams>>{};

    std::vector<double> lrs(params.size(), lr);
    if (gated && gate_lr >= 0.0)
        for (size_t i = 0; i < params.size(); ++i)
            for (const auto& gp : gates)
                if (params[i].impl() == gp->log_alpha.impl()) lrs[i] = gate_lr;

    double loss_sum = 0.0;
    int batches = 0;
    for (int begin = 0; begin < n; begin += batch_size) {
        const int end = std::min(begin + batch_size, n);
        Tensor x = gather_inputs(data, order, begin, end);
        ForwardOptions opts;
        opts.mode = Mode::Train;
        if (gated) {
            opts.gate_mode = GateMode::Stochastic;
            opts.rng = &gate_rng;
        }
        Tensor pred = forward(net, x, opts);
        Tensor loss;
        if (data.classification) {
            std::vector<int> labs(end - begin);
            for (int i = begin; i < end; ++i) labs[i - begin] = data.labels[order[i]];
            loss = cross_entropy(pred, labs);
        } else {
            const size_t tper = data.targets.size() / n;
            std::vector<int> tshape = data.targets.shape();
            tshape[0] = end - begin;
            Tensor y = Tensor::zeros(tshape);
            for (int i = begin; i < end; ++i)
                std::copy_n(data.targets.data().data() + order[i] * tper, tper,
                            y.data().data() + static_cast<size_t>(i - begin) * tper);
            loss = mse_loss(pred, y);
        }
        if (gated) loss = total_loss(loss, gates, lambda);
        for (auto& p : params) p.zero_grad();
        backward(loss);
        sgd_step(params, lrs, momentum, velocity);
        loss_sum += loss.item();
        ++batches;
    }
    return batches > 0 ? loss_sum / batches : 0.0;
}

double evaluate(Network& net, const Dataset& data, Metric metric) {
    ForwardOptions opts;  // eval mode, gates off
    Tensor pred = forward(net, data.inputs, opts);
    if (metric == Metric::Accuracy) {
        const int n = data.size();
        const int classes = pred.shape()[1];
        int correct = 0;
        for (int i = 0; i < n; ++i) {
            const double* row = pred.data().data() + static_cast<size_t>(i) * classes;
            int best = 0;
            for (int c = 1; c < classes; ++c)
                if (row[c] > row[best]) best = c;
            if (best == data.labels[i]) ++correct;
        }
        return static_cast<double>(correct) / n;
    }
    return mse_loss(pred, data.targets).item();
}

namespace {

struct Trainer {
    const StrategyConfig& cfg;
    RunReport& report;

    // Runs `epochs` epochs of one phase; appends per-epoch losses.
    void run_phase(Network& net, const Dataset& data, Phase phase, int epochs,
                   uint64_t seed_stream, bool with_gates = false) {
        std::vector<Tensor> params = parameters(net);
        if (with_gates) {
            auto gp = gate_parameters(net);
            params.insert(params.end(), gp.begin(), gp.end());
        }
        std::vector<std::vector<double>> velocity;
        Rng order_rng(derive_seed(cfg.seed, seed_stream));
        Rng gate_rng(derive_seed(cfg.seed, seed_stream + 1));
        for (int e = 0; e < epochs; ++e) {
            const double lr = lr_at(cfg, phase, e);
            const double lambda =
                with_gates ? lambda_at(cfg.lambda_schedule, e) : -1.0;
            report.train_loss.push_back(train_epoch(net, data, params, velocity, lr,
                                                    cfg.momentum, cfg.batch_size, order_rng,
                                                    gate_rng, lambda, cfg.gate_lr));
            ++report.epochs_consumed;
        }
        report.phase_boundaries.push_back(report.epochs_consumed);
    }
};

std::vector<double> sample_curve(Network& net, int points = 512) {
    Tensor grid = Tensor::zeros({points, 1});
    for (int i = 0; i < points; ++i)
        grid.data()[i] = (i + 0.5) / points;
    ForwardOptions opts;
    Tensor pred = forward(net, grid, opts);
    return pred.data();
}

std::pair<Network, RunReport> finish(Network net, RunReport report, const StrategyConfig& cfg,
                                     const Dataset& test,
                                     std::chrono::steady_clock::time_point t0) {
    report.final_test_metric = evaluate(net, test, cfg.eval_metric);
    if (cfg.task == Task::Sine) report.curve = sample_curve(net);
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {std::move(net), std::move(report)};
}

}  // namespace

std::pair<Network, RunReport> run_student(const StrategyConfig& cfg, const Dataset& train,
                                          const Dataset& test) {
    const auto t0 = std::chrono::steady_clock::now();
    RunReport report;
    report.strategy = "student";
    report.seed = cfg.seed;
    Trainer trainer{cfg, report};

    Rng init_a(derive_seed(cfg.seed, 10));
    Rng init_b(derive_seed(cfg.seed, 20));
    Network teacher_a = build_model(cfg, init_a);
    Network teacher_b = build_model(cfg, init_b);
    trainer.run_phase(teacher_a, train, Phase::Teacher, cfg.teacher_epochs(), 100);
    report.phase_names.push_back("teacher_a");
    trainer.run_phase(teacher_b, train, Phase::Teacher, cfg.teacher_epochs(), 200);
    report.phase_names.push_back("teacher_b");

    Rng gate_init(derive_seed(cfg.seed, 30));
    Network big = merge_networks(teacher_a, teacher_b, gate_init, cfg.gate_log_alpha_mean,
                                 cfg.gate_log_alpha_std);
    trainer.run_phase(big, train, Phase::Importance, cfg.importance_epochs(), 300, true);
    report.phase_names.push_back("importance");

    Network student = compress(big);
    trainer.run_phase(student, train, Phase::Finetune, cfg.finetune_epochs(), 400);
    report.phase_names.push_back("finetune");

    return finish(std::move(student), std::move(report), cfg, test, t0);
}

std::pair<Network, RunReport> run_bo3(const StrategyConfig& cfg, const Dataset& train,
                                      const Dataset& test) {
    const auto t0 = std::chrono::steady_clock::now();
    RunReport report;
    report.strategy = "bo3";
    report.seed = cfg.seed;
    Trainer trainer{cfg, report};

    // held-out validation split for picking the best of the three
    std::vector<int> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    Rng split_rng(derive_seed(cfg.seed, 5));
    std::shuffle(order.begin(), order.end(), split_rng);
    const int n_val = std::max(1, static_cast<int>(train.size() * cfg.bo3_validation_fraction));
    Dataset val = train.subset({order.begin(), order.begin() + n_val});
    Dataset fit = train.subset({order.begin() + n_val, order.end()});

    Network best;
    double best_metric = 0.0;
    bool have_best = false;
    for (int m = 0; m < 3; ++m) {
        Rng init(derive_seed(cfg.seed, 10 + 10 * m));
        Network net = build_model(cfg, init);
        trainer.run_phase(net, fit, Phase::Teacher, cfg.teacher_epochs(),
                          100 + 100 * static_cast<uint64_t>(m));
        report.phase_names.push_back("model_" + std::to_string(m));
        const double metric = evaluate(net, val, cfg.eval_metric);
        const bool better = !have_best || (cfg.eval_metric == Metric::Mse
                                               ? metric < best_metric
                                               : metric > best_metric);
        if (better) {
            best = std::move(net);
            best_metric = metric;
            have_best = true;
        }
    }
    return finish(std::move(best), std::move(report), cfg, test, t0);
}

std::pair<Network, RunReport> run_one_model(const StrategyConfig& cfg, const Dataset& train,
                                            const Dataset& test) {
    const auto t0 = std::chrono::steady_clock::now();
    RunReport report;
    report.strategy = "one_model";
    report.seed = cfg.seed;
    Trainer trainer{cfg, report};
    Rng init(derive_seed(cfg.seed, 10));
    Network net = build_model(cfg, init);
    trainer.run_phase(net, train, Phase::OneModel, cfg.total_epochs, 100);
    report.phase_names.push_back("one_model");
    return finish(std::move(net), std::move(report), cfg, test, t0);
}

std::pair<Network, RunReport> run_strategy(Strategy s, const StrategyConfig& cfg,
                                           const Dataset& train, const Dataset& test) {
    switch (s) {
        case Strategy::Student: return run_student(cfg, train, test);
        case Strategy::Bo3: return run_bo3(cfg, train, test);
        case Strategy::OneModel: return run_one_model(cfg, train, test);
    }
    throw ContractError("run_strategy: unknown strategy");
}

std::string strategy_name(Strategy s) {
    switch (s) {
        case Strategy::Student: return "student";
        case Strategy::Bo3: return "bo3";
        case Strategy::OneModel: return "one_model";
    }
    return "?";
}

Strategy strategy_from_name(const std::string& name) {
    if (name == "student") return Strategy::Student;
    if (name == "bo3") return Strategy::Bo3;
    if (name == "one_model") return Strategy::OneModel;
    throw ContractError("unknown strategy '" + name + "'");
}

}  // namespace mnn
