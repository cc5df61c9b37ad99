#pragma once

#include <string>
#include <vector>

#include "mnn/gates.hpp"
#include "mnn/layers.hpp"

namespace mnn {

enum class Strategy { Student, Bo3, OneModel };
enum class Metric { Mse, Accuracy };
enum class Task { Sine, SynthImages };

// Supervised dataset; labels used when classification == true, otherwise
// targets holds an [n, out] regression target.
struct Dataset {
    Tensor inputs;   // [n, ...]
    Tensor targets;  // [n, out] (regression)
    std::vector<int> labels;  // (classification)
    bool classification = false;

    int size() const { return inputs.defined() ? inputs.shape()[0] : 0; }
    Dataset subset(const std::vector<int>& indices) const;
};

enum class Phase { Teacher, Importance, Finetune, OneModel };

struct LrSchedule {
    double start = 0.01;
    std::vector<std::pair<int, double>> drops;  // (epoch, lr), epochs ascending
};

struct StrategyConfig {
    Task task = Task::Sine;
    int total_epochs = 900;
    double lr_start = 0.01;
    double momentum = 0.9;
    // per-phase drops; sine defaults: teachers/bo3 at 250, fine-tune at 100,
    // one-model at 800, none while learning importance
    LrSchedule teacher_lr{0.01, {{250, 0.001}}};
    LrSchedule importance_lr{0.01, {}};
    LrSchedule finetune_lr{0.01, {{100, 0.001}}};
    LrSchedule one_model_lr{0.01, {{800, 0.001}}};
    LambdaSchedule lambda_schedule{0.01, 0.05};
    double gate_log_alpha_mean = 2.0;
    double gate_log_alpha_std = 0.01;
    // log-alpha moves through a near-saturated sigmoid, so its gradients are
    // orders of magnitude smaller than the weights'; it gets its own rate
    double gate_lr = 2.0;
    int batch_size = 128;
    uint64_t seed = 0;
    Metric eval_metric = Metric::Mse;
    double bo3_validation_fraction = 0.1;

    // 2/3 teachers, 1/6 importance, 1/6 fine-tune; remainders go to fine-tune
    int teacher_epochs() const { return total_epochs / 3; }
    int importance_epochs() const { return (total_epochs - 2 * teacher_epochs()) / 2; }
    int finetune_epochs() const {
        return total_epochs - 2 * teacher_epochs() - importance_epochs();
    }
};

struct RunReport {
    std::string strategy;
    uint64_t seed = 0;
    std::vector<double> train_loss;       // one entry per optimizer epoch
    std::vector<int> phase_boundaries;    // cumulative epoch index at each phase end
    std::vector<std::string> phase_names;
    double final_test_metric = 0.0;
    double wall_seconds = 0.0;
    int epochs_consumed = 0;
    std::vector<double> curve;  // regression tasks: predictions on a 512-point grid
};

StrategyConfig sine_config(uint64_t seed);
StrategyConfig synth_config(uint64_t seed, int total_epochs = 90, int batch_size = 32);

double lr_at(const LrSchedule& sched, int epoch);
double lr_at(const StrategyConfig& cfg, Phase phase, int epoch);

// Architecture factory for the configured task.
Network build_model(const StrategyConfig& cfg, Rng& rng);

// One SGD-with-momentum epoch over shuffled minibatches; returns mean batch loss.
// When lambda >= 0 and the network has gates, trains under
// error + lambda * sum l_half with stochastic gates; gate log-alpha tensors
// in `params` then step at gate_lr (gate_lr < 0 means use lr).
double train_epoch(Network& net, const Dataset& data, std::vector<Tensor>& params,
                   std::vector<std::vector<double>>& velocity, double lr, double momentum,
                   int batch_size, Rng& order_rng, Rng& gate_rng, double lambda = -1.0,
                   double gate_lr = -1.0);

double evaluate(Network& net, const Dataset& data, Metric metric);

std::pair<Network, RunReport> run_student(const StrategyConfig& cfg, const Dataset& train,
                                          const Dataset& test);
std::pair<Network, RunReport> run_bo3(const StrategyConfig& cfg, const Dataset& train,
                                      const Dataset& test);
std::pair<Network, RunReport> run_one_model(const StrategyConfig& cfg, const Dataset& train,
                                            const Dataset& test);
std::pair<Network, RunReport> run_strategy(Strategy s, const StrategyConfig& cfg,
                                           const Dataset& train, const Dataset& test);

std::string strategy_name(Strategy s);
Strategy strategy_from_name(const std::string& name);

}  // namespace mnn
