#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "piddm/config.hpp"
#include "piddm/distill.hpp"
#include "piddm/inference.hpp"
#include "piddm/metrics.hpp"
#include "piddm/pde.hpp"
#include "piddm/schedule.hpp"

namespace piddm {

// One config file fully determines a run; all randomness flows from the
// seeds through named sub-streams.
struct ExperimentConfig {
    std::string name = "experiment";
    std::filesystem::path out_dir = "out";
    std::vector<std::uint64_t> seeds = {1};
    std::vector<std::string> methods = {"vanilla", "piddm"};
    std::vector<std::string> tasks;  // empty: generative evaluation only

    // data
    DatasetKind dataset = DatasetKind::stokes;
    int n_train = 256;
    int n_x = 16, n_t = 16;
    std::uint64_t data_seed = 7041;

    // schedule / teacher
    ScheduleKind schedule = ScheduleKind::linear;
    std::vector<int> teacher_hidden = {96, 96};
    int time_embed = 32;
    int teacher_iters = 2500;
    int teacher_batch = 32;
    double teacher_lr = 2e-3;
    int sample_steps = 100;

    // distillation
    double lambda_train = 10.0;
    int distill_epochs = 400;
    int refresh_interval = 100;
    int pairs_per_refresh = 256;
    int distill_batch = 32;
    double distill_lr = 1e-3;
    std::vector<int> student_hidden = {96, 96};

    // inference
    double lambda_infer = 1.0;
    int infer_iters = 100;
    InferOptimizer optimizer = InferOptimizer::lbfgs;
    double infer_step = 0.0;
    int restarts = 1;
    double observe_rate = 0.2;
    int refine_steps = 50;
    double refine_eta = 1e-2;

    // baselines
    double dps_weight = 1.0;
    double dps_obs_weight = 1.0;
    double pidm_lambda = 10.0;
    int dflow_iters = 20;
    double dflow_lr = 0.1;

    // evaluation
    int eval_ensemble = 128;
    int eval_tasks = 8;
    int keep_samples = 4;  // PFD samples persisted per method

    static ExperimentConfig from_config(const Config& c);
    GridSpec grid() const { return default_grid(dataset, n_x, n_t); }
};

struct ExperimentFailure {
    std::string method, task;
    std::uint64_t seed = 0;
    std::string what;
};

struct ExperimentResult {
    std::vector<MetricRecord> records;
    std::vector<ExperimentFailure> failures;
};

// Trains/loads the teacher, runs the selected methods and tasks, and writes
// records.csv, sample PFDs and loss traces under out_dir. Per-method
// failures are recorded without aborting the rest.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

}  // namespace piddm
