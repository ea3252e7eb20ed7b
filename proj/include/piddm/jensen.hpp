#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "piddm/metrics.hpp"
#include "piddm/mog.hpp"
#include "piddm/rng.hpp"

namespace piddm {

// DPS latent-code guidance on the MoG: a quadratic attraction of the
// posterior mean's constrained coordinate toward the latent line z.
struct DpsLatentGuidance {
    double weight = 0.035;
    int coord = 1;
};

// v_DPS(x, t) = marginal velocity + weight * grad_x (xhat_coord - z)^2.
std::vector<double> dps_mog_velocity(const MoGSpec& spec, const DiffusionSchedule& sched,
                                     const DpsLatentGuidance& guidance, double z,
                                     std::span<const double> x, double t);

struct GapConfig {
    std::vector<double> t_grid = {0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    int n_points = 2000;        // Monte-Carlo points per timestep
    int n_hist_samples = 10000; // DPS-sampled points for the histograms
    int n_euler_steps = 500;
    DpsLatentGuidance guidance;
    double support_tol = 0.05;  // distance to a line that still counts as on-support
    int hist_bins = 80;
};

struct GapReport {
    std::vector<double> t_values;
    std::vector<double> mae;      // mean |v_DPS - v_GT| per timestep
    std::vector<double> angular;  // mean (1 - cos theta) per timestep
    long long excluded = 0;       // zero-norm pairs left out of the angular mean

    Histogram dps_unconstrained, ref_unconstrained;  // x1 marginals
    Histogram dps_constrained, ref_constrained;      // x2 marginals
    double ks_unconstrained = 0.0;  // DPS x1 samples vs the target mixture CDF
    double off_support_mass = 0.0;  // DPS x2 mass away from both lines
};

// Velocity-field discrepancy of DPS against the exact conditional ODE, plus
// DPS-sampled histograms of the constrained/unconstrained dimensions.
GapReport gap_metrics(const MoGSpec& spec, const DiffusionSchedule& sched, const GapConfig& cfg,
                      RngSource& rng);

void write_gap_csv(const std::filesystem::path& path, const GapReport& report);

// --- correlated-MoG comparison ---------------------------------------------

struct CorrelatedMogConfig {
    double sigma_sq = 0.04;
    double rho = 0.99999;
    ScheduleKind schedule = ScheduleKind::linear;
    int teacher_steps = 100;
    int n_pairs = 50000;
    std::vector<int> student_hidden = {100, 100};
    int student_epochs = 120;
    int student_batch = 2048;
    double student_lr = 1e-3;
    double lambda_train = 1.0;
    int eval_samples = 10000;
    int lbfgs_iters = 80;
    double lbfgs_lr = 3e-3;
    double lbfgs_tol = 1e-7;
    double lambda_infer = 1.0;
    int dps_steps = 1000;
    double dps_weight = 300.0;
    int eci_steps = 1000;
    int hist_bins = 80;
    std::uint64_t seed = 1;
};

struct CorrelatedMogReport {
    double piddm_dev_std = 0.0;       // std of x0 - x1 over PIDDM samples
    double dps_violation_frac = 0.0;  // fraction with |x0 - x1| > 5e-3
    double eci_max_abs_dev = 0.0;     // worst |x0 - x1| over ECI samples
    double ks_piddm_x1 = 0.0, ks_eci_x1 = 0.0, ks_dps_x1 = 0.0;
    Histogram piddm_x1, eci_x1, dps_x1, target_x1;
    Histogram piddm_dev, eci_dev, dps_dev;
    long long piddm_nfe = 0, dps_nfe = 0, eci_nfe = 0;
    bool aborted = false;
    std::string stage;  // last completed stage when aborted
};

CorrelatedMogReport correlated_mog_pipeline(const CorrelatedMogConfig& cfg);

void write_correlated_report(const std::filesystem::path& dir, const CorrelatedMogReport& report);

}  // namespace piddm
