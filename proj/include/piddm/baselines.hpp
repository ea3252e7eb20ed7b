#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "piddm/diffusion.hpp"
#include "piddm/mog.hpp"
#include "piddm/pde.hpp"

namespace piddm {

enum class GuidanceMethod { vanilla, dps, eci, dflow, pidm };

std::string to_string(GuidanceMethod m);
GuidanceMethod guidance_method_from_string(const std::string& s);

struct GuidanceConfig {
    GuidanceMethod method = GuidanceMethod::vanilla;
    double weight = 0.0;     // eta_t / lambda_t
    double obs_weight = 0.0; // observation-misfit guidance (conditional DPS)
    int dflow_iters = 0;
    const std::vector<double>* observation = nullptr;
    const ObservationMask* mask = nullptr;
};

// Substitutes observed entries into the posterior mean; an empty operator
// means "no correction".
using CorrectionOp = std::function<std::vector<double>(std::span<const double>)>;
CorrectionOp make_mask_correction(std::vector<double> observation, ObservationMask mask);

struct GuidanceLog {
    long long skipped_steps = 0;  // non-finite guidance gradient
    long long clipped_grads = 0;  // D-Flow gradient clipping events
};

// One reverse Euler step with DPS guidance: x - v dt - weight * grad_x of
// the constraint evaluated on the posterior mean. The gradient flows
// through the velocity network.
std::vector<double> dps_step(const VelocityModel& model, std::span<const double> x_t, double t,
                             double dt, const ResidualOperator& residual_op, double weight,
                             NfeCounter* nfe = nullptr, GuidanceLog* log = nullptr);
// Generalized form: any constraint plus an optional observation term.
std::vector<double> dps_step_guided(const VelocityModel& model, std::span<const double> x_t,
                                    double t, double dt, const ConstraintOp& constraint,
                                    double weight, const std::vector<double>* observation,
                                    const ObservationMask* mask, double obs_weight,
                                    NfeCounter* nfe = nullptr, GuidanceLog* log = nullptr);

// One ECI step: posterior mean corrected by C, re-noised to t - dt. An empty
// correction falls back to the plain Euler step.
std::vector<double> eci_step(const VelocityModel& model, std::span<const double> x_t, double t,
                             double dt, const CorrectionOp& correction,
                             NfeCounter* nfe = nullptr);

// fm_loss + lambda_t * mean |R(E[x0|x_t])|^2 (training-time loss injection).
LossGrad pidm_loss(const TeacherModel& model, const std::vector<std::vector<double>>& batch,
                   const ResidualOperator& residual_op, double lambda_t, RngSource& rng,
                   double* fm_part = nullptr);

TeacherModel train_pidm(TeacherModel model, const std::vector<std::vector<double>>& data,
                        const TrainOptions& opts, const ResidualOperator& residual_op,
                        double lambda, RngSource& rng, TrainTrace* trace);

struct DflowOptions {
    int n_steps = 100;
    int n_iters = 50;
    double lr = 0.1;            // Adam step on the noise
    double lambda = 1.0;        // constraint weight
    double grad_clip = 1e6;
    const std::vector<double>* observation = nullptr;
    const ObservationMask* mask = nullptr;
};

struct DflowResult {
    std::vector<double> sample;
    std::vector<double> eps;
    double objective = 0.0;
    long long forward_evals = 0;
    long long backward_evals = 0;
    long long clipped = 0;
};

// Optimizes the initial noise by backpropagating the objective through the
// full sampling trajectory; returns the best-objective iterate.
DflowResult dflow_optimize(const VelocityModel& model, std::span<const double> eps_init,
                           const ConstraintOp& constraint, const DflowOptions& opts,
                           NfeCounter* nfe = nullptr, GuidanceLog* log = nullptr);

// Full samplers (t = 1 -> 0, n_steps Euler steps).
std::vector<double> dps_sample(const VelocityModel& model, std::span<const double> eps,
                               int n_steps, const ConstraintOp& constraint, double weight,
                               const std::vector<double>* observation = nullptr,
                               const ObservationMask* mask = nullptr, double obs_weight = 0.0,
                               NfeCounter* nfe = nullptr, GuidanceLog* log = nullptr);
std::vector<double> eci_sample(const VelocityModel& model, std::span<const double> eps,
                               int n_steps, const CorrectionOp& correction,
                               NfeCounter* nfe = nullptr);

}  // namespace piddm
