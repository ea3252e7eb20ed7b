#pragma once

#include <span>
#include <string>
#include <vector>

#include "piddm/distill.hpp"
#include "piddm/pde.hpp"
#include "piddm/rng.hpp"

namespace piddm {

enum class Task { simulate, forward_solve, inverse, reconstruct };

std::string to_string(Task t);
Task task_from_string(const std::string& s);

enum class InferOptimizer { gradient_descent, lbfgs };

struct TaskSpec {
    Task task = Task::simulate;
    std::vector<double> observation;
    ObservationMask mask;
    double lambda_infer = 1.0;
    int n_iters = 100;
    InferOptimizer optimizer = InferOptimizer::gradient_descent;
    double step_size = 0.0;  // 0 picks the lambda-scaled default
    int restarts = 1;

    void validate(std::size_t width) const;
};

// Mask layout per task: forward observes the coefficient block plus the
// boundary-tied u rows; inverse observes the u block; reconstruct observes a
// random fraction of all entries; simulate observes nothing.
ObservationMask make_task_mask(Task task, const ResidualOperator& op, RngSource& rng,
                               double observe_rate = 0.2);

struct RefineResult {
    std::vector<double> sample;
    std::vector<double> eps;
    long long nfe = 0;  // exactly n_f + 1 student forwards
    bool aborted = false;
};

// Algorithm-2 refinement: n_f gradient steps on eps minimizing |R(d(eps))|^2.
RefineResult refine_noise(const StudentModel& student, std::span<const double> eps,
                          const ConstraintOp& constraint, int n_f, double eta_ref,
                          NfeCounter* nfe = nullptr);
RefineResult refine_noise(const StudentModel& student, std::span<const double> eps,
                          const ResidualOperator& residual_op, int n_f, double eta_ref,
                          NfeCounter* nfe = nullptr);

struct SolveResult {
    std::vector<double> output;  // x' o M + d(eps) o (1-M); observed entries exact
    std::vector<double> eps;
    double objective = 0.0;
    long long nfe = 0;
    int restarts_used = 1;
};

// Algorithm-3 conditional inference over the latent noise.
SolveResult solve_conditional(const StudentModel& student, const TaskSpec& spec,
                              const ConstraintOp& constraint, RngSource& rng,
                              NfeCounter* nfe = nullptr);
SolveResult solve_conditional(const StudentModel& student, const TaskSpec& spec,
                              const ResidualOperator& residual_op, RngSource& rng,
                              NfeCounter* nfe = nullptr);

}  // namespace piddm
