#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "piddm/diffusion.hpp"
#include "piddm/pde.hpp"

namespace piddm {

// Deterministic (eps, x0) couplings produced by teacher sampling.
struct PairDataset {
    std::vector<std::vector<double>> eps;
    std::vector<std::vector<double>> x0;
    std::string teacher_fingerprint;
    int n_steps = 0;
    std::uint64_t seed = 0;
    long long discarded = 0;  // non-finite teacher samples that were redrawn

    std::size_t size() const { return eps.size(); }
    std::size_t width() const { return eps.empty() ? 0 : eps.front().size(); }
};

// One-step generator d(eps): no time input, input and output widths equal
// the flat sample width.
struct StudentModel {
    ParamNet net;

    int dim() const { return net.output_size(); }
    std::vector<double> map(std::span<const double> eps, NfeCounter* nfe = nullptr) const;
    std::string fingerprint() const { return hash_doubles(net.params); }
};

StudentModel make_student(int dim, const std::vector<int>& hidden, Activation act,
                          RngSource& rng);

PairDataset generate_pairs(const VelocityModel& teacher, int n_pairs, int n_steps,
                           RngSource& rng, NfeCounter* nfe = nullptr);

struct DistillConfig {
    double lambda_train = 10.0;
    int epochs = 2000;
    int refresh_interval = 100;  // epochs between pair-pool refreshes
    int pairs_per_refresh = 1024;
    int batch_size = 128;
    double lr = 1e-3;
    int teacher_steps = 100;
    double early_stop_rel = 1e-4;  // regression-term plateau threshold
    std::vector<int> hidden = {100, 100};
    Activation act = Activation::relu;

    void validate() const;
};

struct DistillLossParts {
    double total = 0.0, reg = 0.0, pde = 0.0;
};

// mean-square regression to the teacher samples plus lambda times the mean
// constraint value on the student's own outputs; gradient w.r.t. student
// parameters.
LossGrad distill_loss(const StudentModel& student, const std::vector<std::vector<double>>& eps,
                      const std::vector<std::vector<double>>& x0,
                      const ConstraintOp& constraint, double lambda_train,
                      DistillLossParts* parts = nullptr);
LossGrad distill_loss(const StudentModel& student, const std::vector<std::vector<double>>& eps,
                      const std::vector<std::vector<double>>& x0,
                      const ResidualOperator& residual_op, double lambda_train,
                      DistillLossParts* parts = nullptr);

struct DistillTrace {
    std::vector<double> total, reg, pde;  // per epoch
    int epochs_run = 0;
    bool early_stopped = false;
};

StudentModel train_student(const VelocityModel& teacher, const ConstraintOp& constraint,
                           const DistillConfig& config, RngSource& rng,
                           NfeCounter* nfe = nullptr, DistillTrace* trace = nullptr);
StudentModel train_student(const VelocityModel& teacher, const ResidualOperator& residual_op,
                           const DistillConfig& config, RngSource& rng,
                           NfeCounter* nfe = nullptr, DistillTrace* trace = nullptr);

// Rectified-Flow round: retrains a velocity model on the fixed couplings so
// trajectories straighten; the result serves as the next-round teacher.
TeacherModel reflow(const PairDataset& pairs, TeacherModel init, const TrainOptions& opts,
                    RngSource& rng, std::vector<double>* loss_trace = nullptr);

void save_pairs(const std::filesystem::path& dir, const std::string& name,
                const PairDataset& pairs);
PairDataset load_pairs(const std::filesystem::path& dir, const std::string& name);

}  // namespace piddm
