#pragma once

#include <atomic>
#include <filesystem>
#include <span>
#include <vector>

#include "piddm/autodiff.hpp"
#include "piddm/field.hpp"
#include "piddm/pde.hpp"
#include "piddm/schedule.hpp"

namespace piddm {

// Count of model forward evaluations, the inference cost metric.
struct NfeCounter {
    std::atomic<long long> value{0};

    void add(long long n = 1) { value.fetch_add(n, std::memory_order_relaxed); }
    long long count() const { return value.load(std::memory_order_relaxed); }
};

// A velocity field v(x, t) with enough structure for sampling and guidance:
// samplers need evaluations, guidance and trajectory backprop need the
// input-side VJP.
class VelocityModel {
public:
    virtual ~VelocityModel() = default;
    virtual const DiffusionSchedule& schedule() const = 0;
    virtual int dim() const = 0;
    virtual std::vector<double> velocity(std::span<const double> x, double t) const = 0;
    virtual std::vector<double> velocity_vjp(std::span<const double> x, double t,
                                             std::span<const double> upstream) const = 0;
    // Identifies the model state (checkpoint hash for trained nets).
    virtual std::string fingerprint() const = 0;
};

std::string hash_doubles(std::span<const double> values);

// Trained network predicting the flow velocity.
class TeacherModel final : public VelocityModel {
public:
    ParamNet net;
    DiffusionSchedule sched;

    TeacherModel() = default;
    TeacherModel(ParamNet n, DiffusionSchedule s) : net(std::move(n)), sched(s) {}

    const DiffusionSchedule& schedule() const override { return sched; }
    int dim() const override { return net.output_size(); }
    std::vector<double> velocity(std::span<const double> x, double t) const override;
    std::vector<double> velocity_vjp(std::span<const double> x, double t,
                                     std::span<const double> upstream) const override;
    std::string fingerprint() const override { return hash_doubles(net.params); }
};

// alpha(t) x0 + sigma(t) eps; throws for t outside [0, 1].
std::vector<double> interpolate(const DiffusionSchedule& sched, std::span<const double> x0,
                                std::span<const double> eps, double t);

struct LossGrad {
    double loss = 0.0;
    std::vector<double> grad;
};

// Flow-matching loss: mean over the batch of |v(x_t,t) - (da x0 + ds eps)|^2
// with t ~ U(0,1), eps ~ N(0,I). Gradient w.r.t. net parameters.
LossGrad fm_loss(const TeacherModel& model, const std::vector<std::vector<double>>& batch,
                 RngSource& rng);

// Same objective over fixed (eps, x0) couplings (the Rectified-Flow mode).
LossGrad fm_pair_loss(const TeacherModel& model, const std::vector<std::vector<double>>& eps,
                      const std::vector<std::vector<double>>& x0, RngSource& rng);

// fm_loss plus lambda * mean |R(E[x0|x_t])|^2 with the gradient flowing
// through the posterior mean; the shared core behind fm_loss and pidm_loss.
LossGrad velocity_loss_with_physics(const TeacherModel& model,
                                    const std::vector<std::vector<double>>& batch,
                                    const ResidualOperator* physics_op, double lambda,
                                    RngSource& rng, double* fm_part);

struct TrainOptions {
    int iters = 0;
    int batch_size = 32;
    double lr = 1e-3;
};

struct TrainTrace {
    std::vector<double> total;  // per-iteration objective
    std::vector<double> fm;     // flow-matching part only
};

// Shared Adam loop; physics_op != nullptr adds lambda * |R(posterior mean)|^2
// (the PIDM objective). Throws on divergence with the trace filled in.
TeacherModel train_velocity_model(TeacherModel model, const std::vector<std::vector<double>>& data,
                                  const TrainOptions& opts, const ResidualOperator* physics_op,
                                  double lambda, RngSource& rng, TrainTrace* trace);

TeacherModel train_teacher(TeacherModel model, const std::vector<std::vector<double>>& data,
                           const TrainOptions& opts, RngSource& rng,
                           std::vector<double>* loss_trace = nullptr);

struct SampleResult {
    std::vector<double> x0;
    std::vector<std::vector<double>> trajectory;  // filled when requested
};

// Deterministic Euler integration of dx = -v dt from t = 1 to 0.
SampleResult euler_sample(const VelocityModel& model, std::span<const double> eps, int n_steps,
                          NfeCounter* nfe = nullptr, bool keep_trajectory = false);

// E[x0 | x_t] from the velocity prediction; t = 0 returns x_t.
std::vector<double> posterior_mean(const VelocityModel& model, std::span<const double> x_t,
                                   double t, NfeCounter* nfe = nullptr);
std::vector<double> posterior_mean_from_velocity(const DiffusionSchedule& sched,
                                                 std::span<const double> x_t,
                                                 std::span<const double> v, double t);

// Checkpoints: PFD-style header, a layer-size metadata line, then the flat
// parameter vector in little-endian doubles. tag stores the schedule kind
// for teachers ("none" for students).
void save_checkpoint(const std::filesystem::path& path, const ParamNet& net,
                     const std::string& tag);
std::pair<ParamNet, std::string> load_checkpoint(const std::filesystem::path& path);

std::vector<std::vector<double>> flatten_all(const std::vector<JointSample>& samples);

void write_loss_trace_csv(const std::filesystem::path& path, std::span<const double> trace);

}  // namespace piddm
