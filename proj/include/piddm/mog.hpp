#pragma once

#include <span>
#include <vector>

#include "piddm/diffusion.hpp"
#include "piddm/rng.hpp"
#include "piddm/schedule.hpp"

namespace piddm {

// Gaussian mixture with full (small, dense) covariances. The diffused
// marginal at time t has component means alpha_t mu_k and covariances
// alpha_t^2 Sigma_k + sigma_t^2 I, so scores, posterior means and the
// probability-flow velocity are all closed-form.
struct MoGComponent {
    std::vector<double> mean;  // length d
    std::vector<double> cov;   // d x d row-major, positive definite
};

struct MoGSpec {
    std::vector<MoGComponent> components;
    std::vector<double> weights;

    int dim() const { return static_cast<int>(components.front().mean.size()); }
    void validate() const;
};

// Two Gaussians on the horizontal lines x2 = -1 and x2 = +1 with x1 modes at
// -1/+1. The Dirac-supported second dimension is realized with a small
// variance so scores stay finite.
MoGSpec make_line_mog(double var_x1 = 0.04, double var_x2 = 1e-6);

// Correlated two-component mixture: means (-1,-1), (+1,+1), covariance
// sigma_sq [[1, rho], [rho, 1]].
MoGSpec make_correlated_mog(double sigma_sq = 0.04, double rho = 0.99999);

double mog_log_density(const MoGSpec& spec, const DiffusionSchedule& sched,
                       std::span<const double> x, double t);
std::vector<double> mog_score(const MoGSpec& spec, const DiffusionSchedule& sched,
                              std::span<const double> x, double t);
std::vector<double> mog_posterior_mean(const MoGSpec& spec, const DiffusionSchedule& sched,
                                       std::span<const double> x, double t);
// (d posterior_mean / d x)^T upstream, closed form.
std::vector<double> mog_posterior_mean_vjp(const MoGSpec& spec, const DiffusionSchedule& sched,
                                           std::span<const double> x, double t,
                                           std::span<const double> upstream);
std::vector<double> mog_marginal_velocity(const MoGSpec& spec, const DiffusionSchedule& sched,
                                          std::span<const double> x, double t);
// Probability-flow velocity of the single-component conditional p_t(x | k).
std::vector<double> gt_conditional_velocity(const MoGSpec& spec, const DiffusionSchedule& sched,
                                            int k, std::span<const double> x, double t);

std::vector<double> mog_sample(const MoGSpec& spec, RngSource& rng);
std::vector<double> mog_sample_component(const MoGSpec& spec, int k, RngSource& rng);
// CDF of coordinate `coord` under the clean (t = 0) mixture.
double mog_marginal_cdf(const MoGSpec& spec, int coord, double v);

// Analytic-score teacher: the exact marginal velocity field as a sampler
// model, including the input-side VJP needed by guidance.
class AnalyticMogModel final : public VelocityModel {
public:
    AnalyticMogModel(MoGSpec spec, DiffusionSchedule sched)
        : spec_(std::move(spec)), sched_(sched) {
        spec_.validate();
    }

    const MoGSpec& spec() const { return spec_; }
    const DiffusionSchedule& schedule() const override { return sched_; }
    int dim() const override { return spec_.dim(); }
    std::vector<double> velocity(std::span<const double> x, double t) const override;
    std::vector<double> velocity_vjp(std::span<const double> x, double t,
                                     std::span<const double> upstream) const override;
    std::string fingerprint() const override;

private:
    MoGSpec spec_;
    DiffusionSchedule sched_;
};

}  // namespace piddm
