#include "piddm/mog.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace piddm {

void MoGSpec::validate() const {
    if (components.empty()) throw std::invalid_argument("MoGSpec: no components");
    if (weights.size() != components.size())
        throw std::invalid_argument("MoGSpec: weight count mismatch");
    double sum = 0.0;
    for (double w : weights) {
        if (!(w > 0.0)) throw std::invalid_argument("MoGSpec: weights must be positive");
        sum += w;
    }
    if (std::fabs(sum - 1.0) > 1e-12)
        throw std::invalid_argument("MoGSpec: weights must sum to 1");
    const std::size_t d = components.front().mean.size();
    for (const auto& c : components) {
        if (c.mean.size() != d || c.cov.size() != d * d)
            throw std::invalid_argument("MoGSpec: inconsistent dimensions");
    }
}

MoGSpec make_line_mog(double var_x1, double var_x2) {
    MoGSpec s;
    s.components = {{{-1.0, -1.0}, {var_x1, 0.0, 0.0, var_x2}},
                    {{+1.0, +1.0}, {var_x1, 0.0, 0.0, var_x2}}};
    s.weights = {0.5, 0.5};
    s.validate();
    return s;
}

MoGSpec make_correlated_mog(double sigma_sq, double rho) {
    MoGSpec s;
    const double c = sigma_sq * rho;
    s.components = {{{-1.0, -1.0}, {sigma_sq, c, c, sigma_sq}},
                    {{+1.0, +1.0}, {sigma_sq, c, c, sigma_sq}}};
    s.weights = {0.5, 0.5};
    s.validate();
    return s;
}

namespace {

// Cholesky factor (lower) of a small dense SPD matrix, row-major.
std::vector<double> cholesky(const std::vector<double>& a, int d) {
    std::vector<double> L(static_cast<std::size_t>(d) * d, 0.0);
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s = a[static_cast<std::size_t>(i) * d + j];
            for (int k = 0; k < j; ++k)
                s -= L[static_cast<std::size_t>(i) * d + k] * L[static_cast<std::size_t>(j) * d + k];
            if (i == j) {
                if (!(s > 0.0)) throw std::invalid_argument("MoG covariance not positive definite");
                L[static_cast<std::size_t>(i) * d + i] = std::sqrt(s);
            } else {
                L[static_cast<std::size_t>(i) * d + j] =
                    s / L[static_cast<std::size_t>(j) * d + j];
            }
        }
    }
    return L;
}

// Solve C y = b given the Cholesky factor of C.
std::vector<double> chol_solve(const std::vector<double>& L, int d, std::span<const double> b) {
    std::vector<double> y(b.begin(), b.end());
    for (int i = 0; i < d; ++i) {
        double s = y[i];
        for (int k = 0; k < i; ++k) s -= L[static_cast<std::size_t>(i) * d + k] * y[k];
        y[i] = s / L[static_cast<std::size_t>(i) * d + i];
    }
    for (int i = d - 1; i >= 0; --i) {
        double s = y[i];
        for (int k = i + 1; k < d; ++k) s -= L[static_cast<std::size_t>(k) * d + i] * y[k];
        y[i] = s / L[static_cast<std::size_t>(i) * d + i];
    }
    return y;
}

struct MogEval {
    int d = 0;
    double alpha = 0.0, sigma = 0.0;
    std::vector<double> resp;                    // responsibilities r_k
    std::vector<std::vector<double>> comp_score; // g_k = -C_k^{-1}(x - alpha mu_k)
    std::vector<std::vector<double>> comp_post;  // per-component posterior mean of x0
    std::vector<std::vector<double>> chol;       // factors of C_k
    std::vector<double> score;
    std::vector<double> post_mean;
    double log_density = 0.0;
};

// All closed-form per-point quantities in one pass, in log space.
MogEval mog_eval(const MoGSpec& spec, const DiffusionSchedule& sched, std::span<const double> x,
                 double t) {
    spec.validate();
    const int d = spec.dim();
    if (static_cast<int>(x.size()) != d) throw std::invalid_argument("MoG: point width mismatch");
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("MoG: t outside [0,1]");

    MogEval ev;
    ev.d = d;
    ev.alpha = sched.alpha(t);
    ev.sigma = sched.sigma(t);
    const std::size_t K = spec.components.size();
    ev.resp.resize(K);
    ev.comp_score.resize(K);
    ev.comp_post.resize(K);
    ev.chol.resize(K);

    std::vector<double> logp(K);
    for (std::size_t k = 0; k < K; ++k) {
        const MoGComponent& c = spec.components[k];
        std::vector<double> C(c.cov.size());
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j)
                C[static_cast<std::size_t>(i) * d + j] =
                    ev.alpha * ev.alpha * c.cov[static_cast<std::size_t>(i) * d + j] +
                    (i == j ? ev.sigma * ev.sigma : 0.0);
        ev.chol[k] = cholesky(C, d);
        double logdet = 0.0;
        for (int i = 0; i < d; ++i)
            logdet += 2.0 * std::log(ev.chol[k][static_cast<std::size_t>(i) * d + i]);

        std::vector<double> diff(d);
        for (int i = 0; i < d; ++i) diff[i] = x[i] - ev.alpha * c.mean[i];
        std::vector<double> sol = chol_solve(ev.chol[k], d, diff);
        double quad = 0.0;
        for (int i = 0; i < d; ++i) quad += diff[i] * sol[i];
        logp[k] = std::log(spec.weights[k]) - 0.5 * (quad + logdet + d * std::log(2.0 * std::numbers::pi));

        ev.comp_score[k].resize(d);
        for (int i = 0; i < d; ++i) ev.comp_score[k][i] = -sol[i];

        // posterior mean of x0 under component k: mu + alpha Sigma C^{-1} (x - alpha mu)
        ev.comp_post[k].resize(d);
        for (int i = 0; i < d; ++i) {
            double s = c.mean[i];
            for (int j = 0; j < d; ++j)
                s += ev.alpha * c.cov[static_cast<std::size_t>(i) * d + j] * sol[j];
            ev.comp_post[k][i] = s;
        }
    }

    const double mx = *std::max_element(logp.begin(), logp.end());
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) z += std::exp(logp[k] - mx);
    ev.log_density = mx + std::log(z);
    for (std::size_t k = 0; k < K; ++k) ev.resp[k] = std::exp(logp[k] - mx) / z;

    ev.score.assign(d, 0.0);
    ev.post_mean.assign(d, 0.0);
    for (std::size_t k = 0; k < K; ++k)
        for (int i = 0; i < d; ++i) {
            ev.score[i] += ev.resp[k] * ev.comp_score[k][i];
            ev.post_mean[i] += ev.resp[k] * ev.comp_post[k][i];
        }
    return ev;
}

// Velocity from either the score form (stable for small sigma) or the
// posterior-mean form (stable for small alpha); both are exact.
std::vector<double> velocity_from_eval(const DiffusionSchedule& sched, const MogEval& ev,
                                       std::span<const double> x, double t,
                                       std::span<const double> score,
                                       std::span<const double> post_mean) {
    const double a = ev.alpha, s = ev.sigma;
    const double da = sched.dalpha(t), ds = sched.dsigma(t);
    std::vector<double> v(ev.d);
    if (a >= s) {
        const double ra = da / a;
        const double cs = ds * s - ra * s * s;
        for (int i = 0; i < ev.d; ++i) v[i] = ra * x[i] - cs * score[i];
    } else {
        const double rs = ds / s;
        const double cp = da - ds * a / s;
        for (int i = 0; i < ev.d; ++i) v[i] = rs * x[i] + cp * post_mean[i];
    }
    return v;
}

}  // namespace

double mog_log_density(const MoGSpec& spec, const DiffusionSchedule& sched,
                       std::span<const double> x, double t) {
    return mog_eval(spec, sched, x, t).log_density;
}

std::vector<double> mog_score(const MoGSpec& spec, const DiffusionSchedule& sched,
                              std::span<const double> x, double t) {
    return mog_eval(spec, sched, x, t).score;
}

std::vector<double> mog_posterior_mean(const MoGSpec& spec, const DiffusionSchedule& sched,
                                       std::span<const double> x, double t) {
    return mog_eval(spec, sched, x, t).post_mean;
}

std::vector<double> mog_posterior_mean_vjp(const MoGSpec& spec, const DiffusionSchedule& sched,
                                           std::span<const double> x, double t,
                                           std::span<const double> upstream) {
    const MogEval ev = mog_eval(spec, sched, x, t);
    const int d = ev.d;
    std::vector<double> out(d, 0.0);
    for (std::size_t k = 0; k < spec.components.size(); ++k) {
        double mu = 0.0;
        for (int i = 0; i < d; ++i) mu += ev.comp_post[k][i] * upstream[i];
        for (int i = 0; i < d; ++i)
            out[i] += ev.resp[k] * (ev.comp_score[k][i] - ev.score[i]) * mu;

        // (alpha Sigma C^{-1})^T u = alpha C^{-1} Sigma u (all symmetric)
        std::vector<double> su(d, 0.0);
        const auto& cov = spec.components[k].cov;
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j)
                su[i] += cov[static_cast<std::size_t>(i) * d + j] * upstream[j];
        const std::vector<double> ci = chol_solve(ev.chol[k], d, su);
        for (int i = 0; i < d; ++i) out[i] += ev.resp[k] * ev.alpha * ci[i];
    }
    return out;
}

std::vector<double> mog_marginal_velocity(const MoGSpec& spec, const DiffusionSchedule& sched,
                                          std::span<const double> x, double t) {
    const MogEval ev = mog_eval(spec, sched, x, t);
    return velocity_from_eval(sched, ev, x, t, ev.score, ev.post_mean);
}

std::vector<double> gt_conditional_velocity(const MoGSpec& spec, const DiffusionSchedule& sched,
                                            int k, std::span<const double> x, double t) {
    if (k < 0 || k >= static_cast<int>(spec.components.size()))
        throw std::invalid_argument("gt_conditional_velocity: bad component index");
    const MogEval ev = mog_eval(spec, sched, x, t);
    return velocity_from_eval(sched, ev, x, t, ev.comp_score[k], ev.comp_post[k]);
}

std::vector<double> mog_sample_component(const MoGSpec& spec, int k, RngSource& rng) {
    const int d = spec.dim();
    const std::vector<double> L = cholesky(spec.components[k].cov, d);
    std::vector<double> z = rng.normal_vec(static_cast<std::size_t>(d));
    std::vector<double> out(spec.components[k].mean);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j <= i; ++j) out[i] += L[static_cast<std::size_t>(i) * d + j] * z[j];
    return out;
}

std::vector<double> mog_sample(const MoGSpec& spec, RngSource& rng) {
    spec.validate();
    double u = rng.uniform();
    std::size_t k = 0;
    for (; k + 1 < spec.components.size(); ++k) {
        if (u < spec.weights[k]) break;
        u -= spec.weights[k];
    }
    return mog_sample_component(spec, static_cast<int>(k), rng);
}

double mog_marginal_cdf(const MoGSpec& spec, int coord, double v) {
    double c = 0.0;
    for (std::size_t k = 0; k < spec.components.size(); ++k) {
        const double mu = spec.components[k].mean[coord];
        const double sd = std::sqrt(
            spec.components[k].cov[static_cast<std::size_t>(coord) * spec.dim() + coord]);
        c += spec.weights[k] * 0.5 * std::erfc(-(v - mu) / (sd * std::numbers::sqrt2));
    }
    return c;
}

std::string AnalyticMogModel::fingerprint() const {
    std::vector<double> all;
    for (const auto& c : spec_.components) {
        all.insert(all.end(), c.mean.begin(), c.mean.end());
        all.insert(all.end(), c.cov.begin(), c.cov.end());
    }
    all.insert(all.end(), spec_.weights.begin(), spec_.weights.end());
    return "mog-" + hash_doubles(all);
}

std::vector<double> AnalyticMogModel::velocity(std::span<const double> x, double t) const {
    return mog_marginal_velocity(spec_, sched_, x, t);
}

std::vector<double> AnalyticMogModel::velocity_vjp(std::span<const double> x, double t,
                                                   std::span<const double> upstream) const {
    const int d = spec_.dim();
    const double a = sched_.alpha(t), s = sched_.sigma(t);
    const double da = sched_.dalpha(t), ds = sched_.dsigma(t);
    std::vector<double> out(d, 0.0);
    if (a >= s) {
        // v = (da/a) x - (ds s - (da/a) s^2) score
        const double ra = da / a;
        const double cs = ds * s - ra * s * s;
        // score vjp: sum_k r_k [(g_k - score)(g_k . u) - C_k^{-1} u]
        const MogEval ev = mog_eval(spec_, sched_, x, t);
        std::vector<double> svjp(d, 0.0);
        for (std::size_t k = 0; k < spec_.components.size(); ++k) {
            double gu = 0.0;
            for (int i = 0; i < d; ++i) gu += ev.comp_score[k][i] * upstream[i];
            const std::vector<double> ciu = chol_solve(ev.chol[k], d, upstream);
            for (int i = 0; i < d; ++i)
                svjp[i] += ev.resp[k] * ((ev.comp_score[k][i] - ev.score[i]) * gu - ciu[i]);
        }
        for (int i = 0; i < d; ++i) out[i] = ra * upstream[i] - cs * svjp[i];
    } else {
        // v = (ds/s) x + (da - ds a / s) post_mean
        const double rs = ds / s;
        const double cp = da - ds * a / s;
        const std::vector<double> pvjp = mog_posterior_mean_vjp(spec_, sched_, x, t, upstream);
        for (int i = 0; i < d; ++i) out[i] = rs * upstream[i] + cp * pvjp[i];
    }
    return out;
}

}  // namespace piddm
