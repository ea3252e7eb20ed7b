#include "piddm/baselines.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace piddm {

std::string to_string(GuidanceMethod m) {
    switch (m) {
        case GuidanceMethod::vanilla: return "vanilla";
        case GuidanceMethod::dps: return "dps";
        case GuidanceMethod::eci: return "eci";
        case GuidanceMethod::dflow: return "dflow";
        case GuidanceMethod::pidm: return "pidm";
    }
    return "?";
}

GuidanceMethod guidance_method_from_string(const std::string& s) {
    if (s == "vanilla") return GuidanceMethod::vanilla;
    if (s == "dps") return GuidanceMethod::dps;
    if (s == "eci") return GuidanceMethod::eci;
    if (s == "dflow") return GuidanceMethod::dflow;
    if (s == "pidm") return GuidanceMethod::pidm;
    throw std::invalid_argument("unknown guidance method: " + s);
}

CorrectionOp make_mask_correction(std::vector<double> observation, ObservationMask mask) {
    mask.validate();
    if (observation.size() != mask.size())
        throw std::invalid_argument("make_mask_correction: observation/mask length mismatch");
    return [obs = std::move(observation), m = std::move(mask)](std::span<const double> xhat) {
        return apply_mask(xhat, obs, m);
    };
}

namespace {

bool all_finite(std::span<const double> v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace

std::vector<double> dps_step_guided(const VelocityModel& model, std::span<const double> x_t,
                                    double t, double dt, const ConstraintOp& constraint,
                                    double weight, const std::vector<double>* observation,
                                    const ObservationMask* mask, double obs_weight,
                                    NfeCounter* nfe, GuidanceLog* log) {
    if (weight < 0.0) throw std::invalid_argument("dps_step: weight must be >= 0");
    const DiffusionSchedule& sched = model.schedule();
    const std::vector<double> v = model.velocity(x_t, t);
    if (nfe) nfe->add(1);

    std::vector<double> next(x_t.size());
    for (std::size_t i = 0; i < next.size(); ++i) next[i] = x_t[i] - dt * v[i];

    const bool want_constraint = weight > 0.0 && static_cast<bool>(constraint);
    const bool want_obs = obs_weight > 0.0 && observation != nullptr && mask != nullptr;
    if (!want_constraint && !want_obs) return next;

    const std::vector<double> xhat = posterior_mean_from_velocity(sched, x_t, v, t);
    std::vector<double> g_xhat(x_t.size(), 0.0);
    if (want_constraint) {
        const std::vector<double> gc = constraint.grad(xhat);
        for (std::size_t i = 0; i < g_xhat.size(); ++i) g_xhat[i] += weight * gc[i];
    }
    if (want_obs) {
        for (std::size_t i = 0; i < g_xhat.size(); ++i)
            g_xhat[i] += obs_weight * 2.0 * ((xhat[i] - (*observation)[i]) * mask->entries[i]);
    }

    // chain through xhat = (ds x - s v(x)) / den
    const double s = sched.sigma(t), ds = sched.dsigma(t);
    const double den = sched.tweedie_denominator(t);
    const std::vector<double> vvjp = model.velocity_vjp(x_t, t, g_xhat);
    std::vector<double> guide(x_t.size());
    for (std::size_t i = 0; i < guide.size(); ++i)
        guide[i] = (ds * g_xhat[i] - s * vvjp[i]) / den;

    if (!all_finite(guide)) {  // reject the guidance, keep the plain step
        if (log) ++log->skipped_steps;
        return next;
    }
    for (std::size_t i = 0; i < next.size(); ++i) next[i] -= guide[i];
    return next;
}

std::vector<double> dps_step(const VelocityModel& model, std::span<const double> x_t, double t,
                             double dt, const ResidualOperator& residual_op, double weight,
                             NfeCounter* nfe, GuidanceLog* log) {
    const ConstraintOp c = residual_constraint(residual_op);
    return dps_step_guided(model, x_t, t, dt, c, weight, nullptr, nullptr, 0.0, nfe, log);
}

std::vector<double> eci_step(const VelocityModel& model, std::span<const double> x_t, double t,
                             double dt, const CorrectionOp& correction, NfeCounter* nfe) {
    if (!(dt <= t)) throw std::invalid_argument("eci_step: dt must not exceed t");
    const DiffusionSchedule& sched = model.schedule();
    const std::vector<double> v = model.velocity(x_t, t);
    if (nfe) nfe->add(1);
    if (!correction) {  // no correction: the plain Euler step, bit for bit
        std::vector<double> next(x_t.size());
        for (std::size_t i = 0; i < next.size(); ++i) next[i] = x_t[i] - dt * v[i];
        return next;
    }
    const std::vector<double> xhat = posterior_mean_from_velocity(sched, x_t, v, t);
    const std::vector<double> corrected = correction(xhat);
    if (corrected.size() != x_t.size())
        throw std::invalid_argument("eci_step: correction changed the sample length");
    const double a = sched.alpha(t), s = sched.sigma(t);
    const double a_next = sched.alpha(t - dt), s_next = sched.sigma(t - dt);
    std::vector<double> next(x_t.size());
    for (std::size_t i = 0; i < next.size(); ++i) {
        const double eps_hat = (x_t[i] - a * xhat[i]) / s;  // noise direction
        next[i] = a_next * corrected[i] + s_next * eps_hat;
    }
    return next;
}

LossGrad pidm_loss(const TeacherModel& model, const std::vector<std::vector<double>>& batch,
                   const ResidualOperator& residual_op, double lambda_t, RngSource& rng,
                   double* fm_part) {
    if (lambda_t < 0.0) throw std::invalid_argument("pidm_loss: lambda must be >= 0");
    return velocity_loss_with_physics(model, batch, &residual_op, lambda_t, rng, fm_part);
}

TeacherModel train_pidm(TeacherModel model, const std::vector<std::vector<double>>& data,
                        const TrainOptions& opts, const ResidualOperator& residual_op,
                        double lambda, RngSource& rng, TrainTrace* trace) {
    return train_velocity_model(std::move(model), data, opts, &residual_op, lambda, rng, trace);
}

DflowResult dflow_optimize(const VelocityModel& model, std::span<const double> eps_init,
                           const ConstraintOp& constraint, const DflowOptions& opts,
                           NfeCounter* nfe, GuidanceLog* log) {
    if (opts.n_iters < 0) throw std::invalid_argument("dflow: n_iters must be >= 0");
    if (opts.n_steps < 1) throw std::invalid_argument("dflow: n_steps must be >= 1");
    const std::size_t dim = eps_init.size();
    const bool conditional = opts.observation != nullptr && opts.mask != nullptr;

    DflowResult res;
    res.eps.assign(eps_init.begin(), eps_init.end());

    if (opts.n_iters == 0) {
        res.sample = euler_sample(model, res.eps, opts.n_steps, nfe).x0;
        res.forward_evals = opts.n_steps;
        if (constraint) res.objective = opts.lambda * constraint.value(res.sample);
        return res;
    }

    const double dt = 1.0 / opts.n_steps;
    // objective over the whole trajectory: returns loss, final sample, and
    // the gradient w.r.t. the initial noise
    auto evaluate = [&](std::span<const double> eps, std::vector<double>& grad,
                        std::vector<double>& sample) {
        std::vector<std::vector<double>> states;
        states.reserve(opts.n_steps + 1);
        states.emplace_back(eps.begin(), eps.end());
        for (int k = opts.n_steps; k >= 1; --k) {
            const double t = static_cast<double>(k) / opts.n_steps;
            const std::vector<double> v = model.velocity(states.back(), t);
            std::vector<double> nx(dim);
            for (std::size_t i = 0; i < dim; ++i) nx[i] = states.back()[i] - dt * v[i];
            states.push_back(std::move(nx));
        }
        res.forward_evals += opts.n_steps;
        if (nfe) nfe->add(opts.n_steps);
        sample = states.back();

        double loss = 0.0;
        std::vector<double> u(dim, 0.0);
        if (conditional) {
            const std::vector<double>& m = opts.mask->entries;
            const std::vector<double>& obs = *opts.observation;
            std::vector<double> x_mix(dim);
            for (std::size_t i = 0; i < dim; ++i)
                x_mix[i] = m[i] == 1.0 ? obs[i] : sample[i];
            for (std::size_t i = 0; i < dim; ++i) {
                const double d = (sample[i] - obs[i]) * m[i];
                loss += d * d;
                u[i] += 2.0 * d;
            }
            if (constraint) {
                loss += opts.lambda * constraint.value(x_mix);
                const std::vector<double> gc = constraint.grad(x_mix);
                for (std::size_t i = 0; i < dim; ++i)
                    if (m[i] == 0.0) u[i] += opts.lambda * gc[i];
            }
        } else if (constraint) {
            loss = opts.lambda * constraint.value(sample);
            const std::vector<double> gc = constraint.grad(sample);
            for (std::size_t i = 0; i < dim; ++i) u[i] = opts.lambda * gc[i];
        }

        // reverse sweep: u <- (I - dt dv/dx)^T u at each state
        for (int k = 1; k <= opts.n_steps; ++k) {
            const double t = static_cast<double>(k) / opts.n_steps;
            const std::vector<double>& x = states[static_cast<std::size_t>(opts.n_steps - k)];
            const std::vector<double> vv = model.velocity_vjp(x, t, u);
            for (std::size_t i = 0; i < dim; ++i) u[i] -= dt * vv[i];
        }
        res.backward_evals += opts.n_steps;
        grad = std::move(u);
        return loss;
    };

    AdamState adam;
    adam.lr = opts.lr;
    double best = std::numeric_limits<double>::infinity();
    std::vector<double> grad, sample;
    for (int it = 0; it < opts.n_iters; ++it) {
        const double loss = evaluate(res.eps, grad, sample);
        if (loss < best) {
            best = loss;
            res.sample = sample;
        }
        double gn = 0.0;
        for (double g : grad) gn += g * g;
        gn = std::sqrt(gn);
        if (!std::isfinite(gn)) {
            if (log) ++log->clipped_grads;
            ++res.clipped;
            break;  // cannot recover a direction from a non-finite gradient
        }
        if (gn > opts.grad_clip) {
            const double scale = opts.grad_clip / gn;
            for (double& g : grad) g *= scale;
            if (log) ++log->clipped_grads;
            ++res.clipped;
        }
        adam_update(adam, res.eps, grad);
    }
    res.objective = best;
    return res;
}

std::vector<double> dps_sample(const VelocityModel& model, std::span<const double> eps,
                               int n_steps, const ConstraintOp& constraint, double weight,
                               const std::vector<double>* observation,
                               const ObservationMask* mask, double obs_weight, NfeCounter* nfe,
                               GuidanceLog* log) {
    std::vector<double> x(eps.begin(), eps.end());
    const double dt = 1.0 / n_steps;
    for (int k = n_steps; k >= 1; --k) {
        const double t = static_cast<double>(k) / n_steps;
        x = dps_step_guided(model, x, t, dt, constraint, weight, observation, mask, obs_weight,
                            nfe, log);
    }
    return x;
}

std::vector<double> eci_sample(const VelocityModel& model, std::span<const double> eps,
                               int n_steps, const CorrectionOp& correction, NfeCounter* nfe) {
    std::vector<double> x(eps.begin(), eps.end());
    const double dt = 1.0 / n_steps;
    for (int k = n_steps; k >= 1; --k) {
        const double t = static_cast<double>(k) / n_steps;
        x = eci_step(model, x, t, dt, correction, nfe);
    }
    return x;
}

}  // namespace piddm
