#include "piddm/jensen.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <stdexcept>

#include "piddm/baselines.hpp"
#include "piddm/distill.hpp"
#include "piddm/exec.hpp"
#include "piddm/inference.hpp"

namespace piddm {

std::vector<double> dps_mog_velocity(const MoGSpec& spec, const DiffusionSchedule& sched,
                                     const DpsLatentGuidance& guidance, double z,
                                     std::span<const double> x, double t) {
    std::vector<double> v = mog_marginal_velocity(spec, sched, x, t);
    if (guidance.weight == 0.0) return v;
    const std::vector<double> xhat = mog_posterior_mean(spec, sched, x, t);
    std::vector<double> upstream(x.size(), 0.0);
    upstream[guidance.coord] = 2.0 * (xhat[guidance.coord] - z);
    const std::vector<double> g = mog_posterior_mean_vjp(spec, sched, x, t, upstream);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += guidance.weight * g[i];
    return v;
}

namespace {

// Euler integration of a plain velocity field from t=1 to 0.
std::vector<double> integrate_velocity(
    const std::function<std::vector<double>(std::span<const double>, double)>& vel,
    std::span<const double> eps, int n_steps) {
    std::vector<double> x(eps.begin(), eps.end());
    const double dt = 1.0 / n_steps;
    for (int k = n_steps; k >= 1; --k) {
        const double t = static_cast<double>(k) / n_steps;
        const std::vector<double> v = vel(x, t);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] -= dt * v[i];
    }
    return x;
}

int pick_component(const MoGSpec& spec, RngSource& rng) {
    double u = rng.uniform();
    for (std::size_t k = 0; k + 1 < spec.weights.size(); ++k) {
        if (u < spec.weights[k]) return static_cast<int>(k);
        u -= spec.weights[k];
    }
    return static_cast<int>(spec.weights.size()) - 1;
}

}  // namespace

GapReport gap_metrics(const MoGSpec& spec, const DiffusionSchedule& sched, const GapConfig& cfg,
                      RngSource& rng) {
    if (cfg.t_grid.empty()) throw std::invalid_argument("gap_metrics: empty t grid");
    spec.validate();
    const int d = spec.dim();
    GapReport rep;
    rep.t_values = cfg.t_grid;
    rep.mae.assign(cfg.t_grid.size(), 0.0);
    rep.angular.assign(cfg.t_grid.size(), 0.0);

    const std::uint64_t field_seed = rng.next_u64();
    std::vector<long long> excluded(cfg.t_grid.size(), 0);

    for (std::size_t ti = 0; ti < cfg.t_grid.size(); ++ti) {
        const double t = cfg.t_grid[ti];
        const double a = sched.alpha(t), s = sched.sigma(t);
        std::vector<double> mae_terms(cfg.n_points, 0.0), ang_terms(cfg.n_points, 0.0);
        std::vector<int> skip(cfg.n_points, 0);
        const RngSource troot = RngSource(field_seed).child(ti);
        exec::par_for(static_cast<std::size_t>(cfg.n_points), [&](std::size_t i) {
            RngSource r = troot.child(i);
            const int k = pick_component(spec, r);
            const double z = spec.components[k].mean[cfg.guidance.coord];
            // x ~ p_t(.|k): diffuse a clean draw from component k
            const std::vector<double> x0 = mog_sample_component(spec, k, r);
            std::vector<double> x(d);
            for (int ii = 0; ii < d; ++ii) x[ii] = a * x0[ii] + s * r.normal();

            const std::vector<double> v_dps =
                dps_mog_velocity(spec, sched, cfg.guidance, z, x, t);
            const std::vector<double> v_gt = gt_conditional_velocity(spec, sched, k, x, t);
            double abs_sum = 0.0, dot = 0.0, n1 = 0.0, n2 = 0.0;
            for (int ii = 0; ii < d; ++ii) {
                abs_sum += std::fabs(v_dps[ii] - v_gt[ii]);
                dot += v_dps[ii] * v_gt[ii];
                n1 += v_dps[ii] * v_dps[ii];
                n2 += v_gt[ii] * v_gt[ii];
            }
            mae_terms[i] = abs_sum / d;
            if (n1 < 1e-24 || n2 < 1e-24) {
                skip[i] = 1;
            } else {
                ang_terms[i] = 1.0 - dot / std::sqrt(n1 * n2);
            }
        });
        double mae = 0.0, ang = 0.0;
        long long kept = 0;
        for (int i = 0; i < cfg.n_points; ++i) {
            mae += mae_terms[i];
            if (!skip[i]) {
                ang += ang_terms[i];
                ++kept;
            } else {
                ++excluded[ti];
            }
        }
        rep.mae[ti] = mae / cfg.n_points;
        rep.angular[ti] = kept > 0 ? ang / kept : 0.0;
    }
    for (long long e : excluded) rep.excluded += e;

    // DPS-sampled histograms against the clean mixture (Fig. 2b/c layout)
    const std::uint64_t hist_seed = rng.next_u64();
    const RngSource hroot = RngSource(hist_seed);
    std::vector<double> dps_x1(cfg.n_hist_samples), dps_x2(cfg.n_hist_samples);
    std::vector<double> ref_x1(cfg.n_hist_samples), ref_x2(cfg.n_hist_samples);
    exec::par_for(static_cast<std::size_t>(cfg.n_hist_samples), [&](std::size_t i) {
        RngSource r = hroot.child(i);
        const int k = pick_component(spec, r);
        const double z = spec.components[k].mean[cfg.guidance.coord];
        std::vector<double> eps = r.normal_vec(static_cast<std::size_t>(d));
        const std::vector<double> x = integrate_velocity(
            [&](std::span<const double> xx, double tt) {
                return dps_mog_velocity(spec, sched, cfg.guidance, z, xx, tt);
            },
            eps, cfg.n_euler_steps);
        dps_x1[i] = x[0];
        dps_x2[i] = x[1];
        RngSource rr = r.child("ref");
        const std::vector<double> y = mog_sample(spec, rr);
        ref_x1[i] = y[0];
        ref_x2[i] = y[1];
    });

    rep.dps_unconstrained = make_histogram(dps_x1, -2.0, 2.0, cfg.hist_bins);
    rep.ref_unconstrained = make_histogram(ref_x1, -2.0, 2.0, cfg.hist_bins);
    rep.dps_constrained = make_histogram(dps_x2, -2.0, 2.0, cfg.hist_bins);
    rep.ref_constrained = make_histogram(ref_x2, -2.0, 2.0, cfg.hist_bins);
    rep.ks_unconstrained =
        ks_statistic(dps_x1, [&](double v) { return mog_marginal_cdf(spec, 0, v); });
    long long off = 0;
    for (double v : dps_x2) {
        double nearest = std::numeric_limits<double>::infinity();
        for (const auto& c : spec.components)
            nearest = std::min(nearest, std::fabs(v - c.mean[cfg.guidance.coord]));
        if (nearest > cfg.support_tol) ++off;
    }
    rep.off_support_mass = static_cast<double>(off) / cfg.n_hist_samples;
    return rep;
}

void write_gap_csv(const std::filesystem::path& path, const GapReport& report) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << "t,mae,angular\n";
    os.precision(17);
    for (std::size_t i = 0; i < report.t_values.size(); ++i)
        os << report.t_values[i] << ',' << report.mae[i] << ',' << report.angular[i] << '\n';
}

CorrelatedMogReport correlated_mog_pipeline(const CorrelatedMogConfig& cfg) {
    CorrelatedMogReport rep;
    rep.aborted = true;
    const MoGSpec spec = make_correlated_mog(cfg.sigma_sq, cfg.rho);
    const DiffusionSchedule sched{cfg.schedule};
    const AnalyticMogModel teacher(spec, sched);
    RngSource rng(cfg.seed);

    try {
        rep.stage = "distill";
        NfeCounter pair_nfe;
        RngSource train_rng = rng.child("train");
        DistillConfig dc;
        dc.lambda_train = cfg.lambda_train;
        dc.epochs = cfg.student_epochs;
        dc.refresh_interval = cfg.student_epochs + 1;  // one fixed pool of pairs
        dc.pairs_per_refresh = cfg.n_pairs;
        dc.batch_size = cfg.student_batch;
        dc.lr = cfg.student_lr;
        dc.teacher_steps = cfg.teacher_steps;
        dc.hidden = cfg.student_hidden;
        const StudentModel student =
            train_student(teacher, pair_deviation_constraint(), dc, train_rng, &pair_nfe);

        rep.stage = "piddm-inference";
        const ConstraintOp dev = pair_deviation_constraint();
        RngSource eval_rng = rng.child("eval");
        const std::uint64_t eval_seed = eval_rng.next_u64();
        const RngSource eroot = RngSource(eval_seed);
        std::vector<double> piddm_x1(cfg.eval_samples), piddm_dev_v(cfg.eval_samples);
        std::vector<long long> piddm_evals(cfg.eval_samples, 0);
        exec::par_for(static_cast<std::size_t>(cfg.eval_samples), [&](std::size_t i) {
            RngSource r = eroot.child(i);
            std::vector<double> eps = r.normal_vec(2);
            long long evals = 0;
            LbfgsState st;
            st.grad_tol = cfg.lbfgs_tol;
            st.initial_step = cfg.lbfgs_lr;
            LbfgsResult lr = lbfgs_minimize(
                st,
                [&](std::span<const double> e, std::span<double> g) {
                    ++evals;
                    Tape tape;
                    const std::vector<double> pred = forward(student.net, e, &tape);
                    const std::vector<double> gc = dev.grad(pred);
                    std::vector<double> up(gc.size());
                    for (std::size_t j = 0; j < gc.size(); ++j)
                        up[j] = cfg.lambda_infer * gc[j];
                    const std::vector<double> ge = grad_input(tape, up);
                    for (std::size_t j = 0; j < ge.size(); ++j) g[j] = ge[j];
                    return cfg.lambda_infer * dev.value(pred);
                },
                eps, cfg.lbfgs_iters);
            const std::vector<double> x = forward(student.net, lr.x);
            ++evals;
            piddm_x1[i] = x[0];
            piddm_dev_v[i] = x[0] - x[1];
            piddm_evals[i] = evals;
        });
        for (long long e : piddm_evals) rep.piddm_nfe += e;

        double mean_dev = 0.0;
        for (double v : piddm_dev_v) mean_dev += v;
        mean_dev /= cfg.eval_samples;
        double var = 0.0;
        for (double v : piddm_dev_v) var += (v - mean_dev) * (v - mean_dev);
        rep.piddm_dev_std = std::sqrt(var / (cfg.eval_samples - 1));

        rep.stage = "dps";
        const RngSource droot = RngSource(eval_rng.next_u64());
        std::vector<double> dps_x1(cfg.eval_samples), dps_dev_v(cfg.eval_samples);
        exec::par_for(static_cast<std::size_t>(cfg.eval_samples), [&](std::size_t i) {
            RngSource r = droot.child(i);
            std::vector<double> eps = r.normal_vec(2);
            const std::vector<double> x = integrate_velocity(
                [&](std::span<const double> xx, double tt) {
                    std::vector<double> v = mog_marginal_velocity(spec, sched, xx, tt);
                    const std::vector<double> xhat = mog_posterior_mean(spec, sched, xx, tt);
                    const std::vector<double> gc = dev.grad(xhat);
                    const std::vector<double> g =
                        mog_posterior_mean_vjp(spec, sched, xx, tt, gc);
                    for (std::size_t j = 0; j < v.size(); ++j)
                        v[j] += cfg.dps_weight * g[j];
                    return v;
                },
                eps, cfg.dps_steps);
            dps_x1[i] = x[0];
            dps_dev_v[i] = x[0] - x[1];
        });
        rep.dps_nfe = static_cast<long long>(cfg.eval_samples) * cfg.dps_steps;
        long long viol = 0;
        for (double v : dps_dev_v)
            if (std::fabs(v) > 5e-3) ++viol;
        rep.dps_violation_frac = static_cast<double>(viol) / cfg.eval_samples;

        rep.stage = "eci";
        // correction: project the posterior mean onto the line x0 = x1
        CorrectionOp project = [](std::span<const double> xhat) {
            const double m = 0.5 * (xhat[0] + xhat[1]);
            return std::vector<double>{m, m};
        };
        const RngSource ecroot = RngSource(eval_rng.next_u64());
        NfeCounter eci_nfe;
        std::vector<double> eci_x1(cfg.eval_samples), eci_dev_v(cfg.eval_samples);
        exec::par_for(static_cast<std::size_t>(cfg.eval_samples), [&](std::size_t i) {
            RngSource r = ecroot.child(i);
            std::vector<double> eps = r.normal_vec(2);
            const std::vector<double> x = eci_sample(teacher, eps, cfg.eci_steps, project, &eci_nfe);
            eci_x1[i] = x[0];
            eci_dev_v[i] = x[0] - x[1];
        });
        rep.eci_nfe = eci_nfe.count();
        for (double v : eci_dev_v) rep.eci_max_abs_dev = std::max(rep.eci_max_abs_dev, std::fabs(v));

        rep.stage = "report";
        auto x1_cdf = [&](double v) { return mog_marginal_cdf(spec, 0, v); };
        rep.ks_piddm_x1 = ks_statistic(piddm_x1, x1_cdf);
        rep.ks_eci_x1 = ks_statistic(eci_x1, x1_cdf);
        rep.ks_dps_x1 = ks_statistic(dps_x1, x1_cdf);

        const RngSource rroot = RngSource(eval_rng.next_u64());
        std::vector<double> target_x1(cfg.eval_samples);
        exec::par_for(static_cast<std::size_t>(cfg.eval_samples), [&](std::size_t i) {
            RngSource r = rroot.child(i);
            target_x1[i] = mog_sample(spec, r)[0];
        });
        rep.piddm_x1 = make_histogram(piddm_x1, -2.0, 2.0, cfg.hist_bins);
        rep.eci_x1 = make_histogram(eci_x1, -2.0, 2.0, cfg.hist_bins);
        rep.dps_x1 = make_histogram(dps_x1, -2.0, 2.0, cfg.hist_bins);
        rep.target_x1 = make_histogram(target_x1, -2.0, 2.0, cfg.hist_bins);
        rep.piddm_dev = make_histogram(piddm_dev_v, -0.02, 0.02, cfg.hist_bins);
        rep.eci_dev = make_histogram(eci_dev_v, -0.02, 0.02, cfg.hist_bins);
        rep.dps_dev = make_histogram(dps_dev_v, -0.02, 0.02, cfg.hist_bins);
        rep.aborted = false;
    } catch (const std::exception&) {
        return rep;  // partial report with the failing stage recorded
    }
    return rep;
}

void write_correlated_report(const std::filesystem::path& dir,
                             const CorrelatedMogReport& report) {
    std::filesystem::create_directories(dir);
    std::ofstream os(dir / "correlated_mog_summary.csv");
    if (!os) throw std::runtime_error("cannot write correlated_mog_summary.csv");
    os.precision(17);
    os << "metric,value\n";
    os << "piddm_dev_std," << report.piddm_dev_std << '\n';
    os << "dps_violation_frac," << report.dps_violation_frac << '\n';
    os << "eci_max_abs_dev," << report.eci_max_abs_dev << '\n';
    os << "ks_piddm_x1," << report.ks_piddm_x1 << '\n';
    os << "ks_eci_x1," << report.ks_eci_x1 << '\n';
    os << "ks_dps_x1," << report.ks_dps_x1 << '\n';
    os << "piddm_nfe," << report.piddm_nfe << '\n';
    os << "dps_nfe," << report.dps_nfe << '\n';
    os << "eci_nfe," << report.eci_nfe << '\n';
    os << "aborted," << (report.aborted ? 1 : 0) << '\n';
    write_histogram_csv(dir / "piddm_x1.csv", report.piddm_x1, "x1");
    write_histogram_csv(dir / "eci_x1.csv", report.eci_x1, "x1");
    write_histogram_csv(dir / "dps_x1.csv", report.dps_x1, "x1");
    write_histogram_csv(dir / "target_x1.csv", report.target_x1, "x1");
    write_histogram_csv(dir / "piddm_dev.csv", report.piddm_dev, "deviation");
    write_histogram_csv(dir / "eci_dev.csv", report.eci_dev, "deviation");
    write_histogram_csv(dir / "dps_dev.csv", report.dps_dev, "deviation");
}

}  // namespace piddm
