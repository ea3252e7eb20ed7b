#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "piddm/metrics.hpp"
#include "piddm/mog.hpp"

using namespace piddm;

namespace {

const DiffusionSchedule kLinear{ScheduleKind::linear};

// conditional diffused density of component k (for the continuity oracle)
double comp_density(const MoGSpec& spec, const DiffusionSchedule& s, int k,
                    std::span<const double> x, double t) {
    MoGSpec single;
    single.components = {spec.components[k]};
    single.weights = {1.0};
    return std::exp(mog_log_density(single, s, x, t));
}

std::vector<double> comp_velocity(const MoGSpec& spec, const DiffusionSchedule& s, int k,
                                  std::span<const double> x, double t) {
    return gt_conditional_velocity(spec, s, k, x, t);
}

}  // namespace

TEST_CASE("single-component score has the Gaussian closed form") {
    MoGSpec spec;
    spec.components = {{{0.4, -0.2}, {0.09, 0.0, 0.0, 0.04}}};
    spec.weights = {1.0};
    for (const double t : {0.0, 0.3, 0.7}) {
        const double a = kLinear.alpha(t), s = kLinear.sigma(t);
        const std::vector<double> x = {0.9, 0.1};
        const auto got = mog_score(spec, kLinear, x, t);
        const double v1 = 0.09 * a * a + s * s, v2 = 0.04 * a * a + s * s;
        CHECK(got[0] == doctest::Approx(-(x[0] - a * 0.4) / v1).epsilon(1e-12));
        CHECK(got[1] == doctest::Approx(-(x[1] - a * (-0.2)) / v2).epsilon(1e-12));
    }
}

TEST_CASE("symmetric mixture has zero first-coordinate score at the symmetry point") {
    const MoGSpec spec = make_line_mog();
    const std::vector<double> origin = {0.0, 0.0};
    const auto sc = mog_score(spec, kLinear, origin, 0.5);
    CHECK(std::fabs(sc[0]) < 1e-12);
    CHECK(std::fabs(sc[1]) < 1e-12);
}

TEST_CASE("score matches finite differences of the log density") {
    RngSource rng(21);
    for (const MoGSpec& spec : {make_line_mog(), make_correlated_mog()}) {
        for (const double t : {0.05, 0.3, 0.6, 0.9}) {
            for (int trial = 0; trial < 4; ++trial) {
                std::vector<double> x = {rng.uniform(-1.6, 1.6), rng.uniform(-1.6, 1.6)};
                const auto got = mog_score(spec, kLinear, x, t);
                const auto want = oracles::fd_gradient(
                    [&](std::span<const double> p) {
                        return mog_log_density(spec, kLinear, p, t);
                    },
                    x, 1e-6);
                CHECK(oracles::max_rel_error(got, want, 1e-3) < 1e-5);
            }
        }
    }
}

TEST_CASE("score never returns NaN, even far in the tails") {
    const MoGSpec spec = make_line_mog();
    for (const double t : {0.01, 0.5, 0.99}) {
        const std::vector<double> far = {120.0, -300.0};
        for (double v : mog_score(spec, kLinear, far, t)) CHECK(std::isfinite(v));
        CHECK(std::isfinite(mog_log_density(spec, kLinear, far, t)));
    }
}

TEST_CASE("score is translation equivariant") {
    // shifting the means by c shifts the diffused density by alpha_t c, so
    // the score is unchanged at the correspondingly shifted point
    MoGSpec spec = make_correlated_mog();
    const std::vector<double> shift = {0.7, -0.3};
    MoGSpec shifted = spec;
    for (auto& c : shifted.components)
        for (int i = 0; i < 2; ++i) c.mean[i] += shift[i];
    RngSource rng(22);
    for (const double t : {0.0, 0.4, 0.8}) {
        const double a_t = kLinear.alpha(t);
        for (int trial = 0; trial < 5; ++trial) {
            std::vector<double> x = {rng.normal(), rng.normal()};
            std::vector<double> xs = {x[0] + a_t * shift[0], x[1] + a_t * shift[1]};
            const auto a = mog_score(spec, kLinear, x, t);
            const auto b = mog_score(shifted, kLinear, xs, t);
            double scale = 1.0;
            for (double v : a) scale = std::max(scale, std::fabs(v));
            CHECK(oracles::max_abs_diff(a, b) < 1e-12 * scale);
        }
    }
}

TEST_CASE("posterior mean agrees with the velocity-route Tweedie conversion") {
    // score -> velocity -> posterior mean must equal the direct form
    for (const ScheduleKind kind : {ScheduleKind::linear, ScheduleKind::vp}) {
        const DiffusionSchedule sched{kind};
        const MoGSpec spec = make_line_mog();
        RngSource rng(23);
        for (const double t : {0.1, 0.3, 0.5, 0.7, 0.9}) {
            for (int trial = 0; trial < 3; ++trial) {
                std::vector<double> x = {rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)};
                const auto direct = mog_posterior_mean(spec, sched, x, t);
                const auto v = mog_marginal_velocity(spec, sched, x, t);
                const double den = sched.tweedie_denominator(t);
                const double s = sched.sigma(t), ds = sched.dsigma(t);
                for (int i = 0; i < 2; ++i) {
                    const double via_v = (ds * x[i] - s * v[i]) / den;
                    CHECK(std::fabs(via_v - direct[i]) < 1e-8);
                }
            }
        }
    }
}

TEST_CASE("marginal velocity is the responsibility-weighted conditional velocity") {
    const MoGSpec spec = make_line_mog();
    RngSource rng(24);
    for (const double t : {0.2, 0.5, 0.8}) {
        for (int trial = 0; trial < 4; ++trial) {
            std::vector<double> x = {rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)};
            const auto vm = mog_marginal_velocity(spec, kLinear, x, t);

            // responsibilities from the diffused component densities
            const double a = kLinear.alpha(t);
            double w0 = 0.5 * comp_density(spec, kLinear, 0, x, t);
            double w1 = 0.5 * comp_density(spec, kLinear, 1, x, t);
            const double z = w0 + w1;
            w0 /= z, w1 /= z;
            (void)a;
            const auto v0 = comp_velocity(spec, kLinear, 0, x, t);
            const auto v1 = comp_velocity(spec, kLinear, 1, x, t);
            for (int i = 0; i < 2; ++i)
                CHECK(std::fabs(vm[i] - (w0 * v0[i] + w1 * v1[i])) < 1e-8);
        }
    }
}

TEST_CASE("two identical components give conditional = marginal velocity") {
    MoGSpec spec;
    spec.components = {{{0.3, 0.3}, {0.05, 0.0, 0.0, 0.05}},
                       {{0.3, 0.3}, {0.05, 0.0, 0.0, 0.05}}};
    spec.weights = {0.5, 0.5};
    const std::vector<double> x = {0.8, -0.4};
    const auto vm = mog_marginal_velocity(spec, kLinear, x, 0.4);
    const auto vc = gt_conditional_velocity(spec, kLinear, 0, x, 0.4);
    CHECK(oracles::max_abs_diff(vm, vc) < 1e-12);
}

TEST_CASE("conditional velocity satisfies the continuity equation") {
    // d/dt p + div(p v) = 0 for the single-component diffused density
    const MoGSpec spec = make_line_mog(0.04, 1e-4);  // wider x2 keeps FD well conditioned
    RngSource rng(25);
    for (const double t : {0.3, 0.6}) {
        for (int trial = 0; trial < 3; ++trial) {
            const int k = trial % 2;
            const double a = kLinear.alpha(t), s = kLinear.sigma(t);
            // sample near the component so densities are well scaled
            std::vector<double> x = {a * spec.components[k].mean[0] + s * rng.normal(),
                                     a * spec.components[k].mean[1] + s * rng.normal()};
            const double dt_h = 1e-5, dx_h = 1e-5;
            const double dpdt = (comp_density(spec, kLinear, k, x, t + dt_h) -
                                 comp_density(spec, kLinear, k, x, t - dt_h)) /
                                (2 * dt_h);
            double div = 0.0;
            for (int i = 0; i < 2; ++i) {
                std::vector<double> xp = x, xm = x;
                xp[i] += dx_h, xm[i] -= dx_h;
                const double fp =
                    comp_density(spec, kLinear, k, xp, t) * comp_velocity(spec, kLinear, k, xp, t)[i];
                const double fm =
                    comp_density(spec, kLinear, k, xm, t) * comp_velocity(spec, kLinear, k, xm, t)[i];
                div += (fp - fm) / (2 * dx_h);
            }
            const double scale = std::max(std::fabs(dpdt), 1e-4);
            CHECK(std::fabs(dpdt + div) / scale < 1e-3);
        }
    }
}

TEST_CASE("conditional integration drives the constrained coordinate onto its line") {
    // the constrained component has std 1e-3, so individual landings
    // scatter at that scale; the median must sit inside it
    const MoGSpec spec = make_line_mog();
    RngSource rng(26);
    std::vector<double> devs;
    for (const int k : {0, 1}) {
        const double line = spec.components[k].mean[1];
        for (int trial = 0; trial < 10; ++trial) {
            std::vector<double> x = rng.normal_vec(2);
            const double dt = 1.0 / 1000;
            for (int step = 1000; step >= 1; --step) {
                const double t = static_cast<double>(step) / 1000;
                const auto v = gt_conditional_velocity(spec, kLinear, k, x, t);
                for (int i = 0; i < 2; ++i) x[i] -= dt * v[i];
            }
            devs.push_back(std::fabs(x[1] - line));
        }
    }
    std::sort(devs.begin(), devs.end());
    CHECK(devs[devs.size() / 2] < 1e-3);
    CHECK(devs.back() < 5e-3);
}

TEST_CASE("posterior-mean vjp and velocity vjp match finite differences") {
    const MoGSpec spec = make_correlated_mog();
    const AnalyticMogModel model(spec, kLinear);
    RngSource rng(27);
    for (const double t : {0.2, 0.45, 0.55, 0.8}) {  // both velocity branches
        std::vector<double> x = {rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)};
        const std::vector<double> u = rng.normal_vec(2);

        const auto got_pm = mog_posterior_mean_vjp(spec, kLinear, x, t, u);
        const auto want_pm = oracles::fd_gradient(
            [&](std::span<const double> p) {
                const auto pm = mog_posterior_mean(spec, kLinear, p, t);
                return pm[0] * u[0] + pm[1] * u[1];
            },
            x, 1e-6);
        CHECK(oracles::max_rel_error(got_pm, want_pm, 1e-4) < 1e-5);

        const auto got_v = model.velocity_vjp(x, t, u);
        const auto want_v = oracles::fd_gradient(
            [&](std::span<const double> p) {
                const auto v = model.velocity(p, t);
                return v[0] * u[0] + v[1] * u[1];
            },
            x, 1e-6);
        CHECK(oracles::max_rel_error(got_v, want_v, 1e-4) < 1e-5);
    }
}

TEST_CASE("euler sampling from the analytic score recovers the mixture") {
    const MoGSpec spec = make_line_mog();
    const AnalyticMogModel model(spec, kLinear);
    RngSource rng(28);
    const int n = 10000;
    int hi = 0;
    double mean_x1_hi = 0.0, mean_x1_lo = 0.0, mean_x2_hi = 0.0, mean_x2_lo = 0.0;
    for (int i = 0; i < n; ++i) {
        const auto res = euler_sample(model, rng.normal_vec(2), 400);
        if (res.x0[1] > 0.0) {
            ++hi;
            mean_x1_hi += res.x0[0];
            mean_x2_hi += res.x0[1];
        } else {
            mean_x1_lo += res.x0[0];
            mean_x2_lo += res.x0[1];
        }
    }
    const int lo = n - hi;
    CHECK(std::fabs(static_cast<double>(hi) / n - 0.5) < 0.03);  // weights
    CHECK(std::fabs(mean_x1_hi / hi - 1.0) < 0.05);
    CHECK(std::fabs(mean_x2_hi / hi - 1.0) < 0.05);
    CHECK(std::fabs(mean_x1_lo / lo + 1.0) < 0.05);
    CHECK(std::fabs(mean_x2_lo / lo + 1.0) < 0.05);
}

TEST_CASE("mog spec validation") {
    MoGSpec bad;
    bad.components = {{{0.0}, {1.0}}, {{1.0}, {1.0}}};
    bad.weights = {0.6, 0.5};
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad.weights = {0.5, 0.5};
    bad.components[0].cov = {-1.0};
    CHECK_THROWS_AS(mog_score(bad, kLinear, std::vector<double>{0.0}, 0.5),
                    std::invalid_argument);
}

TEST_CASE("marginal cdf integrates the clean mixture") {
    const MoGSpec spec = make_line_mog();
    CHECK(mog_marginal_cdf(spec, 0, -10.0) == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(mog_marginal_cdf(spec, 0, 0.0) == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(mog_marginal_cdf(spec, 0, 10.0) == doctest::Approx(1.0).epsilon(1e-9));
    // sample-based agreement
    RngSource rng(29);
    std::vector<double> xs;
    for (int i = 0; i < 20000; ++i) xs.push_back(mog_sample(spec, rng)[0]);
    CHECK(ks_statistic(xs, [&](double v) { return mog_marginal_cdf(spec, 0, v); }) < 0.015);
}
