#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "piddm/diffusion.hpp"
#include "test_models.hpp"

using namespace piddm;
using testing_models::FnModel;

TEST_CASE("schedule endpoints and interpolation") {
    RngSource rng(1);
    const std::vector<double> x0 = rng.normal_vec(6);
    const std::vector<double> eps = rng.normal_vec(6);
    for (const ScheduleKind kind : {ScheduleKind::linear, ScheduleKind::vp, ScheduleKind::subvp}) {
        CAPTURE(to_string(kind));
        const DiffusionSchedule s{kind};
        CHECK(s.alpha(0.0) == 1.0);
        CHECK(s.sigma(0.0) == 0.0);
        CHECK(s.sigma(1.0) > 0.99);
        CHECK(s.alpha(1.0) < 0.01);
        CHECK(interpolate(s, x0, eps, 0.0) == x0);  // bit-exact data endpoint
        for (const double t : {0.15, 0.5, 0.85}) {
            CHECK(std::isfinite(s.dalpha(t)));
            CHECK(std::isfinite(s.dsigma(t)));
        }
    }
    const DiffusionSchedule lin{ScheduleKind::linear};
    CHECK(interpolate(lin, x0, eps, 1.0) == eps);
    CHECK(interpolate(lin, std::vector<double>{0.0}, std::vector<double>{2.0}, 0.5) ==
          std::vector<double>{1.0});
    CHECK_THROWS_AS(interpolate(lin, x0, eps, 1.5), std::invalid_argument);
    CHECK_THROWS_AS(interpolate(lin, x0, std::vector<double>{1.0}, 0.5),
                    std::invalid_argument);
}

TEST_CASE("schedule derivatives match finite differences of alpha/sigma") {
    for (const ScheduleKind kind : {ScheduleKind::linear, ScheduleKind::vp, ScheduleKind::subvp}) {
        CAPTURE(to_string(kind));
        const DiffusionSchedule s{kind};
        for (const double t : {0.1, 0.3, 0.5, 0.7, 0.9}) {
            const double h = 1e-6;
            CHECK(s.dalpha(t) ==
                  doctest::Approx((s.alpha(t + h) - s.alpha(t - h)) / (2 * h)).epsilon(1e-6));
            CHECK(s.dsigma(t) ==
                  doctest::Approx((s.sigma(t + h) - s.sigma(t - h)) / (2 * h)).epsilon(1e-6));
        }
    }
}

TEST_CASE("fm_loss: zero model on a zero dataset estimates the dimension") {
    const int dim = 8;
    ParamNet net;
    net.layer_sizes = {dim + 4, 8, dim};
    net.time_embed_dim = 4;
    net.params.assign(ParamNet::param_count(net.layer_sizes), 0.0);
    TeacherModel model(net, DiffusionSchedule{ScheduleKind::linear});

    RngSource rng(77);
    const std::vector<std::vector<double>> batch(10000, std::vector<double>(dim, 0.0));
    const LossGrad lg = fm_loss(model, batch, rng);
    // target is eps - x0 = eps, so the loss approximates E|eps|^2 = dim
    CHECK(std::fabs(lg.loss - dim) < 0.05 * dim);
}

TEST_CASE("fm_loss matches an independent replay of its sampling stream") {
    RngSource rng(3);
    const int dim = 5;
    TeacherModel model(make_net(dim, {7}, dim, Activation::gelu, 4, rng),
                       DiffusionSchedule{ScheduleKind::linear});
    std::vector<std::vector<double>> batch;
    for (int b = 0; b < 4; ++b) batch.push_back(rng.normal_vec(dim));

    RngSource loss_rng(91), replay_rng(91);
    const LossGrad lg = fm_loss(model, batch, loss_rng);

    const std::uint64_t call_seed = replay_rng.next_u64();
    double want = 0.0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        RngSource r = RngSource(call_seed).child(b);
        const std::vector<double> eps = r.normal_vec(dim);
        double t = r.uniform();
        if (t < 1e-6) t = 1e-6;
        std::vector<double> xt(dim);
        for (int i = 0; i < dim; ++i) xt[i] = (1.0 - t) * batch[b][i] + t * eps[i];
        const auto v = forward(model.net, xt, t);
        for (int i = 0; i < dim; ++i) {
            const double d = v[i] - (eps[i] - batch[b][i]);
            want += d * d;
        }
    }
    want /= batch.size();
    CHECK(lg.loss == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("fm_loss gradient matches central finite differences") {
    RngSource rng(4);
    const int dim = 4;
    TeacherModel model(make_net(dim, {6}, dim, Activation::gelu, 4, rng),
                       DiffusionSchedule{ScheduleKind::linear});
    std::vector<std::vector<double>> batch;
    for (int b = 0; b < 3; ++b) batch.push_back(rng.normal_vec(dim));

    RngSource g_rng(5);
    const LossGrad lg = fm_loss(model, batch, g_rng);

    TeacherModel probe = model;
    const auto want = oracles::fd_gradient(
        [&](std::span<const double> p) {
            probe.net.params.assign(p.begin(), p.end());
            RngSource r(5);  // same stream every evaluation
            return fm_loss(probe, batch, r).loss;
        },
        model.net.params, 1e-5);
    CHECK(oracles::max_rel_error(lg.grad, want, 1e-3) < 1e-4);
    CHECK_THROWS_AS(fm_loss(model, {}, g_rng), std::invalid_argument);
}

TEST_CASE("train_teacher leaves the model unchanged after zero iterations") {
    RngSource rng(6);
    TeacherModel model(make_net(3, {5}, 3, Activation::relu, 4, rng),
                       DiffusionSchedule{ScheduleKind::linear});
    const std::vector<double> before = model.net.params;
    RngSource t_rng(7);
    const TeacherModel after =
        train_teacher(std::move(model), {{1.0, 2.0, 3.0}}, {0, 4, 1e-3}, t_rng);
    CHECK(after.net.params == before);
}

TEST_CASE("train_teacher fits a 1-D point mass") {
    RngSource rng(8);
    TeacherModel model(make_net(1, {32, 32}, 1, Activation::relu, 16, rng),
                       DiffusionSchedule{ScheduleKind::linear});
    const double c = 0.8;
    const std::vector<std::vector<double>> data(64, std::vector<double>{c});
    RngSource t_rng(9);
    std::vector<double> trace;
    model = train_teacher(std::move(model), data, {4000, 64, 4e-3}, t_rng, &trace);
    for (double v : trace) CHECK(std::isfinite(v));

    RngSource s_rng(10);
    double worst = 0.0;
    for (int i = 0; i < 16; ++i) {
        const auto res = euler_sample(model, s_rng.normal_vec(1), 200);
        worst = std::max(worst, std::fabs(res.x0[0] - c));
    }
    CHECK(worst < 0.05);
}

TEST_CASE("training diverges loudly") {
    RngSource rng(11);
    TeacherModel model(make_net(2, {8}, 2, Activation::relu, 4, rng),
                       DiffusionSchedule{ScheduleKind::linear});
    RngSource t_rng(12);
    CHECK_THROWS_AS(train_teacher(std::move(model), {{1.0, 1.0}}, {400, 8, 1e120}, t_rng),
                    std::runtime_error);
}

TEST_CASE("euler_sample with a zero field returns the noise and counts NFE") {
    FnModel m;
    m.sched = DiffusionSchedule{ScheduleKind::linear};
    m.dims = 3;
    m.fn = [](std::span<const double> x, double) { return std::vector<double>(x.size(), 0.0); };
    RngSource rng(13);
    const std::vector<double> eps = rng.normal_vec(3);
    NfeCounter nfe;
    const SampleResult res = euler_sample(m, eps, 100, &nfe, true);
    CHECK(res.x0 == eps);
    CHECK(nfe.count() == 100);
    CHECK(res.trajectory.size() == 101);
    CHECK_THROWS_AS(euler_sample(m, eps, 0, &nfe), std::invalid_argument);
}

TEST_CASE("euler_sample discretization error halves with the step count") {
    // v(x, t) = -x integrates to eps * (1 + dt)^n -> e * eps; the deviation
    // from the continuum limit is O(dt)
    FnModel m;
    m.sched = DiffusionSchedule{ScheduleKind::linear};
    m.dims = 1;
    m.fn = [](std::span<const double> x, double) { return std::vector<double>{-x[0]}; };
    const std::vector<double> eps = {1.0};
    const double exact = std::exp(1.0);
    auto dev = [&](int n) {
        return std::fabs(euler_sample(m, eps, n).x0[0] - exact);
    };
    const double r1 = dev(50) / dev(100);
    const double r2 = dev(100) / dev(200);
    CHECK(r1 >= 1.5);
    CHECK(r1 <= 2.5);
    CHECK(r2 >= 1.5);
    CHECK(r2 <= 2.5);
}

TEST_CASE("posterior mean inverts the oracle velocity exactly") {
    // with v = eps - x0 at x_t = (1-t) x0 + t eps the linear-schedule
    // posterior mean is exactly x0
    RngSource rng(14);
    const std::vector<double> x0 = rng.normal_vec(4);
    const std::vector<double> eps = rng.normal_vec(4);
    FnModel m;
    m.sched = DiffusionSchedule{ScheduleKind::linear};
    m.dims = 4;
    m.fn = [&](std::span<const double>, double) {
        std::vector<double> v(4);
        for (int i = 0; i < 4; ++i) v[i] = eps[i] - x0[i];
        return v;
    };
    for (const double t : {0.2, 0.5, 0.9}) {
        const auto xt = interpolate(m.sched, x0, eps, t);
        const auto got = posterior_mean(m, xt, t);
        CHECK(oracles::max_abs_diff(got, x0) < 1e-12);
    }
    const std::vector<double> xt = {1.0, 2.0, 3.0, 4.0};
    CHECK(posterior_mean(m, xt, 0.0) == xt);  // the t = 0 limit
    CHECK_THROWS_AS(posterior_mean(m, xt, 1.5), std::invalid_argument);
}

TEST_CASE("checkpoints round trip bit exactly") {
    RngSource rng(15);
    const ParamNet net = make_net(6, {9, 9}, 6, Activation::gelu, 8, rng);
    const auto path = std::filesystem::temp_directory_path() / "piddm_ckpt_test.bin";
    save_checkpoint(path, net, "vp");
    const auto [back, tag] = load_checkpoint(path);
    CHECK(tag == "vp");
    CHECK(back.layer_sizes == net.layer_sizes);
    CHECK(back.act == net.act);
    CHECK(back.time_embed_dim == net.time_embed_dim);
    CHECK(back.params == net.params);
    std::filesystem::remove(path);
}

TEST_CASE("vp and subvp flow-matching targets are schedule consistent") {
    // the conditional velocity d/dt x_t must match FD of the interpolation
    RngSource rng(16);
    const std::vector<double> x0 = rng.normal_vec(3);
    const std::vector<double> eps = rng.normal_vec(3);
    for (const ScheduleKind kind : {ScheduleKind::vp, ScheduleKind::subvp}) {
        const DiffusionSchedule s{kind};
        for (const double t : {0.25, 0.5, 0.75}) {
            const double h = 1e-6;
            const auto xp = interpolate(s, x0, eps, t + h);
            const auto xm = interpolate(s, x0, eps, t - h);
            for (int i = 0; i < 3; ++i) {
                const double want = (xp[i] - xm[i]) / (2 * h);
                const double got = s.dalpha(t) * x0[i] + s.dsigma(t) * eps[i];
                CHECK(got == doctest::Approx(want).epsilon(1e-6));
            }
        }
    }
}
