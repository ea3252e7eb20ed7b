#include <doctest.h>

#include "piddm/baselines.hpp"
#include "piddm/distill.hpp"
#include "piddm/exec.hpp"
#include "piddm/jensen.hpp"
#include "piddm/metrics.hpp"

// The OpenMP kernels must be bit-identical to the serial reference: the
// chunked reductions fix both the decomposition and the combination order.

using namespace piddm;

namespace {

struct ModeGuard {
    exec::Mode saved = exec::mode();
    ~ModeGuard() { exec::set_mode(saved); }
};

template <class F>
auto run_both(F&& f) {
    ModeGuard guard;
    exec::set_mode(exec::Mode::serial);
    auto serial = f();
    exec::set_mode(exec::Mode::openmp);
    auto openmp = f();
    return std::pair(std::move(serial), std::move(openmp));
}

}  // namespace

TEST_CASE("dataset generation is identical across execution modes") {
    const auto [a, b] = run_both([] {
        DatasetSpec spec{DatasetKind::stokes, 24, default_grid(DatasetKind::stokes, 12, 12),
                         311, 0.0, 0.0};
        return generate_dataset(spec);
    });
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].u.values == b[i].u.values);
        CHECK(a[i].coeff == b[i].coeff);
    }
}

TEST_CASE("fm_loss value and gradient are identical across execution modes") {
    const auto [a, b] = run_both([] {
        RngSource rng(312);
        const int dim = 10;
        TeacherModel model(make_net(dim, {14}, dim, Activation::relu, 4, rng),
                           DiffusionSchedule{ScheduleKind::linear});
        std::vector<std::vector<double>> batch;
        for (int i = 0; i < 33; ++i) batch.push_back(rng.normal_vec(dim));
        RngSource lr(313);
        return fm_loss(model, batch, lr);
    });
    CHECK(a.loss == b.loss);
    CHECK(a.grad == b.grad);
}

TEST_CASE("pidm loss is identical across execution modes") {
    const auto [a, b] = run_both([] {
        RngSource rng(314);
        const ResidualOperator op =
            make_residual_operator(ResidualKind::heat, GridSpec{6, 6, 1.0, 1.0});
        const int dim = static_cast<int>(op.flat_size());
        TeacherModel model(make_net(dim, {10}, dim, Activation::relu, 4, rng),
                           DiffusionSchedule{ScheduleKind::linear});
        std::vector<std::vector<double>> batch;
        for (int i = 0; i < 9; ++i) batch.push_back(rng.normal_vec(dim));
        RngSource lr(315);
        return pidm_loss(model, batch, op, 2.0, lr);
    });
    CHECK(a.loss == b.loss);
    CHECK(a.grad == b.grad);
}

TEST_CASE("distill loss is identical across execution modes") {
    const auto [a, b] = run_both([] {
        RngSource rng(316);
        const ResidualOperator op =
            make_residual_operator(ResidualKind::stokes, GridSpec{6, 6, 1.0, 1.0});
        const int dim = static_cast<int>(op.flat_size());
        StudentModel s = make_student(dim, {12}, Activation::relu, rng);
        std::vector<std::vector<double>> eps, x0;
        for (int i = 0; i < 21; ++i) {
            eps.push_back(rng.normal_vec(dim));
            x0.push_back(rng.normal_vec(dim));
        }
        return distill_loss(s, eps, x0, op, 1.5);
    });
    CHECK(a.loss == b.loss);
    CHECK(a.grad == b.grad);
}

TEST_CASE("pair generation is identical across execution modes") {
    RngSource rng(317);
    TeacherModel teacher(make_net(3, {8}, 3, Activation::relu, 4, rng),
                         DiffusionSchedule{ScheduleKind::linear});
    const auto [a, b] = run_both([&] {
        RngSource pr(318);
        return generate_pairs(teacher, 17, 12, pr);
    });
    CHECK(a.eps == b.eps);
    CHECK(a.x0 == b.x0);
}

TEST_CASE("ensemble metrics are identical across execution modes") {
    RngSource rng(319);
    const ResidualOperator op =
        make_residual_operator(ResidualKind::heat, GridSpec{8, 8, 1.0, 1.0});
    Ensemble ens;
    for (int i = 0; i < 37; ++i) ens.push_back(rng.normal_vec(op.flat_size()));
    const ConstraintOp c = residual_constraint(op);
    const auto [a, b] = run_both([&] { return ensemble_pde_error(c, ens); });
    CHECK(a == b);
}

TEST_CASE("gap metrics are identical across execution modes") {
    const MoGSpec spec = make_line_mog();
    const DiffusionSchedule sched{ScheduleKind::linear};
    GapConfig cfg;
    cfg.t_grid = {0.1, 0.5};
    cfg.n_points = 64;
    cfg.n_hist_samples = 32;
    cfg.n_euler_steps = 20;
    const auto [a, b] = run_both([&] {
        RngSource rng(320);
        return gap_metrics(spec, sched, cfg, rng);
    });
    CHECK(a.mae == b.mae);
    CHECK(a.angular == b.angular);
    CHECK(a.ks_unconstrained == b.ks_unconstrained);
    CHECK(a.dps_unconstrained.counts == b.dps_unconstrained.counts);
}
