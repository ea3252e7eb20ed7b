// Serial vs OpenMP timing for the batch kernels. Each kernel runs through
// the same chunk decomposition in both modes, so outputs are bit-identical
// and only wall time differs.

#include <chrono>
#include <cstdio>
#include <vector>

#include "piddm/baselines.hpp"
#include "piddm/distill.hpp"
#include "piddm/exec.hpp"
#include "piddm/jensen.hpp"
#include "piddm/metrics.hpp"

using namespace piddm;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
    fn();  // warm up
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) fn();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void report(const char* name, const std::function<void()>& fn, int reps) {
    exec::set_mode(exec::Mode::serial);
    const double serial = time_ms(fn, reps);
    exec::set_mode(exec::Mode::openmp);
    const double openmp = time_ms(fn, reps);
    std::printf("%-28s %10.2f ms %10.2f ms %8.2fx\n", name, serial, openmp, serial / openmp);
}

}  // namespace

int main() {
    std::printf("%-28s %13s %13s %9s\n", "kernel", "serial", "openmp", "speedup");

    RngSource rng(1);
    const ResidualOperator op =
        make_residual_operator(ResidualKind::stokes, GridSpec{32, 32, 1.0, 1.0});
    const ConstraintOp constraint = residual_constraint(op);
    const int dim = static_cast<int>(op.flat_size());

    Ensemble ens;
    for (int i = 0; i < 256; ++i) ens.push_back(rng.normal_vec(dim));
    report("batch residual_norm", [&] { ensemble_pde_error(constraint, ens); }, 5);

    TeacherModel model(make_net(dim, {96, 96}, dim, Activation::relu, 32, rng),
                       DiffusionSchedule{ScheduleKind::linear});
    std::vector<std::vector<double>> batch(ens.begin(), ens.begin() + 64);
    report("fm_loss batch 64", [&] {
        RngSource r(2);
        fm_loss(model, batch, r);
    }, 5);

    report("pidm_loss batch 32", [&] {
        RngSource r(3);
        std::vector<std::vector<double>> b(batch.begin(), batch.begin() + 32);
        pidm_loss(model, b, op, 10.0, r);
    }, 5);

    report("generate_pairs 64x50", [&] {
        RngSource r(4);
        generate_pairs(model, 64, 50, r);
    }, 3);

    StudentModel student = make_student(dim, {96, 96}, Activation::relu, rng);
    report("distill_loss batch 64", [&] { distill_loss(student, batch, batch, op, 10.0); }, 5);

    const MoGSpec spec = make_line_mog();
    const DiffusionSchedule sched{ScheduleKind::linear};
    GapConfig gcfg;
    gcfg.t_grid = {0.25, 0.5, 0.75};
    gcfg.n_points = 2000;
    gcfg.n_hist_samples = 500;
    gcfg.n_euler_steps = 100;
    report("gap_metrics MC", [&] {
        RngSource r(5);
        gap_metrics(spec, sched, gcfg, r);
    }, 3);

    return 0;
}
