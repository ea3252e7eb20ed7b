#include "piddm/inference.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace piddm {

std::string to_string(Task t) {
    switch (t) {
        case Task::simulate: return "simulate";
        case Task::forward_solve: return "forward";
        case Task::inverse: return "inverse";
        case Task::reconstruct: return "reconstruct";
    }
    return "?";
}

Task task_from_string(const std::string& s) {
    if (s == "simulate") return Task::simulate;
    if (s == "forward") return Task::forward_solve;
    if (s == "inverse") return Task::inverse;
    if (s == "reconstruct") return Task::reconstruct;
    throw std::invalid_argument("unknown task: " + s);
}

void TaskSpec::validate(std::size_t width) const {
    if (observation.size() != width || mask.size() != width)
        throw std::invalid_argument("TaskSpec: observation/mask width mismatch");
    mask.validate();
    if (lambda_infer < 0.0) throw std::invalid_argument("TaskSpec: lambda must be >= 0");
    if (n_iters < 0) throw std::invalid_argument("TaskSpec: n_iters must be >= 0");
    if (restarts < 1) throw std::invalid_argument("TaskSpec: restarts must be >= 1");
}

ObservationMask make_task_mask(Task task, const ResidualOperator& op, RngSource& rng,
                               double observe_rate) {
    const std::size_t width = op.flat_size();
    const std::size_t nu = op.grid.points();
    switch (task) {
        case Task::simulate: return ObservationMask::zeros(width);
        case Task::forward_solve: {
            ObservationMask m = boundary_mask(op);
            for (std::size_t i = nu; i < width; ++i) m.entries[i] = 1.0;
            return m;
        }
        case Task::inverse: {
            ObservationMask m = ObservationMask::zeros(width);
            for (std::size_t i = 0; i < nu; ++i) m.entries[i] = 1.0;
            return m;
        }
        case Task::reconstruct: {
            ObservationMask m = ObservationMask::zeros(width);
            for (std::size_t i = 0; i < width; ++i)
                if (rng.uniform() < observe_rate) m.entries[i] = 1.0;
            return m;
        }
    }
    throw std::logic_error("make_task_mask: bad task");
}

RefineResult refine_noise(const StudentModel& student, std::span<const double> eps,
                          const ConstraintOp& constraint, int n_f, double eta_ref,
                          NfeCounter* nfe) {
    if (n_f < 0) throw std::invalid_argument("refine_noise: n_f must be >= 0");
    RefineResult res;
    res.eps.assign(eps.begin(), eps.end());
    for (int i = 0; i < n_f; ++i) {
        Tape tape;
        const std::vector<double> pred = forward(student.net, res.eps, &tape);
        ++res.nfe;
        const std::vector<double> gc = constraint.grad(pred);
        const std::vector<double> ge = grad_input(tape, gc);
        bool finite = true;
        for (double g : ge) finite = finite && std::isfinite(g);
        if (!finite) {
            res.aborted = true;
            break;
        }
        for (std::size_t j = 0; j < res.eps.size(); ++j) res.eps[j] -= eta_ref * ge[j];
    }
    res.sample = forward(student.net, res.eps);
    ++res.nfe;
    if (nfe) nfe->add(res.nfe);
    return res;
}

RefineResult refine_noise(const StudentModel& student, std::span<const double> eps,
                          const ResidualOperator& residual_op, int n_f, double eta_ref,
                          NfeCounter* nfe) {
    return refine_noise(student, eps, residual_constraint(residual_op), n_f, eta_ref, nfe);
}

namespace {

struct SolveObjective {
    const StudentModel& student;
    const TaskSpec& spec;
    const ConstraintOp& constraint;
    long long evals = 0;

    // L(eps) = |(d(eps) - x') o M|^2 + lambda |R(x_mix)|^2, gradient w.r.t.
    // eps; gradients flow only through the unobserved entries of x_mix.
    double operator()(std::span<const double> eps, std::span<double> grad_out) {
        ++evals;
        Tape tape;
        const std::vector<double> pred = forward(student.net, eps, &tape);
        const std::size_t n = pred.size();
        const std::vector<double>& m = spec.mask.entries;
        std::vector<double> x_mix(n);
        for (std::size_t i = 0; i < n; ++i)
            x_mix[i] = m[i] == 1.0 ? spec.observation[i] : pred[i];

        double loss = 0.0;
        std::vector<double> upstream(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const double d = (pred[i] - spec.observation[i]) * m[i];
            loss += d * d;
            upstream[i] = 2.0 * d;
        }
        if (spec.lambda_infer > 0.0 && constraint) {
            loss += spec.lambda_infer * constraint.value(x_mix);
            const std::vector<double> gc = constraint.grad(x_mix);
            for (std::size_t i = 0; i < n; ++i)
                if (m[i] == 0.0) upstream[i] += spec.lambda_infer * gc[i];
        }
        const std::vector<double> ge = grad_input(tape, upstream);
        for (std::size_t i = 0; i < ge.size(); ++i) grad_out[i] = ge[i];
        return loss;
    }
};

}  // namespace

SolveResult solve_conditional(const StudentModel& student, const TaskSpec& spec,
                              const ConstraintOp& constraint, RngSource& rng, NfeCounter* nfe) {
    const std::size_t width = static_cast<std::size_t>(student.dim());
    spec.validate(width);
    const double eta = spec.step_size > 0.0 ? spec.step_size : 1e-3 * std::max(1.0, spec.lambda_infer);

    SolveResult best;
    best.objective = std::numeric_limits<double>::infinity();
    long long total_evals = 0;

    for (int r = 0; r < spec.restarts; ++r) {
        RngSource er = rng.child(static_cast<std::uint64_t>(r));
        std::vector<double> eps = er.normal_vec(width);
        SolveObjective obj{student, spec, constraint};

        if (spec.optimizer == InferOptimizer::lbfgs) {
            LbfgsState st;
            st.initial_step = eta;
            LbfgsResult lr = lbfgs_minimize(
                st,
                [&](std::span<const double> x, std::span<double> g) { return obj(x, g); }, eps,
                spec.n_iters);
            eps = std::move(lr.x);
        } else {
            std::vector<double> grad(width);
            for (int i = 0; i < spec.n_iters; ++i) {
                obj(eps, grad);
                bool finite = true;
                for (double g : grad) finite = finite && std::isfinite(g);
                if (!finite) break;
                for (std::size_t j = 0; j < width; ++j) eps[j] -= eta * grad[j];
            }
        }

        // final evaluation at the optimized noise
        const std::vector<double> pred = forward(student.net, eps);
        ++obj.evals;
        std::vector<double> output = apply_mask(pred, spec.observation, spec.mask);
        double loss = 0.0;
        for (std::size_t i = 0; i < width; ++i) {
            const double d = (pred[i] - spec.observation[i]) * spec.mask.entries[i];
            loss += d * d;
        }
        if (spec.lambda_infer > 0.0 && constraint)
            loss += spec.lambda_infer * constraint.value(output);
        total_evals += obj.evals;
        if (loss < best.objective) {
            best.objective = loss;
            best.output = std::move(output);
            best.eps = std::move(eps);
            best.restarts_used = r + 1;
        }
    }
    best.nfe = total_evals;
    if (nfe) nfe->add(total_evals);
    return best;
}

SolveResult solve_conditional(const StudentModel& student, const TaskSpec& spec,
                              const ResidualOperator& residual_op, RngSource& rng,
                              NfeCounter* nfe) {
    return solve_conditional(student, spec, residual_constraint(residual_op), rng, nfe);
}

}  // namespace piddm
