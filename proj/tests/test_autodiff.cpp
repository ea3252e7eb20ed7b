#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "piddm/autodiff.hpp"
#include "piddm/pde.hpp"
#include "piddm/rng.hpp"

using namespace piddm;

namespace {

// Straightforward re-implementation of the MLP forward pass.
std::vector<double> naive_forward(const ParamNet& net, std::span<const double> input, double t) {
    std::vector<double> act(input.begin(), input.end());
    if (net.time_embed_dim > 0) {
        const auto tf = time_features(t, net.time_embed_dim);
        act.insert(act.end(), tf.begin(), tf.end());
    }
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < net.layer_sizes.size(); ++l) {
        const int fi = net.layer_sizes[l], fo = net.layer_sizes[l + 1];
        std::vector<double> z(fo, 0.0);
        for (int o = 0; o < fo; ++o) {
            for (int i = 0; i < fi; ++i) z[o] += net.params[off + o * fi + i] * act[i];
            z[o] += net.params[off + static_cast<std::size_t>(fo) * fi + o];
        }
        off += static_cast<std::size_t>(fo) * (fi + 1);
        if (l + 2 < net.layer_sizes.size())
            for (double& v : z) v = v > 0.0 ? v : 0.0;
        act = std::move(z);
    }
    return act;
}

}  // namespace

TEST_CASE("zero parameters give zero output") {
    ParamNet net;
    net.layer_sizes = {3, 4, 2};
    net.params.assign(ParamNet::param_count(net.layer_sizes), 0.0);
    const auto out = forward(net, std::vector<double>{1.0, -2.0, 3.0}, 0.5);
    for (double v : out) CHECK(v == 0.0);
}

TEST_CASE("identity-configured linear layer reproduces its input") {
    ParamNet net;
    net.layer_sizes = {3, 3};
    net.params.assign(ParamNet::param_count(net.layer_sizes), 0.0);
    for (int i = 0; i < 3; ++i) net.params[i * 3 + i] = 1.0;
    const std::vector<double> x = {0.5, -1.25, 2.0};
    CHECK(forward(net, x) == x);
}

TEST_CASE("forward matches the naive matrix-multiply oracle to 1e-12") {
    RngSource rng(5);
    const ParamNet net = make_net(7, {11, 9}, 7, Activation::relu, 8, rng);
    const std::vector<double> x = rng.normal_vec(7);
    const auto got = forward(net, x, 0.37);
    const auto want = naive_forward(net, x, 0.37);
    CHECK(oracles::max_abs_diff(got, want) < 1e-12);
}

TEST_CASE("forward rejects width mismatches; student nets take no time input") {
    RngSource rng(6);
    const ParamNet net = make_net(4, {5}, 4, Activation::relu, 6, rng);
    CHECK_THROWS_AS(forward(net, std::vector<double>{1.0, 2.0}, 0.1), std::invalid_argument);
    CHECK_THROWS_AS(forward(net, std::vector<double>(10, 0.0)), std::invalid_argument);
    const ParamNet student = make_net(4, {5}, 4, Activation::relu, 0, rng);
    CHECK(forward(student, std::vector<double>(4, 0.0)).size() == 4);
}

TEST_CASE("linear layer gradients have their closed forms") {
    // y = W x + b, L = sum(y): dL/dW = outer(1, x), dL/db = 1, dL/dx = W^T 1
    RngSource rng(9);
    ParamNet net;
    net.layer_sizes = {3, 2};
    net.params = rng.normal_vec(ParamNet::param_count(net.layer_sizes));
    const std::vector<double> x = {0.5, 1.5, -2.0};
    const std::vector<double> ones = {1.0, 1.0};

    Tape tape;
    forward(net, x, &tape);
    const Gradients g = backward(tape, ones);
    for (int o = 0; o < 2; ++o) {
        for (int i = 0; i < 3; ++i) CHECK(g.params[o * 3 + i] == doctest::Approx(x[i]));
        CHECK(g.params[6 + o] == 1.0);
    }
    for (int i = 0; i < 3; ++i)
        CHECK(g.input[i] == doctest::Approx(net.params[i] + net.params[3 + i]));
}

TEST_CASE("tape is consumed exactly once") {
    RngSource rng(10);
    const ParamNet net = make_net(3, {4}, 2, Activation::relu, 0, rng);
    Tape tape;
    forward(net, std::vector<double>{1.0, 2.0, 3.0}, &tape);
    grad_params(tape, std::vector<double>{1.0, 1.0});
    CHECK_THROWS_AS(grad_params(tape, std::vector<double>{1.0, 1.0}), std::logic_error);
}

TEST_CASE("zero upstream gives zero gradients") {
    RngSource rng(11);
    const ParamNet net = make_net(3, {4, 4}, 2, Activation::gelu, 0, rng);
    Tape tape;
    forward(net, rng.normal_vec(3), &tape);
    const Gradients g = backward(tape, std::vector<double>{0.0, 0.0});
    for (double v : g.params) CHECK(v == 0.0);
    for (double v : g.input) CHECK(v == 0.0);
}

TEST_CASE("parameter and input gradients match central finite differences") {
    RngSource rng(12);
    for (const Activation act : {Activation::relu, Activation::gelu}) {
        CAPTURE(to_string(act));
        const ParamNet net = make_net(5, {8, 8}, 5, act, 4, rng);
        const std::vector<double> x = rng.normal_vec(5);
        const std::vector<double> upstream = rng.normal_vec(5);
        const double t = 0.61;

        Tape tape;
        forward(net, x, t, &tape);
        const Gradients g = backward(tape, upstream);

        auto loss_at = [&](const ParamNet& n, std::span<const double> in) {
            const auto out = forward(n, in, t);
            double s = 0.0;
            for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * upstream[i];
            return s;
        };
        ParamNet probe = net;
        const auto want_p = oracles::fd_gradient(
            [&](std::span<const double> p) {
                probe.params.assign(p.begin(), p.end());
                return loss_at(probe, x);
            },
            net.params, 1e-5);
        CHECK(oracles::max_rel_error(g.params, want_p, 1e-3) < 1e-4);

        const auto want_x = oracles::fd_gradient(
            [&](std::span<const double> in) { return loss_at(net, in); }, x, 1e-5);
        CHECK(oracles::max_rel_error(g.input, want_x, 1e-3) < 1e-4);
    }
}

TEST_CASE("composite gradient through the residual matches finite differences") {
    // grad_eps |R(d(eps))|^2 on an 8x8 heat problem
    RngSource rng(13);
    const ResidualOperator op =
        make_residual_operator(ResidualKind::heat, GridSpec{8, 8, 1.0, 1.0});
    const int dim = static_cast<int>(op.flat_size());
    const ParamNet net = make_net(dim, {16}, dim, Activation::gelu, 0, rng);
    const std::vector<double> eps = rng.normal_vec(dim);

    Tape tape;
    const auto pred = forward(net, eps, &tape);
    const auto upstream = residual_norm_grad_flat(op, pred);
    const auto got = grad_input(tape, upstream);

    const auto want = oracles::fd_gradient(
        [&](std::span<const double> e) { return residual_norm_flat(op, forward(net, e)); },
        eps, 1e-5);
    CHECK(oracles::max_rel_error(got, want, 1e-3) < 1e-4);
}

TEST_CASE("adam first step and edge cases") {
    // scalar hand-check: g = 1, lr = 0.1 -> bias corrections cancel and the
    // update is lr * g / (|g| + eps), i.e. the parameter drops by ~0.1
    AdamState st;
    st.lr = 0.1;
    const auto out = adam_step(st, std::vector<double>{1.0}, std::vector<double>{1.0});
    CHECK(out[0] == doctest::Approx(0.9).epsilon(1e-6));

    AdamState st2;
    st2.lr = 0.1;
    const auto unchanged = adam_step(st2, std::vector<double>{2.5}, std::vector<double>{0.0});
    CHECK(unchanged[0] == 2.5);

    AdamState st3;
    CHECK_THROWS_AS(
        adam_step(st3, std::vector<double>{1.0}, std::vector<double>{std::nan("")}),
        std::invalid_argument);
}

TEST_CASE("adam converges on a separable quadratic") {
    RngSource rng(14);
    std::vector<double> target(6);
    for (double& t : target) t = rng.uniform(-0.5, 0.5);
    std::vector<double> p(6, 0.0);
    AdamState st;
    st.lr = 1e-2;
    for (int i = 0; i < 500; ++i) {
        std::vector<double> g(6);
        for (int j = 0; j < 6; ++j) g[j] = 2.0 * (p[j] - target[j]);
        adam_update(st, p, g);
    }
    double dist = 0.0;
    for (int j = 0; j < 6; ++j) dist += (p[j] - target[j]) * (p[j] - target[j]);
    CHECK(std::sqrt(dist) < 1e-3);
}

TEST_CASE("lbfgs solves a quadratic to 1e-8 within 15 iterations") {
    RngSource rng(15);
    const std::vector<double> target = rng.normal_vec(10);
    std::vector<double> diag(10);
    for (double& d : diag) d = 0.5 + rng.uniform() * 4.0;
    LbfgsState opts;
    opts.grad_tol = 1e-12;
    const LbfgsResult res = lbfgs_minimize(
        opts,
        [&](std::span<const double> x, std::span<double> g) {
            double f = 0.0;
            for (int i = 0; i < 10; ++i) {
                const double d = x[i] - target[i];
                f += diag[i] * d * d;
                g[i] = 2.0 * diag[i] * d;
            }
            return f;
        },
        std::vector<double>(10, 0.0), 15);
    double dist = 0.0;
    for (int i = 0; i < 10; ++i) dist = std::max(dist, std::fabs(res.x[i] - target[i]));
    CHECK(dist < 1e-8);
    CHECK(res.iterations <= 15);
}

TEST_CASE("lbfgs minimizes Rosenbrock from the standard start") {
    const LbfgsState opts;
    const LbfgsResult res = lbfgs_minimize(
        opts,
        [](std::span<const double> x, std::span<double> g) {
            const double a = 1.0 - x[0];
            const double b = x[1] - x[0] * x[0];
            g[0] = -2.0 * a - 400.0 * x[0] * b;
            g[1] = 200.0 * b;
            return a * a + 100.0 * b * b;
        },
        std::vector<double>{-1.2, 1.0}, 80);
    CHECK(std::hypot(res.x[0] - 1.0, res.x[1] - 1.0) < 1e-5);
}

TEST_CASE("lbfgs returns immediately at a stationary start") {
    LbfgsState opts;
    opts.grad_tol = 1e-7;
    const LbfgsResult res = lbfgs_minimize(
        opts,
        [](std::span<const double> x, std::span<double> g) {
            double f = 0.0;
            for (std::size_t i = 0; i < x.size(); ++i) {
                f += x[i] * x[i];
                g[i] = 2.0 * x[i];
            }
            return f;
        },
        std::vector<double>(4, 0.0), 10);
    CHECK(res.iterations == 0);
    CHECK(res.converged);
}

TEST_CASE("lbfgs accepted steps decrease the objective") {
    const LbfgsState opts;
    const LbfgsResult res = lbfgs_minimize(
        opts,
        [](std::span<const double> x, std::span<double> g) {
            const double a = 1.0 - x[0];
            const double b = x[1] - x[0] * x[0];
            g[0] = -2.0 * a - 400.0 * x[0] * b;
            g[1] = 200.0 * b;
            return a * a + 100.0 * b * b;
        },
        std::vector<double>{-0.5, 2.0}, 40);
    REQUIRE(res.f_trace.size() >= 2);
    for (std::size_t i = 1; i < res.f_trace.size(); ++i)
        CHECK(res.f_trace[i] < res.f_trace[i - 1]);
}

TEST_CASE("optimizers keep iterates finite on steep objectives") {
    const LbfgsState opts;
    const LbfgsResult res = lbfgs_minimize(
        opts,
        [](std::span<const double> x, std::span<double> g) {
            const double f = std::exp(x[0]) + x[0] * x[0];
            g[0] = std::exp(x[0]) + 2.0 * x[0];
            return f;
        },
        std::vector<double>{5.0}, 40);
    CHECK(std::isfinite(res.x[0]));
    CHECK(std::isfinite(res.f));
}
