#include "piddm/autodiff.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace piddm {

std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "gelu"; }

Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "gelu") return Activation::gelu;
    throw std::invalid_argument("unknown activation: " + s);
}

std::size_t ParamNet::param_count(const std::vector<int>& sizes) {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l)
        n += static_cast<std::size_t>(sizes[l] + 1) * sizes[l + 1];
    return n;
}

void ParamNet::validate() const {
    if (layer_sizes.size() < 2) throw std::invalid_argument("ParamNet: need at least two layers");
    for (int s : layer_sizes)
        if (s <= 0) throw std::invalid_argument("ParamNet: non-positive layer size");
    if (time_embed_dim < 0 || time_embed_dim >= layer_sizes.front())
        throw std::invalid_argument("ParamNet: bad time embedding width");
    if (params.size() != param_count(layer_sizes))
        throw std::invalid_argument("ParamNet: parameter count mismatch");
    for (double p : params)
        if (!std::isfinite(p)) throw std::invalid_argument("ParamNet: non-finite parameter");
}

ParamNet make_net(int input, const std::vector<int>& hidden, int output, Activation act,
                  int time_embed_dim, RngSource& rng) {
    ParamNet net;
    net.act = act;
    net.time_embed_dim = time_embed_dim;
    net.layer_sizes.push_back(input + time_embed_dim);
    for (int h : hidden) net.layer_sizes.push_back(h);
    net.layer_sizes.push_back(output);
    net.params.resize(ParamNet::param_count(net.layer_sizes));
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < net.layer_sizes.size(); ++l) {
        const int fan_in = net.layer_sizes[l], fan_out = net.layer_sizes[l + 1];
        const double scale = std::sqrt(2.0 / fan_in);
        for (int i = 0; i < fan_out * fan_in; ++i) net.params[off + i] = scale * rng.normal();
        off += static_cast<std::size_t>(fan_out) * fan_in;
        off += fan_out;  // biases stay zero
    }
    net.validate();
    return net;
}

std::vector<double> time_features(double t, int dim) {
    if (dim == 0) return {};
    if (dim % 2 != 0) throw std::invalid_argument("time_features: dim must be even");
    const int pairs = dim / 2;
    std::vector<double> out(dim);
    for (int j = 0; j < pairs; ++j) {
        const double freq =
            pairs > 1 ? std::pow(1000.0, static_cast<double>(j) / (pairs - 1)) : 1.0;
        out[2 * j] = std::sin(freq * t);
        out[2 * j + 1] = std::cos(freq * t);
    }
    return out;
}

namespace {

inline double act_forward(Activation a, double z) {
    if (a == Activation::relu) return z > 0.0 ? z : 0.0;
    return 0.5 * z * (1.0 + std::erf(z / std::numbers::sqrt2));
}

inline double act_backward(Activation a, double z) {
    if (a == Activation::relu) return z > 0.0 ? 1.0 : 0.0;
    const double cdf = 0.5 * (1.0 + std::erf(z / std::numbers::sqrt2));
    const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + z * pdf;
}

std::vector<double> run_forward(const ParamNet& net, std::span<const double> input, double t,
                                bool with_time, Tape* tape) {
    const int expect = with_time ? net.input_size() : net.layer_sizes.front();
    if (!with_time && net.time_embed_dim != 0)
        throw std::invalid_argument("forward: net expects a time input");
    if (static_cast<int>(input.size()) != expect)
        throw std::invalid_argument("forward: input width mismatch");

    std::vector<double> a0(input.begin(), input.end());
    if (with_time && net.time_embed_dim > 0) {
        const std::vector<double> tf = time_features(t, net.time_embed_dim);
        a0.insert(a0.end(), tf.begin(), tf.end());
    }

    const std::size_t n_layers = net.layer_sizes.size() - 1;
    if (tape) {
        tape->net = &net;
        tape->input = a0;
        tape->pre.assign(n_layers, {});
        tape->post.assign(n_layers > 0 ? n_layers - 1 : 0, {});
        tape->consumed = false;
    }

    std::vector<double> act = std::move(a0);
    std::size_t off = 0;
    for (std::size_t l = 0; l < n_layers; ++l) {
        const int fan_in = net.layer_sizes[l], fan_out = net.layer_sizes[l + 1];
        std::vector<double> z(fan_out);
        const double* W = net.params.data() + off;
        const double* b = W + static_cast<std::size_t>(fan_out) * fan_in;
        for (int o = 0; o < fan_out; ++o) {
            const double* row = W + static_cast<std::size_t>(o) * fan_in;
            double s = b[o];
            for (int i = 0; i < fan_in; ++i) s += row[i] * act[i];
            z[o] = s;
        }
        off += static_cast<std::size_t>(fan_out) * (fan_in + 1);
        if (tape) tape->pre[l] = z;
        if (l + 1 < n_layers) {
            for (double& v : z) v = act_forward(net.act, v);
            if (tape) tape->post[l] = z;
        }
        act = std::move(z);
    }
    return act;
}

}  // namespace

std::vector<double> forward(const ParamNet& net, std::span<const double> input, double t,
                            Tape* tape) {
    return run_forward(net, input, t, true, tape);
}

std::vector<double> forward(const ParamNet& net, std::span<const double> input, Tape* tape) {
    return run_forward(net, input, 0.0, false, tape);
}

Gradients backward(Tape& tape, std::span<const double> upstream) {
    if (tape.consumed) throw std::logic_error("backward: tape already consumed");
    tape.consumed = true;
    const ParamNet& net = *tape.net;
    const std::size_t n_layers = net.layer_sizes.size() - 1;
    if (static_cast<int>(upstream.size()) != net.output_size())
        throw std::invalid_argument("backward: upstream width mismatch");

    Gradients g;
    g.params.assign(net.params.size(), 0.0);

    // dL/dz of the current layer, starting from the linear output layer
    std::vector<double> delta(upstream.begin(), upstream.end());

    std::size_t off = net.params.size();
    for (std::size_t l = n_layers; l-- > 0;) {
        const int fan_in = net.layer_sizes[l], fan_out = net.layer_sizes[l + 1];
        off -= static_cast<std::size_t>(fan_out) * (fan_in + 1);
        const double* W = net.params.data() + off;
        const std::vector<double>& a_in = l == 0 ? tape.input : tape.post[l - 1];

        double* gW = g.params.data() + off;
        double* gb = gW + static_cast<std::size_t>(fan_out) * fan_in;
        for (int o = 0; o < fan_out; ++o) {
            const double d = delta[o];
            gb[o] += d;
            double* grow = gW + static_cast<std::size_t>(o) * fan_in;
            for (int i = 0; i < fan_in; ++i) grow[i] += d * a_in[i];
        }

        std::vector<double> prev(fan_in, 0.0);
        for (int o = 0; o < fan_out; ++o) {
            const double d = delta[o];
            const double* row = W + static_cast<std::size_t>(o) * fan_in;
            for (int i = 0; i < fan_in; ++i) prev[i] += d * row[i];
        }
        if (l > 0) {
            const std::vector<double>& z = tape.pre[l - 1];
            for (int i = 0; i < fan_in; ++i) prev[i] *= act_backward(net.act, z[i]);
        }
        delta = std::move(prev);
    }
    g.input.assign(delta.begin(), delta.begin() + net.input_size());
    return g;
}

std::vector<double> grad_params(Tape& tape, std::span<const double> upstream) {
    return backward(tape, upstream).params;
}

std::vector<double> grad_input(Tape& tape, std::span<const double> upstream) {
    return backward(tape, upstream).input;
}

std::vector<double> adam_step(AdamState& state, std::span<const double> params,
                              std::span<const double> grad) {
    if (params.size() != grad.size()) throw std::invalid_argument("adam_step: length mismatch");
    for (double gv : grad)
        if (!std::isfinite(gv)) throw std::invalid_argument("adam_step: non-finite gradient");
    if (state.m.empty()) state.m.assign(params.size(), 0.0);
    if (state.v.empty()) state.v.assign(params.size(), 0.0);
    if (state.m.size() != params.size() || state.v.size() != params.size())
        throw std::invalid_argument("adam_step: state length mismatch");
    ++state.step;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    std::vector<double> out(params.begin(), params.end());
    for (std::size_t i = 0; i < out.size(); ++i) {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        out[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
    return out;
}

void adam_update(AdamState& state, std::vector<double>& params, std::span<const double> grad) {
    params = adam_step(state, params, grad);
}

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

}  // namespace

LbfgsResult lbfgs_minimize(const LbfgsState& opts, const ObjectiveFn& objective,
                           std::vector<double> init, int max_iters) {
    const std::size_t n = init.size();
    LbfgsResult res;
    res.x = std::move(init);
    std::vector<double> g(n);
    res.f = objective(res.x, g);
    if (!std::isfinite(res.f)) throw std::runtime_error("lbfgs: non-finite initial objective");
    res.f_trace.push_back(res.f);

    std::vector<std::vector<double>> s_hist, y_hist;
    std::vector<double> rho_hist;

    for (int iter = 0; iter < max_iters; ++iter) {
        if (norm2(g) < opts.grad_tol) {
            res.converged = true;
            return res;
        }

        // two-loop recursion for d = -H g
        std::vector<double> d(g.begin(), g.end());
        const std::size_t m = s_hist.size();
        std::vector<double> alpha(m);
        for (std::size_t j = m; j-- > 0;) {
            alpha[j] = rho_hist[j] * dot(s_hist[j], d);
            for (std::size_t i = 0; i < n; ++i) d[i] -= alpha[j] * y_hist[j][i];
        }
        if (m > 0) {
            const double gamma =
                dot(s_hist.back(), y_hist.back()) / dot(y_hist.back(), y_hist.back());
            for (double& v : d) v *= gamma;
        }
        for (std::size_t j = 0; j < m; ++j) {
            const double beta = rho_hist[j] * dot(y_hist[j], d);
            for (std::size_t i = 0; i < n; ++i) d[i] += s_hist[j][i] * (alpha[j] - beta);
        }
        for (double& v : d) v = -v;

        double dphi0 = dot(g, d);
        if (dphi0 >= 0.0) {  // fall back to steepest descent
            for (std::size_t i = 0; i < n; ++i) d[i] = -g[i];
            dphi0 = dot(g, d);
        }

        // strong Wolfe line search (bracket + bisection zoom)
        const double phi0 = res.f;
        std::vector<double> x_trial(n), g_trial(n);
        auto eval = [&](double a) {
            for (std::size_t i = 0; i < n; ++i) x_trial[i] = res.x[i] + a * d[i];
            return objective(x_trial, g_trial);
        };

        double a_prev = 0.0, phi_prev = phi0;
        double a = iter == 0 ? std::min(1.0, opts.initial_step / std::max(1e-12, norm2(d))) : 1.0;
        double a_accept = -1.0, phi_accept = 0.0;
        int evals = 0;
        double lo = 0.0, hi = 0.0, phi_lo = phi0;
        bool zoom = false;

        while (evals < opts.max_line_search) {
            const double phi = eval(a);
            ++evals;
            if (!std::isfinite(phi) || phi > phi0 + opts.c1 * a * dphi0 ||
                (evals > 1 && phi >= phi_prev)) {
                lo = a_prev, hi = a, phi_lo = phi_prev;
                zoom = true;
                break;
            }
            const double dphi = dot(g_trial, d);
            if (std::fabs(dphi) <= -opts.c2 * dphi0) {
                a_accept = a, phi_accept = phi;
                break;
            }
            if (dphi >= 0.0) {
                lo = a, hi = a_prev, phi_lo = phi;
                zoom = true;
                break;
            }
            a_prev = a, phi_prev = phi;
            a *= 2.0;
        }
        if (zoom) {
            while (evals < opts.max_line_search) {
                a = 0.5 * (lo + hi);
                const double phi = eval(a);
                ++evals;
                if (!std::isfinite(phi) || phi > phi0 + opts.c1 * a * dphi0 || phi >= phi_lo) {
                    hi = a;
                } else {
                    const double dphi = dot(g_trial, d);
                    if (std::fabs(dphi) <= -opts.c2 * dphi0) {
                        a_accept = a, phi_accept = phi;
                        break;
                    }
                    if (dphi * (hi - lo) >= 0.0) hi = lo;
                    lo = a, phi_lo = phi;
                }
            }
        }
        if (a_accept < 0.0) {
            res.line_search_failed = true;
            return res;
        }

        // accept: x_trial/g_trial hold the accepted point
        std::vector<double> s(n), y(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = a_accept * d[i];
            y[i] = g_trial[i] - g[i];
        }
        const double sy = dot(s, y);
        if (sy > 1e-12 * norm2(s) * norm2(y)) {  // curvature pairs must have s.y > 0
            s_hist.push_back(std::move(s));
            y_hist.push_back(std::move(y));
            rho_hist.push_back(1.0 / sy);
            if (static_cast<int>(s_hist.size()) > opts.history) {
                s_hist.erase(s_hist.begin());
                y_hist.erase(y_hist.begin());
                rho_hist.erase(rho_hist.begin());
            }
        }
        res.x = x_trial;
        res.f = phi_accept;
        res.f_trace.push_back(res.f);
        g = g_trial;
        ++res.iterations;
    }
    res.converged = norm2(g) < opts.grad_tol;
    return res;
}

}  // namespace piddm
