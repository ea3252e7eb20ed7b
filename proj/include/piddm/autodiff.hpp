#pragma once

#include <functional>
#include <span>
#include <vector>

#include "piddm/rng.hpp"

namespace piddm {

enum class Activation { relu, gelu };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

// Dense MLP over a flat parameter vector. layer_sizes includes the input
// width (time features included) and the output width; the output layer is
// linear. Per layer the parameters are W (fan_out x fan_in, row-major)
// followed by the bias.
struct ParamNet {
    std::vector<int> layer_sizes;
    Activation act = Activation::relu;
    int time_embed_dim = 0;  // sinusoidal features appended to the input
    std::vector<double> params;

    int input_size() const { return layer_sizes.front() - time_embed_dim; }
    int output_size() const { return layer_sizes.back(); }
    static std::size_t param_count(const std::vector<int>& sizes);
    void validate() const;
};

// He-initialized net: input -> hidden... -> output.
ParamNet make_net(int input, const std::vector<int>& hidden, int output, Activation act,
                  int time_embed_dim, RngSource& rng);

// dim/2 sin/cos pairs with geometrically spaced frequencies in [1, 1000].
std::vector<double> time_features(double t, int dim);

// Recorded forward pass; one backward pass consumes it.
struct Tape {
    const ParamNet* net = nullptr;
    std::vector<double> input;               // layer-0 activation incl. time features
    std::vector<std::vector<double>> pre;    // pre-activations per layer
    std::vector<std::vector<double>> post;   // hidden post-activations
    bool consumed = false;
};

std::vector<double> forward(const ParamNet& net, std::span<const double> input, double t,
                            Tape* tape = nullptr);
// Time-free variant for nets with time_embed_dim == 0 (the student).
std::vector<double> forward(const ParamNet& net, std::span<const double> input,
                            Tape* tape = nullptr);

struct Gradients {
    std::vector<double> params;
    std::vector<double> input;  // w.r.t. the raw input, time features excluded
};

// Exact reverse-mode gradients of upstream . output. Each consumes the tape.
Gradients backward(Tape& tape, std::span<const double> upstream);
std::vector<double> grad_params(Tape& tape, std::span<const double> upstream);
std::vector<double> grad_input(Tape& tape, std::span<const double> upstream);

// --- optimizers -------------------------------------------------------------

struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long long step = 0;
    std::vector<double> m, v;
};

// Bias-corrected Adam update; throws on non-finite gradient entries.
std::vector<double> adam_step(AdamState& state, std::span<const double> params,
                              std::span<const double> grad);
void adam_update(AdamState& state, std::vector<double>& params, std::span<const double> grad);

struct LbfgsState {
    int history = 10;
    double c1 = 1e-4, c2 = 0.9;  // strong Wolfe constants
    double grad_tol = 1e-7;
    double initial_step = 1.0;  // scales the first trial step
    int max_line_search = 20;
};

struct LbfgsResult {
    std::vector<double> x;
    double f = 0.0;
    int iterations = 0;  // accepted steps
    bool converged = false;
    bool line_search_failed = false;
    std::vector<double> f_trace;  // objective at the start and after each accepted step
};

// objective(x, grad_out) returns f and fills grad_out (same length as x).
using ObjectiveFn = std::function<double(std::span<const double>, std::span<double>)>;

LbfgsResult lbfgs_minimize(const LbfgsState& opts, const ObjectiveFn& objective,
                           std::vector<double> init, int max_iters);

}  // namespace piddm
