#include "piddm/diffusion.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "piddm/exec.hpp"

namespace piddm {

std::string hash_doubles(std::span<const double> values) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (double v : values) {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        for (int i = 0; i < 8; ++i) {
            h ^= (bits >> (8 * i)) & 0xff;
            h *= 0x100000001b3ULL;
        }
    }
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

std::vector<double> TeacherModel::velocity(std::span<const double> x, double t) const {
    return forward(net, x, t);
}

std::vector<double> TeacherModel::velocity_vjp(std::span<const double> x, double t,
                                               std::span<const double> upstream) const {
    Tape tape;
    forward(net, x, t, &tape);
    return grad_input(tape, upstream);
}

std::vector<double> interpolate(const DiffusionSchedule& sched, std::span<const double> x0,
                                std::span<const double> eps, double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("interpolate: t outside [0,1]");
    if (x0.size() != eps.size()) throw std::invalid_argument("interpolate: length mismatch");
    const double a = sched.alpha(t), s = sched.sigma(t);
    std::vector<double> out(x0.size());
    if (t == 0.0) {  // endpoint must reproduce x0 bit-exactly
        out.assign(x0.begin(), x0.end());
        return out;
    }
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + s * eps[i];
    return out;
}

namespace {

// One batch of the velocity objective. In paired mode both eps and x0 come
// from the caller; otherwise eps is drawn per sample. t ~ U(0,1), clamped
// away from 0 where the VP/sub-VP targets blow up.
LossGrad velocity_batch_loss(const TeacherModel& model,
                             const std::vector<std::vector<double>>* x0_batch,
                             const std::vector<std::vector<double>>* eps_batch,
                             const ResidualOperator* physics_op, double lambda, RngSource& rng,
                             double* fm_part) {
    const std::size_t B = x0_batch->size();
    if (B == 0) throw std::invalid_argument("fm_loss: empty batch");
    const int dim = model.dim();
    const DiffusionSchedule& sched = model.sched;
    const std::uint64_t call_seed = rng.next_u64();

    std::vector<double> fm_terms(B, 0.0), phys_terms(B, 0.0);
    LossGrad out;
    out.grad.assign(model.net.params.size(), 0.0);

    exec::accumulate(B, out.grad.size(), out.grad.data(), [&](std::size_t b, double* gbuf) {
        RngSource r = RngSource(call_seed).child(b);
        const std::vector<double>& x0 = (*x0_batch)[b];
        if (static_cast<int>(x0.size()) != dim)
            throw std::invalid_argument("fm_loss: sample width mismatch");
        std::vector<double> eps =
            eps_batch ? (*eps_batch)[b] : r.normal_vec(static_cast<std::size_t>(dim));
        double t = r.uniform();
        if (t < 1e-6) t = 1e-6;

        const double a = sched.alpha(t), s = sched.sigma(t);
        const double da = sched.dalpha(t), ds = sched.dsigma(t);
        std::vector<double> xt(dim);
        for (int i = 0; i < dim; ++i) xt[i] = a * x0[i] + s * eps[i];

        Tape tape;
        const std::vector<double> v = forward(model.net, xt, t, &tape);

        std::vector<double> upstream(dim);
        double fm = 0.0;
        for (int i = 0; i < dim; ++i) {
            const double d = v[i] - (da * x0[i] + ds * eps[i]);
            fm += d * d;
            upstream[i] = 2.0 * d / static_cast<double>(B);
        }
        fm_terms[b] = fm;

        if (physics_op != nullptr && lambda > 0.0) {
            const double den = sched.tweedie_denominator(t);
            std::vector<double> xhat(dim);
            for (int i = 0; i < dim; ++i) xhat[i] = (ds * xt[i] - s * v[i]) / den;
            phys_terms[b] = residual_norm_flat(*physics_op, xhat);
            const std::vector<double> gx = residual_norm_grad_flat(*physics_op, xhat);
            const double chain = lambda / static_cast<double>(B) * (-s / den);
            for (int i = 0; i < dim; ++i) upstream[i] += chain * gx[i];
        }

        const std::vector<double> gp = grad_params(tape, upstream);
        for (std::size_t i = 0; i < gp.size(); ++i) gbuf[i] += gp[i];
    });

    double fm_sum = 0.0, phys_sum = 0.0;
    for (std::size_t b = 0; b < B; ++b) fm_sum += fm_terms[b], phys_sum += phys_terms[b];
    const double fm_mean = fm_sum / static_cast<double>(B);
    out.loss = fm_mean + lambda * phys_sum / static_cast<double>(B);
    if (fm_part) *fm_part = fm_mean;
    return out;
}

}  // namespace

LossGrad fm_loss(const TeacherModel& model, const std::vector<std::vector<double>>& batch,
                 RngSource& rng) {
    return velocity_batch_loss(model, &batch, nullptr, nullptr, 0.0, rng, nullptr);
}

LossGrad fm_pair_loss(const TeacherModel& model, const std::vector<std::vector<double>>& eps,
                      const std::vector<std::vector<double>>& x0, RngSource& rng) {
    if (eps.size() != x0.size()) throw std::invalid_argument("fm_pair_loss: pair count mismatch");
    return velocity_batch_loss(model, &x0, &eps, nullptr, 0.0, rng, nullptr);
}

LossGrad velocity_loss_with_physics(const TeacherModel& model,
                                    const std::vector<std::vector<double>>& batch,
                                    const ResidualOperator* physics_op, double lambda,
                                    RngSource& rng, double* fm_part) {
    return velocity_batch_loss(model, &batch, nullptr, physics_op, lambda, rng, fm_part);
}

TeacherModel train_velocity_model(TeacherModel model, const std::vector<std::vector<double>>& data,
                                  const TrainOptions& opts, const ResidualOperator* physics_op,
                                  double lambda, RngSource& rng, TrainTrace* trace) {
    if (data.empty()) throw std::invalid_argument("train: empty dataset");
    AdamState adam;
    adam.lr = opts.lr;
    RngSource batch_rng = rng.child("batches");
    RngSource loss_rng = rng.child("loss");
    for (int it = 0; it < opts.iters; ++it) {
        std::vector<std::vector<double>> batch(opts.batch_size);
        for (auto& b : batch) b = data[batch_rng.next_u64() % data.size()];
        double fm_part = 0.0;
        LossGrad lg = velocity_batch_loss(model, &batch, nullptr, physics_op, lambda, loss_rng,
                                          &fm_part);
        if (trace) {
            trace->total.push_back(lg.loss);
            trace->fm.push_back(fm_part);
        }
        if (!std::isfinite(lg.loss))
            throw std::runtime_error("train: loss diverged at iteration " + std::to_string(it));
        adam_update(adam, model.net.params, lg.grad);
    }
    return model;
}

TeacherModel train_teacher(TeacherModel model, const std::vector<std::vector<double>>& data,
                           const TrainOptions& opts, RngSource& rng,
                           std::vector<double>* loss_trace) {
    TrainTrace trace;
    model = train_velocity_model(std::move(model), data, opts, nullptr, 0.0, rng,
                                 loss_trace ? &trace : nullptr);
    if (loss_trace) *loss_trace = std::move(trace.total);
    return model;
}

SampleResult euler_sample(const VelocityModel& model, std::span<const double> eps, int n_steps,
                          NfeCounter* nfe, bool keep_trajectory) {
    if (n_steps < 1) throw std::invalid_argument("euler_sample: n_steps must be >= 1");
    if (static_cast<int>(eps.size()) != model.dim())
        throw std::invalid_argument("euler_sample: noise width mismatch");
    SampleResult res;
    std::vector<double> x(eps.begin(), eps.end());
    const double dt = 1.0 / n_steps;
    if (keep_trajectory) res.trajectory.push_back(x);
    for (int k = n_steps; k >= 1; --k) {
        const double t = static_cast<double>(k) / n_steps;
        const std::vector<double> v = model.velocity(x, t);
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] -= dt * v[i];
            if (!std::isfinite(x[i]))
                throw std::runtime_error("euler_sample: non-finite state at t=" +
                                         std::to_string(t));
        }
        if (keep_trajectory) res.trajectory.push_back(x);
    }
    if (nfe) nfe->add(n_steps);
    res.x0 = std::move(x);
    return res;
}

std::vector<double> posterior_mean_from_velocity(const DiffusionSchedule& sched,
                                                 std::span<const double> x_t,
                                                 std::span<const double> v, double t) {
    const double den = sched.tweedie_denominator(t);
    const double s = sched.sigma(t), ds = sched.dsigma(t);
    std::vector<double> out(x_t.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (ds * x_t[i] - s * v[i]) / den;
    return out;
}

std::vector<double> posterior_mean(const VelocityModel& model, std::span<const double> x_t,
                                   double t, NfeCounter* nfe) {
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("posterior_mean: t outside [0,1]");
    if (t == 0.0) return {x_t.begin(), x_t.end()};
    const std::vector<double> v = model.velocity(x_t, t);
    if (nfe) nfe->add(1);
    return posterior_mean_from_velocity(model.schedule(), x_t, v, t);
}

namespace {
void put_le_double(std::ostream& os, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(bits >> (8 * i));
    os.write(reinterpret_cast<const char*>(buf), 8);
}
double get_le_double(std::istream& is) {
    unsigned char buf[8];
    is.read(reinterpret_cast<char*>(buf), 8);
    if (!is) throw std::runtime_error("checkpoint: truncated payload");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}
}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamNet& net,
                     const std::string& tag) {
    net.validate();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path.string());
    os << "PFD1 " << net.params.size() << " 1 1 1 1\n";
    os << "layers";
    for (int s : net.layer_sizes) os << ' ' << s;
    os << " act " << to_string(net.act) << " temb " << net.time_embed_dim << " tag " << tag
       << '\n';
    for (double p : net.params) put_le_double(os, p);
    if (!os) throw std::runtime_error("save_checkpoint: write failed");
}

std::pair<ParamNet, std::string> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
    std::string header, meta;
    std::getline(is, header);
    std::getline(is, meta);
    std::istringstream hs(header);
    std::string magic;
    std::size_t count = 0;
    hs >> magic >> count;
    if (magic != "PFD1") throw std::runtime_error("load_checkpoint: bad header");

    ParamNet net;
    std::string tag = "none";
    std::istringstream ms(meta);
    std::string tok;
    ms >> tok;  // "layers"
    while (ms >> tok) {
        if (tok == "act") {
            ms >> tok;
            net.act = activation_from_string(tok);
        } else if (tok == "temb") {
            ms >> net.time_embed_dim;
        } else if (tok == "tag") {
            ms >> tag;
        } else {
            net.layer_sizes.push_back(std::stoi(tok));
        }
    }
    net.params.resize(count);
    for (double& p : net.params) p = get_le_double(is);
    net.validate();
    return {std::move(net), tag};
}

std::vector<std::vector<double>> flatten_all(const std::vector<JointSample>& samples) {
    std::vector<std::vector<double>> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(flatten(s));
    return out;
}

void write_loss_trace_csv(const std::filesystem::path& path, std::span<const double> trace) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << "iteration,loss\n";
    os.precision(17);
    for (std::size_t i = 0; i < trace.size(); ++i) os << i << ',' << trace[i] << '\n';
}

}  // namespace piddm
