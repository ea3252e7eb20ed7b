#include "piddm/distill.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "piddm/exec.hpp"

namespace piddm {

std::vector<double> StudentModel::map(std::span<const double> eps, NfeCounter* nfe) const {
    if (nfe) nfe->add(1);
    return forward(net, eps);
}

StudentModel make_student(int dim, const std::vector<int>& hidden, Activation act,
                          RngSource& rng) {
    StudentModel s;
    s.net = make_net(dim, hidden, dim, act, 0, rng);
    return s;
}

PairDataset generate_pairs(const VelocityModel& teacher, int n_pairs, int n_steps,
                           RngSource& rng, NfeCounter* nfe) {
    if (n_pairs <= 0) throw std::invalid_argument("generate_pairs: n_pairs must be positive");
    const int dim = teacher.dim();
    PairDataset out;
    out.n_steps = n_steps;
    out.teacher_fingerprint = teacher.fingerprint();
    out.seed = rng.next_u64();
    out.eps.resize(n_pairs);
    out.x0.resize(n_pairs);
    std::vector<long long> discards(n_pairs, 0);
    const RngSource root(out.seed);

    exec::par_for(static_cast<std::size_t>(n_pairs), [&](std::size_t i) {
        for (int attempt = 0;; ++attempt) {
            if (attempt > 100)
                throw std::runtime_error("generate_pairs: teacher keeps producing non-finite samples");
            RngSource r = root.child(i).child(static_cast<std::uint64_t>(attempt));
            std::vector<double> eps = r.normal_vec(static_cast<std::size_t>(dim));
            try {
                out.x0[i] = euler_sample(teacher, eps, n_steps, nfe).x0;
            } catch (const std::runtime_error&) {
                ++discards[i];
                continue;  // redraw this slot deterministically
            }
            out.eps[i] = std::move(eps);
            break;
        }
    });
    out.discarded = std::accumulate(discards.begin(), discards.end(), 0LL);
    return out;
}

void DistillConfig::validate() const {
    if (epochs < 0) throw std::invalid_argument("DistillConfig: negative epochs");
    if (batch_size <= 0) throw std::invalid_argument("DistillConfig: batch size must be positive");
    if (lambda_train < 0.0) throw std::invalid_argument("DistillConfig: lambda must be >= 0");
    if (pairs_per_refresh <= 0 || refresh_interval <= 0 || teacher_steps <= 0)
        throw std::invalid_argument("DistillConfig: bad pair-refresh settings");
}

LossGrad distill_loss(const StudentModel& student, const std::vector<std::vector<double>>& eps,
                      const std::vector<std::vector<double>>& x0,
                      const ConstraintOp& constraint, double lambda_train,
                      DistillLossParts* parts) {
    if (eps.empty() || eps.size() != x0.size())
        throw std::invalid_argument("distill_loss: bad batch");
    if (lambda_train < 0.0) throw std::invalid_argument("distill_loss: lambda must be >= 0");
    const std::size_t B = eps.size();
    const int dim = student.dim();

    std::vector<double> reg_terms(B, 0.0), pde_terms(B, 0.0);
    LossGrad out;
    out.grad.assign(student.net.params.size(), 0.0);

    exec::accumulate(B, out.grad.size(), out.grad.data(), [&](std::size_t b, double* gbuf) {
        Tape tape;
        const std::vector<double> pred = forward(student.net, eps[b], &tape);
        std::vector<double> upstream(dim, 0.0);
        double reg = 0.0;
        const double rscale = 1.0 / (static_cast<double>(B) * dim);
        for (int i = 0; i < dim; ++i) {
            const double d = pred[i] - x0[b][i];
            reg += d * d;
            upstream[i] = 2.0 * d * rscale;
        }
        reg_terms[b] = reg / dim;
        if (lambda_train > 0.0 && constraint) {
            pde_terms[b] = constraint.value(pred);
            const std::vector<double> gc = constraint.grad(pred);
            const double cscale = lambda_train / static_cast<double>(B);
            for (int i = 0; i < dim; ++i) upstream[i] += cscale * gc[i];
        }
        const std::vector<double> gp = grad_params(tape, upstream);
        for (std::size_t i = 0; i < gp.size(); ++i) gbuf[i] += gp[i];
    });

    double reg = 0.0, pde = 0.0;
    for (std::size_t b = 0; b < B; ++b) reg += reg_terms[b], pde += pde_terms[b];
    reg /= static_cast<double>(B);
    pde /= static_cast<double>(B);
    out.loss = reg + lambda_train * pde;
    if (parts) *parts = {out.loss, reg, pde};
    return out;
}

LossGrad distill_loss(const StudentModel& student, const std::vector<std::vector<double>>& eps,
                      const std::vector<std::vector<double>>& x0,
                      const ResidualOperator& residual_op, double lambda_train,
                      DistillLossParts* parts) {
    return distill_loss(student, eps, x0, residual_constraint(residual_op), lambda_train, parts);
}

StudentModel train_student(const VelocityModel& teacher, const ConstraintOp& constraint,
                           const DistillConfig& config, RngSource& rng, NfeCounter* nfe,
                           DistillTrace* trace) {
    config.validate();
    RngSource init_rng = rng.child("student-init");
    RngSource pair_rng = rng.child("pairs");
    RngSource shuffle_rng = rng.child("shuffle");
    StudentModel student = make_student(teacher.dim(), config.hidden, config.act, init_rng);
    if (config.epochs == 0) return student;

    AdamState adam;
    adam.lr = config.lr;
    PairDataset pool;
    double prev_window = -1.0, window_sum = 0.0;
    int window_n = 0;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        if (epoch % config.refresh_interval == 0) {
            if (epoch > 0) {  // plateau check on the pure-regression term
                const double cur = window_sum / window_n;
                if (prev_window >= 0.0 &&
                    (prev_window - cur) < config.early_stop_rel * std::fabs(prev_window)) {
                    if (trace) trace->early_stopped = true;
                    break;
                }
                prev_window = cur;
                window_sum = 0.0;
                window_n = 0;
            }
            RngSource r = pair_rng.child(static_cast<std::uint64_t>(epoch / config.refresh_interval));
            pool = generate_pairs(teacher, config.pairs_per_refresh, config.teacher_steps, r, nfe);
        }

        std::vector<std::size_t> order(pool.size());
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.next_u64() % i]);

        double etot = 0.0, ereg = 0.0, epde = 0.0;
        int nbatches = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            std::vector<std::vector<double>> be, bx;
            be.reserve(stop - start), bx.reserve(stop - start);
            for (std::size_t j = start; j < stop; ++j) {
                be.push_back(pool.eps[order[j]]);
                bx.push_back(pool.x0[order[j]]);
            }
            DistillLossParts parts;
            LossGrad lg = distill_loss(student, be, bx, constraint, config.lambda_train, &parts);
            if (!std::isfinite(lg.loss))
                throw std::runtime_error("train_student: loss diverged at epoch " +
                                         std::to_string(epoch));
            adam_update(adam, student.net.params, lg.grad);
            etot += parts.total, ereg += parts.reg, epde += parts.pde;
            ++nbatches;
        }
        if (trace) {
            trace->total.push_back(etot / nbatches);
            trace->reg.push_back(ereg / nbatches);
            trace->pde.push_back(epde / nbatches);
            trace->epochs_run = epoch + 1;
        }
        window_sum += ereg / nbatches;
        ++window_n;
    }
    return student;
}

StudentModel train_student(const VelocityModel& teacher, const ResidualOperator& residual_op,
                           const DistillConfig& config, RngSource& rng, NfeCounter* nfe,
                           DistillTrace* trace) {
    return train_student(teacher, residual_constraint(residual_op), config, rng, nfe, trace);
}

TeacherModel reflow(const PairDataset& pairs, TeacherModel init, const TrainOptions& opts,
                    RngSource& rng, std::vector<double>* loss_trace) {
    if (pairs.size() == 0) throw std::invalid_argument("reflow: empty pair dataset");
    RngSource batch_rng = rng.child("batches");
    RngSource loss_rng = rng.child("loss");
    AdamState adam;
    adam.lr = opts.lr;
    for (int it = 0; it < opts.iters; ++it) {
        std::vector<std::vector<double>> be(opts.batch_size), bx(opts.batch_size);
        for (int b = 0; b < opts.batch_size; ++b) {
            const std::size_t j = batch_rng.next_u64() % pairs.size();
            be[b] = pairs.eps[j];
            bx[b] = pairs.x0[j];
        }
        LossGrad lg = fm_pair_loss(init, be, bx, loss_rng);
        if (loss_trace) loss_trace->push_back(lg.loss);
        if (!std::isfinite(lg.loss))
            throw std::runtime_error("reflow: loss diverged at iteration " + std::to_string(it));
        adam_update(adam, init.net.params, lg.grad);
    }
    return init;
}

void save_pairs(const std::filesystem::path& dir, const std::string& name,
                const PairDataset& pairs) {
    if (pairs.size() == 0) throw std::invalid_argument("save_pairs: empty dataset");
    std::filesystem::create_directories(dir);
    const GridSpec g{static_cast<int>(pairs.width()), 1, 1.0, 1.0};
    std::vector<std::vector<double>> channels;
    channels.reserve(2 * pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        channels.push_back(pairs.eps[i]);
        channels.push_back(pairs.x0[i]);
    }
    write_pfd(dir / (name + ".pairs.pfd"), g, channels);
    std::ofstream os(dir / (name + ".pairs.manifest.csv"));
    if (!os) throw std::runtime_error("save_pairs: cannot write manifest");
    os << "teacher,n_steps,seed,n_pairs,discarded\n";
    os << pairs.teacher_fingerprint << ',' << pairs.n_steps << ',' << pairs.seed << ','
       << pairs.size() << ',' << pairs.discarded << '\n';
}

PairDataset load_pairs(const std::filesystem::path& dir, const std::string& name) {
    PfdFile f = read_pfd(dir / (name + ".pairs.pfd"));
    if (f.channels.size() % 2 != 0) throw std::runtime_error("load_pairs: odd channel count");
    PairDataset out;
    for (std::size_t i = 0; i < f.channels.size(); i += 2) {
        out.eps.push_back(std::move(f.channels[i]));
        out.x0.push_back(std::move(f.channels[i + 1]));
    }
    std::ifstream is(dir / (name + ".pairs.manifest.csv"));
    if (!is) throw std::runtime_error("load_pairs: missing manifest");
    std::string line;
    std::getline(is, line);
    std::getline(is, line);
    std::istringstream ls(line);
    std::string cell;
    std::getline(ls, out.teacher_fingerprint, ',');
    std::getline(ls, cell, ',');
    out.n_steps = std::stoi(cell);
    std::getline(ls, cell, ',');
    out.seed = std::stoull(cell);
    std::getline(ls, cell, ',');
    std::getline(ls, cell, ',');
    out.discarded = std::stoll(cell);
    return out;
}

}  // namespace piddm
