#include "piddm/experiment.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "piddm/baselines.hpp"
#include "piddm/exec.hpp"

namespace piddm {

namespace {

double now_s() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

// Splits a flat ensemble into the u block for the u-only metric columns.
Ensemble u_block(const Ensemble& flat, std::size_t nu) {
    Ensemble out;
    out.reserve(flat.size());
    for (const auto& v : flat) out.emplace_back(v.begin(), v.begin() + nu);
    return out;
}

double masked_mse(std::span<const double> pred, std::span<const double> truth,
                  const ObservationMask& mask) {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (mask.entries[i] == 1.0) continue;  // error on the unobserved part
        const double d = pred[i] - truth[i];
        s += d * d;
        ++n;
    }
    return n > 0 ? s / static_cast<double>(n) : 0.0;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_config(const Config& c) {
    ExperimentConfig e;
    e.name = c.get_str("experiment.name", e.name);
    e.out_dir = c.get_str("experiment.out_dir", e.out_dir.string());
    e.seeds = c.get_u64_list("experiment.seeds", e.seeds);
    if (c.has("experiment.methods")) e.methods = c.get_list("experiment.methods");
    if (c.has("experiment.tasks")) e.tasks = c.get_list("experiment.tasks");

    e.dataset = dataset_kind_from_string(c.get_str("data.kind", to_string(e.dataset)));
    e.n_train = c.get_int("data.n_train", e.n_train);
    e.n_x = c.get_int("data.n_x", e.n_x);
    e.n_t = c.get_int("data.n_t", e.n_t);
    e.data_seed = c.get_u64("data.seed", e.data_seed);

    e.schedule = schedule_kind_from_string(c.get_str("schedule.kind", to_string(e.schedule)));
    e.teacher_hidden = c.get_int_list("teacher.hidden", e.teacher_hidden);
    e.time_embed = c.get_int("teacher.time_embed", e.time_embed);
    e.teacher_iters = c.get_int("teacher.iters", e.teacher_iters);
    e.teacher_batch = c.get_int("teacher.batch", e.teacher_batch);
    e.teacher_lr = c.get_num("teacher.lr", e.teacher_lr);
    e.sample_steps = c.get_int("teacher.sample_steps", e.sample_steps);

    e.lambda_train = c.get_num("distill.lambda_train", e.lambda_train);
    e.distill_epochs = c.get_int("distill.epochs", e.distill_epochs);
    e.refresh_interval = c.get_int("distill.refresh_interval", e.refresh_interval);
    e.pairs_per_refresh = c.get_int("distill.pairs_per_refresh", e.pairs_per_refresh);
    e.distill_batch = c.get_int("distill.batch", e.distill_batch);
    e.distill_lr = c.get_num("distill.lr", e.distill_lr);
    e.student_hidden = c.get_int_list("distill.hidden", e.student_hidden);

    e.lambda_infer = c.get_num("infer.lambda_infer", e.lambda_infer);
    e.infer_iters = c.get_int("infer.iters", e.infer_iters);
    e.optimizer = c.get_str("infer.optimizer", "lbfgs") == "gd"
                      ? InferOptimizer::gradient_descent
                      : InferOptimizer::lbfgs;
    e.infer_step = c.get_num("infer.step", e.infer_step);
    e.restarts = c.get_int("infer.restarts", e.restarts);
    e.observe_rate = c.get_num("infer.observe_rate", e.observe_rate);
    e.refine_steps = c.get_int("infer.refine_steps", e.refine_steps);
    e.refine_eta = c.get_num("infer.refine_eta", e.refine_eta);

    e.dps_weight = c.get_num("baselines.dps_weight", e.dps_weight);
    e.dps_obs_weight = c.get_num("baselines.dps_obs_weight", e.dps_obs_weight);
    e.pidm_lambda = c.get_num("baselines.pidm_lambda", e.pidm_lambda);
    e.dflow_iters = c.get_int("baselines.dflow_iters", e.dflow_iters);
    e.dflow_lr = c.get_num("baselines.dflow_lr", e.dflow_lr);

    e.eval_ensemble = c.get_int("eval.ensemble", e.eval_ensemble);
    e.eval_tasks = c.get_int("eval.tasks", e.eval_tasks);
    e.keep_samples = c.get_int("eval.keep_samples", e.keep_samples);
    return e;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    ExperimentResult result;
    fs::create_directories(cfg.out_dir);
    fs::create_directories(cfg.out_dir / "traces");
    fs::create_directories(cfg.out_dir / "samples");

    const GridSpec grid = cfg.grid();
    DatasetSpec dspec{cfg.dataset, cfg.n_train, grid, cfg.data_seed, 0.0, 0.0};
    const ResidualOperator op = dataset_operator(dspec);
    const ConstraintOp constraint = residual_constraint(op);
    const std::size_t nu = grid.points();
    const int dim = static_cast<int>(op.flat_size());

    const std::vector<JointSample> train = generate_dataset(dspec);
    const std::vector<std::vector<double>> train_flat = flatten_all(train);

    DatasetSpec ref_spec = dspec;
    ref_spec.n_samples = cfg.eval_ensemble;
    ref_spec.seed = cfg.data_seed + 1;
    const Ensemble reference = flatten_all(generate_dataset(ref_spec));

    DatasetSpec truth_spec = dspec;
    truth_spec.n_samples = cfg.eval_tasks;
    truth_spec.seed = cfg.data_seed + 2;
    const Ensemble task_truths = flatten_all(generate_dataset(truth_spec));

    for (const std::uint64_t seed : cfg.seeds) {
        RngSource root(seed);

        // teacher (shared by vanilla/dps/eci/dflow/piddm)
        RngSource init_rng = root.child("teacher-init");
        TeacherModel teacher(
            make_net(dim, cfg.teacher_hidden, dim, Activation::relu, cfg.time_embed, init_rng),
            DiffusionSchedule{cfg.schedule});
        RngSource train_rng = root.child("teacher-train");
        std::vector<double> teacher_trace;
        TrainOptions topt{cfg.teacher_iters, cfg.teacher_batch, cfg.teacher_lr};
        teacher = train_teacher(std::move(teacher), train_flat, topt, train_rng, &teacher_trace);
        write_loss_trace_csv(
            cfg.out_dir / "traces" / ("teacher_seed" + std::to_string(seed) + ".csv"),
            teacher_trace);

        // student (for piddm methods); trained lazily only when needed
        StudentModel student;
        bool have_student = false;
        auto ensure_student = [&]() {
            if (have_student) return;
            DistillConfig dc;
            dc.lambda_train = cfg.lambda_train;
            dc.epochs = cfg.distill_epochs;
            dc.refresh_interval = cfg.refresh_interval;
            dc.pairs_per_refresh = cfg.pairs_per_refresh;
            dc.batch_size = cfg.distill_batch;
            dc.lr = cfg.distill_lr;
            dc.teacher_steps = cfg.sample_steps;
            dc.hidden = cfg.student_hidden;
            RngSource r = root.child("distill");
            student = train_student(teacher, constraint, dc, r);
            have_student = true;
        };

        // generative ensembles per method
        for (const std::string& method : cfg.methods) {
            try {
                const double t0 = now_s();
                NfeCounter nfe;
                Ensemble gen(cfg.eval_ensemble);
                RngSource gen_rng = root.child("gen-" + method);
                const RngSource eps_root = RngSource(gen_rng.next_u64());

                if (method == "vanilla") {
                    exec::par_for(gen.size(), [&](std::size_t i) {
                        RngSource r = eps_root.child(i);
                        gen[i] = euler_sample(teacher, r.normal_vec(dim), cfg.sample_steps, &nfe).x0;
                    });
                } else if (method == "dps") {
                    exec::par_for(gen.size(), [&](std::size_t i) {
                        RngSource r = eps_root.child(i);
                        gen[i] = dps_sample(teacher, r.normal_vec(dim), cfg.sample_steps,
                                            constraint, cfg.dps_weight, nullptr, nullptr, 0.0,
                                            &nfe);
                    });
                } else if (method == "eci") {
                    const auto project = bc_projection(op);
                    exec::par_for(gen.size(), [&](std::size_t i) {
                        RngSource r = eps_root.child(i);
                        gen[i] = eci_sample(teacher, r.normal_vec(dim), cfg.sample_steps, project,
                                            &nfe);
                    });
                } else if (method == "dflow") {
                    DflowOptions dopt;
                    dopt.n_steps = cfg.sample_steps;
                    dopt.n_iters = cfg.dflow_iters;
                    dopt.lr = cfg.dflow_lr;
                    dopt.lambda = cfg.lambda_infer;
                    exec::par_for(gen.size(), [&](std::size_t i) {
                        RngSource r = eps_root.child(i);
                        gen[i] =
                            dflow_optimize(teacher, r.normal_vec(dim), constraint, dopt, &nfe)
                                .sample;
                    });
                } else if (method == "pidm") {
                    RngSource pr = root.child("pidm-init");
                    TeacherModel pidm_model(make_net(dim, cfg.teacher_hidden, dim,
                                                     Activation::relu, cfg.time_embed, pr),
                                            DiffusionSchedule{cfg.schedule});
                    RngSource ptr = root.child("pidm-train");
                    TrainTrace ptrace;
                    pidm_model = train_pidm(std::move(pidm_model), train_flat, topt, op,
                                            cfg.pidm_lambda, ptr, &ptrace);
                    write_loss_trace_csv(cfg.out_dir / "traces" /
                                             ("pidm_fm_seed" + std::to_string(seed) + ".csv"),
                                         ptrace.fm);
                    exec::par_for(gen.size(), [&](std::size_t i) {
                        RngSource r = eps_root.child(i);
                        gen[i] =
                            euler_sample(pidm_model, r.normal_vec(dim), cfg.sample_steps, &nfe).x0;
                    });
                } else if (method == "piddm") {
                    ensure_student();
                    exec::par_for(gen.size(), [&](std::size_t i) {
                        RngSource r = eps_root.child(i);
                        gen[i] = student.map(r.normal_vec(dim), &nfe);
                    });
                } else if (method == "piddm_ref") {
                    ensure_student();
                    exec::par_for(gen.size(), [&](std::size_t i) {
                        RngSource r = eps_root.child(i);
                        gen[i] = refine_noise(student, r.normal_vec(dim), constraint,
                                              cfg.refine_steps, cfg.refine_eta, &nfe)
                                     .sample;
                    });
                } else {
                    throw std::invalid_argument("unknown method: " + method);
                }

                MetricRecord rec;
                rec.method = method;
                rec.task = "generate";
                rec.seed = seed;
                rec.mmse_joint = mmse(gen, reference);
                rec.smse_joint = smse(gen, reference);
                rec.mmse_u = mmse(u_block(gen, nu), u_block(reference, nu));
                rec.smse_u = smse(u_block(gen, nu), u_block(reference, nu));
                rec.pde_error = ensemble_pde_error(constraint, gen);
                rec.nfe = static_cast<double>(nfe.count()) / cfg.eval_ensemble;
                rec.wall_s = now_s() - t0;
                result.records.push_back(rec);

                std::vector<std::vector<double>> keep(
                    gen.begin(), gen.begin() + std::min<std::size_t>(gen.size(), cfg.keep_samples));
                write_pfd(cfg.out_dir / "samples" /
                              (method + "_seed" + std::to_string(seed) + ".pfd"),
                          GridSpec{dim, 1, 1.0, 1.0}, keep);
            } catch (const std::exception& e) {
                result.failures.push_back({method, "generate", seed, e.what()});
            }
        }

        // downstream tasks
        for (const std::string& task_name : cfg.tasks) {
            const Task task = task_from_string(task_name);
            RngSource mask_rng = root.child("mask-" + task_name);
            for (const std::string& method : cfg.methods) {
                if (method == "pidm" || method == "piddm_ref") continue;  // generative only
                try {
                    const double t0 = now_s();
                    NfeCounter nfe;
                    double mse_sum = 0.0, pde_sum = 0.0;
                    RngSource task_rng = root.child("task-" + task_name + "-" + method);
                    const RngSource eps_root = RngSource(task_rng.next_u64());

                    for (int j = 0; j < cfg.eval_tasks; ++j) {
                        RngSource mr = mask_rng.child(j);
                        const ObservationMask mask =
                            make_task_mask(task, op, mr, cfg.observe_rate);
                        const std::vector<double>& truth = task_truths[j];
                        std::vector<double> obs(truth.size(), 0.0);
                        for (std::size_t i = 0; i < obs.size(); ++i)
                            obs[i] = truth[i] * mask.entries[i];

                        std::vector<double> out;
                        RngSource sr = eps_root.child(j);
                        if (method == "piddm") {
                            ensure_student();
                            TaskSpec ts;
                            ts.task = task;
                            ts.observation = obs;
                            ts.mask = mask;
                            ts.lambda_infer = cfg.lambda_infer;
                            ts.n_iters = cfg.infer_iters;
                            ts.optimizer = cfg.optimizer;
                            ts.step_size = cfg.infer_step;
                            ts.restarts = cfg.restarts;
                            out = solve_conditional(student, ts, constraint, sr, &nfe).output;
                        } else if (method == "dps") {
                            out = dps_sample(teacher, sr.normal_vec(dim), cfg.sample_steps,
                                             constraint, cfg.dps_weight, &obs, &mask,
                                             cfg.dps_obs_weight, &nfe);
                        } else if (method == "eci") {
                            out = eci_sample(teacher, sr.normal_vec(dim), cfg.sample_steps,
                                             make_mask_correction(obs, mask), &nfe);
                        } else if (method == "dflow") {
                            DflowOptions dopt;
                            dopt.n_steps = cfg.sample_steps;
                            dopt.n_iters = cfg.dflow_iters;
                            dopt.lr = cfg.dflow_lr;
                            dopt.lambda = cfg.lambda_infer;
                            dopt.observation = &obs;
                            dopt.mask = &mask;
                            out = dflow_optimize(teacher, sr.normal_vec(dim), constraint, dopt,
                                                 &nfe)
                                      .sample;
                        } else if (method == "vanilla") {
                            out = euler_sample(teacher, sr.normal_vec(dim), cfg.sample_steps,
                                               &nfe)
                                      .x0;
                        } else {
                            throw std::invalid_argument("unknown method: " + method);
                        }
                        mse_sum += masked_mse(out, truth, mask);
                        pde_sum += constraint.value(out);
                    }

                    MetricRecord rec;
                    rec.method = method;
                    rec.task = task_name;
                    rec.seed = seed;
                    rec.mse = mse_sum / cfg.eval_tasks;
                    rec.pde_error = pde_sum / cfg.eval_tasks;
                    rec.nfe = static_cast<double>(nfe.count()) / cfg.eval_tasks;
                    rec.wall_s = now_s() - t0;
                    result.records.push_back(rec);
                } catch (const std::exception& e) {
                    result.failures.push_back({method, task_name, seed, e.what()});
                }
            }
        }
    }

    write_metrics_csv(cfg.out_dir / "records.csv", result.records);
    if (!result.failures.empty()) {
        std::ofstream os(cfg.out_dir / "failures.csv");
        os << "method,task,seed,error\n";
        for (const auto& f : result.failures)
            os << f.method << ',' << f.task << ',' << f.seed << ',' << f.what << '\n';
    }
    return result;
}

}  // namespace piddm
