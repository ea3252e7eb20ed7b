#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "piddm/baselines.hpp"
#include "piddm/config.hpp"
#include "piddm/distill.hpp"
#include "piddm/exec.hpp"
#include "piddm/experiment.hpp"
#include "piddm/inference.hpp"
#include "piddm/jensen.hpp"
#include "piddm/metrics.hpp"
#include "piddm/svg.hpp"

namespace fs = std::filesystem;
using namespace piddm;

namespace {

// Relative outputs land under $PIDDM_OUT_ROOT when it is set.
fs::path resolve_out(const std::string& p) {
    fs::path path(p);
    if (path.is_absolute()) return path;
    if (const char* root = std::getenv("PIDDM_OUT_ROOT")) return fs::path(root) / path;
    return path;
}

ResidualOperator operator_for(const std::string& kind, int nx, int nt) {
    const DatasetKind dk = dataset_kind_from_string(kind);
    return dataset_operator(DatasetSpec{dk, 1, default_grid(dk, nx, nt), 0, 0.0, 0.0});
}

TeacherModel load_teacher(const std::string& path) {
    auto [net, tag] = load_checkpoint(path);
    if (tag == "none")
        throw std::runtime_error("checkpoint " + path + " is a student model, expected teacher");
    return TeacherModel(std::move(net), DiffusionSchedule{schedule_kind_from_string(tag)});
}

StudentModel load_student(const std::string& path) {
    auto [net, tag] = load_checkpoint(path);
    if (tag != "none")
        throw std::runtime_error("checkpoint " + path + " is a teacher model, expected student");
    return StudentModel{std::move(net)};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"physics-informed distillation of flow models"};
    app.require_subcommand(1);
    std::string exec_mode = "openmp";
    app.add_option("--exec", exec_mode, "execution backend: serial or openmp")
        ->check(CLI::IsMember({"serial", "openmp"}));

    // --- gen-data ---
    auto* gen = app.add_subcommand("gen-data", "generate an analytical dataset");
    std::string g_kind = "stokes", g_out = "data", g_name = "train";
    int g_n = 256, g_nx = 16, g_nt = 16;
    std::uint64_t g_seed = 1;
    double g_lo = 0.0, g_hi = 0.0;
    gen->add_option("--kind", g_kind, "stokes|heat|pme|stefan|correlated_mog");
    gen->add_option("--n", g_n, "number of samples");
    gen->add_option("--nx", g_nx);
    gen->add_option("--nt", g_nt);
    gen->add_option("--seed", g_seed);
    gen->add_option("--coeff-lo", g_lo, "coefficient range override");
    gen->add_option("--coeff-hi", g_hi);
    gen->add_option("--out", g_out, "output directory");
    gen->add_option("--name", g_name, "dataset name");

    // --- train-teacher ---
    auto* tt = app.add_subcommand("train-teacher", "flow-matching training of the teacher");
    std::string t_data = "data", t_name = "train", t_sched = "linear", t_out = "teacher.ckpt";
    std::string t_trace;
    std::vector<int> t_hidden = {96, 96};
    int t_temb = 32, t_iters = 2500, t_batch = 32;
    double t_lr = 2e-3;
    std::uint64_t t_seed = 1;
    tt->add_option("--data", t_data, "dataset directory");
    tt->add_option("--name", t_name, "dataset name");
    tt->add_option("--schedule", t_sched, "linear|vp|subvp");
    tt->add_option("--hidden", t_hidden);
    tt->add_option("--time-embed", t_temb);
    tt->add_option("--iters", t_iters);
    tt->add_option("--batch", t_batch);
    tt->add_option("--lr", t_lr);
    tt->add_option("--seed", t_seed);
    tt->add_option("--out", t_out, "checkpoint path");
    tt->add_option("--trace", t_trace, "loss trace CSV path");

    // --- distill ---
    auto* di = app.add_subcommand("distill", "distill a one-step student");
    std::string d_teacher = "teacher.ckpt", d_kind = "stokes", d_out = "student.ckpt", d_trace;
    int d_nx = 16, d_nt = 16, d_epochs = 400, d_refresh = 100, d_pairs = 256, d_batch = 32;
    int d_steps = 100;
    std::vector<int> d_hidden = {96, 96};
    double d_lambda = 10.0, d_lr = 1e-3;
    std::uint64_t d_seed = 1;
    di->add_option("--teacher", d_teacher);
    di->add_option("--kind", d_kind, "dataset kind for the residual operator");
    di->add_option("--nx", d_nx);
    di->add_option("--nt", d_nt);
    di->add_option("--lambda-train", d_lambda);
    di->add_option("--epochs", d_epochs);
    di->add_option("--refresh-interval", d_refresh);
    di->add_option("--pairs", d_pairs, "pairs per refresh");
    di->add_option("--batch", d_batch);
    di->add_option("--lr", d_lr);
    di->add_option("--teacher-steps", d_steps);
    di->add_option("--hidden", d_hidden);
    di->add_option("--seed", d_seed);
    di->add_option("--out", d_out);
    di->add_option("--trace", d_trace, "per-epoch loss CSV");

    // --- sample ---
    auto* sa = app.add_subcommand("sample", "draw samples from a model");
    std::string s_model = "teacher.ckpt", s_method = "vanilla", s_kind = "stokes", s_out = "samples";
    int s_n = 16, s_steps = 100, s_nx = 16, s_nt = 16, s_dflow_iters = 50, s_refine = 0;
    double s_weight = 1.0, s_refine_eta = 1e-2;
    std::uint64_t s_seed = 1;
    sa->add_option("--model", s_model, "teacher or student checkpoint");
    sa->add_option("--method", s_method, "vanilla|dps|eci|dflow|student");
    sa->add_option("--kind", s_kind);
    sa->add_option("--nx", s_nx);
    sa->add_option("--nt", s_nt);
    sa->add_option("--n", s_n);
    sa->add_option("--steps", s_steps);
    sa->add_option("--weight", s_weight, "guidance weight (dps) or lambda (dflow)");
    sa->add_option("--dflow-iters", s_dflow_iters);
    sa->add_option("--refine-steps", s_refine, "student refinement steps");
    sa->add_option("--refine-eta", s_refine_eta);
    sa->add_option("--seed", s_seed);
    sa->add_option("--out", s_out, "output directory");

    // --- solve ---
    auto* so = app.add_subcommand("solve", "conditional forward/inverse/reconstruction");
    std::string so_student = "student.ckpt", so_task = "forward", so_kind = "stokes";
    std::string so_obs, so_mask, so_optim = "lbfgs", so_out = "solve";
    int so_nx = 16, so_nt = 16, so_iters = 100, so_restarts = 1;
    double so_lambda = 1.0, so_step = 0.0, so_rate = 0.2;
    std::uint64_t so_seed = 1;
    so->add_option("--student", so_student);
    so->add_option("--task", so_task, "simulate|forward|inverse|reconstruct");
    so->add_option("--kind", so_kind);
    so->add_option("--nx", so_nx);
    so->add_option("--nt", so_nt);
    so->add_option("--obs", so_obs, "observation PFD (flat layout)");
    so->add_option("--mask", so_mask, "mask PFD (flat layout)");
    so->add_option("--mask-rate", so_rate, "observed fraction for reconstruct masks");
    so->add_option("--lambda-infer", so_lambda);
    so->add_option("--iters", so_iters);
    so->add_option("--optimizer", so_optim, "gd|lbfgs");
    so->add_option("--step", so_step);
    so->add_option("--restarts", so_restarts);
    so->add_option("--seed", so_seed);
    so->add_option("--out", so_out, "output directory");

    // --- jensen ---
    auto* je = app.add_subcommand("jensen", "Jensen's-gap analytics on the MoG");
    auto* je_gap = je->add_subcommand("gap", "DPS vs conditional velocity discrepancy");
    std::string jg_sched = "linear", jg_out = "jensen";
    int jg_points = 2000, jg_hist = 10000, jg_steps = 500;
    double jg_weight = 0.035;
    bool jg_svg = false;
    std::uint64_t jg_seed = 1;
    je_gap->add_option("--schedule", jg_sched);
    je_gap->add_option("--weight", jg_weight);
    je_gap->add_option("--points", jg_points);
    je_gap->add_option("--hist-samples", jg_hist);
    je_gap->add_option("--steps", jg_steps);
    je_gap->add_option("--seed", jg_seed);
    je_gap->add_option("--out", jg_out);
    je_gap->add_flag("--svg", jg_svg, "emit SVG plots");

    auto* je_cor = je->add_subcommand("correlated", "correlated-MoG constraint study");
    std::string jc_out = "jensen";
    CorrelatedMogConfig jc_cfg;
    bool jc_svg = false;
    je_cor->add_option("--seed", jc_cfg.seed);
    je_cor->add_option("--pairs", jc_cfg.n_pairs);
    je_cor->add_option("--epochs", jc_cfg.student_epochs);
    je_cor->add_option("--eval-samples", jc_cfg.eval_samples);
    je_cor->add_option("--dps-steps", jc_cfg.dps_steps);
    je_cor->add_option("--dps-weight", jc_cfg.dps_weight);
    je_cor->add_option("--lbfgs-iters", jc_cfg.lbfgs_iters);
    je_cor->add_option("--out", jc_out);
    je_cor->add_flag("--svg", jc_svg);
    je->require_subcommand(1);

    // --- eval ---
    auto* ev = app.add_subcommand("eval", "MMSE/SMSE/PDE error of sample sets");
    std::string e_gen, e_ref, e_kind = "stokes", e_out = "metrics.csv";
    int e_nx = 16, e_nt = 16;
    ev->add_option("--generated", e_gen, "PFD of generated flat samples")->required();
    ev->add_option("--reference", e_ref, "PFD of reference flat samples")->required();
    ev->add_option("--kind", e_kind);
    ev->add_option("--nx", e_nx);
    ev->add_option("--nt", e_nt);
    ev->add_option("--out", e_out);

    // --- report ---
    auto* re = app.add_subcommand("report", "render metrics CSV as Markdown/SVG");
    std::string r_csv, r_out = "report.md", r_svg, r_x, r_y;
    re->add_option("--csv", r_csv)->required();
    re->add_option("--out", r_out, "markdown output");
    re->add_option("--svg", r_svg, "optional SVG line plot");
    re->add_option("--x", r_x, "column for the SVG x axis");
    re->add_option("--y", r_y, "column for the SVG y axis");

    // --- run ---
    auto* ru = app.add_subcommand("run", "full experiment from a config file");
    std::string run_config;
    ru->add_option("--config", run_config, "experiment config file")->required();

    CLI11_PARSE(app, argc, argv);
    exec::set_mode(exec_mode == "serial" ? exec::Mode::serial : exec::Mode::openmp);

    try {
        if (*gen) {
            const DatasetKind kind = dataset_kind_from_string(g_kind);
            DatasetSpec spec{kind, g_n, default_grid(kind, g_nx, g_nt), g_seed, g_lo, g_hi};
            const auto samples = generate_dataset(spec);
            save_dataset(resolve_out(g_out), g_name, spec, samples);
            std::cout << "wrote " << samples.size() << " samples to "
                      << (resolve_out(g_out) / (g_name + ".pfd")) << "\n";
        } else if (*tt) {
            const auto data = flatten_all(load_dataset(resolve_out(t_data), t_name));
            const int dim = static_cast<int>(data.front().size());
            RngSource rng(t_seed);
            RngSource init = rng.child("teacher-init");
            TeacherModel model(make_net(dim, t_hidden, dim, Activation::relu, t_temb, init),
                               DiffusionSchedule{schedule_kind_from_string(t_sched)});
            RngSource train_rng = rng.child("teacher-train");
            std::vector<double> trace;
            model = train_teacher(std::move(model), data, {t_iters, t_batch, t_lr}, train_rng,
                                  &trace);
            save_checkpoint(resolve_out(t_out), model.net, t_sched);
            if (!t_trace.empty()) write_loss_trace_csv(resolve_out(t_trace), trace);
            std::cout << "teacher saved to " << resolve_out(t_out) << " (final loss "
                      << (trace.empty() ? 0.0 : trace.back()) << ")\n";
        } else if (*di) {
            TeacherModel teacher = load_teacher(resolve_out(d_teacher).string());
            const ResidualOperator op = operator_for(d_kind, d_nx, d_nt);
            if (static_cast<int>(op.flat_size()) != teacher.dim())
                throw std::runtime_error("teacher width does not match the residual grid");
            DistillConfig dc;
            dc.lambda_train = d_lambda;
            dc.epochs = d_epochs;
            dc.refresh_interval = d_refresh;
            dc.pairs_per_refresh = d_pairs;
            dc.batch_size = d_batch;
            dc.lr = d_lr;
            dc.teacher_steps = d_steps;
            dc.hidden = d_hidden;
            RngSource rng(d_seed);
            DistillTrace trace;
            StudentModel student = train_student(teacher, op, dc, rng, nullptr, &trace);
            save_checkpoint(resolve_out(d_out), student.net, "none");
            if (!d_trace.empty()) {
                std::ofstream os(resolve_out(d_trace));
                os << "epoch,total,reg,pde\n";
                os.precision(17);
                for (std::size_t i = 0; i < trace.total.size(); ++i)
                    os << i << ',' << trace.total[i] << ',' << trace.reg[i] << ','
                       << trace.pde[i] << '\n';
            }
            std::cout << "student saved to " << resolve_out(d_out) << " after "
                      << trace.epochs_run << " epochs"
                      << (trace.early_stopped ? " (early stop)" : "") << "\n";
        } else if (*sa) {
            const ResidualOperator op = operator_for(s_kind, s_nx, s_nt);
            const ConstraintOp constraint = residual_constraint(op);
            const fs::path out = resolve_out(s_out);
            fs::create_directories(out);
            NfeCounter nfe;
            RngSource rng(s_seed);
            const RngSource eps_root = RngSource(rng.next_u64());
            Ensemble gen(s_n);
            if (s_method == "student") {
                StudentModel student = load_student(resolve_out(s_model).string());
                exec::par_for(gen.size(), [&](std::size_t i) {
                    RngSource r = eps_root.child(i);
                    std::vector<double> eps = r.normal_vec(student.dim());
                    gen[i] = s_refine > 0 ? refine_noise(student, eps, constraint, s_refine,
                                                         s_refine_eta, &nfe)
                                                .sample
                                          : student.map(eps, &nfe);
                });
            } else {
                TeacherModel teacher = load_teacher(resolve_out(s_model).string());
                const int dim = teacher.dim();
                const auto project = bc_projection(op);
                exec::par_for(gen.size(), [&](std::size_t i) {
                    RngSource r = eps_root.child(i);
                    std::vector<double> eps = r.normal_vec(dim);
                    if (s_method == "vanilla")
                        gen[i] = euler_sample(teacher, eps, s_steps, &nfe).x0;
                    else if (s_method == "dps")
                        gen[i] = dps_sample(teacher, eps, s_steps, constraint, s_weight, nullptr,
                                            nullptr, 0.0, &nfe);
                    else if (s_method == "eci")
                        gen[i] = eci_sample(teacher, eps, s_steps, project, &nfe);
                    else if (s_method == "dflow")
                        gen[i] = dflow_optimize(teacher, eps, constraint,
                                                {s_steps, s_dflow_iters, 0.1, s_weight, 1e6,
                                                 nullptr, nullptr},
                                                &nfe)
                                     .sample;
                    else
                        throw std::runtime_error("unknown method " + s_method);
                });
            }
            write_pfd(out / (s_method + ".pfd"),
                      GridSpec{static_cast<int>(gen.front().size()), 1, 1.0, 1.0}, gen);
            const double pde = ensemble_pde_error(constraint, gen);
            std::ofstream os(out / (s_method + ".csv"));
            os << "method,n,steps,nfe,pde_error\n";
            os.precision(17);
            os << s_method << ',' << s_n << ',' << s_steps << ',' << nfe.count() << ',' << pde
               << '\n';
            std::cout << s_method << ": " << s_n << " samples, NFE " << nfe.count()
                      << ", mean residual " << pde << "\n";
        } else if (*so) {
            StudentModel student = load_student(resolve_out(so_student).string());
            const ResidualOperator op = operator_for(so_kind, so_nx, so_nt);
            if (static_cast<int>(op.flat_size()) != student.dim())
                throw std::runtime_error("student width does not match the residual grid");
            RngSource rng(so_seed);
            TaskSpec ts;
            ts.task = task_from_string(so_task);
            if (!so_obs.empty()) {
                ts.observation = read_flat_pfd(resolve_out(so_obs));
            } else {
                ts.observation.assign(op.flat_size(), 0.0);
            }
            if (!so_mask.empty()) {
                ts.mask.entries = read_flat_pfd(resolve_out(so_mask));
            } else {
                RngSource mr = rng.child("mask");
                ts.mask = make_task_mask(ts.task, op, mr, so_rate);
            }
            ts.lambda_infer = so_lambda;
            ts.n_iters = so_iters;
            ts.optimizer = so_optim == "gd" ? InferOptimizer::gradient_descent
                                            : InferOptimizer::lbfgs;
            ts.step_size = so_step;
            ts.restarts = so_restarts;
            NfeCounter nfe;
            RngSource er = rng.child("solve");
            const SolveResult res = solve_conditional(student, ts, op, er, &nfe);
            const fs::path out = resolve_out(so_out);
            fs::create_directories(out);
            write_flat_pfd(out / "solution.pfd", res.output);
            std::ofstream os(out / "solve_metrics.csv");
            os << "task,objective,pde_error,nfe\n";
            os.precision(17);
            os << so_task << ',' << res.objective << ','
               << residual_norm_flat(op, res.output) << ',' << res.nfe << '\n';
            std::cout << so_task << ": objective " << res.objective << ", residual "
                      << residual_norm_flat(op, res.output) << ", NFE " << res.nfe << "\n";
        } else if (*je) {
            if (*je_gap) {
                GapConfig cfg;
                cfg.n_points = jg_points;
                cfg.n_hist_samples = jg_hist;
                cfg.n_euler_steps = jg_steps;
                cfg.guidance.weight = jg_weight;
                RngSource rng(jg_seed);
                const MoGSpec spec = make_line_mog();
                const DiffusionSchedule sched{schedule_kind_from_string(jg_sched)};
                const GapReport rep = gap_metrics(spec, sched, cfg, rng);
                const fs::path out = resolve_out(jg_out);
                fs::create_directories(out);
                write_gap_csv(out / ("gap_" + jg_sched + ".csv"), rep);
                write_histogram_csv(out / "dps_x1.csv", rep.dps_unconstrained, "x1");
                write_histogram_csv(out / "ref_x1.csv", rep.ref_unconstrained, "x1");
                write_histogram_csv(out / "dps_x2.csv", rep.dps_constrained, "x2");
                write_histogram_csv(out / "ref_x2.csv", rep.ref_constrained, "x2");
                if (jg_svg) {
                    write_svg_lines(out / ("gap_" + jg_sched + ".svg"),
                                    {{"MAE", rep.t_values, rep.mae},
                                     {"1-cos", rep.t_values, rep.angular}},
                                    "t", "error");
                    write_svg_histogram(out / "hist_x1.svg",
                                        {{"dps", rep.dps_unconstrained},
                                         {"reference", rep.ref_unconstrained}});
                    write_svg_histogram(out / "hist_x2.svg",
                                        {{"dps", rep.dps_constrained},
                                         {"reference", rep.ref_constrained}});
                }
                std::cout << "gap: MAE(t=0.5)/MAE(t=0.05) ratio and histograms written to "
                          << out << "; KS(x1) " << rep.ks_unconstrained << ", off-support "
                          << rep.off_support_mass << "\n";
            } else {
                const CorrelatedMogReport rep = correlated_mog_pipeline(jc_cfg);
                const fs::path out = resolve_out(jc_out);
                write_correlated_report(out, rep);
                if (jc_svg) {
                    write_svg_histogram(out / "correlated_x1.svg", {{"piddm", rep.piddm_x1},
                                                                    {"eci", rep.eci_x1},
                                                                    {"dps", rep.dps_x1},
                                                                    {"target", rep.target_x1}});
                    write_svg_histogram(out / "correlated_dev.svg", {{"piddm", rep.piddm_dev},
                                                                     {"eci", rep.eci_dev},
                                                                     {"dps", rep.dps_dev}});
                }
                if (rep.aborted) {
                    std::cerr << "pipeline aborted during stage " << rep.stage << "\n";
                    return 1;
                }
                std::cout << "correlated MoG: piddm std " << rep.piddm_dev_std
                          << ", dps violations " << rep.dps_violation_frac << ", eci max dev "
                          << rep.eci_max_abs_dev << "\n";
            }
        } else if (*ev) {
            const PfdFile gen_f = read_pfd(resolve_out(e_gen));
            const PfdFile ref_f = read_pfd(resolve_out(e_ref));
            const ResidualOperator op = operator_for(e_kind, e_nx, e_nt);
            const ConstraintOp constraint = residual_constraint(op);
            MetricRecord rec;
            rec.method = e_gen;
            rec.task = "eval";
            rec.mmse_joint = mmse(gen_f.channels, ref_f.channels);
            rec.smse_joint = smse(gen_f.channels, ref_f.channels);
            const std::size_t nu = op.grid.points();
            Ensemble gu, ru_;
            for (const auto& v : gen_f.channels) gu.emplace_back(v.begin(), v.begin() + nu);
            for (const auto& v : ref_f.channels) ru_.emplace_back(v.begin(), v.begin() + nu);
            rec.mmse_u = mmse(gu, ru_);
            rec.smse_u = smse(gu, ru_);
            rec.pde_error = ensemble_pde_error(constraint, gen_f.channels);
            write_metrics_csv(resolve_out(e_out), {&rec, 1});
            std::cout << "eval: mmse " << *rec.mmse_joint << ", smse " << *rec.smse_joint
                      << ", pde " << *rec.pde_error << "\n";
        } else if (*re) {
            const auto rows = read_csv(resolve_out(r_csv));
            std::ofstream os(resolve_out(r_out));
            os << csv_to_markdown(rows);
            if (!r_svg.empty()) {
                if (r_x.empty() || r_y.empty())
                    throw std::runtime_error("report --svg needs --x and --y columns");
                std::size_t xi = 0, yi = 0;
                for (std::size_t c = 0; c < rows.front().size(); ++c) {
                    if (rows.front()[c] == r_x) xi = c;
                    if (rows.front()[c] == r_y) yi = c;
                }
                SvgSeries s;
                s.label = r_y;
                for (std::size_t i = 1; i < rows.size(); ++i) {
                    if (xi >= rows[i].size() || yi >= rows[i].size()) continue;
                    if (rows[i][xi].empty() || rows[i][yi].empty()) continue;
                    s.x.push_back(std::stod(rows[i][xi]));
                    s.y.push_back(std::stod(rows[i][yi]));
                }
                write_svg_lines(resolve_out(r_svg), {s}, r_x, r_y);
            }
            std::cout << "report written to " << resolve_out(r_out) << "\n";
        } else if (*ru) {
            ExperimentConfig cfg = ExperimentConfig::from_config(Config::parse_file(run_config));
            cfg.out_dir = resolve_out(cfg.out_dir.string());
            const ExperimentResult res = run_experiment(cfg);
            std::cout << res.records.size() << " records written to "
                      << (cfg.out_dir / "records.csv") << "\n";
            if (!res.failures.empty()) {
                for (const auto& f : res.failures)
                    std::cerr << "FAILED " << f.method << "/" << f.task << " seed " << f.seed
                              << ": " << f.what << "\n";
                return 1;
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
