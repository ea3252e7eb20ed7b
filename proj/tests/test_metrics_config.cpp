#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "piddm/config.hpp"
#include "piddm/experiment.hpp"
#include "piddm/metrics.hpp"

using namespace piddm;

TEST_CASE("mmse basics and a hand-computed toy case") {
    const Ensemble ref = {{0.0, 0.0}, {3.0, 3.0}, {6.0, 9.0}};  // means (3, 4)
    CHECK(mmse(ref, ref) == 0.0);

    Ensemble shifted = ref;
    for (auto& v : shifted)
        for (double& x : v) x += 2.0;
    CHECK(mmse(shifted, ref) == doctest::Approx(4.0).epsilon(1e-12));

    // hand arithmetic: gen means (2, 1), ref means (3, 4)
    const Ensemble gen = {{1.0, 0.0}, {2.0, 1.0}, {3.0, 2.0}};
    // ((2-3)^2 + (1-4)^2) / 2 = (1 + 9) / 2 = 5
    CHECK(mmse(gen, ref) == doctest::Approx(5.0).epsilon(1e-12));
    CHECK_THROWS_AS(mmse(gen, Ensemble{{1.0}}), std::invalid_argument);
}

TEST_CASE("smse basics, doubling rule, and hand-computed case") {
    const Ensemble ref = {{0.0, 1.0}, {2.0, 3.0}, {4.0, 5.0}};  // stds (2, 2)
    CHECK(smse(ref, ref) == 0.0);

    // doubling a mean-centered ensemble doubles every entry std
    Ensemble centered = {{-1.0, -2.0}, {0.0, 0.0}, {1.0, 2.0}};
    Ensemble doubled = centered;
    for (auto& v : doubled)
        for (double& x : v) x *= 2.0;
    // smse = mean over entries of (2s - s)^2 = mean s^2; stds are (1, 2)
    CHECK(smse(doubled, centered) == doctest::Approx((1.0 + 4.0) / 2.0).epsilon(1e-12));
}

TEST_CASE("mmse and smse are permutation invariant") {
    RngSource rng(101);
    Ensemble a, b;
    for (int i = 0; i < 6; ++i) a.push_back(rng.normal_vec(5));
    for (int i = 0; i < 7; ++i) b.push_back(rng.normal_vec(5));
    Ensemble ap = {a[3], a[0], a[5], a[1], a[4], a[2]};
    CHECK(mmse(a, b) == doctest::Approx(mmse(ap, b)).epsilon(1e-14));
    CHECK(smse(a, b) == doctest::Approx(smse(ap, b)).epsilon(1e-14));
}

TEST_CASE("ks statistic distinguishes right and wrong references") {
    RngSource rng(102);
    std::vector<double> u;
    for (int i = 0; i < 20000; ++i) u.push_back(rng.uniform());
    const double good = ks_statistic(u, [](double v) { return std::clamp(v, 0.0, 1.0); });
    CHECK(good < 0.015);
    const double bad = ks_statistic(u, [](double v) { return normal_cdf(v); });
    CHECK(bad > 0.1);
}

TEST_CASE("histograms count and normalize") {
    const std::vector<double> vals = {-1.5, 0.1, 0.2, 0.3, 0.9, 2.5};
    const Histogram h = make_histogram(vals, 0.0, 1.0, 4);
    CHECK(h.underflow == 1);
    CHECK(h.overflow == 1);
    CHECK(h.counts[0] == 2);  // 0.1, 0.2
    CHECK(h.counts[1] == 1);  // 0.3
    CHECK(h.counts[3] == 1);  // 0.9
    CHECK(h.total == 6);
    CHECK(h.center(0) == doctest::Approx(0.125));
}

TEST_CASE("metric records serialize with a stable header") {
    MetricRecord r;
    r.method = "vanilla";
    r.task = "generate";
    r.seed = 7;
    r.mmse_u = 0.25;
    r.pde_error = 1.5;
    r.nfe = 100.0;
    const auto path = std::filesystem::temp_directory_path() / "piddm_metrics_test.csv";
    write_metrics_csv(path, {&r, 1});
    const auto rows = read_csv(path);
    REQUIRE(rows.size() == 2);
    std::ostringstream hdr;
    for (std::size_t i = 0; i < rows[0].size(); ++i)
        hdr << (i ? "," : "") << rows[0][i];
    CHECK(hdr.str() == kMetricsCsvHeader);
    CHECK(rows[1][0] == "vanilla");
    CHECK(rows[1][4] == "");  // absent mmse_joint stays empty
    CHECK(std::stod(rows[1][3]) == 0.25);
    std::filesystem::remove(path);

    const std::string md = csv_to_markdown(rows);
    CHECK(md.find("| vanilla |") != std::string::npos);
    CHECK(md.find("| --- |") != std::string::npos);
}

TEST_CASE("config parses sections, types, lists and comments") {
    std::istringstream src(R"(# experiment configuration
[experiment]
name = demo
seeds = 1, 2, 3

[teacher]
iters = 120   # inline comment
lr = 2.5e-3
hidden = 16, 8
)");
    const Config c = Config::parse(src);
    CHECK(c.get_str("experiment.name", "") == "demo");
    CHECK(c.get_u64_list("experiment.seeds", {}) ==
          std::vector<std::uint64_t>{1, 2, 3});
    CHECK(c.get_int("teacher.iters", 0) == 120);
    CHECK(c.get_num("teacher.lr", 0.0) == doctest::Approx(2.5e-3));
    CHECK(c.get_int_list("teacher.hidden", {}) == std::vector<int>{16, 8});
    CHECK(c.get_int("teacher.missing", 42) == 42);
    CHECK_THROWS_AS(c.require_str("teacher.missing"), std::runtime_error);

    std::istringstream bad("[teacher\niters = 3\n");
    CHECK_THROWS_AS(Config::parse(bad), std::runtime_error);
}

TEST_CASE("experiment smoke run: records exist and reruns are bit-identical") {
    ExperimentConfig cfg;
    cfg.name = "smoke";
    cfg.out_dir = std::filesystem::temp_directory_path() / "piddm_smoke_run";
    cfg.seeds = {5};
    cfg.methods = {"vanilla"};
    cfg.tasks = {};
    cfg.n_train = 8;
    cfg.n_x = 8;
    cfg.n_t = 8;
    cfg.teacher_hidden = {8};
    cfg.teacher_iters = 0;  // untrained model still yields finite metrics
    cfg.sample_steps = 10;
    cfg.eval_ensemble = 6;
    cfg.eval_tasks = 2;

    const ExperimentResult res = run_experiment(cfg);
    CHECK(res.failures.empty());
    REQUIRE(res.records.size() == 1);
    const MetricRecord& r = res.records[0];
    CHECK(r.method == "vanilla");
    CHECK(std::isfinite(*r.mmse_joint));
    CHECK(std::isfinite(*r.smse_joint));
    CHECK(std::isfinite(*r.pde_error));
    CHECK(*r.pde_error >= 0.0);
    CHECK(r.nfe == 10.0);

    // determinism: the records CSV reproduces byte for byte (wall time
    // differs, so compare all other columns)
    auto strip_wall = [](const std::filesystem::path& p) {
        std::string out;
        for (auto& row : read_csv(p)) {
            for (std::size_t i = 0; i + 1 < row.size(); ++i) out += row[i] + ",";
            out += "\n";
        }
        return out;
    };
    const std::string first = strip_wall(cfg.out_dir / "records.csv");
    run_experiment(cfg);
    const std::string second = strip_wall(cfg.out_dir / "records.csv");
    CHECK(first == second);
    std::filesystem::remove_all(cfg.out_dir);
}
