#include "piddm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "piddm/exec.hpp"

namespace piddm {

namespace {

void check_ensembles(const Ensemble& a, const Ensemble& b) {
    if (a.empty() || b.empty()) throw std::invalid_argument("metrics: empty ensemble");
    const std::size_t w = a.front().size();
    for (const auto& v : a)
        if (v.size() != w) throw std::invalid_argument("metrics: ragged ensemble");
    for (const auto& v : b)
        if (v.size() != w) throw std::invalid_argument("metrics: ensemble width mismatch");
}

std::vector<double> entry_means(const Ensemble& e) {
    std::vector<double> m(e.front().size(), 0.0);
    for (const auto& v : e)
        for (std::size_t i = 0; i < m.size(); ++i) m[i] += v[i];
    for (double& x : m) x /= static_cast<double>(e.size());
    return m;
}

std::vector<double> entry_stds(const Ensemble& e) {
    const std::vector<double> m = entry_means(e);
    std::vector<double> s(m.size(), 0.0);
    if (e.size() < 2) return s;
    for (const auto& v : e)
        for (std::size_t i = 0; i < m.size(); ++i) {
            const double d = v[i] - m[i];
            s[i] += d * d;
        }
    for (double& x : s) x = std::sqrt(x / static_cast<double>(e.size() - 1));
    return s;
}

}  // namespace

double mmse(const Ensemble& generated, const Ensemble& reference) {
    check_ensembles(generated, reference);
    const std::vector<double> mg = entry_means(generated);
    const std::vector<double> mr = entry_means(reference);
    double s = 0.0;
    for (std::size_t i = 0; i < mg.size(); ++i) s += (mg[i] - mr[i]) * (mg[i] - mr[i]);
    return s / static_cast<double>(mg.size());
}

double smse(const Ensemble& generated, const Ensemble& reference) {
    check_ensembles(generated, reference);
    const std::vector<double> sg = entry_stds(generated);
    const std::vector<double> sr = entry_stds(reference);
    double s = 0.0;
    for (std::size_t i = 0; i < sg.size(); ++i) s += (sg[i] - sr[i]) * (sg[i] - sr[i]);
    return s / static_cast<double>(sg.size());
}

double ensemble_pde_error(const ConstraintOp& constraint, const Ensemble& samples) {
    if (samples.empty()) throw std::invalid_argument("ensemble_pde_error: empty ensemble");
    return exec::sum_reduce(samples.size(),
                            [&](std::size_t i) { return constraint.value(samples[i]); }) /
           static_cast<double>(samples.size());
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double ks_statistic(std::vector<double> samples, const std::function<double(double)>& cdf) {
    if (samples.empty()) throw std::invalid_argument("ks_statistic: no samples");
    std::sort(samples.begin(), samples.end());
    const double n = static_cast<double>(samples.size());
    double ks = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double c = cdf(samples[i]);
        ks = std::max(ks, std::fabs(c - static_cast<double>(i) / n));
        ks = std::max(ks, std::fabs(static_cast<double>(i + 1) / n - c));
    }
    return ks;
}

Histogram make_histogram(std::span<const double> values, double lo, double hi, int bins) {
    if (!(hi > lo) || bins <= 0) throw std::invalid_argument("make_histogram: bad range");
    Histogram h;
    h.lo = lo, h.hi = hi;
    h.counts.assign(static_cast<std::size_t>(bins), 0);
    for (double v : values) {
        ++h.total;
        if (v < lo) {
            ++h.underflow;
        } else if (v >= hi) {
            ++h.overflow;
        } else {
            const auto b = static_cast<std::size_t>((v - lo) / (hi - lo) * bins);
            ++h.counts[std::min(b, h.counts.size() - 1)];
        }
    }
    return h;
}

void write_histogram_csv(const std::filesystem::path& path, const Histogram& hist,
                         const std::string& value_name) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << value_name << ",count,density\n";
    os.precision(17);
    const double bin_w = (hist.hi - hist.lo) / hist.counts.size();
    for (std::size_t b = 0; b < hist.counts.size(); ++b) {
        const double dens =
            hist.total > 0 ? hist.counts[b] / (bin_w * hist.total) : 0.0;
        os << hist.center(b) << ',' << hist.counts[b] << ',' << dens << '\n';
    }
}

namespace {
void put_opt(std::ostream& os, const std::optional<double>& v) {
    os << ',';
    if (v) os << *v;
}
}  // namespace

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricRecord> records) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << kMetricsCsvHeader << '\n';
    os.precision(17);
    for (const auto& r : records) {
        os << r.method << ',' << r.task << ',' << r.seed;
        put_opt(os, r.mmse_u);
        put_opt(os, r.mmse_joint);
        put_opt(os, r.smse_u);
        put_opt(os, r.smse_joint);
        put_opt(os, r.pde_error);
        put_opt(os, r.mse);
        os << ',' << r.nfe << ',' << r.wall_s << '\n';
    }
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read " + path.string());
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.emplace_back();
        rows.push_back(std::move(cells));
    }
    return rows;
}

std::string csv_to_markdown(const std::vector<std::vector<std::string>>& rows) {
    if (rows.empty()) return "";
    std::size_t cols = 0;
    for (const auto& r : rows) cols = std::max(cols, r.size());
    std::ostringstream os;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        os << '|';
        for (std::size_t c = 0; c < cols; ++c)
            os << ' ' << (c < rows[i].size() ? rows[i][c] : "") << " |";
        os << '\n';
        if (i == 0) {
            os << '|';
            for (std::size_t c = 0; c < cols; ++c) os << " --- |";
            os << '\n';
        }
    }
    return os.str();
}

}  // namespace piddm
