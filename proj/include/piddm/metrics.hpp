#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "piddm/pde.hpp"

namespace piddm {

using Ensemble = std::vector<std::vector<double>>;

// Mean over entries of the squared difference of per-entry ensemble means.
double mmse(const Ensemble& generated, const Ensemble& reference);
// Same for per-entry sample standard deviations (unbiased, n-1).
double smse(const Ensemble& generated, const Ensemble& reference);
// Mean constraint value over the ensemble.
double ensemble_pde_error(const ConstraintOp& constraint, const Ensemble& samples);

double normal_cdf(double z);
// Kolmogorov-Smirnov statistic of the samples against a reference CDF.
double ks_statistic(std::vector<double> samples, const std::function<double(double)>& cdf);

struct Histogram {
    double lo = 0.0, hi = 1.0;
    std::vector<long long> counts;
    long long total = 0;
    long long underflow = 0, overflow = 0;

    double center(std::size_t bin) const {
        return lo + (hi - lo) * (static_cast<double>(bin) + 0.5) / counts.size();
    }
};

Histogram make_histogram(std::span<const double> values, double lo, double hi, int bins);
void write_histogram_csv(const std::filesystem::path& path, const Histogram& hist,
                         const std::string& value_name);

struct MetricRecord {
    std::string method;
    std::string task;
    std::uint64_t seed = 0;
    std::optional<double> mmse_u, mmse_joint;
    std::optional<double> smse_u, smse_joint;
    std::optional<double> pde_error;
    std::optional<double> mse;
    double nfe = 0.0;
    double wall_s = 0.0;
};

inline constexpr const char* kMetricsCsvHeader =
    "method,task,seed,mmse_u,mmse_joint,smse_u,smse_joint,pde_error,mse,nfe,wall_s";

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricRecord> records);

// Minimal CSV reader for the report verb (no quoting, comma separated).
std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path);
std::string csv_to_markdown(const std::vector<std::vector<std::string>>& rows);

}  // namespace piddm
