#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace piddm {

enum class ScheduleKind { linear, vp, subvp };

// Interpolation coefficients x_t = alpha(t) x0 + sigma(t) eps and their time
// derivatives. VP / sub-VP use beta(t) = beta_min + t (beta_max - beta_min).
struct DiffusionSchedule {
    ScheduleKind kind = ScheduleKind::linear;
    double beta_min = 0.1, beta_max = 20.0;

    double beta(double t) const { return beta_min + t * (beta_max - beta_min); }
    double beta_integral(double t) const {
        return beta_min * t + 0.5 * t * t * (beta_max - beta_min);
    }

    double alpha(double t) const {
        switch (kind) {
            case ScheduleKind::linear: return 1.0 - t;
            case ScheduleKind::vp:
            case ScheduleKind::subvp: return std::exp(-0.5 * beta_integral(t));
        }
        return 0.0;
    }

    double sigma(double t) const {
        switch (kind) {
            case ScheduleKind::linear: return t;
            case ScheduleKind::vp: return std::sqrt(1.0 - std::exp(-beta_integral(t)));
            case ScheduleKind::subvp: return 1.0 - std::exp(-beta_integral(t));
        }
        return 0.0;
    }

    double dalpha(double t) const {
        switch (kind) {
            case ScheduleKind::linear: return -1.0;
            case ScheduleKind::vp:
            case ScheduleKind::subvp: return -0.5 * beta(t) * alpha(t);
        }
        return 0.0;
    }

    double dsigma(double t) const {
        switch (kind) {
            case ScheduleKind::linear: return 1.0;
            case ScheduleKind::vp: {
                const double e = std::exp(-beta_integral(t));
                return beta(t) * e / (2.0 * std::sqrt(1.0 - e));
            }
            case ScheduleKind::subvp: return beta(t) * std::exp(-beta_integral(t));
        }
        return 0.0;
    }

    // Denominator of the posterior-mean-from-velocity conversion.
    double tweedie_denominator(double t) const {
        return dsigma(t) * alpha(t) - dalpha(t) * sigma(t);
    }
};

inline std::string to_string(ScheduleKind k) {
    switch (k) {
        case ScheduleKind::linear: return "linear";
        case ScheduleKind::vp: return "vp";
        case ScheduleKind::subvp: return "subvp";
    }
    return "?";
}

inline ScheduleKind schedule_kind_from_string(const std::string& s) {
    if (s == "linear") return ScheduleKind::linear;
    if (s == "vp") return ScheduleKind::vp;
    if (s == "subvp") return ScheduleKind::subvp;
    throw std::invalid_argument("unknown schedule kind: " + s);
}

}  // namespace piddm
