#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace piddm {

// Uniform space-time grid, endpoints included. For static 2-D problems
// (Darcy, Poisson) the "t" axis is the second spatial axis.
struct GridSpec {
    int n_x = 0;
    int n_t = 1;
    double extent_x = 1.0;
    double extent_t = 1.0;

    double hx() const { return extent_x / (n_x - 1); }
    double ht() const { return n_t > 1 ? extent_t / (n_t - 1) : extent_t; }
    std::size_t points() const { return static_cast<std::size_t>(n_x) * n_t; }
    double x(int ix) const { return ix * hx(); }
    double t(int it) const { return n_t > 1 ? it * ht() : 0.0; }

    void validate() const;
    bool operator==(const GridSpec&) const = default;
};

// Scalar field sampled on a grid, row-major with time as the slow axis:
// values[it * n_x + ix].
struct Field {
    GridSpec grid;
    std::vector<double> values;

    double& at(int it, int ix) { return values[static_cast<std::size_t>(it) * grid.n_x + ix]; }
    double at(int it, int ix) const { return values[static_cast<std::size_t>(it) * grid.n_x + ix]; }

    static Field zeros(const GridSpec& g) { return Field{g, std::vector<double>(g.points(), 0.0)}; }
    void validate() const;
};

// How the coefficient block of a joint sample is laid out.
enum class CoeffKind {
    none,        // no coefficient (e.g. plain 2-D points)
    scalar,      // one trailing value (omega, phi, m, u*)
    field_space, // spatial profile, length n_x (Burgers initial condition)
    field_full,  // full-grid field, length n_x * n_t (Darcy, Poisson)
};

std::size_t coeff_size(CoeffKind kind, const GridSpec& grid);
std::string to_string(CoeffKind kind);
CoeffKind coeff_kind_from_string(const std::string& s);

// Solution/coefficient pair x0 = (u, a); the object all constraints act on.
struct JointSample {
    Field u;
    CoeffKind coeff_kind = CoeffKind::none;
    std::vector<double> coeff;

    std::size_t flat_size() const { return u.grid.points() + coeff.size(); }
    void validate() const;
};

// Flat layout is all of u (time-major) followed by the coefficient block.
std::vector<double> flatten(const JointSample& x);
JointSample unflatten(std::span<const double> flat, const GridSpec& grid, CoeffKind kind);

struct ObservationMask {
    std::vector<double> entries;  // 0.0 or 1.0, aligned with the flat layout

    std::size_t size() const { return entries.size(); }
    void validate() const;
    static ObservationMask zeros(std::size_t n) { return {std::vector<double>(n, 0.0)}; }
    static ObservationMask ones(std::size_t n) { return {std::vector<double>(n, 1.0)}; }
};

// out_i = obs_i where m_i = 1, else x_i. All three must share a length.
std::vector<double> apply_mask(std::span<const double> x, std::span<const double> obs,
                               const ObservationMask& m);

// --- PFD v1 container ---------------------------------------------------
//
// ASCII header line "PFD1 n_x n_t extent_x extent_t channels" followed by
// channels * n_x * n_t little-endian IEEE-754 doubles, row-major, channels
// back to back. Flat vectors (masks, observations, parameter blocks) are
// stored with n_x = length, n_t = 1.

struct PfdFile {
    GridSpec grid;
    std::vector<std::vector<double>> channels;
};

void write_pfd(const std::filesystem::path& path, const GridSpec& grid,
               const std::vector<std::vector<double>>& channels);
PfdFile read_pfd(const std::filesystem::path& path);

void write_flat_pfd(const std::filesystem::path& path, std::span<const double> values);
std::vector<double> read_flat_pfd(const std::filesystem::path& path);

}  // namespace piddm
