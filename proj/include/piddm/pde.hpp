#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "piddm/field.hpp"
#include "piddm/rng.hpp"

namespace piddm {

enum class ResidualKind { heat, stokes, burgers, darcy, poisson };

std::string to_string(ResidualKind k);
ResidualKind residual_kind_from_string(const std::string& s);

// Finite-difference residual R(x) = [F[u], w * B[a]]: the PDE operator F is
// evaluated at every grid point with second-order stencils (central inside,
// one-sided at the edges), and the boundary/initial-condition discrepancies
// B are appended, scaled by boundary_weight.
struct ResidualOperator {
    ResidualKind kind = ResidualKind::heat;
    GridSpec grid;
    std::map<std::string, double> params;
    double boundary_weight = 1.0;

    CoeffKind coeff_kind() const;
    std::size_t flat_size() const { return grid.points() + coeff_size(coeff_kind(), grid); }
    std::size_t f_size() const { return grid.points(); }
    std::size_t b_size() const;
    std::size_t residual_size() const { return f_size() + b_size(); }
    double param(const std::string& name) const;
    void validate() const;
};

// Defaults per kind: heat {alpha=3}, stokes {A=2, k=5}, burgers {nu=0.01},
// darcy {q=1}, poisson {}.
ResidualOperator make_residual_operator(ResidualKind kind, const GridSpec& grid);

struct Residual {
    std::vector<double> values;  // [F block | weighted B block]
    std::size_t f_size = 0;

    std::span<const double> f() const { return {values.data(), f_size}; }
    std::span<const double> b() const { return {values.data() + f_size, values.size() - f_size}; }
};

Residual residual_flat(const ResidualOperator& op, std::span<const double> flat);
Residual residual(const ResidualOperator& op, const JointSample& x);

// Mean of squared residual entries (mean keeps weights grid-size invariant).
double residual_norm_flat(const ResidualOperator& op, std::span<const double> flat);
double residual_norm(const ResidualOperator& op, const JointSample& x);

// v = J^T upstream where J = dR/dflat; upstream has residual_size entries.
std::vector<double> residual_vjp_flat(const ResidualOperator& op, std::span<const double> flat,
                                      std::span<const double> upstream);

// Gradient of residual_norm_flat.
std::vector<double> residual_norm_grad_flat(const ResidualOperator& op,
                                            std::span<const double> flat);

// Ones at the u entries that B constrains (initial rows, boundary columns).
// The coefficient block is zero here; task masks add it separately.
ObservationMask boundary_mask(const ResidualOperator& op);

// Differentiable constraint |R(x)|^2 with its gradient, the shape the
// distillation and inference objectives consume. PDE residuals and the
// point-constraint of the correlated-MoG study both fit it.
struct ConstraintOp {
    std::function<double(std::span<const double>)> value;
    std::function<std::vector<double>(std::span<const double>)> grad;

    explicit operator bool() const { return static_cast<bool>(value); }
};

ConstraintOp residual_constraint(const ResidualOperator& op);
// (x[0] - x[1])^2 on 2-D points.
ConstraintOp pair_deviation_constraint();

// Projection onto B = 0: overwrites the boundary-tied u entries with the
// values implied by the sample's own coefficient block (ECI's correction
// operator for unconditional generation).
std::function<std::vector<double>(std::span<const double>)> bc_projection(
    const ResidualOperator& op);

// --- analytic datasets ----------------------------------------------------

enum class DatasetKind { stokes, heat, pme, stefan, correlated_mog };

std::string to_string(DatasetKind k);
DatasetKind dataset_kind_from_string(const std::string& s);

struct DatasetSpec {
    DatasetKind kind = DatasetKind::stokes;
    int n_samples = 0;
    GridSpec grid;
    std::uint64_t seed = 0;
    double coeff_lo = 0.0, coeff_hi = 0.0;  // 0,0 selects the per-kind default range

    void validate() const;
};

// Default grid (extents per problem statement) for a dataset kind.
GridSpec default_grid(DatasetKind kind, int n_x, int n_t);

// Closed-form solutions evaluated on the grid; coefficient sampled per kind
// (omega ~ U[2,8], phi ~ U[0,pi], m ~ U[1,5], u* ~ U[0.55,0.7]).
std::vector<JointSample> generate_dataset(const DatasetSpec& spec);

// Residual operator matching a dataset kind (heat<->heat, stokes<->stokes).
ResidualOperator dataset_operator(const DatasetSpec& spec);

// Stefan front parameter: solves (1-u*)/sqrt(pi) = u* erf(a) a exp(a^2).
double stefan_alpha(double u_star);

// Sidecar manifest (sample index, coefficient value, seed) and PFD payload.
void save_dataset(const std::filesystem::path& dir, const std::string& name,
                  const DatasetSpec& spec, const std::vector<JointSample>& samples);
std::vector<JointSample> load_dataset(const std::filesystem::path& dir, const std::string& name);

}  // namespace piddm
