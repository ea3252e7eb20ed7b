#include "piddm/pde.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "piddm/exec.hpp"

namespace piddm {

namespace {

constexpr double kPi = std::numbers::pi;

// Second-order stencils. Entry 0 is the evaluation point; coefficients sum
// to zero, and evaluation uses the difference form so constant fields give
// an exact zero.
struct StencilEntry {
    int pos;
    double c;
};

int d1_stencil(int i, int n, double h, StencilEntry out[4]) {
    const double s = 1.0 / (2.0 * h);
    if (i == 0) {
        out[0] = {0, -3.0 * s};
        out[1] = {1, 4.0 * s};
        out[2] = {2, -1.0 * s};
        return 3;
    }
    if (i == n - 1) {
        out[0] = {n - 1, 3.0 * s};
        out[1] = {n - 2, -4.0 * s};
        out[2] = {n - 3, 1.0 * s};
        return 3;
    }
    out[0] = {i, 0.0};
    out[1] = {i + 1, s};
    out[2] = {i - 1, -s};
    return 3;
}

int d2_stencil(int i, int n, double h, StencilEntry out[4]) {
    const double s = 1.0 / (h * h);
    if (i == 0) {
        out[0] = {0, 2.0 * s};
        out[1] = {1, -5.0 * s};
        out[2] = {2, 4.0 * s};
        out[3] = {3, -1.0 * s};
        return 4;
    }
    if (i == n - 1) {
        out[0] = {n - 1, 2.0 * s};
        out[1] = {n - 2, -5.0 * s};
        out[2] = {n - 3, 4.0 * s};
        out[3] = {n - 4, -1.0 * s};
        return 4;
    }
    out[0] = {i, -2.0 * s};
    out[1] = {i + 1, s};
    out[2] = {i - 1, s};
    return 3;
}

double eval_stencil(const double* u, std::size_t base, std::size_t stride,
                    const StencilEntry* e, int m) {
    const double uc = u[base + static_cast<std::size_t>(e[0].pos) * stride];
    double acc = 0.0;
    for (int j = 1; j < m; ++j)
        acc += e[j].c * (u[base + static_cast<std::size_t>(e[j].pos) * stride] - uc);
    return acc;
}

void scatter_stencil(double* adj, std::size_t base, std::size_t stride, const StencilEntry* e,
                     int m, double w) {
    for (int j = 0; j < m; ++j)
        adj[base + static_cast<std::size_t>(e[j].pos) * stride] += w * e[j].c;
}

// Transformed values (e.g. u^2/2 for the Burgers flux) evaluated through a
// stencil; the caller supplies already-transformed data.

// Closed-form solutions; the boundary targets inside the residual operators
// call the same helpers, so generated samples satisfy B exactly.
double stokes_exact_u(double A, double k, double omega, double x, double t) {
    return A * std::exp(-k * x) * std::cos(k * x - omega * t);
}
double heat_exact_u(double alpha, double phi, double x, double t) {
    return std::exp(-alpha * t) * std::sin(x + phi);
}
double pme_exact_u(double m, double x, double t) {
    const double r = t - x;
    return r <= 0.0 ? 0.0 : std::pow(m * r, 1.0 / m);
}
double stefan_exact_u(double u_star, double alpha, double x, double t) {
    if (t <= 0.0) return x == 0.0 ? 1.0 : 0.0;
    const double v = 1.0 - (1.0 - u_star) * std::erf(x / (2.0 * std::sqrt(t))) / std::erf(alpha);
    return v >= u_star ? v : 0.0;
}

}  // namespace

std::string to_string(ResidualKind k) {
    switch (k) {
        case ResidualKind::heat: return "heat";
        case ResidualKind::stokes: return "stokes";
        case ResidualKind::burgers: return "burgers";
        case ResidualKind::darcy: return "darcy";
        case ResidualKind::poisson: return "poisson";
    }
    return "?";
}

ResidualKind residual_kind_from_string(const std::string& s) {
    if (s == "heat") return ResidualKind::heat;
    if (s == "stokes") return ResidualKind::stokes;
    if (s == "burgers") return ResidualKind::burgers;
    if (s == "darcy") return ResidualKind::darcy;
    if (s == "poisson") return ResidualKind::poisson;
    throw std::invalid_argument("unknown residual kind: " + s);
}

CoeffKind ResidualOperator::coeff_kind() const {
    switch (kind) {
        case ResidualKind::heat:
        case ResidualKind::stokes: return CoeffKind::scalar;
        case ResidualKind::burgers: return CoeffKind::field_space;
        case ResidualKind::darcy:
        case ResidualKind::poisson: return CoeffKind::field_full;
    }
    throw std::logic_error("coeff_kind: bad residual kind");
}

std::size_t ResidualOperator::b_size() const {
    switch (kind) {
        case ResidualKind::heat:
        case ResidualKind::stokes:
        case ResidualKind::burgers:
            return static_cast<std::size_t>(grid.n_x) + grid.n_t;
        case ResidualKind::darcy:
        case ResidualKind::poisson:
            return 2 * static_cast<std::size_t>(grid.n_x) + 2 * (grid.n_t - 2);
    }
    throw std::logic_error("b_size: bad residual kind");
}

double ResidualOperator::param(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end())
        throw std::invalid_argument("ResidualOperator: missing parameter " + name);
    if (!std::isfinite(it->second))
        throw std::invalid_argument("ResidualOperator: non-finite parameter " + name);
    return it->second;
}

void ResidualOperator::validate() const {
    grid.validate();
    if (!(boundary_weight >= 0.0))
        throw std::invalid_argument("ResidualOperator: boundary weight must be >= 0");
    if (grid.n_x < 4) throw std::invalid_argument("ResidualOperator: n_x too small for stencils");
    switch (kind) {
        case ResidualKind::heat:
        case ResidualKind::stokes:
        case ResidualKind::burgers:
            if (grid.n_t < 3)
                throw std::invalid_argument("ResidualOperator: n_t too small for time stencils");
            break;
        case ResidualKind::darcy:
        case ResidualKind::poisson:
            if (grid.n_t < 4)
                throw std::invalid_argument("ResidualOperator: n_t too small for 2-D stencils");
            break;
    }
    // touch required parameters so missing/non-finite ones fail early
    switch (kind) {
        case ResidualKind::heat: param("alpha"); break;
        case ResidualKind::stokes: param("A"), param("k"); break;
        case ResidualKind::burgers: param("nu"); break;
        case ResidualKind::darcy: param("q"); break;
        case ResidualKind::poisson: break;
    }
}

ResidualOperator make_residual_operator(ResidualKind kind, const GridSpec& grid) {
    ResidualOperator op;
    op.kind = kind;
    op.grid = grid;
    switch (kind) {
        case ResidualKind::heat: op.params = {{"alpha", 3.0}}; break;
        case ResidualKind::stokes: op.params = {{"A", 2.0}, {"k", 5.0}}; break;
        case ResidualKind::burgers: op.params = {{"nu", 0.01}}; break;
        case ResidualKind::darcy: op.params = {{"q", 1.0}}; break;
        case ResidualKind::poisson: break;
    }
    op.validate();
    return op;
}

namespace {

// Shared assembly/adjoint driver. When `adj` is null this computes the
// residual into `out`; otherwise it scatters upstream^T dR/dflat into adj.
// Keeping both passes in one routine keeps the Jacobian consistent with the
// forward evaluation.
void residual_pass(const ResidualOperator& op, std::span<const double> flat, double* out,
                   std::span<const double> upstream, double* adj) {
    const GridSpec& g = op.grid;
    const int nx = g.n_x, nt = g.n_t;
    const std::size_t np = g.points();
    const double hx = g.hx(), ht = g.ht();
    const double w = op.boundary_weight;
    const double* u = flat.data();
    const double* a = flat.data() + np;
    const bool forward = adj == nullptr;

    auto fval = [&](std::size_t idx) -> double { return forward ? 0.0 : upstream[idx]; };

    switch (op.kind) {
        case ResidualKind::heat:
        case ResidualKind::stokes: {
            double diff;  // diffusivity: alpha (heat) or omega/(2k^2) (stokes)
            double A = 0.0, k = 0.0, omega = 0.0, phi = 0.0;
            if (op.kind == ResidualKind::heat) {
                diff = op.param("alpha");
                phi = a[0];
            } else {
                A = op.param("A");
                k = op.param("k");
                omega = a[0];
                diff = omega / (2.0 * k * k);
            }
            for (int it = 0; it < nt; ++it) {
                for (int ix = 0; ix < nx; ++ix) {
                    const std::size_t p = static_cast<std::size_t>(it) * nx + ix;
                    StencilEntry st[4], sx[4];
                    const int mt = d1_stencil(it, nt, ht, st);
                    const int mx = d2_stencil(ix, nx, hx, sx);
                    const double uxx = eval_stencil(u, static_cast<std::size_t>(it) * nx, 1, sx, mx);
                    if (forward) {
                        const double ut = eval_stencil(u, ix, nx, st, mt);
                        out[p] = ut - diff * uxx;
                    } else {
                        const double ub = fval(p);
                        scatter_stencil(adj, ix, nx, st, mt, ub);
                        scatter_stencil(adj, static_cast<std::size_t>(it) * nx, 1, sx, mx,
                                        -diff * ub);
                        if (op.kind == ResidualKind::stokes)
                            adj[np] += ub * (-uxx / (2.0 * k * k));
                    }
                }
            }
            // B: initial row, then (heat) periodic rows or (stokes) left rows
            for (int ix = 0; ix < nx; ++ix) {
                const std::size_t r = np + ix;
                if (forward) {
                    const double target = op.kind == ResidualKind::heat
                                              ? heat_exact_u(diff, phi, g.x(ix), 0.0)
                                              : stokes_exact_u(A, k, omega, g.x(ix), 0.0);
                    out[r] = w * (u[ix] - target);
                } else {
                    const double ub = fval(r);
                    adj[ix] += w * ub;
                    if (op.kind == ResidualKind::heat)
                        adj[np] += w * ub * (-std::cos(g.x(ix) + phi));
                    // stokes initial row does not involve omega
                }
            }
            for (int it = 0; it < nt; ++it) {
                const std::size_t r = np + nx + it;
                const std::size_t left = static_cast<std::size_t>(it) * nx;
                if (op.kind == ResidualKind::heat) {
                    const std::size_t right = left + nx - 1;
                    if (forward) {
                        out[r] = w * (u[left] - u[right]);
                    } else {
                        const double ub = fval(r);
                        adj[left] += w * ub;
                        adj[right] -= w * ub;
                    }
                } else {
                    if (forward) {
                        out[r] = w * (u[left] - stokes_exact_u(A, k, omega, 0.0, g.t(it)));
                    } else {
                        const double ub = fval(r);
                        adj[left] += w * ub;
                        adj[np] += w * ub * (A * g.t(it) * std::sin(omega * g.t(it)));
                    }
                }
            }
            break;
        }
        case ResidualKind::burgers: {
            const double nu = op.param("nu");
            std::vector<double> half_sq(np);
            for (std::size_t i = 0; i < np; ++i) half_sq[i] = 0.5 * u[i] * u[i];
            for (int it = 0; it < nt; ++it) {
                for (int ix = 0; ix < nx; ++ix) {
                    const std::size_t p = static_cast<std::size_t>(it) * nx + ix;
                    StencilEntry st[4], s1[4], s2[4];
                    const int mt = d1_stencil(it, nt, ht, st);
                    const int m1 = d1_stencil(ix, nx, hx, s1);
                    const int m2 = d2_stencil(ix, nx, hx, s2);
                    const std::size_t row = static_cast<std::size_t>(it) * nx;
                    if (forward) {
                        const double ut = eval_stencil(u, ix, nx, st, mt);
                        const double flux = eval_stencil(half_sq.data(), row, 1, s1, m1);
                        const double uxx = eval_stencil(u, row, 1, s2, m2);
                        out[p] = ut + flux - nu * uxx;
                    } else {
                        const double ub = fval(p);
                        scatter_stencil(adj, ix, nx, st, mt, ub);
                        for (int j = 0; j < m1; ++j) {
                            const std::size_t q = row + s1[j].pos;
                            adj[q] += ub * s1[j].c * u[q];  // d(u^2/2)/du = u
                        }
                        scatter_stencil(adj, row, 1, s2, m2, -nu * ub);
                    }
                }
            }
            for (int ix = 0; ix < nx; ++ix) {
                const std::size_t r = np + ix;
                if (forward) {
                    out[r] = w * (u[ix] - a[ix]);
                } else {
                    const double ub = fval(r);
                    adj[ix] += w * ub;
                    adj[np + ix] -= w * ub;
                }
            }
            for (int it = 0; it < nt; ++it) {
                const std::size_t r = np + nx + it;
                const std::size_t left = static_cast<std::size_t>(it) * nx;
                const std::size_t right = left + nx - 1;
                if (forward) {
                    out[r] = w * (u[left] - u[right]);
                } else {
                    const double ub = fval(r);
                    adj[left] += w * ub;
                    adj[right] -= w * ub;
                }
            }
            break;
        }
        case ResidualKind::poisson:
        case ResidualKind::darcy: {
            const bool darcy = op.kind == ResidualKind::darcy;
            const double q = darcy ? op.param("q") : 0.0;
            for (int it = 0; it < nt; ++it) {
                for (int ix = 0; ix < nx; ++ix) {
                    const std::size_t p = static_cast<std::size_t>(it) * nx + ix;
                    StencilEntry x1[4], x2[4], y1[4], y2[4];
                    const int mx1 = d1_stencil(ix, nx, hx, x1);
                    const int mx2 = d2_stencil(ix, nx, hx, x2);
                    const int my1 = d1_stencil(it, nt, ht, y1);
                    const int my2 = d2_stencil(it, nt, ht, y2);
                    const std::size_t row = static_cast<std::size_t>(it) * nx;
                    const double uxx = eval_stencil(u, row, 1, x2, mx2);
                    const double uyy = eval_stencil(u, ix, nx, y2, my2);
                    if (!darcy) {
                        if (forward) {
                            out[p] = uxx + uyy - a[p];
                        } else {
                            const double ub = fval(p);
                            scatter_stencil(adj, row, 1, x2, mx2, ub);
                            scatter_stencil(adj, ix, nx, y2, my2, ub);
                            adj[np + p] -= ub;
                        }
                        continue;
                    }
                    const double ux = eval_stencil(u, row, 1, x1, mx1);
                    const double uy = eval_stencil(u, ix, nx, y1, my1);
                    const double ax = eval_stencil(a, row, 1, x1, mx1);
                    const double ay = eval_stencil(a, ix, nx, y1, my1);
                    if (forward) {
                        out[p] = -(ax * ux + a[p] * uxx + ay * uy + a[p] * uyy) - q;
                    } else {
                        const double ub = fval(p);
                        scatter_stencil(adj, row, 1, x1, mx1, -ub * ax);
                        scatter_stencil(adj, row, 1, x2, mx2, -ub * a[p]);
                        scatter_stencil(adj, ix, nx, y1, my1, -ub * ay);
                        scatter_stencil(adj, ix, nx, y2, my2, -ub * a[p]);
                        scatter_stencil(adj + np, row, 1, x1, mx1, -ub * ux);
                        scatter_stencil(adj + np, ix, nx, y1, my1, -ub * uy);
                        adj[np + p] += -ub * (uxx + uyy);
                    }
                }
            }
            // Dirichlet edge: u = 0 on the domain boundary
            std::size_t r = np;
            for (int it = 0; it < nt; ++it) {
                for (int ix = 0; ix < nx; ++ix) {
                    if (it != 0 && it != nt - 1 && ix != 0 && ix != nx - 1) continue;
                    const std::size_t p = static_cast<std::size_t>(it) * nx + ix;
                    if (forward) {
                        out[r] = w * u[p];
                    } else {
                        adj[p] += w * fval(r);
                    }
                    ++r;
                }
            }
            break;
        }
    }
}

}  // namespace

Residual residual_flat(const ResidualOperator& op, std::span<const double> flat) {
    op.validate();
    if (flat.size() != op.flat_size())
        throw std::invalid_argument("residual: flat length does not match operator grid");
    Residual r;
    r.f_size = op.f_size();
    r.values.assign(op.residual_size(), 0.0);
    residual_pass(op, flat, r.values.data(), {}, nullptr);
    return r;
}

Residual residual(const ResidualOperator& op, const JointSample& x) {
    x.validate();
    if (!(x.u.grid == op.grid))
        throw std::invalid_argument("residual: sample grid does not match operator grid");
    if (x.coeff_kind != op.coeff_kind())
        throw std::invalid_argument("residual: coefficient layout does not match operator");
    const std::vector<double> flat = flatten(x);
    return residual_flat(op, flat);
}

double residual_norm_flat(const ResidualOperator& op, std::span<const double> flat) {
    const Residual r = residual_flat(op, flat);
    double s = 0.0;
    for (double v : r.values) s += v * v;
    return s / static_cast<double>(r.values.size());
}

double residual_norm(const ResidualOperator& op, const JointSample& x) {
    const Residual r = residual(op, x);
    double s = 0.0;
    for (double v : r.values) s += v * v;
    return s / static_cast<double>(r.values.size());
}

std::vector<double> residual_vjp_flat(const ResidualOperator& op, std::span<const double> flat,
                                      std::span<const double> upstream) {
    op.validate();
    if (flat.size() != op.flat_size())
        throw std::invalid_argument("residual_vjp: flat length mismatch");
    if (upstream.size() != op.residual_size())
        throw std::invalid_argument("residual_vjp: upstream length mismatch");
    std::vector<double> adj(flat.size(), 0.0);
    residual_pass(op, flat, nullptr, upstream, adj.data());
    return adj;
}

std::vector<double> residual_norm_grad_flat(const ResidualOperator& op,
                                            std::span<const double> flat) {
    const Residual r = residual_flat(op, flat);
    std::vector<double> upstream(r.values.size());
    const double scale = 2.0 / static_cast<double>(r.values.size());
    for (std::size_t i = 0; i < r.values.size(); ++i) upstream[i] = scale * r.values[i];
    return residual_vjp_flat(op, flat, upstream);
}

ConstraintOp residual_constraint(const ResidualOperator& op) {
    ConstraintOp c;
    c.value = [op](std::span<const double> x) { return residual_norm_flat(op, x); };
    c.grad = [op](std::span<const double> x) { return residual_norm_grad_flat(op, x); };
    return c;
}

ConstraintOp pair_deviation_constraint() {
    ConstraintOp c;
    c.value = [](std::span<const double> x) {
        const double d = x[0] - x[1];
        return d * d;
    };
    c.grad = [](std::span<const double> x) {
        const double d = x[0] - x[1];
        std::vector<double> g(x.size(), 0.0);
        g[0] = 2.0 * d;
        g[1] = -2.0 * d;
        return g;
    };
    return c;
}

std::function<std::vector<double>(std::span<const double>)> bc_projection(
    const ResidualOperator& op) {
    op.validate();
    return [op](std::span<const double> flat) {
        if (flat.size() != op.flat_size())
            throw std::invalid_argument("bc_projection: flat length mismatch");
        std::vector<double> out(flat.begin(), flat.end());
        const GridSpec& g = op.grid;
        const int nx = g.n_x, nt = g.n_t;
        const std::size_t np = g.points();
        switch (op.kind) {
            case ResidualKind::heat: {
                const double alpha = op.param("alpha"), phi = out[np];
                for (int ix = 0; ix < nx; ++ix) out[ix] = heat_exact_u(alpha, phi, g.x(ix), 0.0);
                for (int it = 0; it < nt; ++it)
                    out[static_cast<std::size_t>(it) * nx + nx - 1] =
                        out[static_cast<std::size_t>(it) * nx];
                break;
            }
            case ResidualKind::stokes: {
                const double A = op.param("A"), k = op.param("k"), omega = out[np];
                for (int ix = 0; ix < nx; ++ix) out[ix] = stokes_exact_u(A, k, omega, g.x(ix), 0.0);
                for (int it = 0; it < nt; ++it)
                    out[static_cast<std::size_t>(it) * nx] = stokes_exact_u(A, k, omega, 0.0, g.t(it));
                break;
            }
            case ResidualKind::burgers: {
                for (int ix = 0; ix < nx; ++ix) out[ix] = out[np + ix];
                for (int it = 0; it < nt; ++it)
                    out[static_cast<std::size_t>(it) * nx + nx - 1] =
                        out[static_cast<std::size_t>(it) * nx];
                break;
            }
            case ResidualKind::darcy:
            case ResidualKind::poisson:
                for (int it = 0; it < nt; ++it)
                    for (int ix = 0; ix < nx; ++ix)
                        if (it == 0 || it == nt - 1 || ix == 0 || ix == nx - 1)
                            out[static_cast<std::size_t>(it) * nx + ix] = 0.0;
                break;
        }
        return out;
    };
}

ObservationMask boundary_mask(const ResidualOperator& op) {
    op.validate();
    ObservationMask m = ObservationMask::zeros(op.flat_size());
    const int nx = op.grid.n_x, nt = op.grid.n_t;
    auto set_point = [&](int it, int ix) { m.entries[static_cast<std::size_t>(it) * nx + ix] = 1.0; };
    switch (op.kind) {
        case ResidualKind::heat:
        case ResidualKind::burgers:
            for (int ix = 0; ix < nx; ++ix) set_point(0, ix);
            for (int it = 0; it < nt; ++it) set_point(it, 0), set_point(it, nx - 1);
            break;
        case ResidualKind::stokes:
            for (int ix = 0; ix < nx; ++ix) set_point(0, ix);
            for (int it = 0; it < nt; ++it) set_point(it, 0);
            break;
        case ResidualKind::darcy:
        case ResidualKind::poisson:
            for (int it = 0; it < nt; ++it)
                for (int ix = 0; ix < nx; ++ix)
                    if (it == 0 || it == nt - 1 || ix == 0 || ix == nx - 1) set_point(it, ix);
            break;
    }
    return m;
}

// --- datasets ---------------------------------------------------------------

std::string to_string(DatasetKind k) {
    switch (k) {
        case DatasetKind::stokes: return "stokes";
        case DatasetKind::heat: return "heat";
        case DatasetKind::pme: return "pme";
        case DatasetKind::stefan: return "stefan";
        case DatasetKind::correlated_mog: return "correlated_mog";
    }
    return "?";
}

DatasetKind dataset_kind_from_string(const std::string& s) {
    if (s == "stokes") return DatasetKind::stokes;
    if (s == "heat") return DatasetKind::heat;
    if (s == "pme") return DatasetKind::pme;
    if (s == "stefan") return DatasetKind::stefan;
    if (s == "correlated_mog") return DatasetKind::correlated_mog;
    throw std::invalid_argument("unknown dataset kind: " + s);
}

void DatasetSpec::validate() const {
    if (n_samples <= 0) throw std::invalid_argument("DatasetSpec: n_samples must be positive");
    if (kind != DatasetKind::correlated_mog) grid.validate();
    if (coeff_lo != 0.0 || coeff_hi != 0.0) {
        if (!(coeff_lo < coeff_hi))
            throw std::invalid_argument("DatasetSpec: bad coefficient range");
    }
}

GridSpec default_grid(DatasetKind kind, int n_x, int n_t) {
    switch (kind) {
        case DatasetKind::stokes: return {n_x, n_t, 1.0, 1.0};
        case DatasetKind::heat: return {n_x, n_t, 2.0 * kPi, 1.0};
        case DatasetKind::pme: return {n_x, n_t, 1.0, 1.0};
        // T = 1/2 keeps the melting front 2 a sqrt(t) inside [0, 1] for the
        // whole u* range
        case DatasetKind::stefan: return {n_x, n_t, 1.0, 0.5};
        case DatasetKind::correlated_mog: return {2, 1, 1.0, 1.0};
    }
    throw std::logic_error("default_grid: bad kind");
}

double stefan_alpha(double u_star) {
    // g is increasing in alpha on (0, inf); bracket then bisect.
    const double rhs = (1.0 - u_star) / std::sqrt(kPi);
    auto g = [&](double al) { return u_star * std::erf(al) * al * std::exp(al * al) - rhs; };
    double lo = 1e-8, hi = 1.0;
    while (g(hi) < 0.0) hi *= 2.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        (g(mid) < 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

namespace {
std::pair<double, double> default_coeff_range(DatasetKind kind) {
    switch (kind) {
        case DatasetKind::stokes: return {2.0, 8.0};
        case DatasetKind::heat: return {0.0, kPi};
        case DatasetKind::pme: return {1.0, 5.0};
        case DatasetKind::stefan: return {0.55, 0.7};
        case DatasetKind::correlated_mog: return {0.0, 1.0};
    }
    throw std::logic_error("default_coeff_range: bad kind");
}
}  // namespace

std::vector<JointSample> generate_dataset(const DatasetSpec& spec) {
    spec.validate();
    auto [lo, hi] = default_coeff_range(spec.kind);
    if (spec.coeff_lo != 0.0 || spec.coeff_hi != 0.0) lo = spec.coeff_lo, hi = spec.coeff_hi;
    const GridSpec g = spec.grid;
    RngSource root(spec.seed);
    std::vector<JointSample> out(spec.n_samples);

    if (spec.kind == DatasetKind::correlated_mog) {
        // two components at (-1,-1) and (+1,+1), covariance 0.04*[[1,rho],[rho,1]]
        const double sigma = 0.2, rho = 0.99999;
        const double l11 = sigma, l21 = sigma * rho, l22 = sigma * std::sqrt(1.0 - rho * rho);
        exec::par_for(out.size(), [&](std::size_t i) {
            RngSource r = root.child(i);
            const double mu = r.uniform() < 0.5 ? -1.0 : 1.0;
            const double z1 = r.normal(), z2 = r.normal();
            JointSample s;
            s.u.grid = {2, 1, 1.0, 1.0};
            s.u.values = {mu + l11 * z1, mu + l21 * z1 + l22 * z2};
            s.coeff_kind = CoeffKind::none;
            out[i] = std::move(s);
        });
        return out;
    }

    exec::par_for(out.size(), [&](std::size_t i) {
        RngSource r = root.child(i);
        const double c = r.uniform(lo, hi);
        JointSample s;
        s.u.grid = g;
        s.u.values.resize(g.points());
        s.coeff_kind = CoeffKind::scalar;
        s.coeff = {c};
        const double stef_al = spec.kind == DatasetKind::stefan ? stefan_alpha(c) : 0.0;
        for (int it = 0; it < g.n_t; ++it) {
            for (int ix = 0; ix < g.n_x; ++ix) {
                const double x = g.x(ix), t = g.t(it);
                double v = 0.0;
                switch (spec.kind) {
                    case DatasetKind::stokes: v = stokes_exact_u(2.0, 5.0, c, x, t); break;
                    case DatasetKind::heat: v = heat_exact_u(3.0, c, x, t); break;
                    case DatasetKind::pme: v = pme_exact_u(c, x, t); break;
                    case DatasetKind::stefan: v = stefan_exact_u(c, stef_al, x, t); break;
                    case DatasetKind::correlated_mog: break;
                }
                s.u.at(it, ix) = v;
            }
        }
        out[i] = std::move(s);
    });
    return out;
}

ResidualOperator dataset_operator(const DatasetSpec& spec) {
    switch (spec.kind) {
        case DatasetKind::stokes: return make_residual_operator(ResidualKind::stokes, spec.grid);
        case DatasetKind::heat: return make_residual_operator(ResidualKind::heat, spec.grid);
        default:
            throw std::invalid_argument("dataset_operator: no residual operator for " +
                                        to_string(spec.kind));
    }
}

void save_dataset(const std::filesystem::path& dir, const std::string& name,
                  const DatasetSpec& spec, const std::vector<JointSample>& samples) {
    if (samples.empty()) throw std::invalid_argument("save_dataset: empty dataset");
    std::filesystem::create_directories(dir);
    const CoeffKind ck = samples.front().coeff_kind;
    if (ck == CoeffKind::field_space)
        throw std::invalid_argument("save_dataset: field_space coefficients are not persisted");
    std::vector<std::vector<double>> channels;
    for (const auto& s : samples) {
        channels.push_back(s.u.values);
        if (ck == CoeffKind::field_full) channels.push_back(s.coeff);
    }
    write_pfd(dir / (name + ".pfd"), samples.front().u.grid, channels);

    std::ofstream csv(dir / (name + ".manifest.csv"));
    if (!csv) throw std::runtime_error("save_dataset: cannot write manifest");
    csv << "index,coeff,seed\n";
    csv.precision(17);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        csv << i << ',';
        if (ck == CoeffKind::scalar)
            csv << samples[i].coeff[0];
        else if (ck == CoeffKind::field_full)
            csv << "field";
        csv << ',' << spec.seed << '\n';
    }
}

std::vector<JointSample> load_dataset(const std::filesystem::path& dir, const std::string& name) {
    PfdFile f = read_pfd(dir / (name + ".pfd"));
    std::ifstream csv(dir / (name + ".manifest.csv"));
    if (!csv) throw std::runtime_error("load_dataset: missing manifest");
    std::string line;
    std::getline(csv, line);  // header
    std::vector<std::string> coeff_cells;
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        const auto c1 = line.find(','), c2 = line.find(',', c1 + 1);
        coeff_cells.push_back(line.substr(c1 + 1, c2 - c1 - 1));
    }
    const bool field_coeff = !coeff_cells.empty() && coeff_cells.front() == "field";
    const std::size_t per_sample = field_coeff ? 2 : 1;
    if (f.channels.size() != coeff_cells.size() * per_sample)
        throw std::runtime_error("load_dataset: manifest/PFD sample count mismatch");
    std::vector<JointSample> out(coeff_cells.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i].u.grid = f.grid;
        out[i].u.values = std::move(f.channels[i * per_sample]);
        if (field_coeff) {
            out[i].coeff_kind = CoeffKind::field_full;
            out[i].coeff = std::move(f.channels[i * per_sample + 1]);
        } else if (coeff_cells[i].empty()) {
            out[i].coeff_kind = CoeffKind::none;
        } else {
            out[i].coeff_kind = CoeffKind::scalar;
            out[i].coeff = {std::stod(coeff_cells[i])};
        }
    }
    return out;
}

}  // namespace piddm
