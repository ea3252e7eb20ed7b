#include "piddm/field.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "piddm/exec.hpp"

namespace piddm {

namespace exec {
namespace {
Mode g_mode = Mode::openmp;
}
Mode mode() noexcept { return g_mode; }
void set_mode(Mode m) noexcept { g_mode = m; }
}  // namespace exec

void GridSpec::validate() const {
    if (n_x < 3) throw std::invalid_argument("GridSpec: n_x must be >= 3");
    if (n_t < 1) throw std::invalid_argument("GridSpec: n_t must be >= 1");
    if (!(extent_x > 0.0) || !(extent_t > 0.0))
        throw std::invalid_argument("GridSpec: extents must be positive");
}

void Field::validate() const {
    grid.validate();
    if (values.size() != grid.points())
        throw std::invalid_argument("Field: values length does not match grid");
    for (double v : values)
        if (!std::isfinite(v)) throw std::invalid_argument("Field: non-finite entry");
}

std::size_t coeff_size(CoeffKind kind, const GridSpec& grid) {
    switch (kind) {
        case CoeffKind::none: return 0;
        case CoeffKind::scalar: return 1;
        case CoeffKind::field_space: return static_cast<std::size_t>(grid.n_x);
        case CoeffKind::field_full: return grid.points();
    }
    throw std::logic_error("coeff_size: bad kind");
}

std::string to_string(CoeffKind kind) {
    switch (kind) {
        case CoeffKind::none: return "none";
        case CoeffKind::scalar: return "scalar";
        case CoeffKind::field_space: return "field_space";
        case CoeffKind::field_full: return "field_full";
    }
    return "?";
}

CoeffKind coeff_kind_from_string(const std::string& s) {
    if (s == "none") return CoeffKind::none;
    if (s == "scalar") return CoeffKind::scalar;
    if (s == "field_space") return CoeffKind::field_space;
    if (s == "field_full") return CoeffKind::field_full;
    throw std::invalid_argument("unknown coefficient kind: " + s);
}

void JointSample::validate() const {
    u.validate();
    if (coeff.size() != coeff_size(coeff_kind, u.grid))
        throw std::invalid_argument("JointSample: coefficient block has wrong length");
    for (double v : coeff)
        if (!std::isfinite(v)) throw std::invalid_argument("JointSample: non-finite coefficient");
}

std::vector<double> flatten(const JointSample& x) {
    std::vector<double> out;
    out.reserve(x.flat_size());
    out.insert(out.end(), x.u.values.begin(), x.u.values.end());
    out.insert(out.end(), x.coeff.begin(), x.coeff.end());
    return out;
}

JointSample unflatten(std::span<const double> flat, const GridSpec& grid, CoeffKind kind) {
    const std::size_t nu = grid.points();
    const std::size_t na = coeff_size(kind, grid);
    if (flat.size() != nu + na)
        throw std::invalid_argument("unflatten: flat length does not match grid/layout");
    JointSample s;
    s.u.grid = grid;
    s.u.values.assign(flat.begin(), flat.begin() + nu);
    s.coeff_kind = kind;
    s.coeff.assign(flat.begin() + nu, flat.end());
    return s;
}

void ObservationMask::validate() const {
    for (double v : entries)
        if (v != 0.0 && v != 1.0)
            throw std::invalid_argument("ObservationMask: entries must be 0 or 1");
}

std::vector<double> apply_mask(std::span<const double> x, std::span<const double> obs,
                               const ObservationMask& m) {
    if (x.size() != obs.size() || x.size() != m.entries.size())
        throw std::invalid_argument("apply_mask: length mismatch");
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        out[i] = m.entries[i] == 1.0 ? obs[i] : x[i];
    return out;
}

namespace {

void put_le_double(std::ostream& os, double v) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(bits >> (8 * i));
    os.write(reinterpret_cast<const char*>(buf), 8);
}

double get_le_double(std::istream& is) {
    unsigned char buf[8];
    is.read(reinterpret_cast<char*>(buf), 8);
    if (!is) throw std::runtime_error("PFD: truncated payload");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}

}  // namespace

namespace {
// PFD containers also hold flat vectors (n_x = length, n_t = 1), which may
// be shorter than a real grid, so only basic sanity is checked here.
void check_pfd_grid(const GridSpec& g) {
    if (g.n_x < 1 || g.n_t < 1 || !(g.extent_x > 0.0) || !(g.extent_t > 0.0))
        throw std::invalid_argument("PFD: bad grid header");
}
}  // namespace

void write_pfd(const std::filesystem::path& path, const GridSpec& grid,
               const std::vector<std::vector<double>>& channels) {
    check_pfd_grid(grid);
    for (const auto& c : channels)
        if (c.size() != grid.points())
            throw std::invalid_argument("write_pfd: channel length does not match grid");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_pfd: cannot open " + path.string());
    std::ostringstream header;
    header.precision(17);
    header << "PFD1 " << grid.n_x << ' ' << grid.n_t << ' ' << grid.extent_x << ' '
           << grid.extent_t << ' ' << channels.size() << '\n';
    os << header.str();
    for (const auto& c : channels)
        for (double v : c) put_le_double(os, v);
    if (!os) throw std::runtime_error("write_pfd: write failed for " + path.string());
}

PfdFile read_pfd(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_pfd: cannot open " + path.string());
    std::string header;
    std::getline(is, header);
    std::istringstream hs(header);
    std::string magic;
    PfdFile f;
    std::size_t channels = 0;
    hs >> magic >> f.grid.n_x >> f.grid.n_t >> f.grid.extent_x >> f.grid.extent_t >> channels;
    if (!hs || magic != "PFD1")
        throw std::runtime_error("read_pfd: bad header in " + path.string());
    check_pfd_grid(f.grid);
    f.channels.resize(channels);
    for (auto& c : f.channels) {
        c.resize(f.grid.points());
        for (double& v : c) v = get_le_double(is);
    }
    return f;
}

void write_flat_pfd(const std::filesystem::path& path, std::span<const double> values) {
    GridSpec g{static_cast<int>(values.size()), 1, 1.0, 1.0};
    write_pfd(path, g, {std::vector<double>(values.begin(), values.end())});
}

std::vector<double> read_flat_pfd(const std::filesystem::path& path) {
    PfdFile f = read_pfd(path);
    if (f.channels.size() != 1)
        throw std::runtime_error("read_flat_pfd: expected a single channel");
    return f.channels[0];
}

}  // namespace piddm
