#pragma once

// Uniform Cartesian discretization of an axis-aligned box, cell-centered
// scalar and vector fields, and the finite-volume operators built on them.
//
// Every discrete derivative is assembled from one primitive: the face
// gradient (f[i+1] - f[i]) / h on interior faces, zero on boundary faces
// (homogeneous Neumann data, equivalently a reflection ghost cell). Cell
// gradients average the two adjacent face gradients, divergences difference
// face-averaged normal components, and the Laplacian differences face
// gradients. This keeps gradient and divergence exactly adjoint and makes
// discrete mass conservation a telescoping identity.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "swarmfield/errors.hpp"

namespace swarmfield {

using Vec2 = std::array<double, 2>;
using Mat2 = std::array<std::array<double, 2>, 2>;

/// How stencils treat the edge of the box. `Periodic` is the shadow domain
/// used for translation/rotation equivariance checks.
enum class Boundary { Neumann, Periodic };

class GridSpec {
public:
    GridSpec() = default;

    static GridSpec build(int dim, std::span<const double> extents, std::span<const int> cells) {
        if (dim != 1 && dim != 2) fail(ErrorKind::InvalidArgument, "unsupported dimension " + std::to_string(dim));
        if (extents.size() != static_cast<std::size_t>(dim) || cells.size() != static_cast<std::size_t>(dim)) {
            fail(ErrorKind::InvalidArgument, "extents/cells must have one entry per axis");
        }
        GridSpec g;
        g.dim_ = dim;
        for (int a = 0; a < dim; ++a) {
            if (!(extents[a] > 0.0) || !std::isfinite(extents[a])) {
                fail(ErrorKind::InvalidArgument, "extent must be positive on axis " + std::to_string(a));
            }
            if (cells[a] < 4) fail(ErrorKind::InvalidArgument, "need at least 4 cells on axis " + std::to_string(a));
            g.n_[a] = cells[a];
            g.L_[a] = extents[a];
            g.h_[a] = extents[a] / cells[a];
        }
        return g;
    }

    static GridSpec line(double length, int cells) {
        const std::array<double, 1> e{length};
        const std::array<int, 1> c{cells};
        return build(1, e, c);
    }

    static GridSpec box(double lx, double ly, int nx, int ny) {
        const std::array<double, 2> e{lx, ly};
        const std::array<int, 2> c{nx, ny};
        return build(2, e, c);
    }

    int dim() const { return dim_; }
    int cells(int axis) const { return n_[axis]; }
    double extent(int axis) const { return L_[axis]; }
    double h(int axis) const { return h_[axis]; }
    std::size_t size() const { return static_cast<std::size_t>(n_[0]) * static_cast<std::size_t>(n_[1]); }

    double cell_volume() const { return dim_ == 1 ? h_[0] : h_[0] * h_[1]; }
    double volume() const { return dim_ == 1 ? L_[0] : L_[0] * L_[1]; }
    double diameter() const { return dim_ == 1 ? L_[0] : std::hypot(L_[0], L_[1]); }
    double min_h() const { return dim_ == 1 ? h_[0] : std::min(h_[0], h_[1]); }
    double max_extent() const { return dim_ == 1 ? L_[0] : std::max(L_[0], L_[1]); }
    bool is_square() const { return dim_ == 2 && n_[0] == n_[1] && L_[0] == L_[1]; }

    /// Flat index: axis 0 is the slow index (C order over (axis0, axis1)).
    std::size_t index(int i, int j = 0) const {
        return static_cast<std::size_t>(i) * static_cast<std::size_t>(n_[1]) + static_cast<std::size_t>(j);
    }
    std::array<int, 2> coords(std::size_t flat) const {
        return {static_cast<int>(flat / static_cast<std::size_t>(n_[1])),
                static_cast<int>(flat % static_cast<std::size_t>(n_[1]))};
    }

    Vec2 center(int i, int j = 0) const {
        return {(i + 0.5) * h_[0], dim_ == 2 ? (j + 0.5) * h_[1] : 0.0};
    }
    Vec2 center(std::size_t flat) const {
        const auto c = coords(flat);
        return center(c[0], c[1]);
    }

    bool operator==(const GridSpec& o) const {
        return dim_ == o.dim_ && n_ == o.n_ && L_ == o.L_;
    }

private:
    int dim_ = 1;
    std::array<int, 2> n_{4, 1};
    std::array<double, 2> L_{1.0, 1.0};
    std::array<double, 2> h_{0.25, 1.0};
};

inline void require_same_grid(const GridSpec& a, const GridSpec& b, const char* what) {
    if (!(a == b)) fail(ErrorKind::InvalidArgument, std::string(what) + ": fields live on different grids");
}

/// Per-cell real values on a grid (densities, errors, potentials).
struct ScalarField {
    GridSpec grid;
    std::vector<double> values;

    ScalarField() = default;
    explicit ScalarField(const GridSpec& g, double fill = 0.0) : grid(g), values(g.size(), fill) {}
    ScalarField(const GridSpec& g, std::vector<double> v) : grid(g), values(std::move(v)) {
        require(values.size() == grid.size(), "ScalarField: value count does not match grid");
    }

    template <class F>
    static ScalarField sample(const GridSpec& g, F&& fn) {
        ScalarField out(g);
        for (std::size_t k = 0; k < g.size(); ++k) out.values[k] = fn(g.center(k));
        return out;
    }

    std::size_t size() const { return values.size(); }
    double& operator[](std::size_t k) { return values[k]; }
    double operator[](std::size_t k) const { return values[k]; }

    double mass() const {
        double s = 0.0;
        for (double v : values) s += v;
        return s * grid.cell_volume();
    }
    double mean() const { return mass() / grid.volume(); }
    double min() const { return *std::min_element(values.begin(), values.end()); }
    double max() const { return *std::max_element(values.begin(), values.end()); }
    bool all_finite() const {
        return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
    }

    /// Nonnegative with unit mass within `tol`.
    bool is_probability_density(double tol = 1e-12) const {
        return all_finite() && min() >= 0.0 && std::abs(mass() - 1.0) <= tol;
    }

    ScalarField& operator+=(const ScalarField& o) {
        require_same_grid(grid, o.grid, "operator+=");
        for (std::size_t k = 0; k < values.size(); ++k) values[k] += o.values[k];
        return *this;
    }
    ScalarField& operator-=(const ScalarField& o) {
        require_same_grid(grid, o.grid, "operator-=");
        for (std::size_t k = 0; k < values.size(); ++k) values[k] -= o.values[k];
        return *this;
    }
    ScalarField& operator*=(double s) {
        for (double& v : values) v *= s;
        return *this;
    }
};

inline ScalarField operator+(ScalarField a, const ScalarField& b) { return a += b; }
inline ScalarField operator-(ScalarField a, const ScalarField& b) { return a -= b; }
inline ScalarField operator*(double s, ScalarField a) { return a *= s; }

/// Cell-volume weighted inner product.
inline double inner(const ScalarField& f, const ScalarField& g) {
    require_same_grid(f.grid, g.grid, "inner");
    double s = 0.0;
    for (std::size_t k = 0; k < f.size(); ++k) s += f[k] * g[k];
    return s * f.grid.cell_volume();
}

inline double norm_l2(const ScalarField& f) { return std::sqrt(inner(f, f)); }

/// Cell-centered velocity; component 1 is unused (zero) in 1D.
struct VectorField {
    GridSpec grid;
    std::vector<Vec2> values;

    VectorField() = default;
    explicit VectorField(const GridSpec& g) : grid(g), values(g.size(), Vec2{0.0, 0.0}) {}

    template <class F>
    static VectorField sample(const GridSpec& g, F&& fn) {
        VectorField out(g);
        for (std::size_t k = 0; k < g.size(); ++k) {
            out.values[k] = fn(g.center(k));
            if (g.dim() == 1) out.values[k][1] = 0.0;
        }
        return out;
    }

    std::size_t size() const { return values.size(); }
    Vec2& operator[](std::size_t k) { return values[k]; }
    const Vec2& operator[](std::size_t k) const { return values[k]; }

    double max_abs_component() const {
        double m = 0.0;
        for (const auto& v : values) m = std::max({m, std::abs(v[0]), std::abs(v[1])});
        return m;
    }
};

inline double inner(const VectorField& u, const VectorField& v) {
    require_same_grid(u.grid, v.grid, "inner");
    double s = 0.0;
    for (std::size_t k = 0; k < u.size(); ++k) s += u[k][0] * v[k][0] + u[k][1] * v[k][1];
    return s * u.grid.cell_volume();
}

inline double norm_l2(const VectorField& v) { return std::sqrt(inner(v, v)); }

/// Truncated Taylor data of a scalar field at one cell.
struct Jet {
    int order = 0;
    double value = 0.0;
    Vec2 gradient{0.0, 0.0};
    Mat2 hessian{{{0.0, 0.0}, {0.0, 0.0}}};
};

// ---------------------------------------------------------------------------
// Face-level primitives

/// Normal-component values on the faces of each axis.
/// Axis 0 faces: (n0 + 1) x n1, index fi * n1 + j.
/// Axis 1 faces: n0 x (n1 + 1), index i * (n1 + 1) + fj.
struct FaceField {
    GridSpec grid;
    std::array<std::vector<double>, 2> normal;
};

namespace detail {

inline int wrap(int i, int n) { return ((i % n) + n) % n; }

/// Face gradient between cell `lo` and its +1 neighbour along `axis`
/// (the face index is `lo + 1`). Boundary faces carry zero in Neumann mode.
inline double face_difference(const ScalarField& f, int i, int j, int axis, int face, Boundary bc) {
    const GridSpec& g = f.grid;
    const int n = g.cells(axis);
    if (face == 0 || face == n) {
        if (bc == Boundary::Neumann) return 0.0;
        const std::size_t hi = axis == 0 ? g.index(0, j) : g.index(i, 0);
        const std::size_t lo = axis == 0 ? g.index(n - 1, j) : g.index(i, n - 1);
        return (f[hi] - f[lo]) / g.h(axis);
    }
    const std::size_t hi = axis == 0 ? g.index(face, j) : g.index(i, face);
    const std::size_t lo = axis == 0 ? g.index(face - 1, j) : g.index(i, face - 1);
    return (f[hi] - f[lo]) / g.h(axis);
}

/// Cell value with reflection (Neumann) or wrap (periodic) beyond the edge.
inline double ghost_value(const ScalarField& f, int i, int j, Boundary bc) {
    const GridSpec& g = f.grid;
    const int n0 = g.cells(0);
    const int n1 = g.cells(1);
    if (bc == Boundary::Periodic) {
        i = wrap(i, n0);
        j = g.dim() == 2 ? wrap(j, n1) : 0;
    } else {
        i = std::clamp(i, 0, n0 - 1);
        j = g.dim() == 2 ? std::clamp(j, 0, n1 - 1) : 0;
    }
    return f[g.index(i, j)];
}

}  // namespace detail

inline FaceField face_gradient(const ScalarField& f, Boundary bc = Boundary::Neumann) {
    const GridSpec& g = f.grid;
    const int n0 = g.cells(0);
    const int n1 = g.cells(1);
    FaceField out{g, {}};
    out.normal[0].assign(static_cast<std::size_t>(n0 + 1) * n1, 0.0);
    for (int fi = 0; fi <= n0; ++fi)
        for (int j = 0; j < n1; ++j)
            out.normal[0][static_cast<std::size_t>(fi) * n1 + j] = detail::face_difference(f, 0, j, 0, fi, bc);
    if (g.dim() == 2) {
        out.normal[1].assign(static_cast<std::size_t>(n0) * (n1 + 1), 0.0);
        for (int i = 0; i < n0; ++i)
            for (int fj = 0; fj <= n1; ++fj)
                out.normal[1][static_cast<std::size_t>(i) * (n1 + 1) + fj] = detail::face_difference(f, i, 0, 1, fj, bc);
    }
    return out;
}

/// Arithmetic mean of the adjacent cell normal components; zero on boundary
/// faces in Neumann mode (zero-flux encoding).
inline FaceField face_average(const VectorField& v, Boundary bc = Boundary::Neumann) {
    const GridSpec& g = v.grid;
    const int n0 = g.cells(0);
    const int n1 = g.cells(1);
    FaceField out{g, {}};
    out.normal[0].assign(static_cast<std::size_t>(n0 + 1) * n1, 0.0);
    for (int fi = 0; fi <= n0; ++fi) {
        for (int j = 0; j < n1; ++j) {
            double val = 0.0;
            if (fi > 0 && fi < n0) {
                val = 0.5 * (v[g.index(fi - 1, j)][0] + v[g.index(fi, j)][0]);
            } else if (bc == Boundary::Periodic) {
                val = 0.5 * (v[g.index(n0 - 1, j)][0] + v[g.index(0, j)][0]);
            }
            out.normal[0][static_cast<std::size_t>(fi) * n1 + j] = val;
        }
    }
    if (g.dim() == 2) {
        out.normal[1].assign(static_cast<std::size_t>(n0) * (n1 + 1), 0.0);
        for (int i = 0; i < n0; ++i) {
            for (int fj = 0; fj <= n1; ++fj) {
                double val = 0.0;
                if (fj > 0 && fj < n1) {
                    val = 0.5 * (v[g.index(i, fj - 1)][1] + v[g.index(i, fj)][1]);
                } else if (bc == Boundary::Periodic) {
                    val = 0.5 * (v[g.index(i, n1 - 1)][1] + v[g.index(i, 0)][1]);
                }
                out.normal[1][static_cast<std::size_t>(i) * (n1 + 1) + fj] = val;
            }
        }
    }
    return out;
}

/// Net outward face flux per cell divided by the cell width.
inline ScalarField face_divergence(const FaceField& flux) {
    const GridSpec& g = flux.grid;
    const int n0 = g.cells(0);
    const int n1 = g.cells(1);
    ScalarField out(g);
    for (int i = 0; i < n0; ++i) {
        for (int j = 0; j < n1; ++j) {
            const auto& fx = flux.normal[0];
            double d = (fx[static_cast<std::size_t>(i + 1) * n1 + j] - fx[static_cast<std::size_t>(i) * n1 + j]) / g.h(0);
            if (g.dim() == 2) {
                const auto& fy = flux.normal[1];
                const std::size_t base = static_cast<std::size_t>(i) * (n1 + 1);
                d += (fy[base + j + 1] - fy[base + j]) / g.h(1);
            }
            out[g.index(i, j)] = d;
        }
    }
    return out;
}

/// Cell vector whose components average the two faces along each axis.
inline VectorField cell_average(const FaceField& faces) {
    const GridSpec& g = faces.grid;
    const int n0 = g.cells(0);
    const int n1 = g.cells(1);
    VectorField out(g);
    for (int i = 0; i < n0; ++i) {
        for (int j = 0; j < n1; ++j) {
            Vec2 c{0.0, 0.0};
            const auto& fx = faces.normal[0];
            c[0] = 0.5 * (fx[static_cast<std::size_t>(i) * n1 + j] + fx[static_cast<std::size_t>(i + 1) * n1 + j]);
            if (g.dim() == 2) {
                const auto& fy = faces.normal[1];
                const std::size_t base = static_cast<std::size_t>(i) * (n1 + 1);
                c[1] = 0.5 * (fy[base + j] + fy[base + j + 1]);
            }
            out[g.index(i, j)] = c;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Cell-level operators

inline VectorField gradient(const ScalarField& f, Boundary bc = Boundary::Neumann) {
    return cell_average(face_gradient(f, bc));
}

inline ScalarField divergence(const VectorField& v, Boundary bc = Boundary::Neumann) {
    return face_divergence(face_average(v, bc));
}

/// Compact 3-point (1D) / 5-point (2D) Neumann Laplacian.
inline ScalarField laplacian(const ScalarField& f, Boundary bc = Boundary::Neumann) {
    return face_divergence(face_gradient(f, bc));
}

/// Sum of squared face gradients times the cell volume; equals -<f, laplacian f>.
inline double dirichlet_energy(const ScalarField& f, Boundary bc = Boundary::Neumann) {
    const FaceField g = face_gradient(f, bc);
    double s = 0.0;
    for (const auto& axis : g.normal)
        for (double v : axis) s += v * v;
    return s * f.grid.cell_volume();
}

/// Order-m jet of `f` at one cell, assembled from the same face stencils as
/// gradient() and laplacian().
inline Jet jet_at(const ScalarField& f, std::size_t cell, int order, Boundary bc = Boundary::Neumann) {
    if (order < 0 || order > 2) fail(ErrorKind::InvalidArgument, "jet order must be 0, 1 or 2");
    const GridSpec& g = f.grid;
    const auto [i, j] = g.coords(cell);
    Jet jet;
    jet.order = order;
    jet.value = f[cell];
    if (order == 0) return jet;

    std::array<double, 2> lo{0.0, 0.0};
    std::array<double, 2> hi{0.0, 0.0};
    lo[0] = detail::face_difference(f, i, j, 0, i, bc);
    hi[0] = detail::face_difference(f, i, j, 0, i + 1, bc);
    jet.gradient[0] = 0.5 * (lo[0] + hi[0]);
    if (g.dim() == 2) {
        lo[1] = detail::face_difference(f, i, j, 1, j, bc);
        hi[1] = detail::face_difference(f, i, j, 1, j + 1, bc);
        jet.gradient[1] = 0.5 * (lo[1] + hi[1]);
    }
    if (order == 1) return jet;

    jet.hessian[0][0] = (hi[0] - lo[0]) / g.h(0);
    if (g.dim() == 2) {
        jet.hessian[1][1] = (hi[1] - lo[1]) / g.h(1);
        const double pp = detail::ghost_value(f, i + 1, j + 1, bc);
        const double pm = detail::ghost_value(f, i + 1, j - 1, bc);
        const double mp = detail::ghost_value(f, i - 1, j + 1, bc);
        const double mm = detail::ghost_value(f, i - 1, j - 1, bc);
        const double cross = (pp - pm - mp + mm) / (4.0 * g.h(0) * g.h(1));
        jet.hessian[0][1] = cross;
        jet.hessian[1][0] = cross;
    }
    return jet;
}

// ---------------------------------------------------------------------------
// Text serialization: header `dim n_axes... L_axes...`, then one value per
// line in flat-index order.

inline void write_field(std::ostream& os, const ScalarField& f) {
    const GridSpec& g = f.grid;
    std::ostringstream head;
    head.precision(17);
    head << g.dim();
    for (int a = 0; a < g.dim(); ++a) head << ' ' << g.cells(a);
    for (int a = 0; a < g.dim(); ++a) head << ' ' << g.extent(a);
    os << head.str() << '\n';
    std::ostringstream body;
    body.precision(17);
    for (double v : f.values) body << v << '\n';
    os << body.str();
}

inline ScalarField read_field(std::istream& is) {
    int dim = 0;
    if (!(is >> dim) || (dim != 1 && dim != 2)) fail(ErrorKind::InvalidArgument, "field header: bad dimension");
    std::vector<int> cells(dim);
    std::vector<double> extents(dim);
    for (int& c : cells)
        if (!(is >> c)) fail(ErrorKind::InvalidArgument, "field header: missing cell count");
    for (double& e : extents)
        if (!(is >> e)) fail(ErrorKind::InvalidArgument, "field header: missing extent");
    const GridSpec g = GridSpec::build(dim, extents, cells);
    ScalarField f(g);
    for (double& v : f.values)
        if (!(is >> v)) fail(ErrorKind::InvalidArgument, "field body: expected " + std::to_string(g.size()) + " values");
    return f;
}

}  // namespace swarmfield
