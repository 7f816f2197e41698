#pragma once

// Characteristic flows of autonomous velocity fields: RK4 integration of
// positions together with the Jacobian determinant, and the diffusion-free
// semi-Lagrangian solution of the linear transport equation built on them.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "swarmfield/errors.hpp"
#include "swarmfield/fields.hpp"
#include "swarmfield/grid.hpp"
#include "swarmfield/parallel.hpp"

namespace swarmfield {

/// How an interpolated component behaves at a wall: copy the adjacent cell
/// (zero normal derivative) or vanish (zero normal velocity).
enum class WallMode { Copy, Zero };

/// Multilinear interpolation of cell-centered data, extended by one node
/// layer sitting exactly on the walls.
class WallInterpolator {
public:
    WallInterpolator(const ScalarField& f, std::array<WallMode, 2> walls) : grid_(f.grid) {
        const int n0 = grid_.cells(0);
        const int n1 = grid_.cells(1);
        const bool two_d = grid_.dim() == 2;
        m0_ = n0 + 2;
        m1_ = two_d ? n1 + 2 : 1;
        ext_.assign(static_cast<std::size_t>(m0_) * m1_, 0.0);
        for (int k = 0; k < m0_; ++k) {
            for (int l = 0; l < m1_; ++l) {
                const bool wall0 = k == 0 || k == m0_ - 1;
                const bool wall1 = two_d && (l == 0 || l == m1_ - 1);
                if ((wall0 && walls[0] == WallMode::Zero) || (wall1 && walls[1] == WallMode::Zero)) continue;
                const int i = std::clamp(k - 1, 0, n0 - 1);
                const int j = two_d ? std::clamp(l - 1, 0, n1 - 1) : 0;
                ext_[static_cast<std::size_t>(k) * m1_ + l] = f[grid_.index(i, j)];
            }
        }
    }

    double value(const Vec2& x) const {
        const Segment s0 = locate(0, x[0]);
        if (grid_.dim() == 1) return (1.0 - s0.t) * node(s0.k, 0) + s0.t * node(s0.k + 1, 0);
        const Segment s1 = locate(1, x[1]);
        const double lo = (1.0 - s1.t) * node(s0.k, s1.k) + s1.t * node(s0.k, s1.k + 1);
        const double hi = (1.0 - s1.t) * node(s0.k + 1, s1.k) + s1.t * node(s0.k + 1, s1.k + 1);
        return (1.0 - s0.t) * lo + s0.t * hi;
    }

    /// Gradient of the interpolant (piecewise, one-sided on node lines).
    Vec2 gradient(const Vec2& x) const {
        const Segment s0 = locate(0, x[0]);
        if (grid_.dim() == 1) return {(node(s0.k + 1, 0) - node(s0.k, 0)) / s0.width, 0.0};
        const Segment s1 = locate(1, x[1]);
        const double a = node(s0.k, s1.k);
        const double b = node(s0.k + 1, s1.k);
        const double c = node(s0.k, s1.k + 1);
        const double d = node(s0.k + 1, s1.k + 1);
        return {((b - a) * (1.0 - s1.t) + (d - c) * s1.t) / s0.width,
                ((c - a) * (1.0 - s0.t) + (d - b) * s0.t) / s1.width};
    }

private:
    struct Segment {
        int k;
        double t;
        double width;
    };

    double node_position(int axis, int k) const {
        const int n = grid_.cells(axis);
        if (k <= 0) return 0.0;
        if (k >= n + 1) return grid_.extent(axis);
        return (k - 0.5) * grid_.h(axis);
    }

    Segment locate(int axis, double x) const {
        const int n = grid_.cells(axis);
        const int k = std::clamp(static_cast<int>(std::floor(x / grid_.h(axis) + 0.5)), 0, n);
        const double lo = node_position(axis, k);
        const double width = node_position(axis, k + 1) - lo;
        return {k, std::clamp((x - lo) / width, 0.0, 1.0), width};
    }

    double node(int k, int l) const { return ext_[static_cast<std::size_t>(k) * m1_ + l]; }

    GridSpec grid_;
    int m0_ = 0;
    int m1_ = 0;
    std::vector<double> ext_;
};

/// A velocity field on a box together with its divergence and Jacobian.
struct FlowField {
    std::string name;
    GridSpec domain;
    std::function<Vec2(const Vec2&)> velocity;
    std::function<double(const Vec2&)> divergence;
    std::function<Mat2(const Vec2&)> jacobian;
    /// Stream function, when the field is a 2D curl.
    std::function<double(const Vec2&)> stream;
    /// Cell samples on `domain`.
    VectorField cells;
};

/// Catalog field evaluated in closed form; `domain` fixes the grid used for
/// cell samples and the escape tolerance.
inline FlowField analytic_flow(const AnalyticField& f, const GridSpec& domain) {
    FlowField out;
    out.name = f.name;
    out.domain = domain;
    out.velocity = f.velocity;
    out.divergence = f.divergence;
    out.jacobian = f.jacobian;
    if (domain.dim() == 2) out.stream = f.stream;
    out.cells = sample_field(f, domain);
    return out;
}

/// Cell-centered field interpolated multilinearly, with the normal component
/// pinned to zero on the walls.
inline FlowField interpolated_flow(const VectorField& b, std::string name = "interpolated") {
    const GridSpec& g = b.grid;
    ScalarField bx(g);
    ScalarField by(g);
    for (std::size_t k = 0; k < g.size(); ++k) {
        bx[k] = b[k][0];
        by[k] = b[k][1];
    }
    auto ix = std::make_shared<const WallInterpolator>(bx, std::array{WallMode::Zero, WallMode::Copy});
    auto iy = std::make_shared<const WallInterpolator>(by, std::array{WallMode::Copy, WallMode::Zero});
    const bool two_d = g.dim() == 2;
    FlowField out;
    out.name = std::move(name);
    out.domain = g;
    out.cells = b;
    out.velocity = [ix, iy, two_d](const Vec2& x) { return Vec2{ix->value(x), two_d ? iy->value(x) : 0.0}; };
    out.jacobian = [ix, iy, two_d](const Vec2& x) {
        const Vec2 gx = ix->gradient(x);
        const Vec2 gy = two_d ? iy->gradient(x) : Vec2{0.0, 0.0};
        return Mat2{{{gx[0], gx[1]}, {gy[0], gy[1]}}};
    };
    out.divergence = [ix, iy, two_d](const Vec2& x) {
        return ix->gradient(x)[0] + (two_d ? iy->gradient(x)[1] : 0.0);
    };
    return out;
}

struct FlowOptions {
    /// Largest RK4 step; intervals of the time grid are split evenly.
    double max_step = 1e-2;
    /// Largest tolerated accumulated wall clamp along one characteristic;
    /// 0 means twice the coarsest spacing.
    double escape_tolerance = 0.0;
    unsigned jobs = 0;
};

namespace detail {

struct Characteristic {
    Vec2 x{0.0, 0.0};
    double log_j = 0.0;
    Mat2 a{{{1.0, 0.0}, {0.0, 1.0}}};
    double clamp = 0.0;
};

struct CharacteristicRate {
    Vec2 dx{0.0, 0.0};
    double dlog = 0.0;
    Mat2 da{{{0.0, 0.0}, {0.0, 0.0}}};
};

inline CharacteristicRate characteristic_rate(const FlowField& b, const Vec2& x, const Mat2& a, double dir,
                                              bool variational) {
    CharacteristicRate r;
    const Vec2 v = b.velocity(x);
    r.dx = {dir * v[0], dir * v[1]};
    r.dlog = dir * b.divergence(x);
    if (variational) {
        const Mat2 d = b.jacobian(x);
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) r.da[i][j] = dir * (d[i][0] * a[0][j] + d[i][1] * a[1][j]);
    }
    return r;
}

inline Characteristic shifted(const Characteristic& c, const CharacteristicRate& r, double s) {
    Characteristic out = c;
    out.x = {c.x[0] + s * r.dx[0], c.x[1] + s * r.dx[1]};
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) out.a[i][j] = c.a[i][j] + s * r.da[i][j];
    return out;
}

inline void rk4_step(const FlowField& b, Characteristic& c, double dt, double dir, bool variational) {
    const CharacteristicRate k1 = characteristic_rate(b, c.x, c.a, dir, variational);
    const Characteristic c2 = shifted(c, k1, 0.5 * dt);
    const CharacteristicRate k2 = characteristic_rate(b, c2.x, c2.a, dir, variational);
    const Characteristic c3 = shifted(c, k2, 0.5 * dt);
    const CharacteristicRate k3 = characteristic_rate(b, c3.x, c3.a, dir, variational);
    const Characteristic c4 = shifted(c, k3, dt);
    const CharacteristicRate k4 = characteristic_rate(b, c4.x, c4.a, dir, variational);
    const double w = dt / 6.0;
    for (int d = 0; d < 2; ++d) c.x[d] += w * (k1.dx[d] + 2.0 * k2.dx[d] + 2.0 * k3.dx[d] + k4.dx[d]);
    c.log_j += w * (k1.dlog + 2.0 * k2.dlog + 2.0 * k3.dlog + k4.dlog);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            c.a[i][j] += w * (k1.da[i][j] + 2.0 * k2.da[i][j] + 2.0 * k3.da[i][j] + k4.da[i][j]);
}

inline double escape_tolerance(const FlowField& b, const FlowOptions& opt) {
    if (opt.escape_tolerance > 0.0) return opt.escape_tolerance;
    double h = b.domain.h(0);
    if (b.domain.dim() == 2) h = std::max(h, b.domain.h(1));
    return 2.0 * h;
}

/// Integrate for `duration` in direction `dir` (+1 forward, -1 backward),
/// clamping to the domain after every step.
inline void advance(const FlowField& b, Characteristic& c, double duration, double dir, const FlowOptions& opt,
                    bool variational) {
    if (duration <= 0.0) return;
    const double tol = escape_tolerance(b, opt);
    const auto steps = static_cast<long>(std::ceil(duration / opt.max_step - 1e-9));
    const double dt = duration / static_cast<double>(std::max(1L, steps));
    for (long s = 0; s < std::max(1L, steps); ++s) {
        rk4_step(b, c, dt, dir, variational);
        double dist2 = 0.0;
        for (int axis = 0; axis < b.domain.dim(); ++axis) {
            const double clamped = std::clamp(c.x[axis], 0.0, b.domain.extent(axis));
            dist2 += (c.x[axis] - clamped) * (c.x[axis] - clamped);
            c.x[axis] = clamped;
        }
        c.clamp += std::sqrt(dist2);
        if (!std::isfinite(c.x[0]) || !std::isfinite(c.x[1]) || !std::isfinite(c.log_j))
            fail(ErrorKind::NonFiniteState, "characteristic of " + b.name + " became non-finite");
        if (c.clamp > tol) {
            std::ostringstream msg;
            msg << "flow of " << b.name << " left the domain by " << c.clamp << " (tolerance " << tol << ")";
            fail(ErrorKind::FlowEscape, msg.str());
        }
    }
}

inline void require_time_grid(const std::vector<double>& t_grid) {
    if (t_grid.empty()) fail(ErrorKind::InvalidArgument, "time grid is empty");
    for (std::size_t i = 0; i < t_grid.size(); ++i) {
        if (!std::isfinite(t_grid[i]) || t_grid[i] < 0.0)
            fail(ErrorKind::InvalidArgument, "time grid entries must be finite and non-negative");
        if (i > 0 && t_grid[i] < t_grid[i - 1]) fail(ErrorKind::InvalidArgument, "time grid must be sorted");
    }
}

inline double determinant(const Mat2& a, int dim) {
    return dim == 1 ? a[0][0] : a[0][0] * a[1][1] - a[0][1] * a[1][0];
}

}  // namespace detail

/// Positions phi_t(x) and Jacobians J(t, x) for each seed at each time.
struct FlowMap {
    std::string field;
    std::vector<double> t_grid;
    std::vector<Vec2> seeds;
    std::vector<std::vector<Vec2>> positions;
    /// exp of the integrated divergence along the path.
    std::vector<std::vector<double>> jacobians;
    /// det A from the variational equation dA/dt = Db A.
    std::vector<std::vector<double>> variational_jacobians;
    double max_clamp = 0.0;
    /// max over samples of |J - det A| / J.
    double cross_check_residual = 0.0;
};

inline FlowMap flow_map(const FlowField& b, const std::vector<Vec2>& seeds, const std::vector<double>& t_grid,
                        const FlowOptions& opt = {}) {
    detail::require_time_grid(t_grid);
    if (!(opt.max_step > 0.0)) fail(ErrorKind::InvalidArgument, "max_step must be positive");
    FlowMap out;
    out.field = b.name;
    out.t_grid = t_grid;
    out.seeds = seeds;
    const std::size_t nt = t_grid.size();
    out.positions.assign(seeds.size(), std::vector<Vec2>(nt));
    out.jacobians.assign(seeds.size(), std::vector<double>(nt));
    out.variational_jacobians.assign(seeds.size(), std::vector<double>(nt));
    std::vector<double> clamp(seeds.size(), 0.0);
    std::vector<double> residual(seeds.size(), 0.0);
    const int dim = b.domain.dim();
    parallel_for(
        seeds.size(),
        [&](std::size_t s) {
            detail::Characteristic c;
            c.x = seeds[s];
            double t = 0.0;
            for (std::size_t i = 0; i < nt; ++i) {
                detail::advance(b, c, t_grid[i] - t, 1.0, opt, true);
                t = t_grid[i];
                const double j = std::exp(c.log_j);
                const double det = detail::determinant(c.a, dim);
                out.positions[s][i] = c.x;
                out.jacobians[s][i] = j;
                out.variational_jacobians[s][i] = det;
                residual[s] = std::max(residual[s], std::abs(j - det) / j);
            }
            clamp[s] = c.clamp;
        },
        opt.jobs);
    for (std::size_t s = 0; s < seeds.size(); ++s) {
        out.max_clamp = std::max(out.max_clamp, clamp[s]);
        out.cross_check_residual = std::max(out.cross_check_residual, residual[s]);
    }
    return out;
}

/// Flow map whose Jacobi-formula Jacobians have been cross-checked against
/// the variational equation.
inline FlowMap jacobian_along_flow(const FlowField& b, const std::vector<Vec2>& seeds,
                                   const std::vector<double>& t_grid, const FlowOptions& opt = {},
                                   double tolerance = 1e-4) {
    FlowMap out = flow_map(b, seeds, t_grid, opt);
    if (out.cross_check_residual > tolerance) {
        std::ostringstream msg;
        msg << "Jacobian cross-check for " << b.name << ": relative residual " << out.cross_check_residual
            << " exceeds " << tolerance;
        fail(ErrorKind::CrossCheckFailure, msg.str());
    }
    return out;
}

/// e_t at each requested time.
struct LinearTransport {
    std::vector<double> t_grid;
    std::vector<ScalarField> fields;
    double max_clamp = 0.0;
};

/// Solve d_t e = -div(e b) by backtracking every cell center through the
/// flow and setting e_t(y) = e0(x) / J(t, x) with x = phi_t^-1(y). The
/// initial field is interpolated once, so the scheme adds no diffusion.
inline LinearTransport transport_linear(const ScalarField& e0, const FlowField& b, const std::vector<double>& t_grid,
                                        const FlowOptions& opt = {}) {
    require_same_grid(e0.grid, b.domain, "transport_linear");
    detail::require_time_grid(t_grid);
    double l1 = 0.0;
    for (double v : e0.values) l1 += std::abs(v) * e0.grid.cell_volume();
    if (std::abs(e0.mass()) > 1e-9 * std::max(l1, 1e-300) && std::abs(e0.mass()) > 1e-300) {
        std::ostringstream msg;
        msg << "transport_linear needs a zero-mean field, mass is " << e0.mass();
        fail(ErrorKind::NotZeroMean, msg.str());
    }
    const GridSpec& g = e0.grid;
    const WallInterpolator initial(e0, {WallMode::Copy, WallMode::Copy});
    LinearTransport out;
    out.t_grid = t_grid;
    out.fields.assign(t_grid.size(), ScalarField(g));
    std::vector<double> clamp(g.size(), 0.0);
    parallel_for(
        g.size(),
        [&](std::size_t k) {
            detail::Characteristic c;
            c.x = g.center(k);
            double t = 0.0;
            for (std::size_t i = 0; i < t_grid.size(); ++i) {
                detail::advance(b, c, t_grid[i] - t, -1.0, opt, false);
                t = t_grid[i];
                // Backward integration accumulates -log J(t, x).
                out.fields[i][k] = initial.value(c.x) * std::exp(c.log_j);
            }
            clamp[k] = c.clamp;
        },
        opt.jobs);
    for (double c : clamp) out.max_clamp = std::max(out.max_clamp, c);
    return out;
}

}  // namespace swarmfield
