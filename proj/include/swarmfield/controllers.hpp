#pragma once

// Distributed feedback laws. A controller sees only the position of a cell
// and the jets of rho and mu there; apply() evaluates it cell by cell.

#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "swarmfield/errors.hpp"
#include "swarmfield/fields.hpp"
#include "swarmfield/grid.hpp"

namespace swarmfield {

struct Symmetry {
    bool translation = false;
    bool rotation = false;
};

/// Order-0 law k(x, r, m) with r = rho(x), m = mu(x).
using PointwiseLaw = std::function<Vec2(const Vec2& x, double r, double m)>;

struct Controller {
    std::string name;
    int order = 0;
    Symmetry symmetry;
    double density_floor = 1e-8;
    /// Diffusion coefficient of the closed loop; bounds the explicit step.
    double diffusivity = 0.0;
    std::function<Vec2(const Vec2& x, const Jet& rho, const Jet& mu)> evaluate;

    /// Set for order-0 controllers only.
    PointwiseLaw law;
    /// Optional analytic d k / d r.
    PointwiseLaw law_dr;

    bool is_pointwise() const { return order == 0 && static_cast<bool>(law); }

    /// d k / d r, analytic if supplied, else central differences with
    /// step 1e-6 * max(1, |r|).
    Vec2 dk_dr(const Vec2& x, double r, double m) const {
        if (!is_pointwise()) fail(ErrorKind::InvalidArgument, name + " is not a pointwise controller");
        if (law_dr) return law_dr(x, r, m);
        const double d = 1e-6 * std::max(1.0, std::abs(r));
        const Vec2 hi = law(x, r + d, m);
        const Vec2 lo = law(x, r - d, m);
        return {(hi[0] - lo[0]) / (2.0 * d), (hi[1] - lo[1]) / (2.0 * d)};
    }
};

/// K(rho, mu) = -grad(rho - mu) / rho.
inline Controller error_gradient(double density_floor = 1e-8) {
    Controller c;
    c.name = "error_gradient";
    c.order = 1;
    c.symmetry = {true, true};
    c.density_floor = density_floor;
    c.diffusivity = 1.0;
    c.evaluate = [density_floor](const Vec2&, const Jet& rho, const Jet& mu) {
        if (!(rho.value >= density_floor)) throw DensityFloorError(rho.value, density_floor);
        return Vec2{-(rho.gradient[0] - mu.gradient[0]) / rho.value, -(rho.gradient[1] - mu.gradient[1]) / rho.value};
    };
    return c;
}

inline Controller pointwise(std::string name, PointwiseLaw k, PointwiseLaw dk_dr = {}, Symmetry symmetry = {}) {
    Controller c;
    c.name = std::move(name);
    c.order = 0;
    c.symmetry = symmetry;
    c.law = std::move(k);
    c.law_dr = std::move(dk_dr);
    c.evaluate = [law = c.law](const Vec2& x, const Jet& rho, const Jet& mu) { return law(x, rho.value, mu.value); };
    return c;
}

inline Controller zero_controller() {
    return pointwise(
        "zero", [](const Vec2&, double, double) { return Vec2{0.0, 0.0}; },
        [](const Vec2&, double, double) { return Vec2{0.0, 0.0}; }, {true, true});
}

/// k(x, r, m) = (m - r) w(x): vanishes at rho = mu, linearizes to b = -mu w.
inline Controller pointwise_relaxation(const AnalyticField& w) {
    auto vel = w.velocity;
    return pointwise(
        "pointwise:" + w.name,
        [vel](const Vec2& x, double r, double m) {
            const Vec2 b = vel(x);
            return Vec2{(m - r) * b[0], (m - r) * b[1]};
        },
        [vel](const Vec2& x, double, double) {
            const Vec2 b = vel(x);
            return Vec2{-b[0], -b[1]};
        });
}

/// k(x, r, m) = r (1, 0): translation symmetric, not rotation symmetric.
inline Controller constant_direction() {
    return pointwise(
        "constant_direction", [](const Vec2&, double r, double) { return Vec2{r, 0.0}; },
        [](const Vec2&, double, double) { return Vec2{1.0, 0.0}; }, {true, false});
}

inline std::vector<std::string> controller_catalog() {
    std::vector<std::string> keys{"error_gradient", "zero", "constant_direction"};
    for (const auto& f : vector_field_catalog()) keys.push_back("pointwise:" + f.name);
    return keys;
}

inline Controller make_controller(const std::string& key) {
    if (key == "error_gradient") return error_gradient();
    if (key == "zero") return zero_controller();
    if (key == "constant_direction") return constant_direction();
    const std::string prefix = "pointwise:";
    if (key.rfind(prefix, 0) == 0) return pointwise_relaxation(find_vector_field(key.substr(prefix.size())));
    fail(ErrorKind::InitializerUnknown, "unknown controller '" + key + "'");
}

/// Number of jets extracted per order, for checking the evaluation contract.
struct JetCounters {
    std::array<std::size_t, 3> by_order{0, 0, 0};
};

struct ApplyOptions {
    Boundary boundary = Boundary::Neumann;
    /// Zero the normal component in boundary cells (Neumann only).
    bool project_boundary = true;
    JetCounters* counters = nullptr;
};

/// Zero the wall-normal component of v in every boundary cell.
inline void project_boundary_normal(VectorField& v) {
    const GridSpec& g = v.grid;
    const int n0 = g.cells(0);
    const int n1 = g.cells(1);
    for (int j = 0; j < n1; ++j) {
        v[g.index(0, j)][0] = 0.0;
        v[g.index(n0 - 1, j)][0] = 0.0;
    }
    if (g.dim() == 2) {
        for (int i = 0; i < n0; ++i) {
            v[g.index(i, 0)][1] = 0.0;
            v[g.index(i, n1 - 1)][1] = 0.0;
        }
    }
}

inline VectorField apply(const Controller& c, const ScalarField& rho, const ScalarField& mu, const ApplyOptions& opt = {}) {
    require_same_grid(rho.grid, mu.grid, "apply");
    if (c.order < 0 || c.order > 2) fail(ErrorKind::InvalidArgument, "controller order must be 0, 1 or 2");
    const GridSpec& g = rho.grid;
    VectorField v(g);
    for (std::size_t k = 0; k < g.size(); ++k) {
        const Jet jr = jet_at(rho, k, c.order, opt.boundary);
        const Jet jm = jet_at(mu, k, c.order, opt.boundary);
        if (opt.counters) opt.counters->by_order[c.order] += 2;
        Vec2 out;
        try {
            out = c.evaluate(g.center(k), jr, jm);
        } catch (const DensityFloorError& e) {
            throw DensityFloorError(e.value(), e.floor(), static_cast<std::ptrdiff_t>(k));
        }
        if (g.dim() == 1) out[1] = 0.0;
        v[k] = out;
    }
    if (opt.project_boundary && opt.boundary == Boundary::Neumann) project_boundary_normal(v);
    return v;
}

}  // namespace swarmfield
