#pragma once

// Forward-Euler / first-order upwind finite-volume integration of
// d rho / dt = -div(rho v) with zero flux through the walls. Order-1
// controllers are evaluated on faces; others on cells.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "swarmfield/controllers.hpp"
#include "swarmfield/errors.hpp"
#include "swarmfield/grid.hpp"

namespace swarmfield {

struct IntegratorConfig {
    double cfl = 0.45;
    double t_end = 1.0;
    std::size_t max_steps = 100'000'000;
    std::optional<double> dt_override;
    std::size_t sample_stride = 10;
    /// Explicit diffusion number used for controllers with diffusivity > 0.
    double diffusion_number = 0.25;
    /// Extra times the integrator lands on exactly and samples.
    std::vector<double> checkpoints;
    bool record_controls = true;

    void validate() const {
        if (!(cfl > 0.0 && cfl < 1.0)) fail(ErrorKind::InvalidArgument, "cfl must lie in (0, 1)");
        if (!(t_end > 0.0) || !std::isfinite(t_end)) fail(ErrorKind::InvalidArgument, "t_end must be positive");
        if (max_steps == 0) fail(ErrorKind::InvalidArgument, "max_steps must be positive");
        if (sample_stride == 0) fail(ErrorKind::InvalidArgument, "sample_stride must be positive");
        if (dt_override && !(*dt_override > 0.0)) fail(ErrorKind::InvalidArgument, "dt_override must be positive");
        if (!(diffusion_number > 0.0 && diffusion_number <= 0.5)) {
            fail(ErrorKind::InvalidArgument, "diffusion_number must lie in (0, 0.5]");
        }
    }
};

/// cfl * min(h) / max(|v_component|, 1e-12).
inline double cfl_dt(const VectorField& v, double cfl) {
    const double vmax = std::max(v.max_abs_component(), 1e-12);
    return cfl * v.grid.min_h() / vmax;
}

/// Stable explicit step for a diffusion of the given coefficient.
inline double parabolic_dt(const GridSpec& g, double diffusivity, double diffusion_number) {
    if (!(diffusivity > 0.0)) return std::numeric_limits<double>::infinity();
    double inv = 0.0;
    for (int a = 0; a < g.dim(); ++a) inv += 1.0 / (g.h(a) * g.h(a));
    return diffusion_number / (diffusivity * inv);
}

/// Per-cell characteristic speeds |k + r dk/dr| of an order-0 closed loop.
inline VectorField pointwise_signal_speeds(const Controller& c, const ScalarField& rho, const ScalarField& mu) {
    VectorField s(rho.grid);
    for (std::size_t k = 0; k < rho.size(); ++k) {
        const Vec2 x = rho.grid.center(k);
        const Vec2 kv = c.law(x, rho[k], mu[k]);
        const Vec2 dk = c.dk_dr(x, rho[k], mu[k]);
        s[k] = {std::abs(kv[0] + rho[k] * dk[0]), rho.grid.dim() == 2 ? std::abs(kv[1] + rho[k] * dk[1]) : 0.0};
    }
    return s;
}

/// Largest characteristic speed |k + r dk/dr| of an order-0 closed loop.
inline double pointwise_signal_speed(const Controller& c, const ScalarField& rho, const ScalarField& mu) {
    return pointwise_signal_speeds(c, rho, mu).max_abs_component();
}

struct StepResult {
    ScalarField rho;
    /// Some cell went negative; a warning, not an error.
    bool positivity_loss = false;
};

namespace detail {

/// Applies `face_flux(lo, hi, axis, face)` across every interior face, where
/// `face` is the flat index into FaceField::normal[axis].
template <class Flux>
StepResult conservative_step(const ScalarField& rho, double dt, Flux&& face_flux) {
    const GridSpec& g = rho.grid;
    const int n0 = g.cells(0);
    const int n1 = g.cells(1);
    StepResult out{rho, false};
    std::vector<double>& r = out.rho.values;
    const double cx = dt / g.h(0);
    for (int i = 0; i + 1 < n0; ++i) {
        for (int j = 0; j < n1; ++j) {
            const std::size_t lo = g.index(i, j);
            const std::size_t hi = g.index(i + 1, j);
            const double flux = face_flux(lo, hi, 0, static_cast<std::size_t>(i + 1) * n1 + j);
            r[lo] -= cx * flux;
            r[hi] += cx * flux;
        }
    }
    if (g.dim() == 2) {
        const double cy = dt / g.h(1);
        for (int i = 0; i < n0; ++i) {
            for (int j = 0; j + 1 < n1; ++j) {
                const std::size_t lo = g.index(i, j);
                const std::size_t hi = g.index(i, j + 1);
                const double flux = face_flux(lo, hi, 1, static_cast<std::size_t>(i) * (n1 + 1) + j + 1);
                r[lo] -= cy * flux;
                r[hi] += cy * flux;
            }
        }
    }
    for (std::size_t k = 0; k < r.size(); ++k) {
        if (!std::isfinite(r[k])) {
            fail(ErrorKind::NonFiniteState, "non-finite density at cell " + std::to_string(k));
        }
        if (r[k] < 0.0) out.positivity_loss = true;
    }
    return out;
}

}  // namespace detail

/// One first-order upwind step with no flux through the walls.
///
/// Without `speeds` the face velocity is the mean of the adjacent cells and
/// the density is taken from the upwind side. With per-cell characteristic
/// speeds the face flux is the local Lax-Friedrichs flux of the cell fluxes
/// rho v, which upwinds along the characteristics of a density-dependent
/// velocity; for a fixed velocity both coincide.
inline StepResult step_continuity(const ScalarField& rho, const VectorField& v, double dt,
                                  const VectorField* speeds = nullptr) {
    require_same_grid(rho.grid, v.grid, "step_continuity");
    if (speeds) require_same_grid(rho.grid, speeds->grid, "step_continuity");
    return detail::conservative_step(rho, dt, [&](std::size_t lo, std::size_t hi, int axis, std::size_t) {
        if (speeds) {
            const double a = std::max((*speeds)[lo][axis], (*speeds)[hi][axis]);
            return 0.5 * (rho[lo] * v[lo][axis] + rho[hi] * v[hi][axis]) - 0.5 * a * (rho[hi] - rho[lo]);
        }
        const double vf = 0.5 * (v[lo][axis] + v[hi][axis]);
        if (vf == 0.0) return 0.0;
        return (vf > 0.0 ? rho[lo] : rho[hi]) * vf;
    });
}

/// Upwind step with normal velocities given directly on the faces.
inline StepResult step_continuity(const ScalarField& rho, const FaceField& vf, double dt) {
    require_same_grid(rho.grid, vf.grid, "step_continuity");
    return detail::conservative_step(rho, dt, [&](std::size_t lo, std::size_t hi, int axis, std::size_t face) {
        const double u = vf.normal[axis][face];
        if (u == 0.0) return 0.0;
        return (u > 0.0 ? rho[lo] : rho[hi]) * u;
    });
}

/// Normal control of an order-1 controller on every interior face. The face
/// jet has the mean of the two cells as value, the compact difference as
/// normal derivative and the mean cell gradient as tangential derivative.
/// Wall faces carry zero.
///
/// The compact normal derivative matters: cell-centered gradients averaged to
/// faces cannot see the odd-even mode, which then never decays.
inline FaceField face_controls(const Controller& c, const ScalarField& rho, const ScalarField& mu,
                               Boundary bc = Boundary::Neumann) {
    if (c.order != 1) fail(ErrorKind::InvalidArgument, "face_controls needs an order-1 controller");
    require_same_grid(rho.grid, mu.grid, "face_controls");
    const GridSpec& g = rho.grid;
    const int n0 = g.cells(0);
    const int n1 = g.cells(1);
    std::vector<Jet> jr(g.size());
    std::vector<Jet> jm(g.size());
    for (std::size_t k = 0; k < g.size(); ++k) {
        jr[k] = jet_at(rho, k, 1, bc);
        jm[k] = jet_at(mu, k, 1, bc);
    }
    auto face_jet = [&](const ScalarField& f, const std::vector<Jet>& jets, std::size_t lo, std::size_t hi, int axis) {
        Jet j;
        j.order = 1;
        j.value = 0.5 * (f[lo] + f[hi]);
        j.gradient = {0.5 * (jets[lo].gradient[0] + jets[hi].gradient[0]),
                      0.5 * (jets[lo].gradient[1] + jets[hi].gradient[1])};
        j.gradient[axis] = (f[hi] - f[lo]) / g.h(axis);
        return j;
    };
    auto normal = [&](std::size_t lo, std::size_t hi, int axis) {
        const Vec2 a = g.center(lo);
        const Vec2 b = g.center(hi);
        const Vec2 x{0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])};
        return c.evaluate(x, face_jet(rho, jr, lo, hi, axis), face_jet(mu, jm, lo, hi, axis))[axis];
    };
    FaceField out{g, {}};
    out.normal[0].assign(static_cast<std::size_t>(n0 + 1) * n1, 0.0);
    for (int i = 0; i + 1 < n0; ++i)
        for (int j = 0; j < n1; ++j)
            out.normal[0][static_cast<std::size_t>(i + 1) * n1 + j] = normal(g.index(i, j), g.index(i + 1, j), 0);
    if (g.dim() == 2) {
        out.normal[1].assign(static_cast<std::size_t>(n0) * (n1 + 1), 0.0);
        for (int i = 0; i < n0; ++i)
            for (int j = 0; j + 1 < n1; ++j)
                out.normal[1][static_cast<std::size_t>(i) * (n1 + 1) + j + 1] = normal(g.index(i, j), g.index(i, j + 1), 1);
    }
    return out;
}

inline double max_abs(const FaceField& f) {
    double m = 0.0;
    for (const auto& axis : f.normal)
        for (double u : axis) m = std::max(m, std::abs(u));
    return m;
}

struct Trajectory {
    std::vector<double> times;
    std::vector<ScalarField> densities;
    /// Control at each sample (empty when controls are not recorded).
    std::vector<VectorField> controls;
    /// Running integral of ||v||_{L2} dt up to each sample.
    std::vector<double> effort;
    std::size_t sample_stride = 10;
    std::size_t steps = 0;
    /// Minimum density over every step, not just samples.
    double min_rho = std::numeric_limits<double>::infinity();
    double total_effort = 0.0;
    bool positivity_loss = false;
};

/// Thrown when the state goes non-finite; carries what was computed so far.
class SimulationAborted : public Error {
public:
    SimulationAborted(const std::string& msg, Trajectory partial)
        : Error(ErrorKind::NonFiniteState, msg), partial_(std::move(partial)) {}
    const Trajectory& partial() const noexcept { return partial_; }

private:
    Trajectory partial_;
};

inline Trajectory simulate(const ScalarField& rho0, const Controller& controller, const ScalarField& mu,
                           const IntegratorConfig& config) {
    config.validate();
    require_same_grid(rho0.grid, mu.grid, "simulate");
    if (!rho0.all_finite() || !mu.all_finite()) fail(ErrorKind::NonFiniteState, "initial fields must be finite");

    std::vector<double> stops = config.checkpoints;
    stops.push_back(config.t_end);
    std::sort(stops.begin(), stops.end());
    stops.erase(std::remove_if(stops.begin(), stops.end(), [&](double s) { return !(s > 0.0) || s > config.t_end; }),
                stops.end());
    stops.erase(std::unique(stops.begin(), stops.end()), stops.end());

    Trajectory traj;
    traj.sample_stride = config.sample_stride;
    ScalarField rho = rho0;
    double t = 0.0;
    traj.min_rho = rho.min();
    const double dt_par = parabolic_dt(rho.grid, controller.diffusivity, config.diffusion_number);

    auto record = [&](const VectorField* v) {
        traj.times.push_back(t);
        traj.densities.push_back(rho);
        if (config.record_controls && v) traj.controls.push_back(*v);
        traj.effort.push_back(traj.total_effort);
    };

    std::size_t next_stop = 0;
    VectorField v = apply(controller, rho, mu);
    record(&v);
    try {
        while (next_stop < stops.size()) {
            if (traj.steps >= config.max_steps) {
                fail(ErrorKind::SolverStall, "max_steps reached at t=" + std::to_string(t));
            }
            std::optional<VectorField> speeds;
            if (controller.is_pointwise()) speeds = pointwise_signal_speeds(controller, rho, mu);
            std::optional<FaceField> faces;
            if (controller.order == 1) faces = face_controls(controller, rho, mu);
            double dt;
            if (config.dt_override) {
                dt = *config.dt_override;
            } else {
                dt = std::min(cfl_dt(v, config.cfl), dt_par);
                if (faces) dt = std::min(dt, config.cfl * rho.grid.min_h() / std::max(max_abs(*faces), 1e-12));
                if (speeds) {
                    const double s = speeds->max_abs_component();
                    if (s > 0.0) dt = std::min(dt, config.cfl * rho.grid.min_h() / s);
                }
            }
            const double target = stops[next_stop];
            bool landed = false;
            if (t + dt >= target * (1.0 - 1e-14)) {
                dt = target - t;
                landed = true;
            }
            traj.total_effort += norm_l2(v) * dt;
            StepResult s = faces ? step_continuity(rho, *faces, dt) : step_continuity(rho, v, dt, speeds ? &*speeds : nullptr);
            rho = std::move(s.rho);
            traj.positivity_loss = traj.positivity_loss || s.positivity_loss;
            traj.min_rho = std::min(traj.min_rho, rho.min());
            t = landed ? target : t + dt;
            ++traj.steps;
            v = apply(controller, rho, mu);
            if (landed) ++next_stop;
            if (landed || traj.steps % config.sample_stride == 0) record(&v);
        }
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::NonFiniteState) throw SimulationAborted(e.what(), std::move(traj));
        throw;
    }
    return traj;
}

}  // namespace swarmfield
