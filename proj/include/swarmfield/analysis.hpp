#pragma once

// Diagnostics for closed loops: linearization of pointwise controllers,
// mixing correlations, weak-convergence pairings, exponential decay fits and
// equivariance residuals. Flows live in flow.hpp, spectra in spectral.hpp.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "swarmfield/controllers.hpp"
#include "swarmfield/dynamics.hpp"
#include "swarmfield/errors.hpp"
#include "swarmfield/flow.hpp"
#include "swarmfield/grid.hpp"
#include "swarmfield/parallel.hpp"
#include "swarmfield/spectral.hpp"

namespace swarmfield {

using ScalarFunction = std::function<double(const Vec2&)>;

// ---------------------------------------------------------------------------
// Linearization of pointwise closed loops

/// L2 norm of div(mu k(., mu, mu)); zero when rho = mu is an equilibrium.
inline double fixed_point_residual(const Controller& c, const ScalarField& mu) {
    VectorField flux = apply(c, mu, mu);
    for (std::size_t k = 0; k < mu.size(); ++k) {
        flux[k][0] *= mu[k];
        flux[k][1] *= mu[k];
    }
    return norm_l2(divergence(flux));
}

/// b(x) = k(x, mu, mu) + mu dk/dr(x, mu, mu), the velocity of the linearized
/// error dynamics d_t e = -div(e b).
inline VectorField linearize_pointwise(const Controller& c, const ScalarField& mu, double tolerance = 1e-6) {
    if (!c.is_pointwise()) fail(ErrorKind::InvalidArgument, c.name + " is not a pointwise controller");
    const double residual = fixed_point_residual(c, mu);
    if (residual > tolerance) {
        std::ostringstream msg;
        msg << "mu is not a fixed point of " << c.name << ": residual " << residual;
        fail(ErrorKind::NotAFixedPoint, msg.str());
    }
    const GridSpec& g = mu.grid;
    VectorField b(g);
    for (std::size_t k = 0; k < g.size(); ++k) {
        const Vec2 x = g.center(k);
        const Vec2 kv = c.law(x, mu[k], mu[k]);
        const Vec2 dk = c.dk_dr(x, mu[k], mu[k]);
        b[k] = {kv[0] + mu[k] * dk[0], g.dim() == 2 ? kv[1] + mu[k] * dk[1] : 0.0};
    }
    return b;
}

struct LinearizationGap {
    double amplitude = 0.0;
    double t = 0.0;
    /// ||(rho_t - mu) - e_t||_2 with e_t the linear transport of rho_0 - mu.
    double discrepancy = 0.0;
    double linear_norm = 0.0;
};

/// Run the nonlinear loop from mu + amplitude * shape and compare it at time
/// t with the linearized transport of the same initial error.
inline LinearizationGap linearization_gap(const Controller& c, const ScalarField& mu, const ScalarField& shape,
                                          double amplitude, double t, IntegratorConfig config,
                                          const FlowOptions& flow = {}) {
    const ScalarField e0 = amplitude * shape;
    config.t_end = t;
    config.record_controls = false;
    const Trajectory tr = simulate(mu + e0, c, mu, config);
    const ScalarField nonlinear = tr.densities.back() - mu;
    const FlowField b = interpolated_flow(linearize_pointwise(c, mu), "linearized:" + c.name);
    const ScalarField linear = transport_linear(e0, b, {t}, flow).fields.back();
    return {amplitude, t, norm_l2(nonlinear - linear), norm_l2(linear)};
}

// ---------------------------------------------------------------------------
// Mixing

enum class MixingVerdict { Decaying, Oscillating, Inconclusive };

inline const char* to_string(MixingVerdict v) {
    switch (v) {
        case MixingVerdict::Decaying: return "decaying";
        case MixingVerdict::Oscillating: return "oscillating";
        case MixingVerdict::Inconclusive: return "inconclusive";
    }
    return "unknown";
}

struct MixingReport {
    std::vector<double> t_grid;
    std::vector<double> correlations;
    double product_of_means = 0.0;
    double invariance_residual = 0.0;
    /// Largest |C - product| over the last third, relative to the first gap.
    double late_gap_ratio = 0.0;
    MixingVerdict verdict = MixingVerdict::Inconclusive;
};

/// Decaying: the gap |C - product| stays below 5% of its initial value over
/// the last third of the samples. Oscillating: it climbs back to 50% or more
/// there. A vanishing initial gap is inconclusive.
inline MixingVerdict classify_correlations(const std::vector<double>& c, double product, double* late_ratio = nullptr) {
    if (c.size() < 3) fail(ErrorKind::InvalidArgument, "need at least three correlation samples");
    const double g0 = std::abs(c.front() - product);
    const double scale = std::max({std::abs(c.front()), std::abs(product), 1e-300});
    if (late_ratio) *late_ratio = 0.0;
    if (g0 <= 1e-12 * scale) return MixingVerdict::Inconclusive;
    double late = 0.0;
    for (std::size_t i = (2 * c.size()) / 3; i < c.size(); ++i) late = std::max(late, std::abs(c[i] - product) / g0);
    if (late_ratio) *late_ratio = late;
    if (late < 0.05) return MixingVerdict::Decaying;
    if (late >= 0.5) return MixingVerdict::Oscillating;
    return MixingVerdict::Inconclusive;
}

/// ||div(pi b)||_2 with face fluxes: stream fields use the exact face average
/// of the normal velocity, others the face-center value.
inline double invariance_residual(const FlowField& b, const ScalarField& pi) {
    require_same_grid(b.domain, pi.grid, "invariance_residual");
    const GridSpec& g = pi.grid;
    const int n0 = g.cells(0);
    const int n1 = g.cells(1);
    const bool two_d = g.dim() == 2;
    const double h0 = g.h(0);
    const double h1 = two_d ? g.h(1) : 1.0;
    auto pi_face = [&](int i_lo, int j_lo, int i_hi, int j_hi, bool lo_in, bool hi_in) {
        if (lo_in && hi_in) return 0.5 * (pi[g.index(i_lo, j_lo)] + pi[g.index(i_hi, j_hi)]);
        return lo_in ? pi[g.index(i_lo, j_lo)] : pi[g.index(i_hi, j_hi)];
    };
    FaceField flux{g, {}};
    flux.normal[0].assign(static_cast<std::size_t>(n0 + 1) * n1, 0.0);
    for (int fi = 0; fi <= n0; ++fi) {
        for (int j = 0; j < n1; ++j) {
            const double x = fi * h0;
            double vn;
            if (b.stream) {
                vn = (b.stream({x, (j + 1) * h1}) - b.stream({x, j * h1})) / h1;
            } else {
                vn = b.velocity({x, two_d ? (j + 0.5) * h1 : 0.0})[0];
            }
            flux.normal[0][static_cast<std::size_t>(fi) * n1 + j] = vn * pi_face(fi - 1, j, fi, j, fi > 0, fi < n0);
        }
    }
    if (two_d) {
        flux.normal[1].assign(static_cast<std::size_t>(n0) * (n1 + 1), 0.0);
        for (int i = 0; i < n0; ++i) {
            for (int fj = 0; fj <= n1; ++fj) {
                const double y = fj * h1;
                double vn;
                if (b.stream) {
                    vn = -(b.stream({(i + 1) * h0, y}) - b.stream({i * h0, y})) / h0;
                } else {
                    vn = b.velocity({(i + 0.5) * h0, y})[1];
                }
                flux.normal[1][static_cast<std::size_t>(i) * (n1 + 1) + fj] =
                    vn * pi_face(i, fj - 1, i, fj, fj > 0, fj < n1);
            }
        }
    }
    return norm_l2(face_divergence(flux));
}

/// C(t) = <f, g o phi_t^-1>_{L2(pi)} by cell quadrature with backtracked
/// characteristics. pi is normalized to unit mass.
inline MixingReport mixing_correlation(const FlowField& b, const ScalarField& pi, const ScalarFunction& f,
                                       const ScalarFunction& g, const std::vector<double>& t_grid,
                                       const FlowOptions& opt = {}, double tolerance = 1e-6) {
    detail::require_time_grid(t_grid);
    if (!(pi.min() >= 0.0) || !(pi.mass() > 0.0)) fail(ErrorKind::InvalidArgument, "pi must be a density");
    MixingReport out;
    out.t_grid = t_grid;
    out.invariance_residual = invariance_residual(b, pi);
    if (out.invariance_residual > tolerance) {
        std::ostringstream msg;
        msg << "pi is not invariant under " << b.name << ": residual " << out.invariance_residual;
        fail(ErrorKind::NotInvariant, msg.str());
    }
    const GridSpec& grid = pi.grid;
    const double mass = pi.mass();
    std::vector<double> weight(grid.size());
    std::vector<double> fv(grid.size());
    double mean_f = 0.0;
    double mean_g = 0.0;
    for (std::size_t k = 0; k < grid.size(); ++k) {
        weight[k] = pi[k] * grid.cell_volume() / mass;
        fv[k] = f(grid.center(k));
        mean_f += weight[k] * fv[k];
        mean_g += weight[k] * g(grid.center(k));
    }
    out.product_of_means = mean_f * mean_g;

    const std::size_t nt = t_grid.size();
    std::vector<double> terms(grid.size() * nt);
    parallel_for(
        grid.size(),
        [&](std::size_t k) {
            detail::Characteristic c;
            c.x = grid.center(k);
            double t = 0.0;
            for (std::size_t i = 0; i < nt; ++i) {
                detail::advance(b, c, t_grid[i] - t, -1.0, opt, false);
                t = t_grid[i];
                terms[k * nt + i] = weight[k] * fv[k] * g(c.x);
            }
        },
        opt.jobs);
    out.correlations.assign(nt, 0.0);
    for (std::size_t k = 0; k < grid.size(); ++k)
        for (std::size_t i = 0; i < nt; ++i) out.correlations[i] += terms[k * nt + i];
    if (nt >= 3) out.verdict = classify_correlations(out.correlations, out.product_of_means, &out.late_gap_ratio);
    return out;
}

/// Estimator calibration on the discrete-time cat map (x, y) -> (2x + y,
/// x + y) mod 1, which is mixing for Lebesgue measure. Correlations of a
/// smooth observable with itself are estimated by Monte Carlo.
inline MixingReport cat_map_correlation(int iterations = 10, std::size_t samples = 200000, std::uint64_t seed = 7) {
    using std::numbers::pi;
    if (iterations < 2) fail(ErrorKind::InvalidArgument, "need at least two iterations");
    auto obs = [](double x, double y) { return std::exp(std::cos(2 * pi * x) + 0.5 * std::sin(2 * pi * y)); };
    auto wrap = [](double v) { return v - std::floor(v); };
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    MixingReport out;
    out.correlations.assign(static_cast<std::size_t>(iterations) + 1, 0.0);
    double mean = 0.0;
    for (std::size_t s = 0; s < samples; ++s) {
        double x = u(rng);
        double y = u(rng);
        const double f0 = obs(x, y);
        mean += f0;
        for (int n = 0; n <= iterations; ++n) {
            out.correlations[n] += f0 * obs(x, y);
            // Inverse map: (x, y) -> (x - y, 2y - x).
            const double nx = wrap(x - y);
            const double ny = wrap(2.0 * y - x);
            x = nx;
            y = ny;
        }
    }
    mean /= static_cast<double>(samples);
    for (double& c : out.correlations) c /= static_cast<double>(samples);
    for (int n = 0; n <= iterations; ++n) out.t_grid.push_back(n);
    out.product_of_means = mean * mean;
    out.verdict = classify_correlations(out.correlations, out.product_of_means, &out.late_gap_ratio);
    return out;
}

// ---------------------------------------------------------------------------
// Weak convergence

struct TestFunction {
    std::string name;
    ScalarField values;
};

/// cos(pi k x / Lx) cos(pi l y / Ly) for 0 <= k, l <= max_mode, (k, l) != 0.
inline std::vector<TestFunction> cosine_dictionary(const GridSpec& g, int max_mode = 3) {
    using std::numbers::pi;
    std::vector<TestFunction> out;
    const int lmax = g.dim() == 2 ? max_mode : 0;
    for (int k = 0; k <= max_mode; ++k) {
        for (int l = 0; l <= lmax; ++l) {
            if (k == 0 && l == 0) continue;
            std::string name = "cos" + std::to_string(k);
            if (g.dim() == 2) name += "_" + std::to_string(l);
            out.push_back({name, ScalarField::sample(g, [&](const Vec2& p) {
                               return std::cos(pi * k * p[0] / g.extent(0)) *
                                      (g.dim() == 2 ? std::cos(pi * l * p[1] / g.extent(1)) : 1.0);
                           })});
        }
    }
    return out;
}

struct WeakProbe {
    std::vector<std::string> names;
    /// pairings[test][sample] = <psi, e_t>.
    std::vector<std::vector<double>> pairings;
    /// max over tests of |<psi, e_t>| per sample.
    std::vector<double> max_pairing;
    /// |last pairing| / |first pairing| per test.
    std::vector<double> decay_ratio;
};

inline WeakProbe weak_convergence_probe(const std::vector<ScalarField>& sequence, const std::vector<TestFunction>& tests) {
    WeakProbe out;
    out.max_pairing.assign(sequence.size(), 0.0);
    for (const TestFunction& t : tests) {
        out.names.push_back(t.name);
        std::vector<double> row;
        for (std::size_t i = 0; i < sequence.size(); ++i) {
            const double p = inner(t.values, sequence[i]);
            row.push_back(p);
            out.max_pairing[i] = std::max(out.max_pairing[i], std::abs(p));
        }
        const double first = row.empty() ? 0.0 : std::abs(row.front());
        out.decay_ratio.push_back(first > 0.0 ? std::abs(row.back()) / first : 0.0);
        out.pairings.push_back(std::move(row));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Exponential decay

struct DecayFit {
    double lambda_hat = 0.0;
    double c_hat = 0.0;
    double r_squared = 0.0;
    std::array<double, 2> window{0.0, 0.0};
    std::size_t points = 0;
};

/// Least-squares fit of log v = log C - lambda t over samples with t in
/// [t_lo, t_hi] and v > 0.
inline DecayFit fit_decay(const std::vector<double>& times, const std::vector<double>& values,
                          double t_lo = -std::numeric_limits<double>::infinity(),
                          double t_hi = std::numeric_limits<double>::infinity()) {
    if (times.size() != values.size()) fail(ErrorKind::InvalidArgument, "times and values differ in length");
    std::vector<double> t;
    std::vector<double> y;
    for (std::size_t i = 0; i < times.size(); ++i) {
        if (times[i] >= t_lo && times[i] <= t_hi && values[i] > 0.0 && std::isfinite(values[i])) {
            t.push_back(times[i]);
            y.push_back(std::log(values[i]));
        }
    }
    if (t.size() < 2 || t.front() == t.back()) {
        fail(ErrorKind::WindowEmpty, "decay fit needs two distinct positive samples in the window");
    }
    const double n = static_cast<double>(t.size());
    double tm = 0.0;
    double ym = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        tm += t[i];
        ym += y[i];
    }
    tm /= n;
    ym /= n;
    double stt = 0.0;
    double sty = 0.0;
    double syy = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        stt += (t[i] - tm) * (t[i] - tm);
        sty += (t[i] - tm) * (y[i] - ym);
        syy += (y[i] - ym) * (y[i] - ym);
    }
    const double slope = sty / stt;
    DecayFit fit;
    fit.lambda_hat = -slope;
    fit.c_hat = std::exp(ym - slope * tm);
    double ss_res = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double r = y[i] - (ym + slope * (t[i] - tm));
        ss_res += r * r;
    }
    fit.r_squared = syy > 1e-300 ? 1.0 - ss_res / syy : 1.0;
    fit.window = {t.front(), t.back()};
    fit.points = t.size();
    return fit;
}

// ---------------------------------------------------------------------------
// Equivariance

/// Lattice isometry acting on cell fields. Translations and rotations about a
/// pivot cell act on the periodic extension of the box; rotations without a
/// pivot turn the box about its center and keep the walls.
struct GridTransform {
    enum class Kind { Translation, Rotation };
    Kind kind = Kind::Translation;
    std::array<int, 2> shift{0, 0};
    int quarter_turns = 0;
    std::optional<std::array<int, 2>> pivot;

    static GridTransform translation(int di, int dj = 0) { return {Kind::Translation, {di, dj}, 0, std::nullopt}; }
    static GridTransform rotation(int quarter_turns) { return {Kind::Rotation, {0, 0}, quarter_turns, std::nullopt}; }
    static GridTransform rotation_about(int quarter_turns, int pi, int pj = 0) {
        return {Kind::Rotation, {0, 0}, quarter_turns, std::array{pi, pj}};
    }

    bool periodic() const { return kind == Kind::Translation || pivot.has_value(); }

    std::string describe() const {
        std::ostringstream s;
        if (kind == Kind::Translation) {
            s << "translation(" << shift[0] << "," << shift[1] << ")";
        } else {
            s << "rotation(" << 90 * quarter_turns << " deg";
            if (pivot) s << " about cell " << (*pivot)[0] << "," << (*pivot)[1];
            s << ")";
        }
        return s.str();
    }
};

namespace detail {

inline int turns_mod4(int q) { return ((q % 4) + 4) % 4; }

inline void require_supported(const GridTransform& t, const GridSpec& g) {
    if (t.kind == GridTransform::Kind::Translation) {
        if (g.dim() == 1 && t.shift[1] != 0) fail(ErrorKind::UnsupportedTransform, "1D grids translate along x only");
        return;
    }
    const int q = turns_mod4(t.quarter_turns);
    if (g.dim() == 1) {
        if (q % 2 != 0) fail(ErrorKind::UnsupportedTransform, "1D grids support half turns only");
        return;
    }
    if (q % 2 != 0 && (g.cells(0) != g.cells(1) || g.extent(0) != g.extent(1))) {
        fail(ErrorKind::UnsupportedTransform, "quarter turns need a square grid");
    }
    if (t.pivot) {
        const auto [pi, pj] = *t.pivot;
        if (pi < 0 || pi >= g.cells(0) || pj < 0 || pj >= g.cells(1))
            fail(ErrorKind::UnsupportedTransform, "rotation pivot outside the grid");
    }
}

/// Image cell of (i, j).
inline std::array<int, 2> image_cell(const GridTransform& t, const GridSpec& g, int i, int j) {
    const int n0 = g.cells(0);
    const int n1 = g.dim() == 2 ? g.cells(1) : 1;
    if (t.kind == GridTransform::Kind::Translation) return {wrap(i + t.shift[0], n0), wrap(j + t.shift[1], n1)};
    // Work in doubled coordinates so the box center (possibly a corner) is a
    // lattice point.
    const int ci = t.pivot ? 2 * (*t.pivot)[0] : n0 - 1;
    const int cj = t.pivot ? 2 * (*t.pivot)[1] : n1 - 1;
    int u = 2 * i - ci;
    int v = 2 * j - cj;
    for (int q = 0; q < turns_mod4(t.quarter_turns); ++q) {
        const int nu = -v;
        v = u;
        u = nu;
    }
    int ri = (u + ci) / 2;
    int rj = (v + cj) / 2;
    if (t.pivot) {
        ri = wrap(ri, n0);
        rj = wrap(rj, n1);
    }
    return {ri, g.dim() == 2 ? rj : 0};
}

inline Mat2 rotation_matrix(const GridTransform& t) {
    static constexpr int c[4] = {1, 0, -1, 0};
    static constexpr int s[4] = {0, 1, 0, -1};
    if (t.kind == GridTransform::Kind::Translation) return {{{1.0, 0.0}, {0.0, 1.0}}};
    const int q = turns_mod4(t.quarter_turns);
    return {{{double(c[q]), double(-s[q])}, {double(s[q]), double(c[q])}}};
}

}  // namespace detail

/// Pushforward of a scalar field: (T f)(T x) = f(x).
inline ScalarField push_forward(const GridTransform& t, const ScalarField& f) {
    const GridSpec& g = f.grid;
    detail::require_supported(t, g);
    ScalarField out(g);
    for (std::size_t k = 0; k < g.size(); ++k) {
        const auto [i, j] = g.coords(k);
        const auto [ri, rj] = detail::image_cell(t, g, i, j);
        out[g.index(ri, rj)] = f[k];
    }
    return out;
}

/// Pushforward of a vector field: (T v)(T x) = R v(x).
inline VectorField push_forward(const GridTransform& t, const VectorField& v) {
    const GridSpec& g = v.grid;
    detail::require_supported(t, g);
    const Mat2 r = detail::rotation_matrix(t);
    VectorField out(g);
    for (std::size_t k = 0; k < g.size(); ++k) {
        const auto [i, j] = g.coords(k);
        const auto [ri, rj] = detail::image_cell(t, g, i, j);
        out[g.index(ri, rj)] = {r[0][0] * v[k][0] + r[0][1] * v[k][1], r[1][0] * v[k][0] + r[1][1] * v[k][1]};
    }
    return out;
}

/// ||T K(rho, mu) - K(T rho, T mu)||_2 / max(||K(rho, mu)||_2, 1e-14).
inline double equivariance_residual(const Controller& c, const GridTransform& t, const ScalarField& rho,
                                    const ScalarField& mu) {
    require_same_grid(rho.grid, mu.grid, "equivariance_residual");
    detail::require_supported(t, rho.grid);
    ApplyOptions opt;
    opt.boundary = t.periodic() ? Boundary::Periodic : Boundary::Neumann;
    const VectorField k = apply(c, rho, mu, opt);
    const VectorField lhs = push_forward(t, k);
    const VectorField rhs = apply(c, push_forward(t, rho), push_forward(t, mu), opt);
    VectorField diff(rho.grid);
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = {lhs[i][0] - rhs[i][0], lhs[i][1] - rhs[i][1]};
    return norm_l2(diff) / std::max(norm_l2(k), 1e-14);
}

}  // namespace swarmfield
