#pragma once

// Distances between densities on a common grid.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "swarmfield/errors.hpp"
#include "swarmfield/grid.hpp"
#include "swarmfield/network_simplex.hpp"
#include "swarmfield/poisson.hpp"

namespace swarmfield {

inline constexpr double kMassTolerance = 1e-9;

inline double lp_distance(const ScalarField& rho, const ScalarField& mu, double p) {
    require_same_grid(rho.grid, mu.grid, "lp_distance");
    if (!(p >= 1.0)) fail(ErrorKind::InvalidArgument, "p must be >= 1");
    if (std::isinf(p)) {
        double m = 0.0;
        for (std::size_t k = 0; k < rho.size(); ++k) m = std::max(m, std::abs(rho[k] - mu[k]));
        return m;
    }
    double s = 0.0;
    for (std::size_t k = 0; k < rho.size(); ++k) s += std::pow(std::abs(rho[k] - mu[k]), p);
    return std::pow(s * rho.grid.cell_volume(), 1.0 / p);
}

inline double tv_distance(const ScalarField& rho, const ScalarField& mu) { return 0.5 * lp_distance(rho, mu, 1.0); }

inline void require_equal_mass(const ScalarField& rho, const ScalarField& mu) {
    const double d = std::abs(rho.mass() - mu.mass());
    if (d > kMassTolerance) fail(ErrorKind::MassMismatch, "masses differ by " + std::to_string(d));
}

inline void require_nonnegative(const ScalarField& f, const char* what) {
    if (!f.all_finite() || f.min() < 0.0) fail(ErrorKind::InvalidArgument, std::string(what) + " must be a nonnegative finite density");
}

/// How a 1D cell field is read as a measure.
enum class QuantileMode {
    /// Piecewise-constant density; quantile functions are piecewise linear.
    PiecewiseConstant,
    /// Point masses at cell centers; quantile functions are step functions.
    Atomic,
};

/// 1D quadratic Wasserstein distance from the quantile representation,
/// integrated exactly over the merged cumulative-mass breakpoints.
inline double w2_1d(const ScalarField& rho, const ScalarField& mu,
                    QuantileMode mode = QuantileMode::PiecewiseConstant) {
    require_same_grid(rho.grid, mu.grid, "w2_1d");
    if (rho.grid.dim() != 1) fail(ErrorKind::InvalidArgument, "w2_1d needs a 1D grid");
    require_nonnegative(rho, "rho");
    require_nonnegative(mu, "mu");
    require_equal_mass(rho, mu);
    const GridSpec& g = rho.grid;
    const double vol = g.cell_volume();
    const double h = g.h(0);
    const int n = g.cells(0);

    // Cursor over one measure: cell index and mass already consumed in it.
    struct Cursor {
        const ScalarField* f;
        int cell = 0;
        double used = 0.0;
    };
    auto mass_of = [&](const Cursor& c) { return (*c.f)[c.cell] * vol; };
    auto skip_empty = [&](Cursor& c) {
        while (c.cell < n && mass_of(c) - c.used <= 0.0) {
            ++c.cell;
            c.used = 0.0;
        }
    };
    auto position = [&](const Cursor& c, double used) {
        if (mode == QuantileMode::Atomic) return (c.cell + 0.5) * h;
        return (c.cell + used / mass_of(c)) * h;
    };

    Cursor a{&rho};
    Cursor b{&mu};
    double cost = 0.0;
    skip_empty(a);
    skip_empty(b);
    while (a.cell < n && b.cell < n) {
        const double dq = std::min(mass_of(a) - a.used, mass_of(b) - b.used);
        const double d0 = position(a, a.used) - position(b, b.used);
        const double d1 = position(a, a.used + dq) - position(b, b.used + dq);
        cost += dq * (d0 * d0 + d0 * d1 + d1 * d1) / 3.0;
        a.used += dq;
        b.used += dq;
        skip_empty(a);
        skip_empty(b);
    }
    return std::sqrt(std::max(cost, 0.0));
}

struct TransportEntry {
    std::size_t source;
    std::size_t target;
    double weight;
};

struct TransportPlan {
    GridSpec source_grid;
    GridSpec target_grid;
    std::vector<TransportEntry> weights;

    std::vector<double> source_marginal() const {
        std::vector<double> m(source_grid.size(), 0.0);
        for (const auto& e : weights) m[e.source] += e.weight;
        return m;
    }
    std::vector<double> target_marginal() const {
        std::vector<double> m(target_grid.size(), 0.0);
        for (const auto& e : weights) m[e.target] += e.weight;
        return m;
    }
};

struct ExactTransport {
    double value = 0.0;
    TransportPlan plan;
    /// Dual potentials indexed by cell (zero on cells without mass).
    std::vector<double> f;
    std::vector<double> g;
    std::size_t iterations = 0;
};

inline double squared_distance(const Vec2& a, const Vec2& b) {
    const double dx = a[0] - b[0];
    const double dy = a[1] - b[1];
    return dx * dx + dy * dy;
}

inline constexpr std::size_t kExactTransportMaxCells = 4096;

/// Exact W2 between the cell-centered atomic measures via network simplex.
inline ExactTransport w2_exact_small(const ScalarField& rho, const ScalarField& mu) {
    require_same_grid(rho.grid, mu.grid, "w2_exact_small");
    const GridSpec& g = rho.grid;
    if (g.size() > kExactTransportMaxCells) {
        fail(ErrorKind::InvalidArgument, "exact transport is limited to " + std::to_string(kExactTransportMaxCells) + " cells");
    }
    require_nonnegative(rho, "rho");
    require_nonnegative(mu, "mu");
    require_equal_mass(rho, mu);
    const double vol = g.cell_volume();
    std::vector<std::size_t> src;
    std::vector<std::size_t> dst;
    std::vector<double> supply;
    std::vector<double> demand;
    for (std::size_t k = 0; k < g.size(); ++k) {
        if (rho[k] > 0.0) {
            src.push_back(k);
            supply.push_back(rho[k] * vol);
        }
        if (mu[k] > 0.0) {
            dst.push_back(k);
            demand.push_back(mu[k] * vol);
        }
    }
    ExactTransport out;
    out.plan.source_grid = g;
    out.plan.target_grid = g;
    out.f.assign(g.size(), 0.0);
    out.g.assign(g.size(), 0.0);
    if (src.empty() || dst.empty()) return out;

    std::vector<double> cost(src.size() * dst.size());
    for (std::size_t a = 0; a < src.size(); ++a) {
        const Vec2 x = g.center(src[a]);
        for (std::size_t b = 0; b < dst.size(); ++b) cost[a * dst.size() + b] = squared_distance(x, g.center(dst[b]));
    }
    const TransportSolution sol = solve_transport(supply, demand, cost);
    out.iterations = sol.iterations;
    for (std::size_t a = 0; a < src.size(); ++a) {
        for (std::size_t b = 0; b < dst.size(); ++b) {
            const double w = sol.flow[a * dst.size() + b];
            if (w > 0.0) out.plan.weights.push_back({src[a], dst[b], w});
        }
        out.f[src[a]] = sol.f[a];
    }
    for (std::size_t b = 0; b < dst.size(); ++b) out.g[dst[b]] = sol.g[b];
    out.value = std::sqrt(std::max(sol.cost, 0.0));
    return out;
}

/// W2 on any grid: 1D quantile formula, exact LP up to the oracle size.
inline double w2_distance(const ScalarField& rho, const ScalarField& mu) {
    if (rho.grid.dim() == 1) return w2_1d(rho, mu);
    return w2_exact_small(rho, mu).value;
}

struct MetricReport {
    std::string name;
    double value = 0.0;
    std::map<std::string, double> meta;
};

namespace detail {

inline double log_sum_exp(const double* v, std::size_t n, std::size_t stride) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n; ++k) m = std::max(m, v[k * stride]);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) s += std::exp(v[k * stride] - m);
    return m + std::log(s);
}

/// Separable entropic soft-min for squared Euclidean cost on a grid:
/// out_j = -eps * log sum_i exp(h_i - |x_i - x_j|^2 / eps).
class GridSoftmin {
public:
    explicit GridSoftmin(const GridSpec& g) : g_(g) {
        for (int a = 0; a < 2; ++a) {
            const int n = g.cells(a);
            cost_[a].assign(static_cast<std::size_t>(n) * n, 0.0);
            if (a >= g.dim()) continue;
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) {
                    const double d = (i - j) * g.h(a);
                    cost_[a][static_cast<std::size_t>(i) * n + j] = d * d;
                }
        }
    }

    std::vector<double> operator()(const std::vector<double>& h, double eps) const {
        const std::size_t n0 = static_cast<std::size_t>(g_.cells(0));
        const std::size_t n1 = static_cast<std::size_t>(g_.cells(1));
        // Pass over axis 0: t(j0, i1) = LSE_i0 h(i0, i1) - c0(i0, j0) / eps.
        std::vector<double> t(n0 * n1);
        std::vector<double> buf(std::max(n0, n1));
        for (std::size_t i1 = 0; i1 < n1; ++i1) {
            for (std::size_t j0 = 0; j0 < n0; ++j0) {
                for (std::size_t i0 = 0; i0 < n0; ++i0) buf[i0] = h[i0 * n1 + i1] - cost_[0][i0 * n0 + j0] / eps;
                t[j0 * n1 + i1] = log_sum_exp(buf.data(), n0, 1);
            }
        }
        std::vector<double> out(n0 * n1);
        if (g_.dim() == 1) {
            for (std::size_t k = 0; k < out.size(); ++k) out[k] = -eps * t[k];
            return out;
        }
        for (std::size_t j0 = 0; j0 < n0; ++j0) {
            for (std::size_t j1 = 0; j1 < n1; ++j1) {
                for (std::size_t i1 = 0; i1 < n1; ++i1) buf[i1] = t[j0 * n1 + i1] - cost_[1][i1 * n1 + j1] / eps;
                out[j0 * n1 + j1] = -eps * log_sum_exp(buf.data(), n1, 1);
            }
        }
        return out;
    }

private:
    GridSpec g_;
    std::array<std::vector<double>, 2> cost_;
};

inline std::vector<double> log_weights(const std::vector<double>& mass, const std::vector<double>& pot, double eps) {
    std::vector<double> h(mass.size());
    for (std::size_t k = 0; k < mass.size(); ++k) {
        h[k] = mass[k] > 0.0 ? std::log(mass[k]) + pot[k] / eps : -std::numeric_limits<double>::infinity();
    }
    return h;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k)
        if (a[k] != 0.0) s += a[k] * b[k];
    return s;
}

}  // namespace detail

/// Debiased entropic W2 (Sinkhorn divergence) with log-domain updates and
/// epsilon annealing from 10 h^2 (or the target, if larger) down to
/// `epsilon`. value = sqrt(max(S_eps, 0)).
inline MetricReport w2_sinkhorn(const ScalarField& rho, const ScalarField& mu, double epsilon,
                                std::size_t max_iters = 20000, double tolerance = 1e-6) {
    require_same_grid(rho.grid, mu.grid, "w2_sinkhorn");
    if (!(epsilon > 0.0)) fail(ErrorKind::InvalidArgument, "epsilon must be positive");
    require_nonnegative(rho, "rho");
    require_nonnegative(mu, "mu");
    require_equal_mass(rho, mu);
    const GridSpec& g = rho.grid;
    const double vol = g.cell_volume();
    std::vector<double> a(g.size());
    std::vector<double> b(g.size());
    for (std::size_t k = 0; k < g.size(); ++k) {
        a[k] = rho[k] * vol;
        b[k] = mu[k] * vol;
    }
    const detail::GridSoftmin softmin(g);
    const double h2 = g.min_h() * g.min_h();
    const double eps0 = std::max(10.0 * h2, epsilon);

    std::size_t iterations = 0;
    double violation = std::numeric_limits<double>::infinity();

    // Cross term: alternating updates; returns the marginal violation of a.
    std::vector<double> f(g.size(), 0.0);
    std::vector<double> gp(g.size(), 0.0);
    auto cross = [&](double eps, double tol) {
        while (iterations < max_iters) {
            gp = softmin(detail::log_weights(a, f, eps), eps);
            const std::vector<double> fn = softmin(detail::log_weights(b, gp, eps), eps);
            ++iterations;
            double v = 0.0;
            for (std::size_t k = 0; k < a.size(); ++k)
                if (a[k] > 0.0) v += a[k] * std::abs(1.0 - std::exp((f[k] - fn[k]) / eps));
            f = fn;
            violation = v;
            if (v <= tol) return;
        }
    };
    // Self term: symmetric averaged update.
    auto self = [&](const std::vector<double>& m, std::vector<double>& p, double eps, double tol) {
        std::size_t it = 0;
        while (it++ < max_iters) {
            const std::vector<double> t = softmin(detail::log_weights(m, p, eps), eps);
            double change = 0.0;
            for (std::size_t k = 0; k < m.size(); ++k) {
                const double next = 0.5 * (p[k] + t[k]);
                if (m[k] > 0.0) change = std::max(change, std::abs(next - p[k]) / eps);
                p[k] = next;
            }
            if (change <= tol) return;
        }
    };

    double eps = eps0;
    std::size_t stages = 0;
    while (true) {
        const bool last = eps <= epsilon;
        cross(eps, last ? tolerance : 1e-3);
        ++stages;
        if (last) break;
        eps = std::max(0.5 * eps, epsilon);
    }
    eps = epsilon;
    if (violation > tolerance) {
        fail(ErrorKind::NoConvergence, "Sinkhorn marginal violation " + std::to_string(violation) + " after " +
                                           std::to_string(iterations) + " iterations");
    }
    const double ot_ab = detail::dot(a, f) + detail::dot(b, gp);
    std::vector<double> fa = f;
    std::vector<double> fb = gp;
    self(a, fa, eps, tolerance);
    self(b, fb, eps, tolerance);
    const double ot_aa = 2.0 * detail::dot(a, fa);
    const double ot_bb = 2.0 * detail::dot(b, fb);
    const double s = ot_ab - 0.5 * (ot_aa + ot_bb);

    MetricReport r;
    r.name = "w2_sinkhorn";
    r.value = std::sqrt(std::max(s, 0.0));
    r.meta["iterations"] = static_cast<double>(iterations);
    r.meta["stages"] = static_cast<double>(stages);
    r.meta["marginal_violation"] = violation;
    r.meta["epsilon"] = epsilon;
    r.meta["debiased_cost"] = s;
    r.meta["entropic_cost"] = ot_ab;
    return r;
}

/// ||e||_{H^-1} = sqrt(<e, phi>) with -laplacian(phi) = e, phi zero-mean.
inline double h_minus1_norm(const ScalarField& e, double rel_tol = 1e-10) {
    if (!e.all_finite()) fail(ErrorKind::NonFiniteState, "h_minus1_norm: non-finite input");
    const double m = e.mass();
    if (std::abs(m) > kMassTolerance) fail(ErrorKind::NotZeroMean, "field integrates to " + std::to_string(m));
    const PoissonResult pr = solve_neumann_poisson(e, rel_tol);
    return std::sqrt(std::max(inner(e, pr.phi), 0.0));
}

struct BoundReport {
    double lhs = 0.0;
    double rhs = 0.0;
    bool satisfied = true;
};

/// W2^2 <= 0.5 diam^2 vol^(1 - 1/p) ||rho - mu||_{Lp}, judged with 1e-6 slack.
inline BoundReport check_w2_lp_bound(const ScalarField& rho, const ScalarField& mu, double p, double slack = 1e-6) {
    const GridSpec& g = rho.grid;
    const double w = w2_distance(rho, mu);
    BoundReport r;
    r.lhs = w * w;
    const double vol_factor = std::isinf(p) ? g.volume() : std::pow(g.volume(), 1.0 - 1.0 / p);
    r.rhs = 0.5 * g.diameter() * g.diameter() * vol_factor * lp_distance(rho, mu, p);
    r.satisfied = r.lhs <= r.rhs + slack;
    return r;
}

struct SandwichReport {
    double w2 = 0.0;
    double hm1 = 0.0;
    double lower = 0.0;  ///< b^-1/2 ||rho - mu||_{H^-1}
    double upper = 0.0;  ///< a^-1/2 ||rho - mu||_{H^-1}
    bool satisfied = true;
};

/// b^-1/2 ||rho - mu||_{H^-1} <= W2 <= a^-1/2 ||rho - mu||_{H^-1} for
/// densities bounded in [a, b]; `rel_slack` widens both sides.
inline SandwichReport check_w2_h1_sandwich(const ScalarField& rho, const ScalarField& mu, double a, double b,
                                           double rel_slack = 0.0) {
    if (!(a > 0.0 && a < b)) fail(ErrorKind::InvalidArgument, "need 0 < a < b");
    const double lo = std::min(rho.min(), mu.min());
    const double hi = std::max(rho.max(), mu.max());
    if (lo < a || hi > b) fail(ErrorKind::InvalidArgument, "densities are not bounded by [a, b]");
    SandwichReport r;
    r.w2 = w2_distance(rho, mu);
    r.hm1 = h_minus1_norm(rho - mu);
    r.lower = r.hm1 / std::sqrt(b);
    r.upper = r.hm1 / std::sqrt(a);
    r.satisfied = r.w2 >= r.lower * (1.0 - rel_slack) - 1e-12 && r.w2 <= r.upper * (1.0 + rel_slack) + 1e-12;
    return r;
}

}  // namespace swarmfield
