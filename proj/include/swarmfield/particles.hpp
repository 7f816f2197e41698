#pragma once

// Finite-agent realization of a density controller: sample agents, estimate
// their density with a wall-reflected Gaussian kernel, evaluate the
// controller on that estimate and move every agent with the velocity of the
// cell it occupies.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "swarmfield/controllers.hpp"
#include "swarmfield/dynamics.hpp"
#include "swarmfield/errors.hpp"
#include "swarmfield/grid.hpp"
#include "swarmfield/metrics.hpp"
#include "swarmfield/parallel.hpp"

namespace swarmfield {

struct AgentSet {
    int dim = 1;
    std::vector<Vec2> positions;
    std::uint64_t seed = 0;
    /// Largest distance any agent had to be clamped after reflection.
    double clamp = 0.0;

    std::size_t size() const { return positions.size(); }
};

struct KdeConfig {
    double bandwidth = 0.0;
    /// Linear-binning resolution per cell and axis.
    int sub_bins = 4;
    /// Kernel support in bandwidths.
    double truncation = 5.0;
    /// Worker threads for the binning pass; 0 uses every core.
    unsigned jobs = 0;

    static KdeConfig for_grid(const GridSpec& g, double cells = 2.0) {
        KdeConfig k;
        double h = g.h(0);
        if (g.dim() == 2) h = std::max(h, g.h(1));
        k.bandwidth = cells * h;
        return k;
    }

    void validate(const GridSpec& g) const {
        double h = g.h(0);
        if (g.dim() == 2) h = std::max(h, g.h(1));
        if (!(bandwidth >= 0.5 * h)) fail(ErrorKind::InvalidArgument, "KDE bandwidth must be at least h/2");
        if (sub_bins < 1) fail(ErrorKind::InvalidArgument, "sub_bins must be positive");
        if (!(truncation >= 3.0)) fail(ErrorKind::InvalidArgument, "KDE truncation must be at least 3 bandwidths");
    }
};

/// Draw n agents from a unit-mass density: inverse CDF in 1D, multinomial
/// cell counts with uniform jitter in 2D.
inline AgentSet sample_density(const ScalarField& rho, std::size_t n, std::uint64_t seed) {
    const GridSpec& g = rho.grid;
    if (n < 10) fail(ErrorKind::InvalidArgument, "need at least 10 agents");
    if (!rho.is_probability_density(1e-9)) fail(ErrorKind::InvalidArgument, "sampling needs a unit-mass density");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    AgentSet out;
    out.dim = g.dim();
    out.seed = seed;
    out.positions.reserve(n);
    const double vol = g.cell_volume();
    if (g.dim() == 1) {
        std::vector<double> cdf(g.size());
        double acc = 0.0;
        for (std::size_t k = 0; k < g.size(); ++k) cdf[k] = acc += rho[k] * vol;
        for (std::size_t a = 0; a < n; ++a) {
            const double m = u(rng) * acc;
            const auto k = static_cast<std::size_t>(
                std::min<std::ptrdiff_t>(std::upper_bound(cdf.begin(), cdf.end(), m) - cdf.begin(), g.size() - 1));
            const double below = k == 0 ? 0.0 : cdf[k - 1];
            const double frac = std::clamp((m - below) / (rho[k] * vol), 0.0, 1.0);
            out.positions.push_back({(static_cast<double>(k) + frac) * g.h(0), 0.0});
        }
        return out;
    }
    double remaining_mass = 0.0;
    for (double v : rho.values) remaining_mass += v * vol;
    std::size_t remaining = n;
    for (std::size_t k = 0; k < g.size() && remaining > 0; ++k) {
        const double p = remaining_mass > 0.0 ? std::clamp(rho[k] * vol / remaining_mass, 0.0, 1.0) : 1.0;
        std::size_t count = remaining;
        if (p < 1.0) count = std::binomial_distribution<std::size_t>(remaining, p)(rng);
        remaining -= count;
        remaining_mass -= rho[k] * vol;
        const auto [i, j] = g.coords(k);
        for (std::size_t a = 0; a < count; ++a)
            out.positions.push_back({(i + u(rng)) * g.h(0), (j + u(rng)) * g.h(1)});
    }
    return out;
}

namespace detail {

/// Sparse weights from fine bins to cells along one axis: the mass of a
/// wall-reflected Gaussian centered on each bin that falls in each cell.
struct AxisKernel {
    std::vector<int> first_cell;
    std::vector<std::vector<double>> weights;
};

inline AxisKernel axis_kernel(int cells, double length, int sub_bins, double sigma, double truncation) {
    const double h = length / cells;
    const int bins = cells * sub_bins;
    const double delta = length / bins;
    const double reach = truncation * sigma;
    auto cdf = [sigma](double z) { return 0.5 * std::erfc(-z / (sigma * std::numbers::sqrt2)); };
    AxisKernel k;
    k.first_cell.resize(bins);
    k.weights.resize(bins);
    for (int b = 0; b < bins; ++b) {
        const double c = (b + 0.5) * delta;
        const int lo = std::max(0, static_cast<int>(std::floor((c - reach) / h)));
        const int hi = std::min(cells - 1, static_cast<int>(std::floor((c + reach) / h)));
        k.first_cell[b] = lo;
        for (int i = lo; i <= hi; ++i) {
            const double a = i * h;
            double w = 0.0;
            for (double img : {c, -c, 2.0 * length - c}) w += cdf(a + h - img) - cdf(a - img);
            k.weights[b].push_back(w);
        }
    }
    return k;
}

/// Linear binning of one coordinate onto `bins` bins of width delta.
inline void linear_bin(double x, double delta, int bins, int& b0, double& w1) {
    const double t = std::clamp(x / delta - 0.5, 0.0, static_cast<double>(bins - 1));
    b0 = std::min(static_cast<int>(t), bins - 2 < 0 ? 0 : bins - 2);
    w1 = bins == 1 ? 0.0 : t - b0;
}

}  // namespace detail

inline constexpr std::size_t kKdeChunk = 16384;

/// Kernel density estimate of the agents as cell averages on `g`,
/// renormalized to unit mass. Agents are linearly binned onto sub-cell bins
/// before the kernel is applied.
inline ScalarField kde_density(const AgentSet& agents, const GridSpec& g, const KdeConfig& kde) {
    kde.validate(g);
    if (agents.size() < 10) fail(ErrorKind::InvalidArgument, "KDE needs at least 10 agents");
    if (agents.dim != g.dim()) fail(ErrorKind::InvalidArgument, "agent and grid dimensions differ");
    const int n0 = g.cells(0);
    const int n1 = g.dim() == 2 ? g.cells(1) : 1;
    const int b0n = n0 * kde.sub_bins;
    const int b1n = g.dim() == 2 ? n1 * kde.sub_bins : 1;
    const double d0 = g.extent(0) / b0n;
    const double d1 = g.dim() == 2 ? g.extent(1) / b1n : 1.0;

    // Fixed-size agent chunks binned independently and summed in chunk
    // order, so the estimate does not depend on the thread count.
    const std::size_t bin_count = static_cast<std::size_t>(b0n) * b1n;
    const std::size_t chunks = (agents.size() + kKdeChunk - 1) / kKdeChunk;
    std::vector<std::vector<double>> partial_bins(chunks);
    parallel_for(
        chunks,
        [&](std::size_t c) {
            std::vector<double>& bins = partial_bins[c];
            bins.assign(bin_count, 0.0);
            const std::size_t hi = std::min(agents.size(), (c + 1) * kKdeChunk);
            for (std::size_t a = c * kKdeChunk; a < hi; ++a) {
                const Vec2& p = agents.positions[a];
                int i0;
                double w0;
                detail::linear_bin(p[0], d0, b0n, i0, w0);
                if (g.dim() == 1) {
                    bins[i0] += 1.0 - w0;
                    if (w0 > 0.0) bins[i0 + 1] += w0;
                    continue;
                }
                int j0;
                double w1;
                detail::linear_bin(p[1], d1, b1n, j0, w1);
                for (int s = 0; s < 2; ++s)
                    for (int t = 0; t < 2; ++t) {
                        const double w = (s ? w0 : 1.0 - w0) * (t ? w1 : 1.0 - w1);
                        if (w > 0.0) bins[static_cast<std::size_t>(i0 + s) * b1n + j0 + t] += w;
                    }
            }
        },
        kde.jobs);
    std::vector<double> bins(bin_count, 0.0);
    for (const auto& part : partial_bins)
        for (std::size_t b = 0; b < bin_count; ++b) bins[b] += part[b];

    const detail::AxisKernel kx = detail::axis_kernel(n0, g.extent(0), kde.sub_bins, kde.bandwidth, kde.truncation);
    // Along x: bins (b0n x b1n) -> partial (n0 x b1n).
    std::vector<double> partial(static_cast<std::size_t>(n0) * b1n, 0.0);
    for (int b = 0; b < b0n; ++b) {
        for (std::size_t q = 0; q < kx.weights[b].size(); ++q) {
            const int i = kx.first_cell[b] + static_cast<int>(q);
            const double w = kx.weights[b][q];
            for (int c = 0; c < b1n; ++c)
                partial[static_cast<std::size_t>(i) * b1n + c] += w * bins[static_cast<std::size_t>(b) * b1n + c];
        }
    }
    ScalarField out(g, 0.0);
    if (g.dim() == 1) {
        for (int i = 0; i < n0; ++i) out[i] = partial[i];
    } else {
        const detail::AxisKernel ky = detail::axis_kernel(n1, g.extent(1), kde.sub_bins, kde.bandwidth, kde.truncation);
        for (int i = 0; i < n0; ++i)
            for (int c = 0; c < b1n; ++c) {
                const double m = partial[static_cast<std::size_t>(i) * b1n + c];
                if (m == 0.0) continue;
                for (std::size_t q = 0; q < ky.weights[c].size(); ++q)
                    out[g.index(i, ky.first_cell[c] + static_cast<int>(q))] += ky.weights[c][q] * m;
            }
    }
    double mass = 0.0;
    for (double v : out.values) mass += v;
    for (double& v : out.values) v /= mass * g.cell_volume();
    return out;
}

/// Mirror x into [0, length]; returns the residual clamp distance if a single
/// reflection is not enough.
inline double reflect_into(double& x, double length) {
    if (x < 0.0) x = -x;
    if (x > length) x = 2.0 * length - x;
    const double clamped = std::clamp(x, 0.0, length);
    const double d = std::abs(clamped - x);
    x = clamped;
    return d;
}

inline std::size_t containing_cell(const GridSpec& g, const Vec2& p) {
    const int i = std::clamp(static_cast<int>(std::floor(p[0] / g.h(0))), 0, g.cells(0) - 1);
    const int j = g.dim() == 2 ? std::clamp(static_cast<int>(std::floor(p[1] / g.h(1))), 0, g.cells(1) - 1) : 0;
    return g.index(i, j);
}

/// Move every agent by dt times the cell velocity it sits in, reflecting at
/// the walls.
inline AgentSet move_agents(const AgentSet& agents, const VectorField& v, double dt) {
    const GridSpec& g = v.grid;
    AgentSet out = agents;
    for (Vec2& p : out.positions) {
        const Vec2 vel = v[containing_cell(g, p)];
        for (int a = 0; a < g.dim(); ++a) {
            p[a] += dt * vel[a];
            out.clamp = std::max(out.clamp, reflect_into(p[a], g.extent(a)));
        }
    }
    return out;
}

/// Controller velocity evaluated on the agents' density estimate.
inline VectorField agent_velocity(const AgentSet& agents, const Controller& c, const ScalarField& mu,
                                  const KdeConfig& kde, ScalarField* estimate = nullptr) {
    if (c.order > 1) fail(ErrorKind::InvalidArgument, "agent controllers must have order <= 1");
    ScalarField rho_hat = kde_density(agents, mu.grid, kde);
    VectorField v = apply(c, rho_hat, mu);
    if (estimate) *estimate = std::move(rho_hat);
    return v;
}

inline AgentSet step_agents(const AgentSet& agents, const Controller& c, const ScalarField& mu, double dt,
                            const KdeConfig& kde) {
    return move_agents(agents, agent_velocity(agents, c, mu, kde), dt);
}

/// Stable explicit step for agents under a diffusive closed loop. The kernel
/// smooths the estimate at scale sigma, so the effective Laplacian is bounded
/// by 2 / (e sigma^2) rather than by the grid stencil.
inline double agent_parabolic_dt(const KdeConfig& kde, int dim, double diffusivity, double diffusion_number) {
    if (!(diffusivity > 0.0)) return std::numeric_limits<double>::infinity();
    return 4.0 * diffusion_number * kde.bandwidth * kde.bandwidth / (diffusivity * dim);
}

struct AgentTrajectory {
    std::vector<double> times;
    std::vector<AgentSet> snapshots;
    std::vector<ScalarField> estimates;
    std::size_t steps = 0;
};

/// Forward-Euler agent run mirroring simulate(): same CFL rule, same sample
/// stride and checkpoints.
inline AgentTrajectory simulate_agents(const AgentSet& agents0, const Controller& c, const ScalarField& mu,
                                       const IntegratorConfig& config, const KdeConfig& kde) {
    config.validate();
    std::vector<double> stops = config.checkpoints;
    stops.push_back(config.t_end);
    std::sort(stops.begin(), stops.end());
    stops.erase(std::remove_if(stops.begin(), stops.end(), [&](double s) { return !(s > 0.0) || s > config.t_end; }),
                stops.end());
    stops.erase(std::unique(stops.begin(), stops.end()), stops.end());

    AgentTrajectory out;
    AgentSet agents = agents0;
    double t = 0.0;
    ScalarField estimate(mu.grid);
    VectorField v = agent_velocity(agents, c, mu, kde, &estimate);
    auto record = [&] {
        out.times.push_back(t);
        out.snapshots.push_back(agents);
        out.estimates.push_back(estimate);
    };
    record();
    const double dt_par = agent_parabolic_dt(kde, mu.grid.dim(), c.diffusivity, config.diffusion_number);
    std::size_t next = 0;
    while (next < stops.size()) {
        if (out.steps >= config.max_steps) fail(ErrorKind::SolverStall, "agent run hit max_steps");
        double dt = config.dt_override ? *config.dt_override : std::min(cfl_dt(v, config.cfl), dt_par);
        if (!config.dt_override && c.is_pointwise()) {
            const double s = pointwise_signal_speed(c, estimate, mu);
            if (s > 0.0) dt = std::min(dt, config.cfl * mu.grid.min_h() / s);
        }
        bool landed = false;
        if (t + dt >= stops[next] * (1.0 - 1e-14)) {
            dt = stops[next] - t;
            landed = true;
        }
        agents = move_agents(agents, v, dt);
        t = landed ? stops[next] : t + dt;
        ++out.steps;
        v = agent_velocity(agents, c, mu, kde, &estimate);
        if (landed) ++next;
        if (landed || out.steps % config.sample_stride == 0) record();
    }
    return out;
}

/// W2 between the agents' density estimate and a continuum density.
inline double empirical_vs_continuum(const AgentSet& agents, const ScalarField& rho, const KdeConfig& kde) {
    return w2_distance(kde_density(agents, rho.grid, kde), rho);
}

/// CSV rows `t,agent_id,x[,y]`.
inline void write_agents_csv(std::ostream& os, const std::vector<double>& times, const std::vector<AgentSet>& snaps) {
    if (times.size() != snaps.size()) fail(ErrorKind::InvalidArgument, "times and snapshots differ in length");
    const bool two_d = !snaps.empty() && snaps.front().dim == 2;
    os << (two_d ? "t,agent_id,x,y\n" : "t,agent_id,x\n");
    os.precision(17);
    for (std::size_t s = 0; s < snaps.size(); ++s)
        for (std::size_t a = 0; a < snaps[s].size(); ++a) {
            os << times[s] << ',' << a << ',' << snaps[s].positions[a][0];
            if (two_d) os << ',' << snaps[s].positions[a][1];
            os << '\n';
        }
}

}  // namespace swarmfield
