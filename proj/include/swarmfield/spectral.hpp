#pragma once

// Neumann spectrum of a box: the cosine-series heat semigroup and the first
// nonzero Laplacian eigenvalue.

#include <fftw3.h>

#include <cmath>
#include <cstddef>
#include <mutex>
#include <numbers>
#include <random>
#include <vector>

#include "swarmfield/errors.hpp"
#include "swarmfield/grid.hpp"
#include "swarmfield/poisson.hpp"

namespace swarmfield {

namespace detail {

// FFTW planning is not thread safe; execution is.
inline std::mutex& fftw_planner_mutex() {
    static std::mutex m;
    return m;
}

/// In-place unnormalized cosine transform of a row-major n0 x n1 array.
/// `kind` is FFTW_REDFT10 (forward DCT-II) or FFTW_REDFT01 (its inverse up to
/// a factor 2n per axis).
inline void cosine_transform(std::vector<double>& data, int dim, int n0, int n1, fftw_r2r_kind kind) {
    fftw_plan plan;
    {
        std::lock_guard lock(fftw_planner_mutex());
        plan = dim == 1 ? fftw_plan_r2r_1d(n0, data.data(), data.data(), kind, FFTW_ESTIMATE)
                        : fftw_plan_r2r_2d(n0, n1, data.data(), data.data(), kind, kind, FFTW_ESTIMATE);
    }
    fftw_execute(plan);
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(plan);
}

}  // namespace detail

/// e^{t Laplacian} e0 for the continuum Neumann problem, with e0 read as a
/// cosine series on the cell centers. Mode (k, l) is damped by
/// exp(-t ((pi k / Lx)^2 + (pi l / Ly)^2)); modes at or above `modes` per
/// axis are dropped (0 keeps all of them).
inline ScalarField heat_reference(const ScalarField& e0, double t, int modes = 0) {
    using std::numbers::pi;
    const GridSpec& g = e0.grid;
    if (!(t >= 0.0) || !std::isfinite(t)) fail(ErrorKind::InvalidArgument, "heat_reference needs t >= 0");
    const int n0 = g.cells(0);
    const int n1 = g.dim() == 2 ? g.cells(1) : 1;
    if (modes < 0 || modes > std::max(n0, n1)) fail(ErrorKind::InvalidArgument, "modes must be in [0, n]");
    std::vector<double> c = e0.values;
    detail::cosine_transform(c, g.dim(), n0, n1, FFTW_REDFT10);
    double scale = 1.0 / (2.0 * n0);
    if (g.dim() == 2) scale /= 2.0 * n1;
    for (int k = 0; k < n0; ++k) {
        for (int l = 0; l < n1; ++l) {
            double lambda = std::pow(pi * k / g.extent(0), 2);
            if (g.dim() == 2) lambda += std::pow(pi * l / g.extent(1), 2);
            const bool kept = modes == 0 || (k < modes && l < modes);
            c[static_cast<std::size_t>(k) * n1 + l] *= kept ? scale * std::exp(-lambda * t) : 0.0;
        }
    }
    detail::cosine_transform(c, g.dim(), n0, n1, FFTW_REDFT01);
    return ScalarField(g, std::move(c));
}

struct Lambda1 {
    /// (pi / longest side)^2.
    double analytic = 0.0;
    /// Smallest nonzero eigenvalue of the discrete Neumann Laplacian.
    double numeric = 0.0;
    std::size_t iterations = 0;
};

/// First nonzero Neumann eigenvalue, analytic and by inverse power iteration
/// on zero-mean fields.
inline Lambda1 neumann_lambda1(const GridSpec& g, double tol = 1e-12, std::size_t max_iter = 500) {
    using std::numbers::pi;
    Lambda1 out;
    double longest = g.extent(0);
    if (g.dim() == 2) longest = std::max(longest, g.extent(1));
    out.analytic = std::pow(pi / longest, 2);

    std::mt19937_64 rng(20240611);
    std::normal_distribution<double> normal(0.0, 1.0);
    ScalarField x(g);
    for (double& v : x.values) v = normal(rng);
    remove_mean(x);
    x *= 1.0 / norm_l2(x);
    double lambda = 0.0;
    for (std::size_t it = 1; it <= max_iter; ++it) {
        ScalarField y = solve_neumann_poisson(x, 1e-13).phi;
        remove_mean(y);
        y *= 1.0 / norm_l2(y);
        const double next = -inner(y, laplacian(y));
        x = std::move(y);
        out.iterations = it;
        const bool converged = std::abs(next - lambda) <= tol * next;
        lambda = next;
        if (converged) break;
    }
    out.numeric = lambda;
    return out;
}

}  // namespace swarmfield
