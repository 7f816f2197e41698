#pragma once

// Zero-mean Neumann Poisson solves with the compact Laplacian.

#include <cmath>
#include <cstddef>
#include <string>

#include "swarmfield/errors.hpp"
#include "swarmfield/grid.hpp"

namespace swarmfield {

struct PoissonResult {
    ScalarField phi;
    std::size_t iterations = 0;
    double residual = 0.0;
};

inline void remove_mean(ScalarField& f) {
    double s = 0.0;
    for (double v : f.values) s += v;
    const double m = s / static_cast<double>(f.size());
    for (double& v : f.values) v -= m;
}

/// Solve -laplacian(phi) = rhs on the orthogonal complement of constants
/// by conjugate gradients. `rel_tol` bounds ||r|| / ||rhs||; an absolute
/// floor keeps near-zero right-hand sides from stalling.
inline PoissonResult solve_neumann_poisson(const ScalarField& rhs, double rel_tol = 1e-10, std::size_t max_iter = 0) {
    const GridSpec& g = rhs.grid;
    if (max_iter == 0) max_iter = 20 * g.size() + 100;
    ScalarField b = rhs;
    remove_mean(b);
    PoissonResult out{ScalarField(g), 0, 0.0};
    const double bnorm = std::sqrt(inner(b, b));
    if (bnorm == 0.0) return out;
    const double tol = std::max(rel_tol * bnorm, 1e-300);

    ScalarField r = b;
    ScalarField p = r;
    double rr = inner(r, r);
    for (std::size_t it = 0; it < max_iter; ++it) {
        if (std::sqrt(rr) <= tol) {
            out.iterations = it;
            out.residual = std::sqrt(rr) / bnorm;
            remove_mean(out.phi);
            return out;
        }
        ScalarField ap = laplacian(p);
        ap *= -1.0;
        const double pap = inner(p, ap);
        if (!(pap > 0.0)) fail(ErrorKind::SolverDiverged, "Poisson CG lost positive definiteness");
        const double alpha = rr / pap;
        for (std::size_t k = 0; k < g.size(); ++k) {
            out.phi[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        remove_mean(r);
        const double rr_new = inner(r, r);
        const double beta = rr_new / rr;
        for (std::size_t k = 0; k < g.size(); ++k) p[k] = r[k] + beta * p[k];
        rr = rr_new;
        if (!std::isfinite(rr)) fail(ErrorKind::SolverDiverged, "Poisson CG produced non-finite residual");
    }
    fail(ErrorKind::SolverDiverged,
         "Poisson CG did not reach tolerance in " + std::to_string(max_iter) + " iterations");
}

}  // namespace swarmfield
