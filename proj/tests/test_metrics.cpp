#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "swarmfield/metrics.hpp"

using namespace swarmfield;
using std::numbers::pi;

namespace {

// Smooth positive unit-mass density from a few random cosine modes.
ScalarField random_smooth_density(const GridSpec& g, std::mt19937_64& rng, double strength = 1.0) {
    std::normal_distribution<double> n(0.0, 1.0);
    double c[3][3];
    for (auto& row : c)
        for (double& x : row) x = n(rng);
    ScalarField f = ScalarField::sample(g, [&](const Vec2& p) {
        double s = 0.0;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < (g.dim() == 2 ? 3 : 1); ++j)
                if (i + j > 0) s += c[i][j] * std::cos(pi * i * p[0]) * std::cos(pi * j * p[1]) / (i + j);
        return std::exp(strength * s);
    });
    f *= 1.0 / f.mass();
    return f;
}

// Density bounded in [lo, hi] with unit mass on [0, 1].
ScalarField random_bounded_density(const GridSpec& g, std::mt19937_64& rng, double amplitude) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    double c[4];
    for (double& x : c) x = u(rng);
    ScalarField f = ScalarField::sample(g, [&](const Vec2& p) {
        double s = 0.0;
        for (int k = 1; k <= 4; ++k) s += c[k - 1] * std::cos(pi * k * p[0]) / k;
        return s;
    });
    const double scale = amplitude / std::max(std::abs(f.min()), std::abs(f.max()));
    for (double& v : f.values) v = 1.0 + scale * v;
    return f;
}

ScalarField hot_cell(const GridSpec& g, std::size_t k) {
    ScalarField f(g, 0.0);
    f[k] = 1.0 / g.cell_volume();
    return f;
}

// Continuum W2 oracle by refining every cell into `s` equal sub-atoms and
// solving the atomic LP.
double refined_lp_w2(const ScalarField& rho, const ScalarField& mu, int s) {
    const GridSpec& g = rho.grid;
    const int n = g.cells(0);
    std::vector<double> a;
    std::vector<double> b;
    std::vector<double> x;
    for (int i = 0; i < n; ++i)
        for (int q = 0; q < s; ++q) {
            a.push_back(rho[i] * g.h(0) / s);
            b.push_back(mu[i] * g.h(0) / s);
            x.push_back((i + (q + 0.5) / s) * g.h(0));
        }
    std::vector<double> cost(x.size() * x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < x.size(); ++j) cost[i * x.size() + j] = (x[i] - x[j]) * (x[i] - x[j]);
    return std::sqrt(solve_transport(a, b, cost).cost);
}

}  // namespace

TEST(LpDistance, ZeroForIdenticalFields) {
    const GridSpec g = GridSpec::line(1.0, 16);
    std::mt19937_64 rng(1);
    const ScalarField f = random_smooth_density(g, rng);
    for (double p : {1.0, 2.0, 3.5, std::numeric_limits<double>::infinity()}) EXPECT_EQ(lp_distance(f, f, p), 0.0);
}

TEST(LpDistance, CosinePerturbationL2Norm) {
    const GridSpec g = GridSpec::line(1.0, 256);
    const ScalarField rho = ScalarField::sample(g, [](const Vec2& p) { return 1.0 + 0.3 * std::cos(pi * p[0]); });
    EXPECT_NEAR(lp_distance(rho, ScalarField(g, 1.0), 2.0), 0.3 / std::sqrt(2.0), 1e-3);
}

TEST(LpDistance, HolderMonotonicityOnUnitInterval) {
    const GridSpec g = GridSpec::line(1.0, 64);
    std::mt19937_64 rng(2);
    for (int t = 0; t < 50; ++t) {
        const ScalarField a = random_smooth_density(g, rng);
        const ScalarField b = random_smooth_density(g, rng);
        const double l1 = lp_distance(a, b, 1.0);
        for (double p : {1.5, 2.0, 4.0}) EXPECT_LE(l1, lp_distance(a, b, p) + 1e-14);
        EXPECT_LE(lp_distance(a, b, 4.0), lp_distance(a, b, std::numeric_limits<double>::infinity()) + 1e-14);
    }
}

TEST(LpDistance, RejectsPBelowOne) {
    const GridSpec g = GridSpec::line(1.0, 8);
    EXPECT_THROW(lp_distance(ScalarField(g, 1.0), ScalarField(g, 1.0), 0.5), Error);
}

TEST(TotalVariation, HalfOfL1) {
    const GridSpec g = GridSpec::line(1.0, 8);
    EXPECT_NEAR(tv_distance(hot_cell(g, 0), hot_cell(g, 7)), 1.0, 1e-14);
}

TEST(W2OneD, ZeroForIdenticalDensities) {
    const GridSpec g = GridSpec::line(1.0, 40);
    std::mt19937_64 rng(3);
    const ScalarField f = random_smooth_density(g, rng);
    EXPECT_EQ(w2_1d(f, f), 0.0);
    EXPECT_EQ(w2_1d(f, f, QuantileMode::Atomic), 0.0);
}

TEST(W2OneD, HotCellsReduceToCenterDistance) {
    const GridSpec g = GridSpec::line(1.0, 16);
    const ScalarField a = hot_cell(g, 3);
    const ScalarField b = hot_cell(g, 11);
    EXPECT_NEAR(w2_1d(a, b), 0.5, g.h(0));
    EXPECT_NEAR(w2_1d(a, b, QuantileMode::Atomic), 0.5, 1e-14);
}

TEST(W2OneD, AtomicModeMatchesExactLinearProgram) {
    std::mt19937_64 rng(4);
    const GridSpec g = GridSpec::line(1.0, 16);
    for (int t = 0; t < 30; ++t) {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        ScalarField a(g);
        ScalarField b(g);
        for (std::size_t k = 0; k < g.size(); ++k) {
            a[k] = u(rng);
            b[k] = u(rng) < 0.2 ? 0.0 : u(rng);
        }
        a *= 1.0 / a.mass();
        b *= 1.0 / b.mass();
        EXPECT_NEAR(w2_1d(a, b, QuantileMode::Atomic), w2_exact_small(a, b).value, 1e-6);
    }
}

TEST(W2OneD, DensityModeIsTheLimitOfRefinedAtoms) {
    std::mt19937_64 rng(5);
    const GridSpec g = GridSpec::line(1.0, 12);
    for (int t = 0; t < 5; ++t) {
        const ScalarField a = random_smooth_density(g, rng);
        const ScalarField b = random_smooth_density(g, rng);
        const double exact = w2_1d(a, b);
        const double first = std::abs(refined_lp_w2(a, b, 1) - exact);
        double prev = first;
        for (int s : {2, 4, 8}) {
            const double err = std::abs(refined_lp_w2(a, b, s) - exact);
            EXPECT_LT(err, prev + 1e-12);
            prev = err;
        }
        EXPECT_LT(prev, first / 10.0);
    }
}

TEST(W2OneD, TranslatedUniformBlock) {
    const GridSpec g = GridSpec::line(1.0, 100);
    ScalarField a(g, 0.0);
    ScalarField b(g, 0.0);
    for (int i = 10; i < 30; ++i) a[i] = 5.0;
    for (int i = 47; i < 67; ++i) b[i] = 5.0;
    EXPECT_NEAR(w2_1d(a, b), 0.37, 1e-12);
}

TEST(W2OneD, MassMismatchIsAnError) {
    const GridSpec g = GridSpec::line(1.0, 8);
    try {
        w2_1d(ScalarField(g, 1.0), ScalarField(g, 1.1));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::MassMismatch);
    }
}

TEST(W2Exact, IdenticalDensitiesGiveDiagonalPlan) {
    std::mt19937_64 rng(6);
    const GridSpec g = GridSpec::box(1.0, 1.0, 6, 6);
    const ScalarField f = random_smooth_density(g, rng);
    const ExactTransport t = w2_exact_small(f, f);
    EXPECT_NEAR(t.value, 0.0, 1e-9);
    for (const auto& e : t.plan.weights) {
        if (e.weight > 1e-14) {
            EXPECT_EQ(e.source, e.target);
        }
    }
}

TEST(W2Exact, BumpTranslationOnTheLine) {
    const GridSpec g = GridSpec::line(1.0, 64);
    auto bump = [&](double c) {
        ScalarField f = ScalarField::sample(g, [&](const Vec2& p) {
            const double z = (p[0] - c) / 0.08;
            return std::abs(z) < 1.0 ? std::pow(1 - z * z, 2) : 0.0;
        });
        f *= 1.0 / f.mass();
        return f;
    };
    const double s = 0.3;
    EXPECT_NEAR(w2_exact_small(bump(0.3), bump(0.3 + s)).value, s, 2 * g.h(0));
}

TEST(W2Exact, PlanMarginalsMatchInputs) {
    std::mt19937_64 rng(7);
    const GridSpec g = GridSpec::box(1.0, 1.0, 8, 8);
    for (int t = 0; t < 10; ++t) {
        const ScalarField a = random_smooth_density(g, rng);
        const ScalarField b = random_smooth_density(g, rng);
        const ExactTransport ex = w2_exact_small(a, b);
        const auto sm = ex.plan.source_marginal();
        const auto tm = ex.plan.target_marginal();
        for (std::size_t k = 0; k < g.size(); ++k) {
            EXPECT_NEAR(sm[k], a[k] * g.cell_volume(), 1e-9);
            EXPECT_NEAR(tm[k], b[k] * g.cell_volume(), 1e-9);
        }
        for (const auto& e : ex.plan.weights) EXPECT_GE(e.weight, 0.0);
    }
}

TEST(W2Exact, DualCertificate) {
    std::mt19937_64 rng(8);
    const GridSpec g = GridSpec::box(1.0, 1.0, 7, 7);
    const ScalarField a = random_smooth_density(g, rng);
    const ScalarField b = random_smooth_density(g, rng);
    const ExactTransport ex = w2_exact_small(a, b);
    double dual = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        dual += a[i] * g.cell_volume() * ex.f[i] + b[i] * g.cell_volume() * ex.g[i];
        for (std::size_t j = 0; j < g.size(); ++j)
            EXPECT_LE(ex.f[i] + ex.g[j], squared_distance(g.center(i), g.center(j)) + 1e-9);
    }
    EXPECT_NEAR(dual, ex.value * ex.value, 1e-9);
}

TEST(W2Exact, MetricAxiomsOnSamples) {
    std::mt19937_64 rng(9);
    const GridSpec g = GridSpec::box(1.0, 1.0, 6, 6);
    for (int t = 0; t < 10; ++t) {
        const ScalarField a = random_smooth_density(g, rng);
        const ScalarField b = random_smooth_density(g, rng);
        const ScalarField c = random_smooth_density(g, rng);
        const double ab = w2_exact_small(a, b).value;
        EXPECT_NEAR(ab, w2_exact_small(b, a).value, 1e-8);
        EXPECT_LE(ab, w2_exact_small(a, c).value + w2_exact_small(c, b).value + 1e-6);
    }
}

TEST(W2Exact, SingleCellMassesGiveEuclideanDistance) {
    const GridSpec g = GridSpec::box(1.0, 1.0, 8, 8);
    const std::size_t i = g.index(1, 2);
    const std::size_t j = g.index(6, 5);
    const double d = std::sqrt(squared_distance(g.center(i), g.center(j)));
    EXPECT_NEAR(w2_exact_small(hot_cell(g, i), hot_cell(g, j)).value, d, g.h(0));
}

TEST(W2Exact, RejectsOversizedGrids) {
    const GridSpec g = GridSpec::box(1.0, 1.0, 65, 64);
    EXPECT_THROW(w2_exact_small(ScalarField(g, 1.0), ScalarField(g, 1.0)), Error);
}

TEST(W2Sinkhorn, IdenticalDensitiesDebiasToZero) {
    std::mt19937_64 rng(10);
    const GridSpec g = GridSpec::box(1.0, 1.0, 16, 16);
    const ScalarField f = random_smooth_density(g, rng);
    const MetricReport r = w2_sinkhorn(f, f, g.h(0) * g.h(0));
    EXPECT_LE(r.value, 1e-3);
    EXPECT_LE(r.meta.at("marginal_violation"), 1e-6);
}

TEST(W2Sinkhorn, AgreesWithExactOracleOn32Squared) {
    std::mt19937_64 rng(11);
    const GridSpec g = GridSpec::box(1.0, 1.0, 32, 32);
    for (int t = 0; t < 2; ++t) {
        const ScalarField a = random_smooth_density(g, rng, 1.5);
        const ScalarField b = random_smooth_density(g, rng, 1.5);
        const double exact = w2_exact_small(a, b).value;
        const MetricReport r = w2_sinkhorn(a, b, g.h(0) * g.h(0));
        EXPECT_LE(std::abs(r.value - exact) / exact, 0.02) << "exact " << exact << " sinkhorn " << r.value;
    }
}

TEST(W2Sinkhorn, GapShrinksAsEpsilonDecreases) {
    std::mt19937_64 rng(12);
    const GridSpec g = GridSpec::box(1.0, 1.0, 12, 12);
    const ScalarField a = random_smooth_density(g, rng, 1.5);
    const ScalarField b = random_smooth_density(g, rng, 1.5);
    const double exact = w2_exact_small(a, b).value;
    const double h2 = g.h(0) * g.h(0);
    double prev = std::numeric_limits<double>::infinity();
    for (double m : {8.0, 4.0, 2.0, 1.0}) {
        const double gap = std::abs(w2_sinkhorn(a, b, m * h2).value - exact);
        EXPECT_LE(gap, prev + 1e-9);
        prev = gap;
    }
}

TEST(W2Sinkhorn, IterationCapRaisesNoConvergence) {
    std::mt19937_64 rng(13);
    const GridSpec g = GridSpec::box(1.0, 1.0, 8, 8);
    const ScalarField a = random_smooth_density(g, rng, 1.5);
    const ScalarField b = random_smooth_density(g, rng, 1.5);
    try {
        w2_sinkhorn(a, b, 1e-3, 2);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::NoConvergence);
    }
}

TEST(HMinus1, ZeroField) {
    const GridSpec g = GridSpec::line(1.0, 32);
    EXPECT_EQ(h_minus1_norm(ScalarField(g, 0.0)), 0.0);
}

TEST(HMinus1, NeumannEigenfunction) {
    const GridSpec g = GridSpec::line(1.0, 128);
    const ScalarField e = ScalarField::sample(g, [](const Vec2& p) { return std::cos(pi * p[0]); });
    EXPECT_NEAR(h_minus1_norm(e) / (1.0 / (pi * std::sqrt(2.0))), 1.0, 0.01);
}

TEST(HMinus1, Homogeneity) {
    std::mt19937_64 rng(14);
    const GridSpec g = GridSpec::box(1.0, 1.0, 20, 20);
    const ScalarField e = random_smooth_density(g, rng) - ScalarField(g, 1.0);
    EXPECT_NEAR(h_minus1_norm(2.0 * e), 2.0 * h_minus1_norm(e), 1e-10);
}

TEST(HMinus1, EnergyIdentity) {
    std::mt19937_64 rng(15);
    for (const GridSpec& g : {GridSpec::line(1.0, 64), GridSpec::box(1.0, 2.0, 16, 24)}) {
        const ScalarField e = random_smooth_density(g, rng) - ScalarField(g, 1.0 / g.volume());
        const PoissonResult pr = solve_neumann_poisson(e);
        const double n2 = h_minus1_norm(e);
        EXPECT_NEAR(n2 * n2, dirichlet_energy(pr.phi), 1e-8 * n2 * n2);
        EXPECT_LE(pr.residual, 1e-10);
    }
}

TEST(HMinus1, RejectsNonZeroMean) {
    const GridSpec g = GridSpec::line(1.0, 16);
    try {
        h_minus1_norm(ScalarField(g, 0.1));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::NotZeroMean);
    }
}

TEST(LpBound, EqualDensitiesAreTight) {
    const GridSpec g = GridSpec::line(1.0, 32);
    const BoundReport r = check_w2_lp_bound(ScalarField(g, 1.0), ScalarField(g, 1.0), 2.0);
    EXPECT_EQ(r.lhs, 0.0);
    EXPECT_EQ(r.rhs, 0.0);
    EXPECT_TRUE(r.satisfied);
}

TEST(LpBound, RandomCorpusHasNoViolations) {
    std::mt19937_64 rng(16);
    const GridSpec g = GridSpec::line(1.0, 32);
    int violations = 0;
    for (int t = 0; t < 200; ++t) {
        const ScalarField a = random_smooth_density(g, rng, 2.0);
        const ScalarField b = random_smooth_density(g, rng, 2.0);
        for (double p : {1.0, 2.0}) violations += !check_w2_lp_bound(a, b, p).satisfied;
    }
    EXPECT_EQ(violations, 0);
}

TEST(LpBound, ExtremePairIsNearlyTight) {
    const GridSpec g = GridSpec::line(1.0, 32);
    const BoundReport r = check_w2_lp_bound(hot_cell(g, 0), hot_cell(g, 31), 1.0);
    EXPECT_NEAR(r.rhs, 1.0, 1e-12);
    EXPECT_NEAR(r.lhs, 1.0, 2 * g.h(0));
    EXPECT_TRUE(r.satisfied);
}

TEST(Sandwich, EqualDensities) {
    const GridSpec g = GridSpec::line(1.0, 32);
    const SandwichReport r = check_w2_h1_sandwich(ScalarField(g, 1.0), ScalarField(g, 1.0), 0.5, 1.5);
    EXPECT_EQ(r.w2, 0.0);
    EXPECT_EQ(r.hm1, 0.0);
    EXPECT_TRUE(r.satisfied);
}

TEST(Sandwich, BoundedCorpusHasNoViolations) {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> amp(0.02, 0.5);
    const GridSpec g = GridSpec::line(1.0, 32);
    int violations = 0;
    for (int t = 0; t < 100; ++t) {
        const ScalarField a = random_bounded_density(g, rng, amp(rng));
        const ScalarField b = random_bounded_density(g, rng, amp(rng));
        const double lo = std::min(a.min(), b.min());
        const double hi = std::max(a.max(), b.max());
        violations += !check_w2_h1_sandwich(a, b, 0.5, 1.5, 0.02).satisfied;
        violations += !check_w2_h1_sandwich(a, b, lo, hi, 0.02).satisfied;
    }
    EXPECT_EQ(violations, 0);
}

TEST(Sandwich, AmplitudeScalingIsNearlyLinear) {
    std::mt19937_64 rng(18);
    const GridSpec g = GridSpec::line(1.0, 32);
    const ScalarField base = random_bounded_density(g, rng, 0.4);
    const ScalarField mu(g, 1.0);
    const double w_full = w2_1d(base, mu);
    const double h_full = h_minus1_norm(base - mu);
    for (double t : {0.1, 0.25, 0.5, 0.75}) {
        const ScalarField scaled = mu + t * (base - mu);
        EXPECT_NEAR(w2_1d(scaled, mu) / (t * w_full), 1.0, 0.1);
        EXPECT_NEAR(h_minus1_norm(scaled - mu) / (t * h_full), 1.0, 1e-8);
    }
}

TEST(Sandwich, RejectsUnboundedDensities) {
    const GridSpec g = GridSpec::line(1.0, 32);
    EXPECT_THROW(check_w2_h1_sandwich(ScalarField(g, 1.0), ScalarField(g, 1.0), 1.5, 2.0), Error);
}
