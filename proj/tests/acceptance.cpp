// Acceptance gate: one line per criterion, exit status 0 iff all pass.
// Oracles (closed forms, exact OT, Monte Carlo) are computed here, not taken
// from the library code under test where an independent route exists.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "swarmfield/analysis.hpp"
#include "swarmfield/particles.hpp"

using namespace swarmfield;
using std::numbers::pi;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

class Report {
public:
    void check(Outcome& o, bool ok, const std::string& what) {
        o.pass = o.pass && ok;
        if (!o.detail.empty()) o.detail += "; ";
        o.detail += what + (ok ? "" : " [FAIL]");
    }
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

// ---------------------------------------------------------------------------
// Shared heat run: 1D, n = 256, mu = 1, rho0 = 1 + 0.3 cos(pi x).

constexpr int kHeatCells = 256;
constexpr double kHeatAmp = 0.3;

struct HeatRun {
    GridSpec g = GridSpec::line(1.0, kHeatCells);
    ScalarField mu{g, 1.0};
    ScalarField rho0 = ScalarField::sample(g, [](const Vec2& p) { return 1.0 + kHeatAmp * std::cos(pi * p[0]); });
    Trajectory tr;

    HeatRun() {
        IntegratorConfig cfg;
        cfg.t_end = 2.0;
        cfg.sample_stride = 100;
        cfg.record_controls = false;
        cfg.checkpoints = {0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 1.0};
        tr = simulate(rho0, error_gradient(), mu, cfg);
    }

    std::size_t sample_at(double t) const {
        for (std::size_t s = 0; s < tr.times.size(); ++s)
            if (std::abs(tr.times[s] - t) <= 1e-12) return s;
        throw std::runtime_error("time not sampled");
    }
};

double closed_form_error(double t, double x) { return kHeatAmp * std::exp(-pi * pi * t) * std::cos(pi * x); }

Outcome criterion1(const HeatRun& h) {
    Outcome o;
    Report r;
    const std::size_t s = h.sample_at(0.1);
    const ScalarField exact = ScalarField::sample(h.g, [](const Vec2& p) { return closed_form_error(0.1, p[0]); });
    const double rel = norm_l2((h.tr.densities[s] - h.mu) - exact) / norm_l2(exact);
    r.check(o, rel <= 0.05, "rel L2 discrepancy at t=0.1 " + fmt("%.3e", rel) + " <= 0.05");
    return o;
}

Outcome criterion2(const HeatRun& h) {
    Outcome o;
    Report r;
    std::vector<double> norms;
    for (const ScalarField& rho : h.tr.densities) norms.push_back(norm_l2(rho - h.mu));
    const DecayFit fit = fit_decay(h.tr.times, norms, 0.02, 1.0);
    const double rel = std::abs(fit.lambda_hat - pi * pi) / (pi * pi);
    r.check(o, rel <= 0.03, "lambda_hat " + fmt("%.4f", fit.lambda_hat) + " within 3% of pi^2 (" + fmt("%.2e", rel) + ")");
    double worst = 0.0;
    for (std::size_t s = 0; s < norms.size(); ++s)
        worst = std::max(worst, norms[s] / (std::exp(-pi * pi * h.tr.times[s]) * norms.front()));
    r.check(o, worst <= 1.02, "max ||e_t|| / (e^{-pi^2 t}||e_0||) " + fmt("%.5f", worst) + " <= 1.02");
    return o;
}

ScalarField coarsen(const ScalarField& f, int factor) {
    const GridSpec c = GridSpec::line(f.grid.extent(0), f.grid.cells(0) / factor);
    ScalarField out(c, 0.0);
    for (int i = 0; i < c.cells(0); ++i) {
        for (int k = 0; k < factor; ++k) out[i] += f[i * factor + k];
        out[i] /= factor;
    }
    return out;
}

Outcome criterion3(const HeatRun& h) {
    Outcome o;
    Report r;
    const double a = 0.7, b = 1.3;
    const double w0 = w2_1d(h.rho0, h.mu);
    double worst = 0.0;
    for (std::size_t s = 0; s < h.tr.times.size(); ++s) {
        const double bound = std::sqrt(b / a) * std::exp(-pi * pi * h.tr.times[s]) * w0 * 1.10;
        worst = std::max(worst, w2_1d(h.tr.densities[s], h.mu) / bound);
    }
    r.check(o, worst <= 1.0, "max W2 / (1.1 sqrt(b/a) e^{-pi^2 t} W2_0) " + fmt("%.4f", worst) + " <= 1");
    double gap = 0.0;
    for (double t : {0.0, 0.1, 1.0}) {
        const ScalarField rc = coarsen(h.tr.densities[h.sample_at(t)], 4);
        const ScalarField mc = coarsen(h.mu, 4);
        gap = std::max(gap, std::abs(w2_1d(rc, mc, QuantileMode::Atomic) - w2_exact_small(rc, mc).value));
    }
    r.check(o, gap <= 1e-6, "quantile vs exact LP on 64 cells at t={0,0.1,1}: " + fmt("%.2e", gap) + " <= 1e-6");
    return o;
}

Outcome criterion4(const HeatRun& h) {
    Outcome o;
    Report r;
    r.check(o, h.tr.min_rho >= 0.7 - 0.02, "min rho over every step " + fmt("%.6f", h.tr.min_rho) + " >= 0.68");
    return o;
}

Outcome criterion5(const HeatRun& h) {
    Outcome o;
    Report r;
    // ||e0||_{H1}^2 = ||e0||^2 + ||e0'||^2 for e0 = A cos(pi x) on [0, 1].
    const double h1 = std::sqrt(kHeatAmp * kHeatAmp / 2.0 + kHeatAmp * kHeatAmp * pi * pi / 2.0);
    const double bound = h1 / (0.7 * pi * pi) * 1.1;
    const double effort1 = h.tr.effort[h.sample_at(1.0)];
    r.check(o, effort1 <= bound, "effort over [0,1] " + fmt("%.5f", effort1) + " <= " + fmt("%.5f", bound));
    const double tail = h.tr.effort.back() - effort1;
    // Beyond t = 2 the integrand decays like e^{-pi^2 t}: add its closed-form tail.
    const double k2 = std::sqrt(pi * pi * kHeatAmp * kHeatAmp / 2.0) * std::exp(-2.0 * pi * pi) / 0.7;
    const double total_tail = tail + k2 / (pi * pi);
    r.check(o, total_tail <= 0.01 * effort1, "tail beyond t=1 " + fmt("%.3e", total_tail) + " <= 1% of " + fmt("%.5f", effort1));
    return o;
}

// ---------------------------------------------------------------------------

ScalarField smooth_positive(const GridSpec& g, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    double c[4][4];
    for (auto& row : c)
        for (double& x : row) x = n(rng);
    ScalarField f = ScalarField::sample(g, [&](const Vec2& p) {
        double s = 0.0;
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j)
                if (i + j > 0) s += c[i][j] * std::cos(2 * pi * i * p[0] + j) * std::cos(2 * pi * j * p[1] + i) / (i + j);
        return std::exp(0.5 * s);
    });
    f *= 1.0 / f.mass();
    return f;
}

Outcome criterion6() {
    Outcome o;
    Report r;
    const GridSpec g = GridSpec::box(1.0, 1.0, 128, 128);
    std::mt19937_64 rng(6);
    const ScalarField rho = smooth_positive(g, rng);
    const ScalarField mu = smooth_positive(g, rng);
    const Controller eg = error_gradient();
    double translation = 0.0;
    for (auto [di, dj] : {std::pair{1, 0}, {0, 1}, {5, 17}, {64, 64}, {37, 91}})
        translation = std::max(translation, equivariance_residual(eg, GridTransform::translation(di, dj), rho, mu));
    r.check(o, translation <= 1e-10, "error-gradient translation residual " + fmt("%.2e", translation) + " <= 1e-10");
    double rotation = 0.0;
    for (int q : {1, 2, 3}) rotation = std::max(rotation, equivariance_residual(eg, GridTransform::rotation(q), rho, mu));
    r.check(o, rotation <= 1e-10, "error-gradient 90/180/270 deg residual " + fmt("%.2e", rotation) + " <= 1e-10");
    const double cd = equivariance_residual(constant_direction(), GridTransform::rotation(1), rho, mu);
    r.check(o, cd >= 0.1, "constant-direction 90 deg residual " + fmt("%.3f", cd) + " >= 0.1");
    return o;
}

double l1_norm(const ScalarField& f) {
    double s = 0.0;
    for (double v : f.values) s += std::abs(v);
    return s * f.grid.cell_volume();
}

std::vector<double> uniform_times(double t_end, int samples) {
    std::vector<double> t;
    for (int i = 0; i <= samples; ++i) t.push_back(t_end * i / samples);
    return t;
}

void transport_norms(Outcome& o, Report& r, const std::string& label, const ScalarField& e0, const FlowField& b) {
    const LinearTransport tr = transport_linear(e0, b, uniform_times(5.0, 20));
    double drift = 0.0;
    double l2_floor = INFINITY;
    for (const ScalarField& e : tr.fields) {
        drift = std::max(drift, std::abs(l1_norm(e) / l1_norm(e0) - 1.0));
        l2_floor = std::min(l2_floor, norm_l2(e) / norm_l2(e0));
    }
    r.check(o, drift <= 0.02, label + " L1 drift " + fmt("%.4f", drift) + " <= 0.02");
    r.check(o, l2_floor >= 0.5, label + " min L2 ratio " + fmt("%.3f", l2_floor) + " >= 0.5");
}

Outcome criterion7() {
    Outcome o;
    Report r;
    const GridSpec g2 = GridSpec::box(1.0, 1.0, 128, 128);
    const FlowField rot = analytic_flow(rotation_stream_field(), g2);
    transport_norms(o, r, "rotation sin*sin",
                    ScalarField::sample(g2, [](const Vec2& p) { return std::sin(2 * pi * p[0]) * std::sin(2 * pi * p[1]); }),
                    rot);
    transport_norms(o, r, "rotation cos*cos",
                    ScalarField::sample(g2, [](const Vec2& p) { return std::cos(pi * p[0]) * std::cos(pi * p[1]); }), rot);
    const GridSpec g1 = GridSpec::line(1.0, 1024);
    const FlowField logistic = analytic_flow(logistic_1d_field(), g1);
    transport_norms(o, r, "logistic bump", ScalarField::sample(g1, [](const Vec2& p) {
                        const double z = (p[0] - 0.3) / 0.15;
                        return std::abs(z) < 1.0 ? std::pow(1.0 - z * z, 3) * std::sin(pi * z) : 0.0;
                    }),
                    logistic);
    transport_norms(o, r, "logistic cos", ScalarField::sample(g1, [](const Vec2& p) { return std::cos(pi * p[0]); }), logistic);
    return o;
}

Outcome criterion8() {
    Outcome o;
    Report r;
    const std::vector<double> t = uniform_times(2.0, 8);
    for (const AnalyticField& f : vector_field_catalog()) {
        const GridSpec g = f.dim == 2 ? GridSpec::box(1.0, 1.0, 32, 32) : GridSpec::line(1.0, 64);
        std::vector<Vec2> seeds;
        for (int i = 0; i < 7; ++i)
            for (int j = 0; j < (f.dim == 2 ? 7 : 1); ++j) seeds.push_back({(i + 0.5) / 7, f.dim == 2 ? (j + 0.5) / 7 : 0.0});
        const FlowMap fm = flow_map(analytic_flow(f, g), seeds, t);
        r.check(o, fm.cross_check_residual <= 1e-4,
                f.name + " quadrature vs det A " + fmt("%.2e", fm.cross_check_residual) + " <= 1e-4");
        if (f.name == "logistic_1d") {
            double worst = 0.0;
            for (std::size_t s = 0; s < seeds.size(); ++s)
                for (std::size_t k = 0; k < t.size(); ++k) {
                    const double x = seeds[s][0];
                    const double d = 1.0 - x + x * std::exp(t[k]);
                    const double exact = std::exp(t[k]) / (d * d);
                    worst = std::max(worst, std::abs(fm.jacobians[s][k] - exact) / exact);
                }
            r.check(o, worst <= 1e-5, "logistic J vs closed form " + fmt("%.2e", worst) + " <= 1e-5");
        }
    }
    return o;
}

Outcome criterion9() {
    Outcome o;
    Report r;
    const GridSpec g = GridSpec::box(1.0, 1.0, 64, 64);
    const ScalarField pi_density(g, 1.0);
    const FlowField rot = analytic_flow(rotation_stream_field(), g);
    const ScalarFunction aligned = [](const Vec2& p) { return std::cos(2 * pi * p[0]) + std::cos(2 * pi * p[1]); };
    const MixingReport m = mixing_correlation(rot, pi_density, aligned, aligned, uniform_times(30.0, 60));
    r.check(o, m.verdict == MixingVerdict::Oscillating,
            std::string("rotation verdict ") + to_string(m.verdict) + " (late gap " + fmt("%.2f", m.late_gap_ratio) + ")");

    // Pairings with functions of the stream function are flow invariants.
    const AnalyticField rf = rotation_stream_field();
    ScalarField psi = ScalarField::sample(g, [&](const Vec2& p) { return rf.stream(p); });
    ScalarField psi2 = ScalarField::sample(g, [&](const Vec2& p) { return rf.stream(p) * rf.stream(p); });
    ScalarField e0 = psi;
    for (std::size_t k = 0; k < g.size(); ++k) e0[k] += 0.5 * std::sin(2 * pi * g.center(k)[0]);
    remove_mean(e0);
    const LinearTransport tr = transport_linear(e0, rot, uniform_times(10.0, 20));
    const WeakProbe w = weak_convergence_probe(tr.fields, {{"psi", psi}, {"psi2", psi2}});
    double worst = INFINITY;
    for (const auto& row : w.pairings)
        for (double p : row) worst = std::min(worst, std::abs(p) / std::abs(row.front()));
    r.check(o, worst >= 0.95, "min stream-aligned pairing ratio over t<=10 " + fmt("%.4f", worst) + " >= 0.95");

    const MixingReport id = mixing_correlation(analytic_flow(zero_field(2), g), pi_density, aligned, aligned, uniform_times(10.0, 10));
    double spread = 0.0;
    for (double c : id.correlations) spread = std::max(spread, std::abs(c - id.correlations.front()));
    r.check(o, spread <= 1e-14, "identity flow correlation spread " + fmt("%.1e", spread) + " <= 1e-14");

    const MixingReport cat = cat_map_correlation(10, 200000, 7);
    const double gap0 = std::abs(cat.correlations.front() - cat.product_of_means);
    double best = INFINITY;
    for (double c : cat.correlations) best = std::min(best, std::abs(c - cat.product_of_means) / gap0);
    r.check(o, best < 0.05, "cat map min gap ratio within 10 iterations " + fmt("%.4f", best) + " < 0.05");
    return o;
}

ScalarField random_smooth_density(const GridSpec& g, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    double c[6];
    for (double& x : c) x = n(rng);
    ScalarField f = ScalarField::sample(g, [&](const Vec2& p) {
        double s = 0.0;
        for (int k = 1; k <= 6; ++k) s += c[k - 1] * std::cos(pi * k * p[0]) / k;
        return std::exp(s);
    });
    f *= 1.0 / f.mass();
    return f;
}

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

/// Each cell split into `r` equal point masses at sub-cell centers.
ScalarField refine(const ScalarField& f, int r) {
    const GridSpec fine = GridSpec::line(f.grid.extent(0), f.grid.cells(0) * r);
    ScalarField out(fine);
    for (std::size_t k = 0; k < fine.size(); ++k) out[k] = f[k / r];
    return out;
}

Outcome criterion10() {
    Outcome o;
    Report r;
    const GridSpec g = GridSpec::line(1.0, 32);
    std::mt19937_64 rng(10);
    int violations = 0;
    double tightest = 0.0;
    for (int t = 0; t < 200; ++t) {
        const ScalarField a = random_smooth_density(g, rng);
        const ScalarField b = random_smooth_density(g, rng);
        const double w = w2_exact_small(a, b).value;
        for (double p : {1.0, 2.0}) {
            const BoundReport rep = check_w2_lp_bound(a, b, p, 0.0);
            violations += !rep.satisfied;
            violations += w * w > rep.rhs;
            tightest = std::max(tightest, w * w / rep.rhs);
        }
    }
    r.check(o, violations == 0,
            "W2^2 <= diam^2/2 |Omega|^(1-1/p) ||.||_p: " + std::to_string(violations) + " violations / 800 checks (quantile and exact LP, max LP ratio " +
                fmt("%.3f", tightest) + ")");

    std::uniform_real_distribution<double> amp(0.02, 0.5);
    int sandwich = 0;
    double oracle_gap = 0.0;
    for (int t = 0; t < 100; ++t) {
        const ScalarField a = random_bounded_density(g, rng, amp(rng));
        const ScalarField b = random_bounded_density(g, rng, amp(rng));
        const double lo = std::min(a.min(), b.min());
        const double hi = std::max(a.max(), b.max());
        const SandwichReport rep = check_w2_h1_sandwich(a, b, lo, hi, 0.02);
        const double w = rep.w2;
        const bool ok = rep.satisfied;
        sandwich += !ok;
        if (t < 5) {
            // The exact LP on a 16x refinement converges to the same OT distance.
            const double lp = w2_exact_small(refine(a, 16), refine(b, 16)).value;
            oracle_gap = std::max(oracle_gap, std::abs(lp - w) / w);
        }
    }
    r.check(o, sandwich == 0, "H^-1 sandwich with 2% slack: " + std::to_string(sandwich) + " violations / 100");
    r.check(o, oracle_gap <= 0.05, "OT value vs exact LP on 16x refined atoms " + fmt("%.3f", oracle_gap) + " <= 0.05");
    return o;
}

Outcome criterion11() {
    Outcome o;
    Report r;
    const GridSpec g = GridSpec::line(1.0, 1024);
    const ScalarField mu(g, 1.0);
    const ScalarField shape = ScalarField::sample(g, [](const Vec2& p) { return std::cos(pi * p[0]); });
    const Controller c = pointwise_relaxation(logistic_1d_field());
    IntegratorConfig cfg;
    cfg.sample_stride = 1'000'000;
    const LinearizationGap big = linearization_gap(c, mu, shape, 0.1, 0.5, cfg);
    const LinearizationGap small = linearization_gap(c, mu, shape, 0.05, 0.5, cfg);
    const double ratio = big.discrepancy / small.discrepancy;
    r.check(o, ratio >= 3.2 && ratio <= 4.8,
            "discrepancy ratio eps 0.1 -> 0.05 at t=0.5: " + fmt("%.3f", ratio) + " in [3.2, 4.8]");
    return o;
}

Outcome criterion12(const HeatRun& h) {
    Outcome o;
    Report r;
    const auto start = std::chrono::steady_clock::now();
    const KdeConfig kde = KdeConfig::for_grid(h.g);
    IntegratorConfig cfg;
    cfg.t_end = 0.3;
    cfg.checkpoints = {0.05, 0.1, 0.15, 0.2, 0.25};
    cfg.sample_stride = 1'000'000;
    const AgentTrajectory at = simulate_agents(sample_density(h.rho0, 100'000, 12), error_gradient(), h.mu, cfg, kde);
    std::vector<double> w;
    for (const ScalarField& est : at.estimates) w.push_back(w2_1d(est, h.mu));
    int inversions = 0;
    for (std::size_t s = 1; s < w.size(); ++s) inversions += w[s] >= w[s - 1];
    r.check(o, inversions <= 1, "W2(KDE, mu) inversions over 7 samples: " + std::to_string(inversions) + " <= 1");
    std::size_t s01 = 0;
    while (std::abs(at.times[s01] - 0.1) > 1e-12) ++s01;
    const double vs = empirical_vs_continuum(at.snapshots[s01], h.tr.densities[h.sample_at(0.1)], kde);
    r.check(o, vs <= 0.02, "empirical vs continuum W2 at t=0.1 " + fmt("%.2e", vs) + " <= 0.02");
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    r.check(o, secs <= 300.0, "runtime " + fmt("%.1f", secs) + " s <= 300 s");
    return o;
}

}  // namespace

int main() {
    struct Item {
        const char* name;
        std::function<Outcome()> run;
    };
    std::unique_ptr<HeatRun> heat;
    auto heat_run = [&]() -> const HeatRun& {
        if (!heat) heat = std::make_unique<HeatRun>();
        return *heat;
    };
    const std::vector<Item> items{
        {"C1 heat closed loop vs cosine eigenfunction", [&] { return criterion1(heat_run()); }},
        {"C2 L2 exponential rate", [&] { return criterion2(heat_run()); }},
        {"C3 W2 exponential bound", [&] { return criterion3(heat_run()); }},
        {"C4 positivity", [&] { return criterion4(heat_run()); }},
        {"C5 finite control effort", [&] { return criterion5(heat_run()); }},
        {"C6 equivariance", criterion6},
        {"C7 L1 conservation of linear transport", criterion7},
        {"C8 Jacobi formula", criterion8},
        {"C9 mixing diagnostics", criterion9},
        {"C10 metric inequalities", criterion10},
        {"C11 linearization quality", criterion11},
        {"C12 particle bridge", [&] { return criterion12(heat_run()); }},
    };
    int failures = 0;
    for (const Item& item : items) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = item.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("%s  %-42s (%.1fs)  %s\n", o.pass ? "PASS" : "FAIL", item.name, secs, o.detail.c_str());
        std::fflush(stdout);
        failures += !o.pass;
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(items.size()) - failures, items.size());
    return failures == 0 ? 0 : 1;
}
