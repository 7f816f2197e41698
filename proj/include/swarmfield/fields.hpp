#pragma once

// Built-in analytic velocity fields on the unit interval / unit square.
// Each entry carries the velocity, its divergence and Jacobian so that flows
// and Jacobians can be integrated without grid interpolation.

#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "swarmfield/errors.hpp"
#include "swarmfield/grid.hpp"

namespace swarmfield {

struct AnalyticField {
    std::string name;
    int dim = 2;
    std::string description;
    std::function<Vec2(const Vec2&)> velocity;
    std::function<double(const Vec2&)> divergence;
    std::function<Mat2(const Vec2&)> jacobian;
    /// Stream function psi with velocity (d_y psi, -d_x psi); empty if none.
    std::function<double(const Vec2&)> stream;
};

inline AnalyticField zero_field(int dim) {
    AnalyticField f;
    f.name = "zero";
    f.dim = dim;
    f.description = "identically zero velocity";
    f.velocity = [](const Vec2&) { return Vec2{0.0, 0.0}; };
    f.divergence = [](const Vec2&) { return 0.0; };
    f.jacobian = [](const Vec2&) { return Mat2{{{0.0, 0.0}, {0.0, 0.0}}}; };
    f.stream = [](const Vec2&) { return 0.0; };
    return f;
}

inline AnalyticField rotation_stream_field() {
    using std::numbers::pi;
    AnalyticField f;
    f.name = "rotation_stream";
    f.dim = 2;
    f.description = "single-cell rotation, psi = sin(pi x) sin(pi y) / pi";
    f.stream = [](const Vec2& p) { return std::sin(pi * p[0]) * std::sin(pi * p[1]) / pi; };
    f.velocity = [](const Vec2& p) {
        return Vec2{std::sin(pi * p[0]) * std::cos(pi * p[1]), -std::cos(pi * p[0]) * std::sin(pi * p[1])};
    };
    f.divergence = [](const Vec2&) { return 0.0; };
    f.jacobian = [](const Vec2& p) {
        const double sx = std::sin(pi * p[0]), cx = std::cos(pi * p[0]);
        const double sy = std::sin(pi * p[1]), cy = std::cos(pi * p[1]);
        return Mat2{{{pi * cx * cy, -pi * sx * sy}, {pi * sx * sy, -pi * cx * cy}}};
    };
    return f;
}

inline AnalyticField shear_stream_field() {
    using std::numbers::pi;
    AnalyticField f;
    f.name = "shear_stream";
    f.dim = 2;
    f.description = "double gyre, psi = sin(pi x) sin(2 pi y) / (2 pi)";
    f.stream = [](const Vec2& p) { return std::sin(pi * p[0]) * std::sin(2.0 * pi * p[1]) / (2.0 * pi); };
    f.velocity = [](const Vec2& p) {
        return Vec2{std::sin(pi * p[0]) * std::cos(2.0 * pi * p[1]),
                    -0.5 * std::cos(pi * p[0]) * std::sin(2.0 * pi * p[1])};
    };
    f.divergence = [](const Vec2&) { return 0.0; };
    f.jacobian = [](const Vec2& p) {
        const double sx = std::sin(pi * p[0]), cx = std::cos(pi * p[0]);
        const double s2 = std::sin(2.0 * pi * p[1]), c2 = std::cos(2.0 * pi * p[1]);
        return Mat2{{{pi * cx * c2, -2.0 * pi * sx * s2}, {0.5 * pi * sx * s2, -pi * cx * c2}}};
    };
    return f;
}

inline AnalyticField logistic_1d_field() {
    AnalyticField f;
    f.name = "logistic_1d";
    f.dim = 1;
    f.description = "compressible logistic drift b(x) = x (1 - x)";
    f.velocity = [](const Vec2& p) { return Vec2{p[0] * (1.0 - p[0]), 0.0}; };
    f.divergence = [](const Vec2& p) { return 1.0 - 2.0 * p[0]; };
    f.jacobian = [](const Vec2& p) { return Mat2{{{1.0 - 2.0 * p[0], 0.0}, {0.0, 0.0}}}; };
    return f;
}

inline const std::vector<AnalyticField>& vector_field_catalog() {
    static const std::vector<AnalyticField> catalog{rotation_stream_field(), shear_stream_field(), logistic_1d_field()};
    return catalog;
}

inline const AnalyticField& find_vector_field(const std::string& name) {
    for (const auto& f : vector_field_catalog())
        if (f.name == name) return f;
    fail(ErrorKind::InitializerUnknown, "unknown vector field '" + name + "'");
}

inline void require_unit_box(const AnalyticField& f, const GridSpec& g) {
    if (g.dim() != f.dim) {
        fail(ErrorKind::InvalidArgument, f.name + " is " + std::to_string(f.dim) + "D, grid is " +
                                             std::to_string(g.dim()) + "D");
    }
    for (int a = 0; a < g.dim(); ++a)
        if (g.extent(a) != 1.0) fail(ErrorKind::InvalidArgument, f.name + " is defined on the unit box");
}

/// Cell samples of a catalog field. Stream fields use the centered discrete
/// curl of psi so that divergence() of the sample vanishes to round-off.
inline VectorField sample_field(const AnalyticField& f, const GridSpec& g) {
    if (f.name != "zero") require_unit_box(f, g);
    if (!f.stream || g.dim() == 1) return VectorField::sample(g, f.velocity);
    const double hx = g.h(0);
    const double hy = g.h(1);
    return VectorField::sample(g, [&](const Vec2& p) {
        const double dpsi_dy = (f.stream({p[0], p[1] + hy}) - f.stream({p[0], p[1] - hy})) / (2.0 * hy);
        const double dpsi_dx = (f.stream({p[0] + hx, p[1]}) - f.stream({p[0] - hx, p[1]})) / (2.0 * hx);
        return Vec2{dpsi_dy, -dpsi_dx};
    });
}

}  // namespace swarmfield
