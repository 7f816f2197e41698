#pragma once

// Declarative experiment runner. A scenario file names a grid, two densities,
// a controller, integrator settings, per-sample metrics, analyses and
// optional agents; running it writes trajectory.csv, analysis/<op>.json and
// summary.json, and checks the inline assertions against the summary.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "swarmfield/analysis.hpp"
#include "swarmfield/controllers.hpp"
#include "swarmfield/dynamics.hpp"
#include "swarmfield/errors.hpp"
#include "swarmfield/fields.hpp"
#include "swarmfield/flow.hpp"
#include "swarmfield/grid.hpp"
#include "swarmfield/metrics.hpp"
#include "swarmfield/particles.hpp"
#include "swarmfield/spectral.hpp"

namespace swarmfield {

using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Strict JSON reading

/// A JSON object together with its pointer path; every accessor records the
/// key so that finish() can reject the ones nobody asked for.
class SchemaNode {
public:
    SchemaNode(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw SchemaError(path_.empty() ? "/" : path_, "expected an object");
    }

    const std::string& path() const { return path_; }
    std::string child(const std::string& key) const { return path_ + "/" + key; }
    bool has(const std::string& key) const { return j_.contains(key); }

    const json& raw(const std::string& key) {
        seen_.insert(key);
        if (!j_.contains(key)) throw SchemaError(child(key), "missing required key");
        return j_.at(key);
    }

    SchemaNode object(const std::string& key) { return SchemaNode(raw(key), child(key)); }

    double number(const std::string& key, std::optional<double> fallback = std::nullopt) {
        if (!has(key) && fallback) {
            seen_.insert(key);
            return *fallback;
        }
        const json& v = raw(key);
        if (!v.is_number()) throw SchemaError(child(key), "expected a number");
        const double d = v.get<double>();
        if (!std::isfinite(d)) throw SchemaError(child(key), "expected a finite number");
        return d;
    }

    double positive(const std::string& key, std::optional<double> fallback = std::nullopt) {
        const double d = number(key, fallback);
        if (!(d > 0.0)) throw SchemaError(child(key), "must be positive");
        return d;
    }

    std::int64_t integer(const std::string& key, std::optional<std::int64_t> fallback = std::nullopt) {
        if (!has(key) && fallback) {
            seen_.insert(key);
            return *fallback;
        }
        const json& v = raw(key);
        if (!v.is_number_integer()) throw SchemaError(child(key), "expected an integer");
        return v.get<std::int64_t>();
    }

    std::string string(const std::string& key, std::optional<std::string> fallback = std::nullopt) {
        if (!has(key) && fallback) {
            seen_.insert(key);
            return *fallback;
        }
        const json& v = raw(key);
        if (!v.is_string()) throw SchemaError(child(key), "expected a string");
        return v.get<std::string>();
    }

    bool boolean(const std::string& key, bool fallback) {
        seen_.insert(key);
        if (!has(key)) return fallback;
        const json& v = j_.at(key);
        if (!v.is_boolean()) throw SchemaError(child(key), "expected true or false");
        return v.get<bool>();
    }

    std::vector<double> numbers(const std::string& key, std::optional<std::vector<double>> fallback = std::nullopt) {
        if (!has(key) && fallback) {
            seen_.insert(key);
            return *fallback;
        }
        const json& v = raw(key);
        if (!v.is_array()) throw SchemaError(child(key), "expected an array of numbers");
        std::vector<double> out;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!v[i].is_number()) throw SchemaError(child(key) + "/" + std::to_string(i), "expected a number");
            out.push_back(v[i].get<double>());
        }
        return out;
    }

    std::vector<std::int64_t> integers(const std::string& key,
                                       std::optional<std::vector<std::int64_t>> fallback = std::nullopt) {
        if (!has(key) && fallback) {
            seen_.insert(key);
            return *fallback;
        }
        const json& v = raw(key);
        if (!v.is_array()) throw SchemaError(child(key), "expected an array of integers");
        std::vector<std::int64_t> out;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!v[i].is_number_integer()) throw SchemaError(child(key) + "/" + std::to_string(i), "expected an integer");
            out.push_back(v[i].get<std::int64_t>());
        }
        return out;
    }

    /// Rejects keys that were never read.
    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw SchemaError(child(it.key()), "unknown key");
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

// ---------------------------------------------------------------------------
// Scenario model

struct InitializerSpec {
    std::string kind = "uniform";
    double amplitude = 0.0;
    std::vector<int> modes;
    std::vector<Vec2> centers;
    double width = 0.1;
    double base = 0.5;
};

struct AnalysisSpec {
    std::string op;
    /// Validated parameters with defaults filled in.
    json params;
};

struct ParticleSpec {
    std::size_t count = 0;
    std::optional<std::uint64_t> seed;
    std::optional<double> bandwidth;
    bool export_csv = false;
};

struct Assertion {
    std::string quantity;
    std::optional<double> min;
    std::optional<double> max;
    std::optional<std::string> equals;
};

struct Scenario {
    std::string name;
    GridSpec grid;
    InitializerSpec rho0;
    InitializerSpec mu;
    std::string controller;
    IntegratorConfig integrator;
    std::vector<std::string> metrics;
    std::vector<AnalysisSpec> analyses;
    std::optional<ParticleSpec> particles;
    std::string output_dir;
    std::uint64_t seed = 0;
    std::vector<Assertion> assertions;
};

inline const std::vector<std::string>& initializer_catalog() {
    static const std::vector<std::string> names{"uniform", "cosine_bump", "gaussian_bump", "two_bumps"};
    return names;
}

inline const std::vector<std::string>& metric_catalog() {
    static const std::vector<std::string> names{"mass", "min_rho", "max_rho", "l1", "l2", "tv", "w2", "h_minus1", "effort"};
    return names;
}

inline const std::vector<std::string>& analysis_catalog() {
    static const std::vector<std::string> names{"heat_reference", "fit_decay",   "l2_bound",    "lambda1",
                                                "transport_linear", "mixing",    "weak_probe",  "jacobian",
                                                "equivariance",     "linearization"};
    return names;
}

/// Unit-mass density for an initializer on a grid.
inline ScalarField make_density(const InitializerSpec& s, const GridSpec& g) {
    using std::numbers::pi;
    ScalarField f(g, 1.0);
    if (s.kind == "cosine_bump") {
        f = ScalarField::sample(g, [&](const Vec2& p) {
            double c = 1.0;
            for (int a = 0; a < g.dim(); ++a) c *= std::cos(s.modes[a] * pi * p[a] / g.extent(a));
            return 1.0 + s.amplitude * c;
        });
    } else if (s.kind == "gaussian_bump" || s.kind == "two_bumps") {
        f = ScalarField::sample(g, [&](const Vec2& p) {
            double v = s.base;
            for (const Vec2& c : s.centers) {
                double r2 = 0.0;
                for (int a = 0; a < g.dim(); ++a) r2 += (p[a] - c[a]) * (p[a] - c[a]);
                v += std::exp(-r2 / (2.0 * s.width * s.width));
            }
            return v;
        });
    } else if (s.kind != "uniform") {
        fail(ErrorKind::InitializerUnknown, "unknown initializer '" + s.kind + "'");
    }
    f *= 1.0 / f.mass();
    return f;
}

namespace detail {

inline GridSpec parse_grid(SchemaNode n) {
    const std::vector<double> extent = n.numbers("extent");
    const std::vector<std::int64_t> cells = n.integers("cells");
    n.finish();
    if (extent.empty() || extent.size() > 2) throw SchemaError(n.child("extent"), "expected 1 or 2 extents");
    if (cells.size() != extent.size()) throw SchemaError(n.child("cells"), "must match the length of extent");
    std::vector<int> c;
    for (std::size_t a = 0; a < cells.size(); ++a) {
        if (!(extent[a] > 0.0)) throw SchemaError(n.child("extent") + "/" + std::to_string(a), "must be positive");
        if (cells[a] < 2 || cells[a] > 1'000'000) throw SchemaError(n.child("cells") + "/" + std::to_string(a), "must lie in [2, 1e6]");
        c.push_back(static_cast<int>(cells[a]));
    }
    return GridSpec::build(static_cast<int>(extent.size()), extent, c);
}

inline Vec2 parse_point(const json& j, const std::string& path, const GridSpec& g) {
    if (!j.is_array() || static_cast<int>(j.size()) != g.dim()) throw SchemaError(path, "expected a point with one coordinate per axis");
    Vec2 p{0.0, 0.0};
    for (int a = 0; a < g.dim(); ++a) {
        if (!j[a].is_number()) throw SchemaError(path + "/" + std::to_string(a), "expected a number");
        p[a] = j[a].get<double>();
        if (p[a] < 0.0 || p[a] > g.extent(a)) throw SchemaError(path + "/" + std::to_string(a), "outside the domain");
    }
    return p;
}

inline InitializerSpec parse_initializer(SchemaNode n, const GridSpec& g) {
    InitializerSpec s;
    s.kind = n.string("kind");
    if (s.kind == "uniform") {
    } else if (s.kind == "cosine_bump") {
        s.amplitude = n.number("amplitude");
        if (!(std::abs(s.amplitude) < 1.0)) throw SchemaError(n.child("amplitude"), "|amplitude| must be below 1");
        std::vector<std::int64_t> modes = n.integers("modes", std::vector<std::int64_t>(g.dim(), 1));
        if (static_cast<int>(modes.size()) != g.dim()) throw SchemaError(n.child("modes"), "one mode per axis");
        for (auto m : modes) {
            if (m < 0) throw SchemaError(n.child("modes"), "modes must be nonnegative");
            s.modes.push_back(static_cast<int>(m));
        }
    } else if (s.kind == "gaussian_bump" || s.kind == "two_bumps") {
        const std::size_t want = s.kind == "gaussian_bump" ? 1 : 2;
        const json& centers = n.raw(want == 1 ? "center" : "centers");
        if (want == 1) {
            s.centers.push_back(parse_point(centers, n.child("center"), g));
        } else {
            if (!centers.is_array() || centers.size() != 2) throw SchemaError(n.child("centers"), "expected two points");
            for (std::size_t i = 0; i < 2; ++i)
                s.centers.push_back(parse_point(centers[i], n.child("centers") + "/" + std::to_string(i), g));
        }
        s.width = n.positive("width", 0.1);
        s.base = n.number("base", 0.5);
        if (!(s.base >= 0.0)) throw SchemaError(n.child("base"), "must be nonnegative");
    } else {
        throw Error(ErrorKind::InitializerUnknown, n.child("kind") + ": unknown initializer '" + s.kind + "'");
    }
    n.finish();
    const ScalarField f = make_density(s, g);
    if (!(f.min() >= 0.0) || !f.all_finite()) throw SchemaError(n.path(), "initializer is not a density");
    return s;
}

inline IntegratorConfig parse_integrator(SchemaNode n) {
    IntegratorConfig c;
    c.t_end = n.number("t_end");
    if (!(c.t_end > 0.0)) throw SchemaError(n.child("t_end"), "must be positive");
    c.cfl = n.number("cfl", 0.45);
    if (!(c.cfl > 0.0 && c.cfl < 1.0)) throw SchemaError(n.child("cfl"), "must lie in (0, 1)");
    const std::int64_t stride = n.integer("sample_stride", 10);
    if (stride < 1) throw SchemaError(n.child("sample_stride"), "must be at least 1");
    c.sample_stride = static_cast<std::size_t>(stride);
    c.diffusion_number = n.number("diffusion_number", 0.25);
    if (!(c.diffusion_number > 0.0 && c.diffusion_number <= 0.5))
        throw SchemaError(n.child("diffusion_number"), "must lie in (0, 0.5]");
    const std::int64_t max_steps = n.integer("max_steps", 100'000'000);
    if (max_steps < 1) throw SchemaError(n.child("max_steps"), "must be positive");
    c.max_steps = static_cast<std::size_t>(max_steps);
    if (n.has("dt")) c.dt_override = n.positive("dt");
    c.checkpoints = n.numbers("checkpoints", std::vector<double>{});
    for (std::size_t i = 0; i < c.checkpoints.size(); ++i)
        if (!(c.checkpoints[i] > 0.0 && c.checkpoints[i] <= c.t_end))
            throw SchemaError(n.child("checkpoints") + "/" + std::to_string(i), "must lie in (0, t_end]");
    n.finish();
    return c;
}

inline std::string require_field_name(SchemaNode& n, const std::string& key, const GridSpec& g) {
    const std::string name = n.string(key);
    const AnalyticField* found = nullptr;
    for (const auto& f : vector_field_catalog())
        if (f.name == name) found = &f;
    if (!found) throw Error(ErrorKind::InitializerUnknown, n.child(key) + ": unknown vector field '" + name + "'");
    if (found->dim != g.dim()) throw SchemaError(n.child(key), "field '" + name + "' does not match the grid dimension");
    return name;
}

inline json parse_analysis(SchemaNode n, const GridSpec& g) {
    const std::string op = n.string("op");
    json p = json::object();
    p["op"] = op;
    auto time_grid = [&](double t_end_default, std::int64_t samples_default) {
        p["t_end"] = n.positive("t_end", t_end_default);
        const std::int64_t s = n.integer("samples", samples_default);
        if (s < 1) throw SchemaError(n.child("samples"), "must be at least 1");
        p["samples"] = s;
    };
    if (op == "heat_reference") {
        p["times"] = n.numbers("times", std::vector<double>{});
    } else if (op == "fit_decay") {
        p["t_lo"] = n.number("t_lo", 0.0);
        p["t_hi"] = n.number("t_hi", 1e300);
        if (!(p["t_hi"].get<double>() > p["t_lo"].get<double>())) throw SchemaError(n.child("t_hi"), "must exceed t_lo");
    } else if (op == "l2_bound") {
        p["slack"] = n.number("slack", 0.0);
    } else if (op == "lambda1") {
    } else if (op == "transport_linear") {
        p["field"] = require_field_name(n, "field", g);
        time_grid(5.0, 10);
    } else if (op == "mixing") {
        p["field"] = require_field_name(n, "field", g);
        time_grid(30.0, 60);
        std::string kind = "cos_sum";
        std::int64_t mode = 2;
        if (n.has("observable")) {
            SchemaNode obs = n.object("observable");
            kind = obs.string("kind", kind);
            if (kind != "cos_sum" && kind != "cos_product") throw SchemaError(obs.child("kind"), "expected cos_sum or cos_product");
            mode = obs.integer("mode", mode);
            if (mode < 1) throw SchemaError(obs.child("mode"), "must be positive");
            obs.finish();
        }
        p["observable"] = {{"kind", kind}, {"mode", mode}};
    } else if (op == "weak_probe") {
        const std::string source = n.string("source", "trajectory");
        if (source != "trajectory" && source != "transport") throw SchemaError(n.child("source"), "expected trajectory or transport");
        p["source"] = source;
        if (source == "transport") {
            p["field"] = require_field_name(n, "field", g);
            time_grid(5.0, 10);
        }
        const std::int64_t m = n.integer("max_mode", 3);
        if (m < 1) throw SchemaError(n.child("max_mode"), "must be positive");
        p["max_mode"] = m;
    } else if (op == "jacobian") {
        json names = json::array();
        if (n.has("fields")) {
            const json& arr = n.raw("fields");
            if (!arr.is_array()) throw SchemaError(n.child("fields"), "expected an array of field names");
            for (std::size_t i = 0; i < arr.size(); ++i) {
                if (!arr[i].is_string()) throw SchemaError(n.child("fields") + "/" + std::to_string(i), "expected a string");
                names.push_back(arr[i].get<std::string>());
            }
        }
        p["fields"] = names;
        time_grid(1.0, 4);
        const std::int64_t seeds = n.integer("seeds_per_axis", 5);
        if (seeds < 1) throw SchemaError(n.child("seeds_per_axis"), "must be positive");
        p["seeds_per_axis"] = seeds;
    } else if (op == "equivariance") {
        const json& arr = n.raw("transforms");
        if (!arr.is_array() || arr.empty()) throw SchemaError(n.child("transforms"), "expected a non-empty array");
        json out = json::array();
        for (std::size_t i = 0; i < arr.size(); ++i) {
            SchemaNode t(arr[i], n.child("transforms") + "/" + std::to_string(i));
            const std::string kind = t.string("kind");
            json e = {{"kind", kind}};
            if (kind == "translation") {
                e["shift"] = t.integers("shift");
                if (static_cast<int>(e["shift"].size()) != g.dim()) throw SchemaError(t.child("shift"), "one shift per axis");
            } else if (kind == "rotation") {
                e["quarter_turns"] = t.integer("quarter_turns");
                if (t.has("pivot")) {
                    e["pivot"] = t.integers("pivot");
                    if (static_cast<int>(e["pivot"].size()) != g.dim()) throw SchemaError(t.child("pivot"), "one index per axis");
                }
            } else {
                throw SchemaError(t.child("kind"), "expected translation or rotation");
            }
            t.finish();
            out.push_back(e);
        }
        p["transforms"] = out;
    } else if (op == "linearization") {
        std::vector<double> amps = n.numbers("amplitudes", std::vector<double>{0.1, 0.05});
        if (amps.size() < 2) throw SchemaError(n.child("amplitudes"), "need at least two amplitudes");
        for (double a : amps)
            if (!(a > 0.0)) throw SchemaError(n.child("amplitudes"), "amplitudes must be positive");
        p["amplitudes"] = amps;
        p["t"] = n.positive("t", 0.5);
    } else {
        throw SchemaError(n.child("op"), "unknown analysis '" + op + "'");
    }
    n.finish();
    return p;
}

}  // namespace detail

inline Scenario parse_scenario(const json& doc) {
    SchemaNode root(doc, "");
    Scenario s;
    s.name = root.string("name");
    if (s.name.empty()) throw SchemaError("/name", "must not be empty");
    const std::int64_t seed = root.integer("seed", 0);
    if (seed < 0) throw SchemaError("/seed", "must be nonnegative");
    s.seed = static_cast<std::uint64_t>(seed);
    s.grid = detail::parse_grid(root.object("grid"));
    s.rho0 = detail::parse_initializer(root.object("rho0"), s.grid);
    s.mu = detail::parse_initializer(root.object("mu"), s.grid);
    s.controller = root.string("controller");
    {
        const auto keys = controller_catalog();
        if (std::find(keys.begin(), keys.end(), s.controller) == keys.end())
            throw Error(ErrorKind::InitializerUnknown, "/controller: unknown controller '" + s.controller + "'");
    }
    s.integrator = detail::parse_integrator(root.object("integrator"));

    if (root.has("metrics")) {
        const json& m = root.raw("metrics");
        if (!m.is_array()) throw SchemaError("/metrics", "expected an array of metric names");
        for (std::size_t i = 0; i < m.size(); ++i) {
            const std::string path = "/metrics/" + std::to_string(i);
            if (!m[i].is_string()) throw SchemaError(path, "expected a string");
            const std::string name = m[i].get<std::string>();
            const auto& cat = metric_catalog();
            if (std::find(cat.begin(), cat.end(), name) == cat.end()) throw SchemaError(path, "unknown metric '" + name + "'");
            if (std::find(s.metrics.begin(), s.metrics.end(), name) != s.metrics.end()) throw SchemaError(path, "duplicate metric");
            if (name == "w2" && s.grid.dim() == 2 && s.grid.size() > kExactTransportMaxCells)
                throw SchemaError(path, "w2 in 2D needs at most 4096 cells");
            s.metrics.push_back(name);
        }
    } else {
        s.metrics = {"mass", "min_rho", "l2"};
    }

    if (root.has("analyses")) {
        const json& a = root.raw("analyses");
        if (!a.is_array()) throw SchemaError("/analyses", "expected an array");
        std::set<std::string> ops;
        for (std::size_t i = 0; i < a.size(); ++i) {
            const std::string path = "/analyses/" + std::to_string(i);
            json p = detail::parse_analysis(SchemaNode(a[i], path), s.grid);
            const std::string op = p["op"].get<std::string>();
            if (!ops.insert(op).second) throw SchemaError(path + "/op", "analysis '" + op + "' listed twice");
            s.analyses.push_back({op, std::move(p)});
        }
    }

    if (root.has("particles")) {
        SchemaNode n = root.object("particles");
        ParticleSpec p;
        const std::int64_t count = n.integer("N");
        if (count < 10) throw SchemaError(n.child("N"), "need at least 10 agents");
        p.count = static_cast<std::size_t>(count);
        if (n.has("seed")) {
            const std::int64_t ps = n.integer("seed");
            if (ps < 0) throw SchemaError(n.child("seed"), "must be nonnegative");
            p.seed = static_cast<std::uint64_t>(ps);
        }
        if (n.has("bandwidth")) p.bandwidth = n.positive("bandwidth");
        p.export_csv = n.boolean("export", false);
        n.finish();
        s.particles = p;
    }

    s.output_dir = root.string("output_dir", "runs/" + s.name);

    if (root.has("assertions")) {
        const json& a = root.raw("assertions");
        if (!a.is_array()) throw SchemaError("/assertions", "expected an array");
        for (std::size_t i = 0; i < a.size(); ++i) {
            SchemaNode n(a[i], "/assertions/" + std::to_string(i));
            Assertion as;
            as.quantity = n.string("quantity");
            if (n.has("min")) as.min = n.number("min");
            if (n.has("max")) as.max = n.number("max");
            if (n.has("equals")) as.equals = n.string("equals");
            if (!as.min && !as.max && !as.equals) throw SchemaError(n.path(), "needs min, max or equals");
            n.finish();
            s.assertions.push_back(as);
        }
    }
    root.finish();
    return s;
}

inline Scenario parse_scenario_file(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw SchemaError("/", "cannot open " + file.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw SchemaError("/", std::string("invalid JSON: ") + e.what());
    }
    return parse_scenario(doc);
}

// ---------------------------------------------------------------------------
// Running

struct RunReport {
    /// 0 all assertions pass, 1 an assertion failed, 3 a model error.
    int exit_code = 0;
    json summary;
};

struct RunOptions {
    unsigned jobs = 0;
    /// Timestamped progress; kept out of the reproducible outputs.
    std::ostream* log = nullptr;
};

namespace detail {

inline void log_line(const RunOptions& opt, const std::string& msg) {
    if (!opt.log) return;
    const auto now = std::chrono::system_clock::now();
    const std::time_t tt = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    *opt.log << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ") << ' ' << msg << '\n';
    opt.log->flush();
}

inline std::vector<double> uniform_grid(double t_end, std::int64_t samples) {
    std::vector<double> t(samples + 1);
    for (std::int64_t i = 0; i <= samples; ++i) t[i] = t_end * static_cast<double>(i) / static_cast<double>(samples);
    return t;
}

inline json series_summary(const std::vector<double>& v) {
    if (v.empty()) return json::object();
    return {{"initial", v.front()},
            {"final", v.back()},
            {"min", *std::min_element(v.begin(), v.end())},
            {"max", *std::max_element(v.begin(), v.end())}};
}

inline void write_json(const std::filesystem::path& file, const json& j) {
    std::ofstream out(file);
    out << j.dump(2) << '\n';
}

inline double metric_value(const std::string& name, const Trajectory& tr, std::size_t s, const ScalarField& mu) {
    const ScalarField& rho = tr.densities[s];
    if (name == "mass") return rho.mass();
    if (name == "min_rho") return rho.min();
    if (name == "max_rho") return rho.max();
    if (name == "l1") return lp_distance(rho, mu, 1.0);
    if (name == "l2") return norm_l2(rho - mu);
    if (name == "tv") return tv_distance(rho, mu);
    if (name == "w2") return w2_distance(rho, mu);
    if (name == "h_minus1") return h_minus1_norm(rho - mu);
    if (name == "effort") return tr.effort[s];
    fail(ErrorKind::InvalidArgument, "unknown metric " + name);
}

inline ScalarFunction observable(const json& spec, const GridSpec& g) {
    using std::numbers::pi;
    const bool sum = spec["kind"].get<std::string>() == "cos_sum";
    const double k = spec["mode"].get<double>();
    const int dim = g.dim();
    const double lx = g.extent(0);
    const double ly = dim == 2 ? g.extent(1) : 1.0;
    return [=](const Vec2& p) {
        const double cx = std::cos(k * pi * p[0] / lx);
        if (dim == 1) return cx;
        const double cy = std::cos(k * pi * p[1] / ly);
        return sum ? cx + cy : cx * cy;
    };
}

inline double l1_norm(const ScalarField& f) {
    double s = 0.0;
    for (double v : f.values) s += std::abs(v);
    return s * f.grid.cell_volume();
}

struct RunContext {
    const Scenario& scenario;
    const ScalarField& rho0;
    const ScalarField& mu;
    const Controller& controller;
    const Trajectory& trajectory;
    FlowOptions flow;
};

/// Runs one analysis; returns {full record, summary digest}.
inline std::pair<json, json> run_analysis(const AnalysisSpec& a, const RunContext& ctx) {
    const json& p = a.params;
    const Trajectory& tr = ctx.trajectory;
    const GridSpec& g = ctx.mu.grid;
    json full = p;
    json digest = json::object();
    const ScalarField e0 = ctx.rho0 - ctx.mu;

    auto error_norms = [&] {
        std::vector<double> n;
        for (const ScalarField& rho : tr.densities) n.push_back(norm_l2(rho - ctx.mu));
        return n;
    };

    if (a.op == "heat_reference") {
        std::vector<double> times = p["times"].get<std::vector<double>>();
        std::vector<std::size_t> idx;
        if (times.empty()) {
            for (std::size_t s = 0; s < tr.times.size(); ++s) idx.push_back(s);
        } else {
            for (double t : times) {
                auto it = std::find_if(tr.times.begin(), tr.times.end(), [&](double x) { return std::abs(x - t) <= 1e-12; });
                if (it == tr.times.end())
                    fail(ErrorKind::InvalidArgument, "heat_reference time " + std::to_string(t) + " is not a sample; add it to checkpoints");
                idx.push_back(static_cast<std::size_t>(it - tr.times.begin()));
            }
        }
        json rows = json::array();
        double worst = 0.0;
        for (std::size_t s : idx) {
            const ScalarField ref = heat_reference(e0, tr.times[s]);
            const double rel = norm_l2((tr.densities[s] - ctx.mu) - ref) / std::max(norm_l2(ref), 1e-300);
            worst = std::max(worst, rel);
            rows.push_back({{"t", tr.times[s]}, {"rel_l2", rel}});
        }
        full["samples"] = rows;
        digest["max_rel_l2"] = worst;
    } else if (a.op == "fit_decay") {
        const DecayFit fit = fit_decay(tr.times, error_norms(), p["t_lo"].get<double>(),
                                       std::min(p["t_hi"].get<double>(), tr.times.back()));
        const double l1 = neumann_lambda1(g).analytic;
        digest = {{"lambda_hat", fit.lambda_hat}, {"c_hat", fit.c_hat},       {"r_squared", fit.r_squared},
                  {"lambda1", l1},               {"lambda_ratio", fit.lambda_hat / l1}, {"points", fit.points}};
        full["fit"] = digest;
    } else if (a.op == "l2_bound") {
        const double l1 = neumann_lambda1(g).analytic;
        const std::vector<double> n = error_norms();
        double worst = 0.0;
        json rows = json::array();
        for (std::size_t s = 0; s < n.size(); ++s) {
            const double bound = std::exp(-l1 * tr.times[s]) * n.front() * (1.0 + p["slack"].get<double>());
            const double ratio = bound > 0.0 ? n[s] / bound : (n[s] > 0.0 ? INFINITY : 0.0);
            worst = std::max(worst, ratio);
            rows.push_back({{"t", tr.times[s]}, {"norm", n[s]}, {"bound", bound}});
        }
        full["samples"] = rows;
        digest = {{"max_ratio", worst}, {"violations", std::count_if(rows.begin(), rows.end(), [](const json& r) {
                                             return r["norm"].get<double>() > r["bound"].get<double>();
                                         })}};
    } else if (a.op == "lambda1") {
        const Lambda1 l = neumann_lambda1(g);
        digest = {{"analytic", l.analytic}, {"numeric", l.numeric}, {"iterations", l.iterations},
                  {"relative_gap", std::abs(l.numeric - l.analytic) / l.analytic}};
        full["result"] = digest;
    } else if (a.op == "transport_linear") {
        const FlowField b = analytic_flow(find_vector_field(p["field"].get<std::string>()), g);
        const std::vector<double> t = uniform_grid(p["t_end"].get<double>(), p["samples"].get<std::int64_t>());
        const LinearTransport lt = transport_linear(e0, b, t, ctx.flow);
        const double l1_0 = l1_norm(e0);
        const double l2_0 = norm_l2(e0);
        json rows = json::array();
        double drift = 0.0;
        double min_l2 = INFINITY;
        double max_mass = 0.0;
        for (std::size_t s = 0; s < t.size(); ++s) {
            const double l1 = l1_norm(lt.fields[s]);
            const double l2 = norm_l2(lt.fields[s]);
            drift = std::max(drift, std::abs(l1 / l1_0 - 1.0));
            min_l2 = std::min(min_l2, l2 / l2_0);
            max_mass = std::max(max_mass, std::abs(lt.fields[s].mass()));
            rows.push_back({{"t", t[s]}, {"l1", l1}, {"l2", l2}, {"mass", lt.fields[s].mass()}});
        }
        full["samples"] = rows;
        digest = {{"max_l1_drift", drift}, {"min_l2_ratio", min_l2}, {"max_abs_mass", max_mass}, {"max_clamp", lt.max_clamp}};
    } else if (a.op == "mixing") {
        const FlowField b = analytic_flow(find_vector_field(p["field"].get<std::string>()), g);
        const ScalarFunction f = observable(p["observable"], g);
        const MixingReport r = mixing_correlation(b, ctx.mu, f, f, uniform_grid(p["t_end"].get<double>(), p["samples"].get<std::int64_t>()), ctx.flow);
        full["t"] = r.t_grid;
        full["correlations"] = r.correlations;
        digest = {{"verdict", to_string(r.verdict)},
                  {"late_gap_ratio", r.late_gap_ratio},
                  {"product_of_means", r.product_of_means},
                  {"invariance_residual", r.invariance_residual}};
    } else if (a.op == "weak_probe") {
        std::vector<ScalarField> seq;
        if (p["source"] == "trajectory") {
            for (const ScalarField& rho : tr.densities) seq.push_back(rho - ctx.mu);
        } else {
            const FlowField b = analytic_flow(find_vector_field(p["field"].get<std::string>()), g);
            seq = transport_linear(e0, b, uniform_grid(p["t_end"].get<double>(), p["samples"].get<std::int64_t>()), ctx.flow).fields;
        }
        const WeakProbe w = weak_convergence_probe(seq, cosine_dictionary(g, static_cast<int>(p["max_mode"].get<std::int64_t>())));
        // Ratios of tests that start near orthogonal to e0 are noise.
        double first_max = 0.0;
        for (const auto& row : w.pairings) first_max = std::max(first_max, std::abs(row.front()));
        json ratios = json::object();
        for (std::size_t i = 0; i < w.names.size(); ++i)
            if (std::abs(w.pairings[i].front()) >= 1e-3 * first_max) ratios[w.names[i]] = w.decay_ratio[i];
        json pairings = json::object();
        for (std::size_t i = 0; i < w.names.size(); ++i) pairings[w.names[i]] = w.pairings[i];
        full["pairings"] = pairings;
        full["max_pairing"] = w.max_pairing;
        full["decay_ratio"] = ratios;
        digest["decay_ratio"] = ratios;
        digest["max_pairing_ratio"] = w.max_pairing.front() > 0.0 ? w.max_pairing.back() / w.max_pairing.front() : 0.0;
    } else if (a.op == "jacobian") {
        std::vector<std::string> names = p["fields"].get<std::vector<std::string>>();
        if (names.empty())
            for (const auto& f : vector_field_catalog())
                if (f.dim == g.dim()) names.push_back(f.name);
        const std::int64_t m = p["seeds_per_axis"].get<std::int64_t>();
        std::vector<Vec2> seeds;
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < (g.dim() == 2 ? m : 1); ++j)
                seeds.push_back({g.extent(0) * (i + 0.5) / m, g.dim() == 2 ? g.extent(1) * (j + 0.5) / m : 0.0});
        const std::vector<double> t = uniform_grid(p["t_end"].get<double>(), p["samples"].get<std::int64_t>());
        json per = json::object();
        double worst = 0.0;
        for (const std::string& name : names) {
            const FlowMap fm = flow_map(analytic_flow(find_vector_field(name), g), seeds, t, ctx.flow);
            per[name] = fm.cross_check_residual;
            worst = std::max(worst, fm.cross_check_residual);
        }
        full["cross_check_residual"] = per;
        digest = {{"max_cross_check_residual", worst}, {"cross_check_residual", per}};
    } else if (a.op == "equivariance") {
        json rows = json::array();
        double worst = 0.0;
        for (const json& e : p["transforms"]) {
            GridTransform t;
            if (e["kind"] == "translation") {
                const auto s = e["shift"].get<std::vector<int>>();
                t = GridTransform::translation(s[0], s.size() > 1 ? s[1] : 0);
            } else if (e.contains("pivot")) {
                const auto pv = e["pivot"].get<std::vector<int>>();
                t = GridTransform::rotation_about(e["quarter_turns"].get<int>(), pv[0], pv.size() > 1 ? pv[1] : 0);
            } else {
                t = GridTransform::rotation(e["quarter_turns"].get<int>());
            }
            const double r = equivariance_residual(ctx.controller, t, ctx.rho0, ctx.mu);
            worst = std::max(worst, r);
            rows.push_back({{"transform", t.describe()}, {"residual", r}});
        }
        full["results"] = rows;
        digest["max_residual"] = worst;
    } else if (a.op == "linearization") {
        const std::vector<double> amps = p["amplitudes"].get<std::vector<double>>();
        IntegratorConfig cfg = ctx.scenario.integrator;
        cfg.checkpoints.clear();
        cfg.sample_stride = 1'000'000;
        json rows = json::array();
        std::vector<double> gaps;
        for (double amp : amps) {
            const LinearizationGap lg = linearization_gap(ctx.controller, ctx.mu, e0, amp, p["t"].get<double>(), cfg, ctx.flow);
            gaps.push_back(lg.discrepancy);
            rows.push_back({{"amplitude", amp}, {"discrepancy", lg.discrepancy}, {"linear_norm", lg.linear_norm}});
        }
        std::vector<double> ratios;
        for (std::size_t i = 1; i < gaps.size(); ++i) ratios.push_back(gaps[i - 1] / gaps[i]);
        full["results"] = rows;
        full["ratios"] = ratios;
        digest = {{"min_ratio", *std::min_element(ratios.begin(), ratios.end())},
                  {"max_ratio", *std::max_element(ratios.begin(), ratios.end())}};
    } else {
        fail(ErrorKind::InvalidArgument, "unknown analysis " + a.op);
    }
    return {full, digest};
}

inline const json* lookup(const json& root, const std::string& dotted) {
    const json* node = &root;
    std::size_t start = 0;
    while (start <= dotted.size()) {
        const std::size_t dot = dotted.find('.', start);
        const std::string key = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (!node->is_object() || !node->contains(key)) return nullptr;
        node = &(*node)[key];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    return node;
}

inline json check_assertions(const std::vector<Assertion>& list, const json& summary, bool& all_pass) {
    json out = json::array();
    all_pass = true;
    for (const Assertion& a : list) {
        json row = {{"quantity", a.quantity}};
        if (a.min) row["min"] = *a.min;
        if (a.max) row["max"] = *a.max;
        if (a.equals) row["equals"] = *a.equals;
        const json* v = lookup(summary, a.quantity);
        bool pass = v != nullptr;
        if (v) {
            row["value"] = *v;
            if (a.equals) pass = v->is_string() && v->get<std::string>() == *a.equals;
            if (a.min || a.max) {
                if (!v->is_number()) {
                    pass = false;
                } else {
                    const double x = v->get<double>();
                    if (a.min && !(x >= *a.min)) pass = false;
                    if (a.max && !(x <= *a.max)) pass = false;
                }
            }
        } else {
            row["value"] = nullptr;
        }
        row["pass"] = pass;
        all_pass = all_pass && pass;
        out.push_back(row);
    }
    return out;
}

}  // namespace detail

/// Executes a scenario into `out_dir`. Outputs written before a model error
/// are kept, and the summary records the error.
inline RunReport run_scenario(const Scenario& sc, const std::filesystem::path& out_dir, const RunOptions& opt = {}) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir / "analysis");
    RunReport report;
    json& summary = report.summary;
    summary["scenario"] = sc.name;
    summary["seed"] = sc.seed;
    summary["grid"] = {{"dim", sc.grid.dim()}};
    {
        json ext = json::array();
        json cells = json::array();
        for (int a = 0; a < sc.grid.dim(); ++a) {
            ext.push_back(sc.grid.extent(a));
            cells.push_back(sc.grid.cells(a));
        }
        summary["grid"]["extent"] = ext;
        summary["grid"]["cells"] = cells;
    }
    summary["controller"] = sc.controller;

    const auto finish = [&](int code) {
        bool pass = false;
        summary["assertions"] = detail::check_assertions(sc.assertions, summary, pass);
        if (code == 0 && !pass) code = 1;
        summary["exit_code"] = code;
        detail::write_json(out_dir / "summary.json", summary);
        report.exit_code = code;
        detail::log_line(opt, "finished " + sc.name + " with exit code " + std::to_string(code));
        return report;
    };

    detail::log_line(opt, "starting " + sc.name);
    const ScalarField rho0 = make_density(sc.rho0, sc.grid);
    const ScalarField mu = make_density(sc.mu, sc.grid);
    const Controller controller = make_controller(sc.controller);
    FlowOptions flow;
    flow.jobs = opt.jobs;

    Trajectory tr;
    try {
        tr = simulate(rho0, controller, mu, sc.integrator);
    } catch (const SimulationAborted& e) {
        summary["error"] = {{"stage", "simulate"}, {"kind", to_string(e.kind())}, {"message", e.what()}};
        tr = e.partial();
        summary["run"] = {{"steps", tr.steps}, {"samples", tr.times.size()}};
        return finish(3);
    } catch (const Error& e) {
        summary["error"] = {{"stage", "simulate"}, {"kind", to_string(e.kind())}, {"message", e.what()}};
        return finish(3);
    }
    detail::log_line(opt, "simulated " + std::to_string(tr.steps) + " steps");
    summary["run"] = {{"steps", tr.steps},
                      {"samples", tr.times.size()},
                      {"t_end", tr.times.back()},
                      {"min_rho", tr.min_rho},
                      {"total_effort", tr.total_effort},
                      {"positivity_loss", tr.positivity_loss}};

    try {
        std::vector<std::vector<double>> columns(sc.metrics.size());
        for (std::size_t m = 0; m < sc.metrics.size(); ++m)
            for (std::size_t s = 0; s < tr.times.size(); ++s)
                columns[m].push_back(detail::metric_value(sc.metrics[m], tr, s, mu));
        std::ofstream csv(out_dir / "trajectory.csv");
        csv.precision(17);
        csv << "t";
        for (const auto& m : sc.metrics) csv << ',' << m;
        csv << '\n';
        for (std::size_t s = 0; s < tr.times.size(); ++s) {
            csv << tr.times[s];
            for (const auto& c : columns) csv << ',' << c[s];
            csv << '\n';
        }
        json metrics = json::object();
        for (std::size_t m = 0; m < sc.metrics.size(); ++m) metrics[sc.metrics[m]] = detail::series_summary(columns[m]);
        summary["metrics"] = metrics;
    } catch (const Error& e) {
        summary["error"] = {{"stage", "metrics"}, {"kind", to_string(e.kind())}, {"message", e.what()}};
        return finish(3);
    }

    summary["analyses"] = json::object();
    const detail::RunContext ctx{sc, rho0, mu, controller, tr, flow};
    for (const AnalysisSpec& a : sc.analyses) {
        try {
            auto [full, digest] = detail::run_analysis(a, ctx);
            detail::write_json(out_dir / "analysis" / (a.op + ".json"), full);
            summary["analyses"][a.op] = digest;
            detail::log_line(opt, "analysis " + a.op + " done");
        } catch (const Error& e) {
            summary["error"] = {{"stage", "analysis:" + a.op}, {"kind", to_string(e.kind())}, {"message", e.what()}};
            return finish(3);
        }
    }

    if (sc.particles) {
        try {
            const ParticleSpec& ps = *sc.particles;
            KdeConfig kde = KdeConfig::for_grid(sc.grid);
            if (ps.bandwidth) kde.bandwidth = *ps.bandwidth;
            kde.jobs = opt.jobs;
            const AgentSet a0 = sample_density(rho0, ps.count, ps.seed.value_or(sc.seed));
            const AgentTrajectory at = simulate_agents(a0, controller, mu, sc.integrator, kde);
            json rows = json::array();
            std::vector<double> w2mu;
            double worst_vs = 0.0;
            for (std::size_t s = 0; s < at.times.size(); ++s) {
                json row = {{"t", at.times[s]}, {"w2_to_mu", w2_distance(at.estimates[s], mu)}};
                w2mu.push_back(row["w2_to_mu"].get<double>());
                auto it = std::find_if(tr.times.begin(), tr.times.end(),
                                       [&](double x) { return std::abs(x - at.times[s]) <= 1e-12; });
                if (it != tr.times.end()) {
                    const double v = w2_distance(at.estimates[s], tr.densities[it - tr.times.begin()]);
                    row["vs_continuum"] = v;
                    worst_vs = std::max(worst_vs, v);
                }
                rows.push_back(row);
            }
            std::size_t inversions = 0;
            for (std::size_t s = 1; s < w2mu.size(); ++s) inversions += w2mu[s] >= w2mu[s - 1];
            json full = {{"N", ps.count}, {"seed", a0.seed}, {"bandwidth", kde.bandwidth}, {"steps", at.steps},
                         {"max_clamp", at.snapshots.back().clamp}, {"samples", rows}};
            detail::write_json(out_dir / "analysis" / "particles.json", full);
            summary["particles"] = {{"N", ps.count},
                                    {"steps", at.steps},
                                    {"w2_inversions", inversions},
                                    {"max_vs_continuum", worst_vs},
                                    {"w2_to_mu", detail::series_summary(w2mu)}};
            if (ps.export_csv) {
                std::ofstream csv(out_dir / "agents.csv");
                write_agents_csv(csv, at.times, at.snapshots);
            }
            detail::log_line(opt, "agents done after " + std::to_string(at.steps) + " steps");
        } catch (const Error& e) {
            summary["error"] = {{"stage", "particles"}, {"kind", to_string(e.kind())}, {"message", e.what()}};
            return finish(3);
        }
    }
    return finish(0);
}

}  // namespace swarmfield
