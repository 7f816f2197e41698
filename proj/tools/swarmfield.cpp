// swarmfield: run scenario files, list catalogs, validate scenarios.
//
// Exit codes: 0 all inline assertions pass, 1 an assertion failed,
// 2 schema error, 3 model error during the run.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "swarmfield/parallel.hpp"
#include "swarmfield/scenario.hpp"

namespace fs = std::filesystem;
using namespace swarmfield;

namespace {

constexpr int kSchemaExit = 2;
constexpr int kModelExit = 3;

Scenario load(const std::string& file) {
    Scenario sc = parse_scenario_file(file);
    if (const char* env = std::getenv("SWARMFIELD_SEED")) {
        try {
            std::size_t used = 0;
            const unsigned long long seed = std::stoull(env, &used);
            if (used != std::string(env).size()) throw std::invalid_argument("trailing characters");
            sc.seed = seed;
        } catch (const std::exception&) {
            throw SchemaError("/seed", std::string("SWARMFIELD_SEED is not a nonnegative integer: ") + env);
        }
    }
    return sc;
}

int run_one(const std::string& file, const std::optional<std::string>& out, bool batch, unsigned jobs,
            std::mutex& io) {
    Scenario sc;
    try {
        sc = load(file);
    } catch (const Error& e) {
        std::lock_guard lock(io);
        std::cerr << file << ": " << e.what() << '\n';
        return kSchemaExit;
    }
    fs::path dir = out ? fs::path(*out) : fs::path(sc.output_dir);
    if (batch && out) dir /= sc.name;
    try {
        fs::create_directories(dir);
        std::ofstream log(dir / "run.log");
        RunOptions opt;
        opt.jobs = jobs;
        opt.log = &log;
        const RunReport r = run_scenario(sc, dir, opt);
        std::lock_guard lock(io);
        std::cout << sc.name << ": exit " << r.exit_code << " (" << (dir / "summary.json").string() << ")\n";
        if (r.summary.contains("error")) std::cerr << sc.name << ": " << r.summary["error"]["message"].get<std::string>() << '\n';
        for (const auto& a : r.summary["assertions"])
            if (!a["pass"].get<bool>()) std::cerr << sc.name << ": assertion failed: " << a.dump() << '\n';
        return r.exit_code;
    } catch (const std::exception& e) {
        std::lock_guard lock(io);
        std::cerr << sc.name << ": " << e.what() << '\n';
        return kModelExit;
    }
}

void print_catalog() {
    std::cout << "initializers:\n";
    for (const auto& n : initializer_catalog()) std::cout << "  " << n << '\n';
    std::cout << "controllers:\n";
    for (const auto& n : controller_catalog()) std::cout << "  " << n << '\n';
    std::cout << "vector fields:\n";
    for (const auto& f : vector_field_catalog()) std::cout << "  " << f.name << " (" << f.dim << "D): " << f.description << '\n';
    std::cout << "metrics:\n";
    for (const auto& n : metric_catalog()) std::cout << "  " << n << '\n';
    std::cout << "analyses:\n";
    for (const auto& n : analysis_catalog()) std::cout << "  " << n << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Continuum swarm density control experiments"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "Run one or more scenario files");
    std::vector<std::string> files;
    std::optional<std::string> out;
    unsigned jobs = 0;
    run->add_option("scenarios", files, "Scenario JSON files")->required()->check(CLI::ExistingFile);
    run->add_option("--out", out, "Output directory (one subdirectory per scenario when several are given)");
    run->add_option("--jobs", jobs, "Worker threads; 0 uses every core")->check(CLI::NonNegativeNumber);

    auto* catalog = app.add_subcommand("catalog", "List initializers, controllers, fields, metrics and analyses");

    auto* validate = app.add_subcommand("validate", "Check a scenario file against the schema");
    std::string to_validate;
    validate->add_option("scenario", to_validate, "Scenario JSON file")->required()->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kSchemaExit;
    }

    if (*catalog) {
        print_catalog();
        return 0;
    }
    if (*validate) {
        try {
            const Scenario sc = load(to_validate);
            std::cout << "ok: " << sc.name << '\n';
            return 0;
        } catch (const Error& e) {
            std::cerr << to_validate << ": " << e.what() << '\n';
            return kSchemaExit;
        }
    }

    // Several files run concurrently, each on one thread; a single file gets
    // every worker for its own parallel loops.
    std::mutex io;
    std::vector<int> codes(files.size(), 0);
    const bool batch = files.size() > 1;
    const unsigned inner = batch ? 1u : jobs;
    parallel_for(
        files.size(), [&](std::size_t i) { codes[i] = run_one(files[i], out, batch, inner, io); }, jobs);
    int worst = 0;
    for (int c : codes) worst = std::max(worst, c);
    return worst;
}
