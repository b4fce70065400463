#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "psgd/psgd.hpp"

namespace {

std::string read_text(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw psgd::Error(psgd::ErrorKind::io, "cannot open config " + path);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

void report(const psgd::Error& e) {
    std::cerr << "error (" << psgd::to_string(e.kind()) << "): ";
    if (const auto* ce = dynamic_cast<const psgd::ConfigError*>(&e)) {
        std::cerr << ce->problems().size() << " problem(s)\n";
        for (const auto& p : ce->problems()) std::cerr << "  " << p << "\n";
    } else {
        std::cerr << e.what() << "\n";
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Preconditioned SGD experiment runner"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> output;
    std::optional<std::string> resume;
    unsigned jobs = 1;

    auto* run = app.add_subcommand("run", "Run one experiment and write CSV traces plus a checkpoint");
    run->add_option("config", config_path, "Config file")->required()->check(CLI::ExistingFile);
    run->add_option("--seed", seed, "Override run.seed");
    run->add_option("--output", output, "Override run.output directory");
    run->add_option("--jobs", jobs, "Parallel grid cells (fig2_grid)")->check(CLI::PositiveNumber);
    run->add_option("--resume", resume, "Continue from a checkpoint")->check(CLI::ExistingFile);

    auto* check = app.add_subcommand("validate", "Validate a config and print it with defaults filled");
    check->add_option("config", config_path, "Config file")->required()->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);

    try {
        psgd::ExperimentConfig c = psgd::validate_config(read_text(config_path));
        if (seed) c.seed = *seed;
        if (output) c.output = *output;

        if (check->parsed()) {
            std::cout << psgd::to_text(c);
            return 0;
        }

        psgd::RunOptions o;
        o.jobs = jobs;
        o.resume = resume;
        o.log = [](const std::string& m) { std::cerr << m << "\n"; };
        const auto r = psgd::run_experiment(c, o);
        for (const auto& t : r.traces) {
            std::cerr << t.name << ": " << t.rows.size() << " rows";
            if (!t.rows.empty()) std::cerr << ", last loss " << psgd::detail::csv_number(t.rows.back().loss);
            if (t.fault) std::cerr << ", fault: " << t.message;
            std::cerr << "\n";
        }
        return r.status;
    } catch (const psgd::Error& e) {
        report(e);
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
