#pragma once

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <locale>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "psgd/error.hpp"
#include "psgd/optimizer.hpp"
#include "psgd/precond.hpp"

namespace psgd {

enum class Experiment { fig2_grid, equalizer, zebra, rnn_addition, mnist_linear, mnist_mlp2, mnist_mlp3_hinge };

/// Preconditioner choice: a fitted criterion, none (plain SGD) or the closed-form ideal.
enum class Method { c1, c2, c3, none, ideal };

inline const char* to_string(Experiment e) {
    switch (e) {
        case Experiment::fig2_grid: return "fig2_grid";
        case Experiment::equalizer: return "equalizer";
        case Experiment::zebra: return "zebra";
        case Experiment::rnn_addition: return "rnn_addition";
        case Experiment::mnist_linear: return "mnist_linear";
        case Experiment::mnist_mlp2: return "mnist_mlp2";
        case Experiment::mnist_mlp3_hinge: return "mnist_mlp3_hinge";
    }
    return "?";
}

inline const char* to_string(Method m) {
    switch (m) {
        case Method::c1: return "c1";
        case Method::c2: return "c2";
        case Method::c3: return "c3";
        case Method::none: return "none";
        case Method::ideal: return "ideal";
    }
    return "?";
}

inline std::optional<Criterion> criterion_of(Method m) {
    switch (m) {
        case Method::c1: return Criterion::c1;
        case Method::c2: return Criterion::c2;
        case Method::c3: return Criterion::c3;
        default: return std::nullopt;
    }
}

/// Which axis values of the synthetic-Hessian grid to run.
enum class GridAxis { both, first, second };

struct ExperimentConfig {
    Experiment experiment = Experiment::zebra;

    // [optimizer]
    Method criterion = Method::c3;
    std::string layout = "auto";
    double step = 0.1;
    double precond_step = 0.01;
    StepNorm norm = StepNorm::max_abs;
    double perturbation_scale = 0x1.0p-52;
    std::uint64_t update_every = 1;

    // [run]
    std::uint64_t iterations = 10000;
    std::uint64_t seed = 1;
    std::uint64_t record_every = 100;
    std::uint64_t batch_size = 100;
    std::string output = ".";
    std::uint64_t checkpoint_every = 0;
    std::optional<double> stop_below;

    // [problem]
    std::uint64_t dim = 10;
    double snr_db = -20.0;
    std::vector<double> sigma_h2{1e-12, 1e12};
    GridAxis definiteness = GridAxis::both;  // first: definite, second: indefinite
    GridAxis noise = GridAxis::both;         // first: clean, second: noisy

    // [model]
    double l2 = 0.0;
    std::uint64_t sequence_length = 100;
    bool normalize_inputs = true;

    // [data]
    std::string data_dir;
    std::uint64_t train_limit = 0;  // 0: whole file
};

/// Raised with every violated field listed.
class ConfigError : public Error {
public:
    explicit ConfigError(std::vector<std::string> problems)
        : Error(ErrorKind::config, join(problems)), problems_(std::move(problems)) {}

    const std::vector<std::string>& problems() const noexcept { return problems_; }

private:
    static std::string join(const std::vector<std::string>& p) {
        std::string s = "invalid configuration:";
        for (const auto& x : p) s += "\n  " + x;
        return s;
    }
    std::vector<std::string> problems_;
};

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline std::optional<double> parse_double(const std::string& s) {
    if (s.empty()) return std::nullopt;
    std::istringstream is(s);
    is.imbue(std::locale::classic());
    double v = 0.0;
    is >> v;
    if (is.fail() || !is.eof()) {
        // hexadecimal floats such as 0x1p-52
        char* end = nullptr;
        const double h = std::strtod(s.c_str(), &end);
        if (end == s.c_str() + s.size()) return h;
        return std::nullopt;
    }
    return v;
}

inline std::optional<std::uint64_t> parse_uint(const std::string& s) {
    std::uint64_t v = 0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

inline std::optional<bool> parse_bool(const std::string& s) {
    if (s == "true" || s == "yes" || s == "1") return true;
    if (s == "false" || s == "no" || s == "0") return false;
    return std::nullopt;
}

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace detail

/// key → value pairs in file order; section headers prefix the keys.
using RawConfig = std::vector<std::pair<std::string, std::string>>;

inline RawConfig parse_config_text(const std::string& text) {
    RawConfig out;
    std::vector<std::string> problems;
    std::istringstream is(text);
    std::string line, section;
    for (int lineno = 1; std::getline(is, line); ++lineno) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string t = detail::trim(line);
        if (t.empty()) continue;
        if (t.front() == '[') {
            if (t.back() != ']' || t.size() < 3) {
                problems.push_back("line " + std::to_string(lineno) + ": malformed section header");
                continue;
            }
            section = detail::trim(std::string_view(t).substr(1, t.size() - 2));
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            problems.push_back("line " + std::to_string(lineno) + ": expected key = value");
            continue;
        }
        const std::string key = detail::trim(std::string_view(t).substr(0, eq));
        const std::string value = detail::trim(std::string_view(t).substr(eq + 1));
        if (key.empty()) {
            problems.push_back("line " + std::to_string(lineno) + ": empty key");
            continue;
        }
        out.emplace_back(section.empty() ? key : section + "." + key, value);
    }
    if (!problems.empty()) throw ConfigError(problems);
    return out;
}

/// Fills an ExperimentConfig from raw text, collecting every violation.
inline ExperimentConfig validate_config(const std::string& text) {
    const RawConfig raw = parse_config_text(text);
    ExperimentConfig c;
    std::vector<std::string> bad;
    std::map<std::string, std::string> seen;

    auto real = [&](const std::string& key, const std::string& v, double& dst) {
        if (auto x = detail::parse_double(v); x && std::isfinite(*x))
            dst = *x;
        else
            bad.push_back(key + ": expected a finite number, got '" + v + "'");
    };
    auto count = [&](const std::string& key, const std::string& v, std::uint64_t& dst) {
        if (auto x = detail::parse_uint(v))
            dst = *x;
        else
            bad.push_back(key + ": expected a non-negative integer, got '" + v + "'");
    };
    auto flag = [&](const std::string& key, const std::string& v, bool& dst) {
        if (auto x = detail::parse_bool(v))
            dst = *x;
        else
            bad.push_back(key + ": expected true or false, got '" + v + "'");
    };
    auto axis = [&](const std::string& key, const std::string& v, const char* first,
                    const char* second, GridAxis& dst) {
        if (v == "both") dst = GridAxis::both;
        else if (v == first) dst = GridAxis::first;
        else if (v == second) dst = GridAxis::second;
        else bad.push_back(key + ": expected both, " + first + " or " + second + ", got '" + v + "'");
    };

    for (const auto& [key, v] : raw) {
        if (!seen.emplace(key, v).second) {
            bad.push_back(key + ": given more than once");
            continue;
        }
        if (key == "experiment") {
            bool ok = false;
            for (auto e : {Experiment::fig2_grid, Experiment::equalizer, Experiment::zebra,
                           Experiment::rnn_addition, Experiment::mnist_linear, Experiment::mnist_mlp2,
                           Experiment::mnist_mlp3_hinge})
                if (v == to_string(e)) {
                    c.experiment = e;
                    ok = true;
                }
            if (!ok) bad.push_back("experiment: unknown experiment '" + v + "'");
        } else if (key == "optimizer.criterion") {
            bool ok = false;
            for (auto m : {Method::c1, Method::c2, Method::c3, Method::none, Method::ideal})
                if (v == to_string(m)) {
                    c.criterion = m;
                    ok = true;
                }
            if (v == "plain") {
                c.criterion = Method::none;
                ok = true;
            }
            if (!ok) bad.push_back("optimizer.criterion: expected c1, c2, c3, none or ideal, got '" + v + "'");
        } else if (key == "optimizer.layout") {
            c.layout = v;
        } else if (key == "optimizer.step") {
            real(key, v, c.step);
        } else if (key == "optimizer.precond_step") {
            real(key, v, c.precond_step);
        } else if (key == "optimizer.norm") {
            if (v == "max_abs") c.norm = StepNorm::max_abs;
            else if (v == "max_abs_diag") c.norm = StepNorm::max_abs_diag;
            else bad.push_back("optimizer.norm: expected max_abs or max_abs_diag, got '" + v + "'");
        } else if (key == "optimizer.perturbation_scale") {
            real(key, v, c.perturbation_scale);
        } else if (key == "optimizer.update_every") {
            count(key, v, c.update_every);
        } else if (key == "run.iterations") {
            count(key, v, c.iterations);
        } else if (key == "run.seed") {
            count(key, v, c.seed);
        } else if (key == "run.record_every") {
            count(key, v, c.record_every);
        } else if (key == "run.batch_size") {
            count(key, v, c.batch_size);
        } else if (key == "run.output") {
            c.output = v;
        } else if (key == "run.checkpoint_every") {
            count(key, v, c.checkpoint_every);
        } else if (key == "run.stop_below") {
            double x = 0.0;
            real(key, v, x);
            c.stop_below = x;
        } else if (key == "problem.dim") {
            count(key, v, c.dim);
        } else if (key == "problem.snr_db") {
            real(key, v, c.snr_db);
        } else if (key == "problem.sigma_h2") {
            c.sigma_h2.clear();
            std::istringstream ls(v);
            std::string item;
            while (std::getline(ls, item, ',')) {
                const auto x = detail::parse_double(detail::trim(item));
                if (x && *x > 0.0 && std::isfinite(*x))
                    c.sigma_h2.push_back(*x);
                else
                    bad.push_back("problem.sigma_h2: '" + detail::trim(item) + "' is not a positive number");
            }
        } else if (key == "problem.hessian") {
            axis(key, v, "definite", "indefinite", c.definiteness);
        } else if (key == "problem.noise") {
            axis(key, v, "clean", "noisy", c.noise);
        } else if (key == "model.l2") {
            real(key, v, c.l2);
        } else if (key == "model.sequence_length") {
            count(key, v, c.sequence_length);
        } else if (key == "model.normalize_inputs") {
            flag(key, v, c.normalize_inputs);
        } else if (key == "data.dir") {
            c.data_dir = v;
        } else if (key == "data.train_limit") {
            count(key, v, c.train_limit);
        } else {
            bad.push_back(key + ": unknown key");
        }
    }

    // Per-experiment defaults for keys the file left unset.
    auto unset = [&](const char* k) { return seen.find(k) == seen.end(); };
    if (c.experiment == Experiment::equalizer && unset("run.batch_size")) c.batch_size = 10;
    if (c.experiment == Experiment::fig2_grid && unset("run.batch_size")) c.batch_size = 1;
    if (c.experiment == Experiment::fig2_grid && unset("run.iterations")) c.iterations = 20000;
    if (c.experiment == Experiment::fig2_grid && unset("run.record_every")) c.record_every = 1;
    if (c.experiment == Experiment::equalizer && unset("run.iterations")) c.iterations = 30000;
    if (c.experiment == Experiment::zebra && unset("run.iterations")) c.iterations = 20000;
    if (c.experiment == Experiment::rnn_addition && unset("run.iterations")) c.iterations = 100000;
    if (c.experiment == Experiment::equalizer && unset("optimizer.step")) c.step = 0.002;

    if (!(c.step > 0.0 && c.step <= 1.0)) bad.push_back("optimizer.step: μθ0 out of (0,1]");
    if (!(c.precond_step > 0.0 && c.precond_step < 1.0))
        bad.push_back("optimizer.precond_step: μQ0 out of (0,1)");
    if (!(c.perturbation_scale > 0.0)) bad.push_back("optimizer.perturbation_scale: must be positive");
    if (c.update_every < 1) bad.push_back("optimizer.update_every: must be at least 1");
    if (c.record_every < 1) bad.push_back("run.record_every: must be at least 1");
    if (c.batch_size < 1) bad.push_back("run.batch_size: must be at least 1");
    if (c.dim < 1) bad.push_back("problem.dim: must be at least 1");
    if (c.sigma_h2.empty()) bad.push_back("problem.sigma_h2: at least one scale required");
    if (c.l2 < 0.0) bad.push_back("model.l2: must be non-negative");
    if (c.sequence_length < 2) bad.push_back("model.sequence_length: must be at least 2");

    const bool dense_layout = c.layout == "auto" ? (c.experiment == Experiment::fig2_grid ||
                                                    c.experiment == Experiment::equalizer ||
                                                    c.experiment == Experiment::zebra)
                                                 : c.layout == "dense";
    if ((c.criterion == Method::c1 || c.criterion == Method::c2) && !dense_layout)
        bad.push_back("optimizer.criterion: " + std::string(to_string(c.criterion)) +
                      " is only supported with a dense layout (layout = " + c.layout + ")");
    if (c.criterion == Method::ideal && c.experiment != Experiment::fig2_grid)
        bad.push_back("optimizer.criterion: ideal is only available for fig2_grid");
    if (c.experiment == Experiment::fig2_grid && c.layout != "auto" && c.layout != "dense")
        bad.push_back("optimizer.layout: fig2_grid estimates a dense preconditioner");

    if (!bad.empty()) throw ConfigError(bad);
    return c;
}

inline std::string axis_text(GridAxis a, const char* first, const char* second) {
    return a == GridAxis::both ? "both" : a == GridAxis::first ? first : second;
}

/// The fully defaulted configuration in the input syntax.
inline std::string to_text(const ExperimentConfig& c) {
    using detail::format_double;
    std::ostringstream os;
    os << "experiment = " << to_string(c.experiment) << "\n\n[optimizer]\n"
       << "criterion = " << to_string(c.criterion) << "\n"
       << "layout = " << c.layout << "\n"
       << "step = " << format_double(c.step) << "\n"
       << "precond_step = " << format_double(c.precond_step) << "\n"
       << "norm = " << to_string(c.norm) << "\n"
       << "perturbation_scale = " << format_double(c.perturbation_scale) << "\n"
       << "update_every = " << c.update_every << "\n\n[run]\n"
       << "iterations = " << c.iterations << "\n"
       << "seed = " << c.seed << "\n"
       << "record_every = " << c.record_every << "\n"
       << "batch_size = " << c.batch_size << "\n"
       << "output = " << c.output << "\n"
       << "checkpoint_every = " << c.checkpoint_every << "\n";
    if (c.stop_below) os << "stop_below = " << format_double(*c.stop_below) << "\n";
    os << "\n[problem]\n"
       << "dim = " << c.dim << "\n"
       << "snr_db = " << format_double(c.snr_db) << "\n"
       << "sigma_h2 = ";
    for (std::size_t i = 0; i < c.sigma_h2.size(); ++i)
        os << (i ? "," : "") << format_double(c.sigma_h2[i]);
    os << "\n"
       << "hessian = " << axis_text(c.definiteness, "definite", "indefinite") << "\n"
       << "noise = " << axis_text(c.noise, "clean", "noisy") << "\n\n[model]\n"
       << "l2 = " << format_double(c.l2) << "\n"
       << "sequence_length = " << c.sequence_length << "\n"
       << "normalize_inputs = " << (c.normalize_inputs ? "true" : "false") << "\n\n[data]\n"
       << "dir = " << c.data_dir << "\n"
       << "train_limit = " << c.train_limit << "\n";
    return os.str();
}

} // namespace psgd
