#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "psgd/checkpoint.hpp"
#include "psgd/config.hpp"
#include "psgd/data.hpp"
#include "psgd/error.hpp"
#include "psgd/linalg.hpp"
#include "psgd/metrics.hpp"
#include "psgd/models.hpp"
#include "psgd/optimizer.hpp"
#include "psgd/oracles.hpp"
#include "psgd/precond.hpp"
#include "psgd/random.hpp"

namespace psgd {

struct TraceRow {
    std::uint64_t iter = 0;
    double loss = 0.0;
    std::optional<double> metric;
    std::optional<QualityReport> quality;
    double ms = 0.0;
};

struct Trace {
    std::string name;
    std::vector<TraceRow> rows;
    bool fault = false;
    std::string message;
};

struct RunOptions {
    bool write_files = true;
    std::optional<std::string> resume;
    unsigned jobs = 1;
    std::function<void(const std::string&)> log;
};

struct ExperimentResult {
    std::vector<Trace> traces;
    std::optional<OptimizerState> final_state;
    int status = 0;
};

inline constexpr const char* csv_header = "iter,loss,metric,spread_gain,mean_abs_eig,noise_gain,ms";

namespace detail {

inline std::string csv_number(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace detail

/// One CSV line without the trailing newline; absent fields are left empty.
inline std::string csv_row(const TraceRow& r) {
    using detail::csv_number;
    std::string s = std::to_string(r.iter) + "," + csv_number(r.loss) + ",";
    if (r.metric) s += csv_number(*r.metric);
    s += ",";
    if (r.quality)
        s += csv_number(r.quality->spread_gain) + "," + csv_number(r.quality->mean_abs_eig) + "," +
             csv_number(r.quality->noise_gain);
    else
        s += ",,";
    char ms[32];
    std::snprintf(ms, sizeof ms, ",%.3f", r.ms);
    return s + ms;
}

/// splitmix64 of (seed, stream): independent, reproducible sub-seeds.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

enum SeedStream : std::uint64_t { seed_init = 1, seed_optimizer = 2, seed_data = 3, seed_hessian = 4 };

/**
 * Builds a layout from layout text over `dim` parameters.
 *
 * Text is dense, lm(r) or a '+'-joined list of dense(n), kron(p,q), lm(n,r)
 * blocks in parameter order; `auto_layout` and `kron_layout` supply auto and kron.
 */
inline PreconditionerLayout parse_layout(const std::string& text, std::size_t dim,
                                         const std::function<PreconditionerLayout()>& auto_layout,
                                         const std::function<std::optional<PreconditionerLayout>()>& kron_layout) {
    auto fail = [&](const std::string& why) {
        throw ConfigError({"optimizer.layout: " + why + " (layout = " + text + ")"});
    };
    auto args = [&](const std::string& term, const std::string& head) {
        std::vector<std::size_t> out;
        if (term.size() < head.size() + 2 || term.back() != ')') fail("malformed term '" + term + "'");
        std::istringstream is(term.substr(head.size() + 1, term.size() - head.size() - 2));
        std::string item;
        while (std::getline(is, item, ',')) {
            const auto v = detail::parse_uint(detail::trim(item));
            if (!v) fail("bad number in '" + term + "'");
            out.push_back(*v);
        }
        return out;
    };

    PreconditionerLayout layout;
    if (text == "auto") {
        layout = auto_layout();
    } else if (text == "dense") {
        layout.add_dense(dim);
    } else if (text == "kron") {
        auto k = kron_layout();
        if (!k) fail("this experiment has no matrix-shaped parameters for a Kronecker layout");
        layout = std::move(*k);
    } else if (text.rfind("lm(", 0) == 0 && text.find('+') == std::string::npos &&
               args(text, "lm").size() == 1) {
        const auto r = args(text, "lm")[0];
        if (r > dim) fail("rank exceeds the parameter count");
        layout.add_limited_memory(dim, r);
    } else {
        std::istringstream is(text);
        std::string term;
        while (std::getline(is, term, '+')) {
            term = detail::trim(term);
            if (term.rfind("dense(", 0) == 0) {
                const auto a = args(term, "dense");
                if (a.size() != 1 || a[0] == 0) fail("dense takes one positive size");
                layout.add_dense(a[0]);
            } else if (term.rfind("kron(", 0) == 0) {
                const auto a = args(term, "kron");
                if (a.size() != 2 || a[0] == 0 || a[1] == 0) fail("kron takes two positive sizes");
                layout.add_kron(a[0], a[1]);
            } else if (term.rfind("lm(", 0) == 0) {
                const auto a = args(term, "lm");
                if (a.size() != 2 || a[0] == 0 || a[1] > a[0]) fail("lm takes (n, r) with r <= n");
                layout.add_limited_memory(a[0], a[1]);
            } else {
                fail("unknown block '" + term + "'");
            }
        }
    }
    if (layout.dim() != dim)
        fail("blocks cover " + std::to_string(layout.dim()) + " parameters but the model has " +
             std::to_string(dim));
    return layout;
}

// ---------------------------------------------------------------------------
// Problems: a batch stream, a gradient source and an optional metric
// ---------------------------------------------------------------------------

namespace detail {

inline std::string encode_rng(const Rng& r) {
    Writer w;
    w.bytes(r.state());
    return w.str();
}

struct EqualizerProblem {
    using Batch = EqualizerBatch;
    EqualizerModel model;
    EqualizerStream stream;
    std::size_t batch;

    EqualizerProblem(const ExperimentConfig& c)
        : stream(derive_seed(c.seed, seed_data), model.taps), batch(c.batch_size) {}

    std::size_t dim() const { return model.taps; }
    Vector init() const { return equalizer_initial_taps(model.taps); }
    PreconditionerLayout auto_layout() const { return PreconditionerLayout::dense(dim()); }
    std::optional<PreconditionerLayout> kron_layout() const { return std::nullopt; }
    Batch next() { return stream.next_batch(batch); }
    Evaluation operator()(std::span<const double> w, const Batch& b) const {
        return cma_loss_and_gradient(model, w, b);
    }
    std::optional<double> metric(std::span<const double> w) const { return equalizer_isi(w); }

    std::string save() const {
        Writer w;
        w.bytes(stream.rng().state());
        for (double m : stream.channel().memory()) w.f64(m);
        w.vec(stream.history());
        w.u64(stream.head());
        return w.str();
    }
    void load(const std::string& s) {
        Reader r(s);
        Rng rng;
        rng.restore(r.bytes());
        std::array<double, 4> mem{};
        for (double& m : mem) m = r.f64();
        Channel ch;
        ch.set_memory(mem);
        Vector hist = r.vec();
        const std::size_t head = r.u64();
        stream.restore(rng, ch, std::move(hist), head);
    }
};

struct ZebraProblem {
    using Batch = LabeledBatch;
    MlpModel model{{2, 100, 1}, LossKind::cross_entropy, 0.0};
    Rng rng;
    std::size_t batch;
    bool normalize;
    std::uint64_t seed;

    ZebraProblem(const ExperimentConfig& c)
        : rng(derive_seed(c.seed, seed_data)), batch(c.batch_size), normalize(c.normalize_inputs),
          seed(c.seed) {
        model.l2 = c.l2;
    }

    std::size_t dim() const { return model.param_count(); }
    Vector init() const {
        Rng r(derive_seed(seed, seed_init));
        return init_mlp(model, r);
    }
    PreconditionerLayout auto_layout() const { return PreconditionerLayout::dense(dim()); }
    std::optional<PreconditionerLayout> kron_layout() const { return mlp_kron_layout(model); }
    Batch next() { return zebra_batch(rng, batch, normalize); }
    Evaluation operator()(std::span<const double> t, const Batch& b) const {
        return mlp_loss_and_gradient(model, t, b);
    }
    std::optional<double> metric(std::span<const double>) const { return std::nullopt; }
    std::string save() const { return encode_rng(rng); }
    void load(const std::string& s) {
        Reader r(s);
        rng.restore(r.bytes());
    }
};

struct RnnProblem {
    using Batch = SequenceBatch;
    RnnModel model;
    Rng rng;
    std::size_t batch;
    std::size_t length;
    std::uint64_t seed;

    RnnProblem(const ExperimentConfig& c)
        : rng(derive_seed(c.seed, seed_data)), batch(c.batch_size), length(c.sequence_length),
          seed(c.seed) {}

    std::size_t dim() const { return model.param_count(); }
    Vector init() const {
        Rng r(derive_seed(seed, seed_init));
        return init_rnn(model, r);
    }
    PreconditionerLayout auto_layout() const { return rnn_layout(model); }
    std::optional<PreconditionerLayout> kron_layout() const { return rnn_layout(model); }
    Batch next() { return addition_batch(rng, length, batch); }
    Evaluation operator()(std::span<const double> t, const Batch& b) const {
        return rnn_loss_and_gradient(model, t, b);
    }
    std::optional<double> metric(std::span<const double>) const { return std::nullopt; }
    std::string save() const { return encode_rng(rng); }
    void load(const std::string& s) {
        Reader r(s);
        rng.restore(r.bytes());
    }
};

inline std::string mnist_file(const std::string& dir, const std::string& stem) {
    for (const std::string& name : {stem, stem + ".gz"}) {
        const auto p = std::filesystem::path(dir) / name;
        if (std::filesystem::exists(p)) return p.string();
    }
    throw Error(ErrorKind::io, "missing MNIST file " + stem + "[.gz] in '" + dir +
                                   "'; expected train-images-idx3-ubyte, train-labels-idx1-ubyte, "
                                   "t10k-images-idx3-ubyte, t10k-labels-idx1-ubyte (optionally .gz); "
                                   "set data.dir or PSGD_DATA_DIR");
}

inline std::string mnist_dir(const ExperimentConfig& c) {
    if (!c.data_dir.empty()) return c.data_dir;
    if (const char* env = std::getenv("PSGD_DATA_DIR"); env && *env) return env;
    return "data/mnist";
}

struct MnistProblem {
    using Batch = LabeledBatch;
    MlpModel model;
    IdxDataset train;
    IdxDataset test;
    std::vector<std::size_t> test_index;
    BatchSampler sampler;
    std::uint64_t seed;

    static MlpModel make_model(Experiment e, double l2) {
        switch (e) {
            case Experiment::mnist_linear: return {{784, 10}, LossKind::cross_entropy, l2};
            case Experiment::mnist_mlp2: return {{784, 300, 10}, LossKind::cross_entropy, l2};
            default: return {{784, 300, 100, 10}, LossKind::hinge, l2};
        }
    }

    static IdxDataset limited(IdxDataset d, std::size_t limit) {
        if (limit == 0 || limit >= d.count) return d;
        d.count = limit;
        d.images.resize(limit * d.features());
        d.labels.resize(limit);
        return d;
    }

    MnistProblem(const ExperimentConfig& c)
        : model(make_model(c.experiment, c.l2)),
          train(limited(load_idx(mnist_file(mnist_dir(c), "train-images-idx3-ubyte"),
                                 mnist_file(mnist_dir(c), "train-labels-idx1-ubyte")),
                        c.train_limit)),
          test(load_idx(mnist_file(mnist_dir(c), "t10k-images-idx3-ubyte"),
                        mnist_file(mnist_dir(c), "t10k-labels-idx1-ubyte"))),
          sampler(train.count, c.batch_size, derive_seed(c.seed, seed_data)),
          seed(c.seed) {
        require(train.features() == 784 && test.features() == 784, "MNIST images must be 28x28",
                ErrorKind::parse);
        test_index.resize(test.count);
        for (std::size_t i = 0; i < test.count; ++i) test_index[i] = i;
    }

    std::size_t dim() const { return model.param_count(); }
    Vector init() const {
        Rng r(derive_seed(seed, seed_init));
        return init_mlp(model, r);
    }
    PreconditionerLayout auto_layout() const { return mlp_kron_layout(model); }
    std::optional<PreconditionerLayout> kron_layout() const { return mlp_kron_layout(model); }
    Batch next() { return idx_batch(train, sampler.next()); }
    Evaluation operator()(std::span<const double> t, const Batch& b) const {
        return mlp_loss_and_gradient(model, t, b);
    }

    /// Test error rate.
    std::optional<double> metric(std::span<const double> t) const {
        std::size_t wrong = 0;
        const std::size_t chunk = 500;
        for (std::size_t s = 0; s < test.count; s += chunk) {
            std::vector<std::size_t> idx(test_index.begin() + static_cast<std::ptrdiff_t>(s),
                                         test_index.begin() +
                                             static_cast<std::ptrdiff_t>(std::min(test.count, s + chunk)));
            const auto pred = mlp_predict(model, t, test.normalized(idx));
            for (std::size_t i = 0; i < idx.size(); ++i)
                if (pred[i] != test.labels[idx[i]]) ++wrong;
        }
        return static_cast<double>(wrong) / static_cast<double>(test.count);
    }

    std::string save() const { return encode_rng(sampler.rng()); }
    void load(const std::string& s) {
        Reader r(s);
        sampler.rng().restore(r.bytes());
    }
};

class CsvSink {
public:
    CsvSink() = default;
    CsvSink(const std::string& path, bool append) {
        const bool fresh = !append || !std::filesystem::exists(path);
        file_.open(path, append ? std::ios::app : std::ios::trunc);
        if (!file_) throw Error(ErrorKind::io, "cannot write " + path);
        if (fresh) file_ << csv_header << "\n";
    }
    void write(const TraceRow& r) {
        if (file_.is_open()) file_ << csv_row(r) << "\n" << std::flush;
    }

private:
    std::ofstream file_;
};

/// Config text with the run-length knobs blanked, so a resumed run may extend or shorten itself.
inline std::string resume_key(ExperimentConfig c) {
    c.iterations = 0;
    c.stop_below.reset();
    c.checkpoint_every = 0;
    c.output.clear();
    return to_text(c);
}

/// Drops rows recorded after the checkpoint so a resumed CSV has no duplicates.
inline void truncate_csv(const std::string& path, std::uint64_t last_iter) {
    std::ifstream in(path);
    if (!in) return;
    std::string line, kept;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line.rfind("iter,", 0) != 0 && std::stoull(line.substr(0, line.find(','))) > last_iter) continue;
        kept += line + "\n";
    }
    in.close();
    std::ofstream(path, std::ios::trunc) << kept;
}

inline std::string base_name(const ExperimentConfig& c) {
    return std::string(to_string(c.experiment)) + "_" + to_string(c.criterion);
}

inline void say(const RunOptions& o, const std::string& msg) {
    if (o.log) o.log(msg);
}

template <class Problem>
ExperimentResult run_trajectory(const ExperimentConfig& c, const RunOptions& o) {
    using Clock = std::chrono::steady_clock;
    Problem p(c);
    const std::string name = base_name(c);
    const auto dir = std::filesystem::path(c.output);
    if (o.write_files) std::filesystem::create_directories(dir);
    const std::string ckpt_path = (dir / (name + ".ckpt")).string();

    OptimizerOptions opts;
    opts.step = c.step;
    opts.precond_step = c.precond_step;
    opts.perturbation_scale = c.perturbation_scale;
    opts.update_every = c.update_every;
    opts.criterion = criterion_of(c.criterion);
    opts.norm = c.norm;

    const auto dim = p.dim();
    PreconditionerLayout layout =
        opts.criterion ? parse_layout(
                             c.layout, dim, [&] { return p.auto_layout(); },
                             [&] { return p.kron_layout(); })
                       : PreconditionerLayout();
    OptimizerState st = make_state(p.init(), std::move(layout), opts, derive_seed(c.seed, seed_optimizer));

    double window_sum = 0.0;
    std::uint64_t window_count = 0;
    double ms_offset = 0.0;
    if (o.resume) {
        Checkpoint ck = checkpoint_load(*o.resume);
        if (ck.extras["experiment"] != resume_key(c))
            throw Error(ErrorKind::checkpoint, "checkpoint was written by a different configuration");
        if (ck.state.theta.size() != dim)
            throw Error(ErrorKind::checkpoint, "checkpoint parameter count does not match the model");
        st = std::move(ck.state);
        p.load(ck.extras["stream"]);
        Reader w(ck.extras["window"]);
        window_sum = w.f64();
        window_count = w.u64();
        ms_offset = w.f64();
        say(o, "resumed " + name + " at iteration " + std::to_string(st.iteration));
    }

    CsvSink csv;
    if (o.write_files) {
        const std::string csv_path = (dir / (name + ".csv")).string();
        if (o.resume) truncate_csv(csv_path, st.iteration);
        csv = CsvSink(csv_path, o.resume.has_value());
    }

    ExperimentResult result;
    Trace trace{name, {}, false, {}};
    const auto t0 = Clock::now();
    auto elapsed = [&] {
        return ms_offset + std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    };
    auto save = [&] {
        if (!o.write_files) return;
        Checkpoint ck{st, {}};
        ck.extras["experiment"] = resume_key(c);
        ck.extras["stream"] = p.save();
        Writer w;
        w.f64(window_sum);
        w.u64(window_count);
        w.f64(elapsed());
        ck.extras["window"] = w.str();
        checkpoint_save(ckpt_path, ck);
    };

    while (st.iteration < c.iterations) {
        const auto batch = p.next();
        StepReport r;
        try {
            r = step_in_place(st, p, batch);
        } catch (const NumericFault& f) {
            TraceRow row{f.iteration(), std::numeric_limits<double>::quiet_NaN(), std::nullopt,
                         std::nullopt, elapsed()};
            csv.write(row);
            trace.rows.push_back(row);
            trace.fault = true;
            trace.message = f.what();
            result.status = 2;
            say(o, name + ": " + f.what());
            break;
        }
        window_sum += r.loss;
        ++window_count;
        if (st.iteration % c.record_every == 0) {
            TraceRow row{st.iteration, window_sum / static_cast<double>(window_count),
                         p.metric(st.theta), std::nullopt, elapsed()};
            window_sum = 0.0;
            window_count = 0;
            csv.write(row);
            trace.rows.push_back(row);
            if (c.stop_below && row.loss < *c.stop_below) {
                say(o, name + ": loss " + detail::csv_number(row.loss) + " below stop threshold at iteration " +
                           std::to_string(st.iteration));
                break;
            }
        }
        if (c.checkpoint_every && st.iteration % c.checkpoint_every == 0) save();
    }
    save();
    result.traces.push_back(std::move(trace));
    result.final_state = std::move(st);
    return result;
}

// ---------------------------------------------------------------------------
// Synthetic-Hessian grid
// ---------------------------------------------------------------------------

struct Scenario {
    bool definite;
    bool noisy;
    double sigma_h2;
    std::uint64_t family;  // shared by all scales of one (definite, noisy) pair
};

inline std::string scenario_name(const Scenario& s, Method m) {
    char scale[32];
    std::snprintf(scale, sizeof scale, "%g", s.sigma_h2);
    return std::string("fig2_") + (s.definite ? "definite" : "indefinite") + "_" +
           (s.noisy ? "noisy" : "clean") + "_" + scale + "_" + to_string(m);
}

inline std::vector<Scenario> grid_scenarios(const ExperimentConfig& c) {
    std::vector<Scenario> out;
    for (int d = 0; d < 2; ++d) {
        if (c.definiteness == GridAxis::first && d == 1) continue;
        if (c.definiteness == GridAxis::second && d == 0) continue;
        for (int n = 0; n < 2; ++n) {
            if (c.noise == GridAxis::first && n == 1) continue;
            if (c.noise == GridAxis::second && n == 0) continue;
            for (double s : c.sigma_h2)
                out.push_back({d == 0, n == 1, s, static_cast<std::uint64_t>(2 * d + n)});
        }
    }
    return out;
}

/// Hessian of a grid scenario; every scale of a family reuses the same draws.
inline Matrix scenario_hessian(const ExperimentConfig& c, const Scenario& s) {
    Rng rng(derive_seed(c.seed, 16 * s.family + seed_hessian));
    return random_hessian(c.dim, s.sigma_h2, s.definite, rng);
}

/// Preconditioner estimation from δĝ = Hδθ + ε with a fixed H.
inline Trace run_scenario(const ExperimentConfig& c, const Scenario& s, const RunOptions& o) {
    using Clock = std::chrono::steady_clock;
    const std::size_t n = c.dim;
    const Matrix h = scenario_hessian(c, s);
    Rng rng(derive_seed(c.seed, 16 * s.family + seed_data));
    const double sigma_theta2 = c.perturbation_scale;
    const double sigma_eps2 =
        s.noisy ? std::pow(10.0, -c.snr_db / 10.0) * sigma_theta2 * trace(h * h) / static_cast<double>(n)
                : 0.0;
    const double sd_theta = std::sqrt(sigma_theta2);
    const double sd_eps = std::sqrt(sigma_eps2);

    TriFactor q = TriFactor::identity(n);
    if (c.criterion == Method::ideal) q = TriFactor(cholesky_upper(ideal_precond(h)));
    const auto crit = criterion_of(c.criterion);

    Trace trace{scenario_name(s, c.criterion), {}, false, {}};
    CsvSink csv;
    if (o.write_files) csv = CsvSink((std::filesystem::path(c.output) / (trace.name + ".csv")).string(), false);
    const auto t0 = Clock::now();
    double window = 0.0;
    std::uint64_t count = 0;
    for (std::uint64_t it = 1; it <= c.iterations; ++it) {
        const Vector dtheta = rng.normal_vector(n, sd_theta);
        Vector dg = h * dtheta;
        if (s.noisy)
            for (double& x : dg) x += sd_eps * rng.normal();
        if (crit) {
            auto g = relative_gradient_terms(*crit, q, dtheta, dg);
            q.update(g, c.precond_step, c.norm);
        }
        window += criterion3_cost(q, dtheta, dg);
        ++count;
        const auto& qm = q.matrix();
        for (std::size_t i = 0; i < n; ++i)
            if (!std::isfinite(qm(i, i)) || !(qm(i, i) > 0.0)) {
                trace.fault = true;
                trace.message = "factor left the group at iteration " + std::to_string(it);
            }
        if (trace.fault) break;
        if (it % c.record_every == 0 || it == c.iterations) {
            TraceRow row{it, window / static_cast<double>(count), std::nullopt,
                         quality(h, q.preconditioner()),
                         std::chrono::duration<double, std::milli>(Clock::now() - t0).count()};
            window = 0.0;
            count = 0;
            csv.write(row);
            trace.rows.push_back(row);
        }
    }
    return trace;
}

inline ExperimentResult run_grid(const ExperimentConfig& c, const RunOptions& o) {
    if (o.resume) throw Error(ErrorKind::config, "fig2_grid runs are short and cannot be resumed");
    if (o.write_files) std::filesystem::create_directories(c.output);
    const auto scenarios = grid_scenarios(c);
    std::vector<Trace> traces(scenarios.size());
    std::mutex mu;
    std::size_t next = 0;
    std::exception_ptr err;
    auto worker = [&] {
        for (;;) {
            std::size_t k = 0;
            {
                std::lock_guard<std::mutex> lock(mu);
                if (next >= scenarios.size() || err) return;
                k = next++;
            }
            try {
                traces[k] = run_scenario(c, scenarios[k], o);
                std::lock_guard<std::mutex> lock(mu);
                say(o, traces[k].name + " done");
            } catch (...) {
                std::lock_guard<std::mutex> lock(mu);
                if (!err) err = std::current_exception();
            }
        }
    };
    const unsigned jobs = std::max(1u, std::min<unsigned>(o.jobs, static_cast<unsigned>(scenarios.size())));
    std::vector<std::thread> pool;
    for (unsigned j = 1; j < jobs; ++j) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);

    ExperimentResult r;
    for (auto& t : traces) {
        if (t.fault) r.status = 2;
        r.traces.push_back(std::move(t));
    }
    return r;
}

} // namespace detail

/// Runs one configured experiment, writing <output>/<name>.csv (and .ckpt) per trace.
inline ExperimentResult run_experiment(const ExperimentConfig& c, const RunOptions& o = {}) {
    switch (c.experiment) {
        case Experiment::fig2_grid: return detail::run_grid(c, o);
        case Experiment::equalizer: return detail::run_trajectory<detail::EqualizerProblem>(c, o);
        case Experiment::zebra: return detail::run_trajectory<detail::ZebraProblem>(c, o);
        case Experiment::rnn_addition: return detail::run_trajectory<detail::RnnProblem>(c, o);
        case Experiment::mnist_linear:
        case Experiment::mnist_mlp2:
        case Experiment::mnist_mlp3_hinge: return detail::run_trajectory<detail::MnistProblem>(c, o);
    }
    throw Error(ErrorKind::config, "unknown experiment");
}

} // namespace psgd
