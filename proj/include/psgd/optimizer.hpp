#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>

#include "psgd/error.hpp"
#include "psgd/linalg.hpp"
#include "psgd/precond.hpp"
#include "psgd/random.hpp"

namespace psgd {

/// Loss and gradient of a model on one mini-batch.
struct Evaluation {
    double loss = 0.0;
    Vector gradient;
};

/// Callable mapping (θ, batch) to an Evaluation, deterministic for fixed arguments.
template <class S, class Batch>
concept GradientSource = requires(const S& s, std::span<const double> theta, const Batch& b) {
    { s(theta, b) } -> std::convertible_to<Evaluation>;
};

struct OptimizerOptions {
    double step = 0.1;                       // μθ0
    double precond_step = 0.01;              // μQ0
    double perturbation_scale = 0x1.0p-52;   // variance of each δθ component
    std::uint64_t update_every = 1;
    std::optional<Criterion> criterion = Criterion::c3;  // nullopt: plain SGD
    StepNorm norm = StepNorm::max_abs;

    void validate() const {
        require(step > 0.0 && step <= 1.0, "step must lie in (0, 1]");
        require(precond_step > 0.0 && precond_step < 1.0, "precond_step must lie in (0, 1)");
        require(perturbation_scale > 0.0 && std::isfinite(perturbation_scale),
                "perturbation_scale must be positive");
        require(update_every >= 1, "update_every must be at least 1");
    }

    friend bool operator==(const OptimizerOptions&, const OptimizerOptions&) = default;
};

struct OptimizerState {
    Vector theta;
    PreconditionerLayout layout;
    OptimizerOptions options;
    std::uint64_t iteration = 0;
    std::uint64_t gradient_evaluations = 0;
    std::uint64_t preconditioner_updates = 0;
    Rng rng;

    friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

inline void validate(const OptimizerState& s) {
    s.options.validate();
    if (s.options.criterion) {
        if (s.layout.dim() != s.theta.size())
            throw Error(ErrorKind::config,
                        "layout covers " + std::to_string(s.layout.dim()) + " parameters, theta has " +
                            std::to_string(s.theta.size()));
        if (!s.layout.supports(*s.options.criterion))
            throw Error(ErrorKind::config, std::string("criterion ") +
                                               to_string(*s.options.criterion) +
                                               " requires a dense layout");
    }
}

inline OptimizerState make_state(Vector theta, PreconditionerLayout layout, OptimizerOptions options,
                                 std::uint64_t seed) {
    OptimizerState s{std::move(theta), std::move(layout), options, 0, 0, 0, Rng(seed)};
    validate(s);
    return s;
}

/// Draws δθ ~ N(0, perturbation_scale·I) from the state's stream.
inline Vector sample_perturbation(OptimizerState& s) {
    return s.rng.normal_vector(s.theta.size(), std::sqrt(s.options.perturbation_scale));
}

struct StepReport {
    double loss = 0.0;
    bool preconditioner_updated = false;
};

namespace detail {

inline void require_finite(const Evaluation& e, std::uint64_t iteration, std::size_t dim) {
    if (e.gradient.size() != dim)
        throw Error(ErrorKind::precondition, "gradient source returned " +
                                                 std::to_string(e.gradient.size()) +
                                                 " components, expected " + std::to_string(dim));
    for (std::size_t i = 0; i < e.gradient.size(); ++i)
        if (!std::isfinite(e.gradient[i]))
            throw NumericFault(iteration, "non-finite gradient component " + std::to_string(i));
}

} // namespace detail

/**
 * One iteration: gradient at θ, optional preconditioner update from a
 * same-batch perturbation pair, then θ ← θ − μθ0·P·g with the updated P.
 */
template <class Batch, GradientSource<Batch> S>
StepReport step_in_place(OptimizerState& s, const S& source, const Batch& batch) {
    const std::size_t n = s.theta.size();
    const Evaluation e = source(std::span<const double>(s.theta), batch);
    ++s.gradient_evaluations;
    detail::require_finite(e, s.iteration, n);

    StepReport report{e.loss, false};
    if (!s.options.criterion) {
        for (std::size_t i = 0; i < n; ++i) s.theta[i] -= s.options.step * e.gradient[i];
        ++s.iteration;
        return report;
    }

    if (s.iteration % s.options.update_every == 0) {
        const Vector dtheta = sample_perturbation(s);
        Vector shifted = s.theta;
        for (std::size_t i = 0; i < n; ++i) shifted[i] += dtheta[i];
        const Evaluation e2 = source(std::span<const double>(shifted), batch);
        ++s.gradient_evaluations;
        detail::require_finite(e2, s.iteration, n);
        const Vector dg = subtract(e2.gradient, e.gradient);
        s.layout.update(*s.options.criterion, dtheta, dg, s.options.precond_step, s.options.norm);
        ++s.preconditioner_updates;
        report.preconditioner_updated = true;
    }

    const Vector pg = s.layout.apply(e.gradient);
    for (std::size_t i = 0; i < n; ++i) s.theta[i] -= s.options.step * pg[i];
    for (double t : s.theta)
        if (!std::isfinite(t)) throw NumericFault(s.iteration, "parameters became non-finite");
    ++s.iteration;
    return report;
}

template <class Batch, GradientSource<Batch> S>
OptimizerState step(OptimizerState s, const S& source, const Batch& batch) {
    step_in_place(s, source, batch);
    return s;
}

/**
 * Applies T steps, pulling one batch per step from next_batch() and handing
 * every (state, report) pair to the recorder.
 */
template <class NextBatch, class S, class Recorder>
void run(OptimizerState& s, const S& source, NextBatch&& next_batch, std::uint64_t iterations,
         Recorder&& recorder) {
    for (std::uint64_t t = 0; t < iterations; ++t) {
        const auto batch = next_batch();
        const StepReport r = step_in_place(s, source, batch);
        recorder(static_cast<const OptimizerState&>(s), r);
    }
}

/// Averages losses over windows of `every` iterations and emits one point per window.
template <class Sink>
class WindowRecorder {
public:
    WindowRecorder(std::uint64_t every, Sink sink) : every_(every), sink_(std::move(sink)) {
        require(every_ >= 1, "record cadence must be at least 1");
    }

    void operator()(const OptimizerState& s, const StepReport& r) {
        sum_ += r.loss;
        ++count_;
        if (count_ == every_) {
            sink_(s, sum_ / static_cast<double>(count_));
            sum_ = 0.0;
            count_ = 0;
        }
    }

private:
    std::uint64_t every_;
    Sink sink_;
    double sum_ = 0.0;
    std::uint64_t count_ = 0;
};

} // namespace psgd
