#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "psgd/data.hpp"
#include "psgd/models.hpp"
#include "psgd/optimizer.hpp"

namespace psgd::check {

/// Worst relative error between analytic and central-difference partials.
/// Partials smaller than `floor` in both estimates are compared absolutely against it.
inline double worst_fd_error(const std::function<Evaluation(std::span<const double>)>& f, Vector theta,
                             std::span<const std::size_t> coords, double h = 1e-6, double floor = 1e-7) {
    const Vector g = f(theta).gradient;
    double worst = 0.0;
    for (std::size_t i : coords) {
        const double keep = theta[i];
        theta[i] = keep + h;
        const double up = f(theta).loss;
        theta[i] = keep - h;
        const double down = f(theta).loss;
        theta[i] = keep;
        const double fd = (up - down) / (2.0 * h);
        const double scale = std::max({std::abs(fd), std::abs(g[i]), floor});
        worst = std::max(worst, std::abs(fd - g[i]) / scale);
    }
    return worst;
}

inline std::vector<std::size_t> random_coords(Rng& rng, std::size_t n, std::size_t k) {
    std::vector<std::size_t> c(std::min(n, k));
    for (auto& i : c) i = static_cast<std::size_t>(rng.below(n));
    return c;
}

struct GradientCase {
    std::string name;
    std::size_t dim;
    std::function<Vector(Rng&)> state;
    std::function<std::function<Evaluation(std::span<const double>)>(Rng&)> loss;
};

/// One case per model and loss combination.
inline std::vector<GradientCase> gradient_cases() {
    std::vector<GradientCase> cases;

    cases.push_back({"quadratic", 10, [](Rng& r) { return r.normal_vector(10); }, [](Rng& r) {
                         QuadraticModel m{random_hessian(10, 1.0, false, r), r.normal_vector(10), std::nullopt};
                         return [m](std::span<const double> t) { return quad_evaluate(m, t, {}); };
                     }});

    cases.push_back({"cma_equalizer", 21, [](Rng& r) { return r.normal_vector(21, 0.3); }, [](Rng& r) {
                         EqualizerStream s(r.next_u64());
                         const EqualizerBatch b = s.next_batch(10);
                         return [b](std::span<const double> t) {
                             return cma_loss_and_gradient(EqualizerModel{}, t, b);
                         };
                     }});

    auto mlp_case = [&](std::string name, MlpModel m, bool mse) {
        const std::size_t dim = m.param_count();
        cases.push_back({name, dim, [m](Rng& r) { return init_mlp(m, r); }, [m, mse](Rng& r) {
                             LabeledBatch b{Matrix(16, m.inputs()), std::vector<int>(16), Matrix()};
                             for (double& x : b.inputs.values()) x = r.uniform(-1.0, 1.0);
                             const std::size_t classes = m.outputs() == 1 ? 2 : m.outputs();
                             for (int& y : b.labels) y = static_cast<int>(r.below(classes));
                             if (mse) {
                                 b.targets = Matrix(16, m.outputs());
                                 for (double& x : b.targets.values()) x = r.normal();
                             }
                             return [m, b](std::span<const double> t) { return mlp_loss_and_gradient(m, t, b); };
                         }});
    };
    mlp_case("zebra_mlp_bernoulli", MlpModel{{2, 100, 1}, LossKind::cross_entropy, 0.0}, false);
    mlp_case("softmax_linear_l2", MlpModel{{12, 10}, LossKind::cross_entropy, 1e-4}, false);
    mlp_case("softmax_mlp2", MlpModel{{12, 30, 10}, LossKind::cross_entropy, 0.0}, false);
    mlp_case("hinge_mlp3", MlpModel{{12, 20, 15, 10}, LossKind::hinge, 0.0}, false);
    mlp_case("mse_mlp", MlpModel{{5, 8, 3}, LossKind::mse, 0.0}, true);

    const RnnModel rnn;
    cases.push_back({"rnn_addition", rnn.param_count(), [rnn](Rng& r) { return init_rnn(rnn, r); },
                     [rnn](Rng& r) {
                         const SequenceBatch b = addition_batch(r, 20, 8);
                         return [rnn, b](std::span<const double> t) { return rnn_loss_and_gradient(rnn, t, b); };
                     }});
    return cases;
}

} // namespace psgd::check
