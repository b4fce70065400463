#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "psgd/error.hpp"
#include "psgd/linalg.hpp"
#include "psgd/optimizer.hpp"
#include "psgd/random.hpp"

namespace psgd {

// ---------------------------------------------------------------------------
// Quadratic model
// ---------------------------------------------------------------------------

/// f(θ) = ½θᵀHθ + g0ᵀθ with optional additive gradient noise at a fixed SNR.
struct QuadraticModel {
    Matrix h;
    Vector g0;
    std::optional<double> noise_snr_db;
};

/// Standard normal draws shared by both evaluations of a perturbation pair.
struct QuadraticBatch {
    Vector noise;
};

/// Random 10×10-style Hessian with N(0, σ_h²) entries.
///  definite: AᵀA + 1e-3·σ_h²·I; otherwise the symmetric matrix of the draws.
inline Matrix random_hessian(std::size_t n, double sigma_h2, bool definite, Rng& rng) {
    require(n >= 1 && sigma_h2 > 0.0, "random_hessian: need n >= 1 and sigma_h^2 > 0");
    const double sd = std::sqrt(sigma_h2);
    Matrix a(n, n);
    if (definite) {
        for (double& x : a.values()) x = rng.normal(0.0, sd);
        Matrix h = transpose(a) * a;
        for (std::size_t i = 0; i < n; ++i) h(i, i) += 1e-3 * sigma_h2;
        return h;
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) {
            a(i, j) = rng.normal(0.0, sd);
            a(j, i) = a(i, j);
        }
    return a;
}

inline QuadraticBatch quad_batch(const QuadraticModel& m, Rng& rng) {
    return {m.noise_snr_db ? rng.normal_vector(m.h.rows()) : Vector{}};
}

/// Hθ + g0, plus σ·z with σ² = ‖Hθ + g0‖²·10^(−SNR/10)/n when noise is enabled.
inline Vector quad_gradient(const QuadraticModel& m, std::span<const double> theta,
                            const QuadraticBatch& batch) {
    const std::size_t n = m.h.rows();
    require(theta.size() == n, "quad_gradient: dimension mismatch");
    Vector g = m.h * theta;
    if (!m.g0.empty()) {
        require(m.g0.size() == n, "quad_gradient: g0 dimension mismatch");
        for (std::size_t i = 0; i < n; ++i) g[i] += m.g0[i];
    }
    if (m.noise_snr_db) {
        require(batch.noise.size() == n, "quad_gradient: noise draw missing");
        const double var = dot(g, g) * std::pow(10.0, -*m.noise_snr_db / 10.0) / static_cast<double>(n);
        const double sd = std::sqrt(var);
        for (std::size_t i = 0; i < n; ++i) g[i] += sd * batch.noise[i];
    }
    return g;
}

inline Vector quad_gradient(const QuadraticModel& m, std::span<const double> theta, Rng& rng) {
    return quad_gradient(m, theta, quad_batch(m, rng));
}

inline double quad_loss(const QuadraticModel& m, std::span<const double> theta) {
    const Vector ht = m.h * theta;
    double f = 0.5 * dot(theta, ht);
    if (!m.g0.empty()) f += dot(m.g0, theta);
    return f;
}

inline Evaluation quad_evaluate(const QuadraticModel& m, std::span<const double> theta,
                                const QuadraticBatch& batch) {
    return {quad_loss(m, theta), quad_gradient(m, theta, batch)};
}

// ---------------------------------------------------------------------------
// Constant-modulus equalizer
// ---------------------------------------------------------------------------

/// Channel h(z⁻¹) = (−0.8 + z⁻²)/(1 + 0.8z⁻²), run as a direct recursion.
class Channel {
public:
    double push(double s) {
        const double v = -0.8 * s + s2_ - 0.8 * v2_;
        s2_ = s1_;
        s1_ = s;
        v2_ = v1_;
        v1_ = v;
        return v;
    }

    /// Delay-line contents (s[k−1], s[k−2], v[k−1], v[k−2]).
    std::array<double, 4> memory() const { return {s1_, s2_, v1_, v2_}; }
    void set_memory(const std::array<double, 4>& m) {
        s1_ = m[0];
        s2_ = m[1];
        v1_ = m[2];
        v2_ = m[3];
    }

private:
    double s1_ = 0.0, s2_ = 0.0, v1_ = 0.0, v2_ = 0.0;
};

/// Channel impulse response, cut after the last tap with |h[k]| ≥ threshold.
inline Vector channel_impulse_response(double threshold = 1e-12) {
    Channel c;
    Vector h;
    h.push_back(c.push(1.0));
    std::size_t last = 0;
    for (std::size_t k = 1; k < 4096; ++k) {
        const double v = c.push(0.0);
        h.push_back(v);
        if (std::abs(v) >= threshold) last = k;
        if (k > last + 2) break;
    }
    h.resize(last + 1);
    return h;
}

struct EqualizerModel {
    std::size_t taps = 21;
    double dispersion = 0.6;  // E[s⁴]/E[s²] for s ~ U[−1, 1]
};

/// Each row is one window (x[t], x[t−1], …, x[t−taps+1]) of channel output.
struct EqualizerBatch {
    Matrix windows;
};

inline Vector equalizer_initial_taps(std::size_t taps = 21) {
    require(taps >= 1, "equalizer needs at least one tap");
    Vector w(taps, 0.0);
    w[taps / 2] = 1.0;
    return w;
}

/// loss = mean (y² − R)², gradient = mean 4(y² − R)y·x with y = wᵀx.
inline Evaluation cma_loss_and_gradient(const EqualizerModel& m, std::span<const double> w,
                                        const EqualizerBatch& batch) {
    const Matrix& x = batch.windows;
    require(w.size() == x.cols() && x.rows() >= 1, "cma: window length must equal the tap count");
    Evaluation e{0.0, Vector(w.size(), 0.0)};
    for (std::size_t b = 0; b < x.rows(); ++b) {
        const auto xb = x.row(b);
        const double y = dot(w, xb);
        const double r = y * y - m.dispersion;
        e.loss += r * r;
        const double f = 4.0 * r * y;
        for (std::size_t i = 0; i < w.size(); ++i) e.gradient[i] += f * xb[i];
    }
    const double inv = 1.0 / static_cast<double>(x.rows());
    e.loss *= inv;
    for (double& g : e.gradient) g *= inv;
    return e;
}

inline Vector convolve(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) return {};
    Vector c(a.size() + b.size() - 1, 0.0);
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j) c[i + j] += a[i] * b[j];
    return c;
}

/// Σc²/max c² − 1 of a combined response.
inline double isi(std::span<const double> c) {
    double sum = 0.0, peak = 0.0;
    for (double x : c) {
        sum += x * x;
        peak = std::max(peak, x * x);
    }
    if (!(peak > 0.0)) throw Error(ErrorKind::precondition, "isi: combined response is all zero");
    return sum / peak - 1.0;
}

/// ISI of equalizer taps w behind the channel.
inline double equalizer_isi(std::span<const double> w) {
    static const Vector h = channel_impulse_response();
    return isi(convolve(h, w));
}

// ---------------------------------------------------------------------------
// Feedforward tanh networks
// ---------------------------------------------------------------------------

enum class LossKind { cross_entropy, hinge, mse };

inline const char* to_string(LossKind k) {
    switch (k) {
        case LossKind::cross_entropy: return "cross_entropy";
        case LossKind::hinge: return "hinge";
        case LossKind::mse: return "mse";
    }
    return "?";
}

/**
 * Fully connected network with tanh hidden layers and a linear output layer.
 *
 * Layer l holds an out×(in+1) row-major matrix with the bias in the last
 * column; layers are stored back to back in θ.
 */
struct MlpModel {
    std::vector<std::size_t> widths;  // input, hidden..., output
    LossKind loss = LossKind::cross_entropy;
    double l2 = 0.0;                  // adds l2·θᵀθ

    std::size_t layers() const { return widths.size() - 1; }
    std::size_t inputs() const { return widths.front(); }
    std::size_t outputs() const { return widths.back(); }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (std::size_t l = 0; l + 1 < widths.size(); ++l) n += widths[l + 1] * (widths[l] + 1);
        return n;
    }

    void validate() const {
        require(widths.size() >= 2, "mlp: need at least input and output widths");
        for (auto w : widths) require(w >= 1, "mlp: layer widths must be positive");
        require(loss != LossKind::hinge || outputs() >= 2, "mlp: hinge loss needs >= 2 outputs");
        require(l2 >= 0.0, "mlp: l2 must be non-negative");
    }
};

/// Inputs are batch × features; labels index classes (or {0,1} for one output).
struct LabeledBatch {
    Matrix inputs;
    std::vector<int> labels;
    Matrix targets;  // batch × outputs, used by mse only
};

namespace detail {

/// Z = A Wᵀ + b for W out×(in+1) with bias column.
inline Matrix affine(const Matrix& a, std::span<const double> w, std::size_t out) {
    const std::size_t in = a.cols();
    Matrix z(a.rows(), out);
    for (std::size_t b = 0; b < a.rows(); ++b) {
        const double* ab = a.row(b).data();
        double* zb = z.row(b).data();
        for (std::size_t o = 0; o < out; ++o) {
            const double* wo = w.data() + o * (in + 1);
            double s = wo[in];
            for (std::size_t i = 0; i < in; ++i) s += wo[i] * ab[i];
            zb[o] = s;
        }
    }
    return z;
}

/// Loss of one output row and its derivative with respect to the outputs.
inline double output_loss(LossKind kind, std::span<const double> o, int label,
                          std::span<const double> target, std::span<double> d) {
    const std::size_t k = o.size();
    switch (kind) {
        case LossKind::cross_entropy: {
            if (k == 1) {
                // Bernoulli with p = σ(o): loss = softplus(o) − y·o
                const double z = o[0];
                const double y = label != 0 ? 1.0 : 0.0;
                const double softplus = z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
                const double p = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
                d[0] = p - y;
                return softplus - y * z;
            }
            require(label >= 0 && static_cast<std::size_t>(label) < k, "label out of range");
            const double mx = *std::max_element(o.begin(), o.end());
            double sum = 0.0;
            for (std::size_t j = 0; j < k; ++j) sum += std::exp(o[j] - mx);
            const double lse = mx + std::log(sum);
            for (std::size_t j = 0; j < k; ++j) d[j] = std::exp(o[j] - lse);
            d[static_cast<std::size_t>(label)] -= 1.0;
            return lse - o[static_cast<std::size_t>(label)];
        }
        case LossKind::hinge: {
            require(label >= 0 && static_cast<std::size_t>(label) < k, "label out of range");
            const auto i = static_cast<std::size_t>(label);
            std::size_t jmax = k;
            for (std::size_t j = 0; j < k; ++j)
                if (j != i && (jmax == k || o[j] > o[jmax])) jmax = j;
            std::fill(d.begin(), d.end(), 0.0);
            const double u = std::max(o[jmax] + 1.0 - o[i], 0.0);
            const double root = std::sqrt(u * u + 0.01);
            if (u > 0.0) {
                const double s = u / root;
                d[jmax] = s;
                d[i] = -s;
            }
            return root - 0.1;
        }
        case LossKind::mse: {
            require(target.size() == k, "mse: target width mismatch");
            double l = 0.0;
            for (std::size_t j = 0; j < k; ++j) {
                const double r = o[j] - target[j];
                l += r * r;
                d[j] = 2.0 * r;
            }
            return l;
        }
    }
    return 0.0;
}

} // namespace detail

/// Network outputs (batch × outputs) before the loss.
inline Matrix mlp_forward(const MlpModel& m, std::span<const double> theta, const Matrix& inputs) {
    require(theta.size() == m.param_count(), "mlp: parameter count mismatch");
    require(inputs.cols() == m.inputs(), "mlp: input width mismatch");
    Matrix a = inputs;
    std::size_t off = 0;
    for (std::size_t l = 0; l < m.layers(); ++l) {
        const std::size_t in = m.widths[l], out = m.widths[l + 1];
        a = detail::affine(a, theta.subspan(off, out * (in + 1)), out);
        off += out * (in + 1);
        if (l + 1 < m.layers())
            for (double& x : a.values()) x = std::tanh(x);
    }
    return a;
}

/// Predicted class per row: argmax, or the sign of a single output.
inline std::vector<int> mlp_predict(const MlpModel& m, std::span<const double> theta,
                                    const Matrix& inputs) {
    const Matrix o = mlp_forward(m, theta, inputs);
    std::vector<int> out(o.rows());
    for (std::size_t b = 0; b < o.rows(); ++b) {
        const auto r = o.row(b);
        if (r.size() == 1)
            out[b] = r[0] > 0.0 ? 1 : 0;
        else
            out[b] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
    }
    return out;
}

inline Evaluation mlp_loss_and_gradient(const MlpModel& m, std::span<const double> theta,
                                        const LabeledBatch& batch) {
    require(theta.size() == m.param_count(), "mlp: parameter count mismatch");
    const std::size_t nb = batch.inputs.rows();
    require(nb >= 1 && batch.inputs.cols() == m.inputs(), "mlp: batch shape mismatch");
    if (m.loss == LossKind::mse)
        require(batch.targets.rows() == nb, "mlp: mse needs one target row per sample");
    else
        require(batch.labels.size() == nb, "mlp: one label per sample required");

    // Forward, keeping every layer's activation.
    std::vector<Matrix> acts{batch.inputs};
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (std::size_t l = 0; l < m.layers(); ++l) {
        const std::size_t in = m.widths[l], out = m.widths[l + 1];
        offsets.push_back(off);
        Matrix z = detail::affine(acts.back(), theta.subspan(off, out * (in + 1)), out);
        off += out * (in + 1);
        if (l + 1 < m.layers())
            for (double& x : z.values()) x = std::tanh(x);
        acts.push_back(std::move(z));
    }

    Evaluation e{0.0, Vector(theta.size(), 0.0)};
    const double inv = 1.0 / static_cast<double>(nb);
    Matrix delta(nb, m.outputs());
    for (std::size_t b = 0; b < nb; ++b) {
        const int label = m.loss == LossKind::mse ? 0 : batch.labels[b];
        const std::span<const double> target =
            m.loss == LossKind::mse ? batch.targets.row(b) : std::span<const double>{};
        e.loss += detail::output_loss(m.loss, acts.back().row(b), label, target, delta.row(b));
    }
    e.loss *= inv;
    for (double& x : delta.values()) x *= inv;

    for (std::size_t l = m.layers(); l-- > 0;) {
        const std::size_t in = m.widths[l], out = m.widths[l + 1];
        const Matrix& a = acts[l];
        double* g = e.gradient.data() + offsets[l];
        const double* w = theta.data() + offsets[l];
        for (std::size_t b = 0; b < nb; ++b) {
            const double* ab = a.row(b).data();
            const double* db = delta.row(b).data();
            for (std::size_t o = 0; o < out; ++o) {
                const double d = db[o];
                if (d == 0.0) continue;
                double* go = g + o * (in + 1);
                for (std::size_t i = 0; i < in; ++i) go[i] += d * ab[i];
                go[in] += d;
            }
        }
        if (l == 0) break;
        Matrix prev(nb, in);
        for (std::size_t b = 0; b < nb; ++b) {
            const double* db = delta.row(b).data();
            double* pb = prev.row(b).data();
            for (std::size_t o = 0; o < out; ++o) {
                const double d = db[o];
                if (d == 0.0) continue;
                const double* wo = w + o * (in + 1);
                for (std::size_t i = 0; i < in; ++i) pb[i] += d * wo[i];
            }
            const double* ab = a.row(b).data();
            for (std::size_t i = 0; i < in; ++i) pb[i] *= 1.0 - ab[i] * ab[i];
        }
        delta = std::move(prev);
    }

    if (m.l2 > 0.0) {
        e.loss += m.l2 * dot(theta, theta);
        for (std::size_t i = 0; i < theta.size(); ++i) e.gradient[i] += 2.0 * m.l2 * theta[i];
    }
    return e;
}

/// N(0, 1/fan_in) weights with fan_in = in + 1 (the bias counts as an input).
inline Vector init_mlp(const MlpModel& m, Rng& rng) {
    m.validate();
    Vector theta;
    theta.reserve(m.param_count());
    for (std::size_t l = 0; l < m.layers(); ++l) {
        const std::size_t in = m.widths[l], out = m.widths[l + 1];
        const double sd = 1.0 / std::sqrt(static_cast<double>(in + 1));
        for (std::size_t k = 0; k < out * (in + 1); ++k) theta.push_back(rng.normal(0.0, sd));
    }
    return theta;
}

// ---------------------------------------------------------------------------
// Vanilla RNN
// ---------------------------------------------------------------------------

/**
 * h_t = tanh(W_rec h_{t−1} + W_in x_t + b), y = w_out·h_T + b_out.
 *
 * θ = [W₁ (hidden × (hidden+inputs+1), rows [W_rec | W_in | b]) ; w₂ (1 × (hidden+1))].
 */
struct RnnModel {
    std::size_t hidden = 50;
    std::size_t inputs = 2;

    std::size_t first_cols() const { return hidden + inputs + 1; }
    std::size_t first_size() const { return hidden * first_cols(); }
    std::size_t param_count() const { return first_size() + hidden + 1; }
};

/// Sequences stored time-major as x[(t·inputs + k)·batch + b].
struct SequenceBatch {
    std::size_t length = 0;
    std::size_t batch = 0;
    std::size_t inputs = 2;
    Vector x;
    Vector targets;

    double at(std::size_t t, std::size_t k, std::size_t b) const {
        return x[(t * inputs + k) * batch + b];
    }
};

/// Predictions y for every sequence of the batch.
inline Vector rnn_forward(const RnnModel& m, std::span<const double> theta, const SequenceBatch& s) {
    require(theta.size() == m.param_count(), "rnn: parameter count mismatch");
    require(s.inputs == m.inputs && s.x.size() == s.length * s.inputs * s.batch,
            "rnn: sequence batch shape mismatch");
    const std::size_t H = m.hidden, B = s.batch, C = m.first_cols();
    Vector h(H * B, 0.0), pre(H * B);
    for (std::size_t t = 0; t < s.length; ++t) {
        for (std::size_t i = 0; i < H; ++i) {
            const double* wi = theta.data() + i * C;
            double* pi = pre.data() + i * B;
            std::fill(pi, pi + B, wi[H + m.inputs]);
            for (std::size_t j = 0; j < H; ++j) {
                const double w = wi[j];
                const double* hj = h.data() + j * B;
                for (std::size_t b = 0; b < B; ++b) pi[b] += w * hj[b];
            }
            for (std::size_t k = 0; k < m.inputs; ++k) {
                const double w = wi[H + k];
                const double* xk = s.x.data() + (t * m.inputs + k) * B;
                for (std::size_t b = 0; b < B; ++b) pi[b] += w * xk[b];
            }
        }
        for (std::size_t q = 0; q < H * B; ++q) h[q] = std::tanh(pre[q]);
    }
    const double* w2 = theta.data() + m.first_size();
    Vector y(B, w2[H]);
    for (std::size_t j = 0; j < H; ++j)
        for (std::size_t b = 0; b < B; ++b) y[b] += w2[j] * h[j * B + b];
    return y;
}

/// Mean squared error over the batch with the full backpropagation-through-time gradient.
inline Evaluation rnn_loss_and_gradient(const RnnModel& m, std::span<const double> theta,
                                        const SequenceBatch& s) {
    require(theta.size() == m.param_count(), "rnn: parameter count mismatch");
    require(s.inputs == m.inputs && s.x.size() == s.length * s.inputs * s.batch &&
                s.targets.size() == s.batch && s.batch >= 1 && s.length >= 1,
            "rnn: sequence batch shape mismatch");
    const std::size_t H = m.hidden, B = s.batch, C = m.first_cols(), T = s.length, I = m.inputs;

    // hs[t] holds h_t (H × B); hs[0] is the zero initial state.
    std::vector<Vector> hs(T + 1, Vector(H * B, 0.0));
    for (std::size_t t = 0; t < T; ++t) {
        const Vector& hp = hs[t];
        Vector& hn = hs[t + 1];
        for (std::size_t i = 0; i < H; ++i) {
            const double* wi = theta.data() + i * C;
            double* pi = hn.data() + i * B;
            std::fill(pi, pi + B, wi[H + I]);
            for (std::size_t j = 0; j < H; ++j) {
                const double w = wi[j];
                const double* hj = hp.data() + j * B;
                for (std::size_t b = 0; b < B; ++b) pi[b] += w * hj[b];
            }
            for (std::size_t k = 0; k < I; ++k) {
                const double w = wi[H + k];
                const double* xk = s.x.data() + (t * I + k) * B;
                for (std::size_t b = 0; b < B; ++b) pi[b] += w * xk[b];
            }
        }
        for (double& v : hn) v = std::tanh(v);
    }

    const double* w2 = theta.data() + m.first_size();
    const Vector& hT = hs[T];
    Evaluation e{0.0, Vector(theta.size(), 0.0)};
    double* g1 = e.gradient.data();
    double* g2 = e.gradient.data() + m.first_size();
    const double inv = 1.0 / static_cast<double>(B);

    Vector dy(B);
    for (std::size_t b = 0; b < B; ++b) {
        double y = w2[H];
        for (std::size_t j = 0; j < H; ++j) y += w2[j] * hT[j * B + b];
        const double r = y - s.targets[b];
        e.loss += r * r;
        dy[b] = 2.0 * r * inv;
    }
    e.loss *= inv;

    // Output layer and the gradient flowing into h_T.
    Vector dh(H * B);
    for (std::size_t j = 0; j < H; ++j) {
        double acc = 0.0;
        for (std::size_t b = 0; b < B; ++b) {
            acc += dy[b] * hT[j * B + b];
            dh[j * B + b] = dy[b] * w2[j];
        }
        g2[j] = acc;
    }
    for (std::size_t b = 0; b < B; ++b) g2[H] += dy[b];

    Vector da(H * B), dprev(H * B);
    for (std::size_t t = T; t-- > 0;) {
        const Vector& hn = hs[t + 1];
        const Vector& hp = hs[t];
        for (std::size_t q = 0; q < H * B; ++q) da[q] = dh[q] * (1.0 - hn[q] * hn[q]);
        std::fill(dprev.begin(), dprev.end(), 0.0);
        for (std::size_t i = 0; i < H; ++i) {
            const double* dai = da.data() + i * B;
            double* gi = g1 + i * C;
            const double* wi = theta.data() + i * C;
            for (std::size_t j = 0; j < H; ++j) {
                const double* hj = hp.data() + j * B;
                double acc = 0.0;
                for (std::size_t b = 0; b < B; ++b) acc += dai[b] * hj[b];
                gi[j] += acc;
                const double w = wi[j];
                double* dpj = dprev.data() + j * B;
                for (std::size_t b = 0; b < B; ++b) dpj[b] += w * dai[b];
            }
            for (std::size_t k = 0; k < I; ++k) {
                const double* xk = s.x.data() + (t * I + k) * B;
                double acc = 0.0;
                for (std::size_t b = 0; b < B; ++b) acc += dai[b] * xk[b];
                gi[H + k] += acc;
            }
            double acc = 0.0;
            for (std::size_t b = 0; b < B; ++b) acc += dai[b];
            gi[H + I] += acc;
        }
        std::swap(dh, dprev);
    }
    return e;
}

/// N(0, 0.01) everywhere except an orthogonal recurrent block.
inline Vector init_rnn(const RnnModel& m, Rng& rng) {
    const std::size_t H = m.hidden, C = m.first_cols();
    Vector theta = rng.normal_vector(m.param_count(), 0.1);

    // Gram-Schmidt on a Gaussian matrix, columns normalized to positive R diagonal.
    Matrix a(H, H);
    for (double& x : a.values()) x = rng.normal();
    for (std::size_t j = 0; j < H; ++j) {
        for (int pass = 0; pass < 2; ++pass)
            for (std::size_t k = 0; k < j; ++k) {
                double p = 0.0;
                for (std::size_t i = 0; i < H; ++i) p += a(i, k) * a(i, j);
                for (std::size_t i = 0; i < H; ++i) a(i, j) -= p * a(i, k);
            }
        double nrm = 0.0;
        for (std::size_t i = 0; i < H; ++i) nrm += a(i, j) * a(i, j);
        nrm = std::sqrt(nrm);
        require(nrm > 0.0, "init_rnn: degenerate Gaussian draw", ErrorKind::numeric_fault);
        for (std::size_t i = 0; i < H; ++i) a(i, j) /= nrm;
    }
    for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < H; ++j) theta[i * C + j] = a(i, j);
    return theta;
}

/// Recurrent block of θ as an H×H matrix.
inline Matrix rnn_recurrent_block(const RnnModel& m, std::span<const double> theta) {
    Matrix w(m.hidden, m.hidden);
    for (std::size_t i = 0; i < m.hidden; ++i)
        for (std::size_t j = 0; j < m.hidden; ++j) w(i, j) = theta[i * m.first_cols() + j];
    return w;
}

/// Kron(W₁) ⊕ dense(w₂) layout for the RNN parameter vector.
inline PreconditionerLayout rnn_layout(const RnnModel& m) {
    return PreconditionerLayout().add_kron(m.hidden, m.first_cols()).add_dense(m.hidden + 1);
}

/// One Kronecker block per layer of an MLP.
inline PreconditionerLayout mlp_kron_layout(const MlpModel& m) {
    PreconditionerLayout layout;
    for (std::size_t l = 0; l < m.layers(); ++l) layout.add_kron(m.widths[l + 1], m.widths[l] + 1);
    return layout;
}

} // namespace psgd
