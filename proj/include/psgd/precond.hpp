#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <limits>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "psgd/error.hpp"
#include "psgd/linalg.hpp"

namespace psgd {

/// Preconditioner fitting criterion.
///  c1: E‖δg − P⁻¹δθ‖², c2: E‖Pδg − δθ‖², c3: E[δgᵀPδg + δθᵀP⁻¹δθ].
enum class Criterion { c1, c2, c3 };

/// Denominator used to normalize the factor step: max |∇| or max |diag ∇|.
enum class StepNorm { max_abs, max_abs_diag };

inline const char* to_string(Criterion c) {
    switch (c) {
        case Criterion::c1: return "c1";
        case Criterion::c2: return "c2";
        case Criterion::c3: return "c3";
    }
    return "?";
}

inline const char* to_string(StepNorm n) {
    return n == StepNorm::max_abs ? "max_abs" : "max_abs_diag";
}

namespace detail {

/// Largest number of step halvings tried before an update is skipped.
inline constexpr int max_step_halvings = 10;

/**
 * Resolves the actual factor step from the normalized step0.
 *
 * The new diagonal is q_ii (1 − μ g_ii), so μ is halved while μ·max g_ii ≥ 1.
 * Returns 0 when the update must be skipped.
 */
inline double resolve_step(double step0, double max_all, double max_diag, double max_signed_diag,
                           StepNorm norm) {
    require(step0 > 0.0 && step0 < 1.0, "factor step0 must lie in (0, 1)");
    const double denom = norm == StepNorm::max_abs ? max_all : max_diag;
    if (!(denom > 0.0)) return 0.0;
    double mu = step0 / denom;
    for (int t = 0; mu * max_signed_diag >= 1.0; ++t) {
        if (t == max_step_halvings) return 0.0;
        mu *= 0.5;
    }
    return mu;
}

/// In place q ← q − μ·g·q for upper-triangular g and q.
inline void tri_product_update(Matrix& q, const Matrix& g, double mu) {
    const std::size_t n = q.rows();
    Vector tmp(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::fill(tmp.begin() + static_cast<std::ptrdiff_t>(i), tmp.end(), 0.0);
        const double* gi = g.row(i).data();
        for (std::size_t k = i; k < n; ++k) {
            const double gik = gi[k];
            if (gik == 0.0) continue;
            const double* qk = q.row(k).data();
            for (std::size_t j = k; j < n; ++j) tmp[j] += gik * qk[j];
        }
        double* qi = q.row(i).data();
        for (std::size_t j = i; j < n; ++j) qi[j] -= mu * tmp[j];
    }
}

/// Solves Qᵀ X = M for upper-triangular Q, one right-hand side per column of M.
inline Matrix left_solve_transposed(const Matrix& q, Matrix m) {
    require(q.rows() == m.rows(), "triangular solve: dimension mismatch");
    const std::size_t n = q.rows();
    for (std::size_t i = 0; i < n; ++i) {
        const double* qi = q.row(i).data();
        require(qi[i] != 0.0, "triangular solve: zero diagonal", ErrorKind::singular);
        double* xi = m.row(i).data();
        const double inv = 1.0 / qi[i];
        for (std::size_t c = 0; c < m.cols(); ++c) xi[c] *= inv;
        for (std::size_t j = i + 1; j < n; ++j) {
            const double qij = qi[j];
            if (qij == 0.0) continue;
            double* xj = m.row(j).data();
            for (std::size_t c = 0; c < m.cols(); ++c) xj[c] -= qij * xi[c];
        }
    }
    return m;
}

/// Solves X Q = M for upper-triangular Q (each row of X is an independent solve).
inline Matrix right_solve(const Matrix& q, Matrix m) {
    require(q.rows() == m.cols(), "triangular solve: dimension mismatch");
    for (std::size_t r = 0; r < m.rows(); ++r) {
        Vector x = tri_solve(q, m.row(r), TriSolve::transposed);
        std::copy(x.begin(), x.end(), m.row(r).begin());
    }
    return m;
}

/// Q·M for upper-triangular Q.
inline Matrix upper_times(const Matrix& q, const Matrix& m) {
    require(q.cols() == m.rows(), "triangular product: dimension mismatch");
    Matrix out(q.rows(), m.cols());
    for (std::size_t i = 0; i < q.rows(); ++i) {
        double* oi = out.row(i).data();
        const double* qi = q.row(i).data();
        for (std::size_t k = i; k < q.cols(); ++k) {
            const double qik = qi[k];
            if (qik == 0.0) continue;
            const double* mk = m.row(k).data();
            for (std::size_t c = 0; c < m.cols(); ++c) oi[c] += qik * mk[c];
        }
    }
    return out;
}

/// M·Qᵀ for upper-triangular Q.
inline Matrix times_upper_transposed(const Matrix& m, const Matrix& q) {
    require(m.cols() == q.cols(), "triangular product: dimension mismatch");
    Matrix out(m.rows(), q.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const double* mr = m.row(r).data();
        for (std::size_t j = 0; j < q.rows(); ++j) {
            const double* qj = q.row(j).data();
            double s = 0.0;
            for (std::size_t k = j; k < q.cols(); ++k) s += mr[k] * qj[k];
            out(r, j) = s;
        }
    }
    return out;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Low-rank triangular gradients
// ---------------------------------------------------------------------------

/// One term coeff·triu(u vᵀ) of a relative gradient.
struct RankOneTerm {
    double coeff;
    Vector u;
    Vector v;
};

/**
 * Relative gradient held as a sum of triangular rank-one terms.
 *
 * Every dense-criterion gradient has this shape (rank two), which lets the
 * factor update run in O(n²) instead of a full triangular product.
 */
class TriuLowRank {
public:
    TriuLowRank(std::size_t dim, std::vector<RankOneTerm> terms)
        : dim_(dim), terms_(std::move(terms)) {
        for (const auto& t : terms_)
            require(t.u.size() == dim_ && t.v.size() == dim_, "TriuLowRank: term size mismatch");
    }

    std::size_t dim() const noexcept { return dim_; }
    const std::vector<RankOneTerm>& terms() const noexcept { return terms_; }

    double entry(std::size_t i, std::size_t j) const {
        if (j < i) return 0.0;
        double s = 0.0;
        for (const auto& t : terms_) s += t.coeff * t.u[i] * t.v[j];
        return s;
    }

    Matrix materialize() const {
        Matrix g(dim_, dim_);
        for (const auto& t : terms_)
            for (std::size_t i = 0; i < dim_; ++i) {
                const double f = t.coeff * t.u[i];
                if (f == 0.0) continue;
                double* gi = g.row(i).data();
                for (std::size_t j = i; j < dim_; ++j) gi[j] += f * t.v[j];
            }
        return g;
    }

    /// Max |entry| over the triangle, max |diagonal| and max signed diagonal.
    struct Extents {
        double all = 0.0;
        double diag = 0.0;
        double signed_diag = -std::numeric_limits<double>::infinity();
    };

    Extents extents() const {
        Extents e;
        Vector row(dim_);
        for (std::size_t i = 0; i < dim_; ++i) {
            std::fill(row.begin() + static_cast<std::ptrdiff_t>(i), row.end(), 0.0);
            for (const auto& t : terms_) {
                const double f = t.coeff * t.u[i];
                if (f == 0.0) continue;
                for (std::size_t j = i; j < dim_; ++j) row[j] += f * t.v[j];
            }
            for (std::size_t j = i; j < dim_; ++j) e.all = std::max(e.all, std::abs(row[j]));
            e.diag = std::max(e.diag, std::abs(row[i]));
            e.signed_diag = std::max(e.signed_diag, row[i]);
        }
        return e;
    }

    /// In place q ← q − μ·triu(Σ terms)·q.
    void apply_update(Matrix& q, double mu) const {
        require(q.rows() == dim_ && q.cols() == dim_, "TriuLowRank: factor dimension mismatch");
        std::vector<Vector> acc(terms_.size(), Vector(dim_, 0.0));
        for (std::size_t i = dim_; i-- > 0;) {
            double* qi = q.row(i).data();
            // Diagonal summed as in extents() and applied as one factor, so cancellation
            // between large terms cannot flip its sign.
            const double qii = qi[i];
            double d = 0.0;
            for (const auto& t : terms_) {
                const double f = t.coeff * t.u[i];
                if (f != 0.0) d += f * t.v[i];
            }
            for (std::size_t r = 0; r < terms_.size(); ++r) {
                const double vi = terms_[r].v[i];
                if (vi == 0.0) continue;
                double* a = acc[r].data();
                for (std::size_t j = i; j < dim_; ++j) a[j] += vi * qi[j];
            }
            for (std::size_t r = 0; r < terms_.size(); ++r) {
                const double f = mu * terms_[r].coeff * terms_[r].u[i];
                if (f == 0.0) continue;
                const double* a = acc[r].data();
                for (std::size_t j = i; j < dim_; ++j) qi[j] -= f * a[j];
            }
            qi[i] = qii * (1.0 - mu * d);
        }
    }

private:
    std::size_t dim_;
    std::vector<RankOneTerm> terms_;
};

// ---------------------------------------------------------------------------
// Dense triangular factor
// ---------------------------------------------------------------------------

/// Upper-triangular Q with positive diagonal; the preconditioner is P = QᵀQ.
class TriFactor {
public:
    TriFactor() = default;

    explicit TriFactor(Matrix q) : q_(std::move(q)) {
        require(q_.square() && q_.rows() >= 1, "TriFactor: factor must be square and non-empty");
        require(is_upper_triangular(q_), "TriFactor: factor must be upper triangular");
        for (std::size_t i = 0; i < q_.rows(); ++i)
            require(q_(i, i) > 0.0, "TriFactor: diagonal entries must be positive");
    }

    static TriFactor identity(std::size_t n) {
        require(n >= 1, "identity_factor: dimension must be at least 1");
        return TriFactor(Matrix::identity(n));
    }

    std::size_t dim() const noexcept { return q_.rows(); }
    const Matrix& matrix() const noexcept { return q_; }

    Matrix preconditioner() const { return transpose(q_) * q_; }

    /// Q x.
    Vector times(std::span<const double> x) const {
        require(x.size() == dim(), "TriFactor: dimension mismatch");
        const std::size_t n = dim();
        Vector y(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double* qi = q_.row(i).data();
            double s = 0.0;
            for (std::size_t j = i; j < n; ++j) s += qi[j] * x[j];
            y[i] = s;
        }
        return y;
    }

    /// Qᵀ x.
    Vector transposed_times(std::span<const double> x) const {
        require(x.size() == dim(), "TriFactor: dimension mismatch");
        const std::size_t n = dim();
        Vector y(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const double xi = x[i];
            if (xi == 0.0) continue;
            const double* qi = q_.row(i).data();
            for (std::size_t j = i; j < n; ++j) y[j] += qi[j] * xi;
        }
        return y;
    }

    /// Q⁻ᵀ x by forward substitution.
    Vector inv_transposed_times(std::span<const double> x) const {
        return tri_solve(q_, x, TriSolve::transposed);
    }

    /// Q⁻¹ x by back substitution.
    Vector inv_times(std::span<const double> x) const { return tri_solve(q_, x, TriSolve::normal); }

    /// P g = Qᵀ(Q g).
    Vector apply(std::span<const double> g) const { return transposed_times(times(g)); }

    /// Applies q ← q − μ g q with the normalized step; returns false if skipped.
    bool update(const Matrix& grad, double step0, StepNorm norm) {
        require(grad.rows() == dim() && grad.cols() == dim(), "update_factor: gradient shape");
        require(is_upper_triangular(grad), "update_factor: gradient must be upper triangular");
        double signed_diag = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < dim(); ++i) signed_diag = std::max(signed_diag, grad(i, i));
        const double mu =
            detail::resolve_step(step0, max_abs(grad), max_abs_diag(grad), signed_diag, norm);
        if (mu == 0.0) return false;
        detail::tri_product_update(q_, grad, mu);
        return true;
    }

    bool update(const TriuLowRank& grad, double step0, StepNorm norm) {
        require(grad.dim() == dim(), "update_factor: gradient dimension");
        const auto e = grad.extents();
        const double mu = detail::resolve_step(step0, e.all, e.diag, e.signed_diag, norm);
        if (mu == 0.0) return false;
        grad.apply_update(q_, mu);
        return true;
    }

    friend bool operator==(const TriFactor&, const TriFactor&) = default;

private:
    Matrix q_;
};

inline TriFactor identity_factor(std::size_t n) { return TriFactor::identity(n); }

/// Rank-two form of the dense relative gradient for the given criterion.
inline TriuLowRank relative_gradient_terms(Criterion criterion, const TriFactor& q,
                                           std::span<const double> dtheta,
                                           std::span<const double> dg) {
    const std::size_t n = q.dim();
    require(dtheta.size() == n && dg.size() == n,
            "relative_gradient: perturbation dimension mismatch");
    switch (criterion) {
        case Criterion::c3: {
            Vector a = q.times(dg);
            Vector b = q.inv_transposed_times(dtheta);
            Vector a2 = a;
            Vector b2 = b;
            return TriuLowRank(n, {{2.0, std::move(a), std::move(a2)},
                                   {-2.0, std::move(b), std::move(b2)}});
        }
        case Criterion::c1: {
            // e1 = dg − P⁻¹dθ with P⁻¹dθ = Q⁻¹Q⁻ᵀdθ
            Vector x = q.inv_transposed_times(dtheta);
            const Vector pinv_dtheta = q.inv_times(x);
            const Vector e1 = subtract(dg, pinv_dtheta);
            Vector y = q.inv_transposed_times(e1);
            Vector x2 = x;
            Vector y2 = y;
            return TriuLowRank(n, {{2.0, std::move(x), std::move(y)},
                                   {2.0, std::move(y2), std::move(x2)}});
        }
        case Criterion::c2: {
            // e2 = P dg − dθ
            Vector a = q.times(dg);
            const Vector e2 = subtract(q.transposed_times(a), dtheta);
            Vector c = q.times(e2);
            Vector a2 = a;
            Vector c2 = c;
            return TriuLowRank(n, {{2.0, std::move(a), std::move(c)},
                                   {2.0, std::move(c2), std::move(a2)}});
        }
    }
    throw Error(ErrorKind::precondition, "unknown criterion");
}

/// Upper-triangular relative gradient ∇ℰ of the instantaneous criterion cost.
inline Matrix relative_gradient_dense(Criterion criterion, const TriFactor& q,
                                      std::span<const double> dtheta, std::span<const double> dg) {
    return relative_gradient_terms(criterion, q, dtheta, dg).materialize();
}

/// Returns Q − (step0/denominator)·grad·Q; Q unchanged when the denominator is zero.
inline TriFactor update_factor(TriFactor q, const Matrix& grad, double step0, StepNorm norm) {
    q.update(grad, step0, norm);
    return q;
}

inline Vector apply_dense(const TriFactor& q, std::span<const double> g) { return q.apply(g); }

/// Instantaneous criterion-3 cost dgᵀP dg + dθᵀP⁻¹dθ.
inline double criterion3_cost(const TriFactor& q, std::span<const double> dtheta,
                              std::span<const double> dg) {
    const Vector a = q.times(dg);
    const Vector b = q.inv_transposed_times(dtheta);
    return dot(a, a) + dot(b, b);
}

// ---------------------------------------------------------------------------
// Kronecker-factored factor
// ---------------------------------------------------------------------------

/// P = P₂ ⊗ P₁ acting on a p×q parameter matrix Θ as P₁ G P₂.
struct KronFactor {
    TriFactor left;   // Q₁, p×p
    TriFactor right;  // Q₂, q×q

    static KronFactor identity(std::size_t p, std::size_t q) {
        return {TriFactor::identity(p), TriFactor::identity(q)};
    }

    std::size_t rows() const noexcept { return left.dim(); }
    std::size_t cols() const noexcept { return right.dim(); }

    /// P₁ G P₂.
    Matrix apply(const Matrix& g) const {
        require(g.rows() == rows() && g.cols() == cols(), "KronFactor: gradient shape mismatch");
        const Matrix& q1 = left.matrix();
        const Matrix& q2 = right.matrix();
        // Q₁ᵀ Q₁ G Q₂ᵀ Q₂
        Matrix t = detail::upper_times(q1, g);
        t = transpose(q1) * t;
        t = detail::times_upper_transposed(t, q2);
        return t * q2;
    }

    friend bool operator==(const KronFactor&, const KronFactor&) = default;
};

struct KronGradient {
    Matrix left;   // ∇ℰ₁, p×p
    Matrix right;  // ∇ℰ₂, q×q
};

namespace detail {

struct KronWork {
    Matrix a;  // Q₁ δG Q₂ᵀ
    Matrix c;  // Q₁⁻ᵀ δΘ Q₂⁻¹ (= Bᵀ)
};

inline KronWork kron_work(const KronFactor& k, const Matrix& dtheta, const Matrix& dg) {
    require(dtheta.rows() == k.rows() && dtheta.cols() == k.cols() && dg.rows() == k.rows() &&
                dg.cols() == k.cols(),
            "relative_gradient_kron: perturbation shape mismatch");
    KronWork w;
    w.a = times_upper_transposed(upper_times(k.left.matrix(), dg), k.right.matrix());
    // B solves Q₂ᵀ B Q₁ = δΘᵀ; its transpose is Q₁⁻ᵀ (δΘ Q₂⁻¹).
    w.c = left_solve_transposed(k.left.matrix(), right_solve(k.right.matrix(), dtheta));
    return w;
}

/// 2·triu(XXᵀ − YYᵀ) for same-shaped X, Y.
inline Matrix gram_difference(const Matrix& x, const Matrix& y) {
    const std::size_t n = x.rows();
    Matrix g(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j)
            g(i, j) = 2.0 * (dot(x.row(i), x.row(j)) - dot(y.row(i), y.row(j)));
    return g;
}

inline bool update_with_rows(TriFactor& f, const Matrix& grad, const Matrix& x, const Matrix& y,
                             double step0, StepNorm norm);

} // namespace detail

/// Criterion-3 relative gradients of the two Kronecker factors.
inline KronGradient relative_gradient_kron(const KronFactor& k, const Matrix& dtheta,
                                           const Matrix& dg) {
    const auto w = detail::kron_work(k, dtheta, dg);
    const Matrix at = transpose(w.a);
    const Matrix ct = transpose(w.c);
    return {detail::gram_difference(w.a, w.c), detail::gram_difference(at, ct)};
}

// ---------------------------------------------------------------------------
// Limited-memory triangular factor
// ---------------------------------------------------------------------------

class LimitedMemoryTriFactor;
struct LimitedMemoryGradient;
inline bool update_limited_memory(LimitedMemoryTriFactor&, const LimitedMemoryGradient&, double, StepNorm);

/// Q = [[Q₁₁, Q₁₂], [0, diag(q₂₂)]] with Q₁₁ r×r upper triangular.
class LimitedMemoryTriFactor {
public:
    LimitedMemoryTriFactor() = default;

    LimitedMemoryTriFactor(Matrix q11, Matrix q12, Vector q22)
        : q11_(std::move(q11)), q12_(std::move(q12)), q22_(std::move(q22)) {
        const std::size_t r = q11_.rows();
        require(q11_.cols() == r, "LimitedMemoryTriFactor: Q11 must be square");
        require(q12_.rows() == r && q12_.cols() == q22_.size(),
                "LimitedMemoryTriFactor: Q12 shape mismatch");
        require(r + q22_.size() >= 1, "LimitedMemoryTriFactor: empty factor");
        require(r == 0 || is_upper_triangular(q11_), "LimitedMemoryTriFactor: Q11 not triangular");
        for (std::size_t i = 0; i < r; ++i)
            require(q11_(i, i) > 0.0, "LimitedMemoryTriFactor: diagonal must be positive");
        for (double d : q22_) require(d > 0.0, "LimitedMemoryTriFactor: diagonal must be positive");
    }

    static LimitedMemoryTriFactor identity(std::size_t n, std::size_t r) {
        require(n >= 1 && r <= n, "LimitedMemoryTriFactor: need 0 <= r <= n, n >= 1");
        return {Matrix::identity(r), Matrix(r, n - r), Vector(n - r, 1.0)};
    }

    std::size_t dim() const noexcept { return q11_.rows() + q22_.size(); }
    std::size_t rank() const noexcept { return q11_.rows(); }
    const Matrix& q11() const noexcept { return q11_; }
    const Matrix& q12() const noexcept { return q12_; }
    const Vector& q22() const noexcept { return q22_; }

    Matrix assemble() const {
        const std::size_t r = rank();
        const std::size_t n = dim();
        Matrix q(n, n);
        for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = i; j < r; ++j) q(i, j) = q11_(i, j);
            for (std::size_t j = r; j < n; ++j) q(i, j) = q12_(i, j - r);
        }
        for (std::size_t i = r; i < n; ++i) q(i, i) = q22_[i - r];
        return q;
    }

    Vector times(std::span<const double> x) const {
        require(x.size() == dim(), "LimitedMemoryTriFactor: dimension mismatch");
        const std::size_t r = rank();
        Vector y(dim());
        for (std::size_t i = 0; i < r; ++i) {
            double s = 0.0;
            for (std::size_t j = i; j < r; ++j) s += q11_(i, j) * x[j];
            for (std::size_t j = r; j < dim(); ++j) s += q12_(i, j - r) * x[j];
            y[i] = s;
        }
        for (std::size_t i = r; i < dim(); ++i) y[i] = q22_[i - r] * x[i];
        return y;
    }

    Vector transposed_times(std::span<const double> x) const {
        require(x.size() == dim(), "LimitedMemoryTriFactor: dimension mismatch");
        const std::size_t r = rank();
        Vector y(dim(), 0.0);
        for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = i; j < r; ++j) y[j] += q11_(i, j) * x[i];
            for (std::size_t j = r; j < dim(); ++j) y[j] += q12_(i, j - r) * x[i];
        }
        for (std::size_t i = r; i < dim(); ++i) y[i] += q22_[i - r] * x[i];
        return y;
    }

    /// Q⁻ᵀ x.
    Vector inv_transposed_times(std::span<const double> x) const {
        require(x.size() == dim(), "LimitedMemoryTriFactor: dimension mismatch");
        const std::size_t r = rank();
        Vector b(dim());
        if (r > 0) {
            const Vector b1 = tri_solve(q11_, x.subspan(0, r), TriSolve::transposed);
            std::copy(b1.begin(), b1.end(), b.begin());
        }
        for (std::size_t j = r; j < dim(); ++j) {
            double s = x[j];
            for (std::size_t i = 0; i < r; ++i) s -= q12_(i, j - r) * b[i];
            b[j] = s / q22_[j - r];
        }
        return b;
    }

    Vector apply(std::span<const double> g) const { return transposed_times(times(g)); }

    friend bool operator==(const LimitedMemoryTriFactor&, const LimitedMemoryTriFactor&) = default;

private:
    friend bool update_limited_memory(LimitedMemoryTriFactor&, const LimitedMemoryGradient&,
                                      double, StepNorm);
    Matrix q11_;
    Matrix q12_;
    Vector q22_;
};

/// Relative gradient restricted to the free entries of a limited-memory factor.
struct LimitedMemoryGradient {
    Matrix g11;  // r×r upper triangular
    Matrix g12;  // r×(n−r)
    Vector g22;  // n−r

    Matrix assemble() const {
        const std::size_t r = g11.rows();
        const std::size_t n = r + g22.size();
        Matrix g(n, n);
        for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = i; j < r; ++j) g(i, j) = g11(i, j);
            for (std::size_t j = r; j < n; ++j) g(i, j) = g12(i, j - r);
        }
        for (std::size_t i = r; i < n; ++i) g(i, i) = g22[i - r];
        return g;
    }
};

/// Criterion-3 gradient of the assembled factor projected onto the structure mask.
inline LimitedMemoryGradient relative_gradient_lm(const LimitedMemoryTriFactor& l,
                                                  std::span<const double> dtheta,
                                                  std::span<const double> dg) {
    require(dtheta.size() == l.dim() && dg.size() == l.dim(),
            "relative_gradient_lm: perturbation dimension mismatch");
    const Vector a = l.times(dg);
    const Vector b = l.inv_transposed_times(dtheta);
    const std::size_t r = l.rank();
    const std::size_t m = l.dim() - r;
    LimitedMemoryGradient g{Matrix(r, r), Matrix(r, m), Vector(m)};
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = i; j < r; ++j) g.g11(i, j) = 2.0 * (a[i] * a[j] - b[i] * b[j]);
        for (std::size_t j = 0; j < m; ++j)
            g.g12(i, j) = 2.0 * (a[i] * a[r + j] - b[i] * b[r + j]);
    }
    for (std::size_t j = 0; j < m; ++j) g.g22[j] = 2.0 * (a[r + j] * a[r + j] - b[r + j] * b[r + j]);
    return g;
}

/// In place Q ← Q − μ G Q within the limited-memory group; false if skipped.
inline bool update_limited_memory(LimitedMemoryTriFactor& l, const LimitedMemoryGradient& g,
                                  double step0, StepNorm norm) {
    const std::size_t r = l.rank();
    const std::size_t m = l.dim() - r;
    require(g.g11.rows() == r && g.g12.cols() == m && g.g22.size() == m,
            "update_limited_memory: gradient shape mismatch");
    double all = std::max(r ? max_abs(g.g11) : 0.0, g.g12.empty() ? 0.0 : max_abs(g.g12));
    double diag = r ? max_abs_diag(g.g11) : 0.0;
    double signed_diag = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < r; ++i) signed_diag = std::max(signed_diag, g.g11(i, i));
    for (double d : g.g22) {
        all = std::max(all, std::abs(d));
        diag = std::max(diag, std::abs(d));
        signed_diag = std::max(signed_diag, d);
    }
    const double mu = detail::resolve_step(step0, all, diag, signed_diag, norm);
    if (mu == 0.0) return false;

    // G Q = [[G11 Q11, G11 Q12 + G12 diag(q22)], [0, diag(g22 q22)]]
    if (r > 0) {
        Matrix g11q12 = detail::upper_times(g.g11, l.q12_);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < m; ++j)
                l.q12_(i, j) -= mu * (g11q12(i, j) + g.g12(i, j) * l.q22_[j]);
        detail::tri_product_update(l.q11_, g.g11, mu);
    }
    for (std::size_t j = 0; j < m; ++j) l.q22_[j] -= mu * g.g22[j] * l.q22_[j];
    return true;
}

// ---------------------------------------------------------------------------
// Kronecker factor update
// ---------------------------------------------------------------------------

namespace detail {

/// Updates f with grad = 2·triu(XᵀX − YᵀY) style gradients given by their row
/// factors (rows of x, y are the rank-one vectors); picks the cheaper product.
inline bool update_with_rows(TriFactor& f, const Matrix& grad, const Matrix& x, const Matrix& y,
                             double step0, StepNorm norm) {
    const std::size_t n = f.dim();
    const std::size_t terms = x.rows() + y.rows();
    if (6 * terms >= n) return f.update(grad, step0, norm);
    std::vector<RankOneTerm> t;
    t.reserve(terms);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        Vector u(x.row(i).begin(), x.row(i).end());
        t.push_back({2.0, u, u});
    }
    for (std::size_t i = 0; i < y.rows(); ++i) {
        Vector u(y.row(i).begin(), y.row(i).end());
        t.push_back({-2.0, u, u});
    }
    double signed_diag = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) signed_diag = std::max(signed_diag, grad(i, i));
    const double mu =
        resolve_step(step0, max_abs(grad), max_abs_diag(grad), signed_diag, norm);
    if (mu == 0.0) return false;
    Matrix q = f.matrix();
    TriuLowRank(n, std::move(t)).apply_update(q, mu);
    f = TriFactor(std::move(q));
    return true;
}

} // namespace detail

/// Criterion-3 update of both Kronecker factors, each with its own normalization.
inline void update_kron(KronFactor& k, const Matrix& dtheta, const Matrix& dg, double step0,
                        StepNorm norm) {
    const auto w = detail::kron_work(k, dtheta, dg);
    const Matrix at = transpose(w.a);
    const Matrix ct = transpose(w.c);
    const Matrix g1 = detail::gram_difference(w.a, w.c);
    const Matrix g2 = detail::gram_difference(at, ct);
    // ∇ℰ₁ = 2 triu(Σ_j a_j a_jᵀ − c_j c_jᵀ) over columns j, i.e. rows of Aᵀ, Cᵀ.
    detail::update_with_rows(k.left, g1, at, ct, step0, norm);
    detail::update_with_rows(k.right, g2, w.a, w.c, step0, norm);
}

// ---------------------------------------------------------------------------
// Direct-sum layout
// ---------------------------------------------------------------------------

/// Kronecker block over a row-major rows×cols view of its parameter slice.
struct KronBlock {
    KronFactor factor;

    friend bool operator==(const KronBlock&, const KronBlock&) = default;
};

using BlockFactor = std::variant<TriFactor, KronBlock, LimitedMemoryTriFactor>;

struct LayoutBlock {
    std::size_t offset = 0;
    std::size_t length = 0;
    BlockFactor factor;

    friend bool operator==(const LayoutBlock&, const LayoutBlock&) = default;
};

inline std::size_t block_length(const BlockFactor& f) {
    return std::visit(
        [](const auto& b) -> std::size_t {
            using T = std::decay_t<decltype(b)>;
            if constexpr (std::is_same_v<T, KronBlock>)
                return b.factor.rows() * b.factor.cols();
            else
                return b.dim();
        },
        f);
}

/**
 * Block-diagonal (direct sum) preconditioner over the parameter vector.
 *
 * Blocks are kept in parameter order and must tile [0, dim) exactly. Each
 * block preconditions and updates its own slice independently.
 */
class PreconditionerLayout {
public:
    PreconditionerLayout() = default;

    explicit PreconditionerLayout(std::vector<LayoutBlock> blocks) : blocks_(std::move(blocks)) {
        std::size_t next = 0;
        for (const auto& b : blocks_) {
            if (b.offset != next)
                throw Error(ErrorKind::config, "layout slices leave a gap or overlap at offset " +
                                                   std::to_string(b.offset));
            if (b.length != block_length(b.factor) || b.length == 0)
                throw Error(ErrorKind::config, "layout block length does not match its factor");
            next += b.length;
        }
        dim_ = next;
    }

    static PreconditionerLayout dense(std::size_t n) {
        return PreconditionerLayout().add_dense(n);
    }

    PreconditionerLayout& add(BlockFactor f) {
        const std::size_t len = block_length(f);
        require(len > 0, "layout block must be non-empty", ErrorKind::config);
        blocks_.push_back({dim_, len, std::move(f)});
        dim_ += len;
        return *this;
    }
    PreconditionerLayout& add_dense(std::size_t n) { return add(TriFactor::identity(n)); }
    PreconditionerLayout& add_kron(std::size_t rows, std::size_t cols) {
        return add(KronBlock{KronFactor::identity(rows, cols)});
    }
    PreconditionerLayout& add_limited_memory(std::size_t n, std::size_t r) {
        return add(LimitedMemoryTriFactor::identity(n, r));
    }

    std::size_t dim() const noexcept { return dim_; }
    const std::vector<LayoutBlock>& blocks() const noexcept { return blocks_; }
    std::vector<LayoutBlock>& blocks() noexcept { return blocks_; }

    bool supports(Criterion c) const {
        if (c == Criterion::c3) return true;
        return std::all_of(blocks_.begin(), blocks_.end(), [](const LayoutBlock& b) {
            return std::holds_alternative<TriFactor>(b.factor);
        });
    }

    Vector apply(std::span<const double> g) const {
        check_coverage(g.size());
        Vector out(g.size());
        for (const auto& b : blocks_) {
            const auto slice = g.subspan(b.offset, b.length);
            Vector part = std::visit(
                [&](const auto& f) -> Vector {
                    using T = std::decay_t<decltype(f)>;
                    if constexpr (std::is_same_v<T, KronBlock>) {
                        const Matrix gm(f.factor.rows(), f.factor.cols(),
                                        Vector(slice.begin(), slice.end()));
                        const Matrix pm = f.factor.apply(gm);
                        return Vector(pm.values().begin(), pm.values().end());
                    } else {
                        return f.apply(slice);
                    }
                },
                b.factor);
            std::copy(part.begin(), part.end(), out.begin() + static_cast<std::ptrdiff_t>(b.offset));
        }
        return out;
    }

    /// Updates every block from its slice of the perturbation pair.
    void update(Criterion criterion, std::span<const double> dtheta, std::span<const double> dg,
                double step0, StepNorm norm) {
        check_coverage(dtheta.size());
        check_coverage(dg.size());
        if (!supports(criterion))
            throw Error(ErrorKind::precondition,
                        std::string("criterion ") + to_string(criterion) +
                            " is only available for dense layouts");
        for (auto& b : blocks_) {
            const auto dt = dtheta.subspan(b.offset, b.length);
            const auto dgs = dg.subspan(b.offset, b.length);
            std::visit(
                [&](auto& f) {
                    using T = std::decay_t<decltype(f)>;
                    if constexpr (std::is_same_v<T, TriFactor>) {
                        f.update(relative_gradient_terms(criterion, f, dt, dgs), step0, norm);
                    } else if constexpr (std::is_same_v<T, KronBlock>) {
                        const std::size_t p = f.factor.rows(), q = f.factor.cols();
                        update_kron(f.factor, Matrix(p, q, Vector(dt.begin(), dt.end())),
                                    Matrix(p, q, Vector(dgs.begin(), dgs.end())), step0, norm);
                    } else {
                        update_limited_memory(f, relative_gradient_lm(f, dt, dgs), step0, norm);
                    }
                },
                b.factor);
        }
    }

    /// Full P as a dense matrix in parameter order (small layouts only).
    Matrix dense_preconditioner() const {
        Matrix p(dim_, dim_);
        for (const auto& b : blocks_) {
            for (std::size_t j = 0; j < b.length; ++j) {
                Vector e(b.length, 0.0);
                e[j] = 1.0;
                Vector col = PreconditionerLayout({LayoutBlock{0, b.length, b.factor}}).apply(e);
                for (std::size_t i = 0; i < b.length; ++i) p(b.offset + i, b.offset + j) = col[i];
            }
        }
        return p;
    }

    friend bool operator==(const PreconditionerLayout&, const PreconditionerLayout&) = default;

private:
    void check_coverage(std::size_t n) const {
        if (n != dim_)
            throw Error(ErrorKind::config, "layout covers " + std::to_string(dim_) +
                                               " parameters but vector has " + std::to_string(n));
    }

    std::vector<LayoutBlock> blocks_;
    std::size_t dim_ = 0;
};

inline Vector layout_apply(const PreconditionerLayout& layout, std::span<const double> g) {
    return layout.apply(g);
}

inline PreconditionerLayout layout_update(PreconditionerLayout layout, Criterion criterion,
                                          std::span<const double> dtheta,
                                          std::span<const double> dg, double step0,
                                          StepNorm norm) {
    layout.update(criterion, dtheta, dg, step0, norm);
    return layout;
}

} // namespace psgd
