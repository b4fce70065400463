#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "psgd/error.hpp"

namespace psgd {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
class Matrix {
public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
        : rows_(rows), cols_(cols), data_(std::move(values)) {
        require(data_.size() == rows_ * cols_, "Matrix: value count does not match shape");
    }

    /// Builds from nested rows; entries must be finite and rows equally long.
    Matrix(std::initializer_list<std::initializer_list<double>> rows) {
        rows_ = rows.size();
        require(rows_ > 0, "Matrix: at least one row required");
        cols_ = rows.begin()->size();
        require(cols_ > 0, "Matrix: at least one column required");
        data_.reserve(rows_ * cols_);
        for (const auto& r : rows) {
            require(r.size() == cols_, "Matrix: ragged rows");
            for (double x : r) {
                require(std::isfinite(x), "Matrix: non-finite entry");
                data_.push_back(x);
            }
        }
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    static Matrix diagonal(std::span<const double> d) {
        Matrix m(d.size(), d.size());
        for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }
    bool square() const noexcept { return rows_ == cols_; }

    double& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * cols_ + j]; }

    std::span<double> row(std::size_t i) noexcept { return {data_.data() + i * cols_, cols_}; }
    std::span<const double> row(std::size_t i) const noexcept {
        return {data_.data() + i * cols_, cols_};
    }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }

    Vector diag() const {
        Vector d(std::min(rows_, cols_));
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = (*this)(i, i);
        return d;
    }

    Matrix& operator+=(const Matrix& o) {
        require(rows_ == o.rows_ && cols_ == o.cols_, "Matrix +=: shape mismatch");
        for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += o.data_[k];
        return *this;
    }
    Matrix& operator-=(const Matrix& o) {
        require(rows_ == o.rows_ && cols_ == o.cols_, "Matrix -=: shape mismatch");
        for (std::size_t k = 0; k < data_.size(); ++k) data_[k] -= o.data_[k];
        return *this;
    }
    Matrix& operator*=(double s) {
        for (double& x : data_) x *= s;
        return *this;
    }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
inline Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
inline Matrix operator*(double s, Matrix a) { return a *= s; }
inline Matrix operator*(Matrix a, double s) { return a *= s; }

inline Matrix transpose(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

inline Matrix operator*(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.rows(), "matrix product: inner dimensions differ");
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double* ci = c.row(i).data();
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            const double* bk = b.row(k).data();
            for (std::size_t j = 0; j < b.cols(); ++j) ci[j] += aik * bk[j];
        }
    }
    return c;
}

inline Vector operator*(const Matrix& a, std::span<const double> x) {
    require(a.cols() == x.size(), "matrix-vector product: dimension mismatch");
    Vector y(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* ai = a.row(i).data();
        double s = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) s += ai[j] * x[j];
        y[i] = s;
    }
    return y;
}

inline Vector operator*(const Matrix& a, const Vector& x) {
    return a * std::span<const double>(x);
}

/// aᵀx without forming the transpose.
inline Vector transposed_times(const Matrix& a, std::span<const double> x) {
    require(a.rows() == x.size(), "transposed product: dimension mismatch");
    Vector y(a.cols(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double xi = x[i];
        if (xi == 0.0) continue;
        const double* ai = a.row(i).data();
        for (std::size_t j = 0; j < a.cols(); ++j) y[j] += ai[j] * xi;
    }
    return y;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size(), "dot: dimension mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline Vector subtract(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size(), "subtract: dimension mismatch");
    Vector d(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
    return d;
}

inline double frobenius_norm(const Matrix& a) { return norm2(a.values()); }

inline double trace(const Matrix& a) {
    require(a.square(), "trace: matrix must be square");
    double t = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) t += a(i, i);
    return t;
}

inline Matrix outer(std::span<const double> u, std::span<const double> v) {
    Matrix m(u.size(), v.size());
    for (std::size_t i = 0; i < u.size(); ++i)
        for (std::size_t j = 0; j < v.size(); ++j) m(i, j) = u[i] * v[j];
    return m;
}

/// Keeps the diagonal and upper triangle, zeroes the strictly lower part.
inline Matrix triu(const Matrix& a) {
    require(a.square(), "triu: matrix must be square");
    Matrix u = a;
    for (std::size_t i = 1; i < u.rows(); ++i)
        for (std::size_t j = 0; j < i; ++j) u(i, j) = 0.0;
    return u;
}

inline double max_abs(const Matrix& a) {
    double m = 0.0;
    for (double x : a.values()) m = std::max(m, std::abs(x));
    return m;
}

inline double max_abs_diag(const Matrix& a) {
    require(a.square(), "max_abs_diag: matrix must be square");
    double m = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) m = std::max(m, std::abs(a(i, i)));
    return m;
}

inline bool is_upper_triangular(const Matrix& a) {
    if (!a.square()) return false;
    for (std::size_t i = 1; i < a.rows(); ++i)
        for (std::size_t j = 0; j < i; ++j)
            if (a(i, j) != 0.0) return false;
    return true;
}

/// Max asymmetry |a_ij - a_ji| relative to max |a_ij| (absolute when a = 0).
inline double asymmetry(const Matrix& a) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = i + 1; j < a.cols(); ++j)
            worst = std::max(worst, std::abs(a(i, j) - a(j, i)));
    const double scale = max_abs(a);
    return scale > 0.0 ? worst / scale : worst;
}

inline void require_symmetric(const Matrix& a, const char* who, double tol = 1e-12) {
    require(a.square(), std::string(who) + ": matrix must be square");
    require(a.rows() >= 1, std::string(who) + ": empty matrix");
    require(asymmetry(a) <= tol, std::string(who) + ": matrix is not symmetric");
}

inline Matrix symmetrize(const Matrix& a) {
    Matrix s = a;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = i + 1; j < a.cols(); ++j) {
            const double m = 0.5 * (a(i, j) + a(j, i));
            s(i, j) = m;
            s(j, i) = m;
        }
    return s;
}

// ---------------------------------------------------------------------------
// Symmetric eigendecomposition
// ---------------------------------------------------------------------------

struct SymEig {
    Vector eigenvalues;   // ascending
    Matrix eigenvectors;  // orthonormal columns
};

/**
 * Cyclic Jacobi eigendecomposition of a symmetric matrix.
 *
 * Sweeps over all off-diagonal pairs until the largest off-diagonal entry
 * drops below 1e-14 * ||S||_F, or 100 sweeps. Eigenvalues come back in
 * ascending order; each eigenvector has its first nonzero component positive,
 * and equal eigenvalues are ordered lexicographically by eigenvector.
 */
inline SymEig sym_eig(const Matrix& s) {
    require_symmetric(s, "sym_eig");
    const std::size_t n = s.rows();
    Matrix a = symmetrize(s);
    Matrix v = Matrix::identity(n);

    const double fro = frobenius_norm(a);
    const double tol = 1e-14 * fro;
    for (int sweep = 0; sweep < 100 && fro > 0.0; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off = std::max(off, std::abs(a(p, q)));
        if (off <= tol) break;

        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                double t = 0.5 / theta;  // theta² would overflow
                if (std::abs(theta) < 1e150) {
                    t = 1.0 / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                    if (theta < 0.0) t = -t;
                }
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double sn = t * c;

                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - sn * akq;
                    a(k, q) = sn * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - sn * aqk;
                    a(q, k) = sn * apk + c * aqk;
                }
                a(p, q) = 0.0;
                a(q, p) = 0.0;
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p);
                    const double vkq = v(k, q);
                    v(k, p) = c * vkp - sn * vkq;
                    v(k, q) = sn * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<Vector> vecs(n, Vector(n));
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < n; ++i) vecs[j][i] = v(i, j);
        auto first = std::find_if(vecs[j].begin(), vecs[j].end(),
                                  [](double x) { return x != 0.0; });
        if (first != vecs[j].end() && *first < 0.0)
            for (double& x : vecs[j]) x = -x;
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        if (a(x, x) != a(y, y)) return a(x, x) < a(y, y);
        return vecs[x] > vecs[y];
    });

    SymEig out{Vector(n), Matrix(n, n)};
    for (std::size_t j = 0; j < n; ++j) {
        out.eigenvalues[j] = a(order[j], order[j]);
        for (std::size_t i = 0; i < n; ++i) out.eigenvectors(i, j) = vecs[order[j]][i];
    }
    return out;
}

/// U diag(f(λ)) Uᵀ for a decomposition.
template <class F>
Matrix spectral_map(const SymEig& e, F&& f) {
    const std::size_t n = e.eigenvalues.size();
    Vector fl(n);
    for (std::size_t k = 0; k < n; ++k) fl[k] = f(e.eigenvalues[k]);
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < n; ++k)
                s += e.eigenvectors(i, k) * fl[k] * e.eigenvectors(j, k);
            m(i, j) = s;
            m(j, i) = s;
        }
    return m;
}

// ---------------------------------------------------------------------------
// Factorizations and solves
// ---------------------------------------------------------------------------

/// Upper-triangular Q with positive diagonal such that QᵀQ = P.
inline Matrix cholesky_upper(const Matrix& p) {
    require_symmetric(p, "cholesky_upper", 1e-10);
    const std::size_t n = p.rows();
    Matrix q(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        double d = p(i, i);
        for (std::size_t k = 0; k < i; ++k) d -= q(k, i) * q(k, i);
        if (!(d > 0.0))
            throw Error(ErrorKind::not_positive_definite,
                        "cholesky_upper: non-positive pivot at index " + std::to_string(i));
        const double qii = std::sqrt(d);
        q(i, i) = qii;
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = p(i, j);
            for (std::size_t k = 0; k < i; ++k) s -= q(k, i) * q(k, j);
            q(i, j) = s / qii;
        }
    }
    return q;
}

enum class TriSolve { normal, transposed };

/// Solves Qx = b (normal) or Qᵀx = b (transposed) for upper-triangular Q.
inline Vector tri_solve(const Matrix& q, std::span<const double> b, TriSolve mode) {
    require(q.square() && q.rows() == b.size(), "tri_solve: dimension mismatch");
    const std::size_t n = q.rows();
    for (std::size_t i = 0; i < n; ++i)
        if (q(i, i) == 0.0)
            throw Error(ErrorKind::singular,
                        "tri_solve: zero diagonal entry at index " + std::to_string(i));
    Vector x(b.begin(), b.end());
    if (mode == TriSolve::normal) {
        for (std::size_t ii = n; ii-- > 0;) {
            const double* qi = q.row(ii).data();
            double s = x[ii];
            for (std::size_t j = ii + 1; j < n; ++j) s -= qi[j] * x[j];
            x[ii] = s / qi[ii];
        }
    } else {
        // Forward substitution on Qᵀ, column-oriented so rows of Q stay contiguous.
        for (std::size_t i = 0; i < n; ++i) {
            const double* qi = q.row(i).data();
            const double xi = x[i] / qi[i];
            x[i] = xi;
            for (std::size_t j = i + 1; j < n; ++j) x[j] -= qi[j] * xi;
        }
    }
    return x;
}

inline Vector tri_solve(const Matrix& q, const Vector& b, TriSolve mode) {
    return tri_solve(q, std::span<const double>(b), mode);
}

/// Solves A X = B with Gaussian elimination and partial pivoting.
inline Matrix solve(Matrix a, Matrix b) {
    require(a.square() && a.rows() == b.rows(), "solve: dimension mismatch");
    const std::size_t n = a.rows();
    const std::size_t m = b.cols();
    const double scale = max_abs(a);
    const double tiny = 1e-13 * (scale > 0.0 ? scale : 1.0);
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(a(r, col)) > std::abs(a(piv, col))) piv = r;
        if (std::abs(a(piv, col)) <= tiny || scale == 0.0)
            throw Error(ErrorKind::singular,
                        "solve: singular system (pivot column " + std::to_string(col) + ")");
        if (piv != col) {
            for (std::size_t j = 0; j < n; ++j) std::swap(a(piv, j), a(col, j));
            for (std::size_t j = 0; j < m; ++j) std::swap(b(piv, j), b(col, j));
        }
        const double inv = 1.0 / a(col, col);
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = a(r, col) * inv;
            if (f == 0.0) continue;
            a(r, col) = 0.0;
            for (std::size_t j = col + 1; j < n; ++j) a(r, j) -= f * a(col, j);
            for (std::size_t j = 0; j < m; ++j) b(r, j) -= f * b(col, j);
        }
    }
    for (std::size_t ii = n; ii-- > 0;) {
        for (std::size_t j = 0; j < m; ++j) {
            double s = b(ii, j);
            for (std::size_t k = ii + 1; k < n; ++k) s -= a(ii, k) * b(k, j);
            b(ii, j) = s / a(ii, ii);
        }
    }
    return b;
}

inline Vector solve(const Matrix& a, std::span<const double> rhs) {
    Matrix b(rhs.size(), 1, Vector(rhs.begin(), rhs.end()));
    Matrix x = solve(a, std::move(b));
    return Vector(x.values().begin(), x.values().end());
}

inline Matrix inverse(const Matrix& a) {
    require(a.square(), "inverse: matrix must be square");
    return solve(a, Matrix::identity(a.rows()));
}

/// Principal square root U diag(√λ) Uᵀ of a symmetric positive definite matrix.
inline Matrix principal_sqrt(const Matrix& p) {
    const SymEig e = sym_eig(p);
    for (double l : e.eigenvalues)
        if (!(l > 0.0))
            throw Error(ErrorKind::not_positive_definite,
                        "principal_sqrt: eigenvalue " + std::to_string(l) + " is not positive");
    return spectral_map(e, [](double l) { return std::sqrt(l); });
}

// ---------------------------------------------------------------------------
// Kronecker products and vectorization
// ---------------------------------------------------------------------------

inline Matrix kron(const Matrix& a, const Matrix& b) {
    Matrix k(a.rows() * b.rows(), a.cols() * b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) {
            const double aij = a(i, j);
            for (std::size_t r = 0; r < b.rows(); ++r)
                for (std::size_t c = 0; c < b.cols(); ++c)
                    k(i * b.rows() + r, j * b.cols() + c) = aij * b(r, c);
        }
    return k;
}

/// Column stacking.
inline Vector vec(const Matrix& a) {
    Vector v(a.size());
    for (std::size_t j = 0; j < a.cols(); ++j)
        for (std::size_t i = 0; i < a.rows(); ++i) v[j * a.rows() + i] = a(i, j);
    return v;
}

/// Inverse of vec for a rows x cols target.
inline Matrix unvec(std::span<const double> v, std::size_t rows, std::size_t cols) {
    require(v.size() == rows * cols, "unvec: size mismatch");
    Matrix a(rows, cols);
    for (std::size_t j = 0; j < cols; ++j)
        for (std::size_t i = 0; i < rows; ++i) a(i, j) = v[j * rows + i];
    return a;
}

/**
 * Solves the continuous Lyapunov equation R X + X R = C.
 *
 * The system (I ⊗ R + R ⊗ I) vec(X) = vec(C) is solved densely, so this is
 * meant for small matrices (n² unknowns). Throws ErrorKind::singular when the
 * Kronecker sum is singular, i.e. when λᵢ + λⱼ = 0 for eigenvalues of R.
 */
inline Matrix solve_lyapunov(const Matrix& r, const Matrix& c) {
    require_symmetric(r, "solve_lyapunov (R)", 1e-10);
    require_symmetric(c, "solve_lyapunov (C)", 1e-10);
    require(r.rows() == c.rows(), "solve_lyapunov: R and C differ in dimension");
    const std::size_t n = r.rows();
    const Matrix eye = Matrix::identity(n);
    Matrix k = kron(eye, r);
    k += kron(r, eye);
    const Vector x = solve(k, vec(c));
    return symmetrize(unvec(x, n, n));
}

} // namespace psgd
