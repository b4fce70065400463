#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "psgd/error.hpp"
#include "psgd/linalg.hpp"

namespace psgd {

/// Second-order statistics of a perturbation pair (δθ, δĝ).
struct CovarianceSet {
    Matrix r_theta;        // E[δθ δθᵀ]
    Matrix r_g;            // E[δĝ δĝᵀ]
    Matrix r_theta_g;      // E[δθ δĝᵀ]
    Matrix r_g_theta;      // E[δĝ δθᵀ]
};

/**
 * Covariances implied by δĝ = H δθ + ε with white δθ and white ε:
 * Rθ = σθ²I, Rθg = Rgθ = σθ²H, Rg = σθ²H² + σε²I.
 */
inline CovarianceSet white_covariances(const Matrix& h, double sigma_theta2, double sigma_eps2) {
    require_symmetric(h, "white_covariances");
    require(sigma_theta2 > 0.0, "white_covariances: sigma_theta^2 must be positive");
    require(sigma_eps2 >= 0.0, "white_covariances: sigma_eps^2 must be non-negative");
    const std::size_t n = h.rows();
    const Matrix eye = Matrix::identity(n);
    CovarianceSet c;
    c.r_theta = sigma_theta2 * eye;
    c.r_theta_g = sigma_theta2 * h;
    c.r_g_theta = c.r_theta_g;
    c.r_g = symmetrize(sigma_theta2 * (h * h) + sigma_eps2 * eye);
    return c;
}

namespace detail {

inline void check_covariances(const CovarianceSet& c) {
    const std::size_t n = c.r_theta.rows();
    require(c.r_g.rows() == n && c.r_theta_g.rows() == n && c.r_g_theta.rows() == n &&
                c.r_theta_g.square() && c.r_g_theta.square(),
            "covariance set: dimension mismatch");
    require_symmetric(c.r_theta, "covariance set (R_theta)", 1e-10);
    require_symmetric(c.r_g, "covariance set (R_g)", 1e-10);
    require(max_abs(c.r_g_theta - transpose(c.r_theta_g)) <=
                    1e-10 * std::max(1.0, max_abs(c.r_theta_g)),
            "covariance set: R_g_theta must equal R_theta_g transposed");
}

inline Matrix cross_sum(const CovarianceSet& c) { return symmetrize(c.r_theta_g + c.r_g_theta); }

inline void require_positive_definite(const Matrix& m, const char* who) {
    try {
        (void)cholesky_upper(m);
    } catch (const Error&) {
        throw Error(ErrorKind::not_positive_definite, std::string(who) + ": input is not positive definite");
    }
}

} // namespace detail

/// Criterion-1 optimum: P = X⁻¹ with Rθ X + X Rθ = Rθg + Rgθ.
inline Matrix precond1_closed(const CovarianceSet& c) {
    detail::check_covariances(c);
    detail::require_positive_definite(c.r_theta, "precond1_closed (R_theta)");
    const Matrix x = solve_lyapunov(c.r_theta, detail::cross_sum(c));
    try {
        return symmetrize(inverse(x));
    } catch (const Error& e) {
        throw Error(ErrorKind::singular,
                    std::string("precond1_closed: Lyapunov solution is singular, so P = X^-1 does "
                                "not exist (") + e.what() + ")");
    }
}

/// Criterion-2 optimum: P Rg + Rg P = Rgθ + Rθg.
inline Matrix precond2_closed(const CovarianceSet& c) {
    detail::check_covariances(c);
    detail::require_positive_definite(c.r_g, "precond2_closed (R_g)");
    return solve_lyapunov(c.r_g, detail::cross_sum(c));
}

/// Criterion-3 optimum: the positive definite solution of P Rg P = Rθ.
inline Matrix precond3_closed(const CovarianceSet& c) {
    detail::check_covariances(c);
    detail::require_positive_definite(c.r_theta, "precond3_closed (R_theta)");
    detail::require_positive_definite(c.r_g, "precond3_closed (R_g)");
    const Matrix s = principal_sqrt(c.r_theta);
    const SymEig e = sym_eig(symmetrize(s * c.r_g * s));
    for (double d : e.eigenvalues)
        if (!(d > 0.0))
            throw Error(ErrorKind::not_positive_definite,
                        "precond3_closed: R_theta^0.5 R_g R_theta^0.5 is not positive definite");
    const Matrix middle = spectral_map(e, [](double d) { return 1.0 / std::sqrt(d); });
    return symmetrize(s * middle * s);
}

/// U|D⁻¹|Uᵀ: every eigenvalue of P·H then has absolute value one.
inline Matrix ideal_precond(const Matrix& h) {
    const SymEig e = sym_eig(h);
    double largest = 0.0;
    for (double l : e.eigenvalues) largest = std::max(largest, std::abs(l));
    for (double l : e.eigenvalues)
        if (!(std::abs(l) >= 1e-12 * largest) || largest == 0.0)
            throw Error(ErrorKind::singular,
                        "ideal_precond: eigenvalue " + std::to_string(l) +
                            " is below 1e-12 of the largest magnitude");
    return spectral_map(e, [](double l) { return 1.0 / std::abs(l); });
}

} // namespace psgd
