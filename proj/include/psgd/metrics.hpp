#pragma once

#include <cmath>
#include <limits>
#include <span>

#include "psgd/error.hpp"
#include "psgd/linalg.hpp"

namespace psgd {

struct QualityReport {
    double spread_gain = 1.0;
    double mean_abs_eig = 1.0;
    double noise_gain = 1.0;
};

/// Population standard deviation of ln|λ|.
inline double eig_spread(std::span<const double> eigenvalues) {
    require(!eigenvalues.empty(), "eig_spread: no eigenvalues");
    double mean = 0.0;
    for (double l : eigenvalues) {
        if (!(std::abs(l) >= 1e-300))
            throw Error(ErrorKind::singular, "eig_spread: zero eigenvalue");
        mean += std::log(std::abs(l));
    }
    mean /= static_cast<double>(eigenvalues.size());
    double var = 0.0;
    for (double l : eigenvalues) {
        const double d = std::log(std::abs(l)) - mean;
        var += d * d;
    }
    return std::sqrt(var / static_cast<double>(eigenvalues.size()));
}

inline double eig_spread(const Matrix& symmetric) { return eig_spread(sym_eig(symmetric).eigenvalues); }

/// Eigenvalues of P·H through the similar symmetric matrix P^½ H P^½.
inline Vector product_eigenvalues(const Matrix& h, const Matrix& p) {
    require(h.square() && p.rows() == h.rows() && p.square(), "product_eigenvalues: shape mismatch");
    const Matrix s = principal_sqrt(p);
    return sym_eig(symmetrize(s * h * s)).eigenvalues;
}

/**
 * Spread gain, mean absolute eigenvalue of P·H and noise suppression gain.
 *
 * A zero spread for P·H yields spread_gain = +inf, unless H's own spread is
 * zero as well, in which case nothing was gained or lost and the gain is 1.
 */
inline QualityReport quality(const Matrix& h, const Matrix& p) {
    require_symmetric(h, "quality (H)");
    const SymEig eh = sym_eig(h);
    const Vector eph = product_eigenvalues(h, p);

    QualityReport r;
    const double sh = eig_spread(eh.eigenvalues);
    const double sph = eig_spread(eph);
    if (sph > 0.0)
        r.spread_gain = sh / sph;
    else
        r.spread_gain = sh > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;

    double m = 0.0;
    for (double l : eph) m += std::abs(l);
    r.mean_abs_eig = m / static_cast<double>(eph.size());

    double tr_hinv2 = 0.0;
    for (double l : eh.eigenvalues) tr_hinv2 += 1.0 / (l * l);
    const double tr_p2 = frobenius_norm(p) * frobenius_norm(p);
    r.noise_gain = tr_hinv2 / tr_p2;
    return r;
}

} // namespace psgd
