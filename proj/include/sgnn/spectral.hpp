#ifndef SGNN_SPECTRAL_HPP
#define SGNN_SPECTRAL_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sgnn/errors.hpp"
#include "sgnn/rng.hpp"
#include "sgnn/types.hpp"

namespace sgnn {

/// Orthonormal eigenvectors (columns) and ascending eigenvalues of a symmetric matrix.
struct EigPair {
    Matrix vectors;
    Vector values;
};

/// Taps h_0..h_K of a polynomial graph filter.
struct FilterCoeffs {
    std::vector<double> taps;

    FilterCoeffs() = default;
    FilterCoeffs(std::initializer_list<double> h) : taps(h) {}
    explicit FilterCoeffs(std::vector<double> h) : taps(std::move(h)) {}

    /// Filter order K (number of shifts).
    [[nodiscard]] std::size_t order() const noexcept { return taps.empty() ? 0 : taps.size() - 1; }
    [[nodiscard]] std::size_t size() const noexcept { return taps.size(); }
    double operator[](std::size_t k) const { return taps[k]; }
    double& operator[](std::size_t k) { return taps[k]; }
};

/// Closed frequency interval [lo, hi].
struct FrequencyDomain {
    double lo = -1.0;
    double hi = 1.0;

    [[nodiscard]] bool empty() const noexcept { return !(lo <= hi); }
    [[nodiscard]] bool contains(double x, double tol = 1e-12) const noexcept {
        return x >= lo - tol && x <= hi + tol;
    }
};

/// Constants bounding the filters and nonlinearity of a stochastic GNN.
struct AssumptionConstants {
    double c_u = 0.0;      // sup |h(lambda)| over the domain
    double c_g = 0.0;      // Lipschitz constant of the generalized response
    double c_sigma = 1.0;  // Lipschitz constant of the nonlinearity
    FrequencyDomain domain{};
};

/// Inflation applied to every sampled sup estimate.
inline constexpr double kSafetyFactor = 1.05;

inline double max_asymmetry(const Matrix& s) {
    if (s.rows() != s.cols()) return std::numeric_limits<double>::infinity();
    if (s.size() == 0) return 0.0;
    return (s - s.transpose()).cwiseAbs().maxCoeff();
}

/// Cyclic Jacobi eigendecomposition. Eigenvalues are returned ascending.
inline EigPair eig_sym(const Matrix& s) {
    if (s.rows() != s.cols()) throw InvalidInput("eig_sym: matrix is not square");
    if (max_asymmetry(s) > 1e-10) throw InvalidInput("eig_sym: matrix is not symmetric");
    const Eigen::Index n = s.rows();
    Matrix a = 0.5 * (s + s.transpose());
    Matrix v = Matrix::Identity(n, n);

    const double scale = a.norm();
    for (int sweep = 0; sweep < 100 && n > 1; ++sweep) {
        double off = 0.0;
        for (Eigen::Index p = 0; p < n; ++p)
            for (Eigen::Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
        if (std::sqrt(2.0 * off) <= 1e-15 * scale || off == 0.0) break;

        for (Eigen::Index p = 0; p < n - 1; ++p) {
            for (Eigen::Index q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double sn = t * c;
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - sn * akq;
                    a(k, q) = sn * akp + c * akq;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - sn * aqk;
                    a(q, k) = sn * apk + c * aqk;
                }
                a(p, q) = 0.0;
                a(q, p) = 0.0;
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double vkp = v(k, p);
                    const double vkq = v(k, q);
                    v(k, p) = c * vkp - sn * vkq;
                    v(k, q) = sn * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index i, Eigen::Index j) { return a(i, i) < a(j, j); });
    EigPair out{Matrix(n, n), Vector(n)};
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto src = order[static_cast<std::size_t>(i)];
        out.values(i) = a(src, src);
        out.vectors.col(i) = v.col(src);
    }
    return out;
}

/// Graph Fourier transform: coordinates of x in the eigenvector basis.
inline Vector gft(const Matrix& vectors, const Vector& x) {
    if (vectors.rows() != x.size()) throw InvalidInput("gft: dimension mismatch");
    return vectors.transpose() * x;
}

inline Vector igft(const Matrix& vectors, const Vector& xhat) {
    if (vectors.cols() != xhat.size()) throw InvalidInput("igft: dimension mismatch");
    return vectors * xhat;
}

/// h(lambda) = sum_k h_k lambda^k, evaluated by Horner's rule.
inline double freq_response(const FilterCoeffs& h, double lambda) {
    double acc = 0.0;
    for (auto it = h.taps.rbegin(); it != h.taps.rend(); ++it) acc = acc * lambda + *it;
    return acc;
}

/// Multilinear response sum_k h_k * lambda_1 * ... * lambda_k over a chain of K shifts.
inline double generalized_freq_response(const FilterCoeffs& h, std::span<const double> lambdas) {
    if (lambdas.size() != h.order())
        throw InvalidInput("generalized_freq_response: expected " + std::to_string(h.order()) +
                           " frequencies, got " + std::to_string(lambdas.size()));
    if (h.taps.empty()) return 0.0;
    double acc = h[0];
    double prefix = 1.0;
    for (std::size_t k = 1; k < h.size(); ++k) {
        prefix *= lambdas[k - 1];
        acc += h[k] * prefix;
    }
    return acc;
}

/// Partial derivative of the generalized response w.r.t. lambda_r, r in 1..K.
inline double gfr_partial(const FilterCoeffs& h, std::span<const double> lambdas, std::size_t r) {
    const std::size_t order = h.order();
    if (lambdas.size() != order) throw InvalidInput("gfr_partial: frequency vector length mismatch");
    if (r < 1 || r > order) throw InvalidInput("gfr_partial: tap index out of range");
    double before = 1.0;  // prod_{j<r} lambda_j
    for (std::size_t j = 1; j < r; ++j) before *= lambdas[j - 1];
    double acc = 0.0;
    double after = 1.0;  // prod_{r<j<=k} lambda_j
    for (std::size_t k = r; k <= order; ++k) {
        if (k > r) after *= lambdas[k - 1];
        acc += h[k] * after;
    }
    return before * acc;
}

inline double gfr_gradient_norm(const FilterCoeffs& h, std::span<const double> lambdas) {
    double sq = 0.0;
    for (std::size_t r = 1; r <= h.order(); ++r) {
        const double g = gfr_partial(h, lambdas, r);
        sq += g * g;
    }
    return std::sqrt(sq);
}

/// Symmetric interval [-rho, rho] around the spectrum of `s`, rho inflated by the safety factor.
inline FrequencyDomain default_domain(const Matrix& s) {
    const EigPair e = eig_sym(s);
    if (e.values.size() == 0) return {0.0, 0.0};
    const double rho = std::max(std::abs(e.values.minCoeff()), std::abs(e.values.maxCoeff()));
    return {-kSafetyFactor * rho, kSafetyFactor * rho};
}

/// Sup of |h(lambda)| on a uniform grid over the domain, times the safety factor.
inline double estimate_cu(const FilterCoeffs& h, FrequencyDomain domain, std::size_t grid_points = 2001) {
    if (domain.empty()) throw InvalidInput("estimate_cu: empty frequency domain");
    if (grid_points < 2) throw InvalidInput("estimate_cu: need at least two grid points");
    double best = 0.0;
    const double step = (domain.hi - domain.lo) / static_cast<double>(grid_points - 1);
    for (std::size_t i = 0; i < grid_points; ++i) {
        const double lambda = i + 1 == grid_points ? domain.hi : domain.lo + step * static_cast<double>(i);
        best = std::max(best, std::abs(freq_response(h, lambda)));
    }
    return kSafetyFactor * best;
}

/// Sup estimate of the gradient norm of the generalized response over domain^K.
///
/// Candidates: `n_samples` uniform draws, the structured two-eigenvalue vectors
/// (lambda_i,...,lambda_i,lambda_j,...,lambda_j) built from the endpoints, and,
/// for K <= 16, every corner of the box. The squared gradient norm is convex in
/// each coordinate separately, so its maximum over the box sits on a corner.
inline double estimate_cg(const FilterCoeffs& h, FrequencyDomain domain, std::size_t n_samples, Rng& rng) {
    if (domain.empty()) throw InvalidInput("estimate_cg: empty frequency domain");
    if (n_samples < 1) throw InvalidInput("estimate_cg: need at least one sample");
    const std::size_t order = h.order();
    if (order == 0) return 0.0;

    double best = 0.0;
    std::vector<double> lambdas(order);
    for (std::size_t s = 0; s < n_samples; ++s) {
        for (auto& l : lambdas) l = rng.uniform(domain.lo, domain.hi);
        best = std::max(best, gfr_gradient_norm(h, lambdas));
    }

    const double ends[] = {domain.lo, domain.hi, 0.0};
    for (double li : ends) {
        for (double lj : ends) {
            for (std::size_t r = 1; r <= order; ++r) {
                for (std::size_t j = 0; j < order; ++j) lambdas[j] = j + 1 < r ? li : lj;
                best = std::max(best, gfr_gradient_norm(h, lambdas));
            }
        }
    }

    if (order <= 16) {
        const std::uint64_t corners = std::uint64_t{1} << order;
        for (std::uint64_t mask = 0; mask < corners; ++mask) {
            for (std::size_t j = 0; j < order; ++j) lambdas[j] = (mask >> j) & 1U ? domain.hi : domain.lo;
            best = std::max(best, gfr_gradient_norm(h, lambdas));
        }
    }
    return kSafetyFactor * best;
}

/// H(S) = sum_k h_k S^k formed explicitly.
inline Matrix filter_matrix(const FilterCoeffs& h, const Matrix& s) {
    const Eigen::Index n = s.rows();
    Matrix out = Matrix::Zero(n, n);
    Matrix power = Matrix::Identity(n, n);
    for (std::size_t k = 0; k < h.size(); ++k) {
        if (k > 0) power = power * s;
        out += h[k] * power;
    }
    return out;
}

struct FilterNormCheck {
    double norm = 0.0;  // ||H(S)||_2
    double c_u = 0.0;
};

/// Spectral norm of H(S) next to the C_U estimate on `domain`.
inline FilterNormCheck filter_norm_check(const FilterCoeffs& h, const Matrix& s, FrequencyDomain domain,
                                         std::size_t grid_points = 2001) {
    const EigPair e = eig_sym(s);
    for (Eigen::Index i = 0; i < e.values.size(); ++i)
        if (!domain.contains(e.values(i)))
            throw DomainViolation("filter_norm_check: eigenvalue " + std::to_string(e.values(i)) +
                                  " outside [" + std::to_string(domain.lo) + ", " +
                                  std::to_string(domain.hi) + "]");
    const Matrix hs = filter_matrix(h, s);
    const EigPair he = eig_sym(0.5 * (hs + hs.transpose()));
    double norm = 0.0;
    if (he.values.size() > 0) norm = std::max(std::abs(he.values.minCoeff()), std::abs(he.values.maxCoeff()));
    return {norm, estimate_cu(h, domain, grid_points)};
}

}  // namespace sgnn

#endif  // SGNN_SPECTRAL_HPP
