// Brute-force reference computations. Nothing here calls the closed forms or
// the fast paths it is compared against: realized shifts are rebuilt from the
// edge list, expectations come from full enumeration, and gradients from
// central differences of the forward pass.
#ifndef SGNN_VERIFICATION_HPP
#define SGNN_VERIFICATION_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "sgnn/graph_core.hpp"
#include "sgnn/sgnn_model.hpp"

namespace sgnn::verify {

inline ShiftOperator complete_graph(std::size_t n) {
    std::vector<Edge> e;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) e.emplace_back(i, j);
    return ShiftOperator::from_edges(n, e);
}

inline ShiftOperator path_graph(std::size_t n) {
    std::vector<Edge> e;
    for (std::size_t i = 0; i + 1 < n; ++i) e.emplace_back(i, i + 1);
    return ShiftOperator::from_edges(n, e);
}

inline ShiftOperator star_graph(std::size_t leaves) {
    std::vector<Edge> e;
    for (std::size_t i = 1; i <= leaves; ++i) e.emplace_back(0, i);
    return ShiftOperator::from_edges(leaves + 1, e);
}

/// Realized shift for a given keep-mask, built from scratch out of the edge list.
inline Matrix realized_shift(const ShiftOperator& base, std::uint64_t mask) {
    const auto n = static_cast<Eigen::Index>(base.n());
    Matrix a = Matrix::Zero(n, n);
    for (std::size_t e = 0; e < base.num_edges(); ++e) {
        if (!((mask >> e) & 1U)) continue;
        const auto [i, j] = base.edges()[e];
        a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = base.weights()[e];
        a(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = base.weights()[e];
    }
    if (base.kind() != ShiftKind::Laplacian) return a;
    Matrix l = -a;
    for (Eigen::Index i = 0; i < n; ++i) l(i, i) = a.row(i).sum();
    return l;
}

inline double mask_probability(std::uint64_t mask, std::size_t m, double p) {
    double pr = 1.0;
    for (std::size_t e = 0; e < m; ++e) pr *= ((mask >> e) & 1U) ? p : 1.0 - p;
    return pr;
}

/// E[S_k^2] by averaging over all 2^M masks.
inline Matrix enumerate_expected_square(const ShiftOperator& base, double p) {
    const std::size_t m = base.num_edges();
    const auto n = static_cast<Eigen::Index>(base.n());
    Matrix acc = Matrix::Zero(n, n);
    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << m); ++mask) {
        const Matrix s = realized_shift(base, mask);
        acc += mask_probability(mask, m, p) * (s * s);
    }
    return acc;
}

/// Exact variance (summed over nodes) of sum_k h_k S_k...S_1 x by enumerating every mask sequence.
inline double enumerate_filter_variance(const std::vector<double>& h, const ShiftOperator& base, double p,
                                        const Vector& x) {
    const std::size_t m = base.num_edges();
    const std::size_t order = h.size() - 1;
    const std::uint64_t per = std::uint64_t{1} << m;
    std::uint64_t total = 1;
    for (std::size_t k = 0; k < order; ++k) total *= per;
    Vector mean = Vector::Zero(x.size());
    Vector second = Vector::Zero(x.size());
    for (std::uint64_t code = 0; code < total; ++code) {
        std::uint64_t rest = code;
        double pr = 1.0;
        Vector z = x;
        Vector u = h[0] * x;
        for (std::size_t k = 1; k <= order; ++k) {
            const std::uint64_t mask = rest % per;
            rest /= per;
            pr *= mask_probability(mask, m, p);
            z = realized_shift(base, mask) * z;
            u += h[k] * z;
        }
        mean += pr * u;
        second += pr * u.cwiseAbs2();
    }
    return (second - mean.cwiseAbs2()).sum();
}

/// Central finite difference of f at x along coordinate i.
inline double central_difference(const std::function<double(const std::vector<double>&)>& f,
                                 std::vector<double> x, std::size_t i, double step) {
    const double x0 = x[i];
    x[i] = x0 + step;
    const double fp = f(x);
    x[i] = x0 - step;
    const double fm = f(x);
    return (fp - fm) / (2.0 * step);
}

/// Central-difference gradient of `cost` w.r.t. every entry of the tensor.
/// `five_point` selects the fourth-order stencil
/// (-f(w+2h) + 8 f(w+h) - 8 f(w-h) + f(w-2h)) / 12h.
inline std::vector<double> finite_difference_gradient(const std::function<double(const FilterTensor&)>& cost,
                                                      const FilterTensor& at, double step, bool five_point = false) {
    std::vector<double> g(at.size());
    FilterTensor probe = at;
    auto eval = [&](std::size_t i, double w) {
        probe.data()[i] = w;
        return cost(probe);
    };
    for (std::size_t i = 0; i < at.size(); ++i) {
        const double w = at.data()[i];
        if (five_point) {
            const double d = -eval(i, w + 2.0 * step) + 8.0 * eval(i, w + step) - 8.0 * eval(i, w - step) +
                             eval(i, w - 2.0 * step);
            g[i] = d / (12.0 * step);
        } else {
            g[i] = (eval(i, w + step) - eval(i, w - step)) / (2.0 * step);
        }
        probe.data()[i] = w;
    }
    return g;
}

/// Largest entrywise relative error |a - b| / max(|a|, |b|, floor).
inline double max_relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-6) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(a[i] - b[i]) / std::max({std::abs(a[i]), std::abs(b[i]), floor}));
    return worst;
}

}  // namespace sgnn::verify

#endif  // SGNN_VERIFICATION_HPP
