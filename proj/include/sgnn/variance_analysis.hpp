#ifndef SGNN_VARIANCE_ANALYSIS_HPP
#define SGNN_VARIANCE_ANALYSIS_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sgnn/errors.hpp"
#include "sgnn/graph_core.hpp"
#include "sgnn/rng.hpp"
#include "sgnn/sgnn_model.hpp"
#include "sgnn/spectral.hpp"
#include "sgnn/stochastic_filter.hpp"
#include "sgnn/types.hpp"

namespace sgnn {

struct McEstimate {
    double variance = 0.0;   // sum over nodes of the unbiased per-node variance
    double std_error = 0.0;
    std::size_t n_samples = 0;
};

/// Monte-Carlo estimate of the total output variance sum_i var[y_i].
///
/// Sample s is produced by `evaluate(rng.split(s))`. The standard error uses
/// the per-sample centred energy q_s = ||y_s - mean||^2, whose mean times
/// n/(n-1) is the estimate; this keeps cross-node correlation in the error bar.
inline McEstimate mc_variance(const std::function<Vector(Rng&)>& evaluate, std::size_t n_samples, const Rng& rng) {
    if (n_samples < 2) throw InvalidInput("mc_variance: need at least two samples");
    std::vector<Vector> ys;
    ys.reserve(n_samples);
    for (std::size_t s = 0; s < n_samples; ++s) {
        Rng child = rng.split(s);
        ys.push_back(evaluate(child));
    }
    // shift by the first draw so identical samples cancel exactly
    const Vector origin = ys.front();
    for (auto& y : ys) y -= origin;
    Vector mean = Vector::Zero(origin.size());
    for (const auto& y : ys) mean += y;
    mean /= static_cast<double>(n_samples);
    const double n = static_cast<double>(n_samples);
    double sum_q = 0.0;
    double sum_q2 = 0.0;
    for (const auto& y : ys) {
        const double q = (y - mean).squaredNorm();
        sum_q += q;
        sum_q2 += q * q;
    }
    const double mean_q = sum_q / n;
    const double var_q = std::max(0.0, (sum_q2 / n - mean_q * mean_q) * n / (n - 1.0));
    McEstimate out;
    out.variance = sum_q / (n - 1.0);
    out.std_error = std::sqrt(var_q / n) * n / (n - 1.0);
    out.n_samples = n_samples;
    return out;
}

/// Exact total variance of the stochastic filter output by enumerating every
/// mask sequence, guarded to (2^M)^K <= 2^20 outcomes.
inline double exact_filter_variance(const FilterCoeffs& h, const ShiftOperator& base, double p, const Vector& x) {
    check_probability(p, "exact_filter_variance");
    if (x.size() != static_cast<Eigen::Index>(base.n())) throw InvalidInput("exact_filter_variance: dimension mismatch");
    const std::size_t m = base.num_edges();
    const std::size_t order = h.order();
    if (m * order > 20) throw SizeGuard("exact_filter_variance: (2^M)^K exceeds 2^20");
    if (p == 0.0 || p == 1.0 || order == 0) return 0.0;

    const std::uint64_t per = std::uint64_t{1} << m;
    std::vector<Matrix> shifts(per);
    std::vector<double> prob(per);
    for (std::uint64_t mask = 0; mask < per; ++mask) {
        std::vector<unsigned char> keep(m);
        double pr = 1.0;
        for (std::size_t e = 0; e < m; ++e) {
            keep[e] = (mask >> e) & 1U;
            pr *= keep[e] ? p : 1.0 - p;
        }
        shifts[mask] = base.masked(keep);
        prob[mask] = pr;
    }

    // Depth-first over mask sequences, carrying the diffusion state and partial output.
    struct Acc {
        Vector first;
        Vector second;
    };
    auto walk = [&](auto&& self, std::size_t k, const Vector& z, const Vector& u, double pr,
                    const Vector* mean, Acc& acc) -> void {
        if (k > order) {
            if (mean) {
                acc.second += pr * (u - *mean).cwiseAbs2();
            } else {
                acc.first += pr * u;
            }
            return;
        }
        for (std::uint64_t mask = 0; mask < per; ++mask) {
            if (prob[mask] == 0.0) continue;
            const Vector zk = shifts[mask] * z;
            self(self, k + 1, zk, u + h[k] * zk, pr * prob[mask], mean, acc);
        }
    };
    Acc acc{Vector::Zero(x.size()), Vector::Zero(x.size())};
    walk(walk, 1, x, h[0] * x, 1.0, nullptr, acc);
    const Vector mean = acc.first;
    walk(walk, 1, x, h[0] * x, 1.0, &mean, acc);
    return acc.second.sum();
}

/// Scalar alpha of the variance bounds: 1 for adjacency-type shifts, 2 for the Laplacian.
/// The normalized adjacency uses 1: masking commutes with the constant rescaling.
inline double shift_alpha(ShiftKind kind) { return kind == ShiftKind::Laplacian ? 2.0 : 1.0; }

/// First-order filter variance bound p(1-p) * 2 alpha M K C_g^2 * ||x||^2.
inline double prop1_bound(const FilterCoeffs& h, const ShiftOperator& base, double p, const Vector& x,
                          const AssumptionConstants& c) {
    check_probability(p, "prop1_bound");
    const double constant = 2.0 * shift_alpha(base.kind()) * static_cast<double>(base.num_edges()) *
                            static_cast<double>(h.order()) * c.c_g * c.c_g;
    return p * (1.0 - p) * constant * x.squaredNorm();
}

/// Architecture constant 2 alpha M sum_{l=1}^{L} F^{2L-3} C_sigma^{2l-2} C_U^{2L-2} K C_g^2.
inline double thm1_constant(const SgnnConfig& cfg, const ShiftOperator& base, const AssumptionConstants& c) {
    const double layers = static_cast<double>(cfg.layers);
    const double width = static_cast<double>(cfg.features);
    double arch = 0.0;
    for (std::size_t l = 1; l <= cfg.layers; ++l)
        arch += std::pow(width, 2.0 * layers - 3.0) * std::pow(c.c_sigma, 2.0 * static_cast<double>(l) - 2.0) *
                std::pow(c.c_u, 2.0 * layers - 2.0);
    return 2.0 * shift_alpha(base.kind()) * static_cast<double>(base.num_edges()) * arch *
           static_cast<double>(cfg.order) * c.c_g * c.c_g;
}

inline double thm1_bound(const SgnnConfig& cfg, const ShiftOperator& base, double p, const Vector& x,
                         const AssumptionConstants& c) {
    check_probability(p, "thm1_bound");
    return p * (1.0 - p) * thm1_constant(cfg, base, c) * x.squaredNorm();
}

/// C_U and C_G as the max over every filter of the tensor; C_sigma = 1.
inline AssumptionConstants tensor_constants(const FilterTensor& h, FrequencyDomain domain, std::size_t cg_samples,
                                            const Rng& rng) {
    AssumptionConstants c;
    c.domain = domain;
    c.c_sigma = kNonlinearityLipschitz;
    for (std::size_t i = 0; i < h.config().filter_count(); ++i) {
        const FilterCoeffs f = h.filter(i);
        Rng child = rng.split(i);
        c.c_u = std::max(c.c_u, estimate_cu(f, domain));
        c.c_g = std::max(c.c_g, estimate_cg(f, domain, cg_samples, child));
    }
    return c;
}

inline AssumptionConstants filter_constants(const FilterCoeffs& h, FrequencyDomain domain, std::size_t cg_samples,
                                            Rng& rng) {
    AssumptionConstants c;
    c.domain = domain;
    c.c_sigma = kNonlinearityLipschitz;
    c.c_u = estimate_cu(h, domain);
    c.c_g = estimate_cg(h, domain, cg_samples, rng);
    return c;
}

struct NonlinearityVariance {
    double var_in = 0.0;
    double var_out = 0.0;
    double se_in = 0.0;
    double se_out = 0.0;
};

/// Sample variances of x and sigma(x) over n draws from `sampler`.
inline NonlinearityVariance check_nonlinearity_variance(Nonlinearity kind, const std::function<double(Rng&)>& sampler,
                                                        std::size_t n, Rng& rng) {
    if (n < 1000) throw InvalidInput("check_nonlinearity_variance: need at least 1000 samples");
    std::vector<double> in(n);
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        in[i] = sampler(rng);
        out[i] = activate(kind, in[i]);
    }
    auto stats = [n](const std::vector<double>& v) {
        double mean = 0.0;
        for (double a : v) mean += a;
        mean /= static_cast<double>(n);
        double m2 = 0.0;
        double m4 = 0.0;
        for (double a : v) {
            const double d = (a - mean) * (a - mean);
            m2 += d;
            m4 += d * d;
        }
        const double dn = static_cast<double>(n);
        const double var = m2 / (dn - 1.0);
        const double mu4 = m4 / dn;
        const double pop = m2 / dn;
        const double se = std::sqrt(std::max(0.0, (mu4 - pop * pop) / dn));
        return std::pair{var, se};
    };
    const auto [vi, si] = stats(in);
    const auto [vo, so] = stats(out);
    return {vi, vo, si, so};
}

/// One row of a variance sweep.
struct VarianceReport {
    double p = 0.0;
    double mc_variance = 0.0;
    double mc_std_error = 0.0;
    double bound_first_order = 0.0;
    std::size_t n_samples = 0;
    double alpha = 1.0;
    std::size_t edges = 0;
    std::size_t order = 0;
    double c_g = 0.0;
    double c_u = 0.0;
    double c_sigma = 1.0;
    std::size_t layers = 1;
    std::size_t features = 1;
};

inline nlohmann::json to_json(const VarianceReport& r) {
    return {{"p", r.p},
            {"mc_variance", r.mc_variance},
            {"mc_std_error", r.mc_std_error},
            {"bound_first_order", r.bound_first_order},
            {"n_samples", r.n_samples},
            {"constants",
             {{"alpha", r.alpha},
              {"M", r.edges},
              {"K", r.order},
              {"c_g", r.c_g},
              {"c_u", r.c_u},
              {"c_sigma", r.c_sigma},
              {"L", r.layers},
              {"F", r.features}}}};
}

inline constexpr const char* kVarianceCsvHeader =
    "p,mc_variance,mc_std_error,bound_first_order,n_samples,alpha,M,K,c_g,c_u,c_sigma,L,F";

inline void write_csv_row(const VarianceReport& r, std::ostream& out) {
    out.precision(17);
    out << r.p << ',' << r.mc_variance << ',' << r.mc_std_error << ',' << r.bound_first_order << ',' << r.n_samples
        << ',' << r.alpha << ',' << r.edges << ',' << r.order << ',' << r.c_g << ',' << r.c_u << ',' << r.c_sigma
        << ',' << r.layers << ',' << r.features << '\n';
}

/// Monte-Carlo variance of the SGNN output at p next to the architecture bound.
inline VarianceReport sgnn_variance_report(const FilterTensor& h, const std::shared_ptr<const ShiftOperator>& base,
                                           double p, const Vector& x, const AssumptionConstants& c,
                                           std::size_t n_samples, const Rng& rng) {
    const SgnnConfig& cfg = h.config();
    const FeatureBatch in{Matrix(x)};
    const McEstimate mc = mc_variance(
        [&](Rng& r) -> Vector { return forward(h, sample_architecture(base, p, cfg, r), in).front().col(0); },
        n_samples, rng);
    VarianceReport rep;
    rep.p = p;
    rep.mc_variance = mc.variance;
    rep.mc_std_error = mc.std_error;
    rep.bound_first_order = thm1_bound(cfg, *base, p, x, c);
    rep.n_samples = n_samples;
    rep.alpha = shift_alpha(base->kind());
    rep.edges = base->num_edges();
    rep.order = cfg.order;
    rep.c_g = c.c_g;
    rep.c_u = c.c_u;
    rep.c_sigma = c.c_sigma;
    rep.layers = cfg.layers;
    rep.features = cfg.features;
    return rep;
}

}  // namespace sgnn

#endif  // SGNN_VARIANCE_ANALYSIS_HPP
