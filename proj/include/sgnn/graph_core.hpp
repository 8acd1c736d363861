#ifndef SGNN_GRAPH_CORE_HPP
#define SGNN_GRAPH_CORE_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <istream>
#include <memory>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sgnn/errors.hpp"
#include "sgnn/rng.hpp"
#include "sgnn/spectral.hpp"
#include "sgnn/types.hpp"

namespace sgnn {

enum class ShiftKind { Adjacency, Laplacian, NormalizedAdjacency };

inline std::string_view to_string(ShiftKind kind) {
    switch (kind) {
        case ShiftKind::Adjacency: return "adjacency";
        case ShiftKind::Laplacian: return "laplacian";
        case ShiftKind::NormalizedAdjacency: return "normalized_adjacency";
    }
    return "unknown";
}

inline ShiftKind parse_shift_kind(std::string_view name) {
    if (name == "adjacency" || name == "A") return ShiftKind::Adjacency;
    if (name == "laplacian" || name == "L") return ShiftKind::Laplacian;
    if (name == "normalized_adjacency" || name == "N") return ShiftKind::NormalizedAdjacency;
    throw InvalidConfig("unknown shift kind '" + std::string(name) + "'");
}

using Edge = std::pair<std::size_t, std::size_t>;

/// Dense symmetric graph shift operator together with its undirected edge list.
///
/// `weights` holds the edge weight of the matrix off-diagonal (1 for adjacency
/// and Laplacian, 1/lambda_max for the normalized adjacency); realizations are
/// rebuilt from it.
class ShiftOperator {
public:
    ShiftOperator() = default;

    /// Unweighted adjacency from an edge list. Pairs are normalized to i<j and deduplicated.
    static ShiftOperator from_edges(std::size_t n, std::vector<Edge> edges) {
        for (auto& [i, j] : edges) {
            if (i >= n || j >= n) throw InvalidInput("edge endpoint out of range");
            if (i == j) throw InvalidInput("self-loops are not allowed");
            if (i > j) std::swap(i, j);
        }
        std::sort(edges.begin(), edges.end());
        edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
        ShiftOperator s;
        s.n_ = n;
        s.kind_ = ShiftKind::Adjacency;
        s.edges_ = std::move(edges);
        s.weights_.assign(s.edges_.size(), 1.0);
        s.mat_ = assemble(n, ShiftKind::Adjacency, s.edges_, s.weights_, nullptr);
        return s;
    }

    [[nodiscard]] std::size_t n() const noexcept { return n_; }
    [[nodiscard]] std::size_t num_edges() const noexcept { return edges_.size(); }
    [[nodiscard]] ShiftKind kind() const noexcept { return kind_; }
    [[nodiscard]] const Matrix& mat() const noexcept { return mat_; }
    [[nodiscard]] const std::vector<Edge>& edges() const noexcept { return edges_; }
    [[nodiscard]] const std::vector<double>& weights() const noexcept { return weights_; }

    /// Shift matrix of the sub-graph keeping edge e iff keep[e] != 0.
    [[nodiscard]] Matrix masked(const std::vector<unsigned char>& keep) const {
        return assemble(n_, kind_, edges_, weights_, &keep);
    }

    /// Node degrees (unweighted count of incident edges).
    [[nodiscard]] std::vector<std::size_t> degrees() const {
        std::vector<std::size_t> d(n_, 0);
        for (const auto& [i, j] : edges_) {
            ++d[i];
            ++d[j];
        }
        return d;
    }

private:
    friend ShiftOperator to_shift(const ShiftOperator& adj, ShiftKind kind);

    static Matrix assemble(std::size_t n, ShiftKind kind, const std::vector<Edge>& edges,
                           const std::vector<double>& weights, const std::vector<unsigned char>* keep) {
        const auto nn = static_cast<Eigen::Index>(n);
        Matrix m = Matrix::Zero(nn, nn);
        for (std::size_t e = 0; e < edges.size(); ++e) {
            if (keep && !(*keep)[e]) continue;
            const auto i = static_cast<Eigen::Index>(edges[e].first);
            const auto j = static_cast<Eigen::Index>(edges[e].second);
            const double w = weights[e];
            if (kind == ShiftKind::Laplacian) {
                m(i, j) -= w;
                m(j, i) -= w;
                m(i, i) += w;
                m(j, j) += w;
            } else {
                m(i, j) = w;
                m(j, i) = w;
            }
        }
        return m;
    }

    std::size_t n_ = 0;
    ShiftKind kind_ = ShiftKind::Adjacency;
    Matrix mat_;
    std::vector<Edge> edges_;
    std::vector<double> weights_;
};

/// Convert an adjacency operator to the requested kind.
inline ShiftOperator to_shift(const ShiftOperator& adj, ShiftKind kind) {
    if (adj.kind() != ShiftKind::Adjacency) throw InvalidInput("to_shift: input must be an adjacency");
    ShiftOperator out = adj;
    out.kind_ = kind;
    if (kind == ShiftKind::NormalizedAdjacency) {
        const double lmax = adj.num_edges() == 0 ? 0.0 : eig_sym(adj.mat()).values.maxCoeff();
        if (!(lmax > 0.0)) throw DegenerateInput("to_shift: lambda_max(A) = 0, cannot normalize");
        for (auto& w : out.weights_) w /= lmax;
    }
    out.mat_ = ShiftOperator::assemble(out.n_, kind, out.edges_, out.weights_, nullptr);
    return out;
}

/// One RES(G, p) draw: the surviving edges and the realized shift.
struct ShiftRealization {
    std::shared_ptr<const ShiftOperator> base;
    double p = 1.0;
    std::vector<unsigned char> keep;  // per edge of base, in base.edges() order
    Matrix mat;

    /// Symmetric 0/1 mask over the edge support of the base graph.
    [[nodiscard]] Matrix mask() const {
        const auto nn = static_cast<Eigen::Index>(base->n());
        Matrix m = Matrix::Zero(nn, nn);
        for (std::size_t e = 0; e < keep.size(); ++e) {
            if (!keep[e]) continue;
            const auto [i, j] = base->edges()[e];
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = 1.0;
            m(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = 1.0;
        }
        return m;
    }
};

inline void check_probability(double p, const char* what) {
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidConfig(std::string(what) + ": probability must lie in [0, 1]");
}

/// Stochastic block model adjacency with `c` contiguous equal-size communities.
inline ShiftOperator build_sbm(std::size_t n, std::size_t c, double p_in, double p_out, Rng& rng) {
    if (c == 0 || n % c != 0) throw InvalidConfig("build_sbm: community count must divide node count");
    check_probability(p_in, "build_sbm");
    check_probability(p_out, "build_sbm");
    const std::size_t block = n / c;
    std::vector<Edge> edges;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (rng.bernoulli(i / block == j / block ? p_in : p_out)) edges.emplace_back(i, j);
    return ShiftOperator::from_edges(n, std::move(edges));
}

using Point2 = std::array<double, 2>;

/// Unweighted disc graph: edge (i, j) iff ||z_i - z_j|| <= radius.
inline ShiftOperator build_disc_graph(std::span<const Point2> positions, double radius) {
    if (!(radius > 0.0)) throw InvalidConfig("build_disc_graph: radius must be positive");
    std::vector<Edge> edges;
    const double r2 = radius * radius;
    for (std::size_t i = 0; i < positions.size(); ++i) {
        for (std::size_t j = i + 1; j < positions.size(); ++j) {
            const double dx = positions[i][0] - positions[j][0];
            const double dy = positions[i][1] - positions[j][1];
            if (!std::isfinite(dx) || !std::isfinite(dy)) throw InvalidInput("build_disc_graph: non-finite position");
            if (dx * dx + dy * dy <= r2) edges.emplace_back(i, j);
        }
    }
    return ShiftOperator::from_edges(positions.size(), std::move(edges));
}

/// Keep each base edge independently with probability p.
inline ShiftRealization sample_res(std::shared_ptr<const ShiftOperator> base, double p, Rng& rng) {
    check_probability(p, "sample_res");
    ShiftRealization r;
    r.p = p;
    r.keep.resize(base->num_edges());
    for (auto& k : r.keep) k = rng.bernoulli(p) ? 1 : 0;
    r.mat = base->masked(r.keep);
    r.base = std::move(base);
    return r;
}

inline ShiftRealization sample_res(const ShiftOperator& base, double p, Rng& rng) {
    return sample_res(std::make_shared<const ShiftOperator>(base), p, rng);
}

/// E[S_k] = p S for every kind (each construction is linear in the mask).
inline Matrix expected_shift(const ShiftOperator& base, double p) {
    check_probability(p, "expected_shift");
    return p * base.mat();
}

/// Closed form of E[S_k^2]: p^2 A^2 + p(1-p) D for adjacency, p^2 L^2 + 2p(1-p) L for Laplacian.
inline Matrix expected_shift_square(const ShiftOperator& base, double p) {
    check_probability(p, "expected_shift_square");
    const Matrix sbar = p * base.mat();
    const double q = p * (1.0 - p);
    switch (base.kind()) {
        case ShiftKind::Adjacency: {
            // d_i = sum_n s_in^2, the degree for an unweighted graph
            const Vector d = base.mat().cwiseAbs2().rowwise().sum();
            Matrix out = sbar * sbar;
            out.diagonal() += q * d;
            return out;
        }
        case ShiftKind::Laplacian: return sbar * sbar + 2.0 * q * base.mat();
        case ShiftKind::NormalizedAdjacency: break;
    }
    throw UnsupportedKind("expected_shift_square: closed form holds for adjacency and Laplacian only");
}

/// Edge-list text format: "N M kind" then M lines "i j" (0-based, i<j, lexicographic).
inline void save_edge_list(const ShiftOperator& s, std::ostream& out) {
    out << s.n() << ' ' << s.num_edges() << ' ' << to_string(s.kind()) << '\n';
    for (const auto& [i, j] : s.edges()) out << i << ' ' << j << '\n';
}

inline ShiftOperator load_edge_list(std::istream& in) {
    std::size_t n = 0;
    std::size_t m = 0;
    std::string kind;
    if (!(in >> n >> m >> kind)) throw InvalidInput("edge list: malformed header");
    std::vector<Edge> edges;
    edges.reserve(m);
    for (std::size_t e = 0; e < m; ++e) {
        std::size_t i = 0;
        std::size_t j = 0;
        if (!(in >> i >> j)) throw InvalidInput("edge list: expected " + std::to_string(m) + " edges");
        edges.emplace_back(i, j);
    }
    ShiftOperator adj = ShiftOperator::from_edges(n, std::move(edges));
    if (adj.num_edges() != m) throw InvalidInput("edge list: duplicate edges");
    const ShiftKind k = parse_shift_kind(kind);
    return k == ShiftKind::Adjacency ? adj : to_shift(adj, k);
}

}  // namespace sgnn

#endif  // SGNN_GRAPH_CORE_HPP
