#ifndef SGNN_STOCHASTIC_FILTER_HPP
#define SGNN_STOCHASTIC_FILTER_HPP

#include <cstddef>
#include <ostream>
#include <span>
#include <vector>

#include "sgnn/errors.hpp"
#include "sgnn/graph_core.hpp"
#include "sgnn/spectral.hpp"
#include "sgnn/types.hpp"

namespace sgnn {

/// x^(0) = x and x^(k) = S_k x^(k-1) for the K realizations of one filter.
struct DiffusionTrace {
    std::vector<Vector> xs;
    std::vector<ShiftRealization> realizations;
};

namespace detail {

inline void check_chain(std::span<const ShiftRealization> reals, Eigen::Index n) {
    for (const auto& r : reals) {
        if (!r.base) throw InvalidInput("realization has no base graph");
        if (r.base != reals.front().base && r.base->edges() != reals.front().base->edges())
            throw InvalidInput("realizations are drawn from different base graphs");
        if (r.mat.rows() != n) throw InvalidInput("signal length does not match graph size");
    }
}

}  // namespace detail

inline DiffusionTrace diffuse(const Vector& x, std::span<const ShiftRealization> reals) {
    detail::check_chain(reals, x.size());
    DiffusionTrace t;
    t.xs.reserve(reals.size() + 1);
    t.xs.push_back(x);
    for (const auto& r : reals) t.xs.push_back(r.mat * t.xs.back());
    t.realizations.assign(reals.begin(), reals.end());
    return t;
}

/// u = sum_k h_k S_k ... S_1 x.
inline Vector apply_filter(const FilterCoeffs& h, std::span<const ShiftRealization> reals, const Vector& x) {
    if (reals.size() != h.order())
        throw InvalidInput("apply_filter: filter of order " + std::to_string(h.order()) + " needs " +
                           std::to_string(h.order()) + " realizations");
    detail::check_chain(reals, x.size());
    Vector z = x;
    Vector u = h.taps.empty() ? Vector::Zero(x.size()) : Vector(h[0] * x);
    for (std::size_t k = 1; k < h.size(); ++k) {
        z = reals[k - 1].mat * z;
        u += h[k] * z;
    }
    return u;
}

/// H(S) x by repeated multiplication; S^k is never formed.
inline Vector apply_deterministic(const FilterCoeffs& h, const Matrix& s, const Vector& x) {
    if (s.rows() != x.size() || s.cols() != x.size()) throw InvalidInput("apply_deterministic: dimension mismatch");
    Vector z = x;
    Vector u = h.taps.empty() ? Vector::Zero(x.size()) : Vector(h[0] * x);
    for (std::size_t k = 1; k < h.size(); ++k) {
        z = s * z;
        u += h[k] * z;
    }
    return u;
}

/// One value sent over a surviving link during a diffusion round.
struct Message {
    std::size_t round;
    std::size_t sender;
    std::size_t receiver;
    double value;
};

/// Node-local evaluation of the stochastic filter by synchronous message passing.
///
/// Each node knows only its incident base edges (with weights), which of them
/// survive in round k, its own state, and the messages it receives. In round k
/// every node sends x_i^(k-1) over each surviving incident link and forms
/// x_i^(k) from its inbox; the output u_i = sum_k h_k x_i^(k) is accumulated
/// locally. Every message is appended to `log` when one is supplied.
inline Vector apply_distributed(const FilterCoeffs& h, std::span<const ShiftRealization> reals, const Vector& x,
                                std::vector<Message>* log = nullptr) {
    if (reals.size() != h.order()) throw InvalidInput("apply_distributed: realization count must equal filter order");
    detail::check_chain(reals, x.size());
    const auto n = static_cast<std::size_t>(x.size());

    struct Link {
        std::size_t edge;
        std::size_t peer;
        double weight;
    };
    struct Node {
        std::vector<Link> links;
        double state = 0.0;
        double output = 0.0;
    };

    std::vector<Node> nodes(n);
    ShiftKind kind = ShiftKind::Adjacency;
    if (!reals.empty()) {
        const ShiftOperator& base = *reals.front().base;
        kind = base.kind();
        for (std::size_t e = 0; e < base.num_edges(); ++e) {
            const auto [i, j] = base.edges()[e];
            nodes[i].links.push_back({e, j, base.weights()[e]});
            nodes[j].links.push_back({e, i, base.weights()[e]});
        }
    }
    const double h0 = h.taps.empty() ? 0.0 : h[0];
    for (std::size_t i = 0; i < n; ++i) {
        nodes[i].state = x(static_cast<Eigen::Index>(i));
        nodes[i].output = h0 * nodes[i].state;
    }

    struct Inbound {
        std::size_t sender;
        std::size_t edge;
        double value;
    };
    std::vector<std::vector<Inbound>> inbox(n);
    for (std::size_t k = 1; k <= reals.size(); ++k) {
        const auto& keep = reals[k - 1].keep;
        for (auto& box : inbox) box.clear();
        for (std::size_t i = 0; i < n; ++i) {
            for (const Link& l : nodes[i].links) {
                if (!keep[l.edge]) continue;
                inbox[l.peer].push_back({i, l.edge, nodes[i].state});
                if (log) log->push_back({k, i, l.peer, nodes[i].state});
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            Node& node = nodes[i];
            double next = 0.0;
            for (const Inbound& m : inbox[i]) {
                double w = 0.0;
                for (const Link& l : node.links)
                    if (l.edge == m.edge) w = l.weight;
                if (kind == ShiftKind::Laplacian) {
                    next += w * (node.state - m.value);
                } else {
                    next += w * m.value;
                }
            }
            node.state = next;
        }
        for (auto& node : nodes) node.output += h[k] * node.state;
    }

    Vector u(x.size());
    for (std::size_t i = 0; i < n; ++i) u(static_cast<Eigen::Index>(i)) = nodes[i].output;
    return u;
}

inline void write_message_trace_csv(std::span<const Message> log, std::ostream& out) {
    out << "round,sender,receiver,value\n";
    out.precision(17);
    for (const auto& m : log) out << m.round << ',' << m.sender << ',' << m.receiver << ',' << m.value << '\n';
}

}  // namespace sgnn

#endif  // SGNN_STOCHASTIC_FILTER_HPP
