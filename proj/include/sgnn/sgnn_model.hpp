#ifndef SGNN_SGNN_MODEL_HPP
#define SGNN_SGNN_MODEL_HPP

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <istream>
#include <memory>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "sgnn/errors.hpp"
#include "sgnn/graph_core.hpp"
#include "sgnn/rng.hpp"
#include "sgnn/types.hpp"

namespace sgnn {

enum class Nonlinearity { ReLU, Abs, Tanh, Identity };

inline std::string_view to_string(Nonlinearity s) {
    switch (s) {
        case Nonlinearity::ReLU: return "relu";
        case Nonlinearity::Abs: return "abs";
        case Nonlinearity::Tanh: return "tanh";
        case Nonlinearity::Identity: return "identity";
    }
    return "unknown";
}

inline Nonlinearity parse_nonlinearity(std::string_view name) {
    if (name == "relu") return Nonlinearity::ReLU;
    if (name == "abs") return Nonlinearity::Abs;
    if (name == "tanh") return Nonlinearity::Tanh;
    if (name == "identity") return Nonlinearity::Identity;
    throw InvalidConfig("unknown nonlinearity '" + std::string(name) + "'");
}

/// Lipschitz constant shared by every supported nonlinearity.
inline constexpr double kNonlinearityLipschitz = 1.0;

inline double activate(Nonlinearity kind, double x) {
    switch (kind) {
        case Nonlinearity::ReLU: return x > 0.0 ? x : 0.0;
        case Nonlinearity::Abs: return std::abs(x);
        case Nonlinearity::Tanh: return std::tanh(x);
        case Nonlinearity::Identity: return x;
    }
    return x;
}

// Subgradient 0 at the ReLU/Abs kink.
inline double activate_derivative(Nonlinearity kind, double x) {
    switch (kind) {
        case Nonlinearity::ReLU: return x > 0.0 ? 1.0 : 0.0;
        case Nonlinearity::Abs: return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
        case Nonlinearity::Tanh: {
            const double t = std::tanh(x);
            return 1.0 - t * t;
        }
        case Nonlinearity::Identity: return 1.0;
    }
    return 1.0;
}

inline Matrix apply_nonlinearity(Nonlinearity kind, const Matrix& u) {
    return u.unaryExpr([kind](double v) { return activate(kind, v); });
}

inline Matrix nonlinearity_derivative(Nonlinearity kind, const Matrix& u) {
    return u.unaryExpr([kind](double v) { return activate_derivative(kind, v); });
}

/// Output head applied after the last filter bank.
enum class Readout {
    None,            // node-level outputs are the model output
    NodeMeanLinear,  // average each feature over nodes, then a linear map to class logits
    NodeLinear,      // the same linear map applied at every node (regression outputs)
    NodeSelectLinear,  // features of one designated node, then a linear map to class logits
};

inline std::string_view to_string(Readout r) {
    switch (r) {
        case Readout::None: return "none";
        case Readout::NodeMeanLinear: return "node_mean_linear";
        case Readout::NodeLinear: return "node_linear";
        case Readout::NodeSelectLinear: return "node_select_linear";
    }
    return "unknown";
}

struct SgnnConfig {
    std::size_t layers = 2;
    std::size_t features = 2;
    std::size_t order = 2;
    Nonlinearity nonlinearity = Nonlinearity::ReLU;
    std::size_t in_features = 1;
    std::size_t out_features = 1;
    Readout readout = Readout::None;
    std::size_t readout_outputs = 0;
    std::size_t readout_node = 0;  // NodeSelectLinear only

    void validate() const {
        if (layers < 1) throw InvalidConfig("SgnnConfig: need at least one layer");
        if (features < 1 || in_features < 1 || out_features < 1)
            throw InvalidConfig("SgnnConfig: feature counts must be positive");
        if (readout != Readout::None && readout_outputs < 1)
            throw InvalidConfig("SgnnConfig: readout needs at least one output");
    }

    [[nodiscard]] std::size_t layer_inputs(std::size_t l) const { return l == 0 ? in_features : features; }
    [[nodiscard]] std::size_t layer_outputs(std::size_t l) const { return l + 1 == layers ? out_features : features; }

    [[nodiscard]] std::size_t filter_count() const {
        std::size_t total = 0;
        for (std::size_t l = 0; l < layers; ++l) total += layer_inputs(l) * layer_outputs(l);
        return total;
    }

    /// Number of sampled shift operators in one forward pass.
    [[nodiscard]] std::size_t num_shifts() const { return filter_count() * order; }

    [[nodiscard]] std::size_t num_taps() const { return filter_count() * (order + 1); }

    [[nodiscard]] std::size_t head_size() const {
        return readout == Readout::None ? 0 : readout_outputs * (out_features + 1);
    }

    /// Index of filter (l, f, g) in layer-major, out-feature, in-feature order.
    [[nodiscard]] std::size_t filter_index(std::size_t l, std::size_t f, std::size_t g) const {
        std::size_t base = 0;
        for (std::size_t i = 0; i < l; ++i) base += layer_inputs(i) * layer_outputs(i);
        return base + f * layer_inputs(l) + g;
    }
};

/// All trainable parameters: filter taps followed by the readout head.
///
/// Flat layout: taps of filter i occupy [i*(K+1), (i+1)*(K+1)); the head
/// weight matrix (readout_outputs x out_features, row-major) and its bias
/// follow.
class FilterTensor {
public:
    FilterTensor() = default;
    explicit FilterTensor(SgnnConfig cfg) : cfg_(cfg), data_(cfg.num_taps() + cfg.head_size(), 0.0) {
        cfg_.validate();
    }

    [[nodiscard]] const SgnnConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
    [[nodiscard]] std::vector<double>& data() noexcept { return data_; }
    [[nodiscard]] const std::vector<double>& data() const noexcept { return data_; }

    double& tap(std::size_t l, std::size_t f, std::size_t g, std::size_t k) {
        return data_[cfg_.filter_index(l, f, g) * (cfg_.order + 1) + k];
    }
    [[nodiscard]] double tap(std::size_t l, std::size_t f, std::size_t g, std::size_t k) const {
        return data_[cfg_.filter_index(l, f, g) * (cfg_.order + 1) + k];
    }

    [[nodiscard]] FilterCoeffs filter(std::size_t index) const {
        const auto first = data_.begin() + static_cast<std::ptrdiff_t>(index * (cfg_.order + 1));
        return FilterCoeffs(std::vector<double>(first, first + static_cast<std::ptrdiff_t>(cfg_.order + 1)));
    }

    double& head_weight(std::size_t o, std::size_t f) { return data_[cfg_.num_taps() + o * cfg_.out_features + f]; }
    [[nodiscard]] double head_weight(std::size_t o, std::size_t f) const {
        return data_[cfg_.num_taps() + o * cfg_.out_features + f];
    }
    double& head_bias(std::size_t o) {
        return data_[cfg_.num_taps() + cfg_.readout_outputs * cfg_.out_features + o];
    }
    [[nodiscard]] double head_bias(std::size_t o) const {
        return data_[cfg_.num_taps() + cfg_.readout_outputs * cfg_.out_features + o];
    }

    [[nodiscard]] double norm() const {
        double s = 0.0;
        for (double v : data_) s += v * v;
        return std::sqrt(s);
    }

    friend bool operator==(const FilterTensor& a, const FilterTensor& b) { return a.data_ == b.data_; }

private:
    SgnnConfig cfg_{};
    std::vector<double> data_;
};

/// Taps i.i.d. uniform(-scale, scale); head weights uniform(+-1/sqrt(F_out)), zero bias.
inline FilterTensor init_tensor(const SgnnConfig& cfg, Rng& rng, double scale) {
    if (!(scale > 0.0)) throw InvalidConfig("init_tensor: scale must be positive");
    FilterTensor t(cfg);
    auto& d = t.data();
    for (std::size_t i = 0; i < cfg.num_taps(); ++i) d[i] = rng.uniform(-scale, scale);
    const double head_scale = 1.0 / std::sqrt(static_cast<double>(cfg.out_features));
    for (std::size_t o = 0; o < cfg.readout_outputs && cfg.readout != Readout::None; ++o)
        for (std::size_t f = 0; f < cfg.out_features; ++f) t.head_weight(o, f) = rng.uniform(-head_scale, head_scale);
    return t;
}

/// The shift sequences fixing one stochastic forward pass: one length-K sequence per filter.
struct RealizationSet {
    double p = 1.0;
    std::vector<std::vector<ShiftRealization>> sequences;

    [[nodiscard]] std::size_t total_shifts() const {
        std::size_t total = 0;
        for (const auto& s : sequences) total += s.size();
        return total;
    }
};

/// Draw every filter's shift sequence from its own child stream of `rng`.
inline RealizationSet sample_architecture(const std::shared_ptr<const ShiftOperator>& base, double p,
                                          const SgnnConfig& cfg, const Rng& rng) {
    check_probability(p, "sample_architecture");
    RealizationSet set;
    set.p = p;
    set.sequences.resize(cfg.filter_count());
    for (std::size_t i = 0; i < set.sequences.size(); ++i) {
        Rng stream = rng.split(i);
        auto& seq = set.sequences[i];
        seq.reserve(cfg.order);
        for (std::size_t k = 0; k < cfg.order; ++k) seq.push_back(sample_res(base, p, stream));
    }
    return set;
}

/// One matrix (N x B) per feature; column b belongs to sample b of the batch.
using FeatureBatch = std::vector<Matrix>;

/// Activations retained for the backward pass.
struct ForwardCache {
    struct Layer {
        // diffusion[filter_local][k] = S_k ... S_1 x_{l-1}^g
        std::vector<std::vector<Matrix>> diffusion;
        FeatureBatch pre;   // u_l^f
        FeatureBatch post;  // x_l^f = sigma(u_l^f)
    };
    FeatureBatch input;
    std::vector<Layer> layers;
    std::size_t batch = 0;
};

namespace detail {

inline void check_input(const SgnnConfig& cfg, const FeatureBatch& x) {
    if (x.size() != cfg.in_features)
        throw InvalidInput("forward: expected " + std::to_string(cfg.in_features) + " input features, got " +
                           std::to_string(x.size()));
    for (const auto& m : x)
        if (m.rows() != x.front().rows() || m.cols() != x.front().cols())
            throw InvalidInput("forward: input features have inconsistent shapes");
}

/// Readout applied to the last layer's outputs.
inline FeatureBatch apply_head(const FilterTensor& h, const FeatureBatch& last) {
    const SgnnConfig& cfg = h.config();
    switch (cfg.readout) {
        case Readout::None: return last;
        case Readout::NodeMeanLinear: {
            const Eigen::Index batch = last.front().cols();
            Matrix logits(static_cast<Eigen::Index>(cfg.readout_outputs), batch);
            for (std::size_t o = 0; o < cfg.readout_outputs; ++o) {
                Eigen::RowVectorXd row = Eigen::RowVectorXd::Constant(batch, h.head_bias(o));
                for (std::size_t f = 0; f < cfg.out_features; ++f)
                    row += h.head_weight(o, f) * last[f].colwise().mean();
                logits.row(static_cast<Eigen::Index>(o)) = row;
            }
            return {logits};
        }
        case Readout::NodeSelectLinear: {
            const auto node = static_cast<Eigen::Index>(cfg.readout_node);
            if (node >= last.front().rows()) throw InvalidInput("readout node outside the graph");
            const Eigen::Index batch = last.front().cols();
            Matrix logits(static_cast<Eigen::Index>(cfg.readout_outputs), batch);
            for (std::size_t o = 0; o < cfg.readout_outputs; ++o) {
                Eigen::RowVectorXd row = Eigen::RowVectorXd::Constant(batch, h.head_bias(o));
                for (std::size_t f = 0; f < cfg.out_features; ++f) row += h.head_weight(o, f) * last[f].row(node);
                logits.row(static_cast<Eigen::Index>(o)) = row;
            }
            return {logits};
        }
        case Readout::NodeLinear: {
            FeatureBatch out;
            for (std::size_t o = 0; o < cfg.readout_outputs; ++o) {
                Matrix m = Matrix::Constant(last.front().rows(), last.front().cols(), h.head_bias(o));
                for (std::size_t f = 0; f < cfg.out_features; ++f) m += h.head_weight(o, f) * last[f];
                out.push_back(std::move(m));
            }
            return out;
        }
    }
    return last;
}

/// Shared forward over an arbitrary shift provider shift(filter_index, k) for k in 1..K.
template <class ShiftFn>
FeatureBatch forward_impl(const FilterTensor& h, const FeatureBatch& x, ShiftFn&& shift, ForwardCache* cache) {
    const SgnnConfig& cfg = h.config();
    check_input(cfg, x);
    if (cache) {
        cache->input = x;
        cache->layers.assign(cfg.layers, {});
        cache->batch = static_cast<std::size_t>(x.front().cols());
    }
    FeatureBatch current = x;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        const std::size_t fin = cfg.layer_inputs(l);
        const std::size_t fout = cfg.layer_outputs(l);
        FeatureBatch pre(fout, Matrix::Zero(current.front().rows(), current.front().cols()));
        ForwardCache::Layer* layer = cache ? &cache->layers[l] : nullptr;
        if (layer) layer->diffusion.resize(fin * fout);
        for (std::size_t f = 0; f < fout; ++f) {
            for (std::size_t g = 0; g < fin; ++g) {
                const std::size_t idx = cfg.filter_index(l, f, g);
                Matrix z = current[g];
                pre[f] += h.tap(l, f, g, 0) * z;
                std::vector<Matrix>* diff = layer ? &layer->diffusion[f * fin + g] : nullptr;
                if (diff) {
                    diff->reserve(cfg.order + 1);
                    diff->push_back(z);
                }
                for (std::size_t k = 1; k <= cfg.order; ++k) {
                    z = shift(idx, k) * z;
                    pre[f] += h.tap(l, f, g, k) * z;
                    if (diff) diff->push_back(z);
                }
            }
        }
        FeatureBatch post(fout);
        for (std::size_t f = 0; f < fout; ++f) post[f] = apply_nonlinearity(cfg.nonlinearity, pre[f]);
        if (layer) {
            layer->pre = pre;
            layer->post = post;
        }
        current = std::move(post);
    }
    return apply_head(h, current);
}

}  // namespace detail

/// Forward pass over a fixed realization set; fills `cache` when given.
inline FeatureBatch forward(const FilterTensor& h, const RealizationSet& reals, const FeatureBatch& x,
                            ForwardCache* cache = nullptr) {
    const SgnnConfig& cfg = h.config();
    if (reals.sequences.size() != cfg.filter_count())
        throw InvalidInput("forward: realization set has " + std::to_string(reals.sequences.size()) +
                           " sequences, model needs " + std::to_string(cfg.filter_count()));
    for (const auto& seq : reals.sequences) {
        if (seq.size() != cfg.order) throw InvalidInput("forward: sequence length differs from filter order");
        for (const auto& r : seq)
            if (!x.empty() && r.mat.rows() != x.front().rows())
                throw InvalidInput("forward: graph size differs from signal length");
    }
    return detail::forward_impl(
        h, x, [&](std::size_t idx, std::size_t k) -> const Matrix& { return reals.sequences[idx][k - 1].mat; },
        cache);
}

/// Single-signal convenience: x is N x F_in.
inline Matrix forward_single(const FilterTensor& h, const RealizationSet& reals, const Matrix& x) {
    FeatureBatch in;
    for (Eigen::Index g = 0; g < x.cols(); ++g) in.push_back(x.col(g));
    const FeatureBatch out = forward(h, reals, in);
    Matrix y(out.front().rows(), static_cast<Eigen::Index>(out.size()));
    for (std::size_t o = 0; o < out.size(); ++o) y.col(static_cast<Eigen::Index>(o)) = out[o].col(0);
    return y;
}

/// Forward pass with every stochastic filter replaced by its counterpart on S_bar = p S.
inline FeatureBatch forward_on_shift(const FilterTensor& h, const Matrix& shift, const FeatureBatch& x,
                                     ForwardCache* cache = nullptr) {
    if (!x.empty() && shift.rows() != x.front().rows()) throw InvalidInput("forward: graph size differs from signal length");
    return detail::forward_impl(h, x, [&](std::size_t, std::size_t) -> const Matrix& { return shift; }, cache);
}

inline FeatureBatch forward_expected(const FilterTensor& h, const ShiftOperator& base, double p, const FeatureBatch& x) {
    check_probability(p, "forward_expected");
    return forward_on_shift(h, expected_shift(base, p), x);
}

// Checkpoint: "SGNNCKPT" magic, u32 version, nine u64 fields
// (L, F, K, F_in, F_out, readout_outputs, readout_node, nonlinearity, readout), u64 shift kind,
// u64 tap count, then the taps as little-endian IEEE-754 doubles.
namespace detail {

inline void put_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t get_u64(std::istream& in) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) throw InvalidInput("checkpoint: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace detail

inline constexpr char kCheckpointMagic[8] = {'S', 'G', 'N', 'N', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 2;

inline void save_checkpoint(const FilterTensor& h, ShiftKind kind, std::ostream& out) {
    const SgnnConfig& c = h.config();
    out.write(kCheckpointMagic, 8);
    const std::uint32_t version = kCheckpointVersion;
    for (int i = 0; i < 4; ++i) out.put(static_cast<char>((version >> (8 * i)) & 0xFF));
    for (std::uint64_t v : {std::uint64_t{c.layers}, std::uint64_t{c.features}, std::uint64_t{c.order},
                            std::uint64_t{c.in_features}, std::uint64_t{c.out_features},
                            std::uint64_t{c.readout_outputs}, std::uint64_t{c.readout_node}, static_cast<std::uint64_t>(c.nonlinearity),
                            static_cast<std::uint64_t>(c.readout), static_cast<std::uint64_t>(kind),
                            std::uint64_t{h.size()}})
        detail::put_u64(out, v);
    for (double d : h.data()) detail::put_u64(out, std::bit_cast<std::uint64_t>(d));
}

struct Checkpoint {
    FilterTensor tensor;
    ShiftKind kind = ShiftKind::Adjacency;
};

inline Checkpoint load_checkpoint(std::istream& in) {
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw InvalidInput("checkpoint: bad magic");
    std::uint32_t version = 0;
    for (int i = 0; i < 4; ++i) {
        const int c = in.get();
        if (c == EOF) throw InvalidInput("checkpoint: truncated file");
        version |= static_cast<std::uint32_t>(c & 0xFF) << (8 * i);
    }
    if (version != kCheckpointVersion) throw InvalidInput("checkpoint: unsupported version");
    SgnnConfig cfg;
    cfg.layers = detail::get_u64(in);
    cfg.features = detail::get_u64(in);
    cfg.order = detail::get_u64(in);
    cfg.in_features = detail::get_u64(in);
    cfg.out_features = detail::get_u64(in);
    cfg.readout_outputs = detail::get_u64(in);
    cfg.readout_node = detail::get_u64(in);
    const auto nl = detail::get_u64(in);
    const auto ro = detail::get_u64(in);
    const auto kind = detail::get_u64(in);
    if (nl > 3 || ro > 3 || kind > 2) throw InvalidInput("checkpoint: bad enum field");
    cfg.nonlinearity = static_cast<Nonlinearity>(nl);
    cfg.readout = static_cast<Readout>(ro);
    Checkpoint ck{FilterTensor(cfg), static_cast<ShiftKind>(kind)};
    const auto count = detail::get_u64(in);
    if (count != ck.tensor.size()) throw InvalidInput("checkpoint: tap count does not match header");
    for (auto& d : ck.tensor.data()) d = std::bit_cast<double>(detail::get_u64(in));
    return ck;
}

}  // namespace sgnn

#endif  // SGNN_SGNN_MODEL_HPP
