#ifndef SGNN_AUTOGRAD_TRAIN_HPP
#define SGNN_AUTOGRAD_TRAIN_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "sgnn/errors.hpp"
#include "sgnn/graph_core.hpp"
#include "sgnn/rng.hpp"
#include "sgnn/sgnn_model.hpp"
#include "sgnn/types.hpp"

namespace sgnn {

/// One supervised example. `x` is N x F_in; regression targets live in `y`
/// (N x outputs), classification targets in `label`. `graph`, when set,
/// replaces the training graph for this example.
struct Example {
    Matrix x;
    Matrix y;
    int label = -1;
    std::shared_ptr<const ShiftOperator> graph{};
};

enum class LossKind { MeanSquared, CrossEntropy };

/// Cost value and its gradient with respect to the model output.
struct LossValue {
    double value = 0.0;
    FeatureBatch grad;
};

/// Mean of squared differences over every entry.
inline double loss_mse(const Matrix& pred, const Matrix& target) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols()) throw InvalidInput("loss_mse: shape mismatch");
    if (pred.size() == 0) return 0.0;
    return (pred - target).squaredNorm() / static_cast<double>(pred.size());
}

/// -log softmax(logits)[label], via log-sum-exp.
inline double loss_cross_entropy(const Vector& logits, int label) {
    if (label < 0 || label >= logits.size()) throw InvalidInput("loss_cross_entropy: label out of range");
    const double m = logits.maxCoeff();
    const double lse = m + std::log((logits.array() - m).exp().sum());
    return lse - logits(label);
}

inline FeatureBatch stack_inputs(std::span<const Example> data, std::span<const std::size_t> idx) {
    if (idx.empty()) throw InvalidInput("empty batch");
    const Matrix& first = data[idx.front()].x;
    FeatureBatch out(static_cast<std::size_t>(first.cols()),
                     Matrix(first.rows(), static_cast<Eigen::Index>(idx.size())));
    for (std::size_t b = 0; b < idx.size(); ++b) {
        const Matrix& x = data[idx[b]].x;
        if (x.rows() != first.rows() || x.cols() != first.cols()) throw InvalidInput("batch examples differ in shape");
        for (std::size_t g = 0; g < out.size(); ++g)
            out[g].col(static_cast<Eigen::Index>(b)) = x.col(static_cast<Eigen::Index>(g));
    }
    return out;
}

/// Batch cost (mean over samples) and its gradient w.r.t. the model output.
inline LossValue evaluate_loss(LossKind kind, const FeatureBatch& out, std::span<const Example> data,
                               std::span<const std::size_t> idx) {
    LossValue lv;
    const auto batch = static_cast<double>(idx.size());
    if (kind == LossKind::CrossEntropy) {
        if (out.size() != 1) throw InvalidInput("cross-entropy needs a logits readout");
        const Matrix& logits = out.front();
        Matrix grad = Matrix::Zero(logits.rows(), logits.cols());
        for (std::size_t b = 0; b < idx.size(); ++b) {
            const auto col = static_cast<Eigen::Index>(b);
            const Vector z = logits.col(col);
            const int label = data[idx[b]].label;
            lv.value += loss_cross_entropy(z, label);
            const double m = z.maxCoeff();
            Vector e = (z.array() - m).exp();
            e /= e.sum();
            e(label) -= 1.0;
            grad.col(col) = e / batch;
        }
        lv.value /= batch;
        lv.grad = {grad};
        return lv;
    }
    const Eigen::Index n = out.front().rows();
    const double count = static_cast<double>(n) * static_cast<double>(out.size()) * batch;
    lv.grad.resize(out.size());
    for (std::size_t o = 0; o < out.size(); ++o) {
        Matrix target(n, static_cast<Eigen::Index>(idx.size()));
        for (std::size_t b = 0; b < idx.size(); ++b) {
            const Matrix& y = data[idx[b]].y;
            if (y.rows() != n || static_cast<std::size_t>(y.cols()) != out.size())
                throw InvalidInput("loss_mse: target shape mismatch");
            target.col(static_cast<Eigen::Index>(b)) = y.col(static_cast<Eigen::Index>(o));
        }
        const Matrix diff = out[o] - target;
        lv.value += diff.squaredNorm();
        lv.grad[o] = (2.0 / count) * diff;
    }
    lv.value /= count;
    return lv;
}

/// Exact gradient of the batch cost w.r.t. every tap, with the realizations held fixed.
template <class ShiftFn>
FilterTensor backward_impl(const FilterTensor& h, ShiftFn&& shift, const ForwardCache& cache,
                           const FeatureBatch& grad_out) {
    const SgnnConfig& cfg = h.config();
    if (cache.layers.size() != cfg.layers || cache.input.size() != cfg.in_features)
        throw InvalidInput("backward: stale or missing forward cache");
    FilterTensor grad(cfg);
    const FeatureBatch& last = cache.layers.back().post;

    // Readout head.
    FeatureBatch gx(cfg.out_features);
    switch (cfg.readout) {
        case Readout::None:
            if (grad_out.size() != cfg.out_features) throw InvalidInput("backward: output gradient shape");
            gx = grad_out;
            break;
        case Readout::NodeMeanLinear: {
            const Matrix& gl = grad_out.front();  // outputs x B
            const double n = static_cast<double>(last.front().rows());
            for (std::size_t f = 0; f < cfg.out_features; ++f) {
                const Eigen::RowVectorXd mean = last[f].colwise().mean();
                Eigen::RowVectorXd gmean = Eigen::RowVectorXd::Zero(mean.size());
                for (std::size_t o = 0; o < cfg.readout_outputs; ++o) {
                    const auto row = gl.row(static_cast<Eigen::Index>(o));
                    grad.head_weight(o, f) = row.dot(mean);
                    gmean += h.head_weight(o, f) * row;
                }
                gx[f] = (gmean / n).replicate(last[f].rows(), 1);
            }
            for (std::size_t o = 0; o < cfg.readout_outputs; ++o)
                grad.head_bias(o) = gl.row(static_cast<Eigen::Index>(o)).sum();
            break;
        }
        case Readout::NodeSelectLinear: {
            const Matrix& gl = grad_out.front();
            const auto node = static_cast<Eigen::Index>(cfg.readout_node);
            for (std::size_t f = 0; f < cfg.out_features; ++f) {
                gx[f] = Matrix::Zero(last[f].rows(), last[f].cols());
                for (std::size_t o = 0; o < cfg.readout_outputs; ++o) {
                    const auto row = gl.row(static_cast<Eigen::Index>(o));
                    grad.head_weight(o, f) = row.dot(last[f].row(node));
                    gx[f].row(node) += h.head_weight(o, f) * row;
                }
            }
            for (std::size_t o = 0; o < cfg.readout_outputs; ++o)
                grad.head_bias(o) = gl.row(static_cast<Eigen::Index>(o)).sum();
            break;
        }
        case Readout::NodeLinear: {
            for (std::size_t f = 0; f < cfg.out_features; ++f) {
                gx[f] = Matrix::Zero(last[f].rows(), last[f].cols());
                for (std::size_t o = 0; o < cfg.readout_outputs; ++o) {
                    grad.head_weight(o, f) = grad_out[o].cwiseProduct(last[f]).sum();
                    gx[f] += h.head_weight(o, f) * grad_out[o];
                }
            }
            for (std::size_t o = 0; o < cfg.readout_outputs; ++o) grad.head_bias(o) = grad_out[o].sum();
            break;
        }
    }

    for (std::size_t l = cfg.layers; l-- > 0;) {
        const auto& layer = cache.layers[l];
        const std::size_t fin = cfg.layer_inputs(l);
        const std::size_t fout = cfg.layer_outputs(l);
        FeatureBatch gu(fout);
        for (std::size_t f = 0; f < fout; ++f)
            gu[f] = gx[f].cwiseProduct(nonlinearity_derivative(cfg.nonlinearity, layer.pre[f]));

        FeatureBatch gin;
        if (l > 0) gin.assign(fin, Matrix::Zero(gu.front().rows(), gu.front().cols()));
        for (std::size_t f = 0; f < fout; ++f) {
            for (std::size_t g = 0; g < fin; ++g) {
                const auto& diff = layer.diffusion[f * fin + g];
                for (std::size_t k = 0; k <= cfg.order; ++k) grad.tap(l, f, g, k) = gu[f].cwiseProduct(diff[k]).sum();
                if (l == 0) continue;
                // sum_k h_k S_1^T ... S_k^T gu, reverse Horner
                const std::size_t idx = cfg.filter_index(l, f, g);
                Matrix v = h.tap(l, f, g, cfg.order) * gu[f];
                for (std::size_t k = cfg.order; k >= 1; --k)
                    v = shift(idx, k).transpose() * v + h.tap(l, f, g, k - 1) * gu[f];
                gin[g] += v;
            }
        }
        gx = std::move(gin);
    }
    return grad;
}

inline FilterTensor backward(const FilterTensor& h, const RealizationSet& reals, const ForwardCache& cache,
                             const FeatureBatch& grad_out) {
    return backward_impl(
        h, [&](std::size_t idx, std::size_t k) -> const Matrix& { return reals.sequences[idx][k - 1].mat; }, cache,
        grad_out);
}

struct CostGradient {
    double cost = 0.0;
    FilterTensor grad;
};

/// C(S_{P:1}, H) on a batch and its gradient under one fixed realization set.
inline CostGradient cost_and_gradient(const FilterTensor& h, const RealizationSet& reals, std::span<const Example> data,
                                      std::span<const std::size_t> idx, LossKind loss) {
    ForwardCache cache;
    const FeatureBatch in = stack_inputs(data, idx);
    const FeatureBatch out = forward(h, reals, in, &cache);
    const LossValue lv = evaluate_loss(loss, out, data, idx);
    return {lv.value, backward(h, reals, cache, lv.grad)};
}

inline double batch_cost(const FilterTensor& h, const RealizationSet& reals, std::span<const Example> data,
                         std::span<const std::size_t> idx, LossKind loss) {
    const FeatureBatch out = forward(h, reals, stack_inputs(data, idx));
    return evaluate_loss(loss, out, data, idx).value;
}

/// Batch cost and gradient with fresh realizations drawn from `rng`.
///
/// Examples on the shared graph share one realization set. Examples that
/// carry their own graph are evaluated one by one, example b drawing from
/// rng.split(b), and the results are averaged.
inline CostGradient sampled_cost_and_gradient(const FilterTensor& h, const std::shared_ptr<const ShiftOperator>& base,
                                              double p, std::span<const Example> data,
                                              std::span<const std::size_t> idx, LossKind loss, const Rng& rng) {
    const bool own = std::any_of(idx.begin(), idx.end(), [&](std::size_t i) { return data[i].graph != nullptr; });
    if (!own) {
        if (!base) throw InvalidInput("training examples have no graph");
        return cost_and_gradient(h, sample_architecture(base, p, h.config(), rng), data, idx, loss);
    }
    CostGradient total{0.0, FilterTensor(h.config())};
    const double w = 1.0 / static_cast<double>(idx.size());
    for (std::size_t b = 0; b < idx.size(); ++b) {
        const auto& graph = data[idx[b]].graph ? data[idx[b]].graph : base;
        if (!graph) throw InvalidInput("training examples have no graph");
        const std::size_t one[] = {idx[b]};
        const CostGradient cg =
            cost_and_gradient(h, sample_architecture(graph, p, h.config(), rng.split(b)), data, one, loss);
        total.cost += w * cg.cost;
        for (std::size_t i = 0; i < cg.grad.size(); ++i) total.grad.data()[i] += w * cg.grad.data()[i];
    }
    return total;
}

inline double squared_norm(const FilterTensor& t) {
    double s = 0.0;
    for (double v : t.data()) s += v * v;
    return s;
}

/// alpha = sqrt(2 * gap / (T * C_L * C_B^2)).
inline double theorem2_step(double cost_gap, std::size_t iterations, double c_l, double c_b) {
    if (!(cost_gap > 0.0) || iterations == 0 || !(c_l > 0.0) || !(c_b > 0.0))
        throw InvalidConfig("theorem2_step: all arguments must be positive");
    return std::sqrt(2.0 * cost_gap / (static_cast<double>(iterations) * c_l * c_b * c_b));
}

enum class ScheduleKind { Constant, Theorem2, InvSqrt };
enum class OptimizerKind { SGD, Adam };

/// Which of the two equivalent loop organizations drives training.
enum class LoopOrganization {
    RealizationFirst,  // fix an SGNN realization, then compute outputs and cost on the batch
    CostFirst,         // draw the batch, then sample the stochastic cost C(S_{P:1}, H)
};

struct LearningRate {
    ScheduleKind kind = ScheduleKind::Constant;
    double alpha = 1e-3;       // Constant: step; InvSqrt: alpha_0
    double cost_gap = 0.0;     // Theorem2: estimate of C(H_0) - C(H*); <= 0 means estimate it
    double c_l = 1.0;          // Theorem2: Lipschitz constant of the expected gradient
    double c_b = 0.0;          // Theorem2: gradient-norm bound; <= 0 means estimate it
};

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::SGD;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct TrainConfig {
    std::size_t iterations = 100;
    std::size_t batch_size = 32;
    LearningRate lr{};
    OptimizerConfig optimizer{};
    double p = 1.0;
    std::uint64_t seed = 0;
    LossKind loss = LossKind::MeanSquared;
    LoopOrganization organization = LoopOrganization::RealizationFirst;
    std::size_t gap_samples = 100;        // realizations averaged for the Theorem2 cost gap
    std::size_t bound_samples = 20;       // realizations for the Theorem2 C_B estimate
    double divergence_guard = 1e12;       // abort once the cost exceeds this

    void validate() const {
        if (iterations < 1) throw InvalidConfig("TrainConfig: iterations must be >= 1");
        if (batch_size < 1) throw InvalidConfig("TrainConfig: batch size must be >= 1");
        if (lr.kind != ScheduleKind::Theorem2 && !(lr.alpha >= 0.0)) throw InvalidConfig("TrainConfig: negative step size");
        if (!(optimizer.beta1 > 0.0 && optimizer.beta1 < 1.0 && optimizer.beta2 > 0.0 && optimizer.beta2 < 1.0))
            throw InvalidConfig("TrainConfig: Adam betas must lie in (0, 1)");
        check_probability(p, "TrainConfig");
    }
};

struct TrainTrace {
    std::vector<double> cost;
    std::vector<double> grad_norm_sq;
    std::vector<double> lr;
    std::vector<double> wall_ms;
    FilterTensor final_tensor;
};

/// Stream tags; every random draw in training comes from one of these.
inline constexpr std::uint64_t kStreamRealizations = 0x52454131;
inline constexpr std::uint64_t kStreamBatches = 0x42415443;
inline constexpr std::uint64_t kStreamEstimates = 0x45535431;

/// Uniform mini-batches without replacement within each epoch.
class BatchSampler {
public:
    BatchSampler(std::size_t n, std::size_t batch, Rng rng) : n_(n), batch_(std::min(batch, n)), rng_(rng) {
        if (n == 0) throw InvalidInput("BatchSampler: empty data set");
    }

    std::vector<std::size_t> next() {
        std::vector<std::size_t> out;
        out.reserve(batch_);
        while (out.size() < batch_) {
            if (pos_ == order_.size()) reshuffle();
            out.push_back(order_[pos_++]);
        }
        return out;
    }

private:
    void reshuffle() {
        order_.resize(n_);
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        for (std::size_t i = n_; i > 1; --i) std::swap(order_[i - 1], order_[rng_.below(i)]);
        pos_ = 0;
    }

    std::size_t n_;
    std::size_t batch_;
    Rng rng_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
};

/// Max gradient norm over `n_samples` independent realization sets at `h`, times 1.5.
inline double estimate_grad_bound(const FilterTensor& h, const std::shared_ptr<const ShiftOperator>& base,
                                  std::span<const Example> data, double p, std::size_t n_samples, const Rng& rng,
                                  LossKind loss) {
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    double best = 0.0;
    for (std::size_t s = 0; s < n_samples; ++s)
        best = std::max(best, std::sqrt(squared_norm(sampled_cost_and_gradient(h, base, p, data, idx, loss, rng.split(s)).grad)));
    return 1.5 * best;
}

/// Monte-Carlo estimate of the expected cost over `n_samples` realization sets.
inline double expected_cost(const FilterTensor& h, const std::shared_ptr<const ShiftOperator>& base,
                            std::span<const Example> data, double p, std::size_t n_samples, const Rng& rng,
                            LossKind loss) {
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    double total = 0.0;
    for (std::size_t s = 0; s < n_samples; ++s)
        total += sampled_cost_and_gradient(h, base, p, data, idx, loss, rng.split(s)).cost;
    return total / static_cast<double>(n_samples);
}

namespace detail {

class Optimizer {
public:
    Optimizer(OptimizerConfig cfg, std::size_t size) : cfg_(cfg), m_(size, 0.0), v_(size, 0.0) {}

    void step(FilterTensor& h, const FilterTensor& grad, double alpha) {
        auto& w = h.data();
        const auto& g = grad.data();
        if (cfg_.kind == OptimizerKind::SGD) {
            for (std::size_t i = 0; i < w.size(); ++i) w[i] -= alpha * g[i];
            return;
        }
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < w.size(); ++i) {
            m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g[i];
            v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            w[i] -= alpha * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + cfg_.epsilon);
        }
    }

private:
    OptimizerConfig cfg_;
    std::vector<double> m_;
    std::vector<double> v_;
    std::size_t t_ = 0;
};

}  // namespace detail

/// Resolve the step size used at iteration t (0-based).
inline double step_size(const LearningRate& lr, std::size_t t) {
    switch (lr.kind) {
        case ScheduleKind::Constant:
        case ScheduleKind::Theorem2: return lr.alpha;
        case ScheduleKind::InvSqrt: return lr.alpha / std::sqrt(static_cast<double>(t + 1));
    }
    return lr.alpha;
}

/// Fill in the Theorem2 step from Monte-Carlo estimates of the cost gap and C_B at H_0.
///
/// The optimum cost is taken as 0 (losses are nonnegative), so the gap is the
/// expected initial cost.
inline LearningRate resolve_schedule(const FilterTensor& h0, const std::shared_ptr<const ShiftOperator>& base,
                                     std::span<const Example> data, const TrainConfig& cfg) {
    LearningRate lr = cfg.lr;
    if (lr.kind != ScheduleKind::Theorem2) return lr;
    const Rng est = Rng(cfg.seed, kStreamEstimates);
    if (!(lr.cost_gap > 0.0)) lr.cost_gap = expected_cost(h0, base, data, cfg.p, cfg.gap_samples, est.split(0), cfg.loss);
    if (!(lr.c_b > 0.0)) lr.c_b = estimate_grad_bound(h0, base, data, cfg.p, cfg.bound_samples, est.split(1), cfg.loss);
    lr.alpha = theorem2_step(lr.cost_gap, cfg.iterations, lr.c_l, lr.c_b);
    return lr;
}

/// Stochastic training loop: each iteration fixes a fresh realization set, draws a batch,
/// computes the cost and its gradient, and updates the tensor.
inline TrainTrace train(FilterTensor h, const std::shared_ptr<const ShiftOperator>& base,
                        std::span<const Example> data, const TrainConfig& cfg) {
    cfg.validate();
    if (data.empty()) throw InvalidInput("train: empty training set");
    const LearningRate lr = resolve_schedule(h, base, data, cfg);

    const Rng realization_root(cfg.seed, kStreamRealizations);
    BatchSampler sampler(data.size(), cfg.batch_size, Rng(cfg.seed, kStreamBatches));
    detail::Optimizer opt(cfg.optimizer, h.size());

    TrainTrace trace;
    trace.cost.reserve(cfg.iterations);
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t t = 0; t < cfg.iterations; ++t) {
        CostGradient cg;
        if (cfg.organization == LoopOrganization::RealizationFirst) {
            const Rng reals = realization_root.split(t);
            const std::vector<std::size_t> batch = sampler.next();
            cg = sampled_cost_and_gradient(h, base, cfg.p, data, batch, cfg.loss, reals);
        } else {
            const std::vector<std::size_t> batch = sampler.next();
            cg = sampled_cost_and_gradient(h, base, cfg.p, data, batch, cfg.loss, realization_root.split(t));
        }
        if (!std::isfinite(cg.cost) || cg.cost > cfg.divergence_guard)
            throw Divergence("train: cost became " + std::to_string(cg.cost) + " at iteration " + std::to_string(t));

        const double alpha = step_size(lr, t);
        trace.cost.push_back(cg.cost);
        trace.grad_norm_sq.push_back(squared_norm(cg.grad));
        trace.lr.push_back(alpha);
        opt.step(h, cg.grad, alpha);
        trace.wall_ms.push_back(
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count());
    }
    trace.final_tensor = std::move(h);
    return trace;
}

/// Running minimum of the squared gradient norm.
inline std::vector<double> convergence_metric(std::span<const double> grad_norm_sq) {
    if (grad_norm_sq.empty()) throw InvalidInput("convergence_metric: empty trace");
    std::vector<double> out(grad_norm_sq.size());
    double best = grad_norm_sq.front();
    for (std::size_t i = 0; i < grad_norm_sq.size(); ++i) {
        best = std::min(best, grad_norm_sq[i]);
        out[i] = best;
    }
    return out;
}

/// CSV with columns iter,cost,grad_norm_sq,lr,wall_ms. Wall time is written as 0
/// unless requested, so exported traces stay byte-reproducible.
inline void write_trace_csv(const TrainTrace& trace, std::ostream& out, bool include_wall_time = false) {
    out << "iter,cost,grad_norm_sq,lr,wall_ms\n";
    out.precision(17);
    for (std::size_t t = 0; t < trace.cost.size(); ++t)
        out << t << ',' << trace.cost[t] << ',' << trace.grad_norm_sq[t] << ',' << trace.lr[t] << ','
            << (include_wall_time ? trace.wall_ms[t] : 0.0) << '\n';
}

}  // namespace sgnn

#endif  // SGNN_AUTOGRAD_TRAIN_HPP
