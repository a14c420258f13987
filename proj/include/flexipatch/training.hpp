#pragma once

#include <chrono>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "flexipatch/metrics.hpp"
#include "flexipatch/model.hpp"
#include "flexipatch/pdegen.hpp"
#include "flexipatch/rng.hpp"

namespace flexipatch {

struct TrainConfig {
    double lr = 1e-4;
    double weight_decay = 1e-4;
    int batch = 2;
    int epochs = 10;
    int epoch_size = 100;  // samples per epoch
    // Sampling distribution over the model's size set; empty = uniform.
    std::map<int, double> size_probs;
    uint64_t seed = 0;
    double loss_eps = 1e-7;  // NMSE denominator epsilon (shared with VRMSE default)
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    int valid_window_stride = 6;

    void validate() const {
        require(lr >= 0.0 && std::isfinite(lr), "lr must be finite and >= 0");
        require(weight_decay >= 0.0, "weight_decay must be >= 0");
        require(batch >= 1 && epochs >= 0 && epoch_size >= 1, "bad batch/epoch settings");
        if (!size_probs.empty()) {
            double total = 0.0;
            for (const auto& [s, p] : size_probs) {
                require(p >= 0.0, "size probability must be >= 0");
                total += p;
            }
            require(std::abs(total - 1.0) <= 1e-9, "size probabilities must sum to 1");
        }
    }
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    std::map<int, double> valid_vrmse;  // per evaluation size
    double wall_seconds = 0.0;
};

struct TrainStats {
    std::vector<EpochStats> epochs;
    long long samples_seen = 0;  // compute-budget ledger
    int best_epoch = -1;
    double best_mean_vrmse = std::numeric_limits<double>::infinity();
};

// One size draw per optimizer step, shared by the encoder and decoder of
// that step.
inline int sample_size(RandomStream& rng, const std::vector<std::pair<int, double>>& dist) {
    require(!dist.empty(), "sample_size: empty distribution");
    const double u = rng.uniform();
    double acc = 0.0;
    for (const auto& [size, p] : dist) {
        acc += p;
        if (u < acc) return size;
    }
    return dist.back().first;
}

// Adam with decoupled weight decay. A zero-gradient step changes a parameter
// only through the decay term lr * wd * p.
template <typename T>
class AdamOptimizer {
public:
    explicit AdamOptimizer(const ParameterSet<T>& params) {
        for (size_t i = 0; i < params.size(); ++i) {
            m_.emplace_back(params.value(static_cast<int>(i)).shape, T(0));
            v_.emplace_back(params.value(static_cast<int>(i)).shape, T(0));
        }
    }

    void step(ParameterSet<T>& params, const std::vector<Tensor<T>>& grads,
              const TrainConfig& cfg) {
        ++t_;
        const T lr = static_cast<T>(cfg.lr);
        const T wd = static_cast<T>(cfg.weight_decay);
        const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
        const T eps = static_cast<T>(cfg.adam_eps);
        const T bc1 = static_cast<T>(1.0 - std::pow(cfg.beta1, t_));
        const T bc2 = static_cast<T>(1.0 - std::pow(cfg.beta2, t_));
        for (size_t i = 0; i < m_.size(); ++i) {
            Tensor<T>& p = params.value(static_cast<int>(i));
            const Tensor<T>& g = grads[i];
            Tensor<T>& m = m_[i];
            Tensor<T>& v = v_[i];
            for (long long j = 0; j < p.numel(); ++j) {
                p.data[j] -= lr * wd * p.data[j];
                m.data[j] = b1 * m.data[j] + (T(1) - b1) * g.data[j];
                v.data[j] = b2 * v.data[j] + (T(1) - b2) * g.data[j] * g.data[j];
                const T mhat = m.data[j] / bc1;
                const T vhat = v.data[j] / bc2;
                p.data[j] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }

    long long steps() const { return t_; }

private:
    std::vector<Tensor<T>> m_, v_;
    long long t_ = 0;
};

namespace detail {

template <typename T>
Tensor<T> gather_context(const SplitDataset& ds, const std::vector<std::pair<int, int>>& picks,
                         int context) {
    const PDEParams& p = ds.params;
    const int B = static_cast<int>(picks.size());
    Tensor<T> ctx({B, p.h, p.w, context, p.channels});
    for (int b = 0; b < B; ++b) {
        const auto& tr = ds.trajectories[picks[b].first];
        const int start = picks[b].second;
        for (int t = 0; t < context; ++t)
            for (int y = 0; y < p.h; ++y)
                for (int x = 0; x < p.w; ++x)
                    for (int c = 0; c < p.channels; ++c)
                        ctx.at({b, y, x, t, c}) =
                            static_cast<T>(tr.at({start + t, y, x, c}));
    }
    return ctx;
}

template <typename T>
Tensor<T> gather_target(const SplitDataset& ds, const std::vector<std::pair<int, int>>& picks,
                        int context) {
    const PDEParams& p = ds.params;
    const int B = static_cast<int>(picks.size());
    Tensor<T> tgt({B, p.h, p.w, 1, p.channels});
    for (int b = 0; b < B; ++b) {
        const auto& tr = ds.trajectories[picks[b].first];
        const int t = picks[b].second + context;
        for (int y = 0; y < p.h; ++y)
            for (int x = 0; x < p.w; ++x)
                for (int c = 0; c < p.channels; ++c)
                    tgt.at({b, y, x, 0, c}) = static_cast<T>(tr.at({t, y, x, c}));
    }
    return tgt;
}

}  // namespace detail

// Mean next-step VRMSE of a model over one split at a given size, using
// deterministic context windows spaced `stride` frames apart (physical
// units; VRMSE is affine-invariant so normalization does not matter).
template <typename T>
double evaluate_vrmse(const Surrogate<T>& model, const SplitDataset& ds, int size, int stride,
                      int max_windows = 0) {
    const PDEParams& p = ds.params;
    const int ctx_len = model.config().context;
    std::vector<int> starts;
    for (int s = 0; s + ctx_len < p.t_total; s += std::max(1, stride)) {
        starts.push_back(s);
        if (max_windows > 0 && static_cast<int>(starts.size()) >= max_windows) break;
    }
    require(!starts.empty(), "evaluate_vrmse: no valid context window");
    double acc = 0.0;
    long long n = 0;
    for (int start : starts) {
        std::vector<std::pair<int, int>> picks;
        for (int tr = 0; tr < ds.n_traj(); ++tr) picks.emplace_back(tr, start);
        Tensor<T> ctx = detail::gather_context<T>(ds, picks, ctx_len);
        Tensor<T> tgt = detail::gather_target<T>(ds, picks, ctx_len);
        Tape<T> tape;
        const auto ids = model.bind(tape);
        const auto fwd = model.forward(tape, ctx, size, ids);
        const Tensor<T>& pred = tape.val(fwd.pred_phys);
        // Per-sample, per-channel VRMSE in double precision.
        const int B = ctx.dim(0);
        const long long per_b = pred.numel() / B;
        for (int b = 0; b < B; ++b) {
            Tensor<double> pb({p.h, p.w, p.channels}), tb({p.h, p.w, p.channels});
            for (long long i = 0; i < per_b; ++i) {
                pb.data[i] = static_cast<double>(pred.data[b * per_b + i]);
                tb.data[i] = static_cast<double>(tgt.data[b * per_b + i]);
            }
            acc += vrmse(pb, tb);
            ++n;
        }
    }
    return acc / static_cast<double>(n);
}

struct TrainHooks {
    // Called after each epoch's validation; return value ignored.
    std::function<void(const EpochStats&)> on_epoch;
};

// Next-step training: per-step random size sampling, NMSE loss on the
// normalized delta-applied prediction, Adam with decoupled weight decay.
// Keeps the checkpoint of the best validation mean-VRMSE epoch in
// `best_params` when non-null.
template <typename T>
TrainStats train(Surrogate<T>& model, const GeneratedData& data, const TrainConfig& cfg,
                 ParameterSet<T>* best_params = nullptr, const TrainHooks& hooks = {}) {
    cfg.validate();
    model.set_normalization(data.train.norm_mean, data.train.norm_std);
    const PDEParams& p = data.train.params;
    const int ctx_len = model.config().context;
    require(p.t_total > ctx_len, "trajectories shorter than context+1");

    std::vector<int> eval_sizes = model.config().tokenizer == TokenizerKind::fixed
                                      ? std::vector<int>{model.config().fixed_size}
                                      : model.config().size_set;

    std::vector<std::pair<int, double>> dist;
    if (cfg.size_probs.empty()) {
        for (int s : eval_sizes) dist.emplace_back(s, 1.0 / eval_sizes.size());
    } else {
        for (const auto& [s, prob] : cfg.size_probs) {
            (void)model.run_size(s);  // rejects sizes the model cannot run
            dist.emplace_back(s, prob);
        }
    }

    RandomStream data_rng(cfg.seed, "data");
    RandomStream size_rng(cfg.seed, "size");

    const std::vector<double> std_v = data.train.norm_std;
    const std::vector<double> mean_v = data.train.norm_mean;

    AdamOptimizer<T> opt(model.params());
    TrainStats stats;
    const int steps_per_epoch = std::max(1, cfg.epoch_size / cfg.batch);
    const int n_train = data.train.n_traj();
    const int max_start = p.t_total - ctx_len;  // exclusive bound on window starts

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        double loss_acc = 0.0;
        for (int step = 0; step < steps_per_epoch; ++step) {
            std::vector<std::pair<int, int>> picks;
            for (int b = 0; b < cfg.batch; ++b) {
                const int tr = static_cast<int>(data_rng.below(n_train));
                const int start = static_cast<int>(data_rng.below(max_start));
                picks.emplace_back(tr, start);
            }
            const int size = sample_size(size_rng, dist);
            Tensor<T> ctx = detail::gather_context<T>(data.train, picks, ctx_len);
            Tensor<T> tgt = detail::gather_target<T>(data.train, picks, ctx_len);
            // Loss lives in normalized space.
            for (long long i = 0; i < tgt.numel(); ++i) {
                const int c = static_cast<int>(i % p.channels);
                tgt.data[i] = static_cast<T>((static_cast<double>(tgt.data[i]) - mean_v[c]) /
                                             std_v[c]);
            }
            Tape<T> tape;
            const auto ids = model.bind(tape);
            const auto fwd = model.forward(tape, ctx, size, ids);
            const int loss = tape.nmse_loss(fwd.pred_norm, tgt, cfg.loss_eps);
            const double loss_value = static_cast<double>(tape.val(loss).data[0]);
            if (!std::isfinite(loss_value))
                throw numeric_error("NaN loss at epoch " + std::to_string(epoch) + " step " +
                                    std::to_string(step) + " (seed " + std::to_string(cfg.seed) +
                                    ")");
            loss_acc += loss_value;
            tape.backward(loss);
            std::vector<Tensor<T>> grads;
            grads.reserve(ids.size());
            for (size_t i = 0; i < ids.size(); ++i) {
                if (tape.has_grad(ids[i]))
                    grads.push_back(tape.grad(ids[i]));
                else
                    grads.push_back(Tensor<T>(model.params().value(static_cast<int>(i)).shape, T(0)));
            }
            opt.step(model.params(), grads, cfg);
            stats.samples_seen += cfg.batch;
        }

        EpochStats es;
        es.epoch = epoch;
        es.train_loss = loss_acc / steps_per_epoch;
        double vr_acc = 0.0;
        for (int s : eval_sizes) {
            const double vr = evaluate_vrmse(model, data.valid, s, cfg.valid_window_stride);
            es.valid_vrmse[s] = vr;
            vr_acc += vr;
        }
        const double mean_vr = vr_acc / eval_sizes.size();
        es.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        stats.epochs.push_back(es);
        if (mean_vr < stats.best_mean_vrmse) {
            stats.best_mean_vrmse = mean_vr;
            stats.best_epoch = epoch;
            if (best_params) *best_params = model.params();
        }
        if (hooks.on_epoch) hooks.on_epoch(es);
    }
    if (best_params && stats.best_epoch < 0) *best_params = model.params();
    return stats;
}

}  // namespace flexipatch
