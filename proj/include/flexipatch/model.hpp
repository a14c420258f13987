#pragma once

#include <atomic>
#include <cmath>
#include <string>
#include <vector>

#include "flexipatch/autodiff.hpp"
#include "flexipatch/tokenizer.hpp"

namespace flexipatch {

enum class AttentionKind { full, axial };

inline const char* attention_kind_name(AttentionKind k) {
    return k == AttentionKind::full ? "full" : "axial";
}

struct ModelConfig {
    int embed_dim = 64;
    int mlp_dim = 256;
    int n_heads = 4;
    int n_blocks = 2;
    AttentionKind attention = AttentionKind::axial;
    TokenizerKind tokenizer = TokenizerKind::ckm;
    std::vector<int> size_set = {4, 8, 16};
    int k_base = 16;      // total base down/up-sampling rate (stage plan via split_stages)
    int fixed_size = 16;  // operating size when tokenizer == fixed
    int context = 6;
    int channels = 1;
    PadMode pad_mode = PadMode::learned;
    double ln_eps = 1e-5;

    int mid_dim() const { return embed_dim / 2; }
    int head_dim() const { return embed_dim / n_heads; }

    StagePlan base_plan() const {
        return split_stages(tokenizer == TokenizerKind::fixed ? fixed_size : k_base);
    }

    void validate() const {
        require(embed_dim >= 4 && embed_dim % 2 == 0, "embed_dim must be even and >= 4");
        require(n_heads >= 1 && embed_dim % n_heads == 0, "embed_dim must divide by n_heads");
        require(head_dim() % 4 == 0,
                "head_dim must be a multiple of 4 for split rotary embedding, got " +
                    std::to_string(head_dim()));
        require(mlp_dim >= embed_dim, "mlp_dim must be >= embed_dim");
        require(n_blocks >= 1, "need at least one block");
        require(context >= 1, "context length must be >= 1");
        require(channels >= 1, "channel count must be >= 1");
        require(!size_set.empty(), "size_set must not be empty");
        const StagePlan plan = base_plan();
        if (tokenizer == TokenizerKind::fixed) {
            (void)plan_stages(tokenizer, plan, fixed_size);
        } else {
            // Rejects invalid stride/kernel combinations at configuration time.
            for (int s : size_set) (void)plan_stages(tokenizer, plan, s);
        }
    }
};

// Spatio-temporal transformer surrogate with modulated convolutional
// tokenization. Blocks apply temporal attention, spatial attention (full or
// axial) and an MLP, all pre-norm residual, with rotary position embedding
// on token coordinates. Prediction is delta-style: the decoded output is
// added to the last context frame.
template <typename T>
class Surrogate {
public:
    Surrogate(ModelConfig cfg, uint64_t init_seed) : cfg_(std::move(cfg)) {
        cfg_.validate();
        norm_mean_.assign(cfg_.channels, 0.0);
        norm_std_.assign(cfg_.channels, 1.0);
        build_parameters();
        init_parameters(init_seed);
    }

    Surrogate(const Surrogate& o)
        : cfg_(o.cfg_),
          params_(o.params_),
          init_plan_(o.init_plan_),
          norm_mean_(o.norm_mean_),
          norm_std_(o.norm_std_),
          score_pairs_(o.score_pairs_.load()) {}
    Surrogate(Surrogate&& o) noexcept
        : cfg_(std::move(o.cfg_)),
          params_(std::move(o.params_)),
          init_plan_(std::move(o.init_plan_)),
          norm_mean_(std::move(o.norm_mean_)),
          norm_std_(std::move(o.norm_std_)),
          score_pairs_(o.score_pairs_.load()) {}
    Surrogate& operator=(const Surrogate&) = delete;
    Surrogate& operator=(Surrogate&&) = delete;

    const ModelConfig& config() const { return cfg_; }
    ParameterSet<T>& params() { return params_; }
    const ParameterSet<T>& params() const { return params_; }

    void set_normalization(std::vector<double> mean, std::vector<double> std) {
        require(static_cast<int>(mean.size()) == cfg_.channels &&
                    static_cast<int>(std.size()) == cfg_.channels,
                "normalization stats must have one entry per channel");
        for (double s : std) require(s > 0.0, "normalization std must be positive");
        norm_mean_ = std::move(mean);
        norm_std_ = std::move(std);
    }
    const std::vector<double>& norm_mean() const { return norm_mean_; }
    const std::vector<double>& norm_std() const { return norm_std_; }

    std::vector<int> bind(Tape<T>& tape) const { return params_.bind(tape); }

    // Instrumentation: query/key position pairs scored by spatial attention,
    // accumulated over every (batch, frame, block) group since the last reset.
    void reset_score_pairs() const { score_pairs_.store(0); }
    long long score_pairs() const { return score_pairs_.load(); }

    struct ForwardIds {
        int pred_phys = -1;  // (B,H,W,1,C) in physical units
        int pred_norm = -1;  // (B,H,W,1,C) in normalized units (training loss target space)
        int n_h = 0, n_w = 0;
    };

    int run_size(int requested) const {
        if (cfg_.tokenizer == TokenizerKind::fixed) {
            require(requested == cfg_.fixed_size,
                    "fixed-size model runs only at size " + std::to_string(cfg_.fixed_size) +
                        ", requested " + std::to_string(requested));
            return requested;
        }
        for (int s : cfg_.size_set)
            if (s == requested) return requested;
        throw config_error("size " + std::to_string(requested) +
                           " is outside the model's trained size set");
    }

    // context: (B,H,W,T,C) physical fields, T == configured context length.
    ForwardIds forward(Tape<T>& tape, const Tensor<T>& context, int size,
                       const std::vector<int>& ids) const {
        require(context.ndim() == 5, "forward expects (B,H,W,T,C), got " + shape_str(context));
        const int B = context.dim(0), H = context.dim(1), W = context.dim(2);
        const int Tc = context.dim(3), C = context.dim(4);
        require(Tc == cfg_.context, "context length " + std::to_string(Tc) +
                                        " does not match configured " +
                                        std::to_string(cfg_.context));
        require(C == cfg_.channels, "channel count mismatch");
        size = run_size(size);
        require(H % size == 0 && W % size == 0,
                "field extents " + std::to_string(H) + "x" + std::to_string(W) +
                    " must be divisible by size " + std::to_string(size));

        // Normalize and fold frames into the batch axis: (B,H,W,T,C) -> (B*T,H,W,C).
        Tensor<T> xn = normalize_values(context);
        Tensor<T> frames =
            Tape<T>::permute_values(xn, {0, 3, 1, 2, 4});  // (B,T,H,W,C)
        frames.shape = {B * Tc, H, W, C};
        int x = tape.add_const(std::move(frames));

        x = encode(tape, x, size, ids);  // (B*T, Nh, Nw, D)
        const int Nh = tape.val(x).dim(1), Nw = tape.val(x).dim(2);
        x = tape.reshape(x, {B, Tc, Nh, Nw, cfg_.embed_dim});

        for (int blk = 0; blk < cfg_.n_blocks; ++blk) {
            x = temporal_attention(tape, x, ids, blk);
            if (cfg_.attention == AttentionKind::full) {
                x = spatial_attention_full(tape, x, ids, blk);
            } else {
                x = spatial_attention_axial(tape, x, ids, blk, /*row_pass=*/true);
                x = spatial_attention_axial(tape, x, ids, blk, /*row_pass=*/false);
            }
            x = mlp(tape, x, ids, blk);
        }

        x = tape.slice_index(x, 1, Tc - 1);  // (B,1,Nh,Nw,D)
        x = tape.layer_norm_last(x, id(ids, "final.ln.g"), id(ids, "final.ln.b"), cfg_.ln_eps);
        x = tape.linear(x, id(ids, "head.w"));
        x = tape.add_bias(x, id(ids, "head.b"));
        x = tape.reshape(x, {B, Nh, Nw, cfg_.embed_dim});

        int delta = decode(tape, x, size, ids);  // (B,H,W,C), normalized units
        delta = tape.reshape(delta, {B, H, W, 1, C});

        // Delta prediction: add the last context frame. In physical units the
        // channel mean cancels, leaving pred = last + delta * std.
        Tensor<T> last_norm = last_frame(xn);
        Tensor<T> last_phys = last_frame(context);
        ForwardIds out;
        out.pred_norm = tape.add_const(delta, last_norm);
        Tensor<T> stdv({C});
        for (int c = 0; c < C; ++c) stdv.data[c] = static_cast<T>(norm_std_[c]);
        out.pred_phys = tape.add_const(tape.channel_scale(delta, stdv), last_phys);
        out.n_h = Nh;
        out.n_w = Nw;
        return out;
    }

    // Tokenize normalized frames (B',H,W,C) -> (B',Nh,Nw,D). Exposed for the
    // encode/decode contract tests; forward() composes it.
    int encode(Tape<T>& tape, int x, int size, const std::vector<int>& ids) const {
        const auto stages = plan_stages(cfg_.tokenizer, cfg_.base_plan(), run_size(size));
        for (size_t si = 0; si < stages.size(); ++si) {
            const StageOp& st = stages[si];
            const std::string p = "enc.s" + std::to_string(si + 1);
            if (st.pad > 0) {
                const int pad_param =
                    cfg_.pad_mode == PadMode::learned ? id(ids, p + ".pad") : -1;
                x = tape.pad2d(x, st.pad, cfg_.pad_mode, pad_param);
            }
            const int w = stage_kernel(tape, id(ids, p + ".w"), st);
            x = tape.conv2d_op(x, w, st.stride, 0);
            x = tape.add_bias(x, id(ids, p + ".b"));
            if (si + 1 < stages.size()) {
                x = tape.layer_norm_last(x, id(ids, "enc.ln.g"), id(ids, "enc.ln.b"), cfg_.ln_eps);
                x = tape.gelu(x);
            }
        }
        return x;
    }

    // Decode tokens (B',Nh,Nw,D) -> (B',H,W,C) by transposed convolutions in
    // reverse stage order, reusing the same size (and resize operators) as
    // the encode pass of this forward.
    int decode(Tape<T>& tape, int x, int size, const std::vector<int>& ids) const {
        const auto stages = plan_stages(cfg_.tokenizer, cfg_.base_plan(), run_size(size));
        const BorderAdjoint border = cfg_.pad_mode == PadMode::periodic ? BorderAdjoint::wrap
                                                                        : BorderAdjoint::discard;
        for (int si = static_cast<int>(stages.size()) - 1; si >= 0; --si) {
            const StageOp& st = stages[si];
            const std::string p = "dec.s" + std::to_string(si + 1);
            const int w = stage_kernel(tape, id(ids, p + ".w"), st);
            x = tape.conv_transpose2d_op(x, w, st.stride, st.pad, border);
            x = tape.add_bias(x, id(ids, p + ".b"));
            if (si > 0) {
                x = tape.layer_norm_last(x, id(ids, "dec.ln.g"), id(ids, "dec.ln.b"), cfg_.ln_eps);
                x = tape.gelu(x);
            }
        }
        return x;
    }

    // Block sublayers are public for the attention contract tests; forward()
    // composes them.

private:
    // ---- parameters ----

    enum class Init { zeros, ones, fan_in };

    void reg(const std::string& name, std::vector<int> shape, Init kind, int fan_in = 1) {
        params_.add(name, Tensor<T>(std::move(shape), T(0)));
        init_plan_.push_back({kind, fan_in});
    }

    void build_parameters() {
        const int D = cfg_.embed_dim, M = cfg_.mid_dim(), C = cfg_.channels;
        const StagePlan plan = cfg_.base_plan();
        const int k1 = plan.per_stage[0], k2 = plan.per_stage[1];
        reg("enc.s1.w", {k1, k1, C, M}, Init::fan_in, k1 * k1 * C);
        reg("enc.s1.b", {M}, Init::zeros);
        reg("enc.ln.g", {M}, Init::ones);
        reg("enc.ln.b", {M}, Init::zeros);
        reg("enc.s2.w", {k2, k2, M, D}, Init::fan_in, k2 * k2 * M);
        reg("enc.s2.b", {D}, Init::zeros);
        if (cfg_.tokenizer == TokenizerKind::csm && cfg_.pad_mode == PadMode::learned) {
            reg("enc.s1.pad", {C}, Init::zeros);
            reg("enc.s2.pad", {M}, Init::zeros);
        }
        auto attn = [&](const std::string& p) {
            reg(p + ".ln.g", {D}, Init::ones);
            reg(p + ".ln.b", {D}, Init::zeros);
            reg(p + ".wq", {D, D}, Init::fan_in, D);
            reg(p + ".wk", {D, D}, Init::fan_in, D);
            reg(p + ".wv", {D, D}, Init::fan_in, D);
            reg(p + ".wo", {D, D}, Init::fan_in, D);
        };
        for (int b = 0; b < cfg_.n_blocks; ++b) {
            const std::string bp = "b" + std::to_string(b);
            attn(bp + ".tattn");
            if (cfg_.attention == AttentionKind::full) {
                attn(bp + ".sattn");
            } else {
                attn(bp + ".rowattn");
                attn(bp + ".colattn");
            }
            reg(bp + ".mlp.ln.g", {D}, Init::ones);
            reg(bp + ".mlp.ln.b", {D}, Init::zeros);
            reg(bp + ".mlp.w1", {D, cfg_.mlp_dim}, Init::fan_in, D);
            reg(bp + ".mlp.b1", {cfg_.mlp_dim}, Init::zeros);
            reg(bp + ".mlp.w2", {cfg_.mlp_dim, D}, Init::fan_in, cfg_.mlp_dim);
            reg(bp + ".mlp.b2", {D}, Init::zeros);
        }
        reg("final.ln.g", {D}, Init::ones);
        reg("final.ln.b", {D}, Init::zeros);
        // Zero-initialized head: initial predictions equal persistence.
        reg("head.w", {D, D}, Init::zeros);
        reg("head.b", {D}, Init::zeros);
        reg("dec.s2.w", {k2, k2, M, D}, Init::fan_in, k2 * k2 * D);
        reg("dec.s2.b", {M}, Init::zeros);
        reg("dec.ln.g", {M}, Init::ones);
        reg("dec.ln.b", {M}, Init::zeros);
        reg("dec.s1.w", {k1, k1, C, M}, Init::fan_in, k1 * k1 * M);
        reg("dec.s1.b", {C}, Init::zeros);
    }

    void init_parameters(uint64_t seed) {
        RandomStream rng(seed, "init");
        for (size_t i = 0; i < params_.size(); ++i) {
            Tensor<T>& v = params_.value(static_cast<int>(i));
            const auto& plan = init_plan_[i];
            switch (plan.kind) {
                case Init::zeros: break;
                case Init::ones:
                    for (auto& x : v.data) x = T(1);
                    break;
                case Init::fan_in: {
                    const double scale = 1.0 / std::sqrt(static_cast<double>(plan.fan_in));
                    for (auto& x : v.data) x = static_cast<T>(rng.normal() * scale);
                    break;
                }
            }
        }
    }

    int id(const std::vector<int>& ids, const std::string& name) const {
        const int i = params_.find(name);
        require(i >= 0, "missing parameter: " + name);
        return ids[i];
    }

    // PI-resized stage kernel node. When the applied kernel equals the base
    // kernel the stored weights are used directly, which keeps the kernel-
    // modulated model bit-identical to the fixed-patch baseline at the base
    // size. The resize operator is a fixed matrix; gradients reach the base
    // weights through its transpose.
    int stage_kernel(Tape<T>& tape, int w_leaf, const StageOp& st) const {
        if (st.kernel == st.base_kernel) return w_leaf;
        const Tensor<T>& wv = tape.val(w_leaf);
        const int Ci = wv.dim(2), Co = wv.dim(3);
        PIResizeConfig rc;
        rc.k_base = st.base_kernel;
        const Mat P = pi_resize_operator(st.kernel, rc);
        int flat = tape.reshape(w_leaf, {st.base_kernel * st.base_kernel, Ci * Co});
        int resized = tape.left_matmul_const(P, flat);
        return tape.reshape(resized, {st.kernel, st.kernel, Ci, Co});
    }

    // ---- attention ----

    struct RopeTables {
        Tensor<T> cos_t, sin_t;
    };

    // 1D rotary table over positions 0..P-1, tiled across heads. Within each
    // head, pair m uses frequency base^(-2m / d_eff).
    static void fill_rope_1d(Tensor<T>& cos_t, Tensor<T>& sin_t, int P, int D, int Dh,
                             int pair_lo, int pair_hi, int d_eff,
                             const std::vector<double>& pos) {
        const int pairs_per_head = Dh / 2;
        const int n_heads = D / Dh;
        for (int p = 0; p < P; ++p) {
            for (int h = 0; h < n_heads; ++h) {
                for (int m = pair_lo; m < pair_hi; ++m) {
                    const double freq = std::pow(10000.0, -2.0 * (m - pair_lo) / d_eff);
                    const double ang = pos[p] * freq;
                    const int c = h * pairs_per_head + m;
                    cos_t.data[static_cast<long long>(p) * (D / 2) + c] =
                        static_cast<T>(std::cos(ang));
                    sin_t.data[static_cast<long long>(p) * (D / 2) + c] =
                        static_cast<T>(std::sin(ang));
                }
            }
        }
    }

    RopeTables rope_time(int Tc) const {
        const int D = cfg_.embed_dim, Dh = cfg_.head_dim();
        RopeTables t{Tensor<T>({Tc, D / 2}), Tensor<T>({Tc, D / 2})};
        std::vector<double> pos(Tc);
        for (int i = 0; i < Tc; ++i) pos[i] = i;
        fill_rope_1d(t.cos_t, t.sin_t, Tc, D, Dh, 0, Dh / 2, Dh, pos);
        return t;
    }

    // Split-halves rotary for the token grid: within each head the first
    // half of the pairs rotates with the row coordinate, the second half
    // with the column coordinate.
    RopeTables rope_grid(int Nh, int Nw) const {
        const int D = cfg_.embed_dim, Dh = cfg_.head_dim();
        const int N = Nh * Nw;
        RopeTables t{Tensor<T>({N, D / 2}), Tensor<T>({N, D / 2})};
        std::vector<double> rows(N), cols(N);
        for (int i = 0; i < Nh; ++i)
            for (int j = 0; j < Nw; ++j) {
                rows[i * Nw + j] = i;
                cols[i * Nw + j] = j;
            }
        fill_rope_1d(t.cos_t, t.sin_t, N, D, Dh, 0, Dh / 4, Dh / 2, rows);
        fill_rope_1d(t.cos_t, t.sin_t, N, D, Dh, Dh / 4, Dh / 2, Dh / 2, cols);
        return t;
    }

public:
    // Multi-head scaled dot-product attention over sequences (G, P, D).
    int attention_core(Tape<T>& tape, int q, int k, int v, int G, int P) const {
        const int D = cfg_.embed_dim, H = cfg_.n_heads, Dh = cfg_.head_dim();
        auto to_heads = [&](int x) {
            x = tape.reshape(x, {G, P, H, Dh});
            x = tape.permute(x, {0, 2, 1, 3});
            return tape.reshape(x, {G * H, P, Dh});
        };
        q = to_heads(q);
        k = to_heads(k);
        v = to_heads(v);
        int scores = tape.bmm(q, k, /*transpose_b=*/true);
        scores = tape.scale(scores, 1.0 / std::sqrt(static_cast<double>(Dh)));
        int attn = tape.softmax_last(scores);
        int out = tape.bmm(attn, v, /*transpose_b=*/false);
        out = tape.reshape(out, {G, H, P, Dh});
        out = tape.permute(out, {0, 2, 1, 3});
        return tape.reshape(out, {G, P, D});
    }

    int temporal_attention(Tape<T>& tape, int x, const std::vector<int>& ids, int blk) const {
        const auto& s = tape.val(x).shape;  // (B,T,Nh,Nw,D)
        const int B = s[0], Tc = s[1], Nh = s[2], Nw = s[3], D = s[4];
        const std::string p = "b" + std::to_string(blk) + ".tattn";
        int h = tape.layer_norm_last(x, id(ids, p + ".ln.g"), id(ids, p + ".ln.b"), cfg_.ln_eps);
        int q = tape.linear(h, id(ids, p + ".wq"));
        int k = tape.linear(h, id(ids, p + ".wk"));
        int v = tape.linear(h, id(ids, p + ".wv"));
        auto seq = [&](int n) {
            n = tape.permute(n, {0, 2, 3, 1, 4});  // (B,Nh,Nw,T,D)
            return tape.reshape(n, {B * Nh * Nw, Tc, D});
        };
        q = seq(q);
        k = seq(k);
        v = seq(v);
        const RopeTables rt = rope_time(Tc);
        q = tape.rope(q, rt.cos_t, rt.sin_t);
        k = tape.rope(k, rt.cos_t, rt.sin_t);
        int out = attention_core(tape, q, k, v, B * Nh * Nw, Tc);
        out = tape.reshape(out, {B, Nh, Nw, Tc, D});
        out = tape.permute(out, {0, 3, 1, 2, 4});
        out = tape.linear(out, id(ids, p + ".wo"));
        return tape.add(x, out);
    }

    int spatial_attention_full(Tape<T>& tape, int x, const std::vector<int>& ids, int blk) const {
        const auto& s = tape.val(x).shape;
        const int B = s[0], Tc = s[1], Nh = s[2], Nw = s[3], D = s[4];
        const int N = Nh * Nw;
        const std::string p = "b" + std::to_string(blk) + ".sattn";
        int h = tape.layer_norm_last(x, id(ids, p + ".ln.g"), id(ids, p + ".ln.b"), cfg_.ln_eps);
        int q = tape.linear(h, id(ids, p + ".wq"));
        int k = tape.linear(h, id(ids, p + ".wk"));
        int v = tape.linear(h, id(ids, p + ".wv"));
        auto seq = [&](int n) { return tape.reshape(n, {B * Tc, N, D}); };
        q = seq(q);
        k = seq(k);
        v = seq(v);
        const RopeTables rt = rope_grid(Nh, Nw);
        q = tape.rope(q, rt.cos_t, rt.sin_t);
        k = tape.rope(k, rt.cos_t, rt.sin_t);
        score_pairs_.fetch_add(static_cast<long long>(B) * Tc * N * N);
        int out = attention_core(tape, q, k, v, B * Tc, N);
        out = tape.reshape(out, {B, Tc, Nh, Nw, D});
        out = tape.linear(out, id(ids, p + ".wo"));
        return tape.add(x, out);
    }

    int spatial_attention_axial(Tape<T>& tape, int x, const std::vector<int>& ids, int blk,
                                bool row_pass) const {
        const auto& s = tape.val(x).shape;
        const int B = s[0], Tc = s[1], Nh = s[2], Nw = s[3], D = s[4];
        const std::string p =
            "b" + std::to_string(blk) + (row_pass ? ".rowattn" : ".colattn");
        int h = tape.layer_norm_last(x, id(ids, p + ".ln.g"), id(ids, p + ".ln.b"), cfg_.ln_eps);
        int q = tape.linear(h, id(ids, p + ".wq"));
        int k = tape.linear(h, id(ids, p + ".wk"));
        int v = tape.linear(h, id(ids, p + ".wv"));
        // Rotary on full grid coordinates, then restrict attention to the axis.
        const RopeTables rt = rope_grid(Nh, Nw);
        auto roped = [&](int n) {
            n = tape.reshape(n, {B * Tc, Nh * Nw, D});
            n = tape.rope(n, rt.cos_t, rt.sin_t);
            return tape.reshape(n, {B, Tc, Nh, Nw, D});
        };
        q = roped(q);
        k = roped(k);
        auto seq = [&](int n) {
            if (row_pass) return tape.reshape(n, {B * Tc * Nh, Nw, D});
            n = tape.permute(n, {0, 1, 3, 2, 4});  // (B,T,Nw,Nh,D)
            return tape.reshape(n, {B * Tc * Nw, Nh, D});
        };
        q = seq(q);
        k = seq(k);
        v = seq(v);
        const int G = row_pass ? B * Tc * Nh : B * Tc * Nw;
        const int P = row_pass ? Nw : Nh;
        score_pairs_.fetch_add(static_cast<long long>(G) * P * P);
        int out = attention_core(tape, q, k, v, G, P);
        if (row_pass) {
            out = tape.reshape(out, {B, Tc, Nh, Nw, D});
        } else {
            out = tape.reshape(out, {B, Tc, Nw, Nh, D});
            out = tape.permute(out, {0, 1, 3, 2, 4});
        }
        out = tape.linear(out, id(ids, p + ".wo"));
        return tape.add(x, out);
    }

private:
    int mlp(Tape<T>& tape, int x, const std::vector<int>& ids, int blk) const {
        const std::string p = "b" + std::to_string(blk) + ".mlp";
        int h = tape.layer_norm_last(x, id(ids, p + ".ln.g"), id(ids, p + ".ln.b"), cfg_.ln_eps);
        h = tape.linear(h, id(ids, p + ".w1"));
        h = tape.add_bias(h, id(ids, p + ".b1"));
        h = tape.gelu(h);
        h = tape.linear(h, id(ids, p + ".w2"));
        h = tape.add_bias(h, id(ids, p + ".b2"));
        return tape.add(x, h);
    }

    // ---- value-space helpers (constants, no tape) ----

    Tensor<T> normalize_values(const Tensor<T>& x) const {
        const int C = cfg_.channels;
        Tensor<T> out = x;
        for (long long i = 0; i < out.numel(); ++i) {
            const int c = static_cast<int>(i % C);
            out.data[i] = static_cast<T>((static_cast<double>(out.data[i]) - norm_mean_[c]) /
                                         norm_std_[c]);
        }
        return out;
    }

    static Tensor<T> last_frame(const Tensor<T>& x) {
        const int B = x.dim(0), H = x.dim(1), W = x.dim(2), Tc = x.dim(3), C = x.dim(4);
        Tensor<T> out({B, H, W, 1, C});
        for (int b = 0; b < B; ++b)
            for (int y = 0; y < H; ++y)
                for (int w = 0; w < W; ++w)
                    for (int c = 0; c < C; ++c)
                        out.at({b, y, w, 0, c}) = x.at({b, y, w, Tc - 1, c});
        return out;
    }

    ModelConfig cfg_;
    ParameterSet<T> params_;
    struct InitPlan {
        Init kind;
        int fan_in;
    };
    std::vector<InitPlan> init_plan_;
    std::vector<double> norm_mean_, norm_std_;
    mutable std::atomic<long long> score_pairs_{0};
};

}  // namespace flexipatch
