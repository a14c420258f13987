#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "flexipatch/piresize.hpp"
#include "flexipatch/rng.hpp"
#include "flexipatch/tensor.hpp"

namespace flexipatch {

enum class PadMode { zero, periodic, learned };

inline const char* pad_mode_name(PadMode m) {
    switch (m) {
        case PadMode::zero: return "zero";
        case PadMode::periodic: return "periodic";
        default: return "learned";
    }
}

// Reverse-mode tape over tensor ops. One tape per training step; nodes are
// identified by their index in creation (topological) order. Backward walks
// the tape in reverse and accumulates parent gradients in that fixed order,
// so gradients are bit-reproducible.
template <typename T>
class Tape {
public:
    using BackFn = std::function<void(Tape&, int)>;

    int add_leaf(Tensor<T> v, bool is_param) {
        return push(std::move(v), {}, nullptr, is_param, "leaf");
    }
    int add_const(Tensor<T> v) { return add_leaf(std::move(v), false); }

    const Tensor<T>& val(int id) const { return recs_[id].value; }
    bool needs_grad(int id) const { return recs_[id].needs_grad; }
    size_t size() const { return recs_.size(); }

    bool has_grad(int id) const { return grad_set_[id] != 0; }
    const Tensor<T>& grad(int id) const { return grads_[id]; }

    // Accumulation target; allocates zeros on first touch.
    Tensor<T>& grad_acc(int id) {
        if (!grad_set_[id]) {
            grads_[id] = Tensor<T>(recs_[id].value.shape, T(0));
            grad_set_[id] = 1;
        }
        return grads_[id];
    }

    // Record a node with a custom backward rule. Rejected at recording time
    // when a differentiable parent is present but no rule is supplied.
    int record_custom(Tensor<T> v, std::vector<int> parents, BackFn back, const std::string& op) {
        bool needs = false;
        for (int p : parents) needs = needs || recs_[p].needs_grad;
        if (needs && !back)
            throw config_error("backward through unrecorded op '" + op + "' is not supported");
        return push(std::move(v), std::move(parents), std::move(back), needs, op);
    }

    void backward(int loss_id) {
        require(loss_id >= 0 && loss_id < static_cast<int>(recs_.size()), "backward: bad node id");
        require(recs_[loss_id].value.numel() == 1,
                "backward requires a scalar loss, got shape " + shape_str(recs_[loss_id].value));
        grad_acc(loss_id).data[0] = T(1);
        for (int id = loss_id; id >= 0; --id) {
            Rec& r = recs_[id];
            if (!grad_set_[id] || !r.needs_grad || !r.back) continue;
            r.back(*this, id);
        }
    }

    // ---------------- elementwise ----------------

    int add(int a, int b) {
        check_same(a, b, "add");
        Tensor<T> out = recs_[a].value;
        const Tensor<T>& vb = recs_[b].value;
        for (long long i = 0; i < out.numel(); ++i) out.data[i] += vb.data[i];
        return record_custom(std::move(out), {a, b},
                             [a, b](Tape& t, int self) {
                                 const Tensor<T>& g = t.grad(self);
                                 t.accumulate(a, g);
                                 t.accumulate(b, g);
                             },
                             "add");
    }

    int add_const(int a, const Tensor<T>& c) {
        require(recs_[a].value.same_shape(c), "add_const: shape mismatch");
        Tensor<T> out = recs_[a].value;
        for (long long i = 0; i < out.numel(); ++i) out.data[i] += c.data[i];
        return record_custom(std::move(out), {a},
                             [a](Tape& t, int self) { t.accumulate(a, t.grad(self)); },
                             "add_const");
    }

    int sub(int a, int b) {
        check_same(a, b, "sub");
        Tensor<T> out = recs_[a].value;
        const Tensor<T>& vb = recs_[b].value;
        for (long long i = 0; i < out.numel(); ++i) out.data[i] -= vb.data[i];
        return record_custom(std::move(out), {a, b},
                             [a, b](Tape& t, int self) {
                                 const Tensor<T>& g = t.grad(self);
                                 t.accumulate(a, g);
                                 if (!t.needs_grad(b)) return;
                                 Tensor<T>& gb = t.grad_acc(b);
                                 for (long long i = 0; i < g.numel(); ++i) gb.data[i] -= g.data[i];
                             },
                             "sub");
    }

    int mul(int a, int b) {
        check_same(a, b, "mul");
        Tensor<T> out = recs_[a].value;
        const Tensor<T>& vb = recs_[b].value;
        for (long long i = 0; i < out.numel(); ++i) out.data[i] *= vb.data[i];
        return record_custom(std::move(out), {a, b},
                             [a, b](Tape& t, int self) {
                                 const Tensor<T>& g = t.grad(self);
                                 if (t.needs_grad(a)) {
                                     Tensor<T>& ga = t.grad_acc(a);
                                     const Tensor<T>& vb = t.val(b);
                                     for (long long i = 0; i < g.numel(); ++i)
                                         ga.data[i] += g.data[i] * vb.data[i];
                                 }
                                 if (t.needs_grad(b)) {
                                     Tensor<T>& gb = t.grad_acc(b);
                                     const Tensor<T>& va = t.val(a);
                                     for (long long i = 0; i < g.numel(); ++i)
                                         gb.data[i] += g.data[i] * va.data[i];
                                 }
                             },
                             "mul");
    }

    int scale(int a, double c) {
        Tensor<T> out = recs_[a].value;
        const T cv = static_cast<T>(c);
        for (auto& x : out.data) x *= cv;
        return record_custom(std::move(out), {a},
                             [a, cv](Tape& t, int self) {
                                 const Tensor<T>& g = t.grad(self);
                                 Tensor<T>& ga = t.grad_acc(a);
                                 for (long long i = 0; i < g.numel(); ++i)
                                     ga.data[i] += cv * g.data[i];
                             },
                             "scale");
    }

    // x[..., n] + b[n]
    int add_bias(int x, int b) {
        const Tensor<T>& vx = recs_[x].value;
        const Tensor<T>& vb = recs_[b].value;
        require(vb.ndim() == 1 && vx.dim(vx.ndim() - 1) == vb.dim(0),
                "add_bias: bias " + shape_str(vb) + " does not match " + shape_str(vx));
        const long long n = vb.numel();
        Tensor<T> out = vx;
        for (long long i = 0; i < out.numel(); ++i) out.data[i] += vb.data[i % n];
        return record_custom(std::move(out), {x, b},
                             [x, b, n](Tape& t, int self) {
                                 const Tensor<T>& g = t.grad(self);
                                 t.accumulate(x, g);
                                 if (!t.needs_grad(b)) return;
                                 Tensor<T>& gb = t.grad_acc(b);
                                 for (long long i = 0; i < g.numel(); ++i)
                                     gb.data[i % n] += g.data[i];
                             },
                             "add_bias");
    }

    // x[..., C] * s[C], s a fixed vector (e.g. channel std for de-normalization)
    int channel_scale(int x, const Tensor<T>& s) {
        const Tensor<T>& vx = recs_[x].value;
        require(s.ndim() == 1 && vx.dim(vx.ndim() - 1) == s.dim(0), "channel_scale: bad scale");
        const long long n = s.numel();
        Tensor<T> out = vx;
        for (long long i = 0; i < out.numel(); ++i) out.data[i] *= s.data[i % n];
        Tensor<T> sc = s;
        return record_custom(std::move(out), {x},
                             [x, sc, n](Tape& t, int self) {
                                 const Tensor<T>& g = t.grad(self);
                                 Tensor<T>& gx = t.grad_acc(x);
                                 for (long long i = 0; i < g.numel(); ++i)
                                     gx.data[i] += g.data[i] * sc.data[i % n];
                             },
                             "channel_scale");
    }

    // ---------------- shape ops ----------------

    int reshape(int x, std::vector<int> shape) {
        const Tensor<T>& vx = recs_[x].value;
        Tensor<T> out(shape);
        require(out.numel() == vx.numel(), "reshape: element count mismatch " + shape_str(vx) +
                                               " -> (" + join_ints(shape, ",") + ")");
        out.data = vx.data;
        std::vector<int> old_shape = vx.shape;
        return record_custom(std::move(out), {x},
                             [x, old_shape](Tape& t, int self) {
                                 const Tensor<T>& g = t.grad(self);
                                 Tensor<T>& gx = t.grad_acc(x);
                                 for (long long i = 0; i < g.numel(); ++i)
                                     gx.data[i] += g.data[i];
                             },
                             "reshape");
    }

    int permute(int x, std::vector<int> axes) {
        const Tensor<T>& vx = recs_[x].value;
        require(static_cast<int>(axes.size()) == vx.ndim(), "permute: axes rank mismatch");
        Tensor<T> out = permute_values(vx, axes);
        return record_custom(std::move(out), {x},
                             [x, axes](Tape& t, int self) {
                                 std::vector<int> inv(axes.size());
                                 for (size_t i = 0; i < axes.size(); ++i) inv[axes[i]] = (int)i;
                                 Tensor<T> gp = permute_values(t.grad(self), inv);
                                 t.accumulate(x, gp);
                             },
                             "permute");
    }

    // Keep-dim slice of one index along an axis.
    int slice_index(int x, int axis, int idx) {
        const Tensor<T>& vx = recs_[x].value;
        require(axis >= 0 && axis < vx.ndim(), "slice_index: bad axis");
        require(idx >= 0 && idx < vx.dim(axis), "slice_index: index out of range");
        auto st = vx.strides();
        std::vector<int> oshape = vx.shape;
        oshape[axis] = 1;
        Tensor<T> out(oshape);
        const long long outer = prefix_count(vx.shape, axis);
        const long long inner = st[axis];
        const long long axis_n = vx.dim(axis);
        for (long long o = 0; o < outer; ++o) {
            const T* src = vx.data.data() + (o * axis_n + idx) * inner;
            T* dst = out.data.data() + o * inner;
            for (long long i = 0; i < inner; ++i) dst[i] = src[i];
        }
        return record_custom(std::move(out), {x},
                             [x, axis, idx](Tape& t, int self) {
                                 const Tensor<T>& g = t.grad(self);
                                 Tensor<T>& gx = t.grad_acc(x);
                                 auto st = gx.strides();
                                 const long long outer = prefix_count(gx.shape, axis);
                                 const long long inner = st[axis];
                                 const long long axis_n = gx.dim(axis);
                                 for (long long o = 0; o < outer; ++o) {
                                     const T* src = g.data.data() + o * inner;
                                     T* dst = gx.data.data() + (o * axis_n + idx) * inner;
                                     for (long long i = 0; i < inner; ++i) dst[i] += src[i];
                                 }
                             },
                             "slice_index");
    }

    // ---------------- linear algebra ----------------

    // x[..., k] * w[k, n]
    int linear(int x, int w) {
        const Tensor<T>& vx = recs_[x].value;
        const Tensor<T>& vw = recs_[w].value;
        require(vw.ndim() == 2, "linear: weight must be 2D");
        const long long k = vw.dim(0), n = vw.dim(1);
        require(vx.dim(vx.ndim() - 1) == k, "linear: " + shape_str(vx) + " x " + shape_str(vw));
        const long long rows = vx.numel() / k;
        std::vector<int> oshape = vx.shape;
        oshape.back() = static_cast<int>(n);
        Tensor<T> out(oshape);
        matmul_ab(vx.data.data(), vw.data.data(), out.data.data(), rows, k, n);
        return record_custom(std::move(out), {x, w},
                             [x, w, rows, k, n](Tape& t, int self) {
                                 const Tensor<T>& g = t.grad(self);
                                 if (t.needs_grad(x)) {
                                     Tensor<T> gx(t.val(x).shape);
                                     matmul_abt(g.data.data(), t.val(w).data.data(),
                                                gx.data.data(), rows, n, k);
                                     t.accumulate(x, gx);
                                 }
                                 if (t.needs_grad(w)) {
                                     Tensor<T> gw(t.val(w).shape);
                                     matmul_atb(t.val(x).data.data(), g.data.data(),
                                                gw.data.data(), rows, k, n);
                                     t.accumulate(w, gw);
                                 }
                             },
                             "linear");
    }

    // P * x with a fixed double-precision matrix P (resize operators). The
    // matrix is a derived constant: no gradient is ever produced for it,
    // gradients flow through as P^T * g.
    int left_matmul_const(const Mat& P, int x) {
        const Tensor<T>& vx = recs_[x].value;
        require(vx.ndim() == 2 && vx.dim(0) == P.cols, "left_matmul_const: shape mismatch");
        Tensor<T> Pt({P.rows, P.cols});
        for (long long i = 0; i < Pt.numel(); ++i) Pt.data[i] = static_cast<T>(P.a[i]);
        const long long n = vx.dim(1);
        Tensor<T> out({P.rows, static_cast<int>(n)});
        matmul_ab(Pt.data.data(), vx.data.data(), out.data.data(), P.rows, P.cols, n);
        return record_custom(std::move(out), {x},
                             [x, Pt, n](Tape& t, int self) {
                                 const Tensor<T>& g = t.grad(self);
                                 Tensor<T> gx(t.val(x).shape);
                                 matmul_atb(Pt.data.data(), g.data.data(), gx.data.data(),
                                            Pt.dim(0), Pt.dim(1), n);
                                 t.accumulate(x, gx);
                             },
                             "left_matmul_const");
    }

    // Batched matmul over matching leading dims:
    //   transpose_b = false: a[..., m, k] * b[..., k, n]
    //   transpose_b = true:  a[..., m, k] * b[..., n, k]^T
    int bmm(int a, int b, bool transpose_b) {
        const Tensor<T>& va = recs_[a].value;
        const Tensor<T>& vb = recs_[b].value;
        require(va.ndim() == vb.ndim() && va.ndim() >= 2, "bmm: rank mismatch");
        for (int i = 0; i + 2 < va.ndim(); ++i)
            require(va.dim(i) == vb.dim(i), "bmm: batch dims differ");
        const long long m = va.dim(va.ndim() - 2);
        const long long k = va.dim(va.ndim() - 1);
        const long long n = transpose_b ? vb.dim(vb.ndim() - 2) : vb.dim(vb.ndim() - 1);
        const long long kb = transpose_b ? vb.dim(vb.ndim() - 1) : vb.dim(vb.ndim() - 2);
        require(k == kb, "bmm: inner dims differ: " + shape_str(va) + " x " + shape_str(vb));
        const long long groups = va.numel() / (m * k);
        std::vector<int> oshape(va.shape.begin(), va.shape.end() - 2);
        oshape.push_back(static_cast<int>(m));
        oshape.push_back(static_cast<int>(n));
        Tensor<T> out(oshape);
        parallel_for(groups, [&](long long g0, long long g1) {
            for (long long g = g0; g < g1; ++g) {
                const T* pa = va.data.data() + g * m * k;
                const T* pb = vb.data.data() + g * k * n;
                T* pc = out.data.data() + g * m * n;
                if (transpose_b)
                    matmul_abt_rows(pa, pb, pc, k, n, 0, m);
                else
                    matmul_ab_rows(pa, pb, pc, k, n, 0, m);
            }
        });
        return record_custom(
            std::move(out), {a, b},
            [a, b, transpose_b, m, k, n, groups](Tape& t, int self) {
                const Tensor<T>& g = t.grad(self);
                const Tensor<T>& va = t.val(a);
                const Tensor<T>& vb = t.val(b);
                if (t.needs_grad(a)) {
                    Tensor<T> ga(va.shape, T(0));
                    parallel_for(groups, [&](long long g0, long long g1) {
                        for (long long gi = g0; gi < g1; ++gi) {
                            const T* pg = g.data.data() + gi * m * n;
                            const T* pb = vb.data.data() + gi * k * n;
                            T* pa = ga.data.data() + gi * m * k;
                            if (transpose_b)
                                matmul_ab_rows(pg, pb, pa, n, k, 0, m);  // g * b
                            else
                                matmul_abt_rows(pg, pb, pa, n, k, 0, m);  // g * b^T
                        }
                    });
                    t.accumulate(a, ga);
                }
                if (t.needs_grad(b)) {
                    Tensor<T> gb(vb.shape, T(0));
                    parallel_for(groups, [&](long long g0, long long g1) {
                        for (long long gi = g0; gi < g1; ++gi) {
                            const T* pg = g.data.data() + gi * m * n;
                            const T* pa = va.data.data() + gi * m * k;
                            T* pb = gb.data.data() + gi * k * n;
                            if (transpose_b)
                                matmul_atb_rows(pg, pa, pb, m, n, k, 0, n);  // g^T * a
                            else
                                matmul_atb_rows(pa, pg, pb, m, k, n, 0, k);  // a^T * g
                        }
                    });
                    t.accumulate(b, gb);
                }
            },
            "bmm");
    }

    // ---------------- nonlinearities / normalization ----------------

    int softmax_last(int x) {
        const Tensor<T>& vx = recs_[x].value;
        const long long n = vx.dim(vx.ndim() - 1);
        const long long rows = vx.numel() / n;
        Tensor<T> out(vx.shape);
        for (long long r = 0; r < rows; ++r) {
            const T* src = vx.data.data() + r * n;
            T* dst = out.data.data() + r * n;
            T mx = src[0];
            for (long long i = 1; i < n; ++i) mx = std::max(mx, src[i]);
            T sum(0);
            for (long long i = 0; i < n; ++i) {
                dst[i] = std::exp(src[i] - mx);
                sum += dst[i];
            }
            const T inv = T(1) / sum;
            for (long long i = 0; i < n; ++i) dst[i] *= inv;
        }
        return record_custom(std::move(out), {x},
                             [x, n, rows](Tape& t, int self) {
                                 const Tensor<T>& g = t.grad(self);
                                 const Tensor<T>& y = t.val(self);
                                 Tensor<T>& gx = t.grad_acc(x);
                                 for (long long r = 0; r < rows; ++r) {
                                     const T* gy = g.data.data() + r * n;
                                     const T* yy = y.data.data() + r * n;
                                     T dot(0);
                                     for (long long i = 0; i < n; ++i) dot += gy[i] * yy[i];
                                     T* dst = gx.data.data() + r * n;
                                     for (long long i = 0; i < n; ++i)
                                         dst[i] += yy[i] * (gy[i] - dot);
                                 }
                             },
                             "softmax");
    }

    int layer_norm_last(int x, int gamma, int beta, double eps) {
        const Tensor<T>& vx = recs_[x].value;
        const long long n = vx.dim(vx.ndim() - 1);
        const long long rows = vx.numel() / n;
        const Tensor<T>& vg = recs_[gamma].value;
        const Tensor<T>& vbta = recs_[beta].value;
        require(vg.numel() == n && vbta.numel() == n, "layer_norm: affine params must match last dim");
        Tensor<T> out(vx.shape);
        Tensor<T> xhat(vx.shape);
        Tensor<T> inv_std({static_cast<int>(rows)});
        for (long long r = 0; r < rows; ++r) {
            const T* src = vx.data.data() + r * n;
            T mean(0);
            for (long long i = 0; i < n; ++i) mean += src[i];
            mean /= static_cast<T>(n);
            T var(0);
            for (long long i = 0; i < n; ++i) {
                const T d = src[i] - mean;
                var += d * d;
            }
            var /= static_cast<T>(n);
            const T istd = T(1) / std::sqrt(var + static_cast<T>(eps));
            inv_std.data[r] = istd;
            T* xh = xhat.data.data() + r * n;
            T* dst = out.data.data() + r * n;
            for (long long i = 0; i < n; ++i) {
                xh[i] = (src[i] - mean) * istd;
                dst[i] = xh[i] * vg.data[i] + vbta.data[i];
            }
        }
        return record_custom(
            std::move(out), {x, gamma, beta},
            [x, gamma, beta, n, rows, xhat, inv_std](Tape& t, int self) {
                const Tensor<T>& g = t.grad(self);
                const Tensor<T>& vg = t.val(gamma);
                if (t.needs_grad(gamma)) {
                    Tensor<T>& gg = t.grad_acc(gamma);
                    for (long long r = 0; r < rows; ++r)
                        for (long long i = 0; i < n; ++i)
                            gg.data[i] += g.data[r * n + i] * xhat.data[r * n + i];
                }
                if (t.needs_grad(beta)) {
                    Tensor<T>& gb = t.grad_acc(beta);
                    for (long long r = 0; r < rows; ++r)
                        for (long long i = 0; i < n; ++i) gb.data[i] += g.data[r * n + i];
                }
                if (t.needs_grad(x)) {
                    Tensor<T>& gx = t.grad_acc(x);
                    for (long long r = 0; r < rows; ++r) {
                        const T* gy = g.data.data() + r * n;
                        const T* xh = xhat.data.data() + r * n;
                        T sum_gy(0), sum_gyxh(0);
                        for (long long i = 0; i < n; ++i) {
                            const T gyg = gy[i] * vg.data[i];
                            sum_gy += gyg;
                            sum_gyxh += gyg * xh[i];
                        }
                        const T inv_n = T(1) / static_cast<T>(n);
                        const T istd = inv_std.data[r];
                        T* dst = gx.data.data() + r * n;
                        for (long long i = 0; i < n; ++i) {
                            const T gyg = gy[i] * vg.data[i];
                            dst[i] += istd * (gyg - inv_n * sum_gy - xh[i] * inv_n * sum_gyxh);
                        }
                    }
                }
            },
            "layer_norm");
    }

    int gelu(int x) {
        constexpr double inv_sqrt2 = 0.70710678118654752440084436210;
        const Tensor<T>& vx = recs_[x].value;
        Tensor<T> out(vx.shape);
        for (long long i = 0; i < vx.numel(); ++i) {
            const double v = static_cast<double>(vx.data[i]);
            out.data[i] = static_cast<T>(v * 0.5 * (1.0 + std::erf(v * inv_sqrt2)));
        }
        return record_custom(std::move(out), {x},
                             [x](Tape& t, int self) {
                                 const Tensor<T>& g = t.grad(self);
                                 const Tensor<T>& vx = t.val(x);
                                 Tensor<T>& gx = t.grad_acc(x);
                                 constexpr double inv_sqrt2pi = 0.3989422804014326779399461;
                                 for (long long i = 0; i < g.numel(); ++i) {
                                     const double v = static_cast<double>(vx.data[i]);
                                     const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
                                     const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
                                     gx.data[i] += g.data[i] * static_cast<T>(cdf + v * pdf);
                                 }
                             },
                             "gelu");
    }

    // Rotary embedding: x viewed as [G, P, D]; channel pairs (2c, 2c+1) are
    // rotated by the per-(position, pair) angle from the cos/sin tables
    // (each P x D/2). The rotation is orthogonal, so backward rotates the
    // gradient by the negative angle.
    int rope(int x, const Tensor<T>& cos_t, const Tensor<T>& sin_t) {
        const Tensor<T>& vx = recs_[x].value;
        const int D = vx.dim(vx.ndim() - 1);
        const int P = vx.dim(vx.ndim() - 2);
        require(D % 2 == 0, "rope: feature dim must be even");
        require(cos_t.ndim() == 2 && cos_t.dim(0) == P && cos_t.dim(1) == D / 2 &&
                    sin_t.same_shape(cos_t),
                "rope: table shape mismatch");
        Tensor<T> out(vx.shape);
        const long long groups = vx.numel() / (static_cast<long long>(P) * D);
        apply_rope(vx, cos_t, sin_t, out, groups, P, D, false);
        return record_custom(std::move(out), {x},
                             [x, cos_t, sin_t, groups, P, D](Tape& t, int self) {
                                 const Tensor<T>& g = t.grad(self);
                                 Tensor<T> gx(g.shape);
                                 apply_rope(g, cos_t, sin_t, gx, groups, P, D, true);
                                 t.accumulate(x, gx);
                             },
                             "rope");
    }

    // ---------------- convolution ----------------

    int conv2d_op(int x, int w, int stride, int pad) {
        Tensor<T> out = conv2d(recs_[x].value, recs_[w].value, stride, pad);
        return record_custom(
            std::move(out), {x, w},
            [x, w, stride, pad](Tape& t, int self) {
                const Tensor<T>& g = t.grad(self);
                if (t.needs_grad(x)) {
                    const Tensor<T>& vx = t.val(x);
                    Tensor<T> gx = conv_transpose2d(g, t.val(w), stride, pad,
                                                    BorderAdjoint::discard, vx.dim(1), vx.dim(2));
                    t.accumulate(x, gx);
                }
                if (t.needs_grad(w)) {
                    const int k = t.val(w).dim(0);
                    Tensor<T> gw = conv2d_weight_grad(t.val(x), g, k, stride, pad);
                    t.accumulate(w, gw);
                }
            },
            "conv2d");
    }

    int conv_transpose2d_op(int y, int w, int stride, int crop,
                            BorderAdjoint border = BorderAdjoint::discard) {
        Tensor<T> out = conv_transpose2d(recs_[y].value, recs_[w].value, stride, crop, border);
        return record_custom(
            std::move(out), {y, w},
            [y, w, stride, crop, border](Tape& t, int self) {
                const Tensor<T>& g = t.grad(self);
                const bool wrap = border == BorderAdjoint::wrap;
                // The adjoint of wrap-cropping is periodic padding of the
                // incoming gradient before the correlation.
                const Tensor<T> gp = wrap ? pad2d_periodic(g, crop) : g;
                const int pad = wrap ? 0 : crop;
                if (t.needs_grad(y)) {
                    Tensor<T> gy = conv2d(gp, t.val(w), stride, pad);
                    t.accumulate(y, gy);
                }
                if (t.needs_grad(w)) {
                    const int k = t.val(w).dim(0);
                    const Tensor<T>& vy = t.val(y);
                    // gw[ky,kx,ci,co] = sum_rows patches(g)[row,(ky,kx,ci)] * y[row,co]
                    Tensor<T> cols = im2col(gp, k, stride, pad);
                    Tensor<T> gw(t.val(w).shape);
                    matmul_atb(cols.data.data(), vy.data.data(), gw.data.data(), cols.dim(0),
                               static_cast<long long>(k) * k * t.val(w).dim(2), vy.dim(3));
                    t.accumulate(w, gw);
                }
            },
            "conv_transpose2d");
    }

    // Spatial padding of (B,H,W,C). For learned mode, pad_param is a [C]
    // parameter whose value fills the border; its gradient is the sum of
    // border gradients.
    int pad2d(int x, int amount, PadMode mode, int pad_param = -1) {
        require(amount >= 0, "pad2d: amount must be >= 0");
        const Tensor<T>& vx = recs_[x].value;
        require(vx.ndim() == 4, "pad2d expects (B,H,W,C)");
        if (amount == 0) return x;
        const int B = vx.dim(0), H = vx.dim(1), W = vx.dim(2), C = vx.dim(3);
        Tensor<T> out;
        std::vector<int> parents{x};
        if (mode == PadMode::periodic) {
            out = pad2d_periodic(vx, amount);
        } else {
            out = Tensor<T>({B, H + 2 * amount, W + 2 * amount, C}, T(0));
            if (mode == PadMode::learned) {
                require(pad_param >= 0, "pad2d: learned mode needs a pad parameter");
                const Tensor<T>& pv = recs_[pad_param].value;
                require(pv.numel() == C, "pad2d: pad parameter must have one entry per channel");
                for (long long i = 0; i < out.numel(); ++i) out.data[i] = pv.data[i % C];
                parents.push_back(pad_param);
            }
            // interior copy
            for (int b = 0; b < B; ++b)
                for (int y = 0; y < H; ++y) {
                    const T* src = vx.data.data() + ((static_cast<long long>(b) * H + y) * W) * C;
                    T* dst = out.data.data() +
                             ((static_cast<long long>(b) * (H + 2 * amount) + y + amount) *
                                  (W + 2 * amount) +
                              amount) *
                                 C;
                    std::copy(src, src + static_cast<long long>(W) * C, dst);
                }
        }
        const int Hp = H + 2 * amount, Wp = W + 2 * amount;
        return record_custom(
            std::move(out), std::move(parents),
            [x, amount, mode, pad_param, B, H, W, C, Hp, Wp](Tape& t, int self) {
                const Tensor<T>& g = t.grad(self);
                if (t.needs_grad(x)) {
                    Tensor<T>& gx = t.grad_acc(x);
                    if (mode == PadMode::periodic) {
                        for (int b = 0; b < B; ++b)
                            for (int y = 0; y < Hp; ++y) {
                                const int sy = ((y - amount) % H + H) % H;
                                for (int x2 = 0; x2 < Wp; ++x2) {
                                    const int sx = ((x2 - amount) % W + W) % W;
                                    const T* src =
                                        g.data.data() +
                                        ((static_cast<long long>(b) * Hp + y) * Wp + x2) * C;
                                    T* dst = gx.data.data() +
                                             ((static_cast<long long>(b) * H + sy) * W + sx) * C;
                                    for (int c = 0; c < C; ++c) dst[c] += src[c];
                                }
                            }
                    } else {
                        for (int b = 0; b < B; ++b)
                            for (int y = 0; y < H; ++y) {
                                const T* src =
                                    g.data.data() +
                                    ((static_cast<long long>(b) * Hp + y + amount) * Wp + amount) *
                                        C;
                                T* dst =
                                    gx.data.data() + ((static_cast<long long>(b) * H + y) * W) * C;
                                for (long long i = 0; i < static_cast<long long>(W) * C; ++i)
                                    dst[i] += src[i];
                            }
                    }
                }
                if (mode == PadMode::learned && pad_param >= 0 && t.needs_grad(pad_param)) {
                    Tensor<T>& gp = t.grad_acc(pad_param);
                    for (int b = 0; b < B; ++b)
                        for (int y = 0; y < Hp; ++y)
                            for (int x2 = 0; x2 < Wp; ++x2) {
                                const bool border = y < amount || y >= H + amount || x2 < amount ||
                                                    x2 >= W + amount;
                                if (!border) continue;
                                const T* src =
                                    g.data.data() +
                                    ((static_cast<long long>(b) * Hp + y) * Wp + x2) * C;
                                for (int c = 0; c < C; ++c) gp.data[c] += src[c];
                            }
                }
            },
            "pad2d");
    }

    // ---------------- reductions / losses ----------------

    int sum_all(int x) {
        const Tensor<T>& vx = recs_[x].value;
        T acc(0);
        for (long long i = 0; i < vx.numel(); ++i) acc += vx.data[i];
        Tensor<T> out({1});
        out.data[0] = acc;
        return record_custom(std::move(out), {x},
                             [x](Tape& t, int self) {
                                 const T g = t.grad(self).data[0];
                                 Tensor<T>& gx = t.grad_acc(x);
                                 for (auto& v : gx.data) v += g;
                             },
                             "sum_all");
    }

    int mean_all(int x) {
        const long long n = recs_[x].value.numel();
        return scale(sum_all(x), 1.0 / static_cast<double>(n));
    }

    // Normalized MSE, fields and space averaged: layout (batch, ..., channel);
    // per (b,c): mean_space((pred - target)^2) / (mean_space(target^2) + eps),
    // then the mean over batch entries and channels.
    int nmse_loss(int pred, const Tensor<T>& target, double eps) {
        const Tensor<T>& vp = recs_[pred].value;
        require(vp.same_shape(target),
                "nmse_loss: shape mismatch " + shape_str(vp) + " vs " + shape_str(target));
        require(vp.ndim() >= 2, "nmse_loss expects (batch, ..., channel)");
        const int C = vp.dim(vp.ndim() - 1);
        const int B = vp.dim(0);
        const long long spatial = vp.numel() / (static_cast<long long>(B) * C);
        const long long per_b = vp.numel() / B;
        std::vector<double> num(static_cast<size_t>(B) * C, 0.0), den(num.size(), 0.0);
        for (long long i = 0; i < vp.numel(); ++i) {
            const long long bc = (i / per_b) * C + i % C;
            const double d = static_cast<double>(vp.data[i]) - static_cast<double>(target.data[i]);
            num[bc] += d * d;
            den[bc] += static_cast<double>(target.data[i]) * static_cast<double>(target.data[i]);
        }
        double loss = 0.0;
        std::vector<T> coeff(num.size());
        for (size_t bc = 0; bc < num.size(); ++bc) {
            const double denom = den[bc] / spatial + eps;
            loss += (num[bc] / spatial) / denom;
            // d loss / d pred = 2 (pred - target) / (spatial * denom * B * C)
            coeff[bc] = static_cast<T>(2.0 / (spatial * denom * B * C));
        }
        loss /= static_cast<double>(num.size());
        Tensor<T> out({1});
        out.data[0] = static_cast<T>(loss);
        Tensor<T> tgt = target;
        return record_custom(std::move(out), {pred},
                             [pred, tgt, coeff, C, per_b](Tape& t, int self) {
                                 const T g = t.grad(self).data[0];
                                 const Tensor<T>& vp = t.val(pred);
                                 Tensor<T>& gp = t.grad_acc(pred);
                                 for (long long i = 0; i < vp.numel(); ++i) {
                                     const long long bc = (i / per_b) * C + i % C;
                                     gp.data[i] += g * coeff[bc] * (vp.data[i] - tgt.data[i]);
                                 }
                             },
                             "nmse_loss");
    }

    // ---------------- helpers ----------------

    void accumulate(int id, const Tensor<T>& g) {
        if (!recs_[id].needs_grad) return;
        require(g.same_shape(recs_[id].value), "gradient shape " + shape_str(g) +
                                                   " does not match value " +
                                                   shape_str(recs_[id].value));
        Tensor<T>& dst = grad_acc(id);
        for (long long i = 0; i < g.numel(); ++i) dst.data[i] += g.data[i];
    }

    static Tensor<T> permute_values(const Tensor<T>& x, const std::vector<int>& axes) {
        std::vector<int> oshape(axes.size());
        for (size_t i = 0; i < axes.size(); ++i) oshape[i] = x.dim(axes[i]);
        Tensor<T> out(oshape);
        const auto in_st = x.strides();
        const auto out_st = out.strides();
        const int nd = x.ndim();
        std::vector<long long> pstride(nd);  // stride in input for each output axis
        for (int i = 0; i < nd; ++i) pstride[i] = in_st[axes[i]];
        std::vector<int> idx(nd, 0);
        const long long n = x.numel();
        long long src = 0;
        for (long long o = 0; o < n; ++o) {
            out.data[o] = x.data[src];
            for (int d = nd - 1; d >= 0; --d) {
                if (++idx[d] < oshape[d]) {
                    src += pstride[d];
                    break;
                }
                idx[d] = 0;
                src -= pstride[d] * (oshape[d] - 1);
            }
        }
        return out;
    }

private:
    struct Rec {
        Tensor<T> value;
        std::vector<int> parents;
        BackFn back;
        bool needs_grad = false;
        std::string op;
    };

    static long long prefix_count(const std::vector<int>& shape, int axis) {
        long long n = 1;
        for (int i = 0; i < axis; ++i) n *= shape[i];
        return n;
    }

    static void apply_rope(const Tensor<T>& x, const Tensor<T>& cos_t, const Tensor<T>& sin_t,
                           Tensor<T>& out, long long groups, int P, int D, bool inverse) {
        const int half = D / 2;
        for (long long g = 0; g < groups; ++g) {
            for (int p = 0; p < P; ++p) {
                const T* src = x.data.data() + (g * P + p) * D;
                T* dst = out.data.data() + (g * P + p) * D;
                const T* cs = cos_t.data.data() + static_cast<long long>(p) * half;
                const T* sn = sin_t.data.data() + static_cast<long long>(p) * half;
                for (int c = 0; c < half; ++c) {
                    const T x0 = src[2 * c], x1 = src[2 * c + 1];
                    const T s = inverse ? -sn[c] : sn[c];
                    dst[2 * c] = cs[c] * x0 - s * x1;
                    dst[2 * c + 1] = s * x0 + cs[c] * x1;
                }
            }
        }
    }

    void check_same(int a, int b, const char* op) {
        require(recs_[a].value.same_shape(recs_[b].value),
                std::string(op) + ": shape mismatch " + shape_str(recs_[a].value) + " vs " +
                    shape_str(recs_[b].value));
    }

    int push(Tensor<T> v, std::vector<int> parents, BackFn back, bool needs, std::string op) {
        Rec r;
        r.value = std::move(v);
        r.parents = std::move(parents);
        r.back = std::move(back);
        r.needs_grad = needs;
        r.op = std::move(op);
        recs_.push_back(std::move(r));
        grads_.emplace_back();
        grad_set_.push_back(0);
        return static_cast<int>(recs_.size()) - 1;
    }

    std::vector<Rec> recs_;
    std::vector<Tensor<T>> grads_;
    std::vector<char> grad_set_;
};

// Named trainable tensors in registration order. Registration order defines
// both the initialization draw sequence and the optimizer update order.
template <typename T>
class ParameterSet {
public:
    int add(const std::string& name, Tensor<T> v) {
        require(index_.find(name) == index_.end(), "duplicate parameter name: " + name);
        index_[name] = static_cast<int>(names_.size());
        names_.push_back(name);
        values_.push_back(std::move(v));
        return static_cast<int>(names_.size()) - 1;
    }

    int find(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? -1 : it->second;
    }

    size_t size() const { return names_.size(); }
    const std::string& name(int i) const { return names_[i]; }
    Tensor<T>& value(int i) { return values_[i]; }
    const Tensor<T>& value(int i) const { return values_[i]; }
    Tensor<T>& value(const std::string& name) {
        const int i = find(name);
        require(i >= 0, "unknown parameter: " + name);
        return values_[i];
    }

    long long total_scalars() const {
        long long n = 0;
        for (const auto& v : values_) n += v.numel();
        return n;
    }

    // Register every parameter as a tape leaf; returns ids in registration order.
    std::vector<int> bind(Tape<T>& tape) const {
        std::vector<int> ids(values_.size());
        for (size_t i = 0; i < values_.size(); ++i) ids[i] = tape.add_leaf(values_[i], true);
        return ids;
    }

private:
    std::vector<std::string> names_;
    std::vector<Tensor<T>> values_;
    std::unordered_map<std::string, int> index_;
};

struct FdCheckResult {
    double max_rel_err = 0.0;
    std::string worst_param;
    long long coords_checked = 0;
};

// Central-difference check of tape gradients on a sampled subset of
// parameter coordinates. `build` recomputes the scalar loss from the current
// parameter values: (Tape<T>&, const std::vector<int>& param_ids) -> loss id.
template <typename T, typename BuildFn>
FdCheckResult fd_check(ParameterSet<T>& params, BuildFn build, double h, int coords_per_tensor,
                       uint64_t seed) {
    auto eval = [&](bool want_grads, std::vector<Tensor<T>>* grads) -> double {
        Tape<T> tape;
        std::vector<int> ids = params.bind(tape);
        const int loss = build(tape, ids);
        const double value = static_cast<double>(tape.val(loss).data[0]);
        if (!std::isfinite(value)) throw numeric_error("fd_check: loss evaluated to a non-finite value");
        if (want_grads) {
            tape.backward(loss);
            grads->clear();
            for (size_t i = 0; i < params.size(); ++i) {
                if (tape.has_grad(ids[i]))
                    grads->push_back(tape.grad(ids[i]));
                else
                    grads->push_back(Tensor<T>(params.value(static_cast<int>(i)).shape, T(0)));
            }
        }
        return value;
    };

    std::vector<Tensor<T>> ad_grads;
    eval(true, &ad_grads);

    struct Coord {
        int param;
        long long idx;
        double ad;
    };
    std::vector<Coord> coords;
    RandomStream rng(seed, "fd_check");
    for (size_t pi = 0; pi < params.size(); ++pi) {
        const long long n = params.value(static_cast<int>(pi)).numel();
        const int take = static_cast<int>(std::min<long long>(coords_per_tensor, n));
        for (int s = 0; s < take; ++s) {
            const long long idx = static_cast<long long>(rng.below(static_cast<uint64_t>(n)));
            coords.push_back({static_cast<int>(pi), idx,
                              static_cast<double>(ad_grads[pi].data[idx])});
        }
    }
    double mean_abs = 0.0;
    for (const auto& c : coords) mean_abs += std::abs(c.ad);
    if (!coords.empty()) mean_abs /= static_cast<double>(coords.size());
    const double floor = 1e-9 + 1e-6 * mean_abs;

    FdCheckResult result;
    result.coords_checked = static_cast<long long>(coords.size());
    for (const auto& c : coords) {
        Tensor<T>& pv = params.value(c.param);
        const T saved = pv.data[c.idx];
        pv.data[c.idx] = saved + static_cast<T>(h);
        const double lp = eval(false, nullptr);
        pv.data[c.idx] = saved - static_cast<T>(h);
        const double lm = eval(false, nullptr);
        pv.data[c.idx] = saved;
        const double fd = (lp - lm) / (2.0 * h);
        const double denom = std::max({std::abs(c.ad), std::abs(fd), floor});
        const double err = denom > 0.0 ? std::abs(c.ad - fd) / denom : 0.0;
        if (err > result.max_rel_err) {
            result.max_rel_err = err;
            result.worst_param = params.name(c.param);
        }
    }
    return result;
}

}  // namespace flexipatch
