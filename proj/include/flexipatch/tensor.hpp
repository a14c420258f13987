#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <vector>

#include "flexipatch/common.hpp"

namespace flexipatch {

// Dense row-major tensor. Element type is float (training default) or
// double (oracle and adjoint tests).
template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(checked_numel(shape)) {}
    Tensor(std::vector<int> s, T fill) : shape(std::move(s)), data(checked_numel(shape), fill) {}

    static long long checked_numel(const std::vector<int>& s) {
        long long n = 1;
        for (int e : s) {
            require(e > 0, "tensor extent must be positive, got shape " + join_ints(s));
            n *= e;
        }
        return n;
    }

    long long numel() const { return static_cast<long long>(data.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }

    // Row-major strides.
    std::vector<long long> strides() const {
        std::vector<long long> st(shape.size());
        long long acc = 1;
        for (int i = ndim() - 1; i >= 0; --i) {
            st[i] = acc;
            acc *= shape[i];
        }
        return st;
    }

    T& at(std::initializer_list<int> idx) { return data[offset(idx)]; }
    T at(std::initializer_list<int> idx) const { return data[offset(idx)]; }

    long long offset(std::initializer_list<int> idx) const {
        long long off = 0, acc = 1;
        int i = ndim() - 1;
        auto it = idx.end();
        while (it != idx.begin()) {
            --it;
            off += static_cast<long long>(*it) * acc;
            acc *= shape[i--];
        }
        return off;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape);
        for (long long i = 0; i < numel(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

template <typename T>
std::string shape_str(const Tensor<T>& t) {
    return "(" + join_ints(t.shape, ",") + ")";
}

// ---------------------------------------------------------------------------
// Dense matrix products. All accumulation orders are fixed (ascending inner
// index) and parallel splits touch disjoint output rows, so results are
// bit-identical for any thread count. The *_rows variants compute a row
// range only; callers that already run inside a parallel region use them to
// avoid nested thread spawning.
// ---------------------------------------------------------------------------

// C[i0:i1, :] of C[m,n] = A[m,k] * B[k,n]
template <typename T>
void matmul_ab_rows(const T* A, const T* B, T* C, long long k, long long n, long long i0,
                    long long i1) {
    for (long long i = i0; i < i1; ++i) {
        T* c = C + i * n;
        std::fill(c, c + n, T(0));
        const T* a = A + i * k;
        for (long long p = 0; p < k; ++p) {
            T av = a[p];
            const T* b = B + p * n;
            for (long long j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

// C[m,n] = A[m,k] * B[k,n]
template <typename T>
void matmul_ab(const T* A, const T* B, T* C, long long m, long long k, long long n) {
    parallel_for(m, [&](long long i0, long long i1) { matmul_ab_rows(A, B, C, k, n, i0, i1); });
}

// C[i0:i1, :] of C[k,n] = A[m,k]^T * B[m,n]
template <typename T>
void matmul_atb_rows(const T* A, const T* B, T* C, long long m, long long k, long long n,
                     long long i0, long long i1) {
    for (long long i = i0; i < i1; ++i) {
        T* c = C + i * n;
        std::fill(c, c + n, T(0));
        for (long long r = 0; r < m; ++r) {
            T av = A[r * k + i];
            const T* b = B + r * n;
            for (long long j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

// C[k,n] = A[m,k]^T * B[m,n]
template <typename T>
void matmul_atb(const T* A, const T* B, T* C, long long m, long long k, long long n) {
    parallel_for(k, [&](long long i0, long long i1) { matmul_atb_rows(A, B, C, m, k, n, i0, i1); });
}

// C[i0:i1, :] of C[m,n] = A[m,k] * B[n,k]^T
template <typename T>
void matmul_abt_rows(const T* A, const T* B, T* C, long long k, long long n, long long i0,
                     long long i1) {
    for (long long i = i0; i < i1; ++i) {
        const T* a = A + i * k;
        T* c = C + i * n;
        for (long long j = 0; j < n; ++j) {
            const T* b = B + j * k;
            T acc(0);
            for (long long p = 0; p < k; ++p) acc += a[p] * b[p];
            c[j] = acc;
        }
    }
}

// C[m,n] = A[m,k] * B[n,k]^T
template <typename T>
void matmul_abt(const T* A, const T* B, T* C, long long m, long long k, long long n) {
    parallel_for(m, [&](long long i0, long long i1) { matmul_abt_rows(A, B, C, k, n, i0, i1); });
}

// ---------------------------------------------------------------------------
// Strided 2D convolution (cross-correlation, deep-learning convention) and
// its exact adjoint. Layouts: x (B,H,W,Cin), w (k,k,Cin,Cout),
// y (B,Nh,Nw,Cout). Output extents follow
//   Nh = floor((H + 2*pad - k) / stride) + 1
// and the transposed op restores H = (Nh-1)*stride + k - 2*crop.
// ---------------------------------------------------------------------------

inline int conv_out_extent(int in, int k, int stride, int pad) {
    require(stride >= 1, "conv stride must be >= 1");
    require(pad >= 0, "conv pad must be >= 0");
    require(in + 2 * pad >= k, "kernel size " + std::to_string(k) + " exceeds padded extent " +
                                   std::to_string(in + 2 * pad));
    return (in + 2 * pad - k) / stride + 1;
}

// Gather sliding-window patches into a (B*Nh*Nw, k*k*Cin) matrix. Out-of-range
// positions read as zero (zero padding).
template <typename T>
Tensor<T> im2col(const Tensor<T>& x, int k, int stride, int pad) {
    require(x.ndim() == 4, "im2col expects (B,H,W,C), got " + shape_str(x));
    const int B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    const int Nh = conv_out_extent(H, k, stride, pad);
    const int Nw = conv_out_extent(W, k, stride, pad);
    const long long K = static_cast<long long>(k) * k * C;
    Tensor<T> cols({B * Nh * Nw, static_cast<int>(K)}, T(0));
    const long long rows_per_b = static_cast<long long>(Nh) * Nw;
    parallel_for(static_cast<long long>(B) * Nh, [&](long long r0, long long r1) {
        for (long long bi = r0; bi < r1; ++bi) {
            const int b = static_cast<int>(bi / Nh);
            const int oy = static_cast<int>(bi % Nh);
            for (int ox = 0; ox < Nw; ++ox) {
                T* dst = cols.data.data() + (b * rows_per_b + static_cast<long long>(oy) * Nw + ox) * K;
                for (int ky = 0; ky < k; ++ky) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= H) continue;
                    for (int kx = 0; kx < k; ++kx) {
                        const int ix = ox * stride + kx - pad;
                        if (ix < 0 || ix >= W) continue;
                        const T* src = x.data.data() +
                                       ((static_cast<long long>(b) * H + iy) * W + ix) * C;
                        T* d = dst + (static_cast<long long>(ky) * k + kx) * C;
                        for (int c = 0; c < C; ++c) d[c] = src[c];
                    }
                }
            }
        }
    });
    return cols;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int stride, int pad) {
    require(x.ndim() == 4, "conv2d input must be (B,H,W,Cin), got " + shape_str(x));
    require(w.ndim() == 4 && w.dim(0) == w.dim(1),
            "conv2d kernel must be (k,k,Cin,Cout), got " + shape_str(w));
    require(x.dim(3) == w.dim(2), "conv2d channel mismatch: input " + shape_str(x) +
                                      " has Cin=" + std::to_string(x.dim(3)) + ", kernel " +
                                      shape_str(w) + " expects Cin=" + std::to_string(w.dim(2)));
    const int B = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int k = w.dim(0), Ci = w.dim(2), Co = w.dim(3);
    const int Nh = conv_out_extent(H, k, stride, pad);
    const int Nw = conv_out_extent(W, k, stride, pad);
    Tensor<T> cols = im2col(x, k, stride, pad);
    Tensor<T> y({B, Nh, Nw, Co});
    matmul_ab(cols.data.data(), w.data.data(), y.data.data(),
              static_cast<long long>(B) * Nh * Nw, static_cast<long long>(k) * k * Ci, Co);
    return y;
}

enum class BorderAdjoint {
    discard,  // adjoint of zero padding: contributions outside the window are dropped
    wrap      // adjoint of periodic padding: contributions wrap around modulo the extent
};

// Exact adjoint of conv2d: for matching shapes,
//   <conv2d(x,w,s,pad=c), y> == <x, conv_transpose2d(y,w,s,crop=c)>.
// out_h/out_w override the symmetric extent formula (used by the conv2d
// backward pass when the forward floor division discarded trailing rows).
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& y, const Tensor<T>& w, int stride, int crop,
                           BorderAdjoint border = BorderAdjoint::discard, int out_h = -1,
                           int out_w = -1) {
    require(y.ndim() == 4, "conv_transpose2d input must be (B,Nh,Nw,Cout), got " + shape_str(y));
    require(w.ndim() == 4 && w.dim(0) == w.dim(1),
            "conv_transpose2d kernel must be (k,k,Cin,Cout), got " + shape_str(w));
    require(y.dim(3) == w.dim(3), "conv_transpose2d channel mismatch: tokens " + shape_str(y) +
                                      " vs kernel " + shape_str(w));
    require(crop >= 0, "conv_transpose2d crop must be >= 0");
    const int B = y.dim(0), Nh = y.dim(1), Nw = y.dim(2);
    const int k = w.dim(0), Ci = w.dim(2), Co = w.dim(3);
    const int H = out_h > 0 ? out_h : (Nh - 1) * stride + k - 2 * crop;
    const int W = out_w > 0 ? out_w : (Nw - 1) * stride + k - 2 * crop;
    require(H > 0 && W > 0, "conv_transpose2d crop " + std::to_string(crop) +
                                " produces non-positive output extent");
    const long long K = static_cast<long long>(k) * k * Ci;
    // G[r, (ky,kx,ci)] = sum_co y[r,co] * w[ky,kx,ci,co]
    Tensor<T> G({B * Nh * Nw, static_cast<int>(K)});
    matmul_abt(y.data.data(), w.data.data(), G.data.data(),
               static_cast<long long>(B) * Nh * Nw, Co, K);
    Tensor<T> x({B, H, W, Ci}, T(0));
    const bool wrap = border == BorderAdjoint::wrap;
    // Scatter-add overlaps; parallel only across batch entries.
    parallel_for(B, [&](long long b0, long long b1) {
        for (long long b = b0; b < b1; ++b) {
            for (int oy = 0; oy < Nh; ++oy) {
                for (int ox = 0; ox < Nw; ++ox) {
                    const T* g = G.data.data() + ((b * Nh + oy) * Nw + ox) * K;
                    for (int ky = 0; ky < k; ++ky) {
                        int iy = oy * stride + ky - crop;
                        if (wrap) {
                            iy = ((iy % H) + H) % H;
                        } else if (iy < 0 || iy >= H) {
                            continue;
                        }
                        for (int kx = 0; kx < k; ++kx) {
                            int ix = ox * stride + kx - crop;
                            if (wrap) {
                                ix = ((ix % W) + W) % W;
                            } else if (ix < 0 || ix >= W) {
                                continue;
                            }
                            T* dst = x.data.data() + ((b * H + iy) * W + ix) * Ci;
                            const T* src = g + (static_cast<long long>(ky) * k + kx) * Ci;
                            for (int c = 0; c < Ci; ++c) dst[c] += src[c];
                        }
                    }
                }
            }
        }
    });
    return x;
}

// Kernel gradient shared by conv2d and conv_transpose2d backward passes:
// gw[ky,kx,ci,co] = sum_rows patches(x)[row,(ky,kx,ci)] * gy[row,co]
template <typename T>
Tensor<T> conv2d_weight_grad(const Tensor<T>& x, const Tensor<T>& gy, int k, int stride, int pad) {
    const int Ci = x.dim(3), Co = gy.dim(3);
    Tensor<T> cols = im2col(x, k, stride, pad);
    Tensor<T> gw({k, k, Ci, Co});
    matmul_atb(cols.data.data(), gy.data.data(), gw.data.data(), cols.dim(0),
               static_cast<long long>(k) * k * Ci, Co);
    return gw;
}

// Periodic (wrap-around) spatial padding of a (B,H,W,C) tensor.
template <typename T>
Tensor<T> pad2d_periodic(const Tensor<T>& x, int a) {
    require(x.ndim() == 4, "pad2d_periodic expects (B,H,W,C)");
    require(a >= 0, "pad amount must be >= 0");
    const int B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    Tensor<T> out({B, H + 2 * a, W + 2 * a, C});
    for (int b = 0; b < B; ++b) {
        for (int y = 0; y < H + 2 * a; ++y) {
            const int sy = ((y - a) % H + H) % H;
            for (int x2 = 0; x2 < W + 2 * a; ++x2) {
                const int sx = ((x2 - a) % W + W) % W;
                const T* src = x.data.data() + ((static_cast<long long>(b) * H + sy) * W + sx) * C;
                T* dst = out.data.data() +
                         ((static_cast<long long>(b) * (H + 2 * a) + y) * (W + 2 * a) + x2) * C;
                for (int c = 0; c < C; ++c) dst[c] = src[c];
            }
        }
    }
    return out;
}

}  // namespace flexipatch
