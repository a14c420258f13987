#include "flexipatch/fft.hpp"

#include <cmath>

namespace flexipatch {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

bool is_pow2(size_t n) { return n != 0 && (n & (n - 1)) == 0; }

size_t next_pow2(size_t n) {
    size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

// Iterative radix-2 Cooley-Tukey, length must be a power of two.
void fft_pow2(std::vector<std::complex<double>>& a, int sign) {
    const size_t n = a.size();
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = sign * kTwoPi / static_cast<double>(len);
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t j = 0; j < len / 2; ++j) {
                std::complex<double> u = a[i + j];
                std::complex<double> v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

// Bluestein chirp-z for arbitrary lengths, built on the power-of-two path.
void fft_bluestein(std::vector<std::complex<double>>& a, int sign) {
    const size_t n = a.size();
    const size_t m = next_pow2(2 * n - 1);
    std::vector<std::complex<double>> chirp(n);
    for (size_t k = 0; k < n; ++k) {
        // angle = sign * pi * k^2 / n, with k^2 reduced mod 2n to keep precision
        const size_t k2 = (k * k) % (2 * n);
        const double ang = sign * kTwoPi / 2.0 * static_cast<double>(k2) / static_cast<double>(n);
        chirp[k] = std::complex<double>(std::cos(ang), std::sin(ang));
    }
    std::vector<std::complex<double>> fa(m, {0.0, 0.0}), fb(m, {0.0, 0.0});
    for (size_t k = 0; k < n; ++k) fa[k] = a[k] * chirp[k];
    fb[0] = std::conj(chirp[0]);
    for (size_t k = 1; k < n; ++k) fb[k] = fb[m - k] = std::conj(chirp[k]);
    fft_pow2(fa, -1);
    fft_pow2(fb, -1);
    for (size_t k = 0; k < m; ++k) fa[k] *= fb[k];
    fft_pow2(fa, +1);
    const double inv_m = 1.0 / static_cast<double>(m);
    for (size_t k = 0; k < n; ++k) a[k] = fa[k] * inv_m * chirp[k];
}

}  // namespace

void fft_1d(std::vector<std::complex<double>>& a, int sign) {
    if (a.size() <= 1) return;
    if (is_pow2(a.size())) {
        fft_pow2(a, sign);
    } else {
        fft_bluestein(a, sign);
    }
}

ComplexGrid rfft2(const Tensor<double>& x) {
    require(x.ndim() == 2, "rfft2 expects a (H,W) field, got " + shape_str(x));
    const int H = x.dim(0), W = x.dim(1);
    ComplexGrid g;
    g.h = H;
    g.w = W;
    g.w_half = W / 2 + 1;
    g.data.assign(static_cast<size_t>(H) * g.w_half, {0.0, 0.0});
    // Row transforms, keep the non-negative-frequency half.
    std::vector<std::complex<double>> row(W);
    for (int y = 0; y < H; ++y) {
        for (int i = 0; i < W; ++i) row[i] = {x.data[static_cast<size_t>(y) * W + i], 0.0};
        fft_1d(row, -1);
        for (int mx = 0; mx < g.w_half; ++mx) g.at(y, mx) = row[mx];
    }
    // Column transforms on the kept columns.
    std::vector<std::complex<double>> col(H);
    for (int mx = 0; mx < g.w_half; ++mx) {
        for (int y = 0; y < H; ++y) col[y] = g.at(y, mx);
        fft_1d(col, -1);
        for (int my = 0; my < H; ++my) g.at(my, mx) = col[my];
    }
    return g;
}

Tensor<double> irfft2(const ComplexGrid& g) {
    const int H = g.h, W = g.w;
    require(H >= 1 && W >= 1 && g.w_half == W / 2 + 1, "irfft2: inconsistent ComplexGrid");
    // Rebuild the full-width spectrum from Hermitian symmetry, inverse
    // transform, scale by 1/(H*W).
    std::vector<std::complex<double>> full(static_cast<size_t>(H) * W);
    for (int my = 0; my < H; ++my) {
        for (int mx = 0; mx < W; ++mx) {
            if (mx < g.w_half) {
                full[static_cast<size_t>(my) * W + mx] = g.at(my, mx);
            } else {
                const int sy = (H - my) % H;
                const int sx = (W - mx) % W;
                full[static_cast<size_t>(my) * W + mx] = std::conj(g.at(sy, sx));
            }
        }
    }
    std::vector<std::complex<double>> vec(W);
    for (int my = 0; my < H; ++my) {
        for (int mx = 0; mx < W; ++mx) vec[mx] = full[static_cast<size_t>(my) * W + mx];
        fft_1d(vec, +1);
        for (int mx = 0; mx < W; ++mx) full[static_cast<size_t>(my) * W + mx] = vec[mx];
    }
    Tensor<double> out({H, W});
    std::vector<std::complex<double>> colv(H);
    const double norm = 1.0 / (static_cast<double>(H) * W);
    for (int mx = 0; mx < W; ++mx) {
        for (int my = 0; my < H; ++my) colv[my] = full[static_cast<size_t>(my) * W + mx];
        fft_1d(colv, +1);
        for (int y = 0; y < H; ++y) out.data[static_cast<size_t>(y) * W + mx] = colv[y].real() * norm;
    }
    return out;
}

double spectrum_energy(const ComplexGrid& g) {
    double e = 0.0;
    for (int my = 0; my < g.h; ++my) {
        for (int mx = 0; mx < g.w_half; ++mx) {
            e += g.column_weight(mx) * std::norm(g.at(my, mx));
        }
    }
    return e;
}

}  // namespace flexipatch
