// Convolution, transposed convolution and FFT contracts, checked against
// independent nested-loop and direct-sum oracles.

#include <cmath>
#include <complex>
#include <vector>

#include "flexipatch/fft.hpp"
#include "flexipatch/rng.hpp"
#include "flexipatch/tensor.hpp"
#include "harness.hpp"

using namespace flexipatch;
using testing::check;
using testing::check_close;
using testing::check_le;
using testing::check_throws;

namespace {

// Reference nested-loop cross-correlation, written independently of the
// im2col path it checks.
Tensor<double> conv2d_reference(const Tensor<double>& x, const Tensor<double>& w, int stride,
                                int pad) {
    const int B = x.dim(0), H = x.dim(1), W = x.dim(2), Ci = x.dim(3);
    const int k = w.dim(0), Co = w.dim(3);
    const int Nh = (H + 2 * pad - k) / stride + 1;
    const int Nw = (W + 2 * pad - k) / stride + 1;
    Tensor<double> y({B, Nh, Nw, Co}, 0.0);
    for (int b = 0; b < B; ++b)
        for (int oy = 0; oy < Nh; ++oy)
            for (int ox = 0; ox < Nw; ++ox)
                for (int co = 0; co < Co; ++co) {
                    double acc = 0.0;
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx)
                            for (int ci = 0; ci < Ci; ++ci) {
                                const int iy = oy * stride + ky - pad;
                                const int ix = ox * stride + kx - pad;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += x.at({b, iy, ix, ci}) * w.at({ky, kx, ci, co});
                            }
                    y.at({b, oy, ox, co}) = acc;
                }
    return y;
}

Tensor<double> random_tensor(std::vector<int> shape, RandomStream& rng) {
    Tensor<double> t(std::move(shape));
    for (auto& v : t.data) v = rng.normal();
    return t;
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
    double acc = 0.0;
    for (long long i = 0; i < a.numel(); ++i) acc += a.data[i] * b.data[i];
    return acc;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
    double m = 0.0;
    for (long long i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

void conv_examples() {
    // 16x16 ones through a 4x4 ones kernel at stride 4: every entry 16.
    Tensor<double> x({1, 16, 16, 1}, 1.0);
    Tensor<double> w({4, 4, 1, 1}, 1.0);
    const Tensor<double> y = conv2d(x, w, 4, 0);
    check(y.shape == std::vector<int>({1, 4, 4, 1}), "conv2d ones shape 1x4x4x1");
    double worst = 0.0;
    for (double v : y.data) worst = std::max(worst, std::abs(v - 16.0));
    check_le(worst, 0.0, "conv2d ones -> all 16.0");

    // 256x256 with 16x16 kernel, stride 16: 16x16 token grid (256 tokens).
    Tensor<double> x2({1, 256, 256, 1}, 0.5);
    Tensor<double> w2({16, 16, 1, 3}, 0.25);
    const Tensor<double> y2 = conv2d(x2, w2, 16, 0);
    check(y2.dim(1) == 16 && y2.dim(2) == 16, "conv2d 256^2 k16 s16 -> 16x16 grid");

    // Channel mismatch is rejected with both shapes in the message.
    Tensor<double> bad({3, 3, 2, 4});
    bool threw = false;
    std::string msg;
    try {
        conv2d(x, bad, 1, 0);
    } catch (const std::exception& e) {
        threw = true;
        msg = e.what();
    }
    check(threw && msg.find("(1,16,16,1)") != std::string::npos &&
              msg.find("(3,3,2,4)") != std::string::npos,
          "conv2d channel mismatch names both shapes");
}

void conv_oracle() {
    RandomStream rng(11, "conv-oracle");
    Tensor<double> x = random_tensor({1, 10, 10, 2}, rng);
    Tensor<double> w = random_tensor({3, 3, 2, 4}, rng);
    const Tensor<double> got = conv2d(x, w, 2, 0);
    const Tensor<double> want = conv2d_reference(x, w, 2, 0);
    check_le(max_abs_diff(got, want), 1e-12, "conv2d matches nested-loop oracle (1e-12)");

    // Padded case as well.
    const Tensor<double> got_p = conv2d(x, w, 2, 1);
    const Tensor<double> want_p = conv2d_reference(x, w, 2, 1);
    check_le(max_abs_diff(got_p, want_p), 1e-12, "conv2d pad=1 matches oracle");
}

void conv_transpose_examples() {
    // Single token broadcast through a 4x4 ones kernel.
    Tensor<double> y({1, 1, 1, 1}, 1.0);
    Tensor<double> w({4, 4, 1, 1}, 1.0);
    const Tensor<double> x = conv_transpose2d(y, w, 4, 0);
    check(x.shape == std::vector<int>({1, 4, 4, 1}), "conv_transpose2d single token shape");
    double worst = 0.0;
    for (double v : x.data) worst = std::max(worst, std::abs(v - 1.0));
    check_le(worst, 0.0, "conv_transpose2d single token -> all ones");

    // Round-trip shape at k=s=8 on a 128x256 field.
    RandomStream rng(5, "ct-shape");
    Tensor<double> field = random_tensor({1, 128, 256, 3}, rng);
    Tensor<double> kw = random_tensor({8, 8, 3, 7}, rng);
    const Tensor<double> tokens = conv2d(field, kw, 8, 0);
    check(tokens.dim(1) == 16 && tokens.dim(2) == 32, "encode 128x256 at k=s=8 -> 16x32 tokens");
    const Tensor<double> back = conv_transpose2d(tokens, kw, 8, 0);
    check(back.dim(1) == 128 && back.dim(2) == 256 && back.dim(3) == 3,
          "decode restores 128x256x3");

    check_throws([&] { conv_transpose2d(y, w, 4, 3); },
                 "conv_transpose2d rejects crop producing non-positive extents");
}

void adjoint_property() {
    // <conv(x,w,s,pad), y> == <x, conv_T(y,w,s,crop=pad)> on 100 random draws.
    RandomStream rng(7, "adjoint");
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int k = 2 + static_cast<int>(rng.below(3));       // 2..4
        const int s = 1 + static_cast<int>(rng.below(3));       // 1..3
        const int pad = static_cast<int>(rng.below(2));         // 0..1
        // Extents chosen so the transposed output restores the input shape.
        const int H = k + s * (1 + static_cast<int>(rng.below(4))) - 2 * pad;
        const int W = k + s * (1 + static_cast<int>(rng.below(4))) - 2 * pad;
        const int Ci = 1 + static_cast<int>(rng.below(2));
        const int Co = 1 + static_cast<int>(rng.below(3));
        Tensor<double> x = random_tensor({2, H, W, Ci}, rng);
        Tensor<double> w = random_tensor({k, k, Ci, Co}, rng);
        const Tensor<double> cx = conv2d(x, w, s, pad);
        Tensor<double> y = random_tensor(cx.shape, rng);
        const Tensor<double> ty = conv_transpose2d(y, w, s, pad);
        const double lhs = dot(cx, y);
        const double rhs = dot(x, ty);
        const double rel = std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs));
        worst = std::max(worst, rel);
    }
    check_le(worst, 1e-10, "conv adjoint identity over 100 draws (1e-10 rel)");
}

void extent_formula_property() {
    // Output extents follow the floor formula for every accepted combination.
    bool ok = true;
    for (int H = 4; H <= 13; ++H)
        for (int k = 1; k <= 4; ++k)
            for (int s = 1; s <= 3; ++s)
                for (int pad = 0; pad <= 1; ++pad) {
                    if (H + 2 * pad < k) continue;
                    Tensor<double> x({1, H, H, 1}, 1.0);
                    Tensor<double> w({k, k, 1, 1}, 1.0);
                    const Tensor<double> y = conv2d(x, w, s, pad);
                    const int expect = (H + 2 * pad - k) / s + 1;
                    ok = ok && y.dim(1) == expect && y.dim(2) == expect;
                }
    check(ok, "conv2d extents obey the token-count formula across (H,k,s,pad)");
}

void fft_basics() {
    // Constant field: only the zero bin, value c*H*W.
    const int H = 8, W = 8;
    Tensor<double> x({H, W}, 3.25);
    ComplexGrid g = rfft2(x);
    check_close(g.at(0, 0).real(), 3.25 * H * W, 1e-9, "rfft2 constant -> DC value c*H*W");
    double off = 0.0;
    for (int my = 0; my < H; ++my)
        for (int mx = 0; mx < g.w_half; ++mx)
            if (my || mx) off = std::max(off, std::abs(g.at(my, mx)));
    check_le(off, 1e-9, "rfft2 constant -> all other bins zero");

    // cos(2*pi*4*x/W): energy concentrated at |k| = 4 along x.
    Tensor<double> s({16, 16});
    for (int y = 0; y < 16; ++y)
        for (int xx = 0; xx < 16; ++xx)
            s.at({y, xx}) = std::cos(2.0 * M_PI * 4.0 * xx / 16.0);
    ComplexGrid gs = rfft2(s);
    double at4 = std::abs(gs.at(0, 4));
    double elsewhere = 0.0;
    for (int my = 0; my < 16; ++my)
        for (int mx = 0; mx < gs.w_half; ++mx)
            if (!(my == 0 && mx == 4)) elsewhere = std::max(elsewhere, std::abs(gs.at(my, mx)));
    check(at4 > 100.0 * std::max(elsewhere, 1e-30), "rfft2 sinusoid -> energy in the |k|=4 bin");
}

void fft_roundtrip_parseval() {
    RandomStream rng(13, "fft");
    double worst_rt = 0.0, worst_par = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int hs[] = {4, 8, 12, 16, 7, 9};
        const int H = hs[rng.below(6)];
        const int W = hs[rng.below(6)];
        Tensor<double> x({H, W});
        for (auto& v : x.data) v = rng.normal();
        const ComplexGrid g = rfft2(x);
        const Tensor<double> back = irfft2(g);
        double scale = 1e-30, diff = 0.0;
        for (long long i = 0; i < x.numel(); ++i) {
            scale = std::max(scale, std::abs(x.data[i]));
            diff = std::max(diff, std::abs(x.data[i] - back.data[i]));
        }
        worst_rt = std::max(worst_rt, diff / scale);

        double spatial = 0.0;
        for (double v : x.data) spatial += v * v;
        const double spectral = spectrum_energy(g) / (static_cast<double>(H) * W);
        worst_par = std::max(worst_par, std::abs(spatial - spectral) / std::max(1.0, spatial));
    }
    check_le(worst_rt, 1e-10, "irfft2(rfft2(x)) == x over 100 random fields (1e-10 rel)");
    check_le(worst_par, 1e-10, "Parseval identity over 100 random fields (1e-10 rel)");
}

void periodic_pad_check() {
    Tensor<double> x({1, 3, 3, 1});
    for (int i = 0; i < 9; ++i) x.data[i] = i;
    const Tensor<double> p = pad2d_periodic(x, 1);
    check(p.dim(1) == 5 && p.dim(2) == 5, "pad2d_periodic extents");
    check_close(p.at({0, 0, 0, 0}), x.at({0, 2, 2, 0}), 0.0, "pad2d_periodic corner wraps");
    check_close(p.at({0, 4, 4, 0}), x.at({0, 0, 0, 0}), 0.0, "pad2d_periodic far corner wraps");
}

}  // namespace

int main() {
    conv_examples();
    conv_oracle();
    conv_transpose_examples();
    adjoint_property();
    extent_formula_property();
    fft_basics();
    fft_roundtrip_parseval();
    periodic_pad_check();
    return testing::summary("test_tensor");
}
