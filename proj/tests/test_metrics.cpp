// VRMSE, log-spaced spectral bands, band-filtered NMSE, residual spectra and
// the patch-harmonic spike score, with loop and construction oracles.

#include <cmath>

#include "flexipatch/metrics.hpp"
#include "flexipatch/rng.hpp"
#include "harness.hpp"

using namespace flexipatch;
using testing::check;
using testing::check_close;
using testing::check_le;

namespace {

inline int signed_mode(int m, int n) { return m <= n / 2 ? m : m - n; }

Tensor<double> randn2(int H, int W, RandomStream& rng) {
    Tensor<double> t({H, W});
    for (auto& v : t.data) v = rng.normal();
    return t;
}

void vrmse_cases() {
    RandomStream rng(3, "vrmse");
    Tensor<double> v({8, 8, 2});
    for (auto& x : v.data) x = rng.normal();
    check_close(vrmse(v, v), 0.0, 1e-15, "vrmse(u,u) == 0");

    // Predicting the truth's spatial mean scores ~1.
    Tensor<double> mean_pred(v.shape);
    for (int c = 0; c < 2; ++c) {
        double m = 0.0;
        for (long long i = c; i < v.numel(); i += 2) m += v.data[i];
        m /= 64.0;
        for (long long i = c; i < v.numel(); i += 2) mean_pred.data[i] = m;
    }
    check_close(vrmse(mean_pred, v), 1.0, 1e-3, "vrmse(mean(v), v) ~ 1");

    // Constant truth and equal constant prediction: epsilon guards the ratio.
    Tensor<double> cu({4, 4, 1}, 2.5), cv({4, 4, 1}, 2.5);
    check_close(vrmse(cu, cv), 0.0, 1e-15, "constant truth, equal prediction -> 0");

    // Affine invariance: vrmse(a*u+b, a*v+b) == vrmse(u, v).
    RandomStream r2(5, "affine");
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        Tensor<double> u({6, 6, 2}), w({6, 6, 2});
        for (auto& x : u.data) x = r2.normal();
        for (auto& x : w.data) x = r2.normal();
        const double a = 0.5 + 3.0 * r2.uniform();
        const double b = r2.normal();
        Tensor<double> ua(u.shape), wa(w.shape);
        for (long long i = 0; i < u.numel(); ++i) {
            ua.data[i] = a * u.data[i] + b;
            wa.data[i] = a * w.data[i] + b;
        }
        // eps = 0 for exact scale cancellation
        worst = std::max(worst, std::abs(vrmse(ua, wa, 0.0) - vrmse(u, w, 0.0)));
    }
    check_le(worst, 1e-10, "vrmse affine invariance over 100 draws");
}

void band_structure() {
    const FrequencyBands b = log_bands(64, 64);
    const double kmax = std::sqrt(32.0 * 32.0 + 32.0 * 32.0);
    const double r = std::pow(kmax, 1.0 / 3.0);
    check_close(b.b1, r, 1e-12, "64x64 band boundary b1 = kmax^(1/3)");
    check_close(b.b2, r * r, 1e-12, "64x64 band boundary b2 = kmax^(2/3)");

    // Every nonzero mode lands in exactly one band; zero mode in none;
    // assignment matches a direct per-mode loop.
    bool ok = true;
    int per_band[3] = {0, 0, 0};
    for (int my = 0; my < 64 && ok; ++my)
        for (int mx = 0; mx < 64 && ok; ++mx) {
            const double kmag = std::sqrt(
                static_cast<double>(signed_mode(mx, 64)) * signed_mode(mx, 64) +
                static_cast<double>(signed_mode(my, 64)) * signed_mode(my, 64));
            const int band = b.band_of(kmag);
            if (my == 0 && mx == 0) {
                ok = band == -1;
                continue;
            }
            int direct;
            if (kmag <= b.b1)
                direct = 0;
            else if (kmag <= b.b2)
                direct = 1;
            else
                direct = 2;
            ok = ok && band == direct && band >= 0 && band < 3;
            ++per_band[band];
        }
    check(ok, "band assignment matches the per-mode loop oracle");
    check(per_band[0] > 0 && per_band[1] > 0 && per_band[2] > 0 &&
              per_band[0] + per_band[1] + per_band[2] == 64 * 64 - 1,
          "bands partition all nonzero modes");
}

void bsnmse_cases() {
    RandomStream rng(7, "bsnmse");
    const FrequencyBands bands = log_bands(32, 32);
    Tensor<double> v = randn2(32, 32, rng);
    const auto zero = bsnmse(v, v, bands);
    check(zero[0].defined && zero[1].defined && zero[2].defined, "bsnmse(u,u) defined");
    check_le(std::abs(zero[0].value) + std::abs(zero[1].value) + std::abs(zero[2].value), 1e-16,
             "bsnmse(u,u) == 0 in every band");

    // Zero prediction scores exactly 1 in every band with truth energy.
    Tensor<double> z({32, 32}, 0.0);
    const auto ones = bsnmse(z, v, bands);
    double worst = 0.0;
    for (const auto& s : ones) worst = std::max(worst, std::abs(s.value - 1.0));
    check_le(worst, 1e-10, "zero prediction -> 1 per band");

    // Constructed case: truth = single mode in band 2; prediction perfect
    // there but noisy in band 3. Band-2 score 0, band-3 flagged undefined
    // (no truth energy there).
    Tensor<double> truth({32, 32});
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
            truth.at({y, x}) = std::cos(2.0 * M_PI * 5.0 * x / 32.0);  // |k|=5, mid band
    check(bands.band_of(5.0) == 1, "|k|=5 lies in the middle band on a 32x32 grid");
    Tensor<double> pred = truth;
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
            pred.at({y, x}) += 0.01 * std::cos(2.0 * M_PI * (12.0 * x + 12.0 * y) / 32.0);
    const auto scored = bsnmse(pred, truth, bands);
    check_le(std::abs(scored[1].value), 1e-12, "perfect mid band scores 0");
    check(!scored[2].defined, "band with zero truth energy is flagged undefined");

    // Parseval decomposition: sum over bands of mean|u_B - v_B|^2 equals the
    // nonzero-mode part of mean|u - v|^2.
    RandomStream r3(11, "parseval");
    double worst_p = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        Tensor<double> u = randn2(16, 16, r3);
        Tensor<double> w = randn2(16, 16, r3);
        const FrequencyBands bb = log_bands(16, 16);
        // numerators via the same bandpass route bsnmse uses
        double total_banded = 0.0;
        for (int band = 0; band < 3; ++band) {
            ComplexGrid gu = rfft2(u), gw = rfft2(w);
            for (int my = 0; my < 16; ++my)
                for (int mx = 0; mx < gu.w_half; ++mx) {
                    const double kmag = std::sqrt(
                        static_cast<double>(signed_mode(mx, 16)) * signed_mode(mx, 16) +
                        static_cast<double>(signed_mode(my, 16)) * signed_mode(my, 16));
                    if (bb.band_of(kmag) != band) {
                        gu.at(my, mx) = {0, 0};
                        gw.at(my, mx) = {0, 0};
                    }
                }
            const Tensor<double> ub = irfft2(gu), wb = irfft2(gw);
            for (long long i = 0; i < ub.numel(); ++i) {
                const double d = ub.data[i] - wb.data[i];
                total_banded += d * d / ub.numel();
            }
        }
        // direct mean|u - v|^2 with the mean (zero-mode) difference removed
        double mu = 0.0, mw = 0.0;
        for (long long i = 0; i < u.numel(); ++i) {
            mu += u.data[i];
            mw += w.data[i];
        }
        mu /= u.numel();
        mw /= w.numel();
        double direct = 0.0;
        for (long long i = 0; i < u.numel(); ++i) {
            const double d = (u.data[i] - mu) - (w.data[i] - mw);
            direct += d * d / u.numel();
        }
        worst_p = std::max(worst_p, std::abs(total_banded - direct) / std::max(1e-12, direct));
    }
    check_le(worst_p, 1e-8, "band decomposition satisfies Parseval over 100 draws");
}

void residual_spectrum_cases() {
    RandomStream rng(13, "spec");
    Tensor<double> v = randn2(64, 64, rng);
    const SpectralReport zero = residual_spectrum(v, v);
    double total = 0.0;
    for (double p : zero.power) total += p;
    check_le(total, 1e-20, "zero residual -> all-zero spectrum");

    // A 16-periodic tiled residual concentrates power at harmonics of
    // H/16 = 4; off-harmonic radial bins stay empty.
    Tensor<double> tile({16, 16});
    for (auto& x : tile.data) x = rng.normal();
    Tensor<double> pred = v;
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x)
            pred.at({y, x}) += tile.at({y % 16, x % 16});
    const SpectralReport rep = residual_spectrum(pred, v);
    check(rep.power[4] > 0.0 && rep.power[8] > 0.0, "tiled residual peaks at multiples of H/16");
    double off = 0.0;
    for (int b = 1; b < static_cast<int>(rep.power.size()); ++b) {
        // bins containing any multiples-of-4 lattice magnitudes are on-lattice
        bool lattice = false;
        for (int a = 0; a <= 16 && !lattice; ++a)
            for (int bb = 0; bb <= 16 && !lattice; ++bb) {
                if (a == 0 && bb == 0) continue;
                const double kmag = 4.0 * std::sqrt(static_cast<double>(a * a + bb * bb));
                lattice = static_cast<int>(std::floor(kmag + 0.5)) == b;
            }
        if (!lattice) off = std::max(off, rep.power[b]);
    }
    check_le(off, 1e-20, "tiled residual leaves off-lattice bins empty");

    // Spectrum values match a direct per-mode accumulation.
    const ComplexGrid g = rfft2([&] {
        Tensor<double> r({64, 64});
        for (long long i = 0; i < r.numel(); ++i) r.data[i] = pred.data[i] - v.data[i];
        return r;
    }());
    std::vector<double> sum(rep.power.size(), 0.0), cnt(rep.power.size(), 0.0);
    for (int my = 0; my < 64; ++my)
        for (int mx = 0; mx < g.w_half; ++mx) {
            const double kmag = std::sqrt(
                static_cast<double>(signed_mode(mx, 64)) * signed_mode(mx, 64) +
                static_cast<double>(signed_mode(my, 64)) * signed_mode(my, 64));
            const int bin = static_cast<int>(std::floor(kmag + 0.5));
            if (bin >= static_cast<int>(sum.size())) continue;
            sum[bin] += g.column_weight(mx) * std::norm(g.at(my, mx));
            cnt[bin] += g.column_weight(mx);
        }
    double worst = 0.0;
    for (size_t b = 0; b < sum.size(); ++b) {
        const double want = cnt[b] > 0 ? sum[b] / cnt[b] : 0.0;
        worst = std::max(worst, std::abs(rep.power[b] - want));
    }
    check_le(worst, 1e-9, "radial binning matches the per-mode loop oracle");

    // White-noise residual: flat spectrum over the complete annuli
    // (bins up to the axis Nyquist; corner-clipped bins beyond it hold only
    // a handful of modes and fluctuate by construction).
    int violations = 0;
    for (uint64_t s = 0; s < 20; ++s) {
        RandomStream r(s, "white");
        Tensor<double> n1 = randn2(64, 64, r);
        Tensor<double> zero_t({64, 64}, 0.0);
        const SpectralReport w = residual_spectrum(n1, zero_t);
        std::vector<double> pw(w.power.begin() + 1, w.power.begin() + 33);
        std::sort(pw.begin(), pw.end());
        const double median = pw[pw.size() / 2];
        for (int b = 1; b <= 32; ++b)
            if (w.power[b] > 3.0 * median) ++violations;
    }
    check(violations == 0, "white-noise spectrum is flat (no bin above 3x median, 20 seeds)");
}

void spike_score_cases() {
    // Flat spectrum: score ~ 0.
    SpectralReport flat;
    flat.h = flat.w = 64;
    flat.power.assign(46, 2.0);
    check_le(harmonic_spike_score(flat, 16), 1e-12, "flat spectrum scores ~ 0");

    // Periodic (tiled) residual scores far above an equal-energy white-noise
    // residual, across 20 seeds.
    RandomStream rng(17, "spike");
    int wins = 0;
    for (int trial = 0; trial < 20; ++trial) {
        Tensor<double> truth = randn2(64, 64, rng);
        Tensor<double> tile({16, 16});
        for (auto& x : tile.data) x = rng.normal();
        Tensor<double> pred = truth;
        double tile_energy = 0.0;
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x) {
                const double t = tile.at({y % 16, x % 16});
                pred.at({y, x}) += t;
                tile_energy += t * t;
            }
        const double periodic = harmonic_spike_score(residual_spectrum(pred, truth), 16);
        Tensor<double> noise_pred = truth;
        double noise_energy = 0.0;
        std::vector<double> noise(64 * 64);
        for (auto& x : noise) {
            x = rng.normal();
            noise_energy += x * x;
        }
        const double scale = std::sqrt(tile_energy / noise_energy);
        for (int i = 0; i < 64 * 64; ++i) noise_pred.data[i] += scale * noise[i];
        const double white = harmonic_spike_score(residual_spectrum(noise_pred, truth), 16);
        if (periodic > white) ++wins;
        if (trial == 0) check(periodic > 10.0, "tiled residual produces a large spike score");
    }
    check(wins == 20, "periodic residual outscores equal-energy white noise (20/20 seeds)");

    // Scale invariance of the ratio form.
    RandomStream r2(19, "scale");
    Tensor<double> truth = randn2(64, 64, r2);
    Tensor<double> pred = truth;
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x)
            pred.at({y, x}) += 0.1 * std::sin(2.0 * M_PI * 4.0 * x / 64.0) + 0.02 * r2.normal();
    const SpectralReport r1 = residual_spectrum(pred, truth);
    Tensor<double> pred_scaled = truth;
    for (long long i = 0; i < pred.numel(); ++i)
        pred_scaled.data[i] = truth.data[i] + 7.0 * (pred.data[i] - truth.data[i]);
    const SpectralReport r49 = residual_spectrum(pred_scaled, truth);
    check_close(harmonic_spike_score(r49, 16), harmonic_spike_score(r1, 16), 1e-9,
                "spike score invariant under uniform residual scaling");

    // Too few harmonics below Nyquist is rejected.
    SpectralReport small;
    small.h = small.w = 64;
    small.power.assign(46, 1.0);
    bool threw = false;
    try {
        (void)harmonic_spike_score(small, 32);  // fundamental 2 -> harmonics 2..30: fine
        (void)harmonic_spike_score(small, 4);   // fundamental 16 -> only 16 below 32: reject
    } catch (const std::exception&) {
        threw = true;
    }
    check(threw, "fewer than 2 harmonics below Nyquist is rejected");
}

}  // namespace

int main() {
    vrmse_cases();
    band_structure();
    bsnmse_cases();
    residual_spectrum_cases();
    spike_score_cases();
    return testing::summary("test_metrics");
}
