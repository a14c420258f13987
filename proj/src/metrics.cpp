#include "flexipatch/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace flexipatch {

namespace {
inline int signed_mode(int m, int n) { return m <= n / 2 ? m : m - n; }
}  // namespace

std::vector<double> vrmse_channels(const Tensor<double>& pred, const Tensor<double>& truth,
                                   double eps) {
    require(pred.same_shape(truth),
            "vrmse: shape mismatch " + shape_str(pred) + " vs " + shape_str(truth));
    const int C = pred.dim(pred.ndim() - 1);
    const long long spatial = pred.numel() / C;
    std::vector<double> mean_v(C, 0.0);
    for (long long i = 0; i < truth.numel(); ++i) mean_v[i % C] += truth.data[i];
    for (int c = 0; c < C; ++c) mean_v[c] /= static_cast<double>(spatial);
    std::vector<double> num(C, 0.0), den(C, 0.0);
    for (long long i = 0; i < pred.numel(); ++i) {
        const int c = static_cast<int>(i % C);
        const double d = pred.data[i] - truth.data[i];
        num[c] += d * d;
        const double dv = truth.data[i] - mean_v[c];
        den[c] += dv * dv;
    }
    std::vector<double> out(C);
    for (int c = 0; c < C; ++c)
        out[c] = std::sqrt(num[c] / spatial) / std::sqrt(den[c] / spatial + eps);
    return out;
}

double vrmse(const Tensor<double>& pred, const Tensor<double>& truth, double eps) {
    const auto per = vrmse_channels(pred, truth, eps);
    double acc = 0.0;
    for (double v : per) acc += v;
    return acc / static_cast<double>(per.size());
}

FrequencyBands log_bands(int H, int W) {
    require(H >= 4 && W >= 4, "log_bands: grid must be at least 4x4");
    FrequencyBands b;
    const double ny_h = H / 2, ny_w = W / 2;
    b.kmax = std::sqrt(ny_h * ny_h + ny_w * ny_w);
    const double r = std::pow(b.kmax, 1.0 / 3.0);
    b.b1 = r;
    b.b2 = r * r;
    return b;
}

std::array<BandScore, 3> bsnmse(const Tensor<double>& pred, const Tensor<double>& truth,
                                const FrequencyBands& bands) {
    require(pred.ndim() == 2 && pred.same_shape(truth), "bsnmse expects matching (H,W) fields");
    const int H = pred.dim(0), W = pred.dim(1);
    const ComplexGrid pu = rfft2(pred);
    const ComplexGrid pv = rfft2(truth);

    double truth_energy = 0.0;
    for (double v : truth.data) truth_energy += v * v;

    std::array<BandScore, 3> out;
    for (int band = 0; band < 3; ++band) {
        ComplexGrid gu = pu, gv = pv;
        for (int my = 0; my < H; ++my) {
            const int sy = signed_mode(my, H);
            for (int mx = 0; mx < gu.w_half; ++mx) {
                const int sx = signed_mode(mx, W);
                const double kmag =
                    std::sqrt(static_cast<double>(sx) * sx + static_cast<double>(sy) * sy);
                if (bands.band_of(kmag) != band) {
                    gu.at(my, mx) = {0.0, 0.0};
                    gv.at(my, mx) = {0.0, 0.0};
                }
            }
        }
        const Tensor<double> ub = irfft2(gu);
        const Tensor<double> vb = irfft2(gv);
        double num = 0.0, den = 0.0;
        for (long long i = 0; i < ub.numel(); ++i) {
            const double d = ub.data[i] - vb.data[i];
            num += d * d;
            den += vb.data[i] * vb.data[i];
        }
        // A band whose truth energy is zero up to FFT round-off is flagged
        // undefined instead of producing a near-infinite ratio.
        if (den <= 1e-24 * truth_energy || den == 0.0) {
            out[band].defined = false;
            out[band].value = std::numeric_limits<double>::quiet_NaN();
        } else {
            out[band].value = num / den;
        }
    }
    return out;
}

SpectralReport residual_spectrum(const Tensor<double>& pred, const Tensor<double>& truth) {
    require(pred.ndim() == 2 && pred.same_shape(truth),
            "residual_spectrum expects matching (H,W) fields");
    const int H = pred.dim(0), W = pred.dim(1);
    Tensor<double> res(pred.shape);
    for (long long i = 0; i < res.numel(); ++i) res.data[i] = pred.data[i] - truth.data[i];
    const ComplexGrid g = rfft2(res);

    const double kmax = std::sqrt(static_cast<double>(H / 2) * (H / 2) +
                                  static_cast<double>(W / 2) * (W / 2));
    const int nbins = static_cast<int>(std::floor(kmax + 0.5)) + 1;
    std::vector<double> sum(nbins, 0.0), count(nbins, 0.0);
    for (int my = 0; my < H; ++my) {
        const int sy = signed_mode(my, H);
        for (int mx = 0; mx < g.w_half; ++mx) {
            const int sx = signed_mode(mx, W);
            const double kmag =
                std::sqrt(static_cast<double>(sx) * sx + static_cast<double>(sy) * sy);
            const int bin = static_cast<int>(std::floor(kmag + 0.5));
            if (bin >= nbins) continue;
            const double wgt = g.column_weight(mx);
            sum[bin] += wgt * std::norm(g.at(my, mx));
            count[bin] += wgt;
        }
    }
    SpectralReport rep;
    rep.h = H;
    rep.w = W;
    rep.power.resize(nbins, 0.0);
    for (int b = 0; b < nbins; ++b) rep.power[b] = count[b] > 0.0 ? sum[b] / count[b] : 0.0;
    return rep;
}

double harmonic_spike_score(const SpectralReport& report, int patch_size) {
    const int H = report.h;
    require(patch_size >= 1 && H % patch_size == 0,
            "harmonic_spike_score: patch size " + std::to_string(patch_size) +
                " must divide the field extent " + std::to_string(H));
    const int fundamental = H / patch_size;
    std::vector<int> harmonics;
    for (int k = fundamental; k < H / 2; k += fundamental) harmonics.push_back(k);
    require(harmonics.size() >= 2, "harmonic_spike_score: fewer than 2 harmonics below Nyquist "
                                   "for patch size " +
                                       std::to_string(patch_size));

    double mean_power = 0.0;
    for (double p : report.power) mean_power += p;
    mean_power /= static_cast<double>(report.power.size());
    if (mean_power <= 0.0) return 0.0;
    // Relative floor keeps the ratio finite for residuals whose off-harmonic
    // bins are exactly zero, without breaking scale invariance.
    const double floor_power = 1e-12 * mean_power;

    const int nbins = static_cast<int>(report.power.size());
    double score = 0.0;
    for (int kh : harmonics) {
        if (kh >= nbins) continue;
        std::vector<double> window;
        for (int b = kh - 5; b <= kh + 5; ++b) {
            if (b == kh || b < 1 || b >= nbins) continue;
            window.push_back(report.power[b]);
        }
        std::sort(window.begin(), window.end());
        double baseline = window.empty()
                              ? 0.0
                              : (window.size() % 2 == 1
                                     ? window[window.size() / 2]
                                     : 0.5 * (window[window.size() / 2 - 1] +
                                              window[window.size() / 2]));
        baseline = std::max(baseline, floor_power);
        score += std::max(0.0, report.power[kh] - baseline) / baseline;
    }
    return score;
}

}  // namespace flexipatch
