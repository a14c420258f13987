#pragma once

#include <array>
#include <vector>

#include "flexipatch/fft.hpp"
#include "flexipatch/tensor.hpp"

namespace flexipatch {

// Variance-scaled RMSE per channel for one sample (channel-last layout; all
// leading dims are treated as space):
//   sqrt(mean|u - v|^2) / sqrt(mean|v - vbar|^2 + eps),  vbar = spatial mean of the truth.
std::vector<double> vrmse_channels(const Tensor<double>& pred, const Tensor<double>& truth,
                                   double eps = 1e-7);
double vrmse(const Tensor<double>& pred, const Tensor<double>& truth, double eps = 1e-7);

// Three wavenumber-magnitude bands with boundaries evenly spaced in log scale
// from |k| = 1 to the Nyquist magnitude kmax = sqrt((H/2)^2 + (W/2)^2):
// boundaries r, r^2 with r = kmax^(1/3). The zero mode belongs to no band;
// every other mode falls in exactly one.
struct FrequencyBands {
    double b1 = 0.0, b2 = 0.0, kmax = 0.0;

    // 0, 1, 2 for the bands; -1 for the zero mode.
    int band_of(double kmag) const {
        if (kmag <= 0.0) return -1;
        if (kmag <= b1) return 0;
        if (kmag <= b2) return 1;
        return 2;
    }
};
FrequencyBands log_bands(int H, int W);

// Binned spectral normalized MSE over the three bands, computed through the
// bandpass route: u_B = irfft2(rfft2(u) .* mask_B), score = mean|u_B - v_B|^2
// / mean|v_B|^2. A band with zero truth energy is flagged undefined instead
// of dividing by zero.
struct BandScore {
    double value = 0.0;
    bool defined = true;
};
std::array<BandScore, 3> bsnmse(const Tensor<double>& pred, const Tensor<double>& truth,
                                const FrequencyBands& bands);

// Radially averaged power spectrum of (pred - truth) on a 2D single-channel
// slice; bin b collects modes with round(|k|) == b, |k| in cycles per domain.
struct SpectralReport {
    int h = 0, w = 0;
    std::vector<double> power;  // mean |residual_hat|^2 per radial bin
};
SpectralReport residual_spectrum(const Tensor<double>& pred, const Tensor<double>& truth);

// Patch-artifact score: sum over harmonics m*(H/p), m >= 1, strictly below
// the axis Nyquist H/2, of the positive relative excess of power over a
// local median baseline (5 bins each side, harmonic bin excluded). The ratio
// form makes the score invariant under uniform scaling of the residual.
double harmonic_spike_score(const SpectralReport& report, int patch_size);

}  // namespace flexipatch
