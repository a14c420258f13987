#pragma once

#include <complex>
#include <vector>

#include "flexipatch/tensor.hpp"

namespace flexipatch {

// Half-plane spectrum of a real (H,W) field. Stored columns cover
// mx in [0, W/2]; the missing half is implied by Hermitian symmetry
//   X[my, mx] = conj(X[(H-my) mod H, (W-mx) mod W]).
// Convention used everywhere: unnormalized forward transform, inverse
// scaled by 1/(H*W). Under it Parseval reads
//   sum |x|^2 = (1/(H*W)) * sum_fullplane |X|^2.
struct ComplexGrid {
    int h = 0;
    int w = 0;       // width of the real field (not the stored width)
    int w_half = 0;  // stored columns = w/2 + 1
    std::vector<std::complex<double>> data;  // row-major (h, w_half)

    std::complex<double>& at(int my, int mx) { return data[static_cast<size_t>(my) * w_half + mx]; }
    std::complex<double> at(int my, int mx) const {
        return data[static_cast<size_t>(my) * w_half + mx];
    }

    // Multiplicity of a stored column when summing over the full plane.
    int column_weight(int mx) const {
        if (mx == 0) return 1;
        if (2 * mx == w) return 1;  // self-conjugate Nyquist column (even w)
        return 2;
    }
};

// In-place 1D transform, any length (radix-2 fast path, Bluestein otherwise).
// sign = -1 forward, +1 inverse; no normalization applied.
void fft_1d(std::vector<std::complex<double>>& a, int sign);

ComplexGrid rfft2(const Tensor<double>& x);
Tensor<double> irfft2(const ComplexGrid& g);

// sum over the full plane of |X|^2 (uses Hermitian column weights).
double spectrum_energy(const ComplexGrid& g);

}  // namespace flexipatch
