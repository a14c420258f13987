#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "flexipatch/tensor.hpp"

namespace flexipatch {

// Small dense double-precision matrix used for resize operators and their
// pseudoinverses. These are derived constants, never trained, so they stay
// in double regardless of the model element type.
struct Mat {
    int rows = 0, cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {}

    double& at(int i, int j) { return a[static_cast<size_t>(i) * cols + j]; }
    double at(int i, int j) const { return a[static_cast<size_t>(i) * cols + j]; }

    static Mat identity(int n) {
        Mat m(n, n);
        for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
        return m;
    }
};

Mat mat_mul(const Mat& A, const Mat& B);
Mat mat_transpose(const Mat& A);
Mat kron(const Mat& A, const Mat& B);

// Thin SVD A = U * diag(sigma) * V^T with singular values sorted descending.
// One-sided Jacobi; fine for the <=256x256 operators this project builds.
struct SvdResult {
    Mat u;                      // rows(A) x r
    std::vector<double> sigma;  // r = min(rows, cols)
    Mat v;                      // cols(A) x r
};
SvdResult svd(const Mat& A);

// Moore-Penrose pseudoinverse; singular values below tol_rel * sigma_max are
// treated as zero.
Mat pinv(const Mat& M, double tol_rel = 1e-10);

// Symmetric PSD square root (Jacobi eigendecomposition). Rejects matrices
// that are not symmetric positive semidefinite.
Mat mat_sqrt_psd(const Mat& S);

// Separable bicubic interpolation matrix pair. b1d is (k_to x k_from) with
// Catmull-Rom weights (a = -0.5), half-pixel-centered sampling grid and edge
// clamping; b2d = b1d (x) b1d acts on row-major flattened square patches.
// Every row of b1d sums to 1, and k_from == k_to yields the exact identity.
struct ResizeMatrix {
    int k_from = 0, k_to = 0;
    Mat b1d;
    Mat b2d;
};
ResizeMatrix resize_matrix(int k_from, int k_to);

struct PIResizeConfig {
    int k_base = 4;
    // Optional patch covariance (k_base^2 x k_base^2). Absent = identity,
    // which reduces the weighted operator to pinv(B^T).
    std::optional<Mat> sigma;
    double pinv_tol = 1e-10;
};

// The linear operator P (k_target^2 x k_base^2) such that the resized kernel
// is W = P * W_base per (cin,cout) slice. Unweighted: P = pinv(B2d^T). With a
// covariance: P = pinv(sqrt(S) * B2d^T) * sqrt(S). B matrices and their
// pseudoinverses are cached per (k_base, k_target, sigma signature).
Mat pi_resize_operator(int k_target, const PIResizeConfig& cfg);

// Apply the operator to a (k_base, k_base, Cin, Cout) kernel stack. Returns
// W_base unchanged (same buffer contents, bit for bit) when k_target equals
// k_base and no covariance weighting is requested.
Tensor<double> pi_resize_kernel(const Tensor<double>& w_base, int k_target,
                                const PIResizeConfig& cfg);

}  // namespace flexipatch
