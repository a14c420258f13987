#include "flexipatch/piresize.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <mutex>
#include <tuple>

#include "flexipatch/rng.hpp"

namespace flexipatch {

Mat mat_mul(const Mat& A, const Mat& B) {
    require(A.cols == B.rows, "mat_mul: inner dimensions differ");
    Mat C(A.rows, B.cols);
    for (int i = 0; i < A.rows; ++i) {
        for (int p = 0; p < A.cols; ++p) {
            const double av = A.at(i, p);
            if (av == 0.0) continue;
            for (int j = 0; j < B.cols; ++j) C.at(i, j) += av * B.at(p, j);
        }
    }
    return C;
}

Mat mat_transpose(const Mat& A) {
    Mat T(A.cols, A.rows);
    for (int i = 0; i < A.rows; ++i)
        for (int j = 0; j < A.cols; ++j) T.at(j, i) = A.at(i, j);
    return T;
}

Mat kron(const Mat& A, const Mat& B) {
    Mat K(A.rows * B.rows, A.cols * B.cols);
    for (int i = 0; i < A.rows; ++i)
        for (int j = 0; j < A.cols; ++j) {
            const double av = A.at(i, j);
            for (int p = 0; p < B.rows; ++p)
                for (int q = 0; q < B.cols; ++q)
                    K.at(i * B.rows + p, j * B.cols + q) = av * B.at(p, q);
        }
    return K;
}

namespace {

// One-sided Jacobi on a tall matrix (rows >= cols): orthogonalize column
// pairs until all are mutually orthogonal, then read off sigma and U.
SvdResult svd_tall(Mat A) {
    const int m = A.rows, n = A.cols;
    Mat V = Mat::identity(n);
    const double eps = 1e-15;
    for (int sweep = 0; sweep < 100; ++sweep) {
        bool rotated = false;
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (int i = 0; i < m; ++i) {
                    const double ap = A.at(i, p), aq = A.at(i, q);
                    alpha += ap * ap;
                    beta += aq * aq;
                    gamma += ap * aq;
                }
                if (std::abs(gamma) <= eps * std::sqrt(alpha * beta) || gamma == 0.0) continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t =
                    (zeta >= 0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (int i = 0; i < m; ++i) {
                    const double ap = A.at(i, p), aq = A.at(i, q);
                    A.at(i, p) = c * ap - s * aq;
                    A.at(i, q) = s * ap + c * aq;
                }
                for (int i = 0; i < n; ++i) {
                    const double vp = V.at(i, p), vq = V.at(i, q);
                    V.at(i, p) = c * vp - s * vq;
                    V.at(i, q) = s * vp + c * vq;
                }
            }
        }
        if (!rotated) break;
    }
    SvdResult r;
    r.sigma.resize(n);
    std::vector<int> order(n);
    for (int j = 0; j < n; ++j) {
        double norm2 = 0.0;
        for (int i = 0; i < m; ++i) norm2 += A.at(i, j) * A.at(i, j);
        r.sigma[j] = std::sqrt(norm2);
        order[j] = j;
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return r.sigma[a] > r.sigma[b]; });
    SvdResult out;
    out.sigma.resize(n);
    out.u = Mat(m, n);
    out.v = Mat(n, n);
    for (int jj = 0; jj < n; ++jj) {
        const int j = order[jj];
        out.sigma[jj] = r.sigma[j];
        const double inv = r.sigma[j] > 0.0 ? 1.0 / r.sigma[j] : 0.0;
        for (int i = 0; i < m; ++i) out.u.at(i, jj) = A.at(i, j) * inv;
        for (int i = 0; i < n; ++i) out.v.at(i, jj) = V.at(i, j);
    }
    return out;
}

}  // namespace

SvdResult svd(const Mat& A) {
    for (double x : A.a) require(std::isfinite(x), "svd: non-finite matrix entry");
    if (A.rows >= A.cols) return svd_tall(A);
    SvdResult t = svd_tall(mat_transpose(A));
    SvdResult r;
    r.sigma = t.sigma;
    r.u = t.v;
    r.v = t.u;
    return r;
}

Mat pinv(const Mat& M, double tol_rel) {
    SvdResult s = svd(M);
    const double smax = s.sigma.empty() ? 0.0 : s.sigma[0];
    const double cutoff = tol_rel * smax;
    // M^+ = V * diag(1/sigma) * U^T
    Mat P(M.cols, M.rows);
    const int r = static_cast<int>(s.sigma.size());
    for (int k = 0; k < r; ++k) {
        if (s.sigma[k] <= cutoff || s.sigma[k] == 0.0) continue;
        const double inv = 1.0 / s.sigma[k];
        for (int i = 0; i < M.cols; ++i) {
            const double vik = s.v.at(i, k) * inv;
            if (vik == 0.0) continue;
            for (int j = 0; j < M.rows; ++j) P.at(i, j) += vik * s.u.at(j, k);
        }
    }
    return P;
}

Mat mat_sqrt_psd(const Mat& S) {
    require(S.rows == S.cols, "mat_sqrt_psd: matrix must be square");
    const int n = S.rows;
    double scale = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            require(std::isfinite(S.at(i, j)), "mat_sqrt_psd: non-finite entry");
            scale = std::max(scale, std::abs(S.at(i, j)));
            require(std::abs(S.at(i, j) - S.at(j, i)) <= 1e-10 * std::max(1.0, scale),
                    "covariance matrix is not symmetric");
        }
    // Cyclic Jacobi eigendecomposition S = V diag(lam) V^T.
    Mat A = S;
    Mat V = Mat::identity(n);
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n - 1; ++p)
            for (int q = p + 1; q < n; ++q) off += A.at(p, q) * A.at(p, q);
        if (off <= 1e-28 * std::max(1.0, scale * scale)) break;
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const double apq = A.at(p, q);
                if (apq == 0.0) continue;
                const double theta = (A.at(q, q) - A.at(p, p)) / (2.0 * apq);
                const double t =
                    (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(1.0 + theta * theta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (int i = 0; i < n; ++i) {
                    const double aip = A.at(i, p), aiq = A.at(i, q);
                    A.at(i, p) = c * aip - s * aiq;
                    A.at(i, q) = s * aip + c * aiq;
                }
                for (int i = 0; i < n; ++i) {
                    const double api = A.at(p, i), aqi = A.at(q, i);
                    A.at(p, i) = c * api - s * aqi;
                    A.at(q, i) = s * api + c * aqi;
                }
                for (int i = 0; i < n; ++i) {
                    const double vip = V.at(i, p), viq = V.at(i, q);
                    V.at(i, p) = c * vip - s * viq;
                    V.at(i, q) = s * vip + c * viq;
                }
            }
        }
    }
    double lam_max = 0.0;
    for (int i = 0; i < n; ++i) lam_max = std::max(lam_max, A.at(i, i));
    Mat R(n, n);
    for (int k = 0; k < n; ++k) {
        const double lam = A.at(k, k);
        require(lam >= -1e-8 * std::max(1.0, lam_max),
                "covariance matrix is not positive semidefinite (eigenvalue " +
                    std::to_string(lam) + ")");
        const double rt = lam > 0.0 ? std::sqrt(lam) : 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) R.at(i, j) += V.at(i, k) * rt * V.at(j, k);
    }
    return R;
}

namespace {

// Catmull-Rom cubic kernel, a = -0.5.
double cubic_weight(double x) {
    x = std::abs(x);
    if (x <= 1.0) return ((1.5 * x - 2.5) * x) * x + 1.0;
    if (x < 2.0) return ((-0.5 * x + 2.5) * x - 4.0) * x + 2.0;
    return 0.0;
}

}  // namespace

ResizeMatrix resize_matrix(int k_from, int k_to) {
    require(k_from >= 2 && k_to >= 2,
            "resize_matrix: bicubic interpolation needs at least 2 samples per axis, got " +
                std::to_string(k_from) + "->" + std::to_string(k_to));
    ResizeMatrix rm;
    rm.k_from = k_from;
    rm.k_to = k_to;
    rm.b1d = Mat(k_to, k_from);
    const double ratio = static_cast<double>(k_from) / static_cast<double>(k_to);
    for (int i = 0; i < k_to; ++i) {
        const double u = (i + 0.5) * ratio - 0.5;
        const int i0 = static_cast<int>(std::floor(u));
        for (int mtap = -1; mtap <= 2; ++mtap) {
            const int j = i0 + mtap;
            const double w = cubic_weight(u - j);
            if (w == 0.0) continue;
            const int jc = std::clamp(j, 0, k_from - 1);  // edge clamp
            rm.b1d.at(i, jc) += w;
        }
    }
    rm.b2d = kron(rm.b1d, rm.b1d);
    return rm;
}

namespace {

uint64_t sigma_signature(const std::optional<Mat>& sigma) {
    if (!sigma) return 0;
    uint64_t h = 1469598103934665603ULL;
    auto mixin = [&h](uint64_t v) {
        h ^= v;
        h *= 1099511628211ULL;
    };
    mixin(static_cast<uint64_t>(sigma->rows));
    for (double x : sigma->a) {
        uint64_t bits;
        static_assert(sizeof(bits) == sizeof(x));
        std::memcpy(&bits, &x, sizeof(bits));
        mixin(bits);
    }
    return h;
}

}  // namespace

Mat pi_resize_operator(int k_target, const PIResizeConfig& cfg) {
    require(k_target >= 2, "pi_resize: target kernel size must be >= 2");
    require(cfg.k_base >= 2, "pi_resize: base kernel size must be >= 2");
    if (k_target == cfg.k_base && !cfg.sigma) return Mat::identity(k_target * k_target);

    static std::mutex cache_mutex;
    static std::map<std::tuple<int, int, uint64_t>, Mat> cache;
    const auto key = std::make_tuple(cfg.k_base, k_target, sigma_signature(cfg.sigma));
    {
        std::lock_guard<std::mutex> lock(cache_mutex);
        auto it = cache.find(key);
        if (it != cache.end()) return it->second;
    }

    const Mat b2d = resize_matrix(cfg.k_base, k_target).b2d;  // (k_t^2, k_b^2)
    const Mat bt = mat_transpose(b2d);                        // (k_b^2, k_t^2)
    Mat P;
    if (cfg.sigma) {
        require(cfg.sigma->rows == cfg.k_base * cfg.k_base &&
                    cfg.sigma->cols == cfg.k_base * cfg.k_base,
                "pi_resize: covariance must be (k_base^2 x k_base^2)");
        const Mat root = mat_sqrt_psd(*cfg.sigma);
        P = mat_mul(pinv(mat_mul(root, bt), cfg.pinv_tol), root);
    } else {
        P = pinv(bt, cfg.pinv_tol);
    }
    std::lock_guard<std::mutex> lock(cache_mutex);
    cache.emplace(key, P);
    return P;
}

Tensor<double> pi_resize_kernel(const Tensor<double>& w_base, int k_target,
                                const PIResizeConfig& cfg) {
    require(w_base.ndim() == 4 && w_base.dim(0) == w_base.dim(1),
            "pi_resize_kernel expects (k,k,Cin,Cout), got " + shape_str(w_base));
    require(w_base.dim(0) == cfg.k_base, "pi_resize_kernel: kernel size " +
                                             std::to_string(w_base.dim(0)) +
                                             " does not match configured base " +
                                             std::to_string(cfg.k_base));
    for (double x : w_base.data) require(std::isfinite(x), "pi_resize_kernel: non-finite weight");
    if (k_target == cfg.k_base && !cfg.sigma) return w_base;

    const Mat P = pi_resize_operator(k_target, cfg);
    const int kb2 = cfg.k_base * cfg.k_base;
    const int kt2 = k_target * k_target;
    const int Ci = w_base.dim(2), Co = w_base.dim(3);
    const int slices = Ci * Co;
    Tensor<double> out({k_target, k_target, Ci, Co}, 0.0);
    // Row-major (ky*k + kx) flattening matches the b2d vec convention.
    for (int i = 0; i < kt2; ++i) {
        for (int j = 0; j < kb2; ++j) {
            const double p = P.at(i, j);
            if (p == 0.0) continue;
            const double* src = w_base.data.data() + static_cast<long long>(j) * slices;
            double* dst = out.data.data() + static_cast<long long>(i) * slices;
            for (int s = 0; s < slices; ++s) dst[s] += p * src[s];
        }
    }
    return out;
}

}  // namespace flexipatch
