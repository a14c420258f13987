#pragma once

#include <utility>
#include <vector>

#include "flexipatch/autodiff.hpp"
#include "flexipatch/common.hpp"

namespace flexipatch {

enum class TokenizerKind { ckm, csm, fixed };

inline const char* tokenizer_kind_name(TokenizerKind k) {
    switch (k) {
        case TokenizerKind::ckm: return "ckm";
        case TokenizerKind::csm: return "csm";
        default: return "fixed";
    }
}

// Token grid extents for a (H,W) field tokenized with kernel k, stride s and
// symmetric padding:
//   N_h = floor((H + 2*pad - k) / s) + 1, likewise N_w.
inline std::pair<int, int> token_grid(int H, int W, int k, int s, int pad) {
    require(k >= 1 && s >= 1 && pad >= 0, "token_grid: k, s must be >= 1 and pad >= 0");
    require(H + 2 * pad >= k && W + 2 * pad >= k,
            "token_grid: kernel " + std::to_string(k) + " exceeds padded field " +
                std::to_string(H) + "x" + std::to_string(W) + " (pad " + std::to_string(pad) + ")");
    return {(H + 2 * pad - k) / s + 1, (W + 2 * pad - k) / s + 1};
}

// Factorization of a total down/up-sampling rate across the two encoder
// stages. Fixed table: 16 -> [4,4], 8 -> [4,2], 4 -> [2,2]; stage 1 keeps a
// 4-wide receptive field whenever the total allows it.
struct StagePlan {
    int total = 0;
    std::vector<int> per_stage;
};

inline StagePlan split_stages(int total) {
    switch (total) {
        case 16: return {16, {4, 4}};
        case 8: return {8, {4, 2}};
        case 4: return {4, {2, 2}};
        default:
            throw config_error("split_stages: unsupported total " + std::to_string(total) +
                               " (supported: 4, 8, 16)");
    }
}

// Resolved per-stage convolution settings for one forward pass.
struct StageOp {
    int base_kernel = 0;  // stored kernel size at this stage
    int kernel = 0;       // applied kernel size (resized when it differs from base)
    int stride = 0;
    int pad = 0;  // per-side input padding (stride modulation only)
};

// kind == ckm:   kernels (and strides) follow split_stages(size), resized
//                from the stage's base kernel; no padding.
// kind == csm:   kernels stay at the base sizes, strides follow
//                split_stages(size), per-stage padding (k_i - s_i)/2.
// kind == fixed: base kernels used as-is with stride == kernel; size must
//                equal the base total.
inline std::vector<StageOp> plan_stages(TokenizerKind kind, const StagePlan& base_plan, int size) {
    std::vector<StageOp> ops;
    if (kind == TokenizerKind::fixed) {
        require(size == base_plan.total,
                "fixed tokenizer runs only at its training size " +
                    std::to_string(base_plan.total) + ", requested " + std::to_string(size));
        for (int k : base_plan.per_stage) ops.push_back({k, k, k, 0});
        return ops;
    }
    const StagePlan size_plan = split_stages(size);
    require(size_plan.per_stage.size() == base_plan.per_stage.size(),
            "stage count mismatch between base plan and size plan");
    for (size_t i = 0; i < base_plan.per_stage.size(); ++i) {
        const int base_k = base_plan.per_stage[i];
        const int factor = size_plan.per_stage[i];
        if (kind == TokenizerKind::ckm) {
            ops.push_back({base_k, factor, factor, 0});
        } else {
            const int diff = base_k - factor;
            require(diff >= 0, "stride modulation: stage stride " + std::to_string(factor) +
                                   " exceeds kernel size " + std::to_string(base_k));
            require(diff % 2 == 0, "stride modulation: kernel minus stride must be even at every "
                                   "stage, got kernel " +
                                       std::to_string(base_k) + " stride " + std::to_string(factor));
            ops.push_back({base_k, base_k, factor, diff / 2});
        }
    }
    return ops;
}

}  // namespace flexipatch
