#pragma once

#include <string>
#include <vector>

#include "flexipatch/model.hpp"
#include "flexipatch/rng.hpp"

namespace flexipatch {

enum class ScheduleKind { fixed, cyclic, random };

inline const char* schedule_kind_name(ScheduleKind k) {
    switch (k) {
        case ScheduleKind::fixed: return "fixed";
        case ScheduleKind::cyclic: return "cyclic";
        default: return "random";
    }
}

inline ScheduleKind schedule_kind_from(const std::string& s) {
    if (s == "fixed") return ScheduleKind::fixed;
    if (s == "cyclic") return ScheduleKind::cyclic;
    if (s == "random") return ScheduleKind::random;
    throw config_error("unknown schedule kind: " + s);
}

struct ScheduleSpec {
    ScheduleKind kind = ScheduleKind::cyclic;
    int fixed_size = 16;
    std::vector<int> cycle = {4, 8, 16};  // cyclic order
    int phase = 0;                        // starting offset into the cycle
    std::vector<int> choices = {4, 8, 16};
    uint64_t seed = 0;  // random kind
};

struct PatchSchedule {
    ScheduleKind kind = ScheduleKind::fixed;
    std::vector<int> sizes;  // fully materialized, length == rollout horizon
};

inline PatchSchedule make_schedule(const ScheduleSpec& spec, int steps) {
    require(steps >= 1, "schedule needs at least one step");
    PatchSchedule out;
    out.kind = spec.kind;
    out.sizes.reserve(steps);
    switch (spec.kind) {
        case ScheduleKind::fixed:
            out.sizes.assign(steps, spec.fixed_size);
            break;
        case ScheduleKind::cyclic: {
            require(!spec.cycle.empty(), "cyclic schedule needs a non-empty cycle");
            const int n = static_cast<int>(spec.cycle.size());
            for (int t = 0; t < steps; ++t) out.sizes.push_back(spec.cycle[(t + spec.phase) % n]);
            break;
        }
        case ScheduleKind::random: {
            require(!spec.choices.empty(), "random schedule needs a non-empty choice set");
            RandomStream rng(spec.seed, "schedule");
            for (int t = 0; t < steps; ++t)
                out.sizes.push_back(
                    spec.choices[static_cast<size_t>(rng.below(spec.choices.size()))]);
            break;
        }
    }
    return out;
}

// Autoregressive rollout: step t tokenizes with schedule.sizes[t]; each
// prediction is appended and the oldest context frame dropped (sliding
// window, no teacher forcing). Returns (B, steps, H, W, C).
template <typename T>
Tensor<T> rollout(const Surrogate<T>& model, const Tensor<T>& context,
                  const PatchSchedule& schedule) {
    require(context.ndim() == 5, "rollout expects (B,H,W,T,C) context");
    for (int s : schedule.sizes) (void)model.run_size(s);  // reject before step 0
    const int B = context.dim(0), H = context.dim(1), W = context.dim(2);
    const int Tc = context.dim(3), C = context.dim(4);
    const int steps = static_cast<int>(schedule.sizes.size());

    Tensor<T> window = context;
    Tensor<T> out({B, steps, H, W, C});
    for (int t = 0; t < steps; ++t) {
        Tape<T> tape;
        const auto ids = model.bind(tape);
        const auto fwd = model.forward(tape, window, schedule.sizes[t], ids);
        const Tensor<T>& pred = tape.val(fwd.pred_phys);  // (B,H,W,1,C)
        for (int b = 0; b < B; ++b)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    for (int c = 0; c < C; ++c)
                        out.at({b, t, y, x, c}) = pred.at({b, y, x, 0, c});
        // Slide the window: drop frame 0, append the prediction.
        Tensor<T> next({B, H, W, Tc, C});
        for (int b = 0; b < B; ++b)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    for (int f = 0; f + 1 < Tc; ++f)
                        for (int c = 0; c < C; ++c)
                            next.at({b, y, x, f, c}) = window.at({b, y, x, f + 1, c});
                    for (int c = 0; c < C; ++c)
                        next.at({b, y, x, Tc - 1, c}) = pred.at({b, y, x, 0, c});
                }
        window = std::move(next);
    }
    return out;
}

}  // namespace flexipatch
