#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flexipatch/fft.hpp"
#include "flexipatch/tensor.hpp"

namespace flexipatch {

// Periodic 2D advection-diffusion on an (H,W) grid with unit spacing:
//   u_t + c . grad(u) = nu * lap(u)
// stepped exactly in spectral space with an integrating factor.
struct PDEParams {
    int h = 64, w = 64;
    int channels = 1;
    double cx = 1.0, cy = 0.5;  // velocity in grid units per time unit
    double nu = 0.005;          // diffusivity, >= 0
    double dt = 1.0;
    int t_total = 60;
    // Band-limited random initial conditions: modes with radial index in
    // [ic_mode_min, ic_mode_max], power ~ |k|^(-ic_slope) inside the band.
    int ic_mode_min = 1;
    int ic_mode_max = 8;
    double ic_slope = 0.0;

    void validate() const;
};

// One exact integrating-factor step:
//   u_hat(k) <- u_hat(k) * exp((-i(cx kx + cy ky) - nu |k|^2) dt)
Tensor<double> step_spectral(const Tensor<double>& u, const PDEParams& p);

// Seedable band-limited random field, zero mean, unit variance.
Tensor<double> random_initial_condition(const PDEParams& p, uint64_t stream_seed);

struct SplitDataset {
    PDEParams params;
    uint64_t seed = 0;
    std::string split;                       // train | valid | test
    std::vector<Tensor<float>> trajectories; // each (T,H,W,C)
    std::vector<double> norm_mean, norm_std; // train-split statistics

    int n_traj() const { return static_cast<int>(trajectories.size()); }
};

struct GeneratedData {
    SplitDataset train, valid, test;
};

// Deterministic under (seed, params); 80/10/10 split by trajectory;
// normalization statistics computed over the train split and copied to all
// three splits. Requires n_traj >= 10.
GeneratedData generate_dataset(const PDEParams& p, int n_traj, uint64_t seed);

// One file per split: a single JSON header line (shapes, dtype, params,
// seed, split, normalization stats) followed by raw little-endian float32
// frames in (traj, t, y, x, c) order.
void save_dataset(const SplitDataset& ds, const std::string& path);
SplitDataset load_dataset(const std::string& path);

}  // namespace flexipatch
