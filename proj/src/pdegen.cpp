#include "flexipatch/pdegen.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "flexipatch/rng.hpp"
#include "json.hpp"

namespace flexipatch {

using nlohmann::json;

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;

// Signed integer wavenumber (cycles per domain) for index m of extent n.
inline int signed_mode(int m, int n) { return m <= n / 2 ? m : m - n; }
}  // namespace

void PDEParams::validate() const {
    require(h >= 4 && w >= 4, "grid extents must be >= 4");
    require(channels >= 1 && channels <= 4, "channels must be in [1,4]");
    require(nu >= 0.0, "diffusivity must be >= 0");
    require(dt > 0.0, "dt must be positive");
    require(t_total >= 2, "need at least 2 frames per trajectory");
    require(ic_mode_min >= 1 && ic_mode_max >= ic_mode_min,
            "initial-condition band must satisfy 1 <= min <= max");
    require(std::isfinite(cx) && std::isfinite(cy) && std::isfinite(nu) && std::isfinite(dt),
            "PDE parameters must be finite");
}

Tensor<double> step_spectral(const Tensor<double>& u, const PDEParams& p) {
    require(u.ndim() == 2 && u.dim(0) == p.h && u.dim(1) == p.w,
            "step_spectral: field shape " + shape_str(u) + " does not match params");
    ComplexGrid g = rfft2(u);
    for (int my = 0; my < p.h; ++my) {
        const double ky = kTwoPi * signed_mode(my, p.h) / p.h;
        for (int mx = 0; mx < g.w_half; ++mx) {
            const double kx = kTwoPi * signed_mode(mx, p.w) / p.w;
            const double decay = std::exp(-p.nu * (kx * kx + ky * ky) * p.dt);
            const double phase = -(p.cx * kx + p.cy * ky) * p.dt;
            g.at(my, mx) *= std::complex<double>(decay * std::cos(phase), decay * std::sin(phase));
        }
    }
    return irfft2(g);
}

Tensor<double> random_initial_condition(const PDEParams& p, uint64_t stream_seed) {
    RandomStream rng(stream_seed, "ic");
    ComplexGrid g;
    g.h = p.h;
    g.w = p.w;
    g.w_half = p.w / 2 + 1;
    g.data.assign(static_cast<size_t>(p.h) * g.w_half, {0.0, 0.0});
    for (int my = 0; my < p.h; ++my) {
        for (int mx = 0; mx < g.w_half; ++mx) {
            const int sy = signed_mode(my, p.h);
            const int sx = signed_mode(mx, p.w);
            const double kmag = std::sqrt(static_cast<double>(sx) * sx + static_cast<double>(sy) * sy);
            if (kmag < p.ic_mode_min - 0.5 || kmag > p.ic_mode_max + 0.5) continue;
            const double amp = std::pow(kmag, -0.5 * p.ic_slope);
            g.at(my, mx) = {amp * rng.normal(), amp * rng.normal()};
        }
    }
    // Enforce Hermitian self-consistency on the self-conjugate columns so the
    // stored half-plane is exactly the spectrum of the produced real field.
    auto fix_column = [&](int mx) {
        g.at(0, mx) = {g.at(0, mx).real(), 0.0};
        if (p.h % 2 == 0) g.at(p.h / 2, mx) = {g.at(p.h / 2, mx).real(), 0.0};
        for (int my = 1; my < (p.h + 1) / 2; ++my) g.at(p.h - my, mx) = std::conj(g.at(my, mx));
    };
    fix_column(0);
    if (p.w % 2 == 0) fix_column(p.w / 2);
    g.at(0, 0) = {0.0, 0.0};  // zero mean

    Tensor<double> u = irfft2(g);
    double var = 0.0;
    for (double v : u.data) var += v * v;
    var /= u.numel();
    if (var > 0.0) {
        const double inv = 1.0 / std::sqrt(var);
        for (double& v : u.data) v *= inv;
    }
    return u;
}

GeneratedData generate_dataset(const PDEParams& p, int n_traj, uint64_t seed) {
    p.validate();
    require(n_traj >= 10, "need n_traj >= 10 for an 80/10/10 split, got " + std::to_string(n_traj));
    const int n_train = n_traj * 8 / 10;
    const int n_valid = n_traj / 10;
    const int n_test = n_traj - n_train - n_valid;

    std::vector<Tensor<float>> all(n_traj);
    parallel_for(n_traj, [&](long long t0, long long t1) {
        for (long long ti = t0; ti < t1; ++ti) {
            Tensor<float> frames({p.t_total, p.h, p.w, p.channels});
            for (int c = 0; c < p.channels; ++c) {
                const uint64_t stream =
                    RandomStream::mix(seed, 1000003ULL * static_cast<uint64_t>(ti) + c);
                Tensor<double> u = random_initial_condition(p, stream);
                for (int t = 0; t < p.t_total; ++t) {
                    if (t > 0) u = step_spectral(u, p);
                    for (int y = 0; y < p.h; ++y)
                        for (int x = 0; x < p.w; ++x)
                            frames.at({t, y, x, c}) =
                                static_cast<float>(u.data[static_cast<size_t>(y) * p.w + x]);
                }
            }
            all[ti] = std::move(frames);
        }
    });

    // Per-channel normalization statistics over the train split.
    std::vector<double> mean(p.channels, 0.0), std_dev(p.channels, 0.0);
    long long count = 0;
    for (int ti = 0; ti < n_train; ++ti) {
        const auto& fr = all[ti];
        for (long long i = 0; i < fr.numel(); ++i) mean[i % p.channels] += fr.data[i];
        count += fr.numel() / p.channels;
    }
    for (int c = 0; c < p.channels; ++c) mean[c] /= static_cast<double>(count);
    for (int ti = 0; ti < n_train; ++ti) {
        const auto& fr = all[ti];
        for (long long i = 0; i < fr.numel(); ++i) {
            const double d = fr.data[i] - mean[i % p.channels];
            std_dev[i % p.channels] += d * d;
        }
    }
    for (int c = 0; c < p.channels; ++c) {
        std_dev[c] = std::sqrt(std_dev[c] / static_cast<double>(count));
        if (std_dev[c] <= 0.0) std_dev[c] = 1.0;
    }

    GeneratedData out;
    auto fill = [&](SplitDataset& ds, const std::string& tag, int begin, int end) {
        ds.params = p;
        ds.seed = seed;
        ds.split = tag;
        ds.norm_mean = mean;
        ds.norm_std = std_dev;
        for (int i = begin; i < end; ++i) ds.trajectories.push_back(all[i]);
    };
    fill(out.train, "train", 0, n_train);
    fill(out.valid, "valid", n_train, n_train + n_valid);
    fill(out.test, "test", n_train + n_valid, n_traj);
    (void)n_test;
    return out;
}

void save_dataset(const SplitDataset& ds, const std::string& path) {
    json header;
    header["format"] = "flexipatch-dataset";
    header["version"] = 1;
    header["split"] = ds.split;
    header["seed"] = ds.seed;
    header["n_traj"] = ds.n_traj();
    header["t_total"] = ds.params.t_total;
    header["h"] = ds.params.h;
    header["w"] = ds.params.w;
    header["channels"] = ds.params.channels;
    header["dtype"] = "float32";
    header["params"] = {{"cx", ds.params.cx},
                        {"cy", ds.params.cy},
                        {"nu", ds.params.nu},
                        {"dt", ds.params.dt},
                        {"ic_mode_min", ds.params.ic_mode_min},
                        {"ic_mode_max", ds.params.ic_mode_max},
                        {"ic_slope", ds.params.ic_slope}};
    header["norm"] = {{"mean", ds.norm_mean}, {"std", ds.norm_std}};

    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open for writing: " + path);
    out << header.dump() << "\n";
    for (const auto& tr : ds.trajectories) {
        out.write(reinterpret_cast<const char*>(tr.data.data()),
                  static_cast<std::streamsize>(tr.data.size() * sizeof(float)));
    }
    if (!out) throw io_error("short write: " + path);
}

SplitDataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open dataset: " + path);
    std::string line;
    if (!std::getline(in, line)) throw io_error("missing dataset header: " + path);
    json header = json::parse(line, nullptr, false);
    if (header.is_discarded() || header.value("format", "") != "flexipatch-dataset")
        throw io_error("not a flexipatch dataset: " + path);

    SplitDataset ds;
    ds.split = header.value("split", "");
    ds.seed = header.value("seed", 0ULL);
    ds.params.t_total = header.at("t_total").get<int>();
    ds.params.h = header.at("h").get<int>();
    ds.params.w = header.at("w").get<int>();
    ds.params.channels = header.at("channels").get<int>();
    const json& pj = header.at("params");
    ds.params.cx = pj.value("cx", 0.0);
    ds.params.cy = pj.value("cy", 0.0);
    ds.params.nu = pj.value("nu", 0.0);
    ds.params.dt = pj.value("dt", 1.0);
    ds.params.ic_mode_min = pj.value("ic_mode_min", 1);
    ds.params.ic_mode_max = pj.value("ic_mode_max", 8);
    ds.params.ic_slope = pj.value("ic_slope", 0.0);
    ds.norm_mean = header.at("norm").at("mean").get<std::vector<double>>();
    ds.norm_std = header.at("norm").at("std").get<std::vector<double>>();

    const int n = header.at("n_traj").get<int>();
    for (int i = 0; i < n; ++i) {
        Tensor<float> tr({ds.params.t_total, ds.params.h, ds.params.w, ds.params.channels});
        in.read(reinterpret_cast<char*>(tr.data.data()),
                static_cast<std::streamsize>(tr.data.size() * sizeof(float)));
        if (!in) throw io_error("truncated dataset body: " + path);
        ds.trajectories.push_back(std::move(tr));
    }
    return ds;
}

}  // namespace flexipatch
