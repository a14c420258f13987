#include "flexipatch/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "flexipatch/checkpoint.hpp"
#include "flexipatch/metrics.hpp"
#include "flexipatch/pdegen.hpp"
#include "flexipatch/rollout.hpp"
#include "flexipatch/runconfig.hpp"
#include "flexipatch/training.hpp"

namespace flexipatch {

using nlohmann::json;

namespace {

struct Args {
    std::string verb;
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out;
    bool seed_set = false;
    uint64_t seed = 0;
    std::vector<std::string> positional;
};

void print_usage(std::ostream& os) {
    os << "usage: flexipatch <verb> [--config PATH] [--set key=value]... [--out DIR] [--seed N]\n"
          "verbs:\n"
          "  gen      generate a synthetic advection-diffusion dataset (train/valid/test)\n"
          "  train    train a surrogate on a generated dataset\n"
          "  eval     next-step VRMSE/BSNMSE of a checkpoint across sizes\n"
          "  rollout  autoregressive rollout with a fixed/cyclic/random size schedule\n"
          "  spectra  residual power spectra and patch-harmonic spike scores of a rollout\n"
          "  ablate   harnesses: base-size sweep, omit-size training, schedule comparison\n"
          "  compare  join the summaries of several run directories\n"
          "environment: FLEXIPATCH_THREADS caps worker threads (results are\n"
          "bit-identical for any value).\n";
}

Args parse_args(int argc, const char* const* argv) {
    Args a;
    require(argc >= 2, "missing verb (try --help)");
    a.verb = argv[1];
    for (int i = 2; i < argc; ++i) {
        const std::string arg = argv[i];
        auto next = [&](const char* what) -> std::string {
            require(i + 1 < argc, std::string(what) + " expects a value");
            return argv[++i];
        };
        if (arg == "--config")
            a.config_path = next("--config");
        else if (arg == "--set")
            a.overrides.push_back(next("--set"));
        else if (arg == "--out")
            a.out = next("--out");
        else if (arg == "--seed") {
            a.seed = std::stoull(next("--seed"));
            a.seed_set = true;
        } else if (arg == "--help" || arg == "-h") {
            print_usage(std::cout);
            std::exit(0);
        } else if (!arg.empty() && arg[0] == '-') {
            throw config_error("unknown flag: " + arg);
        } else {
            a.positional.push_back(arg);
        }
    }
    return a;
}

json resolve_config(const Args& a) {
    json cfg = default_config();
    if (!a.config_path.empty()) {
        const json file_cfg = load_config_file(a.config_path);
        cfg.merge_patch(file_cfg);
    }
    for (const auto& kv : a.overrides) apply_override(cfg, kv);
    if (a.seed_set) cfg["seed"] = a.seed;
    return cfg;
}

uint64_t seed_of(const json& cfg) { return cfg.at("seed").get<uint64_t>(); }

Manifest begin_run(const std::string& verb, const std::string& out, const json& cfg) {
    require(!out.empty(), verb + " requires --out DIR");
    Manifest m;
    m.verb = verb;
    m.version = version_string();
    m.seed = seed_of(cfg);
    m.config = cfg;
    m.completed = false;
    write_manifest(out, m);
    return m;
}

void finish_run(const std::string& out, Manifest& m, std::vector<std::string> outputs) {
    m.outputs = std::move(outputs);
    m.completed = true;
    write_manifest(out, m);
}

SplitDataset load_split(const std::string& dir, const std::string& split) {
    return load_dataset(dir + "/" + split + ".fpds");
}

// ---- metric row helpers shared by eval and rollout ----

struct MetricRow {
    int size = 0, step = 0, window = 0, traj = 0, channel = 0;
    double vrmse = 0.0;
    std::array<BandScore, 3> bands;
};

void channel_slices(const Tensor<float>& frame5, int b, int c, int H, int W,
                    Tensor<double>& out) {
    // frame5 is (B,H,W,1,C)
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            out.at({y, x}) = static_cast<double>(frame5.at({b, y, x, 0, c}));
}

std::vector<MetricRow> next_step_rows(const Surrogate<float>& model, const SplitDataset& ds,
                                      int size, const std::vector<int>& starts,
                                      const FrequencyBands& bands) {
    const PDEParams& p = ds.params;
    const int ctx_len = model.config().context;
    std::vector<MetricRow> rows;
    Tensor<double> pd({p.h, p.w}), td({p.h, p.w});
    for (size_t wi = 0; wi < starts.size(); ++wi) {
        std::vector<std::pair<int, int>> picks;
        for (int tr = 0; tr < ds.n_traj(); ++tr) picks.emplace_back(tr, starts[wi]);
        const Tensor<float> ctx = detail::gather_context<float>(ds, picks, ctx_len);
        const Tensor<float> tgt = detail::gather_target<float>(ds, picks, ctx_len);
        Tape<float> tape;
        const auto ids = model.bind(tape);
        const auto fwd = model.forward(tape, ctx, size, ids);
        const Tensor<float>& pred = tape.val(fwd.pred_phys);
        for (int b = 0; b < ds.n_traj(); ++b) {
            for (int c = 0; c < p.channels; ++c) {
                channel_slices(pred, b, c, p.h, p.w, pd);
                channel_slices(tgt, b, c, p.h, p.w, td);
                MetricRow row;
                row.size = size;
                row.window = static_cast<int>(wi);
                row.traj = b;
                row.channel = c;
                row.vrmse = vrmse(pd, td);
                row.bands = bsnmse(pd, td, bands);
                rows.push_back(row);
            }
        }
    }
    return rows;
}

std::string band_str(const BandScore& b) { return b.defined ? fmt_double(b.value) : "undefined"; }

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot write: " + path);
    for (const auto& l : lines) out << l << "\n";
    if (!out) throw io_error("short write: " + path);
}

void write_json(const std::string& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot write: " + path);
    out << j.dump(2) << "\n";
    if (!out) throw io_error("short write: " + path);
}

// ---- verbs ----

int run_gen(const Args& a) {
    const json cfg = resolve_config(a);
    Manifest m = begin_run("gen", a.out, cfg);
    const PDEParams p = pde_params_from(cfg);
    const int n_traj = cfg.at("data").at("n_traj").get<int>();
    const GeneratedData data = generate_dataset(p, n_traj, seed_of(cfg));
    save_dataset(data.train, a.out + "/train.fpds");
    save_dataset(data.valid, a.out + "/valid.fpds");
    save_dataset(data.test, a.out + "/test.fpds");
    finish_run(a.out, m, {"train.fpds", "valid.fpds", "test.fpds"});
    std::cout << "gen: wrote " << n_traj << " trajectories (" << data.train.n_traj() << "/"
              << data.valid.n_traj() << "/" << data.test.n_traj() << " split) to " << a.out
              << "\n";
    return 0;
}

int run_train(const Args& a) {
    const json cfg = resolve_config(a);
    Manifest m = begin_run("train", a.out, cfg);
    const std::string data_dir = cfg.at("train").at("data").get<std::string>();
    require(!data_dir.empty(), "train.data must point at a generated dataset directory");
    GeneratedData data;
    data.train = load_split(data_dir, "train");
    data.valid = load_split(data_dir, "valid");
    data.test = load_split(data_dir, "test");

    json model_cfg_json = cfg;
    model_cfg_json["data"]["channels"] = data.train.params.channels;
    ModelConfig mc = model_config_from(model_cfg_json);
    const uint64_t seed = seed_of(cfg);
    Surrogate<float> model(mc, seed);
    const TrainConfig tc = train_config_from(cfg, seed);

    ParameterSet<float> best;
    const TrainStats stats = train(model, data, tc, &best);

    // Persist the best-validation parameters.
    model.params() = best;
    save_checkpoint(model, a.out + "/checkpoint.fpck");

    std::vector<std::string> csv;
    std::string head = "epoch,train_loss";
    const auto sizes = mc.tokenizer == TokenizerKind::fixed ? std::vector<int>{mc.fixed_size}
                                                            : mc.size_set;
    for (int s : sizes) head += ",vrmse_" + std::to_string(s);
    head += ",wall_seconds";
    csv.push_back(head);
    for (const auto& e : stats.epochs) {
        std::string line = std::to_string(e.epoch) + "," + fmt_double(e.train_loss);
        for (int s : sizes) line += "," + fmt_double(e.valid_vrmse.at(s));
        line += "," + fmt_double(e.wall_seconds);
        csv.push_back(line);
    }
    write_lines(a.out + "/train_stats.csv", csv);

    json summary;
    summary["samples_seen"] = stats.samples_seen;
    summary["best_epoch"] = stats.best_epoch;
    summary["best_mean_vrmse"] = stats.best_mean_vrmse;
    json epochs = json::array();
    for (const auto& e : stats.epochs) {
        json je{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"wall_seconds", e.wall_seconds}};
        for (const auto& [s, v] : e.valid_vrmse) je["vrmse"][std::to_string(s)] = v;
        epochs.push_back(je);
    }
    summary["epochs"] = epochs;
    write_json(a.out + "/train_stats.json", summary);
    finish_run(a.out, m, {"checkpoint.fpck", "train_stats.csv", "train_stats.json"});
    std::cout << "train: " << stats.samples_seen << " samples, best epoch " << stats.best_epoch
              << " mean VRMSE " << stats.best_mean_vrmse << "\n";
    return 0;
}

int run_eval(const Args& a) {
    const json cfg = resolve_config(a);
    Manifest m = begin_run("eval", a.out, cfg);
    const json& ev = cfg.at("eval");
    const std::string ckpt = ev.at("checkpoint").get<std::string>();
    const std::string data_dir = ev.at("data").get<std::string>();
    require(!ckpt.empty() && !data_dir.empty(), "eval.checkpoint and eval.data are required");
    const Surrogate<float> model = load_checkpoint(ckpt);
    const SplitDataset ds = load_split(data_dir, ev.at("split").get<std::string>());
    const std::vector<int> sizes = ev.at("sizes").get<std::vector<int>>();
    const int windows = ev.at("windows").get<int>();
    const int stride = ev.at("window_stride").get<int>();
    require(windows >= 1 && stride >= 1, "eval.windows and eval.window_stride must be >= 1");

    std::vector<int> starts;
    for (int w = 0; w < windows; ++w) {
        const int s = w * stride;
        if (s + model.config().context < ds.params.t_total) starts.push_back(s);
    }
    const FrequencyBands bands = log_bands(ds.params.h, ds.params.w);

    std::vector<std::string> csv{"size,window,traj,channel,vrmse,bsnmse_low,bsnmse_mid,bsnmse_high"};
    json summary;
    for (int size : sizes) {
        const auto rows = next_step_rows(model, ds, size, starts, bands);
        double acc = 0.0;
        for (const auto& r : rows) {
            csv.push_back(std::to_string(r.size) + "," + std::to_string(r.window) + "," +
                          std::to_string(r.traj) + "," + std::to_string(r.channel) + "," +
                          fmt_double(r.vrmse) + "," + band_str(r.bands[0]) + "," +
                          band_str(r.bands[1]) + "," + band_str(r.bands[2]));
            acc += r.vrmse;
        }
        summary["vrmse"][std::to_string(size)] = acc / rows.size();
    }
    write_lines(a.out + "/eval_metrics.csv", csv);
    write_json(a.out + "/eval_summary.json", summary);
    finish_run(a.out, m, {"eval_metrics.csv", "eval_summary.json"});
    for (int size : sizes)
        std::cout << "eval: size " << size << " VRMSE "
                  << summary["vrmse"][std::to_string(size)].get<double>() << "\n";
    return 0;
}

int run_rollout(const Args& a) {
    const json cfg = resolve_config(a);
    Manifest m = begin_run("rollout", a.out, cfg);
    const json& ro = cfg.at("rollout");
    const std::string ckpt = ro.at("checkpoint").get<std::string>();
    const std::string data_dir = ro.at("data").get<std::string>();
    require(!ckpt.empty() && !data_dir.empty(), "rollout.checkpoint and rollout.data are required");
    const Surrogate<float> model = load_checkpoint(ckpt);
    const SplitDataset ds = load_split(data_dir, ro.at("split").get<std::string>());
    const int steps = ro.at("steps").get<int>();
    const int ctx_len = model.config().context;
    require(steps >= 1 && steps + ctx_len <= ds.params.t_total,
            "rollout.steps must satisfy 1 <= steps <= t_total - context");
    const ScheduleSpec spec = schedule_spec_from(cfg, seed_of(cfg));
    const PatchSchedule schedule = make_schedule(spec, steps);

    std::vector<std::pair<int, int>> picks;
    for (int tr = 0; tr < ds.n_traj(); ++tr) picks.emplace_back(tr, 0);
    const Tensor<float> ctx = detail::gather_context<float>(ds, picks, ctx_len);
    const Tensor<float> preds = rollout(model, ctx, schedule);  // (B,steps,H,W,C)

    // Predictions in the dataset format so metric tooling reads truth and
    // prediction files the same way.
    SplitDataset pred_ds;
    pred_ds.params = ds.params;
    pred_ds.params.t_total = steps;
    pred_ds.seed = seed_of(cfg);
    pred_ds.split = "rollout";
    pred_ds.norm_mean = ds.norm_mean;
    pred_ds.norm_std = ds.norm_std;
    const PDEParams& p = ds.params;
    for (int b = 0; b < ds.n_traj(); ++b) {
        Tensor<float> tr({steps, p.h, p.w, p.channels});
        for (int t = 0; t < steps; ++t)
            for (int y = 0; y < p.h; ++y)
                for (int x = 0; x < p.w; ++x)
                    for (int c = 0; c < p.channels; ++c)
                        tr.at({t, y, x, c}) = preds.at({b, t, y, x, c});
        pred_ds.trajectories.push_back(std::move(tr));
    }
    save_dataset(pred_ds, a.out + "/rollout_pred.fpds");

    const FrequencyBands bands = log_bands(p.h, p.w);
    std::vector<std::string> csv{"step,size,traj,channel,vrmse,bsnmse_low,bsnmse_mid,bsnmse_high"};
    json per_step = json::array();
    Tensor<double> pd({p.h, p.w}), td({p.h, p.w});
    for (int t = 0; t < steps; ++t) {
        double acc = 0.0;
        int n = 0;
        for (int b = 0; b < ds.n_traj(); ++b) {
            for (int c = 0; c < p.channels; ++c) {
                for (int y = 0; y < p.h; ++y)
                    for (int x = 0; x < p.w; ++x) {
                        pd.at({y, x}) = static_cast<double>(preds.at({b, t, y, x, c}));
                        td.at({y, x}) =
                            static_cast<double>(ds.trajectories[b].at({ctx_len + t, y, x, c}));
                    }
                const double v = vrmse(pd, td);
                const auto bs = bsnmse(pd, td, bands);
                csv.push_back(std::to_string(t) + "," + std::to_string(schedule.sizes[t]) + "," +
                              std::to_string(b) + "," + std::to_string(c) + "," + fmt_double(v) +
                              "," + band_str(bs[0]) + "," + band_str(bs[1]) + "," +
                              band_str(bs[2]));
                acc += v;
                ++n;
            }
        }
        per_step.push_back({{"step", t}, {"size", schedule.sizes[t]}, {"vrmse", acc / n}});
    }
    write_lines(a.out + "/rollout_metrics.csv", csv);
    json summary;
    summary["schedule"] = schedule.sizes;
    summary["schedule_kind"] = schedule_kind_name(schedule.kind);
    summary["per_step"] = per_step;
    summary["data"] = data_dir;
    summary["split"] = ro.at("split");
    summary["context"] = ctx_len;
    double final_v = per_step.back().at("vrmse").get<double>();
    summary["final_step_vrmse"] = final_v;
    write_json(a.out + "/rollout_summary.json", summary);
    finish_run(a.out, m, {"rollout_pred.fpds", "rollout_metrics.csv", "rollout_summary.json"});
    std::cout << "rollout: " << steps << " steps (" << schedule_kind_name(schedule.kind)
              << "), final-step VRMSE " << final_v << "\n";
    return 0;
}

int run_spectra(const Args& a) {
    const json cfg = resolve_config(a);
    Manifest m = begin_run("spectra", a.out, cfg);
    const json& sp = cfg.at("spectra");
    const std::string rollout_dir = sp.at("rollout").get<std::string>();
    require(!rollout_dir.empty(), "spectra.rollout must point at a rollout output directory");
    const Manifest rm = read_manifest(rollout_dir);
    require(rm.verb == "rollout", "spectra.rollout does not contain a rollout manifest");
    require(rm.completed, "rollout run is incomplete");
    const SplitDataset pred = load_dataset(rollout_dir + "/rollout_pred.fpds");
    const std::string data_dir = rm.config.at("rollout").at("data").get<std::string>();
    const SplitDataset truth =
        load_split(data_dir, rm.config.at("rollout").at("split").get<std::string>());
    const int ctx_len = rm.config.at("model").at("context").get<int>();
    int step = sp.at("step").get<int>();
    if (step < 0) step = pred.params.t_total - 1;
    require(step < pred.params.t_total, "spectra.step beyond rollout horizon");

    const PDEParams& p = truth.params;
    const auto patches = sp.at("patch_sizes").get<std::vector<int>>();
    std::vector<std::string> score_csv{"channel,patch,score"};
    json summary;
    summary["step"] = step;
    std::vector<std::string> outputs = {"spike_scores.csv", "spike_scores.json"};
    Tensor<double> pd({p.h, p.w}), td({p.h, p.w});
    for (int c = 0; c < p.channels; ++c) {
        // Spectrum averaged over rollout trajectories.
        std::vector<double> power;
        for (int b = 0; b < pred.n_traj(); ++b) {
            for (int y = 0; y < p.h; ++y)
                for (int x = 0; x < p.w; ++x) {
                    pd.at({y, x}) = static_cast<double>(pred.trajectories[b].at({step, y, x, c}));
                    td.at({y, x}) =
                        static_cast<double>(truth.trajectories[b].at({ctx_len + step, y, x, c}));
                }
            const SpectralReport rep = residual_spectrum(pd, td);
            if (power.empty()) power.assign(rep.power.size(), 0.0);
            for (size_t i = 0; i < rep.power.size(); ++i) power[i] += rep.power[i];
        }
        for (auto& v : power) v /= pred.n_traj();
        std::vector<std::string> csv{"k,power"};
        for (size_t i = 0; i < power.size(); ++i)
            csv.push_back(std::to_string(i) + "," + fmt_double(power[i]));
        const std::string name = "spectrum_c" + std::to_string(c) + ".csv";
        write_lines(a.out + "/" + name, csv);
        outputs.push_back(name);

        SpectralReport mean_rep;
        mean_rep.h = p.h;
        mean_rep.w = p.w;
        mean_rep.power = power;
        for (int patch : patches) {
            const double score = harmonic_spike_score(mean_rep, patch);
            score_csv.push_back(std::to_string(c) + "," + std::to_string(patch) + "," +
                                fmt_double(score));
            summary["scores"][std::to_string(c)][std::to_string(patch)] = score;
        }
    }
    write_lines(a.out + "/spike_scores.csv", score_csv);
    write_json(a.out + "/spike_scores.json", summary);
    finish_run(a.out, m, outputs);
    std::cout << "spectra: step " << step << " scores written to " << a.out << "\n";
    return 0;
}

// Shared by the ablation harnesses: train one model and return its test
// VRMSE per size.
std::map<int, double> train_and_eval(const json& cfg, const GeneratedData& data, uint64_t seed,
                                     const std::map<int, double>& size_probs,
                                     const std::vector<int>& eval_sizes) {
    json mc_json = cfg;
    mc_json["data"]["channels"] = data.train.params.channels;
    ModelConfig mc = model_config_from(mc_json);
    Surrogate<float> model(mc, seed);
    TrainConfig tc = train_config_from(cfg, seed);
    tc.size_probs = size_probs;
    ParameterSet<float> best;
    train(model, data, tc, &best);
    model.params() = best;
    std::map<int, double> out;
    for (int s : eval_sizes)
        out[s] = evaluate_vrmse(model, data.test, s, tc.valid_window_stride);
    return out;
}

int run_ablate(const Args& a) {
    const json cfg = resolve_config(a);
    Manifest m = begin_run("ablate", a.out, cfg);
    const json& ab = cfg.at("ablate");
    const std::string mode = ab.at("mode").get<std::string>();
    json report;
    report["mode"] = mode;
    std::vector<std::string> csv;

    if (mode == "omit-size" || mode == "base-size") {
        const std::string data_dir = ab.at("data").get<std::string>();
        require(!data_dir.empty(), "ablate.data must point at a generated dataset directory");
        GeneratedData data;
        data.train = load_split(data_dir, "train");
        data.valid = load_split(data_dir, "valid");
        data.test = load_split(data_dir, "test");
        const std::vector<int> sizes = cfg.at("model").at("sizes").get<std::vector<int>>();

        if (mode == "omit-size") {
            // Training without one size and probing it at inference.
            const int omit = ab.at("omit").get<int>();
            const auto seeds = ab.at("seeds").get<std::vector<uint64_t>>();
            std::map<int, double> kept_probs;
            int kept = 0;
            for (int s : sizes)
                if (s != omit) ++kept;
            require(kept >= 1, "omit-size: nothing left to train on");
            for (int s : sizes)
                if (s != omit) kept_probs[s] = 1.0 / kept;
            csv.push_back("seed,arm,size,vrmse");
            std::vector<double> full_at_omit, omit_at_omit;
            for (uint64_t seed : seeds) {
                const auto full = train_and_eval(cfg, data, seed, {}, sizes);
                const auto part = train_and_eval(cfg, data, seed, kept_probs, sizes);
                for (int s : sizes) {
                    csv.push_back(std::to_string(seed) + ",full," + std::to_string(s) + "," +
                                  fmt_double(full.at(s)));
                    csv.push_back(std::to_string(seed) + ",omit," + std::to_string(s) + "," +
                                  fmt_double(part.at(s)));
                }
                full_at_omit.push_back(full.at(omit));
                omit_at_omit.push_back(part.at(omit));
                report["seeds"][std::to_string(seed)] = {
                    {"full", full}, {"omit", part}};
            }
            auto median = [](std::vector<double> v) {
                std::sort(v.begin(), v.end());
                return v.size() % 2 ? v[v.size() / 2]
                                    : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
            };
            report["omitted_size"] = omit;
            report["median_full_vrmse_at_omitted"] = median(full_at_omit);
            report["median_omit_vrmse_at_omitted"] = median(omit_at_omit);
            report["degradation_confirmed"] =
                median(omit_at_omit) > median(full_at_omit);
        } else {
            const auto base_sizes = ab.at("base_sizes").get<std::vector<int>>();
            csv.push_back("base_size,size,vrmse");
            for (int kb : base_sizes) {
                json arm_cfg = cfg;
                arm_cfg["model"]["k_base"] = kb;
                const auto res = train_and_eval(arm_cfg, data, seed_of(cfg), {}, sizes);
                for (int s : sizes) {
                    csv.push_back(std::to_string(kb) + "," + std::to_string(s) + "," +
                                  fmt_double(res.at(s)));
                    report["grid"][std::to_string(kb)][std::to_string(s)] = res.at(s);
                }
            }
        }
    } else if (mode == "schedule") {
        // Cyclic (each starting phase) vs random vs fixed rollouts on one
        // trained checkpoint.
        const std::string ckpt = ab.at("checkpoint").get<std::string>();
        const std::string data_dir = ab.at("data").get<std::string>();
        require(!ckpt.empty() && !data_dir.empty(),
                "ablate schedule mode needs ablate.checkpoint and ablate.data");
        const Surrogate<float> model = load_checkpoint(ckpt);
        const SplitDataset test = load_split(data_dir, "test");
        const int steps = ab.at("steps").get<int>();
        const int ctx_len = model.config().context;
        require(steps + ctx_len <= test.params.t_total, "ablate.steps beyond trajectory length");
        std::vector<std::pair<int, int>> picks;
        for (int tr = 0; tr < test.n_traj(); ++tr) picks.emplace_back(tr, 0);
        const Tensor<float> ctx = detail::gather_context<float>(test, picks, ctx_len);

        auto run_one = [&](const std::string& name, const PatchSchedule& sched) {
            const Tensor<float> preds = rollout(model, ctx, sched);
            const PDEParams& p = test.params;
            Tensor<double> pd({p.h, p.w}), td({p.h, p.w});
            double acc = 0.0;
            int n = 0;
            const int t = steps - 1;
            for (int b = 0; b < test.n_traj(); ++b)
                for (int c = 0; c < p.channels; ++c) {
                    for (int y = 0; y < p.h; ++y)
                        for (int x = 0; x < p.w; ++x) {
                            pd.at({y, x}) = preds.at({b, t, y, x, c});
                            td.at({y, x}) = test.trajectories[b].at({ctx_len + t, y, x, c});
                        }
                    acc += vrmse(pd, td);
                    ++n;
                }
            const double v = acc / n;
            report["schedules"][name] = v;
            csv.push_back(name + "," + fmt_double(v));
        };
        csv.push_back("schedule,final_step_vrmse");
        ScheduleSpec spec;
        for (int phase : ab.at("phases").get<std::vector<int>>()) {
            spec.kind = ScheduleKind::cyclic;
            spec.phase = phase;
            run_one("cyclic_phase" + std::to_string(phase), make_schedule(spec, steps));
        }
        for (uint64_t rs : ab.at("random_seeds").get<std::vector<uint64_t>>()) {
            spec.kind = ScheduleKind::random;
            spec.seed = rs;
            run_one("random_seed" + std::to_string(rs), make_schedule(spec, steps));
        }
        spec.kind = ScheduleKind::fixed;
        for (int s : model.config().size_set) {
            spec.fixed_size = s;
            run_one("fixed_" + std::to_string(s), make_schedule(spec, steps));
        }
    } else {
        throw config_error("ablate.mode must be one of omit-size, base-size, schedule");
    }

    write_lines(a.out + "/ablate_report.csv", csv);
    write_json(a.out + "/ablate_report.json", report);
    finish_run(a.out, m, {"ablate_report.csv", "ablate_report.json"});
    std::cout << "ablate: mode " << mode << " report written to " << a.out << "\n";
    return 0;
}

int run_compare(const Args& a) {
    const json cfg = resolve_config(a);
    require(!a.positional.empty(), "compare expects run directories as positional arguments");
    Manifest m = begin_run("compare", a.out, cfg);
    json combined = json::array();
    std::vector<std::string> csv{"run,verb,completed,summary"};
    for (const auto& dir : a.positional) {
        const Manifest rm = read_manifest(dir);
        json entry;
        entry["run"] = dir;
        entry["verb"] = rm.verb;
        entry["completed"] = rm.completed;
        entry["seed"] = rm.seed;
        for (const char* name :
             {"eval_summary.json", "rollout_summary.json", "ablate_report.json",
              "train_stats.json", "spike_scores.json"}) {
            std::ifstream in(dir + "/" + name);
            if (!in) continue;
            json j = json::parse(in, nullptr, false);
            if (!j.is_discarded()) entry["summaries"][name] = j;
        }
        csv.push_back(dir + "," + rm.verb + "," + (rm.completed ? "yes" : "no") + "," +
                      std::to_string(entry.contains("summaries") ? entry["summaries"].size() : 0));
        combined.push_back(entry);
    }
    write_json(a.out + "/compare.json", combined);
    write_lines(a.out + "/compare.csv", csv);
    finish_run(a.out, m, {"compare.json", "compare.csv"});
    std::cout << "compare: joined " << a.positional.size() << " runs into " << a.out << "\n";
    return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
    try {
        if (argc >= 2 && (std::string(argv[1]) == "--help" || std::string(argv[1]) == "-h")) {
            print_usage(std::cout);
            return 0;
        }
        const Args a = parse_args(argc, argv);
        if (a.verb == "gen") return run_gen(a);
        if (a.verb == "train") return run_train(a);
        if (a.verb == "eval") return run_eval(a);
        if (a.verb == "rollout") return run_rollout(a);
        if (a.verb == "spectra") return run_spectra(a);
        if (a.verb == "ablate") return run_ablate(a);
        if (a.verb == "compare") return run_compare(a);
        print_usage(std::cerr);
        throw config_error("unknown verb: " + a.verb);
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const numeric_error& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const io_error& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace flexipatch
