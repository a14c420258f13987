// End-to-end CLI lifecycle: gen -> train -> eval -> rollout -> spectra ->
// compare, manifests, determinism and exit codes.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "flexipatch/cli.hpp"
#include "flexipatch/pdegen.hpp"
#include "flexipatch/runconfig.hpp"
#include "harness.hpp"

using namespace flexipatch;
using testing::check;
using testing::check_close;

namespace fs = std::filesystem;

namespace {

int run_cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.push_back("flexipatch");
    for (const auto& a : args) argv.push_back(a.c_str());
    return cli_main(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const std::string root = "cli_tmp";

// Tiny everything: 16x16 grid, short trajectories, one-block model.
const std::vector<std::string> tiny_data = {
    "--set", "data.h=16",          "--set", "data.w=16",          "--set", "data.n_traj=10",
    "--set", "data.t_total=10",    "--set", "data.ic_mode_max=4",
};
const std::vector<std::string> tiny_model = {
    "--set", "model.embed_dim=8",  "--set", "model.mlp_dim=16", "--set", "model.heads=2",
    "--set", "model.blocks=1",     "--set", "model.context=2",
};

std::vector<std::string> cat(std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

void gen_and_determinism() {
    fs::remove_all(root);
    fs::create_directories(root);
    check(run_cli(cat({"gen", "--out", root + "/data", "--seed", "9"}, tiny_data)) == 0,
          "gen exits 0");
    check(run_cli(cat({"gen", "--out", root + "/data2", "--seed", "9"}, tiny_data)) == 0,
          "gen (second run) exits 0");
    bool identical = true;
    for (const char* f : {"train.fpds", "valid.fpds", "test.fpds"})
        identical = identical &&
                    slurp(root + "/data/" + f) == slurp(root + "/data2/" + f);
    check(identical, "gen with the same seed writes byte-identical datasets");

    const Manifest m = read_manifest(root + "/data");
    check(m.verb == "gen" && m.completed && m.outputs.size() == 3,
          "manifest records verb, completion and outputs");

    // A manifest is a valid config: regenerating from it reproduces the data.
    check(run_cli({"gen", "--config", root + "/data/manifest.json", "--out", root + "/data3"}) ==
              0,
          "gen from a manifest exits 0");
    check(slurp(root + "/data/train.fpds") == slurp(root + "/data3/train.fpds"),
          "a run is reproducible from its manifest alone");
}

void exit_codes() {
    check(run_cli({"bogus-verb"}) == 2, "unknown verb exits 2");
    {
        std::ofstream bad(root + "/bad.json");
        bad << "{ not json";
    }
    check(run_cli({"gen", "--config", root + "/bad.json", "--out", root + "/x"}) == 2,
          "invalid config exits 2");
    check(run_cli(cat(cat({"train", "--out", root + "/x", "--set",
                           "train.data=" + root + "/nonexistent"},
                          tiny_data),
                      tiny_model)) == 4,
          "missing dataset exits 4");
    check(run_cli(cat({"gen", "--out", root + "/x", "--set", "data.channels=9"}, tiny_data)) == 2,
          "out-of-range channel count exits 2");
}

void train_eval_rollout_spectra() {
    const std::string data = root + "/data";
    auto train_args = cat(cat({"train", "--out", root + "/run", "--seed", "3", "--set",
                               "train.data=" + data, "--set", "train.epochs=2", "--set",
                               "train.epoch_size=8", "--set", "train.lr=0.002"},
                              tiny_data),
                          tiny_model);
    check(run_cli(train_args) == 0, "train exits 0");
    check(fs::exists(root + "/run/checkpoint.fpck") && fs::exists(root + "/run/train_stats.csv"),
          "train writes checkpoint and stats");

    const std::string ckpt = root + "/run/checkpoint.fpck";
    check(run_cli({"eval", "--out", root + "/eval", "--set", "eval.checkpoint=" + ckpt, "--set",
                   "eval.data=" + data, "--set", "eval.sizes=[4,8,16]"}) == 0,
          "eval exits 0");
    check(fs::exists(root + "/eval/eval_metrics.csv"), "eval writes the metrics CSV");

    // eval == rollout with one step and a fixed schedule, per size.
    check(run_cli({"rollout", "--out", root + "/ro1", "--set", "rollout.checkpoint=" + ckpt,
                   "--set", "rollout.data=" + data, "--set", "rollout.steps=1", "--set",
                   "rollout.schedule=fixed", "--set", "rollout.fixed_size=8"}) == 0,
          "single-step rollout exits 0");
    {
        std::ifstream es(root + "/eval/eval_summary.json");
        nlohmann::json ej = nlohmann::json::parse(es);
        std::ifstream rs(root + "/ro1/rollout_summary.json");
        nlohmann::json rj = nlohmann::json::parse(rs);
        const double ev = ej["vrmse"]["8"].get<double>();
        const double rv = rj["per_step"][0]["vrmse"].get<double>();
        check(ev == rv, "eval at size 8 equals a 1-step fixed-8 rollout in metric output");
    }

    check(run_cli({"rollout", "--out", root + "/ro", "--set", "rollout.checkpoint=" + ckpt,
                   "--set", "rollout.data=" + data, "--set", "rollout.steps=6", "--set",
                   "rollout.schedule=cyclic"}) == 0,
          "cyclic rollout exits 0");
    // Patch 8 on the 16-grid gives harmonics 2,4,6 below the Nyquist bin.
    check(run_cli({"spectra", "--out", root + "/sp", "--set",
                   "spectra.rollout=" + root + "/ro", "--set", "spectra.patch_sizes=[8]"}) == 0,
          "spectra exits 0");
    check(fs::exists(root + "/sp/spectrum_c0.csv") && fs::exists(root + "/sp/spike_scores.csv"),
          "spectra writes spectrum and score files");

    check(run_cli({"compare", "--out", root + "/cmp", root + "/eval", root + "/ro"}) == 0,
          "compare exits 0");
    check(fs::exists(root + "/cmp/compare.json"), "compare writes the joined report");
}

void metric_csv_determinism() {
    // Re-running a verb with an identical manifest produces byte-identical
    // metric CSVs (single-threaded mode).
    setenv("FLEXIPATCH_THREADS", "1", 1);
    const std::string ckpt = root + "/run/checkpoint.fpck";
    const std::string data = root + "/data";
    for (const char* out : {"det1", "det2"}) {
        check(run_cli({"eval", "--out", root + "/" + std::string(out), "--set",
                       "eval.checkpoint=" + ckpt, "--set", "eval.data=" + data}) == 0,
              std::string("eval rerun exits 0 (") + out + ")");
    }
    check(slurp(root + "/det1/eval_metrics.csv") == slurp(root + "/det2/eval_metrics.csv"),
          "re-run eval produces byte-identical metric CSVs");
}

void ablate_schedule_mode() {
    const std::string ckpt = root + "/run/checkpoint.fpck";
    const std::string data = root + "/data";
    check(run_cli({"ablate", "--out", root + "/ab", "--set", "ablate.mode=schedule", "--set",
                   "ablate.checkpoint=" + ckpt, "--set", "ablate.data=" + data, "--set",
                   "ablate.steps=4", "--set", "ablate.phases=[0,1]", "--set",
                   "ablate.random_seeds=[5]"}) == 0,
          "ablate (schedule mode) exits 0");
    std::ifstream in(root + "/ab/ablate_report.json");
    nlohmann::json j = nlohmann::json::parse(in);
    check(j["schedules"].contains("cyclic_phase0") && j["schedules"].contains("random_seed5") &&
              j["schedules"].contains("fixed_16"),
          "schedule ablation reports cyclic, random and fixed rollouts");
}

}  // namespace

int main() {
    gen_and_determinism();
    exit_codes();
    train_eval_rollout_spectra();
    metric_csv_determinism();
    ablate_schedule_mode();
    fs::remove_all(root);
    return testing::summary("test_cli");
}
