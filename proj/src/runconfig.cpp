#include "flexipatch/runconfig.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

namespace flexipatch {

using nlohmann::json;

json default_config() {
    json cfg;
    cfg["seed"] = 0;
    cfg["data"] = {{"h", 64},
                   {"w", 64},
                   {"channels", 1},
                   {"n_traj", 20},
                   {"t_total", 60},
                   {"dt", 1.0},
                   {"cx", 1.0},
                   {"cy", 0.5},
                   {"nu", 0.005},
                   {"ic_mode_min", 1},
                   {"ic_mode_max", 8},
                   {"ic_slope", 0.0}};
    cfg["model"] = {{"embed_dim", 64},
                    {"mlp_dim", 256},
                    {"heads", 4},
                    {"blocks", 2},
                    {"attention", "axial"},
                    {"tokenizer", "ckm"},
                    {"sizes", json::array({4, 8, 16})},
                    {"k_base", 16},
                    {"fixed_size", 16},
                    {"context", 6},
                    {"pad_mode", "learned"}};
    cfg["train"] = {{"data", ""},
                    {"lr", 1e-4},
                    {"weight_decay", 1e-4},
                    {"batch", 2},
                    {"epochs", 10},
                    {"epoch_size", 100},
                    {"size_probs", json::object()},
                    {"valid_window_stride", 6}};
    cfg["eval"] = {{"checkpoint", ""},
                   {"data", ""},
                   {"split", "test"},
                   {"sizes", json::array({4, 8, 16})},
                   {"windows", 1},
                   {"window_stride", 6}};
    cfg["rollout"] = {{"checkpoint", ""},
                      {"data", ""},
                      {"split", "test"},
                      {"steps", 20},
                      {"schedule", "cyclic"},
                      {"fixed_size", 16},
                      {"cycle", json::array({4, 8, 16})},
                      {"phase", 0},
                      {"choices", json::array({4, 8, 16})}};
    cfg["spectra"] = {{"rollout", ""}, {"step", -1}, {"patch_sizes", json::array({16})}};
    cfg["ablate"] = {{"mode", "omit-size"},
                     {"data", ""},
                     {"seeds", json::array({1, 2, 3})},
                     {"base_sizes", json::array({4, 8, 16})},
                     {"omit", 8},
                     {"checkpoint", ""},
                     {"steps", 10},
                     {"phases", json::array({0, 1, 2})},
                     {"random_seeds", json::array({1, 2, 3})}};
    return cfg;
}

json load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open config file: " + path);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw config_error("config file is not valid JSON: " + path);
    if (j.contains("verb") && j.contains("config")) return j.at("config");  // manifest
    return j;
}

void apply_override(json& cfg, const std::string& keyval) {
    const auto eq = keyval.find('=');
    require(eq != std::string::npos && eq > 0,
            "--set expects key=value, got '" + keyval + "'");
    const std::string key = keyval.substr(0, eq);
    const std::string raw = keyval.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;  // plain string
    json* node = &cfg;
    size_t pos = 0;
    while (true) {
        const auto dot = key.find('.', pos);
        const std::string part = key.substr(pos, dot == std::string::npos ? dot : dot - pos);
        require(!part.empty(), "--set: empty key segment in '" + key + "'");
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        node = &(*node)[part];
        pos = dot + 1;
    }
}

PDEParams pde_params_from(const json& cfg) {
    const json& d = cfg.at("data");
    PDEParams p;
    p.h = d.at("h").get<int>();
    p.w = d.at("w").get<int>();
    p.channels = d.at("channels").get<int>();
    p.t_total = d.at("t_total").get<int>();
    p.dt = d.at("dt").get<double>();
    p.cx = d.at("cx").get<double>();
    p.cy = d.at("cy").get<double>();
    p.nu = d.at("nu").get<double>();
    p.ic_mode_min = d.at("ic_mode_min").get<int>();
    p.ic_mode_max = d.at("ic_mode_max").get<int>();
    p.ic_slope = d.at("ic_slope").get<double>();
    p.validate();
    return p;
}

ModelConfig model_config_from(const json& cfg) {
    const json& m = cfg.at("model");
    ModelConfig c;
    c.embed_dim = m.at("embed_dim").get<int>();
    c.mlp_dim = m.at("mlp_dim").get<int>();
    c.n_heads = m.at("heads").get<int>();
    c.n_blocks = m.at("blocks").get<int>();
    const std::string attn = m.at("attention").get<std::string>();
    require(attn == "full" || attn == "axial", "model.attention must be 'full' or 'axial'");
    c.attention = attn == "full" ? AttentionKind::full : AttentionKind::axial;
    const std::string tok = m.at("tokenizer").get<std::string>();
    if (tok == "ckm")
        c.tokenizer = TokenizerKind::ckm;
    else if (tok == "csm")
        c.tokenizer = TokenizerKind::csm;
    else if (tok == "fixed")
        c.tokenizer = TokenizerKind::fixed;
    else
        throw config_error("model.tokenizer must be one of ckm, csm, fixed");
    c.size_set = m.at("sizes").get<std::vector<int>>();
    c.k_base = m.at("k_base").get<int>();
    c.fixed_size = m.at("fixed_size").get<int>();
    c.context = m.at("context").get<int>();
    const std::string pm = m.at("pad_mode").get<std::string>();
    if (pm == "zero")
        c.pad_mode = PadMode::zero;
    else if (pm == "periodic")
        c.pad_mode = PadMode::periodic;
    else if (pm == "learned")
        c.pad_mode = PadMode::learned;
    else
        throw config_error("model.pad_mode must be one of zero, periodic, learned");
    if (cfg.contains("data")) c.channels = cfg.at("data").at("channels").get<int>();
    c.validate();
    return c;
}

TrainConfig train_config_from(const json& cfg, uint64_t seed) {
    const json& t = cfg.at("train");
    TrainConfig c;
    c.lr = t.at("lr").get<double>();
    c.weight_decay = t.at("weight_decay").get<double>();
    c.batch = t.at("batch").get<int>();
    c.epochs = t.at("epochs").get<int>();
    c.epoch_size = t.at("epoch_size").get<int>();
    c.valid_window_stride = t.at("valid_window_stride").get<int>();
    c.seed = seed;
    if (t.contains("size_probs")) {
        for (const auto& [k, v] : t.at("size_probs").items())
            c.size_probs[std::stoi(k)] = v.get<double>();
    }
    c.validate();
    return c;
}

ScheduleSpec schedule_spec_from(const json& cfg, uint64_t seed) {
    const json& r = cfg.at("rollout");
    ScheduleSpec s;
    s.kind = schedule_kind_from(r.at("schedule").get<std::string>());
    s.fixed_size = r.at("fixed_size").get<int>();
    s.cycle = r.at("cycle").get<std::vector<int>>();
    s.phase = r.at("phase").get<int>();
    s.choices = r.at("choices").get<std::vector<int>>();
    s.seed = seed;
    return s;
}

void write_manifest(const std::string& outdir, const Manifest& m) {
    std::filesystem::create_directories(outdir);
    json j;
    j["verb"] = m.verb;
    j["version"] = m.version;
    j["seed"] = m.seed;
    j["config"] = m.config;
    j["completed"] = m.completed;
    j["outputs"] = m.outputs;
    const std::string path = outdir + "/manifest.json";
    std::ofstream out(path);
    if (!out) throw io_error("cannot write manifest: " + path);
    out << j.dump(2) << "\n";
    if (!out) throw io_error("short manifest write: " + path);
}

Manifest read_manifest(const std::string& dir) {
    const std::string path = dir + "/manifest.json";
    std::ifstream in(path);
    if (!in) throw io_error("cannot open manifest: " + path);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw io_error("manifest is not valid JSON: " + path);
    Manifest m;
    m.verb = j.value("verb", "");
    m.version = j.value("version", "");
    m.seed = j.value("seed", 0ULL);
    m.config = j.value("config", json::object());
    m.completed = j.value("completed", false);
    if (j.contains("outputs")) m.outputs = j.at("outputs").get<std::vector<std::string>>();
    return m;
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace flexipatch
