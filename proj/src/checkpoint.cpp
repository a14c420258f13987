#include "flexipatch/checkpoint.hpp"

#include <fstream>

#include "json.hpp"

namespace flexipatch {

using nlohmann::json;

namespace {

json config_to_json(const ModelConfig& c) {
    return json{{"embed_dim", c.embed_dim},
                {"mlp_dim", c.mlp_dim},
                {"n_heads", c.n_heads},
                {"n_blocks", c.n_blocks},
                {"attention", attention_kind_name(c.attention)},
                {"tokenizer", tokenizer_kind_name(c.tokenizer)},
                {"size_set", c.size_set},
                {"k_base", c.k_base},
                {"fixed_size", c.fixed_size},
                {"context", c.context},
                {"channels", c.channels},
                {"pad_mode", pad_mode_name(c.pad_mode)},
                {"ln_eps", c.ln_eps}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.embed_dim = j.at("embed_dim").get<int>();
    c.mlp_dim = j.at("mlp_dim").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.n_blocks = j.at("n_blocks").get<int>();
    const std::string attn = j.at("attention").get<std::string>();
    require(attn == "full" || attn == "axial", "checkpoint: unknown attention kind " + attn);
    c.attention = attn == "full" ? AttentionKind::full : AttentionKind::axial;
    const std::string tok = j.at("tokenizer").get<std::string>();
    if (tok == "ckm")
        c.tokenizer = TokenizerKind::ckm;
    else if (tok == "csm")
        c.tokenizer = TokenizerKind::csm;
    else if (tok == "fixed")
        c.tokenizer = TokenizerKind::fixed;
    else
        throw config_error("checkpoint: unknown tokenizer kind " + tok);
    c.size_set = j.at("size_set").get<std::vector<int>>();
    c.k_base = j.at("k_base").get<int>();
    c.fixed_size = j.at("fixed_size").get<int>();
    c.context = j.at("context").get<int>();
    c.channels = j.at("channels").get<int>();
    const std::string pm = j.at("pad_mode").get<std::string>();
    if (pm == "zero")
        c.pad_mode = PadMode::zero;
    else if (pm == "periodic")
        c.pad_mode = PadMode::periodic;
    else if (pm == "learned")
        c.pad_mode = PadMode::learned;
    else
        throw config_error("checkpoint: unknown pad mode " + pm);
    c.ln_eps = j.at("ln_eps").get<double>();
    return c;
}

}  // namespace

void save_checkpoint(const Surrogate<float>& model, const std::string& path) {
    const ParameterSet<float>& params = model.params();
    json header;
    header["format"] = "flexipatch-checkpoint";
    header["version"] = 1;
    header["dtype"] = "float32";
    header["config"] = config_to_json(model.config());
    header["norm"] = {{"mean", model.norm_mean()}, {"std", model.norm_std()}};
    json plist = json::array();
    long long offset = 0;
    for (size_t i = 0; i < params.size(); ++i) {
        const Tensor<float>& v = params.value(static_cast<int>(i));
        plist.push_back({{"name", params.name(static_cast<int>(i))},
                         {"shape", v.shape},
                         {"offset", offset},
                         {"bytes", v.numel() * static_cast<long long>(sizeof(float))}});
        offset += v.numel() * static_cast<long long>(sizeof(float));
    }
    header["params"] = plist;
    header["total_bytes"] = offset;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open checkpoint for writing: " + path);
    out << header.dump() << "\n";
    for (size_t i = 0; i < params.size(); ++i) {
        const Tensor<float>& v = params.value(static_cast<int>(i));
        out.write(reinterpret_cast<const char*>(v.data.data()),
                  static_cast<std::streamsize>(v.data.size() * sizeof(float)));
    }
    if (!out) throw io_error("short checkpoint write: " + path);
}

Surrogate<float> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open checkpoint: " + path);
    std::string line;
    if (!std::getline(in, line)) throw io_error("missing checkpoint header: " + path);
    json header = json::parse(line, nullptr, false);
    if (header.is_discarded() || header.value("format", "") != "flexipatch-checkpoint")
        throw io_error("not a flexipatch checkpoint: " + path);
    require(header.contains("version"), "checkpoint is missing the mandatory version field");
    const int version = header.at("version").get<int>();
    require(version == 1, "unsupported checkpoint version " + std::to_string(version));
    require(header.value("dtype", "") == "float32", "unsupported checkpoint dtype");

    Surrogate<float> model(config_from_json(header.at("config")), /*init_seed=*/0);
    model.set_normalization(header.at("norm").at("mean").get<std::vector<double>>(),
                            header.at("norm").at("std").get<std::vector<double>>());
    ParameterSet<float>& params = model.params();
    const json& plist = header.at("params");
    require(plist.size() == params.size(), "checkpoint parameter count mismatch");
    for (size_t i = 0; i < plist.size(); ++i) {
        const std::string name = plist[i].at("name").get<std::string>();
        const auto shape = plist[i].at("shape").get<std::vector<int>>();
        Tensor<float>& dst = params.value(name);
        require(dst.shape == shape, "checkpoint shape mismatch for " + name);
        in.read(reinterpret_cast<char*>(dst.data.data()),
                static_cast<std::streamsize>(dst.data.size() * sizeof(float)));
        if (!in) throw io_error("truncated checkpoint body: " + path);
    }
    return model;
}

}  // namespace flexipatch
