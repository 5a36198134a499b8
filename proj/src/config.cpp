#include "renderflow/config.hpp"

#include <fstream>
#include <stdexcept>

namespace rf {

using json = nlohmann::json;

json default_config() {
    json j;
    j["dataset"] = {{"seed", 0},        {"sequences", 8},    {"frames", 5},
                    {"res", 64},        {"envmap_h", 16},    {"envmap_w", 32},
                    {"orbit_radius", 3.0}, {"orbit_arc_deg", 60.0}, {"n_objects", 0},
                    {"d_max", 8.0}};
    j["net"] = {{"patch", 8},
                {"dim", 128},
                {"depth", 6},
                {"heads", 4},
                {"ffn_mult", 4.0},
                {"lora_rank", 8},
                {"keyframe_variant", "dedicated_query"},
                {"keyframe_ffn_lora", true},
                {"prompt_tokens", 4}};
    j["bridge"] = {{"sigma", 0.005},
                   {"schedule", "discrete4"},
                   {"t_grid", {0.0, 0.25, 0.5, 0.75}},
                   {"t_max", 0.9999}};
    j["train"] = {{"stage", "base"},     {"lr", 1e-4},
                  {"warmup_steps", 100}, {"steps", 3000},
                  {"batch", 4},          {"lambda_pixel", 1.0},
                  {"clip_frames", 5},    {"seed", 0},
                  {"keyframe_gap", 16},  {"checkpoint_every", 500},
                  {"ref_cond_prob", 0.5},{"weight_decay", 0.01}};
    j["infer"] = {{"steps", 1},        {"mode", "ode"},      {"sde_sigma", 0.005},
                  {"use_keyframes", false}, {"keyframe_gap", 16}, {"chunk_frames", 5},
                  {"overlap", 1},      {"rng_seed", 0}};
    j["inverse"] = {{"lora_rank", 8},
                    {"lr", 1e-4},
                    {"steps", 1000},
                    {"batch", 4},
                    {"seed", 0},
                    {"lambda_albedo", 1.0},
                    {"ssi_lambda", 0.5},
                    {"weights",
                     {{"albedo", 0.4}, {"normal", 0.3}, {"depth", 0.15}, {"material", 0.15}}}};
    j["eval"] = {{"split", "val"}, {"max_sequences", 0}};
    return j;
}

namespace {

void merge_checked(json& base, const json& user, const std::string& prefix) {
    if (!user.is_object())
        throw std::invalid_argument("config: expected an object at '" +
                                    (prefix.empty() ? "<root>" : prefix) + "'");
    for (auto it = user.begin(); it != user.end(); ++it) {
        std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!base.contains(it.key()))
            throw std::invalid_argument("config: unknown key '" + path + "'");
        json& slot = base[it.key()];
        if (slot.is_object()) {
            merge_checked(slot, it.value(), path);
        } else {
            const json& v = it.value();
            bool num_ok = slot.is_number() && v.is_number();
            if (!num_ok && slot.type() != v.type())
                throw std::invalid_argument("config: type mismatch at '" + path + "' (expected " +
                                            std::string(slot.type_name()) + ")");
            slot = v;
        }
    }
}

json parse_scalar(const std::string& text) {
    json v = json::parse(text, nullptr, false);
    if (v.is_discarded()) return json(text);  // bare string
    return v;
}

void apply_override(json& tree, const std::string& setting) {
    auto eq = setting.find('=');
    if (eq == std::string::npos)
        throw std::invalid_argument("config: override '" + setting + "' is not key=value");
    std::string path = setting.substr(0, eq);
    json value = parse_scalar(setting.substr(eq + 1));

    json* node = &tree;
    size_t start = 0;
    std::vector<std::string> parts;
    while (true) {
        size_t dotp = path.find('.', start);
        parts.push_back(path.substr(start, dotp == std::string::npos ? dotp : dotp - start));
        if (dotp == std::string::npos) break;
        start = dotp + 1;
    }
    for (size_t i = 0; i + 1 < parts.size(); ++i) {
        if (!node->contains(parts[i]) || !(*node)[parts[i]].is_object())
            throw std::invalid_argument("config: unknown key '" + path + "'");
        node = &(*node)[parts[i]];
    }
    const std::string& leafname = parts.back();
    if (!node->contains(leafname)) throw std::invalid_argument("config: unknown key '" + path + "'");
    json& slot = (*node)[leafname];
    bool num_ok = slot.is_number() && value.is_number();
    if (!num_ok && slot.type() != value.type())
        throw std::invalid_argument("config: type mismatch at '" + path + "'");
    slot = value;
}

void require(bool cond, const std::string& path, const std::string& what) {
    if (!cond) throw std::invalid_argument("config: invariant violation at '" + path + "': " + what);
}

}  // namespace

void validate_config(const json& j) {
    const json& ds = j.at("dataset");
    require(ds.at("frames").get<int>() >= 1, "dataset.frames", "must be >= 1");
    require(ds.at("res").get<int>() >= 16, "dataset.res", "must be >= 16");
    require(ds.at("envmap_h").get<int>() >= 4, "dataset.envmap_h", "must be >= 4");
    require(ds.at("envmap_w").get<int>() >= 8, "dataset.envmap_w", "must be >= 8");
    int n_obj = ds.at("n_objects").get<int>();
    require(n_obj == 0 || (n_obj >= 1 && n_obj <= 8), "dataset.n_objects", "must be 0 (auto) or in [1,8]");
    require(ds.at("d_max").get<double>() > 0, "dataset.d_max", "must be > 0");

    const json& net = j.at("net");
    int patch = net.at("patch").get<int>();
    int dim = net.at("dim").get<int>();
    int heads = net.at("heads").get<int>();
    require(patch >= 1, "net.patch", "must be >= 1");
    require(dim >= 1 && heads >= 1, "net.dim", "dim and heads must be >= 1");
    require(dim % heads == 0, "net.dim", "must be divisible by net.heads");
    require((dim / heads) % 2 == 0, "net.heads", "head_dim must be even for RoPE pairs");
    require(ds.at("res").get<int>() % patch == 0, "net.patch", "must divide dataset.res");
    require(net.at("depth").get<int>() >= 1, "net.depth", "must be >= 1");
    require(net.at("lora_rank").get<int>() >= 1, "net.lora_rank", "must be >= 1");
    std::string kv = net.at("keyframe_variant").get<std::string>();
    require(kv == "reused_query" || kv == "dedicated_query", "net.keyframe_variant",
            "must be reused_query or dedicated_query");
    require(net.at("prompt_tokens").get<int>() >= 1, "net.prompt_tokens", "must be >= 1");

    const json& br = j.at("bridge");
    require(br.at("sigma").get<double>() >= 0.0, "bridge.sigma", "must be >= 0");
    std::string sched = br.at("schedule").get<std::string>();
    require(sched == "uniform" || sched == "discrete4", "bridge.schedule",
            "must be uniform or discrete4");
    double t_max = br.at("t_max").get<double>();
    require(t_max > 0.0 && t_max < 1.0, "bridge.t_max", "must lie in (0, 1)");
    const json& grid = br.at("t_grid");
    require(grid.is_array() && !grid.empty(), "bridge.t_grid", "must be a non-empty array");
    double prev = -1.0;
    for (const auto& g : grid) {
        double t = g.get<double>();
        require(t >= 0.0 && t <= t_max, "bridge.t_grid", "values must lie in [0, t_max]");
        require(t > prev, "bridge.t_grid", "must be strictly increasing");
        prev = t;
    }

    const json& tr = j.at("train");
    std::string stage = tr.at("stage").get<std::string>();
    require(stage == "base" || stage == "keyframe", "train.stage", "must be base or keyframe");
    require(tr.at("lr").get<double>() > 0.0, "train.lr", "must be > 0");
    require(tr.at("steps").get<int>() > 0, "train.steps", "must be > 0");
    require(tr.at("warmup_steps").get<int>() >= 0, "train.warmup_steps", "must be >= 0");
    require(tr.at("batch").get<int>() >= 1, "train.batch", "must be >= 1");
    require(tr.at("clip_frames").get<int>() >= 1, "train.clip_frames", "must be >= 1");
    require(tr.at("keyframe_gap").get<int>() >= 1, "train.keyframe_gap", "must be >= 1");
    require(tr.at("lambda_pixel").get<double>() >= 0.0, "train.lambda_pixel", "must be >= 0");
    double rp = tr.at("ref_cond_prob").get<double>();
    require(rp >= 0.0 && rp <= 1.0, "train.ref_cond_prob", "must lie in [0, 1]");

    const json& inf = j.at("infer");
    int steps = inf.at("steps").get<int>();
    require(steps == 1 || steps == 2 || steps == 4, "infer.steps", "must be one of {1, 2, 4}");
    std::string mode = inf.at("mode").get<std::string>();
    require(mode == "ode" || mode == "sde", "infer.mode", "must be ode or sde");
    int chunk = inf.at("chunk_frames").get<int>();
    int overlap = inf.at("overlap").get<int>();
    require(chunk >= 1, "infer.chunk_frames", "must be >= 1");
    require(overlap >= 1 && overlap < chunk, "infer.overlap", "must satisfy 1 <= overlap < chunk_frames");
    require(inf.at("keyframe_gap").get<int>() >= 1, "infer.keyframe_gap", "must be >= 1");

    const json& inv = j.at("inverse");
    require(inv.at("lora_rank").get<int>() >= 1, "inverse.lora_rank", "must be >= 1");
    require(inv.at("lr").get<double>() > 0.0, "inverse.lr", "must be > 0");
    require(inv.at("steps").get<int>() > 0, "inverse.steps", "must be > 0");
    require(inv.at("batch").get<int>() >= 1, "inverse.batch", "must be >= 1");
    double wsum = 0.0;
    for (const auto& [k, v] : inv.at("weights").items()) {
        require(v.get<double>() >= 0.0, "inverse.weights." + k, "must be >= 0");
        wsum += v.get<double>();
    }
    require(wsum > 0.0, "inverse.weights", "must not all be zero");
}

RunConfig load_config_json(const json& user, const std::vector<std::string>& overrides) {
    json tree = default_config();
    if (!user.is_null()) merge_checked(tree, user, "");
    for (const auto& s : overrides) apply_override(tree, s);
    validate_config(tree);
    return RunConfig{tree};
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
    json user;
    if (!path.empty()) {
        std::ifstream is(path);
        if (!is) throw std::runtime_error("config: cannot open " + path);
        std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
        if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
            user = json::object();  // empty file -> all defaults
        } else {
            user = json::parse(text, nullptr, false);
            if (user.is_discarded()) throw std::invalid_argument("config: JSON parse error in " + path);
        }
    }
    return load_config_json(user.is_null() ? json::object() : user, overrides);
}

}  // namespace rf
