#pragma once

#include <json.hpp>

#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "renderflow/bridge.hpp"
#include "renderflow/clipdata.hpp"
#include "renderflow/losses.hpp"
#include "renderflow/model.hpp"
#include "renderflow/scene.hpp"

namespace rf {

enum class TrainStage { base, keyframe };

inline const char* stage_name(TrainStage s) { return s == TrainStage::base ? "base" : "keyframe"; }

// Which pixel-space terms accompany the latent loss (the middle setting
// exists for the pixel-loss ablation rows).
enum class PixelLossMode { proxy_and_grad, proxy_only, none };

struct TrainConfig {
    TrainStage stage = TrainStage::base;
    double lr = 1e-4;
    int warmup_steps = 100;
    int steps = 3000;
    int batch = 4;
    double lambda_pixel = 1.0;
    PixelLossMode pixel_mode = PixelLossMode::proxy_and_grad;
    BridgeConfig bridge;
    int clip_frames = 5;
    std::uint64_t seed = 0;
    int keyframe_gap = 16;
    int checkpoint_every = 500;
    double ref_cond_prob = 0.5;
    double weight_decay = 0.01;

    void validate() const {
        if (lr <= 0.0) throw std::invalid_argument("train.lr must be > 0");
        if (steps <= 0) throw std::invalid_argument("train.steps must be > 0");
        if (batch < 1) throw std::invalid_argument("train.batch must be >= 1");
        if (clip_frames < 1) throw std::invalid_argument("train.clip_frames must be >= 1");
        if (keyframe_gap < 1) throw std::invalid_argument("train.keyframe_gap must be >= 1");
        if (warmup_steps < 0) throw std::invalid_argument("train.warmup_steps must be >= 0");
        if (lambda_pixel < 0.0) throw std::invalid_argument("train.lambda_pixel must be >= 0");
        bridge.validate();
    }
};

// ---------------------------------------------------------------------------
// Decoupled weight-decay Adam. Weight decay skips rank-1 tensors (biases,
// norms). Deterministic: fixed iteration order, sequential arithmetic.
// ---------------------------------------------------------------------------
template <class T>
class AdamW {
public:
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.01;
    std::int64_t t = 0;

    explicit AdamW(double wd = 0.01) : weight_decay(wd) {}

    void step(ParamStore<T>& params, double lr) {
        ensure_state(params);
        ++t;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        size_t idx = 0;
        for (const auto& e : params.entries()) {
            Tensor<T>& mm = m_[idx];
            Tensor<T>& vv = v_[idx];
            ++idx;
            if (!e.var->needs_grad) continue;
            const bool decay = e.var->val.rank() > 1;
            for (std::int64_t i = 0; i < e.var->val.numel(); ++i) {
                double g = e.var->has_grad() ? static_cast<double>(e.var->grad.v[i]) : 0.0;
                double mi = beta1 * static_cast<double>(mm.v[i]) + (1.0 - beta1) * g;
                double vi = beta2 * static_cast<double>(vv.v[i]) + (1.0 - beta2) * g * g;
                mm.v[i] = static_cast<T>(mi);
                vv.v[i] = static_cast<T>(vi);
                double update = (mi / bc1) / (std::sqrt(vi / bc2) + eps);
                if (decay) update += weight_decay * static_cast<double>(e.var->val.v[i]);
                e.var->val.v[i] -= static_cast<T>(lr * update);
            }
        }
    }

    // moment access for checkpointing (aligned with params.entries() order)
    std::vector<Tensor<T>>& m_state(ParamStore<T>& p) {
        ensure_state(p);
        return m_;
    }
    std::vector<Tensor<T>>& v_state(ParamStore<T>& p) {
        ensure_state(p);
        return v_;
    }

private:
    std::vector<Tensor<T>> m_, v_;
    void ensure_state(const ParamStore<T>& params) {
        if (m_.size() == params.entries().size()) return;
        m_.clear();
        v_.clear();
        for (const auto& e : params.entries()) {
            m_.push_back(Tensor<T>::zeros(e.var->val.shape));
            v_.push_back(Tensor<T>::zeros(e.var->val.shape));
        }
    }
};

// ---------------------------------------------------------------------------
// Config <-> JSON
// ---------------------------------------------------------------------------

inline nlohmann::json net_config_to_json(const NetConfig& c) {
    return {{"patch", c.patch},
            {"dim", c.dim},
            {"depth", c.depth},
            {"heads", c.heads},
            {"ffn_mult", c.ffn_mult},
            {"lora_rank", c.lora_rank},
            {"keyframe_variant",
             c.keyframe_variant == KeyframeVariant::reused_query ? "reused_query" : "dedicated_query"},
            {"keyframe_ffn_lora", c.keyframe_ffn_lora},
            {"env_patch", c.env_patch},
            {"prompt_tokens", c.prompt_tokens}};
}

inline NetConfig net_config_from_json(const nlohmann::json& j) {
    NetConfig c;
    c.patch = j.at("patch");
    c.dim = j.at("dim");
    c.depth = j.at("depth");
    c.heads = j.at("heads");
    c.ffn_mult = j.at("ffn_mult");
    c.lora_rank = j.at("lora_rank");
    c.keyframe_variant = j.at("keyframe_variant") == "reused_query" ? KeyframeVariant::reused_query
                                                                    : KeyframeVariant::dedicated_query;
    c.keyframe_ffn_lora = j.at("keyframe_ffn_lora");
    c.env_patch = j.at("env_patch");
    c.prompt_tokens = j.at("prompt_tokens");
    return c;
}

inline nlohmann::json bridge_config_to_json(const BridgeConfig& b) {
    return {{"sigma", b.sigma},
            {"schedule", b.schedule == TimestepSchedule::uniform ? "uniform" : "discrete4"},
            {"t_grid", b.t_grid},
            {"t_max", b.t_max}};
}

inline BridgeConfig bridge_config_from_json(const nlohmann::json& j) {
    BridgeConfig b;
    b.sigma = j.at("sigma");
    b.schedule = j.at("schedule") == "uniform" ? TimestepSchedule::uniform : TimestepSchedule::discrete4;
    b.t_grid = j.at("t_grid").get<std::vector<double>>();
    b.t_max = j.at("t_max");
    return b;
}

inline const char* pixel_mode_name(PixelLossMode m) {
    switch (m) {
        case PixelLossMode::proxy_and_grad: return "proxy_and_grad";
        case PixelLossMode::proxy_only: return "proxy_only";
        case PixelLossMode::none: return "none";
    }
    return "?";
}

inline PixelLossMode pixel_mode_from_name(const std::string& s) {
    if (s == "proxy_and_grad") return PixelLossMode::proxy_and_grad;
    if (s == "proxy_only") return PixelLossMode::proxy_only;
    if (s == "none") return PixelLossMode::none;
    throw std::invalid_argument("unknown pixel loss mode: " + s);
}

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
    return {{"stage", stage_name(c.stage)},
            {"lr", c.lr},
            {"warmup_steps", c.warmup_steps},
            {"steps", c.steps},
            {"batch", c.batch},
            {"lambda_pixel", c.lambda_pixel},
            {"pixel_mode", pixel_mode_name(c.pixel_mode)},
            {"bridge", bridge_config_to_json(c.bridge)},
            {"clip_frames", c.clip_frames},
            {"seed", c.seed},
            {"keyframe_gap", c.keyframe_gap},
            {"checkpoint_every", c.checkpoint_every},
            {"ref_cond_prob", c.ref_cond_prob},
            {"weight_decay", c.weight_decay}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.stage = j.at("stage") == "keyframe" ? TrainStage::keyframe : TrainStage::base;
    c.lr = j.at("lr");
    c.warmup_steps = j.at("warmup_steps");
    c.steps = j.at("steps");
    c.batch = j.at("batch");
    c.lambda_pixel = j.at("lambda_pixel");
    c.pixel_mode = pixel_mode_from_name(j.value("pixel_mode", "proxy_and_grad"));
    c.bridge = bridge_config_from_json(j.at("bridge"));
    c.clip_frames = j.at("clip_frames");
    c.seed = j.at("seed");
    c.keyframe_gap = j.at("keyframe_gap");
    c.checkpoint_every = j.at("checkpoint_every");
    c.ref_cond_prob = j.at("ref_cond_prob");
    c.weight_decay = j.at("weight_decay");
    return c;
}

// ---------------------------------------------------------------------------
// Checkpoint file: magic "RFCK", u32 version=1, u64 header bytes, UTF-8 JSON
// header (configs, stage, step, rng state, parameter manifest with offsets),
// little-endian float32 parameter payload, then optimizer m/v payloads in the
// same manifest order.
// ---------------------------------------------------------------------------

struct CheckpointHeader {
    NetConfig net;
    TrainConfig train;
    std::string stage;  // base | keyframe | inverse
    std::int64_t step = 0;
    std::string rng_state;
    std::string forward_hash;  // inverse checkpoints: hash of the frozen forward ckpt
    bool has_optimizer = false;
    std::int64_t adam_t = 0;
    struct Item {
        std::string name;
        std::string group;
        std::vector<int> shape;
        std::int64_t offset;  // float index into the parameter payload
    };
    std::vector<Item> manifest;
};

namespace detail {

inline void ck_put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}
inline std::uint32_t ck_get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw corrupt_file_error("checkpoint: truncated");
    return b[0] | (b[1] << 8) | (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
}
inline void ck_put_u64(std::ostream& os, std::uint64_t v) {
    ck_put_u32(os, static_cast<std::uint32_t>(v & 0xffffffffu));
    ck_put_u32(os, static_cast<std::uint32_t>(v >> 32));
}
inline std::uint64_t ck_get_u64(std::istream& is) {
    std::uint64_t lo = ck_get_u32(is);
    std::uint64_t hi = ck_get_u32(is);
    return lo | (hi << 32);
}

template <class T>
void write_f32_block(std::ostream& os, const Tensor<T>& t) {
    std::vector<float> buf(t.v.begin(), t.v.end());
    os.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

template <class T>
void read_f32_block(std::istream& is, Tensor<T>& t) {
    std::vector<float> buf(t.v.size());
    is.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!is) throw corrupt_file_error("checkpoint: truncated payload");
    for (size_t i = 0; i < buf.size(); ++i) t.v[i] = static_cast<T>(buf[i]);
}

}  // namespace detail

// Save the model (optionally restricted to a group subset) plus optimizer.
template <class T>
void save_checkpoint(const std::string& path, const RenderFlowNet<T>& net, const TrainConfig& tc,
                     const std::string& stage, std::int64_t step, AdamW<T>* opt,
                     const std::string& rng_state, const std::string& forward_hash = "",
                     const std::vector<ParamGroup>* only_groups = nullptr) {
    nlohmann::json h;
    h["format"] = "RFCK";
    h["net"] = net_config_to_json(net.cfg);
    h["train"] = train_config_to_json(tc);
    h["stage"] = stage;
    h["step"] = step;
    h["rng_state"] = rng_state;
    h["forward_hash"] = forward_hash;
    h["has_optimizer"] = opt != nullptr;
    h["adam_t"] = opt ? opt->t : 0;
    nlohmann::json manifest = nlohmann::json::array();

    auto keep = [&](ParamGroup g) {
        if (!only_groups) return true;
        for (auto x : *only_groups)
            if (x == g) return true;
        return false;
    };

    std::int64_t offset = 0;
    for (const auto& e : net.params.entries()) {
        if (!keep(e.group)) continue;
        manifest.push_back({{"name", e.name},
                            {"group", param_group_name(e.group)},
                            {"shape", e.var->val.shape},
                            {"offset", offset}});
        offset += e.var->val.numel();
    }
    h["manifest"] = manifest;
    std::string header = h.dump();

    std::filesystem::create_directories(std::filesystem::path(path).parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
    os.write("RFCK", 4);
    detail::ck_put_u32(os, 1);
    detail::ck_put_u64(os, header.size());
    os.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& e : net.params.entries())
        if (keep(e.group)) detail::write_f32_block(os, e.var->val);
    if (opt) {
        auto& ms = opt->m_state(const_cast<RenderFlowNet<T>&>(net).params);
        auto& vs = opt->v_state(const_cast<RenderFlowNet<T>&>(net).params);
        size_t idx = 0;
        for (const auto& e : net.params.entries()) {
            if (keep(e.group)) detail::write_f32_block(os, ms[idx]);
            ++idx;
        }
        idx = 0;
        for (const auto& e : net.params.entries()) {
            if (keep(e.group)) detail::write_f32_block(os, vs[idx]);
            ++idx;
        }
    }
    if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

inline CheckpointHeader read_checkpoint_header(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "RFCK", 4) != 0)
        throw corrupt_file_error("checkpoint: bad magic");
    std::uint32_t version = detail::ck_get_u32(is);
    if (version != 1) throw corrupt_file_error("checkpoint: unsupported version");
    std::uint64_t hlen = detail::ck_get_u64(is);
    std::string text(hlen, '\0');
    is.read(text.data(), static_cast<std::streamsize>(hlen));
    if (!is) throw corrupt_file_error("checkpoint: truncated header");
    nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded()) throw corrupt_file_error("checkpoint: bad JSON header");

    CheckpointHeader h;
    h.net = net_config_from_json(j.at("net"));
    h.train = train_config_from_json(j.at("train"));
    h.stage = j.at("stage");
    h.step = j.at("step");
    h.rng_state = j.at("rng_state");
    h.forward_hash = j.value("forward_hash", "");
    h.has_optimizer = j.at("has_optimizer");
    h.adam_t = j.at("adam_t");
    for (const auto& m : j.at("manifest")) {
        CheckpointHeader::Item it;
        it.name = m.at("name");
        it.group = m.at("group");
        it.shape = m.at("shape").get<std::vector<int>>();
        it.offset = m.at("offset");
        h.manifest.push_back(std::move(it));
    }
    return h;
}

inline CheckpointHeader peek_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    return read_checkpoint_header(is);
}

// Load parameters (and optionally optimizer state) into an existing net whose
// config matches the header. Returns the header.
template <class T>
CheckpointHeader load_checkpoint_into(const std::string& path, RenderFlowNet<T>& net,
                                      AdamW<T>* opt = nullptr) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    CheckpointHeader h = read_checkpoint_header(is);

    std::int64_t total = 0;
    for (const auto& it : h.manifest) {
        const Var<T>& v = net.params.get(it.name);
        if (v->val.shape != it.shape)
            throw corrupt_file_error("checkpoint: shape mismatch for " + it.name);
        total += v->val.numel();
    }
    (void)total;
    for (const auto& it : h.manifest) detail::read_f32_block(is, net.params.get(it.name)->val);
    if (opt) {
        if (!h.has_optimizer) throw corrupt_file_error("checkpoint: no optimizer state stored");
        auto& ms = opt->m_state(net.params);
        auto& vs = opt->v_state(net.params);
        // manifest order == entries order filtered; map names to entry indices
        std::unordered_map<std::string, size_t> idx;
        for (size_t i = 0; i < net.params.entries().size(); ++i)
            idx[net.params.entries()[i].name] = i;
        for (const auto& it : h.manifest) detail::read_f32_block(is, ms[idx.at(it.name)]);
        for (const auto& it : h.manifest) detail::read_f32_block(is, vs[idx.at(it.name)]);
        opt->t = h.adam_t;
    }
    return h;
}

// Load only the parameters of the listed groups (e.g. a shared stage-1 base
// into nets whose adapter layouts differ). Offsets in the manifest allow
// random access into the payload.
template <class T>
CheckpointHeader load_checkpoint_groups(const std::string& path, RenderFlowNet<T>& net,
                                        const std::vector<ParamGroup>& groups) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    CheckpointHeader h = read_checkpoint_header(is);
    std::streampos payload_start = is.tellg();
    for (const auto& it : h.manifest) {
        bool wanted = false;
        for (auto g : groups)
            if (param_group_name(g) == it.group) wanted = true;
        if (!wanted) continue;
        const Var<T>& v = net.params.get(it.name);
        if (v->val.shape != it.shape)
            throw corrupt_file_error("checkpoint: shape mismatch for " + it.name);
        is.seekg(payload_start + static_cast<std::streamoff>(it.offset * 4));
        detail::read_f32_block(is, v->val);
    }
    return h;
}

// Build a fresh net from a checkpoint (params only).
template <class T>
std::unique_ptr<RenderFlowNet<T>> net_from_checkpoint(const std::string& path,
                                                      CheckpointHeader* out_header = nullptr) {
    CheckpointHeader h = peek_checkpoint(path);
    auto net = std::make_unique<RenderFlowNet<T>>(h.net, /*init_seed=*/0);
    CheckpointHeader full = load_checkpoint_into(path, *net);
    if (out_header) *out_header = full;
    return net;
}

inline std::string checkpoint_hash(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint_hash: cannot open " + path);
    std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return hex64(fnv1a64(bytes.data(), bytes.size()));
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct StepLog {
    std::int64_t step;
    double loss_latent;
    double loss_pixel;
    double lr;
    double wallclock;
};

template <class T>
struct TrainOutcome {
    std::vector<double> loss_history;  // total loss per step
    std::string final_checkpoint;
    std::int64_t steps_run = 0;
};

namespace detail {

// One sampled training clip (all tensors in model layout).
template <class T>
struct SampledClip {
    Tensor<T> z0, z1, attrs, env, ref, mask;
    std::vector<int> frame_indices;
    Tensor<T> keyframes;
    std::vector<int> keyframe_indices;
    double t = 0.0;
    Tensor<T> zt;
};

// Draw order is fixed so interrupted + resumed runs replay identically.
template <class T>
SampledClip<T> sample_clip(const Dataset& ds, const TrainConfig& tc, Rng& rng, bool keyframes_on) {
    const auto& pool = ds.train;
    if (pool.empty()) throw std::invalid_argument("training dataset is empty");
    const Sequence& seq = pool[rng.randint(pool.size())];
    const int total = static_cast<int>(seq.frames.size());
    const int fclip = std::min(tc.clip_frames, total);
    const int max_start = total - fclip;
    const int start = max_start > 0 ? static_cast<int>(rng.randint(static_cast<std::uint64_t>(max_start) + 1)) : 0;

    SampledClip<T> s;
    s.z0 = clip_albedo<T>(seq, start, fclip);
    s.z1 = clip_reference<T>(seq, start, fclip);
    s.attrs = clip_attributes<T>(seq, start, fclip);
    s.env = clip_envmaps<T>(seq, start, fclip);
    for (int i = 0; i < fclip; ++i) s.frame_indices.push_back(start + i);

    s.t = sample_timestep(tc.bridge, rng);
    Tensor<T> eps(s.z0.shape);
    fill_normal(eps, rng);
    s.zt = interpolate(s.z0, s.z1, s.t, tc.bridge.sigma, eps, tc.bridge.t_max);

    const int h = s.z0.dim(1), w = s.z0.dim(2);
    s.ref = Tensor<T>::zeros({fclip, h, w, 3});
    s.mask = Tensor<T>::zeros({fclip, h, w, 1});
    if (rng.bernoulli(tc.ref_cond_prob)) {
        // condition on the ground-truth first frame of the clip
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                for (int c = 0; c < 3; ++c)
                    s.ref.v[(static_cast<std::int64_t>(y) * w + x) * 3 + c] =
                        s.z1.v[(static_cast<std::int64_t>(y) * w + x) * 3 + c];
                s.mask.v[static_cast<std::int64_t>(y) * w + x] = T(1);
            }
    }

    if (keyframes_on) {
        s.keyframe_indices = keyframe_indices_for(total, tc.keyframe_gap);
        s.keyframes = gather_keyframes<T>(seq, s.keyframe_indices);
    }
    return s;
}

}  // namespace detail

// Core stage runner. stage-1 trains {base, envmap}; stage-2 freezes them and
// trains {keyframe} with ground-truth keyframes at the configured gap.
template <class T>
TrainOutcome<T> train_stage(RenderFlowNet<T>& net, const Dataset& ds, const TrainConfig& tc,
                            const std::string& run_dir, AdamW<T>* resume_opt = nullptr,
                            Rng* resume_rng = nullptr, std::int64_t start_step = 0) {
    tc.validate();
    if (ds.train.empty()) throw std::invalid_argument("train_stage: empty dataset");
    const bool kf_stage = tc.stage == TrainStage::keyframe;

    if (kf_stage)
        net.params.set_trainable({ParamGroup::keyframe_adapter});
    else
        net.params.set_trainable({ParamGroup::base, ParamGroup::envmap_adapter});

    AdamW<T> local_opt(tc.weight_decay);
    AdamW<T>& opt = resume_opt ? *resume_opt : local_opt;
    opt.weight_decay = tc.weight_decay;
    Rng local_rng(Rng::derive(tc.seed, kf_stage ? 202 : 101));
    Rng& rng = resume_rng ? *resume_rng : local_rng;

    std::ofstream log;
    if (!run_dir.empty()) {
        std::filesystem::create_directories(run_dir);
        std::filesystem::create_directories(std::filesystem::path(run_dir) / "ckpt");
        log.open(std::filesystem::path(run_dir) / "log.jsonl", std::ios::app);
    }

    TrainOutcome<T> out;
    auto t_begin = std::chrono::steady_clock::now();
    for (std::int64_t step = start_step; step < tc.steps; ++step) {
        double lr = tc.lr;
        if (tc.warmup_steps > 0 && step < tc.warmup_steps)
            lr = tc.lr * static_cast<double>(step + 1) / tc.warmup_steps;

        Var<T> latent_sum, pixel_sum;
        for (int b = 0; b < tc.batch; ++b) {
            auto s = detail::sample_clip<T>(ds, tc, rng, kf_stage);
            typename RenderFlowNet<T>::ClipInputs in;
            in.zt = s.zt;
            in.ref = s.ref;
            in.mask = s.mask;
            in.attrs = s.attrs;
            in.env = s.env;
            in.frame_indices = s.frame_indices;
            in.t = s.t;
            in.use_keyframes = kf_stage;
            in.keyframes = s.keyframes;
            in.keyframe_indices = s.keyframe_indices;

            Var<T> v_pred = net.forward(in);
            Var<T> latent = loss_latent(v_pred, s.z1, s.zt, s.t, tc.bridge.t_max);
            latent_sum = latent_sum ? add(latent_sum, latent) : latent;
            if (tc.lambda_pixel > 0.0 && tc.pixel_mode != PixelLossMode::none) {
                Var<T> i_pred = add(scale(v_pred, static_cast<T>(1.0 - s.t)), constant(s.zt));
                Var<T> i_gt = constant(s.z1);
                Var<T> pixel = loss_perceptual_proxy(i_pred, i_gt);
                if (tc.pixel_mode == PixelLossMode::proxy_and_grad)
                    pixel = add(pixel, loss_gradient(i_pred, i_gt));
                pixel_sum = pixel_sum ? add(pixel_sum, pixel) : pixel;
            }
        }
        Var<T> loss = scale(latent_sum, T(1.0 / tc.batch));
        double latent_val = static_cast<double>(loss->val.v[0]);
        double pixel_val = 0.0;
        if (pixel_sum) {
            Var<T> pixel_mean = scale(pixel_sum, T(1.0 / tc.batch));
            pixel_val = static_cast<double>(pixel_mean->val.v[0]);
            loss = add(loss, scale(pixel_mean, static_cast<T>(tc.lambda_pixel)));
        }
        double total_val = static_cast<double>(loss->val.v[0]);
        if (!std::isfinite(total_val))
            throw std::runtime_error("training diverged: non-finite loss at step " +
                                     std::to_string(step) + " (latent=" + std::to_string(latent_val) +
                                     ", pixel=" + std::to_string(pixel_val) + ")");

        net.params.zero_grads();
        backward(loss);
        opt.step(net.params, lr);
        out.loss_history.push_back(total_val);

        double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_begin).count();
        if (log.is_open()) {
            nlohmann::json line{{"step", step},
                                {"loss_latent", latent_val},
                                {"loss_pixel", pixel_val},
                                {"lr", lr},
                                {"wallclock", wall}};
            log << line.dump() << "\n";
        }
        if (!run_dir.empty() && tc.checkpoint_every > 0 && (step + 1) % tc.checkpoint_every == 0 &&
            step + 1 < tc.steps) {
            char name[64];
            std::snprintf(name, sizeof(name), "step_%06lld.rfck", static_cast<long long>(step + 1));
            save_checkpoint((std::filesystem::path(run_dir) / "ckpt" / name).string(), net, tc,
                            stage_name(tc.stage), step + 1, &opt, rng.state());
        }
    }
    out.steps_run = tc.steps - start_step;
    if (!run_dir.empty()) {
        out.final_checkpoint = (std::filesystem::path(run_dir) / "ckpt" / "final.rfck").string();
        save_checkpoint(out.final_checkpoint, net, tc, stage_name(tc.stage), tc.steps, &opt,
                        rng.state());
    }
    return out;
}

template <class T>
TrainOutcome<T> train_stage1(RenderFlowNet<T>& net, const Dataset& ds, TrainConfig tc,
                             const std::string& run_dir) {
    tc.stage = TrainStage::base;
    return train_stage(net, ds, tc, run_dir);
}

template <class T>
TrainOutcome<T> train_stage2(RenderFlowNet<T>& net, const Dataset& ds, TrainConfig tc,
                             const std::string& run_dir) {
    tc.stage = TrainStage::keyframe;
    return train_stage(net, ds, tc, run_dir);
}

// Resume a run from a checkpoint produced by train_stage. The replayed
// trajectory is bitwise identical to the uninterrupted one.
template <class T>
TrainOutcome<T> resume_stage(RenderFlowNet<T>& net, const Dataset& ds, const std::string& ckpt_path,
                             const std::string& run_dir) {
    AdamW<T> opt;
    CheckpointHeader h = load_checkpoint_into(ckpt_path, net, &opt);
    Rng rng;
    rng.set_state(h.rng_state);
    TrainConfig tc = h.train;
    return train_stage(net, ds, tc, run_dir, &opt, &rng, h.step);
}

}  // namespace rf
