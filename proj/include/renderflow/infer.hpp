#pragma once

#include <json.hpp>

#include <chrono>
#include <functional>
#include <string>
#include <vector>

#include "renderflow/bridge.hpp"
#include "renderflow/clipdata.hpp"
#include "renderflow/model.hpp"
#include "renderflow/scene.hpp"

namespace rf {

enum class InferMode { ode, sde };

struct InferConfig {
    int steps = 1;  // 1 | 2 | 4
    InferMode mode = InferMode::ode;
    double sde_sigma = 0.005;
    bool use_keyframes = false;
    int keyframe_gap = 16;
    int chunk_frames = 5;
    int overlap = 1;
    bool progressive_ref = true;  // false: chunks rendered independently
    std::uint64_t rng_seed = 0;
    BridgeConfig bridge;

    void validate() const {
        if (steps != 1 && steps != 2 && steps != 4)
            throw std::invalid_argument("infer.steps must be one of {1, 2, 4}");
        if (chunk_frames < 1) throw std::invalid_argument("infer.chunk_frames must be >= 1");
        if (overlap < 1 || overlap >= chunk_frames)
            throw std::invalid_argument("infer.overlap must satisfy 1 <= overlap < chunk_frames");
        if (keyframe_gap < 1) throw std::invalid_argument("infer.keyframe_gap must be >= 1");
        if (static_cast<size_t>(steps) > bridge.t_grid.size())
            throw std::invalid_argument("infer.steps exceeds the bridge evaluation grid");
        bridge.validate();
    }

    nlohmann::json to_json() const {
        return {{"steps", steps},
                {"mode", mode == InferMode::ode ? "ode" : "sde"},
                {"sde_sigma", sde_sigma},
                {"use_keyframes", use_keyframes},
                {"keyframe_gap", keyframe_gap},
                {"chunk_frames", chunk_frames},
                {"overlap", overlap},
                {"progressive_ref", progressive_ref},
                {"rng_seed", rng_seed}};
    }
};

struct RenderResult {
    std::vector<Image> images;          // clamped to [0,1]
    std::vector<double> frame_seconds;  // wallclock attributed per frame
    std::string config_echo;            // JSON snapshot of the effective config
};

// The velocity source: a trained network or a test oracle. Receives fully
// populated conditioning (zt, t, buffers, optional keyframes) and returns the
// predicted velocity clip.
template <class T>
using VelocityFn = std::function<Tensor<T>(const typename RenderFlowNet<T>::ClipInputs&)>;

// Gradient-free model wrapper.
template <class T>
VelocityFn<T> model_velocity_fn(RenderFlowNet<T>& net) {
    net.params.set_trainable({});  // inference builds no backward graph
    return [&net](const typename RenderFlowNet<T>::ClipInputs& in) { return net.forward(in)->val; };
}

// Chunk start offsets: advance by chunk-overlap, final chunk pinned to the
// sequence end so every chunk is full-length.
inline std::vector<int> chunk_starts(int total, int chunk, int overlap) {
    std::vector<int> starts;
    if (total <= chunk) return {0};
    int s = 0;
    while (true) {
        if (s + chunk >= total) {
            starts.push_back(total - chunk);
            break;
        }
        starts.push_back(s);
        s += chunk - overlap;
    }
    return starts;
}

namespace detail {

template <class T>
struct ChunkCond {
    Tensor<T> z0, attrs, env, ref, mask;
    std::vector<int> frame_indices;
};

template <class T>
ChunkCond<T> build_chunk_cond(const Sequence& seq, int start, int count) {
    ChunkCond<T> c;
    c.z0 = clip_albedo<T>(seq, start, count);
    c.attrs = clip_attributes<T>(seq, start, count);
    c.env = clip_envmaps<T>(seq, start, count);
    const int h = c.z0.dim(1), w = c.z0.dim(2);
    c.ref = Tensor<T>::zeros({count, h, w, 3});
    c.mask = Tensor<T>::zeros({count, h, w, 1});
    for (int i = 0; i < count; ++i) c.frame_indices.push_back(start + i);
    return c;
}

// Multi-step bridge sampling over the first `steps` grid points, terminal
// endpoint recovery. ODE mode never touches the rng.
template <class T>
Tensor<T> sample_chunk(const VelocityFn<T>& fn, const ChunkCond<T>& cond, const Tensor<T>& keyframes,
                       const std::vector<int>& keyframe_indices, bool use_keyframes,
                       const InferConfig& cfg, Rng& rng) {
    typename RenderFlowNet<T>::ClipInputs in;
    in.ref = cond.ref;
    in.mask = cond.mask;
    in.attrs = cond.attrs;
    in.env = cond.env;
    in.frame_indices = cond.frame_indices;
    in.use_keyframes = use_keyframes;
    in.keyframes = keyframes;
    in.keyframe_indices = keyframe_indices;

    Tensor<T> z = cond.z0;
    for (int i = 0; i < cfg.steps; ++i) {
        double t = cfg.bridge.t_grid[static_cast<size_t>(i)];
        in.zt = z;
        in.t = t;
        Tensor<T> v = fn(in);
        if (i + 1 < cfg.steps) {
            double t_next = cfg.bridge.t_grid[static_cast<size_t>(i + 1)];
            z = (cfg.mode == InferMode::ode)
                    ? ode_step(z, v, t, t_next - t)
                    : sde_step(z, v, t, t_next, cfg.sde_sigma, rng, cfg.bridge.t_max);
        } else {
            z = recover_endpoint(z, v, t, cfg.bridge.t_max);
        }
    }
    return z;
}

}  // namespace detail

// Render a short clip (length <= chunk_frames) in one shot.
template <class T>
RenderResult render_clip(const VelocityFn<T>& fn, const Sequence& seq, const InferConfig& cfg) {
    cfg.validate();
    const int total = static_cast<int>(seq.frames.size());
    if (total > cfg.chunk_frames)
        throw std::invalid_argument("render_clip: sequence longer than chunk_frames; use "
                                    "render_progressive");
    Rng rng(cfg.rng_seed);
    auto t0 = std::chrono::steady_clock::now();
    auto cond = detail::build_chunk_cond<T>(seq, 0, total);
    Tensor<T> z = detail::sample_chunk(fn, cond, Tensor<T>(), {}, false, cfg, rng);
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    RenderResult r;
    r.images = tensor_to_images(z);
    r.frame_seconds.assign(static_cast<size_t>(total), secs / total);
    r.config_echo = cfg.to_json().dump();
    return r;
}

// Progressive chunked generation. Chunks after the first receive the
// previously rendered overlap frames through the masked reference channels;
// overlapping outputs are taken from the later chunk. When keyframe guidance
// is requested the keyframes are injected into every chunk with absolute
// temporal indices.
template <class T>
RenderResult render_progressive(const VelocityFn<T>& fn, const Sequence& seq, const InferConfig& cfg,
                                const Tensor<T>* keyframes = nullptr,
                                const std::vector<int>* keyframe_indices = nullptr) {
    cfg.validate();
    const int total = static_cast<int>(seq.frames.size());
    const int chunk = std::min(cfg.chunk_frames, total);

    Tensor<T> key_imgs;
    std::vector<int> key_idx;
    bool use_kf = cfg.use_keyframes;
    if (use_kf) {
        if (keyframes) {
            key_imgs = *keyframes;
            key_idx = *keyframe_indices;
        } else {
            key_idx = keyframe_indices_for(total, cfg.keyframe_gap);
            key_imgs = gather_keyframes<T>(seq, key_idx);
        }
    }

    Rng rng(cfg.rng_seed);
    const int h = seq.frames[0].g.albedo.h, w = seq.frames[0].g.albedo.w;
    std::vector<Image> out(static_cast<size_t>(total));
    std::vector<double> secs(static_cast<size_t>(total), 0.0);

    for (int start : chunk_starts(total, chunk, cfg.overlap)) {
        auto t0 = std::chrono::steady_clock::now();
        auto cond = detail::build_chunk_cond<T>(seq, start, chunk);
        if (start > 0 && cfg.progressive_ref) {
            // previously rendered frames fill the overlap slots (mask = 1)
            for (int i = 0; i < cfg.overlap; ++i) {
                const Image& prev = out[static_cast<size_t>(start + i)];
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x) {
                        for (int c = 0; c < 3; ++c)
                            cond.ref.v[((static_cast<std::int64_t>(i) * h + y) * w + x) * 3 + c] =
                                static_cast<T>(prev.at(y, x, c));
                        cond.mask.v[(static_cast<std::int64_t>(i) * h + y) * w + x] = T(1);
                    }
            }
        }
        Tensor<T> z = detail::sample_chunk(fn, cond, key_imgs, key_idx, use_kf, cfg, rng);
        double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::vector<Image> imgs = tensor_to_images(z);
        for (int i = 0; i < chunk; ++i) {
            out[static_cast<size_t>(start + i)] = imgs[static_cast<size_t>(i)];  // later chunk wins
            secs[static_cast<size_t>(start + i)] = dt / chunk;
        }
    }

    RenderResult r;
    r.images = std::move(out);
    r.frame_seconds = std::move(secs);
    r.config_echo = cfg.to_json().dump();
    return r;
}

// Keyframe-guided inference with explicit keyframes. Requires a checkpoint
// whose keyframe adapter was actually trained (stage == "keyframe").
template <class T>
RenderResult render_with_keyframes(const VelocityFn<T>& fn, const Sequence& seq,
                                   const Tensor<T>& keyframes, const std::vector<int>& indices,
                                   InferConfig cfg, const std::string& ckpt_stage) {
    if (ckpt_stage != "keyframe")
        throw unsupported_configuration(
            "render_with_keyframes: checkpoint stage '" + ckpt_stage +
            "' has an untrained keyframe adapter; train stage 2 first");
    for (int idx : indices)
        if (idx < 0 || idx >= static_cast<int>(seq.frames.size()))
            throw std::invalid_argument("render_with_keyframes: keyframe index out of range");
    cfg.use_keyframes = true;
    return render_progressive(fn, seq, cfg, &keyframes, &indices);
}

// Material-editing demonstration: synthesize the interpolated sequence, render
// it with the model, and report per-frame parameter values alongside the
// reference frames.
template <class T>
struct MaterialEditResult {
    RenderResult render;
    std::vector<Image> reference;
    std::vector<double> param_values;
    Sequence sequence;
};

template <class T>
MaterialEditResult<T> material_edit_demo(const VelocityFn<T>& fn, std::uint64_t seed,
                                         const MaterialInterp& edit, SynthConfig synth,
                                         const InferConfig& cfg) {
    synth.material_interp = edit;
    Sequence seq = synth_sequence(seed, synth);  // throws on unknown object/param

    MaterialEditResult<T> r;
    r.render = (static_cast<int>(seq.frames.size()) <= cfg.chunk_frames)
                   ? render_clip(fn, seq, cfg)
                   : render_progressive(fn, seq, cfg);
    for (const auto& fr : seq.frames) r.reference.push_back(fr.reference);
    const int f = static_cast<int>(seq.frames.size());
    for (int i = 0; i < f; ++i) {
        double a = (f > 1) ? static_cast<double>(i) / (f - 1) : 0.0;
        r.param_values.push_back(edit.from.x + (edit.to.x - edit.from.x) * a);
    }
    r.sequence = std::move(seq);
    return r;
}

// Side-by-side composite (model | reference), used by the demo output.
inline Image side_by_side(const Image& a, const Image& b) {
    if (a.h != b.h || a.c != b.c) throw std::invalid_argument("side_by_side: shape mismatch");
    Image out(a.h, a.w + b.w, a.c);
    for (int y = 0; y < a.h; ++y) {
        for (int x = 0; x < a.w; ++x)
            for (int c = 0; c < a.c; ++c) out.at(y, x, c) = a.at(y, x, c);
        for (int x = 0; x < b.w; ++x)
            for (int c = 0; c < a.c; ++c) out.at(y, a.w + x, c) = b.at(y, x, c);
    }
    return out;
}

}  // namespace rf
