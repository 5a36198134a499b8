#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "renderflow/autograd.hpp"
#include "renderflow/common.hpp"

namespace rf {

enum class ParamGroup { base, envmap_adapter, keyframe_adapter, inverse_adapter };

inline const char* param_group_name(ParamGroup g) {
    switch (g) {
        case ParamGroup::base: return "base";
        case ParamGroup::envmap_adapter: return "envmap_adapter";
        case ParamGroup::keyframe_adapter: return "keyframe_adapter";
        case ParamGroup::inverse_adapter: return "inverse_adapter";
    }
    return "?";
}

inline ParamGroup param_group_from_name(const std::string& s) {
    if (s == "base") return ParamGroup::base;
    if (s == "envmap_adapter") return ParamGroup::envmap_adapter;
    if (s == "keyframe_adapter") return ParamGroup::keyframe_adapter;
    if (s == "inverse_adapter") return ParamGroup::inverse_adapter;
    throw std::invalid_argument("unknown parameter group: " + s);
}

enum class Modality { albedo, normal, depth, material };

inline int modality_channels(Modality m) { return m == Modality::depth ? 1 : 3; }

inline const char* modality_name(Modality m) {
    switch (m) {
        case Modality::albedo: return "albedo";
        case Modality::normal: return "normal";
        case Modality::depth: return "depth";
        case Modality::material: return "material";
    }
    return "?";
}

inline Modality modality_from_name(const std::string& s) {
    if (s == "albedo") return Modality::albedo;
    if (s == "normal") return Modality::normal;
    if (s == "depth") return Modality::depth;
    if (s == "material") return Modality::material;
    throw std::invalid_argument("unknown modality: " + s);
}

inline const std::vector<Modality>& all_modalities() {
    static const std::vector<Modality> m{Modality::albedo, Modality::normal, Modality::depth,
                                         Modality::material};
    return m;
}

enum class KeyframeVariant { reused_query, dedicated_query };

struct NetConfig {
    int patch = 8;
    int dim = 128;
    int depth = 6;
    int heads = 4;
    double ffn_mult = 4.0;
    int lora_rank = 8;
    KeyframeVariant keyframe_variant = KeyframeVariant::dedicated_query;
    bool keyframe_ffn_lora = true;
    int env_patch = 8;
    int prompt_tokens = 4;

    int head_dim() const { return dim / heads; }
    int ffn_hidden() const { return static_cast<int>(dim * ffn_mult); }

    void validate() const {
        if (patch < 1 || dim < 1 || depth < 1 || heads < 1 || env_patch < 1)
            throw std::invalid_argument("net config: sizes must be positive");
        if (dim % heads != 0) throw std::invalid_argument("net config: dim must divide by heads");
        if (head_dim() % 2 != 0)
            throw std::invalid_argument("net config: head_dim must be even (RoPE pairs)");
        if (ffn_hidden() < 1) throw std::invalid_argument("net config: ffn_mult too small");
        if (lora_rank < 1) throw std::invalid_argument("net config: lora_rank must be >= 1");
        if (prompt_tokens < 1) throw std::invalid_argument("net config: prompt_tokens must be >= 1");
    }
};

// ---------------------------------------------------------------------------
// Named parameter store with group tags. Entry order is the checkpoint
// manifest order.
// ---------------------------------------------------------------------------
template <class T>
class ParamStore {
public:
    struct Entry {
        std::string name;
        ParamGroup group;
        Var<T> var;
    };

    Var<T> add(const std::string& name, ParamGroup group, Tensor<T> init) {
        if (index_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
        Var<T> v = leaf(std::move(init));
        index_[name] = entries_.size();
        entries_.push_back({name, group, v});
        return v;
    }

    const Var<T>& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::invalid_argument("no such parameter: " + name);
        return entries_[it->second].var;
    }
    bool has(const std::string& name) const { return index_.count(name) != 0; }

    const std::vector<Entry>& entries() const { return entries_; }

    std::int64_t count(ParamGroup g) const {
        std::int64_t n = 0;
        for (const auto& e : entries_)
            if (e.group == g) n += e.var->val.numel();
        return n;
    }
    std::int64_t count_all() const {
        std::int64_t n = 0;
        for (const auto& e : entries_) n += e.var->val.numel();
        return n;
    }

    // Only listed groups receive gradients / optimizer updates.
    void set_trainable(const std::vector<ParamGroup>& groups) {
        for (auto& e : entries_) {
            bool on = false;
            for (auto g : groups)
                if (g == e.group) on = true;
            e.var->needs_grad = on;
        }
    }

    void zero_grads() {
        for (auto& e : entries_) e.var->grad = Tensor<T>();
    }

    double grad_norm(ParamGroup g) const {
        double s = 0.0;
        for (const auto& e : entries_) {
            if (e.group != g || !e.var->has_grad()) continue;
            for (auto x : e.var->grad.v) s += static_cast<double>(x) * static_cast<double>(x);
        }
        return std::sqrt(s);
    }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, size_t> index_;
};

// AdaLN-style modulation used by the envmap adapter: (gamma+1) * f + beta.
template <class T>
Var<T> envmap_modulate(const Var<T>& f, const Var<T>& gamma, const Var<T>& beta) {
    return add_rowvec(mul_rowvec(f, add_scalar(gamma, T(1))), beta);
}

// Sinusoidal timestep features (frequency base 10000 over dim/2 pairs).
template <class T>
Tensor<T> timestep_features(double t, int dim) {
    if (dim % 2 != 0) throw std::invalid_argument("timestep_features: dim must be even");
    Tensor<T> out({1, dim});
    const int half = dim / 2;
    const double m = t * 1000.0;
    for (int k = 0; k < half; ++k) {
        double freq = std::exp(-std::log(10000.0) * k / half);
        out.v[k] = static_cast<T>(std::cos(m * freq));
        out.v[half + k] = static_cast<T>(std::sin(m * freq));
    }
    return out;
}

// ---------------------------------------------------------------------------
// The conditional velocity network.
// ---------------------------------------------------------------------------
template <class T>
class RenderFlowNet {
public:
    static constexpr int kInputChannels = 7;  // zt(3) + masked ref(3) + mask(1)
    static constexpr int kAttrChannels = 8;   // normal(3) + depth(1) + material(3) + hit(1)
    static constexpr int kOutChannels = 3;

    NetConfig cfg;
    ParamStore<T> params;

    RenderFlowNet(NetConfig c, std::uint64_t init_seed) : cfg(c) {
        cfg.validate();
        Rng rng(Rng::derive(init_seed, 0x5eed));
        build(rng);
    }

    struct ClipInputs {
        Tensor<T> zt;                      // (F,H,W,3)
        Tensor<T> ref;                     // (F,H,W,3), zeros when unused
        Tensor<T> mask;                    // (F,H,W,1)
        Tensor<T> attrs;                   // (F,H,W,8)
        Tensor<T> env;                     // (F,He,We,3) per-frame rotated LDR maps
        std::vector<int> frame_indices;    // absolute frame index per clip frame
        Tensor<T> keyframes;               // (K,H,W,3), may be empty
        std::vector<int> keyframe_indices; // absolute indices, size K
        double t = 0.0;
        bool use_keyframes = false;
    };

    // Conditional velocity prediction, shape (F,H,W,3).
    Var<T> forward(const ClipInputs& in) const {
        const auto [f, h, w] = clip_dims(in.zt, "zt", 3);
        require_shape(in.ref, f, h, w, 3, "ref");
        require_shape(in.mask, f, h, w, 1, "mask");
        require_shape(in.attrs, f, h, w, kAttrChannels, "attrs");
        if (static_cast<int>(in.frame_indices.size()) != f)
            throw std::invalid_argument("forward: frame_indices size mismatch");
        if (in.env.rank() != 4 || in.env.dim(0) != f || in.env.dim(3) != 3)
            throw std::invalid_argument("forward: env must be (F,He,We,3)");

        const int p = cfg.patch;
        const int hp = h / p, wp = w / p;

        Var<T> x = linear(patchify_rearrange(constant(pack_input(in, f, h, w)), p),
                          params.get("in_embed.w"), params.get("in_embed.b"));
        x = add(x, embed_attributes(in.attrs));
        Var<T> temb = timestep_embedding(in.t);
        x = add_rowvec(x, temb);

        Var<T> env_pool = pooled_env_tokens(in.env);

        bool kf_active = in.use_keyframes && in.keyframes.numel() > 0;
        Var<T> key_base;
        std::vector<int> qpos, kpos;
        if (kf_active) {
            if (in.keyframes.rank() != 4 || in.keyframes.dim(1) != h || in.keyframes.dim(2) != w ||
                in.keyframes.dim(3) != 3)
                throw std::invalid_argument("forward: keyframes must be (K,H,W,3)");
            if (in.keyframe_indices.size() != static_cast<size_t>(in.keyframes.dim(0)))
                throw std::invalid_argument("forward: keyframe index count mismatch");
            key_base = linear(patchify_rearrange(constant(in.keyframes), p),
                              params.get("kf_embed.w"), params.get("kf_embed.b"));
            qpos.reserve(static_cast<size_t>(f) * hp * wp);
            for (int fr = 0; fr < f; ++fr)
                for (int i = 0; i < hp * wp; ++i) qpos.push_back(in.frame_indices[static_cast<size_t>(fr)]);
            for (int k = 0; k < in.keyframes.dim(0); ++k)
                for (int i = 0; i < hp * wp; ++i) kpos.push_back(in.keyframe_indices[static_cast<size_t>(k)]);
        }

        for (int b = 0; b < cfg.depth; ++b) {
            const std::string pre = "blk" + std::to_string(b) + ".";
            // envmap AdaLN on the feature stream, before the block's attention
            Var<T> gb = linear(env_pool, params.get(pre + "env.w"), params.get(pre + "env.b"));
            Var<T> gamma = slice_cols(gb, 0, cfg.dim);
            Var<T> beta = slice_cols(gb, cfg.dim, 2 * cfg.dim);
            x = envmap_modulate(x, gamma, beta);

            Var<T> hN = layernorm(x, params.get(pre + "ln1.g"), params.get(pre + "ln1.b"));
            Var<T> q = linear(hN, params.get(pre + "attn.q.w"), params.get(pre + "attn.q.b"));
            Var<T> k = linear(hN, params.get(pre + "attn.k.w"), params.get(pre + "attn.k.b"));
            Var<T> v = linear(hN, params.get(pre + "attn.v.w"), params.get(pre + "attn.v.b"));
            Var<T> attn = multihead_attention(q, k, v, cfg.heads);
            x = add(x, linear(attn, params.get(pre + "attn.o.w"), params.get(pre + "attn.o.b")));

            if (kf_active) {
                Var<T> kq = (cfg.keyframe_variant == KeyframeVariant::reused_query)
                                ? q
                                : linear(hN, params.get(pre + "kf.q.w"), params.get(pre + "kf.q.b"));
                Var<T> kk = linear(key_base, params.get(pre + "kf.k.w"), params.get(pre + "kf.k.b"));
                Var<T> kv = linear(key_base, params.get(pre + "kf.v.w"), params.get(pre + "kf.v.b"));
                Var<T> kf = multihead_attention(rope_apply(kq, qpos, cfg.heads),
                                                rope_apply(kk, kpos, cfg.heads), kv, cfg.heads);
                x = add(x, linear(kf, params.get(pre + "kf.o.w"), params.get(pre + "kf.o.b")));
            }

            Var<T> h2 = layernorm(x, params.get(pre + "ln2.g"), params.get(pre + "ln2.b"));
            Var<T> f1 = linear(h2, params.get(pre + "ffn.fc1.w"), params.get(pre + "ffn.fc1.b"));
            if (kf_active && cfg.keyframe_ffn_lora)
                f1 = add(f1, linear(linear(h2, params.get(pre + "kf.lora1.a")),
                                    params.get(pre + "kf.lora1.b")));
            Var<T> act = gelu(f1);
            Var<T> f2 = linear(act, params.get(pre + "ffn.fc2.w"), params.get(pre + "ffn.fc2.b"));
            if (kf_active && cfg.keyframe_ffn_lora)
                f2 = add(f2, linear(linear(act, params.get(pre + "kf.lora2.a")),
                                    params.get(pre + "kf.lora2.b")));
            x = add(x, f2);
        }

        Var<T> xo = layernorm(x, params.get("final_ln.g"), params.get("final_ln.b"));
        Var<T> out = linear(xo, params.get("head.w"), params.get("head.b"));
        return unpatchify_rearrange(out, f, h, w, kOutChannels, p);
    }

    // Intrinsic-decomposition pass over the frozen trunk: inverse embedder,
    // LoRA on q/k/v, prompt cross-attention after self-attention, modality
    // head. No envmap modulation and no keyframe branch.
    Var<T> inverse_forward(const Tensor<T>& zt, Modality mod, double t) const {
        const int c = modality_channels(mod);
        if (zt.rank() != 4 || zt.dim(3) != c)
            throw std::invalid_argument("inverse_forward: zt channels do not match the modality");
        const int f = zt.dim(0), h = zt.dim(1), w = zt.dim(2);
        const int p = cfg.patch;
        if (h % p || w % p) throw std::invalid_argument("inverse_forward: patch must divide H and W");

        Tensor<T> x3 = zt;
        if (c == 1) {  // replicate single-channel input to the 3-channel embedder
            x3 = Tensor<T>({f, h, w, 3});
            for (std::int64_t i = 0; i < zt.numel(); ++i)
                for (int ch = 0; ch < 3; ++ch) x3.v[3 * i + ch] = zt.v[i];
        }
        Var<T> x = linear(patchify_rearrange(constant(std::move(x3)), p),
                          params.get("inv_embed.w"), params.get("inv_embed.b"));
        x = add_rowvec(x, timestep_embedding(t));

        const std::string mname = modality_name(mod);
        Var<T> prompts = params.get("prompt." + mname);

        for (int b = 0; b < cfg.depth; ++b) {
            const std::string pre = "blk" + std::to_string(b) + ".";
            Var<T> hN = layernorm(x, params.get(pre + "ln1.g"), params.get(pre + "ln1.b"));
            Var<T> q = add(linear(hN, params.get(pre + "attn.q.w"), params.get(pre + "attn.q.b")),
                           linear(linear(hN, params.get(pre + "inv.lq.a")), params.get(pre + "inv.lq.b")));
            Var<T> k = add(linear(hN, params.get(pre + "attn.k.w"), params.get(pre + "attn.k.b")),
                           linear(linear(hN, params.get(pre + "inv.lk.a")), params.get(pre + "inv.lk.b")));
            Var<T> v = add(linear(hN, params.get(pre + "attn.v.w"), params.get(pre + "attn.v.b")),
                           linear(linear(hN, params.get(pre + "inv.lv.a")), params.get(pre + "inv.lv.b")));
            Var<T> attn = multihead_attention(q, k, v, cfg.heads);
            x = add(x, linear(attn, params.get(pre + "attn.o.w"), params.get(pre + "attn.o.b")));

            // prompt-conditioned cross-attention selects the target intrinsic
            Var<T> pq = linear(x, params.get(pre + "inv.p.q.w"), params.get(pre + "inv.p.q.b"));
            Var<T> pk = linear(prompts, params.get(pre + "inv.p.k.w"), params.get(pre + "inv.p.k.b"));
            Var<T> pv = linear(prompts, params.get(pre + "inv.p.v.w"), params.get(pre + "inv.p.v.b"));
            Var<T> pattn = multihead_attention(pq, pk, pv, cfg.heads);
            x = add(x, linear(pattn, params.get(pre + "inv.p.o.w"), params.get(pre + "inv.p.o.b")));

            Var<T> h2 = layernorm(x, params.get(pre + "ln2.g"), params.get(pre + "ln2.b"));
            Var<T> f1 = linear(h2, params.get(pre + "ffn.fc1.w"), params.get(pre + "ffn.fc1.b"));
            Var<T> act = gelu(f1);
            x = add(x, linear(act, params.get(pre + "ffn.fc2.w"), params.get(pre + "ffn.fc2.b")));
        }

        Var<T> xo = layernorm(x, params.get("final_ln.g"), params.get("final_ln.b"));
        Var<T> h1 = silu(linear(xo, params.get("ihead." + mname + ".fc1.w"),
                                params.get("ihead." + mname + ".fc1.b")));
        Var<T> out = linear(h1, params.get("ihead." + mname + ".fc2.w"),
                            params.get("ihead." + mname + ".fc2.b"));
        return unpatchify_rearrange(out, f, h, w, c, p);
    }

    Var<T> embed_attributes(const Tensor<T>& attrs) const {
        if (attrs.rank() != 4 || attrs.dim(3) != kAttrChannels)
            throw std::invalid_argument("embed_attributes: expected (F,H,W,8) buffers");
        if (attrs.dim(1) % cfg.patch || attrs.dim(2) % cfg.patch)
            throw std::invalid_argument("embed_attributes: resolution mismatch with patch size");
        return linear(patchify_rearrange(constant(attrs), cfg.patch), params.get("attr_embed.w"),
                      params.get("attr_embed.b"));
    }

    Var<T> timestep_embedding(double t) const {
        Var<T> feat = constant(timestep_features<T>(t, cfg.dim));
        Var<T> h1 = silu(linear(feat, params.get("tmlp.fc1.w"), params.get("tmlp.fc1.b")));
        return linear(h1, params.get("tmlp.fc2.w"), params.get("tmlp.fc2.b"));
    }

    Var<T> pooled_env_tokens(const Tensor<T>& env) const {
        if (env.dim(1) % cfg.env_patch || env.dim(2) % cfg.env_patch)
            throw std::invalid_argument("env map resolution must divide env_patch");
        Var<T> tok = linear(patchify_rearrange(constant(env), cfg.env_patch),
                            params.get("env_embed.w"), params.get("env_embed.b"));
        return mean_rows(tok);
    }

private:
    static std::tuple<int, int, int> clip_dims(const Tensor<T>& t, const char* what, int c) {
        if (t.rank() != 4 || t.dim(3) != c)
            throw std::invalid_argument(std::string("forward: ") + what + " must be (F,H,W," +
                                        std::to_string(c) + ")");
        return {t.dim(0), t.dim(1), t.dim(2)};
    }
    static void require_shape(const Tensor<T>& t, int f, int h, int w, int c, const char* what) {
        if (t.rank() != 4 || t.dim(0) != f || t.dim(1) != h || t.dim(2) != w || t.dim(3) != c)
            throw std::invalid_argument(std::string("forward: ") + what + " shape mismatch");
    }

    Tensor<T> pack_input(const ClipInputs& in, int f, int h, int w) const {
        Tensor<T> x({f, h, w, kInputChannels});
        const std::int64_t npix = static_cast<std::int64_t>(f) * h * w;
        for (std::int64_t i = 0; i < npix; ++i) {
            x.v[i * 7 + 0] = in.zt.v[i * 3 + 0];
            x.v[i * 7 + 1] = in.zt.v[i * 3 + 1];
            x.v[i * 7 + 2] = in.zt.v[i * 3 + 2];
            x.v[i * 7 + 3] = in.ref.v[i * 3 + 0];
            x.v[i * 7 + 4] = in.ref.v[i * 3 + 1];
            x.v[i * 7 + 5] = in.ref.v[i * 3 + 2];
            x.v[i * 7 + 6] = in.mask.v[i];
        }
        return x;
    }

    Tensor<T> init_normal(Rng& rng, std::vector<int> shape, double std_dev = 0.02) {
        Tensor<T> t(std::move(shape));
        for (auto& x : t.v) x = static_cast<T>(rng.normal() * std_dev);
        return t;
    }

    void build(Rng& rng) {
        const int p = cfg.patch, d = cfg.dim, hid = cfg.ffn_hidden(), r = cfg.lora_rank;
        auto zeros = [](std::vector<int> s) { return Tensor<T>::zeros(std::move(s)); };
        auto ones = [](std::vector<int> s) { return Tensor<T>::full(std::move(s), T(1)); };

        params.add("in_embed.w", ParamGroup::base, init_normal(rng, {d, kInputChannels * p * p}));
        params.add("in_embed.b", ParamGroup::base, zeros({d}));
        params.add("attr_embed.w", ParamGroup::base, init_normal(rng, {d, kAttrChannels * p * p}));
        params.add("attr_embed.b", ParamGroup::base, zeros({d}));
        params.add("tmlp.fc1.w", ParamGroup::base, init_normal(rng, {d, d}));
        params.add("tmlp.fc1.b", ParamGroup::base, zeros({d}));
        params.add("tmlp.fc2.w", ParamGroup::base, init_normal(rng, {d, d}));
        params.add("tmlp.fc2.b", ParamGroup::base, zeros({d}));

        params.add("env_embed.w", ParamGroup::envmap_adapter,
                   init_normal(rng, {d, 3 * cfg.env_patch * cfg.env_patch}));
        params.add("env_embed.b", ParamGroup::envmap_adapter, zeros({d}));
        params.add("kf_embed.w", ParamGroup::keyframe_adapter, init_normal(rng, {d, 3 * p * p}));
        params.add("kf_embed.b", ParamGroup::keyframe_adapter, zeros({d}));
        params.add("inv_embed.w", ParamGroup::inverse_adapter, init_normal(rng, {d, 3 * p * p}));
        params.add("inv_embed.b", ParamGroup::inverse_adapter, zeros({d}));

        for (int b = 0; b < cfg.depth; ++b) {
            const std::string pre = "blk" + std::to_string(b) + ".";
            params.add(pre + "ln1.g", ParamGroup::base, ones({d}));
            params.add(pre + "ln1.b", ParamGroup::base, zeros({d}));
            for (const char* nm : {"q", "k", "v", "o"}) {
                params.add(pre + "attn." + nm + ".w", ParamGroup::base, init_normal(rng, {d, d}));
                params.add(pre + "attn." + nm + ".b", ParamGroup::base, zeros({d}));
            }
            params.add(pre + "ln2.g", ParamGroup::base, ones({d}));
            params.add(pre + "ln2.b", ParamGroup::base, zeros({d}));
            params.add(pre + "ffn.fc1.w", ParamGroup::base, init_normal(rng, {hid, d}));
            params.add(pre + "ffn.fc1.b", ParamGroup::base, zeros({hid}));
            params.add(pre + "ffn.fc2.w", ParamGroup::base, init_normal(rng, {d, hid}));
            params.add(pre + "ffn.fc2.b", ParamGroup::base, zeros({d}));

            // zero-init so modulation starts as the identity
            params.add(pre + "env.w", ParamGroup::envmap_adapter, zeros({2 * d, d}));
            params.add(pre + "env.b", ParamGroup::envmap_adapter, zeros({2 * d}));

            if (cfg.keyframe_variant == KeyframeVariant::dedicated_query) {
                params.add(pre + "kf.q.w", ParamGroup::keyframe_adapter, init_normal(rng, {d, d}));
                params.add(pre + "kf.q.b", ParamGroup::keyframe_adapter, zeros({d}));
            }
            params.add(pre + "kf.k.w", ParamGroup::keyframe_adapter, init_normal(rng, {d, d}));
            params.add(pre + "kf.k.b", ParamGroup::keyframe_adapter, zeros({d}));
            params.add(pre + "kf.v.w", ParamGroup::keyframe_adapter, init_normal(rng, {d, d}));
            params.add(pre + "kf.v.b", ParamGroup::keyframe_adapter, zeros({d}));
            params.add(pre + "kf.o.w", ParamGroup::keyframe_adapter, zeros({d, d}));
            params.add(pre + "kf.o.b", ParamGroup::keyframe_adapter, zeros({d}));
            if (cfg.keyframe_ffn_lora) {
                params.add(pre + "kf.lora1.a", ParamGroup::keyframe_adapter, init_normal(rng, {r, d}));
                params.add(pre + "kf.lora1.b", ParamGroup::keyframe_adapter, zeros({hid, r}));
                params.add(pre + "kf.lora2.a", ParamGroup::keyframe_adapter, init_normal(rng, {r, hid}));
                params.add(pre + "kf.lora2.b", ParamGroup::keyframe_adapter, zeros({d, r}));
            }

            // inverse adapter: LoRA on q/k/v + prompt cross-attention
            for (const char* nm : {"lq", "lk", "lv"}) {
                params.add(pre + "inv." + nm + ".a", ParamGroup::inverse_adapter,
                           init_normal(rng, {r, d}));
                params.add(pre + "inv." + nm + ".b", ParamGroup::inverse_adapter, zeros({d, r}));
            }
            for (const char* nm : {"q", "k", "v"}) {
                params.add(pre + "inv.p." + nm + ".w", ParamGroup::inverse_adapter,
                           init_normal(rng, {d, d}));
                params.add(pre + "inv.p." + nm + ".b", ParamGroup::inverse_adapter, zeros({d}));
            }
            params.add(pre + "inv.p.o.w", ParamGroup::inverse_adapter, zeros({d, d}));
            params.add(pre + "inv.p.o.b", ParamGroup::inverse_adapter, zeros({d}));
        }

        params.add("final_ln.g", ParamGroup::base, ones({d}));
        params.add("final_ln.b", ParamGroup::base, zeros({d}));
        params.add("head.w", ParamGroup::base, zeros({kOutChannels * p * p, d}));
        params.add("head.b", ParamGroup::base, zeros({kOutChannels * p * p}));

        for (Modality m : all_modalities()) {
            const std::string nm = modality_name(m);
            params.add("prompt." + nm, ParamGroup::inverse_adapter,
                       init_normal(rng, {cfg.prompt_tokens, d}));
            params.add("ihead." + nm + ".fc1.w", ParamGroup::inverse_adapter, init_normal(rng, {d, d}));
            params.add("ihead." + nm + ".fc1.b", ParamGroup::inverse_adapter, zeros({d}));
            params.add("ihead." + nm + ".fc2.w", ParamGroup::inverse_adapter,
                       zeros({modality_channels(m) * p * p, d}));
            params.add("ihead." + nm + ".fc2.b", ParamGroup::inverse_adapter,
                       zeros({modality_channels(m) * p * p}));
        }
    }
};

}  // namespace rf
