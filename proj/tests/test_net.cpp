#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "renderflow/model.hpp"

using namespace rf;

namespace {

NetConfig tiny_cfg() {
    NetConfig c;
    c.patch = 4;
    c.dim = 16;
    c.depth = 2;
    c.heads = 2;
    c.ffn_mult = 2.0;
    c.lora_rank = 2;
    c.env_patch = 4;
    c.prompt_tokens = 2;
    return c;
}

template <class T>
Tensor<T> random_clip(Rng& rng, int f, int h, int w, int c, double lo = 0.0, double hi = 1.0) {
    Tensor<T> t({f, h, w, c});
    for (auto& x : t.v) x = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

template <class T>
typename RenderFlowNet<T>::ClipInputs random_inputs(Rng& rng, int f, int h, int w, int eh, int ew) {
    typename RenderFlowNet<T>::ClipInputs in;
    in.zt = random_clip<T>(rng, f, h, w, 3);
    in.ref = random_clip<T>(rng, f, h, w, 3);
    in.mask = random_clip<T>(rng, f, h, w, 1);
    in.attrs = random_clip<T>(rng, f, h, w, 8);
    in.env = random_clip<T>(rng, f, eh, ew, 3);
    for (int i = 0; i < f; ++i) in.frame_indices.push_back(i);
    in.t = 0.25;
    return in;
}

template <class T>
void randomize_params(RenderFlowNet<T>& net, std::uint64_t seed, double std_dev = 0.05) {
    Rng rng(seed);
    for (const auto& e : net.params.entries())
        for (auto& x : e.var->val.v) x = static_cast<T>(rng.normal() * std_dev);
}

}  // namespace

TEST_CASE("patchify produces F*Hp*Wp tokens and inverts exactly") {
    Rng rng(1);
    auto clip = random_clip<double>(rng, 5, 64, 64, 3);
    auto tokens = patchify_rearrange(constant(clip), 8);
    CHECK(tokens->val.dim(0) == 5 * 8 * 8);  // 320 render tokens
    CHECK(tokens->val.dim(1) == 3 * 8 * 8);
    auto back = unpatchify_rearrange(tokens, 5, 64, 64, 3, 8);
    CHECK(back->val.v == clip.v);
    CHECK_THROWS_AS(patchify_rearrange(constant(clip), 7), std::invalid_argument);
}

TEST_CASE("patchify locality: swapping two input patches swaps the two tokens") {
    Rng rng(2);
    auto clip = random_clip<double>(rng, 1, 8, 8, 2);
    Tensor<double> swapped = clip;
    // swap patch (0,0) with patch (1,1), patch size 4
    for (int dy = 0; dy < 4; ++dy)
        for (int dx = 0; dx < 4; ++dx)
            for (int c = 0; c < 2; ++c) {
                std::swap(swapped.v[((0 + dy) * 8 + dx) * 2 + c],
                          swapped.v[((4 + dy) * 8 + 4 + dx) * 2 + c]);
            }
    auto ta = patchify_rearrange(constant(clip), 4);
    auto tb = patchify_rearrange(constant(swapped), 4);
    const int fw = 2 * 16;
    for (int j = 0; j < fw; ++j) {
        CHECK(ta->val.v[0 * fw + j] == tb->val.v[3 * fw + j]);
        CHECK(ta->val.v[3 * fw + j] == tb->val.v[0 * fw + j]);
        CHECK(ta->val.v[1 * fw + j] == tb->val.v[1 * fw + j]);
    }
}

TEST_CASE("rope: rotation cancels at equal positions and depends only on offsets") {
    Rng rng(3);
    const int heads = 2, d = 16;
    Tensor<double> q({1, d}), k({1, d});
    for (auto& x : q.v) x = rng.normal();
    for (auto& x : k.v) x = rng.normal();

    auto dot_at = [&](int pq, int pk) {
        auto rq = rope_apply(constant(q), {pq}, heads);
        auto rk = rope_apply(constant(k), {pk}, heads);
        double s = 0.0;
        for (int i = 0; i < d; ++i) s += rq->val.v[i] * rk->val.v[i];
        return s;
    };
    double plain = 0.0;
    for (int i = 0; i < d; ++i) plain += q.v[i] * k.v[i];

    CHECK(dot_at(7, 7) == doctest::Approx(plain).epsilon(1e-12));
    CHECK(dot_at(3, 9) == doctest::Approx(dot_at(10, 16)).epsilon(1e-9));  // shift invariance
    auto r0 = rope_apply(constant(q), {0}, heads);
    CHECK(r0->val.v == q.v);  // position 0 is the identity

    Tensor<double> odd({1, 6});
    CHECK_THROWS_AS(rope_apply(constant(odd), {0}, 2), std::invalid_argument);  // head_dim 3
}

TEST_CASE("envmap modulation identities") {
    Rng rng(4);
    Tensor<double> f({5, 8});
    for (auto& x : f.v) x = rng.normal();
    auto gamma0 = constant(Tensor<double>::zeros({1, 8}));
    auto beta0 = constant(Tensor<double>::zeros({1, 8}));
    auto same = envmap_modulate(constant(f), gamma0, beta0);
    CHECK(same->val.v == f.v);

    auto gm1 = constant(Tensor<double>::full({1, 8}, -1.0));
    auto zero = envmap_modulate(constant(f), gm1, beta0);
    for (auto x : zero->val.v) CHECK(x == 0.0);
}

TEST_CASE("two envmaps differing in one texel modulate differently") {
    NetConfig cfg = tiny_cfg();
    RenderFlowNet<double> net(cfg, 7);
    randomize_params(net, 99);
    Rng rng(5);
    auto env_a = random_clip<double>(rng, 2, 8, 8, 3);
    Tensor<double> env_b = env_a;
    env_b.v[0] += 0.5;
    auto pa = net.pooled_env_tokens(env_a);
    auto pb = net.pooled_env_tokens(env_b);
    double diff = 0.0;
    for (int i = 0; i < pa->val.numel(); ++i) diff += std::abs(pa->val.v[i] - pb->val.v[i]);
    CHECK(diff > 0.0);
}

TEST_CASE("attribute embedder: zero weights yield zero tokens, inputs matter otherwise") {
    NetConfig cfg = tiny_cfg();
    RenderFlowNet<double> net(cfg, 7);
    Rng rng(6);
    auto attrs = random_clip<double>(rng, 2, 8, 8, 8);

    for (auto& x : net.params.get("attr_embed.w")->val.v) x = 0.0;
    for (auto& x : net.params.get("attr_embed.b")->val.v) x = 0.0;
    auto zero_tokens = net.embed_attributes(attrs);
    for (auto x : zero_tokens->val.v) CHECK(x == 0.0);

    randomize_params(net, 100);
    auto ta = net.embed_attributes(attrs);
    Tensor<double> attrs2 = attrs;
    attrs2.v[3] += 0.25;  // nudge a normal component
    auto tb = net.embed_attributes(attrs2);
    double diff = 0.0;
    for (int i = 0; i < ta->val.numel(); ++i) diff += std::abs(ta->val.v[i] - tb->val.v[i]);
    CHECK(diff > 0.0);
}

TEST_CASE("forward contract: shape, determinism, zero-init adapters do not interfere") {
    NetConfig cfg = tiny_cfg();
    RenderFlowNet<double> net(cfg, 11);
    Rng rng(7);
    auto in = random_inputs<double>(rng, 2, 8, 8, 8, 8);

    auto v1 = net.forward(in);
    CHECK(v1->val.shape == std::vector<int>{2, 8, 8, 3});
    auto v2 = net.forward(in);
    CHECK(v1->val.v == v2->val.v);  // bitwise determinism

    // keyframes with zero-init output projection leave the output unchanged
    auto in_kf = in;
    in_kf.use_keyframes = true;
    in_kf.keyframes = random_clip<double>(rng, 2, 8, 8, 3);
    in_kf.keyframe_indices = {0, 4};
    auto v3 = net.forward(in_kf);
    CHECK(v3->val.v == v1->val.v);
}

TEST_CASE("zero-initialized envmap projections make the output envmap-invariant") {
    NetConfig cfg = tiny_cfg();
    RenderFlowNet<double> net(cfg, 12);  // fresh init: env gamma/beta projections are zero
    Rng rng(71);
    auto in = random_inputs<double>(rng, 2, 8, 8, 8, 8);
    auto a = net.forward(in);
    auto in2 = in;
    for (auto& x : in2.env.v) x = rng.uniform(0, 1);  // entirely different envmap
    auto b = net.forward(in2);
    CHECK(a->val.v == b->val.v);
}

TEST_CASE("duplicated keyframe attends identically to a single one") {
    NetConfig cfg = tiny_cfg();
    RenderFlowNet<double> net(cfg, 13);
    randomize_params(net, 101);
    Rng rng(8);
    auto in = random_inputs<double>(rng, 2, 8, 8, 8, 8);
    in.use_keyframes = true;
    auto kf1 = random_clip<double>(rng, 1, 8, 8, 3);
    in.keyframes = kf1;
    in.keyframe_indices = {3};
    auto single = net.forward(in);

    Tensor<double> kf2({2, 8, 8, 3});
    std::copy(kf1.v.begin(), kf1.v.end(), kf2.v.begin());
    std::copy(kf1.v.begin(), kf1.v.end(), kf2.v.begin() + kf1.numel());
    in.keyframes = kf2;
    in.keyframe_indices = {3, 3};
    auto dup = net.forward(in);
    for (int i = 0; i < single->val.numel(); ++i)
        CHECK(dup->val.v[i] == doctest::Approx(single->val.v[i]).epsilon(1e-9));
}

TEST_CASE("parameter partition covers every parameter exactly once") {
    NetConfig cfg = tiny_cfg();
    RenderFlowNet<double> net(cfg, 17);
    std::int64_t total = net.params.count_all();
    std::int64_t by_group = net.params.count(ParamGroup::base) +
                            net.params.count(ParamGroup::envmap_adapter) +
                            net.params.count(ParamGroup::keyframe_adapter) +
                            net.params.count(ParamGroup::inverse_adapter);
    CHECK(total == by_group);
    CHECK(net.params.count(ParamGroup::base) > 0);
    CHECK(net.params.count(ParamGroup::envmap_adapter) > 0);
    CHECK(net.params.count(ParamGroup::keyframe_adapter) > 0);
    CHECK(net.params.count(ParamGroup::inverse_adapter) > 0);
}

TEST_CASE("frozen groups receive exactly zero gradient") {
    NetConfig cfg = tiny_cfg();
    RenderFlowNet<double> net(cfg, 19);
    randomize_params(net, 102);
    net.params.set_trainable({ParamGroup::base});
    Rng rng(9);
    auto in = random_inputs<double>(rng, 1, 8, 8, 8, 8);
    auto v = net.forward(in);
    auto loss = mean_all(mul(v, v));
    net.params.zero_grads();
    backward(loss);
    CHECK(net.params.grad_norm(ParamGroup::base) > 0.0);
    CHECK(net.params.grad_norm(ParamGroup::envmap_adapter) == 0.0);
    CHECK(net.params.grad_norm(ParamGroup::keyframe_adapter) == 0.0);
    CHECK(net.params.grad_norm(ParamGroup::inverse_adapter) == 0.0);
}

TEST_CASE("frame permutation equivariance") {
    NetConfig cfg = tiny_cfg();
    RenderFlowNet<double> net(cfg, 23);
    randomize_params(net, 103);
    Rng rng(10);
    const int f = 3, h = 8, w = 8;
    auto in = random_inputs<double>(rng, f, h, w, 8, 8);
    in.frame_indices = {4, 9, 2};
    in.use_keyframes = true;
    in.keyframes = random_clip<double>(rng, 1, 8, 8, 3);
    in.keyframe_indices = {6};
    auto base = net.forward(in);

    const int perm[3] = {2, 0, 1};  // new frame i = old frame perm[i]
    auto permute_clip = [&](const Tensor<double>& t) {
        Tensor<double> out(t.shape);
        std::int64_t fs = t.numel() / f;
        for (int i = 0; i < f; ++i)
            std::copy(t.v.begin() + perm[i] * fs, t.v.begin() + (perm[i] + 1) * fs,
                      out.v.begin() + i * fs);
        return out;
    };
    auto in2 = in;
    in2.zt = permute_clip(in.zt);
    in2.ref = permute_clip(in.ref);
    in2.mask = permute_clip(in.mask);
    in2.attrs = permute_clip(in.attrs);
    in2.env = permute_clip(in.env);
    in2.frame_indices = {in.frame_indices[2], in.frame_indices[0], in.frame_indices[1]};
    auto permuted = net.forward(in2);

    std::int64_t fs = base->val.numel() / f;
    for (int i = 0; i < f; ++i)
        for (std::int64_t j = 0; j < fs; ++j)
            CHECK(permuted->val.v[i * fs + j] ==
                  doctest::Approx(base->val.v[perm[i] * fs + j]).epsilon(1e-9));
}

TEST_CASE("finite outputs at initialization for inputs in [-3, 3]") {
    NetConfig cfg = tiny_cfg();
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        RenderFlowNet<float> net(cfg, seed);
        Rng rng(seed + 1000);
        auto in = random_inputs<float>(rng, 1, 8, 8, 8, 8);
        for (auto& x : in.zt.v) x = static_cast<float>(rng.uniform(-3.0, 3.0));
        for (auto& x : in.attrs.v) x = static_cast<float>(rng.uniform(-3.0, 3.0));
        for (auto& x : in.env.v) x = static_cast<float>(rng.uniform(-3.0, 3.0));
        auto v = net.forward(in);
        for (auto x : v->val.v) REQUIRE(std::isfinite(x));
    }
}

TEST_CASE("reused-query variant omits the dedicated query projection") {
    NetConfig cfg = tiny_cfg();
    cfg.keyframe_variant = KeyframeVariant::reused_query;
    RenderFlowNet<double> net(cfg, 29);
    CHECK(!net.params.has("blk0.kf.q.w"));
    NetConfig ded = tiny_cfg();
    RenderFlowNet<double> net2(ded, 29);
    CHECK(net2.params.has("blk0.kf.q.w"));
    CHECK(net2.params.count(ParamGroup::keyframe_adapter) >
          net.params.count(ParamGroup::keyframe_adapter));
}
