#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "renderflow/inverse.hpp"

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

Dataset tiny_dataset(int n) {
    Dataset ds;
    SynthConfig s;
    s.frames = 3;
    s.res_h = 16;
    s.res_w = 16;
    s.env_h = 8;
    s.env_w = 8;
    s.n_objects = 2;
    for (int i = 0; i < n; ++i) ds.train.push_back(synth_sequence(500 + static_cast<std::uint64_t>(i), s));
    return ds;
}

template <class T>
void randomize_params(RenderFlowNet<T>& net, std::uint64_t seed, double std_dev = 0.05) {
    Rng rng(seed);
    for (const auto& e : net.params.entries())
        for (auto& x : e.var->val.v) x = static_cast<T>(rng.normal() * std_dev);
}

// encode a unit vector into the [0,1] normal-buffer convention
void put_normal(Tensor<double>& t, std::int64_t pixel, double x, double y, double z) {
    t.v[3 * pixel] = (x + 1.0) * 0.5;
    t.v[3 * pixel + 1] = (y + 1.0) * 0.5;
    t.v[3 * pixel + 2] = (z + 1.0) * 0.5;
}

}  // namespace

TEST_CASE("SSI depth loss closed forms (printed lambda = 1/2 variant)") {
    // L = mean(d^2) - lambda mean(d)^2 over masked log differences
    const int n = 8;
    Tensor<double> mask({1, 1, n, 1}, 1.0);

    // delta == 0
    Tensor<double> gt({1, 1, n, 1}, 0.4);
    CHECK(loss_depth_ssi(constant(gt), gt, mask)->val.v[0] == 0.0);

    // delta == c everywhere -> c^2/2
    const double c = 0.3;
    Tensor<double> pred_log({1, 1, n, 1}, c), gt_log({1, 1, n, 1}, 0.0);
    auto lc = loss_depth_ssi(constant(pred_log), gt_log, mask, 0.5, /*log_inputs=*/true);
    CHECK(lc->val.v[0] == doctest::Approx(c * c / 2).epsilon(1e-12));

    // delta = (+c, -c) over two pixels -> c^2
    Tensor<double> mask2({1, 1, 2, 1}, 1.0);
    Tensor<double> p2({1, 1, 2, 1}), g2({1, 1, 2, 1}, 0.0);
    p2.v = {c, -c};
    auto l2 = loss_depth_ssi(constant(p2), g2, mask2, 0.5, true);
    CHECK(l2->val.v[0] == doctest::Approx(c * c).epsilon(1e-12));
}

TEST_CASE("SSI loss shift identity and the lambda=1 fully invariant variant") {
    Rng rng(1);
    const int n = 16;
    Tensor<double> delta({1, 1, n, 1}), gt0({1, 1, n, 1}, 0.0), mask({1, 1, n, 1}, 1.0);
    for (auto& x : delta.v) x = rng.uniform(-0.5, 0.5);
    double mean = 0.0;
    for (auto x : delta.v) mean += x;
    mean /= n;

    const double c = 0.37;
    Tensor<double> shifted = delta;
    for (auto& x : shifted.v) x += c;

    double l0 = loss_depth_ssi(constant(delta), gt0, mask, 0.5, true)->val.v[0];
    double l1v = loss_depth_ssi(constant(shifted), gt0, mask, 0.5, true)->val.v[0];
    // the printed form is only partially shift invariant:
    CHECK(l1v - l0 == doctest::Approx(c * mean + c * c / 2).epsilon(1e-9));

    // lambda = 1 restores exact shift invariance in log space
    double f0 = loss_depth_ssi(constant(delta), gt0, mask, 1.0, true)->val.v[0];
    double f1 = loss_depth_ssi(constant(shifted), gt0, mask, 1.0, true)->val.v[0];
    CHECK(f0 == doctest::Approx(f1).epsilon(1e-9));
}

TEST_CASE("SSI loss rejects non-positive linear inputs and validates gradients") {
    Tensor<double> mask({1, 1, 4, 1}, 1.0);
    Tensor<double> bad({1, 1, 4, 1}, -1.0);
    Tensor<double> gt({1, 1, 4, 1}, 0.5);
    CHECK_THROWS_AS(loss_depth_ssi(constant(bad), gt, mask), std::invalid_argument);

    Rng rng(2);
    Tensor<double> pred({1, 1, 4, 1});
    for (auto& x : pred.v) x = rng.uniform(0.1, 1.0);
    auto pv = leaf(pred);
    auto loss = loss_depth_ssi(pv, gt, mask);
    backward(loss);
    for (int i = 0; i < 4; ++i) {
        double h = 1e-7, orig = pred.v[i];
        pred.v[i] = orig + h;
        double lp = loss_depth_ssi(constant(pred), gt, mask)->val.v[0];
        pred.v[i] = orig - h;
        double lm = loss_depth_ssi(constant(pred), gt, mask)->val.v[0];
        pred.v[i] = orig;
        CHECK(pv->grad.v[i] == doctest::Approx((lp - lm) / (2 * h)).epsilon(1e-5));
    }
}

TEST_CASE("cosine normal loss endpoints and scale invariance") {
    const int n = 4;
    Tensor<double> mask({1, 1, n, 1}, 1.0);
    Tensor<double> gt({1, 1, n, 3});
    Tensor<double> same({1, 1, n, 3}), opp({1, 1, n, 3}), orth({1, 1, n, 3});
    for (int i = 0; i < n; ++i) {
        put_normal(gt, i, 0, 0, 1);
        put_normal(same, i, 0, 0, 1);
        put_normal(opp, i, 0, 0, -1);
        put_normal(orth, i, 1, 0, 0);
    }
    CHECK(loss_normal(constant(same), gt, mask)->val.v[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(loss_normal(constant(opp), gt, mask)->val.v[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(loss_normal(constant(orth), gt, mask)->val.v[0] == doctest::Approx(1.0).epsilon(1e-12));

    // positive rescaling in decoded space leaves the loss unchanged
    Rng rng(3);
    Tensor<double> pred({1, 1, n, 3}), scaled({1, 1, n, 3});
    for (int i = 0; i < n; ++i) {
        double x = rng.normal(), y = rng.normal(), z = rng.normal();
        put_normal(pred, i, x, y, z);
        put_normal(scaled, i, 2.7 * x, 2.7 * y, 2.7 * z);
        Tensor<double> g({1, 1, 1, 3});
        (void)g;
    }
    double a = loss_normal(constant(pred), gt, mask)->val.v[0];
    double b = loss_normal(constant(scaled), gt, mask)->val.v[0];
    CHECK(a == doctest::Approx(b).epsilon(1e-9));
    CHECK(a >= 0.0);
    CHECK(a <= 2.0);
}

TEST_CASE("cosine loss gradient matches finite differences") {
    Rng rng(4);
    const int n = 6;
    Tensor<double> mask({1, 1, n, 1});
    for (int i = 0; i < n; ++i) mask.v[i] = (i % 2 == 0) ? 1.0 : 0.0;  // exercise masking
    Tensor<double> gt({1, 1, n, 3}), pred({1, 1, n, 3});
    for (int i = 0; i < n; ++i) {
        Vec3 g = normalize({rng.normal(), rng.normal(), rng.normal()});
        put_normal(gt, i, g.x, g.y, g.z);
        put_normal(pred, i, rng.normal(), rng.normal(), rng.normal());
    }
    auto pv = leaf(pred);
    auto loss = loss_normal(pv, gt, mask);
    backward(loss);
    for (std::int64_t i = 0; i < pred.numel(); i += 2) {
        double h = 1e-7, orig = pred.v[i];
        pred.v[i] = orig + h;
        double lp = loss_normal(constant(pred), gt, mask)->val.v[0];
        pred.v[i] = orig - h;
        double lm = loss_normal(constant(pred), gt, mask)->val.v[0];
        pred.v[i] = orig;
        double fd = (lp - lm) / (2 * h);
        double an = pv->has_grad() ? pv->grad.v[i] : 0.0;
        CHECK(std::abs(an - fd) < 1e-5 * std::max(1.0, std::abs(fd)));
    }
}

TEST_CASE("albedo and material losses") {
    Rng rng(5);
    Tensor<double> gt({1, 8, 8, 3});
    for (auto& x : gt.v) x = rng.uniform(0, 1);
    CHECK(loss_albedo(constant(gt), constant(gt))->val.v[0] == 0.0);
    CHECK(loss_material(constant(gt), constant(gt))->val.v[0] == 0.0);

    Tensor<double> off = gt;
    for (auto& x : off.v) x += 0.2;
    CHECK(loss_material(constant(off), constant(gt))->val.v[0] == doctest::Approx(0.2).epsilon(1e-9));
    // constant offsets keep the proxy's gradient terms silent but not the L1 terms
    double la = loss_albedo(constant(off), constant(gt))->val.v[0];
    CHECK(la == doctest::Approx(0.2 + 3 * 0.2).epsilon(1e-6));  // L1 + proxy L1 at 3 scales
}

TEST_CASE("inverse_forward output shapes follow the modality") {
    RenderFlowNet<double> net(tiny_cfg(), 31);
    Rng rng(6);
    auto make_zt = [&](int c) {
        Tensor<double> t({2, 8, 8, c});
        for (auto& x : t.v) x = rng.uniform(0, 1);
        return t;
    };
    CHECK(net.inverse_forward(make_zt(3), Modality::albedo, 0.25)->val.shape ==
          std::vector<int>{2, 8, 8, 3});
    CHECK(net.inverse_forward(make_zt(3), Modality::normal, 0.25)->val.shape ==
          std::vector<int>{2, 8, 8, 3});
    CHECK(net.inverse_forward(make_zt(1), Modality::depth, 0.25)->val.shape ==
          std::vector<int>{2, 8, 8, 1});
    CHECK(net.inverse_forward(make_zt(3), Modality::material, 0.25)->val.shape ==
          std::vector<int>{2, 8, 8, 3});
    CHECK_THROWS_AS(net.inverse_forward(make_zt(2), Modality::albedo, 0.25), std::invalid_argument);
}

TEST_CASE("at init the adapter paths contribute nothing to the trunk") {
    RenderFlowNet<double> net(tiny_cfg(), 37);
    Rng rng(7);
    Tensor<double> zt({1, 8, 8, 3});
    for (auto& x : zt.v) x = rng.uniform(0, 1);
    auto base_out = net.inverse_forward(zt, Modality::albedo, 0.25);

    // LoRA B = 0 and prompt output projection = 0, so scrambling the A
    // matrices and the prompt q/k/v projections cannot change anything.
    for (const auto& name : {"blk0.inv.lq.a", "blk0.inv.lk.a", "blk0.inv.lv.a", "blk1.inv.lq.a",
                             "blk0.inv.p.q.w", "blk0.inv.p.k.w", "blk0.inv.p.v.w", "prompt.albedo"})
        for (auto& x : net.params.get(name)->val.v) x += 0.5;
    auto same = net.inverse_forward(zt, Modality::albedo, 0.25);
    CHECK(same->val.v == base_out->val.v);
}

TEST_CASE("switching modality changes prompt tokens and head only, but changes outputs") {
    RenderFlowNet<double> net(tiny_cfg(), 41);
    randomize_params(net, 77);
    Rng rng(8);
    Tensor<double> zt({1, 8, 8, 3});
    for (auto& x : zt.v) x = rng.uniform(0, 1);
    auto a = net.inverse_forward(zt, Modality::albedo, 0.25);
    auto n = net.inverse_forward(zt, Modality::normal, 0.25);
    double diff = 0.0;
    for (std::int64_t i = 0; i < a->val.numel(); ++i) diff += std::abs(a->val.v[i] - n->val.v[i]);
    CHECK(diff > 0.0);
}

TEST_CASE("prompt isolation: modality A batches never touch modality B parameters") {
    RenderFlowNet<double> net(tiny_cfg(), 43);
    randomize_params(net, 78);
    net.params.set_trainable({ParamGroup::inverse_adapter});
    Rng rng(9);
    Tensor<double> zt({1, 8, 8, 3});
    for (auto& x : zt.v) x = rng.uniform(0, 1);
    auto out = net.inverse_forward(zt, Modality::albedo, 0.25);
    net.params.zero_grads();
    backward(mean_all(mul(out, out)));

    auto grad_abs = [&](const std::string& name) {
        const auto& v = net.params.get(name);
        if (!v->has_grad()) return 0.0;
        double s = 0.0;
        for (auto x : v->grad.v) s += std::abs(x);
        return s;
    };
    CHECK(grad_abs("prompt.albedo") > 0.0);
    CHECK(grad_abs("ihead.albedo.fc1.w") > 0.0);
    CHECK(grad_abs("prompt.normal") == 0.0);
    CHECK(grad_abs("ihead.normal.fc1.w") == 0.0);
    CHECK(grad_abs("ihead.depth.fc2.w") == 0.0);
    CHECK(grad_abs("ihead.material.fc1.w") == 0.0);
}

TEST_CASE("train_inverse keeps frozen groups at exactly zero gradient") {
    Dataset ds = tiny_dataset(2);
    RenderFlowNet<float> net(tiny_cfg(), 47);
    InverseConfig cfg;
    cfg.steps = 6;
    cfg.batch = 1;
    cfg.clip_frames = 2;
    cfg.lr = 1e-3;
    auto out = train_inverse(net, ds, cfg, "", "");
    CHECK(out.loss_history.size() == 6);
    CHECK(out.max_frozen_grad_norm == 0.0);
    for (double l : out.loss_history) CHECK(std::isfinite(l));
}

TEST_CASE("inverse checkpoints record and verify the frozen forward hash") {
    Dataset ds = tiny_dataset(2);
    RenderFlowNet<float> net(tiny_cfg(), 53);
    InverseConfig cfg;
    cfg.steps = 2;
    cfg.batch = 1;
    cfg.clip_frames = 2;
    auto dir = (std::filesystem::temp_directory_path() / "rf_inverse_ck").string();
    std::filesystem::remove_all(dir);
    auto out = train_inverse(net, ds, cfg, dir, "deadbeefdeadbeef");

    CheckpointHeader h = peek_checkpoint(out.final_checkpoint);
    CHECK(h.stage == "inverse");
    CHECK(h.forward_hash == "deadbeefdeadbeef");
    for (const auto& item : h.manifest) CHECK(item.group == "inverse_adapter");

    RenderFlowNet<float> other(tiny_cfg(), 53);
    CHECK_THROWS_AS(load_inverse_checkpoint(out.final_checkpoint, other, "0000000000000000"),
                    corrupt_file_error);
    CHECK_NOTHROW(load_inverse_checkpoint(out.final_checkpoint, other, "deadbeefdeadbeef"));
    std::filesystem::remove_all(dir);
}

TEST_CASE("inverse_predict emits clamped intrinsics in every modality") {
    Dataset ds = tiny_dataset(1);
    RenderFlowNet<float> net(tiny_cfg(), 59);
    for (Modality m : all_modalities()) {
        Tensor<float> pred = inverse_predict(net, ds.train[0], 0, 2, m);
        CHECK(pred.dim(3) == modality_channels(m));
        for (auto x : pred.v) {
            CHECK(x >= 0.0f);
            CHECK(x <= 1.0f);
        }
    }
}
