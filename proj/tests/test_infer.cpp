#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "renderflow/infer.hpp"
#include "renderflow/png.hpp"

using namespace rf;

namespace {

SynthConfig tiny_synth(int frames) {
    SynthConfig s;
    s.frames = frames;
    s.res_h = 16;
    s.res_w = 16;
    s.env_h = 8;
    s.env_w = 8;
    s.n_objects = 2;
    return s;
}

// Bridge-consistent oracle: returns (z1 - zt)/(1 - t) for the chunk frames.
VelocityFn<double> oracle_for(const Sequence& seq) {
    return [&seq](const RenderFlowNet<double>::ClipInputs& in) {
        const int f = in.zt.dim(0), h = in.zt.dim(1), w = in.zt.dim(2);
        Tensor<double> z1({f, h, w, 3});
        std::int64_t off = 0;
        for (int i = 0; i < f; ++i) {
            const Image& ref = seq.frames[static_cast<size_t>(in.frame_indices[static_cast<size_t>(i)])].reference;
            for (float v : ref.v) z1.v[off++] = v;
        }
        return velocity_target(z1, in.zt, in.t);
    };
}

double max_abs_error(const std::vector<Image>& a, const Sequence& seq) {
    double worst = 0.0;
    for (size_t i = 0; i < a.size(); ++i)
        for (size_t j = 0; j < a[i].v.size(); ++j)
            worst = std::max(worst,
                             std::abs(static_cast<double>(a[i].v[j]) - seq.frames[i].reference.v[j]));
    return worst;
}

InferConfig cfg_with(int steps, InferMode mode) {
    InferConfig c;
    c.steps = steps;
    c.mode = mode;
    c.sde_sigma = 0.0;
    return c;
}

NetConfig tiny_net_cfg() {
    NetConfig c;
    c.patch = 4;
    c.dim = 16;
    c.depth = 1;
    c.heads = 2;
    c.ffn_mult = 2.0;
    c.lora_rank = 2;
    c.env_patch = 4;
    c.prompt_tokens = 2;
    return c;
}

}  // namespace

TEST_CASE("chunk_starts covers the sequence with a pinned final chunk") {
    CHECK(chunk_starts(13, 5, 1) == std::vector<int>{0, 4, 8});
    CHECK(chunk_starts(5, 5, 1) == std::vector<int>{0});
    CHECK(chunk_starts(3, 5, 1) == std::vector<int>{0});
    CHECK(chunk_starts(12, 5, 1) == std::vector<int>{0, 4, 7});
    CHECK(chunk_starts(9, 5, 2) == std::vector<int>{0, 3, 4});
}

TEST_CASE("oracle inference reproduces the reference for every step count and mode") {
    Sequence seq = synth_sequence(21, tiny_synth(5));
    auto fn = oracle_for(seq);
    for (int steps : {1, 2, 4}) {
        auto r = render_clip(fn, seq, cfg_with(steps, InferMode::ode));
        REQUIRE(r.images.size() == 5);
        CHECK(max_abs_error(r.images, seq) <= 1e-5);
    }
    auto sde = render_clip(fn, seq, cfg_with(4, InferMode::sde));
    CHECK(max_abs_error(sde.images, seq) <= 1e-5);
}

TEST_CASE("oracle progressive inference reproduces a 13-frame sequence") {
    Sequence seq = synth_sequence(22, tiny_synth(13));
    auto fn = oracle_for(seq);
    InferConfig cfg = cfg_with(1, InferMode::ode);
    auto r = render_progressive(fn, seq, cfg);
    REQUIRE(r.images.size() == 13);
    CHECK(max_abs_error(r.images, seq) <= 1e-5);

    // degenerate: length == chunk behaves exactly like render_clip
    Sequence five = synth_sequence(23, tiny_synth(5));
    auto fn5 = oracle_for(five);
    auto a = render_clip(fn5, five, cfg);
    auto b = render_progressive(fn5, five, cfg);
    for (size_t i = 0; i < a.images.size(); ++i) CHECK(a.images[i].v == b.images[i].v);
}

TEST_CASE("render_clip rejects sequences longer than a chunk") {
    Sequence seq = synth_sequence(24, tiny_synth(7));
    auto fn = oracle_for(seq);
    CHECK_THROWS_AS(render_clip(fn, seq, cfg_with(1, InferMode::ode)), std::invalid_argument);
}

TEST_CASE("outputs are clamped to [0,1]") {
    Sequence seq = synth_sequence(25, tiny_synth(2));
    VelocityFn<double> big = [](const RenderFlowNet<double>::ClipInputs& in) {
        return Tensor<double>(in.zt.shape, 40.0);
    };
    auto r = render_clip(big, seq, cfg_with(1, InferMode::ode));
    for (const auto& img : r.images)
        for (float v : img.v) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
}

TEST_CASE("ODE-mode model inference is bitwise deterministic across seeds and runs") {
    Sequence seq = synth_sequence(26, tiny_synth(3));
    RenderFlowNet<float> net(tiny_net_cfg(), 44);
    Rng rng(9);
    for (const auto& e : net.params.entries())
        for (auto& x : e.var->val.v) x = static_cast<float>(rng.normal() * 0.05);
    auto fn = model_velocity_fn(net);
    InferConfig a = cfg_with(4, InferMode::ode);
    a.rng_seed = 1;
    InferConfig b = a;
    b.rng_seed = 2;
    auto ra = render_clip(fn, seq, a);
    auto rb = render_clip(fn, seq, b);
    for (size_t i = 0; i < ra.images.size(); ++i) CHECK(ra.images[i].v == rb.images[i].v);

    // and SDE mode with sigma > 0 depends on the seed
    InferConfig sa = cfg_with(4, InferMode::sde);
    sa.sde_sigma = 0.2;
    sa.rng_seed = 1;
    InferConfig sb = sa;
    sb.rng_seed = 2;
    auto rsa = render_clip(fn, seq, sa);
    auto rsb = render_clip(fn, seq, sb);
    double diff = 0.0;
    for (size_t i = 0; i < rsa.images.size(); ++i)
        for (size_t j = 0; j < rsa.images[i].v.size(); ++j)
            diff += std::abs(rsa.images[i].v[j] - rsb.images[i].v[j]);
    CHECK(diff > 0.0);
}

TEST_CASE("keyframe guidance requires a stage-2 checkpoint") {
    Sequence seq = synth_sequence(27, tiny_synth(6));
    auto fn = oracle_for(seq);
    InferConfig cfg = cfg_with(1, InferMode::ode);
    Tensor<double> keys = gather_keyframes<double>(seq, {0, 3});
    std::vector<int> idx{0, 3};
    CHECK_THROWS_AS(render_with_keyframes(fn, seq, keys, idx, cfg, "base"),
                    unsupported_configuration);
    auto ok = render_with_keyframes(fn, seq, keys, idx, cfg, "keyframe");
    CHECK(ok.images.size() == 6);
    std::vector<int> bad{0, 99};
    CHECK_THROWS_AS(render_with_keyframes(fn, seq, keys, bad, cfg, "keyframe"),
                    std::invalid_argument);
}

TEST_CASE("material edit demo: monotone highlight and hue statistics in the references") {
    SynthConfig synth = tiny_synth(5);
    synth.res_h = 32;
    synth.res_w = 32;
    synth.env_h = 8;
    synth.env_w = 16;
    synth.n_objects = 1;
    synth.orbit_arc_deg = 0.0;  // hold the camera still so only the material moves

    // roughness 1 -> 0 sharpens the specular highlight monotonically
    MaterialInterp rough;
    rough.object = "obj0";
    rough.param = "roughness";
    rough.from = {1.0, 0, 0};
    rough.to = {0.0, 0, 0};
    InferConfig icfg = cfg_with(1, InferMode::ode);

    Sequence probe = synth_sequence(15, synth);
    auto fn = oracle_for(probe);
    auto demo = material_edit_demo(fn, 15, rough, synth, icfg);
    REQUIRE(demo.render.images.size() == 5);
    REQUIRE(demo.reference.size() == 5);
    CHECK(demo.param_values[0] == doctest::Approx(1.0));
    CHECK(demo.param_values[2] == doctest::Approx(0.5));
    CHECK(demo.param_values[4] == doctest::Approx(0.0));

    // statistic over the edited object's pixels only (identified by its fixed
    // metallic/specular pair; the ground plane keeps different values)
    SceneSpec scene = gen_scene(Rng::derive(15, 1), 1);
    const float m0 = static_cast<float>(scene.objects[0].metallic);
    const float s0 = static_cast<float>(scene.objects[0].specular);
    auto peak_luma = [&](const Image& img, const Image& mat) {
        float mx = 0.0f;
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x)
                if (std::abs(mat.at(y, x, 1) - m0) < 1e-6f && std::abs(mat.at(y, x, 2) - s0) < 1e-6f)
                    mx = std::max(mx, (img.at(y, x, 0) + img.at(y, x, 1) + img.at(y, x, 2)) / 3.0f);
        return mx;
    };
    std::vector<float> peaks;
    for (int f = 0; f < 5; ++f)
        peaks.push_back(peak_luma(demo.sequence.frames[static_cast<size_t>(f)].reference,
                                  demo.sequence.frames[static_cast<size_t>(f)].g.material));
    for (int f = 1; f < 5; ++f) CHECK(peaks[static_cast<size_t>(f)] > peaks[static_cast<size_t>(f - 1)]);

    // albedo blue -> green moves the mean G-B statistic monotonically
    MaterialInterp hue;
    hue.object = "obj0";
    hue.param = "albedo";
    hue.from = {0.0, 0.0, 1.0};
    hue.to = {0.0, 1.0, 0.0};
    auto demo2 = material_edit_demo(fn, 15, hue, synth, icfg);
    std::vector<double> gb;
    for (int f = 0; f < 5; ++f) {
        const Image& ref = demo2.sequence.frames[static_cast<size_t>(f)].reference;
        const Image& mask = demo2.sequence.frames[static_cast<size_t>(f)].g.hit_mask;
        double acc = 0.0;
        int n = 0;
        for (int y = 0; y < ref.h; ++y)
            for (int x = 0; x < ref.w; ++x)
                if (mask.at(y, x, 0) > 0.5f) {
                    acc += ref.at(y, x, 1) - ref.at(y, x, 2);
                    ++n;
                }
        gb.push_back(acc / n);
    }
    for (int f = 1; f < 5; ++f) CHECK(gb[static_cast<size_t>(f)] > gb[static_cast<size_t>(f - 1)]);

    // unknown edit targets propagate scene-forge errors
    MaterialInterp bad = rough;
    bad.object = "nosuch";
    CHECK_THROWS_AS(material_edit_demo(fn, 15, bad, synth, icfg), std::invalid_argument);
}

TEST_CASE("PNG round trip is exact at 8-bit resolution and rejects corruption") {
    Rng rng(5);
    Image img(9, 13, 3);
    for (auto& v : img.v) v = static_cast<float>(rng.uniform(0, 1));
    std::string path = (std::filesystem::temp_directory_path() / "rf_test.png").string();
    write_png(img, path);
    Image back = read_png(path);
    REQUIRE(back.h == img.h);
    REQUIRE(back.w == img.w);
    for (size_t i = 0; i < img.v.size(); ++i) {
        float quantized = std::round(std::min(1.0f, std::max(0.0f, img.v[i])) * 255.0f) / 255.0f;
        CHECK(std::abs(back.v[i] - quantized) < 1e-6f);
    }
    // identical pixels give identical bytes
    std::string path2 = (std::filesystem::temp_directory_path() / "rf_test2.png").string();
    write_png(img, path2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);

    std::ofstream bad((std::filesystem::temp_directory_path() / "rf_bad.png").string(),
                      std::ios::binary);
    bad << "not a png";
    bad.close();
    CHECK_THROWS_AS(read_png((std::filesystem::temp_directory_path() / "rf_bad.png").string()),
                    corrupt_file_error);
}

TEST_CASE("side_by_side stitches model and reference frames") {
    Image a(4, 3, 3, 0.25f), b(4, 5, 3, 0.75f);
    Image s = side_by_side(a, b);
    CHECK(s.w == 8);
    CHECK(s.at(0, 0, 0) == 0.25f);
    CHECK(s.at(0, 3, 0) == 0.75f);
}
