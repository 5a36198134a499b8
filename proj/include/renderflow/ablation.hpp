#pragma once

#include <json.hpp>

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "renderflow/infer.hpp"
#include "renderflow/inverse.hpp"
#include "renderflow/metrics.hpp"
#include "renderflow/train.hpp"

namespace rf {

// ---------------------------------------------------------------------------
// Ablation runner. Reproduces the comparison structure of the study tables at
// desk scale: every row of a suite shares one seed and one training budget,
// and the perceptual column is the documented proxy, never a learned metric.
// ---------------------------------------------------------------------------

struct AblationRow {
    std::string name;
    double psnr = 0.0, ssim = 0.0, proxy = 0.0;
    double psnr_non_keyframe = std::numeric_limits<double>::quiet_NaN();
    nlohmann::json extra;
};

struct DirectionCheck {
    std::string name;
    double lhs = 0.0, rhs = 0.0;
    bool pass = false;
};

struct AblationTable {
    std::string suite;
    std::uint64_t seed = 0;
    std::vector<AblationRow> rows;
    std::vector<DirectionCheck> directions;
    std::string note = "perceptual column is multi_scale_gradient_proxy (not LPIPS); "
                       "paper LPIPS values are never compared";

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["suite"] = suite;
        j["seed"] = seed;
        j["note"] = note;
        j["rows"] = nlohmann::json::array();
        for (const auto& r : rows) {
            nlohmann::json row{{"name", r.name},
                               {"psnr", std::isinf(r.psnr) ? nlohmann::json("inf") : nlohmann::json(r.psnr)},
                               {"ssim", r.ssim},
                               {"perceptual_proxy", r.proxy}};
            if (!std::isnan(r.psnr_non_keyframe)) row["psnr_non_keyframe"] = r.psnr_non_keyframe;
            if (!r.extra.is_null()) row["extra"] = r.extra;
            j["rows"].push_back(row);
        }
        j["direction_checks"] = nlohmann::json::array();
        for (const auto& d : directions)
            j["direction_checks"].push_back(
                {{"name", d.name}, {"lhs", d.lhs}, {"rhs", d.rhs}, {"pass", d.pass}});
        return j;
    }

    std::string to_csv() const {
        std::ostringstream os;
        os << "name,psnr,ssim,perceptual_proxy,psnr_non_keyframe\n";
        for (const auto& r : rows) {
            os << '"' << r.name << "\"," << r.psnr << "," << r.ssim << "," << r.proxy << ",";
            if (!std::isnan(r.psnr_non_keyframe)) os << r.psnr_non_keyframe;
            os << "\n";
        }
        return os.str();
    }

    std::string to_text() const {
        size_t w = 10;
        for (const auto& r : rows) w = std::max(w, r.name.size());
        std::ostringstream os;
        os << suite << " (seed " << seed << ")\n";
        os << std::string(w, '-') << "  --------  --------  --------\n";
        char buf[160];
        for (const auto& r : rows) {
            std::snprintf(buf, sizeof(buf), "%-*s  %8.3f  %8.4f  %8.4f\n", static_cast<int>(w),
                          r.name.c_str(), r.psnr, r.ssim, r.proxy);
            os << buf;
        }
        for (const auto& d : directions) {
            std::snprintf(buf, sizeof(buf), "[%s] %s (%.3f vs %.3f)\n", d.pass ? "ok" : "x",
                          d.name.c_str(), d.lhs, d.rhs);
            os << buf;
        }
        os << "note: " << note << "\n";
        return os.str();
    }
};

struct AblationBudget {
    NetConfig net;
    std::uint64_t seed = 0;
    int train_steps = 60;
    int stage2_steps = 40;
    int batch = 1;
    double lr = 1e-3;
    int clip_frames = 3;
    int stage2_keyframe_gap = 4;
    InferConfig infer;  // chunk/overlap defaults for evaluation
};

namespace detail {

template <class T>
MetricReport eval_model(const VelocityFn<T>& fn, const std::vector<Sequence>& eval_set,
                        const InferConfig& cfg, const Tensor<T>* keys = nullptr,
                        const std::vector<int>* key_idx = nullptr) {
    MetricReport agg;
    for (const auto& seq : eval_set) {
        RenderResult r = (static_cast<int>(seq.frames.size()) <= cfg.chunk_frames && !cfg.use_keyframes)
                             ? render_clip(fn, seq, cfg)
                             : render_progressive(fn, seq, cfg, keys, key_idx);
        std::vector<Image> gt;
        for (const auto& fr : seq.frames) gt.push_back(fr.reference);
        MetricReport m = compare_clips(r.images, gt);
        agg.psnr += m.psnr;
        agg.ssim += m.ssim;
        agg.proxy += m.proxy;
        for (auto& fm : m.frames) agg.frames.push_back(fm);
    }
    agg.psnr /= static_cast<double>(eval_set.size());
    agg.ssim /= static_cast<double>(eval_set.size());
    agg.proxy /= static_cast<double>(eval_set.size());
    return agg;
}

// Per-frame PSNR aggregates split by keyframe membership.
template <class T>
std::pair<double, double> eval_gap_psnr(const VelocityFn<T>& fn, const std::vector<Sequence>& eval_set,
                                        const InferConfig& cfg) {
    double all = 0.0, non_kf = 0.0;
    int n_all = 0, n_non = 0;
    for (const auto& seq : eval_set) {
        RenderResult r = render_progressive(fn, seq, cfg);
        std::vector<int> kf = cfg.use_keyframes
                                  ? keyframe_indices_for(static_cast<int>(seq.frames.size()), cfg.keyframe_gap)
                                  : std::vector<int>{};
        for (size_t i = 0; i < r.images.size(); ++i) {
            double p = psnr(r.images[i], seq.frames[i].reference);
            all += p;
            ++n_all;
            bool is_kf = false;
            for (int k : kf)
                if (k == static_cast<int>(i)) is_kf = true;
            if (!is_kf) {
                non_kf += p;
                ++n_non;
            }
        }
    }
    return {all / n_all, n_non ? non_kf / n_non : all / n_all};
}

inline TrainConfig budget_train(const AblationBudget& b, TrainStage stage) {
    TrainConfig tc;
    tc.stage = stage;
    tc.steps = stage == TrainStage::base ? b.train_steps : b.stage2_steps;
    tc.batch = b.batch;
    tc.lr = b.lr;
    tc.warmup_steps = std::min(10, tc.steps / 4);
    tc.clip_frames = b.clip_frames;
    tc.seed = b.seed;
    tc.keyframe_gap = b.stage2_keyframe_gap;
    tc.checkpoint_every = 0;
    return tc;
}

}  // namespace detail

// Training-strategy rows (timestep schedule x ODE/SDE x inference steps).
template <class T>
AblationTable ablate_schedules(const Dataset& ds, const std::vector<Sequence>& eval_set,
                               const AblationBudget& budget) {
    AblationTable table;
    table.suite = "schedules";
    table.seed = budget.seed;

    struct TrainVariant {
        std::string key;
        TimestepSchedule sched;
        double sigma;
    };
    const std::vector<TrainVariant> variants{{"uniform_sde", TimestepSchedule::uniform, 0.005},
                                             {"discrete_ode", TimestepSchedule::discrete4, 0.0},
                                             {"discrete_sde", TimestepSchedule::discrete4, 0.005}};
    std::map<std::string, std::unique_ptr<RenderFlowNet<T>>> nets;
    for (const auto& v : variants) {
        auto net = std::make_unique<RenderFlowNet<T>>(budget.net, budget.seed);
        TrainConfig tc = detail::budget_train(budget, TrainStage::base);
        tc.bridge.schedule = v.sched;
        tc.bridge.sigma = v.sigma;
        train_stage1(*net, ds, tc, "");
        nets[v.key] = std::move(net);
    }

    struct Row {
        std::string name, net;
        InferMode mode;
        int steps;
    };
    const std::vector<Row> rows{{"Uniform SDE (4 steps)", "uniform_sde", InferMode::sde, 4},
                                {"4 timesteps ODE (4 steps)", "discrete_ode", InferMode::ode, 4},
                                {"4 timesteps ODE (1 step)", "discrete_ode", InferMode::ode, 1},
                                {"4 timesteps SDE (4 steps)", "discrete_sde", InferMode::sde, 4},
                                {"4 timesteps SDE (1 step)", "discrete_sde", InferMode::sde, 1}};
    for (const auto& r : rows) {
        auto fn = model_velocity_fn(*nets[r.net]);
        InferConfig cfg = budget.infer;
        cfg.mode = r.mode;
        cfg.steps = r.steps;
        cfg.sde_sigma = 0.005;
        MetricReport m = detail::eval_model(fn, eval_set, cfg);
        table.rows.push_back({r.name, m.psnr, m.ssim, m.proxy,
                              std::numeric_limits<double>::quiet_NaN(),
                              {{"trained_on", r.net}, {"steps", r.steps}}});
    }
    const auto& one = table.rows[4];
    const auto& four = table.rows[3];
    table.directions.push_back({"sde 1-step >= sde 4-step (reported trend)", one.psnr, four.psnr,
                                one.psnr >= four.psnr});
    return table;
}

// Pixel-loss rows: which terms accompany the latent loss.
template <class T>
AblationTable ablate_pixel_losses(const Dataset& ds, const std::vector<Sequence>& eval_set,
                                  const AblationBudget& budget) {
    AblationTable table;
    table.suite = "pixel_losses";
    table.seed = budget.seed;
    struct Row {
        std::string name;
        double lambda;
        PixelLossMode mode;
    };
    const std::vector<Row> rows{
        {"L_latent only", 0.0, PixelLossMode::none},
        {"L_latent + L_proxy", 1.0, PixelLossMode::proxy_only},
        {"L_latent + L_proxy + L_grad", 1.0, PixelLossMode::proxy_and_grad}};
    for (const auto& r : rows) {
        RenderFlowNet<T> net(budget.net, budget.seed);
        TrainConfig tc = detail::budget_train(budget, TrainStage::base);
        tc.lambda_pixel = r.lambda;
        tc.pixel_mode = r.mode;
        train_stage1(net, ds, tc, "");
        auto fn = model_velocity_fn(net);
        MetricReport m = detail::eval_model(fn, eval_set, budget.infer);
        table.rows.push_back({r.name, m.psnr, m.ssim, m.proxy,
                              std::numeric_limits<double>::quiet_NaN(),
                              {{"lambda", r.lambda}}});
    }
    table.directions.push_back({"pixel losses >= latent only (reported trend)",
                                table.rows[2].psnr, table.rows[0].psnr,
                                table.rows[2].psnr >= table.rows[0].psnr});
    return table;
}

// Keyframe-adapter design rows over a shared stage-1 base.
template <class T>
AblationTable ablate_keyframe_designs(const Dataset& ds, const std::vector<Sequence>& eval_set,
                                      const AblationBudget& budget) {
    AblationTable table;
    table.suite = "keyframe_designs";
    table.seed = budget.seed;

    // shared stage-1 base
    RenderFlowNet<T> base(budget.net, budget.seed);
    TrainConfig tc1 = detail::budget_train(budget, TrainStage::base);
    std::string tmp = (std::filesystem::temp_directory_path() /
                       ("rf_ablate_base_" + std::to_string(budget.seed))).string();
    std::filesystem::remove_all(tmp);
    auto base_out = train_stage1(base, ds, tc1, tmp);

    struct Variant {
        std::string key;
        KeyframeVariant q;
        bool lora;
    };
    const std::vector<Variant> variants{{"reused", KeyframeVariant::reused_query, false},
                                        {"dedicated", KeyframeVariant::dedicated_query, false},
                                        {"dedicated_lora", KeyframeVariant::dedicated_query, true}};
    std::map<std::string, std::unique_ptr<RenderFlowNet<T>>> nets;
    for (const auto& v : variants) {
        NetConfig nc = budget.net;
        nc.keyframe_variant = v.q;
        nc.keyframe_ffn_lora = v.lora;
        auto net = std::make_unique<RenderFlowNet<T>>(nc, budget.seed);
        load_checkpoint_groups(base_out.final_checkpoint, *net,
                               {ParamGroup::base, ParamGroup::envmap_adapter});
        TrainConfig tc2 = detail::budget_train(budget, TrainStage::keyframe);
        train_stage2(*net, ds, tc2, "");
        nets[v.key] = std::move(net);
    }
    std::filesystem::remove_all(tmp);

    auto base_fn = model_velocity_fn(base);
    InferConfig plain = budget.infer;
    plain.progressive_ref = false;
    InferConfig vace = budget.infer;  // ref propagation on

    auto add_row = [&](const std::string& name, const MetricReport& m, nlohmann::json extra) {
        table.rows.push_back(
            {name, m.psnr, m.ssim, m.proxy, std::numeric_limits<double>::quiet_NaN(), extra});
    };
    add_row("w/o Keyframes", detail::eval_model(base_fn, eval_set, plain), {{"model", "stage1"}});
    add_row("VACE progressive", detail::eval_model(base_fn, eval_set, vace), {{"model", "stage1"}});

    auto eval_kf = [&](const std::string& key, bool progressive) {
        auto fn = model_velocity_fn(*nets[key]);
        InferConfig cfg = progressive ? vace : plain;
        cfg.use_keyframes = true;
        cfg.keyframe_gap = budget.infer.keyframe_gap;
        return detail::eval_model(fn, eval_set, cfg);
    };
    add_row("Reused Query w/o ffn lora", eval_kf("reused", false), {{"model", "reused"}});
    add_row("Dedicated Query w/o ffn lora", eval_kf("dedicated", false), {{"model", "dedicated"}});
    add_row("Dedicated Query w/ ffn lora", eval_kf("dedicated_lora", false),
            {{"model", "dedicated_lora"}});
    add_row("Ours + VACE progressive", eval_kf("dedicated_lora", true), {{"model", "dedicated_lora"}});

    table.directions.push_back({"dedicated+lora >= reused (reported trend)", table.rows[4].psnr,
                                table.rows[2].psnr, table.rows[4].psnr >= table.rows[2].psnr});
    table.directions.push_back({"keyframes >= no keyframes (reported trend)", table.rows[4].psnr,
                                table.rows[0].psnr, table.rows[4].psnr >= table.rows[0].psnr});
    return table;
}

// Keyframe-gap study on a stage-2 model; reports all-frame and
// non-keyframe-only PSNR aggregates.
template <class T>
AblationTable ablate_keyframe_gaps(RenderFlowNet<T>& stage2_net, const std::vector<Sequence>& long_eval,
                                   const AblationBudget& budget) {
    AblationTable table;
    table.suite = "keyframe_gaps";
    table.seed = budget.seed;
    auto fn = model_velocity_fn(stage2_net);

    InferConfig off = budget.infer;
    off.use_keyframes = false;
    auto [all0, non0] = detail::eval_gap_psnr(fn, long_eval, off);
    MetricReport m0 = detail::eval_model(fn, long_eval, off);
    table.rows.push_back({"w/o keyframes", m0.psnr, m0.ssim, m0.proxy, non0, {}});
    (void)all0;

    for (int gap : {13, 17, 25, 49}) {
        InferConfig cfg = budget.infer;
        cfg.use_keyframes = true;
        cfg.keyframe_gap = gap;
        MetricReport m = detail::eval_model(fn, long_eval, cfg);
        auto [all, non] = detail::eval_gap_psnr(fn, long_eval, cfg);
        (void)all;
        table.rows.push_back({std::to_string(gap) + " Gap", m.psnr, m.ssim, m.proxy, non,
                              {{"gap", gap}}});
    }
    table.directions.push_back({"psnr(13 gap) >= psnr(49 gap) (reported trend)", table.rows[1].psnr,
                                table.rows[4].psnr, table.rows[1].psnr >= table.rows[4].psnr});
    table.directions.push_back({"keyframes >= no keyframes (reported trend)", table.rows[1].psnr,
                                table.rows[0].psnr, table.rows[1].psnr >= table.rows[0].psnr});
    return table;
}

// Inference-step analysis over one trained model.
template <class T>
AblationTable ablate_inference_steps(RenderFlowNet<T>& net, const std::vector<Sequence>& eval_set,
                                     const AblationBudget& budget) {
    AblationTable table;
    table.suite = "inference_steps";
    table.seed = budget.seed;
    auto fn = model_velocity_fn(net);
    for (InferMode mode : {InferMode::ode, InferMode::sde})
        for (int steps : {1, 2, 4}) {
            InferConfig cfg = budget.infer;
            cfg.mode = mode;
            cfg.steps = steps;
            MetricReport m = detail::eval_model(fn, eval_set, cfg);
            std::string name = std::string(mode == InferMode::ode ? "ODE" : "SDE") + " (" +
                               std::to_string(steps) + (steps == 1 ? " step)" : " steps)");
            table.rows.push_back({name, m.psnr, m.ssim, m.proxy,
                                  std::numeric_limits<double>::quiet_NaN(),
                                  {{"steps", steps}}});
        }
    table.directions.push_back({"1-step >= 4-step (reported trend)", table.rows[0].psnr,
                                table.rows[2].psnr, table.rows[0].psnr >= table.rows[2].psnr});
    return table;
}

// Entry point. Synthesizes its own desk-scale datasets from the budget seed
// (every row set shares the seed) and dispatches on the suite name.
template <class T>
AblationTable run_ablation(const std::string& suite, const AblationBudget& budget,
                           const SynthConfig& synth) {
    Dataset ds;
    for (int i = 0; i < 6; ++i)
        ds.train.push_back(synth_sequence(Rng::derive(budget.seed, 7000 + static_cast<std::uint64_t>(i)), synth));
    std::vector<Sequence> eval_set;
    for (int i = 0; i < 2; ++i)
        eval_set.push_back(synth_sequence(Rng::derive(budget.seed, 8000 + static_cast<std::uint64_t>(i)), synth));

    if (suite == "schedules") return ablate_schedules<T>(ds, eval_set, budget);
    if (suite == "pixel_losses") return ablate_pixel_losses<T>(ds, eval_set, budget);
    if (suite == "keyframe_designs") return ablate_keyframe_designs<T>(ds, eval_set, budget);
    if (suite == "keyframe_gaps" || suite == "inference_steps") {
        // both need a trained model; gaps additionally need long sequences
        SynthConfig long_synth = synth;
        long_synth.frames = (suite == "keyframe_gaps") ? 50 : synth.frames;
        Dataset ds2;
        for (int i = 0; i < 4; ++i)
            ds2.train.push_back(
                synth_sequence(Rng::derive(budget.seed, 7100 + static_cast<std::uint64_t>(i)), long_synth));
        std::vector<Sequence> eval2;
        eval2.push_back(synth_sequence(Rng::derive(budget.seed, 8100), long_synth));

        NetConfig nc = budget.net;
        RenderFlowNet<T> net(nc, budget.seed);
        TrainConfig tc1 = detail::budget_train(budget, TrainStage::base);
        train_stage1(net, ds2, tc1, "");
        TrainConfig tc2 = detail::budget_train(budget, TrainStage::keyframe);
        train_stage2(net, ds2, tc2, "");
        if (suite == "keyframe_gaps") return ablate_keyframe_gaps(net, eval2, budget);
        return ablate_inference_steps(net, eval2, budget);
    }
    throw std::invalid_argument("run_ablation: unknown suite '" + suite + "'");
}

}  // namespace rf
