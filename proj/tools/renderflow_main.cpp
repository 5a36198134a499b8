// renderflow: dataset synthesis, two-stage training, deterministic inference,
// inverse decomposition, evaluation, ablations, and the material-edit demo.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "renderflow/ablation.hpp"
#include "renderflow/config.hpp"
#include "renderflow/infer.hpp"
#include "renderflow/inverse.hpp"
#include "renderflow/metrics.hpp"
#include "renderflow/png.hpp"
#include "renderflow/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using Net = rf::RenderFlowNet<float>;

namespace {

std::string default_out(const std::string& command) {
    const char* root = std::getenv("RENDERFLOW_RUN_DIR");
    return ((root ? fs::path(root) : fs::path("runs")) / command).string();
}

void write_snapshot(const rf::RunConfig& rc, const std::string& dir) {
    fs::create_directories(dir);
    std::ofstream os(fs::path(dir) / "config.snapshot");
    os << rc.dump() << "\n";
}

rf::SynthConfig synth_from(const rf::RunConfig& rc) {
    const json& d = rc.section("dataset");
    rf::SynthConfig s;
    s.frames = d.at("frames");
    s.res_h = d.at("res");
    s.res_w = d.at("res");
    s.env_h = d.at("envmap_h");
    s.env_w = d.at("envmap_w");
    s.orbit_radius = d.at("orbit_radius");
    s.orbit_arc_deg = d.at("orbit_arc_deg");
    s.n_objects = d.at("n_objects");
    s.d_max = d.at("d_max");
    return s;
}

rf::NetConfig net_from(const rf::RunConfig& rc) {
    const json& n = rc.section("net");
    rf::NetConfig c;
    c.patch = n.at("patch");
    c.dim = n.at("dim");
    c.depth = n.at("depth");
    c.heads = n.at("heads");
    c.ffn_mult = n.at("ffn_mult");
    c.lora_rank = n.at("lora_rank");
    c.keyframe_variant = n.at("keyframe_variant") == "reused_query"
                             ? rf::KeyframeVariant::reused_query
                             : rf::KeyframeVariant::dedicated_query;
    c.keyframe_ffn_lora = n.at("keyframe_ffn_lora");
    c.env_patch = std::min<int>(c.patch, std::min<int>(rc.section("dataset").at("envmap_h").get<int>(),
                                                       rc.section("dataset").at("envmap_w").get<int>()));
    c.prompt_tokens = n.at("prompt_tokens");
    return c;
}

rf::BridgeConfig bridge_from(const rf::RunConfig& rc) {
    const json& b = rc.section("bridge");
    rf::BridgeConfig c;
    c.sigma = b.at("sigma");
    c.schedule = b.at("schedule") == "uniform" ? rf::TimestepSchedule::uniform
                                               : rf::TimestepSchedule::discrete4;
    c.t_grid = b.at("t_grid").get<std::vector<double>>();
    c.t_max = b.at("t_max");
    return c;
}

rf::TrainConfig train_from(const rf::RunConfig& rc, rf::TrainStage stage) {
    const json& t = rc.section("train");
    rf::TrainConfig c;
    c.stage = stage;
    c.lr = t.at("lr");
    c.warmup_steps = t.at("warmup_steps");
    c.steps = t.at("steps");
    c.batch = t.at("batch");
    c.lambda_pixel = t.at("lambda_pixel");
    c.bridge = bridge_from(rc);
    c.clip_frames = t.at("clip_frames");
    c.seed = t.at("seed");
    c.keyframe_gap = t.at("keyframe_gap");
    c.checkpoint_every = t.at("checkpoint_every");
    c.ref_cond_prob = t.at("ref_cond_prob");
    c.weight_decay = t.at("weight_decay");
    return c;
}

rf::InferConfig infer_from(const rf::RunConfig& rc) {
    const json& i = rc.section("infer");
    rf::InferConfig c;
    c.steps = i.at("steps");
    c.mode = i.at("mode") == "sde" ? rf::InferMode::sde : rf::InferMode::ode;
    c.sde_sigma = i.at("sde_sigma");
    c.use_keyframes = i.at("use_keyframes");
    c.keyframe_gap = i.at("keyframe_gap");
    c.chunk_frames = i.at("chunk_frames");
    c.overlap = i.at("overlap");
    c.rng_seed = i.at("rng_seed");
    c.bridge = bridge_from(rc);
    return c;
}

rf::InverseConfig inverse_from(const rf::RunConfig& rc) {
    const json& v = rc.section("inverse");
    rf::InverseConfig c;
    c.lr = v.at("lr");
    c.steps = v.at("steps");
    c.batch = v.at("batch");
    c.seed = v.at("seed");
    c.lambda_albedo = v.at("lambda_albedo");
    c.ssi_lambda = v.at("ssi_lambda");
    c.weight_albedo = v.at("weights").at("albedo");
    c.weight_normal = v.at("weights").at("normal");
    c.weight_depth = v.at("weights").at("depth");
    c.weight_material = v.at("weights").at("material");
    c.bridge = bridge_from(rc);
    return c;
}

void save_images(const std::vector<rf::Image>& images, const std::string& dir,
                 const char* stem = "frame") {
    fs::create_directories(dir);
    char name[64];
    for (size_t i = 0; i < images.size(); ++i) {
        std::snprintf(name, sizeof(name), "%s_%04zu.png", stem, i);
        rf::write_png(images[i], (fs::path(dir) / name).string());
    }
}

rf::Image to_rgb(const rf::Image& img) {
    if (img.c == 3) return img;
    rf::Image out(img.h, img.w, 3);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, x, 0);
    return out;
}

void write_json(const json& j, const std::string& path) {
    std::ofstream os(path);
    os << j.dump(2) << "\n";
}

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> sets;
};

void add_common(CLI::App* sub, CommonOpts& c) {
    sub->add_option("--config", c.config_path, "JSON config file (defaults apply when omitted)");
    sub->add_option("--set", c.sets, "dotted-path override, e.g. bridge.sigma=0.005");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"renderflow: single-step bridge-matching neural renderer (desk scale)"};
    app.require_subcommand(1);

    // ---- synth ----
    auto* synth = app.add_subcommand("synth", "synthesize a procedural dataset");
    CommonOpts synth_c;
    add_common(synth, synth_c);
    std::uint64_t synth_seed = 0;
    int synth_n = 8, synth_frames = -1, synth_res = -1;
    std::string synth_out;
    auto* synth_seed_opt = synth->add_option("--seed", synth_seed, "dataset seed");
    synth->add_option("--sequences", synth_n, "number of sequences")->default_val(8);
    auto* synth_frames_opt = synth->add_option("--frames", synth_frames, "frames per sequence");
    auto* synth_res_opt = synth->add_option("--res", synth_res, "image resolution");
    synth->add_option("--out", synth_out, "output dataset directory")->required();

    // ---- train / train-keyframe / train-inverse ----
    auto* train = app.add_subcommand("train", "stage-1 training (base + envmap adapter)");
    CommonOpts train_c;
    add_common(train, train_c);
    std::string train_data, train_out = default_out("train");
    int train_steps = -1;
    train->add_option("--data", train_data, "dataset directory")->required();
    train->add_option("--out", train_out, "run directory");
    auto* train_steps_opt = train->add_option("--steps", train_steps, "training steps");

    auto* trainkf = app.add_subcommand("train-keyframe", "stage-2 keyframe-adapter training");
    CommonOpts trainkf_c;
    add_common(trainkf, trainkf_c);
    std::string kf_data, kf_base, kf_out = default_out("train-keyframe");
    int kf_steps = -1;
    trainkf->add_option("--data", kf_data, "dataset directory")->required();
    trainkf->add_option("--base", kf_base, "stage-1 checkpoint")->required();
    trainkf->add_option("--out", kf_out, "run directory");
    auto* kf_steps_opt = trainkf->add_option("--steps", kf_steps, "training steps");

    auto* traininv = app.add_subcommand("train-inverse", "inverse-adapter training on a frozen model");
    CommonOpts traininv_c;
    add_common(traininv, traininv_c);
    std::string inv_data, inv_fwd, inv_out = default_out("train-inverse");
    int inv_steps = -1;
    traininv->add_option("--data", inv_data, "dataset directory")->required();
    traininv->add_option("--forward", inv_fwd, "frozen forward checkpoint")->required();
    traininv->add_option("--out", inv_out, "run directory");
    auto* inv_steps_opt = traininv->add_option("--steps", inv_steps, "training steps");

    // ---- infer ----
    auto* infer = app.add_subcommand("infer", "render a sequence with a trained checkpoint");
    CommonOpts infer_c;
    add_common(infer, infer_c);
    std::string if_ckpt, if_input, if_out = default_out("infer"), if_mode;
    int if_steps = -1, if_gap = -1;
    bool if_keyframes = false;
    infer->add_option("--ckpt", if_ckpt, "checkpoint path")->required();
    infer->add_option("--input", if_input, "sequence file (.rfsq)")->required();
    infer->add_option("--out", if_out, "run directory");
    auto* if_steps_opt = infer->add_option("--steps", if_steps, "inference steps (1|2|4)");
    auto* if_mode_opt = infer->add_option("--mode", if_mode, "ode | sde");
    infer->add_flag("--use-keyframes", if_keyframes, "inject ground-truth keyframes");
    auto* if_gap_opt = infer->add_option("--keyframe-gap", if_gap, "keyframe spacing");

    // ---- invert ----
    auto* invert = app.add_subcommand("invert", "intrinsic decomposition with the inverse adapter");
    CommonOpts invert_c;
    add_common(invert, invert_c);
    std::string iv_ckpt, iv_fwd, iv_input, iv_out = default_out("invert"), iv_mod = "all";
    invert->add_option("--ckpt", iv_ckpt, "inverse checkpoint")->required();
    invert->add_option("--forward", iv_fwd, "forward checkpoint it was trained against")->required();
    invert->add_option("--input", iv_input, "sequence file (.rfsq)")->required();
    invert->add_option("--modality", iv_mod, "albedo|normal|depth|material|all");
    invert->add_option("--out", iv_out, "run directory");

    // ---- eval ----
    auto* eval = app.add_subcommand("eval", "compare a run's images against ground truth");
    std::string ev_pred, ev_gt, ev_report;
    eval->add_option("--pred", ev_pred, "prediction run directory")->required();
    eval->add_option("--gt", ev_gt, "dataset directory or sequence file")->required();
    eval->add_option("--report", ev_report, "output report path")->required();

    // ---- ablate ----
    auto* ablate = app.add_subcommand("ablate", "run one ablation suite");
    CommonOpts ablate_c;
    add_common(ablate, ablate_c);
    std::string ab_suite, ab_out = default_out("ablate");
    int ab_train_steps = 60, ab_stage2_steps = 40;
    ablate->add_option("--suite", ab_suite,
                       "schedules|pixel_losses|keyframe_designs|keyframe_gaps|inference_steps")
        ->required();
    ablate->add_option("--out", ab_out, "run directory");
    ablate->add_option("--train-steps", ab_train_steps, "per-row stage-1 budget");
    ablate->add_option("--stage2-steps", ab_stage2_steps, "per-row stage-2 budget");

    // ---- edit-material ----
    auto* edit = app.add_subcommand("edit-material", "material-editing demonstration");
    CommonOpts edit_c;
    add_common(edit, edit_c);
    std::uint64_t ed_seed = 15;
    std::string ed_obj = "obj0", ed_param = "roughness", ed_from = "1.0", ed_to = "0.0";
    std::string ed_ckpt, ed_out = default_out("edit-material");
    int ed_frames = 5;
    edit->add_option("--seed", ed_seed, "scene seed");
    edit->add_option("--object", ed_obj, "object name");
    edit->add_option("--param", ed_param, "roughness|metallic|specular|albedo");
    edit->add_option("--from", ed_from, "start value (r,g,b for albedo)");
    edit->add_option("--to", ed_to, "end value");
    edit->add_option("--frames", ed_frames, "frame count");
    edit->add_option("--ckpt", ed_ckpt, "trained checkpoint")->required();
    edit->add_option("--out", ed_out, "run directory");

    // ---- config-dump ----
    auto* dump = app.add_subcommand("config-dump", "print the effective configuration");
    CommonOpts dump_c;
    add_common(dump, dump_c);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (app.got_subcommand(synth)) {
            auto ov = synth_c.sets;
            if (synth_seed_opt->count()) ov.push_back("dataset.seed=" + std::to_string(synth_seed));
            if (synth_frames_opt->count()) ov.push_back("dataset.frames=" + std::to_string(synth_frames));
            if (synth_res_opt->count()) ov.push_back("dataset.res=" + std::to_string(synth_res));
            rf::RunConfig rc = rf::load_config(synth_c.config_path, ov);
            rf::SynthConfig sc = synth_from(rc);
            std::uint64_t seed = rc.section("dataset").at("seed").get<std::uint64_t>();
            auto entries = rf::synth_dataset(synth_out, seed, synth_n, sc);
            write_snapshot(rc, synth_out);
            std::cout << "wrote " << entries.size() << " sequences to " << synth_out << "\n";
        } else if (app.got_subcommand(train)) {
            auto ov = train_c.sets;
            if (train_steps_opt->count()) ov.push_back("train.steps=" + std::to_string(train_steps));
            rf::RunConfig rc = rf::load_config(train_c.config_path, ov);
            rf::Dataset ds = rf::load_dataset(train_data);
            Net net(net_from(rc), rc.section("train").at("seed").get<std::uint64_t>());
            write_snapshot(rc, train_out);
            auto out = rf::train_stage1(net, ds, train_from(rc, rf::TrainStage::base), train_out);
            std::cout << "stage-1 checkpoint: " << out.final_checkpoint << "\n";
        } else if (app.got_subcommand(trainkf)) {
            auto ov = trainkf_c.sets;
            if (kf_steps_opt->count()) ov.push_back("train.steps=" + std::to_string(kf_steps));
            rf::RunConfig rc = rf::load_config(trainkf_c.config_path, ov);
            rf::Dataset ds = rf::load_dataset(kf_data);
            rf::CheckpointHeader base_h = rf::peek_checkpoint(kf_base);
            // architecture follows the base checkpoint; adapter switches follow the config
            rf::NetConfig nc = base_h.net;
            rf::NetConfig user_nc = net_from(rc);
            nc.keyframe_variant = user_nc.keyframe_variant;
            nc.keyframe_ffn_lora = user_nc.keyframe_ffn_lora;
            nc.lora_rank = user_nc.lora_rank;
            Net net(nc, rc.section("train").at("seed").get<std::uint64_t>());
            rf::load_checkpoint_groups(kf_base, net,
                                       {rf::ParamGroup::base, rf::ParamGroup::envmap_adapter});
            write_snapshot(rc, kf_out);
            auto out = rf::train_stage2(net, ds, train_from(rc, rf::TrainStage::keyframe), kf_out);
            std::cout << "stage-2 checkpoint: " << out.final_checkpoint << "\n";
        } else if (app.got_subcommand(traininv)) {
            auto ov = traininv_c.sets;
            if (inv_steps_opt->count()) ov.push_back("inverse.steps=" + std::to_string(inv_steps));
            rf::RunConfig rc = rf::load_config(traininv_c.config_path, ov);
            rf::Dataset ds = rf::load_dataset(inv_data);
            auto net = rf::net_from_checkpoint<float>(inv_fwd);
            write_snapshot(rc, inv_out);
            auto out = rf::train_inverse(*net, ds, inverse_from(rc), inv_out,
                                         rf::checkpoint_hash(inv_fwd));
            std::cout << "inverse checkpoint: " << out.final_checkpoint << "\n";
        } else if (app.got_subcommand(infer)) {
            auto ov = infer_c.sets;
            if (if_steps_opt->count()) ov.push_back("infer.steps=" + std::to_string(if_steps));
            if (if_mode_opt->count()) ov.push_back("infer.mode=" + if_mode);
            if (if_gap_opt->count()) ov.push_back("infer.keyframe_gap=" + std::to_string(if_gap));
            rf::RunConfig rc = rf::load_config(infer_c.config_path, ov);

            rf::CheckpointHeader h;
            auto net = rf::net_from_checkpoint<float>(if_ckpt, &h);
            rf::Sequence seq = rf::read_sequence(if_input);
            rf::InferConfig cfg = infer_from(rc);
            cfg.bridge = h.train.bridge;  // evaluation grid follows the training schedule
            if (!rc.section("infer").at("sde_sigma").is_null() && cfg.sde_sigma == 0.005)
                cfg.sde_sigma = h.train.bridge.sigma;
            auto fn = rf::model_velocity_fn(*net);

            rf::RenderResult rr;
            if (if_keyframes) {
                std::vector<int> idx =
                    rf::keyframe_indices_for(static_cast<int>(seq.frames.size()), cfg.keyframe_gap);
                rf::Tensor<float> keys = rf::gather_keyframes<float>(seq, idx);
                rr = rf::render_with_keyframes(fn, seq, keys, idx, cfg, h.stage);
            } else if (static_cast<int>(seq.frames.size()) <= cfg.chunk_frames) {
                rr = rf::render_clip(fn, seq, cfg);
            } else {
                rr = rf::render_progressive(fn, seq, cfg);
            }
            write_snapshot(rc, if_out);
            save_images(rr.images, (fs::path(if_out) / "images").string());
            json meta{{"config", json::parse(rr.config_echo)},
                      {"frame_seconds", rr.frame_seconds},
                      {"checkpoint_hash", rf::checkpoint_hash(if_ckpt)},
                      {"checkpoint_stage", h.stage},
                      {"input", if_input},
                      {"frames", rr.images.size()}};
            write_json(meta, (fs::path(if_out) / "metadata.json").string());
            std::cout << "rendered " << rr.images.size() << " frames to " << if_out << "/images\n";
        } else if (app.got_subcommand(invert)) {
            rf::RunConfig rc = rf::load_config(invert_c.config_path, invert_c.sets);
            (void)rc;
            auto net = rf::net_from_checkpoint<float>(iv_fwd);
            rf::load_inverse_checkpoint(iv_ckpt, *net, rf::checkpoint_hash(iv_fwd));
            rf::Sequence seq = rf::read_sequence(iv_input);
            const int total = static_cast<int>(seq.frames.size());

            std::vector<rf::Modality> mods;
            if (iv_mod == "all")
                mods = rf::all_modalities();
            else
                mods.push_back(rf::modality_from_name(iv_mod));

            fs::create_directories(iv_out);
            json report;
            for (rf::Modality m : mods) {
                rf::Tensor<float> pred = rf::inverse_predict(*net, seq, 0, total, m);
                auto imgs = rf::tensor_to_images(pred);
                std::vector<rf::Image> rgb;
                for (auto& im : imgs) rgb.push_back(to_rgb(im));
                save_images(rgb, (fs::path(iv_out) / "images").string(), rf::modality_name(m));
                // score against the stored ground-truth buffers
                double acc = 0.0;
                for (int f = 0; f < total; ++f) {
                    const rf::GBufferFrame& g = seq.frames[static_cast<size_t>(f)].g;
                    if (m == rf::Modality::normal)
                        acc += rf::angular_error_deg(imgs[static_cast<size_t>(f)], g.normal, g.hit_mask);
                    else if (m == rf::Modality::albedo)
                        acc += rf::psnr(imgs[static_cast<size_t>(f)], g.albedo);
                    else if (m == rf::Modality::depth)
                        acc += rf::rmse(imgs[static_cast<size_t>(f)], g.depth, &g.hit_mask);
                    else
                        acc += rf::rmse(imgs[static_cast<size_t>(f)], g.material, &g.hit_mask);
                }
                report[rf::modality_name(m)] =
                    {{m == rf::Modality::normal ? "angular_deg"
                      : m == rf::Modality::albedo ? "psnr" : "rmse",
                      acc / total}};
            }
            write_json(report, (fs::path(iv_out) / "report.json").string());
            std::cout << "intrinsics written to " << iv_out << "\n";
        } else if (app.got_subcommand(eval)) {
            std::ifstream ms(fs::path(ev_pred) / "metadata.json");
            if (!ms) throw std::runtime_error("eval: no metadata.json under " + ev_pred);
            json meta = json::parse(ms);
            std::string input = meta.at("input");
            fs::path gt_path = ev_gt;
            if (fs::is_directory(gt_path)) {
                fs::path candidate = gt_path / fs::path(input).filename();
                gt_path = fs::exists(candidate) ? candidate : fs::path(input);
            }
            rf::Sequence seq = rf::read_sequence(gt_path.string());
            std::vector<rf::Image> pred;
            char name[64];
            for (size_t i = 0; i < meta.at("frames").get<size_t>(); ++i) {
                std::snprintf(name, sizeof(name), "frame_%04zu.png", i);
                pred.push_back(rf::read_png((fs::path(ev_pred) / "images" / name).string()));
            }
            std::vector<rf::Image> gt;
            for (const auto& fr : seq.frames) gt.push_back(fr.reference);
            rf::MetricReport r = rf::compare_clips(pred, gt);
            r.metadata = json{{"pred", ev_pred}, {"gt", gt_path.string()}}.dump();
            rf::write_report(r, ev_report);
            std::cout << "psnr " << r.psnr << "  ssim " << r.ssim << "  proxy " << r.proxy
                      << " -> " << ev_report << "\n";
        } else if (app.got_subcommand(ablate)) {
            rf::RunConfig rc = rf::load_config(ablate_c.config_path, ablate_c.sets);
            rf::AblationBudget budget;
            budget.net = net_from(rc);
            budget.seed = rc.section("train").at("seed").get<std::uint64_t>();
            budget.train_steps = ab_train_steps;
            budget.stage2_steps = ab_stage2_steps;
            budget.batch = rc.section("train").at("batch");
            budget.lr = rc.section("train").at("lr");
            budget.clip_frames = rc.section("train").at("clip_frames");
            budget.infer = infer_from(rc);
            rf::SynthConfig sc = synth_from(rc);
            rf::AblationTable t = rf::run_ablation<float>(ab_suite, budget, sc);
            fs::create_directories(ab_out);
            write_snapshot(rc, ab_out);
            write_json(t.to_json(), (fs::path(ab_out) / "report.json").string());
            std::ofstream csv(fs::path(ab_out) / "report.csv");
            csv << t.to_csv();
            std::ofstream txt(fs::path(ab_out) / "table.txt");
            txt << t.to_text();
            std::cout << t.to_text();
        } else if (app.got_subcommand(edit)) {
            rf::RunConfig rc = rf::load_config(edit_c.config_path, edit_c.sets);
            auto parse_vec = [](const std::string& s) {
                rf::Vec3 v{0, 0, 0};
                std::istringstream is(s);
                std::string tok;
                double* slots[3] = {&v.x, &v.y, &v.z};
                int i = 0;
                while (std::getline(is, tok, ',') && i < 3) *slots[i++] = std::stod(tok);
                return v;
            };
            rf::MaterialInterp mi;
            mi.object = ed_obj;
            mi.param = ed_param;
            mi.from = parse_vec(ed_from);
            mi.to = parse_vec(ed_to);

            rf::CheckpointHeader h;
            auto net = rf::net_from_checkpoint<float>(ed_ckpt, &h);
            auto fn = rf::model_velocity_fn(*net);
            rf::SynthConfig sc = synth_from(rc);
            sc.frames = ed_frames;
            rf::InferConfig cfg = infer_from(rc);
            cfg.bridge = h.train.bridge;
            auto demo = rf::material_edit_demo(fn, ed_seed, mi, sc, cfg);

            write_snapshot(rc, ed_out);
            std::vector<rf::Image> combined;
            for (size_t i = 0; i < demo.render.images.size(); ++i)
                combined.push_back(rf::side_by_side(demo.render.images[i], demo.reference[i]));
            save_images(combined, (fs::path(ed_out) / "images").string(), "model_vs_reference");
            json log;
            log["object"] = mi.object;
            log["param"] = mi.param;
            log["per_frame_value"] = demo.param_values;
            log["checkpoint_hash"] = rf::checkpoint_hash(ed_ckpt);
            write_json(log, (fs::path(ed_out) / "params.json").string());
            std::cout << "material edit demo written to " << ed_out << "\n";
        } else if (app.got_subcommand(dump)) {
            rf::RunConfig rc = rf::load_config(dump_c.config_path, dump_c.sets);
            std::cout << rc.dump() << "\n";
        }
        return 0;
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const rf::unsupported_configuration& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
