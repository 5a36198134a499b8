#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "renderflow/train.hpp"

namespace rf {

struct InverseConfig {
    double lr = 1e-4;
    int warmup_steps = 0;
    int steps = 1000;
    int batch = 4;
    std::uint64_t seed = 0;
    int clip_frames = 3;
    double lambda_albedo = 1.0;  // perceptual weight inside the albedo loss
    double ssi_lambda = 0.5;     // printed-form coefficient of the SSI loss
    double weight_albedo = 0.4, weight_normal = 0.3, weight_depth = 0.15, weight_material = 0.15;
    double weight_decay = 0.01;
    double depth_eps = 0.05;  // log-depth encoding epsilon
    int checkpoint_every = 0;
    BridgeConfig bridge;

    void validate() const {
        if (lr <= 0.0) throw std::invalid_argument("inverse.lr must be > 0");
        if (steps <= 0) throw std::invalid_argument("inverse.steps must be > 0");
        if (batch < 1) throw std::invalid_argument("inverse.batch must be >= 1");
        if (clip_frames < 1) throw std::invalid_argument("inverse.clip_frames must be >= 1");
        double w = weight_albedo + weight_normal + weight_depth + weight_material;
        if (!(w > 0.0)) throw std::invalid_argument("inverse modality weights must not all be zero");
        bridge.validate();
    }
};

namespace detail {

template <class T>
Tensor<T> rgb_luminance_log(const Tensor<T>& rgb, double eps) {
    Tensor<T> out({rgb.dim(0), rgb.dim(1), rgb.dim(2), 1});
    const std::int64_t n = out.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        T lum = (rgb.v[3 * i] + rgb.v[3 * i + 1] + rgb.v[3 * i + 2]) / T(3);
        out.v[i] = std::log(lum + static_cast<T>(eps));
    }
    return out;
}

template <class T>
Tensor<T> log_encode(const Tensor<T>& depth, double eps) {
    Tensor<T> out(depth.shape);
    for (std::int64_t i = 0; i < depth.numel(); ++i)
        out.v[i] = std::log(depth.v[i] + static_cast<T>(eps));
    return out;
}

// Bridge endpoints for one modality: z0 derived from the rendered image,
// z1 the ground-truth intrinsic (depth in log space).
template <class T>
void inverse_endpoints(const Sequence& seq, int start, int count, Modality mod, double depth_eps,
                       Tensor<T>& z0, Tensor<T>& z1) {
    Tensor<T> rgb = clip_reference<T>(seq, start, count);
    switch (mod) {
        case Modality::albedo:
            z0 = rgb;
            z1 = clip_buffer<T>(seq, start, count, &GBufferFrame::albedo);
            break;
        case Modality::normal:
            z0 = rgb;
            z1 = clip_buffer<T>(seq, start, count, &GBufferFrame::normal);
            break;
        case Modality::material:
            z0 = rgb;
            z1 = clip_buffer<T>(seq, start, count, &GBufferFrame::material);
            break;
        case Modality::depth:
            z0 = rgb_luminance_log<T>(rgb, depth_eps);
            z1 = log_encode<T>(clip_buffer<T>(seq, start, count, &GBufferFrame::depth), depth_eps);
            break;
    }
}

}  // namespace detail

// Modality dispatch: exactly one loss per modality.
template <class T>
Var<T> inverse_loss(Modality mod, const Var<T>& z1_hat, const Tensor<T>& z1,
                    const Tensor<T>& hit_mask, const InverseConfig& cfg) {
    switch (mod) {
        case Modality::albedo:
            return loss_albedo(z1_hat, constant(z1), cfg.lambda_albedo);
        case Modality::normal:
            return loss_normal(z1_hat, z1, hit_mask);
        case Modality::depth:
            return loss_depth_ssi(z1_hat, z1, hit_mask, cfg.ssi_lambda, /*log_inputs=*/true);
        case Modality::material:
            return loss_material(z1_hat, constant(z1));
    }
    throw std::invalid_argument("inverse_loss: unknown modality");
}

template <class T>
struct InverseOutcome {
    std::vector<double> loss_history;
    std::string final_checkpoint;
    double max_frozen_grad_norm = 0.0;  // must stay exactly zero
};

// Adapter-only training over the frozen forward net. Per step one modality
// is drawn by the configured weights and its loss dispatched.
template <class T>
InverseOutcome<T> train_inverse(RenderFlowNet<T>& net, const Dataset& ds, const InverseConfig& cfg,
                                const std::string& run_dir, const std::string& forward_hash) {
    cfg.validate();
    if (ds.train.empty()) throw std::invalid_argument("train_inverse: empty dataset");
    net.params.set_trainable({ParamGroup::inverse_adapter});

    AdamW<T> opt(cfg.weight_decay);
    Rng rng(Rng::derive(cfg.seed, 303));
    std::ofstream log;
    if (!run_dir.empty()) {
        std::filesystem::create_directories(run_dir);
        std::filesystem::create_directories(std::filesystem::path(run_dir) / "ckpt");
        log.open(std::filesystem::path(run_dir) / "log.jsonl", std::ios::app);
    }

    const double wsum = cfg.weight_albedo + cfg.weight_normal + cfg.weight_depth + cfg.weight_material;
    auto draw_modality = [&](Rng& r) {
        double u = r.uniform(0.0, wsum);
        if (u < cfg.weight_albedo) return Modality::albedo;
        u -= cfg.weight_albedo;
        if (u < cfg.weight_normal) return Modality::normal;
        u -= cfg.weight_normal;
        if (u < cfg.weight_depth) return Modality::depth;
        return Modality::material;
    };

    InverseOutcome<T> out;
    auto t_begin = std::chrono::steady_clock::now();
    for (int step = 0; step < cfg.steps; ++step) {
        double lr = cfg.lr;
        if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
            lr = cfg.lr * static_cast<double>(step + 1) / cfg.warmup_steps;

        Modality mod = draw_modality(rng);
        Var<T> loss_sum;
        for (int b = 0; b < cfg.batch; ++b) {
            const Sequence& seq = ds.train[rng.randint(ds.train.size())];
            const int total = static_cast<int>(seq.frames.size());
            const int fclip = std::min(cfg.clip_frames, total);
            const int start = (total > fclip)
                                  ? static_cast<int>(rng.randint(static_cast<std::uint64_t>(total - fclip) + 1))
                                  : 0;
            Tensor<T> z0, z1;
            detail::inverse_endpoints(seq, start, fclip, mod, cfg.depth_eps, z0, z1);
            Tensor<T> mask = clip_buffer<T>(seq, start, fclip, &GBufferFrame::hit_mask);

            double t = sample_timestep(cfg.bridge, rng);
            Tensor<T> eps(z0.shape);
            fill_normal(eps, rng);
            Tensor<T> zt = interpolate(z0, z1, t, cfg.bridge.sigma, eps, cfg.bridge.t_max);

            Var<T> v = net.inverse_forward(zt, mod, t);
            Var<T> z1_hat = add(scale(v, static_cast<T>(1.0 - t)), constant(zt));
            Var<T> loss = inverse_loss(mod, z1_hat, z1, mask, cfg);
            loss_sum = loss_sum ? add(loss_sum, loss) : loss;
        }
        Var<T> loss = scale(loss_sum, T(1.0 / cfg.batch));
        double lv = static_cast<double>(loss->val.v[0]);
        if (!std::isfinite(lv))
            throw std::runtime_error("inverse training diverged at step " + std::to_string(step));
        net.params.zero_grads();
        backward(loss);

        for (ParamGroup g : {ParamGroup::base, ParamGroup::envmap_adapter, ParamGroup::keyframe_adapter})
            out.max_frozen_grad_norm = std::max(out.max_frozen_grad_norm, net.params.grad_norm(g));

        opt.step(net.params, lr);
        out.loss_history.push_back(lv);

        if (log.is_open()) {
            double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_begin).count();
            nlohmann::json line{{"step", step},
                                {"modality", modality_name(mod)},
                                {"loss", lv},
                                {"lr", lr},
                                {"wallclock", wall}};
            log << line.dump() << "\n";
        }
    }

    if (!run_dir.empty()) {
        out.final_checkpoint = (std::filesystem::path(run_dir) / "ckpt" / "inverse.rfck").string();
        TrainConfig snapshot;  // carried for reproducibility metadata
        snapshot.lr = cfg.lr;
        snapshot.steps = cfg.steps;
        snapshot.batch = cfg.batch;
        snapshot.seed = cfg.seed;
        snapshot.clip_frames = cfg.clip_frames;
        snapshot.bridge = cfg.bridge;
        std::vector<ParamGroup> groups{ParamGroup::inverse_adapter};
        save_checkpoint(out.final_checkpoint, net, snapshot, "inverse", cfg.steps,
                        static_cast<AdamW<T>*>(nullptr), rng.state(), forward_hash, &groups);
    }
    return out;
}

// Load an adapter-only checkpoint on top of a frozen forward net, verifying
// the recorded forward-checkpoint hash.
template <class T>
void load_inverse_checkpoint(const std::string& path, RenderFlowNet<T>& net,
                             const std::string& expected_forward_hash) {
    CheckpointHeader h = peek_checkpoint(path);
    if (h.stage != "inverse")
        throw unsupported_configuration("load_inverse_checkpoint: not an inverse checkpoint");
    if (!expected_forward_hash.empty() && h.forward_hash != expected_forward_hash)
        throw corrupt_file_error("inverse checkpoint: frozen forward hash mismatch (expected " +
                                 expected_forward_hash + ", stored " + h.forward_hash + ")");
    load_checkpoint_into(path, net);
}

// Single-step intrinsic decomposition at t = 0 (depth decoded from log space).
template <class T>
Tensor<T> inverse_predict(RenderFlowNet<T>& net, const Sequence& seq, int start, int count,
                          Modality mod, double depth_eps = 0.05) {
    net.params.set_trainable({});
    Tensor<T> z0, z1_unused;
    detail::inverse_endpoints(seq, start, count, mod, depth_eps, z0, z1_unused);
    Var<T> v = net.inverse_forward(z0, mod, 0.0);
    Tensor<T> z1_hat = recover_endpoint(z0, v->val, 0.0);
    if (mod == Modality::depth)
        for (auto& x : z1_hat.v) x = std::exp(x) - static_cast<T>(depth_eps);
    for (auto& x : z1_hat.v) x = std::min(T(1), std::max(T(0), x));
    return z1_hat;
}

}  // namespace rf
