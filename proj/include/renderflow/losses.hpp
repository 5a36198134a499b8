#pragma once

#include <cmath>
#include <stdexcept>

#include "renderflow/autograd.hpp"
#include "renderflow/bridge.hpp"

namespace rf {

// Bridge matching loss: MSE between the predicted velocity and
// (z1 - zt)/(1 - t).
template <class T>
Var<T> loss_latent(const Var<T>& v_pred, const Tensor<T>& z1, const Tensor<T>& zt, double t,
                   double t_max = 0.9999) {
    Tensor<T> target = velocity_target(z1, zt, t, t_max);
    check_same_shape(v_pred->val, target, "loss_latent");
    return mse(v_pred, constant(std::move(target)));
}

// Forward finite-difference gradient loss on (F,H,W,C) clips.
template <class T>
Var<T> loss_gradient(const Var<T>& pred, const Var<T>& gt) {
    return gradient_l1(pred, gt);
}

// Multi-scale structural proxy standing in for a learned perceptual metric:
// sum over scales {1, 1/2, 1/4} of mean|grad difference| + mean|difference|,
// with 2x average pooling between scales.
template <class T>
Var<T> loss_perceptual_proxy(const Var<T>& pred, const Var<T>& gt) {
    Var<T> p = pred, g = gt;
    Var<T> total;
    for (int s = 0; s < 3; ++s) {
        if (s > 0) {
            p = downsample2(p);
            g = downsample2(g);
        }
        Var<T> term = add(gradient_l1(p, g), l1(p, g));
        total = total ? add(total, term) : term;
    }
    return total;
}

// L_total = L_latent + lambda (L_proxy + L_grad) with I_pred recovered from
// the interpolant (identity decode in pixel space). No clamping inside the
// loss path.
template <class T>
Var<T> loss_total(const Var<T>& v_pred, const Tensor<T>& z1, const Tensor<T>& zt, double t,
                  double lambda, double t_max = 0.9999) {
    Var<T> latent = loss_latent(v_pred, z1, zt, t, t_max);
    if (lambda == 0.0) return latent;
    Var<T> i_pred = add(scale(v_pred, static_cast<T>(1.0 - t)), constant(zt));
    Var<T> i_gt = constant(z1);
    Var<T> pixel = add(loss_perceptual_proxy(i_pred, i_gt), loss_gradient(i_pred, i_gt));
    return add(latent, scale(pixel, static_cast<T>(lambda)));
}

// ---------------------------------------------------------------------------
// Inverse-adapter modality losses
// ---------------------------------------------------------------------------

// L1 + lambda * perceptual proxy.
template <class T>
Var<T> loss_albedo(const Var<T>& pred, const Var<T>& gt, double lambda = 1.0) {
    check_same_shape(pred->val, gt->val, "loss_albedo");
    return add(l1(pred, gt), scale(loss_perceptual_proxy(pred, gt), static_cast<T>(lambda)));
}

// 1 - mean cosine similarity over mask=1 pixels. Inputs are [0,1]-encoded
// normals; both sides are decoded to [-1,1] before the loss. Zero-norm
// pixels are handled by an eps-guarded denominator.
template <class T>
Var<T> loss_normal(const Var<T>& pred_enc, const Tensor<T>& gt_enc, const Tensor<T>& mask) {
    check_same_shape(pred_enc->val, gt_enc, "loss_normal");
    check_clip_shape(pred_enc->val.shape, "loss_normal");
    const int f = pred_enc->val.dim(0), h = pred_enc->val.dim(1), w = pred_enc->val.dim(2),
              c = pred_enc->val.dim(3);
    if (c != 3) throw std::invalid_argument("loss_normal: expected 3 channels");
    if (mask.numel() != static_cast<std::int64_t>(f) * h * w)
        throw std::invalid_argument("loss_normal: mask size mismatch");
    const T eps = T(1e-8);

    const std::int64_t npix = static_cast<std::int64_t>(f) * h * w;
    std::int64_t nm = 0;
    T acc = T(0);
    for (std::int64_t i = 0; i < npix; ++i) {
        if (mask.v[i] < T(0.5)) continue;
        ++nm;
        T px = T(2) * pred_enc->val.v[3 * i] - T(1);
        T py = T(2) * pred_enc->val.v[3 * i + 1] - T(1);
        T pz = T(2) * pred_enc->val.v[3 * i + 2] - T(1);
        T gx = T(2) * gt_enc.v[3 * i] - T(1);
        T gy = T(2) * gt_enc.v[3 * i + 1] - T(1);
        T gz = T(2) * gt_enc.v[3 * i + 2] - T(1);
        T dp = px * gx + py * gy + pz * gz;
        T denom = std::sqrt(px * px + py * py + pz * pz) * std::sqrt(gx * gx + gy * gy + gz * gz);
        acc += dp / std::max(denom, eps);
    }
    if (nm == 0) return constant(Tensor<T>::scalar(T(0)));
    Tensor<T> out = Tensor<T>::scalar(T(1) - acc / T(nm));
    Tensor<T> gt_copy = gt_enc;
    Tensor<T> mask_copy = mask;
    return make_node<T>(std::move(out), {pred_enc},
                        [pred_enc, gt_copy, mask_copy, npix, nm, eps](Node<T>& g) {
        pred_enc->ensure_grad();
        const T gs = -g.grad.v[0] / T(nm);  // d(1 - mean)/dcos
        for (std::int64_t i = 0; i < npix; ++i) {
            if (mask_copy.v[i] < T(0.5)) continue;
            T px = T(2) * pred_enc->val.v[3 * i] - T(1);
            T py = T(2) * pred_enc->val.v[3 * i + 1] - T(1);
            T pz = T(2) * pred_enc->val.v[3 * i + 2] - T(1);
            T gx = T(2) * gt_copy.v[3 * i] - T(1);
            T gy = T(2) * gt_copy.v[3 * i + 1] - T(1);
            T gz = T(2) * gt_copy.v[3 * i + 2] - T(1);
            T pn = std::sqrt(px * px + py * py + pz * pz);
            T gn = std::sqrt(gx * gx + gy * gy + gz * gz);
            T denom = std::max(pn * gn, eps);
            T dp = px * gx + py * gy + pz * gz;
            // d cos/d p = g/denom - dp * p * gn / (pn * denom^2), guarded
            T pn_safe = std::max(pn, eps);
            T dx = gx / denom - dp * px * gn / (pn_safe * denom * denom);
            T dy = gy / denom - dp * py * gn / (pn_safe * denom * denom);
            T dz = gz / denom - dp * pz * gn / (pn_safe * denom * denom);
            // chain through decode (x2) into encoded space
            pred_enc->grad.v[3 * i] += gs * dx * T(2);
            pred_enc->grad.v[3 * i + 1] += gs * dy * T(2);
            pred_enc->grad.v[3 * i + 2] += gs * dz * T(2);
        }
    });
}

// Eigen-style scale-and-shift-invariant depth loss on log differences:
// L = mean(delta^2) - lambda * mean(delta)^2, printed form lambda = 1/2.
// log_inputs=true means pred/gt already hold log-depths (training path);
// otherwise delta_i = log(pred_i + eps) - log(gt_i + eps).
template <class T>
Var<T> loss_depth_ssi(const Var<T>& pred, const Tensor<T>& gt, const Tensor<T>& mask,
                      double lambda = 0.5, bool log_inputs = false, double eps = 1e-6) {
    check_same_shape(pred->val, gt, "loss_depth_ssi");
    if (mask.numel() != pred->val.numel())
        throw std::invalid_argument("loss_depth_ssi: mask size mismatch");
    const std::int64_t n_all = pred->val.numel();
    std::int64_t n = 0;
    T sum = T(0), sum2 = T(0);
    Tensor<T> delta(pred->val.shape);
    for (std::int64_t i = 0; i < n_all; ++i) {
        if (mask.v[i] < T(0.5)) continue;
        T d;
        if (log_inputs) {
            d = pred->val.v[i] - gt.v[i];
        } else {
            T pv = pred->val.v[i] + static_cast<T>(eps);
            T gv = gt.v[i] + static_cast<T>(eps);
            if (!(pv > T(0)) || !(gv > T(0)))
                throw std::invalid_argument("loss_depth_ssi: non-positive input after eps guard");
            d = std::log(pv) - std::log(gv);
        }
        delta.v[i] = d;
        sum += d;
        sum2 += d * d;
        ++n;
    }
    if (n == 0) return constant(Tensor<T>::scalar(T(0)));
    T mean = sum / T(n);
    Tensor<T> out = Tensor<T>::scalar(sum2 / T(n) - static_cast<T>(lambda) * mean * mean);
    Tensor<T> mask_copy = mask;
    return make_node<T>(std::move(out), {pred},
                        [pred, mask_copy, delta = std::move(delta), n, sum, lambda, log_inputs,
                         eps](Node<T>& g) {
        pred->ensure_grad();
        const T gs = g.grad.v[0];
        const T mean = sum / T(n);
        for (std::int64_t i = 0; i < pred->val.numel(); ++i) {
            if (mask_copy.v[i] < T(0.5)) continue;
            T dd = T(2) * delta.v[i] / T(n) - T(2) * static_cast<T>(lambda) * mean / T(n);
            if (!log_inputs) dd /= pred->val.v[i] + static_cast<T>(eps);
            pred->grad.v[i] += gs * dd;
        }
    });
}

// Plain L1 over the material channels.
template <class T>
Var<T> loss_material(const Var<T>& pred, const Var<T>& gt) {
    check_same_shape(pred->val, gt->val, "loss_material");
    return l1(pred, gt);
}

}  // namespace rf
