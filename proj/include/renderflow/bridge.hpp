#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "renderflow/common.hpp"
#include "renderflow/tensor.hpp"

namespace rf {

enum class TimestepSchedule { uniform, discrete4 };

struct BridgeConfig {
    double sigma = 0.005;
    TimestepSchedule schedule = TimestepSchedule::discrete4;
    std::vector<double> t_grid{0.0, 0.25, 0.5, 0.75};
    double t_max = 0.9999;  // guards the 1/(1-t) singularity

    void validate() const {
        if (sigma < 0.0) throw std::invalid_argument("bridge.sigma must be >= 0");
        if (t_grid.empty()) throw std::invalid_argument("bridge.t_grid must be non-empty");
        for (size_t i = 0; i < t_grid.size(); ++i) {
            if (t_grid[i] < 0.0 || t_grid[i] > t_max)
                throw std::invalid_argument("bridge.t_grid values must lie in [0, t_max]");
            if (i > 0 && t_grid[i] <= t_grid[i - 1])
                throw std::invalid_argument("bridge.t_grid must be strictly increasing");
        }
        if (!(t_max < 1.0)) throw std::invalid_argument("bridge.t_max must be < 1");
    }
};

// Fill a tensor with standard normal samples.
template <class T>
void fill_normal(Tensor<T>& t, Rng& rng) {
    for (auto& x : t.v) x = static_cast<T>(rng.normal());
}

// zt = (1-t) z0 + t z1 + sigma sqrt(t(1-t)) eps
template <class T>
Tensor<T> interpolate(const Tensor<T>& z0, const Tensor<T>& z1, double t, double sigma,
                      const Tensor<T>& eps, double t_max = 0.9999) {
    check_same_shape(z0, z1, "interpolate");
    check_same_shape(z0, eps, "interpolate");
    if (t < 0.0 || t > t_max) throw std::invalid_argument("interpolate: t outside [0, t_max]");
    const T a = static_cast<T>(1.0 - t), b = static_cast<T>(t);
    const T c = static_cast<T>(sigma * std::sqrt(t * (1.0 - t)));
    Tensor<T> zt(z0.shape);
    for (std::int64_t i = 0; i < zt.numel(); ++i) zt.v[i] = a * z0.v[i] + b * z1.v[i] + c * eps.v[i];
    return zt;
}

// v* = (z1 - zt) / (1 - t)
template <class T>
Tensor<T> velocity_target(const Tensor<T>& z1, const Tensor<T>& zt, double t,
                          double t_max = 0.9999) {
    check_same_shape(z1, zt, "velocity_target");
    if (t >= t_max) throw std::invalid_argument("velocity_target: t >= t_max (singularity guard)");
    const T s = static_cast<T>(1.0 / (1.0 - t));
    Tensor<T> v(z1.shape);
    for (std::int64_t i = 0; i < v.numel(); ++i) v.v[i] = (z1.v[i] - zt.v[i]) * s;
    return v;
}

// z1_hat = zt + v (1 - t)
template <class T>
Tensor<T> recover_endpoint(const Tensor<T>& zt, const Tensor<T>& v, double t,
                           double t_max = 0.9999) {
    check_same_shape(zt, v, "recover_endpoint");
    if (t < 0.0 || t > t_max) throw std::invalid_argument("recover_endpoint: t outside [0, t_max]");
    const T s = static_cast<T>(1.0 - t);
    Tensor<T> z(zt.shape);
    for (std::int64_t i = 0; i < z.numel(); ++i) z.v[i] = zt.v[i] + v.v[i] * s;
    return z;
}

inline double sample_timestep(const BridgeConfig& cfg, Rng& rng) {
    if (cfg.schedule == TimestepSchedule::uniform) return rng.uniform(0.0, cfg.t_max);
    return cfg.t_grid[rng.randint(cfg.t_grid.size())];
}

// Euler step z + v dt
template <class T>
Tensor<T> ode_step(const Tensor<T>& zt, const Tensor<T>& v, double t, double dt) {
    check_same_shape(zt, v, "ode_step");
    if (t + dt > 1.0 + 1e-12) throw std::invalid_argument("ode_step: t + dt exceeds 1");
    const T s = static_cast<T>(dt);
    Tensor<T> z(zt.shape);
    for (std::int64_t i = 0; i < z.numel(); ++i) z.v[i] = zt.v[i] + v.v[i] * s;
    return z;
}

// Ancestral bridge step: move along v to t_next, then re-noise towards the
// Brownian-bridge marginal at t_next. Terminal t_next = 1 is the
// deterministic endpoint recovery.
template <class T>
Tensor<T> sde_step(const Tensor<T>& zt, const Tensor<T>& v, double t, double t_next, double sigma,
                   Rng& rng, double t_max = 0.9999) {
    check_same_shape(zt, v, "sde_step");
    bool terminal = t_next == 1.0;
    if (!(t < t_next && (t_next <= t_max || terminal)))
        throw std::invalid_argument("sde_step: need t < t_next <= t_max or t_next == 1");
    if (terminal) return recover_endpoint(zt, v, t, t_max);
    const T drift = static_cast<T>(t_next - t);
    const T noise = static_cast<T>(sigma * std::sqrt(t_next * (1.0 - t_next)));
    Tensor<T> z(zt.shape);
    for (std::int64_t i = 0; i < z.numel(); ++i)
        z.v[i] = zt.v[i] + v.v[i] * drift + noise * static_cast<T>(rng.normal());
    return z;
}

}  // namespace rf
