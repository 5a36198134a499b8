#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "renderflow/bridge.hpp"

using namespace rf;

namespace {

Tensor<double> tvec(std::initializer_list<double> xs) {
    Tensor<double> t({static_cast<int>(xs.size())});
    int i = 0;
    for (double x : xs) t.v[static_cast<size_t>(i++)] = x;
    return t;
}

Tensor<double> random_tensor(int n, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t({n});
    for (auto& x : t.v) x = rng.uniform(lo, hi);
    return t;
}

}  // namespace

TEST_CASE("interpolate endpoints and midpoint") {
    Rng rng(1);
    auto z0 = random_tensor(64, rng);
    auto z1 = random_tensor(64, rng);
    Tensor<double> eps({64});
    fill_normal(eps, rng);

    auto at0 = interpolate(z0, z1, 0.0, 0.5, eps);
    for (int i = 0; i < 64; ++i) CHECK(at0.v[i] == z0.v[i]);  // sqrt(0*1) kills the noise

    auto z0c = Tensor<double>::full({4}, 0.0);
    auto z1c = Tensor<double>::full({4}, 2.0);
    auto epsz = Tensor<double>::zeros({4});
    auto mid = interpolate(z0c, z1c, 0.5, 0.0, epsz);
    for (int i = 0; i < 4; ++i) CHECK(mid.v[i] == doctest::Approx(1.0));

    // sigma = 0.005 (paper's bridge noise), fixed eps = 1
    auto eps1 = Tensor<double>::full({4}, 1.0);
    auto zt = interpolate(z0c, z1c, 0.5, 0.005, eps1);
    for (int i = 0; i < 4; ++i) CHECK(zt.v[i] == doctest::Approx(1.0 + 0.0025).epsilon(1e-12));

    CHECK_THROWS_AS(interpolate(z0, tvec({1.0}), 0.5, 0.0, eps), std::invalid_argument);
    CHECK_THROWS_AS(interpolate(z0c, z1c, 1.5, 0.0, epsz), std::invalid_argument);
}

TEST_CASE("velocity_target basics and singularity guard") {
    Rng rng(2);
    auto z1 = random_tensor(32, rng);
    auto v0 = velocity_target(z1, z1, 0.5);
    for (auto x : v0.v) CHECK(x == 0.0);

    // sigma = 0 makes the target constant in t and equal to z1 - z0
    auto z0 = random_tensor(32, rng);
    auto epsz = Tensor<double>::zeros({32});
    for (double t : {0.0, 0.25, 0.5, 0.75}) {
        auto zt = interpolate(z0, z1, t, 0.0, epsz);
        auto v = velocity_target(z1, zt, t);
        for (int i = 0; i < 32; ++i)
            CHECK(v.v[i] == doctest::Approx(z1.v[i] - z0.v[i]).epsilon(1e-9));
    }

    auto z1b = tvec({2.0});
    auto ztb = tvec({1.0});
    auto big = velocity_target(z1b, ztb, 0.9998);
    CHECK(std::isfinite(big.v[0]));
    CHECK(big.v[0] == doctest::Approx(1.0 / (1.0 - 0.9998)));
    CHECK_THROWS_AS(velocity_target(z1b, ztb, 0.9999), std::invalid_argument);
    CHECK_THROWS_AS(velocity_target(z1b, ztb, 1.0), std::invalid_argument);
}

TEST_CASE("recover_endpoint inverts the interpolation exactly") {
    Rng rng(3);
    auto z0 = random_tensor(48, rng);
    auto z1 = random_tensor(48, rng);
    Tensor<double> eps({48});
    fill_normal(eps, rng);
    for (double t : {0.0, 0.25, 0.5, 0.75}) {
        auto zt = interpolate(z0, z1, t, 0.0, eps);
        auto v = velocity_target(z1, zt, t);
        auto rec = recover_endpoint(zt, v, t);
        for (int i = 0; i < 48; ++i) CHECK(rec.v[i] == doctest::Approx(z1.v[i]).epsilon(1e-12));
    }
    // t=0, v = z1 - z0, zt = z0
    Tensor<double> v({48});
    for (int i = 0; i < 48; ++i) v.v[i] = z1.v[i] - z0.v[i];
    auto rec = recover_endpoint(z0, v, 0.0);
    for (int i = 0; i < 48; ++i) CHECK(rec.v[i] == doctest::Approx(z1.v[i]));
    // v = 0 is the identity
    auto idz = recover_endpoint(z0, Tensor<double>::zeros({48}), 0.3);
    for (int i = 0; i < 48; ++i) CHECK(idz.v[i] == z0.v[i]);
    CHECK_THROWS_AS(recover_endpoint(z0, tvec({0.0}), 0.3), std::invalid_argument);
}

TEST_CASE("sample_timestep: discrete frequencies and uniform mean") {
    BridgeConfig cfg;
    cfg.schedule = TimestepSchedule::discrete4;
    cfg.validate();
    Rng rng(4);
    const int n = 100000;
    int counts[4] = {0, 0, 0, 0};
    for (int i = 0; i < n; ++i) {
        double t = sample_timestep(cfg, rng);
        for (int k = 0; k < 4; ++k)
            if (t == cfg.t_grid[static_cast<size_t>(k)]) ++counts[k];
    }
    for (int k = 0; k < 4; ++k)
        CHECK(std::abs(counts[k] / static_cast<double>(n) - 0.25) < 0.01);

    cfg.schedule = TimestepSchedule::uniform;
    Rng rng2(5);
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += sample_timestep(cfg, rng2);
    mean /= n;
    CHECK(std::abs(mean - cfg.t_max / 2.0) < 0.01);

    // determinism: same seed, same stream
    Rng a(9), b(9);
    for (int i = 0; i < 100; ++i) CHECK(sample_timestep(cfg, a) == sample_timestep(cfg, b));
}

TEST_CASE("ode_step linearity and endpoint") {
    Rng rng(6);
    auto z0 = random_tensor(16, rng);
    auto z1 = random_tensor(16, rng);
    auto epsz = Tensor<double>::zeros({16});
    double t = 0.25;
    auto zt = interpolate(z0, z1, t, 0.0, epsz);
    auto v = velocity_target(z1, zt, t);
    auto end = ode_step(zt, v, t, 1.0 - t);
    for (int i = 0; i < 16; ++i) CHECK(end.v[i] == doctest::Approx(z1.v[i]).epsilon(1e-12));

    auto still = ode_step(zt, Tensor<double>::zeros({16}), t, 0.5);
    for (int i = 0; i < 16; ++i) CHECK(still.v[i] == zt.v[i]);

    auto half1 = ode_step(zt, v, t, 0.25);
    auto half2 = ode_step(half1, v, t + 0.25, 0.25);
    auto full = ode_step(zt, v, t, 0.5);
    for (int i = 0; i < 16; ++i) CHECK(half2.v[i] == doctest::Approx(full.v[i]).epsilon(1e-12));

    CHECK_THROWS_AS(ode_step(zt, v, 0.9, 0.2), std::invalid_argument);
}

TEST_CASE("sde_step degenerates to the ODE at sigma=0 and is deterministic at t_next=1") {
    Rng rng(7);
    auto zt = random_tensor(16, rng);
    auto v = random_tensor(16, rng);
    Rng r1(11), r2(12);
    auto sde = sde_step(zt, v, 0.25, 0.5, 0.0, r1);
    auto ode = ode_step(zt, v, 0.25, 0.25);
    for (int i = 0; i < 16; ++i) CHECK(sde.v[i] == ode.v[i]);

    auto terma = sde_step(zt, v, 0.75, 1.0, 0.7, r1);
    auto termb = sde_step(zt, v, 0.75, 1.0, 0.7, r2);
    auto rec = recover_endpoint(zt, v, 0.75);
    for (int i = 0; i < 16; ++i) {
        CHECK(terma.v[i] == termb.v[i]);
        CHECK(terma.v[i] == rec.v[i]);
    }
    CHECK_THROWS_AS(sde_step(zt, v, 0.5, 0.25, 0.1, r1), std::invalid_argument);
    CHECK_THROWS_AS(sde_step(zt, v, 0.5, 0.99995, 0.1, r1), std::invalid_argument);
}

TEST_CASE("Brownian-bridge marginal variance sigma^2 t (1-t)") {
    const double sigma = 0.005;
    Rng rng(8);
    auto z0 = Tensor<double>::full({1}, 0.3);
    auto z1 = Tensor<double>::full({1}, 0.9);
    const int n = 200000;
    for (double t : {0.25, 0.5, 0.75}) {
        double mean = 0.0, m2 = 0.0;
        Tensor<double> eps({1});
        for (int i = 0; i < n; ++i) {
            fill_normal(eps, rng);
            double z = interpolate(z0, z1, t, sigma, eps).v[0];
            mean += z;
            m2 += z * z;
        }
        mean /= n;
        double var = m2 / n - mean * mean;
        double expect = sigma * sigma * t * (1.0 - t);
        CHECK(std::abs(var - expect) / expect < 0.05);
    }
}

TEST_CASE("sde_step noise matches the bridge variance target") {
    Rng rng(9);
    auto zt = Tensor<double>::full({1}, 0.2);
    auto v = Tensor<double>::full({1}, 0.5);
    const double sigma = 0.4;
    const double t = 0.25, t_next = 0.5;
    const int n = 200000;
    double mean = 0.0, m2 = 0.0;
    for (int i = 0; i < n; ++i) {
        double z = sde_step(zt, v, t, t_next, sigma, rng).v[0];
        mean += z;
        m2 += z * z;
    }
    mean /= n;
    double var = m2 / n - mean * mean;
    double expect = sigma * sigma * t_next * (1.0 - t_next);
    CHECK(std::abs(var - expect) / expect < 0.05);
    CHECK(mean == doctest::Approx(0.2 + 0.5 * 0.25).epsilon(1e-2));
}

TEST_CASE("BridgeConfig validation") {
    BridgeConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.sigma = -1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.sigma = 0.005;
    cfg.t_grid = {0.5, 0.25};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.t_grid = {0.0, 1.5};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
