#include <cmath>
#include <numbers>

#include <doctest.h>

#include "fda/error.hpp"
#include "fda/lbm.hpp"

using namespace fda;
using namespace fda::lbm;

namespace {

encoding::Bitmap disk(double r_param) {
    std::vector<double> p;
    for (int i = 0; i < 8; ++i) {
        p.push_back(r_param);
        p.push_back(0.5);
    }
    return encoding::express(encoding::ShapeGenome(p), 64);
}

Physics physics_for_tau(double tau) { return {0.0, (tau - 0.5) / 3.0, tau}; }

// Relative L2 error of the lattice velocity against the analytic decay.
double taylor_green_error(int n, double u0, double nu, int steps) {
    auto state = taylor_green(n, u0);
    const auto phys = physics_for_tau(3.0 * nu + 0.5);
    for (int t = 0; t < steps; ++t) step(state, phys);
    double num = 0.0;
    double den = 0.0;
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const auto u = state.velocity(x, y);
            const auto a = taylor_green_velocity(n, u0, nu, x, y, steps);
            num += (u[0] - a[0]) * (u[0] - a[0]) + (u[1] - a[1]) * (u[1] - a[1]);
            den += a[0] * a[0] + a[1] * a[1];
        }
    return std::sqrt(num / den);
}

}  // namespace

TEST_CASE("derive_physics uses standard lattice-unit relations") {
    LbmConfig c;
    const auto p = derive_physics(c);
    CHECK(p.u_in == doctest::Approx(0.075 / std::sqrt(3.0)).epsilon(1e-14));
    CHECK(p.u_in == doctest::Approx(0.0433013).epsilon(1e-6));
    CHECK(p.nu == doctest::Approx(0.0433013 * 64.0 / 3900.0).epsilon(1e-5));
    CHECK(p.nu == doctest::Approx(7.106e-4).epsilon(1e-3));
    CHECK(p.tau == doctest::Approx(0.50213).epsilon(1e-5));

    c.mach = 0.0;
    CHECK_THROWS_AS(derive_physics(c), Error);
    c.mach = 0.29;
    CHECK_NOTHROW(derive_physics(c));
    c.mach = 0.5;
    CHECK_THROWS_AS(derive_physics(c), Error);
    c.mach = 0.075;
    c.reynolds = 1.0;  // tau far above 2
    CHECK_THROWS_AS(derive_physics(c), Error);
}

TEST_CASE("rest state is a fixed point") {
    LatticeState state(32, 24, Boundaries::Periodic);
    const LatticeState initial = state;
    const auto phys = physics_for_tau(0.8);
    for (int t = 0; t < 200; ++t) step(state, phys);
    double worst = 0.0;
    for (int q = 0; q < kQ; ++q)
        for (int y = 0; y < 24; ++y)
            for (int x = 0; x < 32; ++x) worst = std::max(worst, std::abs(state.population(q, x, y) - initial.population(q, x, y)));
    CHECK(worst < 1e-15);
}

TEST_CASE("mass is conserved with periodic boundaries") {
    auto state = taylor_green(64, 0.04);
    const double m0 = state.total_mass();
    const auto phys = physics_for_tau(0.5 + 3.0 * 7.1e-4);
    for (int t = 0; t < 1000; ++t) step(state, phys);
    CHECK(std::abs(state.total_mass() - m0) < 1e-10);
}

TEST_CASE("Taylor-Green decay matches the analytic solution") {
    CHECK(taylor_green_error(64, 0.02, 7.1e-4, 1000) < 0.01);
}

TEST_CASE("Taylor-Green error converges at second order under diffusive scaling") {
    const double nu = 0.02;
    const double coarse = taylor_green_error(64, 0.02, nu, 2000);
    const double fine = taylor_green_error(128, 0.01, nu, 8000);
    CHECK(fine <= 0.25 * 1.2 * coarse);
}

TEST_CASE("OpenMP step is bit-identical to the serial reference") {
    auto c = LbmConfig::desk();
    auto a = build_domain(disk(0.6), c);
    auto b = a;
    const auto phys = derive_physics(c);
    for (int t = 0; t < 60; ++t) {
        step(a, phys);
        step_serial(b, phys);
    }
    CHECK(a == b);
    CHECK(a.last_force().fx == b.last_force().fx);
    CHECK(a.last_force().fy == b.last_force().fy);
}

TEST_CASE("build_domain places the obstacle and rejects bad placements") {
    auto c = LbmConfig::desk();
    const auto bm = disk(0.5);
    const auto state = build_domain(bm, c);
    CHECK(state.solid_count() == downsample(bm, 2).solid_count());
    const auto phys = derive_physics(c);
    const auto u = state.velocity(5, 5);
    CHECK(u[0] == doctest::Approx(phys.u_in));
    CHECK(u[1] == doctest::Approx(0.0));

    c.obstacle_x = 0;
    CHECK_THROWS_AS(build_domain(bm, c), Error);
    c.obstacle_x = 128 - 32;  // overlaps the outflow column
    CHECK_THROWS_AS(build_domain(bm, c), Error);
    c = LbmConfig::desk();
    c.obstacle_scale = 1;  // 64-cell bitmap at x=32 hits the outflow
    c.obstacle_x = 64;
    CHECK_THROWS_AS(build_domain(bm, c), Error);
}

TEST_CASE("downsample keeps blocks that are at least half solid") {
    encoding::Bitmap bm(4);
    bm.set(0, 0, true);
    bm.set(1, 0, true);  // top-left block: 2 of 4
    bm.set(2, 2, true);  // bottom-right block: 1 of 4
    const auto small = downsample(bm, 2);
    CHECK(small.resolution() == 2);
    CHECK(small.at(0, 0));
    CHECK_FALSE(small.at(1, 1));
    CHECK_THROWS_AS(downsample(bm, 3), Error);
}

TEST_CASE("vorticity of simple fields") {
    VelocityField v;
    v.nx = 16;
    v.ny = 12;
    v.periodic_x = false;
    v.periodic_y = false;
    v.ux.assign(16 * 12, 0.3);
    v.uy.assign(16 * 12, -0.1);
    for (double w : vorticity(v).values) CHECK(w == 0.0);

    const double omega = 0.013;
    for (int y = 0; y < v.ny; ++y)
        for (int x = 0; x < v.nx; ++x) {
            v.ux[static_cast<std::size_t>(y * v.nx + x)] = -omega * (y - 5.5);
            v.uy[static_cast<std::size_t>(y * v.nx + x)] = omega * (x - 7.5);
        }
    const auto w = vorticity(v);
    for (int y = 1; y < v.ny - 1; ++y)
        for (int x = 1; x < v.nx - 1; ++x) CHECK(std::abs(w.at(x, y) - 2.0 * omega) < 1e-12);
}

TEST_CASE("vorticity of the Taylor-Green field is second-order accurate") {
    auto linf = [](int n) {
        const double u0 = 0.05;
        const double k = 2.0 * std::numbers::pi / n;
        VelocityField v;
        v.nx = v.ny = n;
        v.periodic_x = v.periodic_y = true;
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                const auto u = taylor_green_velocity(n, u0, 0.0, x, y, 0.0);
                v.ux.push_back(u[0]);
                v.uy.push_back(u[1]);
            }
        const auto w = vorticity(v);
        double err = 0.0;
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                const double exact = 2.0 * u0 * k * std::cos(k * x) * std::cos(k * y);
                err = std::max(err, std::abs(w.at(x, y) - exact) / (2.0 * u0 * k));
            }
        return err;
    };
    const double e32 = linf(32);
    const double e64 = linf(64);
    CHECK(e64 < 0.3 * e32);
    CHECK(e64 < 1e-2);
}

TEST_CASE("vorticity next to solids uses one-sided differences") {
    VelocityField v;
    v.nx = 3;
    v.ny = 1;
    v.periodic_x = false;
    v.periodic_y = false;
    v.ux = {0.0, 0.0, 0.0};
    v.uy = {0.0, 1.0, 3.0};
    v.solid = {1, 0, 0};
    const auto w = vorticity(v);
    CHECK(w.at(0, 0) == 0.0);
    CHECK(w.at(1, 0) == doctest::Approx(2.0));  // forward difference
    CHECK(w.at(2, 0) == doctest::Approx(2.0));  // backward at the edge
}

TEST_CASE("smallest disk accelerates the flow") {
    const auto c = LbmConfig::desk();
    const auto r = simulate(disk(0.0), c);
    REQUIRE(r.ok());
    CHECK(r.metrics->u_max > derive_physics(c).u_in);
    CHECK(r.metrics->enstrophy >= 0.0);
    CHECK(r.metrics->area == doctest::Approx(encoding::area(disk(0.0))));
}

TEST_CASE("simulation is deterministic") {
    auto c = LbmConfig::desk();
    c.warmup_steps = 100;
    c.measure_steps = 200;
    const auto a = simulate(disk(0.4), c);
    const auto b = simulate(disk(0.4), c);
    REQUIRE(a.ok());
    CHECK(a.metrics->u_max == b.metrics->u_max);
    CHECK(a.metrics->enstrophy == b.metrics->enstrophy);
}

TEST_CASE("symmetric disk produces no net lift before shedding") {
    auto c = LbmConfig::desk();
    c.measure_steps = 1;
    const auto r = simulate(disk(0.5), c);
    REQUIRE(r.ok());
    CHECK(r.mean_force.fx > 0.0);
    CHECK(std::abs(r.mean_force.fy) < 0.05 * std::abs(r.mean_force.fx));
}

TEST_CASE("enstrophy does not decrease across nested disks") {
    const auto c = LbmConfig::desk();
    double previous = -1.0;
    for (double r : {0.2, 0.5, 0.8}) {
        const auto res = simulate(disk(r), c);
        REQUIRE(res.ok());
        CHECK(res.metrics->enstrophy >= previous);
        previous = res.metrics->enstrophy;
    }
}

TEST_CASE("divergence is reported as a failed evaluation") {
    auto c = LbmConfig::desk();
    c.reynolds = 3900.0;
    const auto r = simulate(disk(0.9), c);
    CHECK_FALSE(r.ok());
    CHECK_FALSE(r.failure.empty());
    CHECK(r.failed_at_step >= 0);
}

TEST_CASE("snapshots export to FDAF and CSV") {
    auto c = LbmConfig::desk();
    c.warmup_steps = 10;
    c.measure_steps = 20;
    c.snapshot_interval = 10;
    c.keep_snapshots = true;
    const auto r = simulate(disk(0.5), c);
    REQUIRE(r.ok());
    REQUIRE(r.metrics->snapshots.size() == 2);
    const auto bytes = encode_snapshots(r.metrics->snapshots);
    CHECK(bytes.size() == 16 + 2 * 3 * 4 * 128 * 64);
    CHECK(bytes[0] == 'F');
    CHECK(bytes[3] == 'F');
    CHECK(bytes[4] == 128);
    CHECK(bytes[8] == 64);
    CHECK(bytes[12] == 2);
    const auto back = decode_snapshots(bytes);
    REQUIRE(back.size() == 2);
    CHECK(static_cast<float>(back[1].velocity.ux[777]) == static_cast<float>(r.metrics->snapshots[1].velocity.ux[777]));

    auto truncated = bytes;
    truncated.pop_back();
    CHECK_THROWS_AS(decode_snapshots(truncated), Error);

    const auto csv = snapshot_csv(r.metrics->snapshots[0]);
    CHECK(csv.rfind("x,y,ux,uy,vorticity\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 128 * 64);
}
