#include <algorithm>
#include <cmath>
#include <numbers>

#include "fda/error.hpp"
#include "fda/lbm.hpp"

namespace fda::lbm {

LbmConfig LbmConfig::desk() {
    LbmConfig c;
    c.domain_nx = 128;
    c.domain_ny = 64;
    c.obstacle_x = 32;
    c.obstacle_scale = 2;
    c.char_length = 32.0;
    c.reynolds = kDeskReynolds;
    c.warmup_steps = 500;
    c.measure_steps = 1500;
    c.snapshot_interval = 50;
    return c;
}

int LbmConfig::obstacle_row(int bitmap_resolution) const {
    return obstacle_y.value_or((domain_ny - bitmap_resolution) / 2);
}

Physics derive_physics(const LbmConfig& config) {
    Physics p;
    p.u_in = config.mach / std::numbers::sqrt3;
    p.nu = config.reynolds > 0.0 ? p.u_in * config.char_length / config.reynolds : 0.0;
    p.tau = 3.0 * p.nu + 0.5;
    if (!(config.mach > 0.0 && config.mach < 0.3)) {
        throw Error(ErrorCode::UnstableConfig, "Mach number must lie in (0, 0.3)", {{"lbm.mach", "must lie in (0, 0.3)"}});
    }
    if (!(p.tau > 0.5 && p.tau <= 2.0)) {
        throw Error(ErrorCode::UnstableConfig,
                    "relaxation time " + std::to_string(p.tau) + " outside (0.5, 2]",
                    {{"lbm.reynolds", "relaxation time outside (0.5, 2]"}});
    }
    return p;
}

LatticeState::LatticeState(int nx, int ny, Boundaries boundaries)
    : nx_(nx), ny_(ny), boundaries_(boundaries) {
    if (nx < 3 || ny < 3) throw Error(ErrorCode::ValidationError, "lattice must be at least 3x3");
    const auto cells = static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny);
    f_.assign(cells * kQ, 0.0);
    scratch_.assign(cells * kQ, 0.0);
    solid_.assign(cells, 0);
    row_fx_.assign(static_cast<std::size_t>(ny), 0.0);
    row_fy_.assign(static_cast<std::size_t>(ny), 0.0);
    row_umax_.assign(static_cast<std::size_t>(ny), 0.0);
    row_bad_.assign(static_cast<std::size_t>(ny), 0);
    for (int y = 0; y < ny; ++y)
        for (int x = 0; x < nx; ++x) set_equilibrium(x, y, 1.0, 0.0, 0.0);
}

void LatticeState::set_equilibrium(int x, int y, double rho, double ux, double uy) {
    const double usq = ux * ux + uy * uy;
    for (int q = 0; q < kQ; ++q) {
        const double cu = kCx[q] * ux + kCy[q] * uy;
        f_[index(q, x, y)] = kWeight[q] * (rho - 1.0) + kWeight[q] * rho * (3.0 * cu + 4.5 * cu * cu - 1.5 * usq);
    }
}

double LatticeState::density(int x, int y) const {
    double drho = 0.0;
    for (int q = 0; q < kQ; ++q) drho += f_[index(q, x, y)];
    return 1.0 + drho;
}

std::array<double, 2> LatticeState::velocity(int x, int y) const {
    double drho = 0.0;
    double mx = 0.0;
    double my = 0.0;
    for (int q = 0; q < kQ; ++q) {
        const double v = f_[index(q, x, y)];
        drho += v;
        mx += kCx[q] * v;
        my += kCy[q] * v;
    }
    return {mx / (1.0 + drho), my / (1.0 + drho)};
}

double LatticeState::total_mass() const {
    // Kahan-compensated sum of the density excess over the fluid cells.
    double sum = 0.0;
    std::size_t fluid = 0;
    double comp = 0.0;
    for (int y = 0; y < ny_; ++y)
        for (int x = 0; x < nx_; ++x) {
            if (solid(x, y)) continue;
            ++fluid;
            for (int q = 0; q < kQ; ++q) {
                const double v = f_[index(q, x, y)] - comp;
                const double t = sum + v;
                comp = (t - sum) - v;
                sum = t;
            }
        }
    return static_cast<double>(fluid) + sum;
}

bool LatticeState::all_finite() const {
    return std::all_of(f_.begin(), f_.end(), [](double v) { return std::isfinite(v); });
}

std::size_t LatticeState::negative_populations() const {
    std::size_t n = 0;
    for (int y = 0; y < ny_; ++y)
        for (int x = 0; x < nx_; ++x) {
            if (solid(x, y)) continue;
            for (int q = 0; q < kQ; ++q) n += population(q, x, y) < 0.0 ? 1 : 0;
        }
    return n;
}

std::size_t LatticeState::solid_count() const {
    return static_cast<std::size_t>(std::count(solid_.begin(), solid_.end(), std::uint8_t{1}));
}

encoding::Bitmap downsample(const encoding::Bitmap& bitmap, int factor) {
    if (factor < 1 || bitmap.resolution() % factor != 0) {
        throw Error(ErrorCode::ValidationError, "obstacle scale must divide the bitmap resolution",
                    {{"lbm.obstacle_scale", "must divide the bitmap resolution"}});
    }
    if (factor == 1) return bitmap;
    const int r = bitmap.resolution() / factor;
    const int block = factor * factor;
    encoding::Bitmap out(r);
    for (int y = 0; y < r; ++y)
        for (int x = 0; x < r; ++x) {
            int solid = 0;
            for (int dy = 0; dy < factor; ++dy)
                for (int dx = 0; dx < factor; ++dx) solid += bitmap.at(x * factor + dx, y * factor + dy) ? 1 : 0;
            out.set(x, y, 2 * solid >= block);
        }
    return out;
}

LatticeState build_domain(const encoding::Bitmap& full_bitmap, const LbmConfig& config) {
    const Physics physics = derive_physics(config);
    const encoding::Bitmap bitmap = downsample(full_bitmap, config.obstacle_scale);
    const int r = bitmap.resolution();
    const int x0 = config.obstacle_x;
    const int y0 = config.obstacle_row(r);
    if (x0 < 1 || x0 + r > config.domain_nx - 1 || y0 < 0 || y0 + r > config.domain_ny) {
        throw Error(ErrorCode::PlacementError,
                    "bitmap of size " + std::to_string(r) + " at (" + std::to_string(x0) + ", " +
                        std::to_string(y0) + ") does not fit between the inflow and outflow columns of a " +
                        std::to_string(config.domain_nx) + "x" + std::to_string(config.domain_ny) + " domain");
    }
    LatticeState state(config.domain_nx, config.domain_ny, Boundaries::Channel);
    for (int y = 0; y < r; ++y)
        for (int x = 0; x < r; ++x)
            if (bitmap.at(x, y)) state.set_solid(x0 + x, y0 + y, true);
    for (int y = 0; y < state.ny(); ++y)
        for (int x = 0; x < state.nx(); ++x) {
            if (state.solid(x, y)) state.set_equilibrium(x, y, 1.0, 0.0, 0.0);
            else state.set_equilibrium(x, y, 1.0, physics.u_in, 0.0);
        }
    return state;
}

std::array<double, 2> taylor_green_velocity(int n, double u0, double nu, int x, int y, double t) {
    const double k = 2.0 * std::numbers::pi / n;
    const double decay = std::exp(-2.0 * nu * k * k * t);
    return {-u0 * std::cos(k * x) * std::sin(k * y) * decay, u0 * std::sin(k * x) * std::cos(k * y) * decay};
}

LatticeState taylor_green(int n, double u0) {
    LatticeState state(n, n, Boundaries::Periodic);
    const double k = 2.0 * std::numbers::pi / n;
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const auto u = taylor_green_velocity(n, u0, 0.0, x, y, 0.0);
            const double p = -0.25 * u0 * u0 * (std::cos(2.0 * k * x) + std::cos(2.0 * k * y));
            state.set_equilibrium(x, y, 1.0 + 3.0 * p, u[0], u[1]);
        }
    return state;
}

// Kernels -------------------------------------------------------------------

struct Kernels {
    template <bool Parallel>
    static void run(LatticeState& s, const Physics& physics) {
        const int nx = s.nx_;
        const int ny = s.ny_;
        const double omega = 1.0 / physics.tau;
        const bool periodic_x = s.boundaries_ == Boundaries::Periodic;
        double* f = s.f_.data();
        double* g = s.scratch_.data();
        const std::uint8_t* solid = s.solid_.data();
        const std::size_t plane = static_cast<std::size_t>(nx) * ny;

        // collide in place
#pragma omp parallel for schedule(static) if (Parallel)
        for (int y = 0; y < ny; ++y) {
            double umax = 0.0;
            std::uint8_t bad = 0;
            for (int x = 0; x < nx; ++x) {
                const std::size_t c = static_cast<std::size_t>(y) * nx + x;
                if (solid[c]) continue;
                double fq[kQ];
                double drho = 0.0;
                for (int q = 0; q < kQ; ++q) {
                    fq[q] = f[q * plane + c];
                    drho += fq[q];
                }
                const double rho = 1.0 + drho;
                const double ux = (fq[1] - fq[3] + fq[5] - fq[6] - fq[7] + fq[8]) / rho;
                const double uy = (fq[2] - fq[4] + fq[5] + fq[6] - fq[7] - fq[8]) / rho;
                const double usq = ux * ux + uy * uy;
                if (!std::isfinite(usq) || usq > kDivergenceSpeed * kDivergenceSpeed) bad = 1;
                umax = std::max(umax, usq);
                double feq[kQ];
                for (int q = 0; q < kQ; ++q) {
                    const double cu = kCx[q] * ux + kCy[q] * uy;
                    feq[q] = kWeight[q] * drho + kWeight[q] * rho * (3.0 * cu + 4.5 * cu * cu - 1.5 * usq);
                }
                for (int q = 0; q < kQ; ++q) f[q * plane + c] = fq[q] - omega * (fq[q] - feq[q]);
            }
            s.row_umax_[static_cast<std::size_t>(y)] = std::sqrt(umax);
            s.row_bad_[static_cast<std::size_t>(y)] = bad;
        }

        const bool diverged = std::any_of(s.row_bad_.begin(), s.row_bad_.end(), [](std::uint8_t b) { return b != 0; });
        s.last_max_speed_ = *std::max_element(s.row_umax_.begin(), s.row_umax_.end());
        if (diverged) {
            throw Error(ErrorCode::DivergedSimulation,
                        "non-finite population or local speed above " + std::to_string(kDivergenceSpeed) +
                            " at step " + std::to_string(s.time_step_));
        }

        // pull-stream with halfway bounce-back
#pragma omp parallel for schedule(static) if (Parallel)
        for (int y = 0; y < ny; ++y) {
            double fx = 0.0;
            double fy = 0.0;
            for (int x = 0; x < nx; ++x) {
                const std::size_t c = static_cast<std::size_t>(y) * nx + x;
                if (solid[c]) {
                    for (int q = 0; q < kQ; ++q) g[q * plane + c] = f[q * plane + c];
                    continue;
                }
                g[c] = f[c];
                for (int q = 1; q < kQ; ++q) {
                    int xs = x - kCx[q];
                    int ys = y - kCy[q];
                    if (ys < 0) ys += ny;
                    else if (ys >= ny) ys -= ny;
                    if (xs < 0 || xs >= nx) {
                        if (!periodic_x) {
                            // open edge; fixed up by the inflow/outflow conditions
                            g[q * plane + c] = f[q * plane + c];
                            continue;
                        }
                        xs = xs < 0 ? xs + nx : xs - nx;
                    }
                    const std::size_t src = static_cast<std::size_t>(ys) * nx + xs;
                    if (solid[src]) {
                        const int o = kOpposite[q];
                        const double fo = f[o * plane + c];
                        g[q * plane + c] = fo;
                        fx += 2.0 * kCx[o] * (fo + kWeight[o]);
                        fy += 2.0 * kCy[o] * (fo + kWeight[o]);
                    } else {
                        g[q * plane + c] = f[q * plane + src];
                    }
                }
            }
            s.row_fx_[static_cast<std::size_t>(y)] = fx;
            s.row_fy_[static_cast<std::size_t>(y)] = fy;
        }

        s.f_.swap(s.scratch_);
        f = s.f_.data();

        if (!periodic_x) {
            const double u_in = physics.u_in;
            for (int y = 0; y < ny; ++y) {
                if (!s.solid(0, y)) s.set_equilibrium(0, y, 1.0, u_in, 0.0);
                if (!s.solid(nx - 1, y) && !s.solid(nx - 2, y)) {
                    for (int q = 0; q < kQ; ++q) f[s.index(q, nx - 1, y)] = f[s.index(q, nx - 2, y)];
                }
            }
        }

        Force force;
        for (int y = 0; y < ny; ++y) {
            force.fx += s.row_fx_[static_cast<std::size_t>(y)];
            force.fy += s.row_fy_[static_cast<std::size_t>(y)];
        }
        s.last_force_ = force;
        ++s.time_step_;
    }
};

void step(LatticeState& state, const Physics& physics) { Kernels::run<true>(state, physics); }

void step_serial(LatticeState& state, const Physics& physics) { Kernels::run<false>(state, physics); }

}  // namespace fda::lbm
