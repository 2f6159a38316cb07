#pragma once

// D2Q9 BGK lattice-Boltzmann channel flow around a bitmap obstacle.
//
// Populations are stored plane-per-direction (f[q][y][x]) so that row loops
// are contiguous; the OpenMP kernels parallelize over rows and perform the
// same per-cell arithmetic as the serial reference, so both produce
// bit-identical states.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fda/encoding.hpp"

namespace fda::lbm {

inline constexpr int kQ = 9;
inline constexpr std::array<int, kQ> kCx = {0, 1, 0, -1, 0, 1, -1, -1, 1};
inline constexpr std::array<int, kQ> kCy = {0, 0, 1, 0, -1, 1, 1, -1, -1};
inline constexpr std::array<int, kQ> kOpposite = {0, 3, 4, 1, 2, 7, 8, 5, 6};
inline constexpr std::array<double, kQ> kWeight = {4.0 / 9,  1.0 / 9,  1.0 / 9,  1.0 / 9, 1.0 / 9,
                                                   1.0 / 36, 1.0 / 36, 1.0 / 36, 1.0 / 36};
/// Local speed above which the state is treated as diverged (just above c_s).
inline constexpr double kDivergenceSpeed = 0.57;
/// Plain BGK diverges for essentially every shape at Re 3900 on desk-sized
/// grids (tau ~ 0.501); the desk preset trades accuracy for stability.
inline constexpr double kDeskReynolds = 200.0;

struct LbmConfig {
    double mach = 0.075;
    double reynolds = 3900.0;
    int domain_nx = 256;
    int domain_ny = 128;
    int obstacle_x = 64;
    std::optional<int> obstacle_y;  // lower edge of the obstacle; centred when unset
    int obstacle_scale = 1;         // bitmap is block-downsampled by this factor
    double char_length = 64.0;      // Reynolds reference length in cells
    int warmup_steps = 4000;
    int measure_steps = 8000;
    int snapshot_interval = 100;
    bool keep_snapshots = false;

    /// 128x64 channel with a half-resolution obstacle at Re kDeskReynolds,
    /// 500 warmup / 1500 measurement steps.
    static LbmConfig desk();

    int obstacle_row(int obstacle_size) const;
};

struct Physics {
    double u_in = 0.0;
    double nu = 0.0;
    double tau = 0.0;
};

/// u_in = Ma * c_s, nu = u_in L / Re, tau = 3 nu + 1/2. Throws
/// UnstableConfig unless 0 < Ma < 0.3 and tau in (0.5, 2].
Physics derive_physics(const LbmConfig& config);

enum class Boundaries {
    Channel,   // equilibrium inflow left, copy outflow right, periodic top/bottom
    Periodic,  // periodic on all sides
};

struct Force {
    double fx = 0.0;
    double fy = 0.0;
};

class LatticeState {
public:
    LatticeState() = default;
    LatticeState(int nx, int ny, Boundaries boundaries);

    int nx() const noexcept { return nx_; }
    int ny() const noexcept { return ny_; }
    Boundaries boundaries() const noexcept { return boundaries_; }
    long time_step() const noexcept { return time_step_; }

    std::size_t cell(int x, int y) const { return static_cast<std::size_t>(y) * nx_ + x; }
    std::size_t index(int q, int x, int y) const {
        return (static_cast<std::size_t>(q) * ny_ + y) * nx_ + x;
    }
    /// Population f_q at (x, y). Storage holds f_q - w_q to limit round-off.
    double population(int q, int x, int y) const { return f_[index(q, x, y)] + kWeight[static_cast<std::size_t>(q)]; }
    void set_population(int q, int x, int y, double v) { f_[index(q, x, y)] = v - kWeight[static_cast<std::size_t>(q)]; }
    bool solid(int x, int y) const { return solid_[cell(x, y)] != 0; }
    void set_solid(int x, int y, bool s) { solid_[cell(x, y)] = s ? 1 : 0; }

    /// Sets every population of (x, y) to equilibrium at (rho, ux, uy).
    void set_equilibrium(int x, int y, double rho, double ux, double uy);

    double density(int x, int y) const;
    std::array<double, 2> velocity(int x, int y) const;
    double total_mass() const;  // over fluid cells
    bool all_finite() const;
    std::size_t negative_populations() const;

    /// Momentum transferred to solid cells during the last step.
    Force last_force() const noexcept { return last_force_; }
    /// Largest fluid speed seen during the last collision.
    double last_max_speed() const noexcept { return last_max_speed_; }

    std::size_t solid_count() const;

    bool operator==(const LatticeState& o) const {
        return nx_ == o.nx_ && ny_ == o.ny_ && time_step_ == o.time_step_ && f_ == o.f_ && solid_ == o.solid_;
    }

private:
    friend struct Kernels;

    int nx_ = 0;
    int ny_ = 0;
    Boundaries boundaries_ = Boundaries::Channel;
    long time_step_ = 0;
    std::vector<double> f_;
    std::vector<double> scratch_;
    std::vector<std::uint8_t> solid_;
    Force last_force_;
    double last_max_speed_ = 0.0;
    std::vector<double> row_fx_;
    std::vector<double> row_fy_;
    std::vector<double> row_umax_;
    std::vector<std::uint8_t> row_bad_;
};

/// Block-downsamples a bitmap; a block is solid when at least half of its
/// cells are. Returns the input when factor is 1.
encoding::Bitmap downsample(const encoding::Bitmap& bitmap, int factor);

/// Places the (downsampled) bitmap at (obstacle_x, obstacle_row) and initializes fluid
/// cells to equilibrium at (u_in, 0). Throws PlacementError when the bitmap
/// does not fit or touches the inflow/outflow columns.
LatticeState build_domain(const encoding::Bitmap& bitmap, const LbmConfig& config);

/// Periodic n x n Taylor-Green vortex with amplitude u0 and wavenumber
/// 2 pi / n, including the consistent pressure field.
LatticeState taylor_green(int n, double u0);

/// Analytic Taylor-Green velocity at lattice node (x, y) and time t.
std::array<double, 2> taylor_green_velocity(int n, double u0, double nu, int x, int y, double t);

/// One BGK collide + stream with halfway bounce-back. Throws
/// DivergedSimulation when a population is non-finite or a local speed
/// exceeds kDivergenceSpeed; the state is left at the failed step.
void step(LatticeState& state, const Physics& physics);

/// Single-threaded reference of `step`.
void step_serial(LatticeState& state, const Physics& physics);

struct Field {
    int nx = 0;
    int ny = 0;
    std::vector<double> values;  // row-major
    double at(int x, int y) const { return values[static_cast<std::size_t>(y) * nx + x]; }
};

struct VelocityField {
    int nx = 0;
    int ny = 0;
    std::vector<double> ux;
    std::vector<double> uy;
    std::vector<std::uint8_t> solid;  // empty = all fluid
    bool periodic_x = false;
    bool periodic_y = true;
};

VelocityField velocity_field(const LatticeState& state);

/// omega = d(uy)/dx - d(ux)/dy by central differences, one-sided next to
/// solid cells and at non-periodic edges; zero on solid cells.
Field vorticity(const VelocityField& velocity);

/// 1/2 sum of omega^2 over fluid cells (unit cell area).
double enstrophy(const Field& vorticity, const std::vector<std::uint8_t>& solid);

struct FlowSnapshot {
    long step = 0;
    VelocityField velocity;
    Field vorticity;
};

struct FlowMetrics {
    double u_max = 0.0;
    double enstrophy = 0.0;
    double area = 0.0;
    std::vector<FlowSnapshot> snapshots;
};

/// Either metrics or a failure description; failed runs carry no metrics.
struct SimulationResult {
    std::optional<FlowMetrics> metrics;
    std::string failure;
    long failed_at_step = -1;
    Force mean_force;  // averaged over the warmup window

    bool ok() const { return metrics.has_value(); }
};

/// Warmup, then measurement with u_max tracked every step and enstrophy
/// averaged over snapshots taken every snapshot_interval steps.
SimulationResult simulate(const encoding::Bitmap& bitmap, const LbmConfig& config);

// Snapshot export -----------------------------------------------------------

/// "FDAF" magic, then nx, ny, count as little-endian u32; each snapshot is
/// three f32 planes (ux, uy, vorticity), row-major.
std::vector<std::uint8_t> encode_snapshots(const std::vector<FlowSnapshot>& snapshots);
std::vector<FlowSnapshot> decode_snapshots(const std::vector<std::uint8_t>& bytes);

/// CSV with header `x,y,ux,uy,vorticity`, one row per cell.
std::string snapshot_csv(const FlowSnapshot& snapshot);

}  // namespace fda::lbm
