#include <bit>
#include <cmath>
#include <cstring>
#include <sstream>

#include "fda/error.hpp"
#include "fda/lbm.hpp"

namespace fda::lbm {

VelocityField velocity_field(const LatticeState& state) {
    VelocityField v;
    v.nx = state.nx();
    v.ny = state.ny();
    const auto cells = static_cast<std::size_t>(v.nx) * v.ny;
    v.ux.assign(cells, 0.0);
    v.uy.assign(cells, 0.0);
    v.solid.assign(cells, 0);
    v.periodic_x = state.boundaries() == Boundaries::Periodic;
    v.periodic_y = true;
    for (int y = 0; y < v.ny; ++y)
        for (int x = 0; x < v.nx; ++x) {
            const auto c = state.cell(x, y);
            if (state.solid(x, y)) {
                v.solid[c] = 1;
                continue;
            }
            const auto u = state.velocity(x, y);
            v.ux[c] = u[0];
            v.uy[c] = u[1];
        }
    return v;
}

namespace {

// Derivative of `u` along one axis at cell (x, y); `prev`/`next` are the
// neighbour cell indices or -1 when unavailable.
double derivative(const std::vector<double>& u, std::size_t c, long prev, long next) {
    if (prev >= 0 && next >= 0) return 0.5 * (u[static_cast<std::size_t>(next)] - u[static_cast<std::size_t>(prev)]);
    if (next >= 0) return u[static_cast<std::size_t>(next)] - u[c];
    if (prev >= 0) return u[c] - u[static_cast<std::size_t>(prev)];
    return 0.0;
}

}  // namespace

Field vorticity(const VelocityField& v) {
    Field w;
    w.nx = v.nx;
    w.ny = v.ny;
    const auto cells = static_cast<std::size_t>(v.nx) * v.ny;
    if (v.ux.size() != cells || v.uy.size() != cells || (!v.solid.empty() && v.solid.size() != cells)) {
        throw Error(ErrorCode::DimensionMismatch, "velocity field dimensions do not match");
    }
    w.values.assign(cells, 0.0);
    auto fluid = [&](int x, int y) { return v.solid.empty() || v.solid[static_cast<std::size_t>(y) * v.nx + x] == 0; };
    auto neighbour = [&](int x, int y, int dx, int dy) -> long {
        int xn = x + dx;
        int yn = y + dy;
        if (xn < 0 || xn >= v.nx) {
            if (!v.periodic_x) return -1;
            xn = (xn + v.nx) % v.nx;
        }
        if (yn < 0 || yn >= v.ny) {
            if (!v.periodic_y) return -1;
            yn = (yn + v.ny) % v.ny;
        }
        if (!fluid(xn, yn)) return -1;
        return static_cast<long>(yn) * v.nx + xn;
    };
    for (int y = 0; y < v.ny; ++y)
        for (int x = 0; x < v.nx; ++x) {
            if (!fluid(x, y)) continue;
            const auto c = static_cast<std::size_t>(y) * v.nx + x;
            const double duy_dx = derivative(v.uy, c, neighbour(x, y, -1, 0), neighbour(x, y, 1, 0));
            const double dux_dy = derivative(v.ux, c, neighbour(x, y, 0, -1), neighbour(x, y, 0, 1));
            w.values[c] = duy_dx - dux_dy;
        }
    return w;
}

double enstrophy(const Field& w, const std::vector<std::uint8_t>& solid) {
    double sum = 0.0;
    for (std::size_t c = 0; c < w.values.size(); ++c) {
        if (!solid.empty() && solid[c]) continue;
        sum += w.values[c] * w.values[c];
    }
    return 0.5 * sum;
}

SimulationResult simulate(const encoding::Bitmap& bitmap, const LbmConfig& config) {
    const Physics physics = derive_physics(config);
    LatticeState state = build_domain(bitmap, config);
    SimulationResult result;
    FlowMetrics metrics;
    metrics.area = encoding::area(bitmap);

    const int interval = std::max(1, config.snapshot_interval);
    double enstrophy_sum = 0.0;
    int snapshots = 0;
    try {
        Force sum;
        for (int t = 0; t < config.warmup_steps; ++t) {
            step(state, physics);
            sum.fx += state.last_force().fx;
            sum.fy += state.last_force().fy;
        }
        if (config.warmup_steps > 0) {
            result.mean_force = {sum.fx / config.warmup_steps, sum.fy / config.warmup_steps};
        }
        for (int t = 0; t < config.measure_steps; ++t) {
            step(state, physics);
            metrics.u_max = std::max(metrics.u_max, state.last_max_speed());
            const bool last = t + 1 == config.measure_steps;
            if ((t + 1) % interval == 0 || (last && snapshots == 0)) {
                FlowSnapshot snap;
                snap.step = state.time_step();
                snap.velocity = velocity_field(state);
                snap.vorticity = vorticity(snap.velocity);
                enstrophy_sum += enstrophy(snap.vorticity, snap.velocity.solid);
                ++snapshots;
                if (config.keep_snapshots) metrics.snapshots.push_back(std::move(snap));
            }
        }
    } catch (const Error& e) {
        if (e.code() != ErrorCode::DivergedSimulation) throw;
        result.failure = e.detail();
        result.failed_at_step = state.time_step();
        return result;
    }
    metrics.enstrophy = snapshots > 0 ? enstrophy_sum / snapshots : 0.0;
    result.metrics = std::move(metrics);
    return result;
}

// Snapshot export -----------------------------------------------------------

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t& pos) {
    if (pos + 4 > in.size()) throw Error(ErrorCode::CorruptArtifact, "truncated flow snapshot file");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[pos + static_cast<std::size_t>(i)]) << (8 * i);
    pos += 4;
    return v;
}

void put_f32(std::vector<std::uint8_t>& out, double v) {
    put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

double get_f32(const std::vector<std::uint8_t>& in, std::size_t& pos) {
    return static_cast<double>(std::bit_cast<float>(get_u32(in, pos)));
}

}  // namespace

std::vector<std::uint8_t> encode_snapshots(const std::vector<FlowSnapshot>& snapshots) {
    std::vector<std::uint8_t> out = {'F', 'D', 'A', 'F'};
    const int nx = snapshots.empty() ? 0 : snapshots.front().velocity.nx;
    const int ny = snapshots.empty() ? 0 : snapshots.front().velocity.ny;
    put_u32(out, static_cast<std::uint32_t>(nx));
    put_u32(out, static_cast<std::uint32_t>(ny));
    put_u32(out, static_cast<std::uint32_t>(snapshots.size()));
    for (const auto& s : snapshots) {
        if (s.velocity.nx != nx || s.velocity.ny != ny) {
            throw Error(ErrorCode::DimensionMismatch, "snapshots must share grid dimensions");
        }
        for (double v : s.velocity.ux) put_f32(out, v);
        for (double v : s.velocity.uy) put_f32(out, v);
        for (double v : s.vorticity.values) put_f32(out, v);
    }
    return out;
}

std::vector<FlowSnapshot> decode_snapshots(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), "FDAF", 4) != 0) {
        throw Error(ErrorCode::CorruptArtifact, "missing FDAF header");
    }
    std::size_t pos = 4;
    const auto nx = static_cast<int>(get_u32(bytes, pos));
    const auto ny = static_cast<int>(get_u32(bytes, pos));
    const auto count = get_u32(bytes, pos);
    const auto cells = static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny);
    if (bytes.size() != 16 + static_cast<std::size_t>(count) * cells * 3 * 4) {
        throw Error(ErrorCode::CorruptArtifact, "flow snapshot payload size mismatch");
    }
    std::vector<FlowSnapshot> out(count);
    for (auto& s : out) {
        s.velocity.nx = s.vorticity.nx = nx;
        s.velocity.ny = s.vorticity.ny = ny;
        s.velocity.ux.resize(cells);
        s.velocity.uy.resize(cells);
        s.vorticity.values.resize(cells);
        for (auto& v : s.velocity.ux) v = get_f32(bytes, pos);
        for (auto& v : s.velocity.uy) v = get_f32(bytes, pos);
        for (auto& v : s.vorticity.values) v = get_f32(bytes, pos);
    }
    return out;
}

std::string snapshot_csv(const FlowSnapshot& snapshot) {
    std::ostringstream out;
    out.precision(9);
    out << "x,y,ux,uy,vorticity\n";
    const auto& v = snapshot.velocity;
    for (int y = 0; y < v.ny; ++y)
        for (int x = 0; x < v.nx; ++x) {
            const auto c = static_cast<std::size_t>(y) * v.nx + x;
            out << x << ',' << y << ',' << v.ux[c] << ',' << v.uy[c] << ',' << snapshot.vorticity.values[c] << '\n';
        }
    return out.str();
}

}  // namespace fda::lbm
