// OpenMP kernels against their serial references.

#include <random>

#include <benchmark/benchmark.h>

#include "fda/lbm.hpp"
#include "fda/qd.hpp"
#include "fda/surrogate.hpp"

using namespace fda;

namespace {

lbm::LatticeState desk_domain() {
    const auto cfg = lbm::LbmConfig::desk();
    return lbm::build_domain(encoding::express(encoding::ShapeGenome()), cfg);
}

void lbm_step(benchmark::State& st, bool serial) {
    auto state = desk_domain();
    const auto phys = lbm::derive_physics(lbm::LbmConfig::desk());
    for (auto _ : st) {
        if (serial) lbm::step_serial(state, phys);
        else lbm::step(state, phys);
    }
    st.SetItemsProcessed(st.iterations() * 128 * 64);
}

Eigen::MatrixXd uniform(int rows, int cols, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = u(rng);
    return m;
}

void gp_predict(benchmark::State& st, bool serial) {
    const auto x = uniform(500, 16, 1);
    Eigen::VectorXd y = x.rowwise().sum();
    const auto model = surrogate::GPModel::condition(x, y, {0.5, 1.0, 1e-6});
    const auto q = uniform(static_cast<int>(st.range(0)), 16, 2);
    for (auto _ : st) benchmark::DoNotOptimize(serial ? model.predict_mean_serial(q) : model.predict_mean(q));
    st.SetItemsProcessed(st.iterations() * st.range(0));
}

void nearest(benchmark::State& st, bool serial) {
    const auto centroids = uniform(1000, 2, 3);
    const auto points = uniform(static_cast<int>(st.range(0)), 2, 4);
    for (auto _ : st) {
        benchmark::DoNotOptimize(serial ? qd::nearest_centroids_serial(centroids, points)
                                        : qd::nearest_centroids(centroids, points));
    }
    st.SetItemsProcessed(st.iterations() * st.range(0));
}

}  // namespace

BENCHMARK_CAPTURE(lbm_step, serial, true)->Unit(benchmark::kMicrosecond);
BENCHMARK_CAPTURE(lbm_step, openmp, false)->Unit(benchmark::kMicrosecond);
BENCHMARK_CAPTURE(gp_predict, serial, true)->Arg(1000)->Arg(25000)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(gp_predict, openmp, false)->Arg(1000)->Arg(25000)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(nearest, serial, true)->Arg(25000)->Arg(100000)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(nearest, openmp, false)->Arg(25000)->Arg(100000)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
