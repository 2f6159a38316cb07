#include <algorithm>
#include <limits>

#include "fda/qd.hpp"

namespace fda::qd {

IlluminationStats illuminate(VoronoiArchive& archive, const BatchPredictor& predict, const IlluminationConfig& config,
                             std::mt19937_64& rng, NicheTrace* trace) {
    if (archive.occupancy() == 0) throw Error(ErrorCode::EmptyArchive, "illumination needs at least one elite");
    if (trace) trace->per_niche.assign(static_cast<std::size_t>(archive.capacity()), {});
    IlluminationStats stats;
    std::normal_distribution<double> noise(0.0, config.mutation_sigma);
    std::vector<std::vector<double>> children;
    std::vector<Prediction> predictions;
    for (int u = 0; u < config.updates; ++u) {
        const auto parents = archive.occupied();
        std::uniform_int_distribution<std::size_t> pick(0, parents.size() - 1);
        children.assign(static_cast<std::size_t>(config.children_per_update), {});
        for (auto& child : children) {
            child = archive.niche(parents[pick(rng)])->params;
            for (auto& v : child) v = std::clamp(v + noise(rng), 0.0, 1.0);
        }
        predictions.assign(children.size(), {});
        predict(children, predictions);
        stats.children += static_cast<long>(children.size());
        for (std::size_t c = 0; c < children.size(); ++c) {
            const auto& p = predictions[c];
            if (!p.valid) continue;
            ++stats.predicted;
            Elite e{std::move(children[c]), p.fitness, p.area, p.enstrophy, Provenance::Predicted};
            const int niche = archive.niche_of(e.area, e.enstrophy);
            const auto result = archive.assign(std::move(e));
            if (result == Assignment::Rejected) continue;
            (result == Assignment::Inserted ? stats.inserted : stats.replaced) += 1;
            if (trace) trace->per_niche[static_cast<std::size_t>(niche)].emplace_back(u, archive.niche(niche)->fitness);
        }
    }
    return stats;
}

std::vector<int> select_acquisitions(const VoronoiArchive& archive, int n, std::uint64_t skip, bool skip_simulated) {
    if (n < 1) return {};
    if (archive.occupancy() < n) {
        throw Error(ErrorCode::InsufficientElites, "archive holds " + std::to_string(archive.occupancy()) +
                                                       " elites, " + std::to_string(n) + " requested");
    }
    auto candidates = archive.occupied();
    if (skip_simulated) {
        std::vector<int> fresh;
        for (int i : candidates)
            if (archive.niche(i)->provenance != Provenance::Simulated) fresh.push_back(i);
        if (static_cast<int>(fresh.size()) >= n) candidates = std::move(fresh);
    }
    std::vector<std::array<double, 2>> features;
    for (int i : candidates) {
        const auto& e = *archive.niche(i);
        features.push_back(archive.normalization().normalize(e.area, e.enstrophy));
    }
    const auto targets = surrogate::sobol_points(2, n, skip);
    std::vector<bool> taken(candidates.size(), false);
    std::vector<int> picked;
    for (int t = 0; t < n; ++t) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t arg = 0;
        for (std::size_t c = 0; c < candidates.size(); ++c) {
            if (taken[c]) continue;
            const double dx = features[c][0] - targets(t, 0);
            const double dy = features[c][1] - targets(t, 1);
            const double d = dx * dx + dy * dy;
            if (d < best) {
                best = d;
                arg = c;
            }
        }
        taken[arg] = true;
        picked.push_back(candidates[arg]);
    }
    return picked;
}

}  // namespace fda::qd
