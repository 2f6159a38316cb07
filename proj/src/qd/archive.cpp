#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "csv.hpp"
#include "fda/qd.hpp"

namespace fda::qd {

double FeatureRange::normalize(double v) const {
    if (!(hi > lo)) return 0.5;
    return std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
}

FeatureNormalization FeatureNormalization::from_observations(std::span<const double> areas,
                                                             std::span<const double> enstrophies, double margin) {
    if (areas.empty() || enstrophies.empty()) {
        throw Error(ErrorCode::ValidationError, "feature normalization needs at least one observation");
    }
    auto range = [margin](std::span<const double> v) {
        const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
        double pad = margin * (*mx - *mn);
        if (!(pad > 0.0)) pad = std::max(1e-9, margin * std::abs(*mx));
        return FeatureRange{*mn - pad, *mx + pad};
    };
    return {range(areas), range(enstrophies)};
}

FeatureNormalization FeatureNormalization::restrict(double a_lo, double a_hi, double e_lo, double e_hi) const {
    std::vector<FieldError> errors;
    auto check = [&errors](const char* name, double lo, double hi) {
        if (!std::isfinite(lo) || !std::isfinite(hi) || lo < 0.0 || hi > 1.0) {
            errors.push_back({std::string("region.") + name, "must lie within [0, 1]"});
        } else if (!(hi > lo)) {
            errors.push_back({std::string("region.") + name, "must have positive width"});
        }
    };
    check("area", a_lo, a_hi);
    check("enstrophy", e_lo, e_hi);
    if (!errors.empty()) throw Error(ErrorCode::ValidationError, "invalid feature region", std::move(errors));
    return {{area.denormalize(a_lo), area.denormalize(a_hi)}, {enstrophy.denormalize(e_lo), enstrophy.denormalize(e_hi)}};
}

std::string_view to_string(Provenance p) { return p == Provenance::Simulated ? "simulated" : "predicted"; }

Provenance provenance_from_string(std::string_view s) {
    if (s == "simulated") return Provenance::Simulated;
    if (s == "predicted") return Provenance::Predicted;
    throw Error(ErrorCode::CorruptArtifact, "unknown provenance '" + std::string(s) + "'");
}

namespace {

template <bool Parallel>
std::vector<int> nearest_impl(const Eigen::MatrixXd& c, const Eigen::MatrixXd& p) {
    std::vector<int> out(static_cast<std::size_t>(p.rows()));
    const long n = static_cast<long>(p.rows());
    const long k = static_cast<long>(c.rows());
#pragma omp parallel for schedule(static) if (Parallel)
    for (long i = 0; i < n; ++i) {
        const double px = p(i, 0);
        const double py = p(i, 1);
        double best = std::numeric_limits<double>::infinity();
        int arg = 0;
        for (long j = 0; j < k; ++j) {
            const double dx = c(j, 0) - px;
            const double dy = c(j, 1) - py;
            const double d = dx * dx + dy * dy;
            if (d < best) {
                best = d;
                arg = static_cast<int>(j);
            }
        }
        out[static_cast<std::size_t>(i)] = arg;
    }
    return out;
}

}  // namespace

std::vector<int> nearest_centroids(const Eigen::MatrixXd& centroids, const Eigen::MatrixXd& points) {
    return nearest_impl<true>(centroids, points);
}

std::vector<int> nearest_centroids_serial(const Eigen::MatrixXd& centroids, const Eigen::MatrixXd& points) {
    return nearest_impl<false>(centroids, points);
}

Eigen::MatrixXd cvt_centroids(int k, std::uint64_t seed, int iterations) {
    if (k < 1) throw Error(ErrorCode::ValidationError, "archive capacity must be at least 1");
    const Eigen::MatrixXd samples = surrogate::sobol_points(2, 100 * k);
    std::vector<int> order(static_cast<std::size_t>(samples.rows()));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    Eigen::MatrixXd c(k, 2);
    for (int j = 0; j < k; ++j) c.row(j) = samples.row(order[static_cast<std::size_t>(j)]);

    for (int it = 0; it < iterations; ++it) {
        const auto label = nearest_centroids(c, samples);
        Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(k, 2);
        std::vector<int> count(static_cast<std::size_t>(k), 0);
        for (Eigen::Index i = 0; i < samples.rows(); ++i) {
            const int l = label[static_cast<std::size_t>(i)];
            sum.row(l) += samples.row(i);
            ++count[static_cast<std::size_t>(l)];
        }
        for (int j = 0; j < k; ++j) {
            if (count[static_cast<std::size_t>(j)] > 0) c.row(j) = sum.row(j) / count[static_cast<std::size_t>(j)];
        }
    }
    return c;
}

VoronoiArchive::VoronoiArchive(int capacity, std::uint64_t seed, FeatureNormalization normalization)
    : VoronoiArchive(cvt_centroids(capacity, seed), normalization, seed) {}

VoronoiArchive::VoronoiArchive(Eigen::MatrixXd centroids, FeatureNormalization normalization, std::uint64_t seed)
    : seed_(seed), centroids_(std::move(centroids)), normalization_(normalization) {
    if (centroids_.rows() < 1 || centroids_.cols() != 2) {
        throw Error(ErrorCode::ValidationError, "archive needs at least one 2-D centroid");
    }
    niches_.resize(static_cast<std::size_t>(centroids_.rows()));
}

int VoronoiArchive::niche_of(double area, double enstrophy) const {
    const auto u = normalization_.normalize(area, enstrophy);
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (Eigen::Index j = 0; j < centroids_.rows(); ++j) {
        const double dx = centroids_(j, 0) - u[0];
        const double dy = centroids_(j, 1) - u[1];
        const double d = dx * dx + dy * dy;
        if (d < best) {
            best = d;
            arg = static_cast<int>(j);
        }
    }
    return arg;
}

Assignment VoronoiArchive::assign(Elite candidate) {
    if (!std::isfinite(candidate.fitness) || !std::isfinite(candidate.area) || !std::isfinite(candidate.enstrophy)) {
        throw Error(ErrorCode::ValidationError, "archive candidates need finite fitness and features");
    }
    auto& slot = niches_[static_cast<std::size_t>(niche_of(candidate.area, candidate.enstrophy))];
    if (!slot) {
        slot = std::move(candidate);
        ++occupancy_;
        return Assignment::Inserted;
    }
    if (candidate.fitness < slot->fitness) {
        slot = std::move(candidate);
        return Assignment::Replaced;
    }
    return Assignment::Rejected;
}

std::vector<int> VoronoiArchive::occupied() const {
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(occupancy_));
    for (std::size_t i = 0; i < niches_.size(); ++i)
        if (niches_[i]) out.push_back(static_cast<int>(i));
    return out;
}

void VoronoiArchive::clear() {
    for (auto& n : niches_) n.reset();
    occupancy_ = 0;
}

int VoronoiArchive::best() const {
    int arg = -1;
    for (std::size_t i = 0; i < niches_.size(); ++i) {
        if (niches_[i] && (arg < 0 || niches_[i]->fitness < niches_[static_cast<std::size_t>(arg)]->fitness)) {
            arg = static_cast<int>(i);
        }
    }
    if (arg < 0) throw Error(ErrorCode::EmptyArchive, "archive has no elites");
    return arg;
}

VoronoiArchive reduce_archive(const VoronoiArchive& archive, int capacity) {
    if (capacity < 1) {
        throw Error(ErrorCode::ValidationError, "max_cells must be at least 1", {{"max_cells", "must be at least 1"}});
    }
    if (capacity == archive.capacity()) return archive;
    VoronoiArchive out(capacity, archive.seed(), archive.normalization());
    for (const auto& n : archive.niches())
        if (n) out.assign(*n);
    return out;
}

std::string archive_csv(const VoronoiArchive& archive, std::string_view prefix) {
    std::size_t params = 0;
    for (const auto& n : archive.niches())
        if (n) params = std::max(params, n->params.size());
    std::string out = "niche_id,centroid_a,centroid_e,area,enstrophy,fitness,provenance";
    for (std::size_t j = 0; j < params; ++j) out += "," + std::string(prefix) + std::to_string(j);
    out += '\n';
    for (std::size_t i = 0; i < archive.niches().size(); ++i) {
        const auto& n = archive.niches()[i];
        if (!n) continue;
        const auto row = static_cast<Eigen::Index>(i);
        out += std::to_string(i);
        for (double v : {archive.centroids()(row, 0), archive.centroids()(row, 1), n->area, n->enstrophy, n->fitness}) {
            out += ',' + csv::format_double(v);
        }
        out += ',';
        out += to_string(n->provenance);
        for (double v : n->params) out += ',' + csv::format_double(v);
        out += '\n';
    }
    return out;
}

void load_archive_csv(VoronoiArchive& archive, const std::string& text) {
    const auto table = csv::parse(text);
    if (table.header.size() < 7 || table.header[0] != "niche_id" || table.header[6] != "provenance") {
        throw Error(ErrorCode::CorruptArtifact, "archive CSV header is malformed");
    }
    archive.clear();
    for (const auto& row : table.rows) {
        if (row.size() != table.header.size()) throw Error(ErrorCode::CorruptArtifact, "archive CSV row has wrong width");
        const long id = csv::parse_long(row[0]);
        if (id < 0 || id >= archive.capacity()) throw Error(ErrorCode::CorruptArtifact, "archive niche id out of range");
        Elite e;
        e.area = csv::parse_double(row[3]);
        e.enstrophy = csv::parse_double(row[4]);
        e.fitness = csv::parse_double(row[5]);
        e.provenance = provenance_from_string(row[6]);
        for (std::size_t j = 7; j < row.size(); ++j) e.params.push_back(csv::parse_double(row[j]));
        if (archive.niche_of(e.area, e.enstrophy) != id || archive.assign(e) != Assignment::Inserted) {
            throw Error(ErrorCode::CorruptArtifact, "archive row " + row[0] + " does not belong to its niche");
        }
    }
}

}  // namespace fda::qd
