#pragma once

// Voronoi-archive quality diversity over (area, enstrophy) and the
// surrogate-assisted outer loop that alternates illumination with real
// evaluations.

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fda/encoding.hpp"
#include "fda/error.hpp"
#include "fda/lbm.hpp"
#include "fda/surrogate.hpp"

namespace fda::qd {

// Features ------------------------------------------------------------------

struct FeatureRange {
    double lo = 0.0;
    double hi = 1.0;

    /// (v - lo) / (hi - lo) clamped to [0, 1].
    double normalize(double v) const;
    double denormalize(double u) const { return lo + u * (hi - lo); }
    bool operator==(const FeatureRange&) const = default;
};

/// Maps raw (area, enstrophy) to the unit square the archive lives in.
struct FeatureNormalization {
    FeatureRange area;
    FeatureRange enstrophy;

    /// Observed min/max widened by `margin` of the span on each side.
    static FeatureNormalization from_observations(std::span<const double> areas, std::span<const double> enstrophies,
                                                  double margin = 0.1);

    std::array<double, 2> normalize(double a, double e) const { return {area.normalize(a), enstrophy.normalize(e)}; }

    /// Sub-range [a_lo, a_hi] x [e_lo, e_hi] given in normalized units.
    /// Throws ValidationError unless the region has positive width and height
    /// inside [0, 1]^2.
    FeatureNormalization restrict(double a_lo, double a_hi, double e_lo, double e_hi) const;

    bool operator==(const FeatureNormalization&) const = default;
};

// Archive -------------------------------------------------------------------

enum class Provenance { Simulated, Predicted };

std::string_view to_string(Provenance p);
Provenance provenance_from_string(std::string_view s);

/// `params` is the search-space point: a 16-value genome for SPHEN archives,
/// a latent vector for archives built from a generative model.
struct Elite {
    std::vector<double> params;
    double fitness = 0.0;  // minimized
    double area = 0.0;
    double enstrophy = 0.0;
    Provenance provenance = Provenance::Predicted;

    bool operator==(const Elite&) const = default;
};

enum class Assignment { Inserted, Replaced, Rejected };

/// Centroids of a CVT of [0,1]^2: Lloyd iterations over 100 k Sobol points,
/// started from k of those points chosen by `seed`.
Eigen::MatrixXd cvt_centroids(int k, std::uint64_t seed, int iterations = 50);

/// Index of the nearest centroid for each row of `points` (n x 2). The
/// serial variant is the single-threaded reference.
std::vector<int> nearest_centroids(const Eigen::MatrixXd& centroids, const Eigen::MatrixXd& points);
std::vector<int> nearest_centroids_serial(const Eigen::MatrixXd& centroids, const Eigen::MatrixXd& points);

class VoronoiArchive {
public:
    VoronoiArchive() = default;
    VoronoiArchive(int capacity, std::uint64_t seed, FeatureNormalization normalization = {});
    /// Archive over given centroids (k x 2 in [0,1]^2).
    VoronoiArchive(Eigen::MatrixXd centroids, FeatureNormalization normalization, std::uint64_t seed = 0);

    int capacity() const noexcept { return static_cast<int>(centroids_.rows()); }
    std::uint64_t seed() const noexcept { return seed_; }
    const Eigen::MatrixXd& centroids() const noexcept { return centroids_; }
    const FeatureNormalization& normalization() const noexcept { return normalization_; }
    void set_normalization(const FeatureNormalization& n) { normalization_ = n; }

    int niche_of(double area, double enstrophy) const;

    /// Nearest-centroid placement; strictly lower fitness replaces, ties keep
    /// the incumbent. Throws ValidationError on non-finite values.
    Assignment assign(Elite candidate);

    const std::vector<std::optional<Elite>>& niches() const noexcept { return niches_; }
    const std::optional<Elite>& niche(int i) const { return niches_.at(static_cast<std::size_t>(i)); }
    std::vector<int> occupied() const;
    int occupancy() const noexcept { return occupancy_; }
    void clear();

    /// Occupied niche with the lowest fitness; throws EmptyArchive.
    int best() const;

    bool operator==(const VoronoiArchive& o) const {
        return centroids_ == o.centroids_ && normalization_ == o.normalization_ && niches_ == o.niches_;
    }

private:
    std::uint64_t seed_ = 0;
    Eigen::MatrixXd centroids_;
    FeatureNormalization normalization_;
    std::vector<std::optional<Elite>> niches_;
    int occupancy_ = 0;
};

/// Same elites re-assigned (in niche order) to a fresh CVT with `capacity`
/// cells. Throws ValidationError when capacity < 1.
VoronoiArchive reduce_archive(const VoronoiArchive& archive, int capacity);

/// Archive CSV: niche_id, centroid_a, centroid_e, area, enstrophy, fitness,
/// provenance, then one column per parameter named `prefix`0, `prefix`1, ...
std::string archive_csv(const VoronoiArchive& archive, std::string_view prefix = "g");
/// Restores elites from CSV into `archive` (whose centroids must match).
/// Throws CorruptArtifact on malformed rows.
void load_archive_csv(VoronoiArchive& archive, const std::string& csv);

// Illumination --------------------------------------------------------------

struct Prediction {
    double fitness = 0.0;
    double area = 0.0;
    double enstrophy = 0.0;
    bool valid = true;  // false drops the child (e.g. a degenerate decode)
};

/// Predicts every row; called with one update's children at a time.
using BatchPredictor = std::function<void(const std::vector<std::vector<double>>& params, std::vector<Prediction>& out)>;

struct IlluminationConfig {
    int updates = 1000;
    int children_per_update = 25;
    double mutation_sigma = 0.1;
};

/// Fitness of each niche after every update it changed in.
struct NicheTrace {
    std::vector<std::vector<std::pair<int, double>>> per_niche;  // (update, fitness)
};

struct IlluminationStats {
    long children = 0;
    long predicted = 0;  // valid predictions
    long inserted = 0;
    long replaced = 0;
};

/// Mutates uniformly drawn elites with N(0, sigma^2) noise, clamps to
/// [0,1], predicts, and assigns children one at a time. Throws EmptyArchive.
IlluminationStats illuminate(VoronoiArchive& archive, const BatchPredictor& predict, const IlluminationConfig& config,
                             std::mt19937_64& rng, NicheTrace* trace = nullptr);

/// Picks up to n distinct elites nearest to successive Sobol points
/// (starting at index `skip`) in the unit feature square. With
/// `skip_simulated`, already simulated elites are passed over while enough
/// others remain. Throws InsufficientElites when occupancy < n.
std::vector<int> select_acquisitions(const VoronoiArchive& archive, int n, std::uint64_t skip = 1,
                                     bool skip_simulated = false);

// SPHEN ---------------------------------------------------------------------

struct SphenConfig {
    int init_samples = 100;
    int batch_size = 10;
    int total_budget = 1000;
    int archive_updates_per_round = 1000;
    int children_per_update = 25;
    double mutation_sigma = 0.1;
    int archive_capacity = 1000;
    std::uint64_t rng_seed = 0;
    double ucb_kappa = 0.0;  // > 0 ranks children by mean - kappa * sd
    int resolution = encoding::kDefaultResolution;

    /// 50 initial samples, 100 acquisitions, capacity 100, 200 updates.
    static SphenConfig desk();

    int rounds() const { return (total_budget - init_samples) / batch_size; }
    long children_per_round() const { return static_cast<long>(archive_updates_per_round) * children_per_update; }
    /// Children proposed during acquisition rounds (excludes the final rebuild).
    long round_proposals() const { return rounds() * children_per_round(); }

    /// Every violated invariant, with dotted field names.
    std::vector<FieldError> validate() const;
};

struct Evaluation {
    bool ok = false;
    double u_max = 0.0;
    double enstrophy = 0.0;
    std::string failure;
};

/// Must be safe to call concurrently.
using Evaluator = std::function<Evaluation(const encoding::ShapeGenome&)>;

/// Runs the flow solver on the expressed shape.
Evaluator lbm_evaluator(const lbm::LbmConfig& config, int resolution = encoding::kDefaultResolution);

/// Cheap analytic stand-in: u_max grows with area and radius roughness,
/// enstrophy with roughness and area. Deterministic and never fails.
Evaluator synthetic_evaluator(int resolution = encoding::kDefaultResolution);

struct Sample {
    encoding::ShapeGenome genome;
    int round = 0;  // 0 = initial set
    double area = 0.0;
    bool ok = false;
    double u_max = 0.0;
    double enstrophy = 0.0;
    std::string failure;

    bool operator==(const Sample&) const = default;
};

struct RoundStats {
    int round = 0;
    int evaluations = 0;  // cumulative
    int failures = 0;     // in this round
    int occupancy = 0;
    double best_fitness = 0.0;
    double mean_fitness = 0.0;
    long children = 0;  // cumulative proposals

    bool operator==(const RoundStats&) const = default;
};

struct ModelSnapshot {
    int round = 0;
    int training_size = 0;
    surrogate::GPHyperparams u_max;
    surrogate::GPHyperparams enstrophy;
};

struct RunResult {
    SphenConfig config;
    VoronoiArchive archive;
    std::vector<Sample> samples;
    std::vector<RoundStats> stats;
    std::vector<ModelSnapshot> model_history;
    std::optional<surrogate::GPModel> u_max_model;
    std::optional<surrogate::GPModel> enstrophy_model;
    long round_proposals = 0;  // children proposed in acquisition rounds
    long total_proposals = 0;  // including the final rebuild
    NicheTrace final_trace;    // per-niche fitness during the final rebuild

    int successes() const;
};

/// Thrown when more than half of a round's evaluations fail; carries
/// everything gathered so far.
class SphenAborted : public Error {
public:
    SphenAborted(const std::string& message, std::shared_ptr<const RunResult> partial)
        : Error(ErrorCode::BudgetExhausted, message), partial_(std::move(partial)) {}
    const RunResult& partial() const { return *partial_; }

private:
    std::shared_ptr<const RunResult> partial_;
};

struct SphenOptions {
    /// Evaluated before any Sobol genomes; Sobol fill tops the set up to
    /// init_samples when `sobol_fill` is set.
    std::vector<encoding::ShapeGenome> initial_genomes;
    bool sobol_fill = true;
    /// Fixed normalization (zoom); otherwise derived from the initial set.
    std::optional<FeatureNormalization> normalization;
    /// Evaluate each batch concurrently.
    bool parallel_evaluations = true;
    bool record_trace = false;
    /// Called after every round with the statistics so far.
    std::function<void(const RoundStats&)> on_round;
    /// Checked between rounds; returning true stops with ValidationError.
    std::function<bool()> cancelled;
};

RunResult sphen_run(const Evaluator& evaluator, const SphenConfig& config, const SphenOptions& options = {});

/// Predictor backed by GP means for fitness and enstrophy and the exact
/// bitmap area.
BatchPredictor gp_predictor(const surrogate::GPModel& u_max, const surrogate::GPModel& enstrophy, int resolution,
                            double ucb_kappa = 0.0);

/// samples.csv: sample_id, round, ok, area, u_max, enstrophy, failure, g0..g15
std::string samples_csv(const std::vector<Sample>& samples);
std::vector<Sample> samples_from_csv(const std::string& csv);

/// stats.csv: round, evaluations, failures, occupancy, best_fitness,
/// mean_fitness, children
std::string stats_csv(const std::vector<RoundStats>& stats);
std::vector<RoundStats> stats_from_csv(const std::string& csv);

/// Pearson correlation; NaN when either series is constant.
double pearson(std::span<const double> a, std::span<const double> b);

}  // namespace fda::qd
