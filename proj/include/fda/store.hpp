#pragma once

// Run persistence: one directory per run under <root>/runs/<run_id>/ with
// JSON metadata, CSV tables, model files and a crc32 manifest.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fda/genmodel.hpp"
#include "fda/lbm.hpp"
#include "fda/qd.hpp"

namespace fda::store {

// Configuration ---------------------------------------------------------------

enum class EvaluatorKind { Lbm, Synthetic };

struct RunConfig {
    qd::SphenConfig sphen;
    lbm::LbmConfig lbm;
    genmodel::VaeConfig vae;
    EvaluatorKind evaluator = EvaluatorKind::Lbm;
    /// Train a VAE and latent predictors once SPHEN finishes.
    bool train_vae = false;

    /// Desk presets for every section.
    static RunConfig desk();
};

nlohmann::json to_json(const RunConfig& config);
/// Absent fields keep their defaults. Throws ValidationError listing every
/// violated invariant, unknown key and wrongly typed value.
RunConfig config_from_json(const nlohmann::json& j);
/// JSON text to config; malformed JSON is a ValidationError too.
RunConfig parse_config(std::string_view text);
/// Field errors of an already-built config (sphen.*, lbm.*, vae.*).
std::vector<FieldError> validate(const RunConfig& config);

// Run records -----------------------------------------------------------------

enum class RunStatus { Created, Running, Finished, Failed };

std::string_view to_string(RunStatus s);
RunStatus run_status_from_string(std::string_view s);
/// created -> running -> finished | failed; staying put is allowed.
bool transition_allowed(RunStatus from, RunStatus to);

/// Feature region in the parent's normalized units.
struct Region {
    double a_lo = 0.0;
    double a_hi = 1.0;
    double e_lo = 0.0;
    double e_hi = 1.0;

    /// Throws ValidationError unless the region has positive width and
    /// height inside [0, 1]^2.
    void validate() const;
    bool operator==(const Region&) const = default;
};

struct Lineage {
    std::string parent_id;
    Region region;
    bool operator==(const Lineage&) const = default;
};

struct Progress {
    int evaluations = 0;
    int budget = 0;
    int round = 0;
    int occupancy = 0;
    std::optional<double> best_fitness;
    bool operator==(const Progress&) const = default;
};

struct RunRecord {
    std::string run_id;
    RunStatus status = RunStatus::Created;
    RunConfig config;
    std::string created_at;  // ISO 8601 UTC
    std::string updated_at;
    std::optional<Lineage> lineage;
    /// Fixed feature normalization (zoom children).
    std::optional<qd::FeatureNormalization> normalization;
    Progress progress;
    std::string failure;
};

bool operator==(const RunRecord& a, const RunRecord& b);

nlohmann::json to_json(const RunRecord& record);
RunRecord record_from_json(const nlohmann::json& j);

/// Current UTC time as 2024-01-31T12:00:00.123Z.
std::string timestamp_now();

// Store -----------------------------------------------------------------------

struct ManifestEntry {
    std::uint32_t crc32 = 0;
    std::uint64_t size = 0;
    bool operator==(const ManifestEntry&) const = default;
};

std::uint32_t crc32_of(std::string_view bytes);

class Store {
public:
    explicit Store(std::filesystem::path root);

    const std::filesystem::path& root() const noexcept { return root_; }
    std::filesystem::path run_dir(const std::string& run_id) const;
    bool exists(const std::string& run_id) const;

    /// Fresh unique id, e.g. "r20240131-120000-3fa9c1".
    std::string generate_id() const;

    /// Writes run.json and config.json. Throws ConflictingRunId, NotFound
    /// (missing parent), ValidationError (bad id, region or config).
    void create_run(const RunRecord& record);
    /// Replaces the stored record; status may only move forward.
    void update_record(const RunRecord& record);
    RunRecord load_record(const std::string& run_id) const;
    /// All runs, oldest first.
    std::vector<RunRecord> list_runs() const;

    void save_result(const std::string& run_id, const qd::RunResult& result);
    qd::RunResult load_result(const std::string& run_id) const;
    bool has_result(const std::string& run_id) const;
    /// Archive of a stored result without samples or models.
    qd::VoronoiArchive load_archive(const std::string& run_id) const;

    void save_vae(const std::string& run_id, const genmodel::VaeModel& model);
    genmodel::VaeModel load_vae(const std::string& run_id) const;
    bool has_vae(const std::string& run_id) const;
    void save_predictors(const std::string& run_id, const genmodel::LatentPredictorSet& predictors);
    genmodel::LatentPredictorSet load_predictors(const std::string& run_id) const;
    bool has_predictors(const std::string& run_id) const;

    /// Raw artifact at a run-relative path, written atomically and recorded
    /// in the manifest.
    void write_artifact(const std::string& run_id, const std::string& path, std::string_view bytes);
    /// Contents after checking size and crc32 against the manifest; throws
    /// NotFound or CorruptArtifact.
    std::string read_artifact(const std::string& run_id, const std::string& path) const;
    bool has_artifact(const std::string& run_id, const std::string& path) const;
    std::map<std::string, ManifestEntry> manifest(const std::string& run_id) const;
    /// Checks every manifest entry; throws CorruptArtifact on the first mismatch.
    void verify(const std::string& run_id) const;

private:
    std::shared_mutex& lock_for(const std::string& run_id) const;
    void require(const std::string& run_id) const;
    void write_locked(const std::string& run_id, const std::string& path, std::string_view bytes);
    std::string read_locked(const std::string& run_id, const std::string& path) const;
    qd::VoronoiArchive archive_locked(const std::string& run_id) const;
    std::map<std::string, ManifestEntry> manifest_locked(const std::string& run_id) const;

    std::filesystem::path root_;
    mutable std::mutex locks_mutex_;
    mutable std::map<std::string, std::unique_ptr<std::shared_mutex>> locks_;
};

/// A loaded record; artifacts are read on demand.
class RunHandle {
public:
    RunHandle(const Store& store, RunRecord record) : store_(&store), record_(std::move(record)) {}
    const RunRecord& record() const noexcept { return record_; }
    bool has_result() const { return store_->has_result(record_.run_id); }
    qd::RunResult result() const { return store_->load_result(record_.run_id); }

private:
    const Store* store_;
    RunRecord record_;
};

/// create_run plus the result artifacts when given; returns the run id.
std::string save_run(Store& store, const RunRecord& record, const qd::RunResult* result = nullptr);
RunHandle load_run(const Store& store, const std::string& run_id);

/// Temp file plus rename in the same directory; failures are StorageFull.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace fda::store
