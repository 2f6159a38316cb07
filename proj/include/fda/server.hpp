#pragma once

// Run orchestration shared by the CLI and the HTTP API under /api/v1.

#include <atomic>
#include <condition_variable>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "fda/store.hpp"

namespace httplib {
class Server;
}

namespace fda::server {

using nlohmann::json;

// Pipeline ----------------------------------------------------------------------

qd::Evaluator make_evaluator(const store::RunConfig& config);

/// Genomes a zoom child starts from (stored as init.json in the child run).
struct InitialSet {
    std::vector<encoding::ShapeGenome> genomes;
    bool sobol_fill = true;
};

/// Executes SPHEN (and optionally VAE training) for a stored run, moving its
/// status created -> running -> finished | failed and recording progress
/// after every round. A failed run keeps whatever partial result exists.
void execute_run(store::Store& store, const std::string& run_id, const std::atomic<bool>* cancel = nullptr);

/// Archive of `capacity` cells illuminated with the run's final models,
/// seeded from its evaluated samples.
qd::VoronoiArchive vae_training_archive(const qd::RunResult& result, int capacity, int updates, std::uint64_t seed);

/// Elite bitmaps of an archive, in niche order.
std::vector<encoding::Bitmap> archive_bitmaps(const qd::VoronoiArchive& archive, int resolution);

/// Successful samples as (bitmap, measured metrics).
std::vector<genmodel::LatentSample> latent_samples(const qd::RunResult& result, int resolution);

/// Trains and stores the VAE and latent predictors of a finished run.
void train_run_vae(store::Store& store, const std::string& run_id);

/// Run-length thumbnail, genome and features of every elite.
json archive_json(const qd::VoronoiArchive& archive, bool thumbnails, int resolution);

/// Status document of a run: progress, lineage and available artifacts.
json status_json(const store::Store& store, const store::RunRecord& record);

json error_json(const Error& e);
int http_status(ErrorCode code);

// Service -------------------------------------------------------------------------

struct ServiceOptions {
    int validation_workers = 2;
    /// Run SPHEN in background threads; when false requests block until done.
    bool background = true;
};

/// Request handlers independent of the transport. Each returns the JSON
/// response body and throws fda::Error for failures.
class Service {
public:
    explicit Service(store::Store& store, ServiceOptions options = {});
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Body: {"config": {...}, "preset": "paper" | "desk"}. Returns
    /// {"run_id", "status"}.
    json create_run(const json& body, const std::string& idempotency_key = {});
    json run_status(const std::string& run_id) const;
    json list_runs() const;
    json archive(const std::string& run_id, std::optional<int> max_cells, bool thumbnails) const;
    /// Body: {"region": {a_lo, a_hi, e_lo, e_hi}, "fill": bool,
    /// "total_budget", "archive_capacity"}.
    json zoom(const std::string& run_id, const json& body, const std::string& idempotency_key = {});
    /// Body: {"center": [..], "dim", "steps", "span"}; without "dim" every
    /// latent dimension gets a row.
    json walk(const std::string& run_id, const json& body, const std::string& idempotency_key = {});
    /// Body: {"genome": [16]} or {"latent": [..]}.
    json validate_shape(const std::string& run_id, const json& body, const std::string& idempotency_key = {});

    /// Blocks until the run's background work ends.
    void wait(const std::string& run_id);
    void wait_all();

    store::Store& store() { return store_; }

private:
    json idempotent(const std::string& endpoint, const std::string& key, const json& body,
                    const std::function<json()>& handler);
    void launch(const std::string& run_id);
    void recover_interrupted();
    struct LatentModels {
        std::uint32_t weights_crc = 0;
        genmodel::VaeModel vae;
        genmodel::LatentPredictorSet predictors;
    };
    std::shared_ptr<const LatentModels> latent_models(const std::string& run_id);

    store::Store& store_;
    ServiceOptions options_;
    std::atomic<bool> stopping_{false};
    std::mutex runs_mutex_;
    std::map<std::string, std::thread> runs_;
    std::mutex idempotency_mutex_;
    std::condition_variable idempotency_cv_;
    std::set<std::string> idempotency_inflight_;
    std::mutex slots_mutex_;
    std::condition_variable slots_cv_;
    int free_slots_ = 0;
    std::mutex models_mutex_;
    std::map<std::string, std::shared_ptr<const LatentModels>> models_;
};

/// Registers every /api/v1 route on `http`. Static files under
/// `static_dir` are served from / when it is non-empty.
void install_routes(httplib::Server& http, Service& service, const std::string& static_dir = {});

}  // namespace fda::server
