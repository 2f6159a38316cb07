#include <algorithm>
#include <filesystem>

#include "fda/server.hpp"

namespace fda::server {

namespace fs = std::filesystem;
using store::RunStatus;

namespace {

void require_object(const json& body, std::initializer_list<const char*> allowed) {
    if (!body.is_object()) throw Error(ErrorCode::ValidationError, "request body must be a JSON object", {{"", "must be an object"}});
    std::vector<FieldError> errors;
    for (const auto& [key, value] : body.items()) {
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
            errors.push_back({key, "unknown field"});
        }
    }
    if (!errors.empty()) throw Error(ErrorCode::ValidationError, "request has unknown fields", std::move(errors));
}

template <typename T>
T field_or(const json& body, const char* key, T fallback) {
    if (!body.contains(key)) return fallback;
    const auto& v = body.at(key);
    bool ok = false;
    if constexpr (std::is_same_v<T, bool>) ok = v.is_boolean();
    else if constexpr (std::is_integral_v<T>) ok = v.is_number_integer();
    else ok = v.is_number();
    if (!ok) throw Error(ErrorCode::ValidationError, std::string("field ") + key + " has the wrong type", {{key, "wrong type"}});
    return v.get<T>();
}

std::vector<double> numbers(const json& v, const char* field) {
    if (!v.is_array()) throw Error(ErrorCode::ValidationError, std::string(field) + " must be a list of numbers", {{field, "not a list"}});
    std::vector<double> out;
    for (const auto& e : v) {
        if (!e.is_number()) throw Error(ErrorCode::ValidationError, std::string(field) + " must be a list of numbers", {{field, "non-numeric entry"}});
        out.push_back(e.get<double>());
    }
    return out;
}

bool valid_key(const std::string& key) {
    return key.size() <= 128 && std::all_of(key.begin(), key.end(), [](char c) {
               return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' || c == '_';
           });
}

store::Region region_from(const json& body) {
    if (!body.contains("region") || !body.at("region").is_object()) {
        throw Error(ErrorCode::ValidationError, "zoom needs a region object", {{"region", "required object"}});
    }
    const auto& j = body.at("region");
    require_object(j, {"a_lo", "a_hi", "e_lo", "e_hi"});
    store::Region r;
    std::vector<FieldError> errors;
    auto read = [&](const char* key, double& out) {
        if (!j.contains(key) || !j.at(key).is_number()) errors.push_back({std::string("region.") + key, "required number"});
        else out = j.at(key).get<double>();
    };
    read("a_lo", r.a_lo);
    read("a_hi", r.a_hi);
    read("e_lo", r.e_lo);
    read("e_hi", r.e_hi);
    if (!errors.empty()) throw Error(ErrorCode::ValidationError, "invalid region", std::move(errors));
    r.validate();
    return r;
}

json cell_json(const genmodel::WalkRow& row, int step) {
    json j = {{"step", step}, {"latent", row.latent}, {"degenerate", !row.bitmap.has_value()}};
    if (row.bitmap) {
        j["thumbnail"] = encoding::to_rle(*row.bitmap);
        j["u_max"] = row.u_max;
        j["area"] = row.area;
        j["enstrophy"] = row.enstrophy;
    } else {
        j["thumbnail"] = nullptr;
    }
    return j;
}

json metrics_json(double u_max, double area, double enstrophy) {
    return {{"u_max", u_max}, {"area", area}, {"enstrophy", enstrophy}};
}

}  // namespace

Service::Service(store::Store& s, ServiceOptions options) : store_(s), options_(options) {
    free_slots_ = std::max(1, options_.validation_workers);
    recover_interrupted();
}

Service::~Service() {
    stopping_ = true;
    wait_all();
}

void Service::recover_interrupted() {
    for (auto& r : store_.list_runs()) {
        if (r.status == RunStatus::Running) {
            r.status = RunStatus::Failed;
            r.failure = "interrupted: the server stopped before the run finished";
            r.updated_at = store::timestamp_now();
            store_.update_record(r);
        } else if (r.status == RunStatus::Created) {
            launch(r.run_id);
        }
    }
}

void Service::launch(const std::string& run_id) {
    if (!options_.background) {
        execute_run(store_, run_id, &stopping_);
        return;
    }
    std::thread previous;
    {
        std::lock_guard lock(runs_mutex_);
        auto it = runs_.find(run_id);
        if (it != runs_.end()) previous = std::move(it->second);
        runs_[run_id] = std::thread([this, run_id] {
            try {
                execute_run(store_, run_id, &stopping_);
            } catch (const std::exception&) {
                // execute_run records its own failures; anything left is a store error
            }
        });
    }
    if (previous.joinable()) previous.join();
}

void Service::wait(const std::string& run_id) {
    std::thread t;
    {
        std::lock_guard lock(runs_mutex_);
        auto it = runs_.find(run_id);
        if (it == runs_.end()) return;
        t = std::move(it->second);
        runs_.erase(it);
    }
    if (t.joinable()) t.join();
}

void Service::wait_all() {
    std::map<std::string, std::thread> all;
    {
        std::lock_guard lock(runs_mutex_);
        all.swap(runs_);
    }
    for (auto& [id, t] : all)
        if (t.joinable()) t.join();
}

json Service::idempotent(const std::string& endpoint, const std::string& key, const json& body,
                         const std::function<json()>& handler) {
    if (key.empty()) return handler();
    if (!valid_key(key)) {
        throw Error(ErrorCode::ValidationError, "idempotency key must be 1-128 characters of [A-Za-z0-9_-]",
                    {{"Idempotency-Key", "invalid characters or length"}});
    }
    const fs::path path = store_.root() / "idempotency" / endpoint / (key + ".json");
    const std::string name = path.string();
    const auto body_crc = store::crc32_of(body.dump());
    {
        std::unique_lock lock(idempotency_mutex_);
        idempotency_cv_.wait(lock, [&] { return !idempotency_inflight_.count(name); });
        if (fs::exists(path)) {
            const auto saved = json::parse(store::read_file(path), nullptr, false);
            if (saved.is_discarded() || !saved.contains("response")) {
                throw Error(ErrorCode::CorruptArtifact, "stored idempotent response is unreadable");
            }
            if (saved.at("body_crc32").get<std::uint32_t>() != body_crc) {
                throw Error(ErrorCode::ValidationError, "idempotency key was already used with a different request",
                            {{"Idempotency-Key", "reused with a different body"}});
            }
            return saved.at("response");
        }
        idempotency_inflight_.insert(name);
    }
    auto release = [&] {
        std::lock_guard lock(idempotency_mutex_);
        idempotency_inflight_.erase(name);
        idempotency_cv_.notify_all();
    };
    try {
        json response = handler();
        fs::create_directories(path.parent_path());
        store::write_file_atomic(path, json{{"body_crc32", body_crc}, {"response", response}}.dump() + "\n");
        release();
        return response;
    } catch (...) {
        release();
        throw;
    }
}

json Service::create_run(const json& body, const std::string& idempotency_key) {
    return idempotent("runs", idempotency_key, body, [&] {
        require_object(body, {"config", "preset", "run_id"});
        store::RunConfig base;
        if (body.contains("preset")) {
            const auto& p = body.at("preset");
            if (p == "desk") base = store::RunConfig::desk();
            else if (p != "paper") throw Error(ErrorCode::ValidationError, "unknown preset", {{"preset", "must be \"paper\" or \"desk\""}});
        }
        json merged = store::to_json(base);
        if (body.contains("config")) {
            if (!body.at("config").is_object()) throw Error(ErrorCode::ValidationError, "config must be an object", {{"config", "must be an object"}});
            merged.merge_patch(body.at("config"));
        }
        store::RunRecord r;
        try {
            r.config = store::config_from_json(merged);
        } catch (const Error& e) {
            std::vector<FieldError> fields;
            for (const auto& f : e.fields()) fields.push_back({"config." + f.field, f.message});
            throw Error(e.code(), e.detail(), std::move(fields));
        }
        if (body.contains("run_id")) {
            if (!body.at("run_id").is_string()) throw Error(ErrorCode::ValidationError, "run_id must be a string", {{"run_id", "must be a string"}});
            r.run_id = body.at("run_id").get<std::string>();
        } else {
            r.run_id = store_.generate_id();
        }
        r.created_at = r.updated_at = store::timestamp_now();
        r.progress.budget = r.config.sphen.total_budget;
        store_.create_run(r);
        launch(r.run_id);
        return json{{"run_id", r.run_id}, {"status", "created"}};
    });
}

json Service::run_status(const std::string& run_id) const { return status_json(store_, store_.load_record(run_id)); }

json Service::list_runs() const {
    json runs = json::array();
    for (const auto& r : store_.list_runs()) {
        runs.push_back({{"run_id", r.run_id},
                        {"status", store::to_string(r.status)},
                        {"created_at", r.created_at},
                        {"parent_id", r.lineage ? json(r.lineage->parent_id) : json(nullptr)},
                        {"evaluations", r.progress.evaluations},
                        {"budget", r.progress.budget}});
    }
    return {{"runs", std::move(runs)}};
}

json Service::archive(const std::string& run_id, std::optional<int> max_cells, bool thumbnails) const {
    const auto record = store_.load_record(run_id);
    if (max_cells && *max_cells < 1) {
        throw Error(ErrorCode::ValidationError, "max_cells must be at least 1", {{"max_cells", "must be at least 1"}});
    }
    auto a = store_.load_archive(run_id);
    if (max_cells && *max_cells < a.capacity()) a = qd::reduce_archive(a, *max_cells);
    json j = archive_json(a, thumbnails, record.config.sphen.resolution);
    j["run_id"] = run_id;
    return j;
}

json Service::zoom(const std::string& run_id, const json& body, const std::string& idempotency_key) {
    return idempotent("zoom", idempotency_key, json{{"run_id", run_id}, {"body", body}}, [&] {
        require_object(body, {"region", "fill", "total_budget", "archive_capacity"});
        const auto parent = store_.load_record(run_id);
        if (!store_.has_result(run_id)) throw Error(ErrorCode::NotFound, "run " + run_id + " has no archive yet");
        const auto region = region_from(body);
        const bool fill = field_or(body, "fill", true);

        auto config = parent.config;
        config.sphen.total_budget = field_or(body, "total_budget", config.sphen.total_budget);
        config.sphen.archive_capacity = field_or(body, "archive_capacity", config.sphen.archive_capacity);
        if (auto errors = store::validate(config); !errors.empty()) {
            throw Error(ErrorCode::ValidationError, "invalid zoom overrides", std::move(errors));
        }

        const auto archive = store_.load_archive(run_id);
        const auto& norm = archive.normalization();
        std::vector<const qd::Elite*> inside;
        for (int i : archive.occupied()) {
            const auto& e = *archive.niche(i);
            const auto u = norm.normalize(e.area, e.enstrophy);
            if (u[0] >= region.a_lo && u[0] <= region.a_hi && u[1] >= region.e_lo && u[1] <= region.e_hi) inside.push_back(&e);
        }
        if (inside.empty() && !fill) {
            throw Error(ErrorCode::EmptyRegion, "no parent elites inside the region and Sobol fill is disabled");
        }
        std::stable_sort(inside.begin(), inside.end(), [](const qd::Elite* a, const qd::Elite* b) { return a->fitness < b->fitness; });

        store::RunRecord child;
        child.run_id = store_.generate_id();
        child.config = config;
        child.created_at = child.updated_at = store::timestamp_now();
        child.lineage = store::Lineage{run_id, region};
        child.normalization = norm.restrict(region.a_lo, region.a_hi, region.e_lo, region.e_hi);
        child.progress.budget = config.sphen.total_budget;
        json genomes = json::array();
        for (const auto* e : inside) genomes.push_back(e->params);
        store_.create_run(child);
        store_.write_artifact(child.run_id, "init.json", json{{"genomes", genomes}, {"sobol_fill", fill}}.dump() + "\n");
        launch(child.run_id);
        return json{{"run_id", child.run_id},
                    {"status", "created"},
                    {"parent_id", run_id},
                    {"initial_elites", inside.size()}};
    });
}

std::shared_ptr<const Service::LatentModels> Service::latent_models(const std::string& run_id) {
    const auto manifest = store_.manifest(run_id);
    const auto it = manifest.find("vae/model.fdav");
    if (it == manifest.end() || !manifest.count("vae/predictors.json")) {
        throw Error(ErrorCode::NotFound, "run " + run_id + " has no trained VAE and latent predictors");
    }
    std::lock_guard lock(models_mutex_);
    auto& cached = models_[run_id];
    if (!cached || cached->weights_crc != it->second.crc32) {
        auto m = std::make_shared<LatentModels>();
        m->weights_crc = it->second.crc32;
        m->vae = store_.load_vae(run_id);
        m->predictors = store_.load_predictors(run_id);
        cached = std::move(m);
    }
    return cached;
}

json Service::walk(const std::string& run_id, const json& body, const std::string& idempotency_key) {
    return idempotent("walk", idempotency_key, json{{"run_id", run_id}, {"body", body}}, [&] {
        require_object(body, {"center", "dim", "steps", "span"});
        store_.load_record(run_id);
        const auto models = latent_models(run_id);
        const int latent = models->vae.latent_dim();
        std::vector<double> center(static_cast<std::size_t>(latent), 0.0);
        if (body.contains("center")) center = numbers(body.at("center"), "center");
        const int steps = field_or(body, "steps", 11);
        const double span = field_or(body, "span", 2.0);
        std::vector<int> dims;
        if (body.contains("dim")) {
            dims.push_back(field_or(body, "dim", 0));
        } else {
            for (int d = 0; d < latent; ++d) dims.push_back(d);
        }
        json rows = json::array();
        for (int d : dims) {
            const auto walk = genmodel::latent_walk(models->vae, models->predictors, center, d, steps, span);
            json cells = json::array();
            for (std::size_t k = 0; k < walk.size(); ++k) cells.push_back(cell_json(walk[k], static_cast<int>(k)));
            rows.push_back({{"dim", d}, {"cells", std::move(cells)}});
        }
        return json{{"run_id", run_id},
                    {"latent_dim", latent},
                    {"center", center},
                    {"steps", steps},
                    {"span", span},
                    {"rows", std::move(rows)}};
    });
}

json Service::validate_shape(const std::string& run_id, const json& body, const std::string& idempotency_key) {
    return idempotent("validate", idempotency_key, json{{"run_id", run_id}, {"body", body}}, [&] {
        require_object(body, {"genome", "latent"});
        if (body.contains("genome") == body.contains("latent")) {
            throw Error(ErrorCode::ValidationError, "give exactly one of genome or latent",
                        {{"genome", "exactly one of genome or latent is required"}});
        }
        const auto record = store_.load_record(run_id);
        const int res = record.config.sphen.resolution;
        encoding::Bitmap bitmap;
        json input;
        std::optional<json> predicted;
        if (body.contains("genome")) {
            const auto params = numbers(body.at("genome"), "genome");
            if (params.size() != encoding::kGenomeSize) {
                throw Error(ErrorCode::ValidationError, "genome must have 16 values", {{"genome", "must have 16 values"}});
            }
            const encoding::ShapeGenome genome(params);
            bitmap = encoding::express(genome, res);
            input = {{"genome", genome.params()}};
            if (store_.has_result(run_id)) {
                const auto result = store_.load_result(run_id);
                if (result.u_max_model && result.enstrophy_model) {
                    Eigen::MatrixXd x(1, static_cast<Eigen::Index>(encoding::kGenomeSize));
                    for (std::size_t j = 0; j < encoding::kGenomeSize; ++j) x(0, static_cast<Eigen::Index>(j)) = genome[j];
                    predicted = metrics_json(result.u_max_model->predict_mean(x)(0), encoding::area(bitmap),
                                             result.enstrophy_model->predict_mean(x)(0));
                }
            }
        } else {
            const auto models = latent_models(run_id);
            const auto z = numbers(body.at("latent"), "latent");
            bitmap = genmodel::decode(models->vae, z);
            input = {{"latent", z}};
            const Eigen::MatrixXd row = Eigen::Map<const Eigen::RowVectorXd>(z.data(), static_cast<Eigen::Index>(z.size()));
            const auto p = models->predictors.predict(row);
            predicted = metrics_json(p.u_max(0), p.area(0), p.enstrophy(0));
        }

        auto lbm = record.config.lbm;
        lbm.keep_snapshots = true;
        lbm::SimulationResult sim;
        {
            std::unique_lock lock(slots_mutex_);
            slots_cv_.wait(lock, [&] { return free_slots_ > 0; });
            --free_slots_;
        }
        try {
            sim = lbm::simulate(bitmap, lbm);
        } catch (...) {
            std::lock_guard lock(slots_mutex_);
            ++free_slots_;
            slots_cv_.notify_one();
            throw;
        }
        {
            std::lock_guard lock(slots_mutex_);
            ++free_slots_;
            slots_cv_.notify_one();
        }

        std::string vid = store_.generate_id();
        vid[0] = 'v';
        json out = {{"validation_id", vid},
                    {"run_id", run_id},
                    {"input", input},
                    {"shape", encoding::to_rle(bitmap)},
                    {"ok", sim.ok()},
                    {"predicted", predicted ? *predicted : json(nullptr)}};
        if (!sim.ok()) {
            out["measured"] = nullptr;
            out["delta"] = nullptr;
            out["snapshots"] = nullptr;
            out["failure"] = {{"message", sim.failure}, {"step", sim.failed_at_step}};
            return out;
        }
        const auto& m = *sim.metrics;
        out["measured"] = metrics_json(m.u_max, m.area, m.enstrophy);
        if (predicted) {
            out["delta"] = metrics_json(m.u_max - predicted->at("u_max").get<double>(),
                                        m.area - predicted->at("area").get<double>(),
                                        m.enstrophy - predicted->at("enstrophy").get<double>());
        } else {
            out["delta"] = nullptr;
        }
        const std::string path = "flow/" + vid + ".fdaf";
        const auto bytes = lbm::encode_snapshots(m.snapshots);
        store_.write_artifact(run_id, path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
        json steps = json::array();
        for (const auto& s : m.snapshots) steps.push_back(s.step);
        out["snapshots"] = {{"path", path}, {"count", m.snapshots.size()}, {"steps", std::move(steps)}};
        out["failure"] = nullptr;
        return out;
    });
}

}  // namespace fda::server
