#include <algorithm>
#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <fstream>
#include <random>
#include <sstream>

#include <unistd.h>
#include <zlib.h>

#include <nlohmann/json.hpp>

#include "csv.hpp"
#include "fda/error.hpp"
#include "fda/store.hpp"

namespace fda::store {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(RunStatus s) {
    switch (s) {
    case RunStatus::Created: return "created";
    case RunStatus::Running: return "running";
    case RunStatus::Finished: return "finished";
    case RunStatus::Failed: return "failed";
    }
    return "created";
}

RunStatus run_status_from_string(std::string_view s) {
    if (s == "created") return RunStatus::Created;
    if (s == "running") return RunStatus::Running;
    if (s == "finished") return RunStatus::Finished;
    if (s == "failed") return RunStatus::Failed;
    throw Error(ErrorCode::CorruptArtifact, "unknown run status '" + std::string(s) + "'");
}

bool transition_allowed(RunStatus from, RunStatus to) {
    if (from == to) return true;
    switch (from) {
    case RunStatus::Created: return true;
    case RunStatus::Running: return to == RunStatus::Finished || to == RunStatus::Failed;
    case RunStatus::Finished:
    case RunStatus::Failed: return false;
    }
    return false;
}

void Region::validate() const {
    qd::FeatureNormalization{}.restrict(a_lo, a_hi, e_lo, e_hi);
}

bool operator==(const RunRecord& a, const RunRecord& b) {
    return a.run_id == b.run_id && a.status == b.status && to_json(a.config) == to_json(b.config) &&
           a.created_at == b.created_at && a.updated_at == b.updated_at && a.lineage == b.lineage &&
           a.normalization == b.normalization && a.progress == b.progress && a.failure == b.failure;
}

namespace {

json range_json(const qd::FeatureRange& r) { return {{"lo", r.lo}, {"hi", r.hi}}; }
qd::FeatureRange range_from(const json& j) { return {j.at("lo").get<double>(), j.at("hi").get<double>()}; }

json normalization_json(const qd::FeatureNormalization& n) {
    return {{"area", range_json(n.area)}, {"enstrophy", range_json(n.enstrophy)}};
}
qd::FeatureNormalization normalization_from(const json& j) {
    return {range_from(j.at("area")), range_from(j.at("enstrophy"))};
}

// Record fields other than the config.
json record_meta(const RunRecord& r) {
    json j = {{"run_id", r.run_id},
              {"status", to_string(r.status)},
              {"created_at", r.created_at},
              {"updated_at", r.updated_at},
              {"failure", r.failure}};
    j["lineage"] = r.lineage ? json{{"parent_id", r.lineage->parent_id},
                                    {"region",
                                     {{"a_lo", r.lineage->region.a_lo},
                                      {"a_hi", r.lineage->region.a_hi},
                                      {"e_lo", r.lineage->region.e_lo},
                                      {"e_hi", r.lineage->region.e_hi}}}}
                             : json(nullptr);
    j["normalization"] = r.normalization ? normalization_json(*r.normalization) : json(nullptr);
    const auto& p = r.progress;
    j["progress"] = {{"evaluations", p.evaluations},
                     {"budget", p.budget},
                     {"round", p.round},
                     {"occupancy", p.occupancy},
                     {"best_fitness", p.best_fitness ? json(*p.best_fitness) : json(nullptr)}};
    return j;
}

void record_meta_from(const json& j, RunRecord& r) {
    r.run_id = j.at("run_id").get<std::string>();
    r.status = run_status_from_string(j.at("status").get<std::string>());
    r.created_at = j.at("created_at").get<std::string>();
    r.updated_at = j.at("updated_at").get<std::string>();
    r.failure = j.value("failure", "");
    if (const auto& l = j.at("lineage"); !l.is_null()) {
        const auto& g = l.at("region");
        r.lineage = Lineage{l.at("parent_id").get<std::string>(),
                            {g.at("a_lo").get<double>(), g.at("a_hi").get<double>(), g.at("e_lo").get<double>(),
                             g.at("e_hi").get<double>()}};
    }
    if (const auto& n = j.at("normalization"); !n.is_null()) r.normalization = normalization_from(n);
    const auto& p = j.at("progress");
    r.progress.evaluations = p.at("evaluations").get<int>();
    r.progress.budget = p.at("budget").get<int>();
    r.progress.round = p.at("round").get<int>();
    r.progress.occupancy = p.at("occupancy").get<int>();
    if (const auto& b = p.at("best_fitness"); !b.is_null()) r.progress.best_fitness = b.get<double>();
}

bool valid_id(const std::string& id) {
    if (id.empty() || id.size() > 64) return false;
    return std::all_of(id.begin(), id.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_';
    });
}

bool valid_artifact_path(const std::string& path) {
    if (path.empty() || path.front() == '/' || path == "manifest.json") return false;
    const fs::path p(path);
    for (const auto& part : p) {
        if (part == ".." || part == "." || part.empty()) return false;
    }
    return std::all_of(path.begin(), path.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.' || c == '/';
    });
}

json parse_json(const std::string& text, const std::string& what) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::CorruptArtifact, what + " is not valid JSON: " + e.what());
    }
}

template <class F>
auto corrupt_on_json_error(const std::string& what, F&& f) {
    try {
        return f();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::CorruptArtifact, what + ": " + e.what());
    }
}

std::string trace_csv(const qd::NicheTrace& trace) {
    std::string out = "niche_id,update,fitness\n";
    for (std::size_t n = 0; n < trace.per_niche.size(); ++n) {
        for (const auto& [update, fitness] : trace.per_niche[n]) {
            out += std::to_string(n) + "," + std::to_string(update) + "," + csv::format_double(fitness) + "\n";
        }
    }
    return out;
}

qd::NicheTrace trace_from_csv(const std::string& text, int capacity) {
    const auto table = csv::parse(text);
    if (table.header != std::vector<std::string>{"niche_id", "update", "fitness"}) {
        throw Error(ErrorCode::CorruptArtifact, "unexpected trace.csv header");
    }
    qd::NicheTrace trace;
    trace.per_niche.assign(static_cast<std::size_t>(capacity), {});
    for (const auto& row : table.rows) {
        if (row.size() != 3) throw Error(ErrorCode::CorruptArtifact, "trace.csv row has the wrong width");
        const long n = csv::parse_long(row[0]);
        if (n < 0 || n >= capacity) throw Error(ErrorCode::CorruptArtifact, "trace.csv niche out of range");
        trace.per_niche[static_cast<std::size_t>(n)].emplace_back(static_cast<int>(csv::parse_long(row[1])),
                                                                  csv::parse_double(row[2]));
    }
    return trace;
}

json hyper_json(const surrogate::GPHyperparams& h) {
    return {{"length_scale", h.length_scale}, {"signal_variance", h.signal_variance}, {"noise_variance", h.noise_variance}};
}
surrogate::GPHyperparams hyper_from(const json& j) {
    return {j.at("length_scale").get<double>(), j.at("signal_variance").get<double>(),
            j.at("noise_variance").get<double>()};
}

}  // namespace

json to_json(const RunRecord& r) {
    json j = record_meta(r);
    j["config"] = to_json(r.config);
    return j;
}

RunRecord record_from_json(const json& j) {
    RunRecord r;
    record_meta_from(j, r);
    r.config = config_from_json(j.at("config"));
    return r;
}

std::string timestamp_now() {
    const auto now = std::chrono::system_clock::now();
    const auto t = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[40];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
    char out[48];
    std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
    return out;
}

std::uint32_t crc32_of(std::string_view bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed large buffers in pieces.
    std::size_t pos = 0;
    while (pos < bytes.size()) {
        const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - pos, 1u << 30));
        crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + pos), n);
        pos += n;
    }
    return static_cast<std::uint32_t>(crc);
}

void write_file_atomic(const fs::path& path, std::string_view bytes) {
    static std::atomic<unsigned long> counter{0};
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw Error(ErrorCode::StorageFull, "cannot create " + path.parent_path().string() + ": " + ec.message());
    const auto tmp = path.string() + ".tmp-" + std::to_string(::getpid()) + "-" + std::to_string(counter++);
    std::FILE* f = std::fopen(tmp.c_str(), "wb");
    if (!f) throw Error(ErrorCode::StorageFull, "cannot open " + tmp + ": " + std::strerror(errno));
    const bool written = std::fwrite(bytes.data(), 1, bytes.size(), f) == bytes.size() && std::fflush(f) == 0 &&
                         ::fsync(::fileno(f)) == 0;
    const int err = errno;
    const bool closed = std::fclose(f) == 0;
    if (!written || !closed) {
        fs::remove(tmp, ec);
        throw Error(ErrorCode::StorageFull, "cannot write " + path.string() + ": " + std::strerror(written ? errno : err));
    }
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw Error(ErrorCode::StorageFull, "cannot move " + tmp + " into place: " + ec.message());
    }
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::NotFound, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Store -------------------------------------------------------------------

Store::Store(fs::path root) : root_(std::move(root)) {
    std::error_code ec;
    fs::create_directories(root_ / "runs", ec);
    if (ec) throw Error(ErrorCode::StorageFull, "cannot create data directory " + root_.string() + ": " + ec.message());
}

fs::path Store::run_dir(const std::string& run_id) const { return root_ / "runs" / run_id; }

bool Store::exists(const std::string& run_id) const {
    return valid_id(run_id) && fs::exists(run_dir(run_id) / "run.json");
}

std::string Store::generate_id() const {
    static std::mutex m;
    static std::mt19937_64 rng(std::random_device{}());
    for (;;) {
        const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        std::tm tm{};
        gmtime_r(&t, &tm);
        char stamp[32];
        std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
        std::uint32_t r = 0;
        {
            std::lock_guard lock(m);
            r = static_cast<std::uint32_t>(rng() & 0xffffff);
        }
        char id[48];
        std::snprintf(id, sizeof id, "r%s-%06x", stamp, r);
        if (!fs::exists(run_dir(id))) return id;
    }
}

std::shared_mutex& Store::lock_for(const std::string& run_id) const {
    std::lock_guard lock(locks_mutex_);
    auto& slot = locks_[run_id];
    if (!slot) slot = std::make_unique<std::shared_mutex>();
    return *slot;
}

void Store::require(const std::string& run_id) const {
    if (!exists(run_id)) throw Error(ErrorCode::NotFound, "run '" + run_id + "' does not exist");
}

std::map<std::string, ManifestEntry> Store::manifest_locked(const std::string& run_id) const {
    const auto path = run_dir(run_id) / "manifest.json";
    std::map<std::string, ManifestEntry> out;
    if (!fs::exists(path)) return out;
    const auto j = parse_json(read_file(path), "manifest.json");
    return corrupt_on_json_error("manifest.json", [&] {
        for (const auto& [name, entry] : j.at("files").items()) {
            out[name] = {entry.at("crc32").get<std::uint32_t>(), entry.at("size").get<std::uint64_t>()};
        }
        return out;
    });
}

void Store::write_locked(const std::string& run_id, const std::string& path, std::string_view bytes) {
    if (!valid_artifact_path(path)) {
        throw Error(ErrorCode::ValidationError, "invalid artifact path '" + path + "'", {{"path", "invalid"}});
    }
    write_file_atomic(run_dir(run_id) / path, bytes);
    auto m = manifest_locked(run_id);
    m[path] = {crc32_of(bytes), bytes.size()};
    json files = json::object();
    for (const auto& [name, e] : m) files[name] = {{"crc32", e.crc32}, {"size", e.size}};
    const json manifest = {{"format", 1}, {"checksum", "crc32"}, {"files", files}};
    write_file_atomic(run_dir(run_id) / "manifest.json", manifest.dump(2) + "\n");
}

std::string Store::read_locked(const std::string& run_id, const std::string& path) const {
    const auto m = manifest_locked(run_id);
    const auto it = m.find(path);
    if (it == m.end()) throw Error(ErrorCode::NotFound, "run '" + run_id + "' has no artifact '" + path + "'");
    std::string bytes;
    try {
        bytes = read_file(run_dir(run_id) / path);
    } catch (const Error&) {
        throw Error(ErrorCode::CorruptArtifact, "artifact '" + path + "' listed in the manifest is missing");
    }
    if (bytes.size() != it->second.size || crc32_of(bytes) != it->second.crc32) {
        throw Error(ErrorCode::CorruptArtifact, "checksum mismatch for '" + path + "' in run '" + run_id + "'");
    }
    return bytes;
}

void Store::write_artifact(const std::string& run_id, const std::string& path, std::string_view bytes) {
    require(run_id);
    std::unique_lock lock(lock_for(run_id));
    write_locked(run_id, path, bytes);
}

std::string Store::read_artifact(const std::string& run_id, const std::string& path) const {
    require(run_id);
    std::shared_lock lock(lock_for(run_id));
    return read_locked(run_id, path);
}

bool Store::has_artifact(const std::string& run_id, const std::string& path) const {
    if (!exists(run_id)) return false;
    std::shared_lock lock(lock_for(run_id));
    return manifest_locked(run_id).count(path) > 0;
}

std::map<std::string, ManifestEntry> Store::manifest(const std::string& run_id) const {
    require(run_id);
    std::shared_lock lock(lock_for(run_id));
    return manifest_locked(run_id);
}

void Store::verify(const std::string& run_id) const {
    require(run_id);
    std::shared_lock lock(lock_for(run_id));
    for (const auto& [path, entry] : manifest_locked(run_id)) read_locked(run_id, path);
}

void Store::create_run(const RunRecord& record) {
    if (!valid_id(record.run_id)) {
        throw Error(ErrorCode::ValidationError, "run id must be 1-64 characters of [A-Za-z0-9_-]",
                    {{"run_id", "invalid"}});
    }
    if (auto errors = validate(record.config); !errors.empty()) {
        throw Error(ErrorCode::ValidationError, "invalid configuration", std::move(errors));
    }
    if (record.lineage) {
        if (!exists(record.lineage->parent_id)) {
            throw Error(ErrorCode::NotFound, "parent run '" + record.lineage->parent_id + "' does not exist");
        }
        record.lineage->region.validate();
    }
    std::unique_lock lock(lock_for(record.run_id));
    std::error_code ec;
    if (!fs::create_directories(run_dir(record.run_id), ec)) {
        if (ec) throw Error(ErrorCode::StorageFull, "cannot create run directory: " + ec.message());
        throw Error(ErrorCode::ConflictingRunId, "run '" + record.run_id + "' already exists");
    }
    write_locked(record.run_id, "config.json", to_json(record.config).dump(2) + "\n");
    write_locked(record.run_id, "run.json", record_meta(record).dump(2) + "\n");
}

void Store::update_record(const RunRecord& record) {
    require(record.run_id);
    std::unique_lock lock(lock_for(record.run_id));
    RunRecord current;
    record_meta_from(parse_json(read_locked(record.run_id, "run.json"), "run.json"), current);
    if (!transition_allowed(current.status, record.status)) {
        throw Error(ErrorCode::ValidationError,
                    "run status cannot move from " + std::string(to_string(current.status)) + " to " +
                        std::string(to_string(record.status)),
                    {{"status", "transition not allowed"}});
    }
    if (record.created_at != current.created_at || record.lineage != current.lineage) {
        throw Error(ErrorCode::ValidationError, "creation time and lineage are immutable", {{"run_id", "immutable fields"}});
    }
    write_locked(record.run_id, "run.json", record_meta(record).dump(2) + "\n");
}

RunRecord Store::load_record(const std::string& run_id) const {
    require(run_id);
    std::shared_lock lock(lock_for(run_id));
    RunRecord r;
    const auto meta = parse_json(read_locked(run_id, "run.json"), "run.json");
    corrupt_on_json_error("run.json", [&] {
        record_meta_from(meta, r);
        return 0;
    });
    const auto config = parse_json(read_locked(run_id, "config.json"), "config.json");
    try {
        r.config = config_from_json(config);
    } catch (const Error& e) {
        throw Error(ErrorCode::CorruptArtifact, "stored config.json is invalid: " + e.detail(), e.fields());
    }
    if (r.run_id != run_id) throw Error(ErrorCode::CorruptArtifact, "run.json names a different run id");
    return r;
}

std::vector<RunRecord> Store::list_runs() const {
    std::vector<RunRecord> out;
    std::error_code ec;
    for (const auto& entry : fs::directory_iterator(root_ / "runs", ec)) {
        const auto id = entry.path().filename().string();
        if (!entry.is_directory() || !exists(id)) continue;
        try {
            out.push_back(load_record(id));
        } catch (const Error&) {
            // unreadable runs are left out of the listing
        }
    }
    std::sort(out.begin(), out.end(), [](const RunRecord& a, const RunRecord& b) {
        return a.created_at != b.created_at ? a.created_at < b.created_at : a.run_id < b.run_id;
    });
    return out;
}

void Store::save_result(const std::string& run_id, const qd::RunResult& r) {
    require(run_id);
    std::unique_lock lock(lock_for(run_id));
    const auto& a = r.archive;
    json centroids = json::array();
    for (Eigen::Index i = 0; i < a.centroids().rows(); ++i) centroids.push_back({a.centroids()(i, 0), a.centroids()(i, 1)});
    const json archive_meta = {{"capacity", a.capacity()},
                               {"seed", a.seed()},
                               {"normalization", normalization_json(a.normalization())},
                               {"centroids", centroids}};
    json history = json::array();
    for (const auto& s : r.model_history) {
        history.push_back({{"round", s.round},
                           {"training_size", s.training_size},
                           {"u_max", hyper_json(s.u_max)},
                           {"enstrophy", hyper_json(s.enstrophy)}});
    }
    RunConfig wrapper;
    wrapper.sphen = r.config;
    const json result_meta = {{"sphen", to_json(wrapper).at("sphen")},
                              {"round_proposals", r.round_proposals},
                              {"total_proposals", r.total_proposals}};

    write_locked(run_id, "samples.csv", qd::samples_csv(r.samples));
    write_locked(run_id, "archive.csv", qd::archive_csv(a));
    write_locked(run_id, "archive.json", archive_meta.dump() + "\n");
    write_locked(run_id, "stats.csv", qd::stats_csv(r.stats));
    write_locked(run_id, "trace.csv", trace_csv(r.final_trace));
    write_locked(run_id, "models/history.json", history.dump(2) + "\n");
    if (r.u_max_model) write_locked(run_id, "models/u_max.json", surrogate::to_json(*r.u_max_model).dump() + "\n");
    if (r.enstrophy_model) {
        write_locked(run_id, "models/enstrophy.json", surrogate::to_json(*r.enstrophy_model).dump() + "\n");
    }
    // Written last: its presence marks a complete result.
    write_locked(run_id, "result.json", result_meta.dump(2) + "\n");
}

bool Store::has_result(const std::string& run_id) const { return has_artifact(run_id, "result.json"); }

qd::VoronoiArchive Store::archive_locked(const std::string& run_id) const {
    qd::VoronoiArchive archive;
    const auto am = parse_json(read_locked(run_id, "archive.json"), "archive.json");
    corrupt_on_json_error("archive.json", [&] {
        const auto& c = am.at("centroids");
        Eigen::MatrixXd centroids(static_cast<Eigen::Index>(c.size()), 2);
        for (std::size_t i = 0; i < c.size(); ++i) {
            centroids(static_cast<Eigen::Index>(i), 0) = c[i].at(0).get<double>();
            centroids(static_cast<Eigen::Index>(i), 1) = c[i].at(1).get<double>();
        }
        if (centroids.rows() != am.at("capacity").get<int>() || centroids.rows() < 1) {
            throw Error(ErrorCode::CorruptArtifact, "archive.json centroid count does not match its capacity");
        }
        archive = qd::VoronoiArchive(std::move(centroids), normalization_from(am.at("normalization")),
                                       am.at("seed").get<std::uint64_t>());
        return 0;
    });
    qd::load_archive_csv(archive, read_locked(run_id, "archive.csv"));
    return archive;
}

qd::VoronoiArchive Store::load_archive(const std::string& run_id) const {
    require(run_id);
    std::shared_lock lock(lock_for(run_id));
    if (!manifest_locked(run_id).count("result.json")) throw Error(ErrorCode::NotFound, "run " + run_id + " has no result");
    return archive_locked(run_id);
}

qd::RunResult Store::load_result(const std::string& run_id) const {
    require(run_id);
    std::shared_lock lock(lock_for(run_id));
    qd::RunResult r;
    const auto meta = parse_json(read_locked(run_id, "result.json"), "result.json");
    corrupt_on_json_error("result.json", [&] {
        json wrapper = {{"sphen", meta.at("sphen")}};
        if (meta.at("sphen").contains("resolution")) wrapper["vae"] = {{"input_resolution", meta.at("sphen").at("resolution")}};
        try {
            r.config = config_from_json(wrapper).sphen;
        } catch (const Error& e) {
            throw Error(ErrorCode::CorruptArtifact, "stored SPHEN config is invalid", e.fields());
        }
        r.round_proposals = meta.at("round_proposals").get<long>();
        r.total_proposals = meta.at("total_proposals").get<long>();
        return 0;
    });
    r.archive = archive_locked(run_id);
    r.samples = qd::samples_from_csv(read_locked(run_id, "samples.csv"));
    r.stats = qd::stats_from_csv(read_locked(run_id, "stats.csv"));
    r.final_trace = trace_from_csv(read_locked(run_id, "trace.csv"), r.archive.capacity());
    const auto history = parse_json(read_locked(run_id, "models/history.json"), "models/history.json");
    corrupt_on_json_error("models/history.json", [&] {
        for (const auto& s : history) {
            r.model_history.push_back({s.at("round").get<int>(), s.at("training_size").get<int>(),
                                       hyper_from(s.at("u_max")), hyper_from(s.at("enstrophy"))});
        }
        return 0;
    });
    const auto m = manifest_locked(run_id);
    if (m.count("models/u_max.json")) {
        r.u_max_model = surrogate::gp_from_json(parse_json(read_locked(run_id, "models/u_max.json"), "models/u_max.json"));
    }
    if (m.count("models/enstrophy.json")) {
        r.enstrophy_model =
            surrogate::gp_from_json(parse_json(read_locked(run_id, "models/enstrophy.json"), "models/enstrophy.json"));
    }
    return r;
}

void Store::save_vae(const std::string& run_id, const genmodel::VaeModel& model) {
    require(run_id);
    std::unique_lock lock(lock_for(run_id));
    const auto bytes = genmodel::save_weights(model);
    write_locked(run_id, "vae/model.fdav", std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
    write_locked(run_id, "vae/model.json", genmodel::sidecar(model).dump(2) + "\n");
}

bool Store::has_vae(const std::string& run_id) const { return has_artifact(run_id, "vae/model.json"); }

genmodel::VaeModel Store::load_vae(const std::string& run_id) const {
    require(run_id);
    std::shared_lock lock(lock_for(run_id));
    const auto bytes = read_locked(run_id, "vae/model.fdav");
    const auto side = parse_json(read_locked(run_id, "vae/model.json"), "vae/model.json");
    return genmodel::load_model(std::vector<std::uint8_t>(bytes.begin(), bytes.end()), side);
}

void Store::save_predictors(const std::string& run_id, const genmodel::LatentPredictorSet& p) {
    const json j = {{"u_max", surrogate::to_json(p.u_max)},
                    {"area", surrogate::to_json(p.area)},
                    {"enstrophy", surrogate::to_json(p.enstrophy)}};
    write_artifact(run_id, "vae/predictors.json", j.dump() + "\n");
}

bool Store::has_predictors(const std::string& run_id) const { return has_artifact(run_id, "vae/predictors.json"); }

genmodel::LatentPredictorSet Store::load_predictors(const std::string& run_id) const {
    const auto j = parse_json(read_artifact(run_id, "vae/predictors.json"), "vae/predictors.json");
    return corrupt_on_json_error("vae/predictors.json", [&] {
        return genmodel::LatentPredictorSet{surrogate::gp_from_json(j.at("u_max")), surrogate::gp_from_json(j.at("area")),
                                            surrogate::gp_from_json(j.at("enstrophy"))};
    });
}

std::string save_run(Store& store, const RunRecord& record, const qd::RunResult* result) {
    store.create_run(record);
    if (result) store.save_result(record.run_id, *result);
    return record.run_id;
}

RunHandle load_run(const Store& store, const std::string& run_id) { return RunHandle(store, store.load_record(run_id)); }

}  // namespace fda::store
