#include <algorithm>
#include <filesystem>
#include <random>
#include <thread>

#include <doctest.h>
#include <nlohmann/json.hpp>

#include "fda/server.hpp"

#include <httplib.h>

using namespace fda;
using namespace fda::server;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        std::random_device rd;
        path = fs::temp_directory_path() / ("fda-server-test-" + std::to_string(rd()) + std::to_string(rd()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

Error error_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e;
    }
    FAIL("expected an error");
    return Error(ErrorCode::ValidationError, "");
}

bool has_field(const Error& e, const std::string& field) {
    return std::any_of(e.fields().begin(), e.fields().end(), [&](const FieldError& f) { return f.field == field; });
}

json small_config() {
    return {{"evaluator", "synthetic"},
            {"sphen",
             {{"init_samples", 20},
              {"batch_size", 10},
              {"total_budget", 40},
              {"archive_capacity", 60},
              {"archive_updates_per_round", 40},
              {"resolution", 32}}},
            {"vae",
             {{"input_resolution", 32},
              {"conv_layers", {4, 8}},
              {"epochs", 5},
              {"archive_capacity", 300},
              {"archive_updates", 150}}}};
}

// One finished synthetic run with a trained VAE, shared by the tests below.
struct Fixture {
    TempDir dir;
    store::Store store{dir.path};
    std::string run_id;

    Fixture() {
        Service service(store, {2, false});
        json cfg = small_config();
        cfg["train_vae"] = true;
        run_id = service.create_run({{"preset", "desk"}, {"config", cfg}}).at("run_id");
    }
};

Fixture& fixture() {
    static Fixture f;
    return f;
}

store::RunRecord fresh_record(store::Store& s, const json& config) {
    store::RunRecord r;
    r.run_id = s.generate_id();
    r.config = store::config_from_json(config);
    r.created_at = r.updated_at = store::timestamp_now();
    r.progress.budget = r.config.sphen.total_budget;
    s.create_run(r);
    return r;
}

}  // namespace

TEST_CASE("error payloads and status codes") {
    const Error e(ErrorCode::ValidationError, "bad", {{"sphen.mutation_sigma", "must be positive"}});
    const auto j = error_json(e);
    CHECK(j.at("code") == "ValidationError");
    CHECK(j.at("message") == "bad");
    REQUIRE(j.at("fields").size() == 1);
    CHECK(j.at("fields")[0].at("field") == "sphen.mutation_sigma");
    CHECK(http_status(ErrorCode::ValidationError) == 400);
    CHECK(http_status(ErrorCode::EmptyRegion) == 400);
    CHECK(http_status(ErrorCode::NotFound) == 404);
    CHECK(http_status(ErrorCode::ConflictingRunId) == 409);
    CHECK(http_status(ErrorCode::DegenerateShape) == 422);
    CHECK(http_status(ErrorCode::StorageFull) == 507);
    CHECK(http_status(ErrorCode::CorruptArtifact) == 500);
}

TEST_CASE("create_run validates, returns distinct ids and honours idempotency keys") {
    TempDir dir;
    store::Store s(dir.path);
    Service service(s, {1, false});

    json bad = small_config();
    bad["sphen"]["mutation_sigma"] = -1.0;
    bad["lbm"] = {{"mach", 0.5}};
    const auto e = error_of([&] { service.create_run({{"config", bad}}); });
    CHECK(e.code() == ErrorCode::ValidationError);
    CHECK(has_field(e, "config.sphen.mutation_sigma"));
    CHECK(has_field(e, "config.lbm.mach"));
    CHECK(error_of([&] { service.create_run({{"preset", "huge"}}); }).code() == ErrorCode::ValidationError);
    CHECK(error_of([&] { service.create_run({{"bogus", 1}}); }).code() == ErrorCode::ValidationError);
    CHECK(s.list_runs().empty());

    const json body = {{"preset", "desk"}, {"config", small_config()}};
    const auto a = service.create_run(body);
    const auto b = service.create_run(body);
    CHECK(a.at("run_id") != b.at("run_id"));
    CHECK(a.at("status") == "created");

    const auto k1 = service.create_run(body, "retry-1");
    const auto k2 = service.create_run(body, "retry-1");
    CHECK(k1 == k2);
    CHECK(s.list_runs().size() == 3);
    CHECK(error_of([&] { service.create_run({{"preset", "desk"}}, "retry-1"); }).code() == ErrorCode::ValidationError);
    CHECK(error_of([&] { service.create_run(body, "bad key!"); }).code() == ErrorCode::ValidationError);

    // a retry after a restart still sees the stored response
    Service again(s, {1, false});
    CHECK(again.create_run(body, "retry-1") == k1);
    CHECK(s.list_runs().size() == 3);
}

TEST_CASE("run status reports progress") {
    TempDir dir;
    store::Store s(dir.path);
    const auto r = fresh_record(s, small_config());
    {
        const Service probe(s, {1, false});
    }
    // constructing the service relaunches created runs, so this one is finished
    auto st = s.load_record(r.run_id);
    CHECK(st.status == store::RunStatus::Finished);

    Service service(s, {1, false});
    const auto created = fresh_record(s, small_config());
    auto j = service.run_status(created.run_id);
    CHECK(j.at("status") == "created");
    CHECK(j.at("progress").at("evaluations") == 0);
    CHECK(j.at("progress").at("budget") == 40);
    CHECK(j.at("has_result") == false);

    j = service.run_status(r.run_id);
    CHECK(j.at("status") == "finished");
    CHECK(j.at("progress").at("evaluations") == 40);
    CHECK(j.at("progress").at("budget") == 40);
    CHECK(j.at("progress").at("occupancy").get<int>() > 0);
    CHECK(j.at("has_result") == true);
    CHECK(j.at("has_vae") == false);

    CHECK(error_of([&] { service.run_status("nope"); }).code() == ErrorCode::NotFound);
    const auto list = service.list_runs().at("runs");
    CHECK(list.size() == 2);
}

TEST_CASE("background runs finish and restarts mark interrupted runs failed") {
    TempDir dir;
    store::Store s(dir.path);
    std::string id;
    {
        Service service(s);
        id = service.create_run({{"preset", "desk"}, {"config", small_config()}}).at("run_id");
        service.wait(id);
        CHECK(s.load_record(id).status == store::RunStatus::Finished);
    }
    auto stuck = fresh_record(s, small_config());
    stuck.status = store::RunStatus::Running;
    s.update_record(stuck);
    const auto before = s.load_result(id);
    Service restarted(s, {1, false});
    const auto after = s.load_record(stuck.run_id);
    CHECK(after.status == store::RunStatus::Failed);
    CHECK(after.failure.find("interrupted") != std::string::npos);
    CHECK(s.load_record(id).status == store::RunStatus::Finished);
    const auto reloaded = s.load_result(id);
    CHECK(reloaded.samples == before.samples);
    CHECK(reloaded.archive == before.archive);
}

TEST_CASE("archive view and reduction") {
    auto& f = fixture();
    Service service(f.store, {1, false});
    const auto full = f.store.load_archive(f.run_id);

    const auto same = service.archive(f.run_id, full.capacity(), true);
    const auto plain = service.archive(f.run_id, std::nullopt, true);
    CHECK(same.at("cells") == plain.at("cells"));
    CHECK(same.at("occupancy") == full.occupancy());
    CHECK(same.at("resolution") == 32);
    for (const auto& c : same.at("cells")) {
        const int i = c.at("niche_id");
        const auto& e = *full.niche(i);
        CHECK(c.at("fitness").get<double>() == e.fitness);
        CHECK(c.at("genome").get<std::vector<double>>() == e.params);
        const auto bm = encoding::from_rle(c.at("thumbnail"));
        CHECK(bm == encoding::express(encoding::ShapeGenome(e.params), 32));
    }
    CHECK_FALSE(service.archive(f.run_id, std::nullopt, false).at("cells")[0].contains("thumbnail"));

    const int k = 10;
    const auto reduced = service.archive(f.run_id, k, false);
    CHECK(reduced.at("capacity") == k);
    CHECK(reduced.at("cells").size() <= static_cast<std::size_t>(k));
    // brute-force oracle: best parent elite per cell of the new tessellation
    const auto centroids = qd::cvt_centroids(k, full.seed());
    std::vector<std::optional<double>> best(k);
    for (int i : full.occupied()) {
        const auto& e = *full.niche(i);
        const auto u = full.normalization().normalize(e.area, e.enstrophy);
        int nearest = 0;
        double d_best = 1e300;
        for (int c = 0; c < k; ++c) {
            const double d = std::pow(u[0] - centroids(c, 0), 2) + std::pow(u[1] - centroids(c, 1), 2);
            if (d < d_best) {
                d_best = d;
                nearest = c;
            }
        }
        if (!best[nearest] || e.fitness < *best[nearest]) best[nearest] = e.fitness;
    }
    int occupied = 0;
    for (const auto& b : best) occupied += b ? 1 : 0;
    CHECK(reduced.at("cells").size() == static_cast<std::size_t>(occupied));
    for (const auto& c : reduced.at("cells")) {
        const int i = c.at("niche_id");
        REQUIRE(best[i].has_value());
        CHECK(c.at("fitness").get<double>() == *best[i]);
    }

    const auto e = error_of([&] { service.archive(f.run_id, 0, false); });
    CHECK(e.code() == ErrorCode::ValidationError);
    CHECK(has_field(e, "max_cells"));
    CHECK(error_of([&] { service.archive("missing", std::nullopt, false); }).code() == ErrorCode::NotFound);
}

TEST_CASE("archive payload with thumbnails stays below 2 MB at capacity 1000") {
    qd::VoronoiArchive a(1000, 3, {{0.0, 0.5}, {0.0, 1.0}});
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 1000; ++i) {
        qd::Elite e;
        for (int j = 0; j < 16; ++j) e.params.push_back(u(rng));
        e.area = a.normalization().area.denormalize(a.centroids()(i, 0));
        e.enstrophy = a.normalization().enstrophy.denormalize(a.centroids()(i, 1));
        e.fitness = u(rng);
        a.assign(e);
    }
    CHECK(a.occupancy() > 900);
    const auto payload = archive_json(a, true, 64).dump();
    MESSAGE("payload bytes: " << payload.size());
    CHECK(payload.size() < 2u * 1024 * 1024);
}

TEST_CASE("zoom spawns constrained child runs") {
    auto& f = fixture();
    Service service(f.store, {1, false});
    const auto parent = f.store.load_archive(f.run_id);

    const json full = {{"region", {{"a_lo", 0.0}, {"a_hi", 1.0}, {"e_lo", 0.0}, {"e_hi", 1.0}}}, {"total_budget", 60}};
    const auto child = service.zoom(f.run_id, full);
    const std::string cid = child.at("run_id");
    CHECK(child.at("initial_elites") == parent.occupancy());
    const auto init = json::parse(f.store.read_artifact(cid, "init.json"));
    CHECK(init.at("genomes").size() == static_cast<std::size_t>(parent.occupancy()));
    for (int i : parent.occupied()) {
        const auto& p = parent.niche(i)->params;
        CHECK(std::any_of(init.at("genomes").begin(), init.at("genomes").end(),
                          [&](const json& g) { return g.get<std::vector<double>>() == p; }));
    }
    const auto rec = f.store.load_record(cid);
    REQUIRE(rec.lineage.has_value());
    CHECK(rec.lineage->parent_id == f.run_id);
    CHECK(rec.normalization == parent.normalization());
    CHECK(rec.config.sphen.total_budget == 60);
    CHECK(rec.status == store::RunStatus::Finished);
    CHECK(f.store.load_result(cid).samples.size() >= static_cast<std::size_t>(parent.occupancy()));

    // a corner without parent elites
    double lo = -1.0;
    for (double x = 0.0; x < 0.99 && lo < 0.0; x += 0.01) {
        bool empty = true;
        for (int i : parent.occupied()) {
            const auto& e = *parent.niche(i);
            const auto u = parent.normalization().normalize(e.area, e.enstrophy);
            if (u[0] >= x && u[0] <= x + 0.01 && u[1] >= 0.99) empty = false;
        }
        if (empty) lo = x;
    }
    REQUIRE(lo >= 0.0);
    const json corner = {{"a_lo", lo}, {"a_hi", lo + 0.01}, {"e_lo", 0.99}, {"e_hi", 1.0}};
    const auto sobol_only = service.zoom(f.run_id, {{"region", corner}});
    CHECK(sobol_only.at("initial_elites") == 0);
    const auto child_rec = f.store.load_record(sobol_only.at("run_id"));
    CHECK(child_rec.normalization == parent.normalization().restrict(lo, lo + 0.01, 0.99, 1.0));
    CHECK(json::parse(f.store.read_artifact(sobol_only.at("run_id"), "init.json")).at("genomes").empty());

    CHECK(error_of([&] { service.zoom(f.run_id, {{"region", corner}, {"fill", false}}); }).code() ==
          ErrorCode::EmptyRegion);
    const json flat = {{"a_lo", 0.3}, {"a_hi", 0.3}, {"e_lo", 0.0}, {"e_hi", 1.0}};
    CHECK(error_of([&] { service.zoom(f.run_id, {{"region", flat}}); }).code() == ErrorCode::ValidationError);
    CHECK(error_of([&] { service.zoom(f.run_id, json::object()); }).code() == ErrorCode::ValidationError);
    CHECK(error_of([&] { service.zoom("missing", full); }).code() == ErrorCode::NotFound);
    CHECK(error_of([&] { service.zoom(f.run_id, {{"region", full.at("region")}, {"total_budget", 5}}); }).code() ==
          ErrorCode::ValidationError);
}

TEST_CASE("latent walks through the stored model") {
    auto& f = fixture();
    Service service(f.store, {1, false});
    REQUIRE(f.store.has_vae(f.run_id));
    REQUIRE(f.store.has_artifact(f.run_id, "vae/training_archive.csv"));
    const auto model = f.store.load_vae(f.run_id);

    const auto grid = service.walk(f.run_id, json::object());
    REQUIRE(grid.at("rows").size() == 5);
    for (const auto& row : grid.at("rows")) CHECK(row.at("cells").size() == 11);

    const std::vector<double> center = {0.1, -0.2, 0.3, 0.0, 0.5};
    const auto one = service.walk(f.run_id, {{"center", center}, {"dim", 2}, {"steps", 1}});
    REQUIRE(one.at("rows").size() == 1);
    REQUIRE(one.at("rows")[0].at("cells").size() == 1);
    const auto& cell = one.at("rows")[0].at("cells")[0];
    CHECK(cell.at("latent").get<std::vector<double>>() == center);
    if (!cell.at("degenerate").get<bool>()) {
        CHECK(encoding::from_rle(cell.at("thumbnail")) == genmodel::decode(model, center));
    }

    const auto e = error_of([&] { service.walk(f.run_id, {{"dim", 7}}); });
    CHECK(e.code() == ErrorCode::ValidationError);
    CHECK(error_of([&] { service.walk(f.run_id, {{"steps", 4}}); }).code() == ErrorCode::ValidationError);
    CHECK(error_of([&] { service.walk(f.run_id, {{"center", {1, 2}}}); }).code() == ErrorCode::ValidationError);

    TempDir dir;
    store::Store other(dir.path);
    Service bare(other, {1, false});
    const auto r = fresh_record(other, small_config());
    CHECK(error_of([&] { bare.walk(r.run_id, json::object()); }).code() == ErrorCode::NotFound);
}

TEST_CASE("validation reproduces stored measurements and reports deltas") {
    TempDir dir;
    store::Store s(dir.path);
    Service service(s, {2, false});
    json cfg = small_config();
    cfg["evaluator"] = "lbm";
    cfg["sphen"]["init_samples"] = 3;
    cfg["sphen"]["total_budget"] = 3;
    cfg["lbm"] = {{"warmup_steps", 200}, {"measure_steps", 200}, {"snapshot_interval", 50}};
    const std::string id = service.create_run({{"preset", "desk"}, {"config", cfg}}).at("run_id");
    REQUIRE(s.load_record(id).status == store::RunStatus::Finished);
    const auto result = s.load_result(id);
    const auto sample = std::find_if(result.samples.begin(), result.samples.end(), [](const qd::Sample& x) { return x.ok; });
    REQUIRE(sample != result.samples.end());

    const auto& p = sample->genome.params();
    const auto v = service.validate_shape(id, {{"genome", std::vector<double>(p.begin(), p.end())}});
    REQUIRE(v.at("ok") == true);
    CHECK(v.at("measured").at("u_max").get<double>() == sample->u_max);
    CHECK(v.at("measured").at("enstrophy").get<double>() == sample->enstrophy);
    CHECK(v.at("measured").at("area").get<double>() == sample->area);
    for (const char* k : {"u_max", "area", "enstrophy"}) {
        CHECK(v.at("delta").at(k).get<double>() ==
              v.at("measured").at(k).get<double>() - v.at("predicted").at(k).get<double>());
    }
    const std::string path = v.at("snapshots").at("path");
    const auto bytes = s.read_artifact(id, path);
    const auto snaps = lbm::decode_snapshots(std::vector<std::uint8_t>(bytes.begin(), bytes.end()));
    CHECK(snaps.size() == v.at("snapshots").at("count").get<std::size_t>());
    CHECK(snaps.size() == 4);

    CHECK(error_of([&] { service.validate_shape(id, {{"genome", {0.5, 0.5}}}); }).code() == ErrorCode::ValidationError);
    CHECK(error_of([&] { service.validate_shape(id, json::object()); }).code() == ErrorCode::ValidationError);
    CHECK(error_of([&] { service.validate_shape(id, {{"latent", {0, 0, 0, 0, 0}}}); }).code() == ErrorCode::NotFound);

    // same key, same body: the stored response comes back without a new simulation
    const json body = {{"genome", std::vector<double>(p.begin(), p.end())}};
    const auto first = service.validate_shape(id, body, "val-1");
    const auto files = s.manifest(id).size();
    CHECK(service.validate_shape(id, body, "val-1") == first);
    CHECK(s.manifest(id).size() == files);
}

TEST_CASE("validation of a diverging configuration returns a failure payload") {
    TempDir dir;
    store::Store s(dir.path);
    Service service(s, {1, false});
    json cfg = small_config();
    cfg["evaluator"] = "lbm";
    cfg["lbm"] = {{"reynolds", 3900.0}, {"mach", 0.25}, {"warmup_steps", 3000}, {"measure_steps", 100}};
    store::RunRecord r = fresh_record(s, json{{"evaluator", "lbm"}, {"sphen", cfg["sphen"]}, {"lbm", cfg["lbm"]},
                                              {"vae", cfg["vae"]}});
    // validation does not need the run to have executed
    const auto v = service.validate_shape(r.run_id, {{"genome", std::vector<double>(16, 0.9)}});
    CHECK(v.at("ok") == false);
    CHECK(v.at("measured").is_null());
    CHECK(v.at("delta").is_null());
    CHECK(v.at("failure").at("message").get<std::string>().size() > 0);
    CHECK(v.at("failure").at("step").get<long>() >= 0);
}

TEST_CASE("latent validation decodes first") {
    auto& f = fixture();
    Service service(f.store, {1, false});
    const auto model = f.store.load_vae(f.run_id);
    const std::vector<double> z(5, 0.0);
    encoding::Bitmap expected;
    try {
        expected = genmodel::decode(model, z);
    } catch (const Error& e) {
        CHECK(error_of([&] { service.validate_shape(f.run_id, {{"latent", z}}); }).code() == ErrorCode::DegenerateShape);
        return;
    }
    const auto v = service.validate_shape(f.run_id, {{"latent", z}});
    CHECK(encoding::from_rle(v.at("shape")) == expected);
    CHECK(v.at("input").at("latent").get<std::vector<double>>() == z);
    REQUIRE(v.at("predicted").is_object());
    const auto p = f.store.load_predictors(f.run_id).predict(Eigen::RowVectorXd::Zero(5));
    CHECK(v.at("predicted").at("u_max").get<double>() == p.u_max(0));
    if (v.at("ok").get<bool>()) {
        CHECK(v.at("measured").at("area").get<double>() == encoding::area(expected));
    }
}

TEST_CASE("HTTP routes") {
    auto& f = fixture();
    Service service(f.store, {1, false});
    httplib::Server http;
    install_routes(http, service);
    const int port = http.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread t([&] { http.listen_after_bind(); });
    http.wait_until_ready();
    httplib::Client client("127.0.0.1", port);

    auto res = client.Get("/api/v1/health");
    REQUIRE(res);
    CHECK(res->status == 200);

    res = client.Get("/api/v1/runs/" + f.run_id);
    REQUIRE(res);
    CHECK(res->status == 200);
    CHECK(json::parse(res->body).at("status") == "finished");

    res = client.Get("/api/v1/runs/unknown-run");
    REQUIRE(res);
    CHECK(res->status == 404);
    auto err = json::parse(res->body);
    CHECK(err.at("code") == "NotFound");
    CHECK(err.contains("message"));
    CHECK(err.at("fields").is_array());

    json bad = small_config();
    bad["sphen"]["mutation_sigma"] = -1;
    res = client.Post("/api/v1/runs", json{{"config", bad}}.dump(), "application/json");
    REQUIRE(res);
    CHECK(res->status == 400);
    err = json::parse(res->body);
    CHECK(err.at("code") == "ValidationError");
    CHECK(err.at("fields")[0].at("field") == "config.sphen.mutation_sigma");

    res = client.Post("/api/v1/runs", "{not json", "application/json");
    REQUIRE(res);
    CHECK(res->status == 400);

    res = client.Get("/api/v1/runs/" + f.run_id + "/archive?max_cells=10&thumbnails=0");
    REQUIRE(res);
    CHECK(res->status == 200);
    CHECK(json::parse(res->body).at("capacity") == 10);
    res = client.Get("/api/v1/runs/" + f.run_id + "/archive?max_cells=0");
    REQUIRE(res);
    CHECK(res->status == 400);
    res = client.Get("/api/v1/runs/" + f.run_id + "/archive?max_cells=ten");
    REQUIRE(res);
    CHECK(res->status == 400);

    const httplib::Headers key = {{"Idempotency-Key", "walk-http-1"}};
    const std::string walk_body = json{{"dim", 0}, {"steps", 3}}.dump();
    auto w1 = client.Post("/api/v1/runs/" + f.run_id + "/walk", key, walk_body, "application/json");
    auto w2 = client.Post("/api/v1/runs/" + f.run_id + "/walk", key, walk_body, "application/json");
    REQUIRE(w1);
    REQUIRE(w2);
    CHECK(w1->status == 200);
    CHECK(w1->body == w2->body);
    res = client.Post("/api/v1/runs/" + f.run_id + "/walk", json{{"dim", 7}}.dump(), "application/json");
    REQUIRE(res);
    CHECK(res->status == 400);

    const json region = {{"a_lo", 0.0}, {"a_hi", 0.5}, {"e_lo", 0.0}, {"e_hi", 0.0}};
    res = client.Post("/api/v1/runs/" + f.run_id + "/zoom", json{{"region", region}}.dump(), "application/json");
    REQUIRE(res);
    CHECK(res->status == 400);

    res = client.Get("/api/v1/runs/" + f.run_id + "/artifacts/samples.csv");
    REQUIRE(res);
    CHECK(res->status == 200);
    CHECK(res->body == f.store.read_artifact(f.run_id, "samples.csv"));
    res = client.Get("/api/v1/runs/" + f.run_id + "/artifacts/none.csv");
    REQUIRE(res);
    CHECK(res->status == 404);

    res = client.Get("/api/v1/runs");
    REQUIRE(res);
    CHECK(res->status == 200);
    CHECK(json::parse(res->body).at("runs").size() >= 1);

    res = client.Get("/api/v1/nothing");
    REQUIRE(res);
    CHECK(res->status == 404);
    CHECK(json::parse(res->body).at("code") == "NotFound");

    http.stop();
    t.join();
}
