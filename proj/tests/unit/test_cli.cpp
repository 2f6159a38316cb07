#include <cstdlib>
#include <filesystem>
#include <random>
#include <sys/wait.h>

#include <doctest.h>
#include <nlohmann/json.hpp>

#include "fda/store.hpp"

using namespace fda;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        std::random_device rd;
        path = fs::temp_directory_path() / ("fda-cli-test-" + std::to_string(rd()) + std::to_string(rd()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

int cli(const TempDir& dir, const std::string& args) {
    const std::string cmd = "FDA_DATA_DIR='" + (dir.path / "data").string() + "' '" FDA_CLI_PATH "' " + args + " > '" +
                            (dir.path / "stdout.txt").string() + "' 2> '" + (dir.path / "stderr.txt").string() + "'";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) { return store::read_file(p); }

}  // namespace

TEST_CASE("init-config writes the full-size defaults") {
    TempDir dir;
    const auto out = dir.path / "config.json";
    REQUIRE(cli(dir, "init-config -o '" + out.string() + "'") == 0);
    const auto j = json::parse(slurp(out));
    CHECK(j == store::to_json(store::RunConfig{}));
    CHECK(j.at("sphen").at("total_budget") == 1000);
    CHECK(j.at("sphen").at("archive_capacity") == 1000);
    CHECK(j.at("sphen").at("mutation_sigma") == 0.1);
    CHECK(j.at("vae").at("latent_dim") == 5);
    CHECK(store::config_from_json(j).sphen.init_samples == 100);

    REQUIRE(cli(dir, "init-config --desk") == 0);
    CHECK(json::parse(slurp(dir.path / "stdout.txt")) == store::to_json(store::RunConfig::desk()));
}

TEST_CASE("run, status and byte-stable export") {
    TempDir dir;
    const json patch = {{"sphen", {{"init_samples", 12}, {"batch_size", 4}, {"total_budget", 20}, {"archive_capacity", 30},
                                   {"archive_updates_per_round", 20}}}};
    store::write_file_atomic(dir.path / "cfg.json", patch.dump());
    REQUIRE(cli(dir, "run --desk --synthetic --id cli1 --config '" + (dir.path / "cfg.json").string() + "'") == 0);
    CHECK(slurp(dir.path / "stdout.txt") == "cli1 finished\n");

    store::Store s(dir.path / "data");
    const auto rec = s.load_record("cli1");
    CHECK(rec.config.evaluator == store::EvaluatorKind::Synthetic);
    CHECK(store::to_json(rec.config).at("lbm") == store::to_json(store::RunConfig::desk()).at("lbm"));
    CHECK(rec.config.sphen.total_budget == 20);
    CHECK(rec.progress.evaluations == 20);

    REQUIRE(cli(dir, "status cli1") == 0);
    CHECK(json::parse(slurp(dir.path / "stdout.txt")).at("status") == "finished");
    REQUIRE(cli(dir, "status") == 0);
    CHECK(slurp(dir.path / "stdout.txt").rfind("cli1  finished  20/20", 0) == 0);
    CHECK(cli(dir, "status nope") == 2);
    CHECK(slurp(dir.path / "stderr.txt").find("NotFound") != std::string::npos);

    REQUIRE(cli(dir, "export cli1 --format csv --out '" + (dir.path / "a").string() + "'") == 0);
    REQUIRE(cli(dir, "export cli1 --format csv --out '" + (dir.path / "b").string() + "'") == 0);
    for (const char* name : {"samples.csv", "archive.csv", "stats.csv", "trace.csv"}) {
        const auto exported = slurp(dir.path / "a" / name);
        CHECK(exported == s.read_artifact("cli1", name));
        CHECK(exported == slurp(dir.path / "b" / name));
    }
    CHECK(slurp(dir.path / "a" / "samples.csv").rfind("sample_id,round,ok,area,u_max,enstrophy,failure,g0,", 0) == 0);
    CHECK(slurp(dir.path / "a" / "stats.csv").rfind("round,evaluations,failures,occupancy,best_fitness,mean_fitness,children\n", 0) == 0);
    // the exported samples parse back to the stored ones
    CHECK(qd::samples_from_csv(slurp(dir.path / "a" / "samples.csv")) == s.load_result("cli1").samples);

    REQUIRE(cli(dir, "export cli1 --format json --out '" + (dir.path / "j").string() + "'") == 0);
    const auto archive = json::parse(slurp(dir.path / "j" / "archive.json"));
    CHECK(archive.at("occupancy") == s.load_archive("cli1").occupancy());
    CHECK(json::parse(slurp(dir.path / "j" / "run.json")).at("run_id") == "cli1");
}

TEST_CASE("invalid configurations are rejected with field names") {
    TempDir dir;
    store::write_file_atomic(dir.path / "bad.json", R"({"lbm": {"mach": 0.5}, "sphen": {"mutation_sigma": -1}})");
    CHECK(cli(dir, "run --config '" + (dir.path / "bad.json").string() + "'") == 2);
    const auto err = slurp(dir.path / "stderr.txt");
    CHECK(err.find("lbm.mach") != std::string::npos);
    CHECK(err.find("sphen.mutation_sigma") != std::string::npos);
    CHECK(cli(dir, "export") != 0);
    CHECK(cli(dir, "walk missing") == 2);
}
