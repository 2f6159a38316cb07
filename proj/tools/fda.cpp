// fda: command-line front end for runs, exports, VAE tools and the HTTP server.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "fda/server.hpp"

#include <httplib.h>

using namespace fda;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::StorageFull, "cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw Error(ErrorCode::StorageFull, "cannot write " + path.string());
}

void emit(const std::string& text, const std::string& out) {
    if (out.empty() || out == "-") std::cout << text;
    else write_text(out, text);
}

httplib::Server* serving = nullptr;

void stop_serving(int) {
    if (serving) serving->stop();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Flow-design assistant: surrogate-assisted shape illumination with a lattice Boltzmann solver"};
    app.require_subcommand(1);
    std::string data_dir = "fda-data";
    app.add_option("--data-dir", data_dir, "Run store directory")->envname("FDA_DATA_DIR")->capture_default_str();

    // init-config
    auto* init = app.add_subcommand("init-config", "Write a default configuration as JSON");
    bool init_desk = false;
    std::string init_out;
    init->add_flag("--desk", init_desk, "Desk-scale presets instead of the full-size defaults");
    init->add_option("-o,--out", init_out, "Output file (stdout when omitted)");

    // run
    auto* run = app.add_subcommand("run", "Create a run and execute it in the foreground");
    std::string run_config;
    bool run_desk = false;
    bool run_synthetic = false;
    bool run_vae = false;
    std::string run_id;
    run->add_option("-c,--config", run_config, "Configuration JSON; absent fields keep the preset values");
    run->add_flag("--desk", run_desk, "Start from the desk presets");
    run->add_flag("--synthetic", run_synthetic, "Use the analytic stand-in evaluator");
    run->add_flag("--vae", run_vae, "Train the VAE and latent predictors afterwards");
    run->add_option("--id", run_id, "Run id (generated when omitted)");

    // status
    auto* status = app.add_subcommand("status", "Show one run, or list all runs");
    std::string status_id;
    status->add_option("run_id", status_id, "Run id");

    // export
    auto* exp = app.add_subcommand("export", "Copy a run's tables or JSON documents out of the store");
    std::string export_id;
    std::string export_format = "csv";
    std::string export_out;
    exp->add_option("run_id", export_id, "Run id")->required();
    exp->add_option("--format", export_format, "csv or json")->check(CLI::IsMember({"csv", "json"}))->capture_default_str();
    exp->add_option("--out", export_out, "Output directory")->required();

    // vae
    auto* vae = app.add_subcommand("vae", "Generative model tools");
    vae->require_subcommand(1);
    auto* vae_train = vae->add_subcommand("train", "Train the VAE and latent predictors of a finished run");
    std::string vae_id;
    vae_train->add_option("run_id", vae_id, "Run id")->required();

    // walk
    auto* walk = app.add_subcommand("walk", "Decode a latent walk along one dimension as CSV");
    std::string walk_id;
    int walk_dim = 0;
    int walk_steps = 11;
    double walk_span = 2.0;
    std::vector<double> walk_center;
    std::string walk_out;
    walk->add_option("run_id", walk_id, "Run id")->required();
    walk->add_option("--dim", walk_dim, "Latent dimension")->capture_default_str();
    walk->add_option("--steps", walk_steps, "Odd number of steps")->capture_default_str();
    walk->add_option("--span", walk_span, "Offset at the ends of the walk")->capture_default_str();
    walk->add_option("--center", walk_center, "Center latent (zeros when omitted)")->delimiter(',');
    walk->add_option("-o,--out", walk_out, "Output file (stdout when omitted)");

    // generate
    auto* gen = app.add_subcommand("generate", "Sample the VAE prior into a large predicted archive");
    std::string gen_id;
    int gen_n = 25000;
    int gen_capacity = 4000;
    std::uint64_t gen_seed = 0;
    int gen_bins = 20;
    std::string gen_out;
    gen->add_option("run_id", gen_id, "Run id")->required();
    gen->add_option("-n,--samples", gen_n, "Number of prior samples")->capture_default_str();
    gen->add_option("--capacity", gen_capacity, "Archive capacity")->capture_default_str();
    gen->add_option("--seed", gen_seed, "Sampling seed")->capture_default_str();
    gen->add_option("--bins", gen_bins, "Isoline grid size per axis")->capture_default_str();
    gen->add_option("--out", gen_out, "Also copy the tables to this directory");

    // serve
    auto* serve = app.add_subcommand("serve", "Serve the /api/v1 HTTP API and static UI assets");
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string static_dir;
    int workers = 2;
    serve->add_option("--host", host, "Bind address")->capture_default_str();
    serve->add_option("--port", port, "Port")->capture_default_str();
    serve->add_option("--static", static_dir, "Directory served under /");
    serve->add_option("--validation-workers", workers, "Concurrent validation simulations")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*init) {
            const auto cfg = init_desk ? store::RunConfig::desk() : store::RunConfig{};
            emit(store::to_json(cfg).dump(2) + "\n", init_out);
            return 0;
        }

        store::Store st(data_dir);

        if (*run) {
            json patch = json::object();
            if (!run_config.empty()) {
                const auto parsed = json::parse(store::read_file(run_config), nullptr, false);
                if (parsed.is_discarded()) {
                    throw Error(ErrorCode::ValidationError, run_config + " is not valid JSON", {{"", "malformed JSON"}});
                }
                patch = parsed;
            }
            if (run_synthetic) patch["evaluator"] = "synthetic";
            if (run_vae) patch["train_vae"] = true;
            json merged = store::to_json(run_desk ? store::RunConfig::desk() : store::RunConfig{});
            merged.merge_patch(patch);
            store::RunRecord r;
            r.config = store::config_from_json(merged);
            r.run_id = run_id.empty() ? st.generate_id() : run_id;
            r.created_at = r.updated_at = store::timestamp_now();
            r.progress.budget = r.config.sphen.total_budget;
            st.create_run(r);
            std::cerr << "run " << r.run_id << ": " << r.config.sphen.total_budget << " evaluations\n";
            server::execute_run(st, r.run_id);
            const auto done = st.load_record(r.run_id);
            std::cout << r.run_id << " " << store::to_string(done.status) << "\n";
            if (done.status != store::RunStatus::Finished) {
                std::cerr << done.failure << "\n";
                return 1;
            }
            return 0;
        }

        if (*status) {
            if (status_id.empty()) {
                for (const auto& r : st.list_runs()) {
                    std::printf("%s  %-8s  %d/%d  %s\n", r.run_id.c_str(), std::string(store::to_string(r.status)).c_str(),
                                r.progress.evaluations, r.progress.budget, r.created_at.c_str());
                }
            } else {
                std::cout << server::status_json(st, st.load_record(status_id)).dump(2) << "\n";
            }
            return 0;
        }

        if (*exp) {
            const auto record = st.load_record(export_id);
            if (!st.has_result(export_id)) throw Error(ErrorCode::NotFound, "run " + export_id + " has no result");
            const fs::path out = export_out;
            if (export_format == "csv") {
                for (const char* name : {"samples.csv", "archive.csv", "stats.csv", "trace.csv"}) {
                    write_text(out / name, st.read_artifact(export_id, name));
                }
            } else {
                write_text(out / "run.json", server::status_json(st, record).dump(2) + "\n");
                write_text(out / "archive.json",
                           server::archive_json(st.load_archive(export_id), true, record.config.sphen.resolution).dump(2) + "\n");
            }
            std::cout << out.string() << "\n";
            return 0;
        }

        if (*vae_train) {
            server::train_run_vae(st, vae_id);
            const auto model = st.load_vae(vae_id);
            std::printf("%s trained: %zu epochs, final loss %.6g, %d restarts\n", vae_id.c_str(), model.history.size(),
                        model.history.empty() ? 0.0 : model.history.back().total, model.restarts);
            return 0;
        }

        if (*walk) {
            const auto model = st.load_vae(walk_id);
            const auto predictors = st.load_predictors(walk_id);
            if (walk_center.empty()) walk_center.assign(static_cast<std::size_t>(model.latent_dim()), 0.0);
            const auto rows = genmodel::latent_walk(model, predictors, walk_center, walk_dim, walk_steps, walk_span);
            emit(genmodel::walk_csv(rows), walk_out);
            return 0;
        }

        if (*gen) {
            const auto model = st.load_vae(gen_id);
            const auto predictors = st.load_predictors(gen_id);
            const auto set = genmodel::generate_set(model, predictors, gen_n, gen_capacity, gen_seed, gen_bins);
            const std::map<std::string, std::string> tables = {{"generated/samples.csv", genmodel::generated_csv(set)},
                                                               {"generated/isolines.csv", genmodel::isoline_csv(set)},
                                                               {"generated/archive.csv", qd::archive_csv(set.archive, "z")}};
            for (const auto& [path, text] : tables) {
                st.write_artifact(gen_id, path, text);
                if (!gen_out.empty()) write_text(fs::path(gen_out) / fs::path(path).filename(), text);
            }
            std::printf("%d samples, %d degenerate, occupancy %d/%d, %zu isoline bins\n", gen_n, set.degenerate_count,
                        set.archive.occupancy(), set.archive.capacity(), set.isolines.size());
            return 0;
        }

        if (*serve) {
            server::Service service(st, {workers, true});
            httplib::Server http;
            server::install_routes(http, service, static_dir);
            serving = &http;
            std::signal(SIGINT, stop_serving);
            std::signal(SIGTERM, stop_serving);
            std::cerr << "serving " << st.root().string() << " on http://" << host << ":" << port << "/api/v1\n";
            if (!http.listen(host, port)) {
                std::cerr << "cannot listen on " << host << ":" << port << "\n";
                return 1;
            }
            serving = nullptr;
            return 0;
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        for (const auto& f : e.fields()) std::cerr << "  " << f.field << ": " << f.message << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
