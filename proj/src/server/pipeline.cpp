#include "fda/server.hpp"

namespace fda::server {

using store::RunStatus;

qd::Evaluator make_evaluator(const store::RunConfig& config) {
    const int res = config.sphen.resolution;
    if (config.evaluator == store::EvaluatorKind::Synthetic) return qd::synthetic_evaluator(res);
    return qd::lbm_evaluator(config.lbm, res);
}

namespace {

std::optional<InitialSet> load_initial_set(const store::Store& s, const std::string& id) {
    if (!s.has_artifact(id, "init.json")) return std::nullopt;
    const auto j = json::parse(s.read_artifact(id, "init.json"), nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::CorruptArtifact, "init.json is not a JSON object");
    InitialSet init;
    try {
        for (const auto& g : j.at("genomes")) init.genomes.push_back(encoding::genome_from_json(g));
        init.sobol_fill = j.at("sobol_fill").get<bool>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::CorruptArtifact, std::string("init.json: ") + e.what());
    }
    return init;
}

void finish(store::Store& s, store::RunRecord& r, RunStatus status, const std::string& failure = {}) {
    r.status = status;
    r.failure = failure;
    r.updated_at = store::timestamp_now();
    s.update_record(r);
}

}  // namespace

void execute_run(store::Store& s, const std::string& id, const std::atomic<bool>* cancel) {
    auto record = s.load_record(id);
    if (record.status != RunStatus::Created) {
        throw Error(ErrorCode::ValidationError, "run " + id + " is " + std::string(store::to_string(record.status)));
    }
    record.status = RunStatus::Running;
    record.progress.budget = record.config.sphen.total_budget;
    record.updated_at = store::timestamp_now();
    s.update_record(record);

    try {
        qd::SphenOptions opt;
        if (auto init = load_initial_set(s, id)) {
            opt.initial_genomes = std::move(init->genomes);
            opt.sobol_fill = init->sobol_fill;
        }
        opt.normalization = record.normalization;
        opt.record_trace = true;
        opt.on_round = [&](const qd::RoundStats& st) {
            record.progress.evaluations = st.evaluations;
            record.progress.round = st.round;
            record.progress.occupancy = st.occupancy;
            if (st.occupancy > 0) record.progress.best_fitness = st.best_fitness;
            record.updated_at = store::timestamp_now();
            s.update_record(record);
        };
        if (cancel) opt.cancelled = [cancel] { return cancel->load(); };

        const auto result = qd::sphen_run(make_evaluator(record.config), record.config.sphen, opt);
        s.save_result(id, result);
        if (record.config.train_vae) train_run_vae(s, id);
        finish(s, record, RunStatus::Finished);
    } catch (const qd::SphenAborted& e) {
        if (e.partial().archive.capacity() > 0) s.save_result(id, e.partial());
        finish(s, record, RunStatus::Failed, e.what());
    } catch (const std::exception& e) {
        finish(s, record, RunStatus::Failed, e.what());
    }
}

qd::VoronoiArchive vae_training_archive(const qd::RunResult& result, int capacity, int updates, std::uint64_t seed) {
    if (!result.u_max_model || !result.enstrophy_model) {
        throw Error(ErrorCode::NotFound, "run has no final surrogate models");
    }
    qd::VoronoiArchive archive(capacity, seed, result.archive.normalization());
    for (const auto& smp : result.samples) {
        if (!smp.ok) continue;
        const auto& p = smp.genome.params();
        archive.assign({{p.begin(), p.end()}, smp.u_max, smp.area, smp.enstrophy, qd::Provenance::Simulated});
    }
    const auto& c = result.config;
    const auto predictor = qd::gp_predictor(*result.u_max_model, *result.enstrophy_model, c.resolution, c.ucb_kappa);
    std::mt19937_64 rng(seed);
    qd::illuminate(archive, predictor, {updates, c.children_per_update, c.mutation_sigma}, rng);
    return archive;
}

std::vector<encoding::Bitmap> archive_bitmaps(const qd::VoronoiArchive& archive, int resolution) {
    std::vector<encoding::Bitmap> out;
    for (int i : archive.occupied()) {
        out.push_back(encoding::express(encoding::ShapeGenome(archive.niche(i)->params), resolution));
    }
    return out;
}

std::vector<genmodel::LatentSample> latent_samples(const qd::RunResult& result, int resolution) {
    std::vector<genmodel::LatentSample> out;
    for (const auto& smp : result.samples) {
        if (!smp.ok) continue;
        out.push_back({encoding::express(smp.genome, resolution), smp.u_max, smp.area, smp.enstrophy});
    }
    return out;
}

void train_run_vae(store::Store& s, const std::string& id) {
    const auto record = s.load_record(id);
    if (!s.has_result(id)) throw Error(ErrorCode::NotFound, "run " + id + " has no result");
    const auto result = s.load_result(id);
    const auto& vc = record.config.vae;
    const int res = record.config.sphen.resolution;
    const auto archive = vae_training_archive(result, vc.archive_capacity, vc.archive_updates, vc.rng_seed + 1);
    const auto model = genmodel::train_vae(archive_bitmaps(archive, res), vc);
    const auto predictors = genmodel::fit_latent_predictors(model, latent_samples(result, res));
    s.write_artifact(id, "vae/training_archive.csv", qd::archive_csv(archive));
    s.save_vae(id, model);
    s.save_predictors(id, predictors);
}

json archive_json(const qd::VoronoiArchive& archive, bool thumbnails, int resolution) {
    const auto& n = archive.normalization();
    json cells = json::array();
    for (int i : archive.occupied()) {
        const auto& e = *archive.niche(i);
        const auto u = n.normalize(e.area, e.enstrophy);
        json cell = {{"niche_id", i},
                     {"centroid", {archive.centroids()(i, 0), archive.centroids()(i, 1)}},
                     {"area", e.area},
                     {"enstrophy", e.enstrophy},
                     {"features", {u[0], u[1]}},
                     {"fitness", e.fitness},
                     {"provenance", qd::to_string(e.provenance)},
                     {"genome", e.params}};
        if (thumbnails && e.params.size() == encoding::kGenomeSize) {
            cell["thumbnail"] = encoding::to_rle(encoding::express(encoding::ShapeGenome(e.params), resolution));
        }
        cells.push_back(std::move(cell));
    }
    return {{"capacity", archive.capacity()},
            {"occupancy", archive.occupancy()},
            {"resolution", resolution},
            {"normalization",
             {{"area", {n.area.lo, n.area.hi}}, {"enstrophy", {n.enstrophy.lo, n.enstrophy.hi}}}},
            {"cells", std::move(cells)}};
}

json status_json(const store::Store& s, const store::RunRecord& record) {
    json j = store::to_json(record);
    j["has_result"] = s.has_result(record.run_id);
    j["has_vae"] = s.has_vae(record.run_id);
    j["has_predictors"] = s.has_predictors(record.run_id);
    return j;
}

json error_json(const Error& e) {
    json fields = json::array();
    for (const auto& f : e.fields()) fields.push_back({{"field", f.field}, {"message", f.message}});
    return {{"code", to_string(e.code())}, {"message", e.detail()}, {"fields", std::move(fields)}};
}

int http_status(ErrorCode code) {
    switch (code) {
    case ErrorCode::ValidationError:
    case ErrorCode::EmptyRegion:
    case ErrorCode::DimensionMismatch:
    case ErrorCode::UnstableConfig:
    case ErrorCode::UnsupportedDimension: return 400;
    case ErrorCode::NotFound: return 404;
    case ErrorCode::ConflictingRunId: return 409;
    case ErrorCode::DegenerateShape:
    case ErrorCode::PlacementError: return 422;
    case ErrorCode::StorageFull: return 507;
    default: return 500;
    }
}

}  // namespace fda::server
