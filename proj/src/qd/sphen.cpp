#include <cmath>
#include <future>
#include <limits>
#include <numbers>

#include "csv.hpp"
#include "fda/qd.hpp"

namespace fda::qd {

SphenConfig SphenConfig::desk() {
    SphenConfig c;
    c.init_samples = 50;
    c.batch_size = 10;
    c.total_budget = 150;
    c.archive_updates_per_round = 200;
    c.children_per_update = 25;
    c.archive_capacity = 100;
    return c;
}

std::vector<FieldError> SphenConfig::validate() const {
    std::vector<FieldError> e;
    if (init_samples < 2) e.push_back({"sphen.init_samples", "must be at least 2"});
    if (batch_size < 1) e.push_back({"sphen.batch_size", "must be at least 1"});
    if (total_budget < init_samples) e.push_back({"sphen.total_budget", "must be at least init_samples"});
    else if (batch_size >= 1 && (total_budget - init_samples) % batch_size != 0) {
        e.push_back({"sphen.total_budget", "total_budget - init_samples must be divisible by batch_size"});
    }
    if (archive_updates_per_round < 1) e.push_back({"sphen.archive_updates_per_round", "must be at least 1"});
    if (children_per_update < 1) e.push_back({"sphen.children_per_update", "must be at least 1"});
    if (!(mutation_sigma > 0.0) || !std::isfinite(mutation_sigma)) e.push_back({"sphen.mutation_sigma", "must be positive"});
    if (archive_capacity < 1) e.push_back({"sphen.archive_capacity", "must be at least 1"});
    else if (batch_size > archive_capacity) e.push_back({"sphen.batch_size", "must not exceed archive_capacity"});
    if (!(ucb_kappa >= 0.0) || !std::isfinite(ucb_kappa)) e.push_back({"sphen.ucb_kappa", "must be non-negative"});
    if (resolution < 16) e.push_back({"sphen.resolution", "must be at least 16"});
    return e;
}

int RunResult::successes() const {
    int n = 0;
    for (const auto& s : samples) n += s.ok ? 1 : 0;
    return n;
}

Evaluator lbm_evaluator(const lbm::LbmConfig& config, int resolution) {
    return [config, resolution](const encoding::ShapeGenome& g) {
        Evaluation out;
        const auto r = lbm::simulate(encoding::express(g, resolution), config);
        if (!r.ok()) {
            out.failure = r.failure;
            return out;
        }
        out.ok = true;
        out.u_max = r.metrics->u_max;
        out.enstrophy = r.metrics->enstrophy;
        return out;
    };
}

Evaluator synthetic_evaluator(int resolution) {
    return [resolution](const encoding::ShapeGenome& g) {
        const double a = encoding::area(encoding::express(g, resolution));
        double rough = 0.0;
        for (std::size_t i = 0; i < encoding::kControlPoints; ++i) {
            const double dr = g.radius_param(i) - g.radius_param((i + 1) % encoding::kControlPoints);
            const double da = g.angle_param(i) - 0.5;
            rough += (dr * dr + 0.5 * da * da) / encoding::kControlPoints;
        }
        Evaluation out;
        out.ok = true;
        out.u_max = 1.0 + 1.2 * a + 1.5 * rough + 0.05 * std::sin(2.0 * std::numbers::pi * (g[0] + g[5]));
        out.enstrophy = 0.3 * a + 2.0 * rough + 0.1 * a * rough;
        return out;
    };
}

BatchPredictor gp_predictor(const surrogate::GPModel& u_max, const surrogate::GPModel& enstrophy, int resolution,
                            double ucb_kappa) {
    return [&u_max, &enstrophy, resolution, ucb_kappa](const std::vector<std::vector<double>>& params,
                                                       std::vector<Prediction>& out) {
        const long n = static_cast<long>(params.size());
        Eigen::MatrixXd x(n, static_cast<Eigen::Index>(encoding::kGenomeSize));
#pragma omp parallel for schedule(static)
        for (long i = 0; i < n; ++i) {
            const auto& p = params[static_cast<std::size_t>(i)];
            for (std::size_t j = 0; j < p.size(); ++j) x(i, static_cast<Eigen::Index>(j)) = p[j];
            try {
                out[static_cast<std::size_t>(i)].area =
                    encoding::area(encoding::express(encoding::ShapeGenome(p), resolution));
            } catch (const Error&) {
                out[static_cast<std::size_t>(i)].valid = false;
            }
        }
        Eigen::VectorXd fit;
        if (ucb_kappa > 0.0) {
            const auto pred = u_max.predict(x);
            fit = pred.mean.array() - ucb_kappa * pred.variance.array().sqrt();
        } else {
            fit = u_max.predict(x, false).mean;
        }
        const Eigen::VectorXd e = enstrophy.predict(x, false).mean;
        for (long i = 0; i < n; ++i) {
            out[static_cast<std::size_t>(i)].fitness = fit(i);
            out[static_cast<std::size_t>(i)].enstrophy = e(i);
        }
    };
}

namespace {

std::vector<Sample> evaluate_all(const Evaluator& evaluator, const std::vector<encoding::ShapeGenome>& genomes,
                                 int round, int resolution, bool parallel) {
    std::vector<Sample> out(genomes.size());
    const long n = static_cast<long>(genomes.size());
#pragma omp parallel for schedule(dynamic) if (parallel)
    for (long i = 0; i < n; ++i) {
        auto& s = out[static_cast<std::size_t>(i)];
        s.genome = genomes[static_cast<std::size_t>(i)];
        s.round = round;
        try {
            s.area = encoding::area(encoding::express(s.genome, resolution));
            const auto ev = evaluator(s.genome);
            s.ok = ev.ok && std::isfinite(ev.u_max) && std::isfinite(ev.enstrophy);
            s.u_max = ev.u_max;
            s.enstrophy = ev.enstrophy;
            s.failure = ev.ok && !s.ok ? "non-finite metrics" : ev.failure;
        } catch (const std::exception& e) {
            s.ok = false;
            s.failure = e.what();
        }
        if (!s.ok) s.u_max = s.enstrophy = 0.0;
    }
    return out;
}

struct Models {
    surrogate::GPModel u_max;
    surrogate::GPModel enstrophy;
};

Models fit_models(const std::vector<Sample>& samples) {
    std::vector<std::vector<double>> rows;
    std::vector<double> u;
    std::vector<double> e;
    for (const auto& s : samples) {
        if (!s.ok) continue;
        rows.emplace_back(s.genome.params().begin(), s.genome.params().end());
        u.push_back(s.u_max);
        e.push_back(s.enstrophy);
    }
    const Eigen::MatrixXd x = surrogate::to_matrix(rows);
    const Eigen::VectorXd yu = Eigen::Map<const Eigen::VectorXd>(u.data(), static_cast<Eigen::Index>(u.size()));
    const Eigen::VectorXd ye = Eigen::Map<const Eigen::VectorXd>(e.data(), static_cast<Eigen::Index>(e.size()));
    auto enstrophy = std::async(std::launch::async, [&] { return surrogate::gp_fit(x, ye); });
    auto u_max = surrogate::gp_fit(x, yu);
    return {std::move(u_max), enstrophy.get()};
}

void reseed(VoronoiArchive& archive, const std::vector<Sample>& samples) {
    archive.clear();
    for (const auto& s : samples) {
        if (!s.ok) continue;
        archive.assign({std::vector<double>(s.genome.params().begin(), s.genome.params().end()), s.u_max, s.area,
                        s.enstrophy, Provenance::Simulated});
    }
}

RoundStats summarize(int round, const RunResult& r, int failures) {
    RoundStats st;
    st.round = round;
    st.evaluations = static_cast<int>(r.samples.size());
    st.failures = failures;
    st.occupancy = r.archive.occupancy();
    st.children = r.total_proposals;
    double sum = 0.0;
    double best = std::numeric_limits<double>::infinity();
    for (int i : r.archive.occupied()) {
        const double f = r.archive.niche(i)->fitness;
        sum += f;
        best = std::min(best, f);
    }
    st.best_fitness = st.occupancy > 0 ? best : 0.0;
    st.mean_fitness = st.occupancy > 0 ? sum / st.occupancy : 0.0;
    return st;
}

}  // namespace

RunResult sphen_run(const Evaluator& evaluator, const SphenConfig& config, const SphenOptions& options) {
    if (auto errors = config.validate(); !errors.empty()) {
        throw Error(ErrorCode::ValidationError, "invalid SPHEN configuration", std::move(errors));
    }
    auto result = std::make_shared<RunResult>();
    RunResult& r = *result;
    r.config = config;
    std::mt19937_64 rng(config.rng_seed);

    auto abort_if_failing = [&](int failures, int attempted, int round) {
        if (2 * failures > attempted) {
            throw SphenAborted("round " + std::to_string(round) + ": " + std::to_string(failures) + " of " +
                                   std::to_string(attempted) + " evaluations failed",
                               result);
        }
    };

    std::vector<encoding::ShapeGenome> init = options.initial_genomes;
    if (options.sobol_fill && static_cast<int>(init.size()) < config.init_samples) {
        const int fill = config.init_samples - static_cast<int>(init.size());
        const auto pts = surrogate::sobol_points(static_cast<int>(encoding::kGenomeSize), fill);
        for (int i = 0; i < fill; ++i) {
            std::vector<double> p(pts.row(i).begin(), pts.row(i).end());
            init.emplace_back(p);
        }
    }
    if (static_cast<int>(init.size()) > config.total_budget) init.resize(static_cast<std::size_t>(config.total_budget));
    if (init.empty()) throw Error(ErrorCode::EmptyRegion, "no initial genomes to evaluate");

    r.samples = evaluate_all(evaluator, init, 0, config.resolution, options.parallel_evaluations);
    int failures = static_cast<int>(r.samples.size()) - r.successes();
    abort_if_failing(failures, static_cast<int>(r.samples.size()), 0);
    if (r.successes() < 2) throw SphenAborted("fewer than two successful initial evaluations", result);

    FeatureNormalization norm;
    if (options.normalization) {
        norm = *options.normalization;
    } else {
        std::vector<double> areas;
        std::vector<double> ens;
        for (const auto& s : r.samples)
            if (s.ok) {
                areas.push_back(s.area);
                ens.push_back(s.enstrophy);
            }
        norm = FeatureNormalization::from_observations(areas, ens);
    }
    r.archive = VoronoiArchive(config.archive_capacity, config.rng_seed, norm);

    auto models = fit_models(r.samples);
    r.model_history.push_back({0, r.successes(), models.u_max.hyper(), models.enstrophy.hyper()});
    r.stats.push_back(summarize(0, r, failures));

    const IlluminationConfig ill{config.archive_updates_per_round, config.children_per_update, config.mutation_sigma};
    const int rounds = (config.total_budget - static_cast<int>(r.samples.size())) / config.batch_size;
    for (int round = 1; round <= rounds; ++round) {
        if (options.cancelled && options.cancelled()) throw Error(ErrorCode::ValidationError, "run cancelled");
        reseed(r.archive, r.samples);
        const auto predictor = gp_predictor(models.u_max, models.enstrophy, config.resolution, config.ucb_kappa);
        const auto ist = illuminate(r.archive, predictor, ill, rng);
        r.round_proposals += ist.children;
        r.total_proposals += ist.children;

        const int n = std::min(config.batch_size, r.archive.occupancy());
        const auto picks = select_acquisitions(r.archive, n, 1 + static_cast<std::uint64_t>(round - 1) * config.batch_size,
                                               true);
        std::vector<encoding::ShapeGenome> batch;
        for (int i : picks) batch.emplace_back(r.archive.niche(i)->params);
        auto evaluated = evaluate_all(evaluator, batch, round, config.resolution, options.parallel_evaluations);
        failures = 0;
        for (auto& s : evaluated) {
            failures += s.ok ? 0 : 1;
            r.samples.push_back(std::move(s));
        }
        r.stats.push_back(summarize(round, r, failures));
        abort_if_failing(failures, static_cast<int>(batch.size()), round);

        models = fit_models(r.samples);
        r.model_history.push_back({round, r.successes(), models.u_max.hyper(), models.enstrophy.hyper()});
        if (options.on_round) options.on_round(r.stats.back());
    }

    reseed(r.archive, r.samples);
    const auto predictor = gp_predictor(models.u_max, models.enstrophy, config.resolution, config.ucb_kappa);
    const auto ist = illuminate(r.archive, predictor, ill, rng, options.record_trace ? &r.final_trace : nullptr);
    r.total_proposals += ist.children;
    r.stats.push_back(summarize(rounds + 1, r, 0));
    if (options.on_round) options.on_round(r.stats.back());
    r.u_max_model = std::move(models.u_max);
    r.enstrophy_model = std::move(models.enstrophy);
    return std::move(r);
}

// CSV -----------------------------------------------------------------------

std::string samples_csv(const std::vector<Sample>& samples) {
    std::string out = "sample_id,round,ok,area,u_max,enstrophy,failure";
    for (std::size_t j = 0; j < encoding::kGenomeSize; ++j) out += ",g" + std::to_string(j);
    out += '\n';
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        out += std::to_string(i) + ',' + std::to_string(s.round) + ',' + (s.ok ? "1" : "0");
        for (double v : {s.area, s.u_max, s.enstrophy}) out += ',' + csv::format_double(v);
        out += ',' + csv::sanitize(s.failure);
        for (double v : s.genome.params()) out += ',' + csv::format_double(v);
        out += '\n';
    }
    return out;
}

std::vector<Sample> samples_from_csv(const std::string& text) {
    const auto t = csv::parse(text);
    const std::size_t width = 7 + encoding::kGenomeSize;
    if (t.header.size() != width || t.header[0] != "sample_id") throw Error(ErrorCode::CorruptArtifact, "samples CSV header is malformed");
    std::vector<Sample> out;
    for (const auto& row : t.rows) {
        if (row.size() != width) throw Error(ErrorCode::CorruptArtifact, "samples CSV row has wrong width");
        if (csv::parse_long(row[0]) != static_cast<long>(out.size())) throw Error(ErrorCode::CorruptArtifact, "samples CSV ids out of order");
        Sample s;
        s.round = static_cast<int>(csv::parse_long(row[1]));
        s.ok = row[2] == "1";
        s.area = csv::parse_double(row[3]);
        s.u_max = csv::parse_double(row[4]);
        s.enstrophy = csv::parse_double(row[5]);
        s.failure = row[6];
        std::vector<double> g;
        for (std::size_t j = 7; j < width; ++j) g.push_back(csv::parse_double(row[j]));
        s.genome = encoding::ShapeGenome(g);
        out.push_back(std::move(s));
    }
    return out;
}

std::string stats_csv(const std::vector<RoundStats>& stats) {
    std::string out = "round,evaluations,failures,occupancy,best_fitness,mean_fitness,children\n";
    for (const auto& s : stats) {
        out += std::to_string(s.round) + ',' + std::to_string(s.evaluations) + ',' + std::to_string(s.failures) + ',' +
               std::to_string(s.occupancy) + ',' + csv::format_double(s.best_fitness) + ',' +
               csv::format_double(s.mean_fitness) + ',' + std::to_string(s.children) + '\n';
    }
    return out;
}

std::vector<RoundStats> stats_from_csv(const std::string& text) {
    const auto t = csv::parse(text);
    if (t.header.size() != 7 || t.header[0] != "round") throw Error(ErrorCode::CorruptArtifact, "stats CSV header is malformed");
    std::vector<RoundStats> out;
    for (const auto& row : t.rows) {
        if (row.size() != 7) throw Error(ErrorCode::CorruptArtifact, "stats CSV row has wrong width");
        out.push_back({static_cast<int>(csv::parse_long(row[0])), static_cast<int>(csv::parse_long(row[1])),
                       static_cast<int>(csv::parse_long(row[2])), static_cast<int>(csv::parse_long(row[3])),
                       csv::parse_double(row[4]), csv::parse_double(row[5]), csv::parse_long(row[6])});
    }
    return out;
}

double pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2) throw Error(ErrorCode::DimensionMismatch, "pearson needs two equal series");
    const auto n = static_cast<double>(a.size());
    double ma = 0.0;
    double mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0.0;
    double saa = 0.0;
    double sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) return std::numeric_limits<double>::quiet_NaN();
    return sab / std::sqrt(saa * sbb);
}

}  // namespace fda::qd
