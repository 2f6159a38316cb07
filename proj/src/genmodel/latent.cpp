#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <map>
#include <random>

#include "csv.hpp"
#include "fda/error.hpp"
#include "fda/genmodel.hpp"

namespace fda::genmodel {

LatentPredictorSet::Values LatentPredictorSet::predict(const Eigen::MatrixXd& latents) const {
    return {u_max.predict_mean(latents), area.predict_mean(latents), enstrophy.predict_mean(latents)};
}

LatentPredictorSet fit_latent_predictors(const VaeModel& model, const std::vector<LatentSample>& samples) {
    if (samples.size() < 20) {
        throw Error(ErrorCode::ValidationError, "latent predictors need at least 20 evaluated samples",
                    {{"samples", "got " + std::to_string(samples.size())}});
    }
    const auto n = static_cast<Eigen::Index>(samples.size());
    Eigen::MatrixXd images(static_cast<Eigen::Index>(model.resolution()) * model.resolution(), n);
    Eigen::VectorXd u(n), a(n), e(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& s = samples[static_cast<std::size_t>(i)];
        if (s.bitmap.resolution() != model.resolution()) {
            throw Error(ErrorCode::DimensionMismatch, "sample bitmap resolution differs from the VAE input resolution");
        }
        images.col(i) = image_of(s.bitmap);
        u(i) = s.u_max;
        a(i) = s.area;
        e(i) = s.enstrophy;
    }
    Eigen::MatrixXd mu;
    Eigen::MatrixXd lv;
    model.encode_batch(images, mu, lv);
    const Eigen::MatrixXd x = mu.transpose();
    auto fu = std::async(std::launch::async, [&] { return surrogate::gp_fit(x, u); });
    auto fa = std::async(std::launch::async, [&] { return surrogate::gp_fit(x, a); });
    LatentPredictorSet set;
    set.enstrophy = surrogate::gp_fit(x, e);
    set.u_max = fu.get();
    set.area = fa.get();
    return set;
}

std::vector<WalkRow> latent_walk(const VaeModel& model, const LatentPredictorSet& predictors,
                                 const std::vector<double>& center, int dim, int steps, double span) {
    std::vector<FieldError> errors;
    if (static_cast<int>(center.size()) != model.latent_dim()) {
        errors.push_back({"center", "expected " + std::to_string(model.latent_dim()) + " components"});
    }
    for (double v : center)
        if (!std::isfinite(v)) errors.push_back({"center", "components must be finite"});
    if (dim < 0 || dim >= model.latent_dim()) errors.push_back({"dim", "must be in [0, latent_dim)"});
    if (steps < 1 || steps % 2 == 0) errors.push_back({"steps", "must be a positive odd number"});
    if (!(span >= 0.0) || !std::isfinite(span)) errors.push_back({"span", "must be finite and non-negative"});
    if (!errors.empty()) throw Error(ErrorCode::ValidationError, "invalid latent walk", std::move(errors));

    std::vector<WalkRow> rows(static_cast<std::size_t>(steps));
    Eigen::MatrixXd latents(steps, model.latent_dim());
    const int mid = steps / 2;
    for (int k = 0; k < steps; ++k) {
        auto& row = rows[static_cast<std::size_t>(k)];
        row.latent = center;
        if (steps > 1) row.latent[static_cast<std::size_t>(dim)] += span * static_cast<double>(k - mid) / mid;
        for (int j = 0; j < model.latent_dim(); ++j) latents(k, j) = row.latent[static_cast<std::size_t>(j)];
        try {
            row.bitmap = decode(model, row.latent);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::DegenerateShape) throw;
        }
    }
    const auto values = predictors.predict(latents);
    for (int k = 0; k < steps; ++k) {
        auto& row = rows[static_cast<std::size_t>(k)];
        row.u_max = values.u_max(k);
        row.area = values.area(k);
        row.enstrophy = values.enstrophy(k);
    }
    return rows;
}

std::string walk_csv(const std::vector<WalkRow>& rows) {
    std::string out = "step";
    const std::size_t dims = rows.empty() ? 0 : rows.front().latent.size();
    for (std::size_t j = 0; j < dims; ++j) out += ",z" + std::to_string(j);
    out += ",degenerate,u_max,area,enstrophy,shape_rle\n";
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const auto& r = rows[k];
        out += std::to_string(k);
        for (double v : r.latent) out += "," + csv::format_double(v);
        out += r.bitmap ? ",0," : ",1,";
        out += csv::format_double(r.u_max) + "," + csv::format_double(r.area) + "," + csv::format_double(r.enstrophy) + ",";
        if (r.bitmap) out += encoding::to_rle(*r.bitmap);
        out += "\n";
    }
    return out;
}

GeneratedSet generate_set(const VaeModel& model, const LatentPredictorSet& predictors, int n, int archive_capacity,
                          std::uint64_t seed, int bins) {
    std::vector<FieldError> errors;
    if (n < 0) errors.push_back({"n", "must be non-negative"});
    if (archive_capacity < 1) errors.push_back({"archive_capacity", "must be at least 1"});
    if (bins < 1) errors.push_back({"bins", "must be at least 1"});
    if (!errors.empty()) throw Error(ErrorCode::ValidationError, "invalid generation request", std::move(errors));

    GeneratedSet set;
    set.bins = bins;
    const int dims = model.latent_dim();
    set.latents.resize(n, dims);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < dims; ++j) set.latents(i, j) = normal(rng);

    set.area = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::quiet_NaN());
    set.degenerate.assign(static_cast<std::size_t>(n), 0);
    constexpr int kChunk = 256;
    const int chunks = (n + kChunk - 1) / kChunk;
    const int r = model.resolution();
#pragma omp parallel for schedule(dynamic)
    for (int c = 0; c < chunks; ++c) {
        const int begin = c * kChunk;
        const int count = std::min(kChunk, n - begin);
        const Eigen::MatrixXd logits = model.decode_logits(set.latents.middleRows(begin, count).transpose());
        for (int s = 0; s < count; ++s) {
            encoding::Bitmap bm(r);
            for (int y = 0; y < r; ++y)
                for (int x = 0; x < r; ++x) bm.set(x, y, logits(static_cast<Eigen::Index>(y) * r + x, s) >= 0.0);
            const auto i = static_cast<std::size_t>(begin + s);
            if (bm.solid_count() == 0) {
                set.degenerate[i] = 1;
            } else {
                set.area(begin + s) = encoding::area(bm.largest_component());
            }
        }
    }
    if (n > 0) {
        const auto values = predictors.predict(set.latents);
        set.u_max = values.u_max;
        set.enstrophy = values.enstrophy;
    }

    std::vector<double> areas;
    std::vector<double> ens;
    for (int i = 0; i < n; ++i) {
        if (set.degenerate[static_cast<std::size_t>(i)]) {
            ++set.degenerate_count;
            continue;
        }
        areas.push_back(set.area(i));
        ens.push_back(set.enstrophy(i));
    }
    const auto norm = areas.empty() ? qd::FeatureNormalization{} : qd::FeatureNormalization::from_observations(areas, ens);
    set.archive = qd::VoronoiArchive(archive_capacity, seed, norm);

    std::map<std::pair<int, int>, IsolineBin> grid;
    for (int i = 0; i < n; ++i) {
        if (set.degenerate[static_cast<std::size_t>(i)]) continue;
        std::vector<double> latent(static_cast<std::size_t>(dims));
        for (int j = 0; j < dims; ++j) latent[static_cast<std::size_t>(j)] = set.latents(i, j);
        set.archive.assign({std::move(latent), set.u_max(i), set.area(i), set.enstrophy(i), qd::Provenance::Predicted});

        const auto u = norm.normalize(set.area(i), set.enstrophy(i));
        const int ab = std::min(bins - 1, static_cast<int>(u[0] * bins));
        const int eb = std::min(bins - 1, static_cast<int>(u[1] * bins));
        auto [it, fresh] = grid.try_emplace({ab, eb});
        auto& bin = it->second;
        const double f = set.u_max(i);
        if (fresh) {
            bin = {ab, eb, 0, f, 0.0, f};
        }
        ++bin.count;
        bin.min = std::min(bin.min, f);
        bin.max = std::max(bin.max, f);
        bin.mean += (f - bin.mean) / bin.count;
    }
    for (auto& [key, bin] : grid) {
        bin.mean = std::clamp(bin.mean, bin.min, bin.max);
        set.isolines.push_back(bin);
    }
    return set;
}

std::string generated_csv(const GeneratedSet& set) {
    std::string out = "sample_id";
    for (Eigen::Index j = 0; j < set.latents.cols(); ++j) out += ",z" + std::to_string(j);
    out += ",degenerate,area,enstrophy,u_max\n";
    for (Eigen::Index i = 0; i < set.latents.rows(); ++i) {
        out += std::to_string(i);
        for (Eigen::Index j = 0; j < set.latents.cols(); ++j) out += "," + csv::format_double(set.latents(i, j));
        const bool bad = set.degenerate[static_cast<std::size_t>(i)] != 0;
        out += bad ? ",1," : ",0,";
        out += (bad ? std::string() : csv::format_double(set.area(i))) + "," + csv::format_double(set.enstrophy(i)) + "," +
               csv::format_double(set.u_max(i)) + "\n";
    }
    return out;
}

std::string isoline_csv(const GeneratedSet& set) {
    std::string out = "a_bin,e_bin,a_center,e_center,count,min_fitness,mean_fitness,max_fitness\n";
    for (const auto& b : set.isolines) {
        out += std::to_string(b.a_bin) + "," + std::to_string(b.e_bin) + "," +
               csv::format_double((b.a_bin + 0.5) / set.bins) + "," + csv::format_double((b.e_bin + 0.5) / set.bins) + "," +
               std::to_string(b.count) + "," + csv::format_double(b.min) + "," + csv::format_double(b.mean) + "," +
               csv::format_double(b.max) + "\n";
    }
    return out;
}

}  // namespace fda::genmodel
