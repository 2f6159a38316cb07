#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>
#include <nlohmann/json.hpp>

#include "fda/error.hpp"
#include "fda/surrogate.hpp"

namespace fda::surrogate {

namespace {

constexpr double kDuplicateTolerance = 1e-12;

Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    Eigen::MatrixXd d(a.rows(), b.rows());
    for (Eigen::Index j = 0; j < b.rows(); ++j)
        for (Eigen::Index i = 0; i < a.rows(); ++i) d(i, j) = (a.row(i) - b.row(j)).squaredNorm();
    return d;
}

Eigen::MatrixXd gram(const Eigen::MatrixXd& d2, const GPHyperparams& h) {
    const double s = -0.5 / (h.length_scale * h.length_scale);
    return (d2.array() * s).exp() * h.signal_variance;
}

void check_hyper(const GPHyperparams& h) {
    if (!(h.length_scale > 0.0) || !(h.signal_variance > 0.0) || !(h.noise_variance >= kNoiseFloor) ||
        !std::isfinite(h.length_scale) || !std::isfinite(h.signal_variance) || !std::isfinite(h.noise_variance)) {
        throw Error(ErrorCode::ValidationError, "GP hyperparameters must be positive with noise >= 1e-8");
    }
}

struct Merged {
    Eigen::MatrixXd x;
    Eigen::VectorXd y;
};

// Averages targets of rows that coincide within kDuplicateTolerance.
Merged merge_duplicates(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    if (x.rows() != y.size()) throw Error(ErrorCode::DimensionMismatch, "GP inputs and targets differ in length");
    if (x.rows() < 1 || x.cols() < 1) throw Error(ErrorCode::ValidationError, "GP needs at least one point");
    if (!x.allFinite() || !y.allFinite()) throw Error(ErrorCode::ValidationError, "GP training data must be finite");
    std::vector<Eigen::Index> owner(static_cast<std::size_t>(x.rows()), -1);
    std::vector<Eigen::Index> kept;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index k : kept) {
            if ((x.row(i) - x.row(k)).cwiseAbs().maxCoeff() <= kDuplicateTolerance) {
                owner[static_cast<std::size_t>(i)] = k;
                break;
            }
        }
        if (owner[static_cast<std::size_t>(i)] < 0) {
            owner[static_cast<std::size_t>(i)] = i;
            kept.push_back(i);
        }
    }
    Merged m;
    m.x.resize(static_cast<Eigen::Index>(kept.size()), x.cols());
    m.y = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(kept.size()));
    Eigen::VectorXd count = Eigen::VectorXd::Zero(m.y.size());
    for (std::size_t r = 0; r < kept.size(); ++r) m.x.row(static_cast<Eigen::Index>(r)) = x.row(kept[r]);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const auto r = std::find(kept.begin(), kept.end(), owner[static_cast<std::size_t>(i)]) - kept.begin();
        m.y(r) += y(i);
        count(r) += 1.0;
    }
    m.y.array() /= count.array();
    return m;
}

double lml_from_d2(const Eigen::MatrixXd& d2, const Eigen::VectorXd& yc, const GPHyperparams& h) {
    Eigen::MatrixXd k = gram(d2, h);
    k.diagonal().array() += h.noise_variance;
    Eigen::LLT<Eigen::MatrixXd> llt(k);
    if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
    const Eigen::VectorXd alpha = llt.solve(yc);
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    const double n = static_cast<double>(yc.size());
    const double value = -0.5 * yc.dot(alpha) - 0.5 * logdet - 0.5 * n * std::log(2.0 * std::numbers::pi);
    return std::isfinite(value) ? value : -std::numeric_limits<double>::infinity();
}

template <bool Parallel>
Eigen::VectorXd mean_rows(const Eigen::MatrixXd& x, const Eigen::MatrixXd& q, const Eigen::VectorXd& alpha,
                          const GPHyperparams& h, double offset) {
    Eigen::VectorXd out(q.rows());
    const double s = -0.5 / (h.length_scale * h.length_scale);
    const auto m = static_cast<long>(q.rows());
#pragma omp parallel for schedule(static) if (Parallel)
    for (long r = 0; r < m; ++r) {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            acc += h.signal_variance * std::exp(s * (q.row(r) - x.row(i)).squaredNorm()) * alpha(i);
        }
        out(r) = acc + offset;
    }
    return out;
}

// Bounded objective for the GSL simplex: log-space box projection plus a
// quadratic pull back toward the box.
struct Objective {
    const Eigen::MatrixXd* d2;
    const Eigen::VectorXd* yc;
    std::array<double, 3> lo;
    std::array<double, 3> hi;
    std::array<int, 3> free;  // index into the optimizer vector, -1 when fixed
    int evaluations = 0;

    GPHyperparams hyper(const gsl_vector* v, double* excess) const {
        std::array<double, 3> t{};
        double e = 0.0;
        for (std::size_t k = 0; k < 3; ++k) {
            double u = free[k] >= 0 ? gsl_vector_get(v, static_cast<std::size_t>(free[k])) : lo[k];
            const double c = std::clamp(u, lo[k], hi[k]);
            e += (u - c) * (u - c);
            t[k] = c;
        }
        if (excess) *excess = e;
        return {std::exp(t[0]), std::exp(t[1]), std::max(kNoiseFloor, std::exp(t[2]))};
    }

    static double call(const gsl_vector* v, void* self) {
        auto* o = static_cast<Objective*>(self);
        ++o->evaluations;
        double excess = 0.0;
        const double lml = lml_from_d2(*o->d2, *o->yc, o->hyper(v, &excess));
        if (!std::isfinite(lml)) return std::numeric_limits<double>::max();
        return -lml + 1e3 * excess;
    }
};

}  // namespace

double kernel(std::span<const double> a, std::span<const double> b, const GPHyperparams& hyper) {
    if (a.size() != b.size()) throw Error(ErrorCode::DimensionMismatch, "kernel arguments differ in dimension");
    double d2 = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d2 += (a[i] - b[i]) * (a[i] - b[i]);
    return hyper.signal_variance * std::exp(-d2 / (2.0 * hyper.length_scale * hyper.length_scale));
}

double log_marginal_likelihood(const Eigen::MatrixXd& x, const Eigen::VectorXd& y_centered, const GPHyperparams& hyper) {
    if (x.rows() != y_centered.size()) throw Error(ErrorCode::DimensionMismatch, "GP inputs and targets differ in length");
    return lml_from_d2(squared_distances(x, x), y_centered, hyper);
}

GPModel GPModel::condition(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, GPHyperparams hyper) {
    check_hyper(hyper);
    auto merged = merge_duplicates(x, y);
    GPModel m;
    m.offset_ = merged.y.mean();
    m.y_centered_ = merged.y.array() - m.offset_;
    m.x_ = std::move(merged.x);
    m.hyper_ = hyper;
    Eigen::MatrixXd k = gram(squared_distances(m.x_, m.x_), hyper);
    k.diagonal().array() += hyper.noise_variance;
    Eigen::LLT<Eigen::MatrixXd> llt(k);
    if (llt.info() != Eigen::Success) {
        throw Error(ErrorCode::SingularKernel, "Cholesky of the kernel matrix failed");
    }
    m.chol_ = llt.matrixL();
    m.alpha_ = llt.solve(m.y_centered_);
    const double logdet = 2.0 * m.chol_.diagonal().array().log().sum();
    m.lml_ = -0.5 * m.y_centered_.dot(m.alpha_) - 0.5 * logdet -
             0.5 * static_cast<double>(m.size()) * std::log(2.0 * std::numbers::pi);
    return m;
}

GPPrediction GPModel::predict(const Eigen::MatrixXd& q, bool with_variance) const {
    if (q.cols() != x_.cols()) {
        throw Error(ErrorCode::DimensionMismatch, "query has " + std::to_string(q.cols()) + " columns, model expects " +
                                                      std::to_string(x_.cols()));
    }
    GPPrediction out;
    const Eigen::MatrixXd ks = gram(squared_distances(x_, q), hyper_);  // n x m
    out.mean = (ks.transpose() * alpha_).array() + offset_;
    if (with_variance) {
        const Eigen::MatrixXd v = chol_.triangularView<Eigen::Lower>().solve(ks);
        out.variance = (hyper_.signal_variance - v.colwise().squaredNorm().transpose().array()).cwiseMax(0.0) +
                       hyper_.noise_variance;
    }
    return out;
}

Eigen::VectorXd GPModel::predict_mean(const Eigen::MatrixXd& q) const {
    if (q.cols() != x_.cols()) throw Error(ErrorCode::DimensionMismatch, "query dimension does not match the model");
    return mean_rows<true>(x_, q, alpha_, hyper_, offset_);
}

Eigen::VectorXd GPModel::predict_mean_serial(const Eigen::MatrixXd& q) const {
    if (q.cols() != x_.cols()) throw Error(ErrorCode::DimensionMismatch, "query dimension does not match the model");
    return mean_rows<false>(x_, q, alpha_, hyper_, offset_);
}

GPModel gp_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const GPBounds& bounds, GPFitReport* report) {
    const auto merged = merge_duplicates(x, y);
    const Eigen::VectorXd yc = merged.y.array() - merged.y.mean();
    const Eigen::MatrixXd d2 = squared_distances(merged.x, merged.x);

    double scale = 1.0;
    if (bounds.relative_to_target_variance && yc.size() > 1) {
        const double var = yc.squaredNorm() / static_cast<double>(yc.size());
        if (var > 0.0) scale = var;
    }
    Objective obj{&d2, &yc, {}, {}, {-1, -1, -1}};
    obj.lo = {std::log(bounds.length_lo), std::log(bounds.signal_lo * scale),
              std::log(std::max(kNoiseFloor, bounds.noise_lo))};
    obj.hi = {std::log(bounds.length_hi), std::log(bounds.signal_hi * scale),
              std::log(std::max(kNoiseFloor, bounds.noise_hi * scale))};
    for (std::size_t k = 0; k < 3; ++k) {
        if (!(obj.lo[k] <= obj.hi[k]) || !std::isfinite(obj.lo[k]) || !std::isfinite(obj.hi[k])) {
            throw Error(ErrorCode::ValidationError, "GP hyperparameter bounds are empty or non-finite");
        }
    }
    int nfree = 0;
    for (std::size_t k = 0; k < 3; ++k)
        if (obj.hi[k] > obj.lo[k]) obj.free[k] = nfree++;

    const int starts = std::max(1, bounds.starts);
    const Eigen::MatrixXd seeds = sobol_points(3, starts, 1);
    GPFitReport local;
    GPHyperparams best_h;
    double best = -std::numeric_limits<double>::infinity();

    gsl_set_error_handler_off();
    gsl_vector* v = nfree > 0 ? gsl_vector_alloc(static_cast<std::size_t>(nfree)) : nullptr;
    gsl_vector* step = nfree > 0 ? gsl_vector_alloc(static_cast<std::size_t>(nfree)) : nullptr;
    gsl_multimin_fminimizer* nm =
        nfree > 0 ? gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, static_cast<std::size_t>(nfree)) : nullptr;

    for (int s = 0; s < starts; ++s) {
        std::array<double, 3> t{};
        for (std::size_t k = 0; k < 3; ++k) t[k] = obj.lo[k] + seeds(s, static_cast<Eigen::Index>(k)) * (obj.hi[k] - obj.lo[k]);
        const GPHyperparams seed{std::exp(t[0]), std::exp(t[1]), std::max(kNoiseFloor, std::exp(t[2]))};
        const double seed_lml = lml_from_d2(d2, yc, seed);
        ++obj.evaluations;
        local.seeds.push_back(seed);
        local.seed_likelihoods.push_back(seed_lml);
        if (seed_lml > best) {
            best = seed_lml;
            best_h = seed;
        }
        if (nfree == 0) continue;

        for (std::size_t k = 0; k < 3; ++k) {
            if (obj.free[k] < 0) continue;
            gsl_vector_set(v, static_cast<std::size_t>(obj.free[k]), t[k]);
            gsl_vector_set(step, static_cast<std::size_t>(obj.free[k]), 0.1 * (obj.hi[k] - obj.lo[k]));
        }
        gsl_multimin_function fn{&Objective::call, static_cast<std::size_t>(nfree), &obj};
        gsl_multimin_fminimizer_set(nm, &fn, v, step);
        for (int it = 0; it < bounds.max_evaluations; ++it) {
            if (gsl_multimin_fminimizer_iterate(nm) != GSL_SUCCESS) break;
            if (gsl_multimin_test_size(gsl_multimin_fminimizer_size(nm), bounds.tolerance) == GSL_SUCCESS) break;
        }
        const GPHyperparams h = obj.hyper(gsl_multimin_fminimizer_x(nm), nullptr);
        const double lml = lml_from_d2(d2, yc, h);
        if (lml > best) {
            best = lml;
            best_h = h;
        }
    }
    if (nm) gsl_multimin_fminimizer_free(nm);
    if (step) gsl_vector_free(step);
    if (v) gsl_vector_free(v);

    if (!std::isfinite(best)) {
        throw Error(ErrorCode::SingularKernel, "kernel matrix is not positive definite at any hyperparameter seed");
    }
    local.best_likelihood = best;
    local.evaluations = obj.evaluations;
    if (report) *report = std::move(local);
    return GPModel::condition(merged.x, merged.y, best_h);
}

nlohmann::json to_json(const GPModel& model) {
    nlohmann::json j;
    j["dimension"] = model.dimension();
    auto& xs = j["x"] = nlohmann::json::array();
    for (Eigen::Index i = 0; i < model.inputs().rows(); ++i) {
        std::vector<double> row(model.inputs().row(i).begin(), model.inputs().row(i).end());
        xs.push_back(row);
    }
    const Eigen::VectorXd y = model.targets();
    j["y"] = std::vector<double>(y.begin(), y.end());
    j["hyper"] = {{"length_scale", model.hyper().length_scale},
                  {"signal_variance", model.hyper().signal_variance},
                  {"noise_variance", model.hyper().noise_variance}};
    return j;
}

GPModel gp_from_json(const nlohmann::json& j) {
    try {
        const auto rows = j.at("x").get<std::vector<std::vector<double>>>();
        const auto ys = j.at("y").get<std::vector<double>>();
        const auto& h = j.at("hyper");
        GPHyperparams hyper{h.at("length_scale").get<double>(), h.at("signal_variance").get<double>(),
                            h.at("noise_variance").get<double>()};
        const Eigen::MatrixXd x = to_matrix(rows);
        if (x.cols() != j.at("dimension").get<int>()) throw Error(ErrorCode::CorruptArtifact, "GP dimension mismatch");
        const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(ys.data(), static_cast<Eigen::Index>(ys.size()));
        return GPModel::condition(x, y, hyper);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::CorruptArtifact, std::string("malformed GP model: ") + e.what());
    }
}

}  // namespace fda::surrogate
