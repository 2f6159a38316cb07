#pragma once

// Gaussian-process regression with an isotropic squared-exponential kernel,
// and the Joe-Kuo Sobol sequence used for space-filling sampling.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

namespace fda::surrogate {

// Sobol ---------------------------------------------------------------------

inline constexpr int kMaxSobolDimension = 32;

/// Gray-code Sobol generator. Index 0 is the origin.
class SobolStream {
public:
    explicit SobolStream(int dimension);

    int dimension() const noexcept { return dimension_; }
    std::uint64_t index() const noexcept { return index_; }

    /// Jumps to point `index` (direct evaluation, O(bits * d)).
    void seek(std::uint64_t index);
    /// Current point, then advances the index.
    std::vector<double> next();

private:
    int dimension_;
    std::uint64_t index_ = 0;
    std::vector<std::uint32_t> state_;
    std::vector<std::array<std::uint32_t, 32>> directions_;
};

/// Points skip .. skip+n-1 as an n x d matrix. Throws UnsupportedDimension
/// for d outside [1, 32].
Eigen::MatrixXd sobol_points(int d, int n, std::uint64_t skip = 1);

// Gaussian process ----------------------------------------------------------

struct GPHyperparams {
    double length_scale = 1.0;
    double signal_variance = 1.0;
    double noise_variance = 1e-8;
    bool operator==(const GPHyperparams&) const = default;
};

inline constexpr double kNoiseFloor = 1e-8;

/// Search box in natural units. Variance bounds are multiplied by the
/// target variance when `relative_to_target_variance` is set.
struct GPBounds {
    double length_lo = 1e-2;
    double length_hi = 1e2;
    double signal_lo = 1e-3;
    double signal_hi = 1e3;
    double noise_lo = kNoiseFloor;
    double noise_hi = 1.0;
    bool relative_to_target_variance = true;
    int starts = 8;
    int max_evaluations = 400;
    double tolerance = 1e-6;
};

/// sigma^2 exp(-|x - x'|^2 / (2 l^2))
double kernel(std::span<const double> a, std::span<const double> b, const GPHyperparams& hyper);

struct GPPrediction {
    Eigen::VectorXd mean;
    Eigen::VectorXd variance;
};

class GPModel {
public:
    GPModel() = default;

    /// Exact inference at fixed hyperparameters. Duplicate rows (within
    /// 1e-12) are merged by averaging their targets. Throws SingularKernel.
    static GPModel condition(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, GPHyperparams hyper);

    int dimension() const noexcept { return static_cast<int>(x_.cols()); }
    int size() const noexcept { return static_cast<int>(x_.rows()); }
    const Eigen::MatrixXd& inputs() const noexcept { return x_; }
    /// Targets after merging, before centring.
    Eigen::VectorXd targets() const { return y_centered_.array() + offset_; }
    double offset() const noexcept { return offset_; }
    const GPHyperparams& hyper() const noexcept { return hyper_; }
    const Eigen::MatrixXd& cholesky() const noexcept { return chol_; }
    const Eigen::VectorXd& alpha() const noexcept { return alpha_; }

    double log_marginal_likelihood() const noexcept { return lml_; }

    /// Predictive mean and variance (variance includes the noise term and
    /// is clamped at 0). Rows of `x` are query points.
    GPPrediction predict(const Eigen::MatrixXd& x, bool with_variance = true) const;
    /// Mean only, parallel over query rows.
    Eigen::VectorXd predict_mean(const Eigen::MatrixXd& x) const;
    /// Single-threaded reference of predict_mean.
    Eigen::VectorXd predict_mean_serial(const Eigen::MatrixXd& x) const;

private:
    Eigen::MatrixXd x_;
    Eigen::VectorXd y_centered_;
    double offset_ = 0.0;
    GPHyperparams hyper_;
    Eigen::MatrixXd chol_;  // lower factor of K + noise I
    Eigen::VectorXd alpha_;
    double lml_ = 0.0;
};

/// Log marginal likelihood of centred targets at the given hyperparameters;
/// -inf when the kernel matrix is not positive definite.
double log_marginal_likelihood(const Eigen::MatrixXd& x, const Eigen::VectorXd& y_centered, const GPHyperparams& hyper);

struct GPFitReport {
    std::vector<GPHyperparams> seeds;
    std::vector<double> seed_likelihoods;
    double best_likelihood = 0.0;
    int evaluations = 0;
};

/// Maximizes the log marginal likelihood over (log l, log sigma^2,
/// log noise) with bounded Nelder-Mead restarted from Sobol-spread seeds.
GPModel gp_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const GPBounds& bounds = {},
               GPFitReport* report = nullptr);

nlohmann::json to_json(const GPModel& model);
/// Reconstructs a model; the Cholesky factor is recomputed.
GPModel gp_from_json(const nlohmann::json& j);

/// Rows of a std::vector of equal-length points as a matrix.
Eigen::MatrixXd to_matrix(const std::vector<std::vector<double>>& rows);

}  // namespace fda::surrogate
