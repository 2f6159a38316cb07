#pragma once

// Convolutional variational autoencoder over shape bitmaps, latent walks and
// large generated archives.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "fda/encoding.hpp"
#include "fda/qd.hpp"
#include "fda/surrogate.hpp"

namespace fda::genmodel {

struct VaeConfig {
    int latent_dim = 5;
    int input_resolution = 64;
    std::vector<int> conv_filters = {8, 16, 32, 64};  // 3x3, stride 2 each
    double kl_weight = 1.0;
    double learning_rate = 1e-3;
    int epochs = 100;
    int batch_size = 32;
    std::uint64_t rng_seed = 0;
    double leaky_slope = 0.2;
    // Training set: elites of an archive illuminated with the final SPHEN models.
    int archive_capacity = 4000;
    int archive_updates = 1000;

    std::vector<FieldError> validate() const;
    bool operator==(const VaeConfig&) const = default;
};

nlohmann::json to_json(const VaeConfig& config);
VaeConfig vae_config_from_json(const nlohmann::json& j);

/// Closed-form KL(N(mu, exp(logvar)) || N(0, I)).
double kl_divergence(const Eigen::VectorXd& mu, const Eigen::VectorXd& logvar);

struct Tensor {
    std::string name;
    std::vector<int> shape;
    Eigen::MatrixXd value;  // rows x cols = shape[0] x product(rest)
};

struct LossTerms {
    double total = 0.0;
    double reconstruction = 0.0;
    double kl = 0.0;
};

class VaeModel {
public:
    VaeModel() = default;
    /// Freshly initialized (He-uniform) weights.
    explicit VaeModel(const VaeConfig& config);

    const VaeConfig& config() const noexcept { return config_; }
    int latent_dim() const noexcept { return config_.latent_dim; }
    int resolution() const noexcept { return config_.input_resolution; }

    const std::vector<Tensor>& tensors() const noexcept { return tensors_; }
    std::vector<Tensor>& tensors() noexcept { return tensors_; }
    std::size_t parameter_count() const;
    /// Flat view over all parameters in tensor order.
    double parameter(std::size_t i) const;
    void set_parameter(std::size_t i, double v);

    /// Posterior mean and log-variance for a batch (columns are samples).
    void encode_batch(const Eigen::MatrixXd& images, Eigen::MatrixXd& mu, Eigen::MatrixXd& logvar) const;
    /// Decoder logits for latent columns; rows are pixels (y * res + x).
    Eigen::MatrixXd decode_logits(const Eigen::MatrixXd& latents) const;

    /// Mean loss over the batch with fixed reparameterization noise `eps`
    /// (latent_dim x batch); fills the flat gradient when non-null.
    LossTerms loss(const Eigen::MatrixXd& images, const Eigen::MatrixXd& eps, std::vector<double>* gradient) const;

    std::vector<LossTerms> history;  // per-epoch training means
    int restarts = 0;

    bool operator==(const VaeModel& o) const;

private:
    VaeConfig config_;
    std::vector<Tensor> tensors_;
};

/// Pixel column (1 for solid) of a bitmap, row-major.
Eigen::VectorXd image_of(const encoding::Bitmap& bitmap);

/// Adam on BCE + beta KL. Restarts with lr / 10 (up to 3 times) when the
/// loss turns non-finite, then throws DivergedTraining.
VaeModel train_vae(const std::vector<encoding::Bitmap>& bitmaps, const VaeConfig& config);

std::vector<double> encode(const VaeModel& model, const encoding::Bitmap& bitmap);

/// Pixels with sigmoid >= 0.5 (logit >= 0), largest component kept. Throws
/// DegenerateShape when nothing is solid.
encoding::Bitmap decode(const VaeModel& model, const std::vector<double>& latent);

/// "FDAV", version u32, tensor table (name, rank, dims), little-endian f32
/// weights. Training history goes to the JSON sidecar.
std::vector<std::uint8_t> save_weights(const VaeModel& model);
nlohmann::json sidecar(const VaeModel& model);
VaeModel load_model(const std::vector<std::uint8_t>& weights, const nlohmann::json& sidecar);

// Latent-space analysis -----------------------------------------------------

struct LatentSample {
    encoding::Bitmap bitmap;
    double u_max = 0.0;
    double area = 0.0;
    double enstrophy = 0.0;
};

struct LatentPredictorSet {
    surrogate::GPModel u_max;
    surrogate::GPModel area;
    surrogate::GPModel enstrophy;

    struct Values {
        Eigen::VectorXd u_max, area, enstrophy;
    };
    Values predict(const Eigen::MatrixXd& latents) const;  // rows are latents
};

/// Encodes every bitmap and fits the three GPs on the same inputs. Throws
/// ValidationError for fewer than 20 samples.
LatentPredictorSet fit_latent_predictors(const VaeModel& model, const std::vector<LatentSample>& samples);

struct WalkRow {
    std::vector<double> latent;
    std::optional<encoding::Bitmap> bitmap;  // empty when degenerate
    double u_max = 0.0;
    double area = 0.0;
    double enstrophy = 0.0;
};

/// `steps` (odd) latents along `dim` over center +- span. Throws
/// ValidationError on a bad dim, even steps or a wrong-length center.
std::vector<WalkRow> latent_walk(const VaeModel& model, const LatentPredictorSet& predictors,
                                 const std::vector<double>& center, int dim, int steps = 11, double span = 2.0);

std::string walk_csv(const std::vector<WalkRow>& rows);

struct IsolineBin {
    int a_bin = 0;
    int e_bin = 0;
    int count = 0;
    double min = 0.0;
    double mean = 0.0;
    double max = 0.0;
};

struct GeneratedSet {
    qd::VoronoiArchive archive;  // elite params are latents
    Eigen::MatrixXd latents;     // n x latent_dim, degenerate decodes included
    Eigen::VectorXd area;        // exact area of the decode (NaN when degenerate)
    Eigen::VectorXd enstrophy;   // predicted
    Eigen::VectorXd u_max;       // predicted
    std::vector<std::uint8_t> degenerate;
    int degenerate_count = 0;
    std::vector<IsolineBin> isolines;  // populated bins only
    int bins = 0;
};

/// Decodes n prior samples (parallel), predicts features and fitness and
/// assigns them serially into a fresh archive. Fitness statistics are binned
/// on a bins x bins grid of the archive's normalized feature square.
GeneratedSet generate_set(const VaeModel& model, const LatentPredictorSet& predictors, int n, int archive_capacity,
                          std::uint64_t seed, int bins = 20);

std::string generated_csv(const GeneratedSet& set);
std::string isoline_csv(const GeneratedSet& set);

}  // namespace fda::genmodel
