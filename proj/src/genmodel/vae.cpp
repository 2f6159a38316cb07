#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "fda/error.hpp"
#include "fda/genmodel.hpp"

namespace fda::genmodel {

std::vector<FieldError> VaeConfig::validate() const {
    std::vector<FieldError> e;
    if (latent_dim < 1) e.push_back({"vae.latent_dim", "must be at least 1"});
    if (conv_filters.empty()) e.push_back({"vae.conv_layers", "needs at least one layer"});
    for (int f : conv_filters)
        if (f < 1) e.push_back({"vae.conv_layers", "filter counts must be positive"});
    const int factor = conv_filters.size() < 16 ? 1 << conv_filters.size() : 0;
    if (input_resolution < 2 || factor == 0 || input_resolution % factor != 0) {
        e.push_back({"vae.input_resolution", "must be divisible by 2^layers"});
    }
    if (!(kl_weight >= 0.0) || !std::isfinite(kl_weight)) e.push_back({"vae.kl_weight", "must be non-negative"});
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) e.push_back({"vae.learning_rate", "must be positive"});
    if (epochs < 1) e.push_back({"vae.epochs", "must be at least 1"});
    if (batch_size < 1) e.push_back({"vae.batch_size", "must be at least 1"});
    if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) e.push_back({"vae.leaky_slope", "must be in [0, 1)"});
    if (archive_capacity < 100) e.push_back({"vae.archive_capacity", "must be at least 100"});
    if (archive_updates < 1) e.push_back({"vae.archive_updates", "must be at least 1"});
    return e;
}

nlohmann::json to_json(const VaeConfig& c) {
    return {{"latent_dim", c.latent_dim},       {"input_resolution", c.input_resolution},
            {"conv_layers", c.conv_filters},    {"kl_weight", c.kl_weight},
            {"learning_rate", c.learning_rate}, {"epochs", c.epochs},
            {"batch_size", c.batch_size},       {"rng_seed", c.rng_seed},
            {"leaky_slope", c.leaky_slope},         {"archive_capacity", c.archive_capacity},
            {"archive_updates", c.archive_updates}};
}

VaeConfig vae_config_from_json(const nlohmann::json& j) {
    VaeConfig c;
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.input_resolution = j.value("input_resolution", c.input_resolution);
    c.conv_filters = j.value("conv_layers", c.conv_filters);
    c.kl_weight = j.value("kl_weight", c.kl_weight);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.rng_seed = j.value("rng_seed", c.rng_seed);
    c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
    c.archive_capacity = j.value("archive_capacity", c.archive_capacity);
    c.archive_updates = j.value("archive_updates", c.archive_updates);
    return c;
}

double kl_divergence(const Eigen::VectorXd& mu, const Eigen::VectorXd& logvar) {
    return -0.5 * (1.0 + logvar.array() - mu.array().square() - logvar.array().exp()).sum();
}

namespace {

// Activations are (channels, batch * h * w) with column b*h*w + y*w + x.
// A 3x3 stride-2 convolution with padding 1 maps (h, w) to (h/2, w/2);
// output (oy, ox) reads input (2 oy - 1 + ky, 2 ox - 1 + kx).

Eigen::MatrixXd im2col(const Eigen::MatrixXd& in, int c, int b, int h, int w) {
    const int ho = h / 2;
    const int wo = w / 2;
    Eigen::MatrixXd cols = Eigen::MatrixXd::Zero(c * 9, static_cast<Eigen::Index>(b) * ho * wo);
    for (int n = 0; n < b; ++n)
        for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox) {
                const Eigen::Index col = (static_cast<Eigen::Index>(n) * ho + oy) * wo + ox;
                for (int ky = 0; ky < 3; ++ky) {
                    const int iy = 2 * oy - 1 + ky;
                    if (iy < 0 || iy >= h) continue;
                    for (int kx = 0; kx < 3; ++kx) {
                        const int ix = 2 * ox - 1 + kx;
                        if (ix < 0 || ix >= w) continue;
                        const Eigen::Index src = (static_cast<Eigen::Index>(n) * h + iy) * w + ix;
                        for (int ch = 0; ch < c; ++ch) cols(ch * 9 + ky * 3 + kx, col) = in(ch, src);
                    }
                }
            }
    return cols;
}

Eigen::MatrixXd col2im(const Eigen::MatrixXd& cols, int c, int b, int h, int w) {
    const int ho = h / 2;
    const int wo = w / 2;
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(c, static_cast<Eigen::Index>(b) * h * w);
    for (int n = 0; n < b; ++n)
        for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox) {
                const Eigen::Index col = (static_cast<Eigen::Index>(n) * ho + oy) * wo + ox;
                for (int ky = 0; ky < 3; ++ky) {
                    const int iy = 2 * oy - 1 + ky;
                    if (iy < 0 || iy >= h) continue;
                    for (int kx = 0; kx < 3; ++kx) {
                        const int ix = 2 * ox - 1 + kx;
                        if (ix < 0 || ix >= w) continue;
                        const Eigen::Index dst = (static_cast<Eigen::Index>(n) * h + iy) * w + ix;
                        for (int ch = 0; ch < c; ++ch) out(ch, dst) += cols(ch * 9 + ky * 3 + kx, col);
                    }
                }
            }
    return out;
}

// (c, b * p) <-> (c * p, b)
Eigen::MatrixXd flatten(const Eigen::MatrixXd& a, int c, int b, int p) {
    Eigen::MatrixXd f(static_cast<Eigen::Index>(c) * p, b);
    for (int n = 0; n < b; ++n)
        for (int ch = 0; ch < c; ++ch)
            for (int i = 0; i < p; ++i) f(ch * p + i, n) = a(ch, static_cast<Eigen::Index>(n) * p + i);
    return f;
}

Eigen::MatrixXd unflatten(const Eigen::MatrixXd& f, int c, int b, int p) {
    Eigen::MatrixXd a(c, static_cast<Eigen::Index>(b) * p);
    for (int n = 0; n < b; ++n)
        for (int ch = 0; ch < c; ++ch)
            for (int i = 0; i < p; ++i) a(ch, static_cast<Eigen::Index>(n) * p + i) = f(ch * p + i, n);
    return a;
}

Eigen::MatrixXd leaky(const Eigen::MatrixXd& z, double slope) {
    return z.unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
}

void leaky_backward(Eigen::MatrixXd& d, const Eigen::MatrixXd& z, double slope) {
    d.array() *= z.unaryExpr([slope](double v) { return v > 0.0 ? 1.0 : slope; }).array();
}

struct Layout {
    int layers = 0;
    int res = 0;
    int side = 0;  // spatial size after the encoder
    int flat = 0;
    std::vector<int> enc_in, enc_out;
    std::vector<int> dec_in, dec_out;
    // tensor indices
    int mu_w = 0, mu_b = 0, lv_w = 0, lv_b = 0, din_w = 0, din_b = 0;
    int enc(int i) const { return 2 * i; }
    int dec(int i) const { return din_b + 1 + 2 * i; }
    int size_at_encoder(int i) const { return res >> i; }      // input side of enc layer i
    int size_at_decoder(int i) const { return side << i; }     // input side of dec layer i
};

Layout layout_of(const VaeConfig& c) {
    Layout l;
    l.layers = static_cast<int>(c.conv_filters.size());
    l.res = c.input_resolution;
    l.side = c.input_resolution >> l.layers;
    l.flat = c.conv_filters.back() * l.side * l.side;
    for (int i = 0; i < l.layers; ++i) {
        l.enc_in.push_back(i == 0 ? 1 : c.conv_filters[static_cast<std::size_t>(i - 1)]);
        l.enc_out.push_back(c.conv_filters[static_cast<std::size_t>(i)]);
    }
    for (int i = 0; i < l.layers; ++i) {
        l.dec_in.push_back(c.conv_filters[static_cast<std::size_t>(l.layers - 1 - i)]);
        l.dec_out.push_back(i == l.layers - 1 ? 1 : c.conv_filters[static_cast<std::size_t>(l.layers - 2 - i)]);
    }
    l.mu_w = 2 * l.layers;
    l.mu_b = l.mu_w + 1;
    l.lv_w = l.mu_w + 2;
    l.lv_b = l.mu_w + 3;
    l.din_w = l.mu_w + 4;
    l.din_b = l.mu_w + 5;
    return l;
}

struct Forward {
    std::vector<Eigen::MatrixXd> enc_cols, enc_z;  // per layer
    Eigen::MatrixXd flat, mu, logvar, z;
    Eigen::MatrixXd din_z;
    std::vector<Eigen::MatrixXd> dec_input, dec_z;
    Eigen::MatrixXd logits;
};

}  // namespace

VaeModel::VaeModel(const VaeConfig& config) : config_(config) {
    if (auto errors = config.validate(); !errors.empty()) {
        throw Error(ErrorCode::ValidationError, "invalid VAE configuration", std::move(errors));
    }
    const auto l = layout_of(config);
    std::mt19937_64 rng(config.rng_seed);
    auto make = [&](std::string name, int rows, int cols, double fan_in) {
        Tensor t{std::move(name), {rows, cols}, Eigen::MatrixXd(rows, cols)};
        const double bound = std::sqrt(6.0 / fan_in);
        std::uniform_real_distribution<double> u(-bound, bound);
        for (Eigen::Index j = 0; j < t.value.cols(); ++j)
            for (Eigen::Index i = 0; i < t.value.rows(); ++i) t.value(i, j) = u(rng);
        tensors_.push_back(std::move(t));
    };
    auto zeros = [&](std::string name, int rows) {
        tensors_.push_back({std::move(name), {rows, 1}, Eigen::MatrixXd::Zero(rows, 1)});
    };
    for (int i = 0; i < l.layers; ++i) {
        make("enc" + std::to_string(i) + ".w", l.enc_out[static_cast<std::size_t>(i)], l.enc_in[static_cast<std::size_t>(i)] * 9,
             l.enc_in[static_cast<std::size_t>(i)] * 9.0);
        zeros("enc" + std::to_string(i) + ".b", l.enc_out[static_cast<std::size_t>(i)]);
    }
    make("mu.w", config.latent_dim, l.flat, l.flat);
    zeros("mu.b", config.latent_dim);
    make("logvar.w", config.latent_dim, l.flat, 100.0 * l.flat);  // start near unit variance
    zeros("logvar.b", config.latent_dim);
    make("dec_in.w", l.flat, config.latent_dim, config.latent_dim);
    zeros("dec_in.b", l.flat);
    for (int i = 0; i < l.layers; ++i) {
        make("dec" + std::to_string(i) + ".w", l.dec_in[static_cast<std::size_t>(i)], l.dec_out[static_cast<std::size_t>(i)] * 9,
             l.dec_in[static_cast<std::size_t>(i)] * 9.0 / 4.0);
        zeros("dec" + std::to_string(i) + ".b", l.dec_out[static_cast<std::size_t>(i)]);
    }
}

std::size_t VaeModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += static_cast<std::size_t>(t.value.size());
    return n;
}

double VaeModel::parameter(std::size_t i) const {
    for (const auto& t : tensors_) {
        if (i < static_cast<std::size_t>(t.value.size())) return t.value.data()[i];
        i -= static_cast<std::size_t>(t.value.size());
    }
    throw Error(ErrorCode::ValidationError, "parameter index out of range");
}

void VaeModel::set_parameter(std::size_t i, double v) {
    for (auto& t : tensors_) {
        if (i < static_cast<std::size_t>(t.value.size())) {
            t.value.data()[i] = v;
            return;
        }
        i -= static_cast<std::size_t>(t.value.size());
    }
    throw Error(ErrorCode::ValidationError, "parameter index out of range");
}

bool VaeModel::operator==(const VaeModel& o) const {
    if (!(config_ == o.config_) || tensors_.size() != o.tensors_.size()) return false;
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
        if (tensors_[i].name != o.tensors_[i].name || tensors_[i].value != o.tensors_[i].value) return false;
    }
    return true;
}

namespace {

void run_encoder(const VaeModel& m, const Layout& l, const Eigen::MatrixXd& images, Forward& f) {
    const auto& t = m.tensors();
    const int b = static_cast<int>(images.cols());
    const double slope = m.config().leaky_slope;
    // images: (res^2, b) -> (1, b * res^2)
    Eigen::MatrixXd a = Eigen::Map<const Eigen::MatrixXd>(images.data(), 1, images.size());
    f.enc_cols.clear();
    f.enc_z.clear();
    for (int i = 0; i < l.layers; ++i) {
        const int s = l.size_at_encoder(i);
        f.enc_cols.push_back(im2col(a, l.enc_in[static_cast<std::size_t>(i)], b, s, s));
        Eigen::MatrixXd z = t[static_cast<std::size_t>(l.enc(i))].value * f.enc_cols.back();
        z.colwise() += t[static_cast<std::size_t>(l.enc(i) + 1)].value.col(0);
        a = leaky(z, slope);
        f.enc_z.push_back(std::move(z));
    }
    f.flat = flatten(a, l.enc_out.back(), b, l.side * l.side);
    f.mu = t[static_cast<std::size_t>(l.mu_w)].value * f.flat;
    f.mu.colwise() += t[static_cast<std::size_t>(l.mu_b)].value.col(0);
    f.logvar = t[static_cast<std::size_t>(l.lv_w)].value * f.flat;
    f.logvar.colwise() += t[static_cast<std::size_t>(l.lv_b)].value.col(0);
}

void run_decoder(const VaeModel& m, const Layout& l, const Eigen::MatrixXd& z, Forward& f) {
    const auto& t = m.tensors();
    const int b = static_cast<int>(z.cols());
    const double slope = m.config().leaky_slope;
    f.din_z = t[static_cast<std::size_t>(l.din_w)].value * z;
    f.din_z.colwise() += t[static_cast<std::size_t>(l.din_b)].value.col(0);
    Eigen::MatrixXd a = unflatten(leaky(f.din_z, slope), l.dec_in[0], b, l.side * l.side);
    f.dec_input.clear();
    f.dec_z.clear();
    for (int i = 0; i < l.layers; ++i) {
        const int s = l.size_at_decoder(i) * 2;
        const auto& w = t[static_cast<std::size_t>(l.dec(i))].value;
        Eigen::MatrixXd out = col2im(w.transpose() * a, l.dec_out[static_cast<std::size_t>(i)], b, s, s);
        out.colwise() += t[static_cast<std::size_t>(l.dec(i) + 1)].value.col(0);
        f.dec_input.push_back(std::move(a));
        if (i + 1 < l.layers) a = leaky(out, slope);
        f.dec_z.push_back(std::move(out));
    }
    // (1, b * res^2) -> (res^2, b)
    f.logits = Eigen::Map<const Eigen::MatrixXd>(f.dec_z.back().data(), static_cast<Eigen::Index>(l.res) * l.res, b);
}

LossTerms forward_backward(const VaeModel& m, const Eigen::MatrixXd& images, const Eigen::MatrixXd& eps,
                           std::vector<Eigen::MatrixXd>* grads) {
    const auto l = layout_of(m.config());
    const auto& t = m.tensors();
    const int b = static_cast<int>(images.cols());
    const double beta = m.config().kl_weight;
    const double slope = m.config().leaky_slope;
    if (images.rows() != static_cast<Eigen::Index>(l.res) * l.res || eps.rows() != m.latent_dim() || eps.cols() != b) {
        throw Error(ErrorCode::DimensionMismatch, "VAE batch does not match the model");
    }
    Forward f;
    run_encoder(m, l, images, f);
    const Eigen::MatrixXd sd = (0.5 * f.logvar.array()).exp();
    f.z = f.mu.array() + sd.array() * eps.array();
    run_decoder(m, l, f.z, f);

    const auto& lg = f.logits.array();
    const Eigen::ArrayXXd bce = lg.max(0.0) - lg * images.array() + (-lg.abs()).exp().log1p();
    LossTerms loss;
    loss.reconstruction = bce.sum() / b;
    loss.kl = -0.5 * (1.0 + f.logvar.array() - f.mu.array().square() - f.logvar.array().exp()).sum() / b;
    loss.total = loss.reconstruction + beta * loss.kl;
    if (!grads) return loss;

    grads->assign(t.size(), {});
    // d logits
    Eigen::MatrixXd d = ((1.0 / (1.0 + (-lg).exp())) - images.array()) / b;
    Eigen::MatrixXd da = Eigen::Map<const Eigen::MatrixXd>(d.data(), 1, d.size());
    for (int i = l.layers - 1; i >= 0; --i) {
        const int s = l.size_at_decoder(i) * 2;
        if (i + 1 < l.layers) leaky_backward(da, f.dec_z[static_cast<std::size_t>(i)], slope);
        const auto& w = t[static_cast<std::size_t>(l.dec(i))].value;
        const Eigen::MatrixXd dcols = im2col(da, l.dec_out[static_cast<std::size_t>(i)], b, s, s);
        (*grads)[static_cast<std::size_t>(l.dec(i))] = f.dec_input[static_cast<std::size_t>(i)] * dcols.transpose();
        (*grads)[static_cast<std::size_t>(l.dec(i) + 1)] = da.rowwise().sum();
        da = w * dcols;
    }
    Eigen::MatrixXd dflat = flatten(da, l.dec_in[0], b, l.side * l.side);
    leaky_backward(dflat, f.din_z, slope);
    (*grads)[static_cast<std::size_t>(l.din_w)] = dflat * f.z.transpose();
    (*grads)[static_cast<std::size_t>(l.din_b)] = dflat.rowwise().sum();
    const Eigen::MatrixXd dz = t[static_cast<std::size_t>(l.din_w)].value.transpose() * dflat;

    const Eigen::MatrixXd dmu = dz + (beta / b) * f.mu;
    const Eigen::MatrixXd dlv = (dz.array() * eps.array() * 0.5 * sd.array() +
                                 (beta / b) * 0.5 * (f.logvar.array().exp() - 1.0)).matrix();
    (*grads)[static_cast<std::size_t>(l.mu_w)] = dmu * f.flat.transpose();
    (*grads)[static_cast<std::size_t>(l.mu_b)] = dmu.rowwise().sum();
    (*grads)[static_cast<std::size_t>(l.lv_w)] = dlv * f.flat.transpose();
    (*grads)[static_cast<std::size_t>(l.lv_b)] = dlv.rowwise().sum();
    Eigen::MatrixXd dh = t[static_cast<std::size_t>(l.mu_w)].value.transpose() * dmu +
                         t[static_cast<std::size_t>(l.lv_w)].value.transpose() * dlv;
    da = unflatten(dh, l.enc_out.back(), b, l.side * l.side);
    for (int i = l.layers - 1; i >= 0; --i) {
        const int s = l.size_at_encoder(i);
        leaky_backward(da, f.enc_z[static_cast<std::size_t>(i)], slope);
        (*grads)[static_cast<std::size_t>(l.enc(i))] = da * f.enc_cols[static_cast<std::size_t>(i)].transpose();
        (*grads)[static_cast<std::size_t>(l.enc(i) + 1)] = da.rowwise().sum();
        if (i > 0) da = col2im(t[static_cast<std::size_t>(l.enc(i))].value.transpose() * da, l.enc_in[static_cast<std::size_t>(i)], b, s, s);
    }
    return loss;
}

}  // namespace

void VaeModel::encode_batch(const Eigen::MatrixXd& images, Eigen::MatrixXd& mu, Eigen::MatrixXd& logvar) const {
    const auto l = layout_of(config_);
    if (images.rows() != static_cast<Eigen::Index>(l.res) * l.res) {
        throw Error(ErrorCode::DimensionMismatch, "image size does not match the model resolution");
    }
    Forward f;
    run_encoder(*this, l, images, f);
    mu = std::move(f.mu);
    logvar = std::move(f.logvar);
}

Eigen::MatrixXd VaeModel::decode_logits(const Eigen::MatrixXd& latents) const {
    if (latents.rows() != latent_dim()) throw Error(ErrorCode::DimensionMismatch, "latent dimension does not match the model");
    const auto l = layout_of(config_);
    Forward f;
    run_decoder(*this, l, latents, f);
    return std::move(f.logits);
}

LossTerms VaeModel::loss(const Eigen::MatrixXd& images, const Eigen::MatrixXd& eps, std::vector<double>* gradient) const {
    if (!gradient) return forward_backward(*this, images, eps, nullptr);
    std::vector<Eigen::MatrixXd> grads;
    const auto terms = forward_backward(*this, images, eps, &grads);
    gradient->clear();
    gradient->reserve(parameter_count());
    for (const auto& g : grads) gradient->insert(gradient->end(), g.data(), g.data() + g.size());
    return terms;
}

Eigen::VectorXd image_of(const encoding::Bitmap& bitmap) {
    const int r = bitmap.resolution();
    Eigen::VectorXd v(static_cast<Eigen::Index>(r) * r);
    for (int y = 0; y < r; ++y)
        for (int x = 0; x < r; ++x) v(static_cast<Eigen::Index>(y) * r + x) = bitmap.at(x, y) ? 1.0 : 0.0;
    return v;
}

namespace {

struct Adam {
    std::vector<Eigen::MatrixXd> m, v;
    long t = 0;
};

// One full training attempt; returns false when the loss turned non-finite.
bool train_attempt(VaeModel& model, const Eigen::MatrixXd& images, double lr) {
    const auto& c = model.config();
    std::mt19937_64 rng(c.rng_seed ^ 0x9e3779b97f4a7c15ull);
    std::normal_distribution<double> normal;
    Adam adam;
    for (const auto& t : model.tensors()) {
        adam.m.push_back(Eigen::MatrixXd::Zero(t.value.rows(), t.value.cols()));
        adam.v.push_back(Eigen::MatrixXd::Zero(t.value.rows(), t.value.cols()));
    }
    const double b1 = 0.9;
    const double b2 = 0.999;
    const auto n = static_cast<int>(images.cols());
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::vector<Eigen::MatrixXd> grads;
    model.history.clear();
    for (int epoch = 0; epoch < c.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        LossTerms sum;
        for (int start = 0; start < n; start += c.batch_size) {
            const int b = std::min(c.batch_size, n - start);
            Eigen::MatrixXd batch(images.rows(), b);
            for (int i = 0; i < b; ++i) batch.col(i) = images.col(order[static_cast<std::size_t>(start + i)]);
            Eigen::MatrixXd eps(c.latent_dim, b);
            for (Eigen::Index j = 0; j < eps.cols(); ++j)
                for (Eigen::Index i = 0; i < eps.rows(); ++i) eps(i, j) = normal(rng);
            const auto loss = forward_backward(model, batch, eps, &grads);
            if (!std::isfinite(loss.total)) return false;
            sum.total += loss.total * b;
            sum.reconstruction += loss.reconstruction * b;
            sum.kl += loss.kl * b;
            ++adam.t;
            const double c1 = 1.0 - std::pow(b1, static_cast<double>(adam.t));
            const double c2 = 1.0 - std::pow(b2, static_cast<double>(adam.t));
            auto& tensors = model.tensors();
            for (std::size_t k = 0; k < tensors.size(); ++k) {
                adam.m[k] = b1 * adam.m[k] + (1.0 - b1) * grads[k];
                adam.v[k] = b2 * adam.v[k] + (1.0 - b2) * grads[k].cwiseAbs2();
                tensors[k].value.array() -= lr * (adam.m[k].array() / c1) / ((adam.v[k].array() / c2).sqrt() + 1e-8);
            }
        }
        model.history.push_back({sum.total / n, sum.reconstruction / n, sum.kl / n});
        if (!std::isfinite(model.history.back().total)) return false;
    }
    for (auto& t : model.tensors()) {
        if (!t.value.allFinite()) return false;
    }
    return true;
}

}  // namespace

VaeModel train_vae(const std::vector<encoding::Bitmap>& bitmaps, const VaeConfig& config) {
    if (auto errors = config.validate(); !errors.empty()) {
        throw Error(ErrorCode::ValidationError, "invalid VAE configuration", std::move(errors));
    }
    if (bitmaps.size() < 100) {
        throw Error(ErrorCode::ValidationError, "VAE training needs at least 100 bitmaps",
                    {{"bitmaps", "got " + std::to_string(bitmaps.size())}});
    }
    Eigen::MatrixXd images(static_cast<Eigen::Index>(config.input_resolution) * config.input_resolution,
                           static_cast<Eigen::Index>(bitmaps.size()));
    for (std::size_t i = 0; i < bitmaps.size(); ++i) {
        if (bitmaps[i].resolution() != config.input_resolution) {
            throw Error(ErrorCode::DimensionMismatch, "bitmap resolution differs from the VAE input resolution");
        }
        images.col(static_cast<Eigen::Index>(i)) = image_of(bitmaps[i]);
    }
    double lr = config.learning_rate;
    for (int attempt = 0; attempt <= 3; ++attempt) {
        VaeModel model(config);
        model.restarts = attempt;
        if (train_attempt(model, images, lr)) {
            // Weights are stored as f32; keep the in-memory model identical.
            for (auto& t : model.tensors())
                t.value = t.value.unaryExpr([](double v) { return static_cast<double>(static_cast<float>(v)); });
            return model;
        }
        lr /= 10.0;
    }
    throw Error(ErrorCode::DivergedTraining, "VAE loss became non-finite after 3 restarts");
}

std::vector<double> encode(const VaeModel& model, const encoding::Bitmap& bitmap) {
    if (bitmap.resolution() != model.resolution()) {
        throw Error(ErrorCode::DimensionMismatch, "bitmap resolution differs from the VAE input resolution");
    }
    Eigen::MatrixXd mu;
    Eigen::MatrixXd lv;
    model.encode_batch(image_of(bitmap), mu, lv);
    return {mu.data(), mu.data() + mu.size()};
}

encoding::Bitmap decode(const VaeModel& model, const std::vector<double>& latent) {
    if (static_cast<int>(latent.size()) != model.latent_dim()) {
        throw Error(ErrorCode::ValidationError, "latent vector has " + std::to_string(latent.size()) +
                                                    " components, model expects " + std::to_string(model.latent_dim()));
    }
    for (double v : latent)
        if (!std::isfinite(v)) throw Error(ErrorCode::ValidationError, "latent components must be finite");
    const Eigen::VectorXd z = Eigen::Map<const Eigen::VectorXd>(latent.data(), static_cast<Eigen::Index>(latent.size()));
    const Eigen::MatrixXd logits = model.decode_logits(z);
    const int r = model.resolution();
    encoding::Bitmap bm(r);
    for (int y = 0; y < r; ++y)
        for (int x = 0; x < r; ++x) bm.set(x, y, logits(static_cast<Eigen::Index>(y) * r + x, 0) >= 0.0);
    if (bm.solid_count() == 0) throw Error(ErrorCode::DegenerateShape, "decoded shape is empty");
    return bm.largest_component();
}

}  // namespace fda::genmodel
