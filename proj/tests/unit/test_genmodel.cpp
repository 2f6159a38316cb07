#include <algorithm>
#include <cmath>
#include <random>

#include <doctest.h>
#include <nlohmann/json.hpp>

#include "fda/error.hpp"
#include "fda/genmodel.hpp"

using namespace fda;
using namespace fda::genmodel;

namespace {

VaeConfig tiny_config() {
    VaeConfig c;
    c.latent_dim = 2;
    c.input_resolution = 8;
    c.conv_filters = {2, 3, 4};
    c.rng_seed = 11;
    return c;
}

VaeConfig small_config() {
    VaeConfig c;
    c.latent_dim = 3;
    c.input_resolution = 16;
    c.conv_filters = {4, 8};
    c.epochs = 40;
    c.batch_size = 16;
    c.learning_rate = 3e-3;
    c.rng_seed = 5;
    return c;
}

std::vector<encoding::Bitmap> random_shapes(int n, int res, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<encoding::Bitmap> out;
    for (int i = 0; i < n; ++i) {
        std::vector<double> g(encoding::kGenomeSize);
        for (auto& v : g) v = u(rng);
        out.push_back(encoding::express(encoding::ShapeGenome(g), res));
    }
    return out;
}

std::vector<encoding::Bitmap> random_pixels(int n, int res, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution solid(0.4);
    std::vector<encoding::Bitmap> out;
    for (int i = 0; i < n; ++i) {
        encoding::Bitmap b(res);
        for (int y = 0; y < res; ++y)
            for (int x = 0; x < res; ++x) b.set(x, y, solid(rng));
        out.push_back(b);
    }
    return out;
}

Eigen::MatrixXd images_of(const std::vector<encoding::Bitmap>& bitmaps) {
    Eigen::MatrixXd m(bitmaps.front().size(), static_cast<Eigen::Index>(bitmaps.size()));
    for (std::size_t i = 0; i < bitmaps.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = image_of(bitmaps[i]);
    return m;
}

// Decoder that outputs logit `bias` everywhere.
void flatten_decoder(VaeModel& m, double bias) {
    auto& t = m.tensors();
    const auto first = t.size() - 2 * m.config().conv_filters.size() - 2;
    for (auto i = first; i < t.size(); ++i) t[i].value.setZero();
    t.back().value.setConstant(bias);
}

const std::vector<encoding::Bitmap>& trained_shapes() {
    static const auto shapes = random_shapes(120, 16, 3);
    return shapes;
}

const VaeModel& trained_model() {
    static const VaeModel m = train_vae(trained_shapes(), small_config());
    return m;
}

}  // namespace

TEST_CASE("KL closed form") {
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(3);
    Eigen::VectorXd lv = Eigen::VectorXd::Zero(3);
    CHECK(kl_divergence(mu, lv) == 0.0);
    mu << 1.0, 0.0, 0.0;
    CHECK(kl_divergence(mu, lv) == doctest::Approx(0.5));
    mu.setZero();
    lv << std::log(2.0), 0.0, 0.0;
    CHECK(kl_divergence(mu, lv) == doctest::Approx(0.5 * (1.0 - std::log(2.0))));
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n;
    for (int i = 0; i < 200; ++i) {
        for (int j = 0; j < 3; ++j) {
            mu(j) = n(rng);
            lv(j) = 2.0 * n(rng);
        }
        CHECK(kl_divergence(mu, lv) > 0.0);
    }
}

TEST_CASE("config validation") {
    VaeConfig c;
    CHECK(c.validate().empty());
    c.latent_dim = 0;
    c.input_resolution = 40;
    c.learning_rate = 0.0;
    const auto errors = c.validate();
    REQUIRE(errors.size() == 3);
    CHECK(errors[0].field == "vae.latent_dim");
    CHECK(errors[1].field == "vae.input_resolution");
    CHECK(errors[2].field == "vae.learning_rate");
    CHECK_THROWS_AS(VaeModel{c}, Error);
    CHECK(vae_config_from_json(to_json(small_config())) == small_config());
}

TEST_CASE("default layout reduces 64 to 4 over four layers") {
    const VaeModel m{VaeConfig{}};
    const auto& t = m.tensors();
    CHECK(t.size() == 2 * 4 + 6 + 2 * 4);
    CHECK(t[8].name == "mu.w");
    CHECK(t[8].shape == std::vector<int>{5, 64 * 4 * 4});
    CHECK(t.back().name == "dec3.b");
    CHECK(t.back().shape == std::vector<int>{1, 1});
}

TEST_CASE("analytic gradient matches central differences") {
    VaeModel base(tiny_config());
    // Zero biases put all-empty patches exactly on the activation kink.
    std::mt19937_64 jitter(4);
    std::normal_distribution<double> n(0.0, 0.05);
    for (std::size_t i = 0; i < base.parameter_count(); ++i) base.set_parameter(i, base.parameter(i) + n(jitter));
    const auto bitmaps = random_pixels(3, 8, 9);
    const auto images = images_of(bitmaps);
    Eigen::MatrixXd eps(2, 3);
    eps << 0.3, -1.1, 0.7, 0.5, 0.2, -0.4;
    std::vector<double> grad;
    base.loss(images, eps, &grad);
    REQUIRE(grad.size() == base.parameter_count());

    std::mt19937_64 rng(21);
    std::uniform_int_distribution<std::size_t> pick(0, base.parameter_count() - 1);
    int checked = 0;
    while (checked < 5) {
        const auto i = pick(rng);
        if (std::abs(grad[i]) < 1e-4) continue;  // relative error is meaningless near zero
        VaeModel m = base;
        const double h = 1e-5;
        const double p = m.parameter(i);
        m.set_parameter(i, p + h);
        const double up = m.loss(images, eps, nullptr).total;
        m.set_parameter(i, p - h);
        const double down = m.loss(images, eps, nullptr).total;
        const double numeric = (up - down) / (2.0 * h);
        INFO("parameter " << i << " analytic " << grad[i] << " numeric " << numeric);
        CHECK(std::abs(numeric - grad[i]) / std::max(std::abs(numeric), std::abs(grad[i])) < 1e-4);
        ++checked;
    }
}

TEST_CASE("untrained decoder output is a valid probability") {
    const VaeModel m(small_config());
    const Eigen::MatrixXd z = Eigen::MatrixXd::Random(3, 4);
    const auto logits = m.decode_logits(z);
    CHECK(logits.rows() == 256);
    CHECK(logits.allFinite());
    const Eigen::ArrayXXd p = 1.0 / (1.0 + (-logits.array()).exp());
    CHECK(p.minCoeff() >= 0.0);
    CHECK(p.maxCoeff() <= 1.0);
}

TEST_CASE("decode threshold, tie rule and degenerate output") {
    VaeModel m(small_config());
    flatten_decoder(m, 0.0);  // sigmoid exactly 0.5 everywhere
    const auto full = decode(m, {0.1, 0.2, 0.3});
    CHECK(full.solid_count() == 256);
    flatten_decoder(m, -3.0);
    CHECK_THROWS_AS(decode(m, {0.0, 0.0, 0.0}), Error);
    try {
        decode(m, {0.0, 0.0, 0.0});
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::DegenerateShape);
    }
    CHECK_THROWS_AS(decode(m, {0.0, 0.0}), Error);
    CHECK_THROWS_AS(decode(m, {0.0, NAN, 0.0}), Error);
}

TEST_CASE("training reduces the loss and is deterministic") {
    const auto& m = trained_model();
    REQUIRE(m.history.size() == 40);
    CHECK(m.history.back().total < m.history.front().total);
    CHECK(m.restarts == 0);
    const auto again = train_vae(trained_shapes(), small_config());
    CHECK(again == m);
    CHECK(again.history.back().total == m.history.back().total);
}

TEST_CASE("training preconditions") {
    const auto few = random_shapes(99, 16, 4);
    CHECK_THROWS_AS(train_vae(few, small_config()), Error);
    auto mixed = random_shapes(100, 16, 4);
    mixed[7] = encoding::express(encoding::ShapeGenome(), 32);
    CHECK_THROWS_AS(train_vae(mixed, small_config()), Error);
}

TEST_CASE("diverging training gives up after three restarts") {
    auto c = small_config();
    c.learning_rate = 1e300;
    c.epochs = 2;
    try {
        train_vae(random_shapes(100, 16, 4), c);
        FAIL("expected DivergedTraining");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::DivergedTraining);
    }
}

TEST_CASE("identical bitmaps are reconstructed") {
    const auto shape = encoding::express(encoding::ShapeGenome(), 16);
    const std::vector<encoding::Bitmap> same(100, shape);
    auto c = small_config();
    c.epochs = 1000;
    const auto m = train_vae(same, c);
    const auto z = encode(m, shape);
    CHECK(encoding::iou(decode(m, z), shape) > 0.95);
    double peak = 0.0;
    for (const auto& h : m.history) peak = std::max(peak, h.kl);
    CHECK(peak > 1.0);  // the latent is used early on
    CHECK(m.history.back().kl < 1e-2);
    for (double v : z) CHECK(std::abs(v) < 0.1);
}

TEST_CASE("encode and decode are deterministic, distinct shapes get distinct latents") {
    const auto& m = trained_model();
    const auto& shapes = trained_shapes();
    const auto z1 = encode(m, shapes[0]);
    CHECK(z1 == encode(m, shapes[0]));
    CHECK(decode(m, z1) == decode(m, z1));
    double far = 0.0;
    std::size_t j = 1;
    for (std::size_t i = 1; i < shapes.size(); ++i) {
        const double d = encoding::iou(shapes[0], shapes[i]);
        if (i == 1 || d < far) {
            far = d;
            j = i;
        }
    }
    const auto z2 = encode(m, shapes[j]);
    double dist = 0.0;
    for (std::size_t k = 0; k < z1.size(); ++k) dist += (z1[k] - z2[k]) * (z1[k] - z2[k]);
    CHECK(std::sqrt(dist) > 1e-3);
    CHECK_THROWS_AS(encode(m, encoding::express(encoding::ShapeGenome(), 32)), Error);
}

TEST_CASE("decoded bitmaps are single components") {
    const auto& m = trained_model();
    std::mt19937_64 rng(8);
    std::normal_distribution<double> n;
    for (int i = 0; i < 50; ++i) {
        std::vector<double> z = {n(rng), n(rng), n(rng)};
        try {
            CHECK(decode(m, z).is_connected());
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::DegenerateShape);
        }
    }
}

TEST_CASE("FDAV round trip and corruption") {
    const auto& m = trained_model();
    const auto bytes = save_weights(m);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "FDAV");
    CHECK(bytes[4] == 1);
    const auto side = sidecar(m);
    const auto back = load_model(bytes, nlohmann::json::parse(side.dump()));
    CHECK(back == m);
    CHECK(back.history.size() == m.history.size());
    CHECK(back.history.back().total == m.history.back().total);
    CHECK(decode(back, {0.0, 0.0, 0.0}) == decode(m, {0.0, 0.0, 0.0}));

    auto expect_corrupt = [&](const std::vector<std::uint8_t>& b, const nlohmann::json& s) {
        try {
            load_model(b, s);
            FAIL("expected CorruptArtifact");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::CorruptArtifact);
        }
    };
    auto bad = bytes;
    bad[0] = 'X';
    expect_corrupt(bad, side);
    expect_corrupt({bytes.begin(), bytes.end() - 3}, side);
    bad = bytes;
    bad.push_back(0);
    expect_corrupt(bad, side);
    auto other = side;
    other["config"]["latent_dim"] = 4;
    expect_corrupt(bytes, other);
    other = side;
    other.erase("config");
    expect_corrupt(bytes, other);
}

TEST_CASE("latent predictors interpolate training samples at the noise floor") {
    const auto& m = trained_model();
    std::vector<LatentSample> samples;
    for (std::size_t i = 0; i < 30; ++i) {
        const auto& b = trained_shapes()[i];
        const double a = encoding::area(b);
        samples.push_back({b, 1.0 + a, a, 0.5 * a});
    }
    const auto p = fit_latent_predictors(m, samples);
    CHECK(p.area.inputs() == p.u_max.inputs());
    CHECK(p.area.inputs() == p.enstrophy.inputs());
    // Noise floor relative to the signal: condition the rescaled targets at unit signal variance.
    const double scale = std::sqrt(p.area.hyper().signal_variance);
    const surrogate::GPHyperparams floor{p.area.hyper().length_scale, 1.0, surrogate::kNoiseFloor};
    const auto exact = surrogate::GPModel::condition(p.area.inputs(), p.area.targets() / scale, floor);
    double lo = 1e9;
    double hi = -1e9;
    for (const auto& s : samples) {
        lo = std::min(lo, s.area);
        hi = std::max(hi, s.area);
    }
    for (const auto& s : samples) {
        const auto z = encode(m, s.bitmap);
        const Eigen::MatrixXd x = Eigen::Map<const Eigen::RowVectorXd>(z.data(), 3);
        CHECK(std::abs(scale * exact.predict_mean(x)(0) - s.area) < 1e-3 * (hi - lo));
    }
    samples.resize(19);
    CHECK_THROWS_AS(fit_latent_predictors(m, samples), Error);
}

TEST_CASE("latent walk") {
    const auto& m = trained_model();
    std::vector<LatentSample> samples;
    for (std::size_t i = 0; i < 25; ++i) {
        const auto& b = trained_shapes()[i];
        samples.push_back({b, 1.0, encoding::area(b), 0.1});
    }
    const auto p = fit_latent_predictors(m, samples);
    const auto center = encode(m, trained_shapes()[0]);

    const auto one = latent_walk(m, p, center, 1, 1);
    REQUIRE(one.size() == 1);
    CHECK(one[0].latent == center);
    CHECK(*one[0].bitmap == decode(m, center));

    const auto rows = latent_walk(m, p, center, 2);
    REQUIRE(rows.size() == 11);
    CHECK(rows[5].latent == center);
    CHECK(*rows[5].bitmap == decode(m, center));
    CHECK(rows[0].latent[2] == doctest::Approx(center[2] - 2.0));
    CHECK(rows[10].latent[2] == doctest::Approx(center[2] + 2.0));
    CHECK(rows[3].latent[0] == center[0]);
    const auto csv = walk_csv(rows);
    CHECK(csv.rfind("step,z0,z1,z2,degenerate,u_max,area,enstrophy,shape_rle\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 12);

    for (int bad_steps : {0, 4})
        CHECK_THROWS_AS(latent_walk(m, p, center, 0, bad_steps), Error);
    CHECK_THROWS_AS(latent_walk(m, p, center, 3), Error);
    CHECK_THROWS_AS(latent_walk(m, p, {0.0, 0.0}, 0), Error);

    VaeModel flat = m;
    flatten_decoder(flat, -1.0);
    const auto empty = latent_walk(flat, p, center, 0, 3);
    REQUIRE(empty.size() == 3);
    for (const auto& r : empty) CHECK_FALSE(r.bitmap.has_value());
    CHECK(walk_csv(empty).find(",1,") != std::string::npos);
}

TEST_CASE("generate_set") {
    const auto& m = trained_model();
    std::vector<LatentSample> samples;
    for (std::size_t i = 0; i < 40; ++i) {
        const auto& b = trained_shapes()[i];
        const double a = encoding::area(b);
        samples.push_back({b, 1.0 + 2.0 * a + 0.1 * std::sin(9.0 * a), a, a * a});
    }
    const auto p = fit_latent_predictors(m, samples);

    const auto none = generate_set(m, p, 0, 10, 1);
    CHECK(none.latents.rows() == 0);
    CHECK(none.archive.occupancy() == 0);
    CHECK(none.isolines.empty());
    CHECK(generated_csv(none) == "sample_id,z0,z1,z2,degenerate,area,enstrophy,u_max\n");

    const auto set = generate_set(m, p, 2000, 50, 4, 10);
    CHECK(set.latents.rows() == 2000);
    int total = 0;
    for (const auto& b : set.isolines) {
        CHECK(b.min <= b.mean);
        CHECK(b.mean <= b.max);
        CHECK(b.count > 0);
        CHECK(b.a_bin >= 0);
        CHECK(b.a_bin < 10);
        total += b.count;
    }
    CHECK(total == 2000 - set.degenerate_count);
    CHECK(set.archive.occupancy() > 10);
    for (int i : set.archive.occupied()) {
        const auto& e = *set.archive.niche(i);
        CHECK(e.params.size() == 3);
        CHECK(std::isfinite(e.area));
    }
    for (Eigen::Index i = 0; i < 2000; ++i) {
        if (set.degenerate[static_cast<std::size_t>(i)]) {
            CHECK(std::isnan(set.area(i)));
            continue;
        }
        if (i % 200 == 0) {
            std::vector<double> zz = {set.latents(i, 0), set.latents(i, 1), set.latents(i, 2)};
            CHECK(set.area(i) == encoding::area(decode(m, zz)));
        }
    }
    const auto again = generate_set(m, p, 2000, 50, 4, 10);
    CHECK(again.archive == set.archive);
    const auto iso = isoline_csv(set);
    CHECK(std::count(iso.begin(), iso.end(), '\n') == static_cast<long>(set.isolines.size()) + 1);
    CHECK_THROWS_AS(generate_set(m, p, -1, 10, 1), Error);
}
