#include <cmath>
#include <numbers>
#include <set>

#include <nlohmann/json.hpp>

#include "fda/error.hpp"
#include "fda/store.hpp"

namespace fda::store {

using nlohmann::json;

RunConfig RunConfig::desk() {
    RunConfig c;
    c.sphen = qd::SphenConfig::desk();
    c.lbm = lbm::LbmConfig::desk();
    c.vae.epochs = 120;
    c.vae.archive_capacity = 600;
    c.vae.archive_updates = 300;
    return c;
}

namespace {

json sphen_json(const qd::SphenConfig& s) {
    return {{"init_samples", s.init_samples},
            {"batch_size", s.batch_size},
            {"total_budget", s.total_budget},
            {"archive_updates_per_round", s.archive_updates_per_round},
            {"children_per_update", s.children_per_update},
            {"mutation_sigma", s.mutation_sigma},
            {"archive_capacity", s.archive_capacity},
            {"rng_seed", s.rng_seed},
            {"ucb_kappa", s.ucb_kappa},
            {"resolution", s.resolution}};
}

json lbm_json(const lbm::LbmConfig& l) {
    return {{"mach", l.mach},
            {"reynolds", l.reynolds},
            {"domain_nx", l.domain_nx},
            {"domain_ny", l.domain_ny},
            {"obstacle_x", l.obstacle_x},
            {"obstacle_y", l.obstacle_y ? json(*l.obstacle_y) : json(nullptr)},
            {"obstacle_scale", l.obstacle_scale},
            {"char_length", l.char_length},
            {"warmup_steps", l.warmup_steps},
            {"measure_steps", l.measure_steps},
            {"snapshot_interval", l.snapshot_interval},
            {"keep_snapshots", l.keep_snapshots}};
}

// Reads known keys of one object, recording type errors and unknown keys.
class Section {
public:
    Section(const json& j, std::string prefix, std::vector<FieldError>& errors)
        : j_(j), prefix_(std::move(prefix)), errors_(errors) {}

    void integer(const char* key, int& out) {
        if (const auto* v = find(key)) {
            if (v->is_number_integer() && v->get<long long>() >= INT32_MIN && v->get<long long>() <= INT32_MAX) {
                out = v->get<int>();
            } else {
                wrong(key, "must be an integer");
            }
        }
    }
    void unsigned64(const char* key, std::uint64_t& out) {
        if (const auto* v = find(key)) {
            if (v->is_number_unsigned() || (v->is_number_integer() && v->get<long long>() >= 0)) {
                out = v->get<std::uint64_t>();
            } else {
                wrong(key, "must be a non-negative integer");
            }
        }
    }
    void number(const char* key, double& out) {
        if (const auto* v = find(key)) {
            if (v->is_number()) out = v->get<double>();
            else wrong(key, "must be a number");
        }
    }
    void boolean(const char* key, bool& out) {
        if (const auto* v = find(key)) {
            if (v->is_boolean()) out = v->get<bool>();
            else wrong(key, "must be true or false");
        }
    }
    void optional_integer(const char* key, std::optional<int>& out) {
        if (const auto* v = find(key)) {
            if (v->is_null()) {
                out.reset();
            } else {
                int value = 0;
                integer(key, value);
                out = value;
            }
        }
    }
    void integers(const char* key, std::vector<int>& out) {
        if (const auto* v = find(key)) {
            if (!v->is_array()) return wrong(key, "must be a list of integers");
            std::vector<int> values;
            for (const auto& e : *v) {
                if (!e.is_number_integer()) return wrong(key, "must be a list of integers");
                values.push_back(e.get<int>());
            }
            out = std::move(values);
        }
    }
    void finish() {
        if (!j_.is_object()) return;
        for (const auto& [key, value] : j_.items()) {
            if (!seen_.count(key)) errors_.push_back({prefix_ + key, "unknown field"});
        }
    }

private:
    const json* find(const char* key) {
        seen_.insert(key);
        if (!j_.is_object()) return nullptr;
        const auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }
    void wrong(const char* key, const char* message) { errors_.push_back({prefix_ + key, message}); }

    const json& j_;
    std::string prefix_;
    std::vector<FieldError>& errors_;
    std::set<std::string> seen_;
};

void lbm_errors(const lbm::LbmConfig& l, int resolution, std::vector<FieldError>& e) {
    if (!(l.mach > 0.0 && l.mach < 0.3)) e.push_back({"lbm.mach", "must lie in (0, 0.3)"});
    if (!(l.reynolds > 0.0) || !std::isfinite(l.reynolds)) {
        e.push_back({"lbm.reynolds", "must be positive"});
    } else if (l.mach > 0.0 && l.char_length > 0.0) {
        const double tau = 3.0 * (l.mach / std::numbers::sqrt3) * l.char_length / l.reynolds + 0.5;
        if (!(tau > 0.5 && tau <= 2.0)) e.push_back({"lbm.reynolds", "relaxation time outside (0.5, 2]"});
    }
    if (!(l.char_length > 0.0) || !std::isfinite(l.char_length)) e.push_back({"lbm.char_length", "must be positive"});
    if (l.domain_nx < 8) e.push_back({"lbm.domain_nx", "must be at least 8"});
    if (l.domain_ny < 8) e.push_back({"lbm.domain_ny", "must be at least 8"});
    if (l.obstacle_scale < 1 || resolution % std::max(1, l.obstacle_scale) != 0) {
        e.push_back({"lbm.obstacle_scale", "must be a positive divisor of the bitmap resolution"});
    } else {
        const int r = resolution / l.obstacle_scale;
        if (l.obstacle_x < 1 || l.obstacle_x + r > l.domain_nx - 1) {
            e.push_back({"lbm.obstacle_x", "obstacle does not fit between inflow and outflow"});
        }
        const int y0 = l.obstacle_row(r);
        if (y0 < 0 || y0 + r > l.domain_ny) e.push_back({"lbm.obstacle_y", "obstacle does not fit vertically"});
    }
    if (l.warmup_steps < 0) e.push_back({"lbm.warmup_steps", "must be non-negative"});
    if (l.measure_steps < 1) e.push_back({"lbm.measure_steps", "must be at least 1"});
    if (l.snapshot_interval < 1) e.push_back({"lbm.snapshot_interval", "must be at least 1"});
}

}  // namespace

json to_json(const RunConfig& c) {
    return {{"evaluator", c.evaluator == EvaluatorKind::Lbm ? "lbm" : "synthetic"},
            {"train_vae", c.train_vae},
            {"sphen", sphen_json(c.sphen)},
            {"lbm", lbm_json(c.lbm)},
            {"vae", genmodel::to_json(c.vae)}};
}

std::vector<FieldError> validate(const RunConfig& c) {
    auto errors = c.sphen.validate();
    lbm_errors(c.lbm, c.sphen.resolution, errors);
    auto vae = c.vae.validate();
    errors.insert(errors.end(), vae.begin(), vae.end());
    if (c.vae.input_resolution != c.sphen.resolution) {
        errors.push_back({"vae.input_resolution", "must equal sphen.resolution"});
    }
    return errors;
}

RunConfig config_from_json(const json& j) {
    std::vector<FieldError> errors;
    RunConfig c;
    if (!j.is_object()) {
        throw Error(ErrorCode::ValidationError, "configuration must be a JSON object", {{"", "must be an object"}});
    }
    if (j.contains("evaluator")) {
        const auto& v = j.at("evaluator");
        if (v == "lbm") c.evaluator = EvaluatorKind::Lbm;
        else if (v == "synthetic") c.evaluator = EvaluatorKind::Synthetic;
        else errors.push_back({"evaluator", "must be \"lbm\" or \"synthetic\""});
    }
    if (j.contains("train_vae")) {
        if (j.at("train_vae").is_boolean()) c.train_vae = j.at("train_vae").get<bool>();
        else errors.push_back({"train_vae", "must be true or false"});
    }
    auto section = [&](const char* name) -> const json& {
        static const json empty = json::object();
        if (!j.contains(name)) return empty;
        if (!j.at(name).is_object()) {
            errors.push_back({name, "must be an object"});
            return empty;
        }
        return j.at(name);
    };
    {
        Section s(section("sphen"), "sphen.", errors);
        auto& x = c.sphen;
        s.integer("init_samples", x.init_samples);
        s.integer("batch_size", x.batch_size);
        s.integer("total_budget", x.total_budget);
        s.integer("archive_updates_per_round", x.archive_updates_per_round);
        s.integer("children_per_update", x.children_per_update);
        s.number("mutation_sigma", x.mutation_sigma);
        s.integer("archive_capacity", x.archive_capacity);
        s.unsigned64("rng_seed", x.rng_seed);
        s.number("ucb_kappa", x.ucb_kappa);
        s.integer("resolution", x.resolution);
        s.finish();
    }
    {
        Section s(section("lbm"), "lbm.", errors);
        auto& x = c.lbm;
        s.number("mach", x.mach);
        s.number("reynolds", x.reynolds);
        s.integer("domain_nx", x.domain_nx);
        s.integer("domain_ny", x.domain_ny);
        s.integer("obstacle_x", x.obstacle_x);
        s.optional_integer("obstacle_y", x.obstacle_y);
        s.integer("obstacle_scale", x.obstacle_scale);
        s.number("char_length", x.char_length);
        s.integer("warmup_steps", x.warmup_steps);
        s.integer("measure_steps", x.measure_steps);
        s.integer("snapshot_interval", x.snapshot_interval);
        s.boolean("keep_snapshots", x.keep_snapshots);
        s.finish();
    }
    {
        Section s(section("vae"), "vae.", errors);
        auto& x = c.vae;
        s.integer("latent_dim", x.latent_dim);
        s.integer("input_resolution", x.input_resolution);
        s.integers("conv_layers", x.conv_filters);
        s.number("kl_weight", x.kl_weight);
        s.number("learning_rate", x.learning_rate);
        s.integer("epochs", x.epochs);
        s.integer("batch_size", x.batch_size);
        s.unsigned64("rng_seed", x.rng_seed);
        s.number("leaky_slope", x.leaky_slope);
        s.integer("archive_capacity", x.archive_capacity);
        s.integer("archive_updates", x.archive_updates);
        s.finish();
    }
    static const std::set<std::string> known = {"evaluator", "train_vae", "sphen", "lbm", "vae"};
    for (const auto& [key, value] : j.items()) {
        if (!known.count(key)) errors.push_back({key, "unknown field"});
    }
    auto invariants = validate(c);
    errors.insert(errors.end(), invariants.begin(), invariants.end());
    if (!errors.empty()) throw Error(ErrorCode::ValidationError, "invalid configuration", std::move(errors));
    return c;
}

RunConfig parse_config(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::ValidationError, std::string("configuration is not valid JSON: ") + e.what(),
                    {{"", "malformed JSON"}});
    }
    return config_from_json(j);
}

}  // namespace fda::store
