#include <bit>
#include <cstring>

#include <nlohmann/json.hpp>

#include "fda/error.hpp"
#include "fda/genmodel.hpp"

namespace fda::genmodel {

namespace {

constexpr char kMagic[4] = {'F', 'D', 'A', 'V'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

struct Reader {
    const std::vector<std::uint8_t>& data;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (data.size() - pos < n) throw Error(ErrorCode::CorruptArtifact, "VAE weight file is truncated");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data[pos + static_cast<std::size_t>(i)]) << (8 * i);
        pos += 4;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(data.data() + pos), n);
        pos += n;
        return s;
    }
};

}  // namespace

std::vector<std::uint8_t> save_weights(const VaeModel& model) {
    std::vector<std::uint8_t> out(kMagic, kMagic + 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(model.tensors().size()));
    for (const auto& t : model.tensors()) {
        put_u32(out, static_cast<std::uint32_t>(t.name.size()));
        out.insert(out.end(), t.name.begin(), t.name.end());
        put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
        for (int d : t.shape) put_u32(out, static_cast<std::uint32_t>(d));
    }
    for (const auto& t : model.tensors()) {
        for (Eigen::Index i = 0; i < t.value.size(); ++i) put_f32(out, static_cast<float>(t.value.data()[i]));
    }
    return out;
}

nlohmann::json sidecar(const VaeModel& model) {
    nlohmann::json history = nlohmann::json::array();
    for (const auto& h : model.history) {
        history.push_back({{"total", h.total}, {"reconstruction", h.reconstruction}, {"kl", h.kl}});
    }
    return {{"format", "FDAV"}, {"version", kVersion},  {"config", to_json(model.config())},
            {"history", history}, {"restarts", model.restarts}};
}

VaeModel load_model(const std::vector<std::uint8_t>& weights, const nlohmann::json& side) {
    VaeModel model;
    try {
        model = VaeModel(vae_config_from_json(side.at("config")));
        for (const auto& h : side.at("history")) {
            model.history.push_back({h.at("total").get<double>(), h.at("reconstruction").get<double>(), h.at("kl").get<double>()});
        }
        model.restarts = side.value("restarts", 0);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::CorruptArtifact, std::string("VAE sidecar: ") + e.what());
    } catch (const Error& e) {
        if (e.code() != ErrorCode::ValidationError) throw;
        throw Error(ErrorCode::CorruptArtifact, "VAE sidecar holds an invalid configuration", e.fields());
    }
    Reader r{weights};
    if (r.str(4) != std::string(kMagic, 4)) throw Error(ErrorCode::CorruptArtifact, "not an FDAV weight file");
    if (const auto v = r.u32(); v != kVersion) {
        throw Error(ErrorCode::CorruptArtifact, "unsupported FDAV version " + std::to_string(v));
    }
    auto& tensors = model.tensors();
    if (r.u32() != tensors.size()) throw Error(ErrorCode::CorruptArtifact, "FDAV tensor count does not match the config");
    for (auto& t : tensors) {
        const auto len = r.u32();
        const auto name = r.str(len);
        const auto rank = r.u32();
        if (rank > 8) throw Error(ErrorCode::CorruptArtifact, "FDAV tensor rank out of range");
        std::vector<int> shape;
        for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<int>(r.u32()));
        if (name != t.name || shape != t.shape) {
            throw Error(ErrorCode::CorruptArtifact, "FDAV tensor '" + name + "' does not match the config layout");
        }
    }
    for (auto& t : tensors) {
        for (Eigen::Index i = 0; i < t.value.size(); ++i) t.value.data()[i] = r.f32();
    }
    if (r.pos != weights.size()) throw Error(ErrorCode::CorruptArtifact, "trailing bytes after FDAV weights");
    return model;
}

}  // namespace fda::genmodel
