#include <sstream>

#include <nlohmann/json.hpp>

#include "fda/encoding.hpp"
#include "fda/error.hpp"

namespace fda::encoding {

std::string to_pbm(const Bitmap& bitmap) {
    const int r = bitmap.resolution();
    std::string out = "P1\n" + std::to_string(r) + " " + std::to_string(r) + "\n";
    out.reserve(out.size() + static_cast<std::size_t>(r) * (2 * r));
    for (int y = 0; y < r; ++y) {
        for (int x = 0; x < r; ++x) {
            out.push_back(bitmap.at(x, y) ? '1' : '0');
            out.push_back(x + 1 < r ? ' ' : '\n');
        }
    }
    return out;
}

Bitmap from_pbm(const std::string& text) {
    std::istringstream in(text);
    std::string magic;
    int w = 0;
    int h = 0;
    in >> magic >> w >> h;
    if (magic != "P1" || w <= 0 || w != h) {
        throw Error(ErrorCode::ValidationError, "expected square plain PBM (P1)");
    }
    Bitmap bm(w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            char c = 0;
            do {
                if (!in.get(c)) throw Error(ErrorCode::ValidationError, "truncated PBM body");
            } while (c != '0' && c != '1');
            bm.set(x, y, c == '1');
        }
    }
    return bm;
}

nlohmann::json to_json(const Bitmap& bitmap) {
    auto rows = nlohmann::json::array();
    for (int y = 0; y < bitmap.resolution(); ++y) {
        auto row = nlohmann::json::array();
        for (int x = 0; x < bitmap.resolution(); ++x) row.push_back(bitmap.at(x, y) ? 1 : 0);
        rows.push_back(std::move(row));
    }
    return rows;
}

Bitmap bitmap_from_json(const nlohmann::json& rows) {
    if (!rows.is_array() || rows.empty()) throw Error(ErrorCode::ValidationError, "bitmap must be a non-empty array of rows");
    const int r = static_cast<int>(rows.size());
    Bitmap bm(r);
    for (int y = 0; y < r; ++y) {
        const auto& row = rows[static_cast<std::size_t>(y)];
        if (!row.is_array() || static_cast<int>(row.size()) != r) {
            throw Error(ErrorCode::ValidationError, "bitmap rows must form a square grid");
        }
        for (int x = 0; x < r; ++x) bm.set(x, y, row[static_cast<std::size_t>(x)].get<int>() != 0);
    }
    return bm;
}

nlohmann::json to_json(const ShapeGenome& genome) {
    return nlohmann::json(genome.params());
}

ShapeGenome genome_from_json(const nlohmann::json& values) {
    if (!values.is_array()) throw Error(ErrorCode::ValidationError, "genome must be a JSON array", {{"genome", "not an array"}});
    std::vector<double> params;
    for (const auto& v : values) {
        if (!v.is_number()) throw Error(ErrorCode::ValidationError, "genome entries must be numbers", {{"genome", "non-numeric entry"}});
        params.push_back(v.get<double>());
    }
    return ShapeGenome(params);
}

std::string to_rle(const Bitmap& bitmap) {
    std::string out = std::to_string(bitmap.resolution()) + ":";
    const auto cells = bitmap.cells();
    std::uint8_t current = 0;
    std::size_t run = 0;
    bool first = true;
    auto flush = [&] {
        if (!first) out.push_back(',');
        out += std::to_string(run);
        first = false;
    };
    for (auto c : cells) {
        if (c != current) {
            flush();
            current = c;
            run = 0;
        }
        ++run;
    }
    flush();
    return out;
}

Bitmap from_rle(const std::string& text) {
    const auto colon = text.find(':');
    if (colon == std::string::npos) throw Error(ErrorCode::ValidationError, "malformed RLE bitmap");
    const int r = std::stoi(text.substr(0, colon));
    Bitmap bm(r);
    std::size_t pos = 0;
    bool solid = false;
    std::istringstream in(text.substr(colon + 1));
    std::string token;
    while (std::getline(in, token, ',')) {
        const auto n = static_cast<std::size_t>(std::stoul(token));
        if (pos + n > bm.size()) throw Error(ErrorCode::ValidationError, "RLE runs exceed bitmap size");
        for (std::size_t i = 0; i < n; ++i, ++pos) {
            bm.set(static_cast<int>(pos % r), static_cast<int>(pos / r), solid);
        }
        solid = !solid;
    }
    if (pos != bm.size()) throw Error(ErrorCode::ValidationError, "RLE runs do not cover the bitmap");
    return bm;
}

}  // namespace fda::encoding
