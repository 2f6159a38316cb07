#pragma once

// Minimal CSV reading/writing for the artifact formats. Fields never contain
// commas or newlines (free text is sanitized on write).

#include <charconv>
#include <string>
#include <string_view>
#include <vector>

#include "fda/error.hpp"

namespace fda::csv {

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

inline std::vector<std::string> split(std::string_view line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const auto comma = line.find(',', start);
        out.emplace_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

inline Table parse(std::string_view text) {
    Table t;
    std::size_t pos = 0;
    bool first = true;
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) {
            throw Error(ErrorCode::CorruptArtifact, "CSV text is not newline-terminated");
        }
        auto line = text.substr(pos, end - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        pos = end + 1;
        if (first) {
            t.header = split(line);
            first = false;
        } else if (!line.empty()) {
            t.rows.push_back(split(line));
        }
    }
    if (first) throw Error(ErrorCode::CorruptArtifact, "CSV text is empty");
    return t;
}

/// Shortest representation that round-trips exactly.
inline std::string format_double(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, r.ptr};
}

inline double parse_double(std::string_view s) {
    double v = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) {
        throw Error(ErrorCode::CorruptArtifact, "bad number '" + std::string(s) + "' in CSV");
    }
    return v;
}

inline long parse_long(std::string_view s) {
    long v = 0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) {
        throw Error(ErrorCode::CorruptArtifact, "bad integer '" + std::string(s) + "' in CSV");
    }
    return v;
}

inline std::string sanitize(std::string_view s) {
    std::string out(s);
    for (auto& c : out)
        if (c == ',' || c == '\n' || c == '\r') c = c == ',' ? ';' : ' ';
    return out;
}

}  // namespace fda::csv
