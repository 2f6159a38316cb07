#include <bit>
#include <cmath>
#include <string>

#include "fda/error.hpp"
#include "fda/surrogate.hpp"

namespace fda::surrogate {

namespace {

struct Primitive {
    int degree;
    std::uint32_t coeffs;
    std::array<std::uint32_t, 7> m;
};

// Joe-Kuo new-joe-kuo-6.21201, dimensions 2..32.
constexpr std::array<Primitive, kMaxSobolDimension - 1> kTable = {{
    {1, 0, {1}},
    {2, 1, {1, 3}},
    {3, 1, {1, 3, 1}},
    {3, 2, {1, 1, 1}},
    {4, 1, {1, 1, 3, 3}},
    {4, 4, {1, 3, 5, 13}},
    {5, 2, {1, 1, 5, 5, 17}},
    {5, 4, {1, 1, 5, 5, 5}},
    {5, 7, {1, 1, 7, 11, 19}},
    {5, 11, {1, 1, 5, 1, 1}},
    {5, 13, {1, 1, 1, 3, 11}},
    {5, 14, {1, 3, 5, 5, 31}},
    {6, 1, {1, 3, 3, 9, 7, 49}},
    {6, 13, {1, 1, 1, 15, 21, 21}},
    {6, 16, {1, 3, 1, 13, 27, 49}},
    {6, 19, {1, 1, 1, 15, 7, 5}},
    {6, 22, {1, 3, 1, 15, 13, 25}},
    {6, 25, {1, 1, 5, 5, 19, 61}},
    {7, 1, {1, 3, 7, 11, 23, 15, 103}},
    {7, 4, {1, 3, 7, 13, 13, 15, 69}},
    {7, 7, {1, 1, 3, 13, 7, 35, 63}},
    {7, 8, {1, 3, 5, 9, 1, 25, 53}},
    {7, 14, {1, 3, 1, 13, 9, 35, 107}},
    {7, 19, {1, 3, 1, 5, 27, 61, 31}},
    {7, 21, {1, 1, 5, 11, 19, 41, 61}},
    {7, 28, {1, 3, 5, 3, 3, 13, 69}},
    {7, 31, {1, 1, 7, 13, 1, 19, 1}},
    {7, 32, {1, 3, 7, 5, 13, 19, 59}},
    {7, 37, {1, 1, 3, 9, 25, 29, 41}},
    {7, 41, {1, 3, 5, 13, 23, 1, 55}},
    {7, 42, {1, 3, 7, 3, 13, 59, 17}},
}};

constexpr int kBits = 32;

std::array<std::uint32_t, kBits> directions_for(int dim) {
    std::array<std::uint32_t, kBits> v{};
    if (dim == 0) {
        for (int k = 0; k < kBits; ++k) v[static_cast<std::size_t>(k)] = 1u << (kBits - 1 - k);
        return v;
    }
    const auto& p = kTable[static_cast<std::size_t>(dim - 1)];
    const int s = p.degree;
    std::array<std::uint32_t, kBits> m{};
    for (int k = 0; k < s; ++k) m[static_cast<std::size_t>(k)] = p.m[static_cast<std::size_t>(k)];
    for (int k = s; k < kBits; ++k) {
        std::uint32_t next = m[static_cast<std::size_t>(k - s)] ^ (m[static_cast<std::size_t>(k - s)] << s);
        for (int j = 1; j < s; ++j) {
            if ((p.coeffs >> (s - 1 - j)) & 1u) next ^= m[static_cast<std::size_t>(k - j)] << j;
        }
        m[static_cast<std::size_t>(k)] = next;
    }
    for (int k = 0; k < kBits; ++k) v[static_cast<std::size_t>(k)] = m[static_cast<std::size_t>(k)] << (kBits - 1 - k);
    return v;
}

void check_dimension(int d) {
    if (d < 1 || d > kMaxSobolDimension) {
        throw Error(ErrorCode::UnsupportedDimension,
                    "Sobol dimension must be in [1, 32], got " + std::to_string(d));
    }
}

}  // namespace

SobolStream::SobolStream(int dimension) : dimension_(dimension) {
    check_dimension(dimension);
    directions_.reserve(static_cast<std::size_t>(dimension));
    for (int j = 0; j < dimension; ++j) directions_.push_back(directions_for(j));
    state_.assign(static_cast<std::size_t>(dimension), 0u);
}

void SobolStream::seek(std::uint64_t index) {
    if (index >> kBits) throw Error(ErrorCode::ValidationError, "Sobol index exceeds 2^32");
    index_ = index;
    const std::uint64_t gray = index ^ (index >> 1);
    for (int j = 0; j < dimension_; ++j) {
        std::uint32_t x = 0;
        for (int k = 0; k < kBits; ++k) {
            if ((gray >> k) & 1u) x ^= directions_[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)];
        }
        state_[static_cast<std::size_t>(j)] = x;
    }
}

std::vector<double> SobolStream::next() {
    std::vector<double> point(static_cast<std::size_t>(dimension_));
    for (int j = 0; j < dimension_; ++j) point[static_cast<std::size_t>(j)] = std::ldexp(state_[static_cast<std::size_t>(j)], -kBits);
    // Gray-code step: flip the direction at the lowest zero bit of the index.
    const int c = std::countr_one(index_);
    if (c >= kBits) throw Error(ErrorCode::ValidationError, "Sobol sequence exhausted");
    for (int j = 0; j < dimension_; ++j) state_[static_cast<std::size_t>(j)] ^= directions_[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)];
    ++index_;
    return point;
}

Eigen::MatrixXd sobol_points(int d, int n, std::uint64_t skip) {
    check_dimension(d);
    if (n < 1) throw Error(ErrorCode::ValidationError, "Sobol point count must be positive");
    SobolStream stream(d);
    stream.seek(skip);
    Eigen::MatrixXd out(n, d);
    for (int i = 0; i < n; ++i) {
        const auto p = stream.next();
        for (int j = 0; j < d; ++j) out(i, j) = p[static_cast<std::size_t>(j)];
    }
    return out;
}

Eigen::MatrixXd to_matrix(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) return {};
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows.front().size()) throw Error(ErrorCode::DimensionMismatch, "ragged point list");
        for (std::size_t j = 0; j < rows[i].size(); ++j) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
    return out;
}

}  // namespace fda::surrogate
