#pragma once

// Spline shape encoding: 16-parameter genome -> closed polar cubic spline
// -> rasterized occupancy bitmap.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace fda::encoding {

inline constexpr std::size_t kGenomeSize = 16;
inline constexpr std::size_t kControlPoints = 8;
inline constexpr int kDefaultResolution = 64;
inline constexpr std::size_t kOutlineSamples = 256;

/// Point in the 16-dimensional unit hypercube. Pair i is
/// (radius parameter, angular-offset parameter) of control point i.
class ShapeGenome {
public:
    ShapeGenome();  // all parameters 0.5 (the centred circle)
    explicit ShapeGenome(std::span<const double> params);  // clamps to [0,1]

    const std::array<double, kGenomeSize>& params() const noexcept { return params_; }
    double operator[](std::size_t i) const { return params_[i]; }
    double radius_param(std::size_t point) const { return params_[2 * point]; }
    double angle_param(std::size_t point) const { return params_[2 * point + 1]; }

    void set(std::size_t i, double value);  // clamps

    bool operator==(const ShapeGenome&) const = default;

private:
    std::array<double, kGenomeSize> params_;
};

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

struct PolarPoint {
    double radius = 0.0;  // pixels
    double angle = 0.0;   // radians, strictly increasing over the control points
};

/// Periodic interpolating cubic spline of a scalar over [t0, t0 + period).
/// C2 everywhere including the wrap-around knot.
class PeriodicCubicSpline {
public:
    PeriodicCubicSpline() = default;
    PeriodicCubicSpline(std::vector<double> knots, std::vector<double> values, double period);

    double operator()(double t) const;
    const std::vector<double>& knots() const { return knots_; }
    const std::vector<double>& values() const { return values_; }
    const std::vector<double>& second_derivatives() const { return m_; }

private:
    std::vector<double> knots_;
    std::vector<double> values_;
    std::vector<double> m_;
    double period_ = 0.0;
};

struct SplineShape {
    std::array<PolarPoint, kControlPoints> control_points{};
    Point2 center;
    double min_radius = 0.0;
    double max_radius = 0.0;
    PeriodicCubicSpline radius_spline;
    /// Closed polyline, first point repeated at the end.
    std::vector<Point2> outline;

    /// Spline radius at angle `theta`, clamped to [min_radius, max_radius].
    double radius_at(double theta) const;
};

/// Square occupancy grid, row-major, true = solid. Cell (x, y) has its
/// centre at (x + 0.5, y + 0.5).
class Bitmap {
public:
    Bitmap() = default;
    explicit Bitmap(int resolution, bool fill = false);

    int resolution() const noexcept { return resolution_; }
    std::size_t size() const noexcept { return cells_.size(); }
    bool at(int x, int y) const { return cells_[static_cast<std::size_t>(y) * resolution_ + x] != 0; }
    void set(int x, int y, bool solid) { cells_[static_cast<std::size_t>(y) * resolution_ + x] = solid ? 1 : 0; }
    std::span<const std::uint8_t> cells() const noexcept { return cells_; }

    std::size_t solid_count() const;
    bool is_connected() const;  // single 4-connected solid component (false when empty)
    Bitmap largest_component() const;

    bool operator==(const Bitmap&) const = default;

private:
    int resolution_ = 0;
    std::vector<std::uint8_t> cells_;
};

SplineShape decode_genome(const ShapeGenome& genome, int resolution = kDefaultResolution);

/// Scanline even-odd fill of the outline. Throws DegenerateShape when no
/// cell centre falls inside.
Bitmap rasterize(const SplineShape& shape, int resolution = kDefaultResolution);

/// decode_genome followed by rasterize.
Bitmap express(const ShapeGenome& genome, int resolution = kDefaultResolution);

/// Solid fraction of the grid, in [0, 1].
double area(const Bitmap& bitmap);

/// Intersection over union of two same-size bitmaps (1 when both empty).
double iou(const Bitmap& a, const Bitmap& b);

// Serialization -------------------------------------------------------------

std::string to_pbm(const Bitmap& bitmap);
Bitmap from_pbm(const std::string& text);

nlohmann::json to_json(const Bitmap& bitmap);
Bitmap bitmap_from_json(const nlohmann::json& rows);

nlohmann::json to_json(const ShapeGenome& genome);
ShapeGenome genome_from_json(const nlohmann::json& values);

/// Run-length encoding used for archive thumbnails: resolution, then
/// alternating run lengths starting with an empty run, e.g. "64:100,3,61".
std::string to_rle(const Bitmap& bitmap);
Bitmap from_rle(const std::string& text);

}  // namespace fda::encoding
