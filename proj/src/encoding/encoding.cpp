#include "fda/encoding.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <queue>

#include <Eigen/Dense>

#include "fda/error.hpp"

namespace fda::encoding {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kAngularJitter = 0.9;  // fraction of one sector
constexpr double kMinRadiusFraction = 0.1;
constexpr double kRadiusSpan = 0.8;

double clamp01(double v) {
    if (!(v >= 0.0)) return 0.0;  // also catches NaN
    return v > 1.0 ? 1.0 : v;
}

}  // namespace

// ShapeGenome ---------------------------------------------------------------

ShapeGenome::ShapeGenome() { params_.fill(0.5); }

ShapeGenome::ShapeGenome(std::span<const double> params) {
    if (params.size() != kGenomeSize) {
        throw Error(ErrorCode::ValidationError,
                    "genome must have exactly 16 parameters, got " + std::to_string(params.size()),
                    {{"genome", "length must be 16"}});
    }
    std::transform(params.begin(), params.end(), params_.begin(), clamp01);
}

void ShapeGenome::set(std::size_t i, double value) { params_.at(i) = clamp01(value); }

// PeriodicCubicSpline -------------------------------------------------------

PeriodicCubicSpline::PeriodicCubicSpline(std::vector<double> knots, std::vector<double> values,
                                         double period)
    : knots_(std::move(knots)), values_(std::move(values)), period_(period) {
    const auto n = knots_.size();
    if (n < 3 || values_.size() != n) {
        throw Error(ErrorCode::ValidationError, "periodic spline needs >= 3 matching knots/values");
    }
    for (std::size_t i = 1; i < n; ++i) {
        if (!(knots_[i] > knots_[i - 1])) {
            throw Error(ErrorCode::ValidationError, "spline knots must be strictly increasing");
        }
    }
    if (!(knots_.back() < knots_.front() + period_)) {
        throw Error(ErrorCode::ValidationError, "spline knots must lie within one period");
    }

    const int ni = static_cast<int>(n);
    auto h = [&](int i) {
        const int j = (i + ni) % ni;
        const double next = j + 1 < ni ? knots_[j + 1] : knots_[0] + period_;
        return next - knots_[j];
    };
    auto y = [&](int i) { return values_[static_cast<std::size_t>((i + ni) % ni)]; };

    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(ni, ni);
    Eigen::VectorXd rhs(ni);
    for (int i = 0; i < ni; ++i) {
        const double hp = h(i - 1);
        const double hc = h(i);
        a(i, (i - 1 + ni) % ni) += hp;
        a(i, i) += 2.0 * (hp + hc);
        a(i, (i + 1) % ni) += hc;
        rhs(i) = 6.0 * ((y(i + 1) - y(i)) / hc - (y(i) - y(i - 1)) / hp);
    }
    const Eigen::VectorXd m = a.partialPivLu().solve(rhs);
    m_.assign(m.data(), m.data() + ni);
}

double PeriodicCubicSpline::operator()(double t) const {
    const double t0 = knots_.front();
    double u = std::fmod(t - t0, period_);
    if (u < 0.0) u += period_;
    u += t0;

    const auto n = knots_.size();
    auto it = std::upper_bound(knots_.begin(), knots_.end(), u);
    const std::size_t i = static_cast<std::size_t>(std::distance(knots_.begin(), it)) - 1;
    const std::size_t j = (i + 1) % n;
    const double x0 = knots_[i];
    const double x1 = i + 1 < n ? knots_[i + 1] : knots_[0] + period_;
    const double hi = x1 - x0;
    const double a = x1 - u;
    const double b = u - x0;
    return m_[i] * a * a * a / (6.0 * hi) + m_[j] * b * b * b / (6.0 * hi) +
           (values_[i] / hi - m_[i] * hi / 6.0) * a + (values_[j] / hi - m_[j] * hi / 6.0) * b;
}

double SplineShape::radius_at(double theta) const {
    return std::clamp(radius_spline(theta), min_radius, max_radius);
}

// Bitmap --------------------------------------------------------------------

Bitmap::Bitmap(int resolution, bool fill)
    : resolution_(resolution),
      cells_(static_cast<std::size_t>(resolution) * static_cast<std::size_t>(resolution),
             fill ? 1 : 0) {
    if (resolution <= 0) throw Error(ErrorCode::ValidationError, "bitmap resolution must be positive");
}

std::size_t Bitmap::solid_count() const {
    return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), std::uint8_t{1}));
}

namespace {

// Labels 4-connected solid components; returns per-cell label (-1 = empty)
// and the size of each component.
std::pair<std::vector<int>, std::vector<std::size_t>> label_components(const Bitmap& bm) {
    const int r = bm.resolution();
    std::vector<int> label(bm.size(), -1);
    std::vector<std::size_t> sizes;
    std::queue<std::pair<int, int>> frontier;
    for (int y0 = 0; y0 < r; ++y0) {
        for (int x0 = 0; x0 < r; ++x0) {
            const auto idx0 = static_cast<std::size_t>(y0) * r + x0;
            if (!bm.at(x0, y0) || label[idx0] >= 0) continue;
            const int id = static_cast<int>(sizes.size());
            sizes.push_back(0);
            label[idx0] = id;
            frontier.emplace(x0, y0);
            while (!frontier.empty()) {
                const auto [x, y] = frontier.front();
                frontier.pop();
                ++sizes[static_cast<std::size_t>(id)];
                constexpr int dx[] = {1, -1, 0, 0};
                constexpr int dy[] = {0, 0, 1, -1};
                for (int k = 0; k < 4; ++k) {
                    const int nx = x + dx[k];
                    const int ny = y + dy[k];
                    if (nx < 0 || ny < 0 || nx >= r || ny >= r || !bm.at(nx, ny)) continue;
                    const auto idx = static_cast<std::size_t>(ny) * r + nx;
                    if (label[idx] >= 0) continue;
                    label[idx] = id;
                    frontier.emplace(nx, ny);
                }
            }
        }
    }
    return {std::move(label), std::move(sizes)};
}

}  // namespace

bool Bitmap::is_connected() const {
    return label_components(*this).second.size() == 1;
}

Bitmap Bitmap::largest_component() const {
    auto [label, sizes] = label_components(*this);
    Bitmap out(resolution_);
    if (sizes.empty()) return out;
    const int keep = static_cast<int>(std::distance(sizes.begin(), std::max_element(sizes.begin(), sizes.end())));
    for (std::size_t i = 0; i < label.size(); ++i) out.cells_[i] = label[i] == keep ? 1 : 0;
    return out;
}

// Decode / rasterize ---------------------------------------------------------

SplineShape decode_genome(const ShapeGenome& genome, int resolution) {
    if (resolution < 16) {
        throw Error(ErrorCode::ValidationError, "resolution must be >= 16",
                    {{"resolution", "must be >= 16"}});
    }
    SplineShape shape;
    const double half = resolution / 2.0;
    const double max_radius = half - 1.0;
    const double sector = kTwoPi / static_cast<double>(kControlPoints);
    shape.center = {half, half};
    shape.min_radius = kMinRadiusFraction * max_radius;
    shape.max_radius = max_radius;

    std::vector<double> knots(kControlPoints);
    std::vector<double> radii(kControlPoints);
    for (std::size_t i = 0; i < kControlPoints; ++i) {
        const double theta = sector * static_cast<double>(i) + (genome.angle_param(i) - 0.5) * sector * kAngularJitter;
        const double rho = (kMinRadiusFraction + kRadiusSpan * genome.radius_param(i)) * max_radius;
        shape.control_points[i] = {rho, theta};
        knots[i] = theta;
        radii[i] = rho;
    }
    shape.radius_spline = PeriodicCubicSpline(std::move(knots), std::move(radii), kTwoPi);

    shape.outline.reserve(kOutlineSamples + 1);
    for (std::size_t k = 0; k < kOutlineSamples; ++k) {
        const double theta = kTwoPi * static_cast<double>(k) / static_cast<double>(kOutlineSamples);
        const double rho = shape.radius_at(theta);
        shape.outline.push_back({shape.center.x + rho * std::cos(theta), shape.center.y + rho * std::sin(theta)});
    }
    shape.outline.push_back(shape.outline.front());
    return shape;
}

Bitmap rasterize(const SplineShape& shape, int resolution) {
    Bitmap bm(resolution);
    std::vector<double> crossings;
    const auto& pts = shape.outline;
    for (int row = 0; row < resolution; ++row) {
        const double yc = row + 0.5;
        crossings.clear();
        for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
            const Point2& p = pts[k];
            const Point2& q = pts[k + 1];
            if ((p.y <= yc) == (q.y <= yc)) continue;
            crossings.push_back(p.x + (yc - p.y) * (q.x - p.x) / (q.y - p.y));
        }
        std::sort(crossings.begin(), crossings.end());
        for (std::size_t k = 0; k + 1 < crossings.size(); k += 2) {
            const int first = std::max(0, static_cast<int>(std::ceil(crossings[k] - 0.5)));
            const int last = std::min(resolution - 1, static_cast<int>(std::floor(crossings[k + 1] - 0.5)));
            for (int col = first; col <= last; ++col) bm.set(col, row, true);
        }
    }
    if (bm.solid_count() == 0) {
        throw Error(ErrorCode::DegenerateShape, "no cell centre lies inside the outline");
    }
    return bm;
}

Bitmap express(const ShapeGenome& genome, int resolution) {
    return rasterize(decode_genome(genome, resolution), resolution);
}

double area(const Bitmap& bitmap) {
    return static_cast<double>(bitmap.solid_count()) / static_cast<double>(bitmap.size());
}

double iou(const Bitmap& a, const Bitmap& b) {
    if (a.resolution() != b.resolution()) {
        throw Error(ErrorCode::DimensionMismatch, "iou of bitmaps with different resolutions");
    }
    std::size_t inter = 0;
    std::size_t uni = 0;
    const auto ca = a.cells();
    const auto cb = b.cells();
    for (std::size_t i = 0; i < ca.size(); ++i) {
        inter += (ca[i] & cb[i]);
        uni += (ca[i] | cb[i]);
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace fda::encoding
