#include <algorithm>
#include <cmath>
#include <numbers>

#include "lap/models.hpp"

namespace lap {

namespace {

// Edge transition width in normalized coordinates (about 1.5 cells at 128).
constexpr double kEdgeWidth = 0.018;

struct Ellipsoid {
  double center[3];
  double axes[3];
  double angle;  // rotation in the (0, 1) plane
  double value;
};

// Ellipses in normalized coordinates [-1, 1]^d. The outer shell keeps
// clear of the boundary so moderately moved frames stay inside the domain.
std::vector<Ellipsoid> draw_ellipsoids(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto in = [&](double a, double b) { return a + (b - a) * u(rng); };
  std::vector<Ellipsoid> out;
  const double outer0 = in(0.62, 0.7), outer1 = in(0.68, 0.76), outer2 = in(0.6, 0.7);
  out.push_back({{0, 0, 0}, {outer0, outer1, outer2}, in(-0.2, 0.2), 0.9});
  out.push_back({{0, 0.01, 0}, {0.88 * outer0, 0.9 * outer1, 0.88 * outer2}, out[0].angle, -0.55});
  const int blobs = 5;
  for (int b = 0; b < blobs; ++b) {
    Ellipsoid e{};
    for (int a = 0; a < 3; ++a) e.center[a] = in(-0.35, 0.35);
    for (int a = 0; a < 3; ++a) e.axes[a] = in(0.06, 0.22);
    e.angle = in(0.0, std::numbers::pi);
    e.value = b == 0 ? 0.75 : in(-0.2, 0.4);
    out.push_back(e);
  }
  return out;
}

double evaluate(const std::vector<Ellipsoid>& shapes, int dim, const double* p) {
  double v = 0.0;
  for (const auto& e : shapes) {
    const double c = std::cos(e.angle), s = std::sin(e.angle);
    const double dx = p[0] - e.center[0], dy = p[1] - e.center[1];
    const double u0 = c * dx + s * dy, u1 = -s * dx + c * dy;
    double r = (u0 * u0) / (e.axes[0] * e.axes[0]) + (u1 * u1) / (e.axes[1] * e.axes[1]);
    if (dim == 3) {
      const double dz = p[2] - e.center[2];
      r += dz * dz / (e.axes[2] * e.axes[2]);
    }
    // Soft edge: approximate distance to the boundary along the radius.
    const double dist = (1.0 - std::sqrt(r)) * std::min(e.axes[0], e.axes[1]);
    v += e.value * 0.5 * (1.0 + std::tanh(dist / kEdgeWidth));
  }
  return std::clamp(v, 0.0, 1.0);
}

}  // namespace

VecR ellipse_phantom(const Grid& grid, std::mt19937_64& rng) {
  const int d = grid.dim();
  const auto shapes = draw_ellipsoids(rng);
  constexpr int sub = 3;
  const int samples = d == 2 ? sub * sub : sub * sub * sub;
  const TransformedGrid centers = cell_centers(grid);
  VecR x(grid.size());
  double p[3];
  for (Index i = 0; i < grid.size(); ++i) {
    double acc = 0.0;
    for (int s = 0; s < samples; ++s) {
      int rem = s;
      for (int a = 0; a < d; ++a) {
        const int k = rem % sub;
        rem /= sub;
        const double offset = (static_cast<double>(k) + 0.5) / sub - 0.5;
        const double coord = centers.points(i, a) + offset * grid.cell_size(a);
        p[a] = 2.0 * (coord - grid.lo(a)) / (grid.hi(a) - grid.lo(a)) - 1.0;
      }
      acc += evaluate(shapes, d, p);
    }
    x[i] = acc / samples;
  }
  return x;
}

VecC complex_phantom(const Grid& grid, std::mt19937_64& rng) {
  const VecR magnitude = ellipse_phantom(grid, rng);
  std::uniform_real_distribution<double> coef(-std::numbers::pi / 4, std::numbers::pi / 4);
  const double c0 = coef(rng), c1 = coef(rng), c2 = coef(rng), c3 = coef(rng);
  const TransformedGrid centers = cell_centers(grid);
  VecC x(grid.size());
  for (Index i = 0; i < grid.size(); ++i) {
    const double u = 2.0 * (centers.points(i, 0) - grid.lo(0)) / (grid.hi(0) - grid.lo(0)) - 1.0;
    const double v = 2.0 * (centers.points(i, 1) - grid.lo(1)) / (grid.hi(1) - grid.lo(1)) - 1.0;
    x[i] = std::polar(magnitude[i], c0 + c1 * u + c2 * v + c3 * u * v);
  }
  return x;
}

}  // namespace lap
