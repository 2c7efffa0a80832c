#include <algorithm>
#include <cmath>
#include <string>

#include "contour/errors.hpp"
#include "contour/stimulus.hpp"

namespace contour {

Region canvas_region(std::int64_t size) {
  const double hi = static_cast<double>(size - 1);
  return {0.0, 0.0, hi, hi};
}

Region quadrant_region(int quadrant, std::int64_t size) {
  if (quadrant < 0 || quadrant > 3) throw ShapeError("quadrant must be in [0, 3]");
  const double half = static_cast<double>(size) / 2.0;
  const double hi = static_cast<double>(size - 1);
  const bool right = quadrant & 1, bottom = quadrant & 2;
  return {right ? half : 0.0, bottom ? half : 0.0, right ? hi : half, bottom ? hi : half};
}

int quadrant_of(Point p, std::int64_t size) {
  const double half = static_cast<double>(size) / 2.0;
  return (p.y >= half ? 2 : 0) + (p.x >= half ? 1 : 0);
}

int UniformSource::pick(int n) {
  if (n < 1) throw ShapeError("pick needs a positive range");
  return std::min(static_cast<int>(next_unit() * n), n - 1);
}

PathSpec sample_path(UniformSource& src, int quadrant, int bars, double step, const Region& seed_region,
                     const Region& canvas, double theta_lo, double theta_hi, SamplerLimits limits) {
  if (bars < 1) throw ShapeError("a path needs at least one bar");
  if (!(step > 0) || !std::isfinite(step)) throw ShapeError("step length must be positive and finite");
  if (!(seed_region.x1 > seed_region.x0) || !(seed_region.y1 > seed_region.y0)) {
    throw ShapeError("seed region is degenerate");
  }
  if (!canvas.contains({seed_region.x0, seed_region.y0}) || !canvas.contains({seed_region.x1, seed_region.y1})) {
    throw ShapeError("seed region must lie inside the canvas");
  }
  if (!(theta_hi >= theta_lo)) throw ShapeError("initial heading range is inverted");
  if (limits.step_failures < 1 || limits.reseeds < 0) throw ShapeError("sampler limits must be positive");

  constexpr double kTurn = std::numbers::pi / 4;
  const auto n_points = static_cast<std::size_t>(2 * bars);
  for (int reseed = 0; reseed <= limits.reseeds; ++reseed) {
    PathSpec p;
    p.step = step;
    p.bars = bars;
    p.quadrant = quadrant;
    p.reseeds = reseed;
    p.points.reserve(n_points);
    p.angles.reserve(n_points - 1);
    const double x0 = src.uniform(seed_region.x0, seed_region.x1);
    const double y0 = src.uniform(seed_region.y0, seed_region.y1);
    p.points.push_back({x0, y0});

    std::vector<int> failures(n_points, 0);
    bool stuck = false;
    while (p.points.size() < n_points) {
      const std::size_t j = p.points.size() - 1;
      const double theta = p.angles.empty() ? src.uniform(theta_lo, theta_hi)
                                            : src.uniform(p.angles.back() - kTurn, p.angles.back() + kTurn);
      const Point cand{p.points[j].x + step * std::cos(theta), p.points[j].y + step * std::sin(theta)};
      if (canvas.contains(cand)) {
        p.points.push_back(cand);
        p.angles.push_back(theta);
        continue;
      }
      if (++failures[j] >= limits.step_failures) {
        stuck = true;
        break;
      }
      if (j > 0) {
        p.points.pop_back();
        p.angles.pop_back();
      }
    }
    if (!stuck) return p;
  }
  throw GenerationFailure("path sampler exhausted " + std::to_string(limits.reseeds) + " reseeds");
}

}  // namespace contour
