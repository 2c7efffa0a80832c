#include <algorithm>
#include <cmath>
#include <cstdlib>

#include "contour/errors.hpp"
#include "contour/stimulus.hpp"

namespace contour {

std::vector<Pixel> bar_pixels(Point a, Point b, int thickness) {
  if (thickness < 1) throw ShapeError("bar thickness must be at least 1");
  std::int64_t x0 = std::lround(a.x), y0 = std::lround(a.y);
  const std::int64_t x1 = std::lround(b.x), y1 = std::lround(b.y);
  const std::int64_t dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const std::int64_t sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  const std::int64_t lo = -(thickness - 1) / 2, hi = lo + thickness - 1;

  std::vector<Pixel> out;
  std::int64_t err = dx + dy;
  for (;;) {
    for (std::int64_t oy = lo; oy <= hi; ++oy)
      for (std::int64_t ox = lo; ox <= hi; ++ox) out.push_back({y0 + oy, x0 + ox});
    if (x0 == x1 && y0 == y1) break;
    const std::int64_t e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void render_bar(Image& canvas, Point a, Point b, Rgb color, int thickness) {
  for (const Pixel& p : bar_pixels(a, b, thickness)) {
    if (canvas.contains(p.y, p.x)) canvas.set(p.y, p.x, color);
  }
}

void render_path(Image& canvas, const PathSpec& path, Rgb color, int thickness) {
  for (int i = 0; i < path.bars; ++i) {
    const auto [a, b] = path.bar(i);
    render_bar(canvas, a, b, color, thickness);
  }
}

std::vector<Pixel> disk_pixels(Point center, int radius) {
  if (radius < 0) throw ShapeError("disk radius must be non-negative");
  const std::int64_t cx = std::lround(center.x), cy = std::lround(center.y);
  std::vector<Pixel> out;
  for (std::int64_t dy = -radius; dy <= radius; ++dy)
    for (std::int64_t dx = -radius; dx <= radius; ++dx)
      if (dx * dx + dy * dy <= std::int64_t{radius} * radius) out.push_back({cy + dy, cx + dx});
  return out;
}

void render_disk(Image& canvas, Point center, int radius, Rgb color) {
  for (const Pixel& p : disk_pixels(center, radius)) {
    if (canvas.contains(p.y, p.x)) canvas.set(p.y, p.x, color);
  }
}

Image augment_flip(const Image& img, Flip mode) {
  const bool h = mode == Flip::H || mode == Flip::HV;
  const bool v = mode == Flip::V || mode == Flip::HV;
  Image out(img.height(), img.width());
  for (std::int64_t y = 0; y < img.height(); ++y) {
    const std::int64_t sy = v ? img.height() - 1 - y : y;
    for (std::int64_t x = 0; x < img.width(); ++x) {
      out.set(y, x, img.get(sy, h ? img.width() - 1 - x : x));
    }
  }
  return out;
}

}  // namespace contour
