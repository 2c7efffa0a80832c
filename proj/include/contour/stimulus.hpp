#pragma once

// Synthetic contour-integration stimuli: smooth random paths of short bars on
// a black canvas. MarkedLong marks one bar red and asks whether it lies on the
// longest path; PathFinder places two disks on path endpoints and asks whether
// they share a path.

#include <array>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "contour/image.hpp"
#include "contour/rng.hpp"

namespace contour {

enum class Dataset { MarkedLong, PathFinder };
enum class Label { Negative = 0, Positive = 1 };
enum class Flip { None, H, V, HV };

std::string to_string(Dataset d);
std::string to_string(Label l);
std::string to_string(Flip f);
Dataset parse_dataset(const std::string& s);
Label parse_label(const std::string& s);
Flip parse_flip(const std::string& s);

/// x is the column, y the row (growing downward).
struct Point {
  double x = 0, y = 0;
  bool operator==(const Point&) const = default;
};

/// Axis-aligned box; seeds are drawn from [x0, x1) × [y0, y1), membership
/// tests use the closed box.
struct Region {
  double x0, y0, x1, y1;
  bool contains(Point p) const { return p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1; }
};

/// Every sampled coordinate must round to a pixel inside the canvas.
Region canvas_region(std::int64_t size);
/// Quadrants: 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right.
Region quadrant_region(int quadrant, std::int64_t size);
int quadrant_of(Point p, std::int64_t size);

/// Source of uniform [0, 1) draws. Abstract so tests can script the stream.
class UniformSource {
 public:
  virtual ~UniformSource() = default;
  virtual double next_unit() = 0;

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }
  /// Integer in [0, n).
  int pick(int n);
};

class RngSource final : public UniformSource {
 public:
  explicit RngSource(std::uint64_t seed) : rng_(seed) {}
  double next_unit() override { return rng_.uniform(); }

 private:
  CounterRng rng_;
};

struct PathSpec {
  std::vector<Point> points;   // 2·bars points
  std::vector<double> angles;  // angles[j] is the heading from points[j] to points[j+1]
  double step = 0;
  int bars = 0;
  int quadrant = -1;  // -1 for distractors seeded anywhere
  int reseeds = 0;

  std::pair<Point, Point> bar(int i) const { return {points[2 * i], points[2 * i + 1]}; }
};

struct SamplerLimits {
  int step_failures = 50;  // failed candidates at one step before the path is reseeded
  int reseeds = 20;        // reseeds before GenerationFailure
};

/// Seeds uniformly in `seed_region`, draws θ_0 ~ U(theta_lo, theta_hi), then
/// each further heading uniformly within ±π/4 of the previous one. A candidate
/// outside `canvas` discards the latest accepted point and resamples from the
/// point before it.
PathSpec sample_path(UniformSource& src, int quadrant, int bars, double step, const Region& seed_region,
                     const Region& canvas, double theta_lo = 0.0, double theta_hi = std::numbers::pi / 4,
                     SamplerLimits limits = {});

struct Pixel {
  std::int64_t y, x;
  auto operator<=>(const Pixel&) const = default;
};

/// Pixels of a bar: Bresenham between the rounded endpoints, stamped with a
/// thickness×thickness square brush. Sorted and unique; not clipped to any
/// canvas.
std::vector<Pixel> bar_pixels(Point a, Point b, int thickness);
void render_bar(Image& canvas, Point a, Point b, Rgb color, int thickness);
/// Draws bars (P_2i, P_2i+1) only; the gaps between bars stay untouched.
void render_path(Image& canvas, const PathSpec& path, Rgb color, int thickness);
std::vector<Pixel> disk_pixels(Point center, int radius);
void render_disk(Image& canvas, Point center, int radius, Rgb color);

struct StimulusConfig {
  Dataset dataset = Dataset::MarkedLong;
  std::int64_t size = 256;
  double step = 7.0;
  int thickness = 1;
  int long_bars = 18;
  int short_bars = 12;
  int main_bars = 9;
  int distractor_bars = 6;
  int min_distractors = 1;
  int max_distractors = 4;
  int disk_radius = 3;
  SamplerLimits limits{};
  int max_resamples = 100;

  /// Step length scales as 7 px per 256 px of canvas. Below 128 px the
  /// MarkedLong paths shrink to 9/6 bars, distractors to 3 bars and disks to
  /// radius 2.
  static StimulusConfig preset(Dataset dataset, std::int64_t size);
  void validate() const;
  nlohmann::json to_json() const;
  static StimulusConfig from_json(const nlohmann::json& j);
};

struct StimulusMeta {
  Dataset dataset = Dataset::MarkedLong;
  Label label = Label::Negative;
  std::uint64_t seed = 0;
  std::int64_t size = 0;
  int long_quadrant = -1;
  int marked_path = -1;  // index into `primary` of the path carrying the marker
  int marker_index = -1;
  int n_distractors = 0;
  std::array<int, 4> path_lengths{};  // bars per quadrant, 0 where no primary path starts
  std::vector<PathSpec> primary;      // markedlong: quadrant order; pathfinder: the two main paths
  std::vector<PathSpec> distractors;
  std::vector<Point> disks;
  std::vector<int> disk_paths;  // primary path index owning each disk
  std::vector<int> disk_ends;   // 0 = first point, 1 = last point
  int resamples = 0;            // whole-image resamples after GenerationFailure
};

struct Stimulus {
  Image image;
  StimulusMeta meta;
};

Stimulus compose_markedlong(const StimulusConfig& cfg, std::uint64_t seed, Label label);
Stimulus compose_pathfinder(const StimulusConfig& cfg, std::uint64_t seed, Label label);
Stimulus compose(const StimulusConfig& cfg, std::uint64_t seed, Label label);

Image augment_flip(const Image& img, Flip mode);

/// Label derived from the rendered pixels plus path geometry, without reading
/// meta.label or meta.marked_path. Empty when the image is inconsistent with
/// the geometry (no marker, several markers, disks not on endpoints).
std::optional<Label> recompute_label(const Stimulus& s, const StimulusConfig& cfg);

/// Per-image structural checks shared by the tests and the acceptance gate.
struct StimulusAudit {
  bool geometry_ok = false;         // step lengths and heading deltas
  bool distinct_quadrants = false;  // primary seeds lie in their own quadrants
  int primary_segments = 0;
  int red_components = 0;           // 8-connected
  bool palette_ok = false;          // only background, foreground and marker colors
  bool distractors_in_range = false;
  bool label_matches = false;
  bool ok(const StimulusConfig& cfg) const;
};
StimulusAudit audit_stimulus(const Stimulus& s, const StimulusConfig& cfg);

}  // namespace contour
