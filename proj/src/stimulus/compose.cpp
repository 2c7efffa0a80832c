#include <algorithm>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "contour/errors.hpp"
#include "contour/stimulus.hpp"

namespace contour {

std::string to_string(Dataset d) { return d == Dataset::MarkedLong ? "markedlong" : "pathfinder"; }
std::string to_string(Label l) { return l == Label::Positive ? "positive" : "negative"; }

std::string to_string(Flip f) {
  switch (f) {
    case Flip::None: return "none";
    case Flip::H: return "h";
    case Flip::V: return "v";
    case Flip::HV: return "hv";
  }
  return "none";
}

Dataset parse_dataset(const std::string& s) {
  if (s == "markedlong") return Dataset::MarkedLong;
  if (s == "pathfinder") return Dataset::PathFinder;
  throw ConfigError("unknown dataset '" + s + "' (expected markedlong or pathfinder)");
}

Label parse_label(const std::string& s) {
  if (s == "positive") return Label::Positive;
  if (s == "negative") return Label::Negative;
  throw ConfigError("unknown label '" + s + "'");
}

Flip parse_flip(const std::string& s) {
  if (s == "none") return Flip::None;
  if (s == "h") return Flip::H;
  if (s == "v") return Flip::V;
  if (s == "hv") return Flip::HV;
  throw ConfigError("unknown flip mode '" + s + "' (expected h, v or hv)");
}

StimulusConfig StimulusConfig::preset(Dataset dataset, std::int64_t size) {
  StimulusConfig c;
  c.dataset = dataset;
  c.size = size;
  c.step = 7.0 * static_cast<double>(size) / 256.0;
  const bool small = size < 128;
  c.long_bars = small ? 9 : 18;
  c.short_bars = small ? 6 : 12;
  c.distractor_bars = small ? 3 : 6;
  c.disk_radius = small ? 2 : 3;
  return c;
}

void StimulusConfig::validate() const {
  if (size < 16) throw ConfigError("stimulus size must be at least 16 px");
  if (!(step > 0) || !std::isfinite(step)) throw ConfigError("step length must be positive");
  if (thickness < 1) throw ConfigError("bar thickness must be at least 1");
  if (long_bars < 1 || short_bars < 1 || main_bars < 1 || distractor_bars < 1) {
    throw ConfigError("path lengths must be at least one bar");
  }
  if (dataset == Dataset::MarkedLong && long_bars <= short_bars) {
    throw ConfigError("the long path must have more bars than the short paths");
  }
  if (min_distractors < 0 || max_distractors < min_distractors) throw ConfigError("bad distractor count range");
  if (disk_radius < 0) throw ConfigError("disk radius must be non-negative");
  if (limits.step_failures < 1 || limits.reseeds < 0 || max_resamples < 0) {
    throw ConfigError("retry budgets must be non-negative");
  }
}

nlohmann::json StimulusConfig::to_json() const {
  return {{"dataset", to_string(dataset)},
          {"size", size},
          {"step", step},
          {"thickness", thickness},
          {"long_bars", long_bars},
          {"short_bars", short_bars},
          {"main_bars", main_bars},
          {"distractor_bars", distractor_bars},
          {"min_distractors", min_distractors},
          {"max_distractors", max_distractors},
          {"disk_radius", disk_radius},
          {"step_failures", limits.step_failures},
          {"reseeds", limits.reseeds},
          {"max_resamples", max_resamples},
          {"colors", {{"background", {0, 0, 0}}, {"foreground", {255, 255, 255}}, {"marker", {255, 0, 0}}}}};
}

StimulusConfig StimulusConfig::from_json(const nlohmann::json& j) {
  StimulusConfig c;
  c.dataset = parse_dataset(j.at("dataset").get<std::string>());
  c.size = j.at("size").get<std::int64_t>();
  c.step = j.at("step").get<double>();
  c.thickness = j.at("thickness").get<int>();
  c.long_bars = j.at("long_bars").get<int>();
  c.short_bars = j.at("short_bars").get<int>();
  c.main_bars = j.at("main_bars").get<int>();
  c.distractor_bars = j.at("distractor_bars").get<int>();
  c.min_distractors = j.at("min_distractors").get<int>();
  c.max_distractors = j.at("max_distractors").get<int>();
  c.disk_radius = j.at("disk_radius").get<int>();
  c.limits.step_failures = j.at("step_failures").get<int>();
  c.limits.reseeds = j.at("reseeds").get<int>();
  c.max_resamples = j.at("max_resamples").get<int>();
  c.validate();
  return c;
}

namespace {

PathSpec seeded_path(UniformSource& src, const StimulusConfig& cfg, int quadrant, int bars) {
  return sample_path(src, quadrant, bars, cfg.step, quadrant_region(quadrant, cfg.size), canvas_region(cfg.size),
                     0.0, std::numbers::pi / 4, cfg.limits);
}

void add_distractors(UniformSource& src, const StimulusConfig& cfg, StimulusMeta& m) {
  m.n_distractors = cfg.min_distractors + src.pick(cfg.max_distractors - cfg.min_distractors + 1);
  const Region canvas = canvas_region(cfg.size);
  for (int d = 0; d < m.n_distractors; ++d) {
    m.distractors.push_back(
        sample_path(src, -1, cfg.distractor_bars, cfg.step, canvas, canvas, 0.0, std::numbers::pi / 4, cfg.limits));
  }
}

Stimulus markedlong_once(const StimulusConfig& cfg, UniformSource& src, Label label) {
  StimulusMeta m;
  m.dataset = Dataset::MarkedLong;
  m.label = label;
  m.size = cfg.size;
  m.long_quadrant = src.pick(4);
  for (int q = 0; q < 4; ++q) {
    const int bars = q == m.long_quadrant ? cfg.long_bars : cfg.short_bars;
    m.primary.push_back(seeded_path(src, cfg, q, bars));
    m.path_lengths[q] = bars;
  }
  if (label == Label::Positive) {
    m.marked_path = m.long_quadrant;
    m.marker_index = src.pick(cfg.long_bars);
  } else {
    // The three short quadrants in increasing order.
    const int k = src.pick(3);
    m.marked_path = k < m.long_quadrant ? k : k + 1;
    m.marker_index = src.pick(cfg.short_bars);
  }
  add_distractors(src, cfg, m);

  Image img(cfg.size, cfg.size, kBackground);
  for (const PathSpec& p : m.primary) render_path(img, p, kForeground, cfg.thickness);
  for (const PathSpec& p : m.distractors) render_path(img, p, kForeground, cfg.thickness);
  const auto [a, b] = m.primary[m.marked_path].bar(m.marker_index);
  render_bar(img, a, b, kMarker, cfg.thickness);
  return {std::move(img), std::move(m)};
}

Stimulus pathfinder_once(const StimulusConfig& cfg, UniformSource& src, Label label) {
  StimulusMeta m;
  m.dataset = Dataset::PathFinder;
  m.label = label;
  m.size = cfg.size;
  const int qa = src.pick(4);
  const int k = src.pick(3);
  const int qb = k < qa ? k : k + 1;
  for (int q : {qa, qb}) {
    m.primary.push_back(seeded_path(src, cfg, q, cfg.main_bars));
    m.path_lengths[q] = cfg.main_bars;
  }
  // Disks on any two of the four endpoints must stay apart, or a disk could
  // cover endpoints of both paths and the label would be ambiguous.
  const std::array<Point, 4> ends{m.primary[0].points.front(), m.primary[0].points.back(),
                                  m.primary[1].points.front(), m.primary[1].points.back()};
  const double min_gap = 2.0 * cfg.disk_radius + 2.0;
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j)
      if (std::hypot(ends[i].x - ends[j].x, ends[i].y - ends[j].y) < min_gap) {
        throw GenerationFailure("pathfinder endpoints too close");
      }
  add_distractors(src, cfg, m);
  if (label == Label::Positive) {
    const int p = src.pick(2);
    m.disk_paths = {p, p};
    m.disk_ends = {0, 1};
  } else {
    m.disk_paths = {0, 1};
    m.disk_ends = {src.pick(2), src.pick(2)};
  }
  for (int d = 0; d < 2; ++d) {
    const PathSpec& p = m.primary[m.disk_paths[d]];
    m.disks.push_back(m.disk_ends[d] == 0 ? p.points.front() : p.points.back());
  }

  Image img(cfg.size, cfg.size, kBackground);
  for (const PathSpec& p : m.primary) render_path(img, p, kForeground, cfg.thickness);
  for (const PathSpec& p : m.distractors) render_path(img, p, kForeground, cfg.thickness);
  for (Point c : m.disks) render_disk(img, c, cfg.disk_radius, kForeground);
  return {std::move(img), std::move(m)};
}

template <class Once>
Stimulus with_resampling(const StimulusConfig& cfg, std::uint64_t seed, Label label, Once once) {
  cfg.validate();
  for (int attempt = 0; attempt <= cfg.max_resamples; ++attempt) {
    RngSource src(attempt == 0 ? seed : derive_seed(seed, static_cast<std::uint64_t>(attempt), 0x2e5a));
    try {
      Stimulus s = once(cfg, src, label);
      s.meta.seed = seed;
      s.meta.resamples = attempt;
      return s;
    } catch (const GenerationFailure&) {
    }
  }
  throw GenerationFailure("stimulus generation failed after " + std::to_string(cfg.max_resamples) + " resamples");
}

std::vector<Pixel> clipped(std::vector<Pixel> px, std::int64_t size) {
  std::erase_if(px, [&](const Pixel& p) { return p.x < 0 || p.y < 0 || p.x >= size || p.y >= size; });
  return px;
}

std::vector<Pixel> pixels_of(const Image& img, Rgb color) {
  std::vector<Pixel> out;
  for (std::int64_t y = 0; y < img.height(); ++y)
    for (std::int64_t x = 0; x < img.width(); ++x)
      if (img.get(y, x) == color) out.push_back({y, x});
  return out;
}

int components8(const std::vector<Pixel>& px) {
  std::set<Pixel> left(px.begin(), px.end());
  int n = 0;
  while (!left.empty()) {
    ++n;
    std::vector<Pixel> stack{*left.begin()};
    left.erase(left.begin());
    while (!stack.empty()) {
      const Pixel p = stack.back();
      stack.pop_back();
      for (std::int64_t dy = -1; dy <= 1; ++dy)
        for (std::int64_t dx = -1; dx <= 1; ++dx) {
          auto it = left.find({p.y + dy, p.x + dx});
          if (it == left.end()) continue;
          stack.push_back(*it);
          left.erase(it);
        }
    }
  }
  return n;
}

std::optional<Label> markedlong_label(const Stimulus& s, const StimulusConfig& cfg) {
  const std::vector<Pixel> red = pixels_of(s.image, kMarker);
  if (red.empty()) return std::nullopt;
  int longest = 0;
  for (const PathSpec& p : s.meta.primary) longest = std::max(longest, p.bars);
  std::optional<Label> found;
  for (const PathSpec& p : s.meta.primary) {
    for (int i = 0; i < p.bars; ++i) {
      const auto [a, b] = p.bar(i);
      if (clipped(bar_pixels(a, b, cfg.thickness), s.image.width()) != red) continue;
      const Label l = p.bars == longest ? Label::Positive : Label::Negative;
      if (found && *found != l) return std::nullopt;
      found = l;
    }
  }
  return found;
}

std::optional<Label> pathfinder_label(const Stimulus& s, const StimulusConfig& cfg) {
  const auto& disks = s.meta.disks;
  if (disks.size() != 2) return std::nullopt;
  for (Point c : disks) {
    for (const Pixel& p : clipped(disk_pixels(c, cfg.disk_radius), s.image.width())) {
      if (s.image.get(p.y, p.x) != kForeground) return std::nullopt;
    }
  }
  const double reach = std::max(cfg.disk_radius, 1);
  auto near = [&](Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y) <= reach; };
  // owners[d] lists (path, end) pairs whose endpoint sits under disk d.
  std::array<std::vector<std::pair<int, int>>, 2> owners;
  for (int d = 0; d < 2; ++d) {
    for (int p = 0; p < static_cast<int>(s.meta.primary.size()); ++p) {
      const PathSpec& path = s.meta.primary[p];
      if (near(disks[d], path.points.front())) owners[d].push_back({p, 0});
      if (near(disks[d], path.points.back())) owners[d].push_back({p, 1});
    }
  }
  bool same = false, different = false;
  for (auto [p0, e0] : owners[0])
    for (auto [p1, e1] : owners[1]) {
      if (p0 == p1 && e0 != e1) same = true;
      if (p0 != p1) different = true;
    }
  if (same == different) return std::nullopt;
  return same ? Label::Positive : Label::Negative;
}

}  // namespace

Stimulus compose_markedlong(const StimulusConfig& cfg, std::uint64_t seed, Label label) {
  return with_resampling(cfg, seed, label, markedlong_once);
}

Stimulus compose_pathfinder(const StimulusConfig& cfg, std::uint64_t seed, Label label) {
  return with_resampling(cfg, seed, label, pathfinder_once);
}

Stimulus compose(const StimulusConfig& cfg, std::uint64_t seed, Label label) {
  return cfg.dataset == Dataset::MarkedLong ? compose_markedlong(cfg, seed, label)
                                            : compose_pathfinder(cfg, seed, label);
}

std::optional<Label> recompute_label(const Stimulus& s, const StimulusConfig& cfg) {
  return s.meta.dataset == Dataset::MarkedLong ? markedlong_label(s, cfg) : pathfinder_label(s, cfg);
}

bool StimulusAudit::ok(const StimulusConfig& cfg) const {
  const bool ml = cfg.dataset == Dataset::MarkedLong;
  const int segments = ml ? cfg.long_bars + 3 * cfg.short_bars : 2 * cfg.main_bars;
  return geometry_ok && distinct_quadrants && primary_segments == segments && red_components == (ml ? 1 : 0) &&
         palette_ok && distractors_in_range && label_matches;
}

StimulusAudit audit_stimulus(const Stimulus& s, const StimulusConfig& cfg) {
  StimulusAudit a;
  const StimulusMeta& m = s.meta;
  const Region canvas = canvas_region(cfg.size);

  auto path_ok = [&](const PathSpec& p) {
    if (p.points.size() != static_cast<std::size_t>(2 * p.bars) || p.angles.size() + 1 != p.points.size()) {
      return false;
    }
    for (std::size_t i = 0; i < p.points.size(); ++i) {
      if (!canvas.contains(p.points[i])) return false;
      if (i == 0) continue;
      const double d = std::hypot(p.points[i].x - p.points[i - 1].x, p.points[i].y - p.points[i - 1].y);
      if (std::abs(d - p.step) > 1e-9) return false;
      if (i >= 2 && std::abs(p.angles[i - 1] - p.angles[i - 2]) > std::numbers::pi / 4 + 1e-12) return false;
    }
    return true;
  };
  a.geometry_ok = std::all_of(m.primary.begin(), m.primary.end(), path_ok) &&
                  std::all_of(m.distractors.begin(), m.distractors.end(), path_ok);

  std::set<int> quadrants;
  a.distinct_quadrants = true;
  for (const PathSpec& p : m.primary) {
    const int q = quadrant_of(p.points.front(), cfg.size);
    if (q != p.quadrant || !quadrants.insert(q).second) a.distinct_quadrants = false;
    a.primary_segments += p.bars;
  }

  a.palette_ok = true;
  for (std::int64_t y = 0; y < s.image.height() && a.palette_ok; ++y)
    for (std::int64_t x = 0; x < s.image.width(); ++x) {
      const Rgb c = s.image.get(y, x);
      if (c != kBackground && c != kForeground && c != kMarker) {
        a.palette_ok = false;
        break;
      }
    }
  a.red_components = components8(pixels_of(s.image, kMarker));
  a.distractors_in_range =
      m.n_distractors >= cfg.min_distractors && m.n_distractors <= cfg.max_distractors &&
      static_cast<int>(m.distractors.size()) == m.n_distractors &&
      std::all_of(m.distractors.begin(), m.distractors.end(),
                  [&](const PathSpec& p) { return p.bars == cfg.distractor_bars; });
  const auto label = recompute_label(s, cfg);
  a.label_matches = label.has_value() && *label == m.label;
  return a;
}

}  // namespace contour
