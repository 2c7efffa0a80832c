#include "contour/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>

#include <nlohmann/json.hpp>

#include "contour/errors.hpp"
#include "contour/hash.hpp"

namespace contour {

namespace fs = std::filesystem;

void DatasetOptions::validate() const {
  stimulus.validate();
  if (count_per_class < 1) throw ConfigError("count per class must be positive");
  if (!(train_fraction >= 0.0 && train_fraction <= 1.0)) throw ConfigError("train fraction must lie in [0, 1]");
}

nlohmann::json DatasetOptions::to_json() const {
  return {{"format", "contour-stimuli"},
          {"version", 1},
          {"count_per_class", count_per_class},
          {"seed", seed},
          {"train_fraction", train_fraction},
          {"augment", augment},
          {"label_rule", "source % 2 (0 negative, 1 positive)"},
          {"seed_rule", "derive_seed(seed, source)"},
          {"stimulus", stimulus.to_json()}};
}

DatasetOptions DatasetOptions::from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "contour-stimuli") throw FormatError("config.json is not a stimulus dataset config");
  DatasetOptions o;
  o.stimulus = StimulusConfig::from_json(j.at("stimulus"));
  o.count_per_class = j.at("count_per_class").get<std::int64_t>();
  o.seed = j.at("seed").get<std::uint64_t>();
  o.train_fraction = j.at("train_fraction").get<double>();
  o.augment = j.at("augment").get<bool>();
  o.validate();
  return o;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

nlohmann::json IndexRecord::to_json() const {
  return {{"idx", idx},
          {"source", source},
          {"path", path},
          {"label", to_string(label)},
          {"seed", seed},
          {"split", split},
          {"long_quadrant", long_quadrant},
          {"marked_path", marked_path},
          {"marker_index", marker_index},
          {"n_distractors", n_distractors},
          {"resamples", resamples},
          {"flip", to_string(flip)},
          {"hash", hash}};
}

IndexRecord IndexRecord::from_json(const nlohmann::json& j) {
  IndexRecord r;
  r.idx = j.at("idx").get<std::int64_t>();
  r.source = j.at("source").get<std::int64_t>();
  r.path = j.at("path").get<std::string>();
  r.label = parse_label(j.at("label").get<std::string>());
  r.seed = j.at("seed").get<std::uint64_t>();
  r.split = j.at("split").get<std::string>();
  r.long_quadrant = j.at("long_quadrant").get<int>();
  r.marked_path = j.at("marked_path").get<int>();
  r.marker_index = j.at("marker_index").get<int>();
  r.n_distractors = j.at("n_distractors").get<int>();
  r.resamples = j.at("resamples").get<int>();
  r.flip = parse_flip(j.at("flip").get<std::string>());
  r.hash = j.at("hash").get<std::string>();
  return r;
}

namespace {

constexpr Flip kFlips[] = {Flip::None, Flip::H, Flip::V, Flip::HV};

std::vector<unsigned char> flipped_png(const Stimulus& s, Flip f) {
  return encode_png(f == Flip::None ? s.image : augment_flip(s.image, f));
}

}  // namespace

std::vector<IndexRecord> write_dataset(const fs::path& dir, const DatasetOptions& opt) {
  opt.validate();
  const std::int64_t sources = 2 * opt.count_per_class;
  const std::int64_t per_source = opt.augment ? 4 : 1;
  const auto n_train = static_cast<std::int64_t>(std::llround(opt.train_fraction * static_cast<double>(opt.count_per_class)));

  for (const char* split : {"train", "val"})
    for (const char* label : {"positive", "negative"}) fs::create_directories(dir / "images" / split / label);

  std::vector<IndexRecord> records(static_cast<std::size_t>(sources * per_source));
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 4)
  for (std::int64_t s = 0; s < sources; ++s) {
    try {
      const Label label = s % 2 ? Label::Positive : Label::Negative;
      const std::uint64_t seed = derive_seed(opt.seed, static_cast<std::uint64_t>(s));
      const Stimulus stim = compose(opt.stimulus, seed, label);
      const std::string split = s / 2 < n_train ? "train" : "val";
      for (std::int64_t f = 0; f < per_source; ++f) {
        IndexRecord& r = records[static_cast<std::size_t>(s * per_source + f)];
        r.idx = s * per_source + f;
        r.source = s;
        r.label = label;
        r.seed = seed;
        r.split = split;
        r.long_quadrant = stim.meta.long_quadrant;
        r.marked_path = stim.meta.marked_path;
        r.marker_index = stim.meta.marker_index;
        r.n_distractors = stim.meta.n_distractors;
        r.resamples = stim.meta.resamples;
        r.flip = kFlips[f];
        r.path = "images/" + split + "/" + to_string(label) + "/" + std::to_string(r.idx) + ".png";
        const std::vector<unsigned char> png = flipped_png(stim, r.flip);
        r.hash = hex64(fnv1a64(png));
        write_file(dir / r.path, png);
      }
    } catch (...) {
#pragma omp critical(contour_dataset_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  std::string index;
  for (const IndexRecord& r : records) index += r.to_json().dump() + "\n";
  write_file(dir / "index.jsonl", std::span(reinterpret_cast<const unsigned char*>(index.data()), index.size()));
  const std::string config = opt.to_json().dump(2) + "\n";
  write_file(dir / "config.json", std::span(reinterpret_cast<const unsigned char*>(config.data()), config.size()));
  return records;
}

DatasetOptions read_dataset_config(const fs::path& dir) {
  std::ifstream in(dir / "config.json");
  if (!in) throw FormatError("no config.json in " + dir.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("config.json: " + std::string(e.what()));
  }
  return DatasetOptions::from_json(j);
}

std::vector<IndexRecord> read_index(const fs::path& dir) {
  std::ifstream in(dir / "index.jsonl");
  if (!in) throw FormatError("no index.jsonl in " + dir.string());
  std::vector<IndexRecord> out;
  std::string line;
  std::int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(IndexRecord::from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw FormatError("index.jsonl line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<unsigned char> regenerate_png(const DatasetOptions& opt, const IndexRecord& rec) {
  return flipped_png(compose(opt.stimulus, rec.seed, rec.label), rec.flip);
}

}  // namespace contour
