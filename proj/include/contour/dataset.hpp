#pragma once

// On-disk stimulus datasets:
//   DIR/images/{train,val}/{positive,negative}/{idx}.png
//   DIR/index.jsonl   one record per image
//   DIR/config.json   every generation parameter
// Image s (source index) has label s % 2 and seed derive_seed(base_seed, s),
// so any record can be regenerated alone.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "contour/stimulus.hpp"

namespace contour {

struct DatasetOptions {
  StimulusConfig stimulus{};
  std::int64_t count_per_class = 0;
  std::uint64_t seed = 0;
  double train_fraction = 0.75;
  bool augment = false;  // also write the h, v and hv flips of every image

  void validate() const;
  nlohmann::json to_json() const;
  static DatasetOptions from_json(const nlohmann::json& j);
};

struct IndexRecord {
  std::int64_t idx = 0;     // file name stem, unique in the dataset
  std::int64_t source = 0;  // source image this record was rendered from
  std::string path;         // relative to the dataset root
  Label label = Label::Negative;
  std::uint64_t seed = 0;
  std::string split;  // "train" or "val"
  int long_quadrant = -1;
  int marked_path = -1;
  int marker_index = -1;
  int n_distractors = 0;
  int resamples = 0;
  Flip flip = Flip::None;
  std::string hash;  // FNV-1a 64 of the PNG bytes, 16 hex digits

  nlohmann::json to_json() const;
  static IndexRecord from_json(const nlohmann::json& j);
};

std::string hex64(std::uint64_t v);

/// Images are rendered in parallel; the records come back in idx order and
/// the output does not depend on thread count.
std::vector<IndexRecord> write_dataset(const std::filesystem::path& dir, const DatasetOptions& opt);

DatasetOptions read_dataset_config(const std::filesystem::path& dir);
std::vector<IndexRecord> read_index(const std::filesystem::path& dir);

/// PNG bytes of the record, rebuilt from its seed, label and flip.
std::vector<unsigned char> regenerate_png(const DatasetOptions& opt, const IndexRecord& rec);

}  // namespace contour
