#pragma once

// Checkpoint container. All integers little-endian.
//
//   offset  size  field
//   0       8     magic "CNTRCKPT"
//   8       4     u32 format version (currently 1)
//   12      4     u32 metadata length M
//   16      M     metadata, UTF-8 JSON object
//   16+M    4     u32 record count R
//   then R records:
//           2     u16 name length L
//           L     name, UTF-8
//           1     u8 dtype (1 = float32, 2 = float64)
//           1     u8 group (0 input_conv, 1 intermediate, 2 norm, 3 readout, 4 fixed)
//           1     u8 flags (bit 0: trainable)
//           1     u8 reserved, zero
//           32    4 x i64 dims (n, h, w, c)
//           ...   payload, prod(dims) IEEE-754 values
//   end-4   4     u32 CRC-32 (zlib polynomial) of every preceding byte

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "contour/autodiff.hpp"

namespace contour {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Writes via a temporary file and rename, so an interrupted save leaves
/// the previous checkpoint intact.
template <class T>
void save_checkpoint(const std::filesystem::path& path, const ad::ParameterStore<T>& store,
                     const nlohmann::json& meta);

struct CheckpointRecord {
  std::string name;
  ad::ParamGroup group;
  bool trainable;
  Shape shape;
  std::vector<double> values;  // widened from the stored dtype
};

struct CheckpointContents {
  nlohmann::json meta;
  std::vector<CheckpointRecord> records;
};

/// Parses and verifies a checkpoint. Throws FormatError on a bad magic,
/// unknown version, truncation, or CRC mismatch.
CheckpointContents read_checkpoint(const std::filesystem::path& path);

/// Copies stored values into same-named parameters of an existing store.
/// Every store entry must be present with a matching shape. Returns the
/// metadata.
template <class T>
nlohmann::json load_checkpoint(const std::filesystem::path& path, ad::ParameterStore<T>& store);

}  // namespace contour
