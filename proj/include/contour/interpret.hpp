#pragma once

// Interpretability artifacts for trained recurrent models: per-timestep
// hidden-state maps and PCA of the V1Net horizontal kernel banks.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "contour/models.hpp"

namespace contour {

struct ActivationTrace {
  std::string image_id;
  std::vector<std::int64_t> channels;
  std::int64_t height = 0;  // resolution of the recurrent block
  std::int64_t width = 0;
  // maps[t][j] is channel channels[j] of H_t, row-major height × width.
  std::vector<std::vector<std::vector<float>>> maps;

  std::int64_t timesteps() const { return static_cast<std::int64_t>(maps.size()); }
};

/// Runs one image (shape (1, S, S, 3), values in [0, 1]) through the model in
/// Eval mode and keeps the selected hidden-state channels at every
/// timestep. Throws ConfigError for non-recurrent models and ShapeError for
/// out-of-range channels or a mismatched image size.
ActivationTrace trace_activations(Model<float>& model, const Tensor<float>& image,
                                  const std::vector<std::int64_t>& channels, const std::string& image_id);

/// Writes h_c<ch>_t<t>.png (per-map min-max to [0, 255]; a constant map is
/// all 0), activations.npy (float32, shape (T, channels, h, w)) and
/// trace.json into out_dir.
void write_activation_trace(const ActivationTrace& trace, const std::filesystem::path& out_dir);

ActivationTrace dump_activations(Model<float>& model, const Tensor<float>& image,
                                 const std::vector<std::int64_t>& channels, const std::filesystem::path& out_dir,
                                 const std::string& image_id);

/// Minimal .npy v1.0 I/O for little-endian float32 C-order arrays.
std::vector<std::uint8_t> encode_npy(const std::vector<std::int64_t>& shape, const std::vector<float>& values);
std::vector<float> decode_npy(const std::vector<std::uint8_t>& bytes, std::vector<std::int64_t>* shape = nullptr);

struct PcaResult {
  std::int64_t kh = 0;
  std::int64_t kw = 0;
  std::int64_t members = 0;
  std::vector<double> mean;                     // kh·kw
  std::vector<std::vector<double>> components;  // kh·kw unit vectors, by descending ratio
  std::vector<double> eigenvalues;              // sample covariance, clipped at 0
  std::vector<double> ratios;                   // eigenvalue / total; [1, 0, ...] for a zero-variance bank

  double cumulative(std::size_t top) const;
  nlohmann::json to_json() const;
};

/// PCA over the flattened members of a bank shaped (kh, kw, members, 1),
/// the depthwise kernel layout. Mean-subtracted sample covariance, dense
/// self-adjoint eigendecomposition. Throws ShapeError for fewer than two
/// members.
PcaResult kernel_pca(const Tensor<double>& bank);

inline constexpr const char* kHorizontalBanks[] = {"exc", "inh", "div"};

/// The depthwise bank "v1net/w_<which>_depthwise" as doubles. Throws
/// ConfigError if the model has no V1Net block.
Tensor<double> horizontal_bank(const Model<float>& model, const std::string& which);

struct GalleryRow {
  std::string name;
  PcaResult pca;
};

/// One row per bank, top `columns` components left to right, each min-max
/// scaled and upsampled by `scale`; smaller kernels are centered in the
/// cell. Row names and ratios are stored as PNG text chunks
/// ("row<i>" and "ratios<i>", comma-separated, round-trip precision).
std::vector<std::uint8_t> render_pc_gallery(const std::vector<GalleryRow>& rows, std::int64_t columns = 8,
                                            std::int64_t scale = 6);

/// Parses the ratio annotations back out of a gallery PNG.
std::vector<std::vector<double>> read_gallery_ratios(const std::vector<std::uint8_t>& png);

}  // namespace contour
