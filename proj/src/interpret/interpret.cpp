#include "contour/interpret.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <numeric>
#include <sstream>

#include "contour/errors.hpp"
#include "contour/image.hpp"

namespace contour {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "npy writer assumes a little-endian host");

ActivationTrace trace_activations(Model<float>& model, const Tensor<float>& image,
                                  const std::vector<std::int64_t>& channels, const std::string& image_id) {
  if (!model.recurrent()) throw ConfigError(model.spec().arch_id + " has no recurrent block to trace");
  const std::int64_t s = model.spec().image_size;
  if (!(image.shape() == Shape(1, s, s, model.spec().channels))) {
    throw ShapeError("trace input " + image.shape().str() + " does not match a " + std::to_string(s) +
                     " px model");
  }
  ad::Tape<float> tape(false);
  const ForwardPass<float> fp = model.forward(tape, tape.leaf(image), ad::NormMode::Eval);

  ActivationTrace trace;
  trace.image_id = image_id;
  trace.channels = channels;
  for (const auto& h : fp.hidden_states) {
    const Tensor<float>& v = h.value();
    for (std::int64_t ch : channels) {
      if (ch < 0 || ch >= v.shape().c()) {
        throw ShapeError("channel " + std::to_string(ch) + " outside [0, " + std::to_string(v.shape().c()) + ")");
      }
    }
    trace.height = v.shape().h();
    trace.width = v.shape().w();
    std::vector<std::vector<float>> at_t;
    for (std::int64_t ch : channels) {
      std::vector<float> map(static_cast<std::size_t>(trace.height * trace.width));
      for (std::int64_t y = 0; y < trace.height; ++y) {
        for (std::int64_t x = 0; x < trace.width; ++x) {
          map[static_cast<std::size_t>(y * trace.width + x)] = v.at(0, y, x, ch);
        }
      }
      at_t.push_back(std::move(map));
    }
    trace.maps.push_back(std::move(at_t));
  }
  return trace;
}

namespace {

std::vector<std::uint8_t> normalize_map(const std::vector<float>& map) {
  const auto [lo, hi] = std::minmax_element(map.begin(), map.end());
  std::vector<std::uint8_t> out(map.size(), 0);
  if (map.empty() || !(*hi > *lo)) return out;
  const double span = static_cast<double>(*hi) - static_cast<double>(*lo);
  for (std::size_t i = 0; i < map.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(std::lround(255.0 * (static_cast<double>(map[i]) - *lo) / span));
  }
  return out;
}

std::string round_trip(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace

std::vector<std::uint8_t> encode_npy(const std::vector<std::int64_t>& shape, const std::vector<float>& values) {
  const std::int64_t n = std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
  if (n != static_cast<std::int64_t>(values.size())) throw ShapeError("npy shape does not match value count");
  std::string dims;
  for (std::size_t i = 0; i < shape.size(); ++i) dims += std::to_string(shape[i]) + (i + 1 < shape.size() ? ", " : "");
  if (shape.size() == 1) dims += ",";
  std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': (" + dims + "), }";
  // Magic (6) + version (2) + length (2) + header, padded to 64 with '\n' last.
  const std::size_t total = (10 + header.size() + 1 + 63) / 64 * 64;
  header.append(total - 10 - header.size() - 1, ' ');
  header += '\n';
  std::vector<std::uint8_t> out{0x93, 'N', 'U', 'M', 'P', 'Y', 1, 0};
  out.push_back(static_cast<std::uint8_t>(header.size() & 0xff));
  out.push_back(static_cast<std::uint8_t>(header.size() >> 8));
  out.insert(out.end(), header.begin(), header.end());
  const auto* raw = reinterpret_cast<const std::uint8_t*>(values.data());
  out.insert(out.end(), raw, raw + values.size() * sizeof(float));
  return out;
}

std::vector<float> decode_npy(const std::vector<std::uint8_t>& bytes, std::vector<std::int64_t>* shape) {
  static constexpr std::uint8_t magic[] = {0x93, 'N', 'U', 'M', 'P', 'Y', 1, 0};
  if (bytes.size() < 10 || !std::equal(std::begin(magic), std::end(magic), bytes.begin())) {
    throw FormatError("not a version 1.0 .npy file");
  }
  const std::size_t hlen = bytes[8] | (static_cast<std::size_t>(bytes[9]) << 8);
  if (bytes.size() < 10 + hlen) throw FormatError("truncated .npy header");
  const std::string header(bytes.begin() + 10, bytes.begin() + 10 + static_cast<std::ptrdiff_t>(hlen));
  if (header.find("'descr': '<f4'") == std::string::npos || header.find("'fortran_order': False") == std::string::npos) {
    throw FormatError(".npy array is not little-endian float32 in C order");
  }
  const auto open = header.find("'shape': (");
  const auto close = header.find(')', open);
  if (open == std::string::npos || close == std::string::npos) throw FormatError(".npy header has no shape");
  std::vector<std::int64_t> dims;
  std::stringstream ss(header.substr(open + 10, close - open - 10));
  for (std::string tok; std::getline(ss, tok, ',');) {
    tok.erase(std::remove(tok.begin(), tok.end(), ' '), tok.end());
    if (!tok.empty()) dims.push_back(std::stoll(tok));
  }
  const std::int64_t n = std::accumulate(dims.begin(), dims.end(), std::int64_t{1}, std::multiplies<>());
  if (bytes.size() != 10 + hlen + static_cast<std::size_t>(n) * sizeof(float)) {
    throw FormatError(".npy payload does not match its shape");
  }
  std::vector<float> values(static_cast<std::size_t>(n));
  std::memcpy(values.data(), bytes.data() + 10 + hlen, values.size() * sizeof(float));
  if (shape) *shape = dims;
  return values;
}

void write_activation_trace(const ActivationTrace& trace, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::vector<float> raw;
  nlohmann::json files = nlohmann::json::array();
  for (std::int64_t t = 0; t < trace.timesteps(); ++t) {
    for (std::size_t j = 0; j < trace.channels.size(); ++j) {
      const auto& map = trace.maps[static_cast<std::size_t>(t)][j];
      raw.insert(raw.end(), map.begin(), map.end());
      const auto [lo, hi] = std::minmax_element(map.begin(), map.end());
      const std::string name = "h_c" + std::to_string(trace.channels[j]) + "_t" + std::to_string(t + 1) + ".png";
      write_file(out_dir / name, encode_png(trace.height, trace.width, 1, normalize_map(map)));
      files.push_back({{"file", name},
                       {"channel", trace.channels[j]},
                       {"t", t + 1},
                       {"min", static_cast<double>(*lo)},
                       {"max", static_cast<double>(*hi)}});
    }
  }
  write_file(out_dir / "activations.npy",
             encode_npy({trace.timesteps(), static_cast<std::int64_t>(trace.channels.size()), trace.height,
                         trace.width},
                        raw));
  const std::string meta = nlohmann::json{{"image", trace.image_id},
                                          {"channels", trace.channels},
                                          {"timesteps", trace.timesteps()},
                                          {"height", trace.height},
                                          {"width", trace.width},
                                          {"raw", "activations.npy"},
                                          {"maps", files}}
                               .dump(2) +
                           "\n";
  write_file(out_dir / "trace.json", std::span(reinterpret_cast<const unsigned char*>(meta.data()), meta.size()));
}

ActivationTrace dump_activations(Model<float>& model, const Tensor<float>& image,
                                 const std::vector<std::int64_t>& channels, const fs::path& out_dir,
                                 const std::string& image_id) {
  ActivationTrace trace = trace_activations(model, image, channels, image_id);
  write_activation_trace(trace, out_dir);
  return trace;
}

double PcaResult::cumulative(std::size_t top) const {
  double s = 0;
  for (std::size_t i = 0; i < std::min(top, ratios.size()); ++i) s += ratios[i];
  return s;
}

nlohmann::json PcaResult::to_json() const {
  return {{"kh", kh},
          {"kw", kw},
          {"members", members},
          {"ratios", ratios},
          {"eigenvalues", eigenvalues},
          {"top4_cumulative", cumulative(4)}};
}

PcaResult kernel_pca(const Tensor<double>& bank) {
  const Shape& s = bank.shape();
  if (s[3] != 1) throw ShapeError("kernel bank must be (kh, kw, members, 1), got " + s.str());
  if (s[2] < 2) throw ShapeError("kernel PCA needs at least two bank members");
  const std::int64_t d = s[0] * s[1], m = s[2];

  Eigen::MatrixXd x(m, d);
  for (std::int64_t y = 0; y < s[0]; ++y) {
    for (std::int64_t xx = 0; xx < s[1]; ++xx) {
      for (std::int64_t k = 0; k < m; ++k) x(k, y * s[1] + xx) = bank.at(y, xx, k, 0);
    }
  }
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - mean;
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(m - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericalError("covariance eigendecomposition did not converge");

  PcaResult r;
  r.kh = s[0];
  r.kw = s[1];
  r.members = m;
  r.mean.assign(mean.data(), mean.data() + d);
  // Eigen returns ascending eigenvalues; walk them backwards.
  double total = 0;
  for (std::int64_t i = d - 1; i >= 0; --i) {
    const double lambda = std::max(0.0, solver.eigenvalues()(i));
    r.eigenvalues.push_back(lambda);
    total += lambda;
    const auto v = solver.eigenvectors().col(i);
    r.components.emplace_back(v.data(), v.data() + d);
  }
  for (std::size_t i = 0; i < r.eigenvalues.size(); ++i) {
    r.ratios.push_back(total > 0 ? r.eigenvalues[i] / total : (i == 0 ? 1.0 : 0.0));
  }
  return r;
}

Tensor<double> horizontal_bank(const Model<float>& model, const std::string& which) {
  const std::string name = "v1net/w_" + which + "_depthwise";
  if (!model.params().contains(name)) throw ConfigError(model.spec().arch_id + " has no " + name + " bank");
  return model.params().get(name).value.cast<double>();
}

std::vector<std::uint8_t> render_pc_gallery(const std::vector<GalleryRow>& rows, std::int64_t columns,
                                            std::int64_t scale) {
  if (rows.empty() || columns < 1 || scale < 1) throw ConfigError("gallery needs rows, columns and a scale");
  std::int64_t cell = 0;
  for (const auto& r : rows) cell = std::max({cell, r.pca.kh, r.pca.kw});
  cell *= scale;
  const std::int64_t gap = 2;
  const std::int64_t height = static_cast<std::int64_t>(rows.size()) * (cell + gap) + gap;
  const std::int64_t width = columns * (cell + gap) + gap;
  std::vector<std::uint8_t> px(static_cast<std::size_t>(height * width), 64);

  PngText text;
  for (std::size_t ri = 0; ri < rows.size(); ++ri) {
    const PcaResult& p = rows[ri].pca;
    const std::int64_t oy = gap + static_cast<std::int64_t>(ri) * (cell + gap);
    const std::int64_t n = std::min<std::int64_t>(columns, static_cast<std::int64_t>(p.components.size()));
    std::string ratios;
    for (std::int64_t c = 0; c < n; ++c) {
      const auto& comp = p.components[static_cast<std::size_t>(c)];
      const std::vector<float> as_float(comp.begin(), comp.end());
      const std::vector<std::uint8_t> gray = normalize_map(as_float);
      const std::int64_t ox = gap + c * (cell + gap) + (cell - p.kw * scale) / 2;
      const std::int64_t oy2 = oy + (cell - p.kh * scale) / 2;
      for (std::int64_t y = 0; y < p.kh * scale; ++y) {
        for (std::int64_t x = 0; x < p.kw * scale; ++x) {
          px[static_cast<std::size_t>((oy2 + y) * width + ox + x)] =
              gray[static_cast<std::size_t>((y / scale) * p.kw + x / scale)];
        }
      }
      ratios += (c ? "," : "") + round_trip(p.ratios[static_cast<std::size_t>(c)]);
    }
    text.emplace_back("row" + std::to_string(ri), rows[ri].name);
    text.emplace_back("ratios" + std::to_string(ri), ratios);
  }
  return encode_png(height, width, 1, px, text);
}

std::vector<std::vector<double>> read_gallery_ratios(const std::vector<std::uint8_t>& png) {
  std::vector<std::vector<double>> out;
  const PngText text = read_png_text(png);
  for (std::size_t ri = 0;; ++ri) {
    const auto it = std::find_if(text.begin(), text.end(),
                                 [&](const auto& kv) { return kv.first == "ratios" + std::to_string(ri); });
    if (it == text.end()) break;
    std::vector<double> row;
    std::stringstream ss(it->second);
    for (std::string tok; std::getline(ss, tok, ',');) {
      double v = 0;
      const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (res.ec != std::errc()) throw FormatError("bad ratio annotation '" + tok + "'");
      row.push_back(v);
    }
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace contour
