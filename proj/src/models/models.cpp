#include "contour/models.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

#include "contour/convgru.hpp"
#include "contour/hash.hpp"
#include "contour/optim.hpp"
#include "contour/rng.hpp"

namespace contour {

using ad::ParamGroup;
using ad::Var;

std::string_view to_string(LayerType t) {
  switch (t) {
    case LayerType::Conv2D: return "Conv2D";
    case LayerType::Conv2DSM: return "Conv2D_SM";
    case LayerType::AtrousConv2D: return "Atrous_Conv2D";
    case LayerType::ConvGRU2D: return "ConvGRU2D";
    case LayerType::V1Net: return "V1Net";
    case LayerType::GAP: return "GAP";
    case LayerType::Dense: return "Dense";
    case LayerType::Softmax: return "Softmax";
  }
  return "?";
}

namespace {

LayerType layer_type_from_string(std::string_view s) {
  for (auto t : {LayerType::Conv2D, LayerType::Conv2DSM, LayerType::AtrousConv2D, LayerType::ConvGRU2D,
                 LayerType::V1Net, LayerType::GAP, LayerType::Dense, LayerType::Softmax}) {
    if (to_string(t) == s) return t;
  }
  throw ConfigError("unknown layer type '" + std::string(s) + "'");
}

bool is_conv(LayerType t) {
  return t == LayerType::Conv2D || t == LayerType::Conv2DSM || t == LayerType::AtrousConv2D;
}

bool is_recurrent(LayerType t) { return t == LayerType::ConvGRU2D || t == LayerType::V1Net; }

}  // namespace

nlohmann::json ModelSpec::to_json() const {
  nlohmann::json layers_json = nlohmann::json::array();
  for (const auto& l : layers) {
    layers_json.push_back({{"type", to_string(l.type)},
                           {"kernel", l.kernel},
                           {"n_out", l.n_out},
                           {"max_pool", l.max_pool},
                           {"dilation", l.dilation},
                           {"timesteps", l.timesteps},
                           {"norm_after", l.norm_after}});
  }
  return {{"arch_id", arch_id}, {"image_size", image_size}, {"channels", channels}, {"layers", layers_json}};
}

ModelSpec ModelSpec::from_json(const nlohmann::json& j) {
  ModelSpec s = model_spec(j.at("arch_id").get<std::string>(), j.value("image_size", std::int64_t{64}));
  s.channels = j.value("channels", s.channels);
  if (j.contains("layers")) {
    s.layers.clear();
    for (const auto& l : j.at("layers")) {
      LayerRecord r{layer_type_from_string(l.at("type").get<std::string>())};
      r.kernel = l.at("kernel");
      r.n_out = l.at("n_out");
      r.max_pool = l.at("max_pool");
      r.dilation = l.at("dilation");
      r.timesteps = l.at("timesteps");
      r.norm_after = l.at("norm_after");
      s.layers.push_back(r);
    }
  }
  return s;
}

const std::vector<std::string>& arch_ids() {
  static const std::vector<std::string> ids = {"FF-1L",  "FF-4L",  "FF-7L",    "FF-7Lx2", "FF-SMCNN", "ATR-1L",
                                               "ATR-4L", "ATR-7L", "ATR-7Lx2", "GRU-1L",  "V1NET-1L"};
  return ids;
}

ModelSpec model_spec(std::string_view arch_id, std::int64_t image_size) {
  if (image_size < 2) throw ConfigError("image size must be >= 2");
  struct Family {
    LayerType input, middle;
    int middle_count;
    std::int64_t width, dilation, timesteps;
    bool middle_norm;
  };
  static const std::map<std::string, Family, std::less<>> families = {
      {"FF-1L", {LayerType::Conv2D, LayerType::Conv2D, 1, 32, 1, 0, true}},
      {"FF-4L", {LayerType::Conv2D, LayerType::Conv2D, 3, 32, 1, 0, true}},
      {"FF-7L", {LayerType::Conv2D, LayerType::Conv2D, 5, 32, 1, 0, true}},
      {"FF-7Lx2", {LayerType::Conv2D, LayerType::Conv2D, 5, 64, 1, 0, true}},
      {"FF-SMCNN", {LayerType::Conv2DSM, LayerType::Conv2D, 5, 32, 1, 0, true}},
      {"ATR-1L", {LayerType::Conv2D, LayerType::AtrousConv2D, 1, 32, 2, 0, true}},
      {"ATR-4L", {LayerType::Conv2D, LayerType::AtrousConv2D, 3, 32, 2, 0, true}},
      {"ATR-7L", {LayerType::Conv2D, LayerType::AtrousConv2D, 5, 32, 2, 0, true}},
      {"ATR-7Lx2", {LayerType::Conv2D, LayerType::AtrousConv2D, 5, 64, 2, 0, true}},
      {"GRU-1L", {LayerType::Conv2D, LayerType::ConvGRU2D, 1, 32, 1, 5, true}},
      // The cell's own layer norm replaces a trailing norm layer.
      {"V1NET-1L", {LayerType::Conv2D, LayerType::V1Net, 1, 32, 1, 5, false}},
  };
  auto it = families.find(arch_id);
  if (it == families.end()) {
    std::string known;
    for (const auto& id : arch_ids()) known += (known.empty() ? "" : ", ") + id;
    throw ConfigError("unknown arch_id '" + std::string(arch_id) + "' (known: " + known + ")");
  }
  const Family& f = it->second;
  ModelSpec s;
  s.arch_id = it->first;
  s.image_size = image_size;
  s.layers.push_back({f.input, 7, 32, true, 1, 0, true});
  for (int i = 0; i < f.middle_count; ++i) {
    s.layers.push_back({f.middle, 5, f.width, false, f.dilation, f.timesteps, f.middle_norm});
  }
  s.layers.push_back({LayerType::GAP});
  s.layers.push_back({LayerType::Dense, 0, 512});
  s.layers.push_back({LayerType::Dense, 0, 2});
  s.layers.push_back({LayerType::Softmax, 0, 2});
  return s;
}

std::string layer_prefix(const ModelSpec& spec, std::size_t i) {
  const LayerType t = spec.layers.at(i).type;
  if (i == 0) return "input";
  auto ordinal = [&](auto pred) {
    int n = 0;
    for (std::size_t j = 1; j <= i; ++j) n += pred(spec.layers[j].type) ? 1 : 0;
    return std::to_string(n);
  };
  if (is_conv(t)) return "conv" + ordinal(is_conv);
  if (t == LayerType::ConvGRU2D) return "gru";
  if (t == LayerType::V1Net) return "v1net";
  if (t == LayerType::Dense) return "readout/dense" + ordinal([](LayerType u) { return u == LayerType::Dense; });
  return "";
}

bool is_running_statistic(std::string_view name) {
  return name.ends_with("/moving_mean") || name.ends_with("/moving_variance");
}

Tensor<double> dog_kernel_bank(std::int64_t size, std::int64_t in_channels, std::int64_t count,
                               std::span<const SigmaPair> pairs) {
  if (size < 1 || size % 2 == 0) throw ShapeError("DoG kernel size must be odd, got " + std::to_string(size));
  if (in_channels < 1 || count < 1) throw ShapeError("DoG bank needs positive channel and slot counts");
  if (pairs.empty()) throw ConfigError("DoG bank needs at least one sigma pair");
  for (const auto& p : pairs) {
    if (!(p.center > 0) || !(p.center < p.surround)) {
      throw ConfigError("DoG sigmas must satisfy 0 < center < surround, got (" + std::to_string(p.center) + ", " +
                        std::to_string(p.surround) + ")");
    }
  }
  const std::int64_t r = size / 2;
  auto gaussian = [&](double sigma) {
    std::vector<double> g(static_cast<std::size_t>(size * size));
    double total = 0;
    for (std::int64_t y = -r; y <= r; ++y) {
      for (std::int64_t x = -r; x <= r; ++x) {
        const double v = std::exp(-static_cast<double>(x * x + y * y) / (2 * sigma * sigma));
        g[static_cast<std::size_t>((y + r) * size + (x + r))] = v;
        total += v;
      }
    }
    for (double& v : g) v /= total;
    return g;
  };
  Tensor<double> bank(Shape(size, size, in_channels, count));
  for (std::int64_t j = 0; j < count; ++j) {
    const SigmaPair& p = pairs[static_cast<std::size_t>(j) % pairs.size()];
    const auto center = gaussian(p.center), surround = gaussian(p.surround);
    for (std::int64_t y = 0; y < size; ++y) {
      for (std::int64_t x = 0; x < size; ++x) {
        const auto idx = static_cast<std::size_t>(y * size + x);
        const double v = (center[idx] - surround[idx]) / static_cast<double>(in_channels);
        for (std::int64_t c = 0; c < in_channels; ++c) bank.at(y, x, c, j) = v;
      }
    }
  }
  return bank;
}

namespace {

V1NetConfig v1net_config(const LayerRecord& l) {
  V1NetConfig c;
  c.width = l.n_out;
  c.input_kernel = l.kernel;
  c.timesteps = l.timesteps;
  c.prefix = "v1net";
  return c;
}

ConvGruConfig gru_config(const LayerRecord& l) {
  ConvGruConfig c;
  c.width = l.n_out;
  c.kernel = l.kernel;
  c.timesteps = l.timesteps;
  c.prefix = "gru";
  return c;
}

template <class T>
Tensor<T> init_kernel(const std::string& name, Shape shape, std::uint64_t seed) {
  return ad::variance_scaling_init<T>(shape, ad::FanMode::In, derive_seed(seed, fnv1a64(name)));
}

}  // namespace

template <class T>
Model<T>::Model(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  init(seed);
}

template <class T>
Model<T>::Model(ModelSpec spec, ad::ParameterStore<T> params) : spec_(std::move(spec)), params_(std::move(params)) {
  check_params();
}

template <class T>
void Model<T>::init(std::uint64_t seed) {
  std::int64_t cin = spec_.channels;
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const LayerRecord& l = spec_.layers[i];
    const std::string pre = layer_prefix(spec_, i);
    const ParamGroup group = i == 0 ? ParamGroup::InputConv : ParamGroup::Intermediate;
    switch (l.type) {
      case LayerType::Conv2D:
      case LayerType::AtrousConv2D: {
        const std::string k = pre + "/conv/kernel";
        params_.add(k, init_kernel<T>(k, Shape(l.kernel, l.kernel, cin, l.n_out), seed), group);
        params_.add(pre + "/conv/bias", Tensor<T>(Shape::vec(l.n_out)), group);
        cin = l.n_out;
        break;
      }
      case LayerType::Conv2DSM: {
        if (l.n_out % 2 != 0) throw ConfigError("Conv2D_SM needs an even filter count");
        const std::int64_t half = l.n_out / 2;
        const std::string k = pre + "/conv/kernel";
        params_.add(k, init_kernel<T>(k, Shape(l.kernel, l.kernel, cin, half), seed), group);
        params_.add(pre + "/conv/bias", Tensor<T>(Shape::vec(half)), group);
        params_.add(pre + "/conv/dog", dog_kernel_bank(l.kernel, cin, half).template cast<T>(), ParamGroup::Fixed,
                    false);
        cin = l.n_out;
        break;
      }
      case LayerType::ConvGRU2D:
        if (cin != l.n_out) throw ConfigError("ConvGRU2D input width must equal its width");
        conv_gru_init(params_, gru_config(l), seed);
        break;
      case LayerType::V1Net:
        if (cin != l.n_out) throw ConfigError("V1Net input width must equal its width");
        v1net_init(params_, v1net_config(l), seed);
        break;
      case LayerType::Dense: {
        const std::string k = pre + "/kernel";
        params_.add(k, init_kernel<T>(k, Shape(1, 1, cin, l.n_out), seed), ParamGroup::Readout);
        params_.add(pre + "/bias", Tensor<T>(Shape::vec(l.n_out)), ParamGroup::Readout);
        cin = l.n_out;
        break;
      }
      case LayerType::GAP:
      case LayerType::Softmax:
        break;
    }
    if (l.norm_after) {
      params_.add(pre + "/norm/gamma", Tensor<T>(Shape::vec(cin), T{1}), ParamGroup::Norm);
      params_.add(pre + "/norm/beta", Tensor<T>(Shape::vec(cin)), ParamGroup::Norm);
      params_.add(pre + "/norm/moving_mean", Tensor<T>(Shape::vec(cin)), ParamGroup::Norm, false);
      params_.add(pre + "/norm/moving_variance", Tensor<T>(Shape::vec(cin), T{1}), ParamGroup::Norm, false);
    }
  }
}

template <class T>
void Model<T>::check_params() const {
  const Model<T> reference(spec_, std::uint64_t{0});
  for (const auto& want : reference.params_) {
    if (!params_.contains(want.name)) {
      throw FormatError(spec_.arch_id + ": missing parameter '" + want.name + "'");
    }
    const auto& have = params_.get(want.name);
    if (!(have.value.shape() == want.value.shape())) {
      throw FormatError(spec_.arch_id + ": parameter '" + want.name + "' has shape " + have.value.shape().str() +
                        ", expected " + want.value.shape().str());
    }
  }
  if (params_.size() != reference.params_.size()) {
    for (const auto& have : params_) {
      if (!reference.params_.contains(have.name)) {
        throw FormatError(spec_.arch_id + ": unexpected parameter '" + have.name + "'");
      }
    }
  }
}

template <class T>
ForwardPass<T> Model<T>::forward(ad::Tape<T>& tape, Var<T> images, ad::NormMode mode) {
  const Shape& in = images.shape();
  if (in.c() != spec_.channels || in.h() < 2 || in.w() < 2) {
    throw ShapeError(spec_.arch_id + ": input " + in.str() + " needs " + std::to_string(spec_.channels) +
                     " channels");
  }
  ForwardPass<T> out;
  Var<T> x = images;
  auto p = [&](const std::string& name) { return tape.param(params_.get(name)); };
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const LayerRecord& l = spec_.layers[i];
    const std::string pre = layer_prefix(spec_, i);
    bool activate = false;
    switch (l.type) {
      case LayerType::Conv2D:
      case LayerType::AtrousConv2D:
        x = ad::bias_add(ad::conv2d(x, p(pre + "/conv/kernel"), 1, l.dilation), p(pre + "/conv/bias"));
        activate = true;
        break;
      case LayerType::Conv2DSM: {
        const std::array<Var<T>, 2> parts = {
            ad::bias_add(ad::conv2d(x, p(pre + "/conv/kernel"), 1, l.dilation), p(pre + "/conv/bias")),
            ad::conv2d(x, p(pre + "/conv/dog"), 1, l.dilation)};
        x = ad::concat_channels<T>(parts);
        activate = true;
        break;
      }
      case LayerType::ConvGRU2D: {
        const ConvGruConfig cfg = gru_config(l);
        ConvGruCell<T> cell(cfg, conv_gru_bind(params_, cfg));
        out.hidden_states = cell.unroll(tape, x, l.timesteps);
        x = out.hidden_states.back();
        break;
      }
      case LayerType::V1Net: {
        const V1NetConfig cfg = v1net_config(l);
        V1NetCell<T> cell(cfg, v1net_bind(params_, cfg));
        auto u = cell.unroll(tape, x, l.timesteps);
        for (const auto& s : u.states) out.hidden_states.push_back(s.h);
        x = u.final.h;
        break;
      }
      case LayerType::GAP:
        x = ad::global_avg_pool(x);
        break;
      case LayerType::Dense:
        x = ad::dense(x, p(pre + "/kernel"), p(pre + "/bias"));
        // Hidden dense layers are rectified; the last one emits logits.
        activate = i + 1 < spec_.layers.size() && spec_.layers[i + 1].type == LayerType::Dense;
        break;
      case LayerType::Softmax:
        // Logits leave the graph here; the loss and predict apply softmax.
        break;
    }
    if (l.norm_after) {
      x = ad::batch_norm(x, p(pre + "/norm/gamma"), p(pre + "/norm/beta"), params_.get(pre + "/norm/moving_mean"),
                         params_.get(pre + "/norm/moving_variance"), mode, kModelNorm);
    }
    if (activate) x = ad::relu(x);
    if (l.max_pool) x = ad::max_pool2d(x, 2, 2, kernels::Padding::Same);
    out.layer_outputs.emplace_back("layer" + std::to_string(i + 1) + "/" + std::string(to_string(l.type)), x);
  }
  out.logits = x;
  return out;
}

template <class T>
std::int64_t Model<T>::count_params() const {
  std::int64_t n = 0;
  for (const auto& prm : params_) {
    if (prm.group != ParamGroup::Fixed && !is_running_statistic(prm.name)) n += prm.value.size();
  }
  return n;
}

template <class T>
std::int64_t Model<T>::count_params(std::size_t layer) const {
  const std::string pre = layer_prefix(spec_, layer);
  if (pre.empty()) return 0;
  std::int64_t n = 0;
  for (const auto& prm : params_) {
    if (prm.name.starts_with(pre + "/") && prm.group != ParamGroup::Fixed && !is_running_statistic(prm.name)) {
      n += prm.value.size();
    }
  }
  return n;
}

template <class T>
void Model<T>::freeze_for_transfer() {
  for (auto& prm : params_) {
    prm.trainable =
        (prm.group == ParamGroup::Readout || prm.group == ParamGroup::Norm) && !is_running_statistic(prm.name);
  }
}

template <class T>
std::vector<std::string> Model<T>::updated_variables() const {
  std::vector<std::string> names;
  for (const auto& prm : params_) {
    if (prm.trainable || is_running_statistic(prm.name)) names.push_back(prm.name);
  }
  return names;
}

template <class T>
bool Model<T>::recurrent() const {
  return std::any_of(spec_.layers.begin(), spec_.layers.end(), [](const LayerRecord& l) { return is_recurrent(l.type); });
}

template <class T>
void Model<T>::set_timesteps(std::int64_t timesteps) {
  if (timesteps < 1) throw ConfigError("timesteps must be >= 1");
  bool found = false;
  for (auto& l : spec_.layers) {
    if (is_recurrent(l.type)) {
      l.timesteps = timesteps;
      found = true;
    }
  }
  if (!found) throw ConfigError(spec_.arch_id + " has no recurrent block");
}

template <class T>
std::string Model<T>::summary() const {
  std::ostringstream os;
  const std::int64_t half = (spec_.image_size + 1) / 2;
  os << spec_.arch_id << "  input [" << spec_.image_size << "," << spec_.image_size << "," << spec_.channels << "]\n";
  os << std::left << std::setw(7) << "Layer" << std::setw(15) << "Type" << std::setw(8) << "Kernel" << std::setw(6)
     << "Dil" << std::setw(7) << "N_out" << std::setw(9) << "Pooling" << std::setw(4) << "T" << std::setw(6)
     << "Norm" << std::setw(16) << "Output" << "Params\n";

  // Consecutive identical intermediate layers share one numbered row.
  std::size_t i = 0;
  int row = 1;
  const std::size_t readout = static_cast<std::size_t>(
      std::find_if(spec_.layers.begin(), spec_.layers.end(), [](const LayerRecord& l) { return l.type == LayerType::GAP; }) -
      spec_.layers.begin());
  std::int64_t channels = spec_.channels;
  while (i < spec_.layers.size()) {
    const LayerRecord& l = spec_.layers[i];
    std::size_t j = i + 1;
    if (i > 0 && i < readout) {
      while (j < readout && spec_.layers[j] == l) ++j;
    }
    std::int64_t params = 0;
    for (std::size_t k = i; k < j; ++k) params += count_params(k);
    std::string label;
    if (i >= readout) {
      label = std::to_string(row);
    } else {
      label = j - i > 1 ? std::to_string(row) + "-" + std::to_string(row + static_cast<int>(j - i) - 1)
                        : std::to_string(row);
    }
    std::string output;
    if (l.type == LayerType::GAP) {
      output = "[1,1," + std::to_string(channels) + "]";
    } else if (l.type == LayerType::Dense || l.type == LayerType::Softmax) {
      channels = l.n_out;
      output = "[" + std::to_string(channels) + "]";
    } else {
      channels = l.n_out;
      output = "[" + std::to_string(half) + "," + std::to_string(half) + "," + std::to_string(channels) + "]";
    }
    const bool spatial = l.kernel > 0;
    os << std::setw(7) << label << std::setw(15) << to_string(l.type)
       << std::setw(8) << (spatial ? std::to_string(l.kernel) + "x" + std::to_string(l.kernel) : "-")
       << std::setw(6) << (spatial ? std::to_string(l.dilation) : "-")
       << std::setw(7) << (l.n_out > 0 ? std::to_string(l.n_out) : "-")
       << std::setw(9) << (l.max_pool ? "Max" : "None")
       << std::setw(4) << (l.timesteps > 0 ? std::to_string(l.timesteps) : "-")
       << std::setw(6) << (l.norm_after ? "BN" : (l.type == LayerType::V1Net ? "LN" : "-"))
       << std::setw(16) << output << params << "\n";
    if (i < readout) row += static_cast<int>(j - i);
    i = j;
  }
  os << "Trainable parameters: " << count_params() << "\n";
  return os.str();
}

template class Model<float>;
template class Model<double>;

}  // namespace contour
