#include "contour/convgru.hpp"

#include "contour/hash.hpp"
#include "contour/ops.hpp"
#include "contour/optim.hpp"
#include "contour/rng.hpp"

namespace contour {

using ad::Var;

void ConvGruConfig::validate() const {
  if (width < 1) throw ShapeError("conv-gru width must be positive");
  if (kernel < 1 || kernel % 2 == 0) throw ShapeError("conv-gru kernel must be odd, got " + std::to_string(kernel));
  if (timesteps < 1) throw ShapeError("conv-gru timesteps must be >= 1");
}

std::int64_t conv_gru_param_count(const ConvGruConfig& cfg) {
  const std::int64_t k = cfg.width, kk = cfg.kernel * cfg.kernel;
  return kk * k * 3 * k + kk * k * 2 * k + kk * k * k + 3 * k;
}

template <class T>
ConvGruParams<T> conv_gru_init(ad::ParameterStore<T>& store, const ConvGruConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::int64_t k = cfg.width, ks = cfg.kernel;
  auto kernel = [&](const char* n, std::int64_t out) {
    const std::string name = cfg.prefix + "/" + n;
    return &store.add(name,
                      ad::variance_scaling_init<T>(Shape(ks, ks, k, out), ad::FanMode::In,
                                                   derive_seed(seed, fnv1a64(name))),
                      ad::ParamGroup::Intermediate);
  };
  ConvGruParams<T> p{};
  p.w_x = kernel("w_x", 3 * k);
  p.u_zr = kernel("u_zr", 2 * k);
  p.u_cand = kernel("u_cand", k);
  p.bias = &store.add(cfg.prefix + "/bias", Tensor<T>(Shape::vec(3 * k)), ad::ParamGroup::Intermediate);
  return p;
}

template <class T>
ConvGruParams<T> conv_gru_bind(ad::ParameterStore<T>& store, const ConvGruConfig& cfg) {
  cfg.validate();
  const std::int64_t k = cfg.width, ks = cfg.kernel;
  auto get = [&](const char* n, Shape want) {
    ad::Parameter<T>* p = &store.get(cfg.prefix + "/" + n);
    if (!(p->value.shape() == want)) {
      throw ShapeError("parameter '" + p->name + "' has shape " + p->value.shape().str() + ", expected " + want.str());
    }
    return p;
  };
  return {get("w_x", Shape(ks, ks, k, 3 * k)), get("u_zr", Shape(ks, ks, k, 2 * k)),
          get("u_cand", Shape(ks, ks, k, k)), get("bias", Shape::vec(3 * k))};
}

template <class T>
ConvGruCell<T>::ConvGruCell(ConvGruConfig cfg, ConvGruParams<T> params) : cfg_(std::move(cfg)), p_(params) {
  cfg_.validate();
}

template <class T>
Var<T> ConvGruCell<T>::input_drive(ad::Tape<T>& tape, Var<T> x) const {
  if (x.shape().c() != cfg_.width) {
    throw ShapeError("conv-gru: input has " + std::to_string(x.shape().c()) + " channels, cell width is " +
                     std::to_string(cfg_.width));
  }
  return ad::bias_add(ad::conv2d(x, tape.param(*p_.w_x)), tape.param(*p_.bias));
}

template <class T>
Var<T> ConvGruCell<T>::step_with_drive(ad::Tape<T>& tape, Var<T> drive, Var<T> h_prev, bool h_prev_zero) const {
  const std::int64_t k = cfg_.width;
  const Shape& s = h_prev.shape();
  if (s.c() != k || !(drive.shape() == Shape(s.n(), s.h(), s.w(), 3 * k))) {
    throw ShapeError("conv-gru step: drive " + drive.shape().str() + " does not match state " + s.str());
  }
  Var<T> zr_pre = ad::slice_channels(drive, 0, 2 * k);
  Var<T> cand_pre = ad::slice_channels(drive, 2 * k, k);
  if (!h_prev_zero) zr_pre = ad::add(zr_pre, ad::conv2d(h_prev, tape.param(*p_.u_zr)));
  Var<T> zr = ad::sigmoid(zr_pre);
  Var<T> z = ad::slice_channels(zr, 0, k);
  Var<T> r = ad::slice_channels(zr, k, k);
  if (!h_prev_zero) cand_pre = ad::add(cand_pre, ad::conv2d(ad::mul(r, h_prev), tape.param(*p_.u_cand)));
  Var<T> cand = ad::tanh(cand_pre);
  Var<T> fresh = ad::mul(ad::one_minus(z), cand);
  return h_prev_zero ? fresh : ad::add(ad::mul(z, h_prev), fresh);
}

template <class T>
Var<T> ConvGruCell<T>::step(ad::Tape<T>& tape, Var<T> x, Var<T> h_prev) const {
  if (!(x.shape() == h_prev.shape())) {
    throw ShapeError("conv-gru step: input " + x.shape().str() + " does not match state " + h_prev.shape().str());
  }
  return step_with_drive(tape, input_drive(tape, x), h_prev, false);
}

template <class T>
std::vector<Var<T>> ConvGruCell<T>::unroll(ad::Tape<T>& tape, Var<T> x, std::int64_t timesteps) const {
  if (timesteps < 1) throw ShapeError("conv-gru unroll: timesteps must be >= 1");
  const Var<T> drive = input_drive(tape, x);
  Var<T> h = tape.leaf(Tensor<T>(x.shape()));
  std::vector<Var<T>> out;
  for (std::int64_t t = 0; t < timesteps; ++t) {
    h = step_with_drive(tape, drive, h, t == 0);
    out.push_back(h);
  }
  return out;
}

template ConvGruParams<float> conv_gru_init(ad::ParameterStore<float>&, const ConvGruConfig&, std::uint64_t);
template ConvGruParams<double> conv_gru_init(ad::ParameterStore<double>&, const ConvGruConfig&, std::uint64_t);
template ConvGruParams<float> conv_gru_bind(ad::ParameterStore<float>&, const ConvGruConfig&);
template ConvGruParams<double> conv_gru_bind(ad::ParameterStore<double>&, const ConvGruConfig&);
template class ConvGruCell<float>;
template class ConvGruCell<double>;

}  // namespace contour
