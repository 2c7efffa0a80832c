#include <string>

#include "contour/hash.hpp"
#include "contour/ops.hpp"
#include "contour/optim.hpp"
#include "contour/rng.hpp"
#include "contour/v1net.hpp"

namespace contour {

using ad::Var;

void V1NetConfig::validate() const {
  auto odd = [](std::int64_t k, const char* what) {
    if (k < 1 || k % 2 == 0) {
      throw ShapeError(std::string(what) + " kernel must be odd and positive, got " + std::to_string(k));
    }
  };
  odd(input_kernel, "input");
  odd(exc_kernel, "excitatory");
  odd(inhdiv_kernel, "inhibitory/divisive");
  if (width < 1) throw ShapeError("v1net width must be positive");
  if (timesteps < 1) throw ShapeError("v1net timesteps must be >= 1, got " + std::to_string(timesteps));
  if (!(ln_eps > 0)) throw ShapeError("v1net layer-norm eps must be positive");
}

nlohmann::json V1NetConfig::to_json() const {
  return {{"width", width},           {"input_kernel", input_kernel}, {"exc_kernel", exc_kernel},
          {"inhdiv_kernel", inhdiv_kernel}, {"timesteps", timesteps}, {"ln_eps", ln_eps},
          {"prefix", prefix}};
}

V1NetConfig V1NetConfig::from_json(const nlohmann::json& j) {
  V1NetConfig c;
  c.width = j.value("width", c.width);
  c.input_kernel = j.value("input_kernel", c.input_kernel);
  c.exc_kernel = j.value("exc_kernel", c.exc_kernel);
  c.inhdiv_kernel = j.value("inhdiv_kernel", c.inhdiv_kernel);
  c.timesteps = j.value("timesteps", c.timesteps);
  c.ln_eps = j.value("ln_eps", c.ln_eps);
  c.prefix = j.value("prefix", c.prefix);
  c.validate();
  return c;
}

std::int64_t v1net_param_count(const V1NetConfig& cfg) {
  const std::int64_t k = cfg.width;
  const std::int64_t ki = cfg.input_kernel * cfg.input_kernel;
  const std::int64_t gates = 2 * (ki * k + k * 4 * k) + 4 * k;
  auto bank = [k](std::int64_t ks) { return ks * ks * k + k * k + k; };
  return gates + bank(cfg.exc_kernel) + 2 * bank(cfg.inhdiv_kernel) + 2 * k;
}

namespace {

template <class T>
ad::Parameter<T>* add_kernel(ad::ParameterStore<T>& store, const std::string& name, Shape shape,
                             ad::FanMode mode, std::uint64_t seed, ad::ParamGroup group) {
  return &store.add(name, ad::variance_scaling_init<T>(shape, mode, derive_seed(seed, fnv1a64(name))), group);
}

template <class T>
void check_shape(const ad::Parameter<T>* p, const Shape& want) {
  if (!(p->value.shape() == want)) {
    throw ShapeError("parameter '" + p->name + "' has shape " + p->value.shape().str() + ", expected " + want.str());
  }
}

// Runs one named stage; non-finite values surface with the stage named.
template <class F>
auto stage(const char* name, F f) {
  try {
    return f();
  } catch (const NumericalError& e) {
    throw NumericalError(std::string("v1net: non-finite value in ") + name + " stage (" + e.what() + ")");
  }
}

}  // namespace

template <class T>
V1NetParams<T> v1net_init(ad::ParameterStore<T>& store, const V1NetConfig& cfg, std::uint64_t seed,
                          ad::ParamGroup kernel_group) {
  cfg.validate();
  const std::int64_t k = cfg.width;
  const std::string& p = cfg.prefix;
  auto dw = [&](const std::string& n, std::int64_t ks) {
    return add_kernel(store, p + "/" + n, Shape(ks, ks, k, 1), ad::FanMode::DepthwiseIn, seed, kernel_group);
  };
  auto pw = [&](const std::string& n, std::int64_t out) {
    return add_kernel(store, p + "/" + n, Shape(1, 1, k, out), ad::FanMode::In, seed, kernel_group);
  };
  auto zeros = [&](const std::string& n, std::int64_t c, ad::ParamGroup g) {
    return &store.add(p + "/" + n, Tensor<T>(Shape::vec(c)), g);
  };
  V1NetParams<T> out{};
  out.w_xh_depthwise = dw("w_xh_depthwise", cfg.input_kernel);
  out.w_xh_pointwise = pw("w_xh_pointwise", 4 * k);
  out.gate_bias = zeros("gate_bias", 4 * k, kernel_group);
  out.u_hh_depthwise = dw("u_hh_depthwise", cfg.input_kernel);
  out.u_hh_pointwise = pw("u_hh_pointwise", 4 * k);
  out.w_exc_depthwise = dw("w_exc_depthwise", cfg.exc_kernel);
  out.w_exc_pointwise = pw("w_exc_pointwise", k);
  out.exc_bias = zeros("exc_bias", k, kernel_group);
  out.w_inh_depthwise = dw("w_inh_depthwise", cfg.inhdiv_kernel);
  out.w_inh_pointwise = pw("w_inh_pointwise", k);
  out.inh_bias = zeros("inh_bias", k, kernel_group);
  out.w_div_depthwise = dw("w_div_depthwise", cfg.inhdiv_kernel);
  out.w_div_pointwise = pw("w_div_pointwise", k);
  out.div_bias = zeros("div_bias", k, kernel_group);
  out.ln_gamma = &store.add(p + "/ln_gamma", Tensor<T>(Shape::vec(k), T{1}), ad::ParamGroup::Norm);
  out.ln_beta = zeros("ln_beta", k, ad::ParamGroup::Norm);
  return out;
}

template <class T>
V1NetParams<T> v1net_bind(ad::ParameterStore<T>& store, const V1NetConfig& cfg) {
  cfg.validate();
  const std::int64_t k = cfg.width;
  auto get = [&](const char* n, Shape want) {
    ad::Parameter<T>* p = &store.get(cfg.prefix + "/" + n);
    check_shape(p, want);
    return p;
  };
  const std::int64_t ki = cfg.input_kernel, ke = cfg.exc_kernel, kd = cfg.inhdiv_kernel;
  V1NetParams<T> out{};
  out.w_xh_depthwise = get("w_xh_depthwise", Shape(ki, ki, k, 1));
  out.w_xh_pointwise = get("w_xh_pointwise", Shape(1, 1, k, 4 * k));
  out.gate_bias = get("gate_bias", Shape::vec(4 * k));
  out.u_hh_depthwise = get("u_hh_depthwise", Shape(ki, ki, k, 1));
  out.u_hh_pointwise = get("u_hh_pointwise", Shape(1, 1, k, 4 * k));
  out.w_exc_depthwise = get("w_exc_depthwise", Shape(ke, ke, k, 1));
  out.w_exc_pointwise = get("w_exc_pointwise", Shape(1, 1, k, k));
  out.exc_bias = get("exc_bias", Shape::vec(k));
  out.w_inh_depthwise = get("w_inh_depthwise", Shape(kd, kd, k, 1));
  out.w_inh_pointwise = get("w_inh_pointwise", Shape(1, 1, k, k));
  out.inh_bias = get("inh_bias", Shape::vec(k));
  out.w_div_depthwise = get("w_div_depthwise", Shape(kd, kd, k, 1));
  out.w_div_pointwise = get("w_div_pointwise", Shape(1, 1, k, k));
  out.div_bias = get("div_bias", Shape::vec(k));
  out.ln_gamma = get("ln_gamma", Shape::vec(k));
  out.ln_beta = get("ln_beta", Shape::vec(k));
  return out;
}

template <class T>
V1NetCell<T>::V1NetCell(V1NetConfig cfg, V1NetParams<T> params) : cfg_(std::move(cfg)), p_(params) {
  cfg_.validate();
}

template <class T>
Var<T> V1NetCell<T>::input_drive(ad::Tape<T>& tape, Var<T> x) const {
  if (x.shape().c() != cfg_.width) {
    throw ShapeError("v1net: input has " + std::to_string(x.shape().c()) + " channels, cell width is " +
                     std::to_string(cfg_.width));
  }
  return stage("gating", [&] {
    return ad::bias_add(ad::depthwise_separable_conv2d(x, tape.param(*p_.w_xh_depthwise), tape.param(*p_.w_xh_pointwise)),
                        tape.param(*p_.gate_bias));
  });
}

template <class T>
V1NetState<T> V1NetCell<T>::zero_state(ad::Tape<T>& tape, const Shape& x_shape) const {
  V1NetState<T> s;
  s.h = tape.leaf(Tensor<T>(x_shape));
  s.c = tape.leaf(Tensor<T>(x_shape));
  s.zero = true;
  return s;
}

template <class T>
std::pair<V1NetState<T>, StepTrace<T>> V1NetCell<T>::step(ad::Tape<T>& tape, Var<T> x,
                                                          const V1NetState<T>& prev) const {
  if (!(x.shape() == prev.h.shape()) || !(x.shape() == prev.c.shape())) {
    throw ShapeError("v1net step: input " + x.shape().str() + " does not match state " + prev.h.shape().str());
  }
  return step_with_drive(tape, input_drive(tape, x), prev);
}

template <class T>
std::pair<V1NetState<T>, StepTrace<T>> V1NetCell<T>::step_with_drive(ad::Tape<T>& tape, Var<T> drive,
                                                                     const V1NetState<T>& prev) const {
  const std::int64_t k = cfg_.width;
  const Shape& s = prev.h.shape();
  if (!(drive.shape() == Shape(s.n(), s.h(), s.w(), 4 * k)) || s.c() != k || !(prev.c.shape() == s)) {
    throw ShapeError("v1net step: drive " + drive.shape().str() + " / state " + s.str() +
                     " inconsistent with width " + std::to_string(k));
  }
  StepTrace<T> tr;

  stage("gating", [&] {
    Var<T> pre = drive;
    if (!prev.zero) {
      pre = ad::add(pre, ad::depthwise_separable_conv2d(prev.h, tape.param(*p_.u_hh_depthwise),
                                                        tape.param(*p_.u_hh_pointwise)));
    }
    Var<T> gates = ad::sigmoid(pre);
    tr.f = ad::slice_channels(gates, 0, k);
    tr.i = ad::slice_channels(gates, k, k);
    tr.o = ad::slice_channels(gates, 2 * k, k);
    tr.g = ad::slice_channels(gates, 3 * k, k);
    return 0;
  });

  // A zero hidden state gives zero convolution output, so the bank reduces
  // to sigmoid(bias); the bias still receives its gradient.
  auto bank = [&](ad::Parameter<T>* dw, ad::Parameter<T>* pw, ad::Parameter<T>* bias) {
    Var<T> lin = prev.zero ? tape.leaf(Tensor<T>(s))
                           : ad::depthwise_separable_conv2d(prev.h, tape.param(*dw), tape.param(*pw));
    return ad::sigmoid(ad::bias_add(lin, tape.param(*bias)));
  };

  stage("horizontal excitation/inhibition", [&] {
    tr.exc = bank(p_.w_exc_depthwise, p_.w_exc_pointwise, p_.exc_bias);
    tr.inh = bank(p_.w_inh_depthwise, p_.w_inh_pointwise, p_.inh_bias);
    return 0;
  });
  stage("gain control", [&] {
    tr.div = bank(p_.w_div_depthwise, p_.w_div_pointwise, p_.div_bias);
    return 0;
  });
  stage("candidate grouping", [&] {
    tr.candidate = ad::sub(ad::mul(tr.div, ad::add(tr.g, tr.exc)), tr.inh);
    return 0;
  });

  V1NetState<T> next;
  stage("state mixing", [&] {
    Var<T> fresh = ad::mul(tr.i, ad::tanh(tr.candidate));
    next.c = prev.zero ? fresh : ad::add(ad::mul(tr.f, prev.c), fresh);
    Var<T> normed = ad::layer_norm(next.c, tape.param(*p_.ln_gamma), tape.param(*p_.ln_beta),
                                   static_cast<T>(cfg_.ln_eps));
    next.h = ad::mul(tr.o, ad::relu(normed));
    return 0;
  });
  return {next, tr};
}

template <class T>
Unrolled<T> V1NetCell<T>::unroll(ad::Tape<T>& tape, Var<T> x, std::int64_t timesteps) const {
  if (timesteps < 1) throw ShapeError("v1net unroll: timesteps must be >= 1, got " + std::to_string(timesteps));
  Unrolled<T> out;
  const Var<T> drive = input_drive(tape, x);
  V1NetState<T> state = zero_state(tape, x.shape());
  for (std::int64_t t = 0; t < timesteps; ++t) {
    auto [next, trace] = step_with_drive(tape, drive, state);
    state = next;
    out.states.push_back(next);
    out.traces.push_back(trace);
  }
  out.final = state;
  return out;
}

template V1NetParams<float> v1net_init(ad::ParameterStore<float>&, const V1NetConfig&, std::uint64_t, ad::ParamGroup);
template V1NetParams<double> v1net_init(ad::ParameterStore<double>&, const V1NetConfig&, std::uint64_t, ad::ParamGroup);
template V1NetParams<float> v1net_bind(ad::ParameterStore<float>&, const V1NetConfig&);
template V1NetParams<double> v1net_bind(ad::ParameterStore<double>&, const V1NetConfig&);
template class V1NetCell<float>;
template class V1NetCell<double>;

}  // namespace contour
