#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "../support/fixtures.hpp"
#include "contour/convgru.hpp"
#include "contour/gradcheck.hpp"
#include "contour/models.hpp"
#include "contour/rng.hpp"

using namespace contour;
using namespace contour::ad;

namespace {

using oracle::random_tensor;

std::int64_t expected_count(const std::string& arch) {
  const std::int64_t n = oracle::expected_param_count(arch);
  if (n < 0) ADD_FAILURE() << "no oracle for " << arch;
  return n;
}

}  // namespace

TEST(ModelSpec, EveryArchMatchesClosedFormCount) {
  ASSERT_EQ(arch_ids().size(), 11u);
  for (const auto& id : arch_ids()) {
    Model<float> m(model_spec(id), 1);
    EXPECT_EQ(m.count_params(), expected_count(id)) << id;
  }
}

TEST(ModelSpec, FeedForwardOneLayerWithoutNormsIs48290) {
  ModelSpec s = model_spec("FF-1L");
  for (auto& l : s.layers) l.norm_after = false;
  Model<float> m(s, 1);
  EXPECT_EQ(m.count_params(), 4736 + 25632 + 16896 + 1026);
  EXPECT_EQ(m.count_params(), 48290);
}

TEST(ModelSpec, DenseLayerAndNormContributions) {
  Model<float> m(model_spec("FF-1L"), 1);
  EXPECT_EQ(m.spec().layers[3].type, LayerType::Dense);
  EXPECT_EQ(m.count_params(3), 32 * 512 + 512);
  EXPECT_EQ(m.count_params(3), 16896);

  ModelSpec without = model_spec("FF-1L");
  without.layers[1].norm_after = false;
  EXPECT_EQ(m.count_params() - Model<float>(without, 1).count_params(), 64);
}

TEST(ModelSpec, ParameterEfficiencyOrdering) {
  const auto v1 = Model<float>(model_spec("V1NET-1L"), 1).count_params();
  const auto gru = Model<float>(model_spec("GRU-1L"), 1).count_params();
  const auto wide = Model<float>(model_spec("FF-7Lx2"), 1).count_params();
  EXPECT_EQ(v1, 46210);
  EXPECT_EQ(gru, 176482);
  EXPECT_LT(v1, gru);
  EXPECT_LT(gru, wide);
  EXPECT_LT(v1net_param_count(V1NetConfig{}), conv_gru_param_count(ConvGruConfig{}));
  EXPECT_EQ(conv_gru_param_count(ConvGruConfig{}), 153696);
}

TEST(ModelSpec, FeedForwardOneLayerRows) {
  const ModelSpec s = model_spec("FF-1L");
  const std::vector<LayerRecord> want = {
      {LayerType::Conv2D, 7, 32, true, 1, 0, true}, {LayerType::Conv2D, 5, 32, false, 1, 0, true},
      {LayerType::GAP},                             {LayerType::Dense, 0, 512},
      {LayerType::Dense, 0, 2},                     {LayerType::Softmax, 0, 2}};
  EXPECT_EQ(s.layers, want);
}

TEST(ModelSpec, InputAndReadoutBlocksAreShared) {
  for (const auto& id : arch_ids()) {
    const ModelSpec s = model_spec(id);
    ASSERT_GE(s.layers.size(), 5u);
    EXPECT_EQ(s.layers[0].kernel, 7) << id;
    EXPECT_EQ(s.layers[0].n_out, 32) << id;
    EXPECT_TRUE(s.layers[0].max_pool) << id;
    const auto n = s.layers.size();
    EXPECT_EQ(s.layers[n - 4].type, LayerType::GAP) << id;
    EXPECT_EQ(s.layers[n - 3].n_out, 512) << id;
    EXPECT_EQ(s.layers[n - 2].n_out, 2) << id;
    EXPECT_EQ(s.layers[n - 1].type, LayerType::Softmax) << id;
  }
}

TEST(ModelSpec, AtrousFamilyDiffersOnlyInDilation) {
  for (const char* suffix : {"1L", "4L", "7L", "7Lx2"}) {
    const ModelSpec ff = model_spec(std::string("FF-") + suffix);
    const ModelSpec atr = model_spec(std::string("ATR-") + suffix);
    ASSERT_EQ(ff.layers.size(), atr.layers.size());
    for (std::size_t i = 0; i < ff.layers.size(); ++i) {
      LayerRecord a = atr.layers[i];
      const LayerRecord& f = ff.layers[i];
      if (i > 0 && f.type == LayerType::Conv2D) {
        EXPECT_EQ(a.type, LayerType::AtrousConv2D);
        EXPECT_EQ(a.dilation, 2);
        EXPECT_EQ(f.dilation, 1);
        a.type = f.type;
        a.dilation = f.dilation;
      }
      EXPECT_EQ(a, f) << suffix << " layer " << i;
    }
  }
}

TEST(ModelSpec, WideVariantDoublesIntermediateFilters) {
  for (const char* fam : {"FF-7L", "ATR-7L"}) {
    const ModelSpec base = model_spec(fam), wide = model_spec(std::string(fam) + "x2");
    ASSERT_EQ(base.layers.size(), wide.layers.size());
    for (std::size_t i = 1; i < base.layers.size(); ++i) {
      if (base.layers[i].type == LayerType::Conv2D || base.layers[i].type == LayerType::AtrousConv2D) {
        EXPECT_EQ(wide.layers[i].n_out, 2 * base.layers[i].n_out);
      } else {
        EXPECT_EQ(wide.layers[i], base.layers[i]);
      }
    }
  }
}

TEST(ModelSpec, RecurrentIntermediateBlocks) {
  const ModelSpec v1 = model_spec("V1NET-1L");
  EXPECT_EQ(v1.layers[1].type, LayerType::V1Net);
  EXPECT_EQ(v1.layers[1].n_out, 32);
  EXPECT_EQ(v1.layers[1].timesteps, 5);
  const ModelSpec gru = model_spec("GRU-1L");
  EXPECT_EQ(gru.layers[1].type, LayerType::ConvGRU2D);
  EXPECT_EQ(gru.layers[1].timesteps, 5);
}

TEST(ModelSpec, IntermediateDepthFollowsTableRows) {
  auto convs = [](const char* id) {
    const ModelSpec s = model_spec(id);
    return std::count_if(s.layers.begin() + 1, s.layers.end(), [](const LayerRecord& l) { return l.kernel == 5; });
  };
  EXPECT_EQ(convs("FF-1L"), 1);
  EXPECT_EQ(convs("FF-4L"), 3);
  EXPECT_EQ(convs("FF-7L"), 5);
  EXPECT_EQ(convs("FF-SMCNN"), 5);
}

TEST(ModelSpec, UnknownArchRejected) {
  EXPECT_THROW(model_spec("FF-3L"), ConfigError);
  EXPECT_THROW(model_spec("v1net-1l"), ConfigError);
}

TEST(ModelSpec, JsonRoundTripKeepsLayers) {
  ModelSpec s = model_spec("GRU-1L", 32);
  s.layers[1].timesteps = 3;
  const ModelSpec back = ModelSpec::from_json(s.to_json());
  EXPECT_EQ(back.arch_id, s.arch_id);
  EXPECT_EQ(back.image_size, 32);
  EXPECT_EQ(back.layers, s.layers);
}

TEST(Model, InitIsDeterministic) {
  Model<float> a(model_spec("V1NET-1L"), 5), b(model_spec("V1NET-1L"), 5), c(model_spec("V1NET-1L"), 6);
  bool differs = false;
  for (const auto& p : a.params()) {
    const auto& q = b.params().get(p.name);
    const auto& r = c.params().get(p.name);
    for (std::int64_t i = 0; i < p.value.size(); ++i) {
      ASSERT_EQ(p.value[i], q.value[i]) << p.name;
      differs |= p.value[i] != r.value[i];
    }
  }
  EXPECT_TRUE(differs);
}

TEST(Model, ParameterPartitionIsTotalAndDisjoint) {
  for (const auto& id : arch_ids()) {
    Model<float> m(model_spec(id), 1);
    std::set<std::string> seen;
    for (const auto& p : m.params()) {
      EXPECT_TRUE(seen.insert(p.name).second) << p.name;
      const bool readout = p.name.starts_with("readout/");
      const bool norm = p.name.find("/norm/") != std::string::npos || p.name.starts_with("v1net/ln_");
      const bool input = p.name.starts_with("input/conv/");
      EXPECT_EQ(p.group == ParamGroup::Readout, readout) << id << " " << p.name;
      EXPECT_EQ(p.group == ParamGroup::Norm, norm) << id << " " << p.name;
      EXPECT_EQ(p.group == ParamGroup::InputConv || p.group == ParamGroup::Fixed, input) << id << " " << p.name;
      if (!readout && !norm && !input) {
        EXPECT_EQ(p.group, ParamGroup::Intermediate) << id << " " << p.name;
      }
    }
  }
}

TEST(Model, TransferFreezeLeavesTenV1NetVariables) {
  Model<float> m(model_spec("V1NET-1L"), 1);
  m.freeze_for_transfer();
  const auto vars = m.updated_variables();
  const std::set<std::string> got(vars.begin(), vars.end());
  const std::set<std::string> want = {
      "readout/dense1/kernel",  "readout/dense1/bias",           "readout/dense2/kernel",
      "readout/dense2/bias",    "input/norm/gamma",              "input/norm/beta",
      "input/norm/moving_mean", "input/norm/moving_variance",    "v1net/ln_gamma",
      "v1net/ln_beta"};
  EXPECT_EQ(got, want);
  EXPECT_EQ(vars.size(), 10u);
}

TEST(Model, SoftmaxOutputsSumToOne) {
  for (const auto& id : arch_ids()) {
    Model<float> m(model_spec(id, 16), 3);
    for (auto mode : {NormMode::Train, NormMode::Eval}) {
      Tape<float> tape(false);
      auto fp = m.forward(tape, tape.leaf(random_tensor(Shape(3, 16, 16, 3), 4, 0, 1).cast<float>()), mode);
      ASSERT_EQ(fp.logits.shape(), Shape(3, 1, 1, 2)) << id;
      const Tensor<float> p = softmax(fp.logits.value());
      for (std::int64_t n = 0; n < 3; ++n) {
        EXPECT_NEAR(p[2 * n] + p[2 * n + 1], 1.0f, 1e-6f) << id;
        EXPECT_GE(p[2 * n], 0.0f);
      }
    }
  }
}

TEST(Model, IntermediateResolutionIsHalfInput) {
  Model<float> m(model_spec("V1NET-1L", 20), 1);
  Tape<float> tape(false);
  auto fp = m.forward(tape, tape.leaf(Tensor<float>(Shape(1, 20, 20, 3))), NormMode::Eval);
  ASSERT_EQ(fp.hidden_states.size(), 5u);
  for (const auto& h : fp.hidden_states) EXPECT_EQ(h.shape(), Shape(1, 10, 10, 32));
  EXPECT_EQ(fp.layer_outputs.front().second.shape(), Shape(1, 10, 10, 32));
}

TEST(Model, VariableTimestepsAtInference) {
  Model<float> m(model_spec("V1NET-1L", 12), 1);
  const auto before = m.params().size();
  for (std::int64_t t = 1; t <= 8; ++t) {
    m.set_timesteps(t);
    Tape<float> tape(false);
    auto fp = m.forward(tape, tape.leaf(random_tensor(Shape(2, 12, 12, 3), 9, 0, 1).cast<float>()), NormMode::Eval);
    EXPECT_EQ(static_cast<std::int64_t>(fp.hidden_states.size()), t);
  }
  EXPECT_EQ(m.params().size(), before);
  Model<float> ff(model_spec("FF-1L"), 1);
  EXPECT_THROW(ff.set_timesteps(3), ConfigError);
}

TEST(Model, AdoptingParametersValidatesNamesAndShapes) {
  Model<float> m(model_spec("GRU-1L"), 1);
  Model<float> copy(m.spec(), m.params());
  EXPECT_EQ(copy.count_params(), m.count_params());

  ad::ParameterStore<float> wrong;
  for (const auto& p : m.params()) {
    Tensor<float> v = p.name == "gru/u_zr" ? Tensor<float>(Shape(3, 3, 32, 64)) : p.value;
    wrong.add(p.name, v, p.group, p.trainable);
  }
  EXPECT_THROW(Model<float>(m.spec(), wrong), FormatError);
  EXPECT_THROW(Model<float>(model_spec("FF-1L"), m.params()), FormatError);
}

TEST(Model, SummaryMirrorsTableRows) {
  const std::string text = Model<float>(model_spec("FF-7L"), 1).summary();
  EXPECT_NE(text.find("2-6"), std::string::npos) << text;
  EXPECT_NE(text.find("Trainable parameters: " + std::to_string(expected_count("FF-7L"))), std::string::npos);
  const std::string v1 = Model<float>(model_spec("V1NET-1L"), 1).summary();
  EXPECT_NE(v1.find("V1Net"), std::string::npos);
  EXPECT_NE(v1.find("23488"), std::string::npos) << v1;
}

// Whole-model gradient check on narrowed variants of each family.
TEST(Model, NarrowModelsPassGradientCheck) {
  for (const char* id : {"FF-SMCNN", "ATR-1L", "GRU-1L", "V1NET-1L"}) {
    ModelSpec s = model_spec(id, 8);
    for (auto& l : s.layers) {
      if (l.type == LayerType::Dense && l.n_out == 512) l.n_out = 3;
      if (l.kernel > 0) l.n_out = 2;
      if (l.timesteps > 0) l.timesteps = 3;
    }
    if (s.layers.size() > 6) s.layers.erase(s.layers.begin() + 2, s.layers.end() - 4);
    Model<double> m(s, 7);
    for (auto& p : m.params()) {
      if (p.name.ends_with("bias") || p.name.ends_with("beta")) p.value = random_tensor(p.value.shape(), 8, -0.3, 0.3);
    }
    const std::vector<int> labels = {0, 1};
    auto report = grad_check(m.params(), {random_tensor(Shape(2, 8, 8, 3), 9, 0, 1)},
                             [&](Tape<double>& t, ParameterStore<double>&, auto in) {
                               return softmax_cross_entropy(m.forward(t, in[0], NormMode::Train).logits,
                                                            std::span<const int>(labels));
                             });
    EXPECT_LT(report.max_rel_error, 1e-4) << id << " worst " << report.worst;
  }
}

TEST(DogBank, SlotsSumToZero) {
  const Tensor<double> bank = dog_kernel_bank(7, 3, 16);
  ASSERT_EQ(bank.shape(), Shape(7, 7, 3, 16));
  for (std::int64_t j = 0; j < 16; ++j) {
    double total = 0;
    for (std::int64_t y = 0; y < 7; ++y)
      for (std::int64_t x = 0; x < 7; ++x)
        for (std::int64_t c = 0; c < 3; ++c) total += bank.at(y, x, c, j);
    EXPECT_NEAR(total, 0.0, 1e-12) << j;
  }
}

TEST(DogBank, CenterPositiveSurroundNegative) {
  const SigmaPair pair[] = {{1.0, 2.0}};
  const Tensor<double> bank = dog_kernel_bank(7, 1, 1, pair);
  // Direct evaluation of the two normalized Gaussians at the center.
  double zc = 0, zs = 0;
  for (int y = -3; y <= 3; ++y)
    for (int x = -3; x <= 3; ++x) {
      zc += std::exp(-(x * x + y * y) / 2.0);
      zs += std::exp(-(x * x + y * y) / 8.0);
    }
  EXPECT_NEAR(bank.at(3, 3, 0, 0), 1 / zc - 1 / zs, 1e-15);
  EXPECT_GT(bank.at(3, 3, 0, 0), 0.0);
  EXPECT_LT(bank.at(0, 3, 0, 0), 0.0);
  EXPECT_LT(bank.at(0, 0, 0, 0), 0.0);
}

TEST(DogBank, CyclesPairsAndSplitsChannels) {
  const Tensor<double> bank = dog_kernel_bank(7, 3, 4);
  EXPECT_EQ(bank.at(3, 3, 0, 0), bank.at(3, 3, 0, 2));
  EXPECT_NE(bank.at(3, 3, 0, 0), bank.at(3, 3, 0, 1));
  const SigmaPair first[] = {kDefaultDogSigmas[0]};
  EXPECT_NEAR(bank.at(3, 3, 1, 0), dog_kernel_bank(7, 1, 1, first).at(3, 3, 0, 0) / 3, 1e-16);
}

TEST(DogBank, RejectsBadSigmas) {
  const SigmaPair equal[] = {{2.0, 2.0}};
  const SigmaPair inverted[] = {{3.0, 1.0}};
  EXPECT_THROW(dog_kernel_bank(7, 3, 2, equal), ConfigError);
  EXPECT_THROW(dog_kernel_bank(7, 3, 2, inverted), ConfigError);
  EXPECT_THROW(dog_kernel_bank(6, 3, 2), ShapeError);
}

TEST(DogBank, OccupiesHalfTheSurroundInputFilters) {
  Model<float> m(model_spec("FF-SMCNN"), 1);
  const auto& dog = m.params().get("input/conv/dog");
  EXPECT_FALSE(dog.trainable);
  EXPECT_EQ(dog.group, ParamGroup::Fixed);
  EXPECT_EQ(dog.value.shape().c(), 16);
  EXPECT_EQ(m.params().get("input/conv/kernel").value.shape().c(), 16);
}

namespace {

double sig(double v) { return 1 / (1 + std::exp(-v)); }

}  // namespace

TEST(ConvGru, ZeroWeightsHalveState) {
  ConvGruConfig cfg;
  cfg.width = 3;
  ParameterStore<double> store;
  auto p = conv_gru_init(store, cfg, 1);
  for (auto& prm : store)
    for (auto& v : prm.value.span()) v = 0;
  ConvGruCell<double> cell(cfg, p);
  const Tensor<double> h = random_tensor(Shape(2, 4, 4, 3), 2);
  Tape<double> tape(false);
  auto next = cell.step(tape, tape.leaf(random_tensor(Shape(2, 4, 4, 3), 3)), tape.leaf(h));
  for (std::int64_t i = 0; i < h.size(); ++i) EXPECT_DOUBLE_EQ(next.value()[i], 0.5 * h[i]);
}

TEST(ConvGru, ScalarStepMatchesTranscription) {
  ConvGruConfig cfg;
  cfg.width = 1;
  ParameterStore<double> store;
  auto p = conv_gru_init(store, cfg, 1);
  ConvGruCell<double> cell(cfg, p);
  CounterRng rng(77);
  const Shape one(1, 1, 1, 1);
  for (int trial = 0; trial < 50; ++trial) {
    for (auto& prm : store)
      for (auto& v : prm.value.span()) v = rng.uniform(-2, 2);
    auto c = [](Parameter<double>* k, int o) { return k->value.at(2, 2, 0, o); };
    const double x = rng.uniform(-2, 2), h = rng.uniform(-1, 1);
    const double* b = p.bias->value.data();
    const double z = sig(c(p.w_x, 0) * x + c(p.u_zr, 0) * h + b[0]);
    const double r = sig(c(p.w_x, 1) * x + c(p.u_zr, 1) * h + b[1]);
    const double cand = std::tanh(c(p.w_x, 2) * x + c(p.u_cand, 0) * r * h + b[2]);
    const double want = z * h + (1 - z) * cand;
    Tape<double> tape(false);
    auto got = cell.step(tape, tape.leaf(Tensor<double>(one, x)), tape.leaf(Tensor<double>(one, h)));
    EXPECT_NEAR(got.value()[0], want, 1e-12);
  }
}

TEST(ConvGru, UnrollPassesGradientCheck) {
  ConvGruConfig cfg;
  cfg.width = 2;
  cfg.kernel = 3;
  ParameterStore<double> store;
  auto p = conv_gru_init(store, cfg, 3);
  p.bias->value = random_tensor(p.bias->value.shape(), 4, -0.5, 0.5);
  ConvGruCell<double> cell(cfg, p);
  const Shape s(1, 5, 5, 2);
  const Tensor<double> w = random_tensor(s, 5);
  auto report = grad_check(store, {random_tensor(s, 6)}, [&](Tape<double>& t, ParameterStore<double>&, auto in) {
    return sum(mul(cell.unroll(t, in[0], 4).back(), t.leaf(w)));
  });
  EXPECT_LT(report.max_rel_error, 1e-4) << report.worst;
}

TEST(ConvGru, StateStaysInUnitBall) {
  ConvGruConfig cfg;
  cfg.width = 4;
  ParameterStore<double> store;
  ConvGruCell<double> cell(cfg, conv_gru_init(store, cfg, 8));
  Tape<double> tape(false);
  for (const auto& h : cell.unroll(tape, tape.leaf(random_tensor(Shape(1, 6, 6, 4), 9, -3, 3)), 6)) {
    for (double v : h.value().span()) EXPECT_LT(std::abs(v), 1.0);
  }
}
