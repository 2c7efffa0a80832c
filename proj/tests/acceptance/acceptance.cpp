// Acceptance runner: one PASS/FAIL line per criterion, thresholds pinned
// below. Exit status 0 when every selected criterion passes, 1 on any
// failure, and kSkipCode when the only failures are experiments refused by
// the runtime-budget guard.

#include <CLI11.hpp>
#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>

#include "../support/fixtures.hpp"
#include "../support/jacobi_eigen.hpp"
#include "cli.hpp"
#include "contour/dataset.hpp"
#include "contour/gradcheck.hpp"
#include "contour/hash.hpp"
#include "contour/image.hpp"
#include "contour/interpret.hpp"
#include "contour/loader.hpp"
#include "contour/models.hpp"
#include "contour/runtime.hpp"
#include "contour/stimulus.hpp"
#include "contour/train.hpp"

using namespace contour;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

constexpr int kSkipCode = 77;

// Criterion 1
constexpr double kGradRelTol = 1e-4;
constexpr double kGradBudgetSeconds = 120;
// Criterion 2
constexpr int kScalarTrials = 100;
constexpr double kScalarTol = 1e-12;
// Criterion 3
constexpr std::int64_t kAuditImages = 10000;
constexpr std::int64_t kAuditSize = 256;
constexpr std::int64_t kAuditPngSubset = 1000;
constexpr double kAuditBudgetSeconds = 300;
// Criterion 4
constexpr std::int64_t kFeedForwardNoNormCount = 48290;
// Criterion 5
constexpr std::int64_t kDeskSize = 64;
constexpr std::int64_t kDeskTrainImages = 10000;
constexpr std::int64_t kDeskValImages = 2000;
constexpr std::int64_t kDeskSteps = 5000;
constexpr std::int64_t kDeskBatch = 32;
constexpr std::int64_t kDeskEvalEvery = 200;
constexpr double kDeskAccuracy = 0.90;
constexpr int kDeskSeeds = 3;
constexpr int kDeskOrderingSeeds = 2;
constexpr double kDeskBudgetSeconds = 45 * 60;
// Criterion 6
constexpr std::size_t kTransferVariables = 10;
// Criterion 7
constexpr double kPcaHandTol = 1e-10;
constexpr double kPcaInvariantTol = 1e-8;
// Criterion 8
constexpr std::int64_t kPipelineSteps = 500;

struct Outcome {
  bool pass = false;
  std::string detail;
  bool refused = false;  // not run because the projected runtime exceeds the budget
};

struct Context {
  fs::path work;
  bool full = false;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---- 1: gradient oracle ----

Outcome gradient_oracle(const Context&) {
  const auto t0 = Clock::now();
  double worst = 0;
  std::string worst_name;
  int checks = 0;
  auto note = [&](const std::string& name, const GradCheckReport& r) {
    ++checks;
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_name = name + "/" + r.worst;
    }
  };
  using oracle::random_tensor;
  for (const auto& c : oracle::op_cases(1)) {
    ad::ParameterStore<double> store;
    std::vector<Tensor<double>> inputs;
    for (std::size_t i = 0; i < c.inputs.size(); ++i) inputs.push_back(random_tensor(c.inputs[i], 10 + i));
    note(c.name, grad_check(store, inputs, [&](ad::Tape<double>&, ad::ParameterStore<double>&, auto in) {
           return oracle::probe(c.op(in));
         }));
  }
  for (ad::NormMode mode : {ad::NormMode::Train, ad::NormMode::Eval}) {
    ad::ParameterStore<double> store;
    store.add("gamma", random_tensor(Shape::vec(3), 20, 0.5, 1.5), ad::ParamGroup::Norm);
    store.add("beta", random_tensor(Shape::vec(3), 21), ad::ParamGroup::Norm);
    store.add("mean", random_tensor(Shape::vec(3), 22), ad::ParamGroup::Norm, false);
    store.add("var", random_tensor(Shape::vec(3), 23, 0.5, 2.0), ad::ParamGroup::Norm, false);
    note(mode == ad::NormMode::Train ? "batch_norm_train" : "batch_norm_eval",
         grad_check(store, {random_tensor(Shape(1, 5, 6, 3), 24)},
                    [mode](ad::Tape<double>& t, ad::ParameterStore<double>& s, auto in) {
                      return oracle::probe(ad::batch_norm(in[0], t.param(s.get("gamma")), t.param(s.get("beta")),
                                                          s.get("mean"), s.get("var"), mode));
                    }));
  }
  // Full T=5 unroll at the largest permitted extent.
  V1NetConfig cfg;
  cfg.width = 4;
  ad::ParameterStore<double> store;
  auto p = v1net_init(store, cfg, 31);
  for (auto* b : {p.gate_bias, p.exc_bias, p.inh_bias, p.div_bias, p.ln_beta}) {
    b->value = random_tensor(b->value.shape(), 32, -0.5, 0.5);
  }
  V1NetCell<double> cell(cfg, p);
  const Shape s(1, 8, 8, 4);
  const Tensor<double> wh = random_tensor(s, 33), wc = random_tensor(s, 34);
  note("v1net_unroll_T5", grad_check(store, {random_tensor(s, 35)}, [&](ad::Tape<double>& t, auto&, auto in) {
         auto u = cell.unroll(t, in[0], 5);
         return ad::add(ad::sum(ad::mul(u.final.h, t.leaf(wh))), ad::sum(ad::mul(u.final.c, t.leaf(wc))));
       }));
  const double secs = seconds_since(t0);
  return {worst < kGradRelTol && secs < kGradBudgetSeconds,
          fmt("%d checks, worst rel error %.3g (%s) < %.0e; %.1f s < %.0f s", checks, worst, worst_name.c_str(),
              kGradRelTol, secs, kGradBudgetSeconds)};
}

// ---- 2: scalar transcription ----

Outcome equation_fidelity(const Context&) {
  V1NetConfig cfg;
  cfg.width = 1;
  ad::ParameterStore<double> store;
  auto p = v1net_init(store, cfg, 1);
  V1NetCell<double> cell(cfg, p);
  CounterRng rng(2024);
  const Shape one(1, 1, 1, 1);
  double worst = 0;
  for (int trial = 0; trial < kScalarTrials; ++trial) {
    const auto sp = oracle::randomize_scalar_cell(p, rng);
    const double x = rng.uniform(-2, 2), h = rng.uniform(0, 2), c = rng.uniform(-2, 2);
    const auto want = oracle::scalar_v1net_step(sp, x, h, c, cfg.ln_eps);
    ad::Tape<double> tape(false);
    V1NetState<double> prev{tape.leaf(Tensor<double>(one, h)), tape.leaf(Tensor<double>(one, c)), false};
    auto [next, tr] = cell.step(tape, tape.leaf(Tensor<double>(one, x)), prev);
    const std::pair<double, double> pairs[] = {
        {tr.f.value()[0], want.f},     {tr.i.value()[0], want.i},     {tr.o.value()[0], want.o},
        {tr.g.value()[0], want.g},     {tr.exc.value()[0], want.exc}, {tr.inh.value()[0], want.inh},
        {tr.div.value()[0], want.div}, {tr.candidate.value()[0], want.candidate},
        {next.c.value()[0], want.c},   {next.h.value()[0], want.h}};
    for (const auto& [got, exp] : pairs) worst = std::max(worst, std::abs(got - exp));
  }
  return {worst < kScalarTol,
          fmt("%d random parameterizations, max |diff| %.3g < %.0e", kScalarTrials, worst, kScalarTol)};
}

// ---- 3: generator correctness ----

Outcome generator_correctness(const Context&) {
  const auto t0 = Clock::now();
  const StimulusConfig cfg = StimulusConfig::preset(Dataset::MarkedLong, kAuditSize);
  const std::uint64_t base = 0xacce97;
  const std::int64_t n = kAuditImages;
  std::vector<std::uint64_t> raw_hash(static_cast<std::size_t>(n)), png_hash(static_cast<std::size_t>(kAuditPngSubset));
  std::vector<std::string> problems(static_cast<std::size_t>(n));
  std::int64_t segments_ok = 0, red_ok = 0, quad_ok = 0, label_ok = 0, nd_ok = 0, all_ok = 0;

  auto render = [&](std::int64_t i) {
    return compose(cfg, derive_seed(base, static_cast<std::uint64_t>(i)), i % 2 ? Label::Positive : Label::Negative);
  };
#pragma omp parallel for schedule(dynamic, 16) reduction(+ : segments_ok, red_ok, quad_ok, label_ok, nd_ok, all_ok)
  for (std::int64_t i = 0; i < n; ++i) {
    const Stimulus s = render(i);
    const StimulusAudit a = audit_stimulus(s, cfg);
    segments_ok += a.primary_segments == 54;
    red_ok += a.red_components == 1;
    quad_ok += a.distinct_quadrants;
    label_ok += a.label_matches;
    nd_ok += a.distractors_in_range && s.meta.n_distractors >= 1 && s.meta.n_distractors <= 4;
    all_ok += a.ok(cfg) && a.primary_segments == 54 && a.red_components == 1;
    raw_hash[static_cast<std::size_t>(i)] = fnv1a64(s.image.bytes());
    if (i < kAuditPngSubset) png_hash[static_cast<std::size_t>(i)] = fnv1a64(encode_png(s.image));
  }

  // Regenerate every image with a different thread count and compare bytes.
  const int threads = omp_get_max_threads();
  omp_set_num_threads(threads == 1 ? 3 : 1);
  std::int64_t identical = 0, png_identical = 0;
#pragma omp parallel for schedule(static) reduction(+ : identical, png_identical)
  for (std::int64_t i = 0; i < n; ++i) {
    const Stimulus s = render(i);
    identical += fnv1a64(s.image.bytes()) == raw_hash[static_cast<std::size_t>(i)];
    if (i < kAuditPngSubset) png_identical += fnv1a64(encode_png(s.image)) == png_hash[static_cast<std::size_t>(i)];
  }
  omp_set_num_threads(threads);
  const double secs = seconds_since(t0);
  const bool pass = all_ok == n && segments_ok == n && red_ok == n && quad_ok == n && label_ok == n && nd_ok == n &&
                    identical == n && png_identical == kAuditPngSubset && secs < kAuditBudgetSeconds;
  return {pass, fmt("%lld MarkedLong-%lld images: 54 segments %lld, one red segment %lld, distinct quadrants %lld, "
                    "label recomputed %lld, n_d in [1,4] %lld; regenerated identical %lld (PNG %lld/%lld); %.0f s < %.0f s",
                    static_cast<long long>(n), static_cast<long long>(kAuditSize), static_cast<long long>(segments_ok),
                    static_cast<long long>(red_ok), static_cast<long long>(quad_ok), static_cast<long long>(label_ok),
                    static_cast<long long>(nd_ok), static_cast<long long>(identical),
                    static_cast<long long>(png_identical), static_cast<long long>(kAuditPngSubset), secs,
                    kAuditBudgetSeconds)};
}

// ---- 4: parameter efficiency ----

Outcome parameter_efficiency(const Context&) {
  std::string mismatches;
  for (const auto& id : arch_ids()) {
    const std::int64_t got = Model<float>(model_spec(id), 1).count_params();
    if (got != oracle::expected_param_count(id)) mismatches += " " + id;
  }
  ModelSpec bare = model_spec("FF-1L");
  for (auto& l : bare.layers) l.norm_after = false;
  const std::int64_t ff_bare = Model<float>(bare, 1).count_params();
  const std::int64_t v1 = Model<float>(model_spec("V1NET-1L"), 1).count_params();
  const std::int64_t gru = Model<float>(model_spec("GRU-1L"), 1).count_params();
  const std::int64_t wide = Model<float>(model_spec("FF-7Lx2"), 1).count_params();
  const bool pass = mismatches.empty() && ff_bare == kFeedForwardNoNormCount && v1 < gru && gru < wide;
  return {pass, fmt("V1NET-1L %lld < GRU-1L %lld < FF-7Lx2 %lld; all %zu archs match closed form%s; "
                    "FF-1L conv+dense = %lld",
                    static_cast<long long>(v1), static_cast<long long>(gru), static_cast<long long>(wide),
                    arch_ids().size(), mismatches.empty() ? "" : (" except" + mismatches).c_str(),
                    static_cast<long long>(ff_bare))};
}

// ---- 5: desk-scale learning ----

const char* const kDeskArchs[] = {"V1NET-1L", "FF-1L", "GRU-1L"};

TrainConfig desk_config(const std::string& arch, std::uint64_t seed) {
  TrainConfig c;
  c.arch = arch;
  c.lr = 5e-4;
  c.batch = kDeskBatch;
  c.steps = kDeskSteps;
  c.eval_every = kDeskEvalEvery;
  c.eval_batch = 100;
  c.seed = seed;
  c.workers = 1;
  return c;
}

// Seconds for the full protocol, from timed steps and evaluations.
double project_desk_runtime(std::string& breakdown) {
  const std::int64_t evals = kDeskSteps / kDeskEvalEvery + 1;
  double total = 0;
  ImageSet probe;
  probe.size = kDeskSize;
  CounterRng rng(5);
  for (std::int64_t i = 0; i < 2 * kDeskBatch; ++i) {
    for (std::int64_t j = 0; j < kDeskSize * kDeskSize * 3; ++j) probe.pixels.push_back(rng.uniform() < 0.1 ? 255 : 0);
    probe.labels.push_back(static_cast<int>(i % 2));
    probe.ids.push_back(i);
  }
  for (const char* arch : kDeskArchs) {
    Model<float> model(model_spec(arch, kDeskSize), 1);
    TrainConfig c = desk_config(arch, 1);
    c.steps = 1;
    c.eval_every = 1;
    train(model, probe, probe, c);  // warm-up
    c.steps = 3;
    c.eval_every = 3;
    auto t0 = Clock::now();
    train(model, probe, probe, c);
    const double with_evals = seconds_since(t0);
    t0 = Clock::now();
    evaluate(model, probe, 100);
    const double per_image = seconds_since(t0) / static_cast<double>(probe.count());
    const double per_step = (with_evals - 2 * per_image * static_cast<double>(probe.count())) / 3;
    const double run = kDeskSteps * per_step + static_cast<double>(evals * kDeskValImages) * per_image;
    breakdown += fmt(" %s %.2f s/step", arch, per_step);
    total += kDeskSeeds * run;
  }
  return total;
}

Outcome desk_learning(const Context& ctx) {
  std::string breakdown;
  const double projected = project_desk_runtime(breakdown);
  if (!ctx.full && projected > kDeskBudgetSeconds) {
    Outcome o;
    o.refused = true;
    o.detail = fmt("projected %.1f h on this machine (%d threads;%s) exceeds the %.0f min budget; not run "
                   "(pass --full to run anyway)",
                   projected / 3600, omp_get_max_threads(), breakdown.c_str(), kDeskBudgetSeconds / 60);
    return o;
  }

  const auto t0 = Clock::now();
  const fs::path dir = ctx.work / "c5";
  fs::remove_all(dir);
  DatasetOptions opt;
  opt.stimulus = StimulusConfig::preset(Dataset::MarkedLong, kDeskSize);
  opt.count_per_class = (kDeskTrainImages + kDeskValImages) / 2;
  opt.seed = 5005;
  opt.train_fraction = static_cast<double>(kDeskTrainImages) / static_cast<double>(kDeskTrainImages + kDeskValImages);
  write_dataset(dir / "data", opt);
  const ImageSet train_set = load_split(dir / "data", "train", 2);
  const ImageSet val_set = load_split(dir / "data", "val", 2);

  std::map<std::string, std::vector<TrainLog>> logs;
  for (int s = 0; s < kDeskSeeds; ++s) {
    for (const char* arch : kDeskArchs) {
      Model<float> model(model_spec(arch, kDeskSize), static_cast<std::uint64_t>(s));
      logs[arch].push_back(train(model, train_set, val_set, desk_config(arch, static_cast<std::uint64_t>(s)),
                                 dir / (std::string(arch) + "_seed" + std::to_string(s)),
                                 {{"dataset", "markedlong-64"}}));
    }
  }
  int reached = 0, ordered = 0;
  std::string per_seed;
  for (int s = 0; s < kDeskSeeds; ++s) {
    const auto& v = logs["V1NET-1L"][static_cast<std::size_t>(s)];
    const double ev = sample_efficiency(v.points), ef = sample_efficiency(logs["FF-1L"][static_cast<std::size_t>(s)].points),
                 eg = sample_efficiency(logs["GRU-1L"][static_cast<std::size_t>(s)].points);
    reached += !v.aborted && v.max_val_accuracy() >= kDeskAccuracy;
    ordered += ev > ef && ev > eg;
    per_seed += fmt(" [seed %d: acc %.3f, eff V1 %.3f FF %.3f GRU %.3f]", s, v.max_val_accuracy(), ev, ef, eg);
  }
  const double secs = seconds_since(t0);
  return {reached == kDeskSeeds && ordered >= kDeskOrderingSeeds && secs < kDeskBudgetSeconds,
          fmt("V1NET-1L >= %.2f in %d/%d seeds, ordering in %d/%d (need %d);%s %.0f s vs %.0f s budget", kDeskAccuracy,
              reached, kDeskSeeds, ordered, kDeskSeeds, kDeskOrderingSeeds, per_seed.c_str(), secs,
              kDeskBudgetSeconds)};
}

// ---- 6: transfer protocol ----

struct TransferSetup {
  std::int64_t size = 64;
  std::int64_t source_per_class = 600;
  std::int64_t target_per_class = 600;
  std::int64_t pretrain_steps = 400;
  std::int64_t finetune_steps = 300;
  std::int64_t batch = 8;
  std::int64_t val_limit = 300;
};

Outcome transfer_protocol(const Context& ctx) {
  const TransferSetup su;
  const fs::path dir = ctx.work / "c6";
  fs::remove_all(dir);
  DatasetOptions src;
  src.stimulus = StimulusConfig::preset(Dataset::MarkedLong, su.size);
  src.count_per_class = su.source_per_class;
  src.seed = 606;
  write_dataset(dir / "ml", src);
  DatasetOptions dst = src;
  dst.stimulus = StimulusConfig::preset(Dataset::PathFinder, su.size);
  dst.count_per_class = su.target_per_class;
  dst.seed = 607;
  write_dataset(dir / "pf", dst);

  TrainConfig pre;
  pre.arch = "V1NET-1L";
  pre.lr = 5e-4;
  pre.batch = su.batch;
  pre.steps = su.pretrain_steps;
  pre.eval_every = su.pretrain_steps / 4;
  pre.seed = 6;
  pre.workers = 1;
  Model<float> model(model_spec(pre.arch, su.size), pre.seed);
  const TrainLog pl = train(model, load_split(dir / "ml", "train", 2), load_split(dir / "ml", "val", 2, su.val_limit),
                            pre, dir / "pretrain", {{"dataset", "markedlong-64"}});
  if (pl.aborted) return {false, "pretraining aborted: " + pl.abort_reason};

  Model<float> loaded = load_model(dir / "pretrain" / "checkpoint.ckpt");
  std::vector<std::pair<std::string, Tensor<float>>> kernels_before;
  for (const auto& p : loaded.params()) {
    if (p.name.find("kernel") != std::string::npos || p.name.find("depthwise") != std::string::npos ||
        p.name.find("pointwise") != std::string::npos) {
      if (!p.name.starts_with("readout/")) kernels_before.emplace_back(p.name, p.value);
    }
  }
  TrainConfig ft = pre;
  ft.lr = 1e-3;
  ft.steps = su.finetune_steps;
  ft.eval_every = su.finetune_steps / 3;
  const TransferResult r =
      transfer_finetune(loaded, load_split(dir / "pf", "train", 2), load_split(dir / "pf", "val", 2, su.val_limit), ft,
                        dir / "transfer", {{"dataset", "pathfinder-64"}});
  std::size_t identical = 0;
  for (const auto& [name, value] : kernels_before) identical += loaded.params().get(name).value == value;
  const bool pass = !r.finetune.aborted && r.updated_variables.size() == kTransferVariables && r.frozen_unchanged &&
                    identical == kernels_before.size() && r.final_accuracy > r.zero_shot_accuracy;
  return {pass, fmt("pretrained ML-64 max acc %.3f; %zu updated variables (need %zu); %zu/%zu conv kernels "
                    "bit-identical; PF-64 accuracy %.3f vs zero-shot %.3f",
                    pl.max_val_accuracy(), r.updated_variables.size(), kTransferVariables, identical,
                    kernels_before.size(), r.final_accuracy, r.zero_shot_accuracy)};
}

// ---- 7: PCA suite ----

Outcome pca_suite(const Context& ctx) {
  double worst_hand = 0, worst_sum = 0, worst_gram = 0, worst_rebuild = 0, worst_eig = 0;
  bool ordered = true, degenerate_ok = true;
  auto bank_of = [](std::int64_t kh, const std::vector<std::vector<double>>& members) {
    Tensor<double> t(Shape(kh, kh, static_cast<std::int64_t>(members.size()), 1));
    for (std::size_t k = 0; k < members.size(); ++k) {
      for (std::int64_t i = 0; i < kh * kh; ++i) t.at(i / kh, i % kh, static_cast<std::int64_t>(k), 0) = members[k][i];
    }
    return t;
  };
  auto check = [&](const Tensor<double>& bank, const PcaResult& r) {
    const std::size_t d = r.components.size();
    double sum = 0;
    for (std::size_t i = 0; i < d; ++i) {
      sum += r.ratios[i];
      if (r.ratios[i] < 0 || (i > 0 && r.ratios[i] > r.ratios[i - 1])) ordered = false;
      for (std::size_t j = 0; j < d; ++j) {
        double g = 0;
        for (std::size_t k = 0; k < d; ++k) g += r.components[i][k] * r.components[j][k];
        worst_gram = std::max(worst_gram, std::abs(g - (i == j ? 1.0 : 0.0)));
      }
    }
    worst_sum = std::max(worst_sum, std::abs(sum - 1));
    // Second route: cyclic Jacobi on the sample covariance.
    std::vector<double> cov(d * d, 0.0);
    for (std::int64_t m = 0; m < r.members; ++m) {
      for (std::size_t i = 0; i < d; ++i) {
        const double xi = bank.at(static_cast<std::int64_t>(i) / r.kw, static_cast<std::int64_t>(i) % r.kw, m, 0) - r.mean[i];
        for (std::size_t j = 0; j < d; ++j) {
          const double xj = bank.at(static_cast<std::int64_t>(j) / r.kw, static_cast<std::int64_t>(j) % r.kw, m, 0) - r.mean[j];
          cov[i * d + j] += xi * xj / static_cast<double>(r.members - 1);
        }
      }
    }
    const auto jac = oracle::jacobi_eigenvalues(cov, d);
    for (std::size_t i = 0; i < d; ++i) worst_eig = std::max(worst_eig, std::abs(r.eigenvalues[i] - std::max(0.0, jac[i])));
    for (std::int64_t m = 0; m < r.members; ++m) {
      std::vector<double> x(d), back(d, 0.0);
      for (std::size_t i = 0; i < d; ++i) {
        x[i] = bank.at(static_cast<std::int64_t>(i) / r.kw, static_cast<std::int64_t>(i) % r.kw, m, 0) - r.mean[i];
      }
      for (const auto& c : r.components) {
        double coeff = 0;
        for (std::size_t i = 0; i < d; ++i) coeff += x[i] * c[i];
        for (std::size_t i = 0; i < d; ++i) back[i] += coeff * c[i];
      }
      for (std::size_t i = 0; i < d; ++i) worst_rebuild = std::max(worst_rebuild, std::abs(back[i] - x[i]));
    }
  };
  for (std::int64_t kh : {3, 7, 15}) {
    for (std::int64_t members : {2, 5, 32}) {
      const Tensor<double> bank = oracle::random_tensor(Shape(kh, kh, members, 1), static_cast<std::uint64_t>(kh * 64 + members));
      check(bank, kernel_pca(bank));
    }
  }
  const std::vector<double> k{0.3, -0.2, 0.7, 0.1, 0.0, -0.4, 0.2, 0.5, -0.1};
  const Tensor<double> same = bank_of(3, {k, k, k, k, k});
  const PcaResult deg = kernel_pca(same);
  check(same, deg);
  degenerate_ok = deg.ratios[0] == 1.0 && std::all_of(deg.ratios.begin() + 1, deg.ratios.end(), [](double v) { return v == 0.0; });
  // Centered members (2,0,0,0), (-1,2,0,0), (-1,-2,0,0): covariance diag(3, 4, 0, 0).
  const PcaResult hand = kernel_pca(bank_of(2, {{3, 0, 1, 0}, {0, 2, 1, 0}, {0, -2, 1, 0}}));
  const double want[] = {4.0 / 7, 3.0 / 7, 0, 0};
  for (int i = 0; i < 4; ++i) worst_hand = std::max(worst_hand, std::abs(hand.ratios[static_cast<std::size_t>(i)] - want[i]));
  worst_hand = std::max({worst_hand, std::abs(std::abs(hand.components[0][1]) - 1), std::abs(std::abs(hand.components[1][0]) - 1)});

  // Reported only: top-4 cumulative ratio of the desk-scale pretrained model when criterion 6 has left one.
  std::string report = "no trained checkpoint available";
  const fs::path ckpt = ctx.work / "c6" / "pretrain" / "checkpoint.ckpt";
  if (fs::exists(ckpt)) {
    const Model<float> m = load_model(ckpt);
    report = "desk model top-4 cumulative:";
    for (const char* b : kHorizontalBanks) report += fmt(" %s %.3f", b, kernel_pca(horizontal_bank(m, b)).cumulative(4));
  }
  const bool pass = ordered && degenerate_ok && worst_hand < kPcaHandTol && worst_sum < kPcaInvariantTol &&
                    worst_gram < kPcaInvariantTol && worst_rebuild < kPcaInvariantTol && worst_eig < kPcaInvariantTol;
  return {pass, fmt("hand 2x2 err %.2g < %.0e; sum-to-1 %.2g, Gram %.2g, rebuild %.2g, Jacobi eigenvalues %.2g "
                    "< %.0e; descending %s; degenerate PC1=1 %s; %s",
                    worst_hand, kPcaHandTol, worst_sum, worst_gram, worst_rebuild, worst_eig, kPcaInvariantTol,
                    ordered ? "yes" : "no", degenerate_ok ? "yes" : "no", report.c_str())};
}

// ---- 8: determinism ----

std::map<std::string, std::uint64_t> fingerprint(const fs::path& root) {
  std::map<std::string, std::uint64_t> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file() || e.path().filename() == "timing.json") continue;
    out[fs::relative(e.path(), root).string()] = fnv1a64(read_file(e.path()));
  }
  return out;
}

Outcome pipeline_determinism(const Context& ctx) {
  const fs::path dir = ctx.work / "c8" / "pipeline";
  struct Variant {
    int workers;
    int threads;
  };
  const int base_threads = omp_get_max_threads();
  const Variant variants[] = {{2, base_threads}, {2, base_threads}, {0, base_threads == 1 ? 3 : 1}};
  std::vector<std::map<std::string, std::uint64_t>> prints;
  for (const auto& v : variants) {
    fs::remove_all(dir);
    omp_set_num_threads(v.threads);
    const std::string d = dir.string();
    const std::vector<std::string> generate = {"generate", "--dataset", "markedlong", "--count", "60", "--seed", "88",
                                               "--size", "64", "--out", d + "/data"};
    if (const int rc = run_cli(generate); rc != 0) {
      omp_set_num_threads(base_threads);
      return {false, "`generate` exited with " + std::to_string(rc)};
    }
    std::string image;
    for (const auto& rec : read_index(dir / "data")) {
      if (rec.split == "val" && rec.label == Label::Positive) {
        image = (dir / "data" / rec.path).string();
        break;
      }
    }
    const std::vector<std::vector<std::string>> commands = {
        {"train", "--arch", "V1NET-1L", "--data", d + "/data", "--steps", std::to_string(kPipelineSteps),
         "--eval-every", "100", "--batch", "4", "--seed", "8", "--val-limit", "30", "--flips", "--workers",
         std::to_string(v.workers), "--out", d + "/run"},
        {"eval", "--ckpt", d + "/run/checkpoint.ckpt", "--data", d + "/data", "--out", d + "/eval.json"},
        {"inspect", "activations", "--ckpt", d + "/run/checkpoint.ckpt", "--image", image,
         "--out", d + "/activations"},
        {"inspect", "pca", "--ckpt", d + "/run/checkpoint.ckpt", "--out", d + "/pca"},
    };
    for (const auto& cmd : commands) {
      if (const int rc = run_cli(cmd); rc != 0) {
        omp_set_num_threads(base_threads);
        return {false, "`" + cmd[0] + "` exited with " + std::to_string(rc)};
      }
    }
    prints.push_back(fingerprint(dir));
  }
  omp_set_num_threads(base_threads);
  std::string diffs;
  for (std::size_t i = 1; i < prints.size(); ++i) {
    for (const auto& [name, h] : prints[0]) {
      const auto it = prints[i].find(name);
      if (it == prints[i].end() || it->second != h) diffs += " run" + std::to_string(i) + ":" + name;
    }
    if (prints[i].size() != prints[0].size()) diffs += " run" + std::to_string(i) + ":file-count";
  }
  return {diffs.empty() && !prints[0].empty(),
          fmt("%zu artifacts (dataset, metrics, checkpoint, eval, activations, PCA) compared over 3 runs incl. "
              "loader workers 2 vs 0 and %d vs %d threads; %s",
              prints[0].size(), base_threads, variants[2].threads, diffs.empty() ? "all identical" : diffs.c_str())};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome(const Context&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Acceptance criteria runner"};
  std::vector<int> selected;
  Context ctx;
  ctx.work = fs::current_path() / "acceptance_work";
  app.add_option("--criterion", selected, "criterion numbers to run (default: all)");
  app.add_option("--work", ctx.work, "scratch directory")->capture_default_str();
  app.add_flag("--full", ctx.full, "run experiments even when the projected runtime exceeds their budget");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> all = {
      {1, "gradient oracle", gradient_oracle},
      {2, "equation fidelity", equation_fidelity},
      {3, "generator correctness", generator_correctness},
      {4, "parameter efficiency", parameter_efficiency},
      {5, "desk-scale learning", desk_learning},
      {6, "transfer protocol", transfer_protocol},
      {7, "PCA suite", pca_suite},
      {8, "determinism", pipeline_determinism},
  };
  fs::create_directories(ctx.work);
  bool failed = false, refused = false;
  for (const auto& c : all) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), c.id) == selected.end()) continue;
    Outcome o;
    try {
      o = c.run(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    std::printf("%s criterion %d (%s): %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) (o.refused ? refused : failed) = true;
  }
  return failed ? 1 : refused ? kSkipCode : 0;
}
