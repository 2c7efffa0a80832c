#include "contour/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>
#include <stdexcept>

#include "contour/checkpoint.hpp"
#include "contour/errors.hpp"
#include "contour/image.hpp"
#include "contour/optim.hpp"
#include "contour/rng.hpp"

namespace contour {

namespace fs = std::filesystem;
using ad::NormMode;
using ad::Tape;

void TrainConfig::validate() const {
  if (!(lr >= 0) || !std::isfinite(lr)) throw ConfigError("learning rate must be finite and non-negative");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1) || !(eps > 0)) {
    throw ConfigError("Adam betas must lie in [0, 1) and eps must be positive");
  }
  if (batch < 1 || eval_batch < 1) throw ConfigError("batch sizes must be positive");
  if (steps < 0) throw ConfigError("step count must be non-negative");
  if (eval_every < 1 || steps % eval_every != 0) {
    throw ConfigError("eval interval " + std::to_string(eval_every) + " must divide the step count " +
                      std::to_string(steps));
  }
  if (workers < 0) throw ConfigError("worker count must be non-negative");
  if (timesteps < 0) throw ConfigError("timesteps must be non-negative");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"arch", arch},         {"lr", lr},       {"beta1", beta1},           {"beta2", beta2},
          {"eps", eps},           {"batch", batch}, {"steps", steps},           {"eval_every", eval_every},
          {"eval_batch", eval_batch}, {"seed", seed}, {"flips", flips},         {"timesteps", timesteps}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.arch = j.at("arch").get<std::string>();
  c.lr = j.at("lr").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.eps = j.at("eps").get<double>();
  c.batch = j.at("batch").get<std::int64_t>();
  c.steps = j.at("steps").get<std::int64_t>();
  c.eval_every = j.at("eval_every").get<std::int64_t>();
  c.eval_batch = j.at("eval_batch").get<std::int64_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.flips = j.at("flips").get<bool>();
  c.timesteps = j.at("timesteps").get<std::int64_t>();
  c.validate();
  return c;
}

double TrainLog::max_val_accuracy() const {
  double best = 0;
  for (const EvalPoint& p : points) best = std::max(best, p.val_accuracy);
  return best;
}

nlohmann::json TrainLog::to_json() const {
  nlohmann::json pts = nlohmann::json::array();
  for (const EvalPoint& p : points) {
    pts.push_back({{"step", p.step},
                   {"train_loss", p.train_loss ? nlohmann::json(*p.train_loss) : nlohmann::json(nullptr)},
                   {"val_accuracy", p.val_accuracy},
                   {"val_loss", p.val_loss}});
  }
  nlohmann::json j{{"arch", arch},
                   {"seed", seed},
                   {"param_count", param_count},
                   {"completed_steps", completed_steps},
                   {"aborted", aborted},
                   {"points", pts}};
  if (aborted) j["abort_reason"] = abort_reason;
  if (!points.empty()) {
    j["max_val_accuracy"] = max_val_accuracy();
    j["final_val_accuracy"] = points.back().val_accuracy;
    j["sample_efficiency"] = sample_efficiency(points);
  }
  return j;
}

double sample_efficiency(const std::vector<EvalPoint>& points) {
  if (points.empty()) throw std::invalid_argument("sample efficiency of an empty log");
  if (points.size() == 1) return points[0].val_accuracy;
  double area = 0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    const double dt = static_cast<double>(points[i].step - points[i - 1].step);
    if (!(dt > 0)) throw std::invalid_argument("evaluation steps must increase");
    area += 0.5 * dt * (points[i].val_accuracy + points[i - 1].val_accuracy);
  }
  return area / static_cast<double>(points.back().step - points.front().step);
}

namespace {

struct Logits {
  std::vector<float> values;  // n × 2
};

Logits eval_logits(Model<float>& model, const ImageSet& set, std::int64_t batch) {
  Logits out;
  out.values.reserve(static_cast<std::size_t>(set.count() * 2));
  std::vector<std::int64_t> rows;
  for (std::int64_t start = 0; start < set.count(); start += batch) {
    rows.clear();
    for (std::int64_t r = start; r < std::min(start + batch, set.count()); ++r) rows.push_back(r);
    Tape<float> tape(false);
    auto fp = model.forward(tape, tape.leaf(to_tensor(set, rows)), NormMode::Eval);
    const auto& v = fp.logits.value();
    out.values.insert(out.values.end(), v.data(), v.data() + v.size());
  }
  return out;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  const std::string text = j.dump(2) + "\n";
  write_file(path, std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

}  // namespace

std::vector<int> predict(Model<float>& model, const ImageSet& set, std::int64_t batch) {
  const Logits l = eval_logits(model, set, batch);
  std::vector<int> pred(static_cast<std::size_t>(set.count()));
  for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = l.values[2 * i + 1] > l.values[2 * i] ? 1 : 0;
  return pred;
}

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) throw ShapeError("prediction and label counts differ");
  if (labels.empty()) throw ShapeError("accuracy of an empty set");
  std::int64_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predictions[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

EvalResult evaluate(Model<float>& model, const ImageSet& set, std::int64_t batch) {
  if (set.count() == 0) throw ShapeError("cannot evaluate an empty set");
  const Logits l = eval_logits(model, set, batch);
  EvalResult r;
  r.count = set.count();
  double loss = 0;
  for (std::int64_t i = 0; i < r.count; ++i) {
    const double a = l.values[2 * i], b = l.values[2 * i + 1];
    const int label = set.labels[static_cast<std::size_t>(i)];
    const double m = std::max(a, b);
    const double lse = m + std::log(std::exp(a - m) + std::exp(b - m));
    loss += lse - (label == 1 ? b : a);
    r.correct += (b > a ? 1 : 0) == label;
  }
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.count);
  r.loss = loss / static_cast<double>(r.count);
  return r;
}

nlohmann::json checkpoint_meta(const Model<float>& model, const TrainConfig& cfg, std::int64_t step) {
  return {{"format", "contour-model"},
          {"arch", model.spec().arch_id},
          {"model", model.spec().to_json()},
          {"step", step},
          {"train", cfg.to_json()}};
}

void save_model(const fs::path& path, const Model<float>& model, const nlohmann::json& meta) {
  save_checkpoint(path, model.params(), meta);
}

Model<float> load_model(const fs::path& path, nlohmann::json* meta) {
  const CheckpointContents contents = read_checkpoint(path);
  if (contents.meta.value("format", "") != "contour-model") {
    throw FormatError(path.string() + " is not a model checkpoint");
  }
  Model<float> model(ModelSpec::from_json(contents.meta.at("model")), 0);
  load_checkpoint(path, model.params());
  if (meta) *meta = contents.meta;
  return model;
}

TrainLog train(Model<float>& model, const ImageSet& train_set, const ImageSet& val_set, const TrainConfig& cfg,
               const fs::path& run_dir, const nlohmann::json& provenance, const EvalHook& on_eval) {
  cfg.validate();
  if (cfg.timesteps > 0) model.set_timesteps(cfg.timesteps);
  const auto t0 = std::chrono::steady_clock::now();

  TrainLog log;
  log.arch = model.spec().arch_id;
  log.seed = cfg.seed;
  log.param_count = model.count_params();
  if (!run_dir.empty()) {
    fs::create_directories(run_dir);
    write_json(run_dir / "config.json",
               {{"train", cfg.to_json()}, {"model", model.spec().to_json()}, {"provenance", provenance}});
  }

  // Returns false when the model no longer evaluates finitely; the checkpoint
  // is then left at the previous point.
  auto record = [&](std::int64_t step, std::optional<double> train_loss) {
    EvalResult e;
    try {
      e = evaluate(model, val_set, cfg.eval_batch);
      if (!std::isfinite(e.loss)) throw NumericalError("validation loss is " + std::to_string(e.loss));
    } catch (const NumericalError& err) {
      log.aborted = true;
      log.abort_reason = "eval at step " + std::to_string(step) + ": " + err.what();
      return false;
    }
    log.points.push_back({step, train_loss, e.accuracy, e.loss});
    if (!run_dir.empty()) save_model(run_dir / "checkpoint.ckpt", model, checkpoint_meta(model, cfg, step));
    if (on_eval) on_eval(log.points.back());
    return true;
  };

  ad::Adam<float> adam({cfg.lr, cfg.beta1, cfg.beta2, cfg.eps});
  BatchLoader loader(train_set, {cfg.batch, derive_seed(cfg.seed, 0x10ad), cfg.workers, 4, cfg.flips});
  const bool started = record(0, std::nullopt);
  double loss_sum = 0;
  std::int64_t loss_count = 0;
  for (std::int64_t step = 1; started && step <= cfg.steps; ++step) {
    const Batch b = loader.next();
    model.params().zero_grad();
    try {
      Tape<float> tape(true);
      auto fp = model.forward(tape, tape.leaf(b.images), NormMode::Train);
      auto loss = ad::softmax_cross_entropy(fp.logits, std::span<const int>(b.labels));
      const double value = loss.value()[0];
      if (!std::isfinite(value)) throw NumericalError("training loss is " + std::to_string(value));
      tape.backward(loss);
      loss_sum += value;
      ++loss_count;
    } catch (const NumericalError& e) {
      log.aborted = true;
      log.abort_reason = "step " + std::to_string(step) + ": " + e.what();
      break;
    }
    adam.step(model.params());
    log.completed_steps = step;
    if (step % cfg.eval_every == 0) {
      if (!record(step, loss_sum / static_cast<double>(loss_count))) break;
      loss_sum = 0;
      loss_count = 0;
    }
  }

  log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!run_dir.empty()) {
    nlohmann::json metrics = log.to_json();
    const bool has = provenance.is_object();
    metrics["kind"] = has ? provenance.value("kind", "train") : "train";
    metrics["dataset"] = has ? provenance.value("dataset", "") : "";
    write_json(run_dir / "metrics.json", metrics);
    write_json(run_dir / "timing.json",
               {{"wall_seconds", log.wall_seconds},
                {"steps", log.completed_steps},
                {"steps_per_second", log.wall_seconds > 0 ? log.completed_steps / log.wall_seconds : 0.0}});
  }
  return log;
}

nlohmann::json TransferResult::to_json() const {
  return {{"zero_shot_accuracy", zero_shot_accuracy},
          {"final_accuracy", final_accuracy},
          {"updated_variables", updated_variables},
          {"updated_variable_count", updated_variables.size()},
          {"changed_variables", changed_variables},
          {"frozen_unchanged", frozen_unchanged}};
}

TransferResult transfer_finetune(Model<float>& model, const ImageSet& train_set, const ImageSet& val_set,
                                 const TrainConfig& cfg, const fs::path& run_dir, const nlohmann::json& provenance,
                                 const EvalHook& on_eval) {
  bool partitioned = false;
  for (const auto& p : model.params()) partitioned |= p.group == ad::ParamGroup::Readout;
  if (!partitioned) throw ConfigError("model has no readout partition to fine-tune");

  TransferResult r;
  r.zero_shot_accuracy = evaluate(model, val_set, cfg.eval_batch).accuracy;
  model.freeze_for_transfer();
  r.updated_variables = model.updated_variables();
  std::vector<Tensor<float>> before;
  for (const auto& p : model.params()) before.push_back(p.value);

  nlohmann::json prov = provenance;
  prov["kind"] = "transfer";
  r.finetune = train(model, train_set, val_set, cfg, run_dir, prov, on_eval);
  r.final_accuracy = r.finetune.points.back().val_accuracy;

  const std::set<std::string> reach(r.updated_variables.begin(), r.updated_variables.end());
  r.frozen_unchanged = true;
  std::size_t i = 0;
  for (const auto& p : model.params()) {
    const bool same = p.value == before[i++];
    if (!same) r.changed_variables.push_back(p.name);
    if (!same && !reach.contains(p.name)) r.frozen_unchanged = false;
  }

  if (!run_dir.empty()) {
    nlohmann::json metrics = r.finetune.to_json();
    metrics["kind"] = "transfer";
    metrics["dataset"] = prov.value("dataset", "");
    metrics["transfer"] = r.to_json();
    write_json(run_dir / "metrics.json", metrics);
  }
  return r;
}

}  // namespace contour
