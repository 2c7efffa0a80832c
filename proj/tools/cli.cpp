#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "contour/dataset.hpp"
#include "contour/errors.hpp"
#include "contour/image.hpp"
#include "contour/interpret.hpp"
#include "contour/loader.hpp"
#include "contour/models.hpp"
#include "contour/train.hpp"

namespace contour {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file(path, std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

std::string dataset_tag(const DatasetOptions& d) {
  return std::string(to_string(d.stimulus.dataset)) + "-" + std::to_string(d.stimulus.size);
}

nlohmann::json provenance(const fs::path& data, const DatasetOptions& d) {
  return {{"dataset", dataset_tag(d)}, {"data", data.string()}, {"data_seed", d.seed}};
}

Tensor<float> load_image(const fs::path& path) {
  const Image img = decode_png(read_file(path));
  Tensor<float> t(Shape(1, img.height(), img.width(), 3));
  const auto& bytes = img.bytes();
  for (std::size_t i = 0; i < bytes.size(); ++i) t[static_cast<std::int64_t>(i)] = bytes[i] / 255.0f;
  return t;
}

void print_eval(const std::string& split, const EvalResult& r, const fs::path& out) {
  const nlohmann::json j{{"split", split}, {"accuracy", r.accuracy}, {"loss", r.loss}, {"correct", r.correct},
                         {"count", r.count}};
  std::cout << j.dump() << "\n";
  if (!out.empty()) write_text(out, j.dump(2) + "\n");
}

struct TrainArgs {
  TrainConfig cfg;
  fs::path data, out;
  std::int64_t repeats = 1;
  std::int64_t train_limit = 0, val_limit = 0;
  bool lr_set = false;
};

void add_train_options(CLI::App* cmd, TrainArgs& a) {
  cmd->add_option("--data", a.data, "dataset directory")->required();
  cmd->add_option("--out", a.out, "run directory")->required();
  cmd->add_option("--steps", a.cfg.steps, "optimizer steps")->capture_default_str();
  cmd->add_option("--seed", a.cfg.seed, "initialization and shuffle seed")->capture_default_str();
  cmd->add_option("--batch", a.cfg.batch, "batch size")->capture_default_str();
  cmd->add_option("--eval-every", a.cfg.eval_every, "evaluation interval in steps")->capture_default_str();
  cmd->add_option("--eval-batch", a.cfg.eval_batch, "evaluation batch size")->capture_default_str();
  cmd->add_option("--workers", a.cfg.workers, "data loader threads (0 = inline)")->capture_default_str();
  cmd->add_option("--timesteps", a.cfg.timesteps, "recurrent iterations (0 = architecture default)");
  cmd->add_option("--train-limit", a.train_limit, "use only the first N training images");
  cmd->add_option("--val-limit", a.val_limit, "use only the first N validation images");
  cmd->add_flag("--flips", a.cfg.flips, "random h/v flips of training batches");
}

// Markedlong trains at 5e-4 and pathfinder at 1e-3 unless --lr is given.
double default_lr(const DatasetOptions& d) { return d.stimulus.dataset == Dataset::PathFinder ? 1e-3 : 5e-4; }

int cmd_train(TrainArgs a) {
  const DatasetOptions data = read_dataset_config(a.data);
  if (!a.lr_set) a.cfg.lr = default_lr(data);
  a.cfg.validate();
  const ImageSet train_set = load_split(a.data, "train", std::max(1, a.cfg.workers), a.train_limit);
  const ImageSet val_set = load_split(a.data, "val", std::max(1, a.cfg.workers), a.val_limit);
  const ModelSpec spec = model_spec(a.cfg.arch, train_set.size);
  for (std::int64_t r = 0; r < a.repeats; ++r) {
    TrainConfig cfg = a.cfg;
    cfg.seed = a.cfg.seed + static_cast<std::uint64_t>(r);
    const fs::path dir = a.repeats > 1 ? a.out / ("seed" + std::to_string(cfg.seed)) : a.out;
    Model<float> model(spec, cfg.seed);
    std::cerr << cfg.arch << " seed " << cfg.seed << ": " << model.count_params() << " parameters\n";
    const TrainLog log = train(model, train_set, val_set, cfg, dir, provenance(a.data, data), [](const EvalPoint& p) {
      std::fprintf(stderr, "step %lld  val_acc %.4f  val_loss %.4f\n", static_cast<long long>(p.step),
                   p.val_accuracy, p.val_loss);
    });
    if (log.aborted) {
      std::cerr << "run aborted: " << log.abort_reason << "\n";
      return 3;
    }
    std::printf("%s seed %llu max_val_accuracy %.4f sample_efficiency %.4f\n", cfg.arch.c_str(),
                static_cast<unsigned long long>(cfg.seed), log.max_val_accuracy(), sample_efficiency(log.points));
  }
  return 0;
}

int cmd_transfer(const fs::path& ckpt, TrainArgs a) {
  const DatasetOptions data = read_dataset_config(a.data);
  if (!a.lr_set) a.cfg.lr = 1e-3;
  nlohmann::json meta;
  Model<float> model = load_model(ckpt, &meta);
  a.cfg.arch = model.spec().arch_id;
  a.cfg.validate();
  const ImageSet train_set = load_split(a.data, "train", std::max(1, a.cfg.workers), a.train_limit);
  const ImageSet val_set = load_split(a.data, "val", std::max(1, a.cfg.workers), a.val_limit);
  nlohmann::json prov = provenance(a.data, data);
  prov["pretrained"] = ckpt.string();
  const TransferResult r = transfer_finetune(model, train_set, val_set, a.cfg, a.out, prov);
  std::cout << r.to_json().dump(2) << "\n";
  return r.finetune.aborted ? 3 : 0;
}

std::vector<std::int64_t> parse_channels(const std::string& s) {
  std::vector<std::int64_t> out;
  std::stringstream ss(s);
  for (std::string tok; std::getline(ss, tok, ',');) {
    try {
      out.push_back(std::stoll(tok));
    } catch (const std::exception&) {
      throw ConfigError("bad channel list '" + s + "'");
    }
  }
  if (out.empty()) throw ConfigError("empty channel list");
  return out;
}

int cmd_pca(const fs::path& ckpt, const fs::path& out, std::int64_t columns) {
  const Model<float> model = load_model(ckpt);
  std::vector<GalleryRow> rows;
  nlohmann::json j{{"checkpoint", ckpt.string()}, {"arch", model.spec().arch_id}, {"banks", nlohmann::json::object()}};
  for (const char* b : kHorizontalBanks) {
    rows.push_back({b, kernel_pca(horizontal_bank(model, b))});
    j["banks"][b] = rows.back().pca.to_json();
  }
  fs::create_directories(out);
  write_file(out / "pc_gallery.png", render_pc_gallery(rows, columns));
  write_text(out / "pca.json", j.dump(2) + "\n");
  for (const auto& r : rows) {
    std::printf("%s: top-4 cumulative explained variance %.4f\n", r.name.c_str(), r.pca.cumulative(4));
  }
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Contour-integration benchmark: stimuli, training, transfer and inspection"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "render a MarkedLong or PathFinder dataset");
  std::string dataset_name;
  std::int64_t count = 0, size = 0;
  std::uint64_t gen_seed = 0;
  double split = -1;
  bool augment = false;
  fs::path gen_out;
  gen->add_option("--dataset", dataset_name, "markedlong | pathfinder")
      ->required()
      ->check(CLI::IsMember({"markedlong", "pathfinder"}));
  gen->add_option("--count", count, "images per class")->required();
  gen->add_option("--seed", gen_seed, "base seed")->required();
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--size", size, "canvas side (default 256 markedlong, 150 pathfinder)");
  gen->add_option("--split", split, "training fraction (default 0.75 markedlong, 0.9 pathfinder)");
  gen->add_flag("--augment", augment, "also write h, v and hv flips");

  // train
  auto* tr = app.add_subcommand("train", "train one architecture");
  TrainArgs targs;
  tr->add_option("--arch", targs.cfg.arch, "architecture id")->required()->check(CLI::IsMember(arch_ids()));
  auto* lr_opt = tr->add_option("--lr", targs.cfg.lr, "Adam learning rate (default 5e-4 markedlong, 1e-3 pathfinder)");
  tr->add_option("--repeats", targs.repeats, "independent seeds seed, seed+1, ...")->capture_default_str();
  add_train_options(tr, targs);

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  fs::path ev_ckpt, ev_data, ev_out;
  std::string ev_split = "val";
  std::int64_t ev_batch = 100, ev_limit = 0;
  int ev_workers = 2;
  ev->add_option("--ckpt", ev_ckpt, "checkpoint file")->required();
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--split", ev_split, "train | val")->capture_default_str()->check(CLI::IsMember({"train", "val"}));
  ev->add_option("--batch", ev_batch, "evaluation batch size")->capture_default_str();
  ev->add_option("--limit", ev_limit, "use only the first N images");
  ev->add_option("--workers", ev_workers, "decoding threads")->capture_default_str();
  ev->add_option("--out", ev_out, "also write the result as JSON");

  // transfer
  auto* tf = app.add_subcommand("transfer", "fine-tune readout and norm parameters on a new dataset");
  fs::path tf_ckpt;
  TrainArgs fargs;
  tf->add_option("--ckpt", tf_ckpt, "pretrained checkpoint")->required();
  auto* tf_lr = tf->add_option("--lr", fargs.cfg.lr, "Adam learning rate (default 1e-3)");
  add_train_options(tf, fargs);

  // report
  auto* rep = app.add_subcommand("report", "aggregate run metrics into CSV");
  fs::path runs, rep_out;
  rep->add_option("--runs", runs, "directory containing run directories")->required();
  rep->add_option("--out", rep_out, "write CSV here instead of stdout");

  // inspect
  auto* ins = app.add_subcommand("inspect", "interpretability artifacts");
  ins->require_subcommand(1);
  auto* act = ins->add_subcommand("activations", "per-timestep hidden-state maps for one image");
  fs::path act_ckpt, act_image, act_out;
  std::string channels = "5,28";
  act->add_option("--ckpt", act_ckpt, "checkpoint file")->required();
  act->add_option("--image", act_image, "PNG stimulus")->required();
  act->add_option("--channels", channels, "comma-separated channel indices")->capture_default_str();
  act->add_option("--out", act_out, "output directory")->required();
  auto* pca = ins->add_subcommand("pca", "PCA of the horizontal kernel banks");
  fs::path pca_ckpt, pca_out;
  std::int64_t columns = 8;
  pca->add_option("--ckpt", pca_ckpt, "checkpoint file")->required();
  pca->add_option("--out", pca_out, "output directory")->required();
  pca->add_option("--columns", columns, "components per row")->capture_default_str();

  // summary
  auto* sum = app.add_subcommand("summary", "layer table and parameter counts");
  std::string sum_arch;
  std::int64_t sum_size = 64;
  sum->add_option("--arch", sum_arch, "architecture id")->required()->check(CLI::IsMember(arch_ids()));
  sum->add_option("--size", sum_size, "input side")->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen) {
      DatasetOptions opt;
      const Dataset d = parse_dataset(dataset_name);
      opt.stimulus = StimulusConfig::preset(d, size > 0 ? size : (d == Dataset::PathFinder ? 150 : 256));
      opt.count_per_class = count;
      opt.seed = gen_seed;
      opt.train_fraction = split >= 0 ? split : (d == Dataset::PathFinder ? 0.9 : 0.75);
      opt.augment = augment;
      const auto records = write_dataset(gen_out, opt);
      std::printf("wrote %zu images to %s\n", records.size(), gen_out.string().c_str());
      return 0;
    }
    if (*tr) {
      targs.lr_set = lr_opt->count() > 0;
      return cmd_train(targs);
    }
    if (*ev) {
      Model<float> model = load_model(ev_ckpt);
      const ImageSet set = load_split(ev_data, ev_split, std::max(1, ev_workers), ev_limit);
      print_eval(ev_split, evaluate(model, set, ev_batch), ev_out);
      return 0;
    }
    if (*tf) {
      fargs.lr_set = tf_lr->count() > 0;
      return cmd_transfer(tf_ckpt, fargs);
    }
    if (*rep) {
      const std::string csv = build_report(runs);
      if (rep_out.empty()) {
        std::cout << csv;
      } else {
        write_text(rep_out, csv);
      }
      return 0;
    }
    if (*act) {
      Model<float> model = load_model(act_ckpt);
      const ActivationTrace t =
          dump_activations(model, load_image(act_image), parse_channels(channels), act_out, act_image.stem().string());
      std::printf("wrote %lld timesteps x %zu channels to %s\n", static_cast<long long>(t.timesteps()),
                  t.channels.size(), act_out.string().c_str());
      return 0;
    }
    if (*pca) return cmd_pca(pca_ckpt, pca_out, columns);
    if (*sum) {
      std::cout << Model<float>(model_spec(sum_arch, sum_size), 0).summary();
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace contour
