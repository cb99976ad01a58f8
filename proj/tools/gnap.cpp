// Command-line front end: train, eval, sweep.
#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <json.hpp>

#include "gnap/checkpoint.hpp"
#include "gnap/report.hpp"
#include "gnap/train.hpp"

using namespace gnap;
namespace fs = std::filesystem;

namespace {

struct DataFlags {
  std::string dataset = "mnist";
  std::string data_dir = "data/mnist-desk";
  double val_fraction = 1.0 / 6.0;
  std::uint64_t split_seed = 0;
  std::size_t synthetic_n = 600;
  std::size_t synthetic_size = 16;
  std::size_t synthetic_classes = 4;
};

struct Splits {
  Dataset train, val, test;
};

Dataset load_train_file(const DataFlags& f) {
  const fs::path d = f.data_dir;
  if (f.dataset == "mnist") return load_mnist(d / "train-images-idx3-ubyte", d / "train-labels-idx1-ubyte");
  if (f.dataset == "cifar10") {
    std::vector<fs::path> files;
    for (int i = 1; i <= 5; ++i) files.push_back(d / ("data_batch_" + std::to_string(i) + ".bin"));
    return load_cifar(files, CifarVariant::cifar10);
  }
  if (f.dataset == "cifar100") return load_cifar(d / "train.bin", CifarVariant::cifar100);
  return synthetic(SyntheticKind::stripes, f.synthetic_n, f.synthetic_classes, f.synthetic_size, f.split_seed);
}

Dataset load_test_file(const DataFlags& f) {
  const fs::path d = f.data_dir;
  if (f.dataset == "mnist") return load_mnist(d / "t10k-images-idx3-ubyte", d / "t10k-labels-idx1-ubyte");
  if (f.dataset == "cifar10") return load_cifar(d / "test_batch.bin", CifarVariant::cifar10);
  if (f.dataset == "cifar100") return load_cifar(d / "test.bin", CifarVariant::cifar100);
  // Independent draw for the synthetic test set.
  return synthetic(SyntheticKind::stripes, f.synthetic_n / 5 + 1, f.synthetic_classes, f.synthetic_size,
                   f.split_seed + 1);
}

Splits load_splits(const DataFlags& f, bool need_test) {
  Splits s;
  auto [tr, va] = split(load_train_file(f), f.val_fraction, f.split_seed);
  s.train = std::move(tr);
  s.val = std::move(va);
  if (need_test) s.test = load_test_file(f);
  return s;
}

void add_data_flags(CLI::App* app, DataFlags& f) {
  app->add_option("--dataset", f.dataset, "mnist, cifar10, cifar100 or synthetic")
      ->check(CLI::IsMember({"mnist", "cifar10", "cifar100", "synthetic"}));
  app->add_option("--data-dir", f.data_dir, "Directory holding the dataset files");
  app->add_option("--val-fraction", f.val_fraction, "Share of the training file held out for validation")
      ->check(CLI::Range(0.0, 1.0));
  app->add_option("--synthetic-n", f.synthetic_n, "Synthetic training images")->check(CLI::PositiveNumber);
  app->add_option("--synthetic-size", f.synthetic_size, "Synthetic image side")->check(CLI::PositiveNumber);
  app->add_option("--synthetic-classes", f.synthetic_classes, "Synthetic classes")->check(CLI::Range(2, 100));
}

// Dataset flags not given on the command line fall back to the checkpoint's echo.
void inherit_data_flags(CLI::App* app, DataFlags& f, const std::map<std::string, std::string>& echo) {
  auto take = [&](const char* flag, const char* key, auto& dst) {
    auto it = echo.find(key);
    if (app->count(flag) || it == echo.end()) return;
    std::istringstream in(it->second);
    in >> dst;
  };
  take("--dataset", "dataset", f.dataset);
  take("--data-dir", "data_dir", f.data_dir);
  take("--val-fraction", "val_fraction", f.val_fraction);
  take("--synthetic-n", "synthetic_n", f.synthetic_n);
  take("--synthetic-size", "synthetic_size", f.synthetic_size);
  take("--synthetic-classes", "synthetic_classes", f.synthetic_classes);
  auto it = echo.find("seed");
  if (it != echo.end()) f.split_seed = std::stoull(it->second);
}

nlohmann::ordered_json eval_json(Network<float>& net, const Dataset& data, double gamma) {
  const LinkCount lc = net.count_links(gamma);
  nlohmann::ordered_json j;
  j["gamma"] = gamma;
  j["accuracy"] = evaluate_accuracy(net, data, gamma);
  j["links"] = lc.links;
  j["weights"] = lc.weights;
  j["samples"] = data.size();
  j["architecture"] = net.architecture().to_string();
  return j;
}

const Dataset& pick(const Splits& s, const std::string& which) {
  if (which == "train") return s.train;
  if (which == "val") return s.val;
  return s.test;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gated growing and pruning of convolutional networks"};
  app.require_subcommand(1);

  DataFlags data;
  TrainConfig cfg;
  std::string arch = "10|10|fc10";
  std::string granularity = "weight";
  std::optional<std::size_t> cutoff;
  std::string out_dir = "run";
  bool no_timing = false, augment = false;

  auto* train_cmd = app.add_subcommand("train", "Grow, prune and refine a network");
  add_data_flags(train_cmd, data);
  train_cmd->add_option("--arch", arch, "Initial architecture, e.g. 10|10|fc10");
  train_cmd->add_option("--granularity", granularity, "Gate per weight or per kernel")
      ->check(CLI::IsMember({"weight", "kernel"}));
  train_cmd->add_option("--epochs", cfg.epochs, "Main-phase epochs E");
  train_cmd->add_option("--grow-cutoff", cutoff, "Last epoch a growing phase may start (default 30% of E)");
  train_cmd->add_option("--grow-width", cfg.grow_width, "Channels per grown layer C")->check(CLI::PositiveNumber);
  train_cmd->add_option("--alpha", cfg.alpha, "Sparsity weight")->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--alpha-refine", cfg.alpha_refine, "Sparsity weight during refinement")
      ->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--refine-epochs", cfg.refine_epochs, "Refinement epochs");
  train_cmd->add_option("--theta", cfg.theta, "Growth threshold on relative link change");
  train_cmd->add_option("--window", cfg.window, "Growth window M")->check(CLI::PositiveNumber);
  train_cmd->add_option("--theta-acc", cfg.theta_acc, "Accuracy tolerance of the early-stop rule");
  train_cmd->add_option("--gamma", cfg.gamma, "Inference threshold")->check(CLI::Range(0.0, 1.0));
  train_cmd->add_option("--lr", cfg.lr, "Adam learning rate")->check(CLI::PositiveNumber);
  train_cmd->add_option("--batch", cfg.batch_size, "Batch size")->check(CLI::PositiveNumber);
  train_cmd->add_option("--weight-decay", cfg.weight_decay, "L2 weight decay on weights and biases");
  train_cmd->add_option("--seed", cfg.seed, "Seed for every random stream");
  train_cmd->add_option("--out-dir", out_dir, "Artifact directory");
  train_cmd->add_option("--max-phases", cfg.max_phases, "Growing phases allowed (0 disables growth)");
  train_cmd->add_flag("--augment", augment, "Train with the augmentation pipeline");
  train_cmd->add_flag("--no-timing", no_timing, "Write 0 for seconds so records are reproducible byte for byte");

  std::string ckpt_path;
  double gamma = 0.5;
  std::string which = "val";
  bool as_json = false;
  auto* eval_cmd = app.add_subcommand("eval", "Deterministic evaluation of a checkpoint");
  eval_cmd->add_option("checkpoint", ckpt_path, "Checkpoint file")->required();
  add_data_flags(eval_cmd, data);
  eval_cmd->add_option("--gamma", gamma, "Inference threshold")->check(CLI::Range(0.0, 1.0));
  eval_cmd->add_option("--split", which, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  eval_cmd->add_flag("--json", as_json, "Print JSON only");

  std::string sweep_out;
  auto* sweep_cmd = app.add_subcommand("sweep", "Evaluate a checkpoint over 99 thresholds");
  sweep_cmd->add_option("checkpoint", ckpt_path, "Checkpoint file")->required();
  add_data_flags(sweep_cmd, data);
  sweep_cmd->add_option("--split", which, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  sweep_cmd->add_option("--out", sweep_out, "CSV path (stdout when omitted)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      cfg.grow_cutoff = cutoff;
      cfg.granularity = granularity == "kernel" ? Granularity::kernel : Granularity::weight;
      cfg.record_time = !no_timing;
      data.split_seed = cfg.seed;
      if (augment)
        cfg.augmentation = data.dataset == "mnist" || data.dataset == "synthetic" ? AugmentConfig::mnist()
                                                                                   : AugmentConfig::cifar();
      cfg.validate();
      const Architecture parsed = Architecture::parse(arch);

      const fs::path out = out_dir;
      std::error_code ec;
      fs::create_directories(out, ec);
      if (ec || !fs::is_directory(out)) throw ReportError("cannot create output directory '" + out_dir + "'");
      const Splits s = load_splits(data, true);

      auto echo = describe(cfg);
      echo["arch"] = arch;
      echo["dataset"] = data.dataset;
      echo["data_dir"] = data.data_dir;
      char frac[32];
      std::snprintf(frac, sizeof frac, "%.17g", data.val_fraction);  // exact, so eval rebuilds the same split
      echo["val_fraction"] = frac;
      echo["synthetic_n"] = std::to_string(data.synthetic_n);
      echo["synthetic_size"] = std::to_string(data.synthetic_size);
      echo["synthetic_classes"] = std::to_string(data.synthetic_classes);

      TrainObserver obs;
      obs.on_epoch = [](const RunRecord& r, const Network<float>& n) {
        std::printf("epoch %3zu %-6s loss %.4f sparsity %.5f train %.4f val %.4f links %zu weights %zu %s%s\n", r.epoch,
                    r.phase.c_str(), r.train_loss, r.sparsity_term, r.train_acc, r.val_acc, r.links, r.weights,
                    n.architecture().to_string().c_str(), r.grow_event ? "  (grown)" : "");
        std::fflush(stdout);
      };
      obs.on_growth = [&](std::size_t phase, const Network<float>& n) {
        export_gate_matrix(n, cfg.gamma, out / ("phase" + std::to_string(phase) + ".pgm"));
      };

      TrainResult res = train(parsed, NetConfig{}, cfg, s.train, s.val, obs);
      write_runrecord(res.records, out / "runrecord.csv", out / "runrecord.json");
      save_checkpoint(out / "best.ckpt", res.best, echo, {cfg.seed, res.tracker.epoch, res.phases});
      save_checkpoint(out / "final.ckpt", res.final_net, echo, {cfg.seed, res.records.size(), res.phases});
      export_gate_matrix(res.final_net, cfg.gamma, out / "final.pgm");

      nlohmann::ordered_json summary;
      summary["best_epoch"] = res.tracker.epoch;
      summary["best_val_accuracy"] = res.tracker.best_acc;
      summary["best_links"] = res.tracker.best_links;
      summary["growing_phases"] = res.phases;
      summary["test"] = eval_json(res.best, s.test, cfg.gamma);
      summary["aborted"] = res.aborted;
      if (res.aborted) summary["abort_reason"] = res.abort_reason;
      write_text(out / "summary.json", summary.dump(1) + "\n");
      std::printf("best epoch %zu val %.4f links %zu; test %.4f; growing phases %zu\n", res.tracker.epoch,
                  res.tracker.best_acc, res.tracker.best_links, summary["test"]["accuracy"].get<double>(), res.phases);
      if (res.aborted) {
        std::fprintf(stderr, "gnap: training stopped: %s\n", res.abort_reason.c_str());
        return 1;
      }
      return 0;
    }

    Checkpoint ck = load_checkpoint(ckpt_path);
    CLI::App* cmd = *eval_cmd ? eval_cmd : sweep_cmd;
    inherit_data_flags(cmd, data, ck.config);
    const Splits s = load_splits(data, which == "test");
    const Dataset& d = pick(s, which);

    if (*eval_cmd) {
      const auto j = eval_json(ck.net, d, gamma);
      if (as_json) {
        std::cout << j.dump() << "\n";
      } else {
        std::printf("accuracy %s links %zu weights %zu (%s split, %zu samples, gamma %g)\n",
                    format_g9(j["accuracy"].get<double>()).c_str(), j["links"].get<std::size_t>(),
                    j["weights"].get<std::size_t>(), which.c_str(), d.size(), gamma);
        std::cout << j.dump() << "\n";
      }
      return 0;
    }

    const std::string csv = sweep_csv(sweep(ck.net, d, default_gamma_grid()));
    if (sweep_out.empty())
      std::cout << csv;
    else
      write_text(sweep_out, csv);
    return 0;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "gnap: %s\n", e.what());
    return 1;
  }
}
