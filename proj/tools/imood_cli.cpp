// imood command line: synth, train, eval, ablate, stats.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#include "CLI11.hpp"
#include "imood/error.hpp"
#include "imood/pipeline.hpp"

namespace fs = std::filesystem;
using namespace imood;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

TrainConfig config_or_default(const std::string& path) { return path.empty() ? TrainConfig{} : load_config(path); }

Benchmark benchmark_for(const TrainConfig& cfg, const std::string& data_dir) {
  if (data_dir.empty()) return make_benchmark(cfg.data);
  const fs::path dir(data_dir);
  Benchmark b;
  b.id_train = read_csv(dir / "id-train.csv", Split::id_train);
  b.id_test = read_csv(dir / "id-test.csv", Split::id_test);
  b.ood_train = read_csv(dir / "ood-train.csv", Split::ood_train);
  b.ood_test = read_csv(dir / "ood-test.csv", Split::ood_test);
  return b;
}

struct SynthArgs {
  TrainConfig cfg;
  std::string ood_test_mode = "uniform-box";
  std::string out;
};

struct TrainArgs {
  std::string config, data, out;
};

struct EvalArgs {
  std::string ckpt, id_test, ood_test, out;
  double rate = 0.95;
};

struct AblateArgs {
  std::string config, data, out, axis;
  std::size_t seeds = 5;
  std::size_t threads = 0;
};

int run_synth(SynthArgs& a) {
  DataConfig& d = a.cfg.data;
  d.ood_test.mode = ood_mode_from_name(a.ood_test_mode);
  a.cfg.validate();
  const Benchmark b = make_benchmark(d);
  const fs::path dir(a.out);
  fs::create_directories(dir);
  write_csv(b.id_train, dir / "id-train.csv");
  write_csv(b.id_test, dir / "id-test.csv");
  write_csv(b.ood_train, dir / "ood-train.csv");
  write_csv(b.ood_test, dir / "ood-test.csv");
  std::printf("wrote %zu + %zu ID rows, %zu + %zu OOD rows to %s\n", b.id_train.size(), b.id_test.size(),
              b.ood_train.size(), b.ood_test.size(), dir.string().c_str());
  return 0;
}

int run_train(const TrainArgs& a) {
  const TrainConfig cfg = config_or_default(a.config);
  const Benchmark bench = benchmark_for(cfg, a.data);
  const TrainResult r = train(cfg, bench);
  const fs::path dir(a.out);
  fs::create_directories(dir);
  save_checkpoint(r.model, dir / "checkpoint.json");
  write_text(dir / "run.json", r.record.to_json().dump(2) + "\n");
  std::printf("auroc %.4f  aupr %.4f  fpr95 %.4f  macro_acc %.4f  (%.1f s)\n", r.record.report.auroc,
              r.record.report.aupr, r.record.report.fpr95, r.record.report.macro_acc, r.record.wall_seconds);
  return 0;
}

int run_eval(const EvalArgs& a) {
  const TrainedModel model = load_checkpoint(a.ckpt);
  const LabeledDataset id = read_csv(a.id_test, Split::id_test);
  const LabeledDataset ood = read_csv(a.ood_test, Split::ood_test);
  const MetricsReport r = evaluate(model, id, ood, a.rate);
  if (a.out.empty())
    std::cout << r.to_json();
  else
    write_text(a.out, r.to_json());
  return 0;
}

int run_stats(const EvalArgs& a) {
  const TrainedModel model = load_checkpoint(a.ckpt);
  const LabeledDataset id = read_csv(a.id_test, Split::id_test);
  const LabeledDataset ood = read_csv(a.ood_test, Split::ood_test);
  const ErrorHistogram& h = evaluate(model, id, ood, a.rate).error_hist;
  std::string csv = "class_index,wrong_id_count,wrong_ood_count\n";
  for (std::size_t y = 0; y < h.wrong_id_by_class.size(); ++y)
    csv += std::to_string(y) + ',' + std::to_string(h.wrong_id_by_class[y]) + ',' +
           std::to_string(h.wrong_ood_by_class[y]) + '\n';
  if (a.out.empty())
    std::cout << csv;
  else
    write_text(a.out, csv);
  return 0;
}

int run_ablate(const AblateArgs& a) {
  const TrainConfig cfg = config_or_default(a.config);
  const Benchmark bench = benchmark_for(cfg, a.data);
  std::vector<std::uint64_t> seeds(a.seeds);
  std::iota(seeds.begin(), seeds.end(), std::uint64_t{0});
  const GridResult g = run_ablation_grid(cfg, bench, ablation_axis_from_name(a.axis), seeds, a.threads);
  if (a.out.empty())
    std::cout << g.to_csv();
  else
    write_text(a.out, g.to_csv());
  int failed = 0;
  for (const GridCell& c : g.cells)
    if (!c.record.ok) {
      std::fprintf(stderr, "%s seed %llu failed: %s\n", c.variant.c_str(),
                   static_cast<unsigned long long>(c.seed), c.record.error.c_str());
      ++failed;
    }
  for (const GridSummary& s : g.summary)
    std::fprintf(stderr, "%-14s auroc %.4f +- %.4f  (%zu runs)\n", s.variant.c_str(), s.mean.auroc, s.stddev.auroc,
                 s.runs);
  return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Imbalanced OOD detection toolkit"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto& lt = sa.cfg.data.longtail;
  auto* synth = app.add_subcommand("synth", "Write the synthetic benchmark as CSV files");
  synth->add_option("--k", lt.num_classes, "Number of classes")->check(CLI::PositiveNumber);
  synth->add_option("--d", lt.dim, "Feature dimension")->check(CLI::PositiveNumber);
  synth->add_option("--n-max", lt.n_max, "Head class size")->check(CLI::PositiveNumber);
  synth->add_option("--rho", lt.rho, "Imbalance ratio")->check(CLI::Range(1.0, 1e9));
  synth->add_option("--seed", lt.seed, "ID training seed");
  synth->add_option("--radius", lt.cluster_radius, "Cluster mean radius")->check(CLI::PositiveNumber);
  synth->add_option("--spread", lt.cluster_spread, "Cluster standard deviation")->check(CLI::PositiveNumber);
  synth->add_option("--n-test-per-class", sa.cfg.data.n_test_per_class, "Balanced ID test rows per class")
      ->check(CLI::PositiveNumber);
  synth->add_option("--n-ood-train", sa.cfg.data.ood_train.n, "OOD training rows")->check(CLI::PositiveNumber);
  synth->add_option("--n-ood-test", sa.cfg.data.ood_test.n, "OOD test rows")->check(CLI::PositiveNumber);
  synth->add_option("--ood-test-mode", sa.ood_test_mode, "OOD test generator")
      ->check(CLI::IsMember({"ring", "uniform-box"}));
  synth->add_option("--out", sa.out, "Output directory")->required();

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write checkpoint.json and run.json");
  train_cmd->add_option("--config", ta.config, "Config JSON (defaults when omitted)")->check(CLI::ExistingFile);
  train_cmd->add_option("--data", ta.data, "Directory written by synth (regenerates when omitted)")
      ->check(CLI::ExistingDirectory);
  train_cmd->add_option("--out", ta.out, "Output directory")->required();

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint and write a metrics report");
  EvalArgs st;
  auto* stats_cmd = app.add_subcommand("stats", "Per-class error statistics as CSV");
  for (auto [cmd, args] : {std::pair{eval_cmd, &ea}, std::pair{stats_cmd, &st}}) {
    cmd->add_option("--ckpt", args->ckpt, "Checkpoint JSON")->required()->check(CLI::ExistingFile);
    cmd->add_option("--id-test", args->id_test, "ID test CSV")->required()->check(CLI::ExistingFile);
    cmd->add_option("--ood-test", args->ood_test, "OOD test CSV")->required()->check(CLI::ExistingFile);
    cmd->add_option("--rate", args->rate, "OOD detection rate for error statistics")->check(CLI::Range(0.0, 1.0));
    cmd->add_option("--out", args->out, "Output file (stdout when omitted)");
  }

  AblateArgs aa;
  auto* ablate = app.add_subcommand("ablate", "Run a variant x seed grid and write CSV");
  ablate->add_option("--axis", aa.axis, "Ablation axis")->required()->check(CLI::IsMember({"gamma", "scorer"}));
  ablate->add_option("--seeds", aa.seeds, "Number of seeds (0..N-1)")->check(CLI::Range(2, 1000));
  ablate->add_option("--config", aa.config, "Base config JSON")->check(CLI::ExistingFile);
  ablate->add_option("--data", aa.data, "Directory written by synth")->check(CLI::ExistingDirectory);
  ablate->add_option("--threads", aa.threads, "Worker threads (0: IMOOD_THREADS, default 1)");
  ablate->add_option("--out", aa.out, "Output CSV (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*synth) return run_synth(sa);
    if (*train_cmd) return run_train(ta);
    if (*eval_cmd) return run_eval(ea);
    if (*stats_cmd) return run_stats(st);
    if (*ablate) return run_ablate(aa);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
