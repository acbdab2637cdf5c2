// maskbench: simulate -> extract -> train -> evaluate, plus the stride and layer ablations.
#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "maskbench/error.hpp"
#include "maskbench/harness.hpp"

namespace fs = std::filesystem;
using namespace maskbench;

namespace {

struct Globals {
  std::string manifest;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  std::size_t workers = default_workers();
  bool force = false;

  RunOptions run() const { return {workers, force}; }
};

Manifest need_manifest(const Globals& g) {
  if (g.manifest.empty()) throw Error(ErrorKind::config, "--manifest is required");
  return Manifest::load(g.manifest);
}

TrainSpec train_spec(const Globals& g, const std::string& config_path,
                     const std::optional<std::size_t>& steps, const std::optional<double>& lr,
                     const std::optional<std::size_t>& batch,
                     const std::optional<std::size_t>& dev_every) {
  const Config config = config_path.empty() ? Config{} : Config::load(config_path);
  TrainSpec spec = TrainSpec::from_config(config);
  if (g.seed) spec.estimator.seed = *g.seed;
  if (steps) spec.options.steps = *steps;
  if (lr) spec.options.learning_rate = *lr;
  if (batch) spec.options.batch_size = *batch;
  if (dev_every) spec.options.dev_every = *dev_every;
  return spec;
}

void print_report(const EvalReport& r, std::size_t sources) {
  std::cout << std::fixed << std::setprecision(3) << "utterances: " << r.count
            << "  mean SI-SNR: " << r.mean_si_snr << " dB";
  if (sources > 1) std::cout << "  mean SI-SNRi: " << r.mean_si_snri << " dB";
  std::cout << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"maskbench: mask-based separation benchmark harness"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--manifest", g.manifest, "Manifest (JSONL)");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--seed", g.seed, "Seed override");
  app.add_option("--workers", g.workers, "Worker threads (default: MASKBENCH_WORKERS or 1)")
      ->check(CLI::PositiveNumber);
  app.add_flag("--force", g.force, "Overwrite existing outputs");

  auto* sim = app.add_subcommand("simulate", "Synthesize a mixture corpus");
  std::string sim_config;
  sim->add_option("--config", sim_config, "Config file with a [simulate] section");

  auto* ext = app.add_subcommand("extract", "Baseline features for every utterance");
  std::string kind = "stft_mag";
  std::size_t hop = 160, toy_layers = 4;
  ext->add_option("--kind", kind, "stft_mag | fbank | toy_layers");
  ext->add_option("--hop", hop, "Feature stride in samples");
  ext->add_option("--layers", toy_layers, "K for toy_layers");

  auto* oracle = app.add_subcommand("oracle-eval", "Score the ideal INPSM masks");
  bool identity = false;
  double ceiling = kDefaultMaskCeiling;
  std::size_t oracle_hop = 160;
  std::string split = "test";
  oracle->add_flag("--identity-mask", identity, "Use an all-ones mask (control)");
  oracle->add_option("--mask-ceiling", ceiling, "Mask ceiling");
  oracle->add_option("--hop", oracle_hop, "STFT hop");
  oracle->add_option("--split", split, "train | dev | test");

  std::string train_config, resume;
  std::optional<std::size_t> steps, batch, dev_every;
  std::optional<double> lr;
  auto add_train_flags = [&](CLI::App* cmd) {
    cmd->add_option("--config", train_config, "Config with [estimator] [stft] [train]");
    cmd->add_option("--steps", steps, "Training steps");
    cmd->add_option("--lr", lr, "Learning rate");
    cmd->add_option("--batch-size", batch, "Batch size");
    cmd->add_option("--dev-every", dev_every, "Dev evaluation interval");
  };
  auto* tr = app.add_subcommand("train", "Train a mask estimator");
  add_train_flags(tr);
  tr->add_option("--resume", resume, "Continue from a checkpoint");

  auto* ev = app.add_subcommand("evaluate", "Evaluate a checkpoint");
  std::string checkpoint;
  ev->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  ev->add_option("--split", split, "train | dev | test");

  auto* layer = app.add_subcommand("layer-analysis", "One model per layer plus the weighted sum");
  add_train_flags(layer);

  auto* stride = app.add_subcommand("stride-ablation", "Train and evaluate per stride");
  add_train_flags(stride);
  std::vector<std::size_t> strides = {160, 320};
  stride->add_option("--strides", strides, "Strides in samples")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    const fs::path out(g.out);
    if (*sim) {
      SimulateSpec spec = SimulateSpec::from_config(
          sim_config.empty() ? Config{} : Config::load(sim_config));
      if (g.seed) spec.seed = *g.seed;
      const auto m = cmd_simulate(spec, out, g.run());
      std::cout << "wrote " << m.records.size() << " utterances to "
                << (out / "manifest.jsonl").string() << '\n';
    } else if (*ext) {
      ExtractSpec spec{parse_feature_kind(kind), hop, toy_layers};
      const auto m = cmd_extract(need_manifest(g), spec, out, g.run());
      std::cout << "wrote features for " << m.records.size() << " utterances\n";
    } else if (*oracle) {
      const auto m = need_manifest(g);
      OracleSpec spec{stft_for_hop(oracle_hop), ceiling, identity, split};
      const auto report = cmd_oracle_eval(m, spec, g.run());
      std::ostringstream key;
      key << std::setprecision(17) << "oracle-eval\nhop=" << oracle_hop << "\nceiling=" << ceiling
          << "\nidentity=" << identity << "\nsplit=" << split << '\n';
      write_report(out / "oracle_report", report, "oracle-eval", sha256_hex(key.str()),
                   m.sources());
      print_report(report, m.sources());
    } else if (*tr) {
      const auto m = need_manifest(g);
      const auto spec = train_spec(g, train_config, steps, lr, batch, dev_every);
      const auto run = cmd_train(m, spec, out, g.run(),
                                 resume.empty() ? std::nullopt : std::optional<fs::path>(resume));
      std::cout << "trained to step " << run.result.last.step << "; best step "
                << run.result.best_step;
      if (run.result.best_dev_metric) std::cout << " (dev " << *run.result.best_dev_metric << ")";
      std::cout << '\n';
      if (run.test_report.count) print_report(run.test_report, m.sources());
    } else if (*ev) {
      const auto m = need_manifest(g);
      const auto report = cmd_evaluate(m, checkpoint, split, g.run());
      std::ifstream in(checkpoint, std::ios::binary);
      std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      write_report(out / "eval_report", report, "evaluate", sha256_hex(bytes + "\n" + split),
                   m.sources());
      print_report(report, m.sources());
    } else if (*layer) {
      const auto m = need_manifest(g);
      const auto result = cmd_layer_analysis(
          m, train_spec(g, train_config, steps, lr, batch, dev_every), out, g.run());
      for (const auto& r : result.rows)
        std::cout << r.name << "  dev " << r.dev_metric << "  test " << r.test_metric << '\n';
      std::cout << "weights:";
      for (double w : result.weights) std::cout << ' ' << w;
      std::cout << '\n';
      if (result.rows.size() > 1) {
        double best = result.rows.front().test_metric;
        for (std::size_t k = 0; k + 1 < result.rows.size(); ++k)
          best = std::max(best, result.rows[k].test_metric);
        std::cout << "weighted " << (result.rows.back().test_metric >= best ? ">=" : "<")
                  << " best single layer (" << result.rows.back().test_metric << " vs " << best
                  << ")\n";
      }
    } else if (*stride) {
      const auto m = need_manifest(g);
      const auto rows = cmd_stride_ablation(
          m, train_spec(g, train_config, steps, lr, batch, dev_every), strides, out, g.run());
      for (const auto& r : rows)
        std::cout << "stride " << r.stride << " (F=" << r.bins << ")  dev " << r.dev_metric
                  << "  test " << r.test_metric << '\n';
    }
  } catch (const Error& e) {
    std::cerr << "maskbench: " << e.what() << '\n';
    return is_usage_error(e) ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "maskbench: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
