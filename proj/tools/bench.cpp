#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "febench/benchmark.hpp"
#include "febench/report.hpp"
#include "febench/synth.hpp"

using namespace febench;

int main(int argc, char** argv) {
  CLI::App app{"Frozen-encoder vs fine-tuning text classification benchmark"};
  app.require_subcommand(1);

  std::filesystem::path config_path;
  BenchmarkOverrides overrides;
  std::uint64_t seed = 0;
  std::size_t repeats = 0, parallel = 0;
  std::string out, baseline;
  bool quiet = false;
  auto* run = app.add_subcommand("run", "Run every cell of a benchmark config");
  run->add_option("config", config_path, "Benchmark config file")->required();
  auto* seed_opt = run->add_option("--seed", seed, "Master seed");
  auto* repeats_opt = run->add_option("--repeats", repeats, "Runs per cell")->check(CLI::PositiveNumber);
  auto* parallel_opt = run->add_option("--parallel", parallel, "Concurrent runs")->check(CLI::PositiveNumber);
  auto* out_opt = run->add_option("--out", out, std::string("Output directory (overrides $") + kOutRootEnv + ")");
  auto* baseline_opt = run->add_option("--baseline", baseline, "Cell used as the relative-time baseline");
  run->add_flag("-q,--quiet", quiet, "No progress output");

  std::filesystem::path spec_path, synth_out;
  std::string synth_format = "jsonl";
  auto* synth = app.add_subcommand("synth", "Generate a synthetic keyword corpus");
  synth->add_option("spec", spec_path, "Synthetic corpus spec")->required();
  synth->add_option("-o,--out", synth_out, "Output directory")->required();
  synth->add_option("--format", synth_format, "jsonl or csv")->check(CLI::IsMember({"jsonl", "csv"}));
  auto* synth_seed = synth->add_option("--seed", seed, "Overrides the spec seed");

  std::filesystem::path results_path;
  auto* report = app.add_subcommand("report", "Render tables from a results file or directory");
  report->add_option("results", results_path, "results.jsonl or the directory holding it")->required();
  auto* report_baseline = report->add_option("--baseline", baseline, "Cell used as the relative-time baseline");
  bool tsv = false;
  report->add_flag("--tsv", tsv, "Tab-separated output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  if (*run) {
    if (*seed_opt) overrides.seed = seed;
    if (*repeats_opt) overrides.repeats = repeats;
    if (*parallel_opt) overrides.parallel = parallel;
    if (*out_opt) overrides.out = out;
    if (*baseline_opt) overrides.baseline = baseline;
    auto outcome = run_benchmark(config_path, overrides, quiet ? nullptr : &std::cerr);
    if (outcome.exit_code == 2) {
      std::cerr << "config error: " << outcome.message << "\n";
      return 2;
    }
    if (!quiet) std::cerr << "results written to " << outcome.out_dir.string() << "\n";
    std::ifstream txt(outcome.out_dir / "report.txt");
    if (txt) std::cout << txt.rdbuf();
    if (outcome.exit_code != 0) std::cerr << "error: " << outcome.message << "\n";
    return outcome.exit_code;
  }

  if (*synth) {
    try {
      auto spec = load_synthetic_spec(spec_path);
      if (*synth_seed) spec.seed = seed;
      auto ds = make_synthetic(spec);
      save_dataset(ds, synth_out, parse_dataset_format(synth_format));
      std::cerr << ds.train.size() << " train / " << ds.test.size() << " test documents, " << ds.label_space.size()
                << " labels, written to " << synth_out.string() << "\n";
      return 0;
    } catch (const SyntheticSpecError& e) {
      std::cerr << "spec error: " << e.what() << "\n";
      return 2;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 1;
    }
  }

  try {
    auto results = read_results(results_path);
    auto base = *report_baseline ? baseline : default_baseline(results.cells);
    std::cout << (tsv ? emit_tsv(results, base) : emit_report(results, base));
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
