#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "febench/benchmark.hpp"
#include "febench/metrics.hpp"
#include "febench/synth.hpp"
#include "test_util.hpp"

using namespace febench;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const std::filesystem::path& p, const std::string& body) {
  std::ofstream out(p, std::ios::binary);
  out << body;
}

std::filesystem::path keyword_data(const std::filesystem::path& dir, std::size_t train = 20) {
  SyntheticSpec s;
  s.train = train;
  s.test = 10;
  s.vocab = 30;
  s.length = 8;
  s.markers_per_doc = 2;
  s.seed = 4;
  save_dataset(make_synthetic(s), dir / "kw", DatasetFormat::jsonl);
  return dir / "kw";
}

const char* kSmallConfig = R"([benchmark]
name = small
dataset = kw
repeats = 2
seed = 5
max_len = 16
out = out

[defaults]
epochs = 1
kernel_sizes = 2,3
filters = 8

[cell.tiny-FE]
preset = tiny
mode = FE
)";

CellResult forced_cell(const std::string& id, TrainMode mode, double mean, double sd, double epoch_s) {
  CellResult c;
  c.cell = id;
  c.preset = "base";
  c.mode = mode;
  c.epochs = 1;
  c.encoder_params = mode == TrainMode::FE ? 100 : 100;
  c.accuracy = c.precision = c.recall = c.f1 = {mean, sd};
  c.peak_bytes = 693ull * 1024 * 1024;
  c.seeds = {1, 2, 3};
  c.epoch_seconds = {epoch_s};
  c.total_seconds = 5400.0;
  return c;
}

}  // namespace

TEST_CASE("report cell formats") {
  CHECK(format_mean_std(0.9297, 0.0006) == "92.97 ± 0.06");
  CHECK(format_mib(693ull * 1024 * 1024) == "693");
  CHECK(format_mib(693ull * 1024 * 1024 + 400 * 1024) == "693");
  CHECK(format_ratio(26.2 / 10.0) == "2.62");
  CHECK(format_hours(5400) == "1.50");
}

TEST_CASE("relative times against a baseline cell") {
  std::vector<CellResult> cells{forced_cell("base-FE", TrainMode::FE, 0.9, 0.0, 10.0),
                                forced_cell("base-FiT", TrainMode::FiT, 0.9, 0.0, 26.2)};
  auto rel = cell_relative_times(cells, "base-FE");
  CHECK(rel.at("base-FE") == 1.0);
  CHECK(format_ratio(rel.at("base-FiT")) == "2.62");
}

TEST_CASE("default baseline is the largest FE cell") {
  auto small = forced_cell("tiny-FE", TrainMode::FE, 0.9, 0, 1);
  small.encoder_params = 10;
  auto big = forced_cell("base-FE", TrainMode::FE, 0.9, 0, 1);
  big.encoder_params = 1000;
  auto fit = forced_cell("base-FiT", TrainMode::FiT, 0.9, 0, 1);
  fit.encoder_params = 5000;
  CHECK(default_baseline({small, fit, big}) == "base-FE");
  auto failed = big;
  failed.failed = true;
  CHECK(default_baseline({small, failed}) == "tiny-FE");
}

TEST_CASE("report document layout") {
  BenchmarkResults r;
  r.provenance.name = "fixture";
  r.provenance.config_hash = "abc";
  r.provenance.repeats = 3;
  r.cells = {forced_cell("base-FE", TrainMode::FE, 0.9297, 0.0006, 10.0),
             forced_cell("base-FiT", TrainMode::FiT, 0.95, 0.001, 26.2)};
  auto bad = forced_cell("tiny-FE", TrainMode::FE, 0, 0, 0);
  bad.failed = true;
  bad.error = "boom";
  r.cells.push_back(bad);
  auto text = emit_report(r, "base-FE");
  CHECK(text.find("92.97 ± 0.06") != std::string::npos);
  CHECK(text.find("693") != std::string::npos);
  CHECK(text.find("2.62") != std::string::npos);
  CHECK(text.find("1.50") != std::string::npos);
  CHECK(text.find("config hash") != std::string::npos);
  CHECK(text.find("float32") != std::string::npos);
  CHECK(text.find("population standard deviation") != std::string::npos);
  CHECK(text.find("FAILED tiny-FE: boom") != std::string::npos);
  CHECK(text.find("Test accuracy") != std::string::npos);
  r.task_kind = TaskKind::multi_label;
  auto multi = emit_report(r, "base-FE");
  CHECK(multi.find("precision, recall and F1") != std::string::npos);
  CHECK_THROWS_AS(emit_report(r, "nope"), ReportError);
  auto tsv = emit_tsv(r, "base-FE");
  CHECK(std::count(tsv.begin(), tsv.end(), '\n') == 4);
}

TEST_CASE("results reparse to the rendered values") {
  auto dir = testutil::temp_dir("roundtrip_report");
  BenchmarkResults r;
  r.provenance.name = "rt";
  r.provenance.repeats = 3;
  r.cells = {forced_cell("a", TrainMode::FE, 0.91234567, 0.00123, 1.25),
             forced_cell("b", TrainMode::FiT, 0.5, 0.25, 3.5)};
  write_results(r, dir, "a");
  auto back = read_results(dir / "results.jsonl");
  REQUIRE(back.cells.size() == 2);
  CHECK(back.cells[0].accuracy.mean == r.cells[0].accuracy.mean);
  CHECK(back.cells[1].epoch_seconds == r.cells[1].epoch_seconds);
  CHECK(back.cells[0].seeds == r.cells[0].seeds);
  CHECK(emit_report(back, "a") == slurp(dir / "report.txt"));
}

TEST_CASE("config parsing") {
  auto c = parse_benchmark_config(kSmallConfig, "/data");
  CHECK(c.name == "small");
  CHECK(c.dataset == std::filesystem::path("/data/kw"));
  CHECK(c.repeats == 2);
  REQUIRE(c.cells.size() == 1);
  CHECK(c.cells[0].preset == "tiny");
  CHECK(c.cells[0].settings.kernel_sizes == std::vector<std::size_t>{2, 3});
  CHECK(c.cells[0].settings.epochs == 1u);
  CHECK(c.cells[0].settings.batch_size == 0);

  auto defaults = parse_benchmark_config("[benchmark]\ndataset = d\n[cell.x]\npreset = base\nmode = FiT\nbatch_size = 8\n");
  CHECK(defaults.repeats == 3);
  CHECK(defaults.cells[0].mode == TrainMode::FiT);
  CHECK(defaults.cells[0].settings.batch_size == 8);
  CHECK(defaults.cells[0].settings.learning_rate == 5e-5);

  CHECK_THROWS_AS(parse_benchmark_config("[benchmark]\ndataset = d\n"), ConfigError);
  CHECK_THROWS_AS(parse_benchmark_config("[benchmark]\ndataset = d\n[cell.x]\npreset = huge\nmode = FE\n"), ConfigError);
  CHECK_THROWS_AS(parse_benchmark_config("[benchmark]\ndataset = d\n[cell.x]\npreset = tiny\nmode = XX\n"), ConfigError);
  CHECK_THROWS_AS(parse_benchmark_config("[benchmark]\ndataset = d\nrepeats = two\n[cell.x]\npreset = tiny\nmode = FE\n"),
                  ConfigError);
  CHECK_THROWS_AS(parse_benchmark_config("[benchmark]\ndataset = d\ncolour = red\n[cell.x]\npreset = tiny\nmode = FE\n"),
                  ConfigError);
  CHECK_THROWS_AS(parse_benchmark_config("[benchmark\n"), ConfigError);
}

TEST_CASE("the shipped example config parses") {
  auto c = load_benchmark_config(std::filesystem::path(FEBENCH_SOURCE_DIR) / "configs" / "example.ini");
  CHECK(c.cells.size() == 4);
}

TEST_CASE("synthetic corpora") {
  SyntheticSpec s;
  s.classes = 2;
  s.train = 200;
  s.test = 100;
  s.seed = 9;
  auto a = make_synthetic(s);
  auto b = make_synthetic(s);
  CHECK(a == b);
  for (const auto* part : {&a.train, &a.test}) {
    for (const auto& ex : *part) {
      auto tokens = tokenize(ex.text);
      for (std::size_t c = 0; c < 2; ++c) {
        bool has = std::find(tokens.begin(), tokens.end(), marker_token(c)) != tokens.end();
        CHECK(has == ex.labels.contains(synthetic_label(c)));
      }
    }
  }
  auto m = s;
  m.label_model = TaskKind::multi_label;
  m.classes = 6;
  m.density = 3.0;
  CHECK(std::abs(label_density(make_synthetic(m)) - 3.0) <= 0.2);
  m.density = 2.4;
  CHECK(std::abs(label_density(make_synthetic(m)) - 2.4) <= 0.2);
  auto bad = s;
  bad.classes = 1;
  CHECK_THROWS_AS(make_synthetic(bad), SyntheticSpecError);
  bad = s;
  bad.train = 1;
  bad.test = 0;
  CHECK_THROWS_AS(make_synthetic(bad), SyntheticSpecError);
  bad = m;
  bad.density = 7;
  CHECK_THROWS_AS(make_synthetic(bad), SyntheticSpecError);
}

TEST_CASE("one-cell benchmark on the keyword corpus") {
  auto dir = testutil::temp_dir("one_cell");
  keyword_data(dir);
  write(dir / "c.ini", kSmallConfig);
  auto o = run_benchmark(dir / "c.ini");
  CHECK(o.exit_code == 0);
  CHECK(o.out_dir == dir / "out");
  auto text = slurp(dir / "out" / "report.txt");
  CHECK(text.find(" ± ") != std::string::npos);
  CHECK(o.results.cells.size() == 1);
  auto records = slurp(dir / "out" / "results.jsonl");
  CHECK(std::count(records.begin(), records.end(), '\n') == 1);
  CHECK(o.baseline == "tiny-FE");
}

TEST_CASE("records are identical when only the output directory changes") {
  auto dir = testutil::temp_dir("determinism");
  keyword_data(dir);
  write(dir / "c.ini", kSmallConfig);
  BenchmarkOverrides a, b;
  a.out = dir / "first";
  b.out = dir / "second";
  CHECK(run_benchmark(dir / "c.ini", a).exit_code == 0);
  CHECK(run_benchmark(dir / "c.ini", b).exit_code == 0);
  CHECK(slurp(dir / "first" / "results.jsonl") == slurp(dir / "second" / "results.jsonl"));
}

TEST_CASE("config errors exit 2 and run failures exit 1 with partial results") {
  auto dir = testutil::temp_dir("failures");
  keyword_data(dir);
  write(dir / "bad.ini", "[benchmark]\ndataset = kw\n");
  CHECK(run_benchmark(dir / "bad.ini").exit_code == 2);
  CHECK(run_benchmark(dir / "missing.ini").exit_code == 2);

  write(dir / "c.ini", std::string(kSmallConfig) + "\n[cell.broken]\npreset = tiny\nmode = FE\nlearning_rate = 1e38\nepochs = 3\n");
  auto o = run_benchmark(dir / "c.ini");
  CHECK(o.exit_code == 1);
  REQUIRE(o.results.cells.size() == 2);
  CHECK_FALSE(o.results.cells[0].failed);
  CHECK(o.results.cells[1].failed);
  auto records = slurp(dir / "out" / "results.jsonl");
  CHECK(records.find("\"status\":\"FAILED\"") != std::string::npos);
  CHECK(slurp(dir / "out" / "report.txt").find("FAILED") != std::string::npos);

  write(dir / "nodata.ini", "[benchmark]\ndataset = nowhere\nout = nodata\n[cell.x]\npreset = tiny\nmode = FE\nepochs = 1\n");
  auto nodata = run_benchmark(dir / "nodata.ini");
  CHECK(nodata.exit_code == 1);
  CHECK(slurp(dir / "nodata" / "results.jsonl").find("FAILED") != std::string::npos);
}

TEST_CASE("four-cell grid has a unit baseline and slower fine-tuning") {
  auto dir = testutil::temp_dir("grid");
  keyword_data(dir, 10);
  write(dir / "c.ini", R"([benchmark]
dataset = kw
repeats = 1
max_len = 16
[defaults]
epochs = 1
kernel_sizes = 2,3
filters = 8
[cell.tiny-FE]
preset = tiny
mode = FE
[cell.tiny-FiT]
preset = tiny
mode = FiT
[cell.L12-FE]
preset = L-12
mode = FE
[cell.L12-FiT]
preset = L-12
mode = FiT
)");
  BenchmarkOverrides o;
  o.out = dir / "out";
  auto r = run_benchmark(dir / "c.ini", o);
  REQUIRE(r.exit_code == 0);
  CHECK(r.baseline == "L12-FE");
  auto rel = cell_relative_times(r.results.cells, r.baseline);
  CHECK(rel.at("L12-FE") == 1.0);
  CHECK(rel.at("L12-FiT") > rel.at("L12-FE"));
  CHECK(rel.at("tiny-FiT") > rel.at("tiny-FE"));
  CHECK(r.results.cells.size() == 4);
  auto back = read_results(dir / "out");
  CHECK(back.cells.size() == 4);
}

TEST_CASE("command line") {
  auto dir = testutil::temp_dir("cli");
  keyword_data(dir);
  write(dir / "c.ini", kSmallConfig);
  write(dir / "s.synth", "[synthetic]\nclasses = 3\ntrain = 30\ntest = 9\nseed = 2\n");
  const std::string exe = FEBENCH_BENCH_EXE;
  auto sh = [](const std::string& cmd) {
    int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  };
  CHECK(sh(exe + " synth " + (dir / "s.synth").string() + " -o " + (dir / "gen").string() + " 2>/dev/null") == 0);
  CHECK(std::filesystem::exists(dir / "gen" / "train.jsonl"));
  CHECK(sh(exe + " run " + (dir / "c.ini").string() + " -q --repeats 1 --seed 3 --out " + (dir / "cli_out").string() +
           " >/dev/null") == 0);
  auto rec = slurp(dir / "cli_out" / "results.jsonl");
  CHECK(rec.find("\"seeds\":[3]") != std::string::npos);
  CHECK(sh(exe + " report " + (dir / "cli_out").string() + " --baseline tiny-FE > " + (dir / "r.txt").string()) == 0);
  CHECK(slurp(dir / "r.txt") == slurp(dir / "cli_out" / "report.txt"));
  CHECK(sh(exe + " report " + (dir / "cli_out").string() + " --baseline missing 2>/dev/null >/dev/null") == 1);
  CHECK(sh("FEBENCH_OUT=" + (dir / "env_out").string() + " " + exe + " run " + (dir / "c.ini").string() +
           " -q --repeats 1 >/dev/null") == 0);
  CHECK(std::filesystem::exists(dir / "env_out" / "results.jsonl"));
  write(dir / "bad.ini", "[benchmark\n");
  CHECK(sh(exe + " run " + (dir / "bad.ini").string() + " 2>/dev/null") == 2);
  CHECK(sh(exe + " 2>/dev/null >/dev/null") == 2);
}
