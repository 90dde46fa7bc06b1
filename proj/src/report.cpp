#include "febench/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "febench/profiling.hpp"
#include "json.hpp"

namespace febench {

using nlohmann::json;

double CellResult::mean_epoch_seconds() const {
  if (epoch_seconds.empty()) return 0.0;
  return std::accumulate(epoch_seconds.begin(), epoch_seconds.end(), 0.0) / static_cast<double>(epoch_seconds.size());
}

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  std::string s = buf;
  if (s == "-0.00" || s == "-0") s = s.substr(1);
  return s;
}

json mean_std_json(const MeanStd& m) { return json{{"mean", m.mean}, {"std", m.std}}; }

MeanStd mean_std_from(const json& j) { return {j.at("mean").get<double>(), j.at("std").get<double>()}; }

std::string pad(const std::string& s, std::size_t width) {
  // width counts code points so "±" lines up
  std::size_t cps = 0;
  for (unsigned char c : s)
    if ((c & 0xC0) != 0x80) ++cps;
  return cps >= width ? s : s + std::string(width - cps, ' ');
}

struct Table {
  std::vector<std::vector<std::string>> rows;

  std::string render() const {
    std::vector<std::size_t> widths;
    for (const auto& r : rows) {
      widths.resize(std::max(widths.size(), r.size()), 0);
      for (std::size_t i = 0; i < r.size(); ++i) {
        std::size_t cps = 0;
        for (unsigned char c : r[i])
          if ((c & 0xC0) != 0x80) ++cps;
        widths[i] = std::max(widths[i], cps);
      }
    }
    std::string out;
    for (const auto& r : rows) {
      std::string line;
      for (std::size_t i = 0; i < r.size(); ++i) line += i + 1 < r.size() ? pad(r[i], widths[i] + 2) : r[i];
      out += line + "\n";
    }
    return out;
  }
};

const CellResult& require_cell(const BenchmarkResults& results, const std::string& baseline) {
  for (const auto& c : results.cells)
    if (c.cell == baseline) return c;
  throw ReportError("baseline cell '" + baseline + "' is not among the results");
}

}  // namespace

std::string format_mean_std(double mean, double std) { return fixed(mean * 100.0, 2) + " ± " + fixed(std * 100.0, 2); }

std::string format_mib(std::uint64_t bytes) {
  return std::to_string(static_cast<std::uint64_t>(std::llround(static_cast<double>(bytes) / (1024.0 * 1024.0))));
}

std::string format_ratio(double ratio) { return fixed(ratio, 2); }

std::string format_hours(double seconds) { return fixed(seconds / 3600.0, 2); }

std::string default_baseline(const std::vector<CellResult>& cells) {
  if (cells.empty()) throw ReportError("no cells");
  const CellResult* best = nullptr;
  for (const auto& c : cells) {
    if (c.failed || c.mode != TrainMode::FE) continue;
    if (!best || c.encoder_params > best->encoder_params) best = &c;
  }
  return best ? best->cell : cells.front().cell;
}

std::map<std::string, double> cell_relative_times(const std::vector<CellResult>& cells, const std::string& baseline) {
  std::map<std::string, double> times;
  for (const auto& c : cells)
    if (!c.failed && !c.epoch_seconds.empty()) times[c.cell] = c.mean_epoch_seconds();
  return relative_times(times, baseline);
}

std::string emit_report(const BenchmarkResults& results, const std::string& baseline) {
  require_cell(results, baseline);
  const auto& p = results.provenance;
  std::map<std::string, double> rel;
  std::string rel_note;
  try {
    rel = cell_relative_times(results.cells, baseline);
  } catch (const std::invalid_argument&) {
    rel_note = "relative times unavailable: baseline cell has no timing\n";
  }

  std::ostringstream out;
  out << p.name << "\n\n";
  out << "provenance\n";
  out << "  config hash   " << p.config_hash << "\n";
  out << "  dataset       " << p.dataset << "\n";
  out << "  master seed   " << p.master_seed << "\n";
  out << "  encoder seed  " << p.encoder_seed << "\n";
  out << "  repeats       " << p.repeats << "\n";
  out << "  precision     " << p.precision << " throughout; accuracies may depend on it\n";
  for (const auto& c : results.cells) {
    out << "  seeds " << c.cell << " ";
    for (std::size_t i = 0; i < c.seeds.size(); ++i) out << (i ? "," : "") << c.seeds[i];
    out << "\n";
  }
  out << "\n";

  Table metrics;
  if (results.task_kind == TaskKind::single_label) {
    out << "Test accuracy (%), mean ± std over " << p.repeats << " runs\n";
    metrics.rows.push_back({"cell", "preset", "mode", "accuracy"});
    for (const auto& c : results.cells)
      metrics.rows.push_back({c.cell, c.preset, std::string(to_string(c.mode)),
                              c.failed ? "FAILED" : format_mean_std(c.accuracy.mean, c.accuracy.std)});
  } else {
    out << "Micro precision, recall and F1 (%), mean ± std over " << p.repeats << " runs\n";
    metrics.rows.push_back({"cell", "preset", "mode", "precision", "recall", "f1"});
    for (const auto& c : results.cells) {
      if (c.failed) {
        metrics.rows.push_back({c.cell, c.preset, std::string(to_string(c.mode)), "FAILED", "FAILED", "FAILED"});
      } else {
        metrics.rows.push_back({c.cell, c.preset, std::string(to_string(c.mode)),
                                format_mean_std(c.precision.mean, c.precision.std),
                                format_mean_std(c.recall.mean, c.recall.std), format_mean_std(c.f1.mean, c.f1.std)});
      }
    }
  }
  out << metrics.render() << "\n";

  out << "Peak tracked memory (MiB)\n";
  Table memory;
  memory.rows.push_back({"cell", "MiB", "bytes"});
  for (const auto& c : results.cells)
    memory.rows.push_back({c.cell, c.failed ? "FAILED" : format_mib(c.peak_bytes),
                           c.failed ? "-" : std::to_string(c.peak_bytes)});
  out << memory.render() << "\n";

  out << "Epoch time relative to " << baseline << "\n" << rel_note;
  Table time;
  time.rows.push_back({"cell", "s/epoch", "relative"});
  for (const auto& c : results.cells) {
    if (c.failed) {
      time.rows.push_back({c.cell, "FAILED", "FAILED"});
      continue;
    }
    auto it = rel.find(c.cell);
    time.rows.push_back({c.cell, fixed(c.mean_epoch_seconds(), 3), it == rel.end() ? "-" : format_ratio(it->second)});
  }
  out << time.render() << "\n";

  out << "Total time per run (hours)\n";
  Table total;
  total.rows.push_back({"cell", "hours", "seconds"});
  for (const auto& c : results.cells)
    total.rows.push_back({c.cell, c.failed ? "FAILED" : format_hours(c.total_seconds),
                          c.failed ? "-" : fixed(c.total_seconds, 3)});
  out << total.render() << "\n";

  for (const auto& c : results.cells)
    if (c.failed) out << "FAILED " << c.cell << ": " << c.error << "\n";
  out << "std is the population standard deviation over runs.\n";
  out << "Total time includes setup and per-epoch test-set evaluation; epoch time covers training only.\n";
  out << "Memory is the peak of tracked tensor bytes (parameters, gradients, optimizer state and activations), "
         "not device or process memory.\n";
  return out.str();
}

std::string emit_tsv(const BenchmarkResults& results, const std::string& baseline) {
  require_cell(results, baseline);
  std::map<std::string, double> rel;
  try {
    rel = cell_relative_times(results.cells, baseline);
  } catch (const std::invalid_argument&) {
  }
  std::ostringstream out;
  out << "cell\tpreset\tmode\tstatus\taccuracy_mean\taccuracy_std\tprecision_mean\tprecision_std\trecall_mean\t"
         "recall_std\tf1_mean\tf1_std\tpeak_mib\tepoch_seconds\trelative_time\ttotal_hours\n";
  for (const auto& c : results.cells) {
    out << c.cell << '\t' << c.preset << '\t' << to_string(c.mode) << '\t' << (c.failed ? "FAILED" : "ok");
    if (c.failed) {
      for (int i = 0; i < 12; ++i) out << '\t';
      out << '\n';
      continue;
    }
    for (const auto* m : {&c.accuracy, &c.precision, &c.recall, &c.f1})
      out << '\t' << fixed(m->mean * 100, 2) << '\t' << fixed(m->std * 100, 2);
    auto it = rel.find(c.cell);
    out << '\t' << format_mib(c.peak_bytes) << '\t' << fixed(c.mean_epoch_seconds(), 3) << '\t'
        << (it == rel.end() ? "" : format_ratio(it->second)) << '\t' << format_hours(c.total_seconds) << '\n';
  }
  return out.str();
}

std::string result_record(const CellResult& c, TaskKind task_kind) {
  json j;
  j["cell"] = c.cell;
  j["preset"] = c.preset;
  j["mode"] = std::string(to_string(c.mode));
  j["status"] = c.failed ? "FAILED" : "ok";
  j["task"] = std::string(to_string(task_kind));
  if (c.failed) j["error"] = c.error;
  j["epochs"] = c.epochs;
  j["encoder_params"] = c.encoder_params;
  j["head_params"] = c.head_params;
  j["metrics"] = json{{"accuracy", mean_std_json(c.accuracy)},
                      {"precision", mean_std_json(c.precision)},
                      {"recall", mean_std_json(c.recall)},
                      {"f1", mean_std_json(c.f1)}};
  j["peak_bytes"] = c.peak_bytes;
  j["seeds"] = c.seeds;
  return j.dump();
}

std::string timing_record(const CellResult& c) {
  json j;
  j["cell"] = c.cell;
  j["epoch_seconds"] = c.epoch_seconds;
  j["total_seconds"] = c.total_seconds;
  return j.dump();
}

void write_results(const BenchmarkResults& results, const std::filesystem::path& dir, const std::string& baseline) {
  std::filesystem::create_directories(dir);
  auto write = [&](const char* name, const std::string& body) {
    std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
    if (!out) throw ReportError("cannot write " + (dir / name).string());
    out << body;
  };
  std::string records, timings;
  for (const auto& c : results.cells) {
    records += result_record(c, results.task_kind) + "\n";
    timings += timing_record(c) + "\n";
  }
  write("results.jsonl", records);
  write("timings.jsonl", timings);
  const auto& p = results.provenance;
  json prov{{"name", p.name},           {"config_hash", p.config_hash}, {"dataset", p.dataset},
            {"master_seed", p.master_seed}, {"encoder_seed", p.encoder_seed}, {"repeats", p.repeats},
            {"precision", p.precision},  {"baseline", baseline}};
  write("provenance.json", prov.dump(2) + "\n");
  write("report.tsv", emit_tsv(results, baseline));
  write("report.txt", emit_report(results, baseline));
}

BenchmarkResults read_results(const std::filesystem::path& path) {
  auto file = std::filesystem::is_directory(path) ? path / "results.jsonl" : path;
  std::ifstream in(file);
  if (!in) throw ReportError("cannot read " + file.string());
  BenchmarkResults out;
  std::string line;
  std::size_t n = 0;
  std::map<std::string, std::size_t> index;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = json::parse(line);
      CellResult c;
      c.cell = j.at("cell").get<std::string>();
      c.preset = j.at("preset").get<std::string>();
      c.mode = parse_train_mode(j.at("mode").get<std::string>());
      c.failed = j.at("status").get<std::string>() == "FAILED";
      if (j.contains("error")) c.error = j["error"].get<std::string>();
      out.task_kind = parse_task_kind(j.at("task").get<std::string>());
      c.epochs = j.at("epochs").get<std::size_t>();
      c.encoder_params = j.at("encoder_params").get<std::size_t>();
      c.head_params = j.at("head_params").get<std::size_t>();
      const auto& m = j.at("metrics");
      c.accuracy = mean_std_from(m.at("accuracy"));
      c.precision = mean_std_from(m.at("precision"));
      c.recall = mean_std_from(m.at("recall"));
      c.f1 = mean_std_from(m.at("f1"));
      c.peak_bytes = j.at("peak_bytes").get<std::uint64_t>();
      c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
      index[c.cell] = out.cells.size();
      out.cells.push_back(std::move(c));
    } catch (const std::exception& e) {
      throw ReportError(file.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  if (out.cells.empty()) throw ReportError(file.string() + ": no records");

  auto dir = file.parent_path();
  if (std::ifstream t(dir / "timings.jsonl"); t) {
    while (std::getline(t, line)) {
      if (line.empty()) continue;
      auto j = json::parse(line);
      auto it = index.find(j.at("cell").get<std::string>());
      if (it == index.end()) continue;
      auto& c = out.cells[it->second];
      c.epoch_seconds = j.at("epoch_seconds").get<std::vector<double>>();
      c.total_seconds = j.at("total_seconds").get<double>();
    }
  }
  if (std::ifstream p(dir / "provenance.json"); p) {
    auto j = json::parse(p);
    auto& pr = out.provenance;
    pr.name = j.value("name", "");
    pr.config_hash = j.value("config_hash", "");
    pr.dataset = j.value("dataset", "");
    pr.master_seed = j.value("master_seed", std::uint64_t{0});
    pr.encoder_seed = j.value("encoder_seed", std::uint64_t{0});
    pr.repeats = j.value("repeats", std::size_t{0});
    pr.precision = j.value("precision", "float32");
  }
  if (out.provenance.repeats == 0) out.provenance.repeats = out.cells.front().seeds.size();
  return out;
}

}  // namespace febench
