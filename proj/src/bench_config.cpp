#include "febench/bench_config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "febench/encoder.hpp"

namespace febench {

namespace pt = boost::property_tree;

namespace {

std::string trim(std::string s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string strip_comment(const std::string& v) {
  auto pos = v.find(" #");
  if (pos == std::string::npos) pos = v.find("\t#");
  return trim(pos == std::string::npos ? v : v.substr(0, pos));
}

std::uint64_t to_u64(const std::string& key, const std::string& raw) {
  auto v = strip_comment(raw);
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size() || v.empty())
    throw ConfigError("'" + key + "': expected a non-negative integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& key, const std::string& raw) {
  auto v = strip_comment(raw);
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("'" + key + "': expected a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& raw) {
  auto v = strip_comment(raw);
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "true" || v == "yes" || v == "1" || v == "on") return true;
  if (v == "false" || v == "no" || v == "0" || v == "off") return false;
  throw ConfigError("'" + key + "': expected true or false, got '" + v + "'");
}

std::vector<std::size_t> to_list(const std::string& key, const std::string& raw) {
  std::vector<std::size_t> out;
  std::stringstream ss(strip_comment(raw));
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_u64(key, trim(item)));
  if (out.empty()) throw ConfigError("'" + key + "': empty list");
  return out;
}

void apply_settings(const pt::ptree& section, const std::string& prefix, CellSettings& s,
                    const std::set<std::string>& extra) {
  for (const auto& [key, node] : section) {
    const auto& raw = node.data();
    const auto full = prefix + "." + key;
    if (key == "epochs")
      s.epochs = to_u64(full, raw);
    else if (key == "batch_size")
      s.batch_size = to_u64(full, raw);
    else if (key == "learning_rate")
      s.learning_rate = to_double(full, raw);
    else if (key == "threshold")
      s.threshold = to_double(full, raw);
    else if (key == "kernel_sizes")
      s.kernel_sizes = to_list(full, raw);
    else if (key == "filters")
      s.filters = to_u64(full, raw);
    else if (key == "cache_frozen_features")
      s.cache_frozen_features = to_bool(full, raw);
    else if (!extra.contains(key))
      throw ConfigError("unknown key '" + full + "'");
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& raw) {
  std::filesystem::path p(strip_comment(raw));
  return p.is_absolute() || base.empty() ? p : base / p;
}

}  // namespace

void BenchmarkConfig::validate() const {
  if (cells.empty()) throw ConfigError("no cells configured");
  if (dataset.empty()) throw ConfigError("benchmark.dataset is required");
  if (repeats < 1) throw ConfigError("repeats must be at least 1");
  if (parallel < 1) throw ConfigError("parallel must be at least 1");
  if (max_len < 1) throw ConfigError("max_len must be at least 1");
  const auto presets = encoder_preset_names();
  std::set<std::string> ids;
  for (const auto& c : cells) {
    if (!ids.insert(c.id).second) throw ConfigError("duplicate cell '" + c.id + "'");
    try {
      (void)encoder_preset(c.preset, 10);
    } catch (const std::exception&) {
      throw ConfigError("cell '" + c.id + "': unknown preset '" + c.preset + "'");
    }
    if (c.settings.filters < 1) throw ConfigError("cell '" + c.id + "': filters must be at least 1");
    if (c.settings.learning_rate <= 0) throw ConfigError("cell '" + c.id + "': learning_rate must be positive");
    if (c.settings.threshold <= 0 || c.settings.threshold >= 1)
      throw ConfigError("cell '" + c.id + "': threshold must lie in (0, 1)");
    if (c.settings.epochs && *c.settings.epochs < 1) throw ConfigError("cell '" + c.id + "': epochs must be at least 1");
    for (auto k : c.settings.kernel_sizes)
      if (k < 1 || k > max_len) throw ConfigError("cell '" + c.id + "': kernel size out of range");
  }
  if (baseline && !find_cell(*baseline)) throw ConfigError("baseline '" + *baseline + "' is not a configured cell");
}

const BenchmarkCell* BenchmarkConfig::find_cell(const std::string& id) const {
  for (const auto& c : cells)
    if (c.id == id) return &c;
  return nullptr;
}

namespace {

BenchmarkConfig parse_impl(const std::string& text, const std::filesystem::path& base_dir) {
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("line " + std::to_string(e.line()) + ": " + e.message());
  }

  BenchmarkConfig config;
  CellSettings defaults;
  bool have_benchmark = false;
  for (const auto& [name, section] : tree) {
    if (section.empty() && !section.data().empty())
      throw ConfigError("key '" + name + "' outside of a section");
    if (name == "benchmark") {
      have_benchmark = true;
      for (const auto& [key, node] : section) {
        const auto& raw = node.data();
        const auto full = "benchmark." + key;
        if (key == "name")
          config.name = strip_comment(raw);
        else if (key == "dataset")
          config.dataset = resolve(base_dir, raw);
        else if (key == "format")
          config.format = parse_dataset_format(strip_comment(raw));
        else if (key == "task")
          config.task_kind = parse_task_kind(strip_comment(raw));
        else if (key == "embeddings")
          config.embeddings = resolve(base_dir, raw);
        else if (key == "repeats")
          config.repeats = to_u64(full, raw);
        else if (key == "seed")
          config.seed = to_u64(full, raw);
        else if (key == "encoder_seed")
          config.encoder_seed = to_u64(full, raw);
        else if (key == "parallel")
          config.parallel = to_u64(full, raw);
        else if (key == "max_len")
          config.max_len = to_u64(full, raw);
        else if (key == "vocab_size")
          config.vocab_size = to_u64(full, raw);
        else if (key == "vocab_min_freq")
          config.vocab_min_freq = to_u64(full, raw);
        else if (key == "out")
          config.out = resolve(base_dir, raw);
        else if (key == "baseline")
          config.baseline = strip_comment(raw);
        else
          throw ConfigError("unknown key '" + full + "'");
      }
    } else if (name == "defaults") {
      apply_settings(section, "defaults", defaults, {});
    } else if (name.rfind("cell.", 0) != 0) {
      throw ConfigError("unknown section [" + name + "]");
    }
  }
  if (!have_benchmark) throw ConfigError("missing [benchmark] section");

  for (const auto& [name, section] : tree) {
    if (name.rfind("cell.", 0) != 0) continue;
    BenchmarkCell cell;
    cell.id = name.substr(5);
    if (cell.id.empty()) throw ConfigError("empty cell id in [" + name + "]");
    cell.settings = defaults;
    auto preset = section.get_optional<std::string>("preset");
    auto mode = section.get_optional<std::string>("mode");
    if (!preset || !mode) throw ConfigError("[" + name + "] needs both preset and mode");
    cell.preset = strip_comment(*preset);
    try {
      cell.mode = parse_train_mode(strip_comment(*mode));
    } catch (const std::exception& e) {
      throw ConfigError("[" + name + "]: " + e.what());
    }
    apply_settings(section, name, cell.settings, {"preset", "mode"});
    config.cells.push_back(std::move(cell));
  }
  config.validate();
  return config;
}

}  // namespace

BenchmarkConfig parse_benchmark_config(const std::string& text, const std::filesystem::path& base_dir) {
  try {
    return parse_impl(text, base_dir);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

BenchmarkConfig load_benchmark_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_benchmark_config(ss.str(), path.parent_path());
}

std::string config_hash(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace febench
