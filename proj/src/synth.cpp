#include "febench/synth.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace febench {

void SyntheticSpec::validate() const {
  if (classes < 2) throw SyntheticSpecError("synthetic spec needs at least 2 classes");
  if (train + test < classes) throw SyntheticSpecError("synthetic spec needs at least as many documents as classes");
  if (train < classes) throw SyntheticSpecError("training split smaller than the class count");
  if (vocab < 1) throw SyntheticSpecError("filler vocabulary must not be empty");
  if (markers_per_doc < 1) throw SyntheticSpecError("markers_per_doc must be at least 1");
  if (label_model == TaskKind::multi_label) {
    if (!(density >= 1.0) || density > static_cast<double>(classes))
      throw SyntheticSpecError("density must lie in [1, classes]");
  }
}

std::string marker_token(std::size_t label) { return "kw" + std::to_string(label); }

std::string synthetic_label(std::size_t label) { return "c" + std::to_string(label); }

namespace {

std::string document(std::mt19937_64& rng, const SyntheticSpec& spec, const std::vector<std::size_t>& labels) {
  std::uniform_int_distribution<std::size_t> word(0, spec.vocab - 1);
  std::vector<std::string> tokens;
  tokens.reserve(spec.length + labels.size() * spec.markers_per_doc);
  for (std::size_t i = 0; i < spec.length; ++i) tokens.push_back("w" + std::to_string(word(rng)));
  for (auto l : labels) {
    for (std::size_t m = 0; m < spec.markers_per_doc; ++m) {
      std::uniform_int_distribution<std::size_t> pos(0, tokens.size());
      tokens.insert(tokens.begin() + static_cast<std::ptrdiff_t>(pos(rng)), marker_token(l));
    }
  }
  std::string text;
  for (const auto& t : tokens) {
    if (!text.empty()) text += ' ';
    text += t;
  }
  return text;
}

std::vector<std::size_t> multi_labels(std::mt19937_64& rng, const SyntheticSpec& spec) {
  const auto lo = static_cast<std::size_t>(std::floor(spec.density));
  const double frac = spec.density - static_cast<double>(lo);
  std::bernoulli_distribution up(frac);
  auto k = std::min(spec.classes, lo + (up(rng) ? 1 : 0));
  std::vector<std::size_t> all(spec.classes);
  std::iota(all.begin(), all.end(), 0);
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(k);
  std::sort(all.begin(), all.end());
  return all;
}

}  // namespace

Dataset make_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32), 0x5917u};
  std::mt19937_64 rng(seq);

  Dataset ds;
  ds.name = spec.name;
  ds.task_kind = spec.label_model;
  for (std::size_t c = 0; c < spec.classes; ++c) ds.label_space.push_back(synthetic_label(c));
  std::sort(ds.label_space.begin(), ds.label_space.end());

  auto make_split = [&](std::size_t n) {
    std::vector<std::vector<std::size_t>> labels(n);
    if (spec.label_model == TaskKind::single_label) {
      for (std::size_t i = 0; i < n; ++i) labels[i] = {i % spec.classes};
      std::shuffle(labels.begin(), labels.end(), rng);
    } else {
      for (auto& l : labels) l = multi_labels(rng, spec);
    }
    std::vector<LabeledExample> out;
    out.reserve(n);
    for (const auto& l : labels) {
      LabeledExample ex;
      ex.text = document(rng, spec, l);
      for (auto c : l) ex.labels.insert(synthetic_label(c));
      out.push_back(std::move(ex));
    }
    return out;
  };
  ds.train = make_split(spec.train);
  ds.test = make_split(spec.test);
  // label_space lists labels seen; multi-label draws may skip one on tiny splits
  std::set<std::string> seen;
  for (const auto* part : {&ds.train, &ds.test})
    for (const auto& ex : *part) seen.insert(ex.labels.begin(), ex.labels.end());
  ds.label_space.assign(seen.begin(), seen.end());
  validate(ds);
  return ds;
}

SyntheticSpec parse_synthetic_spec(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw SyntheticSpecError("line " + std::to_string(e.line()) + ": " + e.message());
  }
  auto section = tree.get_child_optional("synthetic");
  if (!section) throw SyntheticSpecError("missing [synthetic] section");
  SyntheticSpec spec;
  try {
    for (const auto& [key, node] : *section) {
      const auto v = node.data();
      if (key == "name")
        spec.name = v;
      else if (key == "label_model")
        spec.label_model = parse_task_kind(v);
      else if (key == "classes")
        spec.classes = std::stoull(v);
      else if (key == "train")
        spec.train = std::stoull(v);
      else if (key == "test")
        spec.test = std::stoull(v);
      else if (key == "vocab")
        spec.vocab = std::stoull(v);
      else if (key == "length")
        spec.length = std::stoull(v);
      else if (key == "markers_per_doc")
        spec.markers_per_doc = std::stoull(v);
      else if (key == "density")
        spec.density = std::stod(v);
      else if (key == "seed")
        spec.seed = std::stoull(v);
      else
        throw SyntheticSpecError("unknown key 'synthetic." + key + "'");
    }
  } catch (const SyntheticSpecError&) {
    throw;
  } catch (const std::exception& e) {
    throw SyntheticSpecError(std::string("bad value in synthetic spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

SyntheticSpec load_synthetic_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SyntheticSpecError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_synthetic_spec(ss.str());
}

}  // namespace febench
