#include "febench/text.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "json.hpp"

namespace febench {

namespace {

const std::vector<std::string> kReserved = {"[PAD]", "[UNK]", "[CLS]", "[SEP]"};

bool is_space(unsigned char c) { return c < 0x80 && std::isspace(c); }
bool is_punct(unsigned char c) { return c < 0x80 && std::ispunct(c); }

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) out.push_back(std::move(word));
    word.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_space(c)) {
      flush();
    } else if (is_punct(c)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      word.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return out;
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(const std::vector<std::string>& tokens) {
  tokens_.reserve(kReservedTokens + tokens.size());
  for (const auto& r : kReserved) tokens_.push_back(r);
  tokens_.insert(tokens_.end(), tokens.begin(), tokens.end());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], i).second) {
      throw std::invalid_argument("duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }
}

std::optional<std::size_t> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t Vocabulary::id_of(std::string_view token) const { return find(token).value_or(kUnkId); }

Vocabulary build_vocab(std::span<const std::string> corpus, std::size_t max_size, std::size_t min_freq) {
  if (corpus.empty()) throw std::invalid_argument("build_vocab: empty corpus");
  if (max_size <= kReservedTokens) throw std::invalid_argument("build_vocab: max_size must exceed the 4 reserved tokens");
  if (min_freq < 1) throw std::invalid_argument("build_vocab: min_freq must be at least 1");

  std::map<std::string, std::size_t> counts;
  for (const auto& text : corpus)
    for (auto& tok : tokenize(text)) ++counts[tok];

  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [tok, n] : counts)
    if (n >= min_freq) ranked.emplace_back(tok, n);
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (ranked.size() > max_size - kReservedTokens) ranked.resize(max_size - kReservedTokens);

  std::vector<std::string> tokens;
  tokens.reserve(ranked.size());
  for (auto& [tok, n] : ranked) tokens.push_back(tok);
  return Vocabulary(tokens);
}

EncodedText encode(std::string_view text, const Vocabulary& vocab, std::size_t max_len) {
  if (max_len < 3) throw std::invalid_argument("encode: max_len must be at least 3");
  const auto tokens = tokenize(text);
  const auto content = std::min(tokens.size(), max_len - 2);
  EncodedText out;
  out.ids.assign(max_len, kPadId);
  out.ids[0] = kClsId;
  for (std::size_t i = 0; i < content; ++i) out.ids[i + 1] = vocab.id_of(tokens[i]);
  out.ids[content + 1] = kSepId;
  out.valid_length = content + 2;
  return out;
}

std::vector<std::string> decode(std::span<const std::size_t> ids, const Vocabulary& vocab) {
  std::vector<std::string> out;
  for (auto id : ids) {
    if (id == kPadId || id == kClsId || id == kSepId) continue;
    out.push_back(vocab.token(id));
  }
  return out;
}

std::string_view to_string(TaskKind kind) {
  return kind == TaskKind::single_label ? "single_label" : "multi_label";
}

TaskKind parse_task_kind(std::string_view s) {
  if (s == "single_label" || s == "single") return TaskKind::single_label;
  if (s == "multi_label" || s == "multi") return TaskKind::multi_label;
  throw std::invalid_argument("unknown task kind '" + std::string(s) + "'");
}

std::size_t Dataset::label_index(const std::string& label) const {
  auto it = std::lower_bound(label_space.begin(), label_space.end(), label);
  if (it == label_space.end() || *it != label) {
    // label_space is normally sorted; fall back to a scan for hand-built datasets.
    it = std::find(label_space.begin(), label_space.end(), label);
    if (it == label_space.end()) throw DatasetError("label '" + label + "' not in label space of " + name);
  }
  return static_cast<std::size_t>(it - label_space.begin());
}

std::vector<std::size_t> Dataset::label_indices(const LabeledExample& example) const {
  std::vector<std::size_t> out;
  for (const auto& l : example.labels) out.push_back(label_index(l));
  std::sort(out.begin(), out.end());
  return out;
}

DatasetFormat parse_dataset_format(std::string_view s) {
  if (s == "jsonl") return DatasetFormat::jsonl;
  if (s == "csv") return DatasetFormat::csv;
  throw std::invalid_argument("unknown dataset format '" + std::string(s) + "'");
}

std::string_view extension(DatasetFormat format) { return format == DatasetFormat::jsonl ? ".jsonl" : ".csv"; }

namespace {

struct Record {
  LabeledExample example;
  std::string split;
};

std::set<std::string> split_labels(std::string_view s) {
  std::set<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto end = s.find('|', start);
    if (end == std::string_view::npos) end = s.size();
    auto part = s.substr(start, end - start);
    if (!part.empty()) out.emplace(part);
    start = end + 1;
  }
  return out;
}

// One CSV line into fields; double quotes escape, "" is a literal quote.
std::vector<std::string> parse_csv_line(const std::string& line, std::size_t lineno) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  bool field_started_quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      if (!cur.empty() || field_started_quoted) throw DatasetError("line " + std::to_string(lineno) + ": stray quote", lineno);
      quoted = true;
      field_started_quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
      field_started_quoted = false;
    } else if (c == '\r' && i + 1 == line.size()) {
      break;
    } else {
      cur.push_back(c);
    }
  }
  if (quoted) throw DatasetError("line " + std::to_string(lineno) + ": unterminated quote", lineno);
  fields.push_back(std::move(cur));
  return fields;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  return out + "\"";
}

std::vector<Record> read_records(const std::filesystem::path& path, DatasetFormat format) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open dataset file " + path.string());
  std::vector<Record> records;
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> header;
  std::size_t text_col = 0, labels_col = 0;
  std::optional<std::size_t> split_col;
  const auto where = [&] { return path.filename().string() + " line " + std::to_string(lineno); };

  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Record rec;
    if (format == DatasetFormat::jsonl) {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error& e) {
        throw DatasetError(where() + ": malformed JSON (" + e.what() + ")", lineno);
      }
      if (!j.is_object() || !j.contains("text") || !j["text"].is_string()) {
        throw DatasetError(where() + ": record needs a string field 'text'", lineno);
      }
      if (!j.contains("labels") || !j["labels"].is_array()) {
        throw DatasetError(where() + ": record needs an array field 'labels'", lineno);
      }
      rec.example.text = j["text"].get<std::string>();
      for (const auto& l : j["labels"]) {
        if (!l.is_string()) throw DatasetError(where() + ": labels must be strings", lineno);
        rec.example.labels.insert(l.get<std::string>());
      }
      if (j.contains("split")) {
        if (!j["split"].is_string()) throw DatasetError(where() + ": split must be a string", lineno);
        rec.split = j["split"].get<std::string>();
      }
    } else {
      auto fields = parse_csv_line(line, lineno);
      if (header.empty()) {
        header = std::move(fields);
        auto col = [&](const char* name) -> std::optional<std::size_t> {
          auto it = std::find(header.begin(), header.end(), name);
          if (it == header.end()) return std::nullopt;
          return static_cast<std::size_t>(it - header.begin());
        };
        auto t = col("text");
        auto l = col("labels");
        if (!t || !l) throw DatasetError(where() + ": CSV header needs 'text' and 'labels' columns", lineno);
        text_col = *t;
        labels_col = *l;
        split_col = col("split");
        continue;
      }
      if (fields.size() != header.size()) {
        throw DatasetError(where() + ": expected " + std::to_string(header.size()) + " fields, got " +
                               std::to_string(fields.size()),
                           lineno);
      }
      rec.example.text = fields[text_col];
      rec.example.labels = split_labels(fields[labels_col]);
      if (split_col) rec.split = fields[*split_col];
    }
    if (rec.example.labels.empty()) throw DatasetError(where() + ": record has no labels", lineno);
    if (!rec.split.empty() && rec.split != "train" && rec.split != "test") {
      throw DatasetError(where() + ": split must be 'train' or 'test'", lineno);
    }
    records.push_back(std::move(rec));
  }
  return records;
}

void finalize(Dataset& ds, std::optional<TaskKind> task_kind) {
  std::set<std::string> labels;
  bool multi = false;
  for (const auto* part : {&ds.train, &ds.test}) {
    for (const auto& ex : *part) {
      labels.insert(ex.labels.begin(), ex.labels.end());
      multi = multi || ex.labels.size() > 1;
    }
  }
  ds.label_space.assign(labels.begin(), labels.end());
  ds.task_kind = task_kind.value_or(multi ? TaskKind::multi_label : TaskKind::single_label);
  validate(ds);
}

}  // namespace

void validate(const Dataset& ds) {
  if (ds.train.empty() && ds.test.empty()) throw DatasetError("dataset " + ds.name + " has no examples");
  std::set<std::string> space(ds.label_space.begin(), ds.label_space.end());
  if (space.size() != ds.label_space.size()) throw DatasetError("duplicate labels in label space");
  for (const auto* part : {&ds.train, &ds.test}) {
    for (const auto& ex : *part) {
      if (ex.labels.empty()) throw DatasetError("example without labels");
      if (ds.task_kind == TaskKind::single_label && ex.labels.size() != 1) {
        throw DatasetError("single-label dataset " + ds.name + " has an example with " +
                           std::to_string(ex.labels.size()) + " labels");
      }
      for (const auto& l : ex.labels)
        if (!space.contains(l)) throw DatasetError("label '" + l + "' outside label space");
    }
  }
}

Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format, std::optional<TaskKind> task_kind) {
  Dataset ds;
  if (std::filesystem::is_directory(path)) {
    ds.name = path.filename().string();
    if (ds.name.empty()) ds.name = path.parent_path().filename().string();
    const auto ext = std::string(extension(format));
    for (auto& rec : read_records(path / ("train" + ext), format)) ds.train.push_back(std::move(rec.example));
    for (auto& rec : read_records(path / ("test" + ext), format)) ds.test.push_back(std::move(rec.example));
  } else {
    ds.name = path.stem().string();
    for (auto& rec : read_records(path, format)) {
      (rec.split == "test" ? ds.test : ds.train).push_back(std::move(rec.example));
    }
  }
  finalize(ds, task_kind);
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir, DatasetFormat format) {
  std::filesystem::create_directories(dir);
  const auto ext = std::string(extension(format));
  for (const auto& [split, part] : {std::pair{"train", &ds.train}, std::pair{"test", &ds.test}}) {
    std::ofstream out(dir / (std::string(split) + ext), std::ios::binary);
    if (!out) throw DatasetError("cannot write dataset file under " + dir.string());
    if (format == DatasetFormat::csv) out << "text,labels\n";
    for (const auto& ex : *part) {
      if (format == DatasetFormat::jsonl) {
        nlohmann::json j;
        j["text"] = ex.text;
        j["labels"] = std::vector<std::string>(ex.labels.begin(), ex.labels.end());
        out << j.dump() << '\n';
      } else {
        std::string joined;
        for (const auto& l : ex.labels) {
          if (!joined.empty()) joined += '|';
          joined += l;
        }
        out << csv_field(ex.text) << ',' << csv_field(joined) << '\n';
      }
    }
  }
}

EmbeddingTable load_embeddings(const std::filesystem::path& path, std::uint64_t seed) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open embedding file " + path.string());
  std::vector<std::string> tokens;
  std::vector<float> values;
  std::size_t dim = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(' ') == std::string::npos) continue;
    std::istringstream ss(line);
    std::string tok;
    ss >> tok;
    std::vector<float> row;
    std::string field;
    while (ss >> field) {
      float v = 0.0f;
      auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
      if (ec != std::errc() || p != field.data() + field.size()) {
        throw DatasetError(path.filename().string() + " line " + std::to_string(lineno) + ": bad number '" + field + "'",
                           lineno);
      }
      row.push_back(v);
    }
    if (row.empty()) throw DatasetError(path.filename().string() + " line " + std::to_string(lineno) + ": no vector", lineno);
    if (dim == 0) dim = row.size();
    if (row.size() != dim) {
      throw DatasetError(path.filename().string() + " line " + std::to_string(lineno) + ": dimension " +
                             std::to_string(row.size()) + " differs from " + std::to_string(dim),
                         lineno);
    }
    tokens.push_back(tok);
    values.insert(values.end(), row.begin(), row.end());
  }
  if (tokens.empty()) throw DatasetError("embedding file " + path.string() + " is empty");

  EmbeddingTable table{Vocabulary(tokens), dim, {}};
  table.matrix.assign(kReservedTokens * dim, 0.0f);
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 0.02f);
  for (std::size_t id = kUnkId; id < kReservedTokens; ++id)
    for (std::size_t j = 0; j < dim; ++j) table.matrix[id * dim + j] = normal(rng);
  table.matrix.insert(table.matrix.end(), values.begin(), values.end());
  return table;
}

}  // namespace febench
