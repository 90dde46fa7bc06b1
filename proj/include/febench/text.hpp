#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace febench {

inline constexpr std::size_t kPadId = 0;
inline constexpr std::size_t kUnkId = 1;
inline constexpr std::size_t kClsId = 2;
inline constexpr std::size_t kSepId = 3;
inline constexpr std::size_t kReservedTokens = 4;
inline constexpr std::size_t kDefaultMaxLen = 200;

/// Lowercases and splits on whitespace; every ASCII punctuation character is a
/// token of its own. Bytes >= 0x80 are kept inside words untouched.
std::vector<std::string> tokenize(std::string_view text);

class Vocabulary {
 public:
  /// Reserved tokens only.
  Vocabulary();
  /// Reserved tokens followed by `tokens` in order. Throws on duplicates.
  explicit Vocabulary(const std::vector<std::string>& tokens);

  std::size_t size() const { return tokens_.size(); }
  std::size_t id_of(std::string_view token) const;  // kUnkId when absent
  std::optional<std::size_t> find(std::string_view token) const;
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Keeps the most frequent tokens with count >= min_freq (ties broken
/// lexicographically) until the vocabulary holds max_size entries.
Vocabulary build_vocab(std::span<const std::string> corpus, std::size_t max_size, std::size_t min_freq = 1);

struct EncodedText {
  std::vector<std::size_t> ids;
  std::size_t valid_length = 0;
};

/// CLS tokens... SEP, truncated to max_len (CLS and SEP kept), right-padded with PAD.
EncodedText encode(std::string_view text, const Vocabulary& vocab, std::size_t max_len = kDefaultMaxLen);

/// Content tokens of an encoded sequence (reserved ids dropped, UNK kept as its token).
std::vector<std::string> decode(std::span<const std::size_t> ids, const Vocabulary& vocab);

enum class TaskKind { single_label, multi_label };
std::string_view to_string(TaskKind kind);
TaskKind parse_task_kind(std::string_view s);

struct LabeledExample {
  std::string text;
  std::set<std::string> labels;

  friend bool operator==(const LabeledExample&, const LabeledExample&) = default;
};

struct Dataset {
  std::string name;
  TaskKind task_kind = TaskKind::single_label;
  std::vector<std::string> label_space;
  std::vector<LabeledExample> train;
  std::vector<LabeledExample> test;

  std::size_t label_index(const std::string& label) const;
  /// Label indices of an example, ascending.
  std::vector<std::size_t> label_indices(const LabeledExample& example) const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

enum class DatasetFormat { jsonl, csv };
DatasetFormat parse_dataset_format(std::string_view s);
std::string_view extension(DatasetFormat format);

class DatasetError : public std::runtime_error {
 public:
  DatasetError(const std::string& what, std::size_t line = 0) : std::runtime_error(what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Reads a dataset. `path` is either a directory holding `train.<ext>` and
/// `test.<ext>`, or a single file whose records carry an optional `split`
/// field ("train" when absent). The label space is the sorted set of labels
/// seen; the task kind is multi-label iff some record has more than one label,
/// unless `task_kind` is given.
Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format,
                     std::optional<TaskKind> task_kind = std::nullopt);

/// Writes `train.<ext>` and `test.<ext>` under `dir` (created if needed).
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir, DatasetFormat format);

/// Validates the Dataset invariants; throws DatasetError.
void validate(const Dataset& dataset);

struct EmbeddingTable {
  Vocabulary vocab;
  std::size_t dim = 0;
  std::vector<float> matrix;  // vocab.size() x dim, row-major

  std::span<const float> row(std::size_t id) const { return {matrix.data() + id * dim, dim}; }
};

/// Loads a GloVe-style text file (`token v1 ... vd` per line). The vocabulary
/// is the reserved tokens followed by the file's tokens in file order. UNK, CLS
/// and SEP rows are drawn from normal(0, 0.02) seeded by `seed`; PAD is zero.
EmbeddingTable load_embeddings(const std::filesystem::path& path, std::uint64_t seed = 0);

}  // namespace febench
