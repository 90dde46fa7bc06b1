#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "febench/text.hpp"

namespace febench {

class SyntheticSpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Keyword corpus: each document is filler words drawn uniformly from a
/// vocabulary of `vocab` words plus the marker token of every label it carries,
/// inserted `markers_per_doc` times each at random positions.
struct SyntheticSpec {
  std::string name = "synthetic";
  TaskKind label_model = TaskKind::single_label;
  std::size_t classes = 2;
  std::size_t train = 200;
  std::size_t test = 100;
  std::size_t vocab = 500;
  std::size_t length = 30;  // filler tokens per document
  std::size_t markers_per_doc = 1;
  double density = 2.0;  // mean labels per document, multi-label only
  std::uint64_t seed = 0;

  /// Throws SyntheticSpecError.
  void validate() const;
};

std::string marker_token(std::size_t label);
std::string synthetic_label(std::size_t label);

Dataset make_synthetic(const SyntheticSpec& spec);

/// INI text with a [synthetic] section holding the SyntheticSpec fields
/// (label_model is "single_label" or "multi_label").
SyntheticSpec parse_synthetic_spec(const std::string& text);
SyntheticSpec load_synthetic_spec(const std::filesystem::path& path);

}  // namespace febench
