#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "febench/params.hpp"
#include "febench/tape.hpp"
#include "febench/text.hpp"

namespace febench {

enum class EncoderKind { static_embedding, transformer };

/// Shape of the language-model side of the pipeline.
///
/// `frozen` selects feature extraction (encoder tensors never require a
/// gradient) versus fine-tuning.
struct EncoderConfig {
  std::string name;
  EncoderKind kind = EncoderKind::transformer;
  std::size_t hidden = 128;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t feed_forward = 0;  // 0 means 4 * hidden
  std::size_t vocab_size = 0;
  std::size_t max_positions = 512;
  bool frozen = true;

  std::size_t ff_size() const { return feed_forward ? feed_forward : 4 * hidden; }

  /// Throws std::invalid_argument when the config cannot encode `max_len` tokens.
  void validate(std::size_t max_len = kDefaultMaxLen) const;
};

/// Named presets: "tiny" (L=2 H=128 A=2), "L-2" (L=2 H=768 A=12),
/// "L-12" (L=12 H=128 A=2), "base" (L=12 H=768 A=12), "glove" (static, H=300).
/// The long checkpoint names (e.g. "bert_uncased_L-12_H-128_A-2") are accepted too.
EncoderConfig encoder_preset(std::string_view name, std::size_t vocab_size);
std::vector<std::string> encoder_preset_names();

/// Exact scalar parameter count implied by `config`.
std::size_t param_count(const EncoderConfig& config);

/// Deterministic for (config, seed): matrices from normal(0, 0.02), layer-norm
/// scales 1, offsets and biases 0; the static table's PAD row is zero.
/// Tensors require a gradient iff the config is not frozen.
ParameterSet<float> init_encoder_weights(const EncoderConfig& config, std::uint64_t seed);

/// Static-kind weights holding a loaded embedding table.
ParameterSet<float> encoder_weights_from_embeddings(const EncoderConfig& config, const EmbeddingTable& table);

/// Checks every required name is present with the exact shape and nothing else is.
/// Entries under the "head." prefix are ignored. Throws std::invalid_argument.
void validate_encoder_weights(const EncoderConfig& config, const ParameterSet<float>& weights);
void validate_encoder_weights(const EncoderConfig& config, const ParameterSet<double>& weights);

/// Hidden sequence [ids.size() x hidden] for one encoded text.
///
/// Transformer blocks are attention -> residual -> layer_norm, then
/// feed-forward(gelu) -> residual -> layer_norm; attention only looks at the
/// first `valid_length` positions.
template <typename T>
Tensor<T> encoder_forward(Tape<T>& tape, const EncoderConfig& config, const ParameterSet<T>& weights,
                          std::span<const std::size_t> ids, std::size_t valid_length);

extern template Tensor<float> encoder_forward(Tape<float>&, const EncoderConfig&, const ParameterSet<float>&,
                                              std::span<const std::size_t>, std::size_t);
extern template Tensor<double> encoder_forward(Tape<double>&, const EncoderConfig&, const ParameterSet<double>&,
                                               std::span<const std::size_t>, std::size_t);

}  // namespace febench
