#include "febench/encoder.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

namespace febench {

namespace {

struct NamedShape {
  std::string name;
  Shape shape;
  enum class Init { normal, ones, zeros } init;
};

std::string layer_prefix(std::size_t i) { return "encoder.layer." + std::to_string(i) + "."; }

// Every tensor a config needs, in canonical order.
std::vector<NamedShape> required_tensors(const EncoderConfig& c) {
  using Init = NamedShape::Init;
  const auto h = c.hidden;
  if (c.kind == EncoderKind::static_embedding) return {{"encoder.embeddings.token", {c.vocab_size, h}, Init::normal}};
  const auto f = c.ff_size();
  std::vector<NamedShape> out = {
      {"encoder.embeddings.token", {c.vocab_size, h}, Init::normal},
      {"encoder.embeddings.position", {c.max_positions, h}, Init::normal},
      {"encoder.embeddings.norm.scale", {h}, Init::ones},
      {"encoder.embeddings.norm.offset", {h}, Init::zeros},
  };
  for (std::size_t l = 0; l < c.layers; ++l) {
    const auto p = layer_prefix(l);
    for (const char* proj : {"query", "key", "value", "output"}) {
      out.push_back({p + "attention." + proj + ".weight", {h, h}, Init::normal});
      out.push_back({p + "attention." + proj + ".bias", {h}, Init::zeros});
    }
    out.push_back({p + "attention.norm.scale", {h}, Init::ones});
    out.push_back({p + "attention.norm.offset", {h}, Init::zeros});
    out.push_back({p + "ffn.intermediate.weight", {h, f}, Init::normal});
    out.push_back({p + "ffn.intermediate.bias", {f}, Init::zeros});
    out.push_back({p + "ffn.output.weight", {f, h}, Init::normal});
    out.push_back({p + "ffn.output.bias", {h}, Init::zeros});
    out.push_back({p + "ffn.norm.scale", {h}, Init::ones});
    out.push_back({p + "ffn.norm.offset", {h}, Init::zeros});
  }
  return out;
}

template <typename T>
void validate_impl(const EncoderConfig& config, const ParameterSet<T>& weights) {
  const auto required = required_tensors(config);
  std::size_t own = 0;
  for (const auto& [name, t] : weights.entries())
    if (!name.starts_with("head.")) ++own;
  for (const auto& r : required) {
    if (!weights.contains(r.name)) throw std::invalid_argument("encoder weights lack '" + r.name + "'");
    const auto& t = weights.at(r.name);
    if (t.shape() != r.shape) {
      throw std::invalid_argument("encoder weight '" + r.name + "' has shape " + shape_str(t.shape()) + ", config needs " +
                                  shape_str(r.shape));
    }
  }
  if (own != required.size()) {
    for (const auto& [name, t] : weights.entries()) {
      if (name.starts_with("head.")) continue;
      bool known = std::any_of(required.begin(), required.end(), [&](const auto& r) { return r.name == name; });
      if (!known) throw std::invalid_argument("unexpected encoder weight '" + name + "'");
    }
  }
}

}  // namespace

void EncoderConfig::validate(std::size_t max_len) const {
  if (hidden == 0) throw std::invalid_argument("encoder " + name + ": hidden size must be positive");
  if (vocab_size <= kReservedTokens) throw std::invalid_argument("encoder " + name + ": vocabulary too small");
  if (kind == EncoderKind::static_embedding) return;
  if (heads == 0 || hidden % heads != 0) {
    throw std::invalid_argument("encoder " + name + ": hidden " + std::to_string(hidden) + " not divisible by " +
                                std::to_string(heads) + " heads");
  }
  if (max_positions < max_len) {
    throw std::invalid_argument("encoder " + name + ": " + std::to_string(max_positions) +
                                " positions cannot hold sequences of " + std::to_string(max_len));
  }
}

std::vector<std::string> encoder_preset_names() { return {"tiny", "L-2", "L-12", "base", "glove"}; }

EncoderConfig encoder_preset(std::string_view name, std::size_t vocab_size) {
  EncoderConfig c;
  c.vocab_size = vocab_size;
  if (name == "tiny" || name == "bert-tiny" || name == "bert_uncased_L-2_H-128_A-2") {
    c.name = "tiny";
    c.layers = 2, c.hidden = 128, c.heads = 2;
  } else if (name == "L-2" || name == "bert_uncased_L-2_H-768_A-12") {
    c.name = "L-2";
    c.layers = 2, c.hidden = 768, c.heads = 12;
  } else if (name == "L-12" || name == "bert_uncased_L-12_H-128_A-2") {
    c.name = "L-12";
    c.layers = 12, c.hidden = 128, c.heads = 2;
  } else if (name == "base" || name == "bert-base") {
    c.name = "base";
    c.layers = 12, c.hidden = 768, c.heads = 12;
  } else if (name == "glove" || name == "static") {
    c.name = "glove";
    c.kind = EncoderKind::static_embedding;
    c.hidden = 300, c.layers = 0, c.heads = 1;
  } else {
    throw std::invalid_argument("unknown encoder preset '" + std::string(name) + "'");
  }
  return c;
}

std::size_t param_count(const EncoderConfig& c) {
  const auto h = c.hidden;
  if (c.kind == EncoderKind::static_embedding) return c.vocab_size * h;
  const auto f = c.ff_size();
  const auto embeddings = (c.vocab_size + c.max_positions) * h + 2 * h;
  const auto attention = 4 * (h * h + h) + 2 * h;
  const auto ffn = h * f + f + f * h + h + 2 * h;
  return embeddings + c.layers * (attention + ffn);
}

ParameterSet<float> init_encoder_weights(const EncoderConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 0.02f);
  ParameterSet<float> out;
  for (const auto& r : required_tensors(config)) {
    std::vector<float> data(numel(r.shape), r.init == NamedShape::Init::ones ? 1.0f : 0.0f);
    if (r.init == NamedShape::Init::normal)
      for (auto& v : data) v = normal(rng);
    if (config.kind == EncoderKind::static_embedding && r.name == "encoder.embeddings.token")
      std::fill_n(data.begin(), config.hidden, 0.0f);  // PAD row
    out.add(r.name, Tensor<float>::from(r.shape, std::move(data), !config.frozen));
  }
  return out;
}

ParameterSet<float> encoder_weights_from_embeddings(const EncoderConfig& config, const EmbeddingTable& table) {
  if (config.kind != EncoderKind::static_embedding) throw std::invalid_argument("embedding table needs a static encoder");
  if (table.vocab.size() != config.vocab_size || table.dim != config.hidden) {
    throw std::invalid_argument("embedding table " + std::to_string(table.vocab.size()) + "x" + std::to_string(table.dim) +
                                " does not match encoder config");
  }
  ParameterSet<float> out;
  out.add("encoder.embeddings.token", Tensor<float>::from({table.vocab.size(), table.dim}, table.matrix, !config.frozen));
  return out;
}

void validate_encoder_weights(const EncoderConfig& config, const ParameterSet<float>& weights) {
  validate_impl(config, weights);
}
void validate_encoder_weights(const EncoderConfig& config, const ParameterSet<double>& weights) {
  validate_impl(config, weights);
}

template <typename T>
Tensor<T> encoder_forward(Tape<T>& tape, const EncoderConfig& config, const ParameterSet<T>& w,
                          std::span<const std::size_t> ids, std::size_t valid_length) {
  if (ids.empty()) throw std::invalid_argument("encoder_forward: empty id sequence");
  if (valid_length == 0 || valid_length > ids.size()) {
    throw std::invalid_argument("encoder_forward: valid_length " + std::to_string(valid_length) + " outside [1, " +
                                std::to_string(ids.size()) + "]");
  }
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= config.vocab_size) {
      throw std::out_of_range("encoder_forward: token id " + std::to_string(ids[i]) + " at position " + std::to_string(i) +
                              " outside vocabulary of " + std::to_string(config.vocab_size));
    }
  }
  std::vector<std::size_t> id_vec(ids.begin(), ids.end());
  if (config.kind == EncoderKind::static_embedding) return tape.embedding_lookup(w.at("encoder.embeddings.token"), id_vec);

  if (ids.size() > config.max_positions) {
    throw std::invalid_argument("encoder_forward: " + std::to_string(ids.size()) + " tokens exceed " +
                                std::to_string(config.max_positions) + " positions");
  }
  std::vector<std::size_t> positions(ids.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;

  auto x = tape.add(tape.embedding_lookup(w.at("encoder.embeddings.token"), std::move(id_vec)),
                    tape.embedding_lookup(w.at("encoder.embeddings.position"), std::move(positions)));
  x = tape.layer_norm(x, w.at("encoder.embeddings.norm.scale"), w.at("encoder.embeddings.norm.offset"));

  for (std::size_t l = 0; l < config.layers; ++l) {
    const auto p = layer_prefix(l);
    auto proj = [&](const Tensor<T>& in, const std::string& name) {
      return tape.linear(in, w.at(p + name + ".weight"), w.at(p + name + ".bias"));
    };
    auto ctx = tape.attention(proj(x, "attention.query"), proj(x, "attention.key"), proj(x, "attention.value"),
                              config.heads, valid_length);
    x = tape.layer_norm(tape.add(x, proj(ctx, "attention.output")), w.at(p + "attention.norm.scale"),
                        w.at(p + "attention.norm.offset"));
    auto ff = proj(tape.gelu(proj(x, "ffn.intermediate")), "ffn.output");
    x = tape.layer_norm(tape.add(x, ff), w.at(p + "ffn.norm.scale"), w.at(p + "ffn.norm.offset"));
  }
  return x;
}

template Tensor<float> encoder_forward(Tape<float>&, const EncoderConfig&, const ParameterSet<float>&,
                                       std::span<const std::size_t>, std::size_t);
template Tensor<double> encoder_forward(Tape<double>&, const EncoderConfig&, const ParameterSet<double>&,
                                        std::span<const std::size_t>, std::size_t);

}  // namespace febench
