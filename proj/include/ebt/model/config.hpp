#pragma once

#include <cstddef>
#include <string>

namespace ebt {

/// Shape of the encoder-only estimator. Depths count hidden layers, so a
/// depth of zero is a single affine map.
struct ModelConfig {
  std::size_t p = 1;              ///< token (observation) dimension
  std::size_t p_emb = 64;         ///< embedding dimension
  std::size_t n_heads = 8;
  std::size_t p_k = 0;            ///< per-head key/query width; 0 -> p_emb / n_heads
  std::size_t p_v = 0;            ///< per-head value width; 0 -> p_emb / n_heads
  std::size_t emb_depth = 2;
  std::size_t emb_width = 64;
  std::size_t oh_depth = 24;
  std::size_t oh_width = 40;
  std::size_t n_blocks = 1;       ///< encoder repetitions
  double r_clip = 10.0;           ///< radical-clipping radius

  std::size_t key_dim() const { return p_k ? p_k : p_emb / n_heads; }
  std::size_t value_dim() const { return p_v ? p_v : p_emb / n_heads; }

  /// Throws ConfigError on zero dimensions, r_clip <= 0, or when the
  /// concatenated heads do not match p_emb.
  void validate() const;

  /// `key=value` lines; round-trips through from_text.
  std::string to_text() const;
  static ModelConfig from_text(const std::string& text);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

}  // namespace ebt
