#ifndef CEMB_MODEL_ENCODER_HPP_
#define CEMB_MODEL_ENCODER_HPP_

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cemb/model/config.hpp"
#include "cemb/numerics/tensor.hpp"

namespace cemb::model {

using numerics::Tensor;

// Right-padded token ids, batch x length, row-major. pad[i] != 0 marks padding.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<std::int32_t> ids;
  std::vector<std::uint8_t> pad;

  std::vector<std::uint8_t> keep_mask() const;
  // Rows [begin, end) as a new batch with the same length.
  TokenBatch rows(std::size_t begin, std::size_t end) const;
};

template <typename T>
struct TransformerBlock {
  Tensor<T> attn_norm;  // [d]
  Tensor<T> wq, wk, wv, wo;  // [d, d]
  Tensor<T> ffn_norm;  // [d]
  Tensor<T> w_gate, w_up;  // [d, d_ff]
  Tensor<T> w_down;  // [d_ff, d]
};

// Token states query a trainable latent array (keys and values come from the
// latents), an MLP with a residual refines the result, and a masked mean plus
// output projection yields one unit vector per sequence.
template <typename T>
struct LatentPoolingHead {
  std::size_t n_heads = 1;
  Tensor<T> latents;  // [n_latents, d]
  Tensor<T> wq, wk, wv, wo;  // [d, d]
  Tensor<T> mlp_in;  // [d, 4d]
  Tensor<T> mlp_out;  // [4d, d]
  Tensor<T> proj;  // [d, embedding_dim]
};

template <typename T>
struct EncoderModel {
  ModelConfig config;
  Tensor<T> token_embedding;  // [vocab, d]
  std::vector<TransformerBlock<T>> blocks;
  Tensor<T> final_norm;  // [d]
  LatentPoolingHead<T> pooling_head;

  // Stable order: embedding, blocks.0 .. blocks.N-1, final norm, pooling head.
  // Pointers stay valid while the model is alive and not resized.
  std::vector<std::pair<std::string, Tensor<T>*>> parameters();
  std::vector<std::pair<std::string, const Tensor<T>*>> parameters() const;
  Tensor<T>& parameter(const std::string& name);
  void set_requires_grad(bool value);
  void zero_grad();
};

// Seeded initialization. Linear weights ~ N(0, 1/fan_in), residual output
// projections further scaled by 1/sqrt(2 n_layers), norm gains at one.
template <typename T>
EncoderModel<T> init_model(const ModelConfig& config, std::uint64_t seed);

// Element type conversion (float <-> double) with identical structure.
template <typename To, typename From>
EncoderModel<To> cast_model(const EncoderModel<From>& model);

// Hidden states [B, L, d] after `depth` blocks (all blocks by default) and the
// final norm. Throws VocabularyError for ids outside the vocabulary and
// DegenerateInputError for a row made entirely of padding.
template <typename T>
Tensor<T> forward_encode(const EncoderModel<T>& model, const TokenBatch& tokens,
                         std::optional<std::size_t> depth = std::nullopt);

// Cross-attention stage of the pooling head: [B*L, d] token rows in, [B*L, d] out.
template <typename T>
Tensor<T> latent_cross_attention(const LatentPoolingHead<T>& head, const Tensor<T>& hidden);

template <typename T>
Tensor<T> latent_pool(const LatentPoolingHead<T>& head, const Tensor<T>& hidden,
                      const TokenBatch& tokens);

// forward_encode then latent_pool: [B, embedding_dim] unit rows.
template <typename T>
Tensor<T> embed(const EncoderModel<T>& model, const TokenBatch& tokens);

// Drops the deepest floor(fraction * n_layers) blocks; everything else is
// deep-copied unchanged and the original final norm is kept.
template <typename T>
EncoderModel<T> prune_layers(const EncoderModel<T>& model, double fraction);

template <typename T>
std::size_t count_parameters(const EncoderModel<T>& model);

// Parameter count predicted from the config alone.
std::size_t expected_parameter_count(const ModelConfig& config);
std::size_t block_parameter_count(const ModelConfig& config);

}  // namespace cemb::model

#endif  // CEMB_MODEL_ENCODER_HPP_
