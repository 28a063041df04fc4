#ifndef CEMB_MODEL_CONFIG_HPP_
#define CEMB_MODEL_CONFIG_HPP_

#include <cstddef>
#include <string>

#include "json.hpp"

namespace cemb::model {

enum class MaskMode { kCausal, kBidirectional };

const char* mask_mode_name(MaskMode mode);
MaskMode parse_mask_mode(const std::string& name);

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t d_ff = 128;
  std::size_t n_latents = 32;
  std::size_t d_latent = 64;  // must equal d_model
  std::size_t max_seq_len = 512;
  MaskMode mask_mode = MaskMode::kBidirectional;
  std::size_t embedding_dim = 64;

  // Throws ConfigError on the first violated invariant.
  void validate() const;

  std::size_t head_dim() const { return d_model / n_heads; }

  bool operator==(const ModelConfig&) const = default;
};

// Fixed architectural constants that are not part of the config file.
inline constexpr double kNormEps = 1e-5;
inline constexpr double kRopeBase = 10000.0;
inline constexpr std::size_t kPoolingMlpMultiplier = 4;

// Field-for-field; unknown keys are rejected.
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace cemb::model

#endif  // CEMB_MODEL_CONFIG_HPP_
