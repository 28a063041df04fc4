#include "cemb/model/config.hpp"

#include "cemb/errors.hpp"
#include "cemb/json_util.hpp"

namespace cemb::model {

const char* mask_mode_name(MaskMode mode) {
  return mode == MaskMode::kCausal ? "causal" : "bidirectional";
}

MaskMode parse_mask_mode(const std::string& name) {
  if (name == "causal") return MaskMode::kCausal;
  if (name == "bidirectional") return MaskMode::kBidirectional;
  throw ConfigError("unknown mask_mode '" + name + "'");
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("model.") + name + " must be positive");
  };
  positive(vocab_size, "vocab_size");
  positive(d_model, "d_model");
  positive(n_layers, "n_layers");
  positive(n_heads, "n_heads");
  positive(d_ff, "d_ff");
  positive(n_latents, "n_latents");
  positive(d_latent, "d_latent");
  positive(max_seq_len, "max_seq_len");
  positive(embedding_dim, "embedding_dim");
  if (d_model % n_heads != 0) throw ConfigError("model.n_heads must divide d_model");
  if (head_dim() % 2 != 0) throw ConfigError("model head width d_model/n_heads must be even for rotary positions");
  if (d_latent != d_model) throw ConfigError("model.d_latent must equal d_model");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"vocab_size", c.vocab_size},     {"d_model", c.d_model},
                     {"n_layers", c.n_layers},         {"n_heads", c.n_heads},
                     {"d_ff", c.d_ff},                 {"n_latents", c.n_latents},
                     {"d_latent", c.d_latent},         {"max_seq_len", c.max_seq_len},
                     {"mask_mode", mask_mode_name(c.mask_mode)},
                     {"embedding_dim", c.embedding_dim}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  const std::string what = "model";
  json_util::require_known_keys(j,
                                {"vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "n_latents",
                                 "d_latent", "max_seq_len", "mask_mode", "embedding_dim"},
                                what);
  json_util::read_optional(j, "vocab_size", c.vocab_size, what);
  json_util::read_optional(j, "d_model", c.d_model, what);
  json_util::read_optional(j, "n_layers", c.n_layers, what);
  json_util::read_optional(j, "n_heads", c.n_heads, what);
  json_util::read_optional(j, "d_ff", c.d_ff, what);
  json_util::read_optional(j, "n_latents", c.n_latents, what);
  json_util::read_optional(j, "d_latent", c.d_latent, what);
  json_util::read_optional(j, "max_seq_len", c.max_seq_len, what);
  json_util::read_optional(j, "embedding_dim", c.embedding_dim, what);
  std::string mode = mask_mode_name(c.mask_mode);
  json_util::read_optional(j, "mask_mode", mode, what);
  c.mask_mode = parse_mask_mode(mode);
}

}  // namespace cemb::model
