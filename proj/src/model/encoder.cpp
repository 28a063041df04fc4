#include "cemb/model/encoder.hpp"

#include <cmath>
#include <random>

#include "cemb/errors.hpp"
#include "cemb/numerics/ops.hpp"

namespace cemb::model {

namespace nx = cemb::numerics;

std::vector<std::uint8_t> TokenBatch::keep_mask() const {
  std::vector<std::uint8_t> keep(pad.size());
  for (std::size_t i = 0; i < pad.size(); ++i) keep[i] = pad[i] ? 0 : 1;
  return keep;
}

TokenBatch TokenBatch::rows(std::size_t begin, std::size_t end) const {
  if (begin > end || end > batch) throw DimensionError("TokenBatch::rows: range out of bounds");
  TokenBatch out;
  out.batch = end - begin;
  out.length = length;
  out.ids.assign(ids.begin() + begin * length, ids.begin() + end * length);
  out.pad.assign(pad.begin() + begin * length, pad.begin() + end * length);
  return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> EncoderModel<T>::parameters() {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  out.emplace_back("token_embedding", &token_embedding);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string p = "blocks." + std::to_string(i) + ".";
    auto& b = blocks[i];
    out.emplace_back(p + "attn_norm", &b.attn_norm);
    out.emplace_back(p + "wq", &b.wq);
    out.emplace_back(p + "wk", &b.wk);
    out.emplace_back(p + "wv", &b.wv);
    out.emplace_back(p + "wo", &b.wo);
    out.emplace_back(p + "ffn_norm", &b.ffn_norm);
    out.emplace_back(p + "w_gate", &b.w_gate);
    out.emplace_back(p + "w_up", &b.w_up);
    out.emplace_back(p + "w_down", &b.w_down);
  }
  out.emplace_back("final_norm", &final_norm);
  auto& h = pooling_head;
  out.emplace_back("pool.latents", &h.latents);
  out.emplace_back("pool.wq", &h.wq);
  out.emplace_back("pool.wk", &h.wk);
  out.emplace_back("pool.wv", &h.wv);
  out.emplace_back("pool.wo", &h.wo);
  out.emplace_back("pool.mlp_in", &h.mlp_in);
  out.emplace_back("pool.mlp_out", &h.mlp_out);
  out.emplace_back("pool.proj", &h.proj);
  return out;
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> EncoderModel<T>::parameters() const {
  auto mut = const_cast<EncoderModel<T>*>(this)->parameters();
  std::vector<std::pair<std::string, const Tensor<T>*>> out;
  out.reserve(mut.size());
  for (auto& [name, t] : mut) out.emplace_back(std::move(name), t);
  return out;
}

template <typename T>
Tensor<T>& EncoderModel<T>::parameter(const std::string& name) {
  for (auto& [n, t] : parameters()) {
    if (n == name) return *t;
  }
  throw ArgumentError("no parameter named '" + name + "'");
}

template <typename T>
void EncoderModel<T>::set_requires_grad(bool value) {
  for (auto& [n, t] : parameters()) t->set_requires_grad(value);
}

template <typename T>
void EncoderModel<T>::zero_grad() {
  for (auto& [n, t] : parameters()) t->zero_grad();
}

std::size_t block_parameter_count(const ModelConfig& c) {
  return 2 * c.d_model + 4 * c.d_model * c.d_model + 3 * c.d_model * c.d_ff;
}

std::size_t expected_parameter_count(const ModelConfig& c) {
  const std::size_t d = c.d_model;
  const std::size_t head = c.n_latents * d + 4 * d * d +
                           2 * d * (kPoolingMlpMultiplier * d) + d * c.embedding_dim;
  return c.vocab_size * d + c.n_layers * block_parameter_count(c) + d + head;
}

template <typename T>
EncoderModel<T> init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  auto normal = [&rng](nx::Shape shape, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<T> v(nx::shape_numel(shape));
    for (T& x : v) x = T(dist(rng));
    return Tensor<T>::from(std::move(shape), std::move(v));
  };
  auto linear = [&normal](std::size_t in, std::size_t out, double extra = 1.0) {
    return normal({in, out}, extra / std::sqrt(double(in)));
  };
  auto ones = [](std::size_t n) { return Tensor<T>::full({n}, T(1)); };

  const std::size_t d = config.d_model;
  const double residual = 1.0 / std::sqrt(2.0 * double(config.n_layers));
  EncoderModel<T> m;
  m.config = config;
  m.token_embedding = normal({config.vocab_size, d}, 1.0);
  for (std::size_t i = 0; i < config.n_layers; ++i) {
    TransformerBlock<T> b;
    b.attn_norm = ones(d);
    b.wq = linear(d, d);
    b.wk = linear(d, d);
    b.wv = linear(d, d);
    b.wo = linear(d, d, residual);
    b.ffn_norm = ones(d);
    b.w_gate = linear(d, config.d_ff);
    b.w_up = linear(d, config.d_ff);
    b.w_down = linear(config.d_ff, d, residual);
    m.blocks.push_back(std::move(b));
  }
  m.final_norm = ones(d);
  auto& h = m.pooling_head;
  h.n_heads = config.n_heads;
  h.latents = normal({config.n_latents, d}, 1.0);
  h.wq = linear(d, d);
  h.wk = linear(d, d);
  h.wv = linear(d, d);
  h.wo = linear(d, d);
  h.mlp_in = linear(d, kPoolingMlpMultiplier * d);
  h.mlp_out = linear(kPoolingMlpMultiplier * d, d);
  h.proj = linear(d, config.embedding_dim);
  return m;
}

template <typename To, typename From>
EncoderModel<To> cast_model(const EncoderModel<From>& model) {
  EncoderModel<To> out;
  out.config = model.config;
  out.blocks.resize(model.blocks.size());
  out.pooling_head.n_heads = model.pooling_head.n_heads;
  auto src = model.parameters();
  auto dst = out.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const Tensor<From>& s = *src[i].second;
    std::vector<To> v(s.data().begin(), s.data().end());
    *dst[i].second = Tensor<To>::from(s.shape(), std::move(v), s.requires_grad());
  }
  return out;
}

namespace {

template <typename T>
void validate_tokens(const ModelConfig& config, const TokenBatch& tokens) {
  if (tokens.batch == 0 || tokens.length == 0) {
    throw DegenerateInputError("empty token batch");
  }
  if (tokens.ids.size() != tokens.batch * tokens.length ||
      tokens.pad.size() != tokens.ids.size()) {
    throw DimensionError("token batch arrays do not match " + std::to_string(tokens.batch) + "x" +
                         std::to_string(tokens.length));
  }
  if (tokens.length > config.max_seq_len) {
    throw DimensionError("sequence length " + std::to_string(tokens.length) + " exceeds max_seq_len " +
                         std::to_string(config.max_seq_len));
  }
  for (std::size_t i = 0; i < tokens.ids.size(); ++i) {
    const auto id = tokens.ids[i];
    if (id < 0 || std::size_t(id) >= config.vocab_size) {
      throw VocabularyError("token id " + std::to_string(id) + " at position " + std::to_string(i) +
                            " outside vocabulary of " + std::to_string(config.vocab_size));
    }
  }
  for (std::size_t b = 0; b < tokens.batch; ++b) {
    bool any = false;
    for (std::size_t i = 0; i < tokens.length; ++i) any = any || !tokens.pad[b * tokens.length + i];
    if (!any) throw DegenerateInputError("row " + std::to_string(b) + " is entirely padding");
  }
}

}  // namespace

template <typename T>
Tensor<T> forward_encode(const EncoderModel<T>& model, const TokenBatch& tokens,
                         std::optional<std::size_t> depth) {
  const ModelConfig& c = model.config;
  validate_tokens<T>(c, tokens);
  const std::size_t n_blocks = depth.value_or(model.blocks.size());
  if (n_blocks > model.blocks.size()) {
    throw ArgumentError("forward depth " + std::to_string(n_blocks) + " exceeds " +
                        std::to_string(model.blocks.size()) + " blocks");
  }
  const std::size_t rows = tokens.batch * tokens.length;
  std::vector<double> positions(rows);
  for (std::size_t r = 0; r < rows; ++r) positions[r] = double(r % tokens.length);
  const auto pattern = nx::AttentionPattern::self(tokens.batch, tokens.length, tokens.pad,
                                                  c.mask_mode == MaskMode::kCausal);
  const T eps = T(kNormEps);
  const std::size_t hd = c.head_dim();

  Tensor<T> x = nx::gather_rows(model.token_embedding, tokens.ids);
  for (std::size_t i = 0; i < n_blocks; ++i) {
    const auto& b = model.blocks[i];
    Tensor<T> h = nx::rms_norm(x, b.attn_norm, eps);
    Tensor<T> q = nx::apply_rope(nx::matmul(h, b.wq), positions, hd, kRopeBase);
    Tensor<T> k = nx::apply_rope(nx::matmul(h, b.wk), positions, hd, kRopeBase);
    Tensor<T> v = nx::matmul(h, b.wv);
    x = nx::add(x, nx::matmul(nx::attention(q, k, v, pattern, c.n_heads), b.wo));
    Tensor<T> h2 = nx::rms_norm(x, b.ffn_norm, eps);
    Tensor<T> gated = nx::mul(nx::silu(nx::matmul(h2, b.w_gate)), nx::matmul(h2, b.w_up));
    x = nx::add(x, nx::matmul(gated, b.w_down));
  }
  x = nx::rms_norm(x, model.final_norm, eps);
  return nx::reshape(x, {tokens.batch, tokens.length, c.d_model});
}

template <typename T>
Tensor<T> latent_cross_attention(const LatentPoolingHead<T>& head, const Tensor<T>& hidden) {
  const std::size_t d = head.latents.cols();
  if (hidden.cols() != d) {
    throw DimensionError("latent pooling: hidden width " + std::to_string(hidden.cols()) +
                         " != " + std::to_string(d));
  }
  Tensor<T> flat = nx::reshape(hidden, {hidden.rows(), d});
  Tensor<T> q = nx::matmul(flat, head.wq);
  Tensor<T> k = nx::matmul(head.latents, head.wk);
  Tensor<T> v = nx::matmul(head.latents, head.wv);
  auto pattern = nx::AttentionPattern::dense(flat.rows(), head.latents.rows());
  return nx::matmul(nx::attention(q, k, v, pattern, head.n_heads), head.wo);
}

template <typename T>
Tensor<T> latent_pool(const LatentPoolingHead<T>& head, const Tensor<T>& hidden,
                      const TokenBatch& tokens) {
  if (hidden.rows() != tokens.batch * tokens.length) {
    throw DimensionError("latent pooling: hidden rows do not match the token batch");
  }
  Tensor<T> attended = latent_cross_attention(head, hidden);
  Tensor<T> refined =
      nx::add(attended, nx::matmul(nx::gelu(nx::matmul(attended, head.mlp_in)), head.mlp_out));
  Tensor<T> pooled = nx::masked_mean(refined, tokens.batch, tokens.keep_mask());
  return nx::l2_normalize_rows(nx::matmul(pooled, head.proj));
}

template <typename T>
Tensor<T> embed(const EncoderModel<T>& model, const TokenBatch& tokens) {
  return latent_pool(model.pooling_head, forward_encode(model, tokens), tokens);
}

template <typename T>
EncoderModel<T> prune_layers(const EncoderModel<T>& model, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw ContractError("prune fraction must lie in (0, 1), got " + std::to_string(fraction));
  }
  const std::size_t n = model.blocks.size();
  // The small epsilon keeps exact products such as 0.25 * 36 from rounding down.
  const auto k = static_cast<std::size_t>(std::floor(fraction * double(n) + 1e-9));
  if (k == 0) {
    throw ContractError("prune fraction " + std::to_string(fraction) + " removes no block of " +
                        std::to_string(n));
  }
  if (k >= n) throw ContractError("pruning would remove every block");
  EncoderModel<T> out = cast_model<T>(model);
  out.blocks.resize(n - k);
  out.config.n_layers = n - k;
  return out;
}

template <typename T>
std::size_t count_parameters(const EncoderModel<T>& model) {
  std::size_t n = 0;
  for (const auto& [name, t] : model.parameters()) n += t->numel();
  return n;
}

#define CEMB_INSTANTIATE(T)                                                                   \
  template struct EncoderModel<T>;                                                            \
  template EncoderModel<T> init_model<T>(const ModelConfig&, std::uint64_t);                  \
  template Tensor<T> forward_encode(const EncoderModel<T>&, const TokenBatch&,                \
                                    std::optional<std::size_t>);                              \
  template Tensor<T> latent_cross_attention(const LatentPoolingHead<T>&, const Tensor<T>&);   \
  template Tensor<T> latent_pool(const LatentPoolingHead<T>&, const Tensor<T>&,               \
                                 const TokenBatch&);                                          \
  template Tensor<T> embed(const EncoderModel<T>&, const TokenBatch&);                        \
  template EncoderModel<T> prune_layers(const EncoderModel<T>&, double);                      \
  template std::size_t count_parameters(const EncoderModel<T>&);

CEMB_INSTANTIATE(float)
CEMB_INSTANTIATE(double)
#undef CEMB_INSTANTIATE

template EncoderModel<float> cast_model<float, float>(const EncoderModel<float>&);
template EncoderModel<double> cast_model<double, float>(const EncoderModel<float>&);
template EncoderModel<float> cast_model<float, double>(const EncoderModel<double>&);
template EncoderModel<double> cast_model<double, double>(const EncoderModel<double>&);

}  // namespace cemb::model
