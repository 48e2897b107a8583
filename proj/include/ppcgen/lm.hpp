#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ppcgen/rng.hpp"
#include "ppcgen/tensor.hpp"

namespace ppc {

struct LoraAdapter;  // rldaf.hpp

struct LMConfig {
  int64_t vocab_size{0};
  int64_t d_model{64};
  int64_t n_layers{2};
  int64_t n_heads{4};
  int64_t context_len{64};
  int64_t prefix_len{10};

  int64_t head_dim() const { return d_model / n_heads; }
  void validate() const;  // ConfigError on violation
  bool operator==(const LMConfig&) const = default;
};

struct LayerParams {
  Tensor ln1_g, ln1_b;
  Tensor w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o;
  Tensor ln2_g, ln2_b;
  Tensor w_fc1, b_fc1, w_fc2, b_fc2;
};

// Tiny pre-LN decoder-only transformer: learned absolute positional
// embeddings for content positions, GELU feed-forward, untied output head.
class LanguageModel {
 public:
  LanguageModel() = default;
  static LanguageModel init(const LMConfig& cfg, uint64_t seed);

  const LMConfig& config() const { return cfg_; }
  uint64_t init_seed() const { return seed_; }

  Tensor tok_emb;  // [V×d]
  Tensor pos_emb;  // [context_len×d]
  std::vector<LayerParams> layers;
  Tensor lnf_g, lnf_b;
  Tensor w_out;  // [d×V], no bias

  std::vector<Tensor> parameters() const;
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  void set_trainable(bool trainable);
  void zero_grads();
  LanguageModel clone() const;  // deep copy of parameters

  // Restores a model around externally provided parameters (checkpoint load).
  static LanguageModel from_parts(const LMConfig& cfg, uint64_t seed);

 private:
  LMConfig cfg_;
  uint64_t seed_{0};
};

// Trainable per-layer key/value activation slots prepended to the cache.
// Slots carry no token identity and no positional embedding.
struct PrefixState {
  std::vector<Tensor> keys;    // per layer [l×d]
  std::vector<Tensor> values;  // per layer [l×d]

  static PrefixState zeros(const LMConfig& cfg);
  static PrefixState randn(const LMConfig& cfg, uint64_t seed, double stddev = 0.3);

  bool empty() const { return keys.empty() || prefix_len() == 0; }
  int64_t n_layers() const { return static_cast<int64_t>(keys.size()); }
  int64_t prefix_len() const { return keys.empty() ? 0 : keys[0].dim(0); }
  int64_t d_model() const { return keys.empty() ? 0 : keys[0].dim(1); }

  PrefixState clone() const;
  void set_trainable(bool trainable);
  void zero_grads();
  std::vector<Tensor> parameters() const;
  bool matches(const LMConfig& cfg) const;
};

// Per-layer key/value activations for prefix slots followed by content
// positions, plus the hidden states the attribute models consume.
struct HiddenCache {
  int64_t prefix_len{0};
  int64_t content_len{0};
  std::vector<Tensor> keys;          // per layer [(P+T)×d]
  std::vector<Tensor> values;        // per layer [(P+T)×d]
  std::vector<Tensor> layer_hidden;  // per layer [T×d], post-block residual
  Tensor final_hidden;               // [T×d] after the final layer norm
};

struct ForwardResult {
  Tensor logits;  // [T×vocab]
  HiddenCache cache;
};

// Full-sequence forward pass. Causal masking: position t attends over every
// prefix slot and content positions <= t. Throws CapacityError when
// tokens+prefix exceed context_len and IndexError on bad token ids.
ForwardResult forward(const LanguageModel& lm, std::span<const int32_t> tokens,
                      const PrefixState* prefix = nullptr, const LoraAdapter* adapter = nullptr);

struct ModelView {
  const LanguageModel* lm{nullptr};
  const PrefixState* prefix{nullptr};
  const LoraAdapter* adapter{nullptr};
  ForwardResult forward(std::span<const int32_t> tokens) const;
};

// Validates prefix shapes against the model config (ConfigError on mismatch).
ModelView attach_prefix(const LanguageModel& lm, const PrefixState& prefix);

struct DecodeConfig {
  enum class Strategy { Greedy, TopK };
  Strategy strategy{Strategy::TopK};
  int64_t top_k{8};
  double temperature{1.0};
  int64_t max_new_tokens{20};
  uint64_t seed{0};
  void validate() const;
};

// Greedy ties break toward the lowest token id; top-k samples from the
// renormalized top-k distribution at the given temperature.
int32_t sample_next(std::span<const double> logits_row, const DecodeConfig& decode, Rng& rng);

// Value-only cached decoding. Shares the numeric kernels with forward() so a
// step is bit-identical to the matching row of a full recomputation.
class IncrementalDecoder {
 public:
  IncrementalDecoder(const LanguageModel& lm, const PrefixState* prefix,
                     const LoraAdapter* adapter);

  // Appends `token` and returns the next-token logits row.
  std::vector<double> step(int32_t token);

  int64_t content_len() const { return content_len_; }
  int64_t prefix_len() const { return prefix_len_; }
  const LanguageModel& model() const { return *lm_; }
  const LoraAdapter* adapter() const { return adapter_; }

  // Cached activations, exposed for the kv-steer mode which mutates them.
  std::vector<std::vector<double>>& keys() { return keys_; }
  std::vector<std::vector<double>>& values() { return values_; }
  const std::vector<std::vector<double>>& keys() const { return keys_; }
  const std::vector<std::vector<double>>& values() const { return values_; }
  const std::vector<double>& final_hidden() const { return final_hidden_; }

 private:
  const LanguageModel* lm_;
  const LoraAdapter* adapter_;
  int64_t prefix_len_{0};
  int64_t content_len_{0};
  std::vector<std::vector<double>> keys_;    // per layer, row-major (P+T)×d
  std::vector<std::vector<double>> values_;  // per layer
  std::vector<double> final_hidden_;         // T×d rows after final layer norm
};

// Thread-local count of forward passes (full forwards and decoder steps);
// used to verify the per-token compute budget of the steering loop.
int64_t forward_count();
void reset_forward_count();
namespace detail {
void bump_forward_count();
}

}  // namespace ppc
