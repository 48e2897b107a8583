#pragma once

#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "ppcgen/attribute.hpp"
#include "ppcgen/lm.hpp"

namespace ppc {

enum class SteerMode { PrefixSteer, KvSteer, NoSteer };

std::string to_string(SteerMode mode);
SteerMode steer_mode_from_string(const std::string& name);

struct SteerConfig {
  int64_t m{5};          // gradient iterations per token
  double alpha{0.4};     // step size
  SteerMode mode{SteerMode::PrefixSteer};
  bool persist_prefix{true};  // carry the adjusted prefix across token steps
  double grad_clip{1.0};      // max gradient norm per update, <=0 disables
  void validate() const;
};

struct SteerIterRecord {
  int64_t token_index{0};
  int64_t iteration{0};
  double loss_before{0.0};
  double loss_after{0.0};
  double delta_norm{0.0};
  bool skipped{false};  // non-finite gradient, update not applied
};

struct SteerTrace {
  std::vector<SteerIterRecord> records;
  void write_jsonl(std::ostream& os) const;
};

// Gradient of the steering loss w.r.t. the prefix slots, one buffer per
// layer for keys and values.
struct PrefixGrad {
  std::vector<std::vector<double>> keys;
  std::vector<std::vector<double>> values;

  static PrefixGrad read_from(const PrefixState& prefix);  // reads .grad()
  double norm() const;
  bool finite() const;
  void scale(double factor);
  void clip_norm(double max_norm);
};

struct PrefixUpdate {
  PrefixState prefix;
  double delta_norm{0.0};
};

// Pure descent step on the prefix slots: p <- p - alpha * grad. Only prefix
// slots change; throws NumericError on non-finite gradients.
PrefixUpdate update_prefix(const PrefixState& prefix, const PrefixGrad& grad, double alpha);

struct TokenStepResult {
  int32_t token{0};
  std::optional<PrefixState> prefix;  // post-steering prefix (value copy)
  std::vector<SteerIterRecord> records;
  std::vector<double> logits;  // emission next-token logits row
  double final_loss{0.0};
};

// One steering step: m iterations of {forward -> loss -> backward ->
// update_prefix} with grads cleared between iterations, then one emission
// forward with the final prefix and a sample. Topic targets descend
// -bag_log_mass of the next-token distribution; class targets descend the
// discriminator loss. Exactly m+1 forward passes.
TokenStepResult steer_token(const LanguageModel& lm, const LoraAdapter* adapter,
                            const Discriminator* disc, std::span<const int32_t> context,
                            const PrefixState* prefix, const AttributeTarget& target,
                            const SteerConfig& steer, const DecodeConfig& decode, Rng& rng,
                            int64_t token_index = 0);

struct KvStepResult {
  int32_t token{0};
  std::vector<SteerIterRecord> records;
  std::vector<double> logits;
};

// PPC-KV ablation: the same m-iteration gradient loop applied to every cached
// key/value activation (content positions included) with no prefix inserted.
// Content states are intentionally mutated and the mutations persist in the
// decoder cache across token steps.
KvStepResult kv_steer_token(IncrementalDecoder& decoder, const Discriminator* disc,
                            int32_t pending_token, const AttributeTarget& target,
                            const SteerConfig& steer, const DecodeConfig& decode, Rng& rng,
                            int64_t token_index = 0);

struct GenerateResult {
  std::vector<int32_t> tokens;  // prompt followed by generated tokens
  SteerTrace trace;
  std::optional<PrefixState> final_prefix;
};

// Steered generation until max_new_tokens or the end token. persist_prefix
// threads the adjusted prefix through token steps; otherwise each step
// restarts from prefix_init. Throws CapacityError before generating anything
// if prompt + prefix + max_new_tokens exceed the context budget.
GenerateResult generate(const LanguageModel& lm, const LoraAdapter* adapter,
                        const Discriminator* disc, std::span<const int32_t> prompt,
                        const AttributeTarget& target, const PrefixState* prefix_init,
                        const SteerConfig& steer, const DecodeConfig& decode, Rng& rng);

}  // namespace ppc
