#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ppcgen/attribute.hpp"
#include "ppcgen/lm.hpp"
#include "ppcgen/optim.hpp"
#include "ppcgen/steer.hpp"

namespace ppc {

struct RLDAFConfig {
  int64_t k{3};            // rollout segment length
  double beta{0.1};        // fluency weight
  double clip_eps{0.2};    // surrogate clipping radius
  double lr{1e-3};         // adapter / prefix-init learning rate
  int64_t episodes{300};   // one batch + one update per episode
  int64_t lora_rank{4};
  int64_t batch{8};        // rollouts per update
  int64_t checkpoint_every{100};
  bool reinforce{false};   // plain policy-gradient mode, no baseline/clip
  uint64_t seed{0};
  void validate() const;
};

// Additive low-rank factors for the attention projections; the base weight
// buffers are never touched. W_eff = W + scale * A * B with B zero-initialized
// so a freshly wrapped model matches the base bit-exactly.
struct LoraAdapter {
  enum Proj { kQuery = 0, kKey = 1, kValue = 2, kOutput = 3 };

  struct Factor {
    std::string name;
    Tensor a;  // [d×r]
    Tensor b;  // [r×d]
  };

  std::vector<Factor> factors;  // layer-major, 4 projections per layer
  double scale{1.0};
  int64_t rank{0};

  const Factor& factor(int64_t layer, Proj proj) const;
  std::vector<Tensor> parameters() const;
  int64_t parameter_count() const;
  void set_trainable(bool trainable);
  void zero_grads();
  LoraAdapter clone() const;
};

LoraAdapter lora_wrap(const LanguageModel& lm, int64_t rank, uint64_t seed);

struct TrajectoryStep {
  std::vector<int32_t> context;  // tokens preceding the action
  int32_t action{0};
  double behavior_logp{0.0};
  double ref_logp{0.0};
  double kl_to_ref{0.0};
  std::vector<double> policy_logits;  // full vocab, emission distribution
  std::vector<double> ref_logits;     // frozen reference, no prefix/adapter
  bool has_prefix{false};
  PrefixState prefix_delta;  // steered prefix minus prefix_init (values only)
};

struct Trajectory {
  std::vector<int32_t> context;
  AttributeTarget target;
  std::vector<TrajectoryStep> steps;
  double reward_control{0.0};
  double reward_fluency{0.0};
  double reward_total{0.0};
};

// k tokens sampled under dynamic prefix steering, with policy and frozen
// reference logits recorded per step; rewards computed once at segment end.
Trajectory rollout(const LanguageModel& base, const LoraAdapter* adapter,
                   const PrefixState* prefix_init, const Discriminator* disc,
                   std::span<const int32_t> context, const AttributeTarget& target,
                   const SteerConfig& steer, const DecodeConfig& decode, int64_t k, Rng& rng);

// R_d: class targets score the discriminator probability of the target on the
// full rolled-out sequence (features from the frozen base model); topic
// targets score the mean next-token bag mass across the segment.
double control_reward(const LanguageModel& base, const Discriminator* disc,
                      const Trajectory& traj, const AttributeTarget& target);

// R_f = -(beta/k) * sum_j KL(policy_j || ref_j); always <= 0.
double fluency_reward(std::span<const std::vector<double>> policy_logits,
                      std::span<const std::vector<double>> ref_logits, double beta, int64_t k);

double total_reward(double reward_control, double reward_fluency);

struct RunningBaseline {
  double mean{0.0};
  int64_t count{0};
  double value() const { return count > 0 ? mean : 0.0; }
  void update(double reward) {
    ++count;
    mean += (reward - mean) / static_cast<double>(count);
  }
};

struct UpdateStats {
  double mean_reward{0.0};
  double mean_kl{0.0};
  double clip_fraction{0.0};
  double surrogate_loss{0.0};
  int64_t tokens{0};
};

// Single clipped-surrogate optimizer step on the adapter (and prefix-init)
// parameters only; per-token ratios are taken against the trajectory-time
// log-probs and the segment reward is assigned uniformly to its k tokens.
UpdateStats ppo_update(const LanguageModel& base, LoraAdapter& adapter, PrefixState* prefix_init,
                       std::span<const Trajectory> batch, const RLDAFConfig& cfg,
                       AdamOptimizer& opt, RunningBaseline& baseline);

struct EpisodeLog {
  int64_t episode{0};
  double mean_reward_control{0.0};
  double mean_reward_fluency{0.0};
  double mean_kl{0.0};
  double clip_fraction{0.0};
  uint64_t seed{0};
};

struct TrainResult {
  std::vector<EpisodeLog> log;
};

using TargetSampler = std::function<AttributeTarget(Rng&)>;
using CheckpointHook = std::function<void(int64_t episode)>;

// Episodes of {sample prompt+target -> batch of rollouts -> ppo_update}.
// episodes == 0 leaves the adapter and prefix-init bit-identical.
TrainResult rldaf_train(const LanguageModel& base, LoraAdapter& adapter, PrefixState& prefix_init,
                        const Discriminator* disc,
                        const std::vector<std::vector<int32_t>>& prompts,
                        const TargetSampler& targets, const SteerConfig& steer,
                        const DecodeConfig& decode, const RLDAFConfig& cfg,
                        const CheckpointHook& checkpoint_hook = {});

void write_training_log_jsonl(const TrainResult& result, std::ostream& os);

}  // namespace ppc
