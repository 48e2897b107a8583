#pragma once

#include <span>
#include <string>
#include <vector>

#include "ppcgen/corpus.hpp"
#include "ppcgen/lm.hpp"
#include "ppcgen/tensor.hpp"

namespace ppc {

// A set of vocab ids characterizing a topic; stored sorted and unique.
struct WordBag {
  std::string name;
  std::vector<int32_t> tokens;

  bool contains(int32_t id) const;
};

WordBag make_word_bag(std::string name, std::vector<int32_t> tokens);
WordBag bag_from_spec(const WordBagSpec& spec, const Vocab& vocab);
std::vector<WordBag> topic_bags(const CorpusSpec& spec, const Vocab& vocab);

// Steering / reward target: either a topic word bag or a class label.
struct AttributeTarget {
  enum class Kind { Topic, ClassLabel };
  Kind kind{Kind::Topic};
  WordBag bag;
  int32_t label{-1};

  static AttributeTarget topic(WordBag bag);
  static AttributeTarget class_label(int32_t label);
};

struct BowScore {
  double log_likelihood{0.0};
  bool underflow{false};
};

// log of the probability mass assigned to bag tokens. Mass of exactly zero
// returns the floor ln(1e-12) with the underflow flag set, keeping downstream
// gradients finite.
BowScore bow_log_likelihood(std::span<const double> next_token_probs, const WordBag& bag);

// Linear classification head over mean-pooled final-layer hidden states of
// content positions (prefix slots are excluded from pooling).
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(Tensor head_w, Tensor head_b, std::vector<std::string> class_names);

  int64_t num_classes() const { return head_b.defined() ? head_b.dim(0) : 0; }
  int64_t feature_dim() const { return head_w.defined() ? head_w.dim(0) : 0; }
  const std::vector<std::string>& class_names() const { return class_names_; }

  // Pre-softmax class scores; differentiable back through the cache.
  Tensor class_logits(const HiddenCache& cache, int64_t upto_position) const;
  // Softmax class distribution d (sums to 1).
  Tensor classify(const HiddenCache& cache, int64_t upto_position) const;
  std::vector<double> classify_values(const HiddenCache& cache, int64_t upto_position) const;

  std::vector<Tensor> parameters() const { return {head_w, head_b}; }

  Tensor head_w;  // [d×C]
  Tensor head_b;  // [C]

 private:
  std::vector<std::string> class_names_;
};

// -log d[target]; target must be the class-label variant.
Tensor discriminator_loss(const Tensor& distribution, const AttributeTarget& target);

struct DiscTrainConfig {
  int64_t epochs{40};
  double lr{0.05};
  double holdout_fraction{0.2};
  int64_t batch{16};
  uint64_t seed{0};
};

struct DiscTrainResult {
  Discriminator disc;
  double holdout_accuracy{0.0};
  std::vector<double> loss_curve;  // mean training loss per epoch
};

// Trains a linear head on mean-pooled hidden states from the frozen LM.
// Throws DataError when fewer than two classes are present.
DiscTrainResult train_discriminator(const LanguageModel& lm,
                                    const std::vector<LabeledSequence>& corpus,
                                    const DiscTrainConfig& cfg,
                                    std::vector<std::string> class_names = {});

}  // namespace ppc
