#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ppcgen/error.hpp"
#include "ppcgen/rng.hpp"

namespace ppc {

// Closed word-level vocabulary with reserved pad/end ids. Token order is
// fixed by construction, so ids are stable across runs.
class Vocab {
 public:
  static constexpr int32_t kPadId = 0;
  static constexpr int32_t kEndId = 1;

  Vocab() = default;
  explicit Vocab(std::vector<std::string> tokens);

  int64_t size() const { return static_cast<int64_t>(tokens_.size()); }
  const std::string& token(int32_t id) const;
  int32_t id(const std::string& word) const;  // DataError on unknown words
  bool contains(const std::string& word) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<int32_t> tokenize(const std::string& text) const;
  std::string detokenize(std::span<const int32_t> ids) const;

  void save(const std::string& path) const;  // one token per line
  static Vocab load(const std::string& path);

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int32_t> index_;
};

struct WordBagSpec {
  std::string name;
  std::vector<std::string> words;
};

// Synthetic-universe definition: topic bags, sentiment marker lexicons, a
// shared neutral vocabulary, and sentence statistics.
struct CorpusSpec {
  std::vector<WordBagSpec> bags;
  std::vector<std::string> positive_markers;
  std::vector<std::string> negative_markers;
  std::vector<std::string> neutral_words;
  int64_t min_sentence_len{8};
  int64_t max_sentence_len{14};
  double bag_rate_min{0.35};
  double bag_rate_max{0.55};
  double marker_rate_min{0.30};
  double marker_rate_max{0.50};
  uint64_t seed{0};

  void validate() const;
  static CorpusSpec builtin(uint64_t seed);
};

struct LabeledSequence {
  std::vector<int32_t> tokens;  // ends with Vocab::kEndId
  int32_t label{0};             // topic index, or 0=negative / 1=positive
  std::string topic;            // bag name for topic corpora, empty otherwise
};

Vocab build_vocab(const CorpusSpec& spec);
std::vector<LabeledSequence> generate_topic_corpus(const CorpusSpec& spec, const Vocab& vocab,
                                                   int64_t size);
std::vector<LabeledSequence> generate_sentiment_corpus(const CorpusSpec& spec, const Vocab& vocab,
                                                       int64_t size);

// One JSON object per line: {"text": ..., "label": ..., "topic": ...}.
void save_corpus_jsonl(const std::vector<LabeledSequence>& corpus, const Vocab& vocab,
                       const std::string& path);
std::vector<LabeledSequence> load_corpus_jsonl(const Vocab& vocab, const std::string& path);

}  // namespace ppc
