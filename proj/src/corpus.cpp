#include "ppcgen/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

namespace ppc {

namespace {

std::vector<std::string> split_whitespace(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string word;
  while (is >> word) out.push_back(word);
  return out;
}

}  // namespace

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < 2 || tokens_[0] != "<pad>" || tokens_[1] != "<end>")
    throw DataError("vocab must start with <pad>, <end>");
  for (size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) throw DataError("vocab contains an empty token");
    auto [it, inserted] = index_.emplace(tokens_[i], static_cast<int32_t>(i));
    if (!inserted) throw DataError("vocab contains duplicate token '" + tokens_[i] + "'");
  }
}

const std::string& Vocab::token(int32_t id) const {
  if (id < 0 || id >= size()) throw IndexError("vocab id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<size_t>(id)];
}

int32_t Vocab::id(const std::string& word) const {
  auto it = index_.find(word);
  if (it == index_.end()) throw DataError("unknown word '" + word + "'");
  return it->second;
}

bool Vocab::contains(const std::string& word) const { return index_.count(word) > 0; }

std::vector<int32_t> Vocab::tokenize(const std::string& text) const {
  std::vector<int32_t> out;
  for (const std::string& w : split_whitespace(text)) out.push_back(id(w));
  return out;
}

std::string Vocab::detokenize(std::span<const int32_t> ids) const {
  std::string out;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += token(ids[i]);
  }
  return out;
}

void Vocab::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write vocab file " + path);
  for (const std::string& t : tokens_) f << t << '\n';
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read vocab file " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(f, line))
    if (!line.empty()) tokens.push_back(line);
  return Vocab(std::move(tokens));
}

// ---- spec -------------------------------------------------------------------

void CorpusSpec::validate() const {
  if (bags.size() < 2) throw ConfigError("corpus spec needs at least 2 topic bags");
  for (const auto& bag : bags) {
    if (bag.words.empty()) throw ConfigError("topic bag '" + bag.name + "' is empty");
    std::set<std::string> uniq(bag.words.begin(), bag.words.end());
    if (uniq.size() != bag.words.size())
      throw ConfigError("topic bag '" + bag.name + "' has duplicate words");
  }
  for (size_t i = 0; i < bags.size(); ++i) {
    std::set<std::string> a(bags[i].words.begin(), bags[i].words.end());
    for (size_t j = i + 1; j < bags.size(); ++j) {
      int64_t shared = 0;
      for (const auto& w : bags[j].words) shared += a.count(w);
      const double limit = 0.10 * static_cast<double>(std::min(bags[i].words.size(), bags[j].words.size()));
      if (static_cast<double>(shared) > limit)
        throw ConfigError("topic bags '" + bags[i].name + "' and '" + bags[j].name +
                          "' overlap by more than 10%");
    }
  }
  std::set<std::string> pos(positive_markers.begin(), positive_markers.end());
  for (const auto& w : negative_markers)
    if (pos.count(w)) throw ConfigError("sentiment lexicons are not disjoint ('" + w + "')");
  if (positive_markers.empty() || negative_markers.empty())
    throw ConfigError("sentiment lexicons must be nonempty");
  if (neutral_words.empty()) throw ConfigError("neutral word list must be nonempty");
  if (min_sentence_len < 4 || max_sentence_len < min_sentence_len)
    throw ConfigError("invalid sentence length range");
  if (!(bag_rate_min >= 0.30 && bag_rate_max <= 1.0 && bag_rate_min <= bag_rate_max))
    throw ConfigError("bag rate range must lie in [0.30, 1.0]");
  if (!(marker_rate_min > 0.0 && marker_rate_max <= 1.0 && marker_rate_min <= marker_rate_max))
    throw ConfigError("marker rate range must lie in (0, 1.0]");
}

CorpusSpec CorpusSpec::builtin(uint64_t seed) {
  CorpusSpec spec;
  spec.seed = seed;
  spec.bags = {
      {"science",
       {"atom", "cell", "theory", "experiment", "laboratory", "physics", "chemistry", "biology",
        "energy", "quantum", "research", "hypothesis", "molecule", "electron", "neutron", "proton",
        "genome", "enzyme", "velocity", "gravity", "particle", "equation", "microscope",
        "telescope", "reaction", "evolution", "species", "catalyst"}},
      {"space",
       {"orbit", "rocket", "planet", "galaxy", "asteroid", "comet", "lunar", "solar", "cosmos",
        "nebula", "satellite", "astronaut", "spacecraft", "launch", "mars", "venus", "jupiter",
        "saturn", "mercury", "meteor", "station", "shuttle", "crater", "eclipse", "universe",
        "stellar", "cosmic", "telemetry"}},
      {"military",
       {"army", "navy", "soldier", "battle", "weapon", "tank", "missile", "troops", "combat",
        "defense", "attack", "strategy", "commander", "infantry", "artillery", "brigade",
        "regiment", "fortress", "siege", "armor", "rifle", "squadron", "barracks", "conflict",
        "warfare", "victory", "retreat", "patrol"}},
  };
  spec.positive_markers = {"good", "great", "excellent", "wonderful", "amazing", "joyful",
                           "bright", "pleasant", "delight", "superb", "happy", "love",
                           "fine", "glad", "cheerful", "charming"};
  spec.negative_markers = {"bad", "terrible", "awful", "horrible", "sad", "gloomy",
                           "unpleasant", "misery", "poor", "worst", "hate", "angry",
                           "dreadful", "bitter", "grim", "cruel"};
  spec.neutral_words = {
      "the",   "a",     "an",    "it",    "is",    "was",   "and",   "or",     "to",    "of",
      "in",    "on",    "at",    "with",  "for",   "by",    "this",  "that",   "they",  "we",
      "he",    "she",   "then",  "now",   "here",  "there", "went",  "came",   "said",  "saw",
      "made",  "took",  "found", "gave",  "day",   "time",  "man",   "woman",  "child", "house",
      "city",  "road",  "water", "light", "night", "morning", "story", "word", "thing", "world",
      "hand",  "eye",   "face",  "door",  "room",  "tree",  "stone", "wind",   "fire",  "paper",
      "book",  "line",  "voice", "sound", "name",  "year",  "way",   "end",    "part",  "side",
      "place", "still"};
  return spec;
}

// ---- vocab & generation -------------------------------------------------------

Vocab build_vocab(const CorpusSpec& spec) {
  spec.validate();
  std::vector<std::string> tokens = {"<pad>", "<end>"};
  std::set<std::string> seen(tokens.begin(), tokens.end());
  auto push_all = [&](const std::vector<std::string>& words) {
    for (const std::string& w : words)
      if (seen.insert(w).second) tokens.push_back(w);
  };
  push_all(spec.neutral_words);
  for (const auto& bag : spec.bags) push_all(bag.words);
  push_all(spec.positive_markers);
  push_all(spec.negative_markers);
  return Vocab(std::move(tokens));
}

namespace {

std::vector<int32_t> word_ids(const Vocab& vocab, const std::vector<std::string>& words) {
  std::vector<int32_t> ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(vocab.id(w));
  return ids;
}

// One sentence: `special_count` positions draw from `special`, the rest from
// neutral words; positions are a seeded shuffle so markers spread out.
std::vector<int32_t> make_sentence(Rng& rng, const std::vector<int32_t>& special,
                                   const std::vector<int32_t>& neutral, int64_t len,
                                   int64_t special_count) {
  std::vector<int64_t> positions(static_cast<size_t>(len));
  std::iota(positions.begin(), positions.end(), 0);
  for (int64_t i = len - 1; i > 0; --i)
    std::swap(positions[static_cast<size_t>(i)], positions[static_cast<size_t>(rng.uniform_int(i + 1))]);
  std::vector<bool> is_special(static_cast<size_t>(len), false);
  for (int64_t i = 0; i < special_count; ++i) is_special[static_cast<size_t>(positions[static_cast<size_t>(i)])] = true;
  std::vector<int32_t> tokens(static_cast<size_t>(len));
  for (int64_t i = 0; i < len; ++i) {
    const auto& pool = is_special[static_cast<size_t>(i)] ? special : neutral;
    tokens[static_cast<size_t>(i)] = pool[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(pool.size())))];
  }
  tokens.push_back(Vocab::kEndId);
  return tokens;
}

std::vector<LabeledSequence> generate_corpus(const CorpusSpec& spec, const Vocab& vocab,
                                             int64_t size, bool sentiment) {
  spec.validate();
  if (size <= 0) throw ConfigError("corpus size must be positive");
  std::vector<std::vector<int32_t>> pools;
  std::vector<std::string> names;
  if (sentiment) {
    pools = {word_ids(vocab, spec.negative_markers), word_ids(vocab, spec.positive_markers)};
    names = {"", ""};
  } else {
    for (const auto& bag : spec.bags) {
      pools.push_back(word_ids(vocab, bag.words));
      names.push_back(bag.name);
    }
  }
  const std::vector<int32_t> neutral = word_ids(vocab, spec.neutral_words);
  const double rate_min = sentiment ? spec.marker_rate_min : spec.bag_rate_min;
  const double rate_max = sentiment ? spec.marker_rate_max : spec.bag_rate_max;
  const char* stream = sentiment ? "sentiment-corpus" : "topic-corpus";

  std::vector<LabeledSequence> out;
  out.reserve(static_cast<size_t>(size));
  const int64_t n_classes = static_cast<int64_t>(pools.size());
  for (int64_t i = 0; i < size; ++i) {
    Rng rng = Rng::stream(spec.seed, stream, static_cast<uint64_t>(i));
    const int64_t cls = i % n_classes;  // round-robin keeps labels balanced
    const int64_t len =
        spec.min_sentence_len + rng.uniform_int(spec.max_sentence_len - spec.min_sentence_len + 1);
    const double rate = rate_min + rng.uniform() * (rate_max - rate_min);
    const int64_t special_count =
        std::max<int64_t>(1, static_cast<int64_t>(std::llround(rate * static_cast<double>(len))));
    LabeledSequence seq;
    seq.tokens = make_sentence(rng, pools[static_cast<size_t>(cls)], neutral, len, special_count);
    seq.label = static_cast<int32_t>(cls);
    seq.topic = names[static_cast<size_t>(cls)];
    out.push_back(std::move(seq));
  }
  // Shuffle so class labels are not periodic in file order.
  Rng shuffle_rng = Rng::stream(spec.seed, stream, static_cast<uint64_t>(size) + 7919);
  for (int64_t i = size - 1; i > 0; --i)
    std::swap(out[static_cast<size_t>(i)], out[static_cast<size_t>(shuffle_rng.uniform_int(i + 1))]);
  return out;
}

}  // namespace

std::vector<LabeledSequence> generate_topic_corpus(const CorpusSpec& spec, const Vocab& vocab,
                                                   int64_t size) {
  return generate_corpus(spec, vocab, size, false);
}

std::vector<LabeledSequence> generate_sentiment_corpus(const CorpusSpec& spec, const Vocab& vocab,
                                                       int64_t size) {
  return generate_corpus(spec, vocab, size, true);
}

void save_corpus_jsonl(const std::vector<LabeledSequence>& corpus, const Vocab& vocab,
                       const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write corpus file " + path);
  for (const auto& seq : corpus) {
    std::span<const int32_t> body(seq.tokens);
    if (!body.empty() && body.back() == Vocab::kEndId) body = body.subspan(0, body.size() - 1);
    nlohmann::json line;
    line["text"] = vocab.detokenize(body);
    line["label"] = seq.label;
    if (!seq.topic.empty()) line["topic"] = seq.topic;
    f << line.dump() << '\n';
  }
}

std::vector<LabeledSequence> load_corpus_jsonl(const Vocab& vocab, const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read corpus file " + path);
  std::vector<LabeledSequence> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    nlohmann::json obj = nlohmann::json::parse(line);
    LabeledSequence seq;
    seq.tokens = vocab.tokenize(obj.at("text").get<std::string>());
    seq.tokens.push_back(Vocab::kEndId);
    seq.label = obj.at("label").get<int32_t>();
    if (obj.contains("topic")) seq.topic = obj["topic"].get<std::string>();
    out.push_back(std::move(seq));
  }
  return out;
}

}  // namespace ppc
