#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <compare>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "json.hpp"

#include "mtd/rng.hpp"

namespace mtd {

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Label : int { human = 0, machine = 1 };

inline int to_int(Label l) { return static_cast<int>(l); }
inline std::string_view label_name(Label l) { return l == Label::human ? "human" : "machine"; }

// Dataset family a sample came from. HC3 and M4GT have closed sub-source
// sets; MAGE and anything else pass sub-source names through.
class Source {
 public:
  enum class Kind { hc3, m4gt, mage, other };

  Source() : Source(Kind::other, "unknown") {}
  static Source hc3() { return Source(Kind::hc3, "HC3"); }
  static Source m4gt() { return Source(Kind::m4gt, "M4GT"); }
  static Source mage() { return Source(Kind::mage, "MAGE"); }

  static Source parse(std::string_view name) {
    if (name == "HC3") return hc3();
    if (name == "M4GT") return m4gt();
    if (name == "MAGE") return mage();
    if (name.empty()) throw CorpusError("empty source name");
    return Source(Kind::other, std::string(name));
  }

  Kind kind() const { return kind_; }
  const std::string& name() const { return name_; }

  friend bool operator==(const Source& a, const Source& b) { return a.name_ == b.name_; }
  friend auto operator<=>(const Source& a, const Source& b) { return a.name_ <=> b.name_; }

 private:
  Source(Kind kind, std::string name) : kind_(kind), name_(std::move(name)) {}
  Kind kind_;
  std::string name_;
};

inline const std::vector<std::string>& hc3_sub_sources() {
  static const std::vector<std::string> names{"Finance", "Medicine", "OpenQA", "Reddit_ELI5", "Wiki_CSAI"};
  return names;
}

inline const std::vector<std::string>& m4gt_sub_sources() {
  static const std::vector<std::string> names{"Arxiv", "Outfox", "PeerRead", "Reddit", "WikiHow", "Wikipedia"};
  return names;
}

inline const std::vector<std::string>& mage_sub_sources() {
  static const std::vector<std::string> names{"CMV",  "CNN",  "DialogSum", "ELI5", "HellaSwag", "IMDB", "PubMed",
                                              "Roct", "SciGen", "SQUAD",   "TLDR", "WP",        "XSum", "Yelp"};
  return names;
}

// Closed label set for sources that have one, empty otherwise.
inline const std::vector<std::string>& canonical_sub_sources(const Source& source) {
  static const std::vector<std::string> none;
  switch (source.kind()) {
    case Source::Kind::hc3: return hc3_sub_sources();
    case Source::Kind::m4gt: return m4gt_sub_sources();
    default: return none;
  }
}

struct LabeledSample {
  std::string id;
  std::string text;
  Label label = Label::human;
  Source source;
  std::string sub_source;
  std::optional<std::string> generator;

  friend bool operator==(const LabeledSample&, const LabeledSample&) = default;
};

namespace detail {

inline bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

}  // namespace detail

// Throws CorpusError when the sample breaks a schema invariant.
inline void validate_sample(const LabeledSample& s) {
  if (s.id.empty()) throw CorpusError("empty id");
  if (detail::is_blank(s.text)) throw CorpusError("text is empty for id '" + s.id + "'");
  const auto& allowed = canonical_sub_sources(s.source);
  if (!allowed.empty() && std::find(allowed.begin(), allowed.end(), s.sub_source) == allowed.end()) {
    throw CorpusError("unknown " + s.source.name() + " sub_source '" + s.sub_source + "' for id '" + s.id + "'");
  }
}

struct Corpus {
  std::vector<LabeledSample> samples;
  std::string provenance;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }

  std::vector<std::string> texts() const {
    std::vector<std::string> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.text);
    return out;
  }

  std::vector<int> labels() const {
    std::vector<int> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(to_int(s.label));
    return out;
  }

  void check_unique_ids() const {
    std::set<std::string_view> seen;
    for (const auto& s : samples) {
      if (!seen.insert(s.id).second) throw CorpusError("duplicate id '" + s.id + "'");
    }
  }
};

// --- JSONL ---------------------------------------------------------------

inline LabeledSample sample_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw CorpusError("row is not a JSON object");
  for (const char* key : {"id", "text", "label"}) {
    if (!j.contains(key)) throw CorpusError(std::string("missing field '") + key + "'");
  }
  LabeledSample s;
  const auto& id = j.at("id");
  s.id = id.is_string() ? id.get<std::string>() : id.dump();
  if (!j.at("text").is_string()) throw CorpusError("field 'text' is not a string");
  s.text = j.at("text").get<std::string>();
  const auto& label = j.at("label");
  if (!label.is_number_integer()) throw CorpusError("label is not an integer");
  const auto value = label.get<std::int64_t>();
  if (value != 0 && value != 1) throw CorpusError("label out of range");
  s.label = static_cast<Label>(value);
  if (j.contains("source") && !j.at("source").is_null()) s.source = Source::parse(j.at("source").get<std::string>());
  if (j.contains("sub_source") && !j.at("sub_source").is_null()) s.sub_source = j.at("sub_source").get<std::string>();
  if (j.contains("generator") && !j.at("generator").is_null()) s.generator = j.at("generator").get<std::string>();
  validate_sample(s);
  return s;
}

inline nlohmann::json sample_to_json(const LabeledSample& s) {
  nlohmann::json j{{"id", s.id}, {"text", s.text}, {"label", to_int(s.label)}, {"source", s.source.name()},
                   {"sub_source", s.sub_source}};
  if (s.generator) j["generator"] = *s.generator;
  return j;
}

inline Corpus read_jsonl(std::istream& in, std::string provenance) {
  Corpus corpus;
  corpus.provenance = std::move(provenance);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::is_blank(line)) continue;
    try {
      corpus.samples.push_back(sample_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw CorpusError("malformed JSON at line " + std::to_string(line_no) + ": " + e.what());
    } catch (const CorpusError& e) {
      throw CorpusError(std::string(e.what()) + " at line " + std::to_string(line_no));
    }
  }
  corpus.check_unique_ids();
  return corpus;
}

inline Corpus load_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open corpus file '" + path + "'");
  return read_jsonl(in, path);
}

inline void write_jsonl(const Corpus& corpus, std::ostream& out) {
  for (const auto& s : corpus.samples) out << sample_to_json(s).dump() << '\n';
}

inline void save_jsonl(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError("cannot write corpus file '" + path + "'");
  write_jsonl(corpus, out);
}

// --- synthetic corpus ----------------------------------------------------

struct SynthSpec {
  std::size_t n_per_cell = 100;
  std::vector<std::pair<Source, std::vector<std::string>>> sub_sources{{Source::hc3(), hc3_sub_sources()},
                                                                       {Source::m4gt(), m4gt_sub_sources()}};
  double vocab_skew = 0.9;
  std::size_t min_tokens = 30;
  std::size_t max_tokens = 50;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_per_cell < 1) throw CorpusError("SynthSpec: n_per_cell must be >= 1");
    if (!(vocab_skew > 0.0 && vocab_skew < 1.0)) throw CorpusError("SynthSpec: vocab_skew must be in (0, 1)");
    if (min_tokens < 4) throw CorpusError("SynthSpec: min_tokens must be >= 4");
    if (max_tokens < min_tokens) throw CorpusError("SynthSpec: max_tokens < min_tokens");
    std::size_t total = 0;
    for (const auto& [source, names] : sub_sources) {
      const auto& allowed = canonical_sub_sources(source);
      for (const auto& n : names) {
        if (!allowed.empty() && std::find(allowed.begin(), allowed.end(), n) == allowed.end()) {
          throw CorpusError("SynthSpec: unknown " + source.name() + " sub_source '" + n + "'");
        }
      }
      total += names.size();
    }
    if (total == 0) throw CorpusError("SynthSpec: no sub_sources");
  }

  nlohmann::json to_json() const {
    nlohmann::json subs = nlohmann::json::object();
    for (const auto& [source, names] : sub_sources) subs[source.name()] = names;
    return {{"n_per_cell", n_per_cell}, {"sub_sources", subs},   {"vocab_skew", vocab_skew},
            {"min_tokens", min_tokens}, {"max_tokens", max_tokens}, {"seed", seed}};
  }
};

namespace detail {

// Closed-class English words shared by every domain; their relative
// frequencies carry the human/machine signal.
inline const std::vector<std::string>& function_words() {
  static const std::vector<std::string> words{
      "the",  "of",    "and",   "to",    "a",     "in",      "is",    "that",  "it",    "for",   "as",    "with",
      "was",  "on",    "be",    "by",    "this",  "are",     "or",    "from",  "at",    "but",   "not",   "have",
      "an",   "they",  "which", "one",   "you",   "were",    "all",   "we",    "can",   "her",   "has",   "there",
      "been", "if",    "more",  "when",  "will",  "would",   "who",   "so",    "no",    "also",  "such",  "these",
      "its",  "very",  "may",   "then",  "their", "however", "thus",  "while", "into",  "some",  "just",  "only"};
  return words;
}

// Pronounceable pseudo-words, unique across the whole generator run.
class TopicLexicon {
 public:
  explicit TopicLexicon(std::uint64_t seed) : rng_(seed) {
    for (const auto& w : function_words()) used_.insert(w);
  }

  std::string next_word() {
    static const char* onsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
                                   "br", "dr", "gr", "kl", "pl", "st", "tr", "sh", "ch", "th"};
    static const char* vowels[] = {"a", "e", "i", "o", "u", "ai", "ou", "ea"};
    static const char* codas[] = {"", "", "n", "r", "s", "l", "m", "x", "nd", "rt"};
    for (;;) {
      std::string w;
      const std::size_t syllables = 2 + rng_.below(2);
      for (std::size_t i = 0; i < syllables; ++i) {
        w += onsets[rng_.below(std::size(onsets))];
        w += vowels[rng_.below(std::size(vowels))];
      }
      w += codas[rng_.below(std::size(codas))];
      if (used_.insert(w).second) return w;
    }
  }

 private:
  Rng rng_;
  std::set<std::string> used_;
};

struct GeneratorProfile {
  const char* name;
  double strength;  // fraction of the full machine tilt this generator shows
};

inline const std::vector<GeneratorProfile>& generator_profiles() {
  static const std::vector<GeneratorProfile> profiles{{"gpt-4o", 1.0}, {"llama-3-70b", 0.7}, {"mistral-7b", 0.45}};
  return profiles;
}

inline std::string lowercase_alnum(std::string_view s) {
  std::string out;
  for (unsigned char c : s) {
    if (std::isalnum(c)) out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

}  // namespace detail

// Seeded multi-domain corpus. Each sub-source owns a disjoint pool of topic
// words; function words are shared and follow a Zipf profile.
//
// Machine text differs from human text in two ways. A geometric tilt on the
// mid-frequency function words, strength vocab_skew scaled by the generator,
// is the same in every domain. On top of that each sub-source has a register:
// one label swaps the frequencies of the ten most common function words with
// the next ten, and which label does so is fixed per sub-source by its name.
// Pooled over domains the register cue mostly cancels, so only a model that
// also knows the domain gets much out of it.
inline Corpus synth_corpus(const SynthSpec& spec) {
  spec.validate();
  constexpr std::size_t kTopicWords = 24;
  constexpr double kTopicRate = 0.15;
  constexpr double kTiltScale = 2.75;
  constexpr std::size_t kTiltFrom = 20;
  constexpr std::size_t kSwapPairs = 10;

  const auto& fw = detail::function_words();
  detail::TopicLexicon lexicon(mix_seed(spec.seed, 2));

  std::vector<double> human_fw(fw.size());
  for (std::size_t i = 0; i < fw.size(); ++i) human_fw[i] = 1.0 / std::pow(static_cast<double>(i + 1), 0.8);
  // every other word from kTiltFrom on, alternating up and down
  std::vector<double> direction(fw.size(), 0.0);
  for (std::size_t i = kTiltFrom; i < fw.size(); i += 2) direction[i] = (i / 2) % 2 ? 1.0 : -1.0;

  std::vector<double> topic_weights(kTopicWords);
  for (std::size_t i = 0; i < kTopicWords; ++i) topic_weights[i] = 1.0 / static_cast<double>(i + 1);

  const double log_ratio = kTiltScale * std::log1p(spec.vocab_skew);
  const auto& generators = detail::generator_profiles();

  Corpus corpus;
  for (const auto& [source, names] : spec.sub_sources) {
    for (const auto& sub : names) {
      std::vector<std::string> topics(kTopicWords);
      for (auto& t : topics) t = lexicon.next_word();
      const bool human_swapped = (hash_string(sub) >> 7) & 1;
      Rng rng(mix_seed(spec.seed, hash_string(source.name() + "/" + sub)));
      const std::string id_prefix = detail::lowercase_alnum(source.name()) + "-" + detail::lowercase_alnum(sub);
      for (Label label : {Label::human, Label::machine}) {
        std::vector<double> base = human_fw;
        if (human_swapped == (label == Label::human)) {
          for (std::size_t q = 0; q < kSwapPairs; ++q) std::swap(base[q], base[q + kSwapPairs]);
        }
        for (std::size_t n = 0; n < spec.n_per_cell; ++n) {
          std::vector<double> fw_weights = base;
          std::string generator = "human";
          if (label == Label::machine) {
            const auto& g = generators[rng.below(generators.size())];
            generator = g.name;
            for (std::size_t i = 0; i < fw.size(); ++i) fw_weights[i] *= std::exp(g.strength * log_ratio * direction[i]);
          }
          const std::size_t len = spec.min_tokens + rng.below(spec.max_tokens - spec.min_tokens + 1);
          std::string text;
          for (std::size_t t = 0; t < len; ++t) {
            if (t) text += ' ';
            if (rng.uniform() < kTopicRate) {
              text += topics[rng.categorical(topic_weights)];
            } else {
              text += fw[rng.categorical(fw_weights)];
            }
          }
          std::ostringstream id;
          id << id_prefix << '-' << (label == Label::human ? 'h' : 'm') << '-' << n;
          corpus.samples.push_back({id.str(), std::move(text), label, source, sub, generator});
        }
      }
    }
  }
  corpus.provenance = "synth:" + std::to_string(hash_string(spec.to_json().dump()));
  return corpus;
}

// --- splitting -----------------------------------------------------------

// Stratified by (source, label); each sample keeps its relative order.
inline std::pair<Corpus, Corpus> split(const Corpus& corpus, double dev_fraction, std::uint64_t seed) {
  if (!(dev_fraction > 0.0 && dev_fraction < 1.0)) throw CorpusError("split: dev_fraction must be in (0, 1)");
  std::map<std::pair<std::string, int>, std::vector<std::size_t>> cells;
  for (std::size_t i = 0; i < corpus.samples.size(); ++i) {
    const auto& s = corpus.samples[i];
    cells[{s.source.name(), to_int(s.label)}].push_back(i);
  }
  std::vector<bool> to_dev(corpus.samples.size(), false);
  for (auto& [key, members] : cells) {
    if (members.size() < 2) {
      throw CorpusError("split: cell (" + key.first + ", " + std::to_string(key.second) + ") has fewer than 2 samples");
    }
    Rng rng(mix_seed(seed, hash_string(key.first + "#" + std::to_string(key.second))));
    rng.shuffle(members);
    const auto n = static_cast<double>(members.size());
    auto n_dev = static_cast<std::size_t>(std::llround(n * dev_fraction));
    n_dev = std::clamp<std::size_t>(n_dev, 1, members.size() - 1);
    for (std::size_t i = 0; i < n_dev; ++i) to_dev[members[i]] = true;
  }
  Corpus train, dev;
  train.provenance = corpus.provenance + "#train";
  dev.provenance = corpus.provenance + "#dev";
  for (std::size_t i = 0; i < corpus.samples.size(); ++i) {
    (to_dev[i] ? dev : train).samples.push_back(corpus.samples[i]);
  }
  return {std::move(train), std::move(dev)};
}

// --- statistics ----------------------------------------------------------

struct CorpusStats {
  // (source, sub_source, label) -> count
  std::map<std::tuple<std::string, std::string, int>, std::size_t> cells;

  std::size_t count(const std::string& source, const std::string& sub_source, Label label) const {
    auto it = cells.find({source, sub_source, to_int(label)});
    return it == cells.end() ? 0 : it->second;
  }

  std::size_t total(Label label) const {
    std::size_t n = 0;
    for (const auto& [key, c] : cells) {
      if (std::get<2>(key) == to_int(label)) n += c;
    }
    return n;
  }

  std::size_t total() const { return total(Label::human) + total(Label::machine); }

  void write_csv(std::ostream& out) const {
    out << "source,sub_source,label,count\n";
    for (const auto& [key, c] : cells) {
      out << std::get<0>(key) << ',' << std::get<1>(key) << ',' << label_name(static_cast<Label>(std::get<2>(key)))
          << ',' << c << '\n';
    }
    out << "TOTAL,*,human," << total(Label::human) << '\n';
    out << "TOTAL,*,machine," << total(Label::machine) << '\n';
  }
};

inline CorpusStats stats(const Corpus& corpus) {
  CorpusStats s;
  for (const auto& sample : corpus.samples) ++s.cells[{sample.source.name(), sample.sub_source, to_int(sample.label)}];
  return s;
}

}  // namespace mtd
