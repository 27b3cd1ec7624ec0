#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "baitnet/common.hpp"

namespace baitnet::corpus {

inline constexpr const char* kNumToken = "<n-token>";
inline constexpr const char* kUrlToken = "<u-token>";
inline constexpr const char* kUnkToken = "<unk>";
inline constexpr const char* kPadToken = "<pad>";

// Maps a lowercased token to its lemma. Must be idempotent.
using Lemmatizer = std::function<std::string(const std::string&)>;

Lemmatizer identity_lemmatizer();
// Small bundled dictionary (irregular plurals, time units, common noun
// plurals). A stand-in for a full lexical-database lemmatizer.
Lemmatizer builtin_lemmatizer();
Lemmatizer lemmatizer_by_name(const std::string& name);  // identity|builtin

std::vector<std::string> normalize(const std::string& raw,
                                   const Lemmatizer& lemma);

// truthMean >= 0.5 -> clickbait (class 1).
int decide_class(double truth_mean);

class Vocabulary {
 public:
  Vocabulary();

  // Tokens sorted by frequency (desc), then lexicographically; sentinels
  // occupy the first four slots.
  static Vocabulary build(const std::vector<std::vector<std::string>>& docs);

  int id(const std::string& token) const;      // <unk> id if absent
  int lookup(const std::string& token) const;  // -1 if absent
  const std::string& token(int id) const;
  int add(const std::string& token);
  std::size_t size() const { return tokens_.size(); }

  int pad_id() const { return 0; }
  int unk_id() const { return 1; }

  long frequency(const std::string& token) const;

  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  std::unordered_map<std::string, long> freq_;
};

struct TokenizedHeadline {
  std::string id;
  std::string raw_text;
  std::vector<std::string> tokens;
  std::vector<int> token_ids;
};

struct Record {
  TokenizedHeadline headline;
  std::optional<int> label;          // strong label when known
  std::optional<double> truth_mean;  // challenge data only
};

struct StrongSample {
  const TokenizedHeadline* headline;
  int label;
};

struct WeakSample {
  const TokenizedHeadline* headline;
  int weak_label;
  std::optional<double> confidence_score;  // filled during training
};

struct AugmentedStrongSample {
  const TokenizedHeadline* headline;
  int label;
  int rf_prediction;
};

struct IngestOptions {
  int max_tokens = 30;  // truncation length
  std::string lemmatizer = "builtin";
};

class Corpus {
 public:
  std::vector<Record> records;
  Vocabulary vocab;
  std::size_t skipped = 0;  // inputs empty after normalization

  void assign_token_ids();  // rebuild token_ids from vocab
  std::size_t count_label(int label) const;
};

// Headlines Dataset: two plain-text files, one headline per line.
Corpus load_headlines(const std::string& clickbait_file,
                      const std::string& non_clickbait_file,
                      const IngestOptions& opts);

// Builds a corpus from in-memory texts (tests, bindings).
Corpus corpus_from_texts(const std::vector<std::string>& texts,
                         const std::vector<int>& labels,
                         const IngestOptions& opts);

struct ChallengeData {
  Corpus a;  // labeled train split
  Corpus b;  // labeled test split
  Corpus c;  // unlabeled
  std::size_t malformed = 0;
  std::vector<std::string> warnings;
};

// Expects <dir>/{a,b,c}/instances.jsonl with truth.jsonl next to a and b.
ChallengeData load_challenge_dataset(const std::string& dir,
                                     const IngestOptions& opts);

// Line-delimited {id, tokens, label?, truth_mean?} cache.
void save_corpus_cache(const Corpus& corpus, const std::string& path);
Corpus load_corpus_cache(const std::string& path);

struct SplitResult {
  std::vector<std::size_t> strong;  // indices into corpus.records
  std::vector<std::size_t> pool;    // unlabeled pool (labels stripped logically)
  std::vector<int> fold_of;         // per record, in [0, folds)
  int folds = 0;
  double labeled_fraction = 1.0;
  std::uint64_t seed = 0;
};

// Deterministic, label-stratified. Folds partition the full corpus; the
// strong/pool partition is drawn over the full corpus as well, so per-fold
// training sets are intersections with the fold complement.
SplitResult make_splits(const Corpus& corpus, double labeled_fraction,
                        int folds, std::uint64_t seed);

// Embedding file: one line per token, token followed by whitespace-separated
// reals. Returns rows matching vocab ids; uncovered tokens stay zero.
struct EmbeddingLoadStats {
  std::size_t covered = 0;
  std::size_t dim = 0;
};
EmbeddingLoadStats load_embeddings_into(const std::string& path,
                                        const Vocabulary& vocab,
                                        std::vector<std::vector<double>>& table);

}  // namespace baitnet::corpus
