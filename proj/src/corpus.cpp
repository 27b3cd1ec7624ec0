#include "baitnet/corpus.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace baitnet::corpus {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Normalization

Lemmatizer identity_lemmatizer() {
  return [](const std::string& t) { return t; };
}

Lemmatizer builtin_lemmatizer() {
  // Irregular plurals plus the time/measure units that show up constantly in
  // headlines. Values are never keys, so the map is idempotent.
  static const std::unordered_map<std::string, std::string> kLemmas = {
      {"days", "day"},       {"weeks", "week"},     {"months", "month"},
      {"years", "year"},     {"hours", "hour"},     {"minutes", "minute"},
      {"seconds", "second"}, {"men", "man"},        {"women", "woman"},
      {"children", "child"}, {"people", "people"},  {"feet", "foot"},
      {"teeth", "tooth"},    {"mice", "mouse"},     {"lives", "life"},
      {"wives", "wife"},     {"knives", "knife"},   {"leaves", "leaf"},
      {"ways", "way"},       {"times", "time"},
  };
  return [](const std::string& t) {
    auto it = kLemmas.find(t);
    return it == kLemmas.end() ? t : it->second;
  };
}

Lemmatizer lemmatizer_by_name(const std::string& name) {
  if (name == "identity") return identity_lemmatizer();
  if (name == "builtin") return builtin_lemmatizer();
  throw UsageError("unknown lemmatizer: " + name + " (expected identity|builtin)");
}

namespace {

bool is_sentinel(const std::string& t) {
  return t == kNumToken || t == kUrlToken || t == kUnkToken || t == kPadToken;
}

bool looks_like_url(const std::string& t) {
  auto starts = [&](const char* p) { return t.rfind(p, 0) == 0; };
  return starts("http://") || starts("https://") || starts("www.") ||
         t.find("://") != std::string::npos;
}

bool has_digit(const std::string& t) {
  return std::any_of(t.begin(), t.end(),
                     [](unsigned char c) { return std::isdigit(c) != 0; });
}

bool keep_char(unsigned char c) {
  return std::isalnum(c) != 0 || c >= 0x80;  // non-ASCII bytes pass through
}

}  // namespace

std::vector<std::string> normalize(const std::string& raw, const Lemmatizer& lemma) {
  std::vector<std::string> out;
  std::istringstream stream(raw);
  std::string word;
  while (stream >> word) {
    if (is_sentinel(word)) {
      out.push_back(word);
      continue;
    }
    std::string lowered;
    lowered.reserve(word.size());
    for (unsigned char c : word) {
      lowered.push_back(c < 0x80 ? static_cast<char>(std::tolower(c))
                                 : static_cast<char>(c));
    }
    if (looks_like_url(lowered)) {
      out.push_back(kUrlToken);
      continue;
    }
    if (has_digit(lowered)) {
      out.push_back(kNumToken);
      continue;
    }
    // Punctuation splits the word; each alphanumeric run is a token.
    std::string piece;
    auto flush = [&] {
      if (!piece.empty()) {
        out.push_back(lemma(piece));
        piece.clear();
      }
    };
    for (unsigned char c : lowered) {
      if (keep_char(c)) {
        piece.push_back(static_cast<char>(c));
      } else {
        flush();
      }
    }
    flush();
  }
  return out;
}

int decide_class(double truth_mean) {
  if (!(truth_mean >= 0.0 && truth_mean <= 1.0)) {
    throw DataError("truthMean out of [0,1]: " + std::to_string(truth_mean));
  }
  return truth_mean >= 0.5 ? 1 : 0;
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary() {
  for (const char* s : {kPadToken, kUnkToken, kNumToken, kUrlToken}) add(s);
}

int Vocabulary::add(const std::string& token) {
  auto it = index_.find(token);
  if (it != index_.end()) return it->second;
  int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  index_[token] = id;
  return id;
}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& docs) {
  std::unordered_map<std::string, long> freq;
  for (const auto& doc : docs) {
    for (const auto& t : doc) ++freq[t];
  }
  Vocabulary v;
  std::vector<std::pair<std::string, long>> items(freq.begin(), freq.end());
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  for (const auto& [tok, count] : items) {
    v.add(tok);
    v.freq_[tok] = count;
  }
  return v;
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? unk_id() : it->second;
}

int Vocabulary::lookup(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? -1 : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= static_cast<int>(tokens_.size())) {
    throw std::out_of_range("vocabulary id out of range: " + std::to_string(id));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

long Vocabulary::frequency(const std::string& token) const {
  auto it = freq_.find(token);
  return it == freq_.end() ? 0 : it->second;
}

// ---------------------------------------------------------------------------
// Corpus

void Corpus::assign_token_ids() {
  for (auto& rec : records) {
    rec.headline.token_ids.clear();
    rec.headline.token_ids.reserve(rec.headline.tokens.size());
    for (const auto& t : rec.headline.tokens) {
      rec.headline.token_ids.push_back(vocab.id(t));
    }
  }
}

std::size_t Corpus::count_label(int label) const {
  std::size_t n = 0;
  for (const auto& r : records) {
    if (r.label && *r.label == label) ++n;
  }
  return n;
}

namespace {

void finalize(Corpus& c) {
  std::vector<std::vector<std::string>> docs;
  docs.reserve(c.records.size());
  for (const auto& r : c.records) docs.push_back(r.headline.tokens);
  c.vocab = Vocabulary::build(docs);
  c.assign_token_ids();
}

void append_record(Corpus& c, std::string id, std::string raw,
                   std::optional<int> label, std::optional<double> truth_mean,
                   const Lemmatizer& lemma, int max_tokens) {
  auto tokens = normalize(raw, lemma);
  if (tokens.empty()) {
    ++c.skipped;
    return;
  }
  if (max_tokens > 0 && static_cast<int>(tokens.size()) > max_tokens) {
    tokens.resize(static_cast<std::size_t>(max_tokens));
  }
  Record rec;
  rec.headline.id = std::move(id);
  rec.headline.raw_text = std::move(raw);
  rec.headline.tokens = std::move(tokens);
  rec.label = label;
  rec.truth_mean = truth_mean;
  c.records.push_back(std::move(rec));
}

}  // namespace

Corpus load_headlines(const std::string& clickbait_file,
                      const std::string& non_clickbait_file,
                      const IngestOptions& opts) {
  Lemmatizer lemma = lemmatizer_by_name(opts.lemmatizer);
  Corpus c;
  auto ingest_file = [&](const std::string& path, int label, const char* prefix) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open headlines file: " + path);
    std::string line;
    long n = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      append_record(c, prefix + std::to_string(n++), line, label, std::nullopt,
                    lemma, opts.max_tokens);
    }
  };
  ingest_file(clickbait_file, 1, "cb-");
  ingest_file(non_clickbait_file, 0, "ncb-");
  finalize(c);
  return c;
}

Corpus corpus_from_texts(const std::vector<std::string>& texts,
                         const std::vector<int>& labels,
                         const IngestOptions& opts) {
  if (!labels.empty() && labels.size() != texts.size()) {
    throw UsageError("corpus_from_texts: labels size must match texts");
  }
  Lemmatizer lemma = lemmatizer_by_name(opts.lemmatizer);
  Corpus c;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    std::optional<int> label;
    if (!labels.empty()) label = labels[i];
    append_record(c, "t-" + std::to_string(i), texts[i], label, std::nullopt,
                  lemma, opts.max_tokens);
  }
  finalize(c);
  return c;
}

// ---------------------------------------------------------------------------
// Clickbait-Challenge

namespace {

struct RawInstance {
  std::string id;
  std::string text;
};

std::size_t read_instances(const std::string& path, std::vector<RawInstance>& out,
                           std::size_t& malformed) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open challenge file: " + path);
  std::string line;
  std::size_t read = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("id") || !j.contains("postText") ||
        !j["postText"].is_array()) {
      ++malformed;
      continue;
    }
    std::string text;
    for (const auto& part : j["postText"]) {
      if (!part.is_string()) continue;
      if (!text.empty()) text += ' ';
      text += part.get<std::string>();
    }
    std::string id = j["id"].is_string() ? j["id"].get<std::string>()
                                         : j["id"].dump();
    out.push_back({std::move(id), std::move(text)});
    ++read;
  }
  return read;
}

std::unordered_map<std::string, double> read_truth(const std::string& path,
                                                   std::size_t& malformed) {
  std::unordered_map<std::string, double> out;
  std::ifstream in(path);
  if (!in) throw DataError("cannot open truth file: " + path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("id") || !j.contains("truthMean")) {
      ++malformed;
      continue;
    }
    std::string id = j["id"].is_string() ? j["id"].get<std::string>()
                                         : j["id"].dump();
    out[id] = j["truthMean"].get<double>();
  }
  return out;
}

}  // namespace

ChallengeData load_challenge_dataset(const std::string& dir,
                                     const IngestOptions& opts) {
  Lemmatizer lemma = lemmatizer_by_name(opts.lemmatizer);
  ChallengeData data;

  struct SplitSpec {
    const char* name;
    Corpus* corpus;
    bool labeled;
    std::size_t expected;
  };
  SplitSpec specs[] = {
      {"a", &data.a, true, 19538},
      {"b", &data.b, true, 2495},
      {"c", &data.c, false, 80012},
  };

  std::vector<std::vector<std::string>> train_docs;
  for (auto& spec : specs) {
    std::string base = dir + "/" + spec.name;
    std::vector<RawInstance> raw;
    std::size_t read = read_instances(base + "/instances.jsonl", raw, data.malformed);
    std::unordered_map<std::string, double> truth;
    if (spec.labeled) truth = read_truth(base + "/truth.jsonl", data.malformed);

    for (auto& inst : raw) {
      std::optional<double> tm;
      std::optional<int> label;
      if (spec.labeled) {
        auto it = truth.find(inst.id);
        if (it == truth.end()) {
          ++data.malformed;
          continue;
        }
        tm = it->second;
        label = decide_class(*tm);
      }
      append_record(*spec.corpus, inst.id, inst.text, label, tm, lemma,
                    opts.max_tokens);
    }
    if (read != spec.expected) {
      std::ostringstream msg;
      msg << "split " << spec.name << ": expected " << spec.expected
          << " records, read " << read;
      data.warnings.push_back(msg.str());
    }
  }

  // One vocabulary over the training material (A and C); B maps through it.
  for (const Corpus* c : {&data.a, &data.c}) {
    for (const auto& r : c->records) train_docs.push_back(r.headline.tokens);
  }
  Vocabulary vocab = Vocabulary::build(train_docs);
  for (Corpus* c : {&data.a, &data.b, &data.c}) {
    c->vocab = vocab;
    c->assign_token_ids();
  }
  return data;
}

// ---------------------------------------------------------------------------
// Cache

void save_corpus_cache(const Corpus& corpus, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write corpus cache: " + path);
  for (const auto& r : corpus.records) {
    json j;
    j["id"] = r.headline.id;
    j["tokens"] = r.headline.tokens;
    if (r.label) j["label"] = *r.label;
    if (r.truth_mean) j["truth_mean"] = *r.truth_mean;
    os << j.dump() << '\n';
  }
}

Corpus load_corpus_cache(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus cache: " + path);
  Corpus c;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("id") || !j.contains("tokens")) {
      throw DataError("corpus cache line " + std::to_string(lineno) +
                      " is malformed: " + path);
    }
    Record rec;
    rec.headline.id = j["id"].get<std::string>();
    rec.headline.tokens = j["tokens"].get<std::vector<std::string>>();
    if (rec.headline.tokens.empty()) {
      ++c.skipped;
      continue;
    }
    if (j.contains("label")) rec.label = j["label"].get<int>();
    if (j.contains("truth_mean")) rec.truth_mean = j["truth_mean"].get<double>();
    c.records.push_back(std::move(rec));
  }
  std::vector<std::vector<std::string>> docs;
  for (const auto& r : c.records) docs.push_back(r.headline.tokens);
  c.vocab = Vocabulary::build(docs);
  c.assign_token_ids();
  return c;
}

// ---------------------------------------------------------------------------
// Splits

SplitResult make_splits(const Corpus& corpus, double labeled_fraction, int folds,
                        std::uint64_t seed) {
  if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0)) {
    throw UsageError("labeled_fraction must be in (0, 1], got " +
                     std::to_string(labeled_fraction));
  }
  if (folds < 1) throw UsageError("folds must be >= 1");

  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < corpus.records.size(); ++i) {
    const auto& r = corpus.records[i];
    if (!r.label) continue;
    if (*r.label != 0 && *r.label != 1) {
      throw DataError("label outside {0,1} on record " + r.headline.id);
    }
    by_class[*r.label].push_back(i);
  }
  if (by_class[0].empty() || by_class[1].empty()) {
    throw DataError("make_splits: both classes must be present");
  }

  SplitResult result;
  result.folds = folds;
  result.labeled_fraction = labeled_fraction;
  result.seed = seed;
  result.fold_of.assign(corpus.records.size(), -1);

  for (int cls = 0; cls < 2; ++cls) {
    auto idx = by_class[cls];
    const auto n = static_cast<long>(idx.size());
    const long n_strong = std::llround(labeled_fraction * static_cast<double>(n));
    if (folds >= 2 && n_strong < folds) {
      throw DataError("labeled_fraction " + std::to_string(labeled_fraction) +
                      " yields " + std::to_string(n_strong) + " class-" +
                      std::to_string(cls) + " samples, fewer than " +
                      std::to_string(folds) + " folds");
    }
    Rng strong_rng(derive_seed(seed, 100 + static_cast<std::uint64_t>(cls)));
    fisher_yates(idx, strong_rng);
    for (long i = 0; i < n; ++i) {
      (i < n_strong ? result.strong : result.pool).push_back(idx[i]);
    }

    auto fold_idx = by_class[cls];
    Rng fold_rng(derive_seed(seed, 200 + static_cast<std::uint64_t>(cls)));
    fisher_yates(fold_idx, fold_rng);
    for (std::size_t i = 0; i < fold_idx.size(); ++i) {
      result.fold_of[fold_idx[i]] = static_cast<int>(i % folds);
    }
  }
  std::sort(result.strong.begin(), result.strong.end());
  std::sort(result.pool.begin(), result.pool.end());
  return result;
}

// ---------------------------------------------------------------------------
// Embeddings

EmbeddingLoadStats load_embeddings_into(const std::string& path,
                                        const Vocabulary& vocab,
                                        std::vector<std::vector<double>>& table) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embedding file: " + path);
  EmbeddingLoadStats stats;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string token;
    ls >> token;
    int id = vocab.lookup(token);
    if (id < 0) continue;
    std::vector<double> row;
    double x;
    while (ls >> x) row.push_back(x);
    if (row.empty()) continue;
    if (stats.dim == 0) stats.dim = row.size();
    if (row.size() != stats.dim) {
      throw DataError("embedding file has inconsistent dimensions: " + path);
    }
    if (static_cast<std::size_t>(id) < table.size() &&
        table[static_cast<std::size_t>(id)].size() == row.size()) {
      table[static_cast<std::size_t>(id)] = std::move(row);
      ++stats.covered;
    } else if (static_cast<std::size_t>(id) < table.size()) {
      throw DataError("embedding width " + std::to_string(row.size()) +
                      " does not match table width " +
                      std::to_string(table[static_cast<std::size_t>(id)].size()));
    }
  }
  return stats;
}

}  // namespace baitnet::corpus
