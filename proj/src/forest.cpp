#include "baitnet/forest.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace baitnet::forest {

using nlohmann::json;

double node_entropy(long count0, long count1) {
  if (count0 < 0 || count1 < 0) throw std::invalid_argument("negative counts");
  const long total = count0 + count1;
  if (total == 0) throw std::invalid_argument("node_entropy: empty node");
  double h = 0.0;
  for (long c : {count0, count1}) {
    if (c == 0) continue;
    double p = static_cast<double>(c) / static_cast<double>(total);
    h -= p * std::log2(p);
  }
  return h;
}

double split_entropy(long left0, long left1, long right0, long right1) {
  const long nl = left0 + left1;
  const long nr = right0 + right1;
  if (nl == 0 || nr == 0) {
    throw std::invalid_argument("split_entropy: empty side");
  }
  const double n = static_cast<double>(nl + nr);
  return (nl / n) * node_entropy(left0, left1) +
         (nr / n) * node_entropy(right0, right1);
}

int DecisionTree::predict(const std::unordered_set<int>& present) const {
  int at = 0;
  while (!nodes[static_cast<std::size_t>(at)].is_leaf()) {
    const TreeNode& n = nodes[static_cast<std::size_t>(at)];
    at = present.count(n.split_token) ? n.right : n.left;
  }
  const TreeNode& leaf = nodes[static_cast<std::size_t>(at)];
  return leaf.n1 > leaf.n0 ? 1 : 0;
}

// ---------------------------------------------------------------------------
// Fitting

namespace {

struct FitContext {
  // Deduplicated token ids per sample, plus label.
  std::vector<std::vector<int>> sample_tokens;
  std::vector<int> labels;
  int n_features = 0;
};

struct SplitChoice {
  int feature = -1;
  double entropy = 0.0;  // weighted child entropy of the chosen split
  long l0 = 0, l1 = 0, r0 = 0, r1 = 0;
};

// Best split over `candidates` by minimal weighted child entropy. Ties break
// toward the smallest feature id so results are order-independent.
SplitChoice best_split(const FitContext& ctx, const std::vector<std::size_t>& rows,
                       const std::vector<int>& candidates, long n0, long n1) {
  // present[class] counts per candidate, gathered in one pass over samples.
  std::vector<long> pres0(candidates.size(), 0), pres1(candidates.size(), 0);
  std::unordered_map<int, std::size_t> cand_pos;
  cand_pos.reserve(candidates.size() * 2);
  for (std::size_t i = 0; i < candidates.size(); ++i) cand_pos[candidates[i]] = i;

  for (std::size_t row : rows) {
    const int y = ctx.labels[row];
    for (int tok : ctx.sample_tokens[row]) {
      auto it = cand_pos.find(tok);
      if (it == cand_pos.end()) continue;
      (y == 1 ? pres1 : pres0)[it->second] += 1;
    }
  }

  SplitChoice best;
  bool found = false;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const long r0 = pres0[i], r1 = pres1[i];
    const long l0 = n0 - r0, l1 = n1 - r1;
    if (r0 + r1 == 0 || l0 + l1 == 0) continue;  // degenerate, not proposed
    const double e = split_entropy(l0, l1, r0, r1);
    if (!found || e < best.entropy - 1e-12 ||
        (std::abs(e - best.entropy) <= 1e-12 && candidates[i] < best.feature)) {
      best = {candidates[i], e, l0, l1, r0, r1};
      found = true;
    }
  }
  return best;
}

void grow(const FitContext& ctx, DecisionTree& tree, int node_idx,
          std::vector<std::size_t> rows, int depth, const ForestConfig& cfg,
          Rng& rng) {
  TreeNode& node = tree.nodes[static_cast<std::size_t>(node_idx)];
  long n0 = 0, n1 = 0;
  for (std::size_t r : rows) (ctx.labels[r] == 1 ? n1 : n0) += 1;
  node.n0 = n0;
  node.n1 = n1;
  node.node_entropy = node_entropy(n0, n1);

  const bool pure = (n0 == 0 || n1 == 0);
  if (depth >= cfg.max_depth || pure ||
      static_cast<int>(rows.size()) < cfg.min_split) {
    return;  // leaf with majority counts
  }

  std::vector<int> candidates;
  if (cfg.feature_subsample) {
    const int k = std::max(
        1, static_cast<int>(std::lround(std::sqrt(static_cast<double>(ctx.n_features)))));
    // Partial Fisher-Yates over the feature range.
    std::vector<int> all(static_cast<std::size_t>(ctx.n_features));
    for (int i = 0; i < ctx.n_features; ++i) all[static_cast<std::size_t>(i)] = i;
    for (int i = 0; i < k && i < ctx.n_features; ++i) {
      std::size_t j = static_cast<std::size_t>(i) +
                      bounded(rng, static_cast<std::uint64_t>(ctx.n_features - i));
      std::swap(all[static_cast<std::size_t>(i)], all[j]);
      candidates.push_back(all[static_cast<std::size_t>(i)]);
    }
    std::sort(candidates.begin(), candidates.end());
  } else {
    candidates.resize(static_cast<std::size_t>(ctx.n_features));
    for (int i = 0; i < ctx.n_features; ++i) candidates[static_cast<std::size_t>(i)] = i;
  }

  SplitChoice choice = best_split(ctx, rows, candidates, n0, n1);
  if (choice.feature < 0) return;  // every candidate was degenerate

  std::vector<std::size_t> left_rows, right_rows;
  for (std::size_t r : rows) {
    const auto& toks = ctx.sample_tokens[r];
    const bool present =
        std::binary_search(toks.begin(), toks.end(), choice.feature);
    (present ? right_rows : left_rows).push_back(r);
  }
  rows.clear();
  rows.shrink_to_fit();

  const int left_idx = static_cast<int>(tree.nodes.size());
  tree.nodes.emplace_back();
  const int right_idx = static_cast<int>(tree.nodes.size());
  tree.nodes.emplace_back();
  TreeNode& self = tree.nodes[static_cast<std::size_t>(node_idx)];
  self.split_token = choice.feature;
  self.split_entropy = choice.entropy;
  self.left = left_idx;
  self.right = right_idx;

  grow(ctx, tree, left_idx, std::move(left_rows), depth + 1, cfg, rng);
  grow(ctx, tree, right_idx, std::move(right_rows), depth + 1, cfg, rng);
}

}  // namespace

ForestModel fit_forest(const corpus::Corpus& corpus,
                       const std::vector<std::size_t>& strong_indices,
                       const ForestConfig& config) {
  if (static_cast<int>(strong_indices.size()) < config.min_split) {
    throw DataError("fit_forest: need at least min_split samples");
  }

  FitContext ctx;
  ctx.n_features = static_cast<int>(corpus.vocab.size());
  ctx.sample_tokens.reserve(strong_indices.size());
  ctx.labels.reserve(strong_indices.size());
  long n_class[2] = {0, 0};
  for (std::size_t idx : strong_indices) {
    const auto& rec = corpus.records[idx];
    if (!rec.label) throw DataError("fit_forest: unlabeled sample in strong set");
    std::vector<int> toks = rec.headline.token_ids;
    std::sort(toks.begin(), toks.end());
    toks.erase(std::unique(toks.begin(), toks.end()), toks.end());
    ctx.sample_tokens.push_back(std::move(toks));
    ctx.labels.push_back(*rec.label);
    ++n_class[*rec.label];
  }
  if (n_class[0] == 0 || n_class[1] == 0) {
    throw DataError("fit_forest: training set has a single class");
  }

  ForestModel model;
  model.config = config;
  model.feature_tokens = corpus.vocab.tokens();

  const std::size_t n = ctx.labels.size();
  for (int t = 0; t < config.n_estimators; ++t) {
    Rng tree_rng(derive_seed(config.seed, static_cast<std::uint64_t>(t)));
    std::vector<std::size_t> rows;
    rows.reserve(n);
    if (config.bootstrap) {
      for (std::size_t i = 0; i < n; ++i) {
        rows.push_back(static_cast<std::size_t>(bounded(tree_rng, n)));
      }
    } else {
      for (std::size_t i = 0; i < n; ++i) rows.push_back(i);
    }
    DecisionTree tree;
    tree.nodes.emplace_back();
    grow(ctx, tree, 0, std::move(rows), 0, config, tree_rng);
    model.trees.push_back(std::move(tree));
  }

  // Mean decrease in weighted entropy across trees, scaled by 100.
  model.importance.assign(static_cast<std::size_t>(ctx.n_features), 0.0);
  for (const auto& tree : model.trees) {
    const double root_n =
        static_cast<double>(tree.nodes[0].n0 + tree.nodes[0].n1);
    for (const auto& node : tree.nodes) {
      if (node.is_leaf()) continue;
      const double frac =
          static_cast<double>(node.n0 + node.n1) / root_n;
      model.importance[static_cast<std::size_t>(node.split_token)] +=
          frac * (node.node_entropy - node.split_entropy);
    }
  }
  const double scale = 100.0 / static_cast<double>(config.n_estimators);
  for (double& v : model.importance) v *= scale;

  // Class-conditional frequency ratio diagnostic.
  std::vector<long> doc_count[2];
  doc_count[0].assign(static_cast<std::size_t>(ctx.n_features), 0);
  doc_count[1].assign(static_cast<std::size_t>(ctx.n_features), 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (int tok : ctx.sample_tokens[i]) {
      ++doc_count[ctx.labels[i]][static_cast<std::size_t>(tok)];
    }
  }
  for (int f = 0; f < ctx.n_features; ++f) {
    if (model.importance[static_cast<std::size_t>(f)] <= 0.0) continue;
    double p1 = (doc_count[1][static_cast<std::size_t>(f)] + 0.5) /
                (static_cast<double>(n_class[1]) + 1.0);
    double p0 = (doc_count[0][static_cast<std::size_t>(f)] + 0.5) /
                (static_cast<double>(n_class[0]) + 1.0);
    model.naive_inclination[model.feature_tokens[static_cast<std::size_t>(f)]] =
        std::log(p1 / p0);
  }

  model.rules = extract_rules(model, corpus, strong_indices,
                              config.importance_threshold, config.leaf_purity_min);
  return model;
}

// ---------------------------------------------------------------------------
// Model queries

void ForestModel::rebuild_index() const {
  feature_index_.clear();
  for (std::size_t i = 0; i < feature_tokens.size(); ++i) {
    feature_index_.emplace(feature_tokens[i], static_cast<int>(i));
  }
}

int ForestModel::feature_id(const std::string& token) const {
  if (feature_index_.empty() && !feature_tokens.empty()) rebuild_index();
  auto it = feature_index_.find(token);
  return it == feature_index_.end() ? -1 : it->second;
}

double ForestModel::importance_of(const std::string& token) const {
  int f = feature_id(token);
  return f < 0 ? 0.0 : importance[static_cast<std::size_t>(f)];
}

int ForestModel::predict_tokens(const std::vector<std::string>& tokens) const {
  std::unordered_set<int> present;
  for (const auto& t : tokens) {
    int f = feature_id(t);
    if (f >= 0) present.insert(f);
  }
  int votes1 = 0;
  for (const auto& tree : trees) votes1 += tree.predict(present);
  const int votes0 = static_cast<int>(trees.size()) - votes1;
  return votes1 > votes0 ? 1 : 0;  // tie -> non-clickbait
}

std::vector<std::pair<std::string, double>> ForestModel::importance_table() const {
  std::vector<std::pair<std::string, double>> out;
  for (std::size_t f = 0; f < importance.size(); ++f) {
    if (importance[f] > 0.0) out.emplace_back(feature_tokens[f], importance[f]);
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  return out;
}

std::vector<std::uint8_t> ForestModel::attention_targets(
    const std::vector<std::string>& tokens, double threshold) const {
  std::vector<std::uint8_t> q(tokens.size(), 0);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const double imp = importance_of(tokens[i]);
    if (imp > 0.0 && imp >= threshold) q[i] = 1;
  }
  return q;
}

// ---------------------------------------------------------------------------
// Rules

std::vector<DnfRule> extract_rules(const ForestModel& model,
                                   const corpus::Corpus& corpus,
                                   const std::vector<std::size_t>& strong_indices,
                                   double importance_threshold,
                                   double leaf_purity_min) {
  // conjunct (sorted feature ids) + class -> support
  std::map<std::pair<std::vector<int>, int>, long> merged;

  for (const auto& tree : model.trees) {
    struct Frame {
      int node;
      std::vector<int> present;
      bool ok;  // all present-tokens so far pass the importance threshold
    };
    std::vector<Frame> stack{{0, {}, true}};
    while (!stack.empty()) {
      Frame fr = std::move(stack.back());
      stack.pop_back();
      const TreeNode& n = tree.nodes[static_cast<std::size_t>(fr.node)];
      if (n.is_leaf()) {
        if (!fr.ok || fr.present.empty()) continue;
        const long total = n.n0 + n.n1;
        if (total == 0) continue;
        const double purity =
            static_cast<double>(std::max(n.n0, n.n1)) / static_cast<double>(total);
        if (purity < leaf_purity_min) continue;
        std::vector<int> conjunct = fr.present;
        std::sort(conjunct.begin(), conjunct.end());
        conjunct.erase(std::unique(conjunct.begin(), conjunct.end()),
                       conjunct.end());
        long support = 0;
        for (std::size_t idx : strong_indices) {
          const auto& ids = corpus.records[idx].headline.token_ids;
          bool all = true;
          for (int tok : conjunct) {
            if (std::find(ids.begin(), ids.end(), tok) == ids.end()) {
              all = false;
              break;
            }
          }
          if (all) ++support;
        }
        if (support < 1) continue;
        const int cls = n.n1 > n.n0 ? 1 : 0;
        auto key = std::make_pair(std::move(conjunct), cls);
        auto it = merged.find(key);
        if (it == merged.end()) {
          merged.emplace(std::move(key), support);
        } else {
          it->second = std::max(it->second, support);
        }
        continue;
      }
      Frame left{n.left, fr.present, fr.ok};
      stack.push_back(std::move(left));
      Frame right{n.right, fr.present, fr.ok};
      right.present.push_back(n.split_token);
      const double imp =
          model.importance[static_cast<std::size_t>(n.split_token)];
      if (!(imp > 0.0 && imp >= importance_threshold)) right.ok = false;
      stack.push_back(std::move(right));
    }
  }

  std::vector<DnfRule> rules;
  for (const auto& [key, support] : merged) {
    DnfRule r;
    for (int f : key.first) {
      r.conjunct.push_back(model.feature_tokens[static_cast<std::size_t>(f)]);
    }
    r.predicted_class = key.second;
    r.support = support;
    rules.push_back(std::move(r));
  }
  std::sort(rules.begin(), rules.end(), [](const DnfRule& a, const DnfRule& b) {
    if (a.support != b.support) return a.support > b.support;
    return a.conjunct < b.conjunct;
  });
  return rules;
}

std::string format_rules(const std::vector<DnfRule>& rules) {
  std::ostringstream os;
  os << std::left << std::setw(48) << "Rule" << std::setw(8) << "Class"
     << "Support\n";
  os << std::string(64, '-') << '\n';
  for (const auto& r : rules) {
    std::string conj;
    for (std::size_t i = 0; i < r.conjunct.size(); ++i) {
      if (i) conj += " AND ";
      conj += r.conjunct[i];
    }
    os << std::left << std::setw(48) << conj << std::setw(8)
       << (r.predicted_class == 1 ? "C" : "NC") << r.support << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Weak label sets

LabeledSets build_sets(const ForestModel& model, const corpus::Corpus& corpus,
                       const std::vector<std::size_t>& strong_indices,
                       const std::vector<std::size_t>& pool_indices) {
  LabeledSets sets;
  sets.strong.reserve(strong_indices.size());
  for (std::size_t idx : strong_indices) {
    const auto& rec = corpus.records[idx];
    if (!rec.label) throw DataError("build_sets: strong sample lacks a label");
    sets.strong.push_back({&rec.headline, *rec.label,
                           model.predict_tokens(rec.headline.tokens)});
  }
  sets.weak.reserve(pool_indices.size());
  for (std::size_t idx : pool_indices) {
    const auto& rec = corpus.records[idx];
    sets.weak.push_back(
        {&rec.headline, model.predict_tokens(rec.headline.tokens), std::nullopt});
  }
  return sets;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {
constexpr int kForestFormatVersion = 1;
}

void ForestModel::save(const std::string& path) const {
  json j;
  j["format"] = "baitnet-forest";
  j["version"] = kForestFormatVersion;
  j["config"] = {{"n_estimators", config.n_estimators},
                 {"max_depth", config.max_depth},
                 {"min_split", config.min_split},
                 {"bootstrap", config.bootstrap},
                 {"feature_subsample", config.feature_subsample},
                 {"importance_threshold", config.importance_threshold},
                 {"leaf_purity_min", config.leaf_purity_min},
                 {"seed", config.seed}};
  j["split_meta"] = {{"labeled_fraction", split_meta.labeled_fraction},
                     {"seed", split_meta.seed},
                     {"fold", split_meta.fold}};
  j["features"] = feature_tokens;
  json trees_json = json::array();
  for (const auto& tree : trees) {
    json nodes = json::array();
    for (const auto& n : tree.nodes) {
      nodes.push_back({{"t", n.split_token},
                       {"l", n.left},
                       {"r", n.right},
                       {"n0", n.n0},
                       {"n1", n.n1},
                       {"ne", n.node_entropy},
                       {"se", n.split_entropy}});
    }
    trees_json.push_back({{"nodes", std::move(nodes)}});
  }
  j["trees"] = std::move(trees_json);
  j["importance"] = importance;
  json rules_json = json::array();
  for (const auto& r : rules) {
    rules_json.push_back({{"conjunct", r.conjunct},
                          {"class", r.predicted_class},
                          {"support", r.support}});
  }
  j["rules"] = std::move(rules_json);
  j["naive_inclination"] = naive_inclination;

  std::ofstream os(path);
  if (!os) throw DataError("cannot write forest model: " + path);
  os << j.dump(1) << '\n';
}

ForestModel ForestModel::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open forest model: " + path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded() || j.value("format", "") != "baitnet-forest") {
    throw DataError("not a forest model file: " + path);
  }
  if (j.value("version", 0) != kForestFormatVersion) {
    throw DataError("unsupported forest model version in " + path);
  }
  ForestModel m;
  const auto& c = j.at("config");
  m.config.n_estimators = c.at("n_estimators").get<int>();
  m.config.max_depth = c.at("max_depth").get<int>();
  m.config.min_split = c.at("min_split").get<int>();
  m.config.bootstrap = c.at("bootstrap").get<bool>();
  m.config.feature_subsample = c.at("feature_subsample").get<bool>();
  m.config.importance_threshold = c.at("importance_threshold").get<double>();
  m.config.leaf_purity_min = c.at("leaf_purity_min").get<double>();
  m.config.seed = c.at("seed").get<std::uint64_t>();
  const auto& sm = j.at("split_meta");
  m.split_meta.labeled_fraction = sm.at("labeled_fraction").get<double>();
  m.split_meta.seed = sm.at("seed").get<std::uint64_t>();
  m.split_meta.fold = sm.at("fold").get<int>();
  m.feature_tokens = j.at("features").get<std::vector<std::string>>();
  for (const auto& tj : j.at("trees")) {
    DecisionTree tree;
    for (const auto& nj : tj.at("nodes")) {
      TreeNode n;
      n.split_token = nj.at("t").get<int>();
      n.left = nj.at("l").get<int>();
      n.right = nj.at("r").get<int>();
      n.n0 = nj.at("n0").get<long>();
      n.n1 = nj.at("n1").get<long>();
      n.node_entropy = nj.at("ne").get<double>();
      n.split_entropy = nj.at("se").get<double>();
      tree.nodes.push_back(n);
    }
    m.trees.push_back(std::move(tree));
  }
  m.importance = j.at("importance").get<std::vector<double>>();
  for (const auto& rj : j.at("rules")) {
    DnfRule r;
    r.conjunct = rj.at("conjunct").get<std::vector<std::string>>();
    r.predicted_class = rj.at("class").get<int>();
    r.support = rj.at("support").get<long>();
    m.rules.push_back(std::move(r));
  }
  if (j.contains("naive_inclination")) {
    m.naive_inclination =
        j.at("naive_inclination").get<std::unordered_map<std::string, double>>();
  }
  return m;
}

}  // namespace baitnet::forest
