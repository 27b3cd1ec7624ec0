#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "baitnet/common.hpp"
#include "baitnet/corpus.hpp"

namespace baitnet::forest {

// Shannon entropy in bits of a binary count pair; 0*log 0 == 0.
double node_entropy(long count0, long count1);

// Sample-weighted mean of child entropies. Both sides must be non-empty.
double split_entropy(long left0, long left1, long right0, long right1);

struct TreeNode {
  int split_token = -1;  // feature index; -1 for leaves
  int left = -1;         // child when token absent
  int right = -1;        // child when token present
  long n0 = 0;           // class counts of samples reaching the node
  long n1 = 0;
  double node_entropy = 0.0;
  double split_entropy = 0.0;  // weighted child entropy, internal nodes only

  bool is_leaf() const { return split_token < 0; }
};

struct DecisionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root
  int predict(const std::unordered_set<int>& present) const;
};

struct DnfRule {
  std::vector<std::string> conjunct;  // required tokens, sorted
  int predicted_class = 0;
  long support = 0;
};

struct ForestConfig {
  int n_estimators = 50;
  int max_depth = 3;
  int min_split = 5;
  bool bootstrap = true;
  bool feature_subsample = true;  // sqrt(|vocab|) candidates per node
  double importance_threshold = 0.42;
  double leaf_purity_min = 0.9;
  std::uint64_t seed = 0;
};

// Metadata tying a fitted forest to the split it was trained on, so `train`
// can verify it consumes a compatible weak labeler.
struct SplitMeta {
  double labeled_fraction = 1.0;
  std::uint64_t seed = 0;
  int fold = -1;  // -1: no fold restriction
};

class ForestModel {
 public:
  ForestConfig config;
  SplitMeta split_meta;
  std::vector<std::string> feature_tokens;  // feature index -> token
  std::vector<DecisionTree> trees;
  std::vector<double> importance;  // per feature index
  std::vector<DnfRule> rules;

  int feature_id(const std::string& token) const;
  double importance_of(const std::string& token) const;

  // Majority vote over trees; ties go to non-clickbait.
  int predict_tokens(const std::vector<std::string>& tokens) const;

  // Importance table sorted by value (desc), tokens with importance > 0 only.
  std::vector<std::pair<std::string, double>> importance_table() const;

  // Per-token class-conditional frequency ratio diagnostic ("inclination").
  // Positive values lean clickbait. Not used by training.
  std::unordered_map<std::string, double> naive_inclination;

  // q_i = 1 iff the token's importance is positive and >= threshold.
  std::vector<std::uint8_t> attention_targets(
      const std::vector<std::string>& tokens, double threshold) const;

  void save(const std::string& path) const;
  static ForestModel load(const std::string& path);

 private:
  mutable std::unordered_map<std::string, int> feature_index_;
  void rebuild_index() const;
};

// Fits on the strong samples drawn from `corpus` at `strong_indices`.
// Features are binary token-presence indicators over the corpus vocabulary.
ForestModel fit_forest(const corpus::Corpus& corpus,
                       const std::vector<std::size_t>& strong_indices,
                       const ForestConfig& config);

// Rules re-extracted at a given threshold (the fitted model keeps the ones
// computed at config.importance_threshold).
std::vector<DnfRule> extract_rules(const ForestModel& model,
                                   const corpus::Corpus& corpus,
                                   const std::vector<std::size_t>& strong_indices,
                                   double importance_threshold, double leaf_purity_min);

struct LabeledSets {
  std::vector<corpus::WeakSample> weak;              // D_w
  std::vector<corpus::AugmentedStrongSample> strong; // D-hat_s
};

LabeledSets build_sets(const ForestModel& model, const corpus::Corpus& corpus,
                       const std::vector<std::size_t>& strong_indices,
                       const std::vector<std::size_t>& pool_indices);

// Human-readable table in the shape conjunct | class | support.
std::string format_rules(const std::vector<DnfRule>& rules);

}  // namespace baitnet::forest
