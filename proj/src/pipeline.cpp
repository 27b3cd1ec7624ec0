#include "baitnet/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace baitnet::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file: " + path);
  std::map<std::string, std::string> out;
  std::map<std::string, int> first_line;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r") != std::string::npos) {
        throw UsageError(path + ":" + std::to_string(lineno) +
                         ": expected key=value");
      }
      continue;
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw UsageError(path + ":" + std::to_string(lineno) + ": empty key");
    }
    auto it = first_line.find(key);
    if (it != first_line.end()) {
      throw UsageError("config conflict: '" + key + "' set at " + path + ":" +
                       std::to_string(it->second) + " and " + path + ":" +
                       std::to_string(lineno));
    }
    first_line[key] = lineno;
    out[key] = value;
  }
  return out;
}

namespace {

double to_double(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw UsageError("config value for " + key + " is not a number: " + v);
  }
}

long to_long(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    long x = std::stol(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw UsageError("config value for " + key + " is not an integer: " + v);
  }
}

bool to_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw UsageError("config value for " + key + " is not a bool: " + v);
}

}  // namespace

void apply_config(Settings& s, const std::map<std::string, std::string>& values,
                  const std::string& source) {
  for (const auto& [key, v] : values) {
    if (key == "learning_rate") s.train.learning_rate = to_double(v, key);
    else if (key == "batch_size") s.train.batch_size = static_cast<int>(to_long(v, key));
    else if (key == "lambda") s.train.lambda = to_double(v, key);
    else if (key == "tau") s.train.tau = to_double(v, key);
    else if (key == "dropout_lstm") s.train.dropout_lstm = to_double(v, key);
    else if (key == "dropout_attn") s.train.dropout_attn = to_double(v, key);
    else if (key == "bn_momentum") s.train.bn_momentum = to_double(v, key);
    else if (key == "max_epochs") s.train.max_epochs = static_cast<int>(to_long(v, key));
    else if (key == "patience") s.train.patience = static_cast<int>(to_long(v, key));
    else if (key == "importance_threshold") {
      s.train.importance_threshold = to_double(v, key);
      s.forest.importance_threshold = to_double(v, key);
    } else if (key == "seed") {
      s.train.seed = static_cast<std::uint64_t>(to_long(v, key));
      s.forest.seed = s.train.seed;
    }
    else if (key == "attention_loss_on") {
      if (v != "gate" && v != "smoothed") {
        throw UsageError("attention_loss_on must be gate|smoothed, got " + v);
      }
      s.train.attention_loss_on = v;
    }
    else if (key == "variant") s.train.variant = net::VariantFlags::parse(v);
    else if (key == "emb_dim") s.train.emb_dim = static_cast<int>(to_long(v, key));
    else if (key == "hidden_dim") s.train.hidden_dim = static_cast<int>(to_long(v, key));
    else if (key == "attn_dim") s.train.attn_dim = static_cast<int>(to_long(v, key));
    else if (key == "conf_hidden") s.train.conf_hidden = static_cast<int>(to_long(v, key));
    else if (key == "max_tokens") {
      s.train.max_tokens = static_cast<int>(to_long(v, key));
      s.ingest.max_tokens = s.train.max_tokens;
    }
    else if (key == "validation_fraction") s.train.validation_fraction = to_double(v, key);
    else if (key == "gate_eps") s.train.gate_eps = to_double(v, key);
    else if (key == "smooth_width") s.train.smooth_width = static_cast<int>(to_long(v, key));
    else if (key == "smooth_sigma") s.train.smooth_sigma = to_double(v, key);
    else if (key == "bn_before_concat") s.train.bn_before_concat = to_bool(v, key);
    else if (key == "lemmatizer") s.ingest.lemmatizer = v;
    else if (key == "forest_estimators") s.forest.n_estimators = static_cast<int>(to_long(v, key));
    else if (key == "forest_max_depth") s.forest.max_depth = static_cast<int>(to_long(v, key));
    else if (key == "forest_min_split") s.forest.min_split = static_cast<int>(to_long(v, key));
    else if (key == "forest_bootstrap") s.forest.bootstrap = to_bool(v, key);
    else if (key == "forest_feature_subsample") s.forest.feature_subsample = to_bool(v, key);
    else if (key == "leaf_purity_min") s.forest.leaf_purity_min = to_double(v, key);
    else {
      throw UsageError("unknown config key '" + key + "' from " + source);
    }
  }
}

std::map<std::string, std::string> config_to_map(const Settings& s) {
  std::map<std::string, std::string> m;
  auto put_d = [&](const char* k, double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    m[k] = os.str();
  };
  put_d("learning_rate", s.train.learning_rate);
  m["batch_size"] = std::to_string(s.train.batch_size);
  put_d("lambda", s.train.lambda);
  put_d("tau", s.train.tau);
  put_d("dropout_lstm", s.train.dropout_lstm);
  put_d("dropout_attn", s.train.dropout_attn);
  put_d("bn_momentum", s.train.bn_momentum);
  m["max_epochs"] = std::to_string(s.train.max_epochs);
  m["patience"] = std::to_string(s.train.patience);
  put_d("importance_threshold", s.train.importance_threshold);
  m["seed"] = std::to_string(s.train.seed);
  m["attention_loss_on"] = s.train.attention_loss_on;
  m["variant"] = s.train.variant.to_string();
  m["emb_dim"] = std::to_string(s.train.emb_dim);
  m["hidden_dim"] = std::to_string(s.train.hidden_dim);
  m["attn_dim"] = std::to_string(s.train.attn_dim);
  m["conf_hidden"] = std::to_string(s.train.conf_hidden);
  m["max_tokens"] = std::to_string(s.train.max_tokens);
  put_d("validation_fraction", s.train.validation_fraction);
  put_d("gate_eps", s.train.gate_eps);
  m["smooth_width"] = std::to_string(s.train.smooth_width);
  put_d("smooth_sigma", s.train.smooth_sigma);
  m["bn_before_concat"] = s.train.bn_before_concat ? "true" : "false";
  m["lemmatizer"] = s.ingest.lemmatizer;
  m["forest_estimators"] = std::to_string(s.forest.n_estimators);
  m["forest_max_depth"] = std::to_string(s.forest.max_depth);
  m["forest_min_split"] = std::to_string(s.forest.min_split);
  m["forest_bootstrap"] = s.forest.bootstrap ? "true" : "false";
  m["forest_feature_subsample"] = s.forest.feature_subsample ? "true" : "false";
  put_d("leaf_purity_min", s.forest.leaf_purity_min);
  return m;
}

// ---------------------------------------------------------------------------
// Datasets

corpus::Corpus load_dataset(const DatasetSpec& spec,
                            const corpus::IngestOptions& ingest) {
  if (spec.kind == "headlines") {
    if (spec.clickbait_file.empty()) {
      throw UsageError("missing --clickbait-file for the headlines dataset");
    }
    if (spec.non_clickbait_file.empty()) {
      throw UsageError("missing --non-clickbait-file for the headlines dataset");
    }
    return corpus::load_headlines(spec.clickbait_file, spec.non_clickbait_file,
                                  ingest);
  }
  if (spec.kind == "cache") {
    if (spec.cache_file.empty()) throw UsageError("missing --cache for cache dataset");
    return corpus::load_corpus_cache(spec.cache_file);
  }
  throw UsageError("load_dataset: unsupported dataset kind '" + spec.kind +
                   "' here (challenge data uses its own protocol)");
}

std::uint64_t file_checksum(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot checksum missing file: " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    h = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), h);
    if (in.eof()) break;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Run dirs and manifests

std::string run_root() {
  if (const char* env = std::getenv("BAITNET_RUN_ROOT"); env && *env) {
    return env;
  }
  return "runs";
}

std::string make_run_dir(const std::string& command, std::uint64_t seed) {
  const auto now = std::chrono::system_clock::now();
  const auto secs =
      std::chrono::duration_cast<std::chrono::seconds>(now.time_since_epoch()).count();
  std::string base = run_root();
  fs::create_directories(base);
  std::string stem = base + "/" + command + "-" + std::to_string(secs) + "-s" +
                     std::to_string(seed);
  std::string dir = stem;
  int suffix = 1;
  while (fs::exists(dir)) dir = stem + "." + std::to_string(suffix++);
  fs::create_directories(dir);
  return dir;
}

namespace {

json dataset_to_json(const DatasetSpec& d) {
  json j;
  j["kind"] = d.kind;
  auto put_file = [&](const char* key, const std::string& path) {
    if (path.empty()) return;
    char hex[32];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(file_checksum(path)));
    j[key] = {{"path", path}, {"fnv1a64", hex}};
  };
  put_file("clickbait_file", d.clickbait_file);
  put_file("non_clickbait_file", d.non_clickbait_file);
  put_file("cache_file", d.cache_file);
  put_file("embeddings_file", d.embeddings_file);
  if (!d.challenge_dir.empty()) j["challenge_dir"] = d.challenge_dir;
  return j;
}

DatasetSpec dataset_from_json(const json& j) {
  DatasetSpec d;
  d.kind = j.value("kind", "");
  auto get_file = [&](const char* key) {
    return j.contains(key) ? j[key].value("path", "") : std::string();
  };
  d.clickbait_file = get_file("clickbait_file");
  d.non_clickbait_file = get_file("non_clickbait_file");
  d.cache_file = get_file("cache_file");
  d.embeddings_file = get_file("embeddings_file");
  d.challenge_dir = j.value("challenge_dir", "");
  return d;
}

}  // namespace

void Manifest::save(const std::string& path) const {
  json j;
  j["format"] = "baitnet-manifest";
  j["version"] = 1;
  j["tool_version"] = "0.1.0";
  j["command"] = command;
  j["dataset"] = dataset_to_json(dataset);
  j["config"] = config;
  j["labeled_fraction"] = labeled_fraction;
  j["folds"] = folds;
  j["seed"] = seed;
  j["split_recipe"] = split_recipe;
  if (!forest_path.empty()) j["forest_path"] = forest_path;
  j["elapsed_seconds"] = elapsed_seconds;
  std::ofstream os(path);
  if (!os) throw DataError("cannot write manifest: " + path);
  os << j.dump(1) << '\n';
}

Manifest Manifest::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open manifest: " + path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded() || j.value("format", "") != "baitnet-manifest") {
    throw DataError("not a manifest file: " + path);
  }
  Manifest m;
  m.command = j.value("command", "");
  m.dataset = dataset_from_json(j.at("dataset"));
  m.config = j.at("config").get<std::map<std::string, std::string>>();
  m.labeled_fraction = j.value("labeled_fraction", 1.0);
  m.folds = j.value("folds", 1);
  m.seed = j.value("seed", std::uint64_t{0});
  m.split_recipe = j.value("split_recipe", "");
  m.forest_path = j.value("forest_path", "");
  return m;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write: " + path);
  for (const auto& l : lines) os << l << '\n';
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

}  // namespace

void save_checkpoint(const std::string& dir, const Settings& settings,
                     const corpus::Vocabulary& vocab, net::AttentionNet& model,
                     conf::ConfidenceNet* confidence) {
  fs::create_directories(dir);
  model.store().save(dir + "/clf.params");
  if (confidence) confidence->store().save(dir + "/conf.params");
  write_lines(dir + "/vocab.txt", vocab.tokens());
  std::vector<std::string> cfg_lines;
  for (const auto& [k, v] : config_to_map(settings)) cfg_lines.push_back(k + "=" + v);
  write_lines(dir + "/config.kv", cfg_lines);
}

LoadedModel load_checkpoint(const std::string& dir) {
  LoadedModel loaded;
  auto cfg_map = parse_config_file(dir + "/config.kv");
  apply_config(loaded.settings, cfg_map, dir + "/config.kv");
  loaded.vocab_tokens = read_lines(dir + "/vocab.txt");
  if (loaded.vocab_tokens.empty()) throw DataError("empty vocab in " + dir);

  Rng rng(0);
  net::NetDims dims{static_cast<int>(loaded.vocab_tokens.size()),
                    loaded.settings.train.emb_dim, loaded.settings.train.hidden_dim,
                    loaded.settings.train.attn_dim};
  loaded.model = std::make_unique<net::AttentionNet>(dims, rng);
  loaded.model->store().load(dir + "/clf.params");
  if (fs::exists(dir + "/conf.params")) {
    Rng conf_rng(0);
    loaded.confidence = std::make_unique<conf::ConfidenceNet>(
        2 * loaded.settings.train.hidden_dim, conf_rng,
        loaded.settings.train.conf_hidden, loaded.settings.train.bn_momentum,
        loaded.settings.train.bn_before_concat);
    loaded.confidence->store().load(dir + "/conf.params");
  }
  return loaded;
}

std::vector<int> LoadedModel::token_ids(const std::vector<std::string>& tokens) const {
  // ids through the training vocabulary; unseen tokens map to <unk> (id 1)
  std::unordered_map<std::string, int> index;
  if (index_cache_.empty()) {
    for (std::size_t i = 0; i < vocab_tokens.size(); ++i) {
      index_cache_.emplace(vocab_tokens[i], static_cast<int>(i));
    }
  }
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) {
    auto it = index_cache_.find(t);
    ids.push_back(it == index_cache_.end() ? 1 : it->second);
  }
  return ids;
}

eval::MetricsReport evaluate_loaded(LoadedModel& loaded,
                                    const corpus::Corpus& corpus,
                                    const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw DataError("evaluate: empty dataset");
  std::vector<eval::Prediction> preds;
  const auto opts = loaded.settings.train.forward_options(false);
  for (std::size_t idx : indices) {
    const auto& rec = corpus.records[idx];
    if (!rec.label) continue;
    eval::Prediction p;
    p.p = loaded.model->predict_proba(loaded.token_ids(rec.headline.tokens), opts);
    p.label = *rec.label;
    p.truth_mean = rec.truth_mean;
    preds.push_back(p);
  }
  if (preds.empty()) throw DataError("evaluate: no labeled samples in selection");
  return eval::compute_metrics(preds);
}

void write_metrics_json(const eval::MetricsReport& m, const std::string& path) {
  json j;
  j["accuracy"] = m.accuracy;
  j["precision"] = m.precision;
  j["recall"] = m.recall;
  j["f1"] = m.f1;
  j["roc_auc"] = m.roc_auc;
  j["mse"] = m.mse;
  j["tp"] = m.tp;
  j["fp"] = m.fp;
  j["tn"] = m.tn;
  j["fn"] = m.fn;
  j["n"] = m.n;
  std::ofstream os(path);
  if (!os) throw DataError("cannot write metrics: " + path);
  os << j.dump(1) << '\n';
}

void dump_attention(LoadedModel& loaded, const corpus::Corpus& corpus,
                    const std::vector<std::size_t>& indices,
                    const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write attention dump: " + path);
  const auto opts = loaded.settings.train.forward_options(false);
  for (std::size_t idx : indices) {
    const auto& rec = corpus.records[idx];
    auto tr = loaded.model->trace(loaded.token_ids(rec.headline.tokens), opts);
    json j;
    j["id"] = rec.headline.id;
    j["tokens"] = rec.headline.tokens;
    j["b"] = tr.b;
    j["d"] = tr.d;
    j["a"] = tr.a;
    j["p"] = tr.p;
    os << j.dump() << '\n';
  }
}

void dump_confidence_scores(LoadedModel& loaded, const forest::ForestModel& forest,
                            const corpus::Corpus& corpus,
                            const std::vector<std::size_t>& indices,
                            const std::string& path) {
  if (!loaded.confidence) {
    throw UsageError("checkpoint has no confidence network parameters");
  }
  std::ofstream os(path);
  if (!os) throw DataError("cannot write confidence dump: " + path);
  const auto opts = loaded.settings.train.forward_options(false);
  for (std::size_t idx : indices) {
    const auto& rec = corpus.records[idx];
    const int weak = forest.predict_tokens(rec.headline.tokens);
    auto tr = loaded.model->trace(loaded.token_ids(rec.headline.tokens), opts);
    diff::Matrix sent(1, static_cast<Eigen::Index>(tr.s.size()));
    for (std::size_t i = 0; i < tr.s.size(); ++i) {
      sent(0, static_cast<Eigen::Index>(i)) = tr.s[i];
    }
    const double score = loaded.confidence->scores(sent, {weak})[0];
    json j;
    j["id"] = rec.headline.id;
    j["weak_label"] = weak;
    j["score"] = score;
    os << j.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Training runs

namespace {

void write_training_log_line(std::ofstream& os, const train::StepLog& l) {
  json j;
  j["step"] = l.step;
  j["batch_kind"] = l.batch_kind;
  j["l_c"] = l.l_c;
  j["l_a"] = l.l_a;
  j["l_conf"] = l.l_conf;
  j["mean_confidence"] = l.mean_confidence;
  j["learning_rate"] = l.learning_rate;
  os << j.dump() << '\n';
}

FoldArtifacts train_and_save(const corpus::Corpus& corpus,
                             eval::FoldData& data, int fold,
                             const Settings& settings,
                             const std::vector<std::vector<double>>* embeddings,
                             const std::string& out_dir) {
  fs::create_directories(out_dir);
  train::TrainConfig cfg = settings.train;
  if (fold >= 0) {
    cfg.seed = derive_seed(settings.train.seed, 5000 + static_cast<std::uint64_t>(fold));
  }

  Rng init_rng(derive_seed(cfg.seed, 1));
  net::NetDims dims{static_cast<int>(corpus.vocab.size()), cfg.emb_dim,
                    cfg.hidden_dim, cfg.attn_dim};
  net::AttentionNet model(dims, init_rng);
  if (embeddings) model.set_embedding_rows(*embeddings);

  std::unique_ptr<conf::ConfidenceNet> confidence;
  if (cfg.variant.confidence) {
    Rng conf_rng(derive_seed(cfg.seed, 2));
    confidence = std::make_unique<conf::ConfidenceNet>(
        2 * cfg.hidden_dim, conf_rng, cfg.conf_hidden, cfg.bn_momentum,
        cfg.bn_before_concat);
  }

  train::Trainer trainer(model, confidence.get(), cfg);
  trainer.set_attention_weights(data.weights);

  std::ofstream log_os(out_dir + "/training_log.jsonl");
  if (!log_os) throw DataError("cannot write training log in " + out_dir);

  FoldArtifacts art;
  art.fold = fold;
  art.result = trainer.train(data.strong, data.weak, data.validation,
                             [&](const train::StepLog& l) {
                               write_training_log_line(log_os, l);
                             });
  art.metrics = eval::evaluate_model(model, cfg, corpus, data.test_indices);

  json final_line;
  final_line["step"] = art.result.steps + 1;
  final_line["batch_kind"] = "eval";
  final_line["accuracy"] = art.metrics.accuracy;
  final_line["precision"] = art.metrics.precision;
  final_line["recall"] = art.metrics.recall;
  final_line["f1"] = art.metrics.f1;
  final_line["roc_auc"] = art.metrics.roc_auc;
  final_line["mse"] = art.metrics.mse;
  log_os << final_line.dump() << '\n';

  save_checkpoint(out_dir, settings, corpus.vocab, model, confidence.get());
  write_metrics_json(art.metrics, out_dir + "/metrics.json");
  if (data.forest) data.forest->save(out_dir + "/forest.json");
  art.checkpoint_dir = out_dir;
  return art;
}

}  // namespace

FoldArtifacts run_training_fold(const corpus::Corpus& corpus,
                                const corpus::SplitResult& split, int fold,
                                const Settings& settings,
                                const forest::ForestModel* prefit_forest,
                                const std::vector<std::vector<double>>* embeddings,
                                const std::string& out_dir) {
  eval::FoldData data =
      eval::prepare_fold(corpus, split, fold, settings.train, prefit_forest,
                         &settings.forest);
  if (fold < 0) {
    // Holdout mode: no test fold exists, so the early-stopping holdout
    // doubles as the evaluation set.
    data.test_indices = data.validation_indices;
  }
  // Keep the weak labeler with the checkpoint, prefit or not.
  if (prefit_forest && !data.forest) data.forest = *prefit_forest;
  return train_and_save(corpus, data, fold, settings, embeddings, out_dir);
}

FoldArtifacts run_training_challenge(const corpus::ChallengeData& challenge,
                                     double labeled_fraction,
                                     const Settings& settings,
                                     const std::vector<std::vector<double>>* embeddings,
                                     const std::string& out_dir) {
  // Strong/pool partition over split A; the pool is bootstrapped with C.
  corpus::SplitResult split =
      corpus::make_splits(challenge.a, labeled_fraction, 1, settings.train.seed);

  eval::FoldData data =
      eval::prepare_fold(challenge.a, split, -1, settings.train, nullptr,
                         &settings.forest);
  if (settings.train.variant.weak) {
    const forest::ForestModel* model = data.forest ? &*data.forest : nullptr;
    if (model == nullptr) throw DataError("challenge training expected a forest");
    for (const auto& rec : challenge.c.records) {
      train::TrainSample s;
      s.token_ids = rec.headline.token_ids;
      s.label = model->predict_tokens(rec.headline.tokens);
      s.q = model->attention_targets(rec.headline.tokens,
                                     settings.train.importance_threshold);
      data.weak.push_back(std::move(s));
    }
    long c0 = 0, c1 = 0;
    for (const auto* set : {&data.strong, &data.weak}) {
      for (const auto& s : *set) {
        for (std::uint8_t qi : s.q) (qi ? c1 : c0) += 1;
      }
    }
    data.weights = train::AttentionClassWeights::from_counts(c0, c1);
  }

  // Evaluate on all of B.
  eval::FoldData b_view = std::move(data);
  b_view.test_indices.clear();
  for (std::size_t i = 0; i < challenge.b.records.size(); ++i) {
    if (challenge.b.records[i].label) b_view.test_indices.push_back(i);
  }
  return train_and_save(challenge.b, b_view, -1, settings, embeddings, out_dir);
}

}  // namespace baitnet::pipeline
