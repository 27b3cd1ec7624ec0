#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>

#include "baitnet/pipeline.hpp"

namespace py = pybind11;
using namespace baitnet;

namespace {

pipeline::Settings settings_from_dict(const py::dict& d) {
  pipeline::Settings s;
  std::map<std::string, std::string> values;
  for (auto item : d) {
    const std::string key = py::cast<std::string>(item.first);
    std::string value;
    if (py::isinstance<py::bool_>(item.second)) {
      value = py::cast<bool>(item.second) ? "true" : "false";
    } else {
      value = py::cast<std::string>(py::str(item.second));
    }
    values[key] = value;
  }
  pipeline::apply_config(s, values, "config dict");
  return s;
}

py::dict metrics_to_dict(const eval::MetricsReport& m) {
  py::dict d;
  d["accuracy"] = m.accuracy;
  d["precision"] = m.precision;
  d["recall"] = m.recall;
  d["f1"] = m.f1;
  d["roc_auc"] = m.roc_auc;
  d["mse"] = m.mse;
  d["tp"] = m.tp;
  d["fp"] = m.fp;
  d["tn"] = m.tn;
  d["fn"] = m.fn;
  d["n"] = m.n;
  return d;
}

struct PyForest {
  forest::ForestModel model;

  int predict_text(const std::string& text, const std::string& lemmatizer) const {
    return model.predict_tokens(
        corpus::normalize(text, corpus::lemmatizer_by_name(lemmatizer)));
  }
};

// A trained classifier plus everything needed to run it on raw text.
struct PyModel {
  pipeline::Settings settings;
  std::vector<std::string> vocab_tokens;
  std::unordered_map<std::string, int> vocab_index;
  std::shared_ptr<net::AttentionNet> model;
  std::shared_ptr<conf::ConfidenceNet> confidence;

  void index_vocab() {
    vocab_index.clear();
    for (std::size_t i = 0; i < vocab_tokens.size(); ++i) {
      vocab_index.emplace(vocab_tokens[i], static_cast<int>(i));
    }
  }

  std::vector<int> ids_for(const std::string& text) const {
    auto tokens = corpus::normalize(
        text, corpus::lemmatizer_by_name(settings.ingest.lemmatizer));
    if (tokens.empty()) throw DataError("text is empty after normalization");
    if (settings.ingest.max_tokens > 0 &&
        static_cast<int>(tokens.size()) > settings.ingest.max_tokens) {
      tokens.resize(static_cast<std::size_t>(settings.ingest.max_tokens));
    }
    std::vector<int> ids;
    for (const auto& t : tokens) {
      auto it = vocab_index.find(t);
      ids.push_back(it == vocab_index.end() ? 1 : it->second);
    }
    return ids;
  }

  double predict_proba(const std::string& text) const {
    return model->predict_proba(ids_for(text), settings.train.forward_options(false));
  }

  py::dict trace(const std::string& text) const {
    auto tr = model->trace(ids_for(text), settings.train.forward_options(false));
    py::dict d;
    d["b"] = tr.b;
    d["d"] = tr.d;
    d["a"] = tr.a;
    d["s"] = tr.s;
    d["p"] = tr.p;
    return d;
  }

  py::dict metrics(const std::vector<std::string>& texts,
                   const std::vector<int>& labels) const {
    if (texts.size() != labels.size()) {
      throw UsageError("texts and labels must have the same length");
    }
    std::vector<eval::Prediction> preds;
    for (std::size_t i = 0; i < texts.size(); ++i) {
      eval::Prediction p;
      p.p = predict_proba(texts[i]);
      p.label = labels[i];
      preds.push_back(p);
    }
    return metrics_to_dict(eval::compute_metrics(preds));
  }

  void save(const std::string& dir) const {
    corpus::Vocabulary vocab;
    for (std::size_t i = 4; i < vocab_tokens.size(); ++i) vocab.add(vocab_tokens[i]);
    pipeline::save_checkpoint(dir, settings, vocab, *model, confidence.get());
  }
};

PyModel load_model(const std::string& dir) {
  pipeline::LoadedModel loaded = pipeline::load_checkpoint(dir);
  PyModel out;
  out.settings = loaded.settings;
  out.vocab_tokens = loaded.vocab_tokens;
  out.model = std::move(loaded.model);
  out.confidence = std::move(loaded.confidence);
  out.index_vocab();
  return out;
}

std::pair<PyModel, py::dict> train_model(const std::vector<std::string>& texts,
                                         const std::vector<int>& labels,
                                         const py::dict& config,
                                         double labeled_fraction) {
  pipeline::Settings settings = settings_from_dict(config);
  corpus::Corpus corpus = corpus::corpus_from_texts(texts, labels, settings.ingest);
  corpus::SplitResult split =
      corpus::make_splits(corpus, labeled_fraction, 1, settings.train.seed);
  eval::FoldData data = eval::prepare_fold(corpus, split, -1, settings.train,
                                           nullptr, &settings.forest);

  Rng init(derive_seed(settings.train.seed, 1));
  net::NetDims dims{static_cast<int>(corpus.vocab.size()), settings.train.emb_dim,
                    settings.train.hidden_dim, settings.train.attn_dim};
  PyModel out;
  out.settings = settings;
  out.vocab_tokens = corpus.vocab.tokens();
  out.index_vocab();
  out.model = std::make_shared<net::AttentionNet>(dims, init);
  if (settings.train.variant.confidence) {
    Rng conf_rng(derive_seed(settings.train.seed, 2));
    out.confidence = std::make_shared<conf::ConfidenceNet>(
        2 * settings.train.hidden_dim, conf_rng, settings.train.conf_hidden,
        settings.train.bn_momentum, settings.train.bn_before_concat);
  }
  train::Trainer trainer(*out.model, out.confidence.get(), settings.train);
  trainer.set_attention_weights(data.weights);
  train::TrainResult result =
      trainer.train(data.strong, data.weak, data.validation, {});

  py::dict info;
  info["epochs_run"] = result.epochs_run;
  info["best_epoch"] = result.best_epoch;
  info["best_val_loss"] = result.best_val_loss;
  info["steps"] = result.steps;
  if (!data.validation_indices.empty()) {
    info["holdout_metrics"] = metrics_to_dict(eval::evaluate_model(
        *out.model, settings.train, corpus, data.validation_indices));
  }
  return {std::move(out), info};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Weakly supervised clickbait detection: C++ core bindings";

  py::register_exception<UsageError>(m, "UsageError");
  py::register_exception<DataError>(m, "DataError");
  py::register_exception<NumericError>(m, "NumericError");

  m.def(
      "normalize",
      [](const std::string& text, const std::string& lemmatizer) {
        return corpus::normalize(text, corpus::lemmatizer_by_name(lemmatizer));
      },
      py::arg("text"), py::arg("lemmatizer") = "builtin",
      "Lowercase, split, map numbers/URLs to sentinels, lemmatize.");

  m.def("decide_class", &corpus::decide_class, py::arg("truth_mean"),
        "1 (clickbait) iff truth_mean >= 0.5.");

  m.def("node_entropy", &forest::node_entropy, py::arg("count0"),
        py::arg("count1"), "Shannon entropy in bits of a binary count pair.");
  m.def("split_entropy", &forest::split_entropy, py::arg("left0"),
        py::arg("left1"), py::arg("right0"), py::arg("right1"),
        "Sample-weighted mean of child entropies.");

  m.def("gumbel_gate", &net::gumbel_gate_value, py::arg("b"), py::arg("tau"),
        py::arg("g1"), py::arg("g0"), py::arg("eps") = 1e-6,
        "Gate value for explicit Gumbel noise draws.");
  m.def("gate_inference", &net::gate_inference_value, py::arg("b"),
        py::arg("tau"), py::arg("eps") = 1e-6,
        "Deterministic gate (zero noise).");
  m.def(
      "gaussian_smooth",
      [](const std::vector<double>& values, int width, double sigma) {
        diff::Tape tape;
        diff::Matrix col(static_cast<Eigen::Index>(values.size()), 1);
        for (std::size_t i = 0; i < values.size(); ++i) {
          col(static_cast<Eigen::Index>(i), 0) = values[i];
        }
        diff::Var out =
            tape.conv1d(tape.constant(col), net::gaussian_kernel(width, sigma));
        std::vector<double> result(values.size());
        for (std::size_t i = 0; i < values.size(); ++i) {
          result[i] = tape.value(out)(static_cast<Eigen::Index>(i), 0);
        }
        return result;
      },
      py::arg("values"), py::arg("width") = 5, py::arg("sigma") = 1.0,
      "Unit-sum Gaussian smoothing with zero padding.");

  py::class_<PyForest>(m, "Forest")
      .def_static(
          "fit",
          [](const std::vector<std::string>& texts, const std::vector<int>& labels,
             int n_estimators, int max_depth, int min_split, std::uint64_t seed,
             double importance_threshold, const std::string& lemmatizer) {
            corpus::IngestOptions ingest;
            ingest.lemmatizer = lemmatizer;
            corpus::Corpus c = corpus::corpus_from_texts(texts, labels, ingest);
            std::vector<std::size_t> all(c.records.size());
            for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
            forest::ForestConfig cfg;
            cfg.n_estimators = n_estimators;
            cfg.max_depth = max_depth;
            cfg.min_split = min_split;
            cfg.seed = seed;
            cfg.importance_threshold = importance_threshold;
            return PyForest{forest::fit_forest(c, all, cfg)};
          },
          py::arg("texts"), py::arg("labels"), py::arg("n_estimators") = 50,
          py::arg("max_depth") = 3, py::arg("min_split") = 5, py::arg("seed") = 0,
          py::arg("importance_threshold") = 0.42,
          py::arg("lemmatizer") = "builtin")
      .def("predict", &PyForest::predict_text, py::arg("text"),
           py::arg("lemmatizer") = "builtin")
      .def("word_importance",
           [](const PyForest& f) {
             py::dict d;
             for (const auto& [token, value] : f.model.importance_table()) {
               d[py::str(token)] = value;
             }
             return d;
           })
      .def("rules",
           [](const PyForest& f) {
             py::list out;
             for (const auto& r : f.model.rules) {
               py::dict d;
               d["conjunct"] = r.conjunct;
               d["class"] = r.predicted_class;
               d["support"] = r.support;
               out.append(d);
             }
             return out;
           })
      .def(
          "attention_targets",
          [](const PyForest& f, const std::vector<std::string>& tokens,
             double threshold) {
            std::vector<int> q;
            for (auto v : f.model.attention_targets(tokens, threshold)) {
              q.push_back(v);
            }
            return q;
          },
          py::arg("tokens"), py::arg("threshold") = 0.42)
      .def("save", [](const PyForest& f, const std::string& path) {
        f.model.save(path);
      })
      .def_static("load", [](const std::string& path) {
        return PyForest{forest::ForestModel::load(path)};
      });

  py::class_<PyModel>(m, "Model")
      .def("predict_proba", &PyModel::predict_proba, py::arg("text"))
      .def("trace", &PyModel::trace, py::arg("text"))
      .def("metrics", &PyModel::metrics, py::arg("texts"), py::arg("labels"))
      .def("save", &PyModel::save, py::arg("directory"))
      .def_property_readonly(
          "variant", [](const PyModel& p) { return p.settings.train.variant.to_string(); })
      .def_property_readonly(
          "vocab_size", [](const PyModel& p) { return p.vocab_tokens.size(); });

  m.def("train_model", &train_model, py::arg("texts"), py::arg("labels"),
        py::arg("config") = py::dict(), py::arg("labeled_fraction") = 1.0,
        "Train on in-memory texts; returns (model, info).");
  m.def("load_model", &load_model, py::arg("directory"));
}
