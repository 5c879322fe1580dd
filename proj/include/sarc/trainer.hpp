// End-to-end training: split -> vocabulary -> tokenize -> init -> epoch loop
// (seeded shuffle, forward, backward, Adam) with per-epoch train/validation
// metrics, best-validation snapshotting, checkpoint resume, and parameter
// sweeps. Everything is deterministic given (seed, config, corpus).
#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sarc/adam.hpp"
#include "sarc/checkpoint.hpp"
#include "sarc/data.hpp"
#include "sarc/model.hpp"
#include "sarc/rng.hpp"
#include "sarc/sentiment.hpp"
#include "sarc/util.hpp"

namespace sarc {

struct TrainConfig {
  ModelConfig model;
  double learning_rate = 1e-3;
  int batch_size = 8;
  int epochs = 20;
  double alpha = 0.05;
  double weight_decay = 0.0;
  std::uint64_t seed = 42;
  std::array<double, 3> ratios{0.7, 0.1, 0.2};
  SequenceCaps caps;
  double target_train_accuracy = 0.0;  // > 0 stops training once reached

  void check() const {
    model.check();
    if (learning_rate <= 0) throw std::invalid_argument("train config: learning rate must be positive");
    if (batch_size < 1) throw std::invalid_argument("train config: batch size must be at least 1");
    if (epochs < 0) throw std::invalid_argument("train config: epochs must be non-negative");
    if (alpha < 0) throw std::invalid_argument("train config: alpha must be non-negative");
    if (weight_decay < 0) throw std::invalid_argument("train config: weight decay must be non-negative");
    if (target_train_accuracy < 0 || target_train_accuracy > 1)
      throw std::invalid_argument("train config: target train accuracy must lie in [0, 1]");
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["learning_rate"] = learning_rate;
    j["batch_size"] = batch_size;
    j["epochs"] = epochs;
    j["alpha"] = alpha;
    j["weight_decay"] = weight_decay;
    j["seed"] = seed;
    j["ratios"] = ratios;
    j["target_train_accuracy"] = target_train_accuracy;
    j["caps"] = {{"news_tokens", caps.n_max}, {"comments", caps.t_max}, {"comment_tokens", caps.l_max}};
    j["model"] = {{"embedding_dim", model.embedding_dim},
                  {"news_hidden", model.news_hidden},
                  {"comment_hidden", model.comment_hidden},
                  {"news_key_dim", model.news_key_dim},
                  {"comment_key_dim", model.comment_key_dim},
                  {"projection_dim", model.projection_dim},
                  {"clusters", model.clusters},
                  {"classifier_hidden", model.classifier_hidden},
                  {"num_classes", model.num_classes},
                  {"dropout", model.dropout},
                  {"variant", variant_name(model.variant)}};
    return j;
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.alpha = j.value("alpha", c.alpha);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.seed = j.value("seed", c.seed);
    if (j.contains("ratios")) c.ratios = j.at("ratios").get<std::array<double, 3>>();
    c.target_train_accuracy = j.value("target_train_accuracy", c.target_train_accuracy);
    if (j.contains("caps")) {
      const auto& k = j.at("caps");
      c.caps.n_max = k.value("news_tokens", c.caps.n_max);
      c.caps.t_max = k.value("comments", c.caps.t_max);
      c.caps.l_max = k.value("comment_tokens", c.caps.l_max);
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      c.model.embedding_dim = m.value("embedding_dim", c.model.embedding_dim);
      c.model.news_hidden = m.value("news_hidden", c.model.news_hidden);
      c.model.comment_hidden = m.value("comment_hidden", c.model.comment_hidden);
      c.model.news_key_dim = m.value("news_key_dim", c.model.news_key_dim);
      c.model.comment_key_dim = m.value("comment_key_dim", c.model.comment_key_dim);
      c.model.projection_dim = m.value("projection_dim", c.model.projection_dim);
      c.model.clusters = m.value("clusters", c.model.clusters);
      c.model.classifier_hidden = m.value("classifier_hidden", c.model.classifier_hidden);
      c.model.num_classes = m.value("num_classes", c.model.num_classes);
      c.model.dropout = m.value("dropout", c.model.dropout);
      if (m.contains("variant")) c.model.variant = parse_variant(m.at("variant").get<std::string>());
    }
    return c;
  }
};

struct EpochRow {
  int epoch = 0;          // 1-based; 0 marks evaluation of the untrained model
  double train_loss = 0;  // mean total loss per sample over the epoch's batches
  double val_loss = 0;    // eval-mode mean total loss on the validation split
  MetricReport train, val;
};

// Binary tasks select on fake-positive F1, multi-class on macro-F1.
inline double selection_metric(const MetricReport& r, int num_classes) {
  return num_classes == 2 ? r.f1 : r.macro_f1;
}

template <typename T>
struct EvalOutput {
  MetricReport metrics;
  double mean_loss = 0;
  std::vector<int> predictions;                        // argmax class per sample
  std::vector<std::vector<int>> hard;                  // per sample, cluster per real comment
  std::vector<std::vector<std::vector<double>>> soft;  // per sample, per comment, K memberships
};

// Eval-mode pass over samples in their given order. Dropout is off, so no
// RNG draws happen and the training stream is untouched.
template <typename T>
EvalOutput<T> evaluate_split(SarcModel<T>& model, const std::vector<TokenizedSample>& samples,
                             const std::vector<std::string>& label_names, int batch_size, double alpha,
                             double weight_decay, RunRng& rng) {
  if (samples.empty()) throw std::invalid_argument("evaluate: empty evaluation set");
  int n = static_cast<int>(samples.size());
  int classes = model.cfg.num_classes;
  Tensor<T> probs({n, classes});
  std::vector<int> labels(n);
  EvalOutput<T> out;
  out.hard.resize(n);
  out.soft.resize(n);
  double loss_sum = 0;
  int row = 0;
  for (auto& batch : make_batches(samples, batch_size)) {
    auto fwd = model.forward(batch, false, rng, alpha, weight_decay);
    loss_sum += static_cast<double>(fwd.total.values()[0]) * batch.size;
    for (int b = 0; b < batch.size; ++b, ++row) {
      labels[row] = batch.labels[b];
      for (int c = 0; c < classes; ++c) probs.at(row, c) = fwd.probs.at(b, c);
      const Tensor<T>& q = fwd.sample_assignments[b];
      if (q.numel() == 0) continue;
      out.hard[row] = hard_assignments(q);
      out.soft[row].resize(q.rows());
      for (int i = 0; i < q.rows(); ++i) {
        out.soft[row][i].resize(q.cols());
        for (int k = 0; k < q.cols(); ++k) out.soft[row][i][k] = static_cast<double>(q.at(i, k));
      }
    }
  }
  out.metrics = compute_metrics(probs, labels, label_names);
  out.mean_loss = loss_sum / n;
  out.predictions = argmax_rows(probs);
  return out;
}

template <typename T>
struct TrainResult {
  TrainConfig cfg;  // resolved: num_classes filled from the corpus
  SarcModel<T> model;
  AdamState<T> adam;
  RunRng rng{0};
  Vocabulary vocab{1};
  std::vector<std::string> label_names;
  SplitIndices split_indices;
  std::vector<TokenizedSample> train_set, val_set, test_set;
  std::vector<EpochRow> history;  // only epochs run by this call (resume included)
  int completed_epochs = 0;
  int best_epoch = 0;
  double best_metric = -1;
  MetricReport best_val;
  NamedTensors<T> best_params;  // value snapshots, same names as model.params()
};

namespace detail {

template <typename T>
NamedTensors<T> snapshot_params(NamedTensors<T>& params) {
  NamedTensors<T> out;
  out.reserve(params.size());
  for (auto& [name, t] : params) out.emplace_back(name, t.clone());
  return out;
}

template <typename T>
void assign_values(NamedTensors<T>& dst, const NamedTensors<T>& src) {
  for (auto& [name, t] : dst) {
    const Tensor<T>* s = nullptr;
    for (const auto& [sn, st] : src)
      if (sn == name) {
        s = &st;
        break;
      }
    if (!s) throw std::runtime_error("parameter \"" + name + "\" missing from snapshot");
    if (s->numel() != t.numel())
      throw std::runtime_error("parameter \"" + name + "\" has " + std::to_string(s->numel()) +
                               " values, expected " + std::to_string(t.numel()));
    t.values() = s->values();
  }
}

}  // namespace detail

inline std::string vocabulary_digest(const Vocabulary& vocab) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& t : vocab.tokens()) {
    h = fnv1a64(t.data(), t.size(), h);
    h = fnv1a64("\n", 1, h);
  }
  return hex64(h);
}

template <typename T>
CheckpointData<T> make_checkpoint(TrainResult<T>& run, const std::string& corpus_digest = "") {
  CheckpointData<T> ckpt;
  ckpt.header["format"] = 1;
  ckpt.header["epoch"] = run.completed_epochs;
  ckpt.header["best_epoch"] = run.best_epoch;
  ckpt.header["best_metric"] = run.best_metric;
  ckpt.header["adam_step"] = run.adam.step_count;
  ckpt.header["rng_state"] = run.rng.state();
  ckpt.header["config"] = run.cfg.to_json();
  ckpt.header["labels"] = run.label_names;
  ckpt.header["vocab"] = run.vocab.tokens();
  ckpt.header["vocab_hash"] = vocabulary_digest(run.vocab);
  ckpt.header["corpus_hash"] = corpus_digest;
  for (auto& [name, t] : run.model.params()) {
    ckpt.tensors.emplace_back(name, t.clone());
    auto mi = run.adam.m.find(name);
    if (mi != run.adam.m.end()) {
      Tensor<T> m(t.shape(), mi->second);
      Tensor<T> v(t.shape(), run.adam.v.at(name));
      ckpt.tensors.emplace_back("adam.m." + name, std::move(m));
      ckpt.tensors.emplace_back("adam.v." + name, std::move(v));
    }
  }
  for (auto& [name, t] : run.best_params) ckpt.tensors.emplace_back("best." + name, t.clone());
  return ckpt;
}

namespace detail {

// Restores parameters, moments, best snapshot, and RNG state into a freshly
// initialized run. Returns the epoch the checkpoint was saved after.
template <typename T>
int restore_checkpoint(TrainResult<T>& run, const CheckpointData<T>& ckpt) {
  if (!ckpt.header.value("resumable", true))
    throw std::runtime_error(
        "checkpoint is a model-selection snapshot, not a training state; resume from the last-epoch checkpoint");
  nlohmann::json stored = ckpt.header.value("config", nlohmann::json::object());
  nlohmann::json current = run.cfg.to_json();
  if (stored != current)
    throw std::runtime_error("checkpoint config does not match the requested run; refusing to resume");
  std::string stored_vocab = ckpt.header.value("vocab_hash", "");
  if (stored_vocab != vocabulary_digest(run.vocab))
    throw std::runtime_error("checkpoint vocabulary hash " + stored_vocab +
                             " does not match the corpus-derived vocabulary " + vocabulary_digest(run.vocab));
  auto params = run.model.params();
  run.best_params.clear();
  for (auto& [name, t] : params) {
    const Tensor<T>* stored_t = ckpt.find(name);
    if (!stored_t) throw std::runtime_error("checkpoint is missing parameter \"" + name + "\"");
    if (stored_t->numel() != t.numel())
      throw std::runtime_error("checkpoint parameter \"" + name + "\" has " +
                               std::to_string(stored_t->numel()) + " values, expected " +
                               std::to_string(t.numel()));
    t.values() = stored_t->values();
    if (const Tensor<T>* m = ckpt.find("adam.m." + name)) {
      run.adam.m[name] = m->values();
      const Tensor<T>* v = ckpt.find("adam.v." + name);
      if (!v) throw std::runtime_error("checkpoint has first but not second moment for \"" + name + "\"");
      run.adam.v[name] = v->values();
    }
    if (const Tensor<T>* b = ckpt.find("best." + name)) run.best_params.emplace_back(name, b->clone());
  }
  run.adam.step_count = ckpt.header.value("adam_step", 0L);
  run.best_epoch = ckpt.header.value("best_epoch", 0);
  run.best_metric = ckpt.header.value("best_metric", -1.0);
  run.rng.set_state(ckpt.header.at("rng_state").template get<std::string>());
  return ckpt.header.value("epoch", 0);
}

}  // namespace detail

// Full training run. The model's class count always comes from the corpus
// label map. Passing a checkpoint resumes it: the continued trajectory is
// bit-identical to a run that never stopped.
template <typename T>
TrainResult<T> train_model(const Corpus& corpus, const TrainConfig& config, const SentimentScorer& scorer,
                           const std::string& embedding_path, const CheckpointData<T>* resume = nullptr) {
  TrainResult<T> out;
  out.cfg = config;
  out.cfg.model.num_classes = corpus.num_classes();
  out.cfg.check();
  const TrainConfig& cfg = out.cfg;
  out.label_names = corpus.label_names;
  out.split_indices = split(corpus.samples, {cfg.ratios, cfg.seed});

  std::vector<NewsSample> train_samples;
  train_samples.reserve(out.split_indices.train.size());
  for (int i : out.split_indices.train) train_samples.push_back(corpus.samples[i]);
  out.vocab = build_vocabulary(train_samples, cfg.model.embedding_dim);
  auto tokenize_split = [&](const std::vector<int>& idx, std::vector<TokenizedSample>& dst) {
    dst.reserve(idx.size());
    for (int i : idx) dst.push_back(tokenize_sample(corpus.samples[i], out.vocab, scorer, cfg.caps));
  };
  tokenize_split(out.split_indices.train, out.train_set);
  tokenize_split(out.split_indices.val, out.val_set);
  tokenize_split(out.split_indices.test, out.test_set);

  out.rng = RunRng(cfg.seed);
  out.model.init(out.vocab, cfg.model, embedding_path, out.rng);
  int start_epoch = 0;
  if (resume) start_epoch = detail::restore_checkpoint(out, *resume);
  out.completed_epochs = start_epoch;
  auto params = out.model.params();
  int n_train = static_cast<int>(out.train_set.size());
  int num_classes = corpus.num_classes();

  for (int epoch = start_epoch + 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<int> order(n_train);
    std::iota(order.begin(), order.end(), 0);
    out.rng.shuffle(order);
    std::vector<TokenizedSample> shuffled;
    shuffled.reserve(n_train);
    for (int i : order) shuffled.push_back(out.train_set[i]);
    double loss_sum = 0;
    for (auto& batch : make_batches(shuffled, cfg.batch_size)) {
      Tape<T> tape;
      typename Tape<T>::Scope scope(tape);
      auto fwd = out.model.forward(batch, true, out.rng, cfg.alpha, cfg.weight_decay);
      tape.backward(fwd.total);
      out.adam.step(params, cfg.learning_rate);
      loss_sum += static_cast<double>(fwd.total.values()[0]) * batch.size;
    }
    EpochRow row;
    row.epoch = epoch;
    row.train_loss = loss_sum / n_train;
    row.train = evaluate_split(out.model, out.train_set, out.label_names, cfg.batch_size, cfg.alpha,
                               cfg.weight_decay, out.rng)
                    .metrics;
    auto val_eval =
        evaluate_split(out.model, out.val_set, out.label_names, cfg.batch_size, cfg.alpha, cfg.weight_decay, out.rng);
    row.val = val_eval.metrics;
    row.val_loss = val_eval.mean_loss;
    out.history.push_back(row);
    out.completed_epochs = epoch;
    double metric = selection_metric(row.val, num_classes);
    if (metric > out.best_metric) {
      out.best_metric = metric;
      out.best_epoch = epoch;
      out.best_val = row.val;
      out.best_params = detail::snapshot_params(params);
    }
    if (cfg.target_train_accuracy > 0 && row.train.accuracy >= cfg.target_train_accuracy) break;
  }

  if (out.history.empty() && out.best_params.empty()) {
    // Nothing trained (epochs=0): report and retain the initial model.
    auto train_eval =
        evaluate_split(out.model, out.train_set, out.label_names, cfg.batch_size, cfg.alpha, cfg.weight_decay, out.rng);
    auto val_eval =
        evaluate_split(out.model, out.val_set, out.label_names, cfg.batch_size, cfg.alpha, cfg.weight_decay, out.rng);
    EpochRow row;
    row.epoch = start_epoch;
    row.train_loss = train_eval.mean_loss;
    row.val_loss = val_eval.mean_loss;
    row.train = train_eval.metrics;
    row.val = val_eval.metrics;
    out.history.push_back(row);
    out.best_epoch = start_epoch;
    out.best_metric = selection_metric(row.val, num_classes);
    out.best_val = row.val;
    out.best_params = detail::snapshot_params(params);
  }
  return out;
}

// Copies the best-epoch snapshot back into the live model (for test-set
// evaluation and checkpoint export of the selected model).
template <typename T>
void load_best_params(TrainResult<T>& run) {
  auto params = run.model.params();
  detail::assign_values(params, run.best_params);
}

struct SweepValue {
  double value = 0;
  int best_epoch = 0;
  MetricReport val;   // validation metrics at the selected epoch
  MetricReport test;  // test metrics with the selected parameters
  std::vector<EpochRow> history;
};

// One full train/eval per value with a shared seed; "k" takes integral
// values >= 2, "alpha" non-negative reals.
template <typename T>
std::vector<SweepValue> run_sweep(const Corpus& corpus, const TrainConfig& base, const std::string& parameter,
                                  const std::vector<double>& values, const SentimentScorer& scorer,
                                  const std::string& embedding_path) {
  if (values.empty()) throw std::invalid_argument("sweep: empty value list");
  if (parameter != "k" && parameter != "alpha")
    throw std::invalid_argument("sweep: unknown parameter \"" + parameter + "\" (expected k or alpha)");
  std::vector<SweepValue> table;
  for (double v : values) {
    TrainConfig cfg = base;
    if (parameter == "k") {
      if (v != static_cast<int>(v) || v < 2)
        throw std::invalid_argument("sweep: k value " + fmt_double(v) + " must be an integer >= 2");
      cfg.model.clusters = static_cast<int>(v);
    } else {
      if (v < 0) throw std::invalid_argument("sweep: alpha value " + fmt_double(v) + " must be non-negative");
      cfg.alpha = v;
    }
    auto run = train_model<T>(corpus, cfg, scorer, embedding_path);
    load_best_params(run);
    auto test_eval = evaluate_split(run.model, run.test_set, run.label_names, run.cfg.batch_size, run.cfg.alpha,
                                    run.cfg.weight_decay, run.rng);
    SweepValue row;
    row.value = v;
    row.best_epoch = run.best_epoch;
    row.val = run.best_val;
    row.test = test_eval.metrics;
    row.history = std::move(run.history);
    table.push_back(std::move(row));
  }
  return table;
}

}  // namespace sarc
