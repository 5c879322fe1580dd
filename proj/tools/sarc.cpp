// Command-line surface: train, eval, sweep, grad-check. Every run writes its
// artifacts into one directory with a manifest listing them. Exit codes:
// 0 success, 2 usage/configuration error, 1 runtime failure.
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <future>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sarc/report.hpp"
#include "sarc/trainer.hpp"
#include "sarc/verification.hpp"

namespace {

namespace fs = std::filesystem;

std::string iso_now() {
  std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

// Thrown for problems the user can fix from the command line; mapped to exit 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw UsageError("missing required " + what + " path");
  if (!sarc::file_exists(path)) throw UsageError("missing file: " + path);
}

std::vector<double> parse_value_list(const std::string& text, const std::string& flag) {
  std::vector<double> out;
  for (const auto& cell : sarc::split_string(text, ',')) {
    try {
      std::size_t used = 0;
      double v = std::stod(cell, &used);
      if (used != cell.size()) throw std::invalid_argument(cell);
      out.push_back(v);
    } catch (const std::exception&) {
      throw UsageError(flag + ": cannot parse \"" + cell + "\" as a number");
    }
  }
  return out;
}

std::array<double, 3> parse_ratios(const std::string& text) {
  auto v = parse_value_list(text, "--ratios");
  if (v.size() != 3) throw UsageError("--ratios: expected three comma-separated values, got " + std::to_string(v.size()));
  return {v[0], v[1], v[2]};
}

// Everything both train and sweep need from the command line.
struct RunOptions {
  std::string corpus, lexicon, embeddings, config_file, out_dir, stopwords, resume;
  std::string precision = "f32";
  bool neutral_sentiment = false;
  sarc::TrainConfig cfg;
};

struct Artifacts {
  fs::path dir;
  nlohmann::json manifest;
  std::vector<std::string> files;

  Artifacts(fs::path d, const std::string& command_line) : dir(std::move(d)) {
    fs::create_directories(dir);
    manifest["command"] = command_line;
    manifest["started"] = iso_now();
  }

  void write(const std::string& name, const std::string& content) {
    sarc::write_file((dir / name).string(), content);
    files.push_back(name);
  }

  void finish() {
    manifest["finished"] = iso_now();
    manifest["artifacts"] = files;
    std::string body = manifest.dump(2) + "\n";
    sarc::write_file((dir / "manifest.json").string(), body);
  }
};

std::string join_args(int argc, char** argv) {
  std::string out;
  for (int i = 0; i < argc; ++i) {
    if (i) out += ' ';
    out += argv[i];
  }
  return out;
}

fs::path default_run_dir(const std::string& command, std::uint64_t seed) {
  const char* root = std::getenv("SARC_RUN_ROOT");
  std::string base = root && *root ? root : "runs";
  std::time_t t = std::time(nullptr);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", std::gmtime(&t));
  return fs::path(base) / (command + "-seed" + std::to_string(seed) + "-" + stamp);
}

std::unique_ptr<sarc::SentimentScorer> make_scorer(const RunOptions& opt, sarc::SentimentLexicon& lexicon_slot) {
  if (opt.neutral_sentiment) return std::make_unique<sarc::NeutralScorer>();
  require_file(opt.lexicon, "lexicon (--lexicon, or pass --neutral-sentiment)");
  lexicon_slot = sarc::load_lexicon(opt.lexicon);
  return std::make_unique<sarc::LexiconScorer>(lexicon_slot);
}

// Cluster analytics over one split with the model as loaded: distribution
// table, top terms, per-comment assignments, and the bar chart.
template <typename T>
void write_cluster_artifacts(Artifacts& out, sarc::SarcModel<T>& model, const std::vector<sarc::TokenizedSample>& split,
                             const sarc::Vocabulary& vocab, const std::vector<std::string>& labels,
                             const sarc::TrainConfig& cfg, const std::string& stopword_path, sarc::RunRng& rng) {
  if (cfg.model.variant == sarc::Variant::no_cluster) return;
  auto stopwords = sarc::load_stopwords(stopword_path);
  auto eval = sarc::evaluate_split(model, split, labels, cfg.batch_size, cfg.alpha, cfg.weight_decay, rng);
  auto report = sarc::build_cluster_report(split, eval, vocab, labels, cfg.model.clusters, stopwords);
  out.write("cluster_report.tsv", sarc::cluster_counts_table(report));
  out.write("top_terms.tsv", sarc::top_terms_table(report));
  out.write("assignments.tsv", sarc::assignments_table(split, eval, cfg.model.clusters));
  out.write("cluster_distribution.svg", sarc::cluster_distribution_svg(report));
}

template <typename T>
int do_train(const RunOptions& opt, const std::string& command_line) {
  require_file(opt.corpus, "corpus (--corpus)");
  if (!opt.embeddings.empty()) require_file(opt.embeddings, "embedding file (--embeddings)");
  sarc::SentimentLexicon lexicon;
  auto scorer = make_scorer(opt, lexicon);
  sarc::Corpus corpus = sarc::load_corpus(opt.corpus);

  std::unique_ptr<sarc::CheckpointData<T>> resume;
  sarc::TrainConfig cfg = opt.cfg;
  if (!opt.resume.empty()) {
    resume = std::make_unique<sarc::CheckpointData<T>>(sarc::load_checkpoint<T>(opt.resume));
    // The checkpoint's stored config defines the run; only epochs may grow.
    int epochs = cfg.epochs;
    cfg = sarc::TrainConfig::from_json(resume->header.at("config"));
    if (epochs > cfg.epochs) {
      cfg.epochs = epochs;
      resume->header["config"] = cfg.to_json();
    }
  }

  fs::path dir = opt.out_dir.empty() ? default_run_dir("train", cfg.seed) : fs::path(opt.out_dir);
  Artifacts out(dir, command_line);
  out.manifest["seed"] = cfg.seed;
  out.manifest["corpus"] = opt.corpus;
  out.manifest["corpus_hash"] = sarc::hex64(sarc::hash_file(opt.corpus));
  if (!opt.lexicon.empty()) out.manifest["lexicon"] = opt.lexicon;

  auto run = sarc::train_model<T>(corpus, cfg, *scorer, opt.embeddings, resume.get());
  out.manifest["config"] = run.cfg.to_json();
  out.manifest["labels"] = run.label_names;
  out.manifest["vocab_hash"] = sarc::vocabulary_digest(run.vocab);
  out.manifest["best_epoch"] = run.best_epoch;
  out.manifest["best_metric"] = run.best_metric;

  for (const auto& row : run.history)
    std::cout << "epoch " << row.epoch << "  train_loss " << sarc::fmt_double(row.train_loss) << "  train_acc "
              << sarc::fmt_double(row.train.accuracy) << "  val_f1 " << sarc::fmt_double(row.val.f1) << "\n";
  std::cout << "best epoch " << run.best_epoch << " with validation "
            << (run.cfg.model.num_classes == 2 ? "f1 " : "macro_f1 ") << sarc::fmt_double(run.best_metric) << "\n";

  out.write("metrics.tsv", sarc::metrics_table(run.history));
  out.write("splits.tsv", sarc::split_table(corpus, run.split_indices));

  std::string corpus_digest = out.manifest["corpus_hash"].get<std::string>();
  auto last = sarc::make_checkpoint(run, corpus_digest);
  last.header["resumable"] = true;
  sarc::save_checkpoint((dir / "last.ckpt").string(), last);
  out.files.push_back("last.ckpt");

  sarc::CheckpointData<T> best;
  best.header = last.header;
  best.header["resumable"] = false;
  best.header["epoch"] = run.best_epoch;
  for (auto& [name, t] : run.best_params) best.tensors.emplace_back(name, t.clone());
  sarc::save_checkpoint((dir / "best.ckpt").string(), best);
  out.files.push_back("best.ckpt");

  sarc::load_best_params(run);
  write_cluster_artifacts(out, run.model, run.train_set, run.vocab, run.label_names, run.cfg, opt.stopwords, run.rng);
  out.finish();
  std::cout << "artifacts in " << dir.string() << "\n";
  return 0;
}

template <typename T>
int do_eval(const RunOptions& opt, const std::string& checkpoint_path, const std::string& split_name,
            const std::string& command_line) {
  sarc::SentimentLexicon lexicon;
  auto scorer = make_scorer(opt, lexicon);
  sarc::Corpus corpus = sarc::load_corpus(opt.corpus);
  auto ckpt = sarc::load_checkpoint<T>(checkpoint_path);
  sarc::TrainConfig cfg = sarc::TrainConfig::from_json(ckpt.header.at("config"));

  auto stored_labels = ckpt.header.at("labels").template get<std::vector<std::string>>();
  if (stored_labels != corpus.label_names)
    throw std::runtime_error("checkpoint label map does not match the corpus label map");

  sarc::SplitIndices splits = sarc::split(corpus.samples, {cfg.ratios, cfg.seed});
  std::vector<sarc::NewsSample> train_samples;
  for (int i : splits.train) train_samples.push_back(corpus.samples[i]);
  sarc::Vocabulary vocab = sarc::build_vocabulary(train_samples, cfg.model.embedding_dim);
  std::string stored_hash = ckpt.header.value("vocab_hash", "");
  if (sarc::vocabulary_digest(vocab) != stored_hash)
    throw std::runtime_error("vocabulary mismatch: corpus-derived hash " + sarc::vocabulary_digest(vocab) +
                             " vs checkpoint " + stored_hash + "; evaluate against the training corpus");

  sarc::RunRng rng(cfg.seed);
  sarc::SarcModel<T> model;
  model.init(vocab, cfg.model, "", rng);
  auto params = model.params();
  for (auto& [name, t] : params) {
    const sarc::Tensor<T>* stored = ckpt.find(name);
    if (!stored) throw std::runtime_error("checkpoint is missing parameter \"" + name + "\"");
    t.values() = stored->values();
  }

  const std::vector<int>* idx = split_name == "train" ? &splits.train
                                : split_name == "val" ? &splits.val
                                                      : &splits.test;
  std::vector<sarc::TokenizedSample> samples;
  for (int i : *idx) samples.push_back(sarc::tokenize_sample(corpus.samples[i], vocab, *scorer, cfg.caps));

  fs::path dir = opt.out_dir.empty() ? default_run_dir("eval", cfg.seed) : fs::path(opt.out_dir);
  Artifacts out(dir, command_line);
  out.manifest["seed"] = cfg.seed;
  out.manifest["corpus"] = opt.corpus;
  out.manifest["corpus_hash"] = sarc::hex64(sarc::hash_file(opt.corpus));
  out.manifest["checkpoint"] = checkpoint_path;
  out.manifest["checkpoint_epoch"] = ckpt.header.value("epoch", 0);
  out.manifest["split"] = split_name;
  out.manifest["config"] = cfg.to_json();

  auto eval = sarc::evaluate_split(model, samples, corpus.label_names, cfg.batch_size, cfg.alpha, cfg.weight_decay, rng);
  out.write("metrics.tsv", sarc::eval_metrics_table(split_name, eval.mean_loss, eval.metrics));
  std::cout << "split " << split_name << "  accuracy " << sarc::fmt_double(eval.metrics.accuracy) << "  f1 "
            << sarc::fmt_double(eval.metrics.f1) << "  macro_f1 " << sarc::fmt_double(eval.metrics.macro_f1)
            << "  rmse " << sarc::fmt_double(eval.metrics.rmse) << "\n";

  if (cfg.model.variant != sarc::Variant::no_cluster) {
    auto stopwords = sarc::load_stopwords(opt.stopwords);
    auto report = sarc::build_cluster_report(samples, eval, vocab, corpus.label_names, cfg.model.clusters, stopwords);
    out.write("cluster_report.tsv", sarc::cluster_counts_table(report));
    out.write("top_terms.tsv", sarc::top_terms_table(report));
    out.write("assignments.tsv", sarc::assignments_table(samples, eval, cfg.model.clusters));
    out.write("cluster_distribution.svg", sarc::cluster_distribution_svg(report));
  }
  out.finish();
  std::cout << "artifacts in " << dir.string() << "\n";
  return 0;
}

template <typename T>
int do_sweep(const RunOptions& opt, const std::string& parameter, const std::vector<double>& values, bool parallel,
             const std::string& command_line) {
  require_file(opt.corpus, "corpus (--corpus)");
  if (!opt.embeddings.empty()) require_file(opt.embeddings, "embedding file (--embeddings)");
  sarc::SentimentLexicon lexicon;
  auto scorer = make_scorer(opt, lexicon);
  sarc::Corpus corpus = sarc::load_corpus(opt.corpus);

  fs::path dir = opt.out_dir.empty() ? default_run_dir("sweep", opt.cfg.seed) : fs::path(opt.out_dir);
  Artifacts out(dir, command_line);
  out.manifest["seed"] = opt.cfg.seed;
  out.manifest["corpus"] = opt.corpus;
  out.manifest["corpus_hash"] = sarc::hex64(sarc::hash_file(opt.corpus));
  out.manifest["parameter"] = parameter;
  out.manifest["values"] = values;
  out.manifest["config"] = opt.cfg.to_json();

  // Values run sequentially by default; --parallel trains them concurrently
  // (one thread per value, each with its own tape and RNG). Either way the
  // rows land in value order and the artifacts are identical.
  std::vector<sarc::SweepValue> rows(values.size());
  auto run_one = [&](std::size_t i) {
    rows[i] = sarc::run_sweep<T>(corpus, opt.cfg, parameter, {values[i]}, *scorer, opt.embeddings).front();
  };
  if (parallel) {
    std::vector<std::future<void>> jobs;
    for (std::size_t i = 0; i < values.size(); ++i)
      jobs.push_back(std::async(std::launch::async, run_one, i));
    for (auto& j : jobs) j.get();
  } else {
    for (std::size_t i = 0; i < values.size(); ++i) run_one(i);
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    const sarc::SweepValue& row = rows[i];
    std::string label = parameter + "-" + sarc::fmt_double(row.value);
    Artifacts sub(dir / label, command_line);
    sub.manifest["value"] = row.value;
    sub.manifest["parameter"] = parameter;
    sub.write("metrics.tsv", sarc::metrics_table(row.history));
    sub.finish();
    out.files.push_back(label + "/metrics.tsv");
    std::cout << parameter << " " << sarc::fmt_double(row.value) << "  val_f1 " << sarc::fmt_double(row.val.f1)
              << "  test_f1 " << sarc::fmt_double(row.test.f1) << "\n";
  }
  out.write("sweep.tsv", sarc::sweep_table(parameter, rows));
  out.finish();
  std::cout << "artifacts in " << dir.string() << "\n";
  return 0;
}

int do_grad_check() {
  auto results = sarc::run_all_gradient_checks();
  double max_err = 0;
  for (const auto& r : results) {
    std::cout << r.name << "\t" << sarc::fmt_double(r.error) << "\n";
    max_err = std::max(max_err, r.error);
  }
  std::cout << "max relative error " << sarc::fmt_double(max_err) << " over " << results.size() << " checks\n";
  if (max_err > 1e-4) {
    std::cerr << "gradient check FAILED: " << sarc::fmt_double(max_err) << " exceeds 1e-4\n";
    return 1;
  }
  std::cout << "gradient check passed\n";
  return 0;
}

void add_config_flags(CLI::App* cmd, RunOptions& opt, std::string& ratios_text) {
  cmd->add_option("--config", opt.config_file, "JSON config file (flags override its fields)");
  cmd->add_option("--seed", opt.cfg.seed, "run seed");
  cmd->add_option("--epochs", opt.cfg.epochs, "training epochs");
  cmd->add_option("--batch-size", opt.cfg.batch_size, "samples per batch");
  cmd->add_option("--lr", opt.cfg.learning_rate, "Adam learning rate");
  cmd->add_option("--alpha", opt.cfg.alpha, "clustering loss weight");
  cmd->add_option("--weight-decay", opt.cfg.weight_decay, "L2 penalty coefficient");
  cmd->add_option("--k", opt.cfg.model.clusters, "number of role clusters");
  cmd->add_option("--dropout", opt.cfg.model.dropout, "classifier dropout rate");
  cmd->add_option("--variant", [&opt](const std::vector<std::string>& v) {
    opt.cfg.model.variant = sarc::parse_variant(v.back());
    return true;
  }, "model variant: full, no_news, no_cluster, no_sentiment, cls_loss_only");
  cmd->add_option("--ratios", ratios_text, "train,val,test split ratios (e.g. 0.7,0.1,0.2)");
  cmd->add_option("--embedding-dim", opt.cfg.model.embedding_dim, "word embedding width");
  cmd->add_option("--news-hidden", opt.cfg.model.news_hidden, "news recurrent width per direction");
  cmd->add_option("--comment-hidden", opt.cfg.model.comment_hidden, "comment recurrent width per direction");
  cmd->add_option("--projection-dim", opt.cfg.model.projection_dim, "clustering space width");
  cmd->add_option("--classifier-hidden", opt.cfg.model.classifier_hidden, "classifier hidden width");
  cmd->add_option("--news-key-dim", opt.cfg.model.news_key_dim, "news attention key width (0 = auto)");
  cmd->add_option("--comment-key-dim", opt.cfg.model.comment_key_dim, "comment attention key width (0 = auto)");
  cmd->add_option("--max-news-tokens", opt.cfg.caps.n_max, "news length cap");
  cmd->add_option("--max-comments", opt.cfg.caps.t_max, "comments per sample cap");
  cmd->add_option("--max-comment-tokens", opt.cfg.caps.l_max, "comment length cap");
  cmd->add_option("--target-train-accuracy", opt.cfg.target_train_accuracy,
                  "stop once training accuracy reaches this (0 = never)");
  cmd->add_option("--precision", opt.precision, "numeric precision: f32 or f64")
      ->check(CLI::IsMember({"f32", "f64"}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"news veracity classifier with sentiment-aware comment role clustering"};
  app.require_subcommand(1);

  RunOptions opt;
  std::string ratios_text, checkpoint_path, split_name = "test", parameter, values_text;

  CLI::App* train = app.add_subcommand("train", "train a model and write run artifacts");
  train->add_option("--corpus", opt.corpus, "corpus file (JSON lines)")->required();
  train->add_option("--lexicon", opt.lexicon, "sentiment lexicon (token TAB valence)");
  train->add_flag("--neutral-sentiment", opt.neutral_sentiment, "score every comment as neutral");
  train->add_option("--embeddings", opt.embeddings, "pretrained word embedding file (text format)");
  train->add_option("--out", opt.out_dir, "run directory (default under $SARC_RUN_ROOT or ./runs)");
  train->add_option("--stopwords", opt.stopwords, "stopword list for the cluster report");
  train->add_option("--resume", opt.resume, "continue training from a last-epoch checkpoint");
  add_config_flags(train, opt, ratios_text);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint and write cluster reports");
  eval->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  eval->add_option("--corpus", opt.corpus, "corpus file (JSON lines)")->required();
  eval->add_option("--lexicon", opt.lexicon, "sentiment lexicon");
  eval->add_flag("--neutral-sentiment", opt.neutral_sentiment, "score every comment as neutral");
  eval->add_option("--split", split_name, "split to evaluate")->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--out", opt.out_dir, "run directory");
  eval->add_option("--stopwords", opt.stopwords, "stopword list for the cluster report");

  CLI::App* sweep = app.add_subcommand("sweep", "train once per value of k or alpha");
  sweep->add_option("--param", parameter, "swept parameter")->required()->check(CLI::IsMember({"k", "alpha"}));
  sweep->add_option("--values", values_text, "comma-separated value list")->required();
  bool sweep_parallel = false;
  sweep->add_flag("--parallel", sweep_parallel, "train the values concurrently (results stay in value order)");
  sweep->add_option("--corpus", opt.corpus, "corpus file (JSON lines)")->required();
  sweep->add_option("--lexicon", opt.lexicon, "sentiment lexicon");
  sweep->add_flag("--neutral-sentiment", opt.neutral_sentiment, "score every comment as neutral");
  sweep->add_option("--embeddings", opt.embeddings, "pretrained word embedding file");
  sweep->add_option("--out", opt.out_dir, "run directory");
  sweep->add_option("--stopwords", opt.stopwords, "stopword list for the cluster report");
  add_config_flags(sweep, opt, ratios_text);

  CLI::App* gc = app.add_subcommand("grad-check", "run the finite-difference gradient audit");
  (void)gc;

  try {
    // Config file first, then re-parse so explicit flags win over its fields.
    app.parse(argc, argv);
    if (!opt.config_file.empty()) {
      require_file(opt.config_file, "config file (--config)");
      opt.cfg = sarc::TrainConfig::from_json(nlohmann::json::parse(sarc::read_file(opt.config_file)));
      app.clear();
      app.parse(argc, argv);
    }
    if (!ratios_text.empty()) opt.cfg.ratios = parse_ratios(ratios_text);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  std::string command_line = join_args(argc, argv);
  try {
    if (app.got_subcommand("grad-check")) return do_grad_check();
    if (app.got_subcommand("train")) {
      opt.cfg.check();
      std::string precision = opt.precision;
      if (!opt.resume.empty()) {
        // Continuing a run keeps its stored numeric width.
        require_file(opt.resume, "checkpoint (--resume)");
        precision = sarc::read_checkpoint_header(opt.resume).value("dtype", "f32");
      }
      return precision == "f64" ? do_train<double>(opt, command_line) : do_train<float>(opt, command_line);
    }
    if (app.got_subcommand("eval")) {
      require_file(checkpoint_path, "checkpoint (--checkpoint)");
      require_file(opt.corpus, "corpus (--corpus)");
      std::string dtype = sarc::read_checkpoint_header(checkpoint_path).value("dtype", "f32");
      return dtype == "f64" ? do_eval<double>(opt, checkpoint_path, split_name, command_line)
                            : do_eval<float>(opt, checkpoint_path, split_name, command_line);
    }
    if (app.got_subcommand("sweep")) {
      auto values = parse_value_list(values_text, "--values");
      opt.cfg.check();
      return opt.precision == "f64" ? do_sweep<double>(opt, parameter, values, sweep_parallel, command_line)
                                    : do_sweep<float>(opt, parameter, values, sweep_parallel, command_line);
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
