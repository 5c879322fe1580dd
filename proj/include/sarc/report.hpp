// Run artifacts as plain delimited text: per-epoch metric tables, split
// membership, cluster distribution over veracity classes, per-cluster top
// terms, per-comment assignment export, and a small SVG bar chart. All
// formatting is fixed so identical runs produce byte-identical files.
#pragma once

#include <algorithm>
#include <map>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sarc/data.hpp"
#include "sarc/trainer.hpp"
#include "sarc/util.hpp"

namespace sarc {

// One token per line; blank lines skipped. Missing path -> empty list.
inline std::unordered_set<std::string> load_stopwords(const std::string& path) {
  std::unordered_set<std::string> out;
  if (path.empty()) return out;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open stopword file: " + path);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.insert(line);
  }
  return out;
}

inline void append_metric_cells(std::ostringstream& os, const MetricReport& m) {
  os << '\t' << fmt_double(m.accuracy) << '\t' << fmt_double(m.precision) << '\t' << fmt_double(m.recall) << '\t'
     << fmt_double(m.f1) << '\t' << fmt_double(m.macro_f1) << '\t' << fmt_double(m.rmse);
}

inline const char* kMetricHeader = "accuracy\tprecision\trecall\tf1\tmacro_f1\trmse";

// Two rows per epoch, one per split.
inline std::string metrics_table(const std::vector<EpochRow>& history) {
  std::ostringstream os;
  os << "epoch\tsplit\tloss\t" << kMetricHeader << '\n';
  for (const auto& row : history) {
    os << row.epoch << "\ttrain\t" << fmt_double(row.train_loss);
    append_metric_cells(os, row.train);
    os << '\n' << row.epoch << "\tval\t" << fmt_double(row.val_loss);
    append_metric_cells(os, row.val);
    os << '\n';
  }
  return os.str();
}

// Single-split metric table (evaluation runs).
inline std::string eval_metrics_table(const std::string& split_name, double mean_loss, const MetricReport& m) {
  std::ostringstream os;
  os << "split\tloss\t" << kMetricHeader << '\n' << split_name << '\t' << fmt_double(mean_loss);
  append_metric_cells(os, m);
  os << '\n';
  return os.str();
}

// Sample-to-split membership in corpus order.
inline std::string split_table(const Corpus& corpus, const SplitIndices& idx) {
  std::vector<const char*> names(corpus.samples.size(), "");
  for (int i : idx.train) names[i] = "train";
  for (int i : idx.val) names[i] = "val";
  for (int i : idx.test) names[i] = "test";
  std::ostringstream os;
  os << "id\tsplit\n";
  for (std::size_t i = 0; i < corpus.samples.size(); ++i) os << corpus.samples[i].id << '\t' << names[i] << '\n';
  return os.str();
}

struct ClusterReport {
  int clusters = 0;
  std::vector<std::string> class_names;
  std::vector<std::vector<long>> counts;  // clusters x classes, hard-assignment tallies
  std::vector<std::vector<std::pair<std::string, long>>> top_terms;  // per cluster: (token, count)
};

// Tallies hard assignments per (cluster, veracity class) and per-cluster term
// frequencies over the token ids the model saw. Padding and unknown tokens
// never count; stopwords are dropped from the term lists. Ties rank by count
// descending, then token ascending.
template <typename T>
ClusterReport build_cluster_report(const std::vector<TokenizedSample>& samples, const EvalOutput<T>& eval,
                                   const Vocabulary& vocab, const std::vector<std::string>& class_names, int clusters,
                                   const std::unordered_set<std::string>& stopwords, int top_n = 20) {
  ClusterReport report;
  report.clusters = clusters;
  report.class_names = class_names;
  report.counts.assign(clusters, std::vector<long>(class_names.size(), 0));
  std::vector<std::map<std::string, long>> freq(clusters);
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const auto& assigned = eval.hard[s];
    for (std::size_t c = 0; c < assigned.size(); ++c) {
      int k = assigned[c];
      ++report.counts[k][samples[s].label];
      for (int id : samples[s].comments[c]) {
        if (id == Vocabulary::kPad || id == Vocabulary::kUnk) continue;
        const std::string& token = vocab.token(id);
        if (!stopwords.count(token)) ++freq[k][token];
      }
    }
  }
  report.top_terms.resize(clusters);
  for (int k = 0; k < clusters; ++k) {
    std::vector<std::pair<std::string, long>> terms(freq[k].begin(), freq[k].end());
    std::sort(terms.begin(), terms.end(), [](const auto& a, const auto& b) {
      return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    if (static_cast<int>(terms.size()) > top_n) terms.resize(top_n);
    report.top_terms[k] = std::move(terms);
  }
  return report;
}

// Rows: cluster; columns: veracity class; cells: hard-assignment counts.
inline std::string cluster_counts_table(const ClusterReport& report) {
  std::ostringstream os;
  os << "cluster";
  for (const auto& name : report.class_names) os << '\t' << name;
  os << '\n';
  for (int k = 0; k < report.clusters; ++k) {
    os << k;
    for (long c : report.counts[k]) os << '\t' << c;
    os << '\n';
  }
  return os.str();
}

inline std::string top_terms_table(const ClusterReport& report) {
  std::ostringstream os;
  os << "cluster\trank\ttoken\tcount\n";
  for (int k = 0; k < report.clusters; ++k)
    for (std::size_t r = 0; r < report.top_terms[k].size(); ++r)
      os << k << '\t' << r + 1 << '\t' << report.top_terms[k][r].first << '\t' << report.top_terms[k][r].second
         << '\n';
  return os.str();
}

// Per-comment soft assignments: sample id, comment index within the sample,
// hard cluster, then the K membership probabilities.
template <typename T>
std::string assignments_table(const std::vector<TokenizedSample>& samples, const EvalOutput<T>& eval, int clusters) {
  std::ostringstream os;
  os << "sample_id\tcomment_idx\tcluster";
  for (int k = 0; k < clusters; ++k) os << "\tq_" << k;
  os << '\n';
  for (std::size_t s = 0; s < samples.size(); ++s)
    for (std::size_t c = 0; c < eval.hard[s].size(); ++c) {
      os << samples[s].id << '\t' << c << '\t' << eval.hard[s][c];
      for (int k = 0; k < clusters; ++k) os << '\t' << fmt_double(eval.soft[s][c][k]);
      os << '\n';
    }
  return os.str();
}

// Grouped bar chart of the cluster distribution, one group per cluster and
// one bar per veracity class.
inline std::string cluster_distribution_svg(const ClusterReport& report) {
  int classes = static_cast<int>(report.class_names.size());
  long peak = 1;
  for (const auto& row : report.counts)
    for (long c : row) peak = std::max(peak, c);
  const int bar_w = 28, gap = 10, group_gap = 34, chart_h = 220, margin = 40;
  int group_w = classes * (bar_w + gap) - gap;
  int width = margin * 2 + report.clusters * (group_w + group_gap) - group_gap;
  int height = chart_h + margin * 2;
  const char* palette[] = {"#4e79a7", "#e15759", "#76b7b2", "#f28e2b", "#59a14f", "#edc948"};
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (int k = 0; k < report.clusters; ++k) {
    int gx = margin + k * (group_w + group_gap);
    for (int c = 0; c < classes; ++c) {
      long v = report.counts[k][c];
      int h = static_cast<int>(static_cast<double>(v) / peak * chart_h);
      int x = gx + c * (bar_w + gap);
      int y = margin + chart_h - h;
      os << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << bar_w << "\" height=\"" << h << "\" fill=\""
         << palette[c % 6] << "\"><title>" << report.class_names[c] << ": " << v << "</title></rect>\n";
      os << "<text x=\"" << x + bar_w / 2 << "\" y=\"" << y - 4 << "\" font-size=\"11\" text-anchor=\"middle\">" << v
         << "</text>\n";
    }
    os << "<text x=\"" << gx + group_w / 2 << "\" y=\"" << margin + chart_h + 18
       << "\" font-size=\"12\" text-anchor=\"middle\">cluster " << k << "</text>\n";
  }
  for (int c = 0; c < classes; ++c) {
    int lx = margin + c * 110;
    os << "<rect x=\"" << lx << "\" y=\"" << height - 22 << "\" width=\"12\" height=\"12\" fill=\"" << palette[c % 6]
       << "\"/>\n";
    os << "<text x=\"" << lx + 16 << "\" y=\"" << height - 12 << "\" font-size=\"12\">" << report.class_names[c]
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

// Sweep summary: one row per swept value.
inline std::string sweep_table(const std::string& parameter, const std::vector<SweepValue>& rows) {
  std::ostringstream os;
  os << parameter << "\tbest_epoch";
  for (const char* split : {"val", "test"})
    os << '\t' << split << "_accuracy\t" << split << "_precision\t" << split << "_recall\t" << split << "_f1\t"
       << split << "_macro_f1\t" << split << "_rmse";
  os << '\n';
  for (const auto& row : rows) {
    os << fmt_double(row.value) << '\t' << row.best_epoch;
    append_metric_cells(os, row.val);
    append_metric_cells(os, row.test);
    os << '\n';
  }
  return os.str();
}

}  // namespace sarc
