// Feature fusion, the two-layer softmax classifier, the joint training
// objective (classification + weighted clustering terms) and evaluation
// metrics.
#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "sarc/encoder.hpp"
#include "sarc/rng.hpp"
#include "sarc/tensor.hpp"

namespace sarc {

template <typename T>
struct ClassifierParams {
  Tensor<T> w1, b1;  // fusion dim -> hidden
  Tensor<T> w2, b2;  // hidden -> classes
  double dropout_rate = 0.5;

  void init(int fusion_dim, int hidden, int classes, RunRng& rng) {
    w1 = init_matrix<T>(fusion_dim, hidden, rng);
    b1 = Tensor<T>({1, hidden});
    w2 = init_matrix<T>(hidden, classes, rng);
    b2 = Tensor<T>({1, classes});
  }

  void collect(NamedTensors<T>& out, const std::string& prefix) {
    out.emplace_back(prefix + ".w1", w1);
    out.emplace_back(prefix + ".b1", b1);
    out.emplace_back(prefix + ".w2", w2);
    out.emplace_back(prefix + ".b2", b2);
  }
};

// f = [v_A ; flatten(C_K)] — news features first, then the role matrix
// row-major.
template <typename T>
Tensor<T> fuse(const Tensor<T>& news_pooled, const Tensor<T>& role_features) {
  if (news_pooled.rows() != 1)
    throw std::invalid_argument("fuse: news features must be a single row, got " +
                                shape_str(news_pooled.shape()));
  Tensor<T> flat = reshape(role_features, {1, role_features.rows() * role_features.cols()});
  return concat_cols(news_pooled, flat);
}

// Softmax(W2 Dropout(ReLU(W1 f + b1)) + b2); eval mode skips dropout.
template <typename T>
Tensor<T> classify(const Tensor<T>& fused, const ClassifierParams<T>& p, bool train, RunRng& rng) {
  Tensor<T> hidden = relu(add(matmul(fused, p.w1), p.b1));
  hidden = dropout(hidden, train ? p.dropout_rate : 0.0, rng, train);
  return softmax_rows(add(matmul(hidden, p.w2), p.b2));
}

// Mean cross-entropy over the batch with one-hot targets.
template <typename T>
Tensor<T> classification_loss(const Tensor<T>& probs, const std::vector<int>& labels) {
  int batch = probs.rows(), classes = probs.cols();
  if (static_cast<int>(labels.size()) != batch)
    throw std::invalid_argument("classification_loss: " + std::to_string(labels.size()) + " labels for " +
                                std::to_string(batch) + " rows");
  Tensor<T> onehot({batch, classes});
  for (int i = 0; i < batch; ++i) {
    if (labels[i] < 0 || labels[i] >= classes)
      throw std::invalid_argument("classification_loss: label " + std::to_string(labels[i]) + " outside 0.." +
                                  std::to_string(classes - 1));
    onehot.at(i, labels[i]) = T(1);
  }
  return scale(sum(mul(onehot, log(probs))), T(-1) / T(batch));
}

// Mean alignment between soft assignments and similarities over real
// comments, negated so that pulling features toward their centers lowers the
// loss. Both inputs stack the real comment rows of the whole batch;
// real_comments is that row count (the averaging denominator).
template <typename T>
Tensor<T> intra_loss(const Tensor<T>& assignments, const Tensor<T>& similarities, int real_comments) {
  if (real_comments == 0) return Tensor<T>::scalar(T(0));
  if (assignments.rows() != similarities.rows() || assignments.cols() != similarities.cols())
    throw std::invalid_argument("intra_loss: shape mismatch: " + shape_str(assignments.shape()) + " vs " +
                                shape_str(similarities.shape()));
  return scale(sum(mul(assignments, similarities)), T(-1) / T(real_comments));
}

// Mean pairwise cosine between distinct normalized centers (ordered pairs);
// driving it down pushes the centers apart.
template <typename T>
Tensor<T> inter_loss(const Tensor<T>& centers_n) {
  int k = centers_n.rows();
  if (k < 2) throw std::invalid_argument("inter_loss: need at least 2 centers, got " + std::to_string(k));
  Tensor<T> gram = matmul(centers_n, transpose(centers_n));
  Tensor<T> offdiag({k, k});
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) offdiag.at(i, j) = i == j ? T(0) : T(1);
  return scale(sum(mul(gram, offdiag)), T(1) / T(k * (k - 1)));
}

// L = L_cls + alpha (L_intra + L_inter). alpha = 0 still adds the exact zero
// product, so the ablation path is bit-identical to weighting by zero.
template <typename T>
Tensor<T> total_loss(const Tensor<T>& cls, const Tensor<T>& intra, const Tensor<T>& inter, double alpha) {
  if (alpha < 0) throw std::invalid_argument("total_loss: alpha must be nonnegative, got " + std::to_string(alpha));
  return add(cls, scale(add(intra, inter), T(alpha)));
}

struct MetricReport {
  double accuracy = 0;
  double precision = 0;  // binary, fake as the positive class
  double recall = 0;
  double f1 = 0;
  double macro_f1 = 0;
  double rmse = 0;
};

// Row argmax; ties go to the lowest index.
template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& probs) {
  std::vector<int> out(probs.rows());
  for (int i = 0; i < probs.rows(); ++i) {
    int best = 0;
    for (int j = 1; j < probs.cols(); ++j)
      if (probs.at(i, j) > probs.at(i, best)) best = j;
    out[i] = best;
  }
  return out;
}

// Index of the positive class for binary precision/recall: a label literally
// named "fake", else "false", else class 1.
inline int fake_class_index(const std::vector<std::string>& label_names) {
  for (std::size_t i = 0; i < label_names.size(); ++i)
    if (label_names[i] == "fake") return static_cast<int>(i);
  for (std::size_t i = 0; i < label_names.size(); ++i)
    if (label_names[i] == "false") return static_cast<int>(i);
  return 1;
}

// Accuracy, fake-positive P/R/F1, macro-F1 over all classes, and a
// confidence-weighted RMSE: per item the error is 1 - p(chosen) when the
// argmax is right and p(chosen) when it is wrong, except items whose gold
// class is "unverified", which score 0 when predicted as such and p(chosen)
// otherwise. Errors are averaged quadratically.
template <typename T>
MetricReport compute_metrics(const Tensor<T>& probs, const std::vector<int>& labels,
                             const std::vector<std::string>& label_names) {
  int n = probs.rows();
  int classes = probs.cols();
  if (n == 0) throw std::invalid_argument("compute_metrics: empty evaluation set");
  if (static_cast<int>(labels.size()) != n)
    throw std::invalid_argument("compute_metrics: " + std::to_string(labels.size()) + " labels for " +
                                std::to_string(n) + " rows");
  std::vector<int> preds = argmax_rows(probs);
  MetricReport r;
  int correct = 0;
  std::vector<int> tp(classes, 0), fp(classes, 0), fn(classes, 0);
  int unverified = -1;
  for (std::size_t i = 0; i < label_names.size(); ++i)
    if (label_names[i] == "unverified") unverified = static_cast<int>(i);
  double sq_err = 0;
  for (int i = 0; i < n; ++i) {
    int gold = labels[i], pred = preds[i];
    if (gold < 0 || gold >= classes)
      throw std::invalid_argument("compute_metrics: label " + std::to_string(gold) + " outside 0.." +
                                  std::to_string(classes - 1));
    if (pred == gold) {
      ++correct;
      ++tp[gold];
    } else {
      ++fp[pred];
      ++fn[gold];
    }
    double conf = probs.at(i, pred);
    double err;
    if (gold == unverified)
      err = (pred == unverified) ? 0.0 : conf;
    else
      err = (pred == gold) ? 1.0 - conf : conf;
    sq_err += err * err;
  }
  r.accuracy = static_cast<double>(correct) / n;
  r.rmse = std::sqrt(sq_err / n);
  auto f1_of = [&](int c) {
    double p = tp[c] + fp[c] ? static_cast<double>(tp[c]) / (tp[c] + fp[c]) : 0.0;
    double rec = tp[c] + fn[c] ? static_cast<double>(tp[c]) / (tp[c] + fn[c]) : 0.0;
    return p + rec > 0 ? 2 * p * rec / (p + rec) : 0.0;
  };
  int pos = fake_class_index(label_names);
  if (pos < classes) {
    r.precision = tp[pos] + fp[pos] ? static_cast<double>(tp[pos]) / (tp[pos] + fp[pos]) : 0.0;
    r.recall = tp[pos] + fn[pos] ? static_cast<double>(tp[pos]) / (tp[pos] + fn[pos]) : 0.0;
    r.f1 = f1_of(pos);
  }
  double macro = 0;
  for (int c = 0; c < classes; ++c) macro += f1_of(c);
  r.macro_f1 = macro / classes;
  return r;
}

}  // namespace sarc
