// The full architecture: two embedding tables feeding two independent text
// encoders, sentiment-augmented projection of comment features, soft role
// clustering against learnable centers, fusion and classification, plus the
// joint loss. Ablation variants reroute the same graph.
#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "sarc/classifier.hpp"
#include "sarc/clustering.hpp"
#include "sarc/data.hpp"
#include "sarc/encoder.hpp"
#include "sarc/rng.hpp"
#include "sarc/tensor.hpp"

namespace sarc {

enum class Variant { full, no_news, no_cluster, no_sentiment, cls_loss_only };

inline Variant parse_variant(const std::string& s) {
  if (s == "full") return Variant::full;
  if (s == "no_news") return Variant::no_news;
  if (s == "no_cluster") return Variant::no_cluster;
  if (s == "no_sentiment") return Variant::no_sentiment;
  if (s == "cls_loss_only") return Variant::cls_loss_only;
  throw std::invalid_argument("unknown variant \"" + s +
                              "\" (expected full, no_news, no_cluster, no_sentiment or cls_loss_only)");
}

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_news: return "no_news";
    case Variant::no_cluster: return "no_cluster";
    case Variant::no_sentiment: return "no_sentiment";
    case Variant::cls_loss_only: return "cls_loss_only";
  }
  return "full";
}

struct ModelConfig {
  int embedding_dim = 300;
  int news_hidden = 256;    // per direction; pooled news feature is twice this
  int comment_hidden = 128; // per direction
  int news_key_dim = 0;     // 0 -> twice the hidden dim
  int comment_key_dim = 0;
  int projection_dim = 256; // clustering space
  int clusters = 3;
  int classifier_hidden = 128;
  int num_classes = 2;
  double dropout = 0.5;
  Variant variant = Variant::full;

  int fusion_dim() const {
    switch (variant) {
      case Variant::no_news: return clusters * projection_dim;
      case Variant::no_cluster: return 2 * news_hidden + projection_dim;
      default: return 2 * news_hidden + clusters * projection_dim;
    }
  }

  void check() const {
    for (int d : {embedding_dim, news_hidden, comment_hidden, projection_dim, classifier_hidden})
      if (d < 1) throw std::invalid_argument("model config: every dimension must be positive");
    if (clusters < 2) throw std::invalid_argument("model config: need at least 2 clusters");
    if (num_classes < 2) throw std::invalid_argument("model config: need at least 2 classes");
    if (dropout < 0 || dropout >= 1) throw std::invalid_argument("model config: dropout must lie in [0, 1)");
  }
};

template <typename T>
struct ForwardOutput {
  Tensor<T> probs;  // batch x classes
  Tensor<T> cls_loss, intra, inter, total;
  int real_comments = 0;
  // Per sample: soft assignments over that sample's real comments (empty for
  // samples without comments or under the no_cluster variant).
  std::vector<Tensor<T>> sample_assignments;
};

template <typename T>
class SarcModel {
 public:
  ModelConfig cfg;
  Tensor<T> news_embeddings, comment_embeddings;  // |V| x embedding_dim each
  TextEncoderParams<T> news_encoder, comment_encoder;
  RoleProjection<T> projection;
  RoleCenters<T> centers;
  ClassifierParams<T> classifier;

  // Draw order is fixed: news embedding table, comment embedding table, news
  // encoder, comment encoder, projection, centers, classifier.
  void init(const Vocabulary& vocab, const ModelConfig& config, const std::string& embedding_path, RunRng& rng) {
    cfg = config;
    cfg.check();
    if (vocab.embedding_dim() != cfg.embedding_dim)
      throw std::invalid_argument("model: vocabulary embedding dim " + std::to_string(vocab.embedding_dim()) +
                                  " does not match configured " + std::to_string(cfg.embedding_dim));
    news_embeddings = load_embeddings<T>(embedding_path, vocab, rng).table;
    comment_embeddings = load_embeddings<T>(embedding_path, vocab, rng).table;
    int nk = cfg.news_key_dim > 0 ? cfg.news_key_dim : 2 * cfg.news_hidden;
    int ck = cfg.comment_key_dim > 0 ? cfg.comment_key_dim : 2 * cfg.comment_hidden;
    news_encoder.init(cfg.embedding_dim, cfg.news_hidden, nk, rng);
    comment_encoder.init(cfg.embedding_dim, cfg.comment_hidden, ck, rng);
    projection.init(2 * cfg.comment_hidden + 1, cfg.projection_dim, rng);
    centers.init(cfg.clusters, cfg.projection_dim, rng);
    classifier.dropout_rate = cfg.dropout;
    classifier.init(cfg.fusion_dim(), cfg.classifier_hidden, cfg.num_classes, rng);
    for (auto& [name, t] : params()) t.set_requires_grad(true);
  }

  NamedTensors<T> params() {
    NamedTensors<T> out;
    out.emplace_back("emb.news", news_embeddings);
    out.emplace_back("emb.comment", comment_embeddings);
    news_encoder.collect(out, "enc.news");
    comment_encoder.collect(out, "enc.comment");
    projection.collect(out, "proj");
    centers.collect(out, "roles");
    classifier.collect(out, "cls");
    return out;
  }

  // One padded batch through the variant-adjusted graph. Gradients flow when
  // a tape is active; without one this is a pure forward pass.
  ForwardOutput<T> forward(const Batch& batch, bool train, RunRng& rng, double alpha, double weight_decay = 0.0) {
    double effective_alpha = cfg.variant == Variant::cls_loss_only ? 0.0 : alpha;
    bool clustered = cfg.variant != Variant::no_cluster;

    Tensor<T> tau, centers_n;
    if (clustered) {
      tau = exp(centers.rho);
      centers_n = l2_normalize_rows(centers.centers);
    }

    ForwardOutput<T> out;
    std::vector<Tensor<T>> fused_rows(batch.size);
    std::vector<Tensor<T>> intra_terms;
    out.sample_assignments.resize(batch.size);
    for (int b = 0; b < batch.size; ++b) {
      Tensor<T> news_pooled = encode_news_row(batch, b);
      Tensor<T> role_features = comment_branch(batch, b, tau, centers_n, intra_terms, out);
      switch (cfg.variant) {
        case Variant::no_news:
          fused_rows[b] = reshape(role_features, {1, role_features.rows() * role_features.cols()});
          break;
        case Variant::no_cluster:
          fused_rows[b] = concat_cols(news_pooled, role_features);
          break;
        default:
          fused_rows[b] = fuse(news_pooled, role_features);
      }
    }
    Tensor<T> fused = concat_rows(fused_rows);
    out.probs = classify(fused, classifier, train, rng);
    out.cls_loss = classification_loss(out.probs, batch.labels);
    if (weight_decay > 0) {
      Tensor<T> penalty = Tensor<T>::scalar(T(0));
      for (auto& [name, t] : params()) penalty = add(penalty, sum(mul(t, t)));
      out.cls_loss = add(out.cls_loss, scale(penalty, T(weight_decay)));
    }
    if (clustered && out.real_comments > 0) {
      Tensor<T> acc = intra_terms[0];
      for (std::size_t i = 1; i < intra_terms.size(); ++i) acc = add(acc, intra_terms[i]);
      out.intra = scale(acc, T(-1) / T(out.real_comments));
      out.inter = inter_loss(centers_n);
    } else if (clustered) {
      out.intra = Tensor<T>::scalar(T(0));
      out.inter = inter_loss(centers_n);
    } else {
      out.intra = Tensor<T>::scalar(T(0));
      out.inter = Tensor<T>::scalar(T(0));
    }
    out.total = total_loss(out.cls_loss, out.intra, out.inter, effective_alpha);
    return out;
  }

 private:
  // Pooled news features for one sample; all-padding news yields zeros.
  Tensor<T> encode_news_row(const Batch& batch, int b) {
    if (cfg.variant == Variant::no_news) return Tensor<T>({1, 2 * cfg.news_hidden});
    int len = 0;
    while (len < batch.news_len && batch.news_mask[b][len]) ++len;
    if (len == 0) return Tensor<T>({1, 2 * cfg.news_hidden});
    std::vector<int> ids(batch.news_tokens[b].begin(), batch.news_tokens[b].begin() + len);
    Tensor<T> emb = gather_rows(news_embeddings, ids);
    return encode_sequence(emb, std::vector<char>(len, 1), news_encoder).pooled;
  }

  // Role features for one sample: K x d_p under clustering, 1 x d_p (the
  // masked mean of projected comment features) under no_cluster. Samples
  // without real comments contribute zeros and skip the clustering loss.
  Tensor<T> comment_branch(const Batch& batch, int b, const Tensor<T>& tau, const Tensor<T>& centers_n,
                           std::vector<Tensor<T>>& intra_terms, ForwardOutput<T>& out) {
    bool clustered = cfg.variant != Variant::no_cluster;
    std::vector<Tensor<T>> pooled;
    std::vector<double> sentiments;
    for (int c = 0; c < batch.num_comments; ++c) {
      if (!batch.comment_mask[b][c]) continue;
      int len = 0;
      while (len < batch.comment_len && batch.token_mask[b][c][len]) ++len;
      std::vector<int> ids(batch.comment_tokens[b][c].begin(), batch.comment_tokens[b][c].begin() + len);
      Tensor<T> emb = gather_rows(comment_embeddings, ids);
      pooled.push_back(encode_sequence(emb, std::vector<char>(len, 1), comment_encoder).pooled);
      sentiments.push_back(cfg.variant == Variant::no_sentiment ? 0.0 : batch.sentiments[b][c]);
    }
    if (pooled.empty())
      return clustered ? Tensor<T>({cfg.clusters, cfg.projection_dim}) : Tensor<T>({1, cfg.projection_dim});
    Tensor<T> vc = concat_rows(pooled);
    Tensor<T> augmented = augment_with_sentiment(vc, sentiments);
    Tensor<T> projected = project(augmented, projection);
    if (!clustered) return mean_rows(projected);
    Tensor<T> features_n = l2_normalize_rows(projected);
    Tensor<T> similarities = matmul(features_n, transpose(centers_n));
    Tensor<T> assignments = softmax_rows(mul(similarities, tau));
    intra_terms.push_back(sum(mul(assignments, similarities)));
    out.real_comments += static_cast<int>(pooled.size());
    out.sample_assignments[b] = assignments;
    return aggregate_roles(assignments, features_n);
  }
};

}  // namespace sarc
