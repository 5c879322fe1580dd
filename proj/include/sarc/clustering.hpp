// Sentiment-augmented projection of comment features and differentiable soft
// assignment to learnable role centers: augment, project, normalize, cosine
// similarity, temperature-scaled softmax, weighted aggregation.
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
struct RoleProjection {
  Tensor<T> w;  // (2 d_h + 1) x d_p
  Tensor<T> b;  // 1 x d_p

  void init(int in_dim, int d_p, RunRng& rng) {
    w = init_matrix<T>(in_dim, d_p, rng);
    b = Tensor<T>({1, d_p});
  }

  void collect(NamedTensors<T>& out, const std::string& prefix) {
    out.emplace_back(prefix + ".w", w);
    out.emplace_back(prefix + ".b", b);
  }
};

template <typename T>
struct RoleCenters {
  Tensor<T> centers;  // K x d_p
  Tensor<T> rho;      // 1 x 1; temperature = exp(rho) keeps it positive

  int k() const { return centers.rows(); }

  // Random directions on the unit sphere; temperature starts at 10 so the
  // initial assignments are moderately sharp.
  void init(int num_clusters, int d_p, RunRng& rng) {
    if (num_clusters < 2)
      throw std::invalid_argument("role centers: need at least 2 clusters, got " + std::to_string(num_clusters));
    centers = Tensor<T>({num_clusters, d_p});
    for (int i = 0; i < num_clusters; ++i) {
      double norm = 0.0;
      std::vector<double> row(d_p);
      for (int j = 0; j < d_p; ++j) {
        row[j] = rng.normal();
        norm += row[j] * row[j];
      }
      norm = std::sqrt(norm) + 1e-12;
      for (int j = 0; j < d_p; ++j) centers.at(i, j) = static_cast<T>(row[j] / norm);
    }
    rho = Tensor<T>::scalar(T(std::log(10.0)));
  }

  void collect(NamedTensors<T>& out, const std::string& prefix) {
    out.emplace_back(prefix + ".centers", centers);
    out.emplace_back(prefix + ".rho", rho);
  }
};

// Row j of the result is [v_j, e_j]: comment features with the ternary
// polarity appended as one extra column.
template <typename T>
Tensor<T> augment_with_sentiment(const Tensor<T>& comment_features, const std::vector<double>& sentiments) {
  if (static_cast<int>(sentiments.size()) != comment_features.rows())
    throw std::invalid_argument("augment_with_sentiment: " + std::to_string(sentiments.size()) +
                                " polarity values for " + std::to_string(comment_features.rows()) + " rows");
  Tensor<T> col({comment_features.rows(), 1});
  for (std::size_t i = 0; i < sentiments.size(); ++i) col.values()[i] = static_cast<T>(sentiments[i]);
  return concat_cols(comment_features, col);
}

// Plain affine map into clustering space; no nonlinearity.
template <typename T>
Tensor<T> project(const Tensor<T>& augmented, const RoleProjection<T>& p) {
  if (augmented.cols() != p.w.rows())
    throw std::invalid_argument("project: input dim " + std::to_string(augmented.cols()) +
                                " does not match projection " + shape_str(p.w.shape()));
  return add(matmul(augmented, p.w), p.b);
}

template <typename T>
struct SoftAssignment {
  Tensor<T> features_n;    // X-tilde: T x d_p, unit rows
  Tensor<T> centers_n;     // M-tilde: K x d_p, unit rows
  Tensor<T> similarities;  // S = X-tilde M-tilde^T, entries in [-1, 1]
  Tensor<T> assignments;   // Q = row softmax of S * tau
};

// Cosine similarities against normalized centers, sharpened by multiplying
// with the temperature before the row softmax (larger tau -> harder Q).
template <typename T>
SoftAssignment<T> soft_assign(const Tensor<T>& features, const Tensor<T>& centers, const Tensor<T>& tau) {
  if (features.cols() != centers.cols())
    throw std::invalid_argument("soft_assign: feature dim " + std::to_string(features.cols()) +
                                " vs center dim " + std::to_string(centers.cols()));
  if (!(tau.value() > T(0)))
    throw std::invalid_argument("soft_assign: temperature must be positive, got " + std::to_string(tau.value()));
  SoftAssignment<T> out;
  out.features_n = l2_normalize_rows(features);
  out.centers_n = l2_normalize_rows(centers);
  out.similarities = matmul(out.features_n, transpose(out.centers_n));
  out.assignments = softmax_rows(mul(out.similarities, tau));
  return out;
}

// C_K = Q^T X-tilde: each center's row is the assignment-weighted sum of the
// normalized comment features.
template <typename T>
Tensor<T> aggregate_roles(const Tensor<T>& assignments, const Tensor<T>& features_n) {
  if (assignments.rows() != features_n.rows())
    throw std::invalid_argument("aggregate_roles: " + std::to_string(assignments.rows()) + " assignment rows vs " +
                                std::to_string(features_n.rows()) + " feature rows");
  return matmul(transpose(assignments), features_n);
}

// Row argmax with ties resolved to the lowest index; for reporting only.
template <typename T>
std::vector<int> hard_assignments(const Tensor<T>& assignments) {
  std::vector<int> out(assignments.rows());
  for (int i = 0; i < assignments.rows(); ++i) {
    int best = 0;
    for (int j = 1; j < assignments.cols(); ++j)
      if (assignments.at(i, j) > assignments.at(i, best)) best = j;
    out[i] = best;
  }
  return out;
}

}  // namespace sarc
