// Self-contained 64-bit gradient audit: every tensor primitive, the full
// text encoder, and the whole model loss on a two-sample micro-batch, each
// compared against central finite differences. Shared by the grad-check
// command and the test suite. Dropout stays off so every check is exact.
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "sarc/data.hpp"
#include "sarc/encoder.hpp"
#include "sarc/model.hpp"
#include "sarc/rng.hpp"
#include "sarc/sentiment.hpp"
#include "sarc/tensor.hpp"

namespace sarc {

struct GradCheckResult {
  std::string name;
  double error = 0;
};

namespace detail {

inline Tensor<double> rand_tensor(RunRng& rng, const Shape& shape, double lo, double hi) {
  Tensor<double> t(shape);
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Reduces any output to a scalar with fixed random weights so gradients are
// non-trivial in every coordinate.
inline Tensor<double> weighted(const Tensor<double>& out, const Tensor<double>& w) { return sum(mul(out, w)); }

}  // namespace detail

inline std::vector<GradCheckResult> primitive_gradient_checks() {
  using detail::rand_tensor;
  using detail::weighted;
  RunRng rng(1234);
  const double eps = 1e-5;
  std::vector<GradCheckResult> out;
  auto check = [&](const std::string& name, auto&& fn, const Tensor<double>& point) {
    out.push_back({name, grad_check(fn, point, eps)});
  };

  Tensor<double> a = rand_tensor(rng, {3, 4}, -1, 1);
  Tensor<double> b = rand_tensor(rng, {3, 4}, -1, 1);
  Tensor<double> row = rand_tensor(rng, {1, 4}, -1, 1);
  Tensor<double> s = rand_tensor(rng, {1}, 0.5, 1.5);
  Tensor<double> w34 = rand_tensor(rng, {3, 4}, -1, 1);
  Tensor<double> pos = rand_tensor(rng, {3, 4}, 0.5, 1.5);

  check("add.lhs", [&](const Tensor<double>& t) { return weighted(add(t, b), w34); }, a);
  check("add.rhs", [&](const Tensor<double>& t) { return weighted(add(a, t), w34); }, b);
  check("add.row", [&](const Tensor<double>& t) { return weighted(add(a, t), w34); }, row);
  check("add.scalar", [&](const Tensor<double>& t) { return weighted(add(a, t), w34); }, s);
  check("sub.lhs", [&](const Tensor<double>& t) { return weighted(sub(t, b), w34); }, a);
  check("sub.row", [&](const Tensor<double>& t) { return weighted(sub(a, t), w34); }, row);
  check("sub.scalar", [&](const Tensor<double>& t) { return weighted(sub(a, t), w34); }, s);
  check("mul.lhs", [&](const Tensor<double>& t) { return weighted(mul(t, b), w34); }, a);
  check("mul.rhs", [&](const Tensor<double>& t) { return weighted(mul(a, t), w34); }, b);
  check("mul.scalar", [&](const Tensor<double>& t) { return weighted(mul(a, t), w34); }, s);
  check("scale", [&](const Tensor<double>& t) { return weighted(scale(t, 1.7), w34); }, a);

  Tensor<double> m1 = rand_tensor(rng, {3, 2}, -1, 1);
  Tensor<double> m2 = rand_tensor(rng, {2, 4}, -1, 1);
  check("matmul.lhs", [&](const Tensor<double>& t) { return weighted(matmul(t, m2), w34); }, m1);
  check("matmul.rhs", [&](const Tensor<double>& t) { return weighted(matmul(m1, t), w34); }, m2);

  check("sigmoid", [&](const Tensor<double>& t) { return weighted(sigmoid(t), w34); }, a);
  check("tanh", [&](const Tensor<double>& t) { return weighted(tanh(t), w34); }, a);
  check("exp", [&](const Tensor<double>& t) { return weighted(exp(t), w34); }, a);
  check("log", [&](const Tensor<double>& t) { return weighted(log(t), w34); }, pos);
  // Keep points away from the kink so central differences are valid.
  Tensor<double> off = rand_tensor(rng, {3, 4}, 0.2, 1.2);
  check("relu.pos", [&](const Tensor<double>& t) { return weighted(relu(t), w34); }, off);
  Tensor<double> neg = rand_tensor(rng, {3, 4}, -1.2, -0.2);
  check("relu.neg", [&](const Tensor<double>& t) { return weighted(relu(t), w34); }, neg);

  check("softmax_rows", [&](const Tensor<double>& t) { return weighted(softmax_rows(t), w34); }, a);
  check("l2_normalize_rows", [&](const Tensor<double>& t) { return weighted(l2_normalize_rows(t), w34); }, pos);

  Tensor<double> w38 = rand_tensor(rng, {3, 8}, -1, 1);
  check("concat_cols.lhs", [&](const Tensor<double>& t) { return weighted(concat_cols(t, b), w38); }, a);
  check("concat_cols.rhs", [&](const Tensor<double>& t) { return weighted(concat_cols(a, t), w38); }, b);
  Tensor<double> w64 = rand_tensor(rng, {6, 4}, -1, 1);
  check("concat_rows",
        [&](const Tensor<double>& t) { return weighted(concat_rows(std::vector<Tensor<double>>{a, t}), w64); }, b);
  Tensor<double> w14 = rand_tensor(rng, {1, 4}, -1, 1);
  check("mean_rows", [&](const Tensor<double>& t) { return weighted(mean_rows(t), w14); }, a);
  check("sum", [&](const Tensor<double>& t) { return sum(t); }, a);
  Tensor<double> w43 = rand_tensor(rng, {4, 3}, -1, 1);
  check("transpose", [&](const Tensor<double>& t) { return weighted(transpose(t), w43); }, a);
  Tensor<double> w26 = rand_tensor(rng, {2, 6}, -1, 1);
  check("reshape", [&](const Tensor<double>& t) { return weighted(reshape(t, {2, 6}), w26); }, a);
  check("dropout.eval", [&](const Tensor<double>& t) { return weighted(dropout(t, 0.5, rng, false), w34); }, a);
  std::vector<char> mask{1, 0, 1, 0, 1, 1, 0, 1, 1, 1, 0, 1};
  check("dropout.mask", [&](const Tensor<double>& t) { return weighted(dropout_with_mask(t, mask, 0.5), w34); }, a);
  Tensor<double> table = rand_tensor(rng, {5, 4}, -1, 1);
  check("gather_rows", [&](const Tensor<double>& t) { return weighted(gather_rows(t, {0, 2, 2}), w34); }, table);

  // Fused recurrent cell, every operand slot, full and partial step masks.
  int d_in = 3, d_h = 2;
  Tensor<double> gx = rand_tensor(rng, {1, d_in}, -1, 1);
  Tensor<double> gh = rand_tensor(rng, {1, d_h}, -1, 1);
  std::vector<Tensor<double>> gp = {rand_tensor(rng, {d_in, d_h}, -1, 1), rand_tensor(rng, {d_in, d_h}, -1, 1),
                                    rand_tensor(rng, {d_in, d_h}, -1, 1), rand_tensor(rng, {d_h, d_h}, -1, 1),
                                    rand_tensor(rng, {d_h, d_h}, -1, 1),  rand_tensor(rng, {d_h, d_h}, -1, 1),
                                    rand_tensor(rng, {1, d_h}, -1, 1),    rand_tensor(rng, {1, d_h}, -1, 1),
                                    rand_tensor(rng, {1, d_h}, -1, 1)};
  Tensor<double> wh2 = rand_tensor(rng, {1, d_h}, -1, 1);
  const char* slot[] = {"x", "h", "wz", "wr", "wh", "uz", "ur", "uh", "bz", "br", "bh"};
  for (double m : {1.0, 0.4}) {
    for (int i = 0; i < 11; ++i) {
      auto fn = [&, i, m](const Tensor<double>& t) {
        Tensor<double> x = i == 0 ? t : gx;
        Tensor<double> h = i == 1 ? t : gh;
        std::vector<Tensor<double>> p = gp;
        if (i >= 2) p[i - 2] = t;
        return weighted(gru_cell(x, h, p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], p[8], m), wh2);
      };
      Tensor<double> point = i == 0 ? gx : i == 1 ? gh : gp[i - 2];
      check(std::string("gru.") + slot[i] + (m == 1.0 ? "" : ".masked"), fn, point);
    }
  }
  return out;
}

inline std::vector<GradCheckResult> encoder_gradient_checks() {
  using detail::rand_tensor;
  using detail::weighted;
  RunRng rng(777);
  const double eps = 1e-5;
  int d_in = 3, d_h = 2, d_k = 3, len = 4;
  TextEncoderParams<double> params;
  params.init(d_in, d_h, d_k, rng);
  Tensor<double> embedded = rand_tensor(rng, {len, d_in}, -1, 1);
  std::vector<char> mask(len, 1);
  Tensor<double> w = rand_tensor(rng, {1, 2 * d_h}, -1, 1);

  std::vector<GradCheckResult> out;
  auto check_param = [&](const std::string& name, Tensor<double>& slot) {
    Tensor<double> saved = slot;
    auto fn = [&](const Tensor<double>& t) {
      slot = t;
      return weighted(encode_sequence(embedded, mask, params).pooled, w);
    };
    out.push_back({"encoder." + name, grad_check(fn, saved, eps)});
    slot = saved;
  };
  auto check_dir = [&](const std::string& prefix, GruDirection<double>& d) {
    check_param(prefix + ".wz", d.wz);
    check_param(prefix + ".wr", d.wr);
    check_param(prefix + ".wh", d.wh);
    check_param(prefix + ".uz", d.uz);
    check_param(prefix + ".ur", d.ur);
    check_param(prefix + ".uh", d.uh);
    check_param(prefix + ".bz", d.bz);
    check_param(prefix + ".br", d.br);
    check_param(prefix + ".bh", d.bh);
  };
  out.push_back({"encoder.input", grad_check(
                                      [&](const Tensor<double>& t) {
                                        return weighted(encode_sequence(t, mask, params).pooled, w);
                                      },
                                      embedded, eps)});
  check_dir("fwd", params.fwd);
  check_dir("bwd", params.bwd);
  check_param("wq", params.wq);
  check_param("wk", params.wk);
  return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> model_param_refs(SarcModel<T>& m) {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  auto dir = [&](const std::string& prefix, GruDirection<T>& d) {
    out.emplace_back(prefix + ".wz", &d.wz);
    out.emplace_back(prefix + ".wr", &d.wr);
    out.emplace_back(prefix + ".wh", &d.wh);
    out.emplace_back(prefix + ".uz", &d.uz);
    out.emplace_back(prefix + ".ur", &d.ur);
    out.emplace_back(prefix + ".uh", &d.uh);
    out.emplace_back(prefix + ".bz", &d.bz);
    out.emplace_back(prefix + ".br", &d.br);
    out.emplace_back(prefix + ".bh", &d.bh);
  };
  auto enc = [&](const std::string& prefix, TextEncoderParams<T>& e) {
    dir(prefix + ".fwd", e.fwd);
    dir(prefix + ".bwd", e.bwd);
    out.emplace_back(prefix + ".wq", &e.wq);
    out.emplace_back(prefix + ".wk", &e.wk);
  };
  out.emplace_back("emb.news", &m.news_embeddings);
  out.emplace_back("emb.comment", &m.comment_embeddings);
  enc("enc.news", m.news_encoder);
  enc("enc.comment", m.comment_encoder);
  out.emplace_back("proj.w", &m.projection.w);
  out.emplace_back("proj.b", &m.projection.b);
  out.emplace_back("roles.centers", &m.centers.centers);
  out.emplace_back("roles.rho", &m.centers.rho);
  out.emplace_back("cls.w1", &m.classifier.w1);
  out.emplace_back("cls.b1", &m.classifier.b1);
  out.emplace_back("cls.w2", &m.classifier.w2);
  out.emplace_back("cls.b2", &m.classifier.b2);
  return out;
}

// Two-sample micro-batch through the complete joint loss, checked against
// finite differences for every parameter tensor.
inline std::vector<GradCheckResult> model_gradient_checks() {
  RunRng rng(4242);
  Vocabulary vocab(3);
  for (const char* t : {"a", "b", "c", "d", "e", "f", "g", "h"}) vocab.add(t);
  ModelConfig cfg;
  cfg.embedding_dim = 3;
  cfg.news_hidden = 2;
  cfg.comment_hidden = 2;
  cfg.projection_dim = 3;
  cfg.clusters = 2;
  cfg.classifier_hidden = 3;
  cfg.num_classes = 2;
  cfg.dropout = 0.5;  // inactive: checks run in eval mode
  SarcModel<double> model;
  model.init(vocab, cfg, "", rng);

  TokenizedSample s0, s1;
  s0.id = "s0";
  s0.label = 0;
  s0.news = {2, 3, 4};
  s0.comments = {{5, 6}, {7}};
  s0.sentiments = {1.0, -1.0};
  s1.id = "s1";
  s1.label = 1;
  s1.news = {8};
  s1.comments = {{9, 5, 3}};
  s1.sentiments = {0.0};
  Batch batch = make_batches({s0, s1}, 2).front();

  std::vector<GradCheckResult> out;
  for (auto& [name, slot] : model_param_refs(model)) {
    Tensor<double> saved = *slot;
    auto fn = [&, slot](const Tensor<double>& t) {
      *slot = t;
      return model.forward(batch, false, rng, 0.05, 0.0).total;
    };
    out.push_back({"model." + name, grad_check(fn, saved, 1e-5)});
    *slot = saved;
  }
  return out;
}

inline std::vector<GradCheckResult> run_all_gradient_checks() {
  auto out = primitive_gradient_checks();
  auto enc = encoder_gradient_checks();
  auto mdl = model_gradient_checks();
  out.insert(out.end(), enc.begin(), enc.end());
  out.insert(out.end(), mdl.begin(), mdl.end());
  return out;
}

}  // namespace sarc
