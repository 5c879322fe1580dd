#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "sarc/classifier.hpp"
#include "sarc/clustering.hpp"

using Catch::Approx;
using sarc::Tensor;
using DT = Tensor<double>;

namespace {

DT random_tensor(sarc::Shape shape, sarc::RunRng& rng, double scl = 0.7) {
  DT t(std::move(shape));
  for (auto& v : t.values()) v = rng.normal() * scl;
  return t;
}

}  // namespace

TEST_CASE("fusion lays out news features then the flattened role matrix") {
  DT news({1, 4}, {1, 2, 3, 4});
  DT roles({3, 2}, {5, 6, 7, 8, 9, 10});
  DT fused = sarc::fuse(news, roles);
  REQUIRE(fused.shape() == sarc::Shape{1, 10});
  REQUIRE(fused.values() == std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10});

  // the slices recover both inputs
  for (int j = 0; j < 4; ++j) REQUIRE(fused.values()[j] == news.values()[j]);
  for (int j = 0; j < 6; ++j) REQUIRE(fused.values()[4 + j] == roles.values()[j]);

  DT zero_roles({3, 2});
  DT f2 = sarc::fuse(news, zero_roles);
  for (int j = 4; j < 10; ++j) REQUIRE(f2.values()[j] == 0.0);

  REQUIRE_THROWS_AS(sarc::fuse(DT({2, 4}), roles), std::invalid_argument);
}

TEST_CASE("classifier with zero weights is uniform") {
  sarc::ClassifierParams<double> p;
  sarc::RunRng rng(1);
  p.init(5, 4, 3, rng);
  for (auto t : {&p.w1, &p.w2})
    for (auto& v : t->values()) v = 0.0;
  DT f({2, 5}, {1, 2, 3, 4, 5, -1, -2, -3, -4, -5});
  DT probs = sarc::classify(f, p, /*train=*/false, rng);
  for (long i = 0; i < probs.numel(); ++i) REQUIRE(probs.values()[i] == Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("classifier probabilities sum to one and match a straight-line oracle") {
  sarc::RunRng rng(23);
  sarc::ClassifierParams<double> p;
  int in = 4, hid = 3, classes = 2;
  p.init(in, hid, classes, rng);
  DT f = random_tensor({2, in}, rng);
  DT probs = sarc::classify(f, p, false, rng);
  for (int i = 0; i < 2; ++i) {
    double s = 0;
    for (int j = 0; j < classes; ++j) s += probs.at(i, j);
    REQUIRE(s == Approx(1.0).margin(1e-6));
  }
  for (int i = 0; i < 2; ++i) {
    std::vector<double> hidden(hid);
    for (int j = 0; j < hid; ++j) {
      double a = p.b1.at(0, j);
      for (int k = 0; k < in; ++k) a += f.at(i, k) * p.w1.at(k, j);
      hidden[j] = a > 0 ? a : 0;
    }
    std::vector<double> logits(classes);
    double mx = -1e300;
    for (int j = 0; j < classes; ++j) {
      double a = p.b2.at(0, j);
      for (int k = 0; k < hid; ++k) a += hidden[k] * p.w2.at(k, j);
      logits[j] = a;
      mx = std::max(mx, a);
    }
    double denom = 0;
    for (double l : logits) denom += std::exp(l - mx);
    for (int j = 0; j < classes; ++j)
      REQUIRE(probs.at(i, j) == Approx(std::exp(logits[j] - mx) / denom).epsilon(1e-10));
  }
}

TEST_CASE("training-mode dropout changes activations and eval mode does not") {
  sarc::RunRng rng(5);
  sarc::ClassifierParams<double> p;
  p.init(4, 16, 2, rng);
  DT f = random_tensor({1, 4}, rng);
  DT eval1 = sarc::classify(f, p, false, rng);
  DT eval2 = sarc::classify(f, p, false, rng);
  REQUIRE(eval1.values() == eval2.values());
  DT train1 = sarc::classify(f, p, true, rng);
  DT train2 = sarc::classify(f, p, true, rng);
  REQUIRE(train1.values() != train2.values());  // different masks drawn
}

TEST_CASE("cross-entropy matches hand values") {
  DT perfect({2, 2}, {1, 0, 0, 1});
  REQUIRE(sarc::classification_loss(perfect, {0, 1}).value() == Approx(0.0).margin(1e-9));

  DT uniform({1, 2}, {0.5, 0.5});
  REQUIRE(sarc::classification_loss(uniform, {0}).value() == Approx(0.6931471805599453).margin(1e-4));

  DT mixed({2, 2}, {0.8, 0.2, 0.4, 0.6});
  double expect = -(std::log(0.8) + std::log(0.6)) / 2.0;
  REQUIRE(sarc::classification_loss(mixed, {0, 1}).value() == Approx(expect).epsilon(1e-12));

  REQUIRE_THROWS_AS(sarc::classification_loss(mixed, {0, 2}), std::invalid_argument);
  REQUIRE_THROWS_AS(sarc::classification_loss(mixed, {0}), std::invalid_argument);

  // vanishing probability is clamped, not infinite
  DT tiny({1, 2}, {0.0, 1.0});
  REQUIRE(std::isfinite(sarc::classification_loss(tiny, {0}).value()));
}

TEST_CASE("intra-cluster loss rewards aligned assignments") {
  DT q1({1, 2}, {1.0, 0.0});
  DT s1({1, 2}, {1.0, 0.0});
  REQUIRE(sarc::intra_loss(q1, s1, 1).value() == Approx(-1.0));

  DT q2({1, 2}, {0.73106, 0.26894});
  DT s2({1, 2}, {1.0, 0.0});
  REQUIRE(sarc::intra_loss(q2, s2, 1).value() == Approx(-0.73106).margin(1e-4));

  REQUIRE(sarc::intra_loss(DT({1, 2}), DT({1, 2}), 0).value() == 0.0);

  // convex assignment weights over cosines keep the value inside [-1, 1]
  sarc::RunRng rng(40);
  for (int trial = 0; trial < 50; ++trial) {
    int t = 1 + static_cast<int>(rng.index(5)), k = 2 + static_cast<int>(rng.index(3));
    DT logits = random_tensor({t, k}, rng, 2.0);
    DT q = sarc::softmax_rows(logits);
    DT s({t, k});
    for (auto& v : s.values()) v = rng.uniform(-1.0, 1.0);
    double val = sarc::intra_loss(q, s, t).value();
    REQUIRE(val >= -1.0 - 1e-12);
    REQUIRE(val <= 1.0 + 1e-12);
  }
}

TEST_CASE("inter-cluster loss measures mean center cosine") {
  DT ortho({2, 3}, {1, 0, 0, 0, 1, 0});
  REQUIRE(sarc::inter_loss(ortho).value() == Approx(0.0).margin(1e-12));

  DT anti({2, 2}, {1, 0, -1, 0});
  REQUIRE(sarc::inter_loss(anti).value() == Approx(-1.0));

  DT same({3, 2}, {0.6, 0.8, 0.6, 0.8, 0.6, 0.8});
  REQUIRE(sarc::inter_loss(same).value() == Approx(1.0).epsilon(1e-9));

  REQUIRE_THROWS_AS(sarc::inter_loss(DT({1, 4})), std::invalid_argument);
}

TEST_CASE("total loss composes the three terms") {
  DT cls = DT::scalar(0.6931);
  DT intra = DT::scalar(-0.7311);
  DT inter = DT::scalar(0.0);
  REQUIRE(sarc::total_loss(cls, intra, inter, 0.05).value() == Approx(0.65655).margin(1e-4));
  REQUIRE(sarc::total_loss(cls, intra, inter, 0.0).value() == cls.value());  // exact
  REQUIRE_THROWS_AS(sarc::total_loss(cls, intra, inter, -0.1), std::invalid_argument);
}

TEST_CASE("joint loss gradients survive a finite-difference audit") {
  sarc::RunRng rng(81);
  int t = 3, k = 2, dp = 4, classes = 2;
  DT x = random_tensor({t, dp}, rng);
  DT centers = random_tensor({k, dp}, rng);
  DT news = random_tensor({1, 3}, rng);
  sarc::ClassifierParams<double> cp;
  cp.init(3 + k * dp, 5, classes, rng);

  auto full_loss = [&](const DT& feats) {
    auto assign = sarc::soft_assign(feats, centers, DT::scalar(5.0));
    DT roles = sarc::aggregate_roles(assign.assignments, assign.features_n);
    DT fused = sarc::fuse(news, roles);
    DT probs = sarc::classify(fused, cp, false, rng);
    DT cls = sarc::classification_loss(probs, {1});
    DT intra = sarc::intra_loss(assign.assignments, assign.similarities, t);
    DT inter = sarc::inter_loss(assign.centers_n);
    return sarc::total_loss(cls, intra, inter, 0.05);
  };
  REQUIRE(sarc::grad_check(full_loss, x, 1e-5) < 1e-6);

  auto wrt_centers = [&](const DT& c) {
    auto assign = sarc::soft_assign(x, c, DT::scalar(5.0));
    DT roles = sarc::aggregate_roles(assign.assignments, assign.features_n);
    DT fused = sarc::fuse(news, roles);
    DT probs = sarc::classify(fused, cp, false, rng);
    DT cls = sarc::classification_loss(probs, {1});
    DT intra = sarc::intra_loss(assign.assignments, assign.similarities, t);
    DT inter = sarc::inter_loss(assign.centers_n);
    return sarc::total_loss(cls, intra, inter, 0.05);
  };
  REQUIRE(sarc::grad_check(wrt_centers, centers, 1e-5) < 1e-6);

  // with a positive clustering weight the centers receive gradient
  centers.set_requires_grad();
  sarc::Tape<double> tape;
  sarc::Tape<double>::Scope scope(tape);
  DT loss = wrt_centers(centers);
  tape.backward(loss);
  double norm = 0;
  for (double g : centers.grad()) norm += g * g;
  REQUIRE(norm > 0.0);
}

TEST_CASE("metrics match the worked confusion matrix") {
  // predictions [1,1,0,0] against labels [1,0,0,0] with class 1 = fake
  DT probs({4, 2}, {0.2, 0.8, 0.4, 0.6, 0.9, 0.1, 0.7, 0.3});
  std::vector<std::string> names = {"real", "fake"};
  auto m = sarc::compute_metrics(probs, {1, 0, 0, 0}, names);
  REQUIRE(m.accuracy == Approx(0.75));
  REQUIRE(m.precision == Approx(0.5));
  REQUIRE(m.recall == Approx(1.0));
  REQUIRE(m.f1 == Approx(2.0 / 3).margin(1e-4));

  DT perfect({2, 2}, {1, 0, 0, 1});
  auto mp = sarc::compute_metrics(perfect, {0, 1}, names);
  REQUIRE(mp.accuracy == 1.0);
  REQUIRE(mp.f1 == 1.0);
  REQUIRE(mp.macro_f1 == 1.0);
  REQUIRE(mp.rmse == Approx(0.0).margin(1e-12));

  REQUIRE_THROWS_AS(sarc::compute_metrics(DT({0, 2}), {}, names), std::invalid_argument);
}

TEST_CASE("rmse follows the documented confidence convention") {
  std::vector<std::string> names = {"true", "false", "unverified"};
  // single item, gold "true", predicted "true" with confidence 0.8
  DT one({1, 3}, {0.8, 0.15, 0.05});
  REQUIRE(sarc::compute_metrics(one, {0}, names).rmse == Approx(0.2).margin(1e-9));

  // wrong prediction scores its own confidence as the error
  DT wrong({1, 3}, {0.1, 0.7, 0.2});
  REQUIRE(sarc::compute_metrics(wrong, {0}, names).rmse == Approx(0.7).margin(1e-9));

  // unverified gold: zero error when predicted unverified, confidence otherwise
  DT hit({1, 3}, {0.2, 0.2, 0.6});
  REQUIRE(sarc::compute_metrics(hit, {2}, names).rmse == Approx(0.0).margin(1e-12));
  DT miss({1, 3}, {0.55, 0.25, 0.2});
  REQUIRE(sarc::compute_metrics(miss, {2}, names).rmse == Approx(0.55).margin(1e-9));

  // two items average quadratically
  DT both({2, 3}, {0.8, 0.15, 0.05, 0.1, 0.7, 0.2});
  double expect = std::sqrt((0.2 * 0.2 + 0.7 * 0.7) / 2.0);
  REQUIRE(sarc::compute_metrics(both, {0, 0}, names).rmse == Approx(expect).margin(1e-9));
}

TEST_CASE("macro f1 counts absent classes as zero") {
  std::vector<std::string> names = {"true", "false", "unverified"};
  // class 2 never appears in labels or predictions
  DT probs({2, 3}, {0.9, 0.05, 0.05, 0.1, 0.85, 0.05});
  auto m = sarc::compute_metrics(probs, {0, 1}, names);
  REQUIRE(m.macro_f1 == Approx((1.0 + 1.0 + 0.0) / 3).epsilon(1e-9));
}

TEST_CASE("metrics agree with a brute-force oracle on random data") {
  sarc::RunRng rng(2025);
  for (int trial = 0; trial < 100; ++trial) {
    int n = 1 + static_cast<int>(rng.index(30));
    int classes = 2 + static_cast<int>(rng.index(2));
    std::vector<std::string> names =
        classes == 2 ? std::vector<std::string>{"real", "fake"}
                     : std::vector<std::string>{"true", "false", "unverified"};
    DT logits({n, classes});
    for (auto& v : logits.values()) v = rng.normal();
    DT probs = sarc::softmax_rows(logits);
    std::vector<int> labels(n);
    for (auto& l : labels) l = static_cast<int>(rng.index(classes));
    auto m = sarc::compute_metrics(probs, labels, names);

    // independent confusion-count pass
    std::vector<int> preds(n);
    for (int i = 0; i < n; ++i) {
      int best = 0;
      for (int j = 1; j < classes; ++j)
        if (probs.at(i, j) > probs.at(i, best)) best = j;
      preds[i] = best;
    }
    int correct = 0;
    for (int i = 0; i < n; ++i) correct += preds[i] == labels[i];
    REQUIRE(m.accuracy == Approx(static_cast<double>(correct) / n).epsilon(1e-12));
    double macro = 0;
    for (int c = 0; c < classes; ++c) {
      int tp = 0, fp = 0, fn = 0;
      for (int i = 0; i < n; ++i) {
        if (preds[i] == c && labels[i] == c) ++tp;
        if (preds[i] == c && labels[i] != c) ++fp;
        if (preds[i] != c && labels[i] == c) ++fn;
      }
      double p = tp || fp ? tp / double(tp + fp) : 0.0;
      double r = tp || fn ? tp / double(tp + fn) : 0.0;
      macro += p + r > 0 ? 2 * p * r / (p + r) : 0.0;
    }
    REQUIRE(m.macro_f1 == Approx(macro / classes).margin(1e-12));
  }
}
