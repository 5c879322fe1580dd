#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "sarc/clustering.hpp"

using Catch::Approx;
using sarc::Tensor;
using DT = Tensor<double>;

namespace {

DT random_tensor(sarc::Shape shape, sarc::RunRng& rng, double scl = 1.0) {
  DT t(std::move(shape));
  for (auto& v : t.values()) v = rng.normal() * scl;
  return t;
}

}  // namespace

TEST_CASE("sentiment augmentation appends one polarity column") {
  DT vc({1, 2}, {0.1, 0.2});
  DT aug = sarc::augment_with_sentiment(vc, {1.0});
  REQUIRE(aug.shape() == sarc::Shape{1, 3});
  REQUIRE(aug.values() == std::vector<double>{0.1, 0.2, 1.0});

  DT many({3, 2}, {1, 2, 3, 4, 5, 6});
  DT neutral = sarc::augment_with_sentiment(many, {0.0, 0.0, 0.0});
  for (int i = 0; i < 3; ++i) REQUIRE(neutral.at(i, 2) == 0.0);

  REQUIRE_THROWS_AS(sarc::augment_with_sentiment(many, {1.0}), std::invalid_argument);
}

TEST_CASE("projection is a plain affine map") {
  sarc::RoleProjection<double> p;
  p.w = DT({3, 2});
  p.b = DT({1, 2}, {0.5, -1.0});
  DT x({2, 3}, {1, 2, 3, 4, 5, 6});
  DT zero_w = sarc::project(x, p);
  for (int i = 0; i < 2; ++i) {
    REQUIRE(zero_w.at(i, 0) == 0.5);  // zero weights leave only the bias
    REQUIRE(zero_w.at(i, 1) == -1.0);
  }

  sarc::RoleProjection<double> id;
  id.w = DT({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  id.b = DT({1, 3});
  REQUIRE(sarc::project(x, id).values() == x.values());

  sarc::RunRng rng(17);
  sarc::RoleProjection<double> r;
  r.init(3, 2, rng);
  DT y = sarc::project(x, r);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      double expect = r.b.at(0, j);
      for (int k = 0; k < 3; ++k) expect += x.at(i, k) * r.w.at(k, j);
      REQUIRE(y.at(i, j) == Approx(expect).epsilon(1e-12));
    }

  REQUIRE_THROWS_AS(sarc::project(DT({1, 4}), r), std::invalid_argument);
}

TEST_CASE("soft assignment matches the two-center closed form") {
  DT x({1, 2}, {1.0, 0.0});
  DT centers({2, 2}, {1.0, 0.0, 0.0, 1.0});  // x aligns with the first, orthogonal to the second
  auto assign = sarc::soft_assign(x, centers, DT::scalar(1.0));
  REQUIRE(assign.similarities.at(0, 0) == Approx(1.0).epsilon(1e-9));
  REQUIRE(assign.similarities.at(0, 1) == Approx(0.0).margin(1e-9));
  REQUIRE(assign.assignments.at(0, 0) == Approx(0.73106).margin(1e-4));
  REQUIRE(assign.assignments.at(0, 1) == Approx(0.26894).margin(1e-4));
}

TEST_CASE("identical centers assign uniformly") {
  DT x({2, 3}, {1, 2, 3, -1, 0.5, 2});
  DT centers({3, 3}, {1, 1, 1, 1, 1, 1, 1, 1, 1});
  auto assign = sarc::soft_assign(x, centers, DT::scalar(5.0));
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) REQUIRE(assign.assignments.at(i, j) == Approx(1.0 / 3).epsilon(1e-9));
}

TEST_CASE("large temperatures sharpen assignments toward the argmax") {
  // similarity gap 0.1 at temperature 100 pushes the winner above 0.999
  DT x({1, 2}, {1.0, 0.0});
  double ang = std::acos(0.9);
  DT centers({2, 2}, {1.0, 0.0, std::cos(ang), std::sin(ang)});
  auto assign = sarc::soft_assign(x, centers, DT::scalar(100.0));
  REQUIRE(assign.assignments.at(0, 0) >= 0.999);

  REQUIRE_THROWS_AS(sarc::soft_assign(x, centers, DT::scalar(0.0)), std::invalid_argument);
  REQUIRE_THROWS_AS(sarc::soft_assign(x, centers, DT::scalar(-2.0)), std::invalid_argument);
}

TEST_CASE("assignments are row-stochastic with entries strictly inside (0,1)") {
  sarc::RunRng rng(71);
  DT x = random_tensor({6, 4}, rng);
  DT centers = random_tensor({3, 4}, rng);
  auto assign = sarc::soft_assign(x, centers, DT::scalar(10.0));
  for (int i = 0; i < 6; ++i) {
    double s = 0;
    for (int j = 0; j < 3; ++j) {
      double q = assign.assignments.at(i, j);
      REQUIRE(q > 0.0);
      REQUIRE(q < 1.0);
      s += q;
      REQUIRE(assign.similarities.at(i, j) >= -1.0 - 1e-12);
      REQUIRE(assign.similarities.at(i, j) <= 1.0 + 1e-12);
    }
    REQUIRE(s == Approx(1.0).margin(1e-6));
  }
}

TEST_CASE("positive rescaling of a feature row changes nothing downstream") {
  sarc::RunRng rng(29);
  DT x = random_tensor({4, 5}, rng);
  DT centers = random_tensor({3, 5}, rng);
  DT tau = DT::scalar(7.0);
  auto base = sarc::soft_assign(x, centers, tau);
  DT base_roles = sarc::aggregate_roles(base.assignments, base.features_n);

  DT scaled = x.clone();
  for (int j = 0; j < 5; ++j) scaled.at(2, j) *= 37.5;
  auto other = sarc::soft_assign(scaled, centers, tau);
  DT other_roles = sarc::aggregate_roles(other.assignments, other.features_n);
  for (long i = 0; i < base.assignments.numel(); ++i)
    REQUIRE(other.assignments.values()[i] == Approx(base.assignments.values()[i]).margin(1e-9));
  for (long i = 0; i < base_roles.numel(); ++i)
    REQUIRE(other_roles.values()[i] == Approx(base_roles.values()[i]).margin(1e-9));
}

TEST_CASE("permuting comments permutes assignments and preserves the role matrix") {
  sarc::RunRng rng(31);
  DT x = random_tensor({4, 3}, rng);
  DT centers = random_tensor({3, 3}, rng);
  DT tau = DT::scalar(4.0);
  auto base = sarc::soft_assign(x, centers, tau);
  DT base_roles = sarc::aggregate_roles(base.assignments, base.features_n);

  std::vector<int> perm = {3, 1, 0, 2};
  DT shuffled({4, 3});
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j) shuffled.at(i, j) = x.at(perm[i], j);
  auto other = sarc::soft_assign(shuffled, centers, tau);
  DT other_roles = sarc::aggregate_roles(other.assignments, other.features_n);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j)
      REQUIRE(other.assignments.at(i, j) == Approx(base.assignments.at(perm[i], j)).epsilon(1e-12));
  for (long i = 0; i < base_roles.numel(); ++i)
    REQUIRE(other_roles.values()[i] == Approx(base_roles.values()[i]).margin(1e-12));
}

TEST_CASE("role aggregation is the assignment-weighted feature sum") {
  DT eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  DT feats({3, 2}, {1, 2, 3, 4, 5, 6});
  REQUIRE(sarc::aggregate_roles(eye, feats).values() == feats.values());

  DT uniform({1, 3}, {1.0 / 3, 1.0 / 3, 1.0 / 3});
  DT one({1, 2}, {0.6, 0.8});
  DT spread = sarc::aggregate_roles(uniform, one);
  for (int k = 0; k < 3; ++k) {
    REQUIRE(spread.at(k, 0) == Approx(0.2));
    REQUIRE(spread.at(k, 1) == Approx(0.8 / 3));
  }

  sarc::RunRng rng(13);
  DT q({3, 2}, {0.3, 0.7, 0.9, 0.1, 0.5, 0.5});
  DT f = random_tensor({3, 2}, rng);
  DT roles = sarc::aggregate_roles(q, f);
  for (int k = 0; k < 2; ++k)
    for (int d = 0; d < 2; ++d) {
      double expect = 0;
      for (int j = 0; j < 3; ++j) expect += q.at(j, k) * f.at(j, d);
      REQUIRE(roles.at(k, d) == Approx(expect).epsilon(1e-12));
    }
  REQUIRE_THROWS_AS(sarc::aggregate_roles(q, DT({2, 2})), std::invalid_argument);
}

TEST_CASE("hard assignments break ties toward the lowest index") {
  DT q({3, 3}, {0.7, 0.2, 0.1, 1.0 / 3, 1.0 / 3, 1.0 / 3, 0.1, 0.1, 0.8});
  REQUIRE(sarc::hard_assignments(q) == std::vector<int>{0, 0, 2});

  sarc::RunRng rng(3);
  DT r = random_tensor({20, 5}, rng);
  auto hard = sarc::hard_assignments(r);
  for (int i = 0; i < 20; ++i) {
    for (int j = 0; j < 5; ++j) REQUIRE(r.at(i, hard[i]) >= r.at(i, j));
  }
  // argmax is invariant under a strictly increasing transform of a row
  DT t = r.clone();
  for (auto& v : t.values()) v = std::exp(0.5 * v) + 3.0;
  REQUIRE(sarc::hard_assignments(t) == hard);
}

TEST_CASE("center initialization lies on the unit sphere and needs two clusters") {
  sarc::RunRng rng(55);
  sarc::RoleCenters<double> c;
  c.init(4, 6, rng);
  REQUIRE(c.k() == 4);
  for (int i = 0; i < 4; ++i) {
    double n = 0;
    for (int j = 0; j < 6; ++j) n += c.centers.at(i, j) * c.centers.at(i, j);
    REQUIRE(std::sqrt(n) == Approx(1.0).margin(1e-9));
  }
  REQUIRE(std::exp(c.rho.value()) == Approx(10.0).epsilon(1e-12));
  sarc::RoleCenters<double> bad;
  REQUIRE_THROWS_AS(bad.init(1, 6, rng), std::invalid_argument);
}

TEST_CASE("finite differences confirm the clustering chain") {
  sarc::RunRng rng(63);
  DT x = random_tensor({3, 4}, rng);
  DT centers = random_tensor({2, 4}, rng);
  DT probe = random_tensor({2, 4}, rng, 0.5);

  auto through_features = [&](const DT& t) {
    auto assign = sarc::soft_assign(t, centers, DT::scalar(5.0));
    DT roles = sarc::aggregate_roles(assign.assignments, assign.features_n);
    return sarc::sum(sarc::mul(roles, probe));
  };
  REQUIRE(sarc::grad_check(through_features, x, 1e-5) < 1e-6);

  auto through_centers = [&](const DT& t) {
    auto assign = sarc::soft_assign(x, t, DT::scalar(5.0));
    DT roles = sarc::aggregate_roles(assign.assignments, assign.features_n);
    return sarc::sum(sarc::mul(roles, probe));
  };
  REQUIRE(sarc::grad_check(through_centers, centers, 1e-5) < 1e-6);

  auto through_rho = [&](const DT& t) {
    auto assign = sarc::soft_assign(x, centers, sarc::exp(t));
    DT roles = sarc::aggregate_roles(assign.assignments, assign.features_n);
    return sarc::sum(sarc::mul(roles, probe));
  };
  REQUIRE(sarc::grad_check(through_rho, DT::scalar(std::log(10.0)), 1e-5) < 1e-6);
}
