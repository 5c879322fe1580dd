#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "sarc/rng.hpp"
#include "sarc/tensor.hpp"

using Catch::Approx;
using sarc::Tensor;
using sarc::Tape;
using DT = Tensor<double>;

namespace {

// Runs fn under a fresh tape, backpropagates the scalar it returns, and
// leaves gradients on the inputs fn touched.
template <typename F>
double run_backward(F&& fn) {
  Tape<double> tape;
  Tape<double>::Scope scope(tape);
  DT loss = fn();
  tape.backward(loss);
  return loss.value();
}

}  // namespace

TEST_CASE("tensor construction and accessors") {
  DT a({2, 3}, {1, 2, 3, 4, 5, 6});
  REQUIRE(a.rows() == 2);
  REQUIRE(a.cols() == 3);
  REQUIRE(a.at(1, 2) == 6.0);

  DT v({3}, {7, 8, 9});
  REQUIRE(v.rows() == 1);
  REQUIRE(v.cols() == 3);

  REQUIRE(DT::scalar(5.0).value() == 5.0);
  REQUIRE_THROWS_AS(DT({1, 2, 3}), std::invalid_argument);
  REQUIRE_THROWS_AS(DT({2, 2}, {1.0, 2.0}), std::invalid_argument);
  REQUIRE_THROWS_AS(a.value(), std::invalid_argument);
}

TEST_CASE("softmax rows match the two-logit closed form") {
  DT x({1, 2}, {1.0, 0.0});
  DT y = sarc::softmax_rows(x);
  REQUIRE(y.values()[0] == Approx(0.7310585786300049).margin(1e-4));
  REQUIRE(y.values()[1] == Approx(0.2689414213699951).margin(1e-4));
}

TEST_CASE("softmax rows are probability vectors and shift-invariant") {
  DT x({3, 4}, {5, 1, -2, 0.5, 1000, 1000, 999, 998, -1000, -1001, -999.5, -1000});
  DT y = sarc::softmax_rows(x);
  for (int i = 0; i < 3; ++i) {
    double s = 0;
    for (int j = 0; j < 4; ++j) {
      double v = y.at(i, j);
      REQUIRE(v >= 0.0);
      REQUIRE(std::isfinite(v));
      s += v;
    }
    REQUIRE(s == Approx(1.0).epsilon(1e-12));
  }
  // adding a constant to a row leaves its softmax unchanged
  DT shifted({1, 4}, {5 + 3.25, 1 + 3.25, -2 + 3.25, 0.5 + 3.25});
  DT ys = sarc::softmax_rows(shifted);
  for (int j = 0; j < 4; ++j) REQUIRE(ys.values()[j] == Approx(y.at(0, j)).epsilon(1e-12));
}

TEST_CASE("sigmoid and tanh derivatives at zero") {
  DT x = DT::scalar(0.0).set_requires_grad();
  run_backward([&] { return sarc::sum(sarc::sigmoid(x)); });
  REQUIRE(x.grad()[0] == Approx(0.25).epsilon(1e-12));

  DT t = DT::scalar(0.0).set_requires_grad();
  run_backward([&] { return sarc::sum(sarc::tanh(t)); });
  REQUIRE(t.grad()[0] == Approx(1.0).epsilon(1e-12));
}

TEST_CASE("product sum has bilinear gradients") {
  DT x({3}, {1, 2, 3});
  DT y({3}, {4, 5, 6});
  x.set_requires_grad();
  y.set_requires_grad();
  double loss = run_backward([&] { return sarc::sum(sarc::mul(x, y)); });
  REQUIRE(loss == Approx(32.0));
  for (int i = 0; i < 3; ++i) {
    REQUIRE(x.grad()[i] == Approx(y.values()[i]));
    REQUIRE(y.grad()[i] == Approx(x.values()[i]));
  }
}

TEST_CASE("matmul against identity and known product") {
  DT a({2, 2}, {1, 2, 3, 4});
  DT eye({2, 2}, {1, 0, 0, 1});
  DT p = sarc::matmul(a, eye);
  for (int i = 0; i < 4; ++i) REQUIRE(p.values()[i] == a.values()[i]);

  DT b({2, 2}, {5, 6, 7, 8});
  DT c = sarc::matmul(a, b);
  REQUIRE(c.values() == std::vector<double>{19, 22, 43, 50});
  REQUIRE_THROWS_WITH(sarc::matmul(a, DT({3, 2})), Catch::Matchers::ContainsSubstring("2x2") &&
                                                       Catch::Matchers::ContainsSubstring("3x2"));
}

TEST_CASE("matmul gradients follow the transpose rule") {
  DT a({2, 3}, {1, -2, 0.5, 3, 1, -1});
  DT b({3, 2}, {2, 0, 1, -1, 0.5, 4});
  a.set_requires_grad();
  b.set_requires_grad();
  run_backward([&] { return sarc::sum(sarc::matmul(a, b)); });
  // d sum(AB) / dA = ones * B^T (row sums of B), broadcast over rows of A
  for (int i = 0; i < 2; ++i)
    for (int k = 0; k < 3; ++k) {
      double expect = b.at(k, 0) + b.at(k, 1);
      REQUIRE(a.grad()[i * 3 + k] == Approx(expect));
    }
  for (int k = 0; k < 3; ++k)
    for (int j = 0; j < 2; ++j) {
      double expect = a.at(0, k) + a.at(1, k);
      REQUIRE(b.grad()[k * 2 + j] == Approx(expect));
    }
}

TEST_CASE("l2 normalization produces unit rows") {
  DT x({1, 2}, {3, 4});
  DT y = sarc::l2_normalize_rows(x);
  REQUIRE(y.values()[0] == Approx(0.6).epsilon(1e-9));
  REQUIRE(y.values()[1] == Approx(0.8).epsilon(1e-9));

  DT z({2, 3}, {0, 0, 0, 1, -2, 2});
  DT nz = sarc::l2_normalize_rows(z);
  for (int j = 0; j < 3; ++j) REQUIRE(nz.at(0, j) == 0.0);  // zero rows stay zero
  double n = 0;
  for (int j = 0; j < 3; ++j) n += nz.at(1, j) * nz.at(1, j);
  REQUIRE(std::sqrt(n) == Approx(1.0).margin(1e-6));
}

TEST_CASE("fan-out accumulates gradients additively") {
  DT x = DT::scalar(3.0).set_requires_grad();
  double loss = run_backward([&] { return sarc::add(x, x); });
  REQUIRE(loss == Approx(6.0));
  REQUIRE(x.grad()[0] == Approx(2.0));

  DT v({2}, {1.0, 2.0});
  v.set_requires_grad();
  run_backward([&] {
    DT doubled = sarc::add(v, v);
    return sarc::sum(sarc::mul(doubled, v));  // sum(2 v^2), grad 4 v
  });
  REQUIRE(v.grad()[0] == Approx(4.0));
  REQUIRE(v.grad()[1] == Approx(8.0));
}

TEST_CASE("recorded graph orders operands before results") {
  Tape<double> tape;
  Tape<double>::Scope scope(tape);
  DT x({2}, {1, 2});
  x.set_requires_grad();
  DT y = sarc::sigmoid(x);
  DT z = sarc::sum(sarc::mul(y, x));
  for (const auto& op : tape.ops()) {
    for (const auto& in : op.in) REQUIRE(in->node_id < op.out->node_id);
  }
  REQUIRE(z.node_id() > y.node_id());
  REQUIRE(y.node_id() > x.node_id());
}

TEST_CASE("backward requires a scalar recorded on the active tape") {
  Tape<double> tape;
  {
    Tape<double>::Scope scope(tape);
    DT x({2}, {1, 2});
    x.set_requires_grad();
    DT y = sarc::sigmoid(x);
    REQUIRE_THROWS_AS(tape.backward(y), std::invalid_argument);  // not scalar
    DT loss = sarc::sum(y);
    tape.backward(loss);
    REQUIRE(x.grad().size() == 2);
  }
  Tape<double> empty;
  Tape<double>::Scope scope(empty);
  REQUIRE_THROWS_AS(empty.backward(DT::scalar(1.0)), std::runtime_error);
}

TEST_CASE("tape clear invalidates earlier recordings") {
  Tape<double> tape;
  Tape<double>::Scope scope(tape);
  DT x = DT::scalar(2.0).set_requires_grad();
  DT stale = sarc::sum(x);
  tape.clear();
  REQUIRE_THROWS_AS(tape.backward(stale), std::runtime_error);  // empty after clear
  DT fresh = sarc::sum(sarc::mul(x, x));
  tape.backward(fresh);
  REQUIRE(x.grad()[0] == Approx(4.0));
}

TEST_CASE("gradients reset between backward passes") {
  DT x = DT::scalar(1.5).set_requires_grad();
  run_backward([&] { return sarc::sum(sarc::mul(x, x)); });
  REQUIRE(x.grad()[0] == Approx(3.0));
  run_backward([&] { return sarc::sum(sarc::mul(x, x)); });
  REQUIRE(x.grad()[0] == Approx(3.0));  // not 6: fresh pass starts from zero
}

TEST_CASE("add and sub broadcast scalars and rows") {
  DT m({2, 2}, {1, 2, 3, 4});
  DT row({1, 2}, {10, 20});
  DT s = DT::scalar(5);
  REQUIRE(sarc::add(m, row).values() == std::vector<double>{11, 22, 13, 24});
  REQUIRE(sarc::add(m, s).values() == std::vector<double>{6, 7, 8, 9});
  REQUIRE(sarc::sub(m, s).values() == std::vector<double>{-4, -3, -2, -1});
  REQUIRE_THROWS_AS(sarc::add(m, DT({3, 2})), std::invalid_argument);

  m.set_requires_grad();
  row.set_requires_grad();
  run_backward([&] { return sarc::sum(sarc::add(m, row)); });
  REQUIRE(row.grad()[0] == Approx(2.0));  // one per matrix row
  REQUIRE(row.grad()[1] == Approx(2.0));
  REQUIRE(m.grad() == std::vector<double>(4, 1.0));
}

TEST_CASE("mul broadcasts scalars from either side") {
  DT m({2, 2}, {1, 2, 3, 4});
  DT s = DT::scalar(3);
  REQUIRE(sarc::mul(m, s).values() == std::vector<double>{3, 6, 9, 12});
  REQUIRE(sarc::mul(s, m).values() == std::vector<double>{3, 6, 9, 12});

  m.set_requires_grad();
  s.set_requires_grad();
  run_backward([&] { return sarc::sum(sarc::mul(m, s)); });
  REQUIRE(s.grad()[0] == Approx(10.0));  // sum of matrix entries
  REQUIRE(m.grad() == std::vector<double>(4, 3.0));
}

TEST_CASE("scale applies a constant factor to values and gradients") {
  DT x({2}, {3, -4});
  x.set_requires_grad();
  run_backward([&] { return sarc::sum(sarc::scale(x, 0.5)); });
  REQUIRE(x.grad()[0] == Approx(0.5));
  REQUIRE(x.grad()[1] == Approx(0.5));
}

TEST_CASE("relu keeps positives and blocks gradient at or below zero") {
  DT x({4}, {-2.0, 0.0, 0.5, 3.0});
  x.set_requires_grad();
  run_backward([&] { return sarc::sum(sarc::relu(x)); });
  REQUIRE(sarc::relu(x).values() == std::vector<double>{0, 0, 0.5, 3.0});
  REQUIRE(x.grad() == std::vector<double>{0, 0, 1, 1});
}

TEST_CASE("log clamps vanishing inputs instead of diverging") {
  DT x({2}, {0.0, 1.0});
  DT y = sarc::log(x);
  REQUIRE(std::isfinite(y.values()[0]));
  REQUIRE(y.values()[0] == Approx(std::log(1e-12)));
  REQUIRE(y.values()[1] == 0.0);
}

TEST_CASE("concatenation splits gradients back to its parts") {
  DT a({2, 2}, {1, 2, 3, 4});
  DT b({2, 1}, {5, 6});
  DT cc = sarc::concat_cols(a, b);
  REQUIRE(cc.shape() == sarc::Shape{2, 3});
  REQUIRE(cc.values() == std::vector<double>{1, 2, 5, 3, 4, 6});
  REQUIRE_THROWS_AS(sarc::concat_cols(a, DT({3, 1})), std::invalid_argument);

  a.set_requires_grad();
  b.set_requires_grad();
  run_backward([&] { return sarc::sum(sarc::scale(sarc::concat_cols(a, b), 2.0)); });
  REQUIRE(a.grad() == std::vector<double>(4, 2.0));
  REQUIRE(b.grad() == std::vector<double>(2, 2.0));

  DT r1({1, 2}, {1, 2});
  DT r2({2, 2}, {3, 4, 5, 6});
  DT cr = sarc::concat_rows<double>({r1, r2});
  REQUIRE(cr.shape() == sarc::Shape{3, 2});
  REQUIRE(cr.values() == std::vector<double>{1, 2, 3, 4, 5, 6});
  r1.set_requires_grad();
  run_backward([&] { return sarc::sum(sarc::concat_rows<double>({r1, r2})); });
  REQUIRE(r1.grad() == std::vector<double>(2, 1.0));
}

TEST_CASE("mean over rows spreads gradient uniformly") {
  DT x({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  DT m = sarc::mean_rows(x);
  REQUIRE(m.values()[0] == Approx(4.0));
  REQUIRE(m.values()[1] == Approx(5.0));
  x.set_requires_grad();
  run_backward([&] { return sarc::sum(sarc::mean_rows(x)); });
  for (double g : x.grad()) REQUIRE(g == Approx(0.25));
}

TEST_CASE("transpose and reshape are gradient-exact views") {
  DT x({2, 3}, {1, 2, 3, 4, 5, 6});
  DT t = sarc::transpose(x);
  REQUIRE(t.shape() == sarc::Shape{3, 2});
  REQUIRE(t.at(2, 1) == 6.0);
  x.set_requires_grad();
  run_backward([&] {
    DT w({2, 3}, {1, 10, 100, 1000, 1e4, 1e5});
    return sarc::sum(sarc::mul(sarc::transpose(sarc::transpose(x)), w));
  });
  REQUIRE(x.grad()[5] == Approx(1e5));

  DT flat = sarc::reshape(x, {6});
  REQUIRE(flat.rows() == 1);
  REQUIRE(flat.cols() == 6);
  REQUIRE_THROWS_AS(sarc::reshape(x, {4, 2}), std::invalid_argument);
}

TEST_CASE("dropout rescales kept activations and passes eval through") {
  sarc::RunRng rng(123);
  DT x({1, 4}, {1, 1, 1, 1});
  DT eval_out = sarc::dropout(x, 0.5, rng, /*train=*/false);
  REQUIRE(eval_out.values() == x.values());

  std::vector<char> kept = {1, 0, 1, 0};
  x.set_requires_grad();
  run_backward([&] { return sarc::sum(sarc::dropout_with_mask(x, kept, 0.5)); });
  DT masked = sarc::dropout_with_mask(x, kept, 0.5);
  REQUIRE(masked.values() == std::vector<double>{2, 0, 2, 0});
  REQUIRE(x.grad() == std::vector<double>{2, 0, 2, 0});
  REQUIRE_THROWS_AS(sarc::dropout(x, 1.0, rng, true), std::invalid_argument);
}

TEST_CASE("gather accumulates scattered gradients on duplicate rows") {
  DT table({3, 2}, {1, 2, 3, 4, 5, 6});
  DT g = sarc::gather_rows(table, {2, 0, 2});
  REQUIRE(g.values() == std::vector<double>{5, 6, 1, 2, 5, 6});
  REQUIRE_THROWS_AS(sarc::gather_rows(table, {3}), std::invalid_argument);

  table.set_requires_grad();
  run_backward([&] { return sarc::sum(sarc::gather_rows(table, {2, 0, 2})); });
  REQUIRE(table.grad() == std::vector<double>{1, 1, 0, 0, 2, 2});
}

TEST_CASE("finite differences confirm the pointwise chain") {
  sarc::RunRng rng(99);
  DT x({2, 3});
  for (auto& v : x.values()) v = rng.normal() * 0.8;

  auto composite = [](const DT& t) {
    DT s = sarc::sigmoid(t);
    DT h = sarc::tanh(sarc::scale(t, 0.7));
    DT e = sarc::exp(sarc::scale(t, 0.3));
    return sarc::sum(sarc::mul(sarc::add(s, h), e));
  };
  REQUIRE(sarc::grad_check(composite, x, 1e-5) < 1e-6);

  auto through_softmax = [](const DT& t) {
    DT w({2, 3}, {0.3, -1.2, 0.5, 2.0, 0.1, -0.4});
    return sarc::sum(sarc::mul(sarc::softmax_rows(t), w));
  };
  REQUIRE(sarc::grad_check(through_softmax, x, 1e-5) < 1e-6);

  auto through_norm = [](const DT& t) {
    DT w({2, 3}, {1.0, -2.0, 0.5, 0.25, 3.0, -1.0});
    return sarc::sum(sarc::mul(sarc::l2_normalize_rows(t), w));
  };
  REQUIRE(sarc::grad_check(through_norm, x, 1e-5) < 1e-6);

  auto through_matmul = [](const DT& t) {
    DT w({3, 2}, {0.5, -0.25, 1.5, 2.0, -1.0, 0.75});
    return sarc::sum(sarc::log(sarc::exp(sarc::matmul(t, w))));
  };
  REQUIRE(sarc::grad_check(through_matmul, x, 1e-5) < 1e-6);
}

TEST_CASE("grad check handles simple and degenerate functions") {
  DT x({3}, {1.0, -2.0, 0.5});
  auto sumsq = [](const DT& t) { return sarc::sum(sarc::mul(t, t)); };
  REQUIRE(sarc::grad_check(sumsq, x, 1e-5) < 1e-6);

  auto constant = [](const DT&) { return DT::scalar(42.0); };
  REQUIRE(sarc::grad_check(constant, x, 1e-5) == 0.0);

  REQUIRE_THROWS_AS(sarc::grad_check(sumsq, x, 1e-2), std::invalid_argument);
  REQUIRE_THROWS_AS(sarc::grad_check(sumsq, x, 1e-8), std::invalid_argument);
}

TEST_CASE("recurrent cell fixes zero parameters at the zero state") {
  int di = 3, dh = 2;
  DT x({1, di}, {0.5, -1.0, 2.0});
  DT h({1, dh});
  DT w({di, dh}), u({dh, dh}), b({1, dh});
  DT hn = sarc::gru_cell(x, h, w, w, w, u, u, u, b, b, b);
  // update gate sits at one half and the candidate at zero, so the state stays zero
  REQUIRE(hn.values() == std::vector<double>(dh, 0.0));
}

TEST_CASE("recurrent cell mask carries the previous state through") {
  sarc::RunRng rng(7);
  int di = 3, dh = 2;
  auto rnd = [&](sarc::Shape s) {
    DT t(std::move(s));
    for (auto& v : t.values()) v = rng.normal() * 0.5;
    return t;
  };
  DT x = rnd({1, di});
  DT h = rnd({1, dh});
  DT wz = rnd({di, dh}), wr = rnd({di, dh}), wh = rnd({di, dh});
  DT uz = rnd({dh, dh}), ur = rnd({dh, dh}), uh = rnd({dh, dh});
  DT bz = rnd({1, dh}), br = rnd({1, dh}), bh = rnd({1, dh});
  DT carried = sarc::gru_cell(x, h, wz, wr, wh, uz, ur, uh, bz, br, bh, 0.0);
  REQUIRE(carried.values() == h.values());
  DT stepped = sarc::gru_cell(x, h, wz, wr, wh, uz, ur, uh, bz, br, bh, 1.0);
  REQUIRE(stepped.values() != h.values());
}

TEST_CASE("finite differences confirm the recurrent cell for every operand") {
  sarc::RunRng rng(11);
  int di = 3, dh = 2;
  auto rnd = [&](sarc::Shape s) {
    DT t(std::move(s));
    for (auto& v : t.values()) v = rng.normal() * 0.6;
    return t;
  };
  std::vector<DT> ops = {rnd({1, di}),  rnd({1, dh}),  rnd({di, dh}), rnd({di, dh}),
                         rnd({di, dh}), rnd({dh, dh}), rnd({dh, dh}), rnd({dh, dh}),
                         rnd({1, dh}),  rnd({1, dh}),  rnd({1, dh})};
  DT probe({1, dh}, {1.3, -0.8});
  for (double mask : {1.0, 0.4}) {
    for (std::size_t slot = 0; slot < ops.size(); ++slot) {
      auto fn = [&, slot, mask](const DT& t) {
        std::vector<DT> o = ops;
        o[slot] = t;
        DT hn = sarc::gru_cell(o[0], o[1], o[2], o[3], o[4], o[5], o[6], o[7], o[8], o[9], o[10], mask);
        return sarc::sum(sarc::mul(hn, probe));
      };
      INFO("operand slot " << slot << " mask " << mask);
      REQUIRE(sarc::grad_check(fn, ops[slot], 1e-5) < 1e-6);
    }
  }
}

TEST_CASE("run rng is reproducible and restorable") {
  sarc::RunRng a(2024), b(2024);
  for (int i = 0; i < 100; ++i) {
    REQUIRE(a.uniform() == b.uniform());
    REQUIRE(a.normal() == b.normal());
    REQUIRE(a.index(17) == b.index(17));
  }
  std::string s = a.state();
  double next = a.uniform();
  sarc::RunRng c(0);
  c.set_state(s);
  REQUIRE(c.uniform() == next);

  double u = 0;
  for (int i = 0; i < 1000; ++i) {
    u = a.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    std::size_t k = a.index(13);
    REQUIRE(k < 13);
  }
  std::vector<int> xs = {1, 2, 3, 4, 5, 6, 7, 8};
  auto ys = xs;
  sarc::RunRng s1(5), s2(5);
  s1.shuffle(xs);
  s2.shuffle(ys);
  REQUIRE(xs == ys);
}
