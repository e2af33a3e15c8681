#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "lda/error.hpp"
#include "lda/tensor.hpp"
#include "support.hpp"

using namespace lda;
using lda::testing::GradCheckCase;
using lda::testing::max_grad_error;
using lda::testing::random_values;
using lda::testing::random_values_offset;

TEST_CASE("tensor shape invariant and accessors") {
  Tensor t = Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t.at(1, 2) == 6.0);
  CHECK_THROWS_AS(Tensor::constant({2, 2}, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor::scalar(1.0).rows(), ShapeError);
}

TEST_CASE("matmul identity and orthogonal rows") {
  Tensor a = Tensor::constant({2, 2}, {1, 2, 3, 4});
  Tensor eye = Tensor::constant({2, 2}, {1, 0, 0, 1});
  Tensor c = matmul(a, eye);
  CHECK(c.values() == std::vector<double>{1, 2, 3, 4});

  Tensor u = Tensor::constant({1, 2}, {1, 0});
  Tensor v = Tensor::constant({2, 1}, {0, 5});
  CHECK(matmul(u, v).values() == std::vector<double>{0});

  CHECK_THROWS_WITH_AS(matmul(a, Tensor::constant({3, 1}, {1, 2, 3})),
                       doctest::Contains("[2x2]"), ShapeError);
}

TEST_CASE("matmul gradient vs finite differences") {
  GradCheckCase c{
      {{3, 4}, {4, 2}},
      [](const std::vector<Tensor>& leaves) {
        return sum(matmul(leaves[0], leaves[1]));
      }};
  const double err =
      max_grad_error(c, {random_values(12, 7), random_values(8, 8)});
  CHECK(err < 1e-6);
}

TEST_CASE("elementwise trivial cases") {
  Tensor x = Tensor::constant({3}, {1, 2, 3});
  CHECK(sum(x).value() == 6.0);
  CHECK(mean(x).value() == 2.0);

  {
    Tape tape;
    Tensor p = Tensor::param({3}, {1, 2, 3});
    Tensor s = sum(p);
    tape.backward(s);
    CHECK(p.grad() == std::vector<double>{1, 1, 1});
  }
  {
    Tape tape;
    Tensor p = Tensor::param({1}, {-3.0});
    Tensor r = relu(p);
    CHECK(r.values()[0] == 0.0);
    tape.backward(sum(r));
    CHECK(p.grad() == std::vector<double>{0.0});
  }
}

TEST_CASE("broadcast rules") {
  Tensor m = Tensor::constant({2, 2}, {1, 2, 3, 4});
  Tensor s = Tensor::scalar(10.0);
  CHECK(add(m, s).values() == std::vector<double>{11, 12, 13, 14});
  CHECK(add(s, m).values() == std::vector<double>{11, 12, 13, 14});
  Tensor rowv = Tensor::constant({2}, {10, 20});
  CHECK(add(m, rowv).values() == std::vector<double>{11, 22, 13, 24});
  CHECK(mul(m, rowv).values() == std::vector<double>{10, 40, 30, 80});
  CHECK_THROWS_AS(add(m, Tensor::constant({3}, {1, 2, 3})), ShapeError);

  // Row-broadcast gradient sums over the rows.
  Tape tape;
  Tensor b = Tensor::param({2}, {10, 20});
  tape.backward(sum(add(m, b)));
  CHECK(b.grad() == std::vector<double>{2, 2});
}

TEST_CASE("composite mean/exp/log gradient vs finite differences") {
  GradCheckCase c{
      {{2, 3}},
      [](const std::vector<Tensor>& leaves) {
        return mean(log(exp(scale(leaves[0], 0.5))));
      }};
  const double err = max_grad_error(c, {random_values(6, 12)});
  CHECK(err < 1e-6);
}

TEST_CASE("log clamps small probabilities and rejects negatives") {
  Tensor tiny = Tensor::constant({1}, {1e-30});
  CHECK(log(tiny).values()[0] == doctest::Approx(std::log(kEpsLog)));
  CHECK_THROWS_AS(log(Tensor::constant({1}, {-0.5})), NumericDomainError);
}

TEST_CASE("log_softmax symmetry, stability, and row sums") {
  Tensor sym = log_softmax(Tensor::constant({1, 2}, {0, 0}));
  CHECK(sym.values()[0] == doctest::Approx(std::log(0.5)));
  CHECK(sym.values()[1] == doctest::Approx(std::log(0.5)));

  Tensor stable = log_softmax(Tensor::constant({1, 2}, {1000, 0}));
  CHECK(std::isfinite(stable.values()[0]));
  CHECK(stable.values()[0] == doctest::Approx(0.0));
  CHECK(stable.values()[1] == doctest::Approx(-1000.0));

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Tensor ls =
        log_softmax(Tensor::constant({4, 5}, random_values(20, seed, -5, 5)));
    for (std::size_t i = 0; i < 4; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < 5; ++j) total += std::exp(ls.values()[i * 5 + j]);
      CHECK(std::abs(total - 1.0) < 1e-12);
    }
  }
  CHECK_THROWS_AS(log_softmax(Tensor::constant({2, 1}, {1, 2})), ShapeError);
}

TEST_CASE("log_softmax gradient vs finite differences") {
  GradCheckCase c{
      {{3, 4}},
      [](const std::vector<Tensor>& leaves) {
        return mean(mul(log_softmax(leaves[0]),
                        Tensor::constant({3, 4}, random_values(12, 99))));
      }};
  CHECK(max_grad_error(c, {random_values(12, 13, -2, 2)}) < 1e-6);
}

TEST_CASE("cosine endpoints") {
  Tensor u = Tensor::constant({2}, {1, 0});
  Tensor v = Tensor::constant({2}, {0, 1});
  Tensor w = Tensor::constant({2}, {-1, 0});
  Tensor q = Tensor::constant({3}, {0.3, -0.7, 2.0});
  CHECK(cosine(q, q).value() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cosine(u, v).value() == 0.0);
  CHECK(cosine(u, w).value() == doctest::Approx(-1.0));
}

TEST_CASE("cosine degenerate input gives zero value and zero gradient") {
  Tape tape;
  Tensor z = Tensor::param({2}, {0, 0});
  Tensor u = Tensor::param({2}, {1, 2});
  Tensor c = cosine(z, u);
  CHECK(c.value() == 0.0);
  tape.backward(c);
  CHECK(z.grad() == std::vector<double>{0, 0});
  CHECK(u.grad() == std::vector<double>{0, 0});
}

TEST_CASE("cosine gradient vs finite differences") {
  GradCheckCase c{
      {{5}, {5}},
      [](const std::vector<Tensor>& leaves) {
        return cosine(leaves[0], leaves[1]);
      }};
  CHECK(max_grad_error(c, {random_values_offset(5, 3, 0.2),
                           random_values_offset(5, 4, 0.2)}) < 1e-6);
}

TEST_CASE("gather and row and mean_rows") {
  Tensor m = Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  const std::vector<int> labels{2, 0};
  CHECK(gather(m, labels).values() == std::vector<double>{3, 4});
  const std::vector<int> bad{3, 0};
  CHECK_THROWS_AS(gather(m, bad), LabelError);

  CHECK(row(m, 1).values() == std::vector<double>{4, 5, 6});
  const std::vector<std::size_t> idx{0, 1};
  CHECK(mean_rows(m, idx).values() == std::vector<double>{2.5, 3.5, 4.5});
}

TEST_CASE("gradient accumulation is additive across uses") {
  Tape tape;
  Tensor p = Tensor::param({2}, {1, 2});
  Tensor out = sum(add(p, p));
  tape.backward(out);
  CHECK(p.grad() == std::vector<double>{2, 2});
}

TEST_CASE("backward of a sum of losses equals the sum of backward passes") {
  const auto values = random_values(6, 21);
  const auto weights = random_values(6, 22);

  auto forward_pair = [&](const Tensor& p) {
    Tensor l1 = mean(mul(p, Tensor::constant({2, 3}, weights)));
    Tensor l2 = sum(relu(p));
    return std::make_pair(l1, l2);
  };

  std::vector<double> joint;
  {
    Tape tape;
    Tensor p = Tensor::param({2, 3}, values);
    auto [l1, l2] = forward_pair(p);
    tape.backward(add(l1, l2));
    joint = p.grad();
  }
  std::vector<double> separate;
  {
    Tensor p = Tensor::param({2, 3}, values);
    {
      Tape tape;
      auto [l1, l2] = forward_pair(p);
      tape.backward(l1);
    }
    {
      Tape tape;
      auto [l1, l2] = forward_pair(p);
      tape.backward(l2);
    }
    separate = p.grad();
  }
  for (std::size_t i = 0; i < joint.size(); ++i) {
    CHECK(joint[i] == doctest::Approx(separate[i]).epsilon(1e-12));
  }
}

TEST_CASE("replayed forward/backward is bit-identical") {
  auto run = [] {
    Tape tape;
    Tensor p = Tensor::param({3, 3}, random_values(9, 5));
    Tensor q = Tensor::param({3, 3}, random_values(9, 6));
    Tensor out = mean(relu(matmul(p, q)));
    tape.backward(out);
    return std::make_pair(out.value(), p.grad());
  };
  const auto first = run();
  const auto second = run();
  CHECK(first.first == second.first);
  CHECK(first.second == second.second);
}

TEST_CASE("one backward per tape") {
  Tape tape;
  Tensor p = Tensor::param({2}, {1, 2});
  Tensor s = sum(p);
  tape.backward(s);
  CHECK_THROWS_AS(tape.backward(s), Error);
}

TEST_CASE("randomized gradient checks across the op suite") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    GradCheckCase c{
        {{2, 3}, {3, 2}},
        [](const std::vector<Tensor>& leaves) {
          Tensor prod = matmul(leaves[0], leaves[1]);
          Tensor act = relu(prod);
          Tensor probs = log_softmax(prod);
          return add(mean(act), scale(sum(exp(scale(probs, 0.1))), 0.01));
        }};
    // Offsets keep relu inputs away from the kink so central differences stay valid.
    const double err = max_grad_error(
        c, {random_values_offset(6, seed * 2 + 1, 0.15),
            random_values_offset(6, seed * 2 + 2, 0.15)});
    CHECK(err < 1e-4);
  }
}

TEST_CASE("op counter tracks executed ops") {
  reset_op_count();
  Tensor a = Tensor::constant({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::constant({2, 2}, {1, 0, 0, 1});
  (void)matmul(a, b);
  CHECK(op_count() == 1);
  (void)relu(a);
  CHECK(op_count() == 2);
  reset_op_count();
  CHECK(op_count() == 0);
}
