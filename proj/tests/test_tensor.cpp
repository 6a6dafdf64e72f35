#include <stdexcept>
#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "same/rng.hpp"
#include "same/tensor.hpp"

using namespace same;

namespace {

// Central finite differences on a scalar-valued function of one tensor's
// flat data. Used as the independent gradient oracle for every primitive.
std::vector<double> fd_grad(Tensor& x,
                            const std::function<double()>& f,
                            double step = 1e-4) {
  std::vector<double> g(x.size());
  for (int i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + step;
    const double hi = f();
    x.data()[i] = keep - step;
    const double lo = f();
    x.data()[i] = keep;
    g[i] = (hi - lo) / (2.0 * step);
  }
  return g;
}

void check_close(const std::vector<double>& a, const std::vector<double>& b,
                 double rel_tol = 1e-3) {
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::fabs(a[i]), std::fabs(b[i]), 1e-6});
    CHECK(std::fabs(a[i] - b[i]) / scale < rel_tol);
  }
}

Tensor random_tensor(Shape shape, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data()) v = rng.normal();
  return t;
}

// Checks d(scalar_fn)/dx against finite differences for a random input.
void gradient_check(Shape shape,
                    const std::function<Tensor(Tape*, const Tensor&)>& fn,
                    uint64_t seed) {
  Rng rng(seed);
  Tensor x = random_tensor(std::move(shape), rng);
  Tape tape;
  Tensor loss = reduce_sum(&tape, fn(&tape, x));
  tape.backward(loss);
  auto numeric = fd_grad(x, [&] { return reduce_sum(nullptr, fn(nullptr, x)).item(); });
  check_close(x.grad(), numeric);
}

}  // namespace

TEST_CASE("matmul forward: identity and hand-computed products") {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor b({2, 2}, {2, 3, 4, 5});
  Tensor out = matmul(nullptr, eye, b);
  CHECK(out.data() == std::vector<double>{2, 3, 4, 5});

  Tensor r({1, 2}, {1, 2});
  Tensor c({2, 1}, {3, 4});
  CHECK(matmul(nullptr, r, c).data() == std::vector<double>{11});
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b({2, 2}, {1, 2, 3, 4});
  CHECK_THROWS_AS(matmul(nullptr, a, b), std::invalid_argument);
}

TEST_CASE("matmul gradient of sum w.r.t. A equals ones x B^T") {
  Rng rng(11);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 2}, rng);
  Tape tape;
  Tensor loss = reduce_sum(&tape, matmul(&tape, a, b));
  tape.backward(loss);
  // d sum(AB) / dA_{ij} = sum_k B_{jk}
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) {
      double expected = 0.0;
      for (int k = 0; k < 2; ++k) expected += b.data()[j * 2 + k];
      CHECK(a.grad()[i * 4 + j] == doctest::Approx(expected).epsilon(1e-9));
    }
  auto numeric = fd_grad(
      a, [&] { return reduce_sum(nullptr, matmul(nullptr, a, b)).item(); });
  check_close(a.grad(), numeric);
}

TEST_CASE("softmax forward invariants") {
  Tensor z({2}, {0, 0});
  auto p = softmax(nullptr, z).data();
  CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-12));

  Tensor big({3}, {1000, 1000, 1000});
  Tensor stabilized = softmax(nullptr, big);
  for (double v : stabilized.data())
    CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));

  Tensor t({3}, {1, 2, 3});
  auto q = softmax(nullptr, t).data();
  CHECK(q[0] == doctest::Approx(0.09003057317038046).epsilon(1e-10));
  CHECK(q[1] == doctest::Approx(0.24472847105479764).epsilon(1e-10));
  CHECK(q[2] == doctest::Approx(0.6652409557748219).epsilon(1e-10));
}

TEST_CASE("softmax rows sum to one and shift invariance") {
  Rng rng(5);
  Tensor x = random_tensor({4, 6}, rng);
  auto p = softmax(nullptr, x).data();
  for (int r = 0; r < 4; ++r) {
    double s = 0;
    for (int c = 0; c < 6; ++c) s += p[r * 6 + c];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }
  Tensor shifted = x;
  Tensor y = Tensor::zeros({4, 6});
  for (int i = 0; i < x.size(); ++i) y.data()[i] = x.data()[i] + 7.25;
  auto p2 = softmax(nullptr, y).data();
  for (int i = 0; i < x.size(); ++i) CHECK(std::fabs(p[i] - p2[i]) < 1e-6);
}

TEST_CASE("softmax rejects NaN input") {
  Tensor bad({2}, {std::nan(""), 0.0});
  CHECK_THROWS_AS(softmax(nullptr, bad), std::domain_error);
}

TEST_CASE("cross_entropy values") {
  Tensor z({2}, {0, 0});
  CHECK(cross_entropy(nullptr, z, 0).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Tensor confident({2}, {30, -30});
  CHECK(cross_entropy(nullptr, confident, 0).item() ==
        doctest::Approx(0.0).epsilon(1e-9));

  // 4-class case against a direct evaluation: loss = logsumexp - z[target].
  Tensor four({4}, {0.3, -1.2, 2.0, 0.5});
  double lse = 0;
  for (double v : four.data()) lse += std::exp(v);
  lse = std::log(lse);
  CHECK(cross_entropy(nullptr, four, 2).item() ==
        doctest::Approx(lse - 2.0).epsilon(1e-10));

  CHECK_THROWS_AS(cross_entropy(nullptr, z, 2), std::domain_error);
}

TEST_CASE("soft_cross_entropy values and one-hot equivalence") {
  Tensor z({2}, {0, 0});
  CHECK(soft_cross_entropy(nullptr, z, {0.5, 0.5}).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Tensor t({3}, {1, 2, 3});
  // Uniform target: mean of (logsumexp - z_k) = logsumexp - 2.
  CHECK(soft_cross_entropy(nullptr, t, {1.0 / 3, 1.0 / 3, 1.0 / 3}).item() ==
        doctest::Approx(1.4076059644443803).epsilon(1e-10));

  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor logits = random_tensor({4}, rng);
    int k = trial % 4;
    std::vector<double> one_hot(4, 0.0);
    one_hot[k] = 1.0;
    CHECK(std::fabs(soft_cross_entropy(nullptr, logits, one_hot).item() -
                    cross_entropy(nullptr, logits, k).item()) < 1e-6);
  }

  CHECK_THROWS_AS(soft_cross_entropy(nullptr, z, {0.9, 0.2}),
                  std::domain_error);
}

TEST_CASE("backward basics: sum and square") {
  Tensor x({3}, {1, 2, 3});
  Tape tape;
  Tensor loss = reduce_sum(&tape, x);
  tape.backward(loss);
  CHECK(x.grad() == std::vector<double>{1, 1, 1});

  Tensor y({1}, {3});
  Tape tape2;
  Tensor loss2 = reduce_sum(&tape2, mul(&tape2, y, y));
  tape2.backward(loss2);
  CHECK(y.grad()[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("backward rejects non-scalar loss") {
  Tensor x({2}, {1, 2});
  Tape tape;
  Tensor y = scale(&tape, x, 2.0);
  CHECK_THROWS_AS(tape.backward(y), std::logic_error);
}

TEST_CASE("gradients of all primitives match finite differences") {
  gradient_check({3, 4}, [](Tape* t, const Tensor& x) {
    return softmax(t, x);
  }, 101);
  gradient_check({5}, [](Tape* t, const Tensor& x) {
    return log_softmax(t, x);
  }, 102);
  gradient_check({6}, [](Tape* t, const Tensor& x) {
    return cross_entropy(t, x, 2);
  }, 103);
  gradient_check({4}, [](Tape* t, const Tensor& x) {
    return soft_cross_entropy(t, x, {0.1, 0.2, 0.3, 0.4});
  }, 104);
  gradient_check({2, 5}, [](Tape* t, const Tensor& x) {
    return gelu(t, x);
  }, 105);
  gradient_check({3, 3}, [](Tape* t, const Tensor& x) {
    return mul(t, x, x);
  }, 106);
  gradient_check({2, 4}, [](Tape* t, const Tensor& x) {
    Tensor g({4}, {1.0, 0.9, 1.1, 1.2});
    Tensor b({4}, {0.1, -0.1, 0.0, 0.2});
    return layer_norm(t, x, g, b);
  }, 107);
  gradient_check({2, 3}, [](Tape* t, const Tensor& x) {
    return transpose2d(t, x);
  }, 108);
  gradient_check({2, 6}, [](Tape* t, const Tensor& x) {
    return slice_cols(t, x, 2, 3);
  }, 109);
  gradient_check({3, 2}, [](Tape* t, const Tensor& x) {
    return mean_rows(t, x);
  }, 110);
  gradient_check({4, 3}, [](Tape* t, const Tensor& x) {
    return embedding_lookup(t, x, {1, 3, 1, 0});
  }, 111);
  gradient_check({2, 2}, [](Tape* t, const Tensor& x) {
    return matmul(t, x, x);
  }, 112);
  gradient_check({3, 4}, [](Tape* t, const Tensor& x) {
    Tensor row({4}, {0.5, -0.5, 1.0, 2.0});
    return add_row(t, x, row);
  }, 113);
  gradient_check({5}, [](Tape* t, const Tensor& x) {
    return reduce_mean(t, x);
  }, 114);
}

TEST_CASE("embedding_lookup repeated ids accumulate gradient") {
  Tensor table({3, 2}, {1, 2, 3, 4, 5, 6});
  Tape tape;
  Tensor rows = embedding_lookup(&tape, table, {1, 1, 2});
  tape.backward(reduce_sum(&tape, rows));
  CHECK(table.grad() == std::vector<double>{0, 0, 2, 2, 1, 1});
  CHECK_THROWS_AS(embedding_lookup(nullptr, table, {5}), std::domain_error);
}

TEST_CASE("backward is deterministic") {
  for (int pass = 0; pass < 2; ++pass) {
    Rng rng(77);
    Tensor x = random_tensor({3, 3}, rng);
    Tape tape;
    Tensor h = gelu(&tape, matmul(&tape, x, x));
    tape.backward(reduce_sum(&tape, softmax(&tape, h)));
    static std::vector<double> first;
    if (pass == 0) {
      first = x.grad();
    } else {
      CHECK(x.grad() == first);
    }
  }
}
