#include <doctest.h>

#include <cmath>
#include <numbers>

#include "famt/autograd.hpp"
#include "famt/errors.hpp"
#include "famt/kernels.hpp"
#include "famt/parallel.hpp"
#include "famt/rng.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace famt;

TEST_CASE("tensor shape bookkeeping") {
  const Tensor t({2, 3, 4}, 1.5);
  CHECK(t.size() == 24);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 12);
  CHECK(dims_product(t.dims()) == t.size());
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>(3)), ShapeError);
  CHECK_THROWS_AS(t.reshaped({5, 5}), ShapeError);
  CHECK(t.reshaped({4, 6}).dims() == Dims{4, 6});
}

TEST_CASE("matmul hand examples") {
  const Tensor eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
  const Tensor b = Tensor::matrix(2, 2, {3, 4, 5, 6});
  CHECK(kernels::matmul(eye, b) == b);
  const Tensor c = kernels::matmul(Tensor::matrix(1, 2, {1, 2}), Tensor::matrix(2, 1, {3, 4}));
  CHECK(c.dims() == Dims{1, 1});
  CHECK(c[0] == 11.0);
}

TEST_CASE("matmul shape error names both operands") {
  try {
    kernels::matmul(Tensor({2, 3}), Tensor({4, 5}));
    FAIL("no error");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
    CHECK(msg.find("4x5") != std::string::npos);
  }
}

TEST_CASE("matmul agrees with the triple loop for dims up to 32") {
  CounterRng rng(1, 0, 0, RngStream::kData);
  const Tensor a = oracle::random_tensor({5, 7}, rng), b = oracle::random_tensor({7, 3}, rng);
  CHECK(max_abs_diff(kernels::matmul(a, b), oracle::matmul(a, b)) <= 1e-12);
  for (std::size_t m : {1u, 4u, 17u, 32u})
    for (std::size_t k : {1u, 9u, 32u})
      for (std::size_t n : {1u, 13u, 32u}) {
        const Tensor x = oracle::random_tensor({m, k}, rng), y = oracle::random_tensor({k, n}, rng);
        CHECK(max_abs_diff(kernels::matmul(x, y), oracle::matmul(x, y)) <= 1e-12);
      }
}

TEST_CASE("parallel kernels are bitwise equal to the serial reference") {
  CounterRng rng(2, 0, 0, RngStream::kData);
  const std::size_t m = 96, k = 80, n = 72;  // above the parallel threshold
  const Tensor a = oracle::random_tensor({m, k}, rng), b = oracle::random_tensor({k, n}, rng);
  const Tensor bt = oracle::random_tensor({n, k}, rng), at = oracle::random_tensor({k, m}, rng);
  set_workers(4);
  for (bool acc : {false, true}) {
    Tensor s({m, n}, 0.25), p({m, n}, 0.25);
    kernels::serial::matmul(a.ptr(), b.ptr(), s.ptr(), m, k, n, acc);
    kernels::matmul(a.ptr(), b.ptr(), p.ptr(), m, k, n, acc);
    CHECK(s == p);
    kernels::serial::matmul_nt(a.ptr(), bt.ptr(), s.ptr(), m, k, n, acc);
    kernels::matmul_nt(a.ptr(), bt.ptr(), p.ptr(), m, k, n, acc);
    CHECK(s == p);
    kernels::serial::matmul_tn(at.ptr(), b.ptr(), s.ptr(), m, k, n, acc);
    kernels::matmul_tn(at.ptr(), b.ptr(), p.ptr(), m, k, n, acc);
    CHECK(s == p);
  }
  set_workers(1);
}

TEST_CASE("softmax examples") {
  const Tensor u = kernels::softmax(Tensor::matrix(1, 3, {0, 0, 0}), 1);
  for (double v : u.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  const Tensor two = kernels::softmax(Tensor::matrix(1, 2, {0, std::log(2.0)}), 1);
  CHECK(std::abs(two[0] - 1.0 / 3.0) <= 1e-15);
  CHECK(std::abs(two[1] - 2.0 / 3.0) <= 1e-15);

  CounterRng rng(3, 0, 0, RngStream::kData);
  const Tensor x = oracle::random_tensor({4, 6}, rng);
  Tensor shifted = x;
  for (double& v : shifted.data()) v += 17.5;
  CHECK(max_abs_diff(kernels::softmax(x, 1), kernels::softmax(shifted, 1)) <= 1e-12);
  const Tensor s = kernels::softmax(x, 1);
  for (std::size_t r = 0; r < 4; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 6; ++c) {
      CHECK(s.at(r, c) >= 0.0);
      CHECK(s.at(r, c) <= 1.0);
      sum += s.at(r, c);
    }
    CHECK(std::abs(sum - 1.0) <= 1e-12);
  }
  CHECK_THROWS_AS(kernels::softmax(Tensor::matrix(1, 2, {0, NAN}), 1), NumericError);
}

TEST_CASE("layer_norm examples") {
  ag::Tape tape(false);
  const ag::Var g = tape.constant(Tensor({1, 2}, 1.0)), b = tape.constant(Tensor({1, 2}));
  const ag::Var y = ag::layer_norm(tape.constant(Tensor::matrix(1, 2, {1, 3})), g, b, 0.0);
  CHECK(y.value()[0] == -1.0);
  CHECK(y.value()[1] == 1.0);
  const ag::Var g3 = tape.constant(Tensor({1, 3}, 1.0)), b3 = tape.constant(Tensor({1, 3}));
  const ag::Var c = ag::layer_norm(tape.constant(Tensor({1, 3}, 4.2)), g3, b3, 1e-6);
  for (double v : c.value().data()) CHECK(v == 0.0);
}

TEST_CASE("gelu uses the exact erf form") {
  ag::Tape tape(false);
  const ag::Var y = ag::gelu(tape.constant(Tensor::matrix(1, 3, {0.0, 10.0, 1.0})));
  CHECK(y.value()[0] == 0.0);
  CHECK(std::abs(y.value()[1] - 10.0) <= 1e-9);
  const double exact = 0.5 * (1.0 + std::erf(1.0 / std::numbers::sqrt2));
  CHECK(std::abs(y.value()[2] - exact) <= 1e-15);
}

TEST_CASE("backward examples and errors") {
  ag::Tape tape;
  const ag::Var x = tape.leaf(Tensor::matrix(1, 3, {1, 2, 3}));
  tape.backward(ag::sum(ag::mul(x, x)));
  CHECK(x.grad() == Tensor::matrix(1, 3, {2, 4, 6}));
  CHECK_THROWS_AS(tape.backward(ag::sum(x)), UsageError);

  ag::Tape t2;
  const ag::Var v = t2.leaf(Tensor::matrix(1, 2, {1, 2}));
  CHECK_THROWS_AS(t2.backward(v), UsageError);
  t2.reset();

  ag::Tape t3;
  const ag::Var w = t3.leaf(Tensor::matrix(1, 2, {5, 6}));
  t3.backward(t3.constant(Tensor::scalar(4.0)));
  for (double g : w.grad().data()) CHECK(g == 0.0);
}

TEST_CASE("parameter sinks receive and accumulate gradients") {
  const Tensor w = Tensor::matrix(1, 2, {1.0, -2.0});
  Tensor sink;
  for (int round = 0; round < 2; ++round) {
    ag::Tape tape;
    const ag::Var p = tape.parameter(w, &sink);
    tape.backward(ag::sum(ag::scale(p, 3.0)));
  }
  CHECK(sink == Tensor::matrix(1, 2, {6.0, 6.0}));
}

TEST_CASE("backward is linear over independent terms") {
  CounterRng rng(4, 0, 0, RngStream::kData);
  const Tensor a = oracle::random_tensor({3, 4}, rng), b = oracle::random_tensor({4, 2}, rng);
  auto grad_of = [&](int which) {
    ag::Tape tape;
    const ag::Var x = tape.leaf(a), y = tape.leaf(b);
    const ag::Var t1 = ag::sum(ag::gelu(ag::matmul(x, y)));
    const ag::Var t2 = ag::mean(ag::mul(x, x));
    tape.backward(which == 0 ? ag::add(t1, t2) : which == 1 ? t1 : t2);
    return x.grad();
  };
  Tensor parts = grad_of(1);
  parts.add_(grad_of(2));
  CHECK(max_abs_diff(grad_of(0), parts) <= 1e-12);
}

TEST_CASE("every primitive matches central differences") {
  for (const auto& r : gradcheck::primitive_reports()) {
    INFO(r.name << " max error " << r.max_error);
    CHECK(r.entries > 0);
    CHECK(r.max_error <= 1e-6);
  }
}

TEST_CASE("gather_rows accumulates repeated rows") {
  ag::Tape tape;
  const ag::Var x = tape.leaf(Tensor::matrix(2, 1, {1.0, 2.0}));
  const std::vector<std::size_t> rows{1, 1, 0};
  tape.backward(ag::sum(ag::gather_rows(x, rows)));
  CHECK(x.grad() == Tensor::matrix(2, 1, {1.0, 2.0}));
}

TEST_CASE("cross_entropy rejects out-of-range labels") {
  ag::Tape tape;
  const std::vector<int> labels{0, 3};
  CHECK_THROWS_AS(ag::cross_entropy(tape.constant(Tensor({2, 3})), labels), ParameterError);
}

TEST_CASE("counter rng is reproducible and stream separated") {
  CounterRng a(9, 1, 2, RngStream::kPlan), b(9, 1, 2, RngStream::kPlan);
  CounterRng c(9, 1, 2, RngStream::kShuffle);
  bool differs = false;
  for (int i = 0; i < 16; ++i) {
    const auto x = a(), y = b(), z = c();
    CHECK(x == y);
    differs = differs || x != z;
  }
  CHECK(differs);
  CHECK(a.at(3) == b.at(3));
  for (int i = 0; i < 1000; ++i) {
    const double u = a.uniform();
    CHECK(u > 0.0);
    CHECK(u < 1.0);
    CHECK(a.below(7) < 7);
    CHECK(std::abs(a.truncated_normal(0.5)) <= 1.0);
  }
}
