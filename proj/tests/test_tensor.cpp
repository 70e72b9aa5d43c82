#include <cmath>
#include <vector>

#include "declab/blas.hpp"
#include "declab/finite_diff.hpp"
#include "declab/ops.hpp"
#include "declab/tensor.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace declab;

using testutil::kFdTol;
using testutil::project;
using testutil::randn64;

TEST_CASE("rng is deterministic and distributions are sane") {
  Rng a(1234), b(1234);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng r(99);
  double sum = 0.0, sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    sum += u;
    sq += u * u;
  }
  CHECK(std::abs(sum / n - 0.5) < 0.01);
  CHECK(std::abs(sq / n - 1.0 / 3.0) < 0.01);

  double nsum = 0.0, nsq = 0.0;
  for (int i = 0; i < n; ++i) {
    double g = r.normal();
    nsum += g;
    nsq += g * g;
  }
  CHECK(std::abs(nsum / n) < 0.02);
  CHECK(std::abs(nsq / n - 1.0) < 0.03);

  for (int i = 0; i < 1000; ++i) {
    uint64_t v = r.uniform_below(7);
    CHECK(v < 7);
  }
  CHECK(r.uniform_below(1) == 0);
}

TEST_CASE("tensor construction and accessors") {
  Tensor z = Tensor::zeros({2, 3});
  CHECK(z.numel() == 6);
  CHECK(z.rank() == 2);
  CHECK(z.at(5) == 0.0);

  Tensor f = Tensor::full({4}, 2.5, Dtype::f64);
  CHECK(f.at(3) == 2.5);

  Tensor s = Tensor::scalar(7.0);
  CHECK(s.numel() == 1);
  CHECK(s.item() == 7.0);

  Tensor v = Tensor::from_f64({2, 2}, {1, 2, 3, 4});
  CHECK(v.at(2) == 3.0);
  Tensor c = v.clone();
  c.set(0, 9.0);
  CHECK(v.at(0) == 1.0);  // clone is independent

  Tensor cast = v.to(Dtype::f32);
  CHECK(cast.dtype() == Dtype::f32);
  CHECK(cast.at(3) == 4.0f);

  CHECK_THROWS_AS(Tensor::from_f64({2, 2}, {1, 2, 3}), UsageError);
}

TEST_CASE("matmul matches a naive triple loop") {
  // also exercises the external blas path when it is loaded
  Rng rng(7);
  const int64_t m = 13, k = 17, n = 11;
  Tensor a = Tensor::randn({m, k}, rng, 1.0, Dtype::f64);
  Tensor b = Tensor::randn({k, n}, rng, 1.0, Dtype::f64);
  Tensor c = ops::matmul(a, b);
  Tensor bt = Tensor::randn({n, k}, rng, 1.0, Dtype::f64);
  Tensor ct = ops::matmul(a, bt, /*trans_b=*/true);
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      double ref = 0.0, reft = 0.0;
      for (int64_t p = 0; p < k; ++p) {
        ref += a.at(i * k + p) * b.at(p * n + j);
        reft += a.at(i * k + p) * bt.at(j * k + p);
      }
      CHECK(c.at(i * n + j) == doctest::Approx(ref).epsilon(1e-12));
      CHECK(ct.at(i * n + j) == doctest::Approx(reft).epsilon(1e-12));
    }
  }
}

TEST_CASE("f32 matmul agrees with f64 to single precision") {
  Rng rng(21);
  Tensor a64 = Tensor::randn({24, 32}, rng, 1.0, Dtype::f64);
  Tensor b64 = Tensor::randn({32, 16}, rng, 1.0, Dtype::f64);
  Tensor c64 = ops::matmul(a64, b64);
  Tensor c32 = ops::matmul(a64.to(Dtype::f32), b64.to(Dtype::f32));
  for (int64_t i = 0; i < c64.numel(); ++i)
    CHECK(std::abs(c64.at(i) - c32.at(i)) < 1e-4);
}

TEST_CASE("matmul gradients") {
  Tensor a = randn64({5, 7}, 101);
  Tensor b = randn64({7, 4}, 102);
  auto r = check_gradients([&] { return project(ops::matmul(a, b), 1); }, {a, b});
  CHECK_MESSAGE(r.ok(kFdTol), r.describe());

  Tensor bt = randn64({4, 7}, 103);
  auto rt = check_gradients([&] { return project(ops::matmul(a, bt, true), 2); }, {a, bt});
  CHECK_MESSAGE(rt.ok(kFdTol), rt.describe());
}

TEST_CASE("bmm matches per-slice matmul and its gradients pass") {
  Rng rng(31);
  Tensor a = Tensor::randn({3, 4, 6}, rng, 1.0, Dtype::f64);
  Tensor b = Tensor::randn({3, 6, 5}, rng, 1.0, Dtype::f64);
  const double alpha = 0.37;
  Tensor c = ops::bmm(a, b, false, alpha);
  for (int64_t s = 0; s < 3; ++s)
    for (int64_t i = 0; i < 4; ++i)
      for (int64_t j = 0; j < 5; ++j) {
        double ref = 0.0;
        for (int64_t p = 0; p < 6; ++p) ref += a.at((s * 4 + i) * 6 + p) * b.at((s * 6 + p) * 5 + j);
        CHECK(c.at((s * 4 + i) * 5 + j) == doctest::Approx(alpha * ref).epsilon(1e-12));
      }

  auto r = check_gradients([&] { return project(ops::bmm(a, b, false, alpha), 3); }, {a, b});
  CHECK_MESSAGE(r.ok(kFdTol), r.describe());

  Tensor bt = randn64({3, 5, 6}, 32);
  Tensor c2 = ops::bmm(a, bt, true, 1.0);
  for (int64_t s = 0; s < 3; ++s)
    for (int64_t i = 0; i < 4; ++i)
      for (int64_t j = 0; j < 5; ++j) {
        double ref = 0.0;
        for (int64_t p = 0; p < 6; ++p) ref += a.at((s * 4 + i) * 6 + p) * bt.at((s * 5 + j) * 6 + p);
        CHECK(c2.at((s * 4 + i) * 5 + j) == doctest::Approx(ref).epsilon(1e-12));
      }
  auto rt = check_gradients([&] { return project(ops::bmm(a, bt, true, alpha), 4); }, {a, bt});
  CHECK_MESSAGE(rt.ok(kFdTol), rt.describe());
}

TEST_CASE("elementwise op gradients") {
  Tensor a = randn64({3, 5}, 201);
  Tensor b = randn64({3, 5}, 202);

  auto r_add = check_gradients([&] { return project(ops::add(a, b), 5); }, {a, b});
  CHECK_MESSAGE(r_add.ok(kFdTol), r_add.describe());

  auto r_mul = check_gradients([&] { return project(ops::mul(a, b), 6); }, {a, b});
  CHECK_MESSAGE(r_mul.ok(kFdTol), r_mul.describe());

  auto r_scale = check_gradients([&] { return project(ops::scale(a, -1.7), 7); }, {a});
  CHECK_MESSAGE(r_scale.ok(kFdTol), r_scale.describe());

  Tensor bias = randn64({5}, 203);
  auto r_bias = check_gradients([&] { return project(ops::add_row_bias(a, bias), 8); }, {a, bias});
  CHECK_MESSAGE(r_bias.ok(kFdTol), r_bias.describe());
}

TEST_CASE("activation forward values and gradients") {
  // phi(1) = 0.841344746..., so gelu(1) = phi(1)
  CHECK(gelu_exact(1.0) == doctest::Approx(0.8413447460685429).epsilon(1e-12));
  CHECK(gelu_exact(0.0) == 0.0);
  CHECK(gelu_exact(-1.0) == doctest::Approx(1.0 * 0.8413447460685429 - 1.0).epsilon(1e-9));
  CHECK(silu_exact(0.0) == 0.0);
  CHECK(silu_exact(2.0) == doctest::Approx(2.0 / (1.0 + std::exp(-2.0))).epsilon(1e-12));

  Tensor x = randn64({4, 6}, 301);
  Tensor gx = ops::activation(Activation::gelu, x);
  Tensor sx = ops::activation(Activation::silu, x);
  for (int64_t i = 0; i < x.numel(); ++i) {
    CHECK(gx.at(i) == doctest::Approx(gelu_exact(x.at(i))).epsilon(1e-12));
    CHECK(sx.at(i) == doctest::Approx(silu_exact(x.at(i))).epsilon(1e-12));
  }

  auto rg = check_gradients([&] { return project(ops::activation(Activation::gelu, x), 9); }, {x});
  CHECK_MESSAGE(rg.ok(kFdTol), rg.describe());
  auto rs = check_gradients([&] { return project(ops::activation(Activation::silu, x), 10); }, {x});
  CHECK_MESSAGE(rs.ok(kFdTol), rs.describe());
}

TEST_CASE("normalize forward properties and gradients") {
  Tensor x = randn64({6, 8}, 401);
  Tensor g = Tensor::full({8}, 1.0, Dtype::f64);
  Tensor b = Tensor::zeros({8}, Dtype::f64);

  Tensor ln = ops::normalize(NormKind::layernorm, x, g, &b, 1e-5);
  for (int64_t i = 0; i < 6; ++i) {
    double mu = 0.0, var = 0.0;
    for (int64_t j = 0; j < 8; ++j) mu += ln.at(i * 8 + j);
    mu /= 8;
    for (int64_t j = 0; j < 8; ++j) var += (ln.at(i * 8 + j) - mu) * (ln.at(i * 8 + j) - mu);
    var /= 8;
    CHECK(std::abs(mu) < 1e-12);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));  // eps keeps it slightly below 1
  }

  Tensor rms = ops::normalize(NormKind::rmsnorm, x, g, nullptr, 1e-5);
  for (int64_t i = 0; i < 6; ++i) {
    double ms_in = 0.0, ms_out = 0.0;
    for (int64_t j = 0; j < 8; ++j) {
      ms_in += x.at(i * 8 + j) * x.at(i * 8 + j);
      ms_out += rms.at(i * 8 + j) * rms.at(i * 8 + j);
    }
    double expect = (ms_in / 8) / (ms_in / 8 + 1e-5);
    CHECK(ms_out / 8 == doctest::Approx(expect).epsilon(1e-10));
  }

  Tensor g2 = randn64({8}, 402);
  Tensor b2 = randn64({8}, 403);
  auto r_ln = check_gradients(
      [&] { return project(ops::normalize(NormKind::layernorm, x, g2, &b2, 1e-5), 11); },
      {x, g2, b2});
  CHECK_MESSAGE(r_ln.ok(kFdTol), r_ln.describe());
  auto r_rms = check_gradients(
      [&] { return project(ops::normalize(NormKind::rmsnorm, x, g2, nullptr, 1e-5), 12); },
      {x, g2});
  CHECK_MESSAGE(r_rms.ok(kFdTol), r_rms.describe());
}

TEST_CASE("causal softmax rows are masked simplexes") {
  Tensor z = randn64({2, 5, 5}, 501);
  Tensor p = ops::causal_softmax(z);
  for (int64_t s = 0; s < 2; ++s)
    for (int64_t i = 0; i < 5; ++i) {
      double sum = 0.0;
      for (int64_t j = 0; j < 5; ++j) {
        double v = p.at((s * 5 + i) * 5 + j);
        if (j > i) CHECK(v == 0.0);
        else {
          CHECK(v > 0.0);
          sum += v;
        }
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }

  // hand-computed row against the kernel
  double e0 = std::exp(z.at(5)), e1 = std::exp(z.at(6));  // slice 0, row 1
  CHECK(p.at(5) == doctest::Approx(e0 / (e0 + e1)).epsilon(1e-12));
  CHECK(p.at(6) == doctest::Approx(e1 / (e0 + e1)).epsilon(1e-12));

  auto r = check_gradients([&] { return project(ops::causal_softmax(z), 13); }, {z});
  CHECK_MESSAGE(r.ok(kFdTol), r.describe());
}

TEST_CASE("softmax is invariant to a constant row shift") {
  Tensor z = randn64({1, 4, 4}, 502);
  Tensor zs = z.clone();
  for (int64_t i = 0; i < 4; ++i)
    for (int64_t j = 0; j < 4; ++j) zs.set(i * 4 + j, zs.at(i * 4 + j) + 123.0);
  Tensor p = ops::causal_softmax(z);
  Tensor ps = ops::causal_softmax(zs);
  for (int64_t i = 0; i < p.numel(); ++i)
    CHECK(p.at(i) == doctest::Approx(ps.at(i)).epsilon(1e-12));
}

TEST_CASE("rope matches complex rotation and preserves pair norms") {
  const int64_t h = 2, n = 6, dk = 8;
  Tensor x = randn64({h, n, dk}, 601);
  const double base = 10000.0;
  Tensor y = ops::rope_rotate(x, base);
  for (int64_t s = 0; s < h; ++s)
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < dk / 2; ++j) {
        double ang = i * std::pow(base, -2.0 * j / dk);
        double x0 = x.at((s * n + i) * dk + 2 * j), x1 = x.at((s * n + i) * dk + 2 * j + 1);
        double y0 = y.at((s * n + i) * dk + 2 * j), y1 = y.at((s * n + i) * dk + 2 * j + 1);
        CHECK(y0 == doctest::Approx(x0 * std::cos(ang) - x1 * std::sin(ang)).epsilon(1e-10));
        CHECK(y1 == doctest::Approx(x0 * std::sin(ang) + x1 * std::cos(ang)).epsilon(1e-10));
        CHECK(y0 * y0 + y1 * y1 == doctest::Approx(x0 * x0 + x1 * x1).epsilon(1e-10));
      }

  // position 0 is the identity
  for (int64_t j = 0; j < dk; ++j) CHECK(y.at(j) == doctest::Approx(x.at(j)).epsilon(1e-12));

  auto r = check_gradients([&] { return project(ops::rope_rotate(x, base), 14); }, {x});
  CHECK_MESSAGE(r.ok(kFdTol), r.describe());
}

TEST_CASE("cross entropy matches a log-sum-exp oracle") {
  Rng rng(71);
  const int64_t r = 6, v = 9;
  Tensor logits = Tensor::randn({r, v}, rng, 2.0, Dtype::f64);
  std::vector<int32_t> targets;
  for (int64_t i = 0; i < r; ++i) targets.push_back(static_cast<int32_t>(rng.uniform_below(v)));

  Tensor loss = ops::cross_entropy_mean(logits, targets);
  double ref = 0.0;
  for (int64_t i = 0; i < r; ++i) {
    double se = 0.0;
    for (int64_t j = 0; j < v; ++j) se += std::exp(logits.at(i * v + j));
    ref += std::log(se) - logits.at(i * v + targets[i]);
  }
  ref /= r;
  CHECK(loss.item() == doctest::Approx(ref).epsilon(1e-12));

  auto rc = check_gradients([&] { return ops::cross_entropy_mean(logits, targets); }, {logits});
  CHECK_MESSAGE(rc.ok(kFdTol), rc.describe());

  std::vector<int32_t> bad = targets;
  bad[0] = static_cast<int32_t>(v);
  CHECK_THROWS_AS(ops::cross_entropy_mean(logits, bad), UsageError);
}

TEST_CASE("embedding gathers rows and scatters gradients") {
  Tensor table = randn64({5, 3}, 801);
  std::vector<int32_t> ids = {4, 0, 4, 2};
  Tensor out = ops::embedding(table, ids);
  for (size_t i = 0; i < ids.size(); ++i)
    for (int64_t j = 0; j < 3; ++j)
      CHECK(out.at(static_cast<int64_t>(i) * 3 + j) == table.at(ids[i] * 3 + j));

  auto r = check_gradients([&] { return project(ops::embedding(table, ids), 15); }, {table});
  CHECK_MESSAGE(r.ok(kFdTol), r.describe());

  // duplicate ids accumulate: row 4 grad is the sum of two output-row grads
  table.zero_grad();
  table.set_requires_grad(true);
  {
    Tape tape;
    Tensor loss = ops::sum_all(ops::embedding(table, ids));
    tape.backward(loss);
  }
  CHECK(table.grad<double>()[4 * 3] == doctest::Approx(2.0));
  CHECK(table.grad<double>()[2 * 3] == doctest::Approx(1.0));
  CHECK(table.grad<double>()[1 * 3] == doctest::Approx(0.0));
  table.set_requires_grad(false);
}

TEST_CASE("head split and merge round trip") {
  const int64_t b = 2, n = 3, heads = 4, dk = 5;
  Tensor x = randn64({b * n, heads * dk}, 901);
  Tensor s = ops::split_heads(x, b, heads);
  CHECK(s.shape() == std::vector<int64_t>{b * heads, n, dk});
  // spot-check the layout: out[(bi*H+hi), t, :] == x[bi*n + t, hi*dk:...]
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t hi = 0; hi < heads; ++hi)
      for (int64_t t = 0; t < n; ++t)
        for (int64_t j = 0; j < dk; ++j)
          CHECK(s.at(((bi * heads + hi) * n + t) * dk + j) ==
                x.at((bi * n + t) * (heads * dk) + hi * dk + j));

  Tensor m = ops::merge_heads(s, b);
  CHECK(m.shape() == x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(m.at(i) == x.at(i));

  auto r = check_gradients(
      [&] { return project(ops::merge_heads(ops::split_heads(x, b, heads), b), 16); }, {x});
  CHECK_MESSAGE(r.ok(kFdTol), r.describe());
}

TEST_CASE("causal entropy mean and its gradient") {
  // rows built as explicit simplexes over the causal prefix, well away from 0
  const int64_t h = 2, n = 4;
  Tensor p = Tensor::zeros({h, n, n}, Dtype::f64);
  Rng rng(1001);
  double expect = 0.0;
  for (int64_t s = 0; s < h; ++s)
    for (int64_t i = 0; i < n; ++i) {
      std::vector<double> row(i + 1);
      double sum = 0.0;
      for (auto& v : row) {
        v = 0.2 + rng.uniform();
        sum += v;
      }
      double ent = 0.0;
      for (int64_t j = 0; j <= i; ++j) {
        double pv = row[j] / sum;
        p.set((s * n + i) * n + j, pv);
        ent -= pv * std::log(pv);
      }
      if (i >= 1) expect += ent / std::log(static_cast<double>(i + 1));
    }
  expect /= h * (n - 1);
  Tensor e = ops::causal_entropy_mean(p);
  CHECK(e.item() == doctest::Approx(expect).epsilon(1e-12));

  // uniform rows give normalized entropy exactly 1
  Tensor u = Tensor::zeros({1, n, n}, Dtype::f64);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j <= i; ++j) u.set(i * n + j, 1.0 / (i + 1));
  CHECK(ops::causal_entropy_mean(u).item() == doctest::Approx(1.0).epsilon(1e-12));

  auto r = check_gradients([&] { return ops::causal_entropy_mean(p); }, {p});
  CHECK_MESSAGE(r.ok(kFdTol), r.describe());
}

TEST_CASE("entropy floor penalty hinge") {
  Tensor below = Tensor::scalar(0.6, Dtype::f64);
  Tensor above = Tensor::scalar(0.95, Dtype::f64);
  CHECK(ops::entropy_floor_penalty(below, 0.8, 0.1).item() ==
        doctest::Approx(0.1 * 0.2).epsilon(1e-12));
  CHECK(ops::entropy_floor_penalty(above, 0.8, 0.1).item() == 0.0);

  auto rb = check_gradients([&] { return ops::entropy_floor_penalty(below, 0.8, 0.1); }, {below});
  CHECK_MESSAGE(rb.ok(kFdTol), rb.describe());
  auto ra = check_gradients([&] { return ops::entropy_floor_penalty(above, 0.8, 0.1); }, {above});
  CHECK_MESSAGE(ra.ok(kFdTol), ra.describe());
}

TEST_CASE("tape mechanics") {
  Tensor x = randn64({3}, 1101);
  x.set_requires_grad(true);

  SUBCASE("backward requires a scalar from the active tape") {
    Tape tape;
    Tensor y = ops::scale(x, 2.0);
    CHECK_THROWS_AS(tape.backward(y), UsageError);  // not a scalar
    Tensor detached = Tensor::scalar(1.0, Dtype::f64);
    CHECK_THROWS_AS(tape.backward(detached), UsageError);  // not produced here
  }

  SUBCASE("double backward on one tape throws") {
    Tape tape;
    Tensor loss = ops::sum_all(x);
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), UsageError);
  }

  SUBCASE("tensors from an enclosing tape are constants for a nested tape") {
    x.zero_grad();
    Tensor v = randn64({3}, 1102);
    v.set_requires_grad(true);
    Tape outer;
    Tensor y = ops::scale(x, 3.0);
    {
      Tape inner;
      Tensor z = ops::sum_all(ops::mul(y, v));
      inner.backward(z);
      CHECK_FALSE(x.has_grad());  // inner tape must not reach through y
      REQUIRE(v.has_grad());
      CHECK(v.grad<double>()[0] == doctest::Approx(3.0 * x.at(0)));
    }
    Tensor w = ops::sum_all(y);
    outer.backward(w);
    REQUIRE(x.has_grad());
    CHECK(x.grad<double>()[0] == doctest::Approx(3.0));
  }

  SUBCASE("grads accumulate across fan-out") {
    x.zero_grad();
    Tape tape;
    Tensor y = ops::add(x, x);  // dy/dx = 2
    Tensor loss = ops::sum_all(y);
    tape.backward(loss);
    CHECK(x.grad<double>()[1] == doctest::Approx(2.0));
  }

  x.set_requires_grad(false);
}

TEST_CASE("forward and backward are bitwise deterministic") {
  auto run = [](std::vector<double>& grads) {
    Rng rng(424242);
    Tensor x = Tensor::randn({8, 8}, rng, 1.0, Dtype::f64);
    Tensor w = Tensor::randn({8, 8}, rng, 0.5, Dtype::f64);
    w.set_requires_grad(true);
    Tape tape;
    Tensor h = ops::activation(Activation::gelu, ops::matmul(x, w));
    Tensor g = Tensor::full({8}, 1.0, Dtype::f64);
    Tensor y = ops::normalize(NormKind::rmsnorm, h, g, nullptr, 1e-5);
    Tensor loss = ops::sum_all(ops::mul(y, y));
    tape.backward(loss);
    const double* gw = w.grad<double>();
    grads.assign(gw, gw + 64);
    return loss.item();
  };
  std::vector<double> g1, g2;
  double l1 = run(g1), l2 = run(g2);
  CHECK(l1 == l2);
  CHECK(g1 == g2);
}

TEST_CASE("non-finite values are rejected when checks are on") {
  Tensor x = Tensor::full({2}, 1e308, Dtype::f64);
  Tensor y = Tensor::full({2}, 1e308, Dtype::f64);
  CHECK_THROWS_AS(ops::add(x, y), NumericError);  // overflows to inf
  set_finite_checks(false);
  CHECK_NOTHROW(ops::add(x, y));
  set_finite_checks(true);
}

TEST_CASE("shape errors are reported as usage errors") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 5});
  CHECK_THROWS_AS(ops::matmul(a, b), UsageError);
  CHECK_THROWS_AS(ops::add(a, b), UsageError);
  CHECK_THROWS_AS(ops::mul(a, b), UsageError);
  Tensor d64 = Tensor::zeros({2, 3}, Dtype::f64);
  CHECK_THROWS_AS(ops::add(a, d64), UsageError);  // dtype mixing
  Tensor odd = Tensor::zeros({1, 2, 3});
  CHECK_THROWS_AS(ops::rope_rotate(odd, 10000.0), UsageError);  // odd head dim
}
