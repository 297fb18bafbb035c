#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>

#include "forge/checkpoint.hpp"
#include "forge/error.hpp"
#include "forge/optim.hpp"
#include "forge/rng.hpp"
#include "forge/tensor.hpp"

using namespace forge;
using namespace forge::diff;

namespace {

void expect_code(forge_status want, const std::function<void()>& fn) {
  try {
    fn();
    FAIL_CHECK("expected error " << status_name(want));
  } catch (const Error& e) {
    CHECK(e.code() == want);
  }
}

// Finite-difference pass over every parameter; the central-difference
// quotient is the oracle all primitives are judged against.
double fd_check(ParamStore& params, const std::function<Tensor()>& f) {
  return grad_check(f, params, 1e-5);
}

Tensor leaf(std::vector<int> shape, Rng& rng, double stddev = 1.0) {
  return Tensor::randn(std::move(shape), rng, stddev, true);
}

}  // namespace

TEST_CASE("quadratic form gradient matches closed form and differences") {
  Rng rng(7);
  int n = 5;
  Tensor A = Tensor::randn({n, n}, rng, 1.0, false);
  ParamStore params;
  params["x"] = leaf({n, 1}, rng);

  auto f = [&]() {
    Tensor ax = matmul(A, params["x"]);
    Tensor xtax = matmul(reshape(params["x"], {1, n}), ax);
    return reshape(xtax, {});
  };
  CHECK(fd_check(params, f) < 1e-7);

  zero_grads(params);
  backward(f());
  // closed form (A + A^T) x
  for (int i = 0; i < n; ++i) {
    double want = 0.0;
    for (int j = 0; j < n; ++j)
      want += (A.at({i, j}) + A.at({j, i})) * params["x"].at({j, 0});
    CHECK(params["x"].grad()[static_cast<size_t>(i)] ==
          doctest::Approx(want).epsilon(1e-10));
  }
}

TEST_CASE("matrix quadratic ||Wv||^2 against 2(Wv)v^T") {
  Rng rng(11);
  int m = 4, n = 3;
  Tensor v = Tensor::randn({n, 1}, rng, 1.0, false);
  ParamStore params;
  params["W"] = leaf({m, n}, rng);

  auto f = [&]() { return sum_of_squares(matmul(params["W"], v)); };
  CHECK(fd_check(params, f) < 1e-7);

  zero_grads(params);
  backward(f());
  Tensor wv = matmul(params["W"], v);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      CHECK(params["W"].grad()[static_cast<size_t>(i * n + j)] ==
            doctest::Approx(2.0 * wv.at({i, 0}) * v.at({j, 0}))
                .epsilon(1e-10));
}

TEST_CASE("every primitive passes differencing on ten seeds") {
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    CAPTURE(seed);
    Rng rng(seed);
    {
      ParamStore p;
      p["a"] = leaf({3, 4}, rng);
      p["b"] = leaf({4, 2}, rng);
      CHECK(fd_check(p, [&] { return sum_of_squares(matmul(p["a"], p["b"])); }) < 1e-6);
    }
    {
      ParamStore p;
      p["a"] = leaf({2, 3, 4}, rng);
      p["b"] = leaf({4, 2}, rng);
      CHECK(fd_check(p, [&] { return sum_of_squares(matmul(p["a"], p["b"])); }) < 1e-6);
    }
    {
      ParamStore p;
      p["a"] = leaf({2, 3, 4}, rng);
      p["b"] = leaf({2, 4, 2}, rng);
      CHECK(fd_check(p, [&] { return sum_of_squares(matmul(p["a"], p["b"])); }) < 1e-6);
    }
    {
      ParamStore p;
      p["a"] = leaf({2, 3}, rng);
      p["b"] = leaf({2, 3}, rng);
      CHECK(fd_check(p, [&] { return sum_of_squares(add(p["a"], p["b"])); }) < 1e-6);
      CHECK(fd_check(p, [&] { return sum_of_squares(sub(p["a"], p["b"])); }) < 1e-6);
      CHECK(fd_check(p, [&] { return sum_of_squares(mul(p["a"], p["b"])); }) < 1e-6);
    }
    {
      ParamStore p;
      p["a"] = leaf({2, 3, 4}, rng);
      p["bias"] = leaf({4}, rng);
      CHECK(fd_check(p, [&] { return sum_of_squares(add(p["a"], p["bias"])); }) < 1e-6);
      CHECK(fd_check(p, [&] { return sum_of_squares(mul(p["a"], p["bias"])); }) < 1e-6);
    }
    {
      ParamStore p;
      p["a"] = leaf({3, 5}, rng);
      CHECK(fd_check(p, [&] { return sum_of_squares(scale(p["a"], -1.7)); }) < 1e-6);
      CHECK(fd_check(p, [&] { return sum_of_squares(add_scalar(p["a"], 0.3)); }) < 1e-6);
      CHECK(fd_check(p, [&] { return sum_of_squares(layer_norm(p["a"])); }) < 1e-6);
      CHECK(fd_check(p, [&] { return sum_of_squares(softmax(p["a"])); }) < 1e-6);
      CHECK(fd_check(p, [&] { return sum_of_squares(tanh_act(p["a"])); }) < 1e-6);
      CHECK(fd_check(p, [&] { return sum_of_squares(gelu(p["a"])); }) < 1e-6);
      CHECK(fd_check(p, [&] { return sum_of_squares(sigmoid(p["a"])); }) < 1e-6);
      CHECK(fd_check(p, [&] { return mean_all(mul(p["a"], p["a"])); }) < 1e-6);
      CHECK(fd_check(p, [&] { return scale(sum_all(gelu(p["a"])), 0.25); }) < 1e-6);
    }
    {
      ParamStore p;
      p["a"] = leaf({2, 2, 3}, rng);
      p["b"] = leaf({2, 1, 3}, rng);
      CHECK(fd_check(p, [&] {
              return sum_of_squares(concat({p["a"], p["b"]}, 1));
            }) < 1e-6);
      CHECK(fd_check(p, [&] {
              return sum_of_squares(slice(p["a"], 1, 0, 1));
            }) < 1e-6);
      CHECK(fd_check(p, [&] {
              return sum_of_squares(reshape(p["a"], {4, 3}));
            }) < 1e-6);
    }
    {
      ParamStore p;
      p["table"] = leaf({5, 3}, rng);
      std::vector<int> idx = {4, 0, 2, 0};
      CHECK(fd_check(p, [&] {
              return sum_of_squares(take_rows(p["table"], idx));
            }) < 1e-6);
    }
    {
      ParamStore p;
      p["a"] = leaf({2, 3}, rng);
      CHECK(fd_check(p, [&] {
              return sum_of_squares(expand_tokens(p["a"], 4));
            }) < 1e-6);
    }
    {
      ParamStore p;
      p["q"] = leaf({2, 3, 4}, rng);
      p["k"] = leaf({2, 5, 4}, rng);
      p["v"] = leaf({2, 5, 4}, rng);
      CHECK(fd_check(p, [&] {
              return sum_of_squares(attention(p["q"], p["k"], p["v"], 2));
            }) < 1e-6);
    }
  }
}

TEST_CASE("x*x at 3 has slope 6") {
  ParamStore p;
  p["x"] = Tensor::scalar_value(3.0, true);
  backward(mul(p["x"], p["x"]));
  CHECK(p["x"].grad()[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("stopgrad severs the path and constants collect nothing") {
  Rng rng(3);
  Tensor a = Tensor::randn({3}, rng, 1.0, true);
  Tensor loss = sum_of_squares(stopgrad(a));
  backward(loss);
  for (double g : a.grad()) CHECK(g == 0.0);

  Tensor c = Tensor::randn({3}, rng, 1.0, false);
  Tensor mixed = sum_of_squares(add(a, c));
  CHECK_FALSE(c.requires_grad());
  a.zero_grad();
  backward(mixed);
  bool any = false;
  for (double g : a.grad())
    if (g != 0.0) any = true;
  CHECK(any);
}

TEST_CASE("backward twice doubles, zero_grad resets") {
  ParamStore p;
  p["x"] = Tensor::scalar_value(2.0, true);
  auto make = [&] { return mul(p["x"], p["x"]); };
  backward(make());
  CHECK(p["x"].grad()[0] == doctest::Approx(4.0));
  backward(make());
  CHECK(p["x"].grad()[0] == doctest::Approx(8.0));
  p["x"].zero_grad();
  backward(make());
  CHECK(p["x"].grad()[0] == doctest::Approx(4.0));
}

TEST_CASE("backward is bitwise deterministic") {
  auto run = [] {
    Rng rng(99);
    ParamStore p;
    p["w"] = Tensor::randn({4, 4}, rng, 1.0, true);
    p["b"] = Tensor::randn({4}, rng, 1.0, true);
    Tensor x = Tensor::randn({2, 3, 4}, rng, 1.0, false);
    Tensor h = gelu(add(matmul(x, p["w"]), p["b"]));
    Tensor loss = sum_of_squares(layer_norm(h));
    backward(loss);
    std::vector<double> out;
    for (auto& [k, t] : p)
      for (double g : t.grad()) out.push_back(g);
    return out;
  };
  auto a = run();
  auto b = run();
  REQUIRE(a.size() == b.size());
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

TEST_CASE("gradient of a sum is the sum of gradients") {
  Rng rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor x = Tensor::randn({4}, rng, 1.0, true);
    auto f = [&] { return sum_of_squares(tanh_act(x)); };
    auto g = [&] { return sum_all(gelu(x)); };

    x.zero_grad();
    backward(f());
    std::vector<double> gf(x.grad().begin(), x.grad().end());
    x.zero_grad();
    backward(g());
    std::vector<double> gg(x.grad().begin(), x.grad().end());
    x.zero_grad();
    backward(add(f(), g()));
    for (size_t i = 0; i < gf.size(); ++i)
      CHECK(x.grad()[i] == doctest::Approx(gf[i] + gg[i]).epsilon(1e-12));
  }
}

TEST_CASE("layer_norm maps constant rows to zero") {
  Tensor x = Tensor::full({2, 5}, 3.25, false);
  Tensor y = layer_norm(x);
  for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("matmul by identity is exact") {
  Rng rng(5);
  Tensor x = Tensor::randn({4, 4}, rng, 1.0, false);
  Tensor eye = Tensor::zeros({4, 4}, false);
  for (int i = 0; i < 4; ++i) eye.data()[static_cast<size_t>(i * 4 + i)] = 1.0;
  Tensor y = matmul(x, eye);
  for (size_t i = 0; i < 16; ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("sum_of_squares of (3,4) is 25") {
  Tensor x = Tensor::from_data({2}, {3.0, 4.0});
  CHECK(sum_of_squares(x).scalar() == doctest::Approx(25.0).epsilon(1e-15));
}

TEST_CASE("softmax rows are simplex points") {
  Rng rng(17);
  Tensor x = Tensor::randn({6, 9}, rng, 3.0, false);
  Tensor y = softmax(x);
  for (int r = 0; r < 6; ++r) {
    double s = 0.0;
    for (int c = 0; c < 9; ++c) {
      double v = y.at({r, c});
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("shape violations are loud") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 3});
  Tensor c = Tensor::zeros({4, 2});
  expect_code(FORGE_ERR_SHAPE_MISMATCH, [&] { matmul(a, c); });
  expect_code(FORGE_ERR_SHAPE_MISMATCH, [&] { add(a, c); });
  // (3) broadcasts over (2,3); (2) does not
  expect_code(FORGE_ERR_SHAPE_MISMATCH, [&] { add(a, Tensor::zeros({2})); });
  expect_code(FORGE_ERR_SHAPE_MISMATCH, [&] { concat({a, c}, 0); });
  expect_code(FORGE_ERR_SHAPE_MISMATCH, [&] { slice(a, 1, 2, 1); });
  expect_code(FORGE_ERR_SHAPE_MISMATCH, [&] { reshape(a, {7}); });
  expect_code(FORGE_ERR_SHAPE_MISMATCH, [&] { attention(a, a, a, 2); });
  expect_code(FORGE_ERR_NON_SCALAR_LOSS, [&] {
    Tensor x = Tensor::zeros({2}, true);
    backward(add(x, x));
  });
}

TEST_CASE("no-grad scope builds value-only graphs") {
  Tensor x = Tensor::scalar_value(2.0, true);
  {
    NoGradGuard guard;
    Tensor y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
    CHECK(y.scalar() == doctest::Approx(4.0));
  }
  CHECK(grad_enabled());
}

TEST_CASE("rng streams are platform-stable and splittable") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(42);
  double lo = 1.0, hi = 0.0, sum = 0.0;
  for (int i = 0; i < 10000; ++i) {
    double u = c.uniform();
    lo = std::min(lo, u);
    hi = std::max(hi, u);
    sum += u;
  }
  CHECK(lo >= 0.0);
  CHECK(hi < 1.0);
  CHECK(sum / 10000.0 == doctest::Approx(0.5).epsilon(0.02));

  // split independence of call order
  Rng base(7);
  uint64_t s1 = base.split(1).next_u64();
  Rng base2(7);
  base2.split(9).next_u64();
  CHECK(base2.split(1).next_u64() == s1);

  Rng n(3);
  double m = 0.0, m2 = 0.0;
  int cnt = 20000;
  for (int i = 0; i < cnt; ++i) {
    double z = n.normal();
    m += z;
    m2 += z * z;
  }
  CHECK(m / cnt == doctest::Approx(0.0).epsilon(0.03));
  CHECK(m2 / cnt == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("adamw drives a quadratic toward its minimum") {
  ParamStore p;
  p["x"] = Tensor::from_data({3}, {5.0, -4.0, 2.5}, true);
  AdamW opt(AdamWConfig{.lr = 0.05, .weight_decay = 0.0});
  for (int step = 0; step < 400; ++step) {
    zero_grads(p);
    backward(sum_of_squares(p["x"]));
    opt.step(p, 0.05);
  }
  for (double v : p["x"].data()) CHECK(std::abs(v) < 1e-2);
}

TEST_CASE("cosine schedule warms up then decays to zero") {
  double base = 1e-3;
  int64_t total = 1000;
  CHECK(cosine_lr(0, total, base, 0.05) == doctest::Approx(base / 50.0));
  CHECK(cosine_lr(49, total, base, 0.05) == doctest::Approx(base));
  CHECK(cosine_lr(50, total, base, 0.05) == doctest::Approx(base).epsilon(1e-4));
  double mid = cosine_lr(525, total, base, 0.05);
  CHECK(mid == doctest::Approx(base * 0.5).epsilon(1e-2));
  CHECK(cosine_lr(999, total, base, 0.05) < 1e-5 * base + 1e-8);
  // monotone decreasing after warmup
  double prev = cosine_lr(50, total, base, 0.05);
  for (int64_t s = 51; s < 1000; s += 7) {
    double cur = cosine_lr(s, total, base, 0.05);
    CHECK(cur <= prev + 1e-15);
    prev = cur;
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  Rng rng(31);
  ParamStore p;
  p["alpha/w"] = Tensor::randn({3, 4}, rng, 1.0, true);
  p["beta/b"] = Tensor::randn({7}, rng, 0.1, true);
  nlohmann::ordered_json meta;
  meta["note"] = "fixture";
  meta["count"] = 2;

  auto path = std::filesystem::temp_directory_path() / "forge_ck_test.bin";
  save_checkpoint(path.string(), p, meta);
  Checkpoint ck = load_checkpoint(path.string());
  CHECK(ck.meta["note"] == "fixture");
  REQUIRE(ck.params.size() == 2);
  for (auto& [name, t] : p) {
    REQUIRE(ck.params.count(name) == 1);
    auto& u = ck.params.at(name);
    REQUIRE(u.shape() == t.shape());
    CHECK(std::memcmp(u.data().data(), t.data().data(),
                      sizeof(double) * static_cast<size_t>(t.size())) == 0);
  }

  // corruptions
  {
    std::ifstream in(path, std::ios::binary);
    std::string blob((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    auto half = path;
    half.replace_extension(".half");
    std::ofstream out(half, std::ios::binary);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size() / 2));
    out.close();
    expect_code(FORGE_ERR_TRUNCATED, [&] { load_checkpoint(half.string()); });

    auto vers = path;
    vers.replace_extension(".vers");
    blob[0] = 9;
    std::ofstream out2(vers, std::ios::binary);
    out2.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    out2.close();
    expect_code(FORGE_ERR_VERSION_MISMATCH,
                [&] { load_checkpoint(vers.string()); });
    std::filesystem::remove(half);
    std::filesystem::remove(vers);
  }
  std::filesystem::remove(path);
  expect_code(FORGE_ERR_IO, [&] { load_checkpoint(path.string()); });
}
