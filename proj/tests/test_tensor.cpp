#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hoi/optim.hpp"
#include "hoi/tensor.hpp"
#include "testutil.hpp"

using namespace hoi;
using namespace hoi::ad;
using testutil::fd_max_rel_err;
using testutil::random_tensor;

TEST_CASE("matmul identity and hand dot product") {
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor b = Tensor::from({2, 2}, {3, 4, 5, 6});
  Tensor c = matmul(eye, b);
  CHECK(c.values() == b.values());

  Tensor row = Tensor::from({1, 2}, {1, 2});
  Tensor col = Tensor::from({2, 1}, {3, 4});
  CHECK(matmul(row, col).item() == 11.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 3});
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("(2,3)"), DimensionError);
}

TEST_CASE("matmul gradient vs finite differences") {
  Rng rng(7);
  Tensor a = random_tensor({5, 4}, rng);
  Tensor b = random_tensor({4, 3}, rng);
  const double err = fd_max_rel_err([&] { return sum(matmul(a, b)); }, {a, b});
  CHECK(err < 1e-6);
}

TEST_CASE("elementwise definitions") {
  Tensor x = Tensor::from({3}, {-1, 0, 2});
  CHECK(relu(x).values() == std::vector<double>{0, 0, 2});
  CHECK(sigmoid(Tensor::from({1}, {0})).item() == 0.5);

  Tensor a = Tensor::zeros({2, 2});
  Tensor b = Tensor::zeros({3, 2});
  CHECK_THROWS_AS(add(a, b), DimensionError);
  CHECK_THROWS_AS(mul(a, b), DimensionError);
}

TEST_CASE("mul gradient on random 3x3 pair") {
  Rng rng(11);
  Tensor a = random_tensor({3, 3}, rng);
  Tensor b = random_tensor({3, 3}, rng);
  const double err = fd_max_rel_err([&] { return sum(mul(a, b)); }, {a, b});
  CHECK(err < 1e-6);
}

TEST_CASE("softmax uniform, stability and normalization") {
  Tensor u = softmax(Tensor::from({3}, {0, 0, 0}), 0);
  for (int i = 0; i < 3; ++i) CHECK(u.at(i) == doctest::Approx(1.0 / 3).epsilon(1e-15));

  Tensor s = softmax(Tensor::from({2}, {1000, 0}), 0);
  CHECK(s.at(0) == doctest::Approx(1.0));
  CHECK(s.at(1) == doctest::Approx(0.0));
  CHECK(std::isfinite(s.at(0)));

  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor({4, 6}, rng, -700, 700, false);
    Tensor y = softmax(x, 1);
    for (int r = 0; r < 4; ++r) {
      double row_sum = 0.0;
      for (int c = 0; c < 6; ++c) {
        CHECK(y.at(r, c) >= 0.0);
        row_sum += y.at(r, c);
      }
      CHECK(std::fabs(row_sum - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("softmax gradient on random length-6 vector") {
  Rng rng(13);
  Tensor x = random_tensor({6}, rng);
  Tensor w = random_tensor({6}, rng, -1, 1, false);
  const double err = fd_max_rel_err([&] { return sum(mul(softmax(x, 0), w)); }, {x});
  CHECK(err < 1e-6);
}

TEST_CASE("layer_norm conventions") {
  Tensor gain = Tensor::full({3}, 1.0);
  Tensor bias = Tensor::zeros({3});
  Tensor constant_row = layer_norm(Tensor::from({1, 3}, {5, 5, 5}), gain, bias);
  for (int i = 0; i < 3; ++i) CHECK(constant_row.at(0, i) == 0.0);

  Tensor g2 = Tensor::full({2}, 1.0);
  Tensor b2 = Tensor::zeros({2});
  Tensor two = layer_norm(Tensor::from({1, 2}, {1, 3}), g2, b2);
  CHECK(two.at(0, 0) == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(two.at(0, 1) == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("layer_norm rows are standardized before affine") {
  Rng rng(17);
  Tensor x = random_tensor({5, 8}, rng, -2, 2, false);
  Tensor gain = Tensor::full({8}, 1.0);
  Tensor bias = Tensor::zeros({8});
  Tensor y = layer_norm(x, gain, bias);
  for (int r = 0; r < 5; ++r) {
    double mu = 0.0, var = 0.0;
    for (int c = 0; c < 8; ++c) mu += y.at(r, c);
    mu /= 8;
    for (int c = 0; c < 8; ++c) var += (y.at(r, c) - mu) * (y.at(r, c) - mu);
    var /= 8;
    CHECK(std::fabs(mu) < 1e-9);
    CHECK(std::fabs(var - 1.0) < 1e-4);  // eps shifts variance slightly below 1
  }
}

TEST_CASE("layer_norm gradient") {
  Rng rng(19);
  Tensor x = random_tensor({3, 4}, rng);
  Tensor gain = random_tensor({4}, rng, 0.5, 1.5);
  Tensor bias = random_tensor({4}, rng, -0.5, 0.5);
  Tensor w = random_tensor({3, 4}, rng, -1, 1, false);
  const double err =
      fd_max_rel_err([&] { return sum(mul(layer_norm(x, gain, bias), w)); }, {x, gain, bias});
  CHECK(err < 1e-5);
}

TEST_CASE("concat shape contract and identity") {
  Tensor a = Tensor::zeros({64, 256});
  Tensor b = Tensor::zeros({64, 256});
  Tensor c = concat({a, b}, 1);
  CHECK(c.shape() == std::vector<int>{64, 512});

  Rng rng(23);
  Tensor single = random_tensor({3, 2}, rng, -1, 1, false);
  Tensor same = concat({single}, 0);
  CHECK(same.values() == single.values());

  Tensor bad = Tensor::zeros({64, 128});
  CHECK_THROWS_AS(concat({a, bad}, 0), DimensionError);
}

TEST_CASE("concat-then-split is the identity on both axes") {
  Rng rng(29);
  for (int axis = 0; axis < 2; ++axis) {
    Tensor a = random_tensor({3, 4}, rng, -1, 1, false);
    Tensor b = random_tensor({3, 4}, rng, -1, 1, false);
    Tensor joined = concat({a, b}, axis);
    auto parts = split(joined, axis, {a.dim(axis), b.dim(axis)});
    CHECK(parts[0].values() == a.values());
    CHECK(parts[1].values() == b.values());
  }
}

TEST_CASE("concat gradient on 2x(3,2)") {
  Rng rng(31);
  Tensor a = random_tensor({3, 2}, rng);
  Tensor b = random_tensor({3, 2}, rng);
  Tensor w = random_tensor({3, 4}, rng, -1, 1, false);
  const double err = fd_max_rel_err([&] { return sum(mul(concat({a, b}, 1), w)); }, {a, b});
  CHECK(err < 1e-6);
}

TEST_CASE("gradients accumulate across uses until zero_grad") {
  Tensor x = Tensor::from({1}, {2.0}, true);
  Tensor y = add(x, x);
  y.backward();
  CHECK(x.grad()[0] == 2.0);
  sum(mul(x, x)).backward();  // second backward accumulates
  CHECK(x.grad()[0] == 6.0);
  x.zero_grad();
  CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("finite-difference sweep over every differentiable op, 20+ seeds") {
  for (std::uint64_t seed = 1; seed <= 22; ++seed) {
    Rng rng(seed);
    // inputs kept away from relu/abs/min/max kinks by construction
    Tensor a = random_tensor({4, 3}, rng, 0.2, 1.0);
    Tensor b = random_tensor({4, 3}, rng, 1.2, 2.0);
    Tensor v = random_tensor({3}, rng, -0.8, 0.8);
    Tensor w = random_tensor({4, 3}, rng, -1, 1, false);

    auto weighted = [&](Tensor t) { return sum(mul(t, w)); };

    CHECK(fd_max_rel_err([&] { return weighted(add(a, b)); }, {a, b}) < 1e-5);
    CHECK(fd_max_rel_err([&] { return weighted(sub(a, b)); }, {a, b}) < 1e-5);
    CHECK(fd_max_rel_err([&] { return weighted(mul(a, b)); }, {a, b}) < 1e-5);
    CHECK(fd_max_rel_err([&] { return weighted(divide(a, b)); }, {a, b}) < 1e-5);
    CHECK(fd_max_rel_err([&] { return weighted(minimum(a, b)); }, {a, b}) < 1e-5);
    CHECK(fd_max_rel_err([&] { return weighted(maximum(a, b)); }, {a, b}) < 1e-5);
    CHECK(fd_max_rel_err([&] { return weighted(add_rowvec(a, v)); }, {a, v}) < 1e-5);
    CHECK(fd_max_rel_err([&] { return weighted(scale(a, -1.7)); }, {a}) < 1e-5);
    CHECK(fd_max_rel_err([&] { return weighted(add_scalar(a, 0.3)); }, {a}) < 1e-5);
    CHECK(fd_max_rel_err([&] { return weighted(relu(sub(a, b))); }, {a, b}) < 1e-5);
    CHECK(fd_max_rel_err([&] { return weighted(sigmoid(a)); }, {a}) < 1e-5);
    CHECK(fd_max_rel_err([&] { return weighted(absolute(sub(a, b))); }, {a, b}) < 1e-5);
    CHECK(fd_max_rel_err([&] { return weighted(softmax(a, 1)); }, {a}) < 1e-5);
    CHECK(fd_max_rel_err([&] { return weighted(softmax(a, 0)); }, {a}) < 1e-5);
    CHECK(fd_max_rel_err([&] { return weighted(transpose(transpose(a))); }, {a}) < 1e-5);
    CHECK(fd_max_rel_err([&] { return weighted(reshape(reshape(a, {12}), {4, 3})); }, {a}) < 1e-5);
    CHECK(fd_max_rel_err([&] { return weighted(concat(split(a, 1, {1, 2}), 1)); }, {a}) < 1e-5);
    CHECK(fd_max_rel_err(
              [&] { return sum(mul(slice_cols(a, 1, 2), slice_cols(w, 1, 2))); }, {a}) < 1e-5);
    CHECK(fd_max_rel_err([&] { return sum(gather_rows(a, {2, 0, 2})); }, {a}) < 1e-5);
    CHECK(fd_max_rel_err([&] { return sum(repeat_interleave_rows(a, 3)); }, {a}) < 1e-5);
    CHECK(fd_max_rel_err([&] { return sum(tile_rows(a, 3)); }, {a}) < 1e-5);
    CHECK(fd_max_rel_err([&] { return mean(mul(a, b)); }, {a, b}) < 1e-5);

    std::vector<int> targets{2, 0, 1, 2};
    CHECK(fd_max_rel_err([&] { return softmax_cross_entropy(a, targets); }, {a}) < 1e-5);

    std::vector<double> bce_targets(12);
    for (auto& t : bce_targets) t = rng.uniform() < 0.5 ? 0.0 : 1.0;
    CHECK(fd_max_rel_err([&] { return bce_with_logits(sub(a, b), bce_targets); }, {a, b}) < 1e-5);
  }
}

TEST_CASE("no-grad mode records no graph") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  NoGradGuard guard;
  Tensor y = sum(mul(x, x));
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("adamw decoupled decay closed form") {
  ParameterStore store;
  Tensor& w = store.add("w", Tensor::from({1}, {1.0}));
  AdamWConfig cfg;
  cfg.lr = 1e-4;
  cfg.weight_decay = 1e-4;
  AdamW opt(store.all(), cfg);

  store.zero_grad();  // gradient exactly zero
  opt.step();
  CHECK(w.values()[0] == 1.0 - (1e-4 * 1e-4) * 1.0);
}

TEST_CASE("adamw zero learning rate leaves parameters, advances counter") {
  ParameterStore store;
  Tensor& w = store.add("w", Tensor::from({3}, {1.0, -2.0, 0.5}));
  AdamWConfig cfg;
  cfg.lr = 0.0;
  cfg.weight_decay = 1e-4;
  AdamW opt(store.all(), cfg);
  w.zero_grad();
  const_cast<std::vector<double>&>(w.grad());  // buffer exists
  opt.step();
  CHECK(w.values() == std::vector<double>{1.0, -2.0, 0.5});
  CHECK(opt.step_count() == 1);
}

TEST_CASE("adamw missing gradient names the parameter") {
  ParameterStore store;
  store.add("encoder.w", Tensor::from({1}, {1.0}));
  AdamW opt(store.all(), {});
  CHECK_THROWS_WITH_AS(opt.step(), doctest::Contains("encoder.w"), DomainError);
}

TEST_CASE("adamw descends (w-3)^2 monotonically from w=0") {
  ParameterStore store;
  Tensor& w = store.add("w", Tensor::from({1}, {0.0}));
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.0;
  AdamW opt(store.all(), cfg);

  auto f = [&] {
    Tensor d = add_scalar(w, -3.0);
    return sum(mul(d, d));
  };
  double prev = f().item();
  for (int i = 0; i < 10; ++i) {
    store.zero_grad();
    Tensor loss = f();
    loss.backward();
    opt.step();
    const double cur = f().item();
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("adamw with zero decay equals adam bitwise") {
  Rng rng(41);
  ParameterStore store;
  Tensor& w = store.add("w", random_tensor({4, 4}, rng, -1, 1));
  std::vector<double> reference = w.values();

  AdamWConfig cfg;
  cfg.lr = 1e-2;
  cfg.weight_decay = 0.0;
  AdamW opt(store.all(), cfg);

  // reference Adam maintained by the test
  std::vector<double> m(16, 0.0), v(16, 0.0);
  Rng grad_rng(42);
  for (int step = 1; step <= 50; ++step) {
    std::vector<double> g(16);
    for (auto& gi : g) gi = grad_rng.uniform(-1, 1);

    w.zero_grad();
    {
      Tensor gt = Tensor::from({4, 4}, g);
      sum(mul(w, gt)).backward();  // dL/dw = g exactly
    }
    opt.step();

    const double b1c = 1.0 - std::pow(cfg.beta1, step);
    const double b2c = 1.0 - std::pow(cfg.beta2, step);
    for (int i = 0; i < 16; ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / b1c;
      const double vhat = v[i] / b2c;
      reference[i] = reference[i] - cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps));
    }
    for (int i = 0; i < 16; ++i) CHECK(w.values()[i] == reference[i]);
  }
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  Rng rng(43);
  ParameterStore store;
  store.add("a.w", random_tensor({3, 5}, rng, -2, 2));
  store.add("a.b", random_tensor({5}, rng, -1e-9, 1e-9));
  store.add("deep.block.gain", random_tensor({7}, rng, 0.9, 1.1));

  const std::string path = "ckpt_roundtrip_test.txt";
  save_checkpoint(path, store);

  ParameterStore loaded;
  loaded.add("a.w", Tensor::zeros({3, 5}));
  loaded.add("a.b", Tensor::zeros({5}));
  loaded.add("deep.block.gain", Tensor::zeros({7}));
  load_checkpoint(path, loaded);

  for (std::size_t i = 0; i < store.all().size(); ++i) {
    CHECK(loaded.all()[i].tensor.values() == store.all()[i].tensor.values());
  }
  std::remove(path.c_str());
}

TEST_CASE("duplicate parameter names are rejected") {
  ParameterStore store;
  store.add("w", Tensor::zeros({1}));
  CHECK_THROWS_AS(store.add("w", Tensor::zeros({1})), ConfigError);
}
