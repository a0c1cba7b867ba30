#include <cmath>

#include "doctest.h"
#include "duralign/gradcheck.hpp"
#include "duralign/ops.hpp"
#include "oracle_helpers.hpp"

using namespace duralign;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& x : t.v) x = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("softmax of zeros is uniform") {
  Graph<double> g;
  int x = g.leaf(zeros<double>(Shape{1, 3}));
  int y = softmax(g, x, 1);
  for (int j = 0; j < 3; ++j) CHECK(g.value(y).v[j] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("softmax closed form and shift invariance") {
  Graph<double> g;
  int x = g.leaf(Tensor<double>(Shape{1, 2}, {std::log(2.0), 0.0}));
  int y = softmax(g, x, 1);
  CHECK(g.value(y).v[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(g.value(y).v[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  Rng rng(7);
  Tensor<double> raw = random_tensor(Shape{4, 5}, rng, -3, 3);
  Tensor<double> shifted = raw;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 5; ++j) shifted.v[static_cast<size_t>(i) * 5 + j] += 17.25;
  Graph<double> g2;
  int a = softmax(g2, g2.leaf(raw), 1);
  int b = softmax(g2, g2.leaf(shifted), 1);
  for (size_t i = 0; i < g2.value(a).v.size(); ++i)
    CHECK(g2.value(a).v[i] == doctest::Approx(g2.value(b).v[i]).epsilon(1e-12));
}

TEST_CASE("softmax rows are a distribution") {
  Rng rng(11);
  Graph<double> g;
  int y = softmax(g, g.leaf(random_tensor(Shape{6, 9}, rng, -4, 4)), 1);
  for (int i = 0; i < 6; ++i) {
    double sum = 0;
    for (int j = 0; j < 9; ++j) {
      double w = g.value(y).v[static_cast<size_t>(i) * 9 + j];
      CHECK(w >= 0.0);
      sum += w;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-9);
  }
}

TEST_CASE("softmax rejects non-finite input and bad axis") {
  Graph<double> g;
  Tensor<double> bad(Shape{2}, {1.0, std::numeric_limits<double>::infinity()});
  int x = g.leaf(std::move(bad));
  CHECK_THROWS_AS(softmax(g, x, 0), std::invalid_argument);
  int ok = g.leaf(zeros<double>(Shape{2}));
  CHECK_THROWS_AS(softmax(g, ok, 1), std::invalid_argument);
}

TEST_CASE("swish values") {
  Graph<double> g;
  int x = g.leaf(Tensor<double>(Shape{3}, {0.0, 20.0, 1.0}));
  int y = swish(g, x);
  CHECK(g.value(y).v[0] == 0.0);
  CHECK(std::abs(g.value(y).v[1] - 20.0) <= 1e-6);
  // independent scalar evaluation of 1 * sigmoid(1)
  double expected = 1.0 / (1.0 + std::exp(-1.0));
  CHECK(g.value(y).v[2] == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("conv1d identity and zero kernels") {
  Rng rng(3);
  Tensor<double> x = random_tensor(Shape{6, 4}, rng);

  Tensor<double> ident(Shape{3, 4, 4});
  for (int i = 0; i < 4; ++i) ident.v[(1u * 4 + static_cast<size_t>(i)) * 4 + i] = 1.0;  // center tap
  Graph<double> g;
  int y = conv1d(g, g.leaf(x), g.leaf(ident), g.leaf(zeros<double>(Shape{4})));
  for (size_t i = 0; i < x.v.size(); ++i) CHECK(g.value(y).v[i] == doctest::Approx(x.v[i]));

  int z = conv1d(g, g.leaf(x), g.leaf(zeros<double>(Shape{3, 4, 4})), g.leaf(zeros<double>(Shape{4})));
  for (double v : g.value(z).v) CHECK(v == 0.0);
}

TEST_CASE("conv1d matches direct summation") {
  Rng rng(5);
  Tensor<double> x = random_tensor(Shape{5, 2}, rng);
  Tensor<double> k = random_tensor(Shape{3, 2, 3}, rng);
  Tensor<double> b = random_tensor(Shape{3}, rng);
  Graph<double> g;
  int y = conv1d(g, g.leaf(x), g.leaf(k), g.leaf(b));
  Tensor<double> ref = oracle::conv1d_naive(x, k, b);
  REQUIRE(g.value(y).shape == ref.shape);
  for (size_t i = 0; i < ref.v.size(); ++i)
    CHECK(g.value(y).v[i] == doctest::Approx(ref.v[i]).epsilon(1e-12));
}

TEST_CASE("conv1d rejects even kernel width") {
  Graph<double> g;
  int x = g.leaf(zeros<double>(Shape{4, 2}));
  int k = g.leaf(zeros<double>(Shape{2, 2, 2}));
  int b = g.leaf(zeros<double>(Shape{2}));
  CHECK_THROWS_AS(conv1d(g, x, k, b), std::invalid_argument);
}

TEST_CASE("batch norm moments") {
  ParameterStore<double> store;
  register_batch_norm(store, "bn", 3);
  Rng rng(13);

  SUBCASE("constant column maps to zeros before scale/shift") {
    Tensor<double> x(Shape{5, 3});
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 3; ++j) x.v[static_cast<size_t>(i) * 3 + j] = 2.5 * (j + 1);
    Graph<double> g;
    int y = batch_norm(g, g.leaf(x), store, "bn", NormMode::train);
    for (double v : g.value(y).v) CHECK(std::abs(v) <= 1e-12);
  }

  SUBCASE("already-normalized column is unchanged up to epsilon") {
    // two-point column with mean 0 and variance 1
    Tensor<double> x(Shape{2, 3});
    for (int j = 0; j < 3; ++j) {
      x.v[static_cast<size_t>(j)] = 1.0;
      x.v[3 + static_cast<size_t>(j)] = -1.0;
    }
    Graph<double> g;
    int y = batch_norm(g, g.leaf(x), store, "bn", NormMode::train);
    for (size_t i = 0; i < x.v.size(); ++i) CHECK(g.value(y).v[i] == doctest::Approx(x.v[i]).epsilon(1e-4));
  }

  SUBCASE("normalizes random input to zero mean unit variance") {
    Tensor<double> x = random_tensor(Shape{64, 3}, rng, -2, 5);
    Graph<double> g;
    int y = batch_norm(g, g.leaf(x), store, "bn", NormMode::train);
    for (int j = 0; j < 3; ++j) {
      double mean = 0, var = 0;
      for (int i = 0; i < 64; ++i) mean += g.value(y).v[static_cast<size_t>(i) * 3 + j];
      mean /= 64;
      for (int i = 0; i < 64; ++i) {
        double c = g.value(y).v[static_cast<size_t>(i) * 3 + j] - mean;
        var += c * c;
      }
      var /= 64;
      CHECK(std::abs(mean) <= 1e-6);
      CHECK(std::abs(var - 1.0) <= 1e-4);
    }
  }

  SUBCASE("inference before any training step is an error") {
    Graph<double> g;
    int x = g.leaf(zeros<double>(Shape{4, 3}));
    CHECK_THROWS_AS(batch_norm(g, x, store, "bn", NormMode::infer), std::runtime_error);
  }
}

TEST_CASE("backward of a linear map gives column sums") {
  Rng rng(17);
  Tensor<double> a = random_tensor(Shape{4, 3}, rng);
  Graph<double> g;
  int an = g.leaf(a);
  ParameterStore<double> store;
  Tensor<double>& xv = store.create("x", Shape{3, 1});
  for (auto& v : xv.v) v = rng.uniform(-1, 1);
  int x = g.param(store, "x");
  int root = sum(g, matmul(g, an, x));
  g.backward(root);
  std::map<std::string, Tensor<double>> grads;
  g.collect_param_gradients(grads);
  for (int j = 0; j < 3; ++j) {
    double col = 0;
    for (int i = 0; i < 4; ++i) col += a.v[static_cast<size_t>(i) * 3 + j];
    CHECK(grads.at("x").v[static_cast<size_t>(j)] == doctest::Approx(col).epsilon(1e-12));
  }
}

TEST_CASE("L1 of a tensor against itself has zero gradient") {
  ParameterStore<double> store;
  Rng rng(23);
  Tensor<double>& xv = store.create("x", Shape{5});
  for (auto& v : xv.v) v = rng.uniform(-1, 1);
  Graph<double> g;
  int x = g.param(store, "x");
  int root = sum(g, abs_op(g, sub(g, x, x)));
  g.backward(root);
  CHECK(g.value(root).v[0] == 0.0);
  std::map<std::string, Tensor<double>> grads;
  g.collect_param_gradients(grads);
  for (double v : grads.at("x").v) CHECK(v == 0.0);  // sign(0) = 0
}

TEST_CASE("backward rejects non-scalar roots") {
  Graph<double> g;
  int x = g.leaf(zeros<double>(Shape{2, 2}));
  int y = affine(g, x, 2.0, 0.0);
  CHECK_THROWS_AS(g.backward(y), std::invalid_argument);
}

TEST_CASE("composite graph gradients match finite differences") {
  ParameterStore<double> store;
  Rng rng(29);
  for (auto [name, shape] : std::vector<std::pair<std::string, Shape>>{
           {"a", Shape{4, 3}}, {"w", Shape{3, 5}}, {"b", Shape{5}}, {"d", Shape{6}}}) {
    Tensor<double>& t = store.create(name, shape);
    for (auto& v : t.v) v = rng.uniform(-1, 1);
  }
  Tensor<double> target = random_tensor(Shape{4, 5}, rng);
  Tensor<double> kern = random_tensor(Shape{3, 1, 2}, rng);

  auto build = [&](Graph<double>& g) {
    int a = g.param(store, "a");
    int w = g.param(store, "w");
    int b = g.param(store, "b");
    int d = g.param(store, "d");
    int y = swish(g, linear(g, a, w, b));
    int l1 = sum(g, abs_op(g, sub(g, y, g.leaf(target))));
    int s = cumsum_exclusive(g, d);
    int grid = broadcast_rows(g, softplus(g, s), 3);
    int conv = conv1d(g, reshape(g, d, Shape{6, 1}), g.leaf(kern), g.leaf(zeros<double>(Shape{2})));
    int sm = softmax(g, grid, 1);
    return add(g, add(g, l1, sum(g, mul(g, sm, sm))), sum(g, sigmoid(g, conv)));
  };

  auto report = check_gradients<double>(store, build, 1e-5);
  CHECK(report.worst <= 1e-4);
}

TEST_CASE("check_gradients on a single linear layer is near exact") {
  ParameterStore<double> store;
  Rng rng(31);
  Tensor<double>& w = store.create("w", Shape{4, 3});
  init_glorot_uniform(w, 4, 3, rng);
  store.create("b", Shape{3});
  Tensor<double> x = random_tensor(Shape{5, 4}, rng);
  Tensor<double> weights = random_tensor(Shape{5, 3}, rng);
  auto build = [&](Graph<double>& g) {
    int y = linear(g, g.leaf(x), g.param(store, "w"), g.param(store, "b"));
    return sum(g, mul(g, y, g.leaf(weights)));
  };
  auto report = check_gradients<double>(store, build, 1e-4);
  CHECK(report.entries.size() == 2);
  CHECK(report.worst <= 1e-7);
}

TEST_CASE("check_gradients with no parameters yields an empty report") {
  ParameterStore<double> store;
  auto build = [&](Graph<double>& g) { return sum(g, g.leaf(zeros<double>(Shape{2}))); };
  auto report = check_gradients<double>(store, build);
  CHECK(report.entries.empty());
  CHECK(report.worst == 0.0);
}

TEST_CASE("check_gradients requires 64-bit mode") {
  ParameterStore<float> store;
  store.create("w", Shape{2});
  std::function<int(Graph<float>&)> build = [&](Graph<float>& g) {
    return sum(g, g.param(store, "w"));
  };
  CHECK_THROWS_AS(check_gradients<float>(store, build), std::invalid_argument);
}

TEST_CASE("graph evaluation is deterministic") {
  auto run = [] {
    Rng rng(101);
    Graph<float> g;
    Tensor<float> x(Shape{8, 4});
    for (auto& v : x.v) v = static_cast<float>(rng.uniform(-1, 1));
    int y = softmax(g, swish(g, g.leaf(x)), 1);
    return g.value(y).v;
  };
  auto a = run();
  auto b = run();
  CHECK(a == b);  // bit-identical
}

TEST_CASE("gradients route through contraction ops") {
  ParameterStore<double> store;
  Rng rng(37);
  for (auto [name, shape] : std::vector<std::pair<std::string, Shape>>{
           {"w", Shape{4, 3}}, {"c", Shape{12, 2}}, {"a", Shape{2, 5}}}) {
    Tensor<double>& t = store.create(name, shape);
    for (auto& v : t.v) v = rng.uniform(-1, 1);
  }
  Tensor<double> probe = random_tensor(Shape{4, 5}, rng);
  auto build = [&](Graph<double>& g) {
    int red = context_reduce(g, g.param(store, "w"), g.param(store, "c"));
    int o = matmul(g, red, g.param(store, "a"));
    return sum(g, mul(g, o, g.leaf(probe)));
  };
  auto report = check_gradients<double>(store, build, 1e-5);
  CHECK(report.worst <= 1e-6);

  // forward against the naive einsum
  Graph<double> g;
  int red = context_reduce(g, g.param(store, "w"), g.param(store, "c"));
  Tensor<double> ref = oracle::context_reduce_naive(store.value("w"), store.value("c"));
  for (size_t i = 0; i < ref.v.size(); ++i)
    CHECK(g.value(red).v[i] == doctest::Approx(ref.v[i]).epsilon(1e-12));
}

TEST_CASE("depthwise softmax conv and remaining ops pass finite differences") {
  ParameterStore<double> store;
  Rng rng(41);
  for (auto [name, shape] : std::vector<std::pair<std::string, Shape>>{
           {"x", Shape{6, 3}}, {"k", Shape{3, 3}}, {"emb", Shape{5, 3}}, {"g1", Shape{4, 3}},
           {"g2", Shape{4, 3}}, {"u", Shape{3, 2}}}) {
    Tensor<double>& t = store.create(name, shape);
    for (auto& v : t.v) v = rng.uniform(-1, 1);
  }
  Tensor<double> probe = random_tensor(Shape{6, 3}, rng);
  Tensor<double> probe2 = random_tensor(Shape{12, 4}, rng);
  std::vector<int> ids = {3, 0, 4, 1, 2, 0};
  auto build = [&](Graph<double>& g) {
    int conv = depthwise_softmax_conv(g, g.param(store, "x"), g.param(store, "k"));
    int emb = embedding(g, g.param(store, "emb"), ids);
    int t1 = sum(g, mul(g, add(g, conv, emb), g.leaf(probe)));
    int cells = grid_concat(g, g.param(store, "g1"), g.param(store, "g2"), g.param(store, "u"));
    int t2 = sum(g, mul(g, cells, g.leaf(probe2)));
    int tr = sum(g, exp_op(g, scale(g, transpose(g, slice_cols(g, g.param(store, "x"), 0, 2)), 0.3)));
    int cc = sum(g, concat_cols(g, g.param(store, "g1"), g.param(store, "g2")));
    return add(g, add(g, t1, t2), add(g, tr, cc));
  };
  auto report = check_gradients<double>(store, build, 1e-5);
  CHECK(report.worst <= 1e-6);
}

TEST_CASE("embedding rejects out-of-range ids") {
  Graph<double> g;
  int table = g.leaf(zeros<double>(Shape{4, 2}));
  CHECK_THROWS_AS(embedding(g, table, std::vector<int>{0, 4}), std::invalid_argument);
  CHECK_THROWS_AS(embedding(g, table, std::vector<int>{}), std::invalid_argument);
}
