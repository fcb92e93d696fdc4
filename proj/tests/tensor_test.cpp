#include <doctest.h>

#include "helpers.hpp"
#include "vcnn/tensor.hpp"

using namespace vcnn;
using namespace vcnn::test;

TEST_CASE("shape invariants") {
  Shape s{3, 4, 2};
  CHECK(s.numel() == 24);
  CHECK(s.h() == 3);
  CHECK(s.w() == 4);
  CHECK(s.c() == 2);
  CHECK(s.n() == 1);
  CHECK_THROWS_AS(Shape{0}, ShapeError);
  CHECK_THROWS_AS((Shape{2, -1}), ShapeError);
  CHECK_THROWS_AS(Tensor<double>(Shape{2, 2}, {1.0, 2.0, 3.0}), ShapeError);
}

TEST_CASE("tensor linear order is x, y, channel, batch") {
  Tensor<double> t(Shape::hwcn(2, 3, 2, 2));
  for (int64_t i = 0; i < t.size(); ++i) t.data[i] = static_cast<double>(i);
  CHECK(t.at(0, 1, 0, 0) == 1);
  CHECK(t.at(1, 0, 0, 0) == 3);
  CHECK(t.at(0, 0, 1, 0) == 6);
  CHECK(t.at(0, 0, 0, 1) == 12);
}

TEST_CASE("matmul examples") {
  SUBCASE("identity") {
    Matrix<double> i2(2, 2, {1, 0, 0, 1});
    Matrix<double> v(2, 1, {3, 4});
    Matrix<double> r = matmul(i2, v);
    CHECK(r.data == std::vector<double>({3, 4}));
  }
  SUBCASE("hand multiplication") {
    Matrix<double> a(2, 2, {1, 2, 3, 4});
    Matrix<double> b(2, 1, {5, 6});
    Matrix<double> r = matmul(a, b);
    CHECK(r.data == std::vector<double>({17, 39}));
  }
  SUBCASE("zero matrix annihilates") {
    Matrix<double> z(2, 3);
    Matrix<double> b(3, 2, {1, 2, 3, 4, 5, 6});
    Matrix<double> r = matmul(z, b);
    for (double v : r.data) CHECK(v == 0);
  }
  SUBCASE("dimension mismatch names both shapes") {
    Matrix<double> a(2, 3), b(2, 2);
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("2x3"), ShapeError);
  }
}

TEST_CASE("matmul associativity within 1e-12") {
  Rng rng(12);
  for (int it = 0; it < 30; ++it) {
    const int m = 1 + rng.uniform_int(5), k = 1 + rng.uniform_int(5);
    const int n = 1 + rng.uniform_int(5), p = 1 + rng.uniform_int(5);
    Matrix<double> a(m, k), b(k, n), c(n, p);
    for (double& v : a.data) v = rng.uniform(-1, 1);
    for (double& v : b.data) v = rng.uniform(-1, 1);
    for (double& v : c.data) v = rng.uniform(-1, 1);
    Matrix<double> lhs = matmul(matmul(a, b), c);
    Matrix<double> rhs = matmul(a, matmul(b, c));
    CHECK(max_abs_diff(lhs.data, rhs.data) < 1e-12);
  }
}

TEST_CASE("matmul_transB matches matmul against explicit transpose") {
  Rng rng(13);
  for (int it = 0; it < 20; ++it) {
    const int m = 1 + rng.uniform_int(6), k = 1 + rng.uniform_int(6), n = 1 + rng.uniform_int(6);
    Matrix<double> a(m, k), b(n, k);
    for (double& v : a.data) v = rng.uniform(-1, 1);
    for (double& v : b.data) v = rng.uniform(-1, 1);
    Matrix<double> direct = matmul_transB(a, b);
    Matrix<double> ref = matmul(a, transpose(b));
    // different kernels may contract FMAs differently; agreement is to rounding
    CHECK(max_abs_diff(direct.data, ref.data) < 1e-14 * static_cast<double>(k));
  }
}

TEST_CASE("map_elementwise") {
  Tensor<double> t(Shape{3}, {-1, 0, 2});
  Tensor<double> r = map_elementwise(t, [](double x) { return x > 0 ? x : 0.0; });
  CHECK(r.data == std::vector<double>({0, 0, 2}));
  Tensor<double> id = map_elementwise(t, [](double x) { return x; });
  CHECK(id.data == t.data);
  Tensor<double> sig = map_elementwise(Tensor<double>(Shape{2}, {0, 0}),
                                       [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  CHECK(sig.data[0] == doctest::Approx(0.5));

  SUBCASE("shape preserved for random shapes") {
    Rng rng(5);
    for (int it = 0; it < 20; ++it) {
      Shape s = Shape::hwcn(1 + rng.uniform_int(4), 1 + rng.uniform_int(4),
                            1 + rng.uniform_int(3), 1 + rng.uniform_int(3));
      Tensor<double> x = random_tensor(s, rng);
      CHECK(map_elementwise(x, [](double v) { return v * 2; }).shape == s);
    }
  }
}

TEST_CASE("reshape keeps linear order") {
  Tensor<double> t(Shape{4}, {1, 2, 3, 4});
  Tensor<double> r = reshape(t, Shape{2, 2});
  CHECK(r.shape == Shape{2, 2});
  CHECK(r.data == t.data);
  Tensor<double> back = reshape(reshape(t, Shape{2, 2}), Shape{4});
  CHECK(back.shape == t.shape);
  CHECK(back.data == t.data);

  Tensor<double> m(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor<double> n = reshape(m, Shape{3, 2});
  CHECK(n.data == m.data);  // not a transpose
  CHECK_THROWS_AS(reshape(m, Shape{4, 2}), ShapeError);
}

TEST_CASE("accumulate_by_index examples") {
  SUBCASE("sum") {
    IndexMap map({0, 1, 2}, {0, 0, 1}, 3, 2);
    auto out = accumulate_by_index<double>({1, 2, 3}, map, Reducer::sum);
    CHECK(out == std::vector<double>({3, 3}));
  }
  SUBCASE("max") {
    IndexMap map({0, 1, 2}, {1, 1, 0}, 3, 2);
    auto out = accumulate_by_index<double>({5, 2, 7}, map, Reducer::max);
    CHECK(out == std::vector<double>({7, 5}));
  }
  SUBCASE("empty bucket yields identity") {
    IndexMap map({0}, {0}, 1, 2);
    auto out = accumulate_by_index<double>({1}, map, Reducer::sum);
    CHECK(out == std::vector<double>({1, 0}));
    auto outm = accumulate_by_index<double>({1}, map, Reducer::max);
    CHECK(outm == std::vector<double>({1, 0}));
    auto outa = accumulate_by_index<double>({1}, map, Reducer::mean);
    CHECK(outa == std::vector<double>({1, 0}));
  }
  SUBCASE("bounds checked at construction") {
    CHECK_THROWS_AS(IndexMap({3}, {0}, 3, 2), BoundsError);
    CHECK_THROWS_AS(IndexMap({0}, {2}, 3, 2), BoundsError);
    CHECK_THROWS_AS(IndexMap({-1}, {0}, 3, 2), BoundsError);
  }
  SUBCASE("values length must match declared domain") {
    IndexMap map({0, 1}, {0, 1}, 2, 2);
    CHECK_THROWS_AS(accumulate_by_index<double>({1, 2, 3}, map, Reducer::sum), BoundsError);
  }
}

TEST_CASE("accumulate_by_index sum is linear") {
  Rng rng(77);
  for (int it = 0; it < 20; ++it) {
    const int slen = 4 + rng.uniform_int(20);
    const int tlen = 1 + rng.uniform_int(8);
    std::vector<int64_t> src, tgt;
    for (int s = 0; s < slen; ++s) {
      src.push_back(s);
      tgt.push_back(rng.uniform_int(tlen));
    }
    IndexMap map(src, tgt, slen, tlen);
    std::vector<double> u(slen), v(slen);
    for (double& x : u) x = rng.uniform(-1, 1);
    for (double& x : v) x = rng.uniform(-1, 1);
    const double alpha = rng.uniform(-2, 2), beta = rng.uniform(-2, 2);
    std::vector<double> combo(slen);
    for (int s = 0; s < slen; ++s) combo[s] = alpha * u[s] + beta * v[s];
    auto acc_combo = accumulate_by_index(combo, map, Reducer::sum);
    auto acc_u = accumulate_by_index(u, map, Reducer::sum);
    auto acc_v = accumulate_by_index(v, map, Reducer::sum);
    for (int t = 0; t < tlen; ++t)
      CHECK(std::fabs(acc_combo[t] - (alpha * acc_u[t] + beta * acc_v[t])) < 1e-12);
  }
}

TEST_CASE("bijective sum accumulation is a permutation") {
  Rng rng(78);
  const int n = 16;
  std::vector<int64_t> src(n), tgt(n);
  for (int i = 0; i < n; ++i) {
    src[i] = i;
    tgt[i] = i;
  }
  rng.shuffle(tgt.begin(), tgt.end());
  IndexMap map(src, tgt, n, n);
  map.check_pairs_unique();
  std::vector<double> vals(n);
  for (double& v : vals) v = rng.uniform(-5, 5);
  auto out = accumulate_by_index(vals, map, Reducer::sum);
  // invert by the reverse map
  std::vector<int64_t> inv_tgt(n);
  for (int i = 0; i < n; ++i) inv_tgt[tgt[i]] = i;
  auto back = accumulate_by_index(out, IndexMap(src, inv_tgt, n, n), Reducer::sum);
  // round trip through the permutation and its inverse restores the input
  std::vector<double> twice(n);
  for (int i = 0; i < n; ++i) twice[tgt[i]] = vals[i];
  std::vector<double> round(n);
  for (int i = 0; i < n; ++i) round[inv_tgt[i]] = twice[i];
  CHECK(round == vals);
  CHECK(back.size() == vals.size());
}

TEST_CASE("accumulate_max_arg breaks ties to the lowest source") {
  IndexMap map({0, 1, 2, 3}, {0, 0, 0, 0}, 4, 1);
  std::vector<int64_t> arg;
  auto out = accumulate_max_arg<double>({2, 7, 7, 1}, map, arg);
  CHECK(out[0] == 7);
  CHECK(arg[0] == 1);
}

TEST_CASE("duplicate pair detection") {
  IndexMap map({0, 0}, {1, 1}, 1, 2);
  CHECK_THROWS_AS(map.check_pairs_unique(), BoundsError);
}

TEST_CASE("matmul parallelism does not change results") {
  // every output element is summed in a fixed k order, so the thread count
  // cannot shift even the last bit
  Rng rng(91);
  Matrix<double> a(37, 53), b(53, 41);
  for (double& v : a.data) v = rng.uniform(-1, 1);
  for (double& v : b.data) v = rng.uniform(-1, 1);
  Matrix<double> r1 = matmul(a, b);
  Matrix<double> r2 = matmul(a, b);
  CHECK(r1.data == r2.data);
  const double before = a.data[0];
  const Matrix<double> r3 = matmul(a, b);
  CHECK(a.data[0] == before);
  CHECK(max_rel_diff(r1.data, r3.data) == 0.0);
}
