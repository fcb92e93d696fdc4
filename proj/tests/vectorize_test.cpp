#include <doctest.h>

#include "helpers.hpp"
#include "vcnn/vectorize.hpp"

using namespace vcnn;
using namespace vcnn::test;

TEST_CASE("im2col unrolls sliding windows into columns") {
  Tensor<double> f(Shape{3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  PatchMatrix<double> p = im2col(f, 2, 2, 1);
  REQUIRE(p.mat.rows == 4);
  REQUIRE(p.mat.cols == 4);
  const double want[4][4] = {{1, 2, 4, 5}, {2, 3, 5, 6}, {4, 5, 7, 8}, {5, 6, 8, 9}};
  for (int col = 0; col < 4; ++col)
    for (int row = 0; row < 4; ++row) CHECK(p.mat(row, col) == want[col][row]);
}

TEST_CASE("im2col degenerate kernels") {
  Rng rng(3);
  Tensor<double> f = random_tensor(Shape::hwcn(4, 5, 1, 1), rng);
  SUBCASE("1x1 kernel gives one row in linear order") {
    PatchMatrix<double> p = im2col(f, 1, 1, 1);
    REQUIRE(p.mat.rows == 1);
    REQUIRE(p.mat.cols == 20);
    CHECK(p.mat.data == f.data);
  }
  SUBCASE("kernel = image gives a single flattened column") {
    PatchMatrix<double> p = im2col(f, 4, 5, 1);
    REQUIRE(p.mat.rows == 20);
    REQUIRE(p.mat.cols == 1);
    CHECK(p.mat.data == f.data);
  }
  SUBCASE("kernel larger than image is a geometry error") {
    CHECK_THROWS_AS(im2col(f, 5, 5, 1), GeometryError);
    CHECK_THROWS_AS(im2col(f, 2, 2, 0), GeometryError);
  }
}

TEST_CASE("col2im counts patch memberships") {
  ConvGeometry g(Shape{3, 3}, 2, 2, 1);
  Matrix<double> ones(4, 4);
  for (double& v : ones.data) v = 1;
  Tensor<double> t = col2im(ones, g, build_col2im_map(g));
  CHECK(t.data == std::vector<double>({1, 2, 1, 2, 4, 2, 1, 2, 1}));
}

TEST_CASE("col2im of im2col is identity for the bijective 1x1 case") {
  Rng rng(4);
  Tensor<double> f = random_tensor(Shape::hwcn(3, 4, 2, 2), rng);
  PatchMatrix<double> p = im2col(f, 1, 1, 1);
  Tensor<double> back = col2im(p);
  CHECK(back.shape == f.shape);
  CHECK(back.data == f.data);
}

TEST_CASE("col2im of a zero gradient is zero") {
  ConvGeometry g(Shape{4, 4, 2}, 2, 2, 1);
  Matrix<double> zero(g.patch_len(), g.cols());
  Tensor<double> t = col2im(zero, g, build_col2im_map(g));
  for (double v : t.data) CHECK(v == 0);
}

TEST_CASE("col2im rejects mismatched geometry") {
  ConvGeometry g(Shape{3, 3}, 2, 2, 1);
  Matrix<double> wrong(3, 4);
  CHECK_THROWS_AS(col2im(wrong, g, build_col2im_map(g)), GeometryError);
}

TEST_CASE("adjoint identity over random geometries") {
  Rng rng(42);
  int done = 0;
  while (done < 120) {
    const int h = 2 + rng.uniform_int(7), w = 2 + rng.uniform_int(7);
    const int c = 1 + rng.uniform_int(3), b = 1 + rng.uniform_int(3);
    const int kh = 1 + rng.uniform_int(h), kw = 1 + rng.uniform_int(w);
    const int s = 1 + rng.uniform_int(2);
    Tensor<double> f = random_tensor(Shape::hwcn(h, w, c, b), rng);
    ConvGeometry geom(f.shape, kh, kw, s);
    PatchMatrix<double> pf = im2col(f, kh, kw, s);
    Matrix<double> g(pf.mat.rows, pf.mat.cols);
    for (double& v : g.data) v = rng.uniform(-1, 1);
    double lhs = 0;
    for (size_t i = 0; i < g.data.size(); ++i) lhs += pf.mat.data[i] * g.data[i];
    Tensor<double> back = col2im(g, geom, build_col2im_map(geom));
    double rhs = 0;
    for (int64_t i = 0; i < f.size(); ++i) rhs += f.data[i] * back.data[i];
    CHECK(std::fabs(lhs - rhs) <= 1e-10 * std::max(1.0, std::fabs(lhs)));
    ++done;
  }
}

TEST_CASE("im2col is injective where every element is covered") {
  // divide out the membership counts to reconstruct the input
  Rng rng(43);
  for (int it = 0; it < 20; ++it) {
    const int h = 3 + rng.uniform_int(5), w = 3 + rng.uniform_int(5);
    const int c = 1 + rng.uniform_int(2);
    const int kh = 2 + rng.uniform_int(2), kw = 2 + rng.uniform_int(2);
    if (kh > h || kw > w) continue;
    const int s = 1;  // stride 1 covers everything
    Tensor<double> f = random_tensor(Shape::hwcn(h, w, c, 1), rng);
    ConvGeometry geom(f.shape, kh, kw, s);
    const IndexMap map = build_col2im_map(geom);
    PatchMatrix<double> pf = im2col(f, kh, kw, s);
    Matrix<double> ones(pf.mat.rows, pf.mat.cols);
    for (double& v : ones.data) v = 1;
    Tensor<double> counts = col2im(ones, geom, map);
    Tensor<double> sums = col2im(pf.mat, geom, map);
    for (int64_t i = 0; i < f.size(); ++i) {
      REQUIRE(counts.data[i] > 0);
      CHECK(sums.data[i] / counts.data[i] == doctest::Approx(f.data[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("pool map geometry") {
  SUBCASE("non-overlapping 4x4/2x2/s2") {
    PoolGeometry g(Shape{4, 4}, 2, 2, 2, PoolMode::max);
    IndexMap map = build_pool_map(g);
    CHECK(map.pairs() == 16);
    CHECK(map.target_len == 4);
    std::vector<int> per_target(4, 0);
    for (int64_t k = 0; k < map.pairs(); ++k) ++per_target[map.target[k]];
    for (int cnt : per_target) CHECK(cnt == 4);
    map.check_pairs_unique();
  }
  SUBCASE("1x1 window is the identity map") {
    PoolGeometry g(Shape{3, 3}, 1, 1, 1, PoolMode::max);
    IndexMap map = build_pool_map(g);
    CHECK(map.pairs() == 9);
    for (int64_t k = 0; k < map.pairs(); ++k) CHECK(map.source[k] == map.target[k]);
  }
  SUBCASE("overlapping windows duplicate the shared elements") {
    PoolGeometry g(Shape{3, 3}, 2, 2, 1, PoolMode::max);
    IndexMap map = build_pool_map(g);
    CHECK(map.pairs() == g.out_h * g.out_w * g.window_size());  // 16
    int center = 0;
    for (int64_t k = 0; k < map.pairs(); ++k)
      if (map.source[k] == 4) ++center;  // element (1,1) sits in all 4 windows
    CHECK(center == 4);
    map.check_pairs_unique();
  }
  SUBCASE("window exceeding input") {
    CHECK_THROWS_AS(PoolGeometry(Shape{2, 2}, 3, 3, 1, PoolMode::max), GeometryError);
  }
}

TEST_CASE("pool_forward examples") {
  Tensor<double> f(Shape{4, 4}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16});
  SUBCASE("max") {
    PoolGeometry g(f.shape, 2, 2, 2, PoolMode::max);
    auto [out, arg] = pool_forward(f, g);
    CHECK(out.data == std::vector<double>({6, 8, 14, 16}));
    CHECK(arg == ArgIndex({5, 7, 13, 15}));
  }
  SUBCASE("avg") {
    PoolGeometry g(f.shape, 2, 2, 2, PoolMode::avg);
    auto [out, arg] = pool_forward(f, g);
    CHECK(out.data == std::vector<double>({3.5, 5.5, 11.5, 13.5}));
    CHECK(arg.empty());
  }
  SUBCASE("1x1 window leaves the input unchanged") {
    PoolGeometry g(f.shape, 1, 1, 1, PoolMode::max);
    auto [out, arg] = pool_forward(f, g);
    CHECK(out.data == f.data);
  }
  SUBCASE("shape mismatch") {
    PoolGeometry g(Shape{6, 6}, 2, 2, 2, PoolMode::max);
    CHECK_THROWS_AS(pool_forward(f, g), GeometryError);
  }
}

TEST_CASE("pool matches brute force on random inputs") {
  Rng rng(44);
  for (int it = 0; it < 60; ++it) {
    const int h = 2 + rng.uniform_int(7), w = 2 + rng.uniform_int(7);
    const int c = 1 + rng.uniform_int(3), b = 1 + rng.uniform_int(3);
    int ph = 1 + rng.uniform_int(3), pw = 1 + rng.uniform_int(3);
    if (ph > h) ph = h;
    if (pw > w) pw = w;
    const int s = 1 + rng.uniform_int(2);
    const PoolMode mode = rng.uniform_int(2) ? PoolMode::max : PoolMode::avg;
    Tensor<double> f = random_tensor(Shape::hwcn(h, w, c, b), rng);
    PoolGeometry g(f.shape, ph, pw, s, mode);
    auto [out, arg] = pool_forward(f, g);
    Tensor<double> ref = brute_pool(f, ph, pw, s, mode);
    CHECK(max_abs_diff(out.data, ref.data) < 1e-12);
  }
}

TEST_CASE("max pool ties choose the lowest linear index") {
  Tensor<double> f(Shape{2, 2}, {7, 7, 7, 7});
  PoolGeometry g(f.shape, 2, 2, 1, PoolMode::max);
  auto [out, arg] = pool_forward(f, g);
  CHECK(out.data[0] == 7);
  CHECK(arg[0] == 0);
}

TEST_CASE("pool_backward examples") {
  SUBCASE("exact avg scatters grad/window uniformly") {
    PoolGeometry g(Shape{2, 2}, 2, 2, 1, PoolMode::avg);
    Tensor<double> grad(Shape{1, 1}, {4});
    Tensor<double> back = pool_backward(grad, g, {});
    CHECK(back.data == std::vector<double>({1, 1, 1, 1}));
  }
  SUBCASE("exact max routes to the recorded argmax") {
    PoolGeometry g(Shape{2, 2}, 2, 2, 1, PoolMode::max);
    Tensor<double> grad(Shape{1, 1}, {1});
    ArgIndex arg = {3};  // position (1,1)
    Tensor<double> back = pool_backward(grad, g, arg);
    CHECK(back.data == std::vector<double>({0, 0, 0, 1}));
  }
  SUBCASE("paper-nn upscales unscaled") {
    PoolGeometry g(Shape{2, 2}, 2, 2, 1, PoolMode::avg);
    Tensor<double> grad(Shape{1, 1}, {3.25});
    Tensor<double> back = pool_backward(grad, g, {}, PoolBackwardMode::paper_nn);
    CHECK(back.data == std::vector<double>({3.25, 3.25, 3.25, 3.25}));
  }
  SUBCASE("gradient extents must match") {
    PoolGeometry g(Shape{4, 4}, 2, 2, 2, PoolMode::avg);
    Tensor<double> grad(Shape{3, 3});
    CHECK_THROWS_AS(pool_backward(grad, g, {}), GeometryError);
  }
}

TEST_CASE("overlapping pool map pair count equals out*window") {
  Rng rng(45);
  for (int it = 0; it < 30; ++it) {
    const int h = 3 + rng.uniform_int(6), w = 3 + rng.uniform_int(6);
    int ph = 2 + rng.uniform_int(2), pw = 2 + rng.uniform_int(2);
    if (ph > h) ph = h;
    if (pw > w) pw = w;
    const int s = 1;  // overlapping
    PoolGeometry g(Shape::hwcn(h, w, 1, 1), ph, pw, s, PoolMode::max);
    CHECK(build_pool_map(g).pairs() ==
          static_cast<int64_t>(g.out_h) * g.out_w * g.ph * g.pw);
  }
}
