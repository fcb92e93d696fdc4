#include "vcnn/selftest.hpp"

#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "vcnn/bench.hpp"
#include "vcnn/io.hpp"
#include "vcnn/training.hpp"

namespace vcnn {

namespace {

struct Check {
  std::string name;
  std::function<void()> fn;
};

void expect(bool ok, const std::string& what) {
  if (!ok) throw std::runtime_error(what);
}

void expect_near(double a, double b, double tol, const std::string& what) {
  if (!(std::fabs(a - b) <= tol))
    throw std::runtime_error(what + ": " + std::to_string(a) + " vs " + std::to_string(b));
}

Tensor<double> random_tensor(Shape s, Rng& rng) {
  Tensor<double> t(s);
  for (double& v : t.data) v = rng.uniform(-1, 1);
  return t;
}

NetworkSpec tiny_spec(uint64_t seed) {
  NetworkSpec spec;
  spec.input = Shape{6, 6, 2};
  spec.seed = seed;
  spec.loss = LossKind::softmax_ce;
  spec.layers = {ConvSpec{3, 3, 3, 1, Activation::tanh},
                 PoolSpec{2, 2, 2, PoolMode::max, false, Activation::identity},
                 FullSpec{4, Activation::identity}};
  return spec;
}

void check_matmul() {
  Matrix<double> a(2, 2, {1, 2, 3, 4});
  Matrix<double> b(2, 1, {5, 6});
  Matrix<double> c = matmul(a, b);
  expect(c.data[0] == 17 && c.data[1] == 39, "matmul hand example");
}

void check_im2col() {
  Tensor<double> f(Shape{3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  PatchMatrix<double> p = im2col(f, 2, 2, 1);
  const std::vector<double> want = {1, 2, 4, 5, 2, 3, 5, 6, 4, 5, 7, 8, 5, 6, 8, 9};
  for (int col = 0; col < 4; ++col)
    for (int row = 0; row < 4; ++row)
      expect(p.mat(row, col) == want[col * 4 + row], "im2col hand example");
}

void check_adjoint() {
  Rng rng(404);
  for (int it = 0; it < 20; ++it) {
    const int h = 3 + rng.uniform_int(6), w = 3 + rng.uniform_int(6);
    const int c = 1 + rng.uniform_int(3), b = 1 + rng.uniform_int(2);
    const int kh = 1 + rng.uniform_int(std::min(3, h)), kw = 1 + rng.uniform_int(std::min(3, w));
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
    expect_near(lhs, rhs, 1e-10 * std::max(1.0, std::fabs(lhs)), "adjoint identity");
  }
}

void check_pooling() {
  Tensor<double> f(Shape{4, 4},
                   {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16});
  PoolGeometry gmax(f.shape, 2, 2, 2, PoolMode::max);
  auto [mx, arg] = pool_forward(f, gmax);
  expect(mx.data == std::vector<double>({6, 8, 14, 16}), "max pool hand example");
  PoolGeometry gavg(f.shape, 2, 2, 2, PoolMode::avg);
  auto [av, arg2] = pool_forward(f, gavg);
  expect(av.data == std::vector<double>({3.5, 5.5, 11.5, 13.5}), "avg pool hand example");
  PoolGeometry gov(Shape{3, 3}, 2, 2, 1, PoolMode::max);
  expect(build_pool_map(gov).pairs() == 16, "overlapping pool pair count");
}

void check_gradient() {
  NetworkSpec spec = tiny_spec(5);
  Network<double> net = build_network<double>(spec);
  Executor<double> exec(Variant::imp6);
  Rng rng(6);
  Tensor<double> x(Shape::hwcn(6, 6, 2, 2));
  for (double& v : x.data) v = rng.uniform(0.05, 0.95);
  Targets<double> t = Targets<double>::from_classes({1, 3});
  RunResult<double> res = exec.run_batch(net, x, &t);
  auto& conv = std::get<ConvLayer<double>>(net.layers[0]);
  const double h = 1e-5;
  for (int k : {0, 7, 20}) {
    const double keep = conv.weights.data[k];
    conv.weights.data[k] = keep + h;
    const double lp = loss_forward(spec.loss, exec.forward(net, x), t);
    conv.weights.data[k] = keep - h;
    const double lm = loss_forward(spec.loss, exec.forward(net, x), t);
    conv.weights.data[k] = keep;
    const double num = (lp - lm) / (2 * h);
    const double ana = res.grads.layers[0].weights.data[k];
    expect(std::fabs(num - ana) <= 1e-4 * std::max({1.0, std::fabs(num), std::fabs(ana)}),
           "finite-difference probe");
  }
}

void check_variants() {
  NetworkSpec spec = tiny_spec(7);
  Network<double> net = build_network<double>(spec);
  Rng rng(8);
  Tensor<double> x(Shape::hwcn(6, 6, 2, 3));
  for (double& v : x.data) v = rng.uniform(-1, 1);
  Targets<double> t = Targets<double>::from_classes({0, 2, 1});
  Executor<double> ref(Variant::imp1);
  RunResult<double> r1 = ref.run_batch(net, x, &t);
  for (Variant v : all_variants()) {
    Executor<double> exec(v);
    RunResult<double> r = exec.run_batch(net, x, &t);
    for (int64_t i = 0; i < r.output.size(); ++i)
      expect(std::fabs(r.output.data[i] - r1.output.data[i]) <= 1e-10,
             std::string("cross-variant output: ") + variant_name(v));
    for (size_t li = 0; li < r.grads.layers.size(); ++li)
      for (size_t k = 0; k < r.grads.layers[li].weights.data.size(); ++k) {
        const double a = r.grads.layers[li].weights.data[k];
        const double b = r1.grads.layers[li].weights.data[k];
        expect(std::fabs(a - b) <= 1e-8 * std::max({1.0, std::fabs(a), std::fabs(b)}),
               std::string("cross-variant grads: ") + variant_name(v));
      }
  }
}

void check_batch_equivalence() {
  NetworkSpec spec = tiny_spec(9);
  Network<double> net = build_network<double>(spec);
  Executor<double> exec(Variant::imp6);
  Rng rng(10);
  for (int it = 0; it < 5; ++it) {
    const int b = 2 + rng.uniform_int(3);
    std::vector<Tensor<double>> samples;
    for (int i = 0; i < b; ++i)
      samples.push_back(random_tensor(Shape::hwcn(6, 6, 2, 1), rng));
    Tensor<double> batch = assemble_batch(samples);
    Tensor<double> batched = exec.forward(net, batch);
    for (int i = 0; i < b; ++i) {
      Tensor<double> single = exec.forward(net, samples[i]);
      const int64_t per = single.size();
      for (int64_t k = 0; k < per; ++k)
        expect(std::fabs(batched.data[i * per + k] - single.data[k]) <= 1e-10,
               "batch equivalence");
    }
  }
}

void check_persistence() {
  NetworkSpec spec = tiny_spec(11);
  Network<double> net = build_network<double>(spec);
  const std::string path = "/tmp/vcnn_selftest_model.vcnn";
  save_model(path, model_from_network(net));
  Network<double> back = network_from_model<double>(load_model(path));
  const auto& a = std::get<ConvLayer<double>>(net.layers[0]).weights.data;
  const auto& b = std::get<ConvLayer<double>>(back.layers[0]).weights.data;
  expect(a == b, "model round trip");
  std::remove(path.c_str());

  Dataset<double> d = synth_digits<double>(8, 3, "selftest");
  const std::string ipath = "/tmp/vcnn_selftest.idx";
  save_idx_images(ipath, d.images);
  Dataset<double> loaded = load_idx<double>(ipath);
  expect(loaded.count() == 8, "idx round trip count");
  std::remove(ipath.c_str());

  Tensor<double> clean = synth_clean_images<double>(1, 16, 16, 21);
  Dataset<double> n1 = synth_denoise_pairs(clean, 0.1, 5);
  Dataset<double> n2 = synth_denoise_pairs(clean, 0.1, 5);
  expect(n1.images.data == n2.images.data, "seeded noise determinism");
}

}  // namespace

int run_selftest(std::ostream& os) {
  const std::vector<Check> checks = {
      {"matmul hand values", check_matmul},
      {"im2col unroll", check_im2col},
      {"im2col/col2im adjoint identity", check_adjoint},
      {"pooling forward + overlap map", check_pooling},
      {"finite-difference gradient probe", check_gradient},
      {"cross-variant agreement", check_variants},
      {"batch assembly equivalence", check_batch_equivalence},
      {"persistence round trips", check_persistence},
  };
  int failures = 0;
  for (const Check& c : checks) {
    try {
      c.fn();
      os << "[ ok ] " << c.name << "\n";
    } catch (const std::exception& e) {
      os << "[fail] " << c.name << ": " << e.what() << "\n";
      ++failures;
    }
  }
  os << (failures == 0 ? "selftest passed" : "selftest FAILED") << "\n";
  return failures == 0 ? 0 : 2;
}

}  // namespace vcnn
