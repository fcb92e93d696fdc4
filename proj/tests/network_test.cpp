#include <doctest.h>

#include "helpers.hpp"
#include "vcnn/training.hpp"

using namespace vcnn;
using namespace vcnn::test;

namespace {

NetworkSpec toy_spec(uint64_t seed) {
  NetworkSpec spec;
  spec.input = Shape{4, 4, 1};
  spec.seed = seed;
  spec.loss = LossKind::softmax_ce;
  spec.layers = {ConvSpec{2, 2, 2, 1, Activation::tanh},
                 PoolSpec{2, 2, 2, PoolMode::avg, false, Activation::identity},
                 FullSpec{2, Activation::identity}};
  return spec;
}

// 10 linearly separable samples: class by which half of the image is bright
Tensor<double> separable_images() {
  Tensor<double> t(Shape::hwcn(4, 4, 1, 10));
  Rng rng(55);
  for (int b = 0; b < 10; ++b) {
    const bool left = b % 2 == 0;
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) {
        const double base = (left ? (x < 2) : (x >= 2)) ? 0.9 : 0.1;
        t.at(y, x, 0, b) = base + rng.uniform(-0.05, 0.05);
      }
  }
  return t;
}

}  // namespace

TEST_CASE("spec chain validation") {
  NetworkSpec spec = toy_spec(1);
  auto shapes = spec.chain();
  REQUIRE(shapes.size() == 3);
  CHECK(shapes[0] == Shape::hwcn(3, 3, 2, 1));
  CHECK(shapes[1] == Shape::hwcn(1, 1, 2, 1));
  CHECK(shapes[2] == Shape::hwcn(1, 1, 2, 1));

  NetworkSpec bad = spec;
  bad.layers.insert(bad.layers.begin() + 1, ConvSpec{1, 5, 5, 1, Activation::relu});
  CHECK_THROWS_AS(bad.chain(), ShapeError);  // 5x5 kernel on a 3x3 map
}

TEST_CASE("build is deterministic given the seed") {
  Network<double> a = build_network<double>(toy_spec(7));
  Network<double> b = build_network<double>(toy_spec(7));
  Network<double> c = build_network<double>(toy_spec(8));
  const auto& wa = std::get<ConvLayer<double>>(a.layers[0]).weights.data;
  const auto& wb = std::get<ConvLayer<double>>(b.layers[0]).weights.data;
  const auto& wc = std::get<ConvLayer<double>>(c.layers[0]).weights.data;
  CHECK(wa == wb);
  CHECK(wa != wc);
}

TEST_CASE("assemble_batch") {
  Rng rng(56);
  SUBCASE("im2col of the batch is the horizontal concatenation") {
    std::vector<Tensor<double>> samples = {random_tensor(Shape::hwcn(3, 3, 1, 1), rng),
                                           random_tensor(Shape::hwcn(3, 3, 1, 1), rng)};
    Tensor<double> batch = assemble_batch(samples);
    PatchMatrix<double> pb = im2col(batch, 2, 2, 1);
    PatchMatrix<double> p0 = im2col(samples[0], 2, 2, 1);
    PatchMatrix<double> p1 = im2col(samples[1], 2, 2, 1);
    REQUIRE(pb.mat.rows == 4);
    REQUIRE(pb.mat.cols == 8);
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 8; ++c)
        CHECK(pb.mat(r, c) == (c < 4 ? p0.mat(r, c) : p1.mat(r, c - 4)));
  }
  SUBCASE("single sample batch is the sample") {
    Tensor<double> s = random_tensor(Shape::hwcn(3, 3, 2, 1), rng);
    Tensor<double> batch = assemble_batch(std::vector<Tensor<double>>{s});
    CHECK(batch.data == s.data);
  }
  SUBCASE("identical samples give identical column blocks") {
    Tensor<double> s = random_tensor(Shape::hwcn(3, 3, 1, 1), rng);
    Tensor<double> batch = assemble_batch(std::vector<Tensor<double>>{s, s, s});
    PatchMatrix<double> p = im2col(batch, 2, 2, 1);
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) {
        CHECK(p.mat(r, c) == p.mat(r, c + 4));
        CHECK(p.mat(r, c) == p.mat(r, c + 8));
      }
  }
  SUBCASE("heterogeneous shapes are rejected") {
    std::vector<Tensor<double>> bad = {Tensor<double>(Shape{3, 3}), Tensor<double>(Shape{4, 3})};
    CHECK_THROWS_AS(assemble_batch(bad), ShapeError);
  }
}

TEST_CASE("batch equivalence: batched forward equals per-sample forwards") {
  Rng rng(57);
  int done = 0;
  for (uint64_t seed = 500; done < 100; ++seed) {
    REQUIRE(seed < 700);
    Rng nrng(seed);
    RandomNet rn = random_net_spec(nrng);
    if (rn.batch < 2) rn.batch = 2;
    Network<double> net = build_network<double>(rn.spec);
    Executor<double> exec(Variant::imp6);
    std::vector<Tensor<double>> samples;
    for (int i = 0; i < rn.batch; ++i)
      samples.push_back(random_tensor(
          Shape::hwcn(rn.spec.input.h(), rn.spec.input.w(), rn.spec.input.c(), 1), rng));
    Tensor<double> batched = exec.forward(net, assemble_batch(samples));
    const int64_t per = batched.size() / rn.batch;
    for (int i = 0; i < rn.batch; ++i) {
      Tensor<double> single = exec.forward(net, samples[i]);
      for (int64_t k = 0; k < per; ++k)
        CHECK(std::fabs(batched.data[i * per + k] - single.data[k]) <= 1e-10);
    }
    ++done;
  }
}

TEST_CASE("batch equivalence: gradients sum over per-sample runs") {
  Rng rng(58);
  for (uint64_t seed = 800; seed < 808; ++seed) {
    Rng nrng(seed);
    RandomNet rn = random_net_spec(nrng);
    if (rn.batch < 2) rn.batch = 2;
    Network<double> net = build_network<double>(rn.spec);
    Executor<double> exec(Variant::imp6);
    Tensor<double> batch = random_tensor(
        Shape::hwcn(rn.spec.input.h(), rn.spec.input.w(), rn.spec.input.c(), rn.batch), rng);
    Targets<double> t = random_targets(rn.spec, rn.batch, rng);
    RunResult<double> whole = exec.run_batch(net, batch, &t);

    NetGrads<double> acc = NetGrads<double>::zeros_like(net);
    double loss_sum = 0;
    for (int s = 0; s < rn.batch; ++s) {
      Tensor<double> sample = slice_sample(batch, s);
      Targets<double> st;
      if (!t.classes.empty())
        st.classes.push_back(t.classes[s]);
      else
        st.values = slice_sample(t.values, s);
      RunResult<double> r = exec.run_batch(net, sample, &st);
      loss_sum += r.loss;
      acc.add(r.grads);
    }
    const double inv = 1.0 / rn.batch;
    CHECK(std::fabs(whole.loss - loss_sum * inv) < 1e-10);
    for (size_t li = 0; li < acc.layers.size(); ++li) {
      for (size_t k = 0; k < acc.layers[li].weights.data.size(); ++k)
        CHECK(std::fabs(whole.grads.layers[li].weights.data[k] -
                        acc.layers[li].weights.data[k] * inv) <= 1e-10);
      for (size_t k = 0; k < acc.layers[li].bias.size(); ++k)
        CHECK(std::fabs(whole.grads.layers[li].bias[k] - acc.layers[li].bias[k] * inv) <= 1e-10);
    }
  }
}

TEST_CASE("sgd step") {
  SUBCASE("single parameter moves by lr * grad") {
    NetworkSpec spec;
    spec.input = Shape{1, 1, 1};
    spec.loss = LossKind::mse;
    spec.layers = {FullSpec{1, Activation::identity}};
    Network<double> net = build_network<double>(spec);
    auto& fl = std::get<FullLayer<double>>(net.layers[0]);
    fl.weights.data[0] = 1.0;
    NetGrads<double> g = NetGrads<double>::zeros_like(net);
    g.layers[0].weights.data[0] = 2.0;
    TrainConfig cfg;
    cfg.lr = 0.1;
    Velocity<double> vel;
    sgd_step(net, g, cfg, vel);
    CHECK(fl.weights.data[0] == doctest::Approx(0.8));
  }
  SUBCASE("momentum accumulates") {
    NetworkSpec spec;
    spec.input = Shape{1, 1, 1};
    spec.loss = LossKind::mse;
    spec.layers = {FullSpec{1, Activation::identity}};
    Network<double> net = build_network<double>(spec);
    auto& fl = std::get<FullLayer<double>>(net.layers[0]);
    fl.weights.data[0] = 0.0;
    NetGrads<double> g = NetGrads<double>::zeros_like(net);
    g.layers[0].weights.data[0] = 1.0;
    TrainConfig cfg;
    cfg.lr = 0.1;
    cfg.momentum = 0.5;
    Velocity<double> vel;
    sgd_step(net, g, cfg, vel);  // v=1,   w=-0.1
    sgd_step(net, g, cfg, vel);  // v=1.5, w=-0.25
    CHECK(fl.weights.data[0] == doctest::Approx(-0.25));
  }
  SUBCASE("config validation") {
    TrainConfig bad;
    bad.lr = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = TrainConfig{};
    bad.momentum = 1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }
}

TEST_CASE("whole-network finite differences on the tiny net") {
  // 4x4 input, conv + pool + full, cross-entropy head
  Network<double> net = build_network<double>(toy_spec(3));
  Rng rng(59);
  Tensor<double> x = random_tensor(Shape::hwcn(4, 4, 1, 2), rng, 0.05, 0.95);
  REQUIRE(fd_safe(net, x));
  Targets<double> t = Targets<double>::from_classes({0, 1});
  FdReport rep = fd_check(net, x, t);
  CHECK(rep.checked > 0);
  CHECK(rep.max_rel < 1e-4);
}

TEST_CASE("training is bitwise reproducible given seed and config") {
  TrainConfig cfg;
  cfg.lr = 0.05;
  cfg.momentum = 0.9;
  cfg.batch = 4;
  cfg.epochs = 3;
  cfg.seed = 17;
  Tensor<double> images = separable_images();
  std::vector<int> labels(10);
  for (int i = 0; i < 10; ++i) labels[i] = i % 2;

  auto run = [&]() {
    Network<double> net = build_network<double>(toy_spec(9));
    Trainer<double> tr(cfg);
    tr.fit(net, images, Targets<double>::from_classes(labels));
    return net;
  };
  Network<double> a = run();
  Network<double> b = run();
  for (size_t li = 0; li < a.layers.size(); ++li) {
    if (auto* cl = std::get_if<ConvLayer<double>>(&a.layers[li]))
      CHECK(cl->weights.data == std::get<ConvLayer<double>>(b.layers[li]).weights.data);
    if (auto* fl = std::get_if<FullLayer<double>>(&a.layers[li]))
      CHECK(fl->weights.data == std::get<FullLayer<double>>(b.layers[li]).weights.data);
  }
}

TEST_CASE("loss is non-increasing per epoch on the separable toy set") {
  TrainConfig cfg;
  cfg.lr = 0.01;
  cfg.batch = 10;  // full batch so every epoch takes the same averaged step
  cfg.epochs = 8;
  cfg.seed = 4;
  Tensor<double> images = separable_images();
  std::vector<int> labels(10);
  for (int i = 0; i < 10; ++i) labels[i] = i % 2;
  Network<double> net = build_network<double>(toy_spec(12));
  Trainer<double> tr(cfg);
  TrainStats<double> stats = tr.fit(net, images, Targets<double>::from_classes(labels));
  REQUIRE(stats.epoch_loss.size() == 8);
  for (size_t e = 1; e < stats.epoch_loss.size(); ++e)
    CHECK(stats.epoch_loss[e] <= stats.epoch_loss[e - 1] + 1e-12);
  // two epochs drive the loss strictly down
  CHECK(stats.epoch_loss[1] < stats.epoch_loss[0]);
}

TEST_CASE("predict") {
  SUBCASE("argmax and tie-break") {
    Tensor<double> out(Shape::hwcn(1, 1, 3, 2), {0.1, 2.0, -1.0, 0.7, 0.3, 0.7});
    std::vector<int> cls = predict_classes(out);
    CHECK(cls == std::vector<int>({1, 0}));  // second sample ties 0 vs 2, lowest wins
  }
  SUBCASE("batch predictions preserve order") {
    Rng rng(61);
    Network<double> net = build_network<double>(toy_spec(13));
    Executor<double> exec(Variant::imp6);
    std::vector<Tensor<double>> samples;
    for (int i = 0; i < 5; ++i)
      samples.push_back(random_tensor(Shape::hwcn(4, 4, 1, 1), rng));
    std::vector<int> batched = predict_classes(exec.forward(net, assemble_batch(samples)));
    for (int i = 0; i < 5; ++i) {
      std::vector<int> single = predict_classes(exec.forward(net, samples[i]));
      CHECK(single[0] == batched[i]);
    }
  }
}

TEST_CASE("non-finite loss raises a training error naming a layer") {
  NetworkSpec spec = toy_spec(14);
  std::get<ConvSpec>(spec.layers[0]).act = Activation::identity;
  Network<double> net = build_network<double>(spec);
  // alternate huge signed weights: the conv map overflows to +/-inf and the
  // averaging pool mixes them into nan
  auto& cl = std::get<ConvLayer<double>>(net.layers[0]);
  for (size_t i = 0; i < cl.weights.data.size(); ++i)
    cl.weights.data[i] = (i % 2 ? 1.0 : -1.0) * 1e308;
  Tensor<double> images = separable_images();
  std::vector<int> labels(10, 0);
  TrainConfig cfg;
  cfg.batch = 10;
  Trainer<double> tr(cfg);
  try {
    tr.fit(net, images, Targets<double>::from_classes(labels));
    FAIL("expected a TrainingError");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("layer") != std::string::npos);
  }
}
