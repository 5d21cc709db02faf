#include <doctest.h>

#include "dras/nn/network.hpp"
#include "oracles.hpp"

using namespace dras;
using namespace dras::nn;

namespace {

// Scalar probe L = Σ probe ⊙ f(x); its gradient w.r.t. f(x) is `probe`.
double probe_loss(const Tensor<double>& y, const Matrix<double>& probe) { return (y.data.array() * probe.array()).sum(); }

void check_layer_gradients(Layer<double>& layer, Tensor<double> x, Rng& rng) {
  const Tensor<double> y = layer.forward(x);
  const Matrix<double> probe = oracle::random_matrix(y.data.rows(), y.data.cols(), rng);
  Tensor<double> dy = y;
  dy.data = probe;
  std::vector<Matrix<double>> grads;
  for (const auto& p : layer.params()) grads.push_back(Matrix<double>::Zero(p.rows(), p.cols()));
  const Tensor<double> dx = layer.backward(x, y, dy, &grads, true);

  auto f = [&] { return probe_loss(layer.forward(x), probe); };
  const auto num_dx = oracle::central_difference(x.data.data(), static_cast<std::size_t>(x.data.size()), f);
  CHECK(oracle::rel_error(oracle::flatten(dx.data), num_dx) < 1e-6);
  for (std::size_t k = 0; k < layer.params().size(); ++k) {
    auto& p = layer.params()[k];
    const auto num = oracle::central_difference(p.data(), static_cast<std::size_t>(p.size()), f);
    CHECK(oracle::rel_error(oracle::flatten(grads[k]), num) < 1e-6);
  }
}

}  // namespace

TEST_SUITE("nn") {
  TEST_CASE("conv forward matches direct cross-correlation") {
    Rng rng(1);
    for (auto [k, s, p] : {std::tuple{4, 2, 1}, std::tuple{5, 2, 2}, std::tuple{3, 1, 1}, std::tuple{5, 1, 2}}) {
      Conv2d<double> conv(3, 4, k, s, p, rng);
      const auto x = oracle::random_tensor(2, 3, 9, 8, rng);
      const auto y = conv.forward(x);
      const auto ref = oracle::naive_conv(x, conv.params()[0], conv.params()[1], k, s, p);
      REQUIRE(y.same_shape(ref));
      CHECK(oracle::rel_error(oracle::flatten(y.data), oracle::flatten(ref.data)) < 1e-12);
    }
  }

  TEST_CASE("transposed conv forward matches scatter definition") {
    Rng rng(2);
    for (auto [k, s, p, op] : {std::tuple{4, 2, 1, 0}, std::tuple{5, 2, 2, 1}, std::tuple{5, 1, 2, 0}}) {
      ConvTranspose2d<double> deconv(3, 2, k, s, p, op, rng);
      const auto x = oracle::random_tensor(2, 3, 4, 5, rng);
      const auto y = deconv.forward(x);
      const auto ref = oracle::naive_deconv(x, deconv.params()[0], deconv.params()[1], 2, k, s, p, op);
      REQUIRE(y.same_shape(ref));
      CHECK(oracle::rel_error(oracle::flatten(y.data), oracle::flatten(ref.data)) < 1e-12);
    }
  }

  TEST_CASE("stride-2 geometry doubles and halves spatial size") {
    Rng rng(3);
    Conv2d<double> conv(3, 2, 4, 2, 1, rng);
    ConvTranspose2d<double> deconv(2, 3, 4, 2, 1, 0, rng);
    ConvTranspose2d<double> deconv5(2, 3, 5, 2, 2, 1, rng);
    const auto x = oracle::random_tensor(1, 3, 16, 16, rng);
    const auto y = conv.forward(x);
    CHECK(y.h == 8);
    CHECK(deconv.forward(y).h == 16);
    CHECK(deconv5.forward(y).h == 16);
  }

  TEST_CASE("layer gradients match central differences") {
    Rng rng(4);
    SUBCASE("conv") {
      Conv2d<double> l(2, 3, 4, 2, 1, rng);
      check_layer_gradients(l, oracle::random_tensor(2, 2, 6, 6, rng), rng);
    }
    SUBCASE("conv k5") {
      Conv2d<double> l(2, 2, 5, 2, 2, rng);
      check_layer_gradients(l, oracle::random_tensor(1, 2, 7, 7, rng), rng);
    }
    SUBCASE("deconv") {
      ConvTranspose2d<double> l(3, 2, 4, 2, 1, 0, rng);
      check_layer_gradients(l, oracle::random_tensor(2, 3, 3, 3, rng), rng);
    }
    SUBCASE("deconv with output padding") {
      ConvTranspose2d<double> l(2, 2, 5, 2, 2, 1, rng);
      check_layer_gradients(l, oracle::random_tensor(1, 2, 3, 4, rng), rng);
    }
    SUBCASE("linear") {
      Linear<double> l(7, 4, rng);
      check_layer_gradients(l, Tensor<double>::features(oracle::random_matrix(7, 3, rng)), rng);
    }
    SUBCASE("activations") {
      for (auto a : {Activation::LeakyRelu, Activation::Tanh, Activation::Sigmoid, Activation::Relu}) {
        Pointwise<double> l(a);
        check_layer_gradients(l, oracle::random_tensor(2, 3, 2, 2, rng), rng);
      }
    }
    SUBCASE("max pool") {
      MaxPool2<double> l;
      check_layer_gradients(l, oracle::random_tensor(2, 2, 4, 6, rng), rng);
    }
    SUBCASE("flatten and unflatten") {
      Flatten<double> f;
      check_layer_gradients(f, oracle::random_tensor(2, 3, 2, 2, rng), rng);
      Unflatten<double> u(3, 2, 2);
      check_layer_gradients(u, Tensor<double>::features(oracle::random_matrix(12, 2, rng)), rng);
    }
  }

  TEST_CASE("flatten then unflatten is the identity") {
    Rng rng(5);
    const auto x = oracle::random_tensor(3, 4, 2, 5, rng);
    const auto y = Unflatten<double>(4, 2, 5).forward(Flatten<double>().forward(x));
    CHECK(y.same_shape(x));
    CHECK(y.data == x.data);
  }

  TEST_CASE("network backward matches central differences end to end") {
    Rng rng(6);
    Network<double> net;
    net.emplace<Conv2d<double>>(2, 3, 4, 2, 1, rng);
    net.emplace<Pointwise<double>>(Activation::LeakyRelu);
    net.emplace<Flatten<double>>();
    net.emplace<Linear<double>>(3 * 4 * 4, 5, rng);
    net.emplace<Pointwise<double>>(Activation::Tanh);
    auto x = oracle::random_tensor(2, 2, 8, 8, rng);
    Network<double>::Trace t;
    const auto y = net.forward(x, t);
    const Matrix<double> probe = oracle::random_matrix(y.data.rows(), y.data.cols(), rng);
    auto grads = net.zero_grads();
    const auto dx = net.backward(t, Tensor<double>::features(probe), &grads, true);
    auto f = [&] { return probe_loss(net.forward(x), probe); };
    CHECK(oracle::rel_error(oracle::flatten(dx.data),
                            oracle::central_difference(x.data.data(), static_cast<std::size_t>(x.size()), f)) < 1e-6);
    auto& w = net.layer(3).params()[0];
    CHECK(oracle::rel_error(oracle::flatten(grads[3][0]),
                            oracle::central_difference(w.data(), static_cast<std::size_t>(w.size()), f)) < 1e-6);
  }

  TEST_CASE("frozen layers get no gradient buffers and are left untouched by Adam") {
    Rng rng(7);
    Network<float> net;
    net.emplace<Linear<float>>(4, 4, rng);
    net.emplace<Pointwise<float>>(Activation::Relu);
    net.emplace<Linear<float>>(4, 2, rng);
    net.freeze_below(2);
    auto grads = net.zero_grads();
    CHECK(grads[0].empty());
    CHECK(grads[2].size() == 2);
    const auto frozen = net.checksum(0, 2);
    const auto head = net.checksum(2);
    Adam<float> opt(net);
    Network<float>::Trace t;
    const Tensor<float> x = Tensor<float>::features(Matrix<float>::Random(4, 3));
    net.forward(x, t);
    net.backward(t, Tensor<float>::features(Matrix<float>::Ones(2, 3)), &grads, false);
    opt.step(net, grads, 1e-2);
    CHECK(net.checksum(0, 2) == frozen);
    CHECK(net.checksum(2) != head);
  }

  TEST_CASE("first Adam step moves each parameter by lr against the gradient sign") {
    Rng rng(8);
    Network<double> net;
    net.emplace<Linear<double>>(3, 2, rng);
    const Matrix<double> before = net.layer(0).params()[0];
    Gradients<double> g = net.zero_grads();
    g[0][0] << 1, -2, 3, -4, 5, -6;
    g[0][1] << 0.5, -0.5;
    Adam<double> opt(net, {0.5, 0.999, 1e-12});
    opt.step(net, g, 0.01);
    const Matrix<double> delta = net.layer(0).params()[0] - before;
    for (Index k = 0; k < delta.size(); ++k)
      CHECK(delta.data()[k] == doctest::Approx(-0.01 * (g[0][0].data()[k] > 0 ? 1 : -1)).epsilon(1e-6));
    CHECK(opt.steps() == 1);
  }

  TEST_CASE("bilinear resize keeps constants and its backward is the adjoint") {
    Rng rng(9);
    Tensor<double> c(1, 3, 6, 6);
    c.data.setConstant(0.25);
    const auto up = resize_bilinear(c, 11, 11);
    CHECK((up.data.array() - 0.25).abs().maxCoeff() < 1e-12);

    const auto x = oracle::random_tensor(2, 3, 6, 5, rng);
    const auto g = oracle::random_tensor(2, 3, 9, 11, rng);
    const double lhs = (resize_bilinear(x, 9, 11).data.array() * g.data.array()).sum();
    const double rhs = (x.data.array() * resize_bilinear_backward(g, 6, 5).data.array()).sum();
    CHECK(oracle::rel_error(lhs, rhs) < 1e-12);
  }

  TEST_CASE("rng streams are reproducible and below() stays in range") {
    Rng a(42), b(42);
    for (int k = 0; k < 100; ++k) CHECK(a.next() == b.next());
    Rng r(1);
    std::vector<int> counts(7, 0);
    for (int k = 0; k < 70000; ++k) ++counts[static_cast<std::size_t>(r.below(7))];
    for (int c : counts) CHECK(std::abs(c - 10000) < 5 * 95);  // σ ≈ 92.6
    auto p = Rng(3).permutation(50);
    std::sort(p.begin(), p.end());
    for (std::size_t k = 0; k < p.size(); ++k) CHECK(p[k] == k);
  }

  TEST_CASE("checksum changes with any parameter bit") {
    Rng rng(10);
    Network<float> net;
    net.emplace<Linear<float>>(3, 3, rng);
    const auto h = net.checksum();
    net.layer(0).params()[1](2, 0) = std::nextafter(net.layer(0).params()[1](2, 0), 10.0f);
    CHECK(net.checksum() != h);
  }
}
