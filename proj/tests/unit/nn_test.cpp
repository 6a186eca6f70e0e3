#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "fracmil/nn.hpp"

namespace fracmil::nn {
namespace {

Tensor random_tensor(int c, int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, 1.0f);
  Tensor t(c, h, w);
  for (float& v : t.v) v = n(rng);
  return t;
}

// Scalar objective: weighted sum of the outputs with fixed weights.
double objective(const Network& net, const Tensor& x, const Tensor& wout) {
  const Tensor y = net.forward(x);
  double s = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) s += double(y.v[k]) * wout.v[k];
  return s;
}

void check_gradients(Network net, const Tensor& x) {
  Rng rng(7);
  net.init_he(rng);
  // Non-zero biases so every bias path is exercised.
  for (auto* p : net.parameters()) {
    if (p->size() <= 2) for (float& b : *p) b = 0.1f;
  }
  Trace trace;
  const Tensor y = net.forward(x, trace);
  const Tensor wout = random_tensor(y.c, y.h, y.w, 11);
  Gradients g = net.make_gradients();
  g.zero();
  const Tensor gx = net.backward(trace, wout, g, true);

  auto params = net.parameters();
  const double h = 1e-3;
  int checked = 0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t k = 0; k < params[p]->size(); k += 3) {
      float& w = (*params[p])[k];
      const float saved = w;
      w = saved + float(h);
      const double up = objective(net, x, wout);
      w = saved - float(h);
      const double dn = objective(net, x, wout);
      w = saved;
      const double fd = (up - dn) / (2 * h);
      EXPECT_NEAR(g.g[p][k], fd, 2e-2 * std::max(1.0, std::abs(fd))) << "param " << p << "[" << k << "]";
      ++checked;
    }
  }
  EXPECT_GT(checked, 0);
  Tensor xp = x;
  for (std::size_t k = 0; k < x.size(); k += 5) {
    xp.v[k] = x.v[k] + float(h);
    const double up = objective(net, xp, wout);
    xp.v[k] = x.v[k] - float(h);
    const double dn = objective(net, xp, wout);
    xp.v[k] = x.v[k];
    const double fd = (up - dn) / (2 * h);
    EXPECT_NEAR(gx.v[k], fd, 2e-2 * std::max(1.0, std::abs(fd))) << "input " << k;
  }
}

TEST(Network, ConvReluPoolGradientsMatchFiniteDifferences) {
  Network net;
  net.conv(2, 3, 3).relu().maxpool().conv(3, 2, 1);
  check_gradients(net, random_tensor(2, 6, 6, 1));
}

TEST(Network, GlobalAveragePoolGradients) {
  Network net;
  net.conv(1, 4, 3).relu().add(GlobalAvgPool{}).conv(4, 1, 1);
  check_gradients(net, random_tensor(1, 5, 7, 2));
}

TEST(Network, ChannelLseGradients) {
  Network net;
  net.conv(1, 3, 3).add(ChannelLse{4.0}).conv(3, 1, 1);
  check_gradients(net, random_tensor(1, 6, 5, 3));
}

TEST(Network, ShapesAndStride) {
  Network net;
  net.conv(1, 4, 3).relu().maxpool().conv(4, 4, 3).relu().maxpool();
  EXPECT_EQ(net.stride(), 4);
  const Tensor y = net.forward(Tensor(1, 17, 13));
  EXPECT_EQ(y.c, 4);
  EXPECT_EQ(y.h, 4);
  EXPECT_EQ(y.w, 3);
  EXPECT_EQ(net.parameter_count(), std::size_t(4 * 9 + 4 + 4 * 4 * 9 + 4));
}

TEST(Network, ForwardIsDeterministicAndSeeded) {
  Network a, b;
  a.conv(1, 4, 3).relu().conv(4, 1, 1);
  b = a;
  Rng ra(5), rb(5);
  a.init_he(ra);
  b.init_he(rb);
  EXPECT_EQ(a.parameters().size(), b.parameters().size());
  for (std::size_t p = 0; p < a.parameters().size(); ++p) {
    EXPECT_EQ(*a.parameters()[p], *b.parameters()[p]);
  }
  const Tensor x = random_tensor(1, 9, 9, 4);
  EXPECT_EQ(a.forward(x), a.forward(x));
  EXPECT_EQ(a.describe(), b.describe());
}

TEST(Adam, DescendsAQuadratic) {
  Network net;
  net.conv(1, 1, 1);
  net.zero_parameters();
  Adam opt(net);
  const Tensor x(1, 1, 1, 1.0f);
  // Minimize (y - 3)^2 with y = w * 1 + b.
  for (int step = 0; step < 500; ++step) {
    Trace tr;
    const Tensor y = net.forward(x, tr);
    Gradients g = net.make_gradients();
    g.zero();
    net.backward(tr, Tensor(1, 1, 1, 2.0f * (y.v[0] - 3.0f)), g);
    opt.step(net, g, 0.05);
  }
  EXPECT_NEAR(net.forward(x).v[0], 3.0f, 1e-2);
  EXPECT_EQ(opt.steps(), 500);
}

TEST(Sigmoid, StableAtExtremes) {
  EXPECT_EQ(sigmoid(0.0f), 0.5f);
  EXPECT_TRUE(std::isfinite(sigmoid(-1000.0f)));
  EXPECT_TRUE(std::isfinite(sigmoid(1000.0f)));
  EXPECT_NEAR(sigmoid(2.0f) + sigmoid(-2.0f), 1.0f, 1e-6);
}

}  // namespace
}  // namespace fracmil::nn
