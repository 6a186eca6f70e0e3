#include "fracmil/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <span>
#include <sstream>
#include <stdexcept>

#include "fracmil/core_types.hpp"
#include "fracmil/lse_pooling.hpp"

namespace fracmil::nn {
namespace {

using MatR = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

// col has shape (C*k*k) x (H*W).
void im2col(const Tensor& x, int k, FloatVec& col) {
  const int pad = k / 2;
  const std::size_t hw = static_cast<std::size_t>(x.h) * x.w;
  col.assign(static_cast<std::size_t>(x.c) * k * k * hw, 0.0f);
  for (int c = 0; c < x.c; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        float* row = col.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * hw;
        const int dx = kx - pad;
        const int xs = std::max(0, -dx), xe = std::min(x.w, x.w - dx);
        for (int y = 0; y < x.h; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= x.h) continue;
          const float* src = &x.v[(static_cast<std::size_t>(c) * x.h + sy) * x.w];
          float* dst = row + static_cast<std::size_t>(y) * x.w;
          for (int xx = xs; xx < xe; ++xx) dst[xx] = src[xx + dx];
        }
      }
    }
  }
}

void col2im(const FloatVec& col, int k, Tensor& dx) {
  const int pad = k / 2;
  const std::size_t hw = static_cast<std::size_t>(dx.h) * dx.w;
  for (int c = 0; c < dx.c; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const float* row = col.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * hw;
        const int ddx = kx - pad;
        const int xs = std::max(0, -ddx), xe = std::min(dx.w, dx.w - ddx);
        for (int y = 0; y < dx.h; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= dx.h) continue;
          float* dst = &dx.v[(static_cast<std::size_t>(c) * dx.h + sy) * dx.w];
          const float* src = row + static_cast<std::size_t>(y) * dx.w;
          for (int xx = xs; xx < xe; ++xx) dst[xx + ddx] += src[xx];
        }
      }
    }
  }
}

Tensor conv_forward(const Conv2d& layer, const Tensor& x, FloatVec* col_out) {
  if (x.c != layer.in) throw DomainError("Conv2d: channel mismatch");
  Tensor y(layer.out, x.h, x.w);
  const int hw = x.h * x.w;
  CMapR wmat(layer.weight.data(), layer.out, layer.in * layer.k * layer.k);
  MapR ymat(y.v.data(), layer.out, hw);
  if (layer.k == 1) {
    ymat.noalias() = wmat * CMapR(x.v.data(), x.c, hw);
  } else {
    FloatVec local;
    FloatVec& col = col_out ? *col_out : local;
    im2col(x, layer.k, col);
    ymat.noalias() = wmat * CMapR(col.data(), layer.in * layer.k * layer.k, hw);
  }
  for (int o = 0; o < layer.out; ++o) ymat.row(o).array() += layer.bias[o];
  return y;
}

Tensor maxpool_forward(const Tensor& x, FloatVec* argmax) {
  Tensor y(x.c, x.h / 2, x.w / 2);
  if (argmax) argmax->assign(y.size(), 0.0f);
  std::size_t o = 0;
  for (int c = 0; c < x.c; ++c) {
    for (int yy = 0; yy < y.h; ++yy) {
      for (int xx = 0; xx < y.w; ++xx, ++o) {
        int best = 0;
        float bv = x.at(c, 2 * yy, 2 * xx);
        for (int d = 1; d < 4; ++d) {
          const float v = x.at(c, 2 * yy + d / 2, 2 * xx + d % 2);
          if (v > bv) {
            bv = v;
            best = d;
          }
        }
        y.v[o] = bv;
        if (argmax) (*argmax)[o] = static_cast<float>(best);
      }
    }
  }
  return y;
}

Tensor channel_lse_forward(const ChannelLse& layer, const Tensor& x, FloatVec* weights) {
  Tensor y(x.c, 1, 1);
  const std::size_t hw = static_cast<std::size_t>(x.h) * x.w;
  if (weights) weights->assign(x.size(), 0.0f);
  std::vector<double> buf(hw);
  for (int c = 0; c < x.c; ++c) {
    for (std::size_t k = 0; k < hw; ++k) buf[k] = x.v[c * hw + k];
    auto res = lse_pool_values(buf, layer.r);
    y.v[c] = static_cast<float>(res.value);
    if (weights) {
      for (std::size_t k = 0; k < hw; ++k) (*weights)[c * hw + k] = static_cast<float>(res.weights[k]);
    }
  }
  return y;
}

Tensor layer_forward(const Layer& layer, const Tensor& x, FloatVec* aux) {
  return std::visit(
      Overloaded{
          [&](const Conv2d& l) { return conv_forward(l, x, aux); },
          [&](const Relu&) {
            Tensor y = x;
            for (float& v : y.v) v = v > 0.0f ? v : 0.0f;
            return y;
          },
          [&](const MaxPool2&) { return maxpool_forward(x, aux); },
          [&](const GlobalAvgPool&) {
            Tensor y(x.c, 1, 1);
            const std::size_t hw = static_cast<std::size_t>(x.h) * x.w;
            for (int c = 0; c < x.c; ++c) {
              double s = 0.0;
              for (std::size_t k = 0; k < hw; ++k) s += x.v[c * hw + k];
              y.v[c] = static_cast<float>(s / static_cast<double>(hw));
            }
            return y;
          },
          [&](const ChannelLse& l) { return channel_lse_forward(l, x, aux); },
      },
      layer);
}

}  // namespace

void Gradients::zero() {
  for (auto& b : g) std::fill(b.begin(), b.end(), 0.0f);
}

void Gradients::scale(float s) {
  for (auto& b : g) {
    for (float& v : b) v *= s;
  }
}

void Gradients::add(const Gradients& other) {
  for (std::size_t i = 0; i < g.size(); ++i) {
    for (std::size_t k = 0; k < g[i].size(); ++k) g[i][k] += other.g[i][k];
  }
}

Network& Network::add(Layer layer) {
  layers_.push_back(std::move(layer));
  return *this;
}

Network& Network::conv(int in, int out, int k) {
  if (in < 1 || out < 1 || k < 1 || k % 2 == 0) throw DomainError("conv: invalid shape");
  Conv2d c;
  c.in = in;
  c.out = out;
  c.k = k;
  c.weight.assign(static_cast<std::size_t>(out) * in * k * k, 0.0f);
  c.bias.assign(out, 0.0f);
  return add(std::move(c));
}

Tensor Network::forward(const Tensor& x) const {
  Tensor cur = x;
  for (const auto& l : layers_) cur = layer_forward(l, cur, nullptr);
  return cur;
}

Tensor Network::forward(const Tensor& x, Trace& trace) const {
  trace.inputs.resize(layers_.size());
  trace.aux.resize(layers_.size());
  Tensor cur = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    trace.inputs[i] = cur;
    cur = layer_forward(layers_[i], cur, &trace.aux[i]);
  }
  return cur;
}

Tensor Network::backward(const Trace& trace, const Tensor& grad_out, Gradients& grads,
                         bool need_input_grad) const {
  // Parameter index of the first tensor belonging to each layer.
  std::vector<std::size_t> pidx(layers_.size(), 0);
  std::size_t p = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    pidx[i] = p;
    if (std::holds_alternative<Conv2d>(layers_[i])) p += 2;
  }

  Tensor g = grad_out;
  for (std::size_t ri = layers_.size(); ri-- > 0;) {
    const Tensor& x = trace.inputs[ri];
    const auto& aux = trace.aux[ri];
    const bool want_dx = need_input_grad || ri > 0;
    Tensor dx;
    std::visit(
        Overloaded{
            [&](const Conv2d& l) {
              const int hw = x.h * x.w;
              const int ckk = l.in * l.k * l.k;
              CMapR dy(g.v.data(), l.out, hw);
              MapR dw(grads.g[pidx[ri]].data(), l.out, ckk);
              const float* colp = l.k == 1 ? x.v.data() : aux.data();
              CMapR col(colp, ckk, hw);
              dw.noalias() += dy * col.transpose();
              auto& db = grads.g[pidx[ri] + 1];
              for (int o = 0; o < l.out; ++o) db[o] += dy.row(o).sum();
              if (!want_dx) return;
              CMapR wmat(l.weight.data(), l.out, ckk);
              dx = Tensor(x.c, x.h, x.w);
              if (l.k == 1) {
                MapR(dx.v.data(), x.c, hw).noalias() = wmat.transpose() * dy;
              } else {
                FloatVec dcol(static_cast<std::size_t>(ckk) * hw);
                MapR(dcol.data(), ckk, hw).noalias() = wmat.transpose() * dy;
                col2im(dcol, l.k, dx);
              }
            },
            [&](const Relu&) {
              dx = g;
              for (std::size_t k = 0; k < dx.v.size(); ++k) {
                if (!(x.v[k] > 0.0f)) dx.v[k] = 0.0f;
              }
            },
            [&](const MaxPool2&) {
              dx = Tensor(x.c, x.h, x.w);
              std::size_t o = 0;
              for (int c = 0; c < g.c; ++c) {
                for (int yy = 0; yy < g.h; ++yy) {
                  for (int xx = 0; xx < g.w; ++xx, ++o) {
                    const int d = static_cast<int>(aux[o]);
                    dx.at(c, 2 * yy + d / 2, 2 * xx + d % 2) += g.v[o];
                  }
                }
              }
            },
            [&](const GlobalAvgPool&) {
              dx = Tensor(x.c, x.h, x.w);
              const std::size_t hw = static_cast<std::size_t>(x.h) * x.w;
              const float inv = 1.0f / static_cast<float>(hw);
              for (int c = 0; c < x.c; ++c) {
                for (std::size_t k = 0; k < hw; ++k) dx.v[c * hw + k] = g.v[c] * inv;
              }
            },
            [&](const ChannelLse&) {
              dx = Tensor(x.c, x.h, x.w);
              const std::size_t hw = static_cast<std::size_t>(x.h) * x.w;
              for (int c = 0; c < x.c; ++c) {
                for (std::size_t k = 0; k < hw; ++k) dx.v[c * hw + k] = g.v[c] * aux[c * hw + k];
              }
            },
        },
        layers_[ri]);
    if (!want_dx) return {};
    g = std::move(dx);
  }
  return g;
}

Gradients Network::make_gradients() const {
  Gradients grads;
  for (const auto* p : parameters()) grads.g.emplace_back(p->size(), 0.0f);
  return grads;
}

std::vector<FloatVec*> Network::parameters() {
  std::vector<FloatVec*> out;
  for (auto& l : layers_) {
    if (auto* c = std::get_if<Conv2d>(&l)) {
      out.push_back(&c->weight);
      out.push_back(&c->bias);
    }
  }
  return out;
}

std::vector<const FloatVec*> Network::parameters() const {
  std::vector<const FloatVec*> out;
  for (const auto& l : layers_) {
    if (const auto* c = std::get_if<Conv2d>(&l)) {
      out.push_back(&c->weight);
      out.push_back(&c->bias);
    }
  }
  return out;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->size();
  return n;
}

int Network::stride() const {
  int s = 1;
  for (const auto& l : layers_) {
    if (std::holds_alternative<MaxPool2>(l)) s *= 2;
  }
  return s;
}

void Network::init_he(Rng& rng) {
  for (auto& l : layers_) {
    if (auto* c = std::get_if<Conv2d>(&l)) {
      std::normal_distribution<float> dist(0.0f,
                                           std::sqrt(2.0f / static_cast<float>(c->in * c->k * c->k)));
      for (float& w : c->weight) w = dist(rng);
      std::fill(c->bias.begin(), c->bias.end(), 0.0f);
    }
  }
}

void Network::zero_parameters() {
  for (auto* p : parameters()) std::fill(p->begin(), p->end(), 0.0f);
}

std::string Network::describe() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (i) os << '|';
    std::visit(Overloaded{
                   [&](const Conv2d& c) { os << "conv" << c.k << 'x' << c.k << '(' << c.in << "->" << c.out << ')'; },
                   [&](const Relu&) { os << "relu"; },
                   [&](const MaxPool2&) { os << "maxpool2"; },
                   [&](const GlobalAvgPool&) { os << "gap"; },
                   [&](const ChannelLse& l) { os << "lse(r=" << l.r << ')'; },
               },
               layers_[i]);
  }
  return os.str();
}

Adam::Adam(const Network& net, AdamConfig cfg) : cfg_(cfg) {
  for (const auto* p : net.parameters()) {
    m_.emplace_back(p->size(), 0.0f);
    v_.emplace_back(p->size(), 0.0f);
  }
}

void Adam::step(Network& net, const Gradients& grads, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const float b1 = static_cast<float>(cfg_.beta1), b2 = static_cast<float>(cfg_.beta2);
  const float step = static_cast<float>(lr / bc1);
  const float inv_bc2 = static_cast<float>(1.0 / bc2);
  const float eps = static_cast<float>(cfg_.eps);
  auto params = net.parameters();
  if (params.size() != grads.g.size() || params.size() != m_.size()) {
    throw DomainError("Adam: parameter layout mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& w = *params[i];
    const auto& g = grads.g[i];
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = b1 * m[k] + (1.0f - b1) * g[k];
      v[k] = b2 * v[k] + (1.0f - b2) * g[k] * g[k];
      w[k] -= step * m[k] / (std::sqrt(v[k] * inv_bc2) + eps);
    }
  }
}

}  // namespace fracmil::nn
