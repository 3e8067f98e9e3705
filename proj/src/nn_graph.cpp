#include "laspet/nn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>

namespace laspet::nn {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double sigmoid_stable(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

int Graph::push(Tensor val, bool needs_grad) {
  Node n;
  n.val = std::move(val);
  n.needs_grad = needs_grad;
  if (needs_grad) n.grad.assign(static_cast<size_t>(n.val.numel()), 0.0);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

void Graph::set_back(int id, std::function<void(Graph&)> back) {
  auto& n = nodes_[static_cast<size_t>(id)];
  if (n.needs_grad) n.back = std::move(back);
}

int Graph::input(Tensor t, bool needs_grad) { return push(std::move(t), needs_grad); }

void Graph::backward(int loss) {
  if (loss < 0 || loss >= static_cast<int>(nodes_.size()))
    throw std::invalid_argument("backward: bad node id");
  if (nodes_[static_cast<size_t>(loss)].val.numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar");
  if (!nodes_[static_cast<size_t>(loss)].needs_grad)
    throw std::invalid_argument("backward: loss has no gradient inputs");
  g(loss)[0] = 1.0;
  for (int i = loss; i >= 0; --i) {
    auto& n = nodes_[static_cast<size_t>(i)];
    if (n.back) n.back(*this);
  }
}

int Graph::add(int a, int b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  if (ta.shape != tb.shape) throw std::invalid_argument("add: shape mismatch");
  Tensor out = ta;
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += tb.v[i];
  const int id = push(std::move(out), ng(a) || ng(b));
  set_back(id, [id, a, b](Graph& gr) {
    const auto& go = gr.g(id);
    if (gr.ng(a)) {
      auto& ga = gr.g(a);
      for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
    }
    if (gr.ng(b)) {
      auto& gb = gr.g(b);
      for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
    }
  });
  return id;
}

int Graph::scale(int x, double s) {
  Tensor out = val(x);
  for (double& e : out.v) e *= s;
  const int id = push(std::move(out), ng(x));
  set_back(id, [id, x, s](Graph& gr) {
    const auto& go = gr.g(id);
    auto& gx = gr.g(x);
    for (size_t i = 0; i < go.size(); ++i) gx[i] += s * go[i];
  });
  return id;
}

int Graph::mul(int a, int b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  if (ta.shape != tb.shape) throw std::invalid_argument("mul: shape mismatch");
  Tensor out = ta;
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] *= tb.v[i];
  const int id = push(std::move(out), ng(a) || ng(b));
  set_back(id, [id, a, b](Graph& gr) {
    const auto& go = gr.g(id);
    if (gr.ng(a)) {
      auto& ga = gr.g(a);
      const auto& vb = gr.cv(b);
      for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * vb[i];
    }
    if (gr.ng(b)) {
      auto& gb = gr.g(b);
      const auto& va = gr.cv(a);
      for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * va[i];
    }
  });
  return id;
}

int Graph::reshape(int x, std::vector<int> shape) {
  if (Tensor::numel_of(shape) != val(x).numel())
    throw std::invalid_argument("reshape: element count mismatch");
  Tensor out;
  out.shape = std::move(shape);
  out.v = val(x).v;
  const int id = push(std::move(out), ng(x));
  set_back(id, [id, x](Graph& gr) {
    const auto& go = gr.g(id);
    auto& gx = gr.g(x);
    for (size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
  });
  return id;
}

int Graph::concat0(int a, int b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  if (ta.shape.empty() || ta.shape.size() != tb.shape.size())
    throw std::invalid_argument("concat0: rank mismatch");
  for (size_t d = 1; d < ta.shape.size(); ++d)
    if (ta.shape[d] != tb.shape[d])
      throw std::invalid_argument("concat0: trailing shape mismatch");
  Tensor out;
  out.shape = ta.shape;
  out.shape[0] += tb.shape[0];
  out.v = ta.v;
  out.v.insert(out.v.end(), tb.v.begin(), tb.v.end());
  const int id = push(std::move(out), ng(a) || ng(b));
  const size_t na = ta.v.size();
  set_back(id, [id, a, b, na](Graph& gr) {
    const auto& go = gr.g(id);
    if (gr.ng(a)) {
      auto& ga = gr.g(a);
      for (size_t i = 0; i < na; ++i) ga[i] += go[i];
    }
    if (gr.ng(b)) {
      auto& gb = gr.g(b);
      for (size_t i = na; i < go.size(); ++i) gb[i - na] += go[i];
    }
  });
  return id;
}

int Graph::gather(int x, Indices idx, std::vector<int> out_shape) {
  const int64_t n = Tensor::numel_of(out_shape);
  if (static_cast<int64_t>(idx->size()) != n)
    throw std::invalid_argument("gather: index count must match output size");
  const int64_t src_n = val(x).numel();
  Tensor out(std::move(out_shape));
  const auto& xv = val(x).v;
  for (int64_t i = 0; i < n; ++i) {
    const int64_t j = (*idx)[static_cast<size_t>(i)];
    if (j < 0 || j >= src_n) throw std::invalid_argument("gather: index out of range");
    out.v[static_cast<size_t>(i)] = xv[static_cast<size_t>(j)];
  }
  const int id = push(std::move(out), ng(x));
  set_back(id, [id, x, idx](Graph& gr) {
    const auto& go = gr.g(id);
    auto& gx = gr.g(x);
    for (size_t i = 0; i < go.size(); ++i) gx[static_cast<size_t>((*idx)[i])] += go[i];
  });
  return id;
}

int Graph::upsample_nearest2(int x) {
  const auto& s = val(x).shape;
  if (s.size() != 4) throw std::invalid_argument("upsample_nearest2: expects [C,Z,Y,X]");
  const int C = s[0], Z = s[1], Y = s[2], X = s[3];
  Tensor out({C, 2 * Z, 2 * Y, 2 * X});
  const auto& xv = val(x).v;
  for (int c = 0; c < C; ++c)
    for (int z = 0; z < 2 * Z; ++z)
      for (int y = 0; y < 2 * Y; ++y) {
        const double* row = &xv[static_cast<size_t>(((c * Z + z / 2) * Y + y / 2)) * X];
        double* orow =
            &out.v[static_cast<size_t>(((c * 2 * Z + z) * 2 * Y + y)) * (2 * X)];
        for (int xx = 0; xx < 2 * X; ++xx) orow[xx] = row[xx / 2];
      }
  const int id = push(std::move(out), ng(x));
  set_back(id, [id, x, C, Z, Y, X](Graph& gr) {
    const auto& go = gr.g(id);
    auto& gx = gr.g(x);
    for (int c = 0; c < C; ++c)
      for (int z = 0; z < 2 * Z; ++z)
        for (int y = 0; y < 2 * Y; ++y) {
          double* grow = &gx[static_cast<size_t>(((c * Z + z / 2) * Y + y / 2)) * X];
          const double* orow =
              &go[static_cast<size_t>(((c * 2 * Z + z) * 2 * Y + y)) * (2 * X)];
          for (int xx = 0; xx < 2 * X; ++xx) grow[xx / 2] += orow[xx];
        }
  });
  return id;
}

int Graph::leaky_relu(int x, double slope) {
  Tensor out = val(x);
  for (double& e : out.v)
    if (e < 0.0) e *= slope;
  const int id = push(std::move(out), ng(x));
  set_back(id, [id, x, slope](Graph& gr) {
    const auto& go = gr.g(id);
    const auto& xv = gr.cv(x);
    auto& gx = gr.g(x);
    for (size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * (xv[i] > 0.0 ? 1.0 : slope);
  });
  return id;
}

int Graph::sigmoid(int x) {
  Tensor out = val(x);
  for (double& e : out.v) e = sigmoid_stable(e);
  const int id = push(std::move(out), ng(x));
  set_back(id, [id, x](Graph& gr) {
    const auto& go = gr.g(id);
    const auto& ov = gr.cv(id);
    auto& gx = gr.g(x);
    for (size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * ov[i] * (1.0 - ov[i]);
  });
  return id;
}

int Graph::gelu(int x) {
  Tensor out = val(x);
  for (double& e : out.v) e = 0.5 * e * (1.0 + std::erf(e * kInvSqrt2));
  const int id = push(std::move(out), ng(x));
  set_back(id, [id, x](Graph& gr) {
    const auto& go = gr.g(id);
    const auto& xv = gr.cv(x);
    auto& gx = gr.g(x);
    for (size_t i = 0; i < go.size(); ++i) {
      const double z = xv[i];
      const double cdf = 0.5 * (1.0 + std::erf(z * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * z * z);
      gx[i] += go[i] * (cdf + z * pdf);
    }
  });
  return id;
}

int Graph::softmax_lastdim(int x) {
  const auto& s = val(x).shape;
  if (s.empty()) throw std::invalid_argument("softmax_lastdim: scalar input");
  const int64_t L = s.back();
  const int64_t rows = val(x).numel() / L;
  Tensor out = val(x);
  for (int64_t r = 0; r < rows; ++r) {
    double* row = &out.v[static_cast<size_t>(r * L)];
    double m = row[0];
    for (int64_t i = 1; i < L; ++i) m = std::max(m, row[i]);
    double sum = 0.0;
    for (int64_t i = 0; i < L; ++i) {
      row[i] = std::exp(row[i] - m);
      sum += row[i];
    }
    for (int64_t i = 0; i < L; ++i) row[i] /= sum;
  }
  const int id = push(std::move(out), ng(x));
  set_back(id, [id, x, rows, L](Graph& gr) {
    const auto& go = gr.g(id);
    const auto& ov = gr.cv(id);
    auto& gx = gr.g(x);
    for (int64_t r = 0; r < rows; ++r) {
      const size_t base = static_cast<size_t>(r * L);
      double dot = 0.0;
      for (int64_t i = 0; i < L; ++i) dot += go[base + i] * ov[base + i];
      for (int64_t i = 0; i < L; ++i)
        gx[base + i] += ov[base + i] * (go[base + i] - dot);
    }
  });
  return id;
}

int Graph::instance_norm(int x, int gamma, int beta, double eps) {
  const auto& xs = val(x).shape;
  if (xs.size() < 2) throw std::invalid_argument("instance_norm: expects [C,...]");
  const int C = xs[0];
  const int64_t S = val(x).numel() / C;
  if (val(gamma).shape != std::vector<int>{C} || val(beta).shape != std::vector<int>{C})
    throw std::invalid_argument("instance_norm: gamma/beta must be [C]");
  Tensor out = val(x);
  std::vector<double> xhat(out.v.size());
  std::vector<double> istd(static_cast<size_t>(C));
  const auto& gv = val(gamma).v;
  const auto& bv = val(beta).v;
  for (int c = 0; c < C; ++c) {
    double* row = &out.v[static_cast<size_t>(c) * S];
    double mean = 0.0;
    for (int64_t i = 0; i < S; ++i) mean += row[i];
    mean /= static_cast<double>(S);
    double var = 0.0;
    for (int64_t i = 0; i < S; ++i) {
      const double d = row[i] - mean;
      var += d * d;
    }
    var /= static_cast<double>(S);
    const double is = 1.0 / std::sqrt(var + eps);
    istd[static_cast<size_t>(c)] = is;
    double* xh = &xhat[static_cast<size_t>(c) * S];
    for (int64_t i = 0; i < S; ++i) {
      xh[i] = (row[i] - mean) * is;
      row[i] = gv[static_cast<size_t>(c)] * xh[i] + bv[static_cast<size_t>(c)];
    }
  }
  const int id = push(std::move(out), ng(x) || ng(gamma) || ng(beta));
  set_back(id, [id, x, gamma, beta, C, S, xh = std::move(xhat),
                is = std::move(istd)](Graph& gr) {
    const auto& go = gr.g(id);
    const auto& gv = gr.cv(gamma);
    for (int c = 0; c < C; ++c) {
      const size_t base = static_cast<size_t>(c) * S;
      if (gr.ng(gamma)) {
        double acc = 0.0;
        for (int64_t i = 0; i < S; ++i) acc += go[base + i] * xh[base + i];
        gr.g(gamma)[static_cast<size_t>(c)] += acc;
      }
      if (gr.ng(beta)) {
        double acc = 0.0;
        for (int64_t i = 0; i < S; ++i) acc += go[base + i];
        gr.g(beta)[static_cast<size_t>(c)] += acc;
      }
      if (gr.ng(x)) {
        const double gc = gv[static_cast<size_t>(c)];
        double s1 = 0.0, s2 = 0.0;
        for (int64_t i = 0; i < S; ++i) {
          const double dxh = go[base + i] * gc;
          s1 += dxh;
          s2 += dxh * xh[base + i];
        }
        s1 /= static_cast<double>(S);
        s2 /= static_cast<double>(S);
        auto& gx = gr.g(x);
        const double isc = is[static_cast<size_t>(c)];
        for (int64_t i = 0; i < S; ++i)
          gx[base + i] += isc * (go[base + i] * gc - s1 - xh[base + i] * s2);
      }
    }
  });
  return id;
}

int Graph::layer_norm(int x, int gamma, int beta, double eps) {
  const auto& xs = val(x).shape;
  if (xs.empty()) throw std::invalid_argument("layer_norm: scalar input");
  const int D = xs.back();
  const int64_t R = val(x).numel() / D;
  if (val(gamma).shape != std::vector<int>{D} || val(beta).shape != std::vector<int>{D})
    throw std::invalid_argument("layer_norm: gamma/beta must match last dim");
  Tensor out = val(x);
  std::vector<double> xhat(out.v.size());
  std::vector<double> istd(static_cast<size_t>(R));
  const auto& gv = val(gamma).v;
  const auto& bv = val(beta).v;
  for (int64_t r = 0; r < R; ++r) {
    double* row = &out.v[static_cast<size_t>(r) * D];
    double mean = 0.0;
    for (int i = 0; i < D; ++i) mean += row[i];
    mean /= D;
    double var = 0.0;
    for (int i = 0; i < D; ++i) {
      const double d = row[i] - mean;
      var += d * d;
    }
    var /= D;
    const double is = 1.0 / std::sqrt(var + eps);
    istd[static_cast<size_t>(r)] = is;
    double* xh = &xhat[static_cast<size_t>(r) * D];
    for (int i = 0; i < D; ++i) {
      xh[i] = (row[i] - mean) * is;
      row[i] = gv[static_cast<size_t>(i)] * xh[i] + bv[static_cast<size_t>(i)];
    }
  }
  const int id = push(std::move(out), ng(x) || ng(gamma) || ng(beta));
  set_back(id, [id, x, gamma, beta, D, R, xh = std::move(xhat),
                is = std::move(istd)](Graph& gr) {
    const auto& go = gr.g(id);
    const auto& gv = gr.cv(gamma);
    for (int64_t r = 0; r < R; ++r) {
      const size_t base = static_cast<size_t>(r) * D;
      if (gr.ng(gamma)) {
        auto& gg = gr.g(gamma);
        for (int i = 0; i < D; ++i) gg[static_cast<size_t>(i)] += go[base + i] * xh[base + i];
      }
      if (gr.ng(beta)) {
        auto& gb = gr.g(beta);
        for (int i = 0; i < D; ++i) gb[static_cast<size_t>(i)] += go[base + i];
      }
      if (gr.ng(x)) {
        double s1 = 0.0, s2 = 0.0;
        for (int i = 0; i < D; ++i) {
          const double dxh = go[base + i] * gv[static_cast<size_t>(i)];
          s1 += dxh;
          s2 += dxh * xh[base + i];
        }
        s1 /= D;
        s2 /= D;
        auto& gx = gr.g(x);
        const double isr = is[static_cast<size_t>(r)];
        for (int i = 0; i < D; ++i)
          gx[base + i] += isr * (go[base + i] * gv[static_cast<size_t>(i)] - s1 -
                                 xh[base + i] * s2);
      }
    }
  });
  return id;
}

int Graph::conv3d(int x, int w, int b, int stride, int pad) {
  const auto& xs = val(x).shape;
  const auto& ws = val(w).shape;
  if (xs.size() != 4) throw std::invalid_argument("conv3d: input must be [Ci,Z,Y,X]");
  if (ws.size() != 5 || ws[2] != ws[3] || ws[3] != ws[4])
    throw std::invalid_argument("conv3d: weight must be [Co,Ci,k,k,k]");
  if (ws[1] != xs[0]) throw std::invalid_argument("conv3d: channel mismatch");
  const int Ci = xs[0], Z = xs[1], Y = xs[2], X = xs[3];
  const int Co = ws[0], k = ws[2];
  if (val(b).shape != std::vector<int>{Co})
    throw std::invalid_argument("conv3d: bias must be [Co]");
  if (stride < 1 || pad < 0) throw std::invalid_argument("conv3d: bad stride or pad");
  auto osize = [&](int in) {
    const int num = in + 2 * pad - k;
    if (num < 0 || num % stride != 0)
      throw std::invalid_argument("conv3d: size not divisible by stride");
    return num / stride + 1;
  };
  const int Zo = osize(Z), Yo = osize(Y), Xo = osize(X);

  // valid output range for kernel offset d along an axis
  auto lo = [stride, pad](int d) {
    const int num = pad - d;
    return num <= 0 ? 0 : (num + stride - 1) / stride;
  };
  auto hi = [stride, pad](int d, int in, int on) {
    const int num = in - 1 + pad - d;
    return num < 0 ? -1 : std::min(on - 1, num / stride);
  };

  Tensor out({Co, Zo, Yo, Xo});
  const auto& xv = val(x).v;
  const auto& wv = val(w).v;
  const auto& bv = val(b).v;
  const int64_t oplane = static_cast<int64_t>(Zo) * Yo * Xo;
  for (int co = 0; co < Co; ++co)
    std::fill_n(out.v.begin() + co * oplane, oplane, bv[static_cast<size_t>(co)]);
  for (int co = 0; co < Co; ++co)
    for (int ci = 0; ci < Ci; ++ci)
      for (int dz = 0; dz < k; ++dz)
        for (int dy = 0; dy < k; ++dy)
          for (int dx = 0; dx < k; ++dx) {
            const double wval =
                wv[static_cast<size_t>((((co * Ci + ci) * k + dz) * k + dy) * k + dx)];
            const int zl = lo(dz), zh = hi(dz, Z, Zo);
            const int yl = lo(dy), yh = hi(dy, Y, Yo);
            const int xl = lo(dx), xh = hi(dx, X, Xo);
            const int ib = dx - pad;
            for (int zo = zl; zo <= zh; ++zo) {
              const int zi = stride * zo + dz - pad;
              for (int yo = yl; yo <= yh; ++yo) {
                const int yi = stride * yo + dy - pad;
                const double* xrow =
                    &xv[(static_cast<int64_t>(ci) * Z + zi) * Y * X +
                        static_cast<int64_t>(yi) * X];
                double* orow = &out.v[(static_cast<int64_t>(co) * Zo + zo) * Yo * Xo +
                                      static_cast<int64_t>(yo) * Xo];
                for (int xo = xl; xo <= xh; ++xo)
                  orow[xo] += wval * xrow[stride * xo + ib];
              }
            }
          }

  const int id = push(std::move(out), ng(x) || ng(w) || ng(b));
  set_back(id, [id, x, w, b, Ci, Z, Y, X, Co, k, Zo, Yo, Xo, stride, pad](Graph& gr) {
    const auto& go = gr.g(id);
    auto lo = [stride, pad](int d) {
      const int num = pad - d;
      return num <= 0 ? 0 : (num + stride - 1) / stride;
    };
    auto hi = [stride, pad](int d, int in, int on) {
      const int num = in - 1 + pad - d;
      return num < 0 ? -1 : std::min(on - 1, num / stride);
    };
    if (gr.ng(b)) {
      auto& gb = gr.g(b);
      const int64_t oplane = static_cast<int64_t>(Zo) * Yo * Xo;
      for (int co = 0; co < Co; ++co) {
        double acc = 0.0;
        for (int64_t i = 0; i < oplane; ++i) acc += go[static_cast<size_t>(co * oplane + i)];
        gb[static_cast<size_t>(co)] += acc;
      }
    }
    const bool needw = gr.ng(w);
    const bool needx = gr.ng(x);
    if (!needw && !needx) return;
    const auto& xv = gr.cv(x);
    const auto& wv = gr.cv(w);
    for (int co = 0; co < Co; ++co)
      for (int ci = 0; ci < Ci; ++ci)
        for (int dz = 0; dz < k; ++dz)
          for (int dy = 0; dy < k; ++dy)
            for (int dx = 0; dx < k; ++dx) {
              const size_t widx =
                  static_cast<size_t>((((co * Ci + ci) * k + dz) * k + dy) * k + dx);
              const double wval = wv[widx];
              const int zl = lo(dz), zh = hi(dz, Z, Zo);
              const int yl = lo(dy), yh = hi(dy, Y, Yo);
              const int xl = lo(dx), xh = hi(dx, X, Xo);
              const int ib = dx - pad;
              double wacc = 0.0;
              for (int zo = zl; zo <= zh; ++zo) {
                const int zi = stride * zo + dz - pad;
                for (int yo = yl; yo <= yh; ++yo) {
                  const int yi = stride * yo + dy - pad;
                  const int64_t xbase = (static_cast<int64_t>(ci) * Z + zi) * Y * X +
                                        static_cast<int64_t>(yi) * X;
                  const int64_t obase = (static_cast<int64_t>(co) * Zo + zo) * Yo * Xo +
                                        static_cast<int64_t>(yo) * Xo;
                  if (needw && needx) {
                    auto& gx = gr.g(x);
                    for (int xo = xl; xo <= xh; ++xo) {
                      const double gv = go[static_cast<size_t>(obase + xo)];
                      wacc += gv * xv[static_cast<size_t>(xbase + stride * xo + ib)];
                      gx[static_cast<size_t>(xbase + stride * xo + ib)] += wval * gv;
                    }
                  } else if (needw) {
                    for (int xo = xl; xo <= xh; ++xo)
                      wacc += go[static_cast<size_t>(obase + xo)] *
                              xv[static_cast<size_t>(xbase + stride * xo + ib)];
                  } else {
                    auto& gx = gr.g(x);
                    for (int xo = xl; xo <= xh; ++xo)
                      gx[static_cast<size_t>(xbase + stride * xo + ib)] +=
                          wval * go[static_cast<size_t>(obase + xo)];
                  }
                }
              }
              if (needw) gr.g(w)[widx] += wacc;
            }
  });
  return id;
}

int Graph::matmul2d(int a, int w) {
  const auto& sa = val(a).shape;
  const auto& sw = val(w).shape;
  if (sa.size() != 2 || sw.size() != 2 || sa[1] != sw[0])
    throw std::invalid_argument("matmul2d: shape mismatch");
  const int M = sa[0], K = sa[1], N = sw[1];
  Tensor out({M, N});
  const auto& av = val(a).v;
  const auto& wv = val(w).v;
  for (int m = 0; m < M; ++m)
    for (int k = 0; k < K; ++k) {
      const double x = av[static_cast<size_t>(m) * K + k];
      const double* wrow = &wv[static_cast<size_t>(k) * N];
      double* orow = &out.v[static_cast<size_t>(m) * N];
      for (int n = 0; n < N; ++n) orow[n] += x * wrow[n];
    }
  const int id = push(std::move(out), ng(a) || ng(w));
  set_back(id, [id, a, w, M, K, N](Graph& gr) {
    const auto& go = gr.g(id);
    if (gr.ng(a)) {
      auto& ga = gr.g(a);
      const auto& wv = gr.cv(w);
      for (int m = 0; m < M; ++m)
        for (int k = 0; k < K; ++k) {
          const double* grow = &go[static_cast<size_t>(m) * N];
          const double* wrow = &wv[static_cast<size_t>(k) * N];
          double acc = 0.0;
          for (int n = 0; n < N; ++n) acc += grow[n] * wrow[n];
          ga[static_cast<size_t>(m) * K + k] += acc;
        }
    }
    if (gr.ng(w)) {
      auto& gw = gr.g(w);
      const auto& av = gr.cv(a);
      for (int m = 0; m < M; ++m)
        for (int k = 0; k < K; ++k) {
          const double x = av[static_cast<size_t>(m) * K + k];
          const double* grow = &go[static_cast<size_t>(m) * N];
          double* wrow = &gw[static_cast<size_t>(k) * N];
          for (int n = 0; n < N; ++n) wrow[n] += x * grow[n];
        }
    }
  });
  return id;
}

int Graph::bmm(int a, int b, bool ta, bool tb) {
  const auto& sa = val(a).shape;
  const auto& sb = val(b).shape;
  if (sa.size() != 3 || sb.size() != 3 || sa[0] != sb[0])
    throw std::invalid_argument("bmm: expects [B,.,.] pair");
  const int B = sa[0];
  const int M = ta ? sa[2] : sa[1];
  const int K = ta ? sa[1] : sa[2];
  const int N = tb ? sb[1] : sb[2];
  if ((tb ? sb[2] : sb[1]) != K) throw std::invalid_argument("bmm: inner dim mismatch");
  const int64_t am = ta ? 1 : K, ak = ta ? M : 1;
  const int64_t bk = tb ? 1 : N, bn = tb ? K : 1;
  Tensor out({B, M, N});
  for (int bi = 0; bi < B; ++bi) {
    const double* ap = &val(a).v[static_cast<size_t>(bi) * M * K];
    const double* bp = &val(b).v[static_cast<size_t>(bi) * K * N];
    double* op = &out.v[static_cast<size_t>(bi) * M * N];
    for (int m = 0; m < M; ++m)
      for (int n = 0; n < N; ++n) {
        double acc = 0.0;
        for (int k = 0; k < K; ++k) acc += ap[m * am + k * ak] * bp[k * bk + n * bn];
        op[static_cast<size_t>(m) * N + n] = acc;
      }
  }
  const int id = push(std::move(out), ng(a) || ng(b));
  set_back(id, [id, a, b, B, M, K, N, am, ak, bk, bn](Graph& gr) {
    const auto& go = gr.g(id);
    for (int bi = 0; bi < B; ++bi) {
      const double* gp = &go[static_cast<size_t>(bi) * M * N];
      if (gr.ng(a)) {
        double* gap = &gr.g(a)[static_cast<size_t>(bi) * M * K];
        const double* bp = &gr.cv(b)[static_cast<size_t>(bi) * K * N];
        for (int m = 0; m < M; ++m)
          for (int k = 0; k < K; ++k) {
            double acc = 0.0;
            for (int n = 0; n < N; ++n)
              acc += gp[static_cast<size_t>(m) * N + n] * bp[k * bk + n * bn];
            gap[m * am + k * ak] += acc;
          }
      }
      if (gr.ng(b)) {
        double* gbp = &gr.g(b)[static_cast<size_t>(bi) * K * N];
        const double* ap = &gr.cv(a)[static_cast<size_t>(bi) * M * K];
        for (int k = 0; k < K; ++k)
          for (int n = 0; n < N; ++n) {
            double acc = 0.0;
            for (int m = 0; m < M; ++m)
              acc += ap[m * am + k * ak] * gp[static_cast<size_t>(m) * N + n];
            gbp[k * bk + n * bn] += acc;
          }
      }
    }
  });
  return id;
}

int Graph::add_rowvec(int x, int b) {
  const auto& xs = val(x).shape;
  const auto& bs = val(b).shape;
  if (xs.empty() || bs.size() != 1 || bs[0] != xs.back())
    throw std::invalid_argument("add_rowvec: bias must match last dim");
  const int C = bs[0];
  const int64_t rows = val(x).numel() / C;
  Tensor out = val(x);
  const auto& bv = val(b).v;
  for (int64_t r = 0; r < rows; ++r) {
    double* row = &out.v[static_cast<size_t>(r) * C];
    for (int c = 0; c < C; ++c) row[c] += bv[static_cast<size_t>(c)];
  }
  const int id = push(std::move(out), ng(x) || ng(b));
  set_back(id, [id, x, b, rows, C](Graph& gr) {
    const auto& go = gr.g(id);
    if (gr.ng(x)) {
      auto& gx = gr.g(x);
      for (size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
    }
    if (gr.ng(b)) {
      auto& gb = gr.g(b);
      for (int64_t r = 0; r < rows; ++r) {
        const double* row = &go[static_cast<size_t>(r) * C];
        for (int c = 0; c < C; ++c) gb[static_cast<size_t>(c)] += row[c];
      }
    }
  });
  return id;
}

int Graph::mul_bcast0(int x, int m) {
  const auto& xs = val(x).shape;
  const auto& ms = val(m).shape;
  if (xs.empty() || ms.empty() || ms[0] != 1)
    throw std::invalid_argument("mul_bcast0: mask leading dim must be 1");
  const int C = xs[0];
  const int64_t S = val(x).numel() / C;
  if (val(m).numel() != S) throw std::invalid_argument("mul_bcast0: spatial mismatch");
  Tensor out = val(x);
  const auto& mv = val(m).v;
  for (int c = 0; c < C; ++c) {
    double* row = &out.v[static_cast<size_t>(c) * S];
    for (int64_t i = 0; i < S; ++i) row[i] *= mv[static_cast<size_t>(i)];
  }
  const int id = push(std::move(out), ng(x) || ng(m));
  set_back(id, [id, x, m, C, S](Graph& gr) {
    const auto& go = gr.g(id);
    if (gr.ng(x)) {
      auto& gx = gr.g(x);
      const auto& mv = gr.cv(m);
      for (int c = 0; c < C; ++c) {
        const size_t base = static_cast<size_t>(c) * S;
        for (int64_t i = 0; i < S; ++i)
          gx[base + i] += go[base + i] * mv[static_cast<size_t>(i)];
      }
    }
    if (gr.ng(m)) {
      auto& gm = gr.g(m);
      const auto& xv = gr.cv(x);
      for (int c = 0; c < C; ++c) {
        const size_t base = static_cast<size_t>(c) * S;
        for (int64_t i = 0; i < S; ++i)
          gm[static_cast<size_t>(i)] += go[base + i] * xv[base + i];
      }
    }
  });
  return id;
}

int Graph::add_relpos(int scores, int table, Indices pair_index, int num_heads) {
  const auto& ss = val(scores).shape;
  const auto& ts = val(table).shape;
  if (ss.size() != 3 || ss[1] != ss[2])
    throw std::invalid_argument("add_relpos: scores must be [B,T,T]");
  if (ts.size() != 2 || ts[1] != num_heads)
    throw std::invalid_argument("add_relpos: table must be [R,heads]");
  const int B = ss[0], T = ss[1];
  if (B % num_heads != 0)
    throw std::invalid_argument("add_relpos: batch not a multiple of heads");
  if (static_cast<int64_t>(pair_index->size()) != static_cast<int64_t>(T) * T)
    throw std::invalid_argument("add_relpos: index size must be T*T");
  const int R = ts[0];
  for (const int64_t j : *pair_index)
    if (j < 0 || j >= R) throw std::invalid_argument("add_relpos: index out of range");
  Tensor out = val(scores);
  const auto& tv = val(table).v;
  const int64_t TT = static_cast<int64_t>(T) * T;
  for (int b = 0; b < B; ++b) {
    const int h = b % num_heads;
    double* plane = &out.v[static_cast<size_t>(b) * TT];
    for (int64_t ij = 0; ij < TT; ++ij)
      plane[ij] +=
          tv[static_cast<size_t>((*pair_index)[static_cast<size_t>(ij)]) * num_heads + h];
  }
  const int id = push(std::move(out), ng(scores) || ng(table));
  set_back(id, [id, scores, table, pair_index, num_heads, B, TT](Graph& gr) {
    const auto& go = gr.g(id);
    if (gr.ng(scores)) {
      auto& gs = gr.g(scores);
      for (size_t i = 0; i < go.size(); ++i) gs[i] += go[i];
    }
    if (gr.ng(table)) {
      auto& gt = gr.g(table);
      for (int b = 0; b < B; ++b) {
        const int h = b % num_heads;
        const double* plane = &go[static_cast<size_t>(b) * TT];
        for (int64_t ij = 0; ij < TT; ++ij)
          gt[static_cast<size_t>((*pair_index)[static_cast<size_t>(ij)]) * num_heads +
             h] += plane[ij];
      }
    }
  });
  return id;
}

int Graph::add_winmask(int scores, std::shared_ptr<const std::vector<double>> mask,
                       int num_heads) {
  const auto& ss = val(scores).shape;
  if (ss.size() != 3 || ss[1] != ss[2])
    throw std::invalid_argument("add_winmask: scores must be [B,T,T]");
  const int B = ss[0], T = ss[1];
  if (B % num_heads != 0)
    throw std::invalid_argument("add_winmask: batch not a multiple of heads");
  const int64_t TT = static_cast<int64_t>(T) * T;
  if (static_cast<int64_t>(mask->size()) != (B / num_heads) * TT)
    throw std::invalid_argument("add_winmask: mask size mismatch");
  Tensor out = val(scores);
  for (int b = 0; b < B; ++b) {
    const double* mp = &(*mask)[static_cast<size_t>(b / num_heads) * TT];
    double* plane = &out.v[static_cast<size_t>(b) * TT];
    for (int64_t ij = 0; ij < TT; ++ij) plane[ij] += mp[ij];
  }
  const int id = push(std::move(out), ng(scores));
  set_back(id, [id, scores](Graph& gr) {
    const auto& go = gr.g(id);
    auto& gs = gr.g(scores);
    for (size_t i = 0; i < go.size(); ++i) gs[i] += go[i];
  });
  return id;
}

int Graph::bce_with_logits_mean(int logits, std::shared_ptr<const Tensor> target) {
  if (val(logits).shape != target->shape)
    throw std::invalid_argument("bce_with_logits_mean: shape mismatch");
  const auto& zv = val(logits).v;
  const auto& yv = target->v;
  const int64_t N = val(logits).numel();
  if (N == 0) throw std::invalid_argument("bce_with_logits_mean: empty input");
  double acc = 0.0;
  for (int64_t i = 0; i < N; ++i) {
    const double z = zv[static_cast<size_t>(i)];
    acc += std::max(z, 0.0) - z * yv[static_cast<size_t>(i)] +
           std::log1p(std::exp(-std::fabs(z)));
  }
  Tensor out({1});
  out.v[0] = acc / static_cast<double>(N);
  const int id = push(std::move(out), ng(logits));
  set_back(id, [id, logits, target, N](Graph& gr) {
    const double go = gr.g(id)[0];
    const auto& zv = gr.cv(logits);
    auto& gz = gr.g(logits);
    const double invn = 1.0 / static_cast<double>(N);
    for (int64_t i = 0; i < N; ++i) {
      const size_t ii = static_cast<size_t>(i);
      gz[ii] += go * invn * (sigmoid_stable(zv[ii]) - target->v[ii]);
    }
  });
  return id;
}

int Graph::soft_dice_loss(int logits, std::shared_ptr<const Tensor> target, double eps) {
  if (val(logits).shape != target->shape)
    throw std::invalid_argument("soft_dice_loss: shape mismatch");
  const auto& zv = val(logits).v;
  const auto& yv = target->v;
  const int64_t N = val(logits).numel();
  if (N == 0) throw std::invalid_argument("soft_dice_loss: empty input");
  auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(N));
  double inter = 0.0, psum = 0.0, ysum = 0.0;
  for (int64_t i = 0; i < N; ++i) {
    const size_t ii = static_cast<size_t>(i);
    const double p = sigmoid_stable(zv[ii]);
    (*probs)[ii] = p;
    inter += p * yv[ii];
    psum += p;
    ysum += yv[ii];
  }
  const double num = 2.0 * inter + eps;
  const double den = psum + ysum + eps;
  Tensor out({1});
  out.v[0] = 1.0 - num / den;
  const int id = push(std::move(out), ng(logits));
  set_back(id, [id, logits, target, probs, num, den, N](Graph& gr) {
    const double go = gr.g(id)[0];
    auto& gz = gr.g(logits);
    const double den2 = den * den;
    for (int64_t i = 0; i < N; ++i) {
      const size_t ii = static_cast<size_t>(i);
      const double p = (*probs)[ii];
      const double dldp = -(2.0 * target->v[ii] * den - num) / den2;
      gz[ii] += go * dldp * p * (1.0 - p);
    }
  });
  return id;
}

}  // namespace laspet::nn
