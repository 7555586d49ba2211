#include <cmath>
#include <utility>

#include "nilmprune/errors.hpp"
#include "nilmprune/tensor.hpp"

namespace nilmprune {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  std::vector<double> kept = out;
  return Tensor::from_op(x.shape(), std::move(out), {x},
                         [deriv, kept = std::move(kept)](std::span<const double> g,
                                                         std::span<Tensor> parents) {
                           auto px = parents[0].data();
                           auto pg = parents[0].grad();
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             pg[i] += g[i] * deriv(px[i], kept[i]);
                           }
                         });
}

}  // namespace

std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, std::size_t stride) {
  if (stride == 0) throw DimensionError("conv1d: stride must be >= 1");
  if (kernel == 0 || length < kernel) {
    throw DimensionError("conv1d: length axis " + std::to_string(length) +
                         " shorter than kernel " + std::to_string(kernel));
  }
  return (length - kernel) / stride + 1;
}

Tensor conv1d(const Tensor& input, const Tensor& kernels, const Tensor& bias, std::size_t stride) {
  const bool batched = input.rank() == 3;
  if (input.rank() != 2 && !batched) {
    throw DimensionError("conv1d: input must be [C_in, L] or [N, C_in, L], got " +
                         shape_str(input.shape()));
  }
  if (kernels.rank() != 3) {
    throw DimensionError("conv1d: kernels must be [C_out, C_in, K], got " +
                         shape_str(kernels.shape()));
  }
  const std::size_t n = batched ? input.dim(0) : 1;
  const std::size_t c_in = input.dim(batched ? 1 : 0);
  const std::size_t len = input.dim(batched ? 2 : 1);
  const std::size_t c_out = kernels.dim(0);
  const std::size_t k = kernels.dim(2);
  if (kernels.dim(1) != c_in) {
    throw DimensionError("conv1d: channel axis mismatch, input has " + std::to_string(c_in) +
                         " channels but kernels expect " + std::to_string(kernels.dim(1)));
  }
  if (bias.rank() != 1 || bias.dim(0) != c_out) {
    throw DimensionError("conv1d: bias axis must have " + std::to_string(c_out) +
                         " entries, got " + shape_str(bias.shape()));
  }
  const std::size_t l_out = conv1d_output_length(len, k, stride);

  auto x = input.data();
  auto w = kernels.data();
  auto b = bias.data();
  std::vector<double> out(n * c_out * l_out);
  for (std::size_t s = 0; s < n; ++s) {
    const double* xs = x.data() + s * c_in * len;
    double* os = out.data() + s * c_out * l_out;
    for (std::size_t co = 0; co < c_out; ++co) {
      double* orow = os + co * l_out;
      for (std::size_t t = 0; t < l_out; ++t) orow[t] = b[co];
      for (std::size_t ci = 0; ci < c_in; ++ci) {
        const double* xrow = xs + ci * len;
        const double* wk = w.data() + (co * c_in + ci) * k;
        for (std::size_t t = 0; t < l_out; ++t) {
          const double* xt = xrow + t * stride;
          double acc = 0.0;
          for (std::size_t j = 0; j < k; ++j) acc += wk[j] * xt[j];
          orow[t] += acc;
        }
      }
    }
  }

  Shape shape = batched ? Shape{n, c_out, l_out} : Shape{c_out, l_out};
  return Tensor::from_op(
      std::move(shape), std::move(out), {input, kernels, bias},
      [n, c_in, len, c_out, k, l_out, stride](std::span<const double> g,
                                             std::span<Tensor> parents) {
        auto& in = parents[0];
        auto& ker = parents[1];
        auto& bs = parents[2];
        auto x = std::as_const(in).data();
        auto w = std::as_const(ker).data();
        if (bs.requires_grad()) {
          auto gb = bs.grad();
          for (std::size_t s = 0; s < n; ++s)
            for (std::size_t co = 0; co < c_out; ++co) {
              const double* grow = g.data() + (s * c_out + co) * l_out;
              double acc = 0.0;
              for (std::size_t t = 0; t < l_out; ++t) acc += grow[t];
              gb[co] += acc;
            }
        }
        if (ker.requires_grad()) {
          auto gw = ker.grad();
          for (std::size_t s = 0; s < n; ++s)
            for (std::size_t co = 0; co < c_out; ++co) {
              const double* grow = g.data() + (s * c_out + co) * l_out;
              for (std::size_t ci = 0; ci < c_in; ++ci) {
                const double* xrow = x.data() + (s * c_in + ci) * len;
                double* gwk = gw.data() + (co * c_in + ci) * k;
                for (std::size_t j = 0; j < k; ++j) {
                  double acc = 0.0;
                  for (std::size_t t = 0; t < l_out; ++t) acc += grow[t] * xrow[t * stride + j];
                  gwk[j] += acc;
                }
              }
            }
        }
        if (in.requires_grad()) {
          auto gx = in.grad();
          for (std::size_t s = 0; s < n; ++s)
            for (std::size_t co = 0; co < c_out; ++co) {
              const double* grow = g.data() + (s * c_out + co) * l_out;
              for (std::size_t ci = 0; ci < c_in; ++ci) {
                double* gxrow = gx.data() + (s * c_in + ci) * len;
                const double* wk = w.data() + (co * c_in + ci) * k;
                for (std::size_t t = 0; t < l_out; ++t) {
                  const double gt = grow[t];
                  double* gxt = gxrow + t * stride;
                  for (std::size_t j = 0; j < k; ++j) gxt[j] += gt * wk[j];
                }
              }
            }
        }
      });
}

Tensor linear(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  const bool batched = input.rank() == 2;
  if (input.rank() != 1 && !batched) {
    throw DimensionError("linear: input must be [F_in] or [N, F_in], got " +
                         shape_str(input.shape()));
  }
  if (weights.rank() != 2) {
    throw DimensionError("linear: weights must be [F_out, F_in], got " +
                         shape_str(weights.shape()));
  }
  const std::size_t n = batched ? input.dim(0) : 1;
  const std::size_t f_in = input.dim(batched ? 1 : 0);
  const std::size_t f_out = weights.dim(0);
  if (weights.dim(1) != f_in) {
    throw DimensionError("linear: feature axis mismatch, input has " + std::to_string(f_in) +
                         " features but weights expect " + std::to_string(weights.dim(1)));
  }
  if (bias.rank() != 1 || bias.dim(0) != f_out) {
    throw DimensionError("linear: bias axis must have " + std::to_string(f_out) +
                         " entries, got " + shape_str(bias.shape()));
  }
  auto x = input.data();
  auto w = weights.data();
  auto b = bias.data();
  std::vector<double> out(n * f_out);
  for (std::size_t s = 0; s < n; ++s) {
    const double* xs = x.data() + s * f_in;
    for (std::size_t o = 0; o < f_out; ++o) {
      const double* wr = w.data() + o * f_in;
      double acc = 0.0;
      for (std::size_t i = 0; i < f_in; ++i) acc += wr[i] * xs[i];
      out[s * f_out + o] = acc + b[o];
    }
  }
  Shape shape = batched ? Shape{n, f_out} : Shape{f_out};
  return Tensor::from_op(
      std::move(shape), std::move(out), {input, weights, bias},
      [n, f_in, f_out](std::span<const double> g, std::span<Tensor> parents) {
        auto& in = parents[0];
        auto& wt = parents[1];
        auto& bs = parents[2];
        auto x = std::as_const(in).data();
        auto w = std::as_const(wt).data();
        if (bs.requires_grad()) {
          auto gb = bs.grad();
          for (std::size_t s = 0; s < n; ++s)
            for (std::size_t o = 0; o < f_out; ++o) gb[o] += g[s * f_out + o];
        }
        if (wt.requires_grad()) {
          auto gw = wt.grad();
          for (std::size_t s = 0; s < n; ++s) {
            const double* xs = x.data() + s * f_in;
            for (std::size_t o = 0; o < f_out; ++o) {
              const double go = g[s * f_out + o];
              if (go == 0.0) continue;
              double* gwr = gw.data() + o * f_in;
              for (std::size_t i = 0; i < f_in; ++i) gwr[i] += go * xs[i];
            }
          }
        }
        if (in.requires_grad()) {
          auto gx = in.grad();
          for (std::size_t s = 0; s < n; ++s) {
            double* gxs = gx.data() + s * f_in;
            for (std::size_t o = 0; o < f_out; ++o) {
              const double go = g[s * f_out + o];
              if (go == 0.0) continue;
              const double* wr = w.data() + o * f_in;
              for (std::size_t i = 0; i < f_in; ++i) gxs[i] += go * wr[i];
            }
          }
        }
      });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double out) { return out * (1.0 - out); });
}

Tensor activation(const Tensor& x, Activation kind) {
  return kind == Activation::ReLU ? relu(x) : sigmoid(x);
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  return Tensor::from_op(a.shape(), std::move(out), {a, b},
                         [](std::span<const double> g, std::span<Tensor> parents) {
                           for (auto& p : parents) {
                             if (!p.requires_grad()) continue;
                             auto pg = p.grad();
                             for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
                           }
                         });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  return Tensor::from_op(a.shape(), std::move(out), {a, b},
                         [](std::span<const double> g, std::span<Tensor> parents) {
                           if (parents[0].requires_grad()) {
                             auto pg = parents[0].grad();
                             for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
                           }
                           if (parents[1].requires_grad()) {
                             auto pg = parents[1].grad();
                             for (std::size_t i = 0; i < g.size(); ++i) pg[i] -= g[i];
                           }
                         });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  return Tensor::from_op(a.shape(), std::move(out), {a, b},
                         [](std::span<const double> g, std::span<Tensor> parents) {
                           auto ad = std::as_const(parents[0]).data();
                           auto bd = std::as_const(parents[1]).data();
                           if (parents[0].requires_grad()) {
                             auto pg = parents[0].grad();
                             for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i] * bd[i];
                           }
                           if (parents[1].requires_grad()) {
                             auto pg = parents[1].grad();
                             for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i] * ad[i];
                           }
                         });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(i) * factor;
  return Tensor::from_op(x.shape(), std::move(out), {x},
                         [factor](std::span<const double> g, std::span<Tensor> parents) {
                           auto pg = parents[0].grad();
                           for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i] * factor;
                         });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return Tensor::from_op(Shape{1}, {acc}, {x},
                         [](std::span<const double> g, std::span<Tensor> parents) {
                           auto pg = parents[0].grad();
                           for (auto& v : pg) v += g[0];
                         });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "mse_loss");
  const std::size_t n = pred.numel();
  if (n == 0) throw DimensionError("mse_loss on empty tensors");
  auto p = pred.data();
  auto t = target.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = p[i] - t[i];
    acc += d * d;
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  return Tensor::from_op(Shape{1}, {acc * inv_n}, {pred, target},
                         [inv_n](std::span<const double> g, std::span<Tensor> parents) {
                           auto p = std::as_const(parents[0]).data();
                           auto t = std::as_const(parents[1]).data();
                           const double c = 2.0 * g[0] * inv_n;
                           if (parents[0].requires_grad()) {
                             auto pg = parents[0].grad();
                             for (std::size_t i = 0; i < p.size(); ++i) pg[i] += c * (p[i] - t[i]);
                           }
                           if (parents[1].requires_grad()) {
                             auto tg = parents[1].grad();
                             for (std::size_t i = 0; i < p.size(); ++i) tg[i] -= c * (p[i] - t[i]);
                           }
                         });
}

}  // namespace nilmprune
