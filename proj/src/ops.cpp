#include "unida/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <numeric>

#include "unida/error.hpp"

namespace unida {
namespace {

using detail::Node;

std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  if (axis < -r || axis >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("cannot broadcast " + to_string(a) + " with " + to_string(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// For every flat index of `out`, the flat index of the broadcast source.
std::vector<std::size_t> broadcast_map(const Shape& in, const Shape& out) {
  const std::size_t r = out.size();
  std::vector<std::size_t> in_stride(r, 0);
  std::size_t stride = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    const std::size_t oi = i + (r - in.size());
    in_stride[oi] = in[i] == 1 ? 0 : stride;
    stride *= in[i];
  }
  std::vector<std::size_t> map(numel(out));
  std::vector<std::size_t> idx(r, 0);
  std::size_t offset = 0;
  for (std::size_t flat = 0; flat < map.size(); ++flat) {
    map[flat] = offset;
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      offset += in_stride[d];
      if (idx[d] < out[d]) break;
      offset -= in_stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  return map;
}

template <class F, class DA, class DB>
Tensor binary(const Tensor& a, const Tensor& b, F f, DA dfa, DB dfb) {
  const auto& va = a.values();
  const auto& vb = b.values();
  if (a.shape() == b.shape()) {
    std::vector<double> out(va.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(va[i], vb[i]);
    return make_op(a.shape(), std::move(out), {a, b}, [dfa, dfb](const Node& self) {
      const auto& x = self.parents[0]->value;
      const auto& y = self.parents[1]->value;
      if (self.parents[0]->requires_grad) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfa(x[i], y[i]);
      }
      if (self.parents[1]->requires_grad) {
        auto& g = self.parents[1]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfb(x[i], y[i]);
      }
    });
  }
  Shape shape = broadcast_shape(a.shape(), b.shape());
  auto ma = std::make_shared<std::vector<std::size_t>>(broadcast_map(a.shape(), shape));
  auto mb = std::make_shared<std::vector<std::size_t>>(broadcast_map(b.shape(), shape));
  std::vector<double> out(ma->size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(va[(*ma)[i]], vb[(*mb)[i]]);
  return make_op(std::move(shape), std::move(out), {a, b}, [ma, mb, dfa, dfb](const Node& self) {
    const auto& x = self.parents[0]->value;
    const auto& y = self.parents[1]->value;
    const bool ga = self.parents[0]->requires_grad;
    const bool gb = self.parents[1]->requires_grad;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double xi = x[(*ma)[i]], yi = y[(*mb)[i]];
      if (ga) self.parents[0]->grad_buffer()[(*ma)[i]] += self.grad[i] * dfa(xi, yi);
      if (gb) self.parents[1]->grad_buffer()[(*mb)[i]] += self.grad[i] * dfb(xi, yi);
    }
  });
}

// Unary op whose derivative is expressed through input x and output y.
template <class F, class D>
Tensor unary(const Tensor& x, F f, D df) {
  const auto& v = x.values();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(v[i]);
  return make_op(x.shape(), std::move(out), {x}, [df](const Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    const auto& in = self.parents[0]->value;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(in[i], self.value[i]);
  });
}

double stable_sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor scale(const Tensor& x, double factor) {
  return unary(x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double offset) {
  return unary(x, [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

Tensor exp(const Tensor& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sqrt(const Tensor& x) {
  return unary(x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Tensor square(const Tensor& x) {
  return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor relu(const Tensor& x) {
  return unary(x, [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  return unary(
      x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
        const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + v * pdf;
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor softmax(const Tensor& x, int axis) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), ax);
  const auto& v = x.values();
  std::vector<double> out(v.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.n * s.inner + i;
      double m = -INFINITY;
      for (std::size_t k = 0; k < s.n; ++k) m = std::max(m, v[base + k * s.inner]);
      double z = 0;
      for (std::size_t k = 0; k < s.n; ++k) z += out[base + k * s.inner] = std::exp(v[base + k * s.inner] - m);
      for (std::size_t k = 0; k < s.n; ++k) out[base + k * s.inner] /= z;
    }
  }
  return make_op(x.shape(), std::move(out), {x}, [s](const Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.n * s.inner + i;
        double dot = 0;
        for (std::size_t k = 0; k < s.n; ++k) dot += self.grad[base + k * s.inner] * self.value[base + k * s.inner];
        for (std::size_t k = 0; k < s.n; ++k) {
          const std::size_t j = base + k * s.inner;
          g[j] += self.value[j] * (self.grad[j] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& x, int axis) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), ax);
  const auto& v = x.values();
  std::vector<double> out(v.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.n * s.inner + i;
      double m = -INFINITY;
      for (std::size_t k = 0; k < s.n; ++k) m = std::max(m, v[base + k * s.inner]);
      double z = 0;
      for (std::size_t k = 0; k < s.n; ++k) z += std::exp(v[base + k * s.inner] - m);
      const double lse = m + std::log(z);
      for (std::size_t k = 0; k < s.n; ++k) out[base + k * s.inner] = v[base + k * s.inner] - lse;
    }
  }
  return make_op(x.shape(), std::move(out), {x}, [s](const Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.n * s.inner + i;
        double total = 0;
        for (std::size_t k = 0; k < s.n; ++k) total += self.grad[base + k * s.inner];
        for (std::size_t k = 0; k < s.n; ++k) {
          const std::size_t j = base + k * s.inner;
          g[j] += self.grad[j] - std::exp(self.value[j]) * total;
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, double eps) { return layer_norm(x, Tensor(), Tensor(), eps); }

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() == 0) throw DimensionError("layer_norm needs at least one axis");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / std::max<std::size_t>(n, 1);
  const bool affine = gamma.defined();
  if (affine && (gamma.numel() != n || !beta.defined() || beta.numel() != n)) {
    throw DimensionError("layer_norm affine parameters must have " + std::to_string(n) + " entries");
  }
  const auto& v = x.values();
  auto xhat = std::make_shared<std::vector<double>>(v.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(v.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = v.data() + r * n;
    double mu = 0;
    for (std::size_t k = 0; k < n; ++k) mu += row[k];
    mu /= static_cast<double>(n);
    double var = 0;
    for (std::size_t k = 0; k < n; ++k) var += (row[k] - mu) * (row[k] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t k = 0; k < n; ++k) {
      const double h = (row[k] - mu) * is;
      (*xhat)[r * n + k] = h;
      out[r * n + k] = affine ? h * gamma.values()[k] + beta.values()[k] : h;
    }
  }
  std::vector<Tensor> inputs{x};
  if (affine) {
    inputs.push_back(gamma);
    inputs.push_back(beta);
  }
  return make_op(x.shape(), std::move(out), inputs, [xhat, inv_std, n, rows, affine](const Node& self) {
    const Node& px = *self.parents[0];
    std::vector<double> dxhat(n);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* g = self.grad.data() + r * n;
      const double* h = xhat->data() + r * n;
      for (std::size_t k = 0; k < n; ++k) dxhat[k] = affine ? g[k] * self.parents[1]->value[k] : g[k];
      if (affine) {
        if (self.parents[1]->requires_grad) {
          auto& gg = self.parents[1]->grad_buffer();
          for (std::size_t k = 0; k < n; ++k) gg[k] += g[k] * h[k];
        }
        if (self.parents[2]->requires_grad) {
          auto& gb = self.parents[2]->grad_buffer();
          for (std::size_t k = 0; k < n; ++k) gb[k] += g[k];
        }
      }
      if (px.requires_grad) {
        double m1 = 0, m2 = 0;
        for (std::size_t k = 0; k < n; ++k) {
          m1 += dxhat[k];
          m2 += dxhat[k] * h[k];
        }
        m1 /= static_cast<double>(n);
        m2 /= static_cast<double>(n);
        auto& gx = self.parents[0]->grad_buffer();
        for (std::size_t k = 0; k < n; ++k) gx[r * n + k] += (*inv_std)[r] * (dxhat[k] - m1 - h[k] * m2);
      }
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() != 2 || a.shape().back() != b.dim(0)) {
    throw DimensionError("matmul shapes " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const std::size_t k = b.dim(0), m = b.dim(1);
  const std::size_t n = a.numel() / k;
  const auto& va = a.values();
  const auto& vb = b.values();
  std::vector<double> out(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = va[i * k + p];
      const double* brow = vb.data() + p * m;
      double* orow = out.data() + i * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  Shape shape = a.shape();
  shape.back() = m;
  return make_op(std::move(shape), std::move(out), {a, b}, [n, k, m](const Node& self) {
    const auto& va = self.parents[0]->value;
    const auto& vb = self.parents[1]->value;
    if (self.parents[0]->requires_grad) {
      auto& ga = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0;
          for (std::size_t j = 0; j < m; ++j) acc += self.grad[i * m + j] * vb[p * m + j];
          ga[i * k + p] += acc;
        }
    }
    if (self.parents[1]->requires_grad) {
      auto& gb = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = va[i * k + p];
          for (std::size_t j = 0; j < m; ++j) gb[p * m + j] += av * self.grad[i * m + j];
        }
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() < 1 || weight.rank() != 2 || x.shape().back() != weight.dim(1)) {
    throw DimensionError("linear shapes " + to_string(x.shape()) + " with weight " + to_string(weight.shape()));
  }
  const std::size_t in = weight.dim(1), outf = weight.dim(0);
  const bool has_bias = bias.defined();
  if (has_bias && bias.numel() != outf) throw DimensionError("linear bias size mismatch");
  const std::size_t n = x.numel() / in;
  const auto& vx = x.values();
  const auto& vw = weight.values();
  std::vector<double> out(n * outf);
  for (std::size_t i = 0; i < n; ++i) {
    const double* xr = vx.data() + i * in;
    for (std::size_t o = 0; o < outf; ++o) {
      const double* wr = vw.data() + o * in;
      double acc = has_bias ? bias.values()[o] : 0.0;
      for (std::size_t p = 0; p < in; ++p) acc += xr[p] * wr[p];
      out[i * outf + o] = acc;
    }
  }
  Shape shape = x.shape();
  shape.back() = outf;
  std::vector<Tensor> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_op(std::move(shape), std::move(out), inputs, [n, in, outf, has_bias](const Node& self) {
    const auto& vx = self.parents[0]->value;
    const auto& vw = self.parents[1]->value;
    const bool gx = self.parents[0]->requires_grad;
    const bool gw = self.parents[1]->requires_grad;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t o = 0; o < outf; ++o) {
        const double g = self.grad[i * outf + o];
        if (g == 0.0) continue;
        if (gx) {
          auto& dx = self.parents[0]->grad_buffer();
          for (std::size_t p = 0; p < in; ++p) dx[i * in + p] += g * vw[o * in + p];
        }
        if (gw) {
          auto& dw = self.parents[1]->grad_buffer();
          for (std::size_t p = 0; p < in; ++p) dw[o * in + p] += g * vx[i * in + p];
        }
      }
    }
    if (has_bias && self.parents[2]->requires_grad) {
      auto& db = self.parents[2]->grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < outf; ++o) db[o] += self.grad[i * outf + o];
    }
  });
}

Tensor sum(const Tensor& x) {
  const auto& v = x.values();
  const double total = std::accumulate(v.begin(), v.end(), 0.0);
  return make_op({}, {total}, {x}, [](const Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (auto& gi : g) gi += self.grad[0];
  });
}

Tensor sum(const Tensor& x, int axis, bool keepdim) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), ax);
  const auto& v = x.values();
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t k = 0; k < s.n; ++k)
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += v[(o * s.n + k) * s.inner + i];
  Shape shape = x.shape();
  if (keepdim) {
    shape[ax] = 1;
  } else {
    shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(ax));
  }
  return make_op(std::move(shape), std::move(out), {x}, [s](const Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t k = 0; k < s.n; ++k)
        for (std::size_t i = 0; i < s.inner; ++i) g[(o * s.n + k) * s.inner + i] += self.grad[o * s.inner + i];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(std::max<std::size_t>(x.numel(), 1))); }

Tensor mean(const Tensor& x, int axis, bool keepdim) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  return scale(sum(x, axis, keepdim), 1.0 / static_cast<double>(std::max<std::size_t>(x.dim(ax), 1)));
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const std::size_t ax = normalize_axis(axis, parts[0].rank());
  Shape shape = parts[0].shape();
  std::vector<std::size_t> lengths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != shape.size()) throw DimensionError("concat rank mismatch");
    for (std::size_t d = 0; d < shape.size(); ++d) {
      if (d != ax && p.shape()[d] != shape[d]) {
        throw DimensionError("concat shape mismatch " + to_string(p.shape()) + " vs " + to_string(shape));
      }
    }
    lengths.push_back(p.shape()[ax]);
    total += p.shape()[ax];
  }
  shape[ax] = total;
  const AxisSplit s = split_at(shape, ax);
  std::vector<double> out(numel(shape));
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const auto& v = parts[pi].values();
    const std::size_t len = lengths[pi];
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(v.data() + o * len * s.inner, len * s.inner, out.data() + (o * total + offset) * s.inner);
    offset += len;
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return make_op(std::move(shape), std::move(out), inputs, [lengths, s, total](const Node& self) {
    std::size_t offset = 0;
    for (std::size_t pi = 0; pi < lengths.size(); ++pi) {
      const std::size_t len = lengths[pi];
      if (self.parents[pi]->requires_grad) {
        auto& g = self.parents[pi]->grad_buffer();
        for (std::size_t o = 0; o < s.outer; ++o)
          for (std::size_t j = 0; j < len * s.inner; ++j)
            g[o * len * s.inner + j] += self.grad[(o * total + offset) * s.inner + j];
      }
      offset += len;
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw DimensionError("cannot reshape " + to_string(x.shape()) + " to " + to_string(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_op(std::move(shape), std::move(out), {x}, [](const Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
  const std::size_t r = x.rank();
  if (order.size() != r) throw DimensionError("permute order has wrong length");
  std::vector<bool> seen(r, false);
  for (auto o : order) {
    if (o >= r || seen[o]) throw DimensionError("permute order is not a permutation");
    seen[o] = true;
  }
  const Shape& in = x.shape();
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t d = r; d-- > 1;) in_stride[d - 1] = in_stride[d] * in[d];
  Shape shape(r);
  std::vector<std::size_t> stride(r);
  for (std::size_t d = 0; d < r; ++d) {
    shape[d] = in[order[d]];
    stride[d] = in_stride[order[d]];
  }
  auto map = std::make_shared<std::vector<std::size_t>>(x.numel());
  std::vector<std::size_t> idx(r, 0);
  std::size_t offset = 0;
  for (std::size_t flat = 0; flat < map->size(); ++flat) {
    (*map)[flat] = offset;
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      offset += stride[d];
      if (idx[d] < shape[d]) break;
      offset -= stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  const auto& v = x.values();
  std::vector<double> out(map->size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[(*map)[i]];
  return make_op(std::move(shape), std::move(out), {x}, [map](const Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[(*map)[i]] += self.grad[i];
  });
}

Tensor transpose(const Tensor& x, int axis0, int axis1) {
  std::vector<std::size_t> order(x.rank());
  std::iota(order.begin(), order.end(), 0);
  std::swap(order[normalize_axis(axis0, x.rank())], order[normalize_axis(axis1, x.rank())]);
  return permute(x, order);
}

Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), ax);
  if (start + length > s.n) {
    throw DimensionError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") exceeds axis of size " + std::to_string(s.n));
  }
  Shape shape = x.shape();
  shape[ax] = length;
  const auto& v = x.values();
  std::vector<double> out(numel(shape));
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(v.data() + (o * s.n + start) * s.inner, length * s.inner, out.data() + o * length * s.inner);
  return make_op(std::move(shape), std::move(out), {x}, [s, start, length](const Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t j = 0; j < length * s.inner; ++j)
        g[(o * s.n + start) * s.inner + j] += self.grad[o * length * s.inner + j];
  });
}

Tensor index_select(const Tensor& x, int axis, std::span<const std::size_t> indices) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), ax);
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  for (auto i : idx) {
    if (i >= s.n) throw DimensionError("index_select index " + std::to_string(i) + " out of range");
  }
  Shape shape = x.shape();
  shape[ax] = idx.size();
  const auto& v = x.values();
  std::vector<double> out(numel(shape));
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t k = 0; k < idx.size(); ++k)
      std::copy_n(v.data() + (o * s.n + idx[k]) * s.inner, s.inner, out.data() + (o * idx.size() + k) * s.inner);
  return make_op(std::move(shape), std::move(out), {x}, [s, idx](const Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t k = 0; k < idx.size(); ++k)
        for (std::size_t i = 0; i < s.inner; ++i)
          g[(o * s.n + idx[k]) * s.inner + i] += self.grad[(o * idx.size() + k) * s.inner + i];
  });
}

Tensor pick(const Tensor& x, std::span<const int> indices) {
  if (x.rank() != 2 || indices.size() != x.dim(0)) {
    throw DimensionError("pick expects [B, C] and B indices, got " + to_string(x.shape()));
  }
  const std::size_t b = x.dim(0), c = x.dim(1);
  std::vector<std::size_t> flat(b);
  for (std::size_t i = 0; i < b; ++i) {
    if (indices[i] < 0 || static_cast<std::size_t>(indices[i]) >= c) {
      throw DimensionError("pick index " + std::to_string(indices[i]) + " out of range");
    }
    flat[i] = i * c + static_cast<std::size_t>(indices[i]);
  }
  std::vector<double> out(b);
  for (std::size_t i = 0; i < b; ++i) out[i] = x.values()[flat[i]];
  return make_op({b}, std::move(out), {x}, [flat](const Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < flat.size(); ++i) g[flat[i]] += self.grad[i];
  });
}

Tensor pad_to(const Tensor& x, int axis, std::size_t new_length) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const std::size_t len = x.dim(ax);
  if (new_length < len) throw DimensionError("pad_to cannot shrink an axis");
  if (new_length == len) return x;
  Shape zshape = x.shape();
  zshape[ax] = new_length - len;
  const Tensor parts[] = {x, Tensor::zeros(zshape)};
  return concat(parts, static_cast<int>(ax));
}

Tensor dropout(const Tensor& x, double rate, bool train, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout rate must be in [0, 1)");
  if (!train || rate == 0.0) return x;
  const double keep = 1.0 - rate;
  auto mask = std::make_shared<std::vector<double>>(x.numel());
  for (auto& m : *mask) m = rng.uniform() < keep ? 1.0 / keep : 0.0;
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * (*mask)[i];
  return make_op(x.shape(), std::move(out), {x}, [mask](const Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*mask)[i];
  });
}

Tensor conv1d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  if (input.rank() != 3 || weight.rank() != 3) {
    throw DimensionError("conv1d expects input [B,Cin,T] and weight [Cout,Cin,k]");
  }
  const std::size_t B = input.dim(0), cin = input.dim(1), T = input.dim(2);
  const std::size_t cout = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != cin) {
    throw DimensionError("conv1d channel mismatch: input has " + std::to_string(cin) + ", weight expects " +
                         std::to_string(weight.dim(1)));
  }
  if (stride < 1) throw ContractError("conv1d stride must be >= 1");
  if (k > T + 2 * padding) throw DimensionError("conv1d kernel longer than padded input");
  const bool has_bias = bias.defined();
  if (has_bias && bias.numel() != cout) throw DimensionError("conv1d bias size mismatch");
  const std::size_t tout = (T + 2 * padding - k) / stride + 1;

  // Per-sample im2col: rows index (c, q), columns index t, so each sample is
  // one [Cout, Cin*k] x [Cin*k, Tout] product.
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using ConstMap = Eigen::Map<const RowMatrix>;
  const std::size_t rows = cin * k, block = rows * tout;
  auto col = std::make_shared<std::vector<double>>(B * block);
  const auto& vin = input.values();
  const auto in_range = [T, padding](std::size_t shifted) {
    return shifted >= padding && shifted - padding < T;
  };
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < cin; ++c) {
      const double* src = vin.data() + (b * cin + c) * T;
      for (std::size_t q = 0; q < k; ++q) {
        double* dst = col->data() + b * block + (c * k + q) * tout;
        for (std::size_t t = 0; t < tout; ++t) {
          const std::size_t shifted = t * stride + q;
          dst[t] = in_range(shifted) ? src[shifted - padding] : 0.0;
        }
      }
    }
  const ConstMap w(weight.values().data(), cout, rows);
  std::vector<double> out(B * cout * tout);
  for (std::size_t b = 0; b < B; ++b) {
    Eigen::Map<RowMatrix> y(out.data() + b * cout * tout, cout, tout);
    y.noalias() = w * ConstMap(col->data() + b * block, rows, tout);
    if (has_bias)
      for (std::size_t o = 0; o < cout; ++o) y.row(static_cast<Eigen::Index>(o)).array() += bias.values()[o];
  }

  std::vector<Tensor> inputs{input, weight};
  if (has_bias) inputs.push_back(bias);
  return make_op({B, cout, tout}, std::move(out), inputs,
                 [=](const Node& self) {
                   const bool gi = self.parents[0]->requires_grad;
                   const bool gw = self.parents[1]->requires_grad;
                   const ConstMap wm(self.parents[1]->value.data(), cout, rows);
                   RowMatrix dcol(rows, tout);
                   for (std::size_t b = 0; b < B; ++b) {
                     const ConstMap g(self.grad.data() + b * cout * tout, cout, tout);
                     if (gw) {
                       Eigen::Map<RowMatrix> dw(self.parents[1]->grad_buffer().data(), cout, rows);
                       dw.noalias() += g * ConstMap(col->data() + b * block, rows, tout).transpose();
                     }
                     if (gi) {
                       dcol.noalias() = wm.transpose() * g;
                       double* dst_base = self.parents[0]->grad_buffer().data();
                       for (std::size_t c = 0; c < cin; ++c) {
                         double* dst = dst_base + (b * cin + c) * T;
                         for (std::size_t q = 0; q < k; ++q) {
                           const double* src = dcol.data() + (c * k + q) * tout;
                           for (std::size_t t = 0; t < tout; ++t) {
                             const std::size_t shifted = t * stride + q;
                             if (in_range(shifted)) dst[shifted - padding] += src[t];
                           }
                         }
                       }
                     }
                   }
                   if (has_bias && self.parents[2]->requires_grad) {
                     auto& db = self.parents[2]->grad_buffer();
                     for (std::size_t b = 0; b < B; ++b)
                       for (std::size_t o = 0; o < cout; ++o) {
                         const double* grow = self.grad.data() + (b * cout + o) * tout;
                         double acc = 0;
                         for (std::size_t t = 0; t < tout; ++t) acc += grow[t];
                         db[o] += acc;
                       }
                   }
                 });
}

Tensor gradient_reversal(const Tensor& x, double lambda) {
  if (lambda < 0.0) throw ContractError("gradient_reversal lambda must be >= 0");
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_op(x.shape(), std::move(out), {x}, [lambda](const Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] -= lambda * self.grad[i];
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw DimensionError("cross_entropy expects logits [B, C]");
  return neg(mean(pick(log_softmax(logits, 1), labels)));
}

Tensor binary_cross_entropy_with_logits(const Tensor& logits, std::span<const double> targets) {
  if (targets.size() != logits.numel()) throw DimensionError("binary cross-entropy target count mismatch");
  const std::size_t n = targets.size();
  std::vector<double> y(targets.begin(), targets.end());
  double total = 0;
  const auto& z = logits.values();
  for (std::size_t i = 0; i < n; ++i) {
    // softplus(z) - y z, written to avoid overflow.
    total += std::max(z[i], 0.0) + std::log1p(std::exp(-std::abs(z[i]))) - y[i] * z[i];
  }
  const double inv_n = 1.0 / static_cast<double>(std::max<std::size_t>(n, 1));
  return make_op({}, {total * inv_n}, {logits}, [y, inv_n](const Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    const auto& z = self.parents[0]->value;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * inv_n * (stable_sigmoid(z[i]) - y[i]);
  });
}

Tensor pairwise_sq_dist(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw DimensionError("pairwise_sq_dist expects [n,k] and [m,k], got " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  }
  const std::size_t n = a.dim(0), m = b.dim(0), k = a.dim(1);
  const auto& va = a.values();
  const auto& vb = b.values();
  std::vector<double> out(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0;
      for (std::size_t p = 0; p < k; ++p) {
        const double d = va[i * k + p] - vb[j * k + p];
        acc += d * d;
      }
      out[i * m + j] = acc;
    }
  return make_op({n, m}, std::move(out), {a, b}, [n, m, k](const Node& self) {
    const auto& va = self.parents[0]->value;
    const auto& vb = self.parents[1]->value;
    const bool ga = self.parents[0]->requires_grad;
    const bool gb = self.parents[1]->requires_grad;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        const double g = 2.0 * self.grad[i * m + j];
        if (g == 0.0) continue;
        for (std::size_t p = 0; p < k; ++p) {
          const double d = g * (va[i * k + p] - vb[j * k + p]);
          if (ga) self.parents[0]->grad_buffer()[i * k + p] += d;
          if (gb) self.parents[1]->grad_buffer()[j * k + p] -= d;
        }
      }
  });
}

Tensor l2_normalize(const Tensor& x, int axis, double eps) {
  return div(x, sqrt(add_scalar(sum(square(x), axis, true), eps)));
}

Tensor magnitude(const Tensor& re, const Tensor& im) {
  if (re.shape() != im.shape()) throw DimensionError("magnitude: real/imag shape mismatch");
  std::vector<double> out(re.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::hypot(re.values()[i], im.values()[i]);
  return make_op(re.shape(), std::move(out), {re, im}, [](const Node& self) {
    const auto& a = self.parents[0]->value;
    const auto& b = self.parents[1]->value;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double r = self.value[i];
      if (r < kPolarGuard) continue;
      if (self.parents[0]->requires_grad) self.parents[0]->grad_buffer()[i] += self.grad[i] * a[i] / r;
      if (self.parents[1]->requires_grad) self.parents[1]->grad_buffer()[i] += self.grad[i] * b[i] / r;
    }
  });
}

Tensor phase(const Tensor& re, const Tensor& im) {
  if (re.shape() != im.shape()) throw DimensionError("phase: real/imag shape mismatch");
  std::vector<double> out(re.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double a = re.values()[i], b = im.values()[i];
    out[i] = std::hypot(a, b) < kPolarGuard ? 0.0 : std::atan2(b, a);
  }
  return make_op(re.shape(), std::move(out), {re, im}, [](const Node& self) {
    const auto& a = self.parents[0]->value;
    const auto& b = self.parents[1]->value;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double r = std::hypot(a[i], b[i]);
      if (r < kPolarGuard) continue;
      const double r2 = r * r;
      if (self.parents[0]->requires_grad) self.parents[0]->grad_buffer()[i] += self.grad[i] * (-b[i] / r2);
      if (self.parents[1]->requires_grad) self.parents[1]->grad_buffer()[i] += self.grad[i] * (a[i] / r2);
    }
  });
}

}  // namespace unida
