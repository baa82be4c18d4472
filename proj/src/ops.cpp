// SPDX-License-Identifier: Apache-2.0

#include "mravff/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

namespace mravff::inline MRAVFF_ABI {

namespace {

using RowMat = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

using Node = detail::Node;

Node& in(Node& n, std::size_t i) { return *n.inputs[i]; }
bool wants(Node& n, std::size_t i) { return n.inputs[i]->requires_grad; }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

template <typename Fn>
Tensor unary(const Tensor& x, Fn&& fn, std::function<void(Node&)> backward) {
  std::vector<real> out(x.numel());
  auto d = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fn(d[i]);
  return Tensor::make_result(x.shape(), std::move(out), {x}, std::move(backward));
}

real stable_sigmoid(real v) {
  if (v >= 0) return real(1) / (real(1) + std::exp(-v));
  const real e = std::exp(v);
  return e / (real(1) + e);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& n) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!wants(n, k)) continue;
      auto& g = in(n, k).grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& n) {
    if (wants(n, 0)) {
      auto& g = in(n, 0).grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (wants(n, 1)) {
      auto& g = in(n, 1).grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
    }
  });
}

Tensor multiply(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "multiply");
  std::vector<real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& n) {
    auto& x = in(n, 0);
    auto& y = in(n, 1);
    if (x.requires_grad) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) x.grad[i] += n.grad[i] * y.data[i];
    }
    if (y.requires_grad) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) y.grad[i] += n.grad[i] * x.data[i];
    }
  });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "maximum");
  std::vector<real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(a[i], b[i]);
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& n) {
    auto& x = in(n, 0);
    auto& y = in(n, 1);
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      const bool first = x.data[i] >= y.data[i];
      if (first && x.requires_grad) x.grad[i] += n.grad[i];
      if (!first && y.requires_grad) y.grad[i] += n.grad[i];
    }
  });
}

Tensor scale(const Tensor& x, real factor) {
  return unary(x, [factor](real v) { return v * factor; }, [factor](Node& n) {
    auto& g = in(n, 0).grad;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * n.grad[i];
  });
}

Tensor add_scalar(const Tensor& x, real value) {
  return unary(x, [value](real v) { return v + value; }, [](Node& n) {
    auto& g = in(n, 0).grad;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  });
}

Tensor relu(const Tensor& x) {
  return unary(x, [](real v) { return v > 0 ? v : real(0); }, [](Node& n) {
    auto& src = in(n, 0);
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      if (src.data[i] > 0) src.grad[i] += n.grad[i];
    }
  });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, stable_sigmoid, [](Node& n) {
    auto& g = in(n, 0).grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const real s = n.data[i];
      g[i] += n.grad[i] * s * (real(1) - s);
    }
  });
}

Tensor softplus(const Tensor& x) {
  auto fn = [](real v) {
    return std::max(v, real(0)) + std::log1p(std::exp(-std::abs(v)));
  };
  return unary(x, fn, [](Node& n) {
    auto& src = in(n, 0);
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      src.grad[i] += n.grad[i] * stable_sigmoid(src.data[i]);
    }
  });
}

Tensor sum(const Tensor& x) {
  real s = 0;
  for (real v : x.data()) s += v;
  return Tensor::make_result({1}, {s}, {x}, [](Node& n) {
    auto& g = in(n, 0).grad;
    for (auto& v : g) v += n.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  const real inv = real(1) / static_cast<real>(x.numel());
  real s = 0;
  for (real v : x.data()) s += v;
  return Tensor::make_result({1}, {s * inv}, {x}, [inv](Node& n) {
    auto& g = in(n, 0).grad;
    for (auto& v : g) v += n.grad[0] * inv;
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
  }
  std::vector<real> out(x.data().begin(), x.data().end());
  return Tensor::make_result(std::move(shape), std::move(out), {x}, [](Node& n) {
    auto& g = in(n, 0).grad;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  });
}

Tensor transpose_last2(const Tensor& x) {
  if (x.rank() < 2) {
    throw DimensionError("transpose_last2 needs rank >= 2, got " + shape_str(x.shape()));
  }
  const std::size_t m = x.dim(-2), k = x.dim(-1);
  const std::size_t batch = x.numel() / (m * k);
  Shape shape = x.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  std::vector<real> out(x.numel());
  auto d = x.data();
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t off = b * m * k;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < k; ++j) out[off + j * m + i] = d[off + i * k + j];
    }
  }
  return Tensor::make_result(std::move(shape), std::move(out), {x}, [m, k, batch](Node& n) {
    auto& g = in(n, 0).grad;
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t off = b * m * k;
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < k; ++j) g[off + i * k + j] += n.grad[off + j * m + i];
      }
    }
  });
}

Tensor concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  Shape shape = parts[0].shape();
  const Shape tail(shape.begin() + 1, shape.end());
  std::size_t rows = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != shape.size() || !std::equal(tail.begin(), tail.end(), s.begin() + 1)) {
      throw DimensionError("concat: trailing dims of " + shape_str(s) + " differ from " +
                           shape_str(shape));
    }
    rows += s[0];
  }
  shape[0] = rows;
  std::vector<real> out;
  out.reserve(shape_numel(shape));
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(out.size());
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return Tensor::make_result(std::move(shape), std::move(out), std::move(inputs),
                             [offsets](Node& n) {
                               for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                                 if (!wants(n, k)) continue;
                                 auto& g = in(n, k).grad;
                                 for (std::size_t i = 0; i < g.size(); ++i) {
                                   g[i] += n.grad[offsets[k] + i];
                                 }
                               }
                             });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= x.rank() || begin >= end || end > x.shape()[axis]) {
    throw DimensionError("slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") on axis " + std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  const Shape& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t full = s[axis], len = end - begin;
  Shape shape = s;
  shape[axis] = len;
  std::vector<real> out(outer * len * inner);
  auto d = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(d.begin() + static_cast<std::ptrdiff_t>((o * full + begin) * inner), len * inner,
                out.begin() + static_cast<std::ptrdiff_t>(o * len * inner));
  }
  return Tensor::make_result(std::move(shape), std::move(out), {x},
                             [outer, inner, full, begin, len](Node& n) {
                               auto& g = in(n, 0).grad;
                               for (std::size_t o = 0; o < outer; ++o) {
                                 for (std::size_t i = 0; i < len * inner; ++i) {
                                   g[(o * full + begin) * inner + i] += n.grad[o * len * inner + i];
                                 }
                               }
                             });
}

Tensor mul_columns(const Tensor& x, const Tensor& w) {
  if (x.rank() != 2 || w.rank() != 1 || w.dim(0) != x.dim(1)) {
    throw DimensionError("mul_columns: " + shape_str(x.shape()) + " vs weights " +
                         shape_str(w.shape()));
  }
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<real> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = x[r * cols + c] * w[c];
  }
  return Tensor::make_result(x.shape(), std::move(out), {x, w}, [rows, cols](Node& n) {
    auto& xs = in(n, 0);
    auto& ws = in(n, 1);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const real g = n.grad[r * cols + c];
        if (xs.requires_grad) xs.grad[r * cols + c] += g * ws.data[c];
        if (ws.requires_grad) ws.grad[c] += g * xs.data[r * cols + c];
      }
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw DimensionError("matmul needs rank >= 2: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(-2), k = a.dim(-1), k2 = b.dim(-2), n_cols = b.dim(-1);
  const Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  const Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  const bool batch_ok = batch_a == batch_b || batch_a.empty() || batch_b.empty();
  if (k != k2 || !batch_ok) {
    throw DimensionError("matmul shape mismatch: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const Shape& batch = batch_a.empty() ? batch_b : batch_a;
  const std::size_t nb = shape_numel(batch);
  const std::size_t stride_a = batch_a.empty() ? 0 : m * k;
  const std::size_t stride_b = batch_b.empty() ? 0 : k * n_cols;
  Shape shape = batch;
  shape.push_back(m);
  shape.push_back(n_cols);
  std::vector<real> out(nb * m * n_cols);
  for (std::size_t i = 0; i < nb; ++i) {
    ConstMapMat A(a.data().data() + i * stride_a, long(m), long(k));
    ConstMapMat B(b.data().data() + i * stride_b, long(k), long(n_cols));
    MapMat C(out.data() + i * m * n_cols, long(m), long(n_cols));
    C.noalias() = A * B;
  }
  return Tensor::make_result(
      std::move(shape), std::move(out), {a, b}, [=](Node& n) {
        auto& an = in(n, 0);
        auto& bn = in(n, 1);
        for (std::size_t i = 0; i < nb; ++i) {
          ConstMapMat dC(n.grad.data() + i * m * n_cols, long(m), long(n_cols));
          if (an.requires_grad) {
            ConstMapMat B(bn.data.data() + i * stride_b, long(k), long(n_cols));
            MapMat dA(an.grad.data() + i * stride_a, long(m), long(k));
            dA.noalias() += dC * B.transpose();
          }
          if (bn.requires_grad) {
            ConstMapMat A(an.data.data() + i * stride_a, long(m), long(k));
            MapMat dB(bn.grad.data() + i * stride_b, long(k), long(n_cols));
            dB.noalias() += A.transpose() * dC;
          }
        }
      });
}

Tensor softmax_lastdim(const Tensor& x, std::optional<std::size_t> valid) {
  const std::size_t d = x.dim(-1);
  const std::size_t rows = x.numel() / d;
  const std::size_t active = valid ? *valid : d;
  if (active == 0 || active > d) {
    throw DimensionError("softmax valid length " + std::to_string(active) +
                         " outside [1, " + std::to_string(d) + "]");
  }
  std::vector<real> out(x.numel(), real(0));
  auto src = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const real* row = src.data() + r * d;
    real* dst = out.data() + r * d;
    const real mx = *std::max_element(row, row + active);
    real total = 0;
    for (std::size_t j = 0; j < active; ++j) {
      dst[j] = std::exp(row[j] - mx);
      total += dst[j];
    }
    for (std::size_t j = 0; j < active; ++j) dst[j] /= total;
  }
  return Tensor::make_result(x.shape(), std::move(out), {x}, [rows, d, active](Node& n) {
    auto& g = in(n, 0).grad;
    for (std::size_t r = 0; r < rows; ++r) {
      const real* y = n.data.data() + r * d;
      const real* dy = n.grad.data() + r * d;
      real dot = 0;
      for (std::size_t j = 0; j < active; ++j) dot += dy[j] * y[j];
      for (std::size_t j = 0; j < active; ++j) g[r * d + j] += y[j] * (dy[j] - dot);
    }
  });
}

std::size_t conv1d_out_len(std::size_t len, std::size_t kernel, std::size_t stride,
                           std::size_t padding) {
  if (len + 2 * padding < kernel) return 0;
  return (len + 2 * padding - kernel) / stride + 1;
}

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  if (x.rank() != 2 || w.rank() != 3 || bias.rank() != 1) {
    throw DimensionError("conv1d expects x[C_in,T], w[C_out,C_in,k], bias[C_out]; got " +
                         shape_str(x.shape()) + ", " + shape_str(w.shape()) + ", " +
                         shape_str(bias.shape()));
  }
  const std::size_t cin = x.dim(0), len = x.dim(1);
  const std::size_t cout = w.dim(0), kernel = w.dim(2);
  if (kernel % 2 == 0) throw ConfigError("conv1d kernel size must be odd, got " + std::to_string(kernel));
  if (stride == 0) throw ConfigError("conv1d stride must be positive");
  if (w.dim(1) != cin || bias.dim(0) != cout) {
    throw DimensionError("conv1d channel mismatch: x " + shape_str(x.shape()) + ", w " +
                         shape_str(w.shape()) + ", bias " + shape_str(bias.shape()));
  }
  const std::size_t tout = conv1d_out_len(len, kernel, stride, padding);
  if (tout == 0) {
    throw DimensionError("conv1d produces empty output for input " + shape_str(x.shape()) +
                         " with kernel " + std::to_string(kernel));
  }
  const std::size_t ck = cin * kernel;

  // im2col: cols[ci*k + j, t] = x[ci, t*stride + j - padding]
  auto cols = std::make_shared<std::vector<real>>(ck * tout, real(0));
  auto xd = x.data();
  for (std::size_t ci = 0; ci < cin; ++ci) {
    for (std::size_t j = 0; j < kernel; ++j) {
      real* row = cols->data() + (ci * kernel + j) * tout;
      for (std::size_t t = 0; t < tout; ++t) {
        const std::ptrdiff_t pos = std::ptrdiff_t(t * stride + j) - std::ptrdiff_t(padding);
        if (pos >= 0 && pos < std::ptrdiff_t(len)) row[t] = xd[ci * len + std::size_t(pos)];
      }
    }
  }
  std::vector<real> out(cout * tout);
  {
    ConstMapMat W(w.data().data(), long(cout), long(ck));
    ConstMapMat C(cols->data(), long(ck), long(tout));
    MapMat O(out.data(), long(cout), long(tout));
    O.noalias() = W * C;
    for (std::size_t co = 0; co < cout; ++co) O.row(long(co)).array() += bias[co];
  }
  return Tensor::make_result(
      {cout, tout}, std::move(out), {x, w, bias},
      [=](Node& n) {
        ConstMapMat dO(n.grad.data(), long(cout), long(tout));
        auto& xn = in(n, 0);
        auto& wn = in(n, 1);
        auto& bn = in(n, 2);
        if (wn.requires_grad) {
          ConstMapMat C(cols->data(), long(ck), long(tout));
          MapMat dW(wn.grad.data(), long(cout), long(ck));
          dW.noalias() += dO * C.transpose();
        }
        if (bn.requires_grad) {
          for (std::size_t co = 0; co < cout; ++co) bn.grad[co] += dO.row(long(co)).sum();
        }
        if (xn.requires_grad) {
          ConstMapMat W(wn.data.data(), long(cout), long(ck));
          RowMat dC = W.transpose() * dO;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            for (std::size_t j = 0; j < kernel; ++j) {
              const real* row = dC.data() + (ci * kernel + j) * tout;
              for (std::size_t t = 0; t < tout; ++t) {
                const std::ptrdiff_t pos =
                    std::ptrdiff_t(t * stride + j) - std::ptrdiff_t(padding);
                if (pos >= 0 && pos < std::ptrdiff_t(len)) {
                  xn.grad[ci * len + std::size_t(pos)] += row[t];
                }
              }
            }
          }
        }
      });
}

Tensor maxpool1d(const Tensor& x, std::size_t kernel, std::size_t stride, std::size_t padding) {
  if (x.rank() != 2) throw DimensionError("maxpool1d expects [C, T], got " + shape_str(x.shape()));
  if (kernel == 0 || stride == 0) throw ConfigError("maxpool1d kernel and stride must be positive");
  const std::size_t ch = x.dim(0), len = x.dim(1);
  const std::size_t tout = conv1d_out_len(len, kernel, stride, padding);
  if (tout == 0) {
    throw DimensionError("maxpool1d produces empty output for input " + shape_str(x.shape()));
  }
  auto argmax = std::make_shared<std::vector<std::size_t>>(ch * tout);
  std::vector<real> out(ch * tout);
  auto d = x.data();
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t t = 0; t < tout; ++t) {
      real best = -std::numeric_limits<real>::infinity();
      std::size_t best_idx = 0;
      bool found = false;
      for (std::size_t j = 0; j < kernel; ++j) {
        const std::ptrdiff_t pos = std::ptrdiff_t(t * stride + j) - std::ptrdiff_t(padding);
        if (pos < 0 || pos >= std::ptrdiff_t(len)) continue;
        const real v = d[c * len + std::size_t(pos)];
        if (!found || v > best) {
          best = v;
          best_idx = std::size_t(pos);
          found = true;
        }
      }
      out[c * tout + t] = best;
      (*argmax)[c * tout + t] = c * len + best_idx;
    }
  }
  return Tensor::make_result({ch, tout}, std::move(out), {x}, [argmax](Node& n) {
    auto& g = in(n, 0).grad;
    for (std::size_t i = 0; i < n.grad.size(); ++i) g[(*argmax)[i]] += n.grad[i];
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, real eps) {
  const std::size_t d = x.dim(-1);
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw DimensionError("layer_norm: gamma " + shape_str(gamma.shape()) + " / beta " +
                         shape_str(beta.shape()) + " do not match last dim of " +
                         shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  auto xhat = std::make_shared<std::vector<real>>(x.numel());
  auto inv_std = std::make_shared<std::vector<real>>(rows);
  std::vector<real> out(x.numel());
  auto src = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const real* row = src.data() + r * d;
    real mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= real(d);
    real var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= real(d);
    const real inv = real(1) / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const real h = (row[j] - mu) * inv;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gamma[j] + beta[j];
    }
  }
  return Tensor::make_result(x.shape(), std::move(out), {x, gamma, beta},
                             [=](Node& n) {
                               auto& xn = in(n, 0);
                               auto& gn = in(n, 1);
                               auto& bn = in(n, 2);
                               std::vector<real> dxhat(d);
                               for (std::size_t r = 0; r < rows; ++r) {
                                 const real* dy = n.grad.data() + r * d;
                                 const real* h = xhat->data() + r * d;
                                 real s1 = 0, s2 = 0;
                                 for (std::size_t j = 0; j < d; ++j) {
                                   if (gn.requires_grad) gn.grad[j] += dy[j] * h[j];
                                   if (bn.requires_grad) bn.grad[j] += dy[j];
                                   dxhat[j] = dy[j] * gn.data[j];
                                   s1 += dxhat[j];
                                   s2 += dxhat[j] * h[j];
                                 }
                                 if (!xn.requires_grad) continue;
                                 const real k = (*inv_std)[r] / real(d);
                                 for (std::size_t j = 0; j < d; ++j) {
                                   xn.grad[r * d + j] +=
                                       k * (real(d) * dxhat[j] - s1 - h[j] * s2);
                                 }
                               }
                             });
}

}  // namespace mravff
