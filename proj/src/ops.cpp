#include "hpt/ops.hpp"

#include <Eigen/Core>

#include "op_common.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <utility>

namespace hpt {

namespace testhook {
namespace {
std::atomic<bool> g_backward_fault{false};
}
void set_backward_fault(bool on) { g_backward_fault.store(on); }
bool backward_fault() { return g_backward_fault.load(); }
}  // namespace testhook

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const EMat>;
using MutMap = Eigen::Map<EMat>;

ConstMap map2d(const TensorNode& n) {
  return ConstMap(n.data.data(), static_cast<Eigen::Index>(n.shape[0]),
                  static_cast<Eigen::Index>(n.shape[1]));
}

using detail::record;
using detail::tracing;

void require_same_extent2(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
  }
}

// (outer, extent, inner) decomposition of a row-major tensor around one axis.
struct AxisView {
  std::size_t outer, extent, inner;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
  AxisView v{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

enum class BinKind { Add, Sub, Mul };

Tensor binary_op(const Tensor& a, const Tensor& b, BinKind kind, const char* name) {
  const bool a_scalar = a.size() == 1;
  const bool b_scalar = b.size() == 1;
  if (a.shape() != b.shape() && !a_scalar && !b_scalar) {
    throw ShapeError(std::string(name) + ": incompatible shapes " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  }
  const Tensor& big = (a_scalar && !b_scalar) ? b : a;
  const std::size_t n = big.size();
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = a_scalar ? av[0] : av[i];
    const double y = b_scalar ? bv[0] : bv[i];
    out[i] = kind == BinKind::Add ? x + y : kind == BinKind::Sub ? x - y : x * y;
  }
  Tensor res(big.shape(), std::move(out));
  if (tracing(a, b)) {
    auto an = a.node(), bn = b.node(), on = res.node();
    record(res, [an, bn, on, a_scalar, b_scalar, kind] {
      if (on->grad.empty()) return;
      const auto& g = on->grad;
      if (an->requires_grad) {
        auto& ga = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double y = b_scalar ? bn->data[0] : bn->data[i];
          const double d = kind == BinKind::Mul ? g[i] * y : g[i];
          ga[a_scalar ? 0 : i] += d;
        }
      }
      if (bn->requires_grad) {
        auto& gb = bn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double x = a_scalar ? an->data[0] : an->data[i];
          double d = g[i];
          if (kind == BinKind::Sub) d = -d;
          if (kind == BinKind::Mul) d = g[i] * x;
          gb[b_scalar ? 0 : i] += d;
        }
      }
    });
  }
  return res;
}

Tensor unary_op(const Tensor& x, double (*f)(double), double (*df)(double, double)) {
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  Tensor res(x.shape(), std::move(out));
  if (tracing(x)) {
    auto xn = x.node(), on = res.node();
    record(res, [xn, on, df] {
      if (on->grad.empty()) return;
      auto& gx = xn->ensure_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) {
        gx[i] += on->grad[i] * df(xn->data[i], on->data[i]);
      }
    });
  }
  return res;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::Mul, "mul"); }

Tensor neg(const Tensor& x) {
  return unary_op(
      x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor exp(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor square(const Tensor& x) {
  return unary_op(
      x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor scale(const Tensor& x, double c) {
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * xv[i];
  Tensor res(x.shape(), std::move(out));
  if (tracing(x)) {
    auto xn = x.node(), on = res.node();
    record(res, [xn, on, c] {
      if (on->grad.empty()) return;
      auto& gx = xn->ensure_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += c * on->grad[i];
    });
  }
  return res;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  Tensor res(Shape{m, n}, 0.0);
  {
    MutMap c(res.values().data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    c.noalias() = map2d(*a.node()) * map2d(*b.node());
  }
  if (tracing(a, b)) {
    auto an = a.node(), bn = b.node(), on = res.node();
    record(res, [an, bn, on, m, k, n] {
      if (on->grad.empty()) return;
      ConstMap g(on->grad.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
      const double fault = testhook::backward_fault() ? 1.01 : 1.0;
      if (an->requires_grad) {
        MutMap ga(an->ensure_grad().data(), static_cast<Eigen::Index>(m),
                  static_cast<Eigen::Index>(k));
        ga.noalias() += fault * (g * map2d(*bn).transpose());
      }
      if (bn->requires_grad) {
        MutMap gb(bn->ensure_grad().data(), static_cast<Eigen::Index>(k),
                  static_cast<Eigen::Index>(n));
        gb.noalias() += fault * (map2d(*an).transpose() * g);
      }
    });
  }
  return res;
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("transpose wants rank-2, got " + shape_str(x.shape()));
  const std::size_t m = x.extent(0), n = x.extent(1);
  std::vector<double> out(m * n);
  const auto xv = x.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = xv[i * n + j];
  Tensor res(Shape{n, m}, std::move(out));
  if (tracing(x)) {
    auto xn = x.node(), on = res.node();
    record(res, [xn, on, m, n] {
      if (on->grad.empty()) return;
      auto& gx = xn->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += on->grad[j * m + i];
    });
  }
  return res;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                     " changes element count");
  }
  Tensor res(std::move(shape), std::vector<double>(x.values().begin(), x.values().end()));
  if (tracing(x)) {
    auto xn = x.node(), on = res.node();
    record(res, [xn, on] {
      if (on->grad.empty()) return;
      auto& gx = xn->ensure_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += on->grad[i];
    });
  }
  return res;
}

Tensor broadcast_rows(const Tensor& v, std::size_t rows) {
  if (v.rank() != 1) throw ShapeError("broadcast_rows wants rank-1, got " + shape_str(v.shape()));
  if (rows == 0) throw ShapeError("broadcast_rows wants rows >= 1");
  const std::size_t d = v.extent(0);
  std::vector<double> out(rows * d);
  const auto vv = v.values();
  for (std::size_t r = 0; r < rows; ++r) std::copy(vv.begin(), vv.end(), out.begin() + r * d);
  Tensor res(Shape{rows, d}, std::move(out));
  if (tracing(v)) {
    auto vn = v.node(), on = res.node();
    record(res, [vn, on, rows, d] {
      if (on->grad.empty()) return;
      auto& gv = vn->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) gv[j] += on->grad[r * d + j];
    });
  }
  return res;
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  if (x.rank() != 2) throw ShapeError("slice_rows wants rank-2, got " + shape_str(x.shape()));
  const std::size_t m = x.extent(0), n = x.extent(1);
  if (count == 0 || begin + count > m) {
    throw ShapeError("slice_rows [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of range for " + shape_str(x.shape()));
  }
  const auto xv = x.values();
  std::vector<double> out(xv.begin() + begin * n, xv.begin() + (begin + count) * n);
  Tensor res(Shape{count, n}, std::move(out));
  if (tracing(x)) {
    auto xn = x.node(), on = res.node();
    record(res, [xn, on, begin, count, n] {
      if (on->grad.empty()) return;
      auto& gx = xn->ensure_grad();
      for (std::size_t i = 0; i < count * n; ++i) gx[begin * n + i] += on->grad[i];
    });
  }
  return res;
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  if (x.rank() != 2) throw ShapeError("slice_cols wants rank-2, got " + shape_str(x.shape()));
  const std::size_t m = x.extent(0), n = x.extent(1);
  if (count == 0 || begin + count > n) {
    throw ShapeError("slice_cols [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of range for " + shape_str(x.shape()));
  }
  const auto xv = x.values();
  std::vector<double> out(m * count);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = xv[i * n + begin + j];
  Tensor res(Shape{m, count}, std::move(out));
  if (tracing(x)) {
    auto xn = x.node(), on = res.node();
    record(res, [xn, on, begin, count, m, n] {
      if (on->grad.empty()) return;
      auto& gx = xn->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < count; ++j)
          gx[i * n + begin + j] += on->grad[i * count + j];
    });
  }
  return res;
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols wants at least one part");
  const std::size_t m = parts[0].extent(0);
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != 2 || p.extent(0) != m) {
      throw ShapeError("concat_cols: row mismatch, " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    }
    total += p.extent(1);
  }
  std::vector<double> out(m * total);
  std::size_t col = 0;
  for (const Tensor& p : parts) {
    const std::size_t w = p.extent(1);
    const auto pv = p.values();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) out[i * total + col + j] = pv[i * w + j];
    col += w;
  }
  Tensor res(Shape{m, total}, std::move(out));
  bool any = false;
  for (const Tensor& p : parts) any = any || p.requires_grad();
  if (Tape::active() && any) {
    std::vector<std::shared_ptr<TensorNode>> nodes;
    nodes.reserve(parts.size());
    for (const Tensor& p : parts) nodes.push_back(p.node());
    auto on = res.node();
    record(res, [nodes = std::move(nodes), on, m, total] {
      if (on->grad.empty()) return;
      std::size_t col = 0;
      for (const auto& pn : nodes) {
        const std::size_t w = pn->shape[1];
        if (pn->requires_grad) {
          auto& gp = pn->ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += on->grad[i * total + col + j];
        }
        col += w;
      }
    });
  }
  return res;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  require_same_extent2(x, axis);
  const AxisView v = axis_view(x.shape(), axis);
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.extent * v.inner + i;
      double mx = xv[base];
      for (std::size_t k = 1; k < v.extent; ++k) mx = std::max(mx, xv[base + k * v.inner]);
      double s = 0.0;
      for (std::size_t k = 0; k < v.extent; ++k) {
        const double e = std::exp(xv[base + k * v.inner] - mx);
        out[base + k * v.inner] = e;
        s += e;
      }
      for (std::size_t k = 0; k < v.extent; ++k) out[base + k * v.inner] /= s;
    }
  }
  Tensor res(x.shape(), std::move(out));
  if (tracing(x)) {
    auto xn = x.node(), on = res.node();
    record(res, [xn, on, v] {
      if (on->grad.empty()) return;
      auto& gx = xn->ensure_grad();
      const auto& g = on->grad;
      const auto& s = on->data;
      for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t i = 0; i < v.inner; ++i) {
          const std::size_t base = o * v.extent * v.inner + i;
          double dot = 0.0;
          for (std::size_t k = 0; k < v.extent; ++k) {
            const std::size_t idx = base + k * v.inner;
            dot += g[idx] * s[idx];
          }
          for (std::size_t k = 0; k < v.extent; ++k) {
            const std::size_t idx = base + k * v.inner;
            gx[idx] += s[idx] * (g[idx] - dot);
          }
        }
      }
    });
  }
  return res;
}

namespace {

Tensor reduce_axis(const Tensor& x, std::size_t axis, bool mean) {
  require_same_extent2(x, axis);
  const AxisView v = axis_view(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  const double w = mean ? 1.0 / static_cast<double>(v.extent) : 1.0;
  const auto xv = x.values();
  std::vector<double> out(v.outer * v.inner, 0.0);
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < v.extent; ++k) s += xv[(o * v.extent + k) * v.inner + i];
      out[o * v.inner + i] = s * w;
    }
  }
  Tensor res(std::move(out_shape), std::move(out));
  if (tracing(x)) {
    auto xn = x.node(), on = res.node();
    record(res, [xn, on, v, w] {
      if (on->grad.empty()) return;
      auto& gx = xn->ensure_grad();
      for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t i = 0; i < v.inner; ++i) {
          const double d = on->grad[o * v.inner + i] * w;
          for (std::size_t k = 0; k < v.extent; ++k) gx[(o * v.extent + k) * v.inner + i] += d;
        }
    });
  }
  return res;
}

}  // namespace

Tensor reduce_mean(const Tensor& x, std::size_t axis) { return reduce_axis(x, axis, true); }
Tensor reduce_sum(const Tensor& x, std::size_t axis) { return reduce_axis(x, axis, false); }

Tensor sum(const Tensor& x) {
  const auto xv = x.values();
  double s = 0.0;
  for (double v : xv) s += v;
  Tensor res = Tensor::scalar(s);
  if (tracing(x)) {
    auto xn = x.node(), on = res.node();
    record(res, [xn, on] {
      if (on->grad.empty()) return;
      auto& gx = xn->ensure_grad();
      for (double& g : gx) g += on->grad[0];
    });
  }
  return res;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() != 2) throw ShapeError("layer_norm wants rank-2 input, got " + shape_str(x.shape()));
  const std::size_t n = x.extent(0), d = x.extent(1);
  if (gain.rank() != 1 || gain.extent(0) != d || bias.rank() != 1 || bias.extent(0) != d) {
    throw ShapeError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " +
                     shape_str(bias.shape()) + " do not match input " + shape_str(x.shape()));
  }
  if (!(eps > 0.0)) throw ValueError("layer_norm eps must be positive");
  const auto xv = x.values();
  const auto gv = gain.values();
  const auto bv = bias.values();
  std::vector<double> out(n * d);
  std::vector<double> centered(n * d);
  std::vector<double> inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    double m = 0.0;
    for (std::size_t j = 0; j < d; ++j) m += xv[i * d + j];
    m /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xv[i * d + j] - m;
      centered[i * d + j] = c;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[i] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      out[i * d + j] = gv[j] * centered[i * d + j] * inv + bv[j];
    }
  }
  Tensor res(x.shape(), std::move(out));
  if (Tape::active() && (x.requires_grad() || gain.requires_grad() || bias.requires_grad())) {
    auto xn = x.node(), gn = gain.node(), bn = bias.node(), on = res.node();
    record(res, [xn, gn, bn, on, n, d, centered = std::move(centered),
                 inv_std = std::move(inv_std)] {
      if (on->grad.empty()) return;
      const auto& g = on->grad;
      if (gn->requires_grad) {
        auto& gg = gn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j)
            gg[j] += g[i * d + j] * centered[i * d + j] * inv_std[i];
      }
      if (bn->requires_grad) {
        auto& gb = bn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
      }
      if (xn->requires_grad) {
        auto& gx = xn->ensure_grad();
        const double dd = static_cast<double>(d);
        for (std::size_t i = 0; i < n; ++i) {
          const double inv = inv_std[i];
          double dvar = 0.0, dmean_a = 0.0, csum = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dxh = g[i * d + j] * gn->data[j];
            const double c = centered[i * d + j];
            dvar += dxh * c;
            dmean_a += dxh;
            csum += c;
          }
          dvar *= -0.5 * inv * inv * inv;
          const double dmean = -dmean_a * inv + dvar * (-2.0 * csum / dd);
          for (std::size_t j = 0; j < d; ++j) {
            const double dxh = g[i * d + j] * gn->data[j];
            gx[i * d + j] += dxh * inv + dvar * 2.0 * centered[i * d + j] / dd + dmean / dd;
          }
        }
      }
    });
  }
  return res;
}

}  // namespace hpt
