#include "hpt/hist.hpp"

#include <cmath>
#include <vector>

#include "op_common.hpp"

namespace hpt {

using detail::record;
using detail::tracing;

namespace {

std::size_t checked_bins(std::size_t bins, std::size_t dim) {
  if (bins == 0 || dim == 0 || dim % bins != 0) {
    throw ConfigError("histogram: bins " + std::to_string(bins) + " must divide dim " +
                      std::to_string(dim));
  }
  return bins;
}

}  // namespace

HistogramLayer::HistogramLayer(const std::string& prefix, std::size_t bins, std::size_t dim)
    : bins(checked_bins(bins, dim)),
      dim(dim),
      proj_weight(prefix + ".proj", Tensor(Shape{bins, dim}, 0.0)),
      centers(prefix + ".centers", Tensor(Shape{bins}, 0.0)),
      widths(prefix + ".widths", Tensor(Shape{bins}, 0.0)) {}

Tensor hist_project(const HistogramLayer& h, const Tensor& x) {
  if (x.rank() != 2 || x.extent(1) != h.dim) {
    throw ShapeError("hist_project: expected [N x " + std::to_string(h.dim) + "], got " +
                     shape_str(x.shape()));
  }
  return matmul(x, transpose(h.proj_weight.value));
}

Tensor hist_rbf(const HistogramLayer& h, const Tensor& v) {
  if (v.rank() != 2 || v.extent(1) != h.bins) {
    throw ShapeError("hist_rbf: expected [N x " + std::to_string(h.bins) + "], got " +
                     shape_str(v.shape()));
  }
  const std::size_t n = v.extent(0);
  Tensor diff = sub(v, broadcast_rows(h.centers.value, n));
  Tensor gamma_sq = broadcast_rows(square(h.widths.value), n);
  return exp(neg(mul(square(diff), gamma_sq)));
}

Tensor hist_normalize(const HistogramLayer& h, const Tensor& y) {
  if (y.rank() != 2 || y.extent(1) != h.bins) {
    throw ShapeError("hist_normalize: expected [N x " + std::to_string(h.bins) + "], got " +
                     shape_str(y.shape()));
  }
  const std::size_t n = y.extent(0), b = h.bins;
  const double eps = h.eps;
  const auto yv = y.values();
  std::vector<double> denom(n);
  std::vector<double> out(n * b);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < b; ++j) s += yv[i * b + j];
    denom[i] = s + eps;
    for (std::size_t j = 0; j < b; ++j) out[i * b + j] = yv[i * b + j] / denom[i];
  }
  Tensor res(y.shape(), std::move(out));
  if (tracing(y)) {
    auto yn = y.node(), on = res.node();
    record(res, [yn, on, n, b, denom = std::move(denom)] {
      if (on->grad.empty()) return;
      if (!yn->requires_grad) return;
      auto& gy = yn->ensure_grad();
      // d r[i,j] / d y[i,k] = (δ_jk − r[i,j]) / denom_i applied to upstream g:
      // gy[i,k] += (g[i,k] − Σ_j g[i,j]·r[i,j]) / denom_i
      for (std::size_t i = 0; i < n; ++i) {
        double dot = 0;
        for (std::size_t j = 0; j < b; ++j) dot += on->grad[i * b + j] * on->data[i * b + j];
        for (std::size_t k = 0; k < b; ++k) {
          gy[i * b + k] += (on->grad[i * b + k] - dot) / denom[i];
        }
      }
    });
  }
  return res;
}

namespace {

// Adaptive pooling window l over a sequence of length n: [⌊l·n/L⌋, ⌈(l+1)·n/L⌉).
inline std::size_t win_begin(std::size_t l, std::size_t n, std::size_t pool) {
  return (l * n) / pool;
}
inline std::size_t win_end(std::size_t l, std::size_t n, std::size_t pool) {
  return ((l + 1) * n + pool - 1) / pool;
}

}  // namespace

Tensor hist_pool_broadcast(const HistogramLayer& h, const Tensor& r) {
  if (r.rank() != 2 || r.extent(1) != h.bins) {
    throw ShapeError("hist_pool_broadcast: expected [N x " + std::to_string(h.bins) + "], got " +
                     shape_str(r.shape()));
  }
  const std::size_t n = r.extent(0), b = h.bins, pool = h.pool_len(), d = h.dim;
  const auto rv = r.values();
  std::vector<double> summary(d);
  for (std::size_t c = 0; c < b; ++c) {
    for (std::size_t l = 0; l < pool; ++l) {
      const std::size_t lo = win_begin(l, n, pool), hi = win_end(l, n, pool);
      double s = 0;
      for (std::size_t i = lo; i < hi; ++i) s += rv[i * b + c];
      summary[c * pool + l] = s / static_cast<double>(hi - lo);
    }
  }
  std::vector<double> out(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = summary[j];
  }
  Tensor res(Shape{n, d}, std::move(out));
  if (tracing(r)) {
    auto rn = r.node(), on = res.node();
    record(res, [rn, on, n, b, pool, d] {
      if (on->grad.empty()) return;
      if (!rn->requires_grad) return;
      auto& gr = rn->ensure_grad();
      for (std::size_t c = 0; c < b; ++c) {
        for (std::size_t l = 0; l < pool; ++l) {
          const std::size_t lo = win_begin(l, n, pool), hi = win_end(l, n, pool);
          double gsum = 0;
          for (std::size_t i = 0; i < n; ++i) gsum += on->grad[i * d + c * pool + l];
          const double share = gsum / static_cast<double>(hi - lo);
          for (std::size_t i = lo; i < hi; ++i) gr[i * b + c] += share;
        }
      }
    });
  }
  return res;
}

Tensor hist_forward(const HistogramLayer& h, const Tensor& x) {
  return hist_pool_broadcast(h, hist_normalize(h, hist_rbf(h, hist_project(h, x))));
}

void hist_init(HistogramLayer& h, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(h.dim));
  for (double& w : h.proj_weight.value.values()) w = rng.uniform(-bound, bound);
  for (double& c : h.centers.value.values()) c = rng.uniform(-bound, bound);
  for (double& g : h.widths.value.values()) g = rng.uniform(-1.0, 1.0);
}

}  // namespace hpt
