#include "hpt/nn.hpp"

#include <cmath>
#include <vector>

#include "op_common.hpp"

namespace hpt {

using detail::record;
using detail::tracing;

Linear::Linear(const std::string& name, std::size_t out_features, std::size_t in_features)
    : weight(name + ".weight", Tensor(Shape{out_features, in_features}, 0.0)),
      bias(name + ".bias", Tensor(Shape{out_features}, 0.0)) {}

Tensor linear_forward(const Linear& l, const Tensor& x) {
  if (x.rank() != 2 || x.extent(1) != l.in_features()) {
    throw ShapeError("linear_forward: input " + shape_str(x.shape()) + " does not match weight " +
                     shape_str(l.weight.value.shape()));
  }
  Tensor y = matmul(x, transpose(l.weight.value));
  return add(y, broadcast_rows(l.bias.value, x.extent(0)));
}

void kaiming_uniform_init(Linear& l, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(l.in_features()));
  for (double& w : l.weight.value.values()) w = rng.uniform(-bound, bound);
  for (double& b : l.bias.value.values()) b = rng.uniform(-bound, bound);
}

Tensor gelu(const Tensor& x) {
  const auto xv = x.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = xv[i] * 0.5 * std::erfc(-xv[i] * M_SQRT1_2);
  }
  Tensor res(x.shape(), std::move(out));
  if (tracing(x)) {
    auto xn = x.node(), on = res.node();
    record(res, [xn, on] {
      if (on->grad.empty()) return;
      if (!xn->requires_grad) return;
      auto& gx = xn->ensure_grad();
      constexpr double inv_sqrt_2pi = 0.3989422804014326779;
      for (std::size_t i = 0; i < gx.size(); ++i) {
        const double v = xn->data[i];
        const double phi = 0.5 * std::erfc(-v * M_SQRT1_2);
        const double density = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        gx[i] += on->grad[i] * (phi + v * density);
      }
    });
  }
  return res;
}

MhsaLayer::MhsaLayer(const std::string& prefix, std::size_t dim, std::size_t heads)
    : dim(dim),
      heads(heads),
      qkv(prefix + ".qkv", 3 * dim, dim),
      proj(prefix + ".proj", dim, dim) {
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("mhsa: heads " + std::to_string(heads) + " must divide dim " +
                      std::to_string(dim));
  }
}

Tensor mhsa_forward(const MhsaLayer& m, const Tensor& x, const MhsaHooks& hooks) {
  if (x.rank() != 2 || x.extent(1) != m.dim) {
    throw ShapeError("mhsa_forward: expected [N x " + std::to_string(m.dim) + "], got " +
                     shape_str(x.shape()));
  }
  const std::size_t d = m.dim;
  const std::size_t head_dim = d / m.heads;

  Tensor fused = linear_forward(m.qkv, x);
  if (hooks.after_qkv) fused = hooks.after_qkv(fused);

  Tensor q = slice_cols(fused, 0, d);
  if (hooks.query_increment) q = add(q, hooks.query_increment(x));
  Tensor k = slice_cols(fused, d, d);
  Tensor v = slice_cols(fused, 2 * d, d);

  std::vector<Tensor> heads_out;
  heads_out.reserve(m.heads);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  for (std::size_t h = 0; h < m.heads; ++h) {
    Tensor qh = slice_cols(q, h * head_dim, head_dim);
    Tensor kh = slice_cols(k, h * head_dim, head_dim);
    Tensor vh = slice_cols(v, h * head_dim, head_dim);
    Tensor attn = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt), 1);
    heads_out.push_back(matmul(attn, vh));
  }
  Tensor concat = concat_cols(heads_out);
  Tensor out = linear_forward(m.proj, concat);
  if (hooks.after_proj) out = hooks.after_proj(out);
  return out;
}

FfnLayer::FfnLayer(const std::string& prefix, std::size_t dim)
    : dim(dim), fc1(prefix + ".fc1", 4 * dim, dim), fc2(prefix + ".fc2", dim, 4 * dim) {}

Tensor ffn_forward(const FfnLayer& f, const Tensor& x, const FfnHooks& hooks) {
  Tensor hidden = linear_forward(f.fc1, x);
  if (hooks.after_fc1) hidden = hooks.after_fc1(hidden);
  Tensor out = linear_forward(f.fc2, gelu(hidden));
  if (hooks.after_fc2) out = hooks.after_fc2(out);
  return out;
}

}  // namespace hpt
