#pragma once

#include <functional>
#include <string>

#include "hpt/ops.hpp"
#include "hpt/param.hpp"
#include "hpt/rng.hpp"
#include "hpt/tensor.hpp"

namespace hpt {

// Fully-connected layer, weight stored [out x in]; forward is x·Wᵀ + b.
struct Linear {
  Parameter weight;
  Parameter bias;

  Linear(const std::string& name, std::size_t out_features, std::size_t in_features);

  std::size_t in_features() const { return weight.value.extent(1); }
  std::size_t out_features() const { return weight.value.extent(0); }
};

Tensor linear_forward(const Linear& l, const Tensor& x);

// Exact Gaussian-CDF form x·Φ(x), not the tanh approximation.
Tensor gelu(const Tensor& x);

// Weight and bias i.i.d. U(−1/√fan_in, +1/√fan_in), fan_in = in_features.
void kaiming_uniform_init(Linear& l, Rng& rng);

// Optional transforms spliced into a layer's forward pass. Each hook either
// rewrites an intermediate in place (identity when empty) or, for
// query_increment, contributes an additive term to the query slice of the
// fused QKV output. Exactly one tuning method populates these at a time.
struct MhsaHooks {
  std::function<Tensor(const Tensor&)> after_qkv;         // N x 3D
  std::function<Tensor(const Tensor&)> query_increment;   // input x -> N x D
  std::function<Tensor(const Tensor&)> after_proj;        // N x D
};

struct MhsaLayer {
  std::size_t dim;
  std::size_t heads;
  Linear qkv;   // fused projection, [3D x D]
  Linear proj;  // [D x D]

  MhsaLayer(const std::string& prefix, std::size_t dim, std::size_t heads);
};

Tensor mhsa_forward(const MhsaLayer& m, const Tensor& x, const MhsaHooks& hooks = {});

struct FfnHooks {
  std::function<Tensor(const Tensor&)> after_fc1;  // N x 4D
  std::function<Tensor(const Tensor&)> after_fc2;  // N x D
};

struct FfnLayer {
  std::size_t dim;
  Linear fc1;  // [4D x D]
  Linear fc2;  // [D x 4D]

  FfnLayer(const std::string& prefix, std::size_t dim);
};

Tensor ffn_forward(const FfnLayer& f, const Tensor& x, const FfnHooks& hooks = {});

}  // namespace hpt
