#pragma once

#include <string>

#include "hpt/ops.hpp"
#include "hpt/param.hpp"
#include "hpt/rng.hpp"
#include "hpt/tensor.hpp"

namespace hpt {

// Soft 1-D histogram over projected features: RBF bin memberships, epsilon-
// normalized responses, and a pooled summary broadcast back across the
// sequence. Requires bins | dim so the B x L summary flattens to width D.
struct HistogramLayer {
  std::size_t bins;
  std::size_t dim;
  double eps = 1e-6;
  Parameter proj_weight;  // [B x D]
  Parameter centers;      // [B]
  Parameter widths;       // [B]

  HistogramLayer(const std::string& prefix, std::size_t bins, std::size_t dim);

  std::size_t pool_len() const { return dim / bins; }
  std::size_t param_count() const { return bins * dim + 2 * bins; }
};

// v[n,b] = sum_d proj[b,d]·x[n,d]; centers are subtracted later, inside the RBF.
Tensor hist_project(const HistogramLayer& h, const Tensor& x);

// y[n,b] = exp(−widths[b]²·(v[n,b] − centers[b])²), always in (0, 1].
Tensor hist_rbf(const HistogramLayer& h, const Tensor& v);

// r[n,b] = y[n,b] / (row sum + eps); every entry in [0, 1).
Tensor hist_normalize(const HistogramLayer& h, const Tensor& y);

// Adaptive-average-pool each bin channel along the sequence to pool_len
// segments, flatten channel-major to a D-vector, replicate to all N rows.
Tensor hist_pool_broadcast(const HistogramLayer& h, const Tensor& r);

Tensor hist_forward(const HistogramLayer& h, const Tensor& x);

// proj_weight and centers from U(−1/√D, 1/√D); widths from U(−1, 1).
void hist_init(HistogramLayer& h, Rng& rng);

}  // namespace hpt
