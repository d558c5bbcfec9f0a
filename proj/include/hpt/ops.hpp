#pragma once

#include <span>

#include "hpt/tape.hpp"
#include "hpt/tensor.hpp"

namespace hpt {

// Binary elementwise ops accept equal shapes or one size-1 operand, which is
// broadcast against the other side; all other alignment is explicit.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor square(const Tensor& x);
Tensor scale(const Tensor& x, double c);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
Tensor broadcast_rows(const Tensor& v, std::size_t rows);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
Tensor concat_cols(std::span<const Tensor> parts);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor reduce_mean(const Tensor& x, std::size_t axis);
Tensor reduce_sum(const Tensor& x, std::size_t axis);
Tensor sum(const Tensor& x);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

namespace testhook {
// Corrupts the matmul backward rule so gradient checking must fail; exists
// only so the grad-check CLI's sensitivity path can be exercised.
void set_backward_fault(bool on);
bool backward_fault();
}  // namespace testhook

}  // namespace hpt
