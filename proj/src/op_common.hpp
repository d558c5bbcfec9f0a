#pragma once

#include <functional>
#include <utility>

#include "hpt/tape.hpp"
#include "hpt/tensor.hpp"

// Shared between the op translation units; not part of the installed API.
namespace hpt::detail {

inline bool tracing(const Tensor& a) { return Tape::active() && a.requires_grad(); }
inline bool tracing(const Tensor& a, const Tensor& b) {
  return Tape::active() && (a.requires_grad() || b.requires_grad());
}
inline bool tracing(const Tensor& a, const Tensor& b, const Tensor& c) {
  return Tape::active() && (a.requires_grad() || b.requires_grad() || c.requires_grad());
}

inline void record(Tensor& out, std::function<void()> fn) {
  out.set_requires_grad(true);
  Tape::active()->record(out.node(), std::move(fn));
}

}  // namespace hpt::detail
