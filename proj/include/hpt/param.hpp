#pragma once

#include <string>
#include <vector>

#include "hpt/tensor.hpp"

namespace hpt {

// Named tensor that the optimizer may update; the unit of freezing and
// parameter counting.  Trainability is carried by the tensor's grad flag so
// frozen parameters never enter the tape.
struct Parameter {
  std::string name;
  Tensor value;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
    value.set_requires_grad(true);
  }

  bool trainable() const { return value.requires_grad(); }
  void set_trainable(bool on) {
    value.set_requires_grad(on);
    if (!on) value.clear_grad();
  }
  std::size_t count() const { return value.size(); }
};

using ParamRefs = std::vector<Parameter*>;

inline std::size_t total_count(const ParamRefs& params, bool trainable_only = false) {
  std::size_t n = 0;
  for (const Parameter* p : params) {
    if (!trainable_only || p->trainable()) n += p->count();
  }
  return n;
}

}  // namespace hpt
