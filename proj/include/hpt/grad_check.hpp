#pragma once

#include <functional>
#include <span>

#include "hpt/param.hpp"
#include "hpt/tensor.hpp"

namespace hpt {

// Central-difference gradient oracle.  f rebuilds a scalar loss from the
// current parameter values; the analytic pass runs f once under a fresh tape,
// the numeric pass nudges every coordinate by +-h.  Returns the maximum of
// |analytic - numeric| / max(1, |analytic|, |numeric|) over all coordinates.
double grad_check(const std::function<Tensor()>& f, std::span<Parameter* const> params,
                  double h = 1e-5);

}  // namespace hpt
