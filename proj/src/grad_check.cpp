#include "hpt/grad_check.hpp"

#include <cmath>
#include <vector>

#include "hpt/tape.hpp"

namespace hpt {

double grad_check(const std::function<Tensor()>& f, std::span<Parameter* const> params,
                  double h) {
  if (!(h > 0.0)) throw ValueError("grad_check wants h > 0");

  for (Parameter* p : params) p->value.zero_grad();
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    Tensor out = f();
    if (out.size() != 1) throw ValueError("grad_check wants a scalar-valued f");
    if (!std::isfinite(out.item())) throw ValueError("grad_check: f evaluated to a non-finite value");
    if (out.requires_grad()) tape.backward(out);
  }
  analytic.reserve(params.size());
  for (Parameter* p : params) {
    if (p->value.has_grad()) {
      auto g = p->value.grad();
      analytic.emplace_back(g.begin(), g.end());
    } else {
      analytic.emplace_back(p->value.size(), 0.0);
    }
  }

  const auto eval = [&f]() {
    const double v = f().item();
    if (!std::isfinite(v)) throw ValueError("grad_check: f evaluated to a non-finite value");
    return v;
  };

  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto data = params[pi]->value.values();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double hi = eval();
      data[i] = saved - h;
      const double lo = eval();
      data[i] = saved;
      const double numeric = (hi - lo) / (2.0 * h);
      const double a = analytic[pi][i];
      const double rel =
          std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace hpt
