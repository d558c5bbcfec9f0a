#include "hpt/tape.hpp"

namespace hpt {

namespace {
thread_local Tape* g_active = nullptr;
}

Tape::Tape() : prev_(g_active) { g_active = this; }

Tape::~Tape() { g_active = prev_; }

Tape* Tape::active() { return g_active; }

void Tape::record(std::shared_ptr<TensorNode> output, std::function<void()> backward) {
  records_.push_back(Record{std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& root, double seed) {
  if (!root.defined() || root.size() != 1) {
    throw ValueError("backward root must be scalar");
  }
  const TensorNode* root_node = root.node().get();
  bool on_tape = false;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (it->output.get() == root_node) {
      on_tape = true;
      break;
    }
  }
  if (!on_tape) throw ValueError("backward root was not produced on this tape");
  root.node()->ensure_grad()[0] += seed;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    it->fn();
  }
}

}  // namespace hpt
