#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "hpt/tensor.hpp"

namespace hpt {

// Define-by-run gradient tape.  Constructing a Tape makes it the active tape
// for the current thread; ops record backward rules onto it while any input
// requires grad.  Records are stored in execution order, so reversing them is
// a valid reverse-topological traversal and each rule runs exactly once.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(std::shared_ptr<TensorNode> output, std::function<void()> backward);

  // Seeds d(root)/d(root) = seed and propagates to every recorded ancestor.
  // Gradients accumulate additively, so a parameter used k times collects
  // all k contributions.  root must be scalar and produced on this tape.
  void backward(const Tensor& root, double seed = 1.0);

  std::size_t num_ops() const { return records_.size(); }

 private:
  struct Record {
    std::shared_ptr<TensorNode> output;
    std::function<void()> fn;
  };
  std::vector<Record> records_;
  Tape* prev_ = nullptr;
};

}  // namespace hpt
