#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hpt {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or dimension mismatch between operands.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Contract violation on values (non-finite data, label out of range, ...).
class ValueError : public Error {
 public:
  using Error::Error;
};

// Filesystem-level failure (missing file, unwritable path).
class IoError : public Error {
 public:
  using Error::Error;
};

// Bad magic bytes or unsupported version in a binary file.
class FormatError : public Error {
 public:
  using Error::Error;
};

// File ended before the declared payload was read.
class TruncationError : public Error {
 public:
  using Error::Error;
};

// Checkpoint or architecture incompatible with the requested operation.
class CompatError : public Error {
 public:
  using Error::Error;
};

// Run-configuration parse or validation failure.
class ConfigError : public Error {
 public:
  using Error::Error;
};

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

// Non-finite outputs are rejected at op boundaries while this is on.
// Defaults to on in debug builds, off in release; tests flip it explicitly.
void set_finite_checks(bool on);
bool finite_checks();

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // empty until a backward pass touches it

  std::vector<double>& ensure_grad();
};

// Dense row-major float64 tensor. Handles share storage on copy; data is
// immutable once built except for parameter updates between forward passes
// and the grad buffer.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, double fill);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  std::size_t extent(std::size_t axis) const;

  std::span<const double> values() const;
  std::span<double> values();

  double operator()(std::size_t i) const;
  double operator()(std::size_t i, std::size_t j) const;
  double item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);

  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();
  void clear_grad();

  // Deep copy of shape/data; grad and tape state are not copied.
  Tensor clone() const;

  const std::shared_ptr<TensorNode>& node() const { return node_; }
  static Tensor from_node(std::shared_ptr<TensorNode> node);

 private:
  std::shared_ptr<TensorNode> node_;
};

// Binary serialization: "TNSR", u32 version=1, u32 rank, rank x u64 extents,
// float64 payload, all little-endian.
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

}  // namespace hpt
