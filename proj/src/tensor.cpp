#include "hpt/tensor.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace hpt {

namespace {

#ifdef NDEBUG
std::atomic<bool> g_finite_checks{false};
#else
std::atomic<bool> g_finite_checks{true};
#endif

void check_finite(const Shape& shape, std::span<const double> values) {
  if (!finite_checks()) return;
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw ValueError("non-finite value in tensor of shape " + shape_str(shape));
    }
  }
}

}  // namespace

void set_finite_checks(bool on) { g_finite_checks.store(on); }
bool finite_checks() { return g_finite_checks.load(); }

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::vector<double>& TensorNode::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor::Tensor(Shape shape, double fill) {
  for (std::size_t e : shape) {
    if (e == 0) throw ShapeError("zero extent in shape " + shape_str(shape));
  }
  node_ = std::make_shared<TensorNode>();
  node_->data.assign(shape_size(shape), fill);
  node_->shape = std::move(shape);
  check_finite(node_->shape, node_->data);
}

Tensor::Tensor(Shape shape, std::vector<double> values) {
  for (std::size_t e : shape) {
    if (e == 0) throw ShapeError("zero extent in shape " + shape_str(shape));
  }
  if (shape_size(shape) != values.size()) {
    throw ShapeError("shape " + shape_str(shape) + " wants " +
                     std::to_string(shape_size(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  node_ = std::make_shared<TensorNode>();
  node_->shape = std::move(shape);
  node_->data = std::move(values);
  check_finite(node_->shape, node_->data);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, {value}); }
Tensor Tensor::zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
Tensor Tensor::ones(Shape shape) { return Tensor(std::move(shape), 1.0); }

const Shape& Tensor::shape() const {
  if (!node_) throw ValueError("use of undefined tensor");
  return node_->shape;
}

std::size_t Tensor::size() const {
  if (!node_) throw ValueError("use of undefined tensor");
  return node_->data.size();
}

std::size_t Tensor::extent(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[axis];
}

std::span<const double> Tensor::values() const {
  if (!node_) throw ValueError("use of undefined tensor");
  return node_->data;
}

std::span<double> Tensor::values() {
  if (!node_) throw ValueError("use of undefined tensor");
  return node_->data;
}

double Tensor::operator()(std::size_t i) const {
  if (rank() != 1) throw ShapeError("rank-1 indexing on " + shape_str(shape()));
  return node_->data.at(i);
}

double Tensor::operator()(std::size_t i, std::size_t j) const {
  if (rank() != 2) throw ShapeError("rank-2 indexing on " + shape_str(shape()));
  return node_->data.at(i * node_->shape[1] + j);
}

double Tensor::item() const {
  if (size() != 1) throw ValueError("item() on non-scalar tensor " + shape_str(shape()));
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  if (!node_) throw ValueError("use of undefined tensor");
  node_->requires_grad = on;
  return *this;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw ValueError("tensor has no gradient buffer");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (!node_) throw ValueError("use of undefined tensor");
  node_->grad.assign(node_->data.size(), 0.0);
}

void Tensor::clear_grad() {
  if (node_) node_->grad.clear();
}

Tensor Tensor::clone() const {
  if (!node_) return Tensor();
  Tensor out(node_->shape, node_->data);
  return out;
}

Tensor Tensor::from_node(std::shared_ptr<TensorNode> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

namespace {

constexpr char kMagic[4] = {'T', 'N', 'S', 'R'};
constexpr std::uint32_t kVersion = 1;

// All integers and doubles are written little-endian.  The build targets
// little-endian hosts; byte order is asserted once via a runtime check.
void require_little_endian() {
  const std::uint32_t probe = 1;
  unsigned char byte;
  std::memcpy(&byte, &probe, 1);
  if (byte != 1) throw Error("big-endian hosts are not supported");
}

template <typename T>
void write_raw(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& in, const char* what) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw TruncationError(std::string("truncated tensor stream while reading ") + what);
  return v;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  require_little_endian();
  out.write(kMagic, 4);
  write_raw(out, kVersion);
  write_raw(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t e : t.shape()) write_raw(out, static_cast<std::uint64_t>(e));
  const auto vals = t.values();
  out.write(reinterpret_cast<const char*>(vals.data()),
            static_cast<std::streamsize>(vals.size() * sizeof(double)));
  if (!out) throw IoError("tensor write failed");
}

Tensor read_tensor(std::istream& in) {
  require_little_endian();
  char magic[4];
  in.read(magic, 4);
  if (!in) throw TruncationError("truncated tensor stream while reading magic");
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("bad tensor magic, expected \"TNSR\"");
  }
  const auto version = read_raw<std::uint32_t>(in, "version");
  if (version != kVersion) {
    throw FormatError("unsupported tensor version " + std::to_string(version));
  }
  const auto rank = read_raw<std::uint32_t>(in, "rank");
  Shape shape(rank);
  for (auto& e : shape) e = static_cast<std::size_t>(read_raw<std::uint64_t>(in, "extent"));
  std::vector<double> data(shape_size(shape));
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!in) throw TruncationError("truncated tensor payload");
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  write_tensor(out, t);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  return read_tensor(in);
}

}  // namespace hpt
