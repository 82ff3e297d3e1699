#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace okdd {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
  os << ']';
  return os.str();
}

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

class Tape;

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // stays empty until first touched
  bool requires_grad = false;
  bool leaf = true;
  const Tape* tape = nullptr;  // tape that recorded this node, if any

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};

}  // namespace detail

// Dense n-d value, a shared handle onto a graph node. Copying a Tensor
// aliases the same storage; fresh storage comes from the factory functions.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::shared_ptr<detail::Node> n) : n_(std::move(n)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), 0.0, requires_grad);
  }

  static Tensor filled(Shape shape, double value, bool requires_grad = false) {
    auto n = std::make_shared<detail::Node>();
    n->values.assign(static_cast<std::size_t>(shape_numel(shape)), value);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor of(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
      throw ShapeError("tensor: shape " + shape_str(shape) + " does not hold " +
                       std::to_string(values.size()) + " values");
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor scalar(double v) { return of({1}, {v}); }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  std::int64_t size() const { return static_cast<std::int64_t>(n_->values.size()); }

  std::span<double> values() { return n_->values; }
  std::span<const double> values() const { return n_->values; }

  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool b) { n_->requires_grad = b; }

  // empty span until a backward pass (or zero_grad) touches this tensor
  std::span<const double> grad() const { return n_->grad; }

  void zero_grad() {
    n_->ensure_grad();
    std::fill(n_->grad.begin(), n_->grad.end(), 0.0);
  }

  double item() const {
    if (size() != 1)
      throw ShapeError("item: tensor has shape " + shape_str(shape()) + ", expected one element");
    return n_->values[0];
  }

  double at(std::initializer_list<int> idx) const {
    const Shape& s = shape();
    if (idx.size() != s.size())
      throw ShapeError("at: rank mismatch for shape " + shape_str(s));
    std::int64_t flat = 0;
    std::size_t d = 0;
    for (int i : idx) {
      flat = flat * s[d] + i;
      ++d;
    }
    return n_->values[static_cast<std::size_t>(flat)];
  }

  const std::shared_ptr<detail::Node>& node() const { return n_; }

 private:
  std::shared_ptr<detail::Node> n_;
};

class TapeSuspend;

// Records the operations of one forward pass, in execution order, and replays
// the chain rule in reverse. Construction installs the tape as the active
// recorder for the current thread; destruction restores the previous one.
// A tape and the tensors flowing through it belong to a single thread.
class Tape {
 public:
  Tape() : prev_(tls()) { tls() = this; }
  ~Tape() { tls() = prev_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return tls(); }

  void record(std::shared_ptr<detail::Node> out, std::function<void()> pull) {
    out->tape = this;
    entries_.push_back({std::move(out), std::move(pull)});
  }

  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  // Populates grad on every requires_grad tensor reachable from loss.
  // Repeated calls accumulate into leaf gradients; non-leaf gradients are
  // per-pass scratch and reset at the start of each call.
  void backward(const Tensor& loss) {
    if (loss.size() != 1)
      throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                  shape_str(loss.shape()));
    const auto& ln = loss.node();
    if (!ln->leaf && ln->tape != this)
      throw std::logic_error("backward: loss was recorded on a different tape");
    for (auto& e : entries_) {
      e.out->ensure_grad();
      std::fill(e.out->grad.begin(), e.out->grad.end(), 0.0);
    }
    ln->ensure_grad();
    ln->grad[0] += 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it)
      if (it->out->requires_grad) it->pull();
  }

 private:
  friend class TapeSuspend;

  struct Entry {
    std::shared_ptr<detail::Node> out;
    std::function<void()> pull;
  };

  static Tape*& tls() {
    static thread_local Tape* t = nullptr;
    return t;
  }

  Tape* prev_ = nullptr;
  std::vector<Entry> entries_;
};

// Temporarily disables recording (used by finite differencing and evaluation).
class TapeSuspend {
 public:
  TapeSuspend() : saved_(Tape::tls()) { Tape::tls() = nullptr; }
  ~TapeSuspend() { Tape::tls() = saved_; }
  TapeSuspend(const TapeSuspend&) = delete;
  TapeSuspend& operator=(const TapeSuspend&) = delete;

 private:
  Tape* saved_;
};

namespace detail {

// Fresh node for an op result. Recording happens only when a tape is active
// and the result needs a gradient.
inline Tensor op_result(Shape shape, std::vector<double> values, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->requires_grad = requires_grad;
  n->leaf = false;
  return Tensor(std::move(n));
}

inline void record(const Tensor& out, std::function<void()> pull) {
  if (Tape* t = Tape::active(); t && out.requires_grad()) t->record(out.node(), std::move(pull));
}

}  // namespace detail

}  // namespace okdd
