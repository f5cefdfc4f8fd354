#pragma once

// Define-by-run reverse-mode differentiation.
//
// Every differentiable op evaluates its forward value eagerly and, when a Tape
// is active on the calling thread and at least one input requires a gradient,
// appends a vector-Jacobian product closure to that tape. Tape::backward replays
// the closures in reverse execution order; gradients flowing into one node from
// several consumers are summed in its grad buffer.

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "seunet/tensor.hpp"

namespace seunet {

class AutogradError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

template <typename T>
class Node {
 public:
  Node(Tensor<T> value, bool requires_grad) : value_(std::move(value)), requires_grad_(requires_grad) {}

  const Tensor<T>& value() const noexcept { return value_; }
  Tensor<T>& mutable_value() noexcept { return value_; }
  bool requires_grad() const noexcept { return requires_grad_; }
  bool has_grad() const noexcept { return has_grad_; }

  const Tensor<T>& grad() const {
    if (!has_grad_) throw AutogradError("no gradient has been accumulated for this node");
    return grad_;
  }

  /// Zero-initialised on first access.
  Tensor<T>& grad_buffer() {
    if (!has_grad_) {
      grad_ = Tensor<T>(value_.shape());
      has_grad_ = true;
    }
    return grad_;
  }

  void zero_grad() {
    if (has_grad_) grad_.fill(T(0));
  }

  void drop_grad() {
    grad_ = Tensor<T>();
    has_grad_ = false;
  }

 private:
  Tensor<T> value_;
  Tensor<T> grad_;
  bool requires_grad_ = false;
  bool has_grad_ = false;
};

/// Handle to a node in the computation graph. Cheap to copy; copies alias.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>(std::move(value), requires_grad)) {}
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return checked()->value(); }
  const Shape& shape() const { return checked()->value().shape(); }
  Index numel() const { return checked()->value().numel(); }
  bool requires_grad() const { return node_ && node_->requires_grad(); }
  const Tensor<T>& grad() const { return checked()->grad(); }

  Node<T>* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const noexcept { return node_; }

 private:
  Node<T>* checked() const {
    if (!node_) throw AutogradError("use of an undefined Var");
    return node_.get();
  }

  std::shared_ptr<Node<T>> node_;
};

template <typename T>
using BackwardFn = std::function<void(const Tensor<T>& grad_out)>;

/// Ordered record of executed differentiable operations.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  void clear() { entries_.clear(); }

  void record(std::shared_ptr<Node<T>> output, BackwardFn<T> fn) {
    entries_.push_back(Entry{std::move(output), std::move(fn)});
  }

  /// Seeds d(loss)/d(loss) = 1 and propagates to every reachable node.
  void backward(const Var<T>& loss) {
    if (entries_.empty()) throw AutogradError("backward called on an empty tape");
    if (!loss.defined() || loss.numel() != 1) {
      throw AutogradError("backward requires a scalar loss, got shape " +
                          (loss.defined() ? shape_to_string(loss.shape()) : std::string("<undefined>")));
    }
    std::size_t last = entries_.size();
    while (last > 0 && entries_[last - 1].output.get() != loss.node()) --last;
    if (last == 0) throw AutogradError("loss was not produced on this tape");

    loss.node()->grad_buffer()[0] += T(1);
    for (std::size_t i = last; i-- > 0;) {
      Entry& e = entries_[i];
      if (!e.output->has_grad()) continue;
      e.backward(e.output->grad());
    }
  }

  static Tape* active() noexcept { return active_; }

 private:
  template <typename U>
  friend class TapeScope;

  struct Entry {
    std::shared_ptr<Node<T>> output;
    BackwardFn<T> backward;
  };

  std::vector<Entry> entries_;
  static inline thread_local Tape* active_ = nullptr;
};

/// Makes `tape` the recording target on this thread for the guard's lifetime.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : previous_(Tape<T>::active_) { Tape<T>::active_ = &tape; }
  ~TapeScope() { Tape<T>::active_ = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

template <typename T, typename... Vars>
bool needs_grad(const Vars&... inputs) {
  return Tape<T>::active() != nullptr && (false || ... || inputs.requires_grad());
}

/// Wraps `value` in a gradient-carrying node and records `fn` on the active tape.
template <typename T>
Var<T> record_op(Tensor<T> value, BackwardFn<T> fn) {
  Tape<T>* tape = Tape<T>::active();
  if (tape == nullptr) throw AutogradError("record_op without an active tape");
  auto node = std::make_shared<Node<T>>(std::move(value), true);
  tape->record(node, std::move(fn));
  return Var<T>(std::move(node));
}

template <typename T>
void accumulate_grad(const Var<T>& v, const Tensor<T>& g) {
  if (v.requires_grad()) v.node()->grad_buffer().add_(g);
}

/// A named, trainable leaf tensor. Move-only: two Parameters never alias.
template <typename T>
class Parameter {
 public:
  Parameter() = default;
  Parameter(std::string name, Tensor<T> init)
      : name_(std::move(name)), node_(std::make_shared<Node<T>>(std::move(init), true)) {
    node_->grad_buffer();
  }
  Parameter(Parameter&&) noexcept = default;
  Parameter& operator=(Parameter&&) noexcept = default;
  Parameter(const Parameter&) = delete;
  Parameter& operator=(const Parameter&) = delete;

  const std::string& name() const noexcept { return name_; }
  void set_name(std::string name) { name_ = std::move(name); }

  Var<T> var() const { return Var<T>(node_); }
  const Tensor<T>& value() const { return node_->value(); }
  Tensor<T>& value() { return node_->mutable_value(); }
  const Tensor<T>& grad() const { return node_->grad(); }
  Tensor<T>& grad() { return node_->grad_buffer(); }
  const Shape& shape() const { return node_->value().shape(); }
  void zero_grad() { node_->zero_grad(); }

 private:
  std::string name_;
  std::shared_ptr<Node<T>> node_;
};

}  // namespace seunet
