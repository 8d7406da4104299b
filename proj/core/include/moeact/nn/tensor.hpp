// Dense row-major tensor with reverse-mode autodiff over an explicit tape.
//
// Templated on the scalar type: the library instantiates float for all
// training and evaluation paths; tests instantiate double inside
// finite-difference oracles. Values are shared (copying a tensor is cheap and
// aliases the storage); gradients live outside the tensor in a GradStore so
// concurrent workers can differentiate independent graphs against shared
// parameters without touching each other.
#pragma once

#include <atomic>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "moeact/common.hpp"

namespace moeact::nn {

inline uint64_t next_tensor_id() {
  static std::atomic<uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

inline std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <class S>
class TensorT {
 public:
  TensorT() = default;

  static TensorT zeros(std::vector<int> shape, bool requires_grad = false) {
    TensorT t;
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<std::vector<S>>(t.count(), S(0));
    t.requires_grad_ = requires_grad;
    t.id_ = next_tensor_id();
    return t;
  }

  static TensorT from(std::vector<int> shape, std::vector<S> values, bool requires_grad = false) {
    TensorT t;
    t.shape_ = std::move(shape);
    if (values.size() != t.count())
      throw ShapeError("tensor init: " + std::to_string(values.size()) + " values for shape " +
                       shape_str(t.shape_));
    t.data_ = std::make_shared<std::vector<S>>(std::move(values));
    t.requires_grad_ = requires_grad;
    t.id_ = next_tensor_id();
    return t;
  }

  static TensorT scalar(S v) { return from({1}, {v}); }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  size_t numel() const { return data_ ? data_->size() : 0; }
  bool defined() const { return static_cast<bool>(data_); }

  std::vector<S>& values() { return *data_; }
  const std::vector<S>& values() const { return *data_; }
  S* ptr() { return data_->data(); }
  const S* ptr() const { return data_->data(); }

  S item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape_));
    return (*data_)[0];
  }

  S at(int i) const { return (*data_)[static_cast<size_t>(i)]; }
  S at(int i, int j) const { return (*data_)[static_cast<size_t>(i) * dim(1) + j]; }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool rg) { requires_grad_ = rg; }
  uint64_t id() const { return id_; }

  // Same storage, new shape metadata. Gradient flows through reshape nodes
  // created by ops::reshape; this raw helper is for non-diff plumbing.
  TensorT reshaped_view(std::vector<int> shape) const {
    TensorT t = *this;
    size_t n = 1;
    for (int d : shape) n *= static_cast<size_t>(d);
    if (n != numel())
      throw ShapeError("reshape: " + shape_str(shape_) + " -> " + shape_str(shape) +
                       " changes element count");
    t.shape_ = std::move(shape);
    return t;
  }

 private:
  size_t count() const {
    size_t n = 1;
    for (int d : shape_) {
      if (d < 0) throw ShapeError("negative dimension in " + shape_str(shape_));
      n *= static_cast<size_t>(d);
    }
    return n;
  }

  std::shared_ptr<std::vector<S>> data_;
  std::vector<int> shape_;
  bool requires_grad_ = false;
  uint64_t id_ = 0;
};

// Gradient buffers keyed by tensor id. Accumulation is additive; a tensor the
// loss never reached simply has no entry.
template <class S>
class GradStoreT {
 public:
  std::vector<S>* find(uint64_t id) {
    auto it = grads_.find(id);
    return it == grads_.end() ? nullptr : &it->second;
  }
  const std::vector<S>* find(uint64_t id) const {
    auto it = grads_.find(id);
    return it == grads_.end() ? nullptr : &it->second;
  }
  const std::vector<S>* find(const TensorT<S>& t) const { return find(t.id()); }

  bool has(const TensorT<S>& t) const { return grads_.count(t.id()) != 0; }

  // get-or-create zero buffer matching the tensor
  std::vector<S>& accum(const TensorT<S>& t) {
    auto it = grads_.find(t.id());
    if (it == grads_.end()) it = grads_.emplace(t.id(), std::vector<S>(t.numel(), S(0))).first;
    return it->second;
  }

  void seed(const TensorT<S>& t, S v) { grads_.emplace(t.id(), std::vector<S>(t.numel(), v)); }

  size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<uint64_t, std::vector<S>> grads_;
};

// Creation-ordered record of primitive applications. Reverse iteration is a
// reverse topological order and visits each node exactly once.
template <class S>
class TapeT {
 public:
  TapeT() : prev_(current_) { current_ = this; }
  ~TapeT() { current_ = prev_; }
  TapeT(const TapeT&) = delete;
  TapeT& operator=(const TapeT&) = delete;

  static TapeT* current() { return current_; }

  void record(std::function<void(GradStoreT<S>&)> back) { nodes_.push_back(std::move(back)); }

  size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss)=1 and walks the tape backwards. Returns gradient
  // buffers for every tensor reached from the loss.
  GradStoreT<S> backward(const TensorT<S>& loss) const {
    if (loss.numel() != 1)
      throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    GradStoreT<S> gs;
    gs.seed(loss, S(1));
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)(gs);
    return gs;
  }

 private:
  std::vector<std::function<void(GradStoreT<S>&)>> nodes_;
  TapeT* prev_ = nullptr;
  static thread_local TapeT* current_;
};

template <class S>
thread_local TapeT<S>* TapeT<S>::current_ = nullptr;

// Convenience: differentiate against the innermost active tape.
template <class S>
GradStoreT<S> backward(const TensorT<S>& loss) {
  TapeT<S>* tape = TapeT<S>::current();
  if (!tape) throw Error("backward: no active tape");
  return tape->backward(loss);
}

using Tensor = TensorT<float>;
using GradStore = GradStoreT<float>;
using Tape = TapeT<float>;

}  // namespace moeact::nn
