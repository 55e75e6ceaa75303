#pragma once

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <memory>

#include "rstt/common.hpp"

namespace rstt {

// ---------------------------------------------------------------------------
// Dense row-major tensor, templated on scalar (float for training/inference,
// double for gradient verification).  A Tensor is a cheap handle: copies
// share the underlying value buffer and gradient slot, so views and autodiff
// closures can alias storage without bookkeeping.  reshape() is zero-copy.
//
// The gradient buffer lives behind its own shared_ptr and is sized lazily on
// first accumulation; a tensor "requires grad" iff the slot exists.
// ---------------------------------------------------------------------------

template <typename S>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<S>>(static_cast<std::size_t>(rstt::numel(shape_)), S(0))) {}

  Tensor(Shape shape, std::vector<S> values) : shape_(std::move(shape)) {
    check_dims(static_cast<Index>(values.size()) == rstt::numel(shape_),
               "tensor data length " + std::to_string(values.size()) +
                   " does not match shape " + shape_str(shape_));
    data_ = std::make_shared<std::vector<S>>(std::move(values));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, S value) {
    Tensor t(std::move(shape));
    std::fill(t.data_->begin(), t.data_->end(), value);
    return t;
  }

  static Tensor ones(Shape shape) { return full(std::move(shape), S(1)); }

  static Tensor eye(Index n) {
    Tensor t({n, n});
    for (Index i = 0; i < n; ++i) (*t.data_)[static_cast<std::size_t>(i * n + i)] = S(1);
    return t;
  }

  static Tensor scalar(S value) { return Tensor({}, {value}); }

  static Tensor uniform(Shape shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : *t.data_) v = static_cast<S>(rng.uniform(lo, hi));
    return t;
  }

  static Tensor normal(Shape shape, Rng& rng, double sigma = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : *t.data_) v = static_cast<S>(sigma * rng.normal());
    return t;
  }

  static Tensor trunc_normal(Shape shape, Rng& rng, double sigma) {
    Tensor t(std::move(shape));
    for (auto& v : *t.data_) v = static_cast<S>(rng.trunc_normal(sigma));
    return t;
  }

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index size() const { return data_ ? static_cast<Index>(data_->size()) : 0; }
  bool is_scalar() const { return defined() && size() == 1; }

  Index dim(int i) const {
    int r = static_cast<int>(shape_.size());
    if (i < 0) i += r;
    check_dims(i >= 0 && i < r, "axis out of range for shape " + shape_str(shape_));
    return shape_[static_cast<std::size_t>(i)];
  }

  S* data() { return data_->data(); }
  const S* data() const { return data_->data(); }
  std::vector<S>& values() { return *data_; }
  const std::vector<S>& values() const { return *data_; }

  S& operator[](Index i) { return (*data_)[static_cast<std::size_t>(i)]; }
  const S& operator[](Index i) const { return (*data_)[static_cast<std::size_t>(i)]; }

  S& at(std::initializer_list<Index> idx) { return (*data_)[flat_index(idx)]; }
  const S& at(std::initializer_list<Index> idx) const { return (*data_)[flat_index(idx)]; }

  std::size_t flat_index(std::initializer_list<Index> idx) const {
    check_dims(static_cast<Index>(idx.size()) == rank(),
               "index rank mismatch for shape " + shape_str(shape_));
    Index flat = 0;
    std::size_t k = 0;
    for (Index i : idx) {
      check_dims(i >= 0 && i < shape_[k], "index out of bounds for shape " + shape_str(shape_));
      flat = flat * shape_[k] + i;
      ++k;
    }
    return static_cast<std::size_t>(flat);
  }

  // --- gradient slot ---

  bool requires_grad() const { return grad_ != nullptr; }

  Tensor& set_requires_grad(bool on) {
    if (on && !grad_) grad_ = std::make_shared<std::vector<S>>();
    if (!on) grad_.reset();
    return *this;
  }

  /// Gradient buffer, sized and zero-filled on first use.  The buffer lives
  /// behind a shared slot, so accumulation works through const handles.
  std::vector<S>& grad() const {
    check_dims(grad_ != nullptr, "tensor does not track gradients");
    if (grad_->empty()) grad_->assign(static_cast<std::size_t>(size()), S(0));
    return *grad_;
  }

  /// Null when no gradient has been accumulated yet.
  const std::vector<S>* grad_if_any() const {
    return (grad_ && !grad_->empty()) ? grad_.get() : nullptr;
  }

  void zero_grad() {
    if (grad_ && !grad_->empty()) std::fill(grad_->begin(), grad_->end(), S(0));
  }

  Tensor grad_tensor() const {
    Tensor g(shape_);
    if (grad_ && !grad_->empty()) std::copy(grad_->begin(), grad_->end(), g.data_->begin());
    return g;
  }

  // --- views and copies ---

  /// Zero-copy reshape: shares both values and the gradient slot.
  Tensor reshape(Shape new_shape) const {
    check_dims(rstt::numel(new_shape) == size(),
               "reshape " + shape_str(shape_) + " -> " + shape_str(new_shape) +
                   " changes element count");
    Tensor t = *this;
    t.shape_ = std::move(new_shape);
    return t;
  }

  /// Deep copy of the values; the copy does not track gradients.
  Tensor clone() const {
    Tensor t(shape_);
    std::copy(data_->begin(), data_->end(), t.data_->begin());
    return t;
  }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> t(shape_);
    const S* src = data();
    T* dst = t.data();
    for (Index i = 0; i < size(); ++i) dst[i] = static_cast<T>(src[i]);
    return t;
  }

  bool shares_data(const Tensor& o) const { return data_ == o.data_; }

  bool all_finite() const {
    for (const S& v : *data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<S>> data_;
  std::shared_ptr<std::vector<S>> grad_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

template <typename S>
void throw_if_nonfinite(const Tensor<S>& t, const char* op) {
  if (finite_checks_enabled() && !t.all_finite())
    throw numeric_error(std::string("non-finite values produced by op '") + op + "'");
}

/// Accumulates src into dst's gradient buffer (sized on demand).
template <typename S>
void accumulate_grad(const Tensor<S>& dst, const S* src, Index n) {
  auto& g = dst.grad();
  for (Index i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] += src[i];
}

}  // namespace rstt
