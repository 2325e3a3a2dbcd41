#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace nforge {

using Scalar = double;

// Extents of an N-dimensional array. Feature-map convention: [N, C, D, H, W].
struct Shape {
    std::vector<int64_t> dims;

    Shape() = default;
    Shape(std::initializer_list<int64_t> d) : dims(d) {}
    explicit Shape(std::vector<int64_t> d) : dims(std::move(d)) {}

    int64_t rank() const { return static_cast<int64_t>(dims.size()); }
    int64_t numel() const;
    int64_t operator[](int64_t i) const { return dims[static_cast<size_t>(i)]; }
    bool operator==(const Shape& o) const { return dims == o.dims; }
    bool operator!=(const Shape& o) const { return !(*this == o); }
    std::string str() const;
};

class Tensor;

namespace detail {

struct TensorData {
    Shape shape;
    std::vector<Scalar> values;
    bool requires_grad = false;
    std::vector<Scalar> grad;  // empty until backward touches this node

    // Tape edge: parents this node was computed from and the function that
    // routes this node's grad into theirs.
    std::vector<std::shared_ptr<TensorData>> parents;
    std::function<void(TensorData&)> backward_fn;

    bool on_tape() const { return static_cast<bool>(backward_fn); }
    std::vector<Scalar>& ensure_grad();
};

}  // namespace detail

// Whether newly created ops record tape edges. Forward-only regions
// (inference, finite differences) disable it via NoGradGuard.
bool grad_enabled();

struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

// Value-semantic handle to a shared tensor node. Values are immutable after
// construction except through mutable_values() (parameter updates between
// steps); the grad slot is written by backward().
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(Shape shape, Scalar fill = 0.0, bool requires_grad = false);
    Tensor(Shape shape, std::vector<Scalar> values, bool requires_grad = false);

    static Tensor scalar(Scalar v, bool requires_grad = false);
    static Tensor randn(Shape shape, std::mt19937_64& rng, Scalar stddev = 1.0,
                        bool requires_grad = false);

    bool defined() const { return static_cast<bool>(data_); }
    const Shape& shape() const { return data_->shape; }
    int64_t numel() const { return static_cast<int64_t>(data_->values.size()); }
    const std::vector<Scalar>& values() const { return data_->values; }
    std::vector<Scalar>& mutable_values() { return data_->values; }
    Scalar item() const;

    bool requires_grad() const { return data_->requires_grad; }
    void set_requires_grad(bool b) { data_->requires_grad = b; }
    bool has_grad() const { return !data_->grad.empty(); }
    const std::vector<Scalar>& grad() const { return data_->grad; }
    std::vector<Scalar>& mutable_grad() { return data_->ensure_grad(); }
    void zero_grad();

    // Throws if any stored value is non-finite.
    void check_finite(const char* what) const;

    std::shared_ptr<detail::TensorData> node() const { return data_; }

    // Construction hook for op implementations.
    static Tensor from_op(Shape shape, std::vector<Scalar> values,
                          std::vector<Tensor> parents,
                          std::function<void(detail::TensorData&)> backward_fn);

  private:
    std::shared_ptr<detail::TensorData> data_;
};

// Reverse-mode sweep from a scalar loss. Populates grad on every reachable
// node with requires_grad set. One backward at a time per graph.
void backward(const Tensor& loss);

// --- elementwise / reduction ops -------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Scalar c);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

// Gathers values()[indices[i]] into a 1-D tensor; backward scatter-adds.
Tensor gather(const Tensor& a, std::vector<int64_t> indices);

// Rows of inputs flattened and stacked into [n, numel(inputs[0])].
Tensor stack_flatten(const std::vector<Tensor>& inputs);

// Inputs flattened and concatenated into one 1-D tensor.
Tensor concat(const std::vector<Tensor>& inputs);

// x @ w + bias for x:[n,k], w:[k,m], bias:[m] (bias optional).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

// Train-mode inverted dropout; eval mode is the identity. rate in [0,1).
Tensor dropout(const Tensor& a, Scalar rate, bool train, std::mt19937_64& rng);

}  // namespace nforge
