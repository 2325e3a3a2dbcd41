#include "tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace nforge {

int64_t Shape::numel() const {
    int64_t n = 1;
    for (int64_t d : dims) n *= d;
    return n;
}

std::string Shape::str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < dims.size(); ++i) {
        if (i) os << ",";
        os << dims[i];
    }
    os << "]";
    return os.str();
}

namespace detail {
std::vector<Scalar>& TensorData::ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), 0.0);
    return grad;
}
}  // namespace detail

namespace {
thread_local bool g_grad_enabled = true;

void validate_shape(const Shape& s) {
    if (s.dims.empty()) throw std::invalid_argument("shape must have rank >= 1");
    for (int64_t d : s.dims)
        if (d < 1) throw std::invalid_argument("shape extent must be >= 1, got " + s.str());
}
}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Tensor::Tensor(Shape shape, Scalar fill, bool requires_grad) {
    validate_shape(shape);
    data_ = std::make_shared<detail::TensorData>();
    data_->values.assign(static_cast<size_t>(shape.numel()), fill);
    data_->shape = std::move(shape);
    data_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<Scalar> values, bool requires_grad) {
    validate_shape(shape);
    if (static_cast<int64_t>(values.size()) != shape.numel())
        throw std::invalid_argument("value count " + std::to_string(values.size()) +
                                    " does not match shape " + shape.str());
    data_ = std::make_shared<detail::TensorData>();
    data_->shape = std::move(shape);
    data_->values = std::move(values);
    data_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(Scalar v, bool requires_grad) {
    return Tensor(Shape{1}, {v}, requires_grad);
}

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, Scalar stddev, bool requires_grad) {
    Tensor t(shape, 0.0, requires_grad);
    std::normal_distribution<Scalar> dist(0.0, stddev);
    for (auto& v : t.mutable_values()) v = dist(rng);
    return t;
}

Scalar Tensor::item() const {
    if (numel() != 1) throw std::invalid_argument("item() on non-scalar tensor " + shape().str());
    return data_->values[0];
}

void Tensor::zero_grad() { data_->grad.clear(); }

void Tensor::check_finite(const char* what) const {
    for (Scalar v : data_->values)
        if (!std::isfinite(v))
            throw std::runtime_error(std::string("non-finite value in ") + what);
}

Tensor Tensor::from_op(Shape shape, std::vector<Scalar> values, std::vector<Tensor> parents,
                       std::function<void(detail::TensorData&)> backward_fn) {
    Tensor out(std::move(shape), std::move(values));
    bool needs = false;
    if (g_grad_enabled)
        for (const auto& p : parents)
            if (p.requires_grad() || p.node()->on_tape()) needs = true;
    if (needs) {
        out.data_->requires_grad = true;
        for (auto& p : parents) out.data_->parents.push_back(p.node());
        out.data_->backward_fn = std::move(backward_fn);
    }
    return out;
}

void backward(const Tensor& loss) {
    if (loss.numel() != 1)
        throw std::invalid_argument("backward requires a scalar loss, got " + loss.shape().str());

    // Iterative post-order topo sort over tape parents.
    std::vector<detail::TensorData*> order;
    std::unordered_set<detail::TensorData*> seen;
    struct Frame {
        detail::TensorData* node;
        size_t next_child;
    };
    std::vector<Frame> stack{{loss.node().get(), 0}};
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_child < f.node->parents.size()) {
            detail::TensorData* child = f.node->parents[f.next_child++].get();
            if (child->on_tape() && seen.insert(child).second) stack.push_back({child, 0});
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    loss.node()->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::TensorData* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

// --- elementwise / reduction ops -------------------------------------------

namespace {
void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape().str() +
                                    " vs " + b.shape().str());
}
}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<Scalar> out(a.values().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
    auto an = a.node(), bn = b.node();
    return Tensor::from_op(a.shape(), std::move(out), {a, b}, [an, bn](detail::TensorData& self) {
        auto& ga = an->ensure_grad();
        auto& gb = bn->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            ga[i] += self.grad[i];
            gb[i] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<Scalar> out(a.values().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
    auto an = a.node(), bn = b.node();
    return Tensor::from_op(a.shape(), std::move(out), {a, b}, [an, bn](detail::TensorData& self) {
        auto& ga = an->ensure_grad();
        auto& gb = bn->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            ga[i] += self.grad[i];
            gb[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<Scalar> out(a.values().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
    auto an = a.node(), bn = b.node();
    return Tensor::from_op(a.shape(), std::move(out), {a, b}, [an, bn](detail::TensorData& self) {
        auto& ga = an->ensure_grad();
        auto& gb = bn->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            ga[i] += self.grad[i] * bn->values[i];
            gb[i] += self.grad[i] * an->values[i];
        }
    });
}

Tensor scale(const Tensor& a, Scalar c) {
    std::vector<Scalar> out(a.values().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * c;
    auto an = a.node();
    return Tensor::from_op(a.shape(), std::move(out), {a}, [an, c](detail::TensorData& self) {
        auto& ga = an->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * c;
    });
}

Tensor relu(const Tensor& a) {
    std::vector<Scalar> out(a.values().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] > 0 ? a.values()[i] : 0.0;
    auto an = a.node();
    return Tensor::from_op(a.shape(), std::move(out), {a}, [an](detail::TensorData& self) {
        auto& ga = an->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
            if (an->values[i] > 0) ga[i] += self.grad[i];
    });
}

Tensor sigmoid(const Tensor& a) {
    std::vector<Scalar> out(a.values().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-a.values()[i]));
    auto an = a.node();
    std::vector<Scalar> saved = out;
    return Tensor::from_op(a.shape(), std::move(out), {a},
                           [an, saved = std::move(saved)](detail::TensorData& self) {
                               auto& ga = an->ensure_grad();
                               for (size_t i = 0; i < self.grad.size(); ++i)
                                   ga[i] += self.grad[i] * saved[i] * (1.0 - saved[i]);
                           });
}

Tensor sum(const Tensor& a) {
    Scalar s = 0.0;
    for (Scalar v : a.values()) s += v;
    auto an = a.node();
    return Tensor::from_op(Shape{1}, {s}, {a}, [an](detail::TensorData& self) {
        auto& ga = an->ensure_grad();
        for (auto& g : ga) g += self.grad[0];
    });
}

Tensor mean(const Tensor& a) {
    Scalar s = 0.0;
    for (Scalar v : a.values()) s += v;
    Scalar inv = 1.0 / static_cast<Scalar>(a.numel());
    auto an = a.node();
    return Tensor::from_op(Shape{1}, {s * inv}, {a}, [an, inv](detail::TensorData& self) {
        auto& ga = an->ensure_grad();
        for (auto& g : ga) g += self.grad[0] * inv;
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape.numel() != a.numel())
        throw std::invalid_argument("reshape: element count mismatch " + a.shape().str() +
                                    " -> " + shape.str());
    auto an = a.node();
    return Tensor::from_op(std::move(shape), a.values(), {a}, [an](detail::TensorData& self) {
        auto& ga = an->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    });
}

Tensor gather(const Tensor& a, std::vector<int64_t> indices) {
    std::vector<Scalar> out(indices.size());
    for (size_t i = 0; i < indices.size(); ++i) {
        int64_t idx = indices[i];
        if (idx < 0 || idx >= a.numel())
            throw std::invalid_argument("gather: index " + std::to_string(idx) +
                                        " out of range for " + a.shape().str());
        out[i] = a.values()[static_cast<size_t>(idx)];
    }
    auto an = a.node();
    int64_t n = static_cast<int64_t>(indices.size());
    return Tensor::from_op(Shape{n}, std::move(out), {a},
                           [an, indices = std::move(indices)](detail::TensorData& self) {
                               auto& ga = an->ensure_grad();
                               for (size_t i = 0; i < indices.size(); ++i)
                                   ga[static_cast<size_t>(indices[i])] += self.grad[i];
                           });
}

Tensor stack_flatten(const std::vector<Tensor>& inputs) {
    if (inputs.empty()) throw std::invalid_argument("stack_flatten: empty input list");
    int64_t k = inputs[0].numel();
    for (const auto& t : inputs)
        if (t.numel() != k)
            throw std::invalid_argument("stack_flatten: ragged inputs");
    int64_t n = static_cast<int64_t>(inputs.size());
    std::vector<Scalar> out(static_cast<size_t>(n * k));
    for (int64_t i = 0; i < n; ++i)
        std::copy(inputs[static_cast<size_t>(i)].values().begin(),
                  inputs[static_cast<size_t>(i)].values().end(),
                  out.begin() + static_cast<size_t>(i * k));
    std::vector<std::shared_ptr<detail::TensorData>> nodes;
    for (const auto& t : inputs) nodes.push_back(t.node());
    return Tensor::from_op(Shape{n, k}, std::move(out), inputs,
                           [nodes = std::move(nodes), k](detail::TensorData& self) {
                               for (size_t i = 0; i < nodes.size(); ++i) {
                                   auto& g = nodes[i]->ensure_grad();
                                   for (int64_t j = 0; j < k; ++j)
                                       g[static_cast<size_t>(j)] +=
                                           self.grad[i * static_cast<size_t>(k) +
                                                     static_cast<size_t>(j)];
                               }
                           });
}

Tensor concat(const std::vector<Tensor>& inputs) {
    if (inputs.empty()) throw std::invalid_argument("concat: empty input list");
    int64_t total = 0;
    for (const auto& t : inputs) total += t.numel();
    std::vector<Scalar> out;
    out.reserve(static_cast<size_t>(total));
    for (const auto& t : inputs) out.insert(out.end(), t.values().begin(), t.values().end());
    std::vector<std::shared_ptr<detail::TensorData>> nodes;
    for (const auto& t : inputs) nodes.push_back(t.node());
    return Tensor::from_op(Shape{total}, std::move(out), inputs,
                           [nodes = std::move(nodes)](detail::TensorData& self) {
                               size_t off = 0;
                               for (const auto& n : nodes) {
                                   auto& g = n->ensure_grad();
                                   for (size_t j = 0; j < g.size(); ++j)
                                       g[j] += self.grad[off + j];
                                   off += g.size();
                               }
                           });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    if (x.shape().rank() != 2 || w.shape().rank() != 2)
        throw std::invalid_argument("linear: expected 2-D x and w, got " + x.shape().str() +
                                    " and " + w.shape().str());
    int64_t n = x.shape()[0], k = x.shape()[1], m = w.shape()[1];
    if (w.shape()[0] != k)
        throw std::invalid_argument("linear: inner dim mismatch " + x.shape().str() + " @ " +
                                    w.shape().str());
    bool has_bias = bias.defined();
    if (has_bias && (bias.shape().rank() != 1 || bias.shape()[0] != m))
        throw std::invalid_argument("linear: bias shape mismatch");

    std::vector<Scalar> out(static_cast<size_t>(n * m), 0.0);
    const auto& xv = x.values();
    const auto& wv = w.values();
    for (int64_t i = 0; i < n; ++i)
        for (int64_t kk = 0; kk < k; ++kk) {
            Scalar xi = xv[static_cast<size_t>(i * k + kk)];
            const Scalar* wrow = wv.data() + kk * m;
            Scalar* orow = out.data() + i * m;
            for (int64_t j = 0; j < m; ++j) orow[j] += xi * wrow[j];
        }
    if (has_bias)
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < m; ++j) out[static_cast<size_t>(i * m + j)] += bias.values()[static_cast<size_t>(j)];

    auto xn = x.node(), wn = w.node();
    auto bn = has_bias ? bias.node() : nullptr;
    std::vector<Tensor> parents{x, w};
    if (has_bias) parents.push_back(bias);
    return Tensor::from_op(
        Shape{n, m}, std::move(out), std::move(parents),
        [xn, wn, bn, n, k, m](detail::TensorData& self) {
            auto& gx = xn->ensure_grad();
            auto& gw = wn->ensure_grad();
            const auto& go = self.grad;
            for (int64_t i = 0; i < n; ++i)
                for (int64_t kk = 0; kk < k; ++kk) {
                    const Scalar* grow = go.data() + i * m;
                    const Scalar* wrow = wn->values.data() + kk * m;
                    Scalar acc = 0.0;
                    for (int64_t j = 0; j < m; ++j) acc += grow[j] * wrow[j];
                    gx[static_cast<size_t>(i * k + kk)] += acc;
                    Scalar xi = xn->values[static_cast<size_t>(i * k + kk)];
                    Scalar* gwrow = gw.data() + kk * m;
                    for (int64_t j = 0; j < m; ++j) gwrow[j] += xi * grow[j];
                }
            if (bn) {
                auto& gb = bn->ensure_grad();
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < m; ++j)
                        gb[static_cast<size_t>(j)] += go[static_cast<size_t>(i * m + j)];
            }
        });
}

Tensor dropout(const Tensor& a, Scalar rate, bool train, std::mt19937_64& rng) {
    if (rate < 0.0 || rate >= 1.0)
        throw std::invalid_argument("dropout: rate must be in [0,1), got " + std::to_string(rate));
    if (!train || rate == 0.0) {
        // Eval mode is the identity (tape passthrough keeps gradients flowing).
        auto an = a.node();
        return Tensor::from_op(a.shape(), a.values(), {a}, [an](detail::TensorData& self) {
            auto& ga = an->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
        });
    }
    Scalar keep = 1.0 - rate;
    Scalar inv_keep = 1.0 / keep;
    std::vector<Scalar> mask(a.values().size());
    std::uniform_real_distribution<Scalar> uni(0.0, 1.0);
    for (auto& mv : mask) mv = uni(rng) < rate ? 0.0 : inv_keep;
    std::vector<Scalar> out(a.values().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * mask[i];
    auto an = a.node();
    return Tensor::from_op(a.shape(), std::move(out), {a},
                           [an, mask = std::move(mask)](detail::TensorData& self) {
                               auto& ga = an->ensure_grad();
                               for (size_t i = 0; i < self.grad.size(); ++i)
                                   ga[i] += self.grad[i] * mask[i];
                           });
}

}  // namespace nforge
