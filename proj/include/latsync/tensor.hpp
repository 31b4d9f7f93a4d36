#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "latsync/error.hpp"

namespace latsync::ad {

// Shapes are row-major with the channel axis last: [H,W,C] for maps,
// [Kh,Kw,Cin,Cout] for convolution kernels, [C] for biases, [1] for scalars.
using Shape = std::vector<int>;

std::size_t shape_size(const Shape& s);
std::string shape_str(const Shape& s);
bool same_shape(const Shape& a, const Shape& b);

// Dense double-precision array with reverse-mode gradient storage.
// Values are immutable once an op has consumed the tensor; gradients
// accumulate additively during a backward pass and are cleared with
// zero_grad(). Copying a Tensor copies the handle, not the storage.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape s);
    static Tensor full(Shape s, double v);
    static Tensor from_data(Shape s, std::vector<double> v);
    // Trainable tensor: requires_grad is set and survives no-grad scopes.
    static Tensor param(Shape s, std::vector<double> v);

    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const { return n_->shape; }
    int rank() const { return static_cast<int>(n_->shape.size()); }
    int dim(int i) const { return n_->shape[static_cast<std::size_t>(i)]; }
    std::size_t size() const { return n_->values.size(); }

    const double* data() const { return n_->values.data(); }
    double* data_mut() { return n_->values.data(); }
    const std::vector<double>& values() const { return n_->values; }

    bool requires_grad() const { return n_ && n_->requires_grad; }
    void set_requires_grad(bool v) { n_->requires_grad = v; }

    // Gradient buffer; empty until touched by a backward pass.
    bool has_grad() const { return n_ && !n_->grad.empty(); }
    const std::vector<double>& grad() const;
    void zero_grad() { if (n_) n_->grad.clear(); }

    // Scalar convenience accessors.
    double value() const;
    double at(std::initializer_list<int> idx) const;

    // Value copy detached from any gradient bookkeeping.
    Tensor detached() const;

    bool all_finite() const;

    struct Node {
        Shape shape;
        std::vector<double> values;
        std::vector<double> grad;  // same length as values once allocated
        bool requires_grad = false;

        std::vector<double>& grad_buffer() {
            if (grad.empty()) grad.assign(values.size(), 0.0);
            return grad;
        }
    };

    const std::shared_ptr<Node>& node() const { return n_; }

private:
    explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}
    std::shared_ptr<Node> n_;

    friend Tensor wrap_node(std::shared_ptr<Node> n);
};

Tensor wrap_node(std::shared_ptr<Tensor::Node> n);

// Record of executed differentiable ops on the current thread. While a tape
// is alive, every primitive whose inputs require grad appends a backward
// closure; backward() replays the closures once each, in reverse execution
// order (which is a reverse topological order of the dataflow graph).
//
// Gradients of tensors used several times accumulate across closures.
// One backward() call per tape; parameters keep their grads until zero_grad().
class GradientTape {
public:
    GradientTape();
    ~GradientTape();
    GradientTape(const GradientTape&) = delete;
    GradientTape& operator=(const GradientTape&) = delete;

    void backward(const Tensor& root);
    std::size_t op_count() const { return entries_.size(); }

    static GradientTape* active();
    static bool recording() { return active() != nullptr; }

    void record(const char* op, std::function<void()> backward_fn);

private:
    struct Entry {
        const char* op;
        std::function<void()> backward_fn;
    };
    std::vector<Entry> entries_;
    GradientTape* prev_ = nullptr;
    bool consumed_ = false;
};

// Suspends recording on this thread: ops executed while an instance is alive
// are not taped and produce tensors with requires_grad=false outputs.
// Used for teacher passes and finite-difference probes.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    GradientTape* prev_;
};

// While any instance is alive on this thread, every primitive validates that
// its output is finite and throws NumericError naming the op otherwise.
class ScopedFiniteCheck {
public:
    ScopedFiniteCheck();
    ~ScopedFiniteCheck();
    static bool enabled();
};

}  // namespace latsync::ad
