#include "latsync/tensor.hpp"

#include <cmath>
#include <sstream>

namespace latsync::ad {

std::size_t shape_size(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) {
        if (d <= 0) throw Error(msg("non-positive dimension in shape ", shape_str(s)));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

Tensor wrap_node(std::shared_ptr<Tensor::Node> n) { return Tensor(std::move(n)); }

Tensor Tensor::zeros(Shape s) {
    auto n = std::make_shared<Node>();
    std::size_t sz = shape_size(s);
    n->shape = std::move(s);
    n->values.assign(sz, 0.0);
    return wrap_node(std::move(n));
}

Tensor Tensor::full(Shape s, double v) {
    auto n = std::make_shared<Node>();
    std::size_t sz = shape_size(s);
    n->shape = std::move(s);
    n->values.assign(sz, v);
    return wrap_node(std::move(n));
}

Tensor Tensor::from_data(Shape s, std::vector<double> v) {
    auto n = std::make_shared<Node>();
    std::size_t sz = shape_size(s);
    if (v.size() != sz)
        throw Error(msg("data length ", v.size(), " does not match shape ", shape_str(s)));
    n->shape = std::move(s);
    n->values = std::move(v);
    return wrap_node(std::move(n));
}

Tensor Tensor::param(Shape s, std::vector<double> v) {
    Tensor t = from_data(std::move(s), std::move(v));
    t.set_requires_grad(true);
    return t;
}

const std::vector<double>& Tensor::grad() const {
    if (!n_) throw Error("grad() on undefined tensor");
    if (n_->grad.empty()) throw Error("grad() before any backward pass reached this tensor");
    return n_->grad;
}

double Tensor::value() const {
    if (!n_ || n_->values.size() != 1)
        throw Error("value() requires a single-element tensor");
    return n_->values[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
    if (!n_) throw Error("at() on undefined tensor");
    const Shape& s = n_->shape;
    if (idx.size() != s.size())
        throw Error(msg("at(): index rank ", idx.size(), " vs shape ", shape_str(s)));
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (int i : idx) {
        if (i < 0 || i >= s[axis])
            throw Error(msg("at(): index ", i, " out of range for axis ", axis, " of ", shape_str(s)));
        flat = flat * static_cast<std::size_t>(s[axis]) + static_cast<std::size_t>(i);
        ++axis;
    }
    return n_->values[flat];
}

Tensor Tensor::detached() const {
    if (!n_) return Tensor();
    return from_data(n_->shape, n_->values);
}

bool Tensor::all_finite() const {
    if (!n_) return true;
    for (double v : n_->values)
        if (!std::isfinite(v)) return false;
    return true;
}

namespace {
thread_local GradientTape* g_active_tape = nullptr;
thread_local int g_finite_check_depth = 0;
}  // namespace

GradientTape::GradientTape() {
    prev_ = g_active_tape;
    g_active_tape = this;
}

GradientTape::~GradientTape() { g_active_tape = prev_; }

GradientTape* GradientTape::active() { return g_active_tape; }

void GradientTape::record(const char* op, std::function<void()> backward_fn) {
    entries_.push_back(Entry{op, std::move(backward_fn)});
}

void GradientTape::backward(const Tensor& root) {
    if (consumed_) throw Error("backward() called twice on one tape");
    consumed_ = true;
    if (!root.defined() || root.size() != 1)
        throw Error("backward() root must be a single-element tensor");
    root.node()->grad_buffer()[0] += 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it)
        it->backward_fn();
}

NoGradGuard::NoGradGuard() : prev_(g_active_tape) { g_active_tape = nullptr; }
NoGradGuard::~NoGradGuard() { g_active_tape = prev_; }

ScopedFiniteCheck::ScopedFiniteCheck() { ++g_finite_check_depth; }
ScopedFiniteCheck::~ScopedFiniteCheck() { --g_finite_check_depth; }
bool ScopedFiniteCheck::enabled() { return g_finite_check_depth > 0; }

}  // namespace latsync::ad
