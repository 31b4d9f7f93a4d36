#pragma once

#include <string>
#include <utility>
#include <vector>

#include "latsync/ops.hpp"
#include "latsync/rng.hpp"
#include "latsync/tensor.hpp"

namespace latsync::nn {

// Ordered collection of named trainable tensors. Order is the serialization
// and optimizer-state order, so it must be construction-deterministic.
class ParamRegistry {
public:
    ad::Tensor add(const std::string& name, ad::Tensor t);

    const std::vector<std::pair<std::string, ad::Tensor>>& items() const { return items_; }
    std::size_t count() const { return items_.size(); }
    std::size_t total_values() const;
    const ad::Tensor* find(const std::string& name) const;

    void zero_grads();
    // Flattened copies of values/grads in registry order (missing grads read 0).
    std::vector<double> gather_values() const;
    std::vector<double> gather_grads() const;
    void scatter_values(const std::vector<double>& flat);

private:
    std::vector<std::pair<std::string, ad::Tensor>> items_;
};

// Uniform Glorot initialization for a conv kernel [Kh,Kw,Cin,Cout].
ad::Tensor glorot_kernel(int kh, int kw, int cin, int cout, Rng& rng);

// Plain convolution layer; bias optional.
struct Conv2d {
    ad::Tensor kernel;  // [Kh,Kw,Cin,Cout]
    ad::Tensor bias;    // [Cout] or undefined
    int stride = 1;
    int pad = 0;

    static Conv2d make(ParamRegistry& reg, const std::string& name, int kh, int kw, int cin,
                       int cout, int stride, int pad, bool with_bias, Rng& rng,
                       double bias_init = 0.0);
    ad::Tensor operator()(const ad::Tensor& x) const;
};

// Multi-resolution convolution: three parallel 3x3 branches at full, half and
// quarter resolution; the coarse branches are average-pooled down and
// nearest-neighbour upsampled back, then all branches are summed. Only the
// full-resolution branch carries the bias, so the layer has one bias per
// output channel like a plain conv. A single_scale instance degrades to one
// ordinary 3x3 convolution.
struct MultiResConv {
    Conv2d full, half, quarter;
    bool single_scale = false;

    static MultiResConv make(ParamRegistry& reg, const std::string& name, int cin, int cout,
                             bool single_scale, bool with_bias, Rng& rng, double bias_init = 0.0);
    ad::Tensor operator()(const ad::Tensor& x) const;  // needs H,W divisible by 4
};

}  // namespace latsync::nn
