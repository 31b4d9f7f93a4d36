#include "latsync/nn.hpp"

#include <cmath>

namespace latsync::nn {

using ad::Tensor;

Tensor ParamRegistry::add(const std::string& name, Tensor t) {
    if (find(name)) throw Error(msg("duplicate parameter name '", name, "'"));
    t.set_requires_grad(true);
    items_.emplace_back(name, t);
    return t;
}

std::size_t ParamRegistry::total_values() const {
    std::size_t n = 0;
    for (const auto& [name, t] : items_) n += t.size();
    return n;
}

const Tensor* ParamRegistry::find(const std::string& name) const {
    for (const auto& item : items_)
        if (item.first == name) return &item.second;
    return nullptr;
}

void ParamRegistry::zero_grads() {
    for (auto& [name, t] : items_) t.zero_grad();
}

std::vector<double> ParamRegistry::gather_values() const {
    std::vector<double> flat;
    flat.reserve(total_values());
    for (const auto& [name, t] : items_)
        flat.insert(flat.end(), t.values().begin(), t.values().end());
    return flat;
}

std::vector<double> ParamRegistry::gather_grads() const {
    std::vector<double> flat;
    flat.reserve(total_values());
    for (const auto& [name, t] : items_) {
        if (t.has_grad()) {
            flat.insert(flat.end(), t.grad().begin(), t.grad().end());
        } else {
            flat.insert(flat.end(), t.size(), 0.0);
        }
    }
    return flat;
}

void ParamRegistry::scatter_values(const std::vector<double>& flat) {
    if (flat.size() != total_values())
        throw Error(msg("parameter vector length ", flat.size(), " does not match model size ",
                        total_values()));
    std::size_t off = 0;
    for (auto& [name, t] : items_) {
        double* dst = t.data_mut();
        for (std::size_t i = 0; i < t.size(); ++i) dst[i] = flat[off + i];
        off += t.size();
    }
}

Tensor glorot_kernel(int kh, int kw, int cin, int cout, Rng& rng) {
    const double fan_in = static_cast<double>(kh) * kw * cin;
    const double fan_out = static_cast<double>(kh) * kw * cout;
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::vector<double> v(static_cast<std::size_t>(kh) * kw * cin * cout);
    for (double& x : v) x = rng.uniform(-limit, limit);
    return Tensor::from_data({kh, kw, cin, cout}, std::move(v));
}

Conv2d Conv2d::make(ParamRegistry& reg, const std::string& name, int kh, int kw, int cin,
                    int cout, int stride, int pad, bool with_bias, Rng& rng, double bias_init) {
    Conv2d c;
    c.kernel = reg.add(name + ".kernel", glorot_kernel(kh, kw, cin, cout, rng));
    if (with_bias)
        c.bias = reg.add(name + ".bias",
                         Tensor::from_data({cout}, std::vector<double>(cout, bias_init)));
    c.stride = stride;
    c.pad = pad;
    return c;
}

Tensor Conv2d::operator()(const Tensor& x) const { return ad::conv2d(x, kernel, bias, stride, pad); }

MultiResConv MultiResConv::make(ParamRegistry& reg, const std::string& name, int cin, int cout,
                                bool single_scale, bool with_bias, Rng& rng, double bias_init) {
    MultiResConv m;
    m.single_scale = single_scale;
    m.full = Conv2d::make(reg, name + ".full", 3, 3, cin, cout, 1, 1, with_bias, rng, bias_init);
    if (!single_scale) {
        m.half = Conv2d::make(reg, name + ".half", 3, 3, cin, cout, 1, 1, false, rng);
        m.quarter = Conv2d::make(reg, name + ".quarter", 3, 3, cin, cout, 1, 1, false, rng);
    }
    return m;
}

Tensor MultiResConv::operator()(const Tensor& x) const {
    Tensor y = full(x);
    if (single_scale) return y;
    if (x.dim(0) % 4 || x.dim(1) % 4)
        throw Error(msg("multi-resolution conv needs H,W divisible by 4, got ",
                        ad::shape_str(x.shape())));
    Tensor h2 = ad::avg_pool2(x);
    y = ad::add(y, ad::upsample2(half(h2)));
    Tensor h4 = ad::avg_pool2(h2);
    y = ad::add(y, ad::upsample2(ad::upsample2(quarter(h4))));
    return y;
}

}  // namespace latsync::nn
