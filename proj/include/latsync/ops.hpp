#pragma once

#include <functional>
#include <vector>

#include "latsync/tensor.hpp"

namespace latsync::ad {

// Elementwise ops require identical shapes, except mul/add, which also accept
// one operand of shape [H,W,1] against another of shape [H,W,C]; the single
// channel is broadcast across C (gradient of the broadcast side sums over C).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double k);       // a * k, k constant
Tensor add_scalar(const Tensor& a, double k);  // a + k, k constant

Tensor exp(const Tensor& a);
Tensor sigmoid(const Tensor& a);  // numerically stable for large |x|
Tensor tanh(const Tensor& a);

// 2-D convolution, channel-last. input [H,W,Cin], kernel [Kh,Kw,Cin,Cout],
// optional bias [Cout] (pass an undefined Tensor for none). Zero padding of
// `pad` cells on every spatial edge; output [Ho,Wo,Cout] with
// Ho = (H + 2*pad - Kh)/stride + 1 (floor), likewise Wo.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride = 1, int pad = 0);

Tensor avg_pool2(const Tensor& a);  // 2x2 mean, stride 2; H and W must be even
Tensor upsample2(const Tensor& a);  // nearest-neighbour x2; grad sums each 2x2 block

Tensor concat_c(const std::vector<Tensor>& parts);   // along the channel axis
Tensor slice_c(const Tensor& a, int c0, int c1);     // channels [c0, c1)

Tensor sum(const Tensor& a);  // full reduction to a [1] scalar

// Detached elementwise maximum across tensors of identical shape; the result
// carries no gradient (used to shift logits before exp without affecting
// derivatives, as the softmax shift cancels analytically).
Tensor cmax_detached(const std::vector<Tensor>& ts);

// Weighted binary cross-entropy on logits, reduced to a [1] scalar:
//   sum_i w_i * (max(x_i,0) - x_i*t_i + log(1 + exp(-|x_i|)))
// targets/weights are treated as constants.
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets, const Tensor& weights);

// Weighted smooth-L1 (Huber, delta=1), reduced to a [1] scalar:
//   d = p - t;  |d| < 1 ? 0.5*d^2 : |d| - 0.5, each term scaled by w_i.
Tensor smooth_l1(const Tensor& pred, const Tensor& target, const Tensor& weights);

// Central-difference gradient audit. Marks every input as trainable, runs f
// once under a fresh tape to get reverse-mode gradients, then probes each
// input component with +/-eps evaluations of f (recording suspended) and
// returns the worst relative error  max |g_ad - g_fd| / max(1, |g_fd|).
double finite_diff_check(const std::function<Tensor(std::vector<Tensor>&)>& f,
                         std::vector<Tensor> inputs, double eps = 1e-5);

// Test hook: when enabled, conv2d's input gradient is deliberately wrong.
// Lets callers demonstrate that finite_diff_check actually detects a broken
// backward rule.
void set_conv2d_grad_fault(bool enabled);

}  // namespace latsync::ad
