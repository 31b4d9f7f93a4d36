#include "latsync/ops.hpp"

#include <algorithm>
#include <cmath>

namespace latsync::ad {

namespace {

using Node = Tensor::Node;
using NodePtr = std::shared_ptr<Node>;

bool g_conv2d_grad_fault = false;

void check_finite(const char* op, const std::vector<double>& v) {
    if (!ScopedFiniteCheck::enabled()) return;
    for (double x : v)
        if (!std::isfinite(x))
            throw NumericError(msg("non-finite value produced by op '", op, "'"));
}

bool track(std::initializer_list<const Tensor*> ins) {
    if (!GradientTape::recording()) return false;
    for (const Tensor* t : ins)
        if (t->requires_grad()) return true;
    return false;
}

Tensor make_out(const char* op, Shape shape, std::vector<double> values, bool requires_grad) {
    check_finite(op, values);
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    n->requires_grad = requires_grad;
    return wrap_node(std::move(n));
}

void require_defined(const char* op, const Tensor& t) {
    if (!t.defined()) throw Error(msg(op, ": undefined tensor operand"));
}

// Broadcast classification for binary elementwise ops.
enum class BinMode { Same, BcastA, BcastB };  // BcastA: a is [H,W,1], b is [H,W,C]

BinMode bin_mode(const char* op, const Tensor& a, const Tensor& b) {
    if (same_shape(a.shape(), b.shape())) return BinMode::Same;
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() == 3 && sb.size() == 3 && sa[0] == sb[0] && sa[1] == sb[1]) {
        if (sa[2] == 1 && sb[2] > 1) return BinMode::BcastA;
        if (sb[2] == 1 && sa[2] > 1) return BinMode::BcastB;
    }
    throw Error(msg(op, ": shape mismatch ", shape_str(sa), " vs ", shape_str(sb)));
}

// Shared skeleton for add/sub/mul with optional single-channel broadcast.
template <class FwdSame, class FwdBcast, class Bwd>
Tensor binary_op(const char* op, const Tensor& a, const Tensor& b, bool allow_bcast,
                 FwdSame fwd_same, FwdBcast fwd_bcast, Bwd bwd) {
    require_defined(op, a);
    require_defined(op, b);
    BinMode mode = bin_mode(op, a, b);
    if (mode != BinMode::Same && !allow_bcast)
        throw Error(msg(op, ": shape mismatch ", shape_str(a.shape()), " vs ",
                        shape_str(b.shape())));

    const Shape& out_shape = (mode == BinMode::BcastA) ? b.shape() : a.shape();
    std::vector<double> out(shape_size(out_shape));

    if (mode == BinMode::Same) {
        fwd_same(a.values(), b.values(), out);
    } else {
        // Arrange so x is the broadcast [H,W,1] side, y the full side.
        const Tensor& x = (mode == BinMode::BcastA) ? a : b;
        const Tensor& y = (mode == BinMode::BcastA) ? b : a;
        int C = y.dim(2);
        std::size_t cells = x.size();
        fwd_bcast(x.values(), y.values(), out, cells, C, mode == BinMode::BcastA);
    }

    bool rg = track({&a, &b});
    Tensor result = make_out(op, out_shape, std::move(out), rg);
    if (rg) {
        NodePtr na = a.node(), nb = b.node(), no = result.node();
        GradientTape::active()->record(op, [na, nb, no, mode, bwd]() {
            if (no->grad.empty()) return;
            bwd(*na, *nb, *no, mode);
        });
    }
    return result;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        "add", a, b, true,
        [](const std::vector<double>& av, const std::vector<double>& bv, std::vector<double>& out) {
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
        },
        [](const std::vector<double>& xv, const std::vector<double>& yv, std::vector<double>& out,
           std::size_t cells, int C, bool) {
            for (std::size_t p = 0; p < cells; ++p)
                for (int c = 0; c < C; ++c)
                    out[p * C + c] = xv[p] + yv[p * C + c];
        },
        [](Node& na, Node& nb, Node& no, BinMode mode) {
            const std::vector<double>& g = no.grad;
            if (mode == BinMode::Same) {
                if (na.requires_grad) {
                    auto& ga = na.grad_buffer();
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                }
                if (nb.requires_grad) {
                    auto& gb = nb.grad_buffer();
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                }
                return;
            }
            Node& nx = (mode == BinMode::BcastA) ? na : nb;  // [H,W,1]
            Node& ny = (mode == BinMode::BcastA) ? nb : na;
            int C = ny.shape[2];
            std::size_t cells = nx.values.size();
            if (nx.requires_grad) {
                auto& gx = nx.grad_buffer();
                for (std::size_t p = 0; p < cells; ++p) {
                    double s = 0.0;
                    for (int c = 0; c < C; ++c) s += g[p * C + c];
                    gx[p] += s;
                }
            }
            if (ny.requires_grad) {
                auto& gy = ny.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) gy[i] += g[i];
            }
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        "sub", a, b, false,
        [](const std::vector<double>& av, const std::vector<double>& bv, std::vector<double>& out) {
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
        },
        [](const std::vector<double>&, const std::vector<double>&, std::vector<double>&,
           std::size_t, int, bool) {},
        [](Node& na, Node& nb, Node& no, BinMode) {
            const std::vector<double>& g = no.grad;
            if (na.requires_grad) {
                auto& ga = na.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (nb.requires_grad) {
                auto& gb = nb.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        "mul", a, b, true,
        [](const std::vector<double>& av, const std::vector<double>& bv, std::vector<double>& out) {
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
        },
        [](const std::vector<double>& xv, const std::vector<double>& yv, std::vector<double>& out,
           std::size_t cells, int C, bool) {
            for (std::size_t p = 0; p < cells; ++p)
                for (int c = 0; c < C; ++c)
                    out[p * C + c] = xv[p] * yv[p * C + c];
        },
        [](Node& na, Node& nb, Node& no, BinMode mode) {
            const std::vector<double>& g = no.grad;
            if (mode == BinMode::Same) {
                if (na.requires_grad) {
                    auto& ga = na.grad_buffer();
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * nb.values[i];
                }
                if (nb.requires_grad) {
                    auto& gb = nb.grad_buffer();
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * na.values[i];
                }
                return;
            }
            Node& nx = (mode == BinMode::BcastA) ? na : nb;  // [H,W,1]
            Node& ny = (mode == BinMode::BcastA) ? nb : na;
            int C = ny.shape[2];
            std::size_t cells = nx.values.size();
            if (nx.requires_grad) {
                auto& gx = nx.grad_buffer();
                for (std::size_t p = 0; p < cells; ++p) {
                    double s = 0.0;
                    for (int c = 0; c < C; ++c) s += g[p * C + c] * ny.values[p * C + c];
                    gx[p] += s;
                }
            }
            if (ny.requires_grad) {
                auto& gy = ny.grad_buffer();
                for (std::size_t p = 0; p < cells; ++p)
                    for (int c = 0; c < C; ++c)
                        gy[p * C + c] += g[p * C + c] * nx.values[p];
            }
        });
}

Tensor div(const Tensor& a, const Tensor& b) {
    require_defined("div", a);
    require_defined("div", b);
    if (!same_shape(a.shape(), b.shape()))
        throw Error(msg("div: shape mismatch ", shape_str(a.shape()), " vs ",
                        shape_str(b.shape())));
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] / b.values()[i];
    bool rg = track({&a, &b});
    Tensor result = make_out("div", a.shape(), std::move(out), rg);
    if (rg) {
        NodePtr na = a.node(), nb = b.node(), no = result.node();
        GradientTape::active()->record("div", [na, nb, no]() {
            if (no->grad.empty()) return;
            const std::vector<double>& g = no->grad;
            if (na->requires_grad) {
                auto& ga = na->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / nb->values[i];
            }
            if (nb->requires_grad) {
                auto& gb = nb->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i)
                    gb[i] -= g[i] * na->values[i] / (nb->values[i] * nb->values[i]);
            }
        });
    }
    return result;
}

Tensor scale(const Tensor& a, double k) {
    require_defined("scale", a);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * k;
    bool rg = track({&a});
    Tensor result = make_out("scale", a.shape(), std::move(out), rg);
    if (rg) {
        NodePtr na = a.node(), no = result.node();
        GradientTape::active()->record("scale", [na, no, k]() {
            if (no->grad.empty()) return;
            auto& ga = na->grad_buffer();
            for (std::size_t i = 0; i < no->grad.size(); ++i) ga[i] += no->grad[i] * k;
        });
    }
    return result;
}

Tensor add_scalar(const Tensor& a, double k) {
    require_defined("add_scalar", a);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + k;
    bool rg = track({&a});
    Tensor result = make_out("add_scalar", a.shape(), std::move(out), rg);
    if (rg) {
        NodePtr na = a.node(), no = result.node();
        GradientTape::active()->record("add_scalar", [na, no]() {
            if (no->grad.empty()) return;
            auto& ga = na->grad_buffer();
            for (std::size_t i = 0; i < no->grad.size(); ++i) ga[i] += no->grad[i];
        });
    }
    return result;
}

namespace {

template <class Fwd, class Bwd>
Tensor unary_op(const char* op, const Tensor& a, Fwd fwd, Bwd bwd) {
    require_defined(op, a);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.values()[i]);
    bool rg = track({&a});
    Tensor result = make_out(op, a.shape(), std::move(out), rg);
    if (rg) {
        NodePtr na = a.node(), no = result.node();
        GradientTape::active()->record(op, [na, no, bwd]() {
            if (no->grad.empty()) return;
            auto& ga = na->grad_buffer();
            for (std::size_t i = 0; i < no->grad.size(); ++i)
                ga[i] += no->grad[i] * bwd(na->values[i], no->values[i]);
        });
    }
    return result;
}

}  // namespace

Tensor exp(const Tensor& a) {
    return unary_op(
        "exp", a, [](double x) { return std::exp(x); },
        [](double, double y) { return y; });
}

Tensor sigmoid(const Tensor& a) {
    return unary_op(
        "sigmoid", a,
        [](double x) {
            if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
            double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
    return unary_op(
        "tanh", a, [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, int pad) {
    require_defined("conv2d", input);
    require_defined("conv2d", kernel);
    if (input.rank() != 3) throw Error(msg("conv2d: input must be [H,W,C], got ",
                                           shape_str(input.shape())));
    if (kernel.rank() != 4) throw Error(msg("conv2d: kernel must be [Kh,Kw,Cin,Cout], got ",
                                            shape_str(kernel.shape())));
    if (stride < 1) throw Error("conv2d: stride must be >= 1");
    if (pad < 0) throw Error("conv2d: pad must be >= 0");
    const int H = input.dim(0), W = input.dim(1), Cin = input.dim(2);
    const int Kh = kernel.dim(0), Kw = kernel.dim(1), Cout = kernel.dim(3);
    if (kernel.dim(2) != Cin)
        throw Error(msg("conv2d: kernel expects ", kernel.dim(2), " input channels, input has ",
                        Cin));
    if (bias.defined() && !(bias.rank() == 1 && bias.dim(0) == Cout))
        throw Error(msg("conv2d: bias must be [", Cout, "], got ", shape_str(bias.shape())));
    const int Ho = (H + 2 * pad - Kh) / stride + 1;
    const int Wo = (W + 2 * pad - Kw) / stride + 1;
    if (H + 2 * pad < Kh || W + 2 * pad < Kw || Ho <= 0 || Wo <= 0)
        throw Error(msg("conv2d: kernel ", Kh, "x", Kw, " too large for padded input ",
                        H + 2 * pad, "x", W + 2 * pad));

    std::vector<double> out(static_cast<std::size_t>(Ho) * Wo * Cout, 0.0);
    const double* in = input.data();
    const double* K = kernel.data();

    for (int oy = 0; oy < Ho; ++oy) {
        for (int ox = 0; ox < Wo; ++ox) {
            double* op = &out[(static_cast<std::size_t>(oy) * Wo + ox) * Cout];
            if (bias.defined()) {
                const double* bp = bias.data();
                for (int co = 0; co < Cout; ++co) op[co] = bp[co];
            }
            for (int ky = 0; ky < Kh; ++ky) {
                const int iy = oy * stride + ky - pad;
                if (iy < 0 || iy >= H) continue;
                for (int kx = 0; kx < Kw; ++kx) {
                    const int ix = ox * stride + kx - pad;
                    if (ix < 0 || ix >= W) continue;
                    const double* ip = &in[(static_cast<std::size_t>(iy) * W + ix) * Cin];
                    const double* kp = &K[(static_cast<std::size_t>(ky) * Kw + kx) * Cin * Cout];
                    for (int ci = 0; ci < Cin; ++ci) {
                        const double v = ip[ci];
                        const double* kc = &kp[static_cast<std::size_t>(ci) * Cout];
                        for (int co = 0; co < Cout; ++co) op[co] += v * kc[co];
                    }
                }
            }
        }
    }

    bool rg = bias.defined() ? track({&input, &kernel, &bias}) : track({&input, &kernel});
    Tensor result = make_out("conv2d", Shape{Ho, Wo, Cout}, std::move(out), rg);
    if (rg) {
        NodePtr ni = input.node(), nk = kernel.node(), no = result.node();
        NodePtr nb = bias.defined() ? bias.node() : nullptr;
        GradientTape::active()->record("conv2d", [ni, nk, nb, no, H, W, Cin, Kh, Kw, Cout, Ho, Wo,
                                                  stride, pad]() {
            if (no->grad.empty()) return;
            const std::vector<double>& g = no->grad;
            const double* K = nk->values.data();
            const double* in = ni->values.data();
            const bool want_in = ni->requires_grad;
            const bool want_k = nk->requires_grad;
            double* gi = want_in ? ni->grad_buffer().data() : nullptr;
            double* gk = want_k ? nk->grad_buffer().data() : nullptr;

            if (nb && nb->requires_grad) {
                auto& gb = nb->grad_buffer();
                for (int oy = 0; oy < Ho; ++oy)
                    for (int ox = 0; ox < Wo; ++ox) {
                        const double* gp = &g[(static_cast<std::size_t>(oy) * Wo + ox) * Cout];
                        for (int co = 0; co < Cout; ++co) gb[co] += gp[co];
                    }
            }
            if (!want_in && !want_k) return;

            for (int oy = 0; oy < Ho; ++oy) {
                for (int ox = 0; ox < Wo; ++ox) {
                    const double* gp = &g[(static_cast<std::size_t>(oy) * Wo + ox) * Cout];
                    for (int ky = 0; ky < Kh; ++ky) {
                        const int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= H) continue;
                        for (int kx = 0; kx < Kw; ++kx) {
                            const int ix = ox * stride + kx - pad;
                            if (ix < 0 || ix >= W) continue;
                            const std::size_t ibase =
                                (static_cast<std::size_t>(iy) * W + ix) * Cin;
                            const std::size_t kbase =
                                (static_cast<std::size_t>(ky) * Kw + kx) * Cin * Cout;
                            for (int ci = 0; ci < Cin; ++ci) {
                                const double* kc = &K[kbase + static_cast<std::size_t>(ci) * Cout];
                                if (want_in) {
                                    double s = 0.0;
                                    for (int co = 0; co < Cout; ++co) s += gp[co] * kc[co];
                                    if (g_conv2d_grad_fault) s *= 1.01;
                                    gi[ibase + ci] += s;
                                }
                                if (want_k) {
                                    const double v = in[ibase + ci];
                                    double* gkc = &gk[kbase + static_cast<std::size_t>(ci) * Cout];
                                    for (int co = 0; co < Cout; ++co) gkc[co] += v * gp[co];
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    return result;
}

Tensor avg_pool2(const Tensor& a) {
    require_defined("avg_pool2", a);
    if (a.rank() != 3) throw Error("avg_pool2: input must be [H,W,C]");
    const int H = a.dim(0), W = a.dim(1), C = a.dim(2);
    if (H % 2 || W % 2)
        throw Error(msg("avg_pool2: H and W must be even, got ", shape_str(a.shape())));
    const int Ho = H / 2, Wo = W / 2;
    std::vector<double> out(static_cast<std::size_t>(Ho) * Wo * C);
    const double* in = a.data();
    for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
            const double* r0 = &in[(static_cast<std::size_t>(2 * oy) * W + 2 * ox) * C];
            const double* r1 = &in[(static_cast<std::size_t>(2 * oy + 1) * W + 2 * ox) * C];
            double* op = &out[(static_cast<std::size_t>(oy) * Wo + ox) * C];
            for (int c = 0; c < C; ++c)
                op[c] = 0.25 * (r0[c] + r0[C + c] + r1[c] + r1[C + c]);
        }
    bool rg = track({&a});
    Tensor result = make_out("avg_pool2", Shape{Ho, Wo, C}, std::move(out), rg);
    if (rg) {
        NodePtr na = a.node(), no = result.node();
        GradientTape::active()->record("avg_pool2", [na, no, Ho, Wo, W, C]() {
            if (no->grad.empty()) return;
            auto& ga = na->grad_buffer();
            const std::vector<double>& g = no->grad;
            for (int oy = 0; oy < Ho; ++oy)
                for (int ox = 0; ox < Wo; ++ox) {
                    const double* gp = &g[(static_cast<std::size_t>(oy) * Wo + ox) * C];
                    double* r0 = &ga[(static_cast<std::size_t>(2 * oy) * W + 2 * ox) * C];
                    double* r1 = &ga[(static_cast<std::size_t>(2 * oy + 1) * W + 2 * ox) * C];
                    for (int c = 0; c < C; ++c) {
                        const double q = 0.25 * gp[c];
                        r0[c] += q;
                        r0[C + c] += q;
                        r1[c] += q;
                        r1[C + c] += q;
                    }
                }
        });
    }
    return result;
}

Tensor upsample2(const Tensor& a) {
    require_defined("upsample2", a);
    if (a.rank() != 3) throw Error("upsample2: input must be [H,W,C]");
    const int H = a.dim(0), W = a.dim(1), C = a.dim(2);
    const int Ho = 2 * H, Wo = 2 * W;
    std::vector<double> out(static_cast<std::size_t>(Ho) * Wo * C);
    const double* in = a.data();
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const double* ip = &in[(static_cast<std::size_t>(y) * W + x) * C];
            for (int dy = 0; dy < 2; ++dy) {
                double* op = &out[(static_cast<std::size_t>(2 * y + dy) * Wo + 2 * x) * C];
                for (int c = 0; c < C; ++c) {
                    op[c] = ip[c];
                    op[C + c] = ip[c];
                }
            }
        }
    bool rg = track({&a});
    Tensor result = make_out("upsample2", Shape{Ho, Wo, C}, std::move(out), rg);
    if (rg) {
        NodePtr na = a.node(), no = result.node();
        GradientTape::active()->record("upsample2", [na, no, H, W, C, Wo]() {
            if (no->grad.empty()) return;
            auto& ga = na->grad_buffer();
            const std::vector<double>& g = no->grad;
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    double* gp = &ga[(static_cast<std::size_t>(y) * W + x) * C];
                    for (int dy = 0; dy < 2; ++dy) {
                        const double* op =
                            &g[(static_cast<std::size_t>(2 * y + dy) * Wo + 2 * x) * C];
                        for (int c = 0; c < C; ++c) gp[c] += op[c] + op[C + c];
                    }
                }
        });
    }
    return result;
}

Tensor concat_c(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw Error("concat_c: no inputs");
    for (const Tensor& t : parts) {
        require_defined("concat_c", t);
        if (t.rank() != 3) throw Error("concat_c: inputs must be [H,W,C]");
    }
    const int H = parts[0].dim(0), W = parts[0].dim(1);
    int Cout = 0;
    for (const Tensor& t : parts) {
        if (t.dim(0) != H || t.dim(1) != W)
            throw Error(msg("concat_c: spatial mismatch ", shape_str(parts[0].shape()), " vs ",
                            shape_str(t.shape())));
        Cout += t.dim(2);
    }
    std::vector<double> out(static_cast<std::size_t>(H) * W * Cout);
    std::size_t cells = static_cast<std::size_t>(H) * W;
    int coff = 0;
    for (const Tensor& t : parts) {
        const int C = t.dim(2);
        const double* ip = t.data();
        for (std::size_t p = 0; p < cells; ++p)
            for (int c = 0; c < C; ++c)
                out[p * Cout + coff + c] = ip[p * C + c];
        coff += C;
    }
    bool rg = false;
    if (GradientTape::recording())
        for (const Tensor& t : parts)
            if (t.requires_grad()) { rg = true; break; }
    Tensor result = make_out("concat_c", Shape{H, W, Cout}, std::move(out), rg);
    if (rg) {
        std::vector<NodePtr> nodes;
        nodes.reserve(parts.size());
        for (const Tensor& t : parts) nodes.push_back(t.node());
        NodePtr no = result.node();
        GradientTape::active()->record("concat_c", [nodes, no, cells, Cout]() {
            if (no->grad.empty()) return;
            const std::vector<double>& g = no->grad;
            int coff = 0;
            for (const NodePtr& n : nodes) {
                const int C = n->shape[2];
                if (n->requires_grad) {
                    auto& gn = n->grad_buffer();
                    for (std::size_t p = 0; p < cells; ++p)
                        for (int c = 0; c < C; ++c)
                            gn[p * C + c] += g[p * Cout + coff + c];
                }
                coff += C;
            }
        });
    }
    return result;
}

Tensor slice_c(const Tensor& a, int c0, int c1) {
    require_defined("slice_c", a);
    if (a.rank() != 3) throw Error("slice_c: input must be [H,W,C]");
    const int H = a.dim(0), W = a.dim(1), C = a.dim(2);
    if (c0 < 0 || c1 > C || c0 >= c1)
        throw Error(msg("slice_c: invalid channel range [", c0, ",", c1, ") for ",
                        shape_str(a.shape())));
    const int Cs = c1 - c0;
    std::size_t cells = static_cast<std::size_t>(H) * W;
    std::vector<double> out(cells * Cs);
    const double* ip = a.data();
    for (std::size_t p = 0; p < cells; ++p)
        for (int c = 0; c < Cs; ++c)
            out[p * Cs + c] = ip[p * C + c0 + c];
    bool rg = track({&a});
    Tensor result = make_out("slice_c", Shape{H, W, Cs}, std::move(out), rg);
    if (rg) {
        NodePtr na = a.node(), no = result.node();
        GradientTape::active()->record("slice_c", [na, no, cells, C, Cs, c0]() {
            if (no->grad.empty()) return;
            auto& ga = na->grad_buffer();
            const std::vector<double>& g = no->grad;
            for (std::size_t p = 0; p < cells; ++p)
                for (int c = 0; c < Cs; ++c)
                    ga[p * C + c0 + c] += g[p * Cs + c];
        });
    }
    return result;
}

Tensor sum(const Tensor& a) {
    require_defined("sum", a);
    double s = 0.0;
    for (double v : a.values()) s += v;
    bool rg = track({&a});
    Tensor result = make_out("sum", Shape{1}, {s}, rg);
    if (rg) {
        NodePtr na = a.node(), no = result.node();
        GradientTape::active()->record("sum", [na, no]() {
            if (no->grad.empty()) return;
            const double g = no->grad[0];
            auto& ga = na->grad_buffer();
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
        });
    }
    return result;
}

Tensor cmax_detached(const std::vector<Tensor>& ts) {
    if (ts.empty()) throw Error("cmax_detached: no inputs");
    const Shape& s = ts[0].shape();
    for (const Tensor& t : ts) {
        require_defined("cmax_detached", t);
        if (!same_shape(t.shape(), s))
            throw Error(msg("cmax_detached: shape mismatch ", shape_str(s), " vs ",
                            shape_str(t.shape())));
    }
    std::vector<double> out = ts[0].values();
    for (std::size_t k = 1; k < ts.size(); ++k) {
        const std::vector<double>& v = ts[k].values();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(out[i], v[i]);
    }
    return make_out("cmax_detached", s, std::move(out), false);
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets, const Tensor& weights) {
    require_defined("bce_with_logits", logits);
    require_defined("bce_with_logits", targets);
    require_defined("bce_with_logits", weights);
    if (!same_shape(logits.shape(), targets.shape()) ||
        !same_shape(logits.shape(), weights.shape()))
        throw Error(msg("bce_with_logits: shape mismatch ", shape_str(logits.shape()), " / ",
                        shape_str(targets.shape()), " / ", shape_str(weights.shape())));
    const std::vector<double>& x = logits.values();
    const std::vector<double>& t = targets.values();
    const std::vector<double>& w = weights.values();
    double loss = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double xi = x[i];
        loss += w[i] * (std::max(xi, 0.0) - xi * t[i] + std::log1p(std::exp(-std::abs(xi))));
    }
    bool rg = track({&logits});
    Tensor result = make_out("bce_with_logits", Shape{1}, {loss}, rg);
    if (rg) {
        NodePtr nx = logits.node(), nt = targets.node(), nw = weights.node(),
                no = result.node();
        GradientTape::active()->record("bce_with_logits", [nx, nt, nw, no]() {
            if (no->grad.empty()) return;
            const double g = no->grad[0];
            auto& gx = nx->grad_buffer();
            for (std::size_t i = 0; i < gx.size(); ++i) {
                const double xi = nx->values[i];
                double sig;
                if (xi >= 0.0) {
                    sig = 1.0 / (1.0 + std::exp(-xi));
                } else {
                    const double e = std::exp(xi);
                    sig = e / (1.0 + e);
                }
                gx[i] += g * nw->values[i] * (sig - nt->values[i]);
            }
        });
    }
    return result;
}

Tensor smooth_l1(const Tensor& pred, const Tensor& target, const Tensor& weights) {
    require_defined("smooth_l1", pred);
    require_defined("smooth_l1", target);
    require_defined("smooth_l1", weights);
    if (!same_shape(pred.shape(), target.shape()) ||
        !same_shape(pred.shape(), weights.shape()))
        throw Error(msg("smooth_l1: shape mismatch ", shape_str(pred.shape()), " / ",
                        shape_str(target.shape()), " / ", shape_str(weights.shape())));
    const std::vector<double>& p = pred.values();
    const std::vector<double>& t = target.values();
    const std::vector<double>& w = weights.values();
    double loss = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double d = p[i] - t[i];
        const double ad = std::abs(d);
        loss += w[i] * (ad < 1.0 ? 0.5 * d * d : ad - 0.5);
    }
    bool rg = track({&pred});
    Tensor result = make_out("smooth_l1", Shape{1}, {loss}, rg);
    if (rg) {
        NodePtr np = pred.node(), nt = target.node(), nw = weights.node(), no = result.node();
        GradientTape::active()->record("smooth_l1", [np, nt, nw, no]() {
            if (no->grad.empty()) return;
            const double g = no->grad[0];
            auto& gp = np->grad_buffer();
            for (std::size_t i = 0; i < gp.size(); ++i) {
                const double d = np->values[i] - nt->values[i];
                gp[i] += g * nw->values[i] * std::clamp(d, -1.0, 1.0);
            }
        });
    }
    return result;
}

double finite_diff_check(const std::function<Tensor(std::vector<Tensor>&)>& f,
                         std::vector<Tensor> inputs, double eps) {
    if (inputs.empty()) throw Error("finite_diff_check: no inputs");
    for (Tensor& t : inputs) t.set_requires_grad(true);

    std::vector<std::vector<double>> g_ad(inputs.size());
    {
        GradientTape tape;
        Tensor out = f(inputs);
        if (!out.defined() || out.size() != 1)
            throw Error("finite_diff_check: f must return a [1] scalar");
        tape.backward(out);
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            g_ad[i] = inputs[i].has_grad() ? inputs[i].grad()
                                           : std::vector<double>(inputs[i].size(), 0.0);
            inputs[i].zero_grad();
        }
    }

    double worst = 0.0;
    NoGradGuard silent;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        double* v = inputs[i].data_mut();
        for (std::size_t j = 0; j < inputs[i].size(); ++j) {
            const double keep = v[j];
            v[j] = keep + eps;
            const double fp = f(inputs).value();
            v[j] = keep - eps;
            const double fm = f(inputs).value();
            v[j] = keep;
            const double g_fd = (fp - fm) / (2.0 * eps);
            const double rel = std::abs(g_ad[i][j] - g_fd) / std::max(1.0, std::abs(g_fd));
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

void set_conv2d_grad_fault(bool enabled) { g_conv2d_grad_fault = enabled; }

}  // namespace latsync::ad
