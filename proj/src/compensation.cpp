#include "latsync/compensation.hpp"

#include "latsync/ops.hpp"

namespace latsync {

using ad::Tensor;

SpatialLSTMCell::SpatialLSTMCell(nn::ParamRegistry& reg, const std::string& name,
                                 int in_channels, int hidden_channels, bool multi_resolution,
                                 Rng& rng)
    : hidden_(hidden_channels) {
    auto in_conv = [&](const std::string& gate, double bias_init) {
        return nn::MultiResConv::make(reg, name + ".w_" + gate, in_channels, hidden_channels,
                                      !multi_resolution, true, rng, bias_init);
    };
    auto hid_conv = [&](const std::string& gate) {
        return nn::MultiResConv::make(reg, name + ".u_" + gate, hidden_channels, hidden_channels,
                                      !multi_resolution, false, rng);
    };
    wi_ = in_conv("input", 0.0);
    wf_ = in_conv("forget", 1.0);  // start remembering: forget gate biased open
    wo_ = in_conv("output", 0.0);
    wg_ = in_conv("candidate", 0.0);
    ui_ = hid_conv("input");
    uf_ = hid_conv("forget");
    uo_ = hid_conv("output");
    ug_ = hid_conv("candidate");
}

SpatialLSTMCell::State SpatialLSTMCell::initial_state(int height, int width) const {
    return State{ad::Tensor::zeros({height, width, hidden_}),
                 ad::Tensor::zeros({height, width, hidden_})};
}

SpatialLSTMCell::State SpatialLSTMCell::step(const Tensor& e, const State& s) const {
    Tensor i = ad::sigmoid(ad::add(wi_(e), ui_(s.h)));
    Tensor f = ad::sigmoid(ad::add(wf_(e), uf_(s.h)));
    Tensor o = ad::sigmoid(ad::add(wo_(e), uo_(s.h)));
    Tensor g = ad::tanh(ad::add(wg_(e), ug_(s.h)));
    Tensor c = ad::add(ad::mul(f, s.c), ad::mul(i, g));
    Tensor h = ad::mul(o, ad::tanh(c));
    return State{std::move(h), std::move(c)};
}

LatencyCompensator::LatencyCompensator(const ModelConfig& cfg, nn::ParamRegistry& reg, Rng& rng)
    : cfg_(cfg) {
    cfg_.validate();
    const int cf = cfg_.feature_channels;
    const int ch = cfg_.hidden_channels;
    const int ce = cf + 1;  // feature channels plus one attention channel
    const bool dual = cfg_.estimation == "fase";

    cell_f_ = SpatialLSTMCell(reg, "estimator.feature", ce, ch, cfg_.multi_resolution, rng);
    decode_f_ = nn::Conv2d::make(reg, "estimator.decode_feature", 1, 1, ch, cf, 1, 0, true, rng);
    if (dual) {
        cell_w_ = SpatialLSTMCell(reg, "estimator.attention", ce, ch, cfg_.multi_resolution, rng);
        decode_w_ =
            nn::Conv2d::make(reg, "estimator.decode_attention", 1, 1, ch, 1, 1, 0, true, rng);
    }
    if (cfg_.time_modulation) {
        gate_f_ = nn::Conv2d::make(reg, "modulation.feature", 3, 3, 3 * cf, 1, 1, 1, true, rng);
        gate_w_ = nn::Conv2d::make(reg, "modulation.attention", 3, 3, 3, 1, 1, 1, true, rng);
    }
}

namespace {

// blend = a*m + b*(1-m), elementwise; m is [H,W,1] and broadcasts when a,b
// carry more channels.
Tensor gated_blend(const Tensor& a, const Tensor& b, const Tensor& m) {
    Tensor one_minus = ad::add_scalar(ad::scale(m, -1.0), 1.0);
    return ad::add(ad::mul(m, a), ad::mul(one_minus, b));
}

}  // namespace

LatencyCompensator::Result LatencyCompensator::estimate(const PerceptionStack& stack,
                                                        const Tensor& f_receiver_now,
                                                        const HistoryBuffer& history,
                                                        bool mute_attention_input) const {
    if (history.k() < 1) throw Error("estimate: empty history buffer");
    if (history.k() != cfg_.history_frames)
        throw Error(msg("estimate: history holds ", history.k(), " frames, model expects ",
                        cfg_.history_frames));
    const int tau = history.tau;
    const bool dual = cfg_.estimation == "fase";

    if (tau == 0 && cfg_.bypass_at_zero) {
        const Tensor& fresh = history.newest();
        Result r;
        r.feature = fresh;
        r.attention_logits = stack.attention_logits(f_receiver_now, fresh);
        r.bypassed = true;
        return r;
    }

    const int H = history.newest().dim(0);
    const int W = history.newest().dim(1);
    const Tensor zero_channel = Tensor::zeros({H, W, 1});

    SpatialLSTMCell::State sf = cell_f_.initial_state(H, W);
    SpatialLSTMCell::State sw = dual ? cell_w_.initial_state(H, W) : SpatialLSTMCell::State{};
    Result r;

    // One recurrent step per frame from the oldest received frame up to the
    // frame before the receive instant: the k received frames enter as real
    // inputs, the remaining tau-1 as the estimator's own decoded feedback.
    // The receive-frame estimate itself is the final decode, so the loop runs
    // k+tau-1 steps regardless of mode.
    const int k = history.k();
    const int total_steps = k + tau - 1;
    for (int step = 0; step < total_steps; ++step) {
        Tensor f_part, w_part;
        if (step < k) {
            f_part = history.features[static_cast<std::size_t>(step)];
            if (dual && !mute_attention_input)
                w_part = stack.attention_logits(f_receiver_now, f_part);
            else
                w_part = zero_channel;
        } else {
            f_part = decode_f_(sf.h);
            if (dual && !mute_attention_input)
                w_part = decode_w_(sw.h);
            else
                w_part = zero_channel;
        }
        Tensor e = ad::concat_c({f_part, w_part});
        sf = cell_f_.step(e, sf);
        ++r.steps_feature;
        if (dual) {
            sw = cell_w_.step(e, sw);
            ++r.steps_attention;
        }
    }

    r.feature = decode_f_(sf.h);
    if (dual) {
        r.attention_logits = decode_w_(sw.h);
    } else {
        // Feature-only mode derives attention after the fact, inheriting any
        // estimation error in the feature.
        r.attention_logits = stack.attention_logits(f_receiver_now, r.feature);
    }
    return r;
}

LatencyCompensator::Result LatencyCompensator::compensate(const PerceptionStack& stack,
                                                          const Tensor& f_receiver_now,
                                                          const HistoryBuffer& history,
                                                          double time_unit) const {
    Result r = estimate(stack, f_receiver_now, history);
    if (r.bypassed || !cfg_.time_modulation) return r;

    const Tensor& f_stale = history.newest();
    Tensor w_stale = stack.attention_logits(f_receiver_now, f_stale);
    auto [t_f, t_w] = attach_latency_tensor(history.tau, f_stale.shape(),
                                            r.attention_logits.shape(), time_unit);

    Tensor m_f = ad::sigmoid(gate_f_(ad::concat_c({r.feature, f_stale, t_f})));
    Tensor m_w = ad::sigmoid(gate_w_(ad::concat_c({r.attention_logits, w_stale, t_w})));
    r.feature = gated_blend(r.feature, f_stale, m_f);
    r.attention_logits = gated_blend(r.attention_logits, w_stale, m_w);
    return r;
}

}  // namespace latsync
