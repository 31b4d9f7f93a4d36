#pragma once

#include <string>

#include "latsync/channel.hpp"
#include "latsync/nn.hpp"
#include "latsync/perception.hpp"

namespace latsync {

// LSTM over spatial maps: every gate affine map is a (multi-resolution)
// convolution, so the recurrence aggregates local-to-global motion cues.
class SpatialLSTMCell {
public:
    SpatialLSTMCell() = default;
    SpatialLSTMCell(nn::ParamRegistry& reg, const std::string& name, int in_channels,
                    int hidden_channels, bool multi_resolution, Rng& rng);

    struct State {
        ad::Tensor h, c;
        bool defined() const { return h.defined(); }
    };

    // Zero state matching the spatial dims of the inputs to come.
    State initial_state(int height, int width) const;
    State step(const ad::Tensor& e, const State& s) const;

    int hidden_channels() const { return hidden_; }

private:
    nn::MultiResConv wi_, wf_, wo_, wg_;  // input transforms (biased; forget bias starts at +1)
    nn::MultiResConv ui_, uf_, uo_, ug_;  // hidden transforms (no bias)
    int hidden_ = 0;
};

// Latency compensation for one delayed link: roll a recurrent estimator over
// the k received stale frames, extrapolate the tau missing frames by feeding
// the estimator its own decoded predictions, then optionally blend the
// estimate with the newest stale frame using a learned, latency-conditioned
// per-cell gate ("time modulation").
class LatencyCompensator {
public:
    LatencyCompensator(const ModelConfig& cfg, nn::ParamRegistry& reg, Rng& rng);

    struct Result {
        ad::Tensor feature;           // [Hf,Wf,Cf] estimate for the receive frame
        ad::Tensor attention_logits;  // [Hf,Wf,1]
        int steps_feature = 0;        // recurrent steps taken per branch
        int steps_attention = 0;
        bool bypassed = false;
    };

    // Estimation only (no time modulation). `mute_attention_input` zeroes the
    // attention channel of every recurrent input — the hook that lets tests
    // show the dual-branch feature path collapses to the feature-only mode.
    Result estimate(const PerceptionStack& stack, const ad::Tensor& f_receiver_now,
                    const HistoryBuffer& history, bool mute_attention_input = false) const;

    // Full compensation: estimate, then (when enabled) time-modulate against
    // the newest stale frame. This is the pipeline's single entry point.
    Result compensate(const PerceptionStack& stack, const ad::Tensor& f_receiver_now,
                      const HistoryBuffer& history, double time_unit = 1.0) const;

    const ModelConfig& config() const { return cfg_; }

private:
    ModelConfig cfg_;
    SpatialLSTMCell cell_f_, cell_w_;       // cell_w_ only in dual-branch mode
    nn::Conv2d decode_f_, decode_w_;        // 1x1 heads off the hidden states
    nn::Conv2d gate_f_, gate_w_;            // time-modulation gates (when enabled)
};

}  // namespace latsync
