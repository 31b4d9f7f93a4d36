#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "latsync/rng.hpp"
#include "latsync/tensor.hpp"

namespace latsync {

// Latency is whole frames: agents sample at a fixed rate, so a delayed
// message is useful only at frame granularity.
struct LatencyModel {
    enum class Mode { Fixed, Exponential };
    Mode mode = Mode::Exponential;
    double mean_frames = 5.0;
    bool per_link = true;  // independent draw per directed (sender,receiver) pair per frame
    double time_unit = 1.0;  // latency-tensor scale per frame of delay

    void validate() const;  // throws ConfigError
};

// Continuous draw (exponential mode) before quantization; exposed so the
// sampler's configured mean is testable directly.
double sample_latency_continuous(const LatencyModel& model, Rng& rng);
// Whole-frame latency: fixed mode returns the constant, exponential mode the
// floor of a continuous draw. Always >= 0.
int sample_latency(const LatencyModel& model, Rng& rng);

// Deterministic per-link draw: same (seed, frame, sender, receiver) always
// gives the same latency; distinct links get independent streams. With
// per_link disabled every link of a frame shares one draw.
int link_latency(const LatencyModel& model, std::uint64_t seed, int frame, int sender,
                 int receiver);

// One sender's delayed feature history as seen by a receiver at frame t0:
// exactly the k consecutive frames t0-tau-k+1 .. t0-tau, newest last.
struct HistoryBuffer {
    int tau = 0;
    std::vector<int> frame_stamps;        // strictly increasing, consecutive
    std::vector<ad::Tensor> features;     // aligned with frame_stamps

    int k() const { return static_cast<int>(frame_stamps.size()); }
    int newest_frame() const { return frame_stamps.back(); }
    const ad::Tensor& newest() const { return features.back(); }
};

// sender_frames is indexed by absolute frame. Returns nothing (warm-up) when
// the window would reach before frame 0 — the consumer should then skip the
// link rather than fabricate pre-scenario data.
std::optional<HistoryBuffer> transmit(const std::vector<ad::Tensor>& sender_frames, int t0,
                                      int tau, int k);

// Constant tensors carrying the delay magnitude, shaped like the feature map
// and the attention map they will be concatenated with.
std::pair<ad::Tensor, ad::Tensor> attach_latency_tensor(int tau, const ad::Shape& feature_shape,
                                                        const ad::Shape& attention_shape,
                                                        double time_unit = 1.0);

struct LatencyTraceRow {
    int frame = 0, sender = 0, receiver = 0, tau = 0;
};

// CSV with header frame,sender,receiver,tau.
std::string latency_trace_csv(const std::vector<LatencyTraceRow>& rows);

}  // namespace latsync
