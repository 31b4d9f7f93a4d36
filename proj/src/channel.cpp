#include "latsync/channel.hpp"

#include <cmath>
#include <sstream>

#include "latsync/error.hpp"

namespace latsync {

void LatencyModel::validate() const {
    if (mean_frames < 0) throw ConfigError("latency mean_frames must be nonnegative");
    if (time_unit <= 0) throw ConfigError("latency time_unit must be positive");
    if (mode == Mode::Fixed && mean_frames != std::floor(mean_frames))
        throw ConfigError("fixed latency must be a whole number of frames");
}

double sample_latency_continuous(const LatencyModel& model, Rng& rng) {
    model.validate();
    if (model.mode == LatencyModel::Mode::Fixed) return model.mean_frames;
    return rng.exponential(model.mean_frames);
}

int sample_latency(const LatencyModel& model, Rng& rng) {
    const double draw = sample_latency_continuous(model, rng);
    if (model.mode == LatencyModel::Mode::Fixed) return static_cast<int>(std::llround(draw));
    return static_cast<int>(std::floor(draw));
}

int link_latency(const LatencyModel& model, std::uint64_t seed, int frame, int sender,
                 int receiver) {
    std::uint64_t index = static_cast<std::uint64_t>(frame) * 1000003u;
    if (model.per_link)
        index += static_cast<std::uint64_t>(sender) * 1009u + static_cast<std::uint64_t>(receiver);
    Rng rng(mix_seed(seed, "link-latency", index));
    return sample_latency(model, rng);
}

std::optional<HistoryBuffer> transmit(const std::vector<ad::Tensor>& sender_frames, int t0,
                                      int tau, int k) {
    if (tau < 0) throw Error(msg("transmit: negative latency ", tau));
    if (k < 1) throw Error(msg("transmit: history length k must be >= 1, got ", k));
    const int first = t0 - tau - k + 1;
    const int last = t0 - tau;
    if (first < 0) return std::nullopt;  // scenario warm-up: not enough history yet
    if (last >= static_cast<int>(sender_frames.size()) || t0 >= static_cast<int>(sender_frames.size()))
        throw Error(msg("transmit: frame ", last, " not available from sender (have ",
                        sender_frames.size(), " frames)"));
    HistoryBuffer buf;
    buf.tau = tau;
    for (int f = first; f <= last; ++f) {
        buf.frame_stamps.push_back(f);
        buf.features.push_back(sender_frames[static_cast<std::size_t>(f)]);
    }
    return buf;
}

std::pair<ad::Tensor, ad::Tensor> attach_latency_tensor(int tau, const ad::Shape& feature_shape,
                                                        const ad::Shape& attention_shape,
                                                        double time_unit) {
    if (tau < 0) throw Error(msg("attach_latency_tensor: negative latency ", tau));
    const double v = tau * time_unit;
    return {ad::Tensor::full(feature_shape, v), ad::Tensor::full(attention_shape, v)};
}

std::string latency_trace_csv(const std::vector<LatencyTraceRow>& rows) {
    std::ostringstream os;
    os << "frame,sender,receiver,tau\n";
    for (const LatencyTraceRow& r : rows)
        os << r.frame << ',' << r.sender << ',' << r.receiver << ',' << r.tau << '\n';
    return os.str();
}

}  // namespace latsync
