#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "latsync/channel.hpp"
#include "latsync/compensation.hpp"
#include "latsync/nn.hpp"
#include "latsync/perception.hpp"

namespace latsync {

// The three neural pipelines share one set of parameters and differ only in
// how remote features enter the fusion:
//   NoCollab        — the ego fuses with itself only,
//   LatencyUnaware  — stale remote frames are used as if they were current,
//   SyncNet         — remote frames pass through latency compensation.
// (The late-fusion Kalman baseline exchanges boxes, not features; it lives in
// the benchmark code.)
enum class SystemKind { NoCollab, LatencyUnaware, SyncNet };

std::string system_name(SystemKind k);
std::optional<SystemKind> system_from_name(const std::string& name);

struct LinkInput {
    int sender = -1;
    HistoryBuffer history;
};

struct CollabOutput {
    std::vector<int> contributors;             // receiver first, then link senders
    std::vector<ad::Tensor> features;          // aligned; what entered the fusion
    std::vector<ad::Tensor> weights;           // aligned; normalized per cell
    ad::Tensor fused;
    DetectionGrid detection;
};

// One receiver's full forward pass at one frame. `ego_feature` is the
// receiver's own current feature map; `links` hold whatever the channel
// delivered (links in warm-up are simply absent from the list).
CollabOutput collaborate(const PerceptionStack& stack, const LatencyCompensator& comp,
                         SystemKind system, const ad::Tensor& ego_feature, int receiver,
                         const std::vector<LinkInput>& links, double time_unit);

// Owns the parameter registry plus the two network halves, built
// deterministically from (config, seed).
class CollabModel {
public:
    CollabModel(const ModelConfig& cfg, std::uint64_t seed);

    nn::ParamRegistry& params() { return reg_; }
    const nn::ParamRegistry& params() const { return reg_; }
    const PerceptionStack& stack() const { return *stack_; }
    const LatencyCompensator& compensator() const { return *comp_; }
    const ModelConfig& config() const { return cfg_; }

    CollabOutput run(SystemKind system, const ad::Tensor& ego_feature, int receiver,
                     const std::vector<LinkInput>& links, double time_unit) const {
        return collaborate(*stack_, *comp_, system, ego_feature, receiver, links, time_unit);
    }

private:
    ModelConfig cfg_;
    nn::ParamRegistry reg_;
    std::unique_ptr<PerceptionStack> stack_;
    std::unique_ptr<LatencyCompensator> comp_;
};

}  // namespace latsync
