#include "latsync/model.hpp"

#include "latsync/error.hpp"

namespace latsync {

std::string system_name(SystemKind k) {
    switch (k) {
        case SystemKind::NoCollab: return "no_collab";
        case SystemKind::LatencyUnaware: return "latency_unaware";
        case SystemKind::SyncNet: return "syncnet";
    }
    throw Error("system_name: unknown SystemKind");
}

std::optional<SystemKind> system_from_name(const std::string& name) {
    if (name == "no_collab") return SystemKind::NoCollab;
    if (name == "latency_unaware") return SystemKind::LatencyUnaware;
    if (name == "syncnet") return SystemKind::SyncNet;
    return std::nullopt;
}

CollabOutput collaborate(const PerceptionStack& stack, const LatencyCompensator& comp,
                         SystemKind system, const ad::Tensor& ego_feature, int receiver,
                         const std::vector<LinkInput>& links, double time_unit) {
    if (!ego_feature.defined()) throw Error("collaborate: ego feature is undefined");

    CollabOutput out;
    out.contributors.push_back(receiver);
    out.features.push_back(ego_feature);

    std::vector<ad::Tensor> logits;
    logits.push_back(stack.attention_logits(ego_feature, ego_feature));

    if (system != SystemKind::NoCollab) {
        for (const LinkInput& link : links) {
            if (link.history.k() == 0) throw Error("collaborate: link history is empty");
            out.contributors.push_back(link.sender);
            if (system == SystemKind::LatencyUnaware) {
                // Pretend the newest stale frame is current.
                const ad::Tensor& stale = link.history.newest();
                out.features.push_back(stale);
                logits.push_back(stack.attention_logits(ego_feature, stale));
            } else {
                LatencyCompensator::Result r =
                    comp.compensate(stack, ego_feature, link.history, time_unit);
                out.features.push_back(r.feature);
                logits.push_back(r.attention_logits);
            }
        }
    }

    out.weights = PerceptionStack::normalize_attention(logits);
    out.fused = stack.fuse(out.features, out.weights);
    out.detection = stack.decode(out.fused);
    return out;
}

CollabModel::CollabModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(mix_seed(seed, "model-init"));
    stack_ = std::make_unique<PerceptionStack>(cfg_, reg_, rng);
    comp_ = std::make_unique<LatencyCompensator>(cfg_, reg_, rng);
}

}  // namespace latsync
