#pragma once

#include <string>
#include <vector>

#include "latsync/geometry.hpp"
#include "latsync/nn.hpp"
#include "latsync/rng.hpp"
#include "latsync/tensor.hpp"

namespace latsync {

// Architecture knobs shared by the perception stack and the latency
// compensator. The observation grid is downsampled twice (stride-2 convs),
// so feature maps are grid/4 on a side; the multi-resolution gates pool that
// twice more, hence grid must be divisible by 16.
struct ModelConfig {
    int grid = 64;
    int feature_channels = 32;   // Cf
    int hidden_channels = 32;    // Ch, recurrent state width
    int history_frames = 3;      // k, frames each sender's buffer holds
    std::string estimation = "fase";  // "fase" (dual branch) | "ve" (feature-only)
    bool multi_resolution = true;     // gate convs at 3 scales vs single scale
    bool time_modulation = true;
    bool bypass_at_zero = true;  // skip compensation entirely when tau == 0
    double detect_threshold = 0.5;
    double nms_iou = 0.3;

    int feature_size() const { return grid / 4; }
    void validate() const;  // throws ConfigError
};

// Per-cell detector output. Objectness is kept both as logits (for the
// training loss) and as probabilities (for box extraction).
struct DetectionGrid {
    ad::Tensor objectness_logits;  // [Hf,Wf,1]
    ad::Tensor objectness;         // [Hf,Wf,1], sigmoid of the logits
    ad::Tensor box_regression;     // [Hf,Wf,4]: dx,dy in cells; log w, log h in meters
};

// Encoder -> per-link attention -> normalized fusion -> detection decoder.
// Parameters register in a fixed order so checkpoints are stable.
class PerceptionStack {
public:
    PerceptionStack(const ModelConfig& cfg, nn::ParamRegistry& reg, Rng& rng);

    // [G,G,1] occupancy -> [Hf,Wf,Cf] feature map.
    ad::Tensor encode(const ad::Tensor& obs) const;

    // Unnormalized per-cell collaboration weight of f_other as seen by the
    // agent holding f_own; [Hf,Wf,1] logits. Well-defined for f_own == f_other
    // (the ego self-weight path).
    ad::Tensor attention_logits(const ad::Tensor& f_own, const ad::Tensor& f_other) const;

    // Per-cell softmax across contributors; the returned maps sum to 1 per
    // cell. At least one contributor (the ego) is required.
    static std::vector<ad::Tensor> normalize_attention(const std::vector<ad::Tensor>& logits);

    // Weighted per-cell sum over contributors; features[0]/weights[0] is the
    // ego by convention. In strict mode the per-cell weight sums are audited.
    ad::Tensor fuse(const std::vector<ad::Tensor>& features,
                    const std::vector<ad::Tensor>& weights, bool strict = false) const;

    DetectionGrid decode(const ad::Tensor& fused) const;

    const ModelConfig& config() const { return cfg_; }

private:
    ModelConfig cfg_;
    nn::Conv2d enc1_, enc2_, enc3_;
    nn::Conv2d att1_, att2_;
    nn::Conv2d dec1_, dec2_, head_obj_, head_box_;
};

// Threshold + greedy non-maximum suppression. Candidates are ranked by
// confidence (ties broken by row then column), and a candidate is dropped
// when it overlaps an already kept box at IoU >= nms_iou.
BoxSet boxes_from_grid(const DetectionGrid& grid, double world_size, double threshold,
                       double nms_iou);

}  // namespace latsync
