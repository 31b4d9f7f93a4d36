#include "latsync/perception.hpp"

#include <algorithm>
#include <cmath>

#include "latsync/ops.hpp"

namespace latsync {

using ad::Tensor;

void ModelConfig::validate() const {
    auto bad = [](const std::string& m) { throw ConfigError(msg("model config: ", m)); };
    if (grid <= 0 || grid % 16 != 0)
        bad("grid must be a positive multiple of 16 (two stride-2 stages plus two pooling "
            "levels)");
    if (feature_channels < 1) bad("feature_channels must be positive");
    if (hidden_channels < 1) bad("hidden_channels must be positive");
    if (history_frames < 1) bad("history_frames must be at least 1");
    if (estimation != "fase" && estimation != "ve")
        bad(msg("estimation must be 'fase' or 've', got '", estimation, "'"));
    if (detect_threshold <= 0 || detect_threshold >= 1)
        bad("detect_threshold must be in (0,1)");
    if (nms_iou <= 0 || nms_iou > 1) bad("nms_iou must be in (0,1]");
}

PerceptionStack::PerceptionStack(const ModelConfig& cfg, nn::ParamRegistry& reg, Rng& rng)
    : cfg_(cfg) {
    cfg_.validate();
    const int cf = cfg_.feature_channels;
    const int ah = std::max(4, cf / 2);
    enc1_ = nn::Conv2d::make(reg, "encoder.stage1", 3, 3, 1, cf, 2, 1, true, rng);
    enc2_ = nn::Conv2d::make(reg, "encoder.stage2", 3, 3, cf, cf, 2, 1, true, rng);
    enc3_ = nn::Conv2d::make(reg, "encoder.stage3", 3, 3, cf, cf, 1, 1, true, rng);
    att1_ = nn::Conv2d::make(reg, "attention.mix", 1, 1, 2 * cf, ah, 1, 0, true, rng);
    att2_ = nn::Conv2d::make(reg, "attention.logit", 1, 1, ah, 1, 1, 0, true, rng);
    dec1_ = nn::Conv2d::make(reg, "decoder.stage1", 3, 3, cf, cf, 1, 1, true, rng);
    dec2_ = nn::Conv2d::make(reg, "decoder.stage2", 3, 3, cf, cf, 1, 1, true, rng);
    head_obj_ = nn::Conv2d::make(reg, "decoder.objectness", 3, 3, cf, 1, 1, 1, true, rng);
    head_box_ = nn::Conv2d::make(reg, "decoder.box", 3, 3, cf, 4, 1, 1, true, rng);
}

Tensor PerceptionStack::encode(const Tensor& obs) const {
    if (!(obs.rank() == 3 && obs.dim(0) == cfg_.grid && obs.dim(1) == cfg_.grid &&
          obs.dim(2) == 1))
        throw Error(msg("encode: observation must be [", cfg_.grid, ",", cfg_.grid, ",1], got ",
                        ad::shape_str(obs.shape())));
    Tensor x = ad::tanh(enc1_(obs));
    x = ad::tanh(enc2_(x));
    return ad::tanh(enc3_(x));
}

Tensor PerceptionStack::attention_logits(const Tensor& f_own, const Tensor& f_other) const {
    if (!ad::same_shape(f_own.shape(), f_other.shape()))
        throw Error(msg("attention: feature shapes differ, ", ad::shape_str(f_own.shape()),
                        " vs ", ad::shape_str(f_other.shape())));
    Tensor x = ad::concat_c({f_own, f_other});
    return att2_(ad::tanh(att1_(x)));
}

std::vector<Tensor> PerceptionStack::normalize_attention(const std::vector<Tensor>& logits) {
    if (logits.empty()) throw Error("normalize_attention: no contributors");
    // Shift by the detached per-cell max: softmax is shift-invariant, so the
    // gradients stay exact while exp() stays in range.
    Tensor shift = ad::cmax_detached(logits);
    std::vector<Tensor> num;
    num.reserve(logits.size());
    Tensor denom;
    for (const Tensor& l : logits) {
        Tensor e = ad::exp(ad::sub(l, shift));
        denom = denom.defined() ? ad::add(denom, e) : e;
        num.push_back(std::move(e));
    }
    std::vector<Tensor> out;
    out.reserve(num.size());
    for (Tensor& e : num) out.push_back(ad::div(e, denom));
    return out;
}

Tensor PerceptionStack::fuse(const std::vector<Tensor>& features,
                             const std::vector<Tensor>& weights, bool strict) const {
    if (features.empty() || features.size() != weights.size())
        throw Error(msg("fuse: ", features.size(), " features vs ", weights.size(), " weights"));
    if (strict) {
        const std::size_t cells = weights[0].size();
        for (std::size_t p = 0; p < cells; ++p) {
            double s = 0.0;
            for (const Tensor& w : weights) s += w.values()[p];
            if (std::abs(s - 1.0) > 1e-6)
                throw Error(msg("fuse: per-cell weight sum ", s, " deviates from 1 at cell ", p));
        }
    }
    Tensor acc;
    for (std::size_t i = 0; i < features.size(); ++i) {
        Tensor term = ad::mul(weights[i], features[i]);
        acc = acc.defined() ? ad::add(acc, term) : term;
    }
    return acc;
}

DetectionGrid PerceptionStack::decode(const Tensor& fused) const {
    Tensor x = ad::tanh(dec1_(fused));
    x = ad::tanh(dec2_(x));
    DetectionGrid g;
    g.objectness_logits = head_obj_(x);
    g.objectness = ad::sigmoid(g.objectness_logits);
    g.box_regression = head_box_(x);
    return g;
}

BoxSet boxes_from_grid(const DetectionGrid& grid, double world_size, double threshold,
                       double nms_iou) {
    if (threshold <= 0 || threshold >= 1)
        throw Error(msg("boxes_from_grid: threshold must be in (0,1), got ", threshold));
    const Tensor& obj = grid.objectness;
    const Tensor& reg = grid.box_regression;
    const int H = obj.dim(0), W = obj.dim(1);
    const double stride_m = world_size / H;

    struct Cand {
        Box box;
        int row, col;
    };
    std::vector<Cand> cands;
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            const double conf = obj.at({r, c, 0});
            if (conf < threshold) continue;
            const double dx = reg.at({r, c, 0});
            const double dy = reg.at({r, c, 1});
            const double w = std::exp(reg.at({r, c, 2}));
            const double h = std::exp(reg.at({r, c, 3}));
            const double cx = (c + 0.5 + dx) * stride_m;
            const double cy = (r + 0.5 + dy) * stride_m;
            cands.push_back({Box::from_center(cx, cy, w, h, conf), r, c});
        }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        if (a.box.confidence != b.box.confidence) return a.box.confidence > b.box.confidence;
        if (a.row != b.row) return a.row < b.row;
        return a.col < b.col;
    });
    BoxSet kept;
    for (const Cand& c : cands) {
        bool suppressed = false;
        for (const Box& k : kept)
            if (iou(c.box, k) >= nms_iou) { suppressed = true; break; }
        if (!suppressed) kept.push_back(c.box);
    }
    return kept;
}

}  // namespace latsync
