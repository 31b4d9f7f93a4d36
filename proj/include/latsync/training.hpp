#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "latsync/config.hpp"
#include "latsync/model.hpp"
#include "latsync/world.hpp"

namespace latsync {

// Detection targets rasterized onto the feature grid. A ground-truth box
// marks the cell holding its center: objectness 1, regression targets
// (dx, dy) in cells from the cell center plus log width/height in meters.
// When two boxes land in one cell the first wins.
struct DetectionTargets {
    ad::Tensor objectness;   // [Hf,Wf,1], {0,1}
    ad::Tensor obj_weights;  // [Hf,Wf,1], sums to 1; negatives down-weighted
    ad::Tensor box_reg;      // [Hf,Wf,4]
    ad::Tensor box_weights;  // [Hf,Wf,4], uniform over positive entries, else 0
    int positives = 0;
};

DetectionTargets rasterize_detection_targets(const BoxSet& ground_truth, int feature_size,
                                             double world_size);

// Zero-latency reference produced by the same parameters: every contributor's
// current-frame feature enters the fusion undelayed. Computed with gradient
// recording suspended, so it acts as a constant target. The sender list must
// be exactly the links the student pass used, in the same order, so the
// normalized weight maps are comparable.
struct TeacherTargets {
    ad::Tensor fused;                  // target for the fused map
    std::vector<ad::Tensor> features;  // per contributor, ego first
    std::vector<ad::Tensor> weights;   // per contributor, ego first, normalized
};

TeacherTargets teacher_pass(const PerceptionStack& stack, const LatencyCompensator& comp,
                            const Scenario& scenario, int receiver, int frame,
                            const std::vector<int>& senders);

// Four-term objective:
//   out     — weighted BCE on objectness + smooth-L1 on box regression at positives
//   fusion  — MSE between student and teacher fused maps
//   feature — mean MSE between student and teacher link features (links only)
//   weight  — mean MSE between student and teacher normalized attention maps
//   total   — lambda_o*out + lambda_f*(fusion.feature sum) + lambda_w*weight
struct LossBreakdown {
    ad::Tensor total;  // [1], connected to the tape
    double total_value = 0;
    double out = 0, fusion = 0, feature = 0, weight = 0;
};

LossBreakdown collaboration_loss(const CollabOutput& student, const TeacherTargets& teacher,
                                 const DetectionTargets& targets, const LossWeights& lw);

// Latency schedule: fixed tau equal to the stage index while the stage is
// within the fixed range, then stochastic with the configured final mean.
int curriculum_stage(int epoch, const CurriculumSchedule& s);
LatencyModel curriculum_latency(int epoch, const CurriculumSchedule& s, const LatencyModel& base);
// Fixed-phase tau for logging; -1 once the schedule turns stochastic.
int curriculum_stage_tau(int epoch, const CurriculumSchedule& s);

// Scales gradients in place so their global L2 norm is at most max_norm;
// returns the pre-clip norm.
double clip_global_norm(std::vector<double>& grads, double max_norm);

// Adaptive-moment optimizer over the flattened parameter vector.
class AdamOptimizer {
public:
    AdamOptimizer(std::size_t n, double lr, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8);
    void step(std::vector<double>& values, const std::vector<double>& grads);
    int steps_taken() const { return t_; }

private:
    double lr_, beta1_, beta2_, eps_;
    int t_ = 0;
    std::vector<double> m_, v_;
};

struct TrainMetricsRow {
    int epoch = 0;
    int stage_tau = 0;  // -1 during the stochastic phase
    double loss_total = 0, loss_out = 0, loss_fusion = 0, loss_feat = 0, loss_weight = 0;
};

// Header: epoch,stage_tau,loss_total,loss_out,loss_fusion,loss_feat,loss_weight
std::string metrics_csv(const std::vector<TrainMetricsRow>& rows);

struct TrainResult {
    std::vector<TrainMetricsRow> metrics;
    std::string checkpoint_prefix;  // <out>/checkpoint
    std::string metrics_path;       // <out>/metrics.csv
    int epochs_run = 0;
    bool halted = false;  // non-finite loss or gradient
    std::string halt_reason;
};

// Full curriculum training run. Deterministic in (config, seed): scenario
// pool, sample draws, latency draws and parameter init all derive from
// cfg.seed. Writes metrics.csv and checkpoint.{bin,json} under cfg.out.
// A non-finite loss or gradient halts training, writes a diagnostic file,
// and reports halted=true rather than throwing.
TrainResult train_model(const ExperimentConfig& cfg);

}  // namespace latsync
