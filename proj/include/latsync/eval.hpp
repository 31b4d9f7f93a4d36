#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "latsync/config.hpp"
#include "latsync/geometry.hpp"
#include "latsync/world.hpp"

namespace latsync {

// Average precision over a set of images with all-point interpolation.
// Predictions are ranked by confidence globally; each ranks' prediction
// greedily claims the highest-IoU unmatched ground-truth box of its image at
// IoU >= iou_thresh. Returns 0 when there is no ground truth.
double average_precision(const std::vector<BoxSet>& predictions,
                         const std::vector<BoxSet>& ground_truth, double iou_thresh);

// Greedy confidence-ranked non-maximum suppression over a single box set.
BoxSet nms_boxes(const BoxSet& boxes, double iou_thresh);

// --- Constant-velocity Kalman tracking (the classical late-fusion baseline) —

struct KalmanParams {
    double process_noise = 0.05;      // accel-driven process noise intensity
    double measurement_noise = 0.25;  // position measurement stddev, meters
};

struct KalmanTrack {
    std::array<double, 4> state{};    // x, y, vx, vy
    std::array<double, 16> cov{};     // row-major 4x4, symmetric PSD
    double w = 0, h = 0;              // carried box size, meters
    double confidence = 0;
    double last_mx = 0, last_my = 0;  // most recent measured center
    int age = 0;                      // frames since last measurement
};

KalmanTrack make_track(const Box& detection, double initial_pos_var, double initial_vel_var);

// Advance dt >= 1 frames, then fold in an optional position measurement
// (Joseph-form update). The covariance is audited for symmetry and positive
// semidefiniteness and a violation throws NumericError.
struct Measurement {
    double x = 0, y = 0;
};
KalmanTrack kalman_predict_update(const KalmanTrack& track, int dt,
                                  const std::optional<Measurement>& measurement,
                                  const KalmanParams& params);

// Per-sender box tracker: greedy nearest-center association within a gate,
// unmatched detections spawn tracks, stale tracks expire.
class BoxTracker {
public:
    explicit BoxTracker(const KalmanParams& params, double gate_m = 3.0, int max_age = 3);

    void step(const BoxSet& detections);     // one frame: predict, associate, update
    BoxSet predict_ahead(int tau) const;     // tracks advanced tau frames, sizes carried
    const std::vector<KalmanTrack>& tracks() const { return tracks_; }

private:
    KalmanParams params_;
    double gate_;
    int max_age_;
    std::vector<KalmanTrack> tracks_;
};

// --- Benchmark over systems and latencies ---

struct BenchmarkRow {
    std::string system;
    int tau = 0;
    double iou_thresh = 0;
    double ap = 0;
    int n_scenarios = 0;
    std::uint64_t seed = 0;
};

// Header: system,tau,iou_thresh,ap,n_scenarios,seed
std::string results_csv(const std::vector<BenchmarkRow>& rows);

// Evaluates the named systems (no_collab, latency_unaware, late_kalman,
// syncnet) over a sweep of forced link latencies on held-out scenarios drawn
// from cfg.seed. All neural systems share the parameters stored at
// checkpoint_prefix; late_kalman exchanges boxes produced by the single-agent
// pipeline instead of features. Scenario evaluations are independent and run
// on `threads` workers; results are merged by scenario index, so thread count
// never changes the numbers.
std::vector<BenchmarkRow> run_benchmark(const ExperimentConfig& cfg,
                                        const std::string& checkpoint_prefix,
                                        const std::vector<std::string>& systems,
                                        const std::vector<int>& taus, int threads = 1);

// --- Component ablation (train-small + evaluate variants) ---

struct AblationRow {
    std::string row;           // A..F
    std::string compensation;  // vanilla | fase
    std::string lstm;          // single | pyramid
    bool tm = false;
    int tau = 0;
    double ap50 = 0, ap70 = 0;
};

// Header: row,compensation,lstm,tm,tau,ap50,ap70
std::string ablation_csv(const std::vector<AblationRow>& rows);

// Trains each architecture variant briefly under cfg (epochs taken from
// cfg.train) and evaluates it at the given latencies. Work dirs live under
// cfg.out/<row>.
std::vector<AblationRow> run_ablation(const ExperimentConfig& cfg, const std::vector<int>& taus,
                                      int threads = 1);

}  // namespace latsync
