#include "latsync/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "latsync/checkpoint.hpp"
#include "latsync/error.hpp"
#include "latsync/model.hpp"
#include "latsync/training.hpp"
#include "latsync/util.hpp"

namespace latsync {

double average_precision(const std::vector<BoxSet>& predictions,
                         const std::vector<BoxSet>& ground_truth, double iou_thresh) {
    if (predictions.size() != ground_truth.size())
        throw Error("average_precision: prediction/ground-truth image counts differ");
    if (iou_thresh <= 0.0 || iou_thresh >= 1.0)
        throw ConfigError(msg("average_precision: iou_thresh ", iou_thresh, " outside (0,1)"));

    std::size_t total_gt = 0;
    for (const BoxSet& g : ground_truth) total_gt += g.size();
    if (total_gt == 0) return 0.0;

    struct Ranked {
        double conf;
        int image;
        int index;  // insertion order within the image, the final tiebreak
        const Box* box;
    };
    std::vector<Ranked> ranked;
    for (std::size_t img = 0; img < predictions.size(); ++img)
        for (std::size_t i = 0; i < predictions[img].size(); ++i)
            ranked.push_back(Ranked{predictions[img][i].confidence, static_cast<int>(img),
                                    static_cast<int>(i), &predictions[img][i]});
    std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
        if (a.conf != b.conf) return a.conf > b.conf;
        if (a.image != b.image) return a.image < b.image;
        return a.index < b.index;
    });

    std::vector<std::vector<bool>> claimed(ground_truth.size());
    for (std::size_t img = 0; img < ground_truth.size(); ++img)
        claimed[img].assign(ground_truth[img].size(), false);

    std::vector<double> precision, recall;
    std::size_t tp = 0, fp = 0;
    for (const Ranked& r : ranked) {
        const BoxSet& gts = ground_truth[static_cast<std::size_t>(r.image)];
        int best = -1;
        double best_iou = 0.0;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (claimed[static_cast<std::size_t>(r.image)][g]) continue;
            const double v = iou(*r.box, gts[g]);
            if (v >= iou_thresh && v > best_iou) {
                best_iou = v;
                best = static_cast<int>(g);
            }
        }
        if (best >= 0) {
            claimed[static_cast<std::size_t>(r.image)][static_cast<std::size_t>(best)] = true;
            ++tp;
        } else {
            ++fp;
        }
        precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
        recall.push_back(static_cast<double>(tp) / static_cast<double>(total_gt));
    }

    // All-point interpolation: integrate recall against the running maximum
    // of precision taken from the right.
    double ap = 0.0;
    double running_max = 0.0;
    for (std::size_t i = precision.size(); i-- > 0;) {
        running_max = std::max(running_max, precision[i]);
        const double prev_recall = i == 0 ? 0.0 : recall[i - 1];
        if (recall[i] > prev_recall) ap += (recall[i] - prev_recall) * running_max;
    }
    return ap;
}

BoxSet nms_boxes(const BoxSet& boxes, double iou_thresh) {
    if (iou_thresh <= 0.0 || iou_thresh > 1.0)
        throw ConfigError(msg("nms_boxes: iou_thresh ", iou_thresh, " outside (0,1]"));
    std::vector<int> order(boxes.size());
    for (std::size_t i = 0; i < boxes.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        const Box& ba = boxes[static_cast<std::size_t>(a)];
        const Box& bb = boxes[static_cast<std::size_t>(b)];
        if (ba.confidence != bb.confidence) return ba.confidence > bb.confidence;
        if (ba.y0 != bb.y0) return ba.y0 < bb.y0;
        if (ba.x0 != bb.x0) return ba.x0 < bb.x0;
        return a < b;
    });
    BoxSet kept;
    for (int idx : order) {
        const Box& cand = boxes[static_cast<std::size_t>(idx)];
        bool suppressed = false;
        for (const Box& k : kept)
            if (iou(cand, k) >= iou_thresh) {
                suppressed = true;
                break;
            }
        if (!suppressed) kept.push_back(cand);
    }
    return kept;
}

// ---- constant-velocity Kalman filter -------------------------------------

namespace {

using Mat4 = std::array<double, 16>;

double& at4(Mat4& m, int r, int c) { return m[static_cast<std::size_t>(r * 4 + c)]; }

// Audits symmetry and positive semidefiniteness (Cholesky with a relative
// tolerance); symmetrizes small drift in place.
void audit_covariance(Mat4& p) {
    double scale = 1.0;
    for (int i = 0; i < 4; ++i) scale = std::max(scale, std::abs(at4(p, i, i)));
    for (int r = 0; r < 4; ++r)
        for (int c = r + 1; c < 4; ++c) {
            if (std::abs(at4(p, r, c) - at4(p, c, r)) > 1e-6 * scale)
                throw NumericError("kalman: covariance lost symmetry");
            const double avg = 0.5 * (at4(p, r, c) + at4(p, c, r));
            at4(p, r, c) = avg;
            at4(p, c, r) = avg;
        }
    Mat4 l{};
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s = at4(p, i, j);
            for (int m = 0; m < j; ++m) s -= at4(l, i, m) * at4(l, j, m);
            if (i == j) {
                if (s < -1e-9 * scale) throw NumericError("kalman: covariance not PSD");
                at4(l, i, i) = std::sqrt(std::max(s, 0.0));
            } else {
                at4(l, i, j) = at4(l, j, j) > 0.0 ? s / at4(l, j, j) : 0.0;
            }
        }
    }
}

void predict_in_place(KalmanTrack& t, int dt, const KalmanParams& params) {
    const double d = static_cast<double>(dt);
    t.state[0] += t.state[2] * d;
    t.state[1] += t.state[3] * d;

    // P <- F P F^T + Q for F = [[I, dt*I], [0, I]] (2x2 blocks).
    Mat4 p;
    std::copy(t.cov.begin(), t.cov.end(), p.begin());
    Mat4 fp{};
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) {
            double v = at4(p, r, c);
            if (r < 2) v += d * at4(p, r + 2, c);
            at4(fp, r, c) = v;
        }
    Mat4 fpf{};
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) {
            double v = at4(fp, r, c);
            if (c < 2) v += d * at4(fp, r, c + 2);
            at4(fpf, r, c) = v;
        }
    // White-acceleration process noise.
    const double q = params.process_noise;
    const double d2 = d * d, d3 = d2 * d, d4 = d3 * d;
    for (int axis = 0; axis < 2; ++axis) {
        at4(fpf, axis, axis) += q * d4 / 4.0;
        at4(fpf, axis, axis + 2) += q * d3 / 2.0;
        at4(fpf, axis + 2, axis) += q * d3 / 2.0;
        at4(fpf, axis + 2, axis + 2) += q * d2;
    }
    audit_covariance(fpf);
    std::copy(fpf.begin(), fpf.end(), t.cov.begin());
    t.age += dt;
}

void update_in_place(KalmanTrack& t, const Measurement& z, const KalmanParams& params) {
    Mat4 p;
    std::copy(t.cov.begin(), t.cov.end(), p.begin());
    const double r2 = params.measurement_noise * params.measurement_noise;

    // Innovation covariance S = H P H^T + R with H = [I2 | 0].
    const double s00 = at4(p, 0, 0) + r2, s01 = at4(p, 0, 1);
    const double s10 = at4(p, 1, 0), s11 = at4(p, 1, 1) + r2;
    const double det = s00 * s11 - s01 * s10;
    if (!(det > 0.0)) throw NumericError("kalman: singular innovation covariance");
    const double i00 = s11 / det, i01 = -s01 / det, i10 = -s10 / det, i11 = s00 / det;

    // Gain K = P H^T S^-1 (4x2).
    double kgain[4][2];
    for (int r = 0; r < 4; ++r) {
        kgain[r][0] = at4(p, r, 0) * i00 + at4(p, r, 1) * i10;
        kgain[r][1] = at4(p, r, 0) * i01 + at4(p, r, 1) * i11;
    }

    const double ix = z.x - t.state[0];
    const double iy = z.y - t.state[1];
    for (int r = 0; r < 4; ++r) t.state[static_cast<std::size_t>(r)] += kgain[r][0] * ix + kgain[r][1] * iy;
    t.last_mx = z.x;
    t.last_my = z.y;

    // Joseph form: P <- (I-KH) P (I-KH)^T + K R K^T.
    Mat4 a{};  // I - K H
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c)
            at4(a, r, c) = (r == c ? 1.0 : 0.0) - (c < 2 ? kgain[r][c] : 0.0);
    Mat4 ap{};
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) {
            double v = 0.0;
            for (int m = 0; m < 4; ++m) v += at4(a, r, m) * at4(p, m, c);
            at4(ap, r, c) = v;
        }
    Mat4 apa{};
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) {
            double v = 0.0;
            for (int m = 0; m < 4; ++m) v += at4(ap, r, m) * at4(a, c, m);
            v += r2 * (kgain[r][0] * kgain[c][0] + kgain[r][1] * kgain[c][1]);
            at4(apa, r, c) = v;
        }
    audit_covariance(apa);
    std::copy(apa.begin(), apa.end(), t.cov.begin());
    t.age = 0;
}

}  // namespace

KalmanTrack make_track(const Box& detection, double initial_pos_var, double initial_vel_var) {
    KalmanTrack t;
    t.state = {detection.cx(), detection.cy(), 0.0, 0.0};
    t.cov.fill(0.0);
    t.cov[0] = initial_pos_var;
    t.cov[5] = initial_pos_var;
    t.cov[10] = initial_vel_var;
    t.cov[15] = initial_vel_var;
    t.w = detection.width();
    t.h = detection.height();
    t.confidence = detection.confidence;
    t.last_mx = detection.cx();
    t.last_my = detection.cy();
    t.age = 0;
    return t;
}

KalmanTrack kalman_predict_update(const KalmanTrack& track, int dt,
                                  const std::optional<Measurement>& measurement,
                                  const KalmanParams& params) {
    if (dt < 1) throw ConfigError(msg("kalman_predict_update: dt ", dt, " must be >= 1"));
    KalmanTrack t = track;
    predict_in_place(t, dt, params);
    if (measurement) update_in_place(t, *measurement, params);
    return t;
}

// ---- per-sender box tracker -----------------------------------------------

BoxTracker::BoxTracker(const KalmanParams& params, double gate_m, int max_age)
    : params_(params), gate_(gate_m), max_age_(max_age) {
    if (gate_m <= 0.0) throw ConfigError("BoxTracker: gate must be positive");
    if (max_age < 0) throw ConfigError("BoxTracker: max_age must be >= 0");
}

void BoxTracker::step(const BoxSet& detections) {
    for (KalmanTrack& t : tracks_) predict_in_place(t, 1, params_);

    // Greedy nearest-center association inside the gate.
    struct Pair {
        double dist;
        int track, det;
    };
    std::vector<Pair> pairs;
    for (std::size_t ti = 0; ti < tracks_.size(); ++ti)
        for (std::size_t di = 0; di < detections.size(); ++di) {
            const double dx = tracks_[ti].state[0] - detections[di].cx();
            const double dy = tracks_[ti].state[1] - detections[di].cy();
            const double dist = std::hypot(dx, dy);
            if (dist <= gate_) pairs.push_back(Pair{dist, static_cast<int>(ti), static_cast<int>(di)});
        }
    std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
        if (a.dist != b.dist) return a.dist < b.dist;
        if (a.track != b.track) return a.track < b.track;
        return a.det < b.det;
    });

    std::vector<bool> track_used(tracks_.size(), false), det_used(detections.size(), false);
    for (const Pair& p : pairs) {
        if (track_used[static_cast<std::size_t>(p.track)] || det_used[static_cast<std::size_t>(p.det)]) continue;
        track_used[static_cast<std::size_t>(p.track)] = true;
        det_used[static_cast<std::size_t>(p.det)] = true;
        KalmanTrack& t = tracks_[static_cast<std::size_t>(p.track)];
        const Box& d = detections[static_cast<std::size_t>(p.det)];
        update_in_place(t, Measurement{d.cx(), d.cy()}, params_);
        t.w = d.width();
        t.h = d.height();
        t.confidence = d.confidence;
    }

    for (std::size_t di = 0; di < detections.size(); ++di)
        if (!det_used[di])
            tracks_.push_back(make_track(detections[di],
                                         params_.measurement_noise * params_.measurement_noise,
                                         1.0));

    std::vector<KalmanTrack> alive;
    for (const KalmanTrack& t : tracks_)
        if (t.age <= max_age_) alive.push_back(t);
    tracks_ = std::move(alive);
}

BoxSet BoxTracker::predict_ahead(int tau) const {
    if (tau < 0) throw ConfigError("predict_ahead: negative tau");
    BoxSet out;
    // Only tracks confirmed by a detection this frame are shipped; their box
    // is the measured detection displaced by the filtered velocity, so at
    // tau = 0 the output is exactly the sender's current detections.
    for (const KalmanTrack& t : tracks_) {
        if (t.age != 0) continue;
        const double cx = t.last_mx + t.state[2] * tau;
        const double cy = t.last_my + t.state[3] * tau;
        out.push_back(Box::from_center(cx, cy, t.w, t.h, t.confidence));
    }
    return out;
}

// ---- benchmark -------------------------------------------------------------

namespace {

const char* const kKnownSystems[] = {"no_collab", "latency_unaware", "late_kalman", "syncnet"};

bool wants(const std::vector<std::string>& systems, const char* name) {
    return std::find(systems.begin(), systems.end(), name) != systems.end();
}

// Evaluation frames shared by every (system, tau) pair: late enough that the
// largest latency in the sweep still leaves a full history window.
std::vector<int> pick_eval_frames(int duration, int n, int k, int max_tau) {
    const int t0_min = k - 1 + max_tau;
    if (t0_min > duration - 1)
        throw ConfigError(msg("evaluation needs frames >= ", t0_min,
                              " for latency ", max_tau, ", but scenarios end at frame ",
                              duration - 1));
    std::vector<int> frames;
    if (n <= 1) {
        frames.push_back(duration - 1);
        return frames;
    }
    for (int j = 0; j < n; ++j) {
        const double f =
            t0_min + static_cast<double>(j) * (duration - 1 - t0_min) / (n - 1);
        const int fi = static_cast<int>(std::lround(f));
        if (frames.empty() || frames.back() != fi) frames.push_back(fi);
    }
    return frames;
}

// Predictions for every (system, tau, frame, ego) of one scenario, plus the
// aligned ground truth. Image order: frames outer, egos inner.
struct ScenarioEval {
    std::vector<std::vector<std::vector<BoxSet>>> preds;  // [system][tau][image]
    std::vector<BoxSet> gts;                              // [image]
};

ScenarioEval evaluate_scenario(const CollabModel& model, const Scenario& scenario,
                               const std::vector<std::string>& systems,
                               const std::vector<int>& taus, const std::vector<int>& frames,
                               double time_unit) {
    ad::NoGradGuard guard;
    const ModelConfig& mc = model.config();
    const int agents = static_cast<int>(scenario.agents.size());
    const int duration = scenario.config.duration;
    const double world_size = scenario.config.size;
    const int k = mc.history_frames;

    std::vector<std::vector<ad::Tensor>> enc(
        static_cast<std::size_t>(agents),
        std::vector<ad::Tensor>(static_cast<std::size_t>(duration)));
    for (int a = 0; a < agents; ++a)
        for (int f = 0; f < duration; ++f)
            enc[static_cast<std::size_t>(a)][static_cast<std::size_t>(f)] =
                model.stack().encode(observe(scenario, a, f).grid);

    // Single-agent detections, the currency of the box-level systems.
    const bool need_dets = wants(systems, "no_collab") || wants(systems, "late_kalman");
    std::vector<std::vector<BoxSet>> dets;
    if (need_dets) {
        dets.assign(static_cast<std::size_t>(agents),
                    std::vector<BoxSet>(static_cast<std::size_t>(duration)));
        for (int a = 0; a < agents; ++a)
            for (int f = 0; f < duration; ++f) {
                CollabOutput solo = model.run(SystemKind::NoCollab,
                                              enc[static_cast<std::size_t>(a)]
                                                 [static_cast<std::size_t>(f)],
                                              a, {}, time_unit);
                dets[static_cast<std::size_t>(a)][static_cast<std::size_t>(f)] = boxes_from_grid(
                    solo.detection, world_size, mc.detect_threshold, mc.nms_iou);
            }
    }

    // Box forecasts for the tracking baseline: one tracker pass per sender,
    // snapshotting the tau-advanced boxes at every send frame the sweep needs.
    std::map<std::pair<int, int>, std::vector<std::pair<int, BoxSet>>> advanced;
    if (wants(systems, "late_kalman")) {
        std::map<int, std::vector<int>> taus_at_send_frame;
        for (int t0 : frames)
            for (int tau : taus)
                if (t0 - tau >= 0) taus_at_send_frame[t0 - tau].push_back(tau);
        for (int s = 0; s < agents; ++s) {
            BoxTracker tracker{KalmanParams{}};
            for (int f = 0; f < duration; ++f) {
                tracker.step(dets[static_cast<std::size_t>(s)][static_cast<std::size_t>(f)]);
                auto it = taus_at_send_frame.find(f);
                if (it == taus_at_send_frame.end()) continue;
                for (int tau : it->second)
                    advanced[{s, f}].push_back({tau, tracker.predict_ahead(tau)});
            }
        }
    }

    auto advanced_boxes = [&](int sender, int send_frame, int tau) -> const BoxSet& {
        for (const auto& [t, boxes] : advanced.at({sender, send_frame}))
            if (t == tau) return boxes;
        throw Error("late_kalman: missing tracker snapshot");
    };

    ScenarioEval out;
    out.preds.assign(systems.size(), std::vector<std::vector<BoxSet>>(taus.size()));
    for (int t0 : frames) {
        const BoxSet gt = ground_truth_boxes(scenario, t0);
        for (int e = 0; e < agents; ++e) out.gts.push_back(gt);
    }

    for (std::size_t si = 0; si < systems.size(); ++si) {
        const std::string& system = systems[si];
        for (std::size_t ti = 0; ti < taus.size(); ++ti) {
            const int tau = taus[ti];
            for (int t0 : frames) {
                for (int e = 0; e < agents; ++e) {
                    BoxSet boxes;
                    if (system == "no_collab") {
                        boxes = dets[static_cast<std::size_t>(e)][static_cast<std::size_t>(t0)];
                    } else if (system == "late_kalman") {
                        boxes = dets[static_cast<std::size_t>(e)][static_cast<std::size_t>(t0)];
                        for (int s = 0; s < agents; ++s) {
                            if (s == e) continue;
                            const BoxSet& remote = advanced_boxes(s, t0 - tau, tau);
                            boxes.insert(boxes.end(), remote.begin(), remote.end());
                        }
                        boxes = nms_boxes(boxes, mc.nms_iou);
                    } else {
                        const SystemKind kind = system == "syncnet" ? SystemKind::SyncNet
                                                                    : SystemKind::LatencyUnaware;
                        std::vector<LinkInput> links;
                        for (int s = 0; s < agents; ++s) {
                            if (s == e) continue;
                            std::optional<HistoryBuffer> h =
                                transmit(enc[static_cast<std::size_t>(s)], t0, tau, k);
                            if (!h) continue;  // cannot happen for the picked frames
                            links.push_back(LinkInput{s, std::move(*h)});
                        }
                        CollabOutput co = model.run(
                            kind, enc[static_cast<std::size_t>(e)][static_cast<std::size_t>(t0)],
                            e, links, time_unit);
                        boxes = boxes_from_grid(co.detection, world_size, mc.detect_threshold,
                                                mc.nms_iou);
                    }
                    out.preds[si][ti].push_back(std::move(boxes));
                }
            }
        }
    }
    return out;
}

}  // namespace

std::string results_csv(const std::vector<BenchmarkRow>& rows) {
    std::ostringstream os;
    os << "system,tau,iou_thresh,ap,n_scenarios,seed\n";
    for (const BenchmarkRow& r : rows)
        os << r.system << ',' << r.tau << ',' << csv_num(r.iou_thresh, 2) << ',' << csv_num(r.ap)
           << ',' << r.n_scenarios << ',' << r.seed << '\n';
    return os.str();
}

std::vector<BenchmarkRow> run_benchmark(const ExperimentConfig& cfg,
                                        const std::string& checkpoint_prefix,
                                        const std::vector<std::string>& systems,
                                        const std::vector<int>& taus, int threads) {
    cfg.validate();
    if (systems.empty()) throw ConfigError("run_benchmark: no systems requested");
    if (taus.empty()) throw ConfigError("run_benchmark: no latencies requested");
    for (const std::string& s : systems) {
        bool known = false;
        for (const char* name : kKnownSystems) known = known || s == name;
        if (!known) throw ConfigError(msg("run_benchmark: unknown system '", s, "'"));
    }
    for (int t : taus)
        if (t < 0) throw ConfigError(msg("run_benchmark: negative latency ", t));

    ModelConfig mc;
    try {
        mc = checkpoint_model_config(checkpoint_prefix);
    } catch (const Error& e) {
        std::ostringstream names;
        for (std::size_t i = 0; i < systems.size(); ++i) names << (i ? "," : "") << systems[i];
        throw Error(msg("system(s) ", names.str(), " need checkpoint '", checkpoint_prefix,
                        "': ", e.what()));
    }
    if (mc.grid != cfg.world.grid)
        throw ConfigError(msg("checkpoint grid ", mc.grid, " does not match world grid ",
                              cfg.world.grid));
    CollabModel model(mc, /*seed=*/0);
    load_checkpoint(model.params(), checkpoint_prefix);

    const int max_tau = *std::max_element(taus.begin(), taus.end());
    const std::vector<int> frames = pick_eval_frames(
        cfg.world.duration, cfg.eval.frames_per_scenario, mc.history_frames, max_tau);

    std::vector<Scenario> scenarios;
    scenarios.reserve(static_cast<std::size_t>(cfg.eval.scenarios));
    for (int i = 0; i < cfg.eval.scenarios; ++i)
        scenarios.push_back(generate_scenario(
            cfg.world, mix_seed(cfg.seed, "eval-scenario", static_cast<std::uint64_t>(i))));

    std::vector<ScenarioEval> per_scenario(scenarios.size());
    const int workers = std::max(1, std::min<int>(threads, static_cast<int>(scenarios.size())));
    if (workers == 1) {
        for (std::size_t i = 0; i < scenarios.size(); ++i)
            per_scenario[i] = evaluate_scenario(model, scenarios[i], systems, taus, frames,
                                                cfg.channel.time_unit);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        std::atomic<bool> failed{false};
        std::string failure;
        std::mutex failure_mutex;
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (;;) {
                    const std::size_t i = next.fetch_add(1);
                    if (i >= scenarios.size() || failed.load()) return;
                    try {
                        per_scenario[i] = evaluate_scenario(model, scenarios[i], systems, taus,
                                                            frames, cfg.channel.time_unit);
                    } catch (const std::exception& e) {
                        std::lock_guard<std::mutex> lock(failure_mutex);
                        failed.store(true);
                        if (failure.empty()) failure = e.what();
                    }
                }
            });
        for (std::thread& t : pool) t.join();
        if (failed.load()) throw Error(msg("run_benchmark: worker failed: ", failure));
    }

    std::vector<BenchmarkRow> rows;
    for (std::size_t si = 0; si < systems.size(); ++si) {
        for (std::size_t ti = 0; ti < taus.size(); ++ti) {
            std::vector<BoxSet> preds, gts;
            for (const ScenarioEval& se : per_scenario) {
                preds.insert(preds.end(), se.preds[si][ti].begin(), se.preds[si][ti].end());
                gts.insert(gts.end(), se.gts.begin(), se.gts.end());
            }
            for (double thresh : cfg.eval.iou_thresholds) {
                BenchmarkRow row;
                row.system = systems[si];
                row.tau = taus[ti];
                row.iou_thresh = thresh;
                row.ap = average_precision(preds, gts, thresh);
                row.n_scenarios = static_cast<int>(scenarios.size());
                row.seed = cfg.seed;
                rows.push_back(row);
            }
        }
    }
    return rows;
}

// ---- ablation --------------------------------------------------------------

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << "row,compensation,lstm,tm,tau,ap50,ap70\n";
    for (const AblationRow& r : rows)
        os << r.row << ',' << r.compensation << ',' << r.lstm << ',' << (r.tm ? "on" : "off")
           << ',' << r.tau << ',' << csv_num(r.ap50) << ',' << csv_num(r.ap70) << '\n';
    return os.str();
}

std::vector<AblationRow> run_ablation(const ExperimentConfig& cfg, const std::vector<int>& taus,
                                      int threads) {
    struct Variant {
        const char* row;
        const char* estimation;
        bool multi_resolution;
        bool time_modulation;
    };
    static const Variant kVariants[] = {
        {"A", "ve", false, true},   {"B", "ve", true, false},   {"C", "ve", true, true},
        {"D", "fase", false, true}, {"E", "fase", true, false}, {"F", "fase", true, true},
    };

    std::vector<AblationRow> rows;
    for (const Variant& v : kVariants) {
        ExperimentConfig vc = cfg;
        vc.model.estimation = v.estimation;
        vc.model.multi_resolution = v.multi_resolution;
        vc.model.time_modulation = v.time_modulation;
        vc.eval.iou_thresholds = {0.5, 0.7};
        vc.out = cfg.out + "/row_" + v.row;

        log_info("ablation row ", v.row, ": ", v.estimation, "/",
                 v.multi_resolution ? "pyramid" : "single", "/tm=",
                 v.time_modulation ? "on" : "off");
        TrainResult tr = train_model(vc);
        if (tr.halted)
            throw NumericError(msg("ablation row ", v.row, " halted: ", tr.halt_reason));

        std::vector<BenchmarkRow> bench =
            run_benchmark(vc, tr.checkpoint_prefix, {"syncnet"}, taus, threads);
        for (int tau : taus) {
            AblationRow row;
            row.row = v.row;
            row.compensation = std::string(v.estimation) == "ve" ? "vanilla" : "fase";
            row.lstm = v.multi_resolution ? "pyramid" : "single";
            row.tm = v.time_modulation;
            row.tau = tau;
            for (const BenchmarkRow& b : bench) {
                if (b.tau != tau) continue;
                if (b.iou_thresh == 0.5) row.ap50 = b.ap;
                if (b.iou_thresh == 0.7) row.ap70 = b.ap;
            }
            rows.push_back(row);
        }
    }
    return rows;
}

}  // namespace latsync
