#include "latsync/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <sstream>

#include "latsync/checkpoint.hpp"
#include "latsync/error.hpp"
#include "latsync/util.hpp"

namespace latsync {

DetectionTargets rasterize_detection_targets(const BoxSet& ground_truth, int feature_size,
                                             double world_size) {
    if (feature_size < 1) throw ConfigError("rasterize: feature_size must be positive");
    if (world_size <= 0.0) throw ConfigError("rasterize: world_size must be positive");
    const int n = feature_size;
    const double stride = world_size / n;

    std::vector<double> obj(static_cast<std::size_t>(n) * n, 0.0);
    std::vector<double> reg(static_cast<std::size_t>(n) * n * 4, 0.0);
    std::vector<double> reg_w(static_cast<std::size_t>(n) * n * 4, 0.0);
    int positives = 0;

    for (const Box& b : ground_truth) {
        if (!b.valid()) continue;
        const double cx = b.cx(), cy = b.cy();
        int c = static_cast<int>(std::floor(cx / stride));
        int r = static_cast<int>(std::floor(cy / stride));
        c = std::clamp(c, 0, n - 1);
        r = std::clamp(r, 0, n - 1);
        const std::size_t cell = static_cast<std::size_t>(r) * n + c;
        if (obj[cell] != 0.0) continue;  // first box keeps the cell
        obj[cell] = 1.0;
        ++positives;
        reg[cell * 4 + 0] = cx / stride - (c + 0.5);
        reg[cell * 4 + 1] = cy / stride - (r + 0.5);
        reg[cell * 4 + 2] = std::log(b.width());
        reg[cell * 4 + 3] = std::log(b.height());
        for (int ch = 0; ch < 4; ++ch) reg_w[cell * 4 + ch] = 1.0;
    }

    // Weighted-mean BCE with the negative cells down-weighted by the
    // positive/negative count ratio, so sparse scenes do not drown the
    // positives in background.
    const int total = n * n;
    const int negatives = total - positives;
    std::vector<double> obj_w(static_cast<std::size_t>(total), 0.0);
    const double w_neg =
        (positives > 0 && negatives > 0) ? static_cast<double>(positives) / negatives : 1.0;
    double w_sum = 0.0;
    for (int i = 0; i < total; ++i) {
        obj_w[static_cast<std::size_t>(i)] = obj[static_cast<std::size_t>(i)] > 0.0 ? 1.0 : w_neg;
        w_sum += obj_w[static_cast<std::size_t>(i)];
    }
    for (double& w : obj_w) w /= w_sum;

    if (positives > 0) {
        const double w_box = 1.0 / (4.0 * positives);
        for (double& w : reg_w) w *= w_box;
    }

    DetectionTargets t;
    t.objectness = ad::Tensor::from_data({n, n, 1}, std::move(obj));
    t.obj_weights = ad::Tensor::from_data({n, n, 1}, std::move(obj_w));
    t.box_reg = ad::Tensor::from_data({n, n, 4}, std::move(reg));
    t.box_weights = ad::Tensor::from_data({n, n, 4}, std::move(reg_w));
    t.positives = positives;
    return t;
}

TeacherTargets teacher_pass(const PerceptionStack& stack, const LatencyCompensator& comp,
                            const Scenario& scenario, int receiver, int frame,
                            const std::vector<int>& senders) {
    ad::NoGradGuard guard;
    ad::Tensor ego = stack.encode(observe(scenario, receiver, frame).grid);
    std::vector<LinkInput> links;
    links.reserve(senders.size());
    for (int s : senders) {
        ad::Tensor f = stack.encode(observe(scenario, s, frame).grid);
        HistoryBuffer h;
        h.tau = 0;
        h.frame_stamps = {frame};
        h.features = {f};
        links.push_back(LinkInput{s, std::move(h)});
    }
    // With zero latency the stale-frame path and the compensated path agree
    // bitwise, and the former never needs a k-deep buffer.
    CollabOutput out =
        collaborate(stack, comp, SystemKind::LatencyUnaware, ego, receiver, links, 1.0);
    TeacherTargets t;
    t.fused = out.fused;
    t.features = out.features;
    t.weights = out.weights;
    return t;
}

namespace {

ad::Tensor mse(const ad::Tensor& a, const ad::Tensor& b) {
    ad::Tensor d = ad::sub(a, b);
    return ad::scale(ad::sum(ad::mul(d, d)), 1.0 / static_cast<double>(a.size()));
}

}  // namespace

LossBreakdown collaboration_loss(const CollabOutput& student, const TeacherTargets& teacher,
                                 const DetectionTargets& targets, const LossWeights& lw) {
    if (student.features.size() != teacher.features.size() ||
        student.weights.size() != teacher.weights.size())
        throw Error("collaboration_loss: student and teacher contributor lists differ");

    ad::Tensor out_t = ad::add(
        ad::bce_with_logits(student.detection.objectness_logits, targets.objectness,
                            targets.obj_weights),
        ad::smooth_l1(student.detection.box_regression, targets.box_reg, targets.box_weights));

    ad::Tensor fusion_t = mse(student.fused, teacher.fused);

    ad::Tensor feature_t = ad::Tensor::zeros({1});
    const std::size_t n_links = student.features.size() - 1;  // ego excluded
    for (std::size_t j = 1; j < student.features.size(); ++j)
        feature_t = ad::add(feature_t, mse(student.features[j], teacher.features[j]));
    if (n_links > 0) feature_t = ad::scale(feature_t, 1.0 / static_cast<double>(n_links));

    ad::Tensor weight_t = ad::Tensor::zeros({1});
    for (std::size_t j = 0; j < student.weights.size(); ++j)
        weight_t = ad::add(weight_t, mse(student.weights[j], teacher.weights[j]));
    weight_t = ad::scale(weight_t, 1.0 / static_cast<double>(student.weights.size()));

    LossBreakdown lb;
    lb.out = out_t.value();
    lb.fusion = fusion_t.value();
    lb.feature = feature_t.value();
    lb.weight = weight_t.value();
    lb.total = ad::add(ad::scale(out_t, lw.lambda_o),
                       ad::add(ad::scale(ad::add(fusion_t, feature_t), lw.lambda_f),
                               ad::scale(weight_t, lw.lambda_w)));
    lb.total_value = lb.total.value();
    return lb;
}

int curriculum_stage(int epoch, const CurriculumSchedule& s) {
    if (epoch < 0) throw ConfigError("curriculum_stage: negative epoch");
    return 1 + epoch / s.frames_per_stage;
}

LatencyModel curriculum_latency(int epoch, const CurriculumSchedule& s, const LatencyModel& base) {
    const int stage = curriculum_stage(epoch, s);
    LatencyModel m = base;
    if (stage <= s.max_fixed_latency) {
        m.mode = LatencyModel::Mode::Fixed;
        m.mean_frames = stage;
    } else {
        m.mode = LatencyModel::Mode::Exponential;
        m.mean_frames = s.final_mean;
    }
    return m;
}

int curriculum_stage_tau(int epoch, const CurriculumSchedule& s) {
    const int stage = curriculum_stage(epoch, s);
    return stage <= s.max_fixed_latency ? stage : -1;
}

double clip_global_norm(std::vector<double>& grads, double max_norm) {
    double sq = 0.0;
    for (double g : grads) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double k = max_norm / norm;
        for (double& g : grads) g *= k;
    }
    return norm;
}

AdamOptimizer::AdamOptimizer(std::size_t n, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

void AdamOptimizer::step(std::vector<double>& values, const std::vector<double>& grads) {
    if (values.size() != m_.size() || grads.size() != m_.size())
        throw Error("AdamOptimizer: size mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < values.size(); ++i) {
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i] * grads[i];
        const double mhat = m_[i] / bc1;
        const double vhat = v_[i] / bc2;
        values[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
}

std::string metrics_csv(const std::vector<TrainMetricsRow>& rows) {
    std::ostringstream os;
    os << "epoch,stage_tau,loss_total,loss_out,loss_fusion,loss_feat,loss_weight\n";
    for (const TrainMetricsRow& r : rows) {
        os << r.epoch << ',' << r.stage_tau << ',' << csv_num(r.loss_total) << ','
           << csv_num(r.loss_out) << ',' << csv_num(r.loss_fusion) << ',' << csv_num(r.loss_feat)
           << ',' << csv_num(r.loss_weight) << '\n';
    }
    return os.str();
}

namespace {

struct SampleStats {
    double total = 0, out = 0, fusion = 0, feature = 0, weight = 0;
};

}  // namespace

TrainResult train_model(const ExperimentConfig& cfg) {
    cfg.validate();
    std::filesystem::create_directories(cfg.out);

    CollabModel model(cfg.model, cfg.seed);
    AdamOptimizer opt(model.params().total_values(), cfg.train.learning_rate);

    std::vector<Scenario> pool;
    pool.reserve(static_cast<std::size_t>(cfg.train.scenarios));
    for (int i = 0; i < cfg.train.scenarios; ++i)
        pool.push_back(generate_scenario(cfg.world, mix_seed(cfg.seed, "train-scenario",
                                                             static_cast<std::uint64_t>(i))));

    TrainResult result;
    result.checkpoint_prefix = cfg.out + "/checkpoint";
    result.metrics_path = cfg.out + "/metrics.csv";

    const int k = cfg.model.history_frames;
    const int agents = cfg.world.agents;
    const int duration = cfg.world.duration;
    const int batch = cfg.train.samples_per_scenario;

    for (int epoch = 0; epoch < cfg.train.epochs && !result.halted; ++epoch) {
        const LatencyModel latency = curriculum_latency(epoch, cfg.curriculum, cfg.channel);
        const std::uint64_t latency_seed =
            mix_seed(cfg.seed, "train-latency", static_cast<std::uint64_t>(epoch));
        Rng er(mix_seed(cfg.seed, "train-epoch", static_cast<std::uint64_t>(epoch)));

        std::vector<int> order(pool.size());
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1],
                      order[static_cast<std::size_t>(er.uniform_int(0, static_cast<int>(i) - 1))]);

        SampleStats epoch_stats;
        int epoch_samples = 0;

        for (int scenario_idx : order) {
            if (result.halted) break;
            const Scenario& scenario = pool[static_cast<std::size_t>(scenario_idx)];
            model.params().zero_grads();

            SampleStats batch_stats;
            int batch_samples = 0;
            for (int b = 0; b < batch; ++b) {
                const int receiver = er.uniform_int(0, agents - 1);
                int t0_lo = k - 1;
                if (latency.mode == LatencyModel::Mode::Fixed)
                    t0_lo = std::min(static_cast<int>(latency.mean_frames) + k - 1, duration - 1);
                t0_lo = std::min(t0_lo, duration - 1);
                const int t0 = er.uniform_int(t0_lo, duration - 1);

                try {
                    ad::GradientTape tape;
                    ad::ScopedFiniteCheck finite_check;

                    ad::Tensor ego = model.stack().encode(observe(scenario, receiver, t0).grid);
                    std::vector<LinkInput> links;
                    std::vector<int> senders;
                    for (int s = 0; s < agents; ++s) {
                        if (s == receiver) continue;
                        const int tau = link_latency(latency, latency_seed, t0, s, receiver);
                        if (t0 - tau - k + 1 < 0) continue;  // warm-up
                        std::vector<ad::Tensor> frames(static_cast<std::size_t>(t0) + 1);
                        for (int f = t0 - tau - k + 1; f <= t0 - tau; ++f)
                            frames[static_cast<std::size_t>(f)] =
                                model.stack().encode(observe(scenario, s, f).grid);
                        std::optional<HistoryBuffer> h = transmit(frames, t0, tau, k);
                        if (!h) continue;
                        links.push_back(LinkInput{s, std::move(*h)});
                        senders.push_back(s);
                    }

                    CollabOutput student =
                        model.run(SystemKind::SyncNet, ego, receiver, links, latency.time_unit);
                    TeacherTargets teacher = teacher_pass(model.stack(), model.compensator(),
                                                          scenario, receiver, t0, senders);
                    DetectionTargets targets =
                        rasterize_detection_targets(ground_truth_boxes(scenario, t0),
                                                    cfg.model.feature_size(), cfg.world.size);
                    LossBreakdown lb = collaboration_loss(student, teacher, targets, cfg.loss);

                    if (!std::isfinite(lb.total_value)) throw NumericError("non-finite loss value");

                    tape.backward(ad::scale(lb.total, 1.0 / batch));

                    batch_stats.total += lb.total_value;
                    batch_stats.out += lb.out;
                    batch_stats.fusion += lb.fusion;
                    batch_stats.feature += lb.feature;
                    batch_stats.weight += lb.weight;
                    ++batch_samples;
                } catch (const NumericError& e) {
                    result.halted = true;
                    result.halt_reason = msg("epoch ", epoch, ", scenario ", scenario_idx,
                                             ", receiver ", receiver, ", frame ", t0, ": ",
                                             e.what());
                    break;
                }
            }
            if (result.halted) break;
            if (batch_samples == 0) continue;

            std::vector<double> grads = model.params().gather_grads();
            bool grads_finite = true;
            for (double g : grads)
                if (!std::isfinite(g)) { grads_finite = false; break; }
            if (!grads_finite) {
                result.halted = true;
                result.halt_reason = msg("epoch ", epoch, ": non-finite gradient after backward");
                break;
            }
            clip_global_norm(grads, cfg.train.clip_norm);
            std::vector<double> values = model.params().gather_values();
            opt.step(values, grads);
            model.params().scatter_values(values);
            model.params().zero_grads();

            epoch_stats.total += batch_stats.total;
            epoch_stats.out += batch_stats.out;
            epoch_stats.fusion += batch_stats.fusion;
            epoch_stats.feature += batch_stats.feature;
            epoch_stats.weight += batch_stats.weight;
            epoch_samples += batch_samples;
        }

        if (result.halted) break;

        TrainMetricsRow row;
        row.epoch = epoch;
        row.stage_tau = curriculum_stage_tau(epoch, cfg.curriculum);
        if (epoch_samples > 0) {
            row.loss_total = epoch_stats.total / epoch_samples;
            row.loss_out = epoch_stats.out / epoch_samples;
            row.loss_fusion = epoch_stats.fusion / epoch_samples;
            row.loss_feat = epoch_stats.feature / epoch_samples;
            row.loss_weight = epoch_stats.weight / epoch_samples;
        }
        result.metrics.push_back(row);
        result.epochs_run = epoch + 1;

        if (cfg.train.checkpoint_every > 0 && (epoch + 1) % cfg.train.checkpoint_every == 0) {
            save_checkpoint(model.params(), cfg.model, result.checkpoint_prefix);
            log_debug("checkpoint at epoch ", epoch);
        }
        log_info("epoch ", epoch, " stage_tau ", row.stage_tau, " loss ",
                 csv_num(row.loss_total));
    }

    save_checkpoint(model.params(), cfg.model, result.checkpoint_prefix);
    write_text_file(result.metrics_path, metrics_csv(result.metrics));

    if (result.halted) {
        const std::string diag_path = cfg.out + "/diagnostic.txt";
        std::ostringstream os;
        os << "training halted: non-finite value\n" << result.halt_reason << '\n';
        os << "epochs completed: " << result.epochs_run << '\n';
        double gmax = 0.0;
        for (double g : model.params().gather_grads()) gmax = std::max(gmax, std::abs(g));
        os << "max |grad| at halt: " << gmax << '\n';
        write_text_file(diag_path, os.str());
        log_error("training halted: ", result.halt_reason, " (see ", diag_path, ")");
    }
    return result;
}

}  // namespace latsync
