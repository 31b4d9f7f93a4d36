#include "latsync/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "latsync/channel.hpp"
#include "latsync/model.hpp"
#include "latsync/ops.hpp"
#include "latsync/rng.hpp"
#include "latsync/training.hpp"

namespace latsync {

namespace {

ad::Tensor rnd(Rng& rng, ad::Shape s, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(ad::shape_size(s));
    for (double& x : v) x = rng.uniform(lo, hi);
    return ad::Tensor::from_data(std::move(s), std::move(v));
}

// Non-uniform readout so a wrong backward rule cannot hide behind symmetric
// cancellation the way it could under a plain sum.
ad::Tensor weighted_sum(const ad::Tensor& t, const ad::Tensor& w) {
    return ad::sum(ad::mul(t, w));
}

struct FaultScope {
    explicit FaultScope(bool enable) : enabled(enable) {
        if (enabled) ad::set_conv2d_grad_fault(true);
    }
    ~FaultScope() {
        if (enabled) ad::set_conv2d_grad_fault(false);
    }
    bool enabled;
};

}  // namespace

double worst_error(const std::vector<ComponentCheck>& checks) {
    double worst = 0.0;
    for (const ComponentCheck& c : checks) worst = std::max(worst, c.max_rel_error);
    return worst;
}

std::vector<ComponentCheck> gradient_audit(std::uint64_t seed, bool inject_conv2d_fault) {
    std::vector<ComponentCheck> out;
    Rng rng(mix_seed(seed, "gradient-audit"));

    auto check = [&out](const std::string& name,
                        const std::function<ad::Tensor(std::vector<ad::Tensor>&)>& f,
                        std::vector<ad::Tensor> inputs) {
        out.push_back({name, ad::finite_diff_check(f, std::move(inputs))});
    };

    const ad::Shape map{4, 4, 3};
    const ad::Tensor ro = rnd(rng, map);  // shared readout weights

    check("add", [&](std::vector<ad::Tensor>& in) { return weighted_sum(ad::add(in[0], in[1]), ro); },
          {rnd(rng, map), rnd(rng, map)});
    check("sub", [&](std::vector<ad::Tensor>& in) { return weighted_sum(ad::sub(in[0], in[1]), ro); },
          {rnd(rng, map), rnd(rng, map)});
    check("mul", [&](std::vector<ad::Tensor>& in) { return weighted_sum(ad::mul(in[0], in[1]), ro); },
          {rnd(rng, map), rnd(rng, map)});
    check("mul_broadcast",
          [&](std::vector<ad::Tensor>& in) { return weighted_sum(ad::mul(in[0], in[1]), ro); },
          {rnd(rng, {4, 4, 1}), rnd(rng, map)});
    check("div", [&](std::vector<ad::Tensor>& in) { return weighted_sum(ad::div(in[0], in[1]), ro); },
          {rnd(rng, map), rnd(rng, map, 0.5, 1.5)});
    check("scale",
          [&](std::vector<ad::Tensor>& in) { return weighted_sum(ad::scale(in[0], -1.7), ro); },
          {rnd(rng, map)});
    check("add_scalar",
          [&](std::vector<ad::Tensor>& in) { return weighted_sum(ad::add_scalar(in[0], 0.37), ro); },
          {rnd(rng, map)});
    check("exp", [&](std::vector<ad::Tensor>& in) { return weighted_sum(ad::exp(in[0]), ro); },
          {rnd(rng, map, -2.0, 2.0)});
    check("sigmoid",
          [&](std::vector<ad::Tensor>& in) { return weighted_sum(ad::sigmoid(in[0]), ro); },
          {rnd(rng, map, -3.0, 3.0)});
    check("tanh", [&](std::vector<ad::Tensor>& in) { return weighted_sum(ad::tanh(in[0]), ro); },
          {rnd(rng, map, -2.0, 2.0)});

    {
        FaultScope fault(inject_conv2d_fault);
        const ad::Tensor rc = rnd(rng, {6, 6, 2});
        check("conv2d",
              [&](std::vector<ad::Tensor>& in) {
                  return weighted_sum(ad::conv2d(in[0], in[1], in[2], 1, 1), rc);
              },
              {rnd(rng, {6, 6, 3}), rnd(rng, {3, 3, 3, 2}), rnd(rng, {2})});
        const ad::Tensor rs = rnd(rng, {3, 3, 3});
        check("conv2d_stride2",
              [&](std::vector<ad::Tensor>& in) {
                  return weighted_sum(ad::conv2d(in[0], in[1], ad::Tensor(), 2, 0), rs);
              },
              {rnd(rng, {6, 6, 2}), rnd(rng, {2, 2, 2, 3})});
    }

    const ad::Tensor rp = rnd(rng, {3, 3, 2});
    check("avg_pool2",
          [&](std::vector<ad::Tensor>& in) { return weighted_sum(ad::avg_pool2(in[0]), rp); },
          {rnd(rng, {6, 6, 2})});
    const ad::Tensor ru = rnd(rng, {6, 6, 2});
    check("upsample2",
          [&](std::vector<ad::Tensor>& in) { return weighted_sum(ad::upsample2(in[0]), ru); },
          {rnd(rng, {3, 3, 2})});
    const ad::Tensor rcat = rnd(rng, {4, 4, 6});
    check("concat_c",
          [&](std::vector<ad::Tensor>& in) {
              return weighted_sum(ad::concat_c({in[0], in[1], in[2]}), rcat);
          },
          {rnd(rng, {4, 4, 1}), rnd(rng, {4, 4, 2}), rnd(rng, map)});
    const ad::Tensor rsl = rnd(rng, {4, 4, 3});
    check("slice_c",
          [&](std::vector<ad::Tensor>& in) { return weighted_sum(ad::slice_c(in[0], 1, 4), rsl); },
          {rnd(rng, {4, 4, 5})});
    check("sum", [&](std::vector<ad::Tensor>& in) { return ad::sum(in[0]); }, {rnd(rng, map)});

    {
        std::vector<double> tv(16), wv(16);
        for (std::size_t i = 0; i < 16; ++i) {
            tv[i] = rng.uniform() < 0.3 ? 1.0 : 0.0;
            wv[i] = rng.uniform(0.2, 1.0);
        }
        const ad::Tensor targets = ad::Tensor::from_data({4, 4, 1}, tv);
        const ad::Tensor weights = ad::Tensor::from_data({4, 4, 1}, wv);
        check("bce_with_logits",
              [&](std::vector<ad::Tensor>& in) {
                  return ad::bce_with_logits(in[0], targets, weights);
              },
              {rnd(rng, {4, 4, 1}, -3.0, 3.0)});
    }
    {
        // Offsets kept away from the |d| = 1 curvature joint so the probe
        // brackets never straddle it.
        std::vector<double> pv(32), dv(32), wv(32);
        for (std::size_t i = 0; i < 32; ++i) {
            pv[i] = rng.uniform(-1.0, 1.0);
            const double mag = i % 2 == 0 ? rng.uniform(0.0, 0.7) : rng.uniform(1.3, 2.2);
            dv[i] = pv[i] - (rng.uniform() < 0.5 ? mag : -mag);
            wv[i] = rng.uniform(0.2, 1.0);
        }
        const ad::Tensor target = ad::Tensor::from_data({4, 4, 2}, dv);
        const ad::Tensor weights = ad::Tensor::from_data({4, 4, 2}, wv);
        check("smooth_l1",
              [&](std::vector<ad::Tensor>& in) { return ad::smooth_l1(in[0], target, weights); },
              {ad::Tensor::from_data({4, 4, 2}, pv)});
    }

    {
        const ad::Tensor r1 = rnd(rng, {4, 4, 1});
        const ad::Tensor r2 = rnd(rng, {4, 4, 1});
        const ad::Tensor r3 = rnd(rng, {4, 4, 1});
        check("attention_softmax",
              [&](std::vector<ad::Tensor>& in) {
                  std::vector<ad::Tensor> w =
                      PerceptionStack::normalize_attention({in[0], in[1], in[2]});
                  return ad::add(weighted_sum(w[0], r1),
                                 ad::add(weighted_sum(w[1], r2), weighted_sum(w[2], r3)));
              },
              {rnd(rng, {4, 4, 1}, -2.0, 2.0), rnd(rng, {4, 4, 1}, -2.0, 2.0),
               rnd(rng, {4, 4, 1}, -2.0, 2.0)});
    }

    // ---- composed pipeline on an 8x8x4 feature fixture ----------------------
    ModelConfig mc;
    mc.grid = 32;  // feature maps 8x8
    mc.feature_channels = 4;
    mc.hidden_channels = 4;
    mc.history_frames = 2;
    mc.estimation = "fase";
    mc.multi_resolution = true;
    mc.time_modulation = true;
    CollabModel model(mc, mix_seed(seed, "gradient-audit-model"));

    const int t0 = 3, tau = 2;
    const ad::Shape obs_shape{32, 32, 1};
    const ad::Shape feat_shape{8, 8, mc.feature_channels};

    // Fabricated but shape-correct supervision: random zero-latency targets
    // and a sparse detection rasterization.
    TeacherTargets teacher;
    teacher.fused = rnd(rng, feat_shape, -0.5, 0.5);
    teacher.features = {rnd(rng, feat_shape, -0.5, 0.5), rnd(rng, feat_shape, -0.5, 0.5)};
    {
        std::vector<ad::Tensor> wlogits = {rnd(rng, {8, 8, 1}), rnd(rng, {8, 8, 1})};
        teacher.weights = PerceptionStack::normalize_attention(wlogits);
        for (ad::Tensor& w : teacher.weights) w = w.detached();
    }
    BoxSet gt_boxes = {Box::from_center(10.0, 12.0, 5.0, 4.0), Box::from_center(25.0, 20.0, 6.0, 5.0)};
    DetectionTargets det_targets = rasterize_detection_targets(gt_boxes, 8, 32.0);

    auto pipeline = [&](const ad::Tensor& obs_ego, const ad::Tensor& obs_a,
                        const ad::Tensor& obs_b) {
        ad::Tensor ego = model.stack().encode(obs_ego);
        std::vector<ad::Tensor> sender_frames(static_cast<std::size_t>(t0) + 1);
        sender_frames[0] = model.stack().encode(obs_a);
        sender_frames[1] = model.stack().encode(obs_b);
        std::optional<HistoryBuffer> h = transmit(sender_frames, t0, tau, mc.history_frames);
        std::vector<LinkInput> links;
        links.push_back(LinkInput{1, std::move(*h)});
        CollabOutput student = collaborate(model.stack(), model.compensator(),
                                           SystemKind::SyncNet, ego, 0, links, 1.0);
        LossBreakdown lb = collaboration_loss(student, teacher, det_targets, LossWeights{});
        return lb.total;
    };

    const ad::Tensor obs_ego = rnd(rng, obs_shape, 0.0, 1.0);
    const ad::Tensor obs_a = rnd(rng, obs_shape, 0.0, 1.0);
    const ad::Tensor obs_b = rnd(rng, obs_shape, 0.0, 1.0);

    auto pipeline_check = [&](const std::string& name, std::vector<ad::Tensor> probes) {
        out.push_back(
            {name, ad::finite_diff_check(
                       [&](std::vector<ad::Tensor>&) { return pipeline(obs_ego, obs_a, obs_b); },
                       std::move(probes))});
        model.params().zero_grads();
    };

    pipeline_check("pipeline.observations", {obs_ego, obs_a, obs_b});
    pipeline_check("pipeline.encoder.kernel", {*model.params().find("encoder.stage1.kernel")});
    pipeline_check("pipeline.attention.kernel", {*model.params().find("attention.mix.kernel")});
    pipeline_check("pipeline.lstm.kernel",
                   {*model.params().find("estimator.feature.w_input.full.kernel")});
    pipeline_check("pipeline.decode_head.kernel",
                   {*model.params().find("estimator.decode_feature.kernel")});
    pipeline_check("pipeline.modulation.kernel",
                   {*model.params().find("modulation.feature.kernel")});
    pipeline_check("pipeline.detector.kernel", {*model.params().find("decoder.box.kernel")});

    return out;
}

}  // namespace latsync
