#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "latsync/ops.hpp"
#include "latsync/perception.hpp"

using namespace latsync;
using ad::Tensor;

namespace {

ModelConfig small_config() {
    ModelConfig cfg;
    cfg.grid = 16;  // feature maps 4x4
    cfg.feature_channels = 3;
    cfg.hidden_channels = 3;
    return cfg;
}

Tensor random_map(const ad::Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    std::vector<double> v(ad::shape_size(shape));
    for (double& x : v) x = rng.uniform(lo, hi);
    return Tensor::from_data(shape, std::move(v));
}

}  // namespace

TEST_CASE("model config rejects inconsistent settings") {
    ModelConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.grid = 20;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.grid = 48;
    CHECK_NOTHROW(cfg.validate());
    cfg.estimation = "magic";
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.estimation = "ve";
    cfg.detect_threshold = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.detect_threshold = 0.5;
    cfg.nms_iou = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("stack parameters register in a fixed, name-stable order") {
    nn::ParamRegistry reg;
    Rng rng(1);
    PerceptionStack stack(small_config(), reg, rng);
    std::vector<std::string> names;
    for (const auto& [n, t] : reg.items()) names.push_back(n);
    const std::vector<std::string> expect = {
        "encoder.stage1.kernel", "encoder.stage1.bias", "encoder.stage2.kernel",
        "encoder.stage2.bias",   "encoder.stage3.kernel", "encoder.stage3.bias",
        "attention.mix.kernel",  "attention.mix.bias",  "attention.logit.kernel",
        "attention.logit.bias",  "decoder.stage1.kernel", "decoder.stage1.bias",
        "decoder.stage2.kernel", "decoder.stage2.bias", "decoder.objectness.kernel",
        "decoder.objectness.bias", "decoder.box.kernel", "decoder.box.bias"};
    CHECK(names == expect);
}

TEST_CASE("encoder maps the grid to a quarter-size bounded feature map") {
    nn::ParamRegistry reg;
    Rng rng(2);
    ModelConfig cfg = small_config();
    PerceptionStack stack(cfg, reg, rng);
    Tensor obs = random_map({16, 16, 1}, 5, 0.0, 1.0);
    Tensor f = stack.encode(obs);
    CHECK(f.shape() == ad::Shape{4, 4, 3});
    for (double v : f.values()) {
        CHECK(v > -1.0);
        CHECK(v < 1.0);  // tanh output
    }
    CHECK_THROWS_AS(stack.encode(Tensor::zeros({8, 8, 1})), Error);
    CHECK_THROWS_AS(stack.encode(Tensor::zeros({16, 16, 2})), Error);

    Tensor logits = stack.attention_logits(f, f);
    CHECK(logits.shape() == ad::Shape{4, 4, 1});
    CHECK_THROWS_AS(stack.attention_logits(f, Tensor::zeros({4, 4, 2})), Error);
}

TEST_CASE("attention normalization is an exact per-cell softmax") {
    std::vector<Tensor> logits = {
        Tensor::from_data({2, 2, 1}, {0.0, 1.0, -2.0, 30.0}),
        Tensor::from_data({2, 2, 1}, {0.5, 1.0, 4.0, -30.0}),
        Tensor::from_data({2, 2, 1}, {-0.5, 1.0, 0.0, 31.0}),
    };
    std::vector<Tensor> w = PerceptionStack::normalize_attention(logits);
    REQUIRE(w.size() == 3);
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 2; ++c) {
            double denom = 0.0;
            for (const Tensor& l : logits) denom += std::exp(l.at({r, c, 0}));
            double sum = 0.0;
            for (std::size_t i = 0; i < 3; ++i) {
                const double expect = std::exp(logits[i].at({r, c, 0})) / denom;
                CHECK(w[i].at({r, c, 0}) == doctest::Approx(expect).epsilon(1e-12));
                sum += w[i].at({r, c, 0});
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
        }

    // A single contributor gets weight exactly 1 (softmax of one logit).
    std::vector<Tensor> solo = PerceptionStack::normalize_attention(
        {Tensor::from_data({1, 1, 1}, {17.3})});
    CHECK(solo[0].value() == 1.0);

    CHECK_THROWS_AS(PerceptionStack::normalize_attention({}), Error);
}

TEST_CASE("normalization survives extreme logits") {
    std::vector<Tensor> w = PerceptionStack::normalize_attention(
        {Tensor::from_data({1, 1, 1}, {1000.0}), Tensor::from_data({1, 1, 1}, {-1000.0})});
    CHECK(w[0].value() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(w[1].value() >= 0.0);
    CHECK(w[1].value() < 1e-300);
    CHECK(std::isfinite(w[1].value()));
}

TEST_CASE("fusion is a per-cell convex combination of the contributors") {
    nn::ParamRegistry reg;
    Rng rng(3);
    PerceptionStack stack(small_config(), reg, rng);

    std::vector<Tensor> feats = {random_map({4, 4, 3}, 11), random_map({4, 4, 3}, 12),
                                 random_map({4, 4, 3}, 13)};
    std::vector<Tensor> logits = {random_map({4, 4, 1}, 21, -2.0, 2.0),
                                  random_map({4, 4, 1}, 22, -2.0, 2.0),
                                  random_map({4, 4, 1}, 23, -2.0, 2.0)};
    std::vector<Tensor> w = PerceptionStack::normalize_attention(logits);
    Tensor fused = stack.fuse(feats, w, /*strict=*/true);
    CHECK(fused.shape() == ad::Shape{4, 4, 3});
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c)
            for (int ch = 0; ch < 3; ++ch) {
                double lo = 1e300, hi = -1e300;
                for (const Tensor& f : feats) {
                    lo = std::min(lo, f.at({r, c, ch}));
                    hi = std::max(hi, f.at({r, c, ch}));
                }
                CHECK(fused.at({r, c, ch}) >= lo - 1e-12);
                CHECK(fused.at({r, c, ch}) <= hi + 1e-12);
            }

    // One contributor with unit weight passes through bitwise.
    Tensor alone = stack.fuse({feats[0]}, {Tensor::full({4, 4, 1}, 1.0)}, true);
    CHECK(alone.values() == feats[0].values());

    CHECK_THROWS_AS(stack.fuse(feats, {w[0]}, false), Error);
    CHECK_THROWS_AS(stack.fuse({}, {}, false), Error);
}

TEST_CASE("strict fusion audits the per-cell weight sums") {
    nn::ParamRegistry reg;
    Rng rng(4);
    PerceptionStack stack(small_config(), reg, rng);
    std::vector<Tensor> feats = {random_map({2, 2, 1}, 31), random_map({2, 2, 1}, 32)};
    std::vector<Tensor> bad = {Tensor::full({2, 2, 1}, 0.6), Tensor::full({2, 2, 1}, 0.5)};
    CHECK_THROWS_AS(stack.fuse(feats, bad, true), Error);
    CHECK_NOTHROW(stack.fuse(feats, bad, false));  // tolerated when not auditing
    std::vector<Tensor> good = {Tensor::full({2, 2, 1}, 0.6), Tensor::full({2, 2, 1}, 0.4)};
    CHECK_NOTHROW(stack.fuse(feats, good, true));
}

TEST_CASE("decoder emits logits, probabilities and box regressions") {
    nn::ParamRegistry reg;
    Rng rng(5);
    PerceptionStack stack(small_config(), reg, rng);
    DetectionGrid g = stack.decode(random_map({4, 4, 3}, 41));
    CHECK(g.objectness_logits.shape() == ad::Shape{4, 4, 1});
    CHECK(g.objectness.shape() == ad::Shape{4, 4, 1});
    CHECK(g.box_regression.shape() == ad::Shape{4, 4, 4});
    for (std::size_t i = 0; i < g.objectness.size(); ++i) {
        const double p = g.objectness.values()[i];
        const double x = g.objectness_logits.values()[i];
        CHECK(p > 0.0);
        CHECK(p < 1.0);
        CHECK(p == doctest::Approx(1.0 / (1.0 + std::exp(-x))).epsilon(1e-12));
    }
}

TEST_CASE("box extraction matches a brute-force threshold + suppression oracle") {
    // Hand-built 4x4 detection grid over a 16 m world (stride 4 m).
    const int H = 4;
    std::vector<double> conf(H * H, 0.01);
    std::vector<double> reg(H * H * 4, 0.0);
    auto set_cell = [&](int r, int c, double p, double dx, double dy, double w, double h) {
        conf[static_cast<std::size_t>(r * H + c)] = p;
        double* cell = &reg[static_cast<std::size_t>((r * H + c) * 4)];
        cell[0] = dx;
        cell[1] = dy;
        cell[2] = std::log(w);
        cell[3] = std::log(h);
    };
    set_cell(0, 0, 0.90, 0.0, 0.0, 4.0, 4.0);    // box [0,4]x[0,4]
    set_cell(0, 1, 0.80, 0.0, 0.0, 4.0, 4.0);    // box [4,8]x[0,4], touches the first
    set_cell(2, 2, 0.85, 0.0, 0.0, 6.0, 6.0);    // box centered (10,10)
    set_cell(2, 3, 0.60, -0.9, 0.0, 6.0, 6.0);   // nearly the same box -> suppressed
    set_cell(3, 3, 0.45, 0.0, 0.0, 2.0, 2.0);    // below threshold
    set_cell(1, 2, 0.70, 0.0, 0.0, 20.0, 1.0);   // wide sliver overlapping little

    DetectionGrid grid;
    grid.objectness = Tensor::from_data({H, H, 1}, conf);
    grid.objectness_logits = grid.objectness;  // unused by extraction
    grid.box_regression = Tensor::from_data({H, H, 4}, reg);

    const double threshold = 0.5, nms = 0.3, world = 16.0;
    BoxSet got = boxes_from_grid(grid, world, threshold, nms);

    // Independent oracle: re-derive every candidate, rank, suppress.
    struct C {
        Box b;
        int r, c;
    };
    std::vector<C> cands;
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < H; ++c) {
            const double p = conf[static_cast<std::size_t>(r * H + c)];
            if (p < threshold) continue;
            const double* cell = &reg[static_cast<std::size_t>((r * H + c) * 4)];
            const double cx = (c + 0.5 + cell[0]) * (world / H);
            const double cy = (r + 0.5 + cell[1]) * (world / H);
            cands.push_back({Box::from_center(cx, cy, std::exp(cell[2]), std::exp(cell[3]), p),
                             r, c});
        }
    std::stable_sort(cands.begin(), cands.end(), [](const C& a, const C& b) {
        if (a.b.confidence != b.b.confidence) return a.b.confidence > b.b.confidence;
        return a.r != b.r ? a.r < b.r : a.c < b.c;
    });
    BoxSet expect;
    for (const C& c : cands) {
        bool drop = false;
        for (const Box& k : expect) {
            const double ix = std::min(c.b.x1, k.x1) - std::max(c.b.x0, k.x0);
            const double iy = std::min(c.b.y1, k.y1) - std::max(c.b.y0, k.y0);
            const double inter = (ix > 0 && iy > 0) ? ix * iy : 0.0;
            if (inter / (c.b.area() + k.area() - inter) >= nms) {
                drop = true;
                break;
            }
        }
        if (!drop) expect.push_back(c.b);
    }

    REQUIRE(got.size() == expect.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(got[i].x0 == expect[i].x0);
        CHECK(got[i].y0 == expect[i].y0);
        CHECK(got[i].x1 == expect[i].x1);
        CHECK(got[i].y1 == expect[i].y1);
        CHECK(got[i].confidence == expect[i].confidence);
    }

    // Spot checks the oracle itself must satisfy.
    REQUIRE(got.size() == 4);                   // 5 candidates pass threshold, 1 suppressed
    CHECK(got[0].confidence == 0.90);
    CHECK(got[1].confidence == 0.85);
    bool has_suppressed = false;
    for (const Box& b : got) has_suppressed |= (b.confidence == 0.60);
    CHECK_FALSE(has_suppressed);

    CHECK_THROWS_AS(boxes_from_grid(grid, world, 0.0, nms), Error);
}

TEST_CASE("equal-confidence candidates rank by row then column") {
    const int H = 4;
    std::vector<double> conf(H * H, 0.0);
    std::vector<double> reg(H * H * 4, 0.0);
    // Two identical-confidence cells predicting overlapping boxes: the one at
    // the smaller row index must win.
    auto put = [&](int r, int c, double cx, double cy) {
        conf[static_cast<std::size_t>(r * H + c)] = 0.7;
        double* cell = &reg[static_cast<std::size_t>((r * H + c) * 4)];
        cell[0] = cx / 4.0 - (c + 0.5);
        cell[1] = cy / 4.0 - (r + 0.5);
        cell[2] = std::log(6.0);
        cell[3] = std::log(6.0);
    };
    put(1, 2, 8.0, 8.0);
    put(2, 1, 8.5, 8.0);  // heavy overlap with the first
    DetectionGrid grid;
    grid.objectness = Tensor::from_data({H, H, 1}, conf);
    grid.objectness_logits = grid.objectness;
    grid.box_regression = Tensor::from_data({H, H, 4}, reg);
    BoxSet got = boxes_from_grid(grid, 16.0, 0.5, 0.3);
    REQUIRE(got.size() == 1);
    CHECK(got[0].cx() == doctest::Approx(8.0));  // row 1 won the tie
}
