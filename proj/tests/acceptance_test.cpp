// Acceptance suite: one test per release criterion, each printing a
// PASS/FAIL line. Run via ctest or directly:  ./acceptance_test

#include <gtest/gtest.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "mcfa/mcfa.hpp"
#include "oracles.hpp"

using namespace mcfa;
namespace fs = std::filesystem;

namespace {

class Acceptance : public ::testing::Test {
protected:
    void report(const std::string& name) {
        std::cout << "[ACCEPTANCE] " << name << ": " << (HasFailure() ? "FAIL" : "PASS")
                  << std::endl;
    }
};

ModelConfig tiny_config(int d = 4) {
    ModelConfig cfg;
    cfg.channel_scale = 1.0 / 16.0;
    cfg.num_attributes = d;
    cfg.num_landmarks = 5;
    cfg.input_sides = {32, 16, 8};
    cfg.in_channels = 1;
    return cfg;
}

Tensor random_image(const ModelConfig& cfg, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Tensor img({cfg.in_channels, cfg.input_sides[0], cfg.input_sides[0]});
    for (auto& v : img.values()) v = unit(rng);
    return img;
}

Sample random_sample(const ModelConfig& cfg, SampleKind kind, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Sample s;
    s.kind = kind;
    s.image = random_image(cfg, rng);
    if (kind != SampleKind::nonface)
        s.box = {0.1 + 0.3 * unit(rng), 0.1 + 0.3 * unit(rng), 0.2 + 0.3 * unit(rng),
                 0.2 + 0.3 * unit(rng)};
    if (kind == SampleKind::landmark) {
        s.landmarks = std::vector<double>(2 * cfg.num_landmarks);
        for (auto& v : *s.landmarks) v = unit(rng);
    }
    if (kind == SampleKind::attribute) {
        s.attributes = std::vector<int>(cfg.num_attributes);
        for (auto& a : *s.attributes) a = rng() % 2 ? 1 : 0;
    }
    return s;
}

// The frozen configuration of the overfit demonstration.
TrainConfig overfit_config(Variant variant) {
    TrainConfig cfg;
    cfg.variant = variant;
    cfg.learning_rate = 0.01;
    cfg.momentum = 0.9;
    cfg.epochs = 200;
    cfg.batch_size = 8;
    cfg.rng_seed = 7;
    cfg.model.channel_scale = 1.0 / 8.0;
    cfg.model.num_attributes = 4;
    cfg.model.num_landmarks = 5;
    cfg.model.input_sides = {32, 16, 8};
    cfg.model.in_channels = 1;
    cfg.thresholds = {0.0, 0.0};
    cfg.weighting = Weighting::fixed_uniform;
    cfg.threads = 2;
    cfg.lr_decay_factor = 0.1;
    cfg.lr_decay_at = {0.7, 0.9};
    return cfg;
}

struct OverfitRuns {
    TrainResult mcfa;
    TrainResult fac;
    double seconds = 0.0;
};

const OverfitRuns& overfit_runs() {
    static OverfitRuns runs = [] {
        const fs::path dir = fs::path(::testing::TempDir()) / "acceptance_overfit";
        fs::remove_all(dir);
        SynthOptions opt;
        opt.count = 32;
        opt.seed = 42;
        opt.num_attributes = 4;
        opt.image_side = 32;
        DatasetManifest manifest = generate_synthetic_dataset(opt, dir);

        OverfitRuns r;
        const auto t0 = std::chrono::steady_clock::now();
        r.mcfa = train(overfit_config(Variant::MCFA), manifest, dir / "mcfa");
        r.fac = train(overfit_config(Variant::MCFA_FAC), manifest, dir / "fac");
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return r;
    }();
    return runs;
}

}  // namespace

TEST_F(Acceptance, GradientIntegrity) {
    const auto t0 = std::chrono::steady_clock::now();
    GradcheckReport rep = gradcheck(gradcheck_default_config(), 12345);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << rep.to_string();
    EXPECT_EQ(rep.groups.size(), 18u);
    EXPECT_GE(rep.total_checked, 50);
    for (const auto& g : rep.groups) EXPECT_LT(g.max_rel_err, 1e-3) << g.name;
    EXPECT_TRUE(rep.ok);
    EXPECT_LT(secs, 300.0);
    report("gradient-integrity");
}

TEST_F(Acceptance, JointLossIdentity) {
    std::mt19937_64 rng(101);
    ModelConfig cfg = tiny_config();
    McfaModel model(cfg, 11);
    const SampleKind kinds[4] = {SampleKind::nonface, SampleKind::face, SampleKind::landmark,
                                 SampleKind::attribute};
    for (int i = 0; i < 100; ++i) {
        Sample s = random_sample(cfg, kinds[i % 4], rng);
        Graph g;
        FullOutputs outs = forward_full(model, g, s.image);
        LossBreakdown bd = joint_loss(g, outs, s);
        double sum = 0.0;
        for (int j = 0; j < 3; ++j)
            for (int t = 0; t < 4; ++t) sum += bd.terms[j][t];
        ASSERT_NEAR(bd.joint_value, sum, 1e-9) << "sample " << i;
    }
    report("joint-loss-identity");
}

TEST_F(Acceptance, DynamicWeightSimplex) {
    std::mt19937_64 rng(202);
    ModelConfig cfg = tiny_config(5);
    std::uniform_real_distribution<double> jitter(-0.2, 0.2);
    int pairs = 0;
    for (int mi = 0; mi < 50; ++mi) {
        McfaModel model(cfg, 1000 + mi);
        for (auto& p : model.named_params())
            if (p.is_dyn_head)
                for (auto& v : p.tensor.values()) v = jitter(rng);
        for (int ii = 0; ii < 20; ++ii) {
            Graph g;
            FullOutputs outs = forward_full(model, g, random_image(cfg, rng));
            for (const StageOutputs* so : {&outs.s, &outs.m, &outs.l}) {
                double sum = 0.0;
                for (int q = 0; q < cfg.num_attributes; ++q) {
                    ASSERT_GT(so->dyn_weights.at(q), 0.0);
                    sum += so->dyn_weights.at(q);
                }
                ASSERT_NEAR(sum, 1.0, 1e-6);
            }
            ++pairs;
        }
    }
    EXPECT_EQ(pairs, 1000);

    // zero head parameters -> uniform weights to 1e-12
    McfaModel zero_model(cfg, 3);
    for (auto& p : zero_model.named_params())
        if (p.is_dyn_head)
            for (auto& v : p.tensor.values()) v = 0.0;
    Graph g;
    FullOutputs outs = forward_full(zero_model, g, random_image(cfg, rng));
    for (const StageOutputs* so : {&outs.s, &outs.m, &outs.l})
        for (int q = 0; q < cfg.num_attributes; ++q)
            ASSERT_NEAR(so->dyn_weights.at(q), 1.0 / cfg.num_attributes, 1e-12);
    report("dynamic-weight-simplex");
}

TEST_F(Acceptance, ConvexCombinationBound) {
    std::mt19937_64 rng(303);
    for (int i = 0; i < 1000; ++i) {
        const int d = 2 + static_cast<int>(rng() % 7);
        auto logits = oracle::random_vector(rng, 2 * d, -4.0, 4.0);
        std::vector<int> labels(d);
        for (auto& l : labels) l = rng() % 2;
        Graph g;
        Tensor mu = g.softmax(Tensor({d}, oracle::random_vector(rng, d, -3.0, 3.0)));
        Tensor lv = attr_loss_vector(g, Tensor({2 * d}, logits), labels);
        double lo = lv.at(0), hi = lv.at(0);
        for (int q = 1; q < d; ++q) {
            lo = std::min(lo, lv.at(q));
            hi = std::max(hi, lv.at(q));
        }
        const double loss = attr_loss(g, Tensor({2 * d}, logits), labels, mu).value();
        ASSERT_GE(loss, lo - 1e-9);
        ASSERT_LE(loss, hi + 1e-9);
    }
    report("convex-combination-bound");
}

TEST_F(Acceptance, ShapeLedger) {
    ModelConfig cfg;
    cfg.channel_scale = 1.0;
    cfg.num_attributes = 4;
    cfg.num_landmarks = 5;
    cfg.input_sides = {32, 16, 8};
    cfg.in_channels = 1;
    EXPECT_EQ(cfg.shared_s_len(), 256);
    EXPECT_EQ(cfg.shared_m_len(), 1280);
    EXPECT_EQ(cfg.shared_l_len(), 2304);

    McfaModel model(cfg, 5);
    std::mt19937_64 rng(404);
    Graph g;
    Pyramid p = build_pyramid(g, cfg, random_image(cfg, rng));
    auto [shared_s, out_s] = forward_snet(model, g, p.small);
    EXPECT_EQ(shared_s.shape(), (std::vector<int>{256, 1, 1}));
    auto [shared_m, out_m] = forward_mnet(model, g, p.medium, shared_s);
    EXPECT_EQ(shared_m.shape(), (std::vector<int>{1280}));
    EXPECT_EQ(model.mnet.fc_embed.weight.dim(1), 1024);  // 1024 + 256
    auto [shared_l, out_l] = forward_lnet(model, g, p.large, shared_m);
    EXPECT_EQ(shared_l.shape(), (std::vector<int>{2304}));  // 1024 + 1280
    report("shape-ledger");
}

TEST_F(Acceptance, CascadeMonotonicity) {
    ModelConfig cfg = tiny_config();
    McfaModel model(cfg, 31);
    std::mt19937_64 rng(505);
    std::vector<Tensor> inputs;
    for (int i = 0; i < 200; ++i) inputs.push_back(random_image(cfg, rng));

    const double grid[5] = {0.0, 0.25, 0.5, 0.75, 1.0};
    // accepted sets per grid point
    std::set<int> accepted[5][5];
    for (int a = 0; a < 5; ++a)
        for (int b = 0; b < 5; ++b)
            for (int i = 0; i < 200; ++i) {
                PredictionResult r = predict(model, inputs[i], {grid[a], grid[b]});
                if (r.status == PredictionStatus::accepted) accepted[a][b].insert(i);
            }
    // nested under componentwise threshold increase
    for (int a = 0; a < 5; ++a)
        for (int b = 0; b < 5; ++b)
            for (int a2 = a; a2 < 5; ++a2)
                for (int b2 = b; b2 < 5; ++b2)
                    for (int idx : accepted[a2][b2])
                        ASSERT_TRUE(accepted[a][b].count(idx))
                            << "ts=" << grid[a2] << " tm=" << grid[b2] << " not nested in ts="
                            << grid[a] << " tm=" << grid[b];
    // the grid does separate: vacuous thresholds accept all, impossible none
    EXPECT_EQ(accepted[0][0].size(), 200u);
    EXPECT_TRUE(accepted[4][4].empty());

    // rejected_at_s performs exactly the pyramid + S_Net arithmetic
    Graph ref;
    Pyramid p = build_pyramid(ref, cfg, inputs[0]);
    forward_snet(model, ref, p.small);
    PredictionResult rej = predict(model, inputs[0], {1.0, 0.0});
    ASSERT_EQ(rej.status, PredictionStatus::rejected_at_s);
    EXPECT_EQ(rej.graph_ops, ref.scalar_ops());
    report("cascade-monotonicity");
}

TEST_F(Acceptance, OracleEquivalence) {
    std::mt19937_64 rng(606);
    // conv2d
    for (int i = 0; i < 1000; ++i) {
        const int cin = 1 + static_cast<int>(rng() % 3), cout = 1 + static_cast<int>(rng() % 3);
        const int h = 3 + static_cast<int>(rng() % 6), w = 3 + static_cast<int>(rng() % 6);
        const int k = 1 + static_cast<int>(rng() % 3);
        const int stride = 1 + static_cast<int>(rng() % 2);
        const int pad = static_cast<int>(rng() % 2);
        if (k > h + 2 * pad || k > w + 2 * pad) continue;
        auto xv = oracle::random_vector(rng, static_cast<std::size_t>(cin) * h * w);
        auto kv = oracle::random_vector(rng, static_cast<std::size_t>(cout) * cin * k * k);
        auto bv = oracle::random_vector(rng, cout);
        Graph g;
        Tensor y = g.conv2d(Tensor({cin, h, w}, xv), Tensor({cout, cin, k, k}, kv),
                            Tensor({cout}, bv), stride, pad);
        int ho, wo;
        auto ref = oracle::conv2d(xv, cin, h, w, kv, cout, k, k, bv, stride, pad, ho, wo);
        ASSERT_EQ(y.size(), ref.size());
        for (std::size_t j = 0; j < ref.size(); ++j)
            ASSERT_NEAR(y.data()[j], ref[j], 1e-10) << "conv instance " << i;
    }
    // pooling
    for (int i = 0; i < 1000; ++i) {
        const int c = 1 + static_cast<int>(rng() % 3);
        const int h = 4 + static_cast<int>(rng() % 6), w = 4 + static_cast<int>(rng() % 6);
        const int win = 2 + static_cast<int>(rng() % 2);
        const int stride = 1 + static_cast<int>(rng() % 2);
        auto xv = oracle::random_vector(rng, static_cast<std::size_t>(c) * h * w);
        Graph g;
        int ho, wo;
        Tensor ya = g.avg_pool2d(Tensor({c, h, w}, xv), win, stride);
        auto ra = oracle::avg_pool2d(xv, c, h, w, win, stride, ho, wo);
        for (std::size_t j = 0; j < ra.size(); ++j) ASSERT_NEAR(ya.data()[j], ra[j], 1e-10);
        Tensor ym = g.max_pool2d(Tensor({c, h, w}, xv), win, stride);
        auto rm = oracle::max_pool2d(xv, c, h, w, win, stride, ho, wo);
        for (std::size_t j = 0; j < rm.size(); ++j) ASSERT_NEAR(ym.data()[j], rm[j], 1e-10);
    }
    // fully connected
    for (int i = 0; i < 1000; ++i) {
        const int din = 1 + static_cast<int>(rng() % 16), dout = 1 + static_cast<int>(rng() % 16);
        auto xv = oracle::random_vector(rng, din);
        auto wv = oracle::random_vector(rng, static_cast<std::size_t>(din) * dout);
        auto bv = oracle::random_vector(rng, dout);
        Graph g;
        Tensor y = g.fully_connected(Tensor({din}, xv), Tensor({din, dout}, wv), Tensor({dout}, bv));
        auto ref = oracle::fully_connected(xv, wv, din, dout, bv);
        for (int j = 0; j < dout; ++j) ASSERT_NEAR(y.at(j), ref[j], 1e-10);
    }
    // softmax
    for (int i = 0; i < 1000; ++i) {
        const int d = 1 + static_cast<int>(rng() % 12);
        auto v = oracle::random_vector(rng, d, -20.0, 20.0);
        Graph g;
        Tensor y = g.softmax(Tensor({d}, v));
        auto ref = oracle::softmax(v);
        for (int j = 0; j < d; ++j) ASSERT_NEAR(y.at(j), ref[j], 1e-10);
    }
    // IoU versus pixel rasterization
    for (int i = 0; i < 1000; ++i) {
        const int al = static_cast<int>(rng() % 25), at = static_cast<int>(rng() % 25);
        const int ah = 1 + static_cast<int>(rng() % 18), aw = 1 + static_cast<int>(rng() % 18);
        const int bl = static_cast<int>(rng() % 25), bt = static_cast<int>(rng() % 25);
        const int bh = 1 + static_cast<int>(rng() % 18), bw = 1 + static_cast<int>(rng() % 18);
        Box a{static_cast<double>(al), static_cast<double>(at), static_cast<double>(ah),
              static_cast<double>(aw)};
        Box b{static_cast<double>(bl), static_cast<double>(bt), static_cast<double>(bh),
              static_cast<double>(bw)};
        ASSERT_NEAR(compute_iou(a, b), oracle::iou_rasterized(al, at, ah, aw, bl, bt, bh, bw),
                    1e-6);
    }
    report("oracle-equivalence");
}

TEST_F(Acceptance, OverfitSanity) {
    const OverfitRuns& runs = overfit_runs();
    std::cout << "overfit wall time: " << runs.seconds << " s\n";
    std::cout << "MCFA      avg attribute accuracy: " << runs.mcfa.metrics.average_accuracy << '\n';
    std::cout << "MCFA_FAC  avg attribute accuracy: " << runs.fac.metrics.average_accuracy << '\n';
    EXPECT_GE(runs.mcfa.metrics.average_accuracy, 0.95);
    EXPECT_GE(runs.fac.metrics.average_accuracy, 0.95);
    EXPECT_LT(runs.seconds, 900.0);
    // the joint loss must actually have decreased over training
    const auto& trace = runs.mcfa.metrics.loss_trace;
    ASSERT_EQ(trace.size(), 200u);
    EXPECT_LT(trace.back().mean_joint, trace.front().mean_joint);
    report("overfit-sanity");
}

TEST_F(Acceptance, MaskingCorrectness) {
    // box/landmark heads of the MCFA_FAC run must be bit-identical to their
    // initialization: zero gradient at every step of all 200 epochs
    const OverfitRuns& runs = overfit_runs();
    TrainConfig cfg = overfit_config(Variant::MCFA_FAC);
    McfaModel init(cfg.model, cfg.rng_seed);
    auto pi = init.named_params();
    auto pt = const_cast<McfaModel&>(runs.fac.model).named_params();
    ASSERT_EQ(pi.size(), pt.size());
    int compared = 0;
    for (std::size_t i = 0; i < pi.size(); ++i) {
        const ParamGroup gr = pt[i].group;
        const bool aux_head =
            gr == ParamGroup::snet_head_box || gr == ParamGroup::mnet_head_box ||
            gr == ParamGroup::lnet_head_box || gr == ParamGroup::snet_head_landmark ||
            gr == ParamGroup::mnet_head_landmark || gr == ParamGroup::lnet_head_landmark;
        if (!aux_head) continue;
        EXPECT_EQ(pi[i].tensor.values(), pt[i].tensor.values()) << pt[i].name;
        ++compared;
    }
    EXPECT_EQ(compared, 12);  // 6 heads x (weight, bias)
    report("masking-correctness");
}

TEST_F(Acceptance, Determinism) {
    const fs::path dir = fs::path(::testing::TempDir()) / "acceptance_determinism";
    fs::remove_all(dir);
    SynthOptions opt;
    opt.count = 12;
    opt.seed = 9;
    opt.num_attributes = 2;
    opt.image_side = 32;
    DatasetManifest manifest = generate_synthetic_dataset(opt, dir);

    TrainConfig cfg;
    cfg.variant = Variant::MCFA;
    cfg.epochs = 3;
    cfg.batch_size = 4;
    cfg.rng_seed = 13;
    cfg.model = tiny_config(2);
    cfg.threads = 2;

    train(cfg, manifest, dir / "a");
    train(cfg, manifest, dir / "b");
    auto bytes = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream os;
        os << in.rdbuf();
        return os.str();
    };
    const std::string ck_a = bytes(dir / "a" / "model_final.ckpt");
    EXPECT_FALSE(ck_a.empty());
    EXPECT_EQ(ck_a, bytes(dir / "b" / "model_final.ckpt"));
    EXPECT_EQ(bytes(dir / "a" / "metrics.txt"), bytes(dir / "b" / "metrics.txt"));
    report("determinism");
}
