#include <gtest/gtest.h>

#include <cmath>

#include "lexnet/lproto.hpp"
#include "testutil.hpp"

using namespace lexnet;

namespace {

PrototypeSet make_set(int depth, int classes, Rng& rng) {
    PrototypeSet ps(depth, classes);
    ps.init_one_per_class(rng);
    return ps;
}

// score of prototype j in double precision: min over cells of the squared
// distance, pushed through the similarity activation
double oracle_score(const Tensor& latent, const std::vector<float>& vec, double eps = 1e-4) {
    const int dd = latent.shape[0], hh = latent.shape[1], ww = latent.shape[2];
    double best = -1.0;
    for (int h = 0; h < hh; ++h)
        for (int w = 0; w < ww; ++w) {
            double d2 = 0.0;
            for (int d = 0; d < dd; ++d) {
                const double diff = static_cast<double>(latent.at(d, h, w)) -
                                    vec[static_cast<std::size_t>(d)];
                d2 += diff * diff;
            }
            if (best < 0.0 || d2 < best) best = d2;
        }
    return std::log((best + 1.0) / (best + eps));
}

}  // namespace

TEST(SimilarityTest, ClosedFormValues) {
    EXPECT_NEAR(similarity(0.0), std::log(1e4), 1e-9);
    EXPECT_NEAR(similarity(0.0), 9.2103, 1e-4);
    EXPECT_NEAR(similarity(1.0), std::log(2.0 / (1.0 + 1e-4)), 1e-12);
    EXPECT_NEAR(similarity(1.0), 0.6930, 1e-4);
    EXPECT_LT(similarity(1e12), 1e-6);  // limit toward 0+
    EXPECT_THROW(similarity(-0.1), Error);
}

TEST(SimilarityTest, StrictlyDecreasingAndPositive) {
    double prev = similarity(0.0);
    for (double d2 : {1e-6, 1e-3, 0.1, 1.0, 10.0, 1e3, 1e6}) {
        const double s = similarity(d2);
        EXPECT_GT(s, 0.0);
        EXPECT_LT(s, prev);
        prev = s;
    }
}

TEST(DistanceMapTest, ZeroAtMatchingPatch) {
    Rng rng(3);
    Tensor latent = testutil::random_tensor({32, 20, 2}, rng, 0.0f, 1.0f);
    Prototype p(0, 0, 32);
    for (int d = 0; d < 32; ++d) p.vec()[static_cast<std::size_t>(d)] = latent.at(d, 7, 1);
    Tensor map = distance_map(latent, p);
    EXPECT_EQ(map.shape, (Shape{20, 2}));
    EXPECT_EQ(map.data[static_cast<std::size_t>(7 * 2 + 1)], 0.0f);
}

TEST(DistanceMapTest, AllZerosGiveZeroMap) {
    Tensor latent = Tensor::zeros({8, 5, 2});
    Prototype p(0, 0, 8);
    Tensor map = distance_map(latent, p);
    for (float v : map.data) EXPECT_EQ(v, 0.0f);
}

TEST(DistanceMapTest, MatchesNaiveOracleExactly) {
    Rng rng(5);
    Tensor latent = testutil::random_tensor({16, 10, 2}, rng);
    Prototype p(0, 0, 16);
    for (float& v : p.vec()) v = rng.uniform(-1.0f, 1.0f);
    Tensor map = distance_map(latent, p);
    Tensor ref = testutil::naive_distance_map(latent, p.vec());
    EXPECT_EQ(map.data, ref.data);  // same accumulation order: exact
}

TEST(DistanceMapTest, DepthMismatchThrows) {
    Tensor latent(Shape{8, 4, 2});
    Prototype p(0, 0, 16);
    EXPECT_THROW(distance_map(latent, p), ShapeError);
}

TEST(DistanceMapTest, LargerPatchSizesSupported) {
    Rng rng(7);
    Tensor latent = testutil::random_tensor({4, 6, 2}, rng);
    std::vector<float> vec(4 * 2 * 1);
    for (float& v : vec) v = rng.uniform(-1.0f, 1.0f);
    Tensor map = patch_distance_map(latent, vec, 2, 1);
    EXPECT_EQ(map.shape, (Shape{5, 2}));
    // (2,1) patch distance at (h,w) = per-cell distances summed over the window
    double expect = 0.0;
    for (int d = 0; d < 4; ++d)
        for (int dh = 0; dh < 2; ++dh) {
            const double diff = static_cast<double>(latent.at(d, 3 + dh, 1)) -
                                vec[static_cast<std::size_t>(d * 2 + dh)];
            expect += diff * diff;
        }
    EXPECT_NEAR(map.data[static_cast<std::size_t>(3 * 2 + 1)], expect, 1e-6);
}

TEST(LprotoForwardTest, PlantedPatchScoresMax) {
    Rng rng(11);
    Tensor latent = testutil::random_tensor({32, 20, 2}, rng, 0.0f, 1.0f);
    PrototypeSet ps = make_set(32, 3, rng);
    for (int d = 0; d < 32; ++d)
        ps.protos[1].vec()[static_cast<std::size_t>(d)] = latent.at(d, 12, 0);
    LprotoOut out = lproto_forward(latent, ps);
    EXPECT_EQ(out.scores.size(), 3u);
    EXPECT_FLOAT_EQ(out.scores[1], static_cast<float>(std::log(1e4)));
    EXPECT_EQ(out.acts[1].t, 12);
    EXPECT_EQ(out.acts[1].v, 0);
}

TEST(LprotoForwardTest, ScoreVectorLengthMatchesSetSize) {
    Rng rng(13);
    Tensor latent = testutil::random_tensor({32, 20, 2}, rng, 0.0f, 1.0f);
    PrototypeSet ps(32, 10);
    ps.init_one_per_class(rng);
    for (int extra = 0; extra < 330; ++extra) {
        Prototype& p = ps.add(extra % 10);
        for (float& v : p.vec()) v = rng.unit();
    }
    EXPECT_EQ(ps.size(), 340);
    LprotoOut out = lproto_forward(latent, ps);
    EXPECT_EQ(out.scores.size(), 340u);
}

TEST(LprotoForwardTest, EmptySetThrows) {
    Tensor latent(Shape{32, 20, 2});
    PrototypeSet ps(32, 0);
    EXPECT_THROW(lproto_forward(latent, ps), StateError);
}

TEST(LprotoForwardTest, MaxPoolDominance) {
    Rng rng(17);
    Tensor latent = testutil::random_tensor({16, 20, 2}, rng, 0.0f, 1.0f);
    PrototypeSet ps = make_set(16, 5, rng);
    LprotoOut out = lproto_forward(latent, ps);
    for (int j = 0; j < ps.size(); ++j) {
        Tensor d2map = distance_map(latent, ps.protos[static_cast<std::size_t>(j)]);
        for (float d2 : d2map.data)
            EXPECT_GE(out.scores[static_cast<std::size_t>(j)] + 1e-6,
                      similarity(d2));
    }
}

TEST(LprotoForwardTest, AgreesWithDoubleOracle) {
    Rng rng(19);
    Tensor latent = testutil::random_tensor({32, 20, 2}, rng, 0.0f, 1.0f);
    PrototypeSet ps = make_set(32, 8, rng);
    LprotoOut out = lproto_forward(latent, ps);
    for (int j = 0; j < ps.size(); ++j)
        EXPECT_NEAR(out.scores[static_cast<std::size_t>(j)],
                    oracle_score(latent, ps.protos[static_cast<std::size_t>(j)].vec()), 1e-4);
}

TEST(LprotoGradientTest, PrototypeAndLatentGradsMatchFiniteDifferences) {
    Rng rng(23);
    Tensor latent = testutil::random_tensor({8, 6, 2}, rng, 0.0f, 1.0f);
    PrototypeSet ps = make_set(8, 4, rng);
    LprotoOut out = lproto_forward(latent, ps);
    testutil::WeightedLoss loss(out.scores.size(), rng);

    Tensor dlatent;
    lproto_backward(latent, ps, out, loss.w, dlatent);

    auto f = [&]() {
        double acc = 0.0;
        for (int j = 0; j < ps.size(); ++j)
            acc += static_cast<double>(loss.w[static_cast<std::size_t>(j)]) *
                   oracle_score(latent, ps.protos[static_cast<std::size_t>(j)].vec());
        return acc;
    };
    for (int j = 0; j < ps.size(); ++j) {
        Prototype& p = ps.protos[static_cast<std::size_t>(j)];
        ASSERT_TRUE(p.param.tensor.has_grad());
        EXPECT_LT(finite_diff_max_rel_error(f, p.param.tensor, p.param.tensor.grad, 1e-4f),
                  1e-3)
            << "prototype " << j;
    }
    EXPECT_LT(finite_diff_max_rel_error(f, latent, dlatent.data, 1e-4f), 1e-3);
}

TEST(LprotoGradientTest, LatentOnlyVariantMatches) {
    Rng rng(29);
    Tensor latent = testutil::random_tensor({8, 6, 2}, rng, 0.0f, 1.0f);
    PrototypeSet ps = make_set(8, 4, rng);
    LprotoOut out = lproto_forward(latent, ps);
    testutil::WeightedLoss loss(out.scores.size(), rng);
    Tensor d1, d2;
    lproto_backward(latent, ps, out, loss.w, d1);
    lproto_backward_latent(latent, ps, out, loss.w, d2);
    EXPECT_EQ(d1.data, d2.data);
}

TEST(ClassifyTest, FreshInitPrefersMatchingClass) {
    Rng rng(31);
    PrototypeSet ps = make_set(16, 5, rng);
    LastLayer head(5, ps);
    // one-hot score at the class-2 prototype: 1 * s beats -0.5 * s elsewhere
    std::vector<float> scores(5, 0.0f);
    scores[2] = 4.0f;
    std::vector<float> logits = classify_logits(scores, head);
    const int pred = argmax_class(logits);
    EXPECT_EQ(pred, 2);
    EXPECT_FLOAT_EQ(logits[2], 4.0f);
    EXPECT_FLOAT_EQ(logits[0], -2.0f);
}

TEST(ClassifyTest, ZeroScoresTieBreakToClassZero) {
    Rng rng(37);
    PrototypeSet ps = make_set(8, 4, rng);
    LastLayer head(4, ps);
    std::vector<float> scores(4, 0.0f);
    std::vector<float> logits = classify_logits(scores, head);
    for (float v : logits) EXPECT_EQ(v, 0.0f);
    EXPECT_EQ(argmax_class(logits), 0);
}

TEST(ClassifyTest, Table3HeadDimensions) {
    PrototypeSet ps(32, 200);
    for (int j = 0; j < 340; ++j) {
        Prototype& p = ps.add(j % 200);
        (void)p;
    }
    LastLayer head(200, ps);
    EXPECT_EQ(head.weight.tensor.numel(), 68000);
}

TEST(ClassifyTest, LogitsLinearInScores) {
    Rng rng(41);
    PrototypeSet ps = make_set(8, 6, rng);
    LastLayer head(6, ps);
    std::vector<float> s(static_cast<std::size_t>(ps.size()));
    for (float& v : s) v = rng.uniform(0.0f, 5.0f);
    std::vector<float> s2(s);
    for (float& v : s2) v *= 3.0f;
    std::vector<float> l1 = classify_logits(s, head);
    std::vector<float> l2 = classify_logits(s2, head);
    for (std::size_t k = 0; k < l1.size(); ++k) EXPECT_NEAR(l2[k], 3.0f * l1[k], 1e-4f);
    EXPECT_EQ(argmax_class(l1), argmax_class(l2));
}

TEST(ParamCountTest, PrototypeSetCounts) {
    PrototypeSet ps(32, 200);
    EXPECT_EQ(ps.param_count(), 0);
    for (int j = 0; j < 340; ++j) ps.add(j % 200);
    EXPECT_EQ(ps.param_count(), 10880);  // m * D
    PrototypeSet ps2(32, 200);
    for (int j = 0; j < 400; ++j) ps2.add(j % 200);
    EXPECT_EQ(ps2.param_count(), 12800);
}

TEST(LastLayerTest, GrowColumnPreservesAndInitializes) {
    Rng rng(43);
    PrototypeSet ps = make_set(4, 3, rng);
    LastLayer head(3, ps);
    Tensor before = head.weight.tensor;
    head.grow_column(1);
    EXPECT_EQ(head.weight.tensor.shape, (Shape{3, 4}));
    for (int k = 0; k < 3; ++k) {
        for (int j = 0; j < 3; ++j)
            EXPECT_EQ(head.weight.tensor.data[static_cast<std::size_t>(k * 4 + j)],
                      before.data[static_cast<std::size_t>(k * 3 + j)]);
        EXPECT_EQ(head.weight.tensor.data[static_cast<std::size_t>(k * 4 + 3)],
                  k == 1 ? 1.0f : -0.5f);
    }
}

TEST(PrototypeSetTest, IdsStayUniqueAndStableAcrossGrowth) {
    Rng rng(47);
    PrototypeSet ps = make_set(4, 3, rng);
    const int id0 = ps.protos[0].id;
    Prototype& added = ps.add(2);
    EXPECT_EQ(added.id, 3);
    EXPECT_EQ(ps.protos[0].id, id0);
    std::set<int> ids;
    for (const Prototype& p : ps.protos) ids.insert(p.id);
    EXPECT_EQ(ids.size(), ps.protos.size());
    EXPECT_EQ(ps.class_count(2), 2);
}
