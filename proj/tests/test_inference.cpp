#include <cmath>

#include <gtest/gtest.h>

#include "primo/dpgmm.hpp"
#include "primo/inference.hpp"
#include "primo/training.hpp"

using namespace primo;

TEST(PredictionSet, TwoOppositeDrawsGiveHalf)
{
    const PredictionSet p = prediction_from_logits(1, Scenario::missing, 2, 2, {40.0, -40.0, -40.0, 40.0});
    EXPECT_NEAR(p.mean_prob[0], 0.5, 1e-15);
    EXPECT_NEAR(impact_v(p), 0.5, 1e-15);
}

TEST(PredictionSet, IdenticalDrawsGiveZero)
{
    const PredictionSet p = prediction_from_logits(1, Scenario::missing, 3, 2, {0.3, 1.0, 0.3, 1.0, 0.3, 1.0});
    EXPECT_NEAR(impact_v(p), 0.0, 1e-15);
}

TEST(PredictionSet, ContractErrors)
{
    EXPECT_THROW(prediction_from_logits(1, Scenario::missing, 2, 2, {1.0, 2.0, 3.0}), DimensionError);
    const PredictionSet one = prediction_from_logits(1, Scenario::missing, 1, 2, {1.0, 2.0});
    EXPECT_THROW(impact_v(one), ContractError);
}

TEST(PredictionSet, ImpactBoundedOnRandomLogits)
{
    Rng rng(3);
    for (int t = 0; t < 200; ++t) {
        const std::size_t k = 2 + rng.below(20), c = 2 + rng.below(5);
        std::vector<double> logits(k * c);
        for (double& v : logits)
            v = rng.normal(0.0, 5.0);
        const PredictionSet p = prediction_from_logits(0, Scenario::missing, k, c, logits);
        const double v = impact_v(p);
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
        for (std::size_t j = 0; j < c; ++j) {
            double col = 0.0;
            for (std::size_t s = 0; s < k; ++s)
                col += p.probs[s * c + j];
            EXPECT_NEAR(col / static_cast<double>(k), p.mean_prob[j], 1e-12);
        }
    }
}

TEST(Ecdf, SortedWithUnitTop)
{
    const auto e = ecdf({0.3, 0.1, 0.2, 0.2});
    ASSERT_EQ(e.size(), 4u);
    EXPECT_EQ(e[0].first, 0.1);
    EXPECT_EQ(e[3].first, 0.3);
    EXPECT_DOUBLE_EQ(e[0].second, 0.25);
    EXPECT_DOUBLE_EQ(e[3].second, 1.0);
}

TEST(PredictionSeed, DependsOnIdAndScenarioOnly)
{
    EXPECT_EQ(prediction_seed(1, 5, Scenario::missing), prediction_seed(1, 5, Scenario::missing));
    EXPECT_NE(prediction_seed(1, 5, Scenario::missing), prediction_seed(1, 5, Scenario::complete));
    EXPECT_NE(prediction_seed(1, 5, Scenario::missing), prediction_seed(1, 6, Scenario::missing));
    EXPECT_NE(prediction_seed(1, 5, Scenario::missing), prediction_seed(2, 5, Scenario::missing));
}

/// A model trained briefly on XOR, shared by the behavioural tests below.
class TrainedXor : public ::testing::Test {
protected:
    static void SetUpTestSuite()
    {
        XorConfig x;
        x.n_samples = 12000;
        x.seed = 21;
        const auto parts = split(generate_xor(x), {0.7, 0.3}, 21);
        const auto train = apply_missingness(parts.train, 0.5, 22).examples;
        model_ = new PrimoModel(ModelConfig{}, 21);
        TrainConfig tc;
        tc.epochs = 15;
        tc.seed = 21;
        train_primo(*model_, train, tc);
        test_ = new std::vector<Example>(parts.test.examples.begin(), parts.test.examples.begin() + 400);
    }
    static void TearDownTestSuite()
    {
        delete model_;
        delete test_;
    }
    static PrimoModel* model_;
    static std::vector<Example>* test_;
};

PrimoModel* TrainedXor::model_ = nullptr;
std::vector<Example>* TrainedXor::test_ = nullptr;

TEST_F(TrainedXor, McPredictIsReproducibleAndOrderFree)
{
    const Example& e = test_->at(3);
    const auto a = mc_predict(*model_, e, Scenario::missing, 200, 99);
    const auto b = mc_predict(*model_, e, Scenario::missing, 200, 99);
    EXPECT_EQ(a.logits, b.logits);
    (void)mc_predict(*model_, test_->at(7), Scenario::complete, 50, 1); // unrelated call in between
    EXPECT_EQ(mc_predict(*model_, e, Scenario::missing, 200, 99).logits, a.logits);
    EXPECT_NE(mc_predict(*model_, e, Scenario::missing, 200, 100).logits, a.logits);
    EXPECT_EQ(a.samples, 200u);
    for (std::size_t k = 0; k < a.samples; ++k) {
        const ProbVector row = a.prob_row(k);
        EXPECT_NEAR(row[0] + row[1], 1.0, 1e-12);
    }
}

TEST_F(TrainedXor, McPredictContracts)
{
    Example e = test_->at(0);
    EXPECT_THROW(mc_predict(*model_, e, Scenario::missing, 0, 1), ContractError);
    e.x_m.reset();
    EXPECT_THROW(mc_predict(*model_, e, Scenario::complete, 10, 1), ContractError);
    e.x_o = {0.1, 0.2};
    EXPECT_THROW(mc_predict(*model_, e, Scenario::missing, 10, 1), DimensionError);
}

TEST_F(TrainedXor, CompletePriorReducesMeanImpact)
{
    double vm = 0.0, vc = 0.0;
    for (const auto& e : *test_) {
        const auto pm = mc_predict(*model_, e, Scenario::missing, 200, prediction_seed(0, e.id, Scenario::missing));
        const auto pc = mc_predict(*model_, e, Scenario::complete, 200, prediction_seed(0, e.id, Scenario::complete));
        const ImpactReport r = impact_report(pm, &pc);
        vm += r.v_missing;
        vc += *r.v_complete;
        EXPECT_NEAR(*r.gap(), r.v_missing - *r.v_complete, 1e-15);
    }
    EXPECT_LT(vc, vm);
}

TEST_F(TrainedXor, PositiveXoHasAStableLabel)
{
    // For x_o > 0 only the (1, -1) component is plausible, so about Phi(-2) of the
    // prior draws fall on the x_m > 0 side and flip the per-draw label.
    std::size_t agree = 0, total = 0;
    double minority = 0.0;
    for (const auto& e : *test_) {
        if (e.x_o[0] <= 0.0)
            continue;
        const auto p = mc_predict(*model_, e, Scenario::missing, 200, prediction_seed(0, e.id, Scenario::missing));
        std::size_t ones = 0;
        for (std::size_t k = 0; k < p.samples; ++k)
            ones += p.prob_row(k).argmax() == 1;
        agree += p.mean_prob.argmax() == 1;
        minority += static_cast<double>(p.samples - ones) / static_cast<double>(p.samples);
        ++total;
    }
    ASSERT_GT(total, 50u);
    EXPECT_GE(static_cast<double>(agree) / static_cast<double>(total), 0.95);
    EXPECT_LE(minority / static_cast<double>(total), 0.05);
}

TEST_F(TrainedXor, ClustersAreNormalisedAndReflectAmbiguity)
{
    DpgmmConfig cfg;
    for (const auto& e : *test_) {
        const auto p = mc_predict(*model_, e, Scenario::missing, 200, prediction_seed(0, e.id, Scenario::missing));
        cfg.seed = e.id;
        const auto clusters = cluster_logits(p, cfg);
        ASSERT_FALSE(clusters.empty());
        double total = 0.0;
        for (std::size_t i = 0; i < clusters.size(); ++i) {
            total += clusters[i].weight;
            if (i > 0) {
                EXPECT_GE(clusters[i - 1].weight, clusters[i].weight);
            }
        }
        EXPECT_NEAR(total, 1.0, 1e-12);
    }
    const auto few = prediction_from_logits(0, Scenario::missing, 5, 2, std::vector<double>(10, 0.0));
    EXPECT_THROW(cluster_logits(few, cfg), ContractError);
}

TEST_F(TrainedXor, ImpactReportChecksPairing)
{
    const Example& a = test_->at(0);
    const Example& b = test_->at(1);
    const auto pm = mc_predict(*model_, a, Scenario::missing, 20, 1);
    const auto pc = mc_predict(*model_, b, Scenario::complete, 20, 1);
    EXPECT_THROW(impact_report(pm, &pc), ContractError);
    EXPECT_THROW(impact_report(pc), ContractError);
    EXPECT_FALSE(impact_report(pm).gap().has_value());
}

TEST_F(TrainedXor, BatchedMonitorAgreesWithPerExamplePredictions)
{
    Rng rng(5);
    const std::vector<Example> few(test_->begin(), test_->begin() + 50);
    const auto batched = mc_mean_probs(*model_, few, Scenario::complete, 400, rng);
    for (std::size_t i = 0; i < few.size(); ++i) {
        const auto single = mc_predict(*model_, few[i], Scenario::complete, 400, i);
        EXPECT_NEAR(batched[i][1], single.mean_prob[1], 0.1);
    }
}
