#include <algorithm>
#include <numeric>

#include <gtest/gtest.h>

#include "criteria.hpp"
#include "primo/dpgmm.hpp"

using namespace primo;
using namespace primo::support;

TEST(Dpgmm, RecoversSeparatedMixtures)
{
    const auto trials = dpgmm_recovery_trials(20, 5);
    ASSERT_EQ(trials.size(), 20u);
    for (std::size_t t = 0; t < trials.size(); ++t) {
        EXPECT_EQ(trials[t].found_components, trials[t].true_components) << "trial " << t;
        EXPECT_LE(trials[t].max_weight_error, 0.05) << "trial " << t;
    }
}

TEST(Dpgmm, RecoversUnequalWeights)
{
    Rng rng(2);
    std::vector<double> x;
    for (int i = 0; i < 240; ++i)
        x.push_back(rng.normal(-10.0, 1.0));
    for (int i = 0; i < 60; ++i)
        x.push_back(rng.normal(10.0, 1.0));
    const DpgmmFit fit = fit_dpgmm(x, 300, 1, {});
    std::vector<std::size_t> order(fit.soft_weights.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return fit.soft_weights[a] > fit.soft_weights[b]; });
    ASSERT_GE(order.size(), 2u);
    EXPECT_NEAR(fit.soft_weights[order[0]], 0.8, 0.01);
    EXPECT_NEAR(fit.soft_weights[order[1]], 0.2, 0.01);
    for (std::size_t k = 2; k < order.size(); ++k)
        EXPECT_LT(fit.soft_weights[order[k]], 0.01);
    EXPECT_NEAR(fit.means[order[0]][0], -10.0, 0.3);
    EXPECT_NEAR(fit.means[order[1]][0], 10.0, 0.3);
}

TEST(Dpgmm, ElboTraceIsNonDecreasing)
{
    Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> x;
        for (int i = 0; i < 200; ++i) {
            const double c = (i % 3) * 4.0;
            x.push_back(rng.normal(c, 1.0));
            x.push_back(rng.normal(-c, 1.5));
        }
        DpgmmConfig cfg;
        cfg.seed = static_cast<std::uint64_t>(trial);
        const DpgmmFit fit = fit_dpgmm(x, 200, 2, cfg);
        ASSERT_FALSE(fit.elbo_trace.empty());
        for (std::size_t i = 1; i < fit.elbo_trace.size(); ++i)
            EXPECT_GE(fit.elbo_trace[i], fit.elbo_trace[i - 1] - 1e-8 * std::abs(fit.elbo_trace[i - 1]))
                << "trial " << trial << ", iteration " << i;
        EXPECT_GE(fit.elbo, fit.elbo_trace.back() - 1e-9 * std::abs(fit.elbo));
    }
}

TEST(Dpgmm, IdenticalRowsFormOneCluster)
{
    const std::vector<double> x(40, 1.25);
    const DpgmmFit fit = fit_dpgmm(x, 20, 2, {});
    EXPECT_EQ(fit.components, 1u);
    EXPECT_EQ(fit.soft_weights, std::vector<double>{1.0});
    for (std::size_t a : fit.assignment)
        EXPECT_EQ(a, 0u);
}

TEST(Dpgmm, DeterministicGivenSeed)
{
    Rng rng(9);
    std::vector<double> x(300);
    for (double& v : x)
        v = rng.normal();
    DpgmmConfig cfg;
    cfg.seed = 4;
    const DpgmmFit a = fit_dpgmm(x, 150, 2, cfg), b = fit_dpgmm(x, 150, 2, cfg);
    EXPECT_EQ(a.assignment, b.assignment);
    EXPECT_EQ(a.elbo, b.elbo);
}

TEST(Dpgmm, InputValidation)
{
    EXPECT_THROW(fit_dpgmm({1.0, 2.0, 3.0}, 2, 2, {}), DimensionError);
    EXPECT_THROW(fit_dpgmm({1.0, std::nan("")}, 2, 1, {}), NonFiniteError);
    DpgmmConfig bad;
    bad.alpha = 0.0;
    EXPECT_THROW(fit_dpgmm({1.0, 2.0}, 2, 1, bad), ContractError);
    bad = DpgmmConfig{};
    bad.truncation = 0;
    EXPECT_THROW(bad.check(), ContractError);
}

TEST(ClusterSummary, PrunesAndRenormalises)
{
    // 70 / 29 / 1 draws across three groups.
    std::vector<double> logits;
    std::vector<std::size_t> assignment;
    for (int i = 0; i < 100; ++i) {
        const std::size_t g = i < 70 ? 0 : (i < 99 ? 1 : 2);
        assignment.push_back(g);
        logits.push_back(g == 1 ? -3.0 : 3.0);
        logits.push_back(g == 1 ? 3.0 : -3.0);
    }
    const PredictionSet p = prediction_from_logits(0, Scenario::missing, 100, 2, logits);
    const auto kept = summarize_clusters(p, assignment, 0.02);
    ASSERT_EQ(kept.size(), 2u);
    EXPECT_NEAR(kept[0].weight, 70.0 / 99.0, 1e-12);
    EXPECT_NEAR(kept[1].weight, 29.0 / 99.0, 1e-12);
    EXPECT_EQ(kept[0].dominant_label, 0u);
    EXPECT_EQ(kept[1].dominant_label, 1u);
    EXPECT_EQ(kept[1].cluster_id, 1u);
    EXPECT_EQ(summarize_clusters(p, assignment, 0.01).size(), 3u);
}

TEST(ClusterSummary, SeparatedLogitModesGiveTwoLabels)
{
    Rng rng(4);
    std::vector<double> logits;
    for (int k = 0; k < 200; ++k) {
        const double s = k % 2 ? 4.0 : -4.0;
        logits.push_back(s + 0.3 * rng.normal());
        logits.push_back(-s + 0.3 * rng.normal());
    }
    const PredictionSet p = prediction_from_logits(0, Scenario::missing, 200, 2, logits);
    const auto clusters = cluster_logits(p, {});
    ASSERT_EQ(clusters.size(), 2u);
    EXPECT_NE(clusters[0].dominant_label, clusters[1].dominant_label);
    EXPECT_NEAR(clusters[0].weight, 0.5, 0.01);
}
