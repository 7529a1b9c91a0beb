#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "inilora/random.hpp"
#include "inilora/stats.hpp"

namespace inilora {
namespace {

TEST(LayerStats, ConstantMatrixHasZeroSigma) {
    const auto s = layer_stats(Matrix::filled(3, 4, 0.3), "c");
    EXPECT_NEAR(s.mu, 0.3, 1e-15);
    EXPECT_EQ(s.sigma, 0.0);
    EXPECT_EQ(s.element_count, 12u);
    EXPECT_EQ(s.layer_name, "c");
}

TEST(LayerStats, PopulationNormalization) {
    const auto s = layer_stats(Matrix{{1, 2}, {3, 4}}, "w");
    EXPECT_EQ(s.mu, 2.5);
    EXPECT_NEAR(s.sigma, std::sqrt(1.25), 1e-12);
}

TEST(LayerStats, InvariantUnderTranspose) {
    const Matrix w = sample(DistributionSpec::normal(0.1, 0.2), 5, 9, 3);
    const auto s = layer_stats(w, "w");
    const auto t = layer_stats(transpose(w), "w");
    EXPECT_NEAR(s.mu, t.mu, 1e-15);
    EXPECT_NEAR(s.sigma, t.sigma, 1e-15);
}

TEST(LayerStats, RecomputationIsExact) {
    const Matrix w = sample(DistributionSpec::normal(0.0, 0.02), 32, 32, 1);
    const auto s1 = layer_stats(w, "w");
    const auto s2 = layer_stats(w, "w");
    EXPECT_EQ(s1.mu, s2.mu);
    EXPECT_EQ(s1.sigma, s2.sigma);
}

TEST(GlobalInit, SingleLayerIsIdentity) {
    const LayerStats s{"q", 0.01, 0.05, 100};
    const auto g = global_init(std::vector{s});
    EXPECT_EQ(g.mu_bar, 0.01);
    EXPECT_EQ(g.sigma_bar, 0.05);
    EXPECT_EQ(g.n_layers, 1u);
}

TEST(GlobalInit, UnweightedMeanOfSigmas) {
    const std::vector<LayerStats> stats{{"a", 0.0, 0.01, 10}, {"b", 0.0, 0.03, 100000}};
    EXPECT_NEAR(global_init(stats).sigma_bar, 0.02, 1e-15);
}

TEST(GlobalInit, PermutationInvariantBitForBit) {
    std::vector<LayerStats> stats;
    for (int i = 0; i < 9; ++i) {
        const Matrix w = sample(DistributionSpec::normal(0.001 * i, 0.01 + 0.003 * i), 8, 8, i);
        stats.push_back(layer_stats(w, "l" + std::to_string(i)));
    }
    const auto base = global_init(stats);
    for (int perm = 0; perm < 20; ++perm) {
        std::next_permutation(stats.begin(), stats.end(),
                              [](const auto& x, const auto& y) { return x.layer_name < y.layer_name; });
        const auto g = global_init(stats);
        EXPECT_EQ(g.mu_bar, base.mu_bar);
        EXPECT_EQ(g.sigma_bar, base.sigma_bar);
    }
}

TEST(GlobalInit, CopiesOfOneLayer) {
    const LayerStats s{"q", -0.0123, 0.0456, 64};
    const auto g = global_init(std::vector<LayerStats>(7, s));
    EXPECT_NEAR(g.mu_bar, s.mu, 1e-15);
    EXPECT_NEAR(g.sigma_bar, s.sigma, 1e-15);
}

TEST(GlobalInit, RejectsEmpty) {
    EXPECT_THROW(global_init(std::vector<LayerStats>{}), ValidationError);
}

TEST(StatsReport, Schema) {
    const std::vector<LayerStats> stats{{"q", 0.0, 0.02, 4}, {"v", 0.1, 0.04, 4}};
    const auto j = stats_report("toy", stats, global_init(stats));
    EXPECT_EQ(j.at("model_id"), "toy");
    EXPECT_EQ(j.at("per_layer").size(), 2u);
    EXPECT_EQ(j.at("per_layer")[1].at("name"), "v");
    EXPECT_EQ(j.at("per_layer")[1].at("elements"), 4);
    EXPECT_NEAR(j.at("sigma_bar").get<double>(), 0.03, 1e-15);
    EXPECT_TRUE(j.contains("mu_bar"));
}

}  // namespace
}  // namespace inilora
