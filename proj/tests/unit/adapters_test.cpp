#include <gtest/gtest.h>

#include <cmath>

#include "inilora/adapters.hpp"
#include "support/finite_diff.hpp"
#include "support/fixtures.hpp"

namespace inilora {
namespace {

using testing::central_difference;
using testing::gradient_relative_error;

Matrix gaussian(std::size_t d, std::size_t k, std::uint64_t seed, double std = 0.02) {
    return sample(DistributionSpec::normal(0.0, std), d, k, seed);
}

ApproxFactors factors_for(const Matrix& w0, std::size_t rank, std::int64_t steps = 200) {
    ApproxConfig cfg;
    cfg.rank = rank;
    cfg.steps = steps;
    cfg.seed = 3;
    return ApproxFactors::from(approximate(w0, cfg));
}

AdaptedLinear make(const Matrix& w0, const std::string& name, std::size_t rank,
                   std::uint64_t seed, AdapterOptions opts = {}) {
    const auto strategy = parse_strategy(name, 0.02);
    std::optional<ApproxFactors> f;
    if (strategy.kind == StrategyKind::inilora) f = factors_for(w0, rank);
    return init_adapter(w0, strategy, rank, seed, f, opts);
}

TEST(Strategy, ParseNames) {
    for (const auto& name : all_strategy_names()) {
        EXPECT_EQ(parse_strategy(name, 0.1).name(), name);
    }
    EXPECT_EQ(parse_strategy("inilora-alpha").sigma, 0.5);
    EXPECT_EQ(parse_strategy("inilora-iter0", 0.03).sigma, 0.03);
    EXPECT_THROW(parse_strategy("pissa"), ValidationError);
}

TEST(InitAdapter, ForwardEqualsBaseForEveryStrategy) {
    const Matrix w0 = gaussian(24, 16, 1);
    for (const auto& name : all_strategy_names()) {
        const auto layer = make(w0, name, 4, 9);
        for (std::uint64_t s = 0; s < 20; ++s) {
            const Matrix x = gaussian(5, 16, 100 + s, 1.0);
            const Matrix base = linear_forward(w0, x);
            EXPECT_LE(relative_diff(adapter_forward(layer, x), base), 1e-9) << name;
        }
        EXPECT_LE(relative_diff(merge(layer), w0), 1e-9) << name;
    }
}

TEST(InitAdapter, LoraShape) {
    const Matrix w0 = gaussian(20, 30, 2);
    const auto layer = make(w0, "lora", 4, 5);
    EXPECT_EQ(layer.b(), Matrix::zeros(20, 4));
    EXPECT_EQ(layer.frozen(), w0);
    EXPECT_EQ(merge(layer), w0);
    const double bound = std::sqrt(6.0 / 30.0);
    EXPECT_LE(max_abs(layer.a()), bound);
    EXPECT_GT(max_abs(layer.a()), 0.0);
}

TEST(InitAdapter, IniloraUsesFactorsAndResidual) {
    const Matrix w0 = gaussian(20, 16, 3);
    const auto f = factors_for(w0, 4);
    const auto layer = init_adapter(w0, InitStrategy::inilora(), 4, 1, f);
    EXPECT_EQ(layer.a(), f.a);
    EXPECT_EQ(layer.b(), f.b);
    EXPECT_EQ(layer.frozen(), f.residual);
    EXPECT_GT(max_abs(matmul(layer.b(), layer.a())), 0.0);
}

TEST(InitAdapter, AlphaDrawsWideNormal) {
    const Matrix w0 = gaussian(300, 300, 4);
    const auto layer = make(w0, "inilora-alpha", 64, 2);
    const auto s = layer_stats(layer.a(), "a");
    EXPECT_NEAR(s.sigma, 0.5, 0.01);
    EXPECT_NEAR(layer_stats(layer.b(), "b").sigma, 0.5, 0.01);
}

TEST(InitAdapter, BetaFanInConventions) {
    const Matrix w0 = gaussian(400, 300, 5);
    const auto kn = make(w0, "inilora-beta-kn", 50, 2);
    EXPECT_NEAR(layer_stats(kn.a(), "a").sigma, std::sqrt(2.0 / 300.0), 0.03 * std::sqrt(2.0 / 300.0));
    EXPECT_NEAR(layer_stats(kn.b(), "b").sigma, std::sqrt(2.0 / 50.0), 0.03 * std::sqrt(2.0 / 50.0));
    const auto ku = make(w0, "inilora-beta-ku", 50, 2);
    EXPECT_LE(max_abs(ku.a()), std::sqrt(6.0 / 300.0));
    EXPECT_LE(max_abs(ku.b()), std::sqrt(6.0 / 50.0));
    EXPECT_GT(max_abs(ku.b()), 0.9 * std::sqrt(6.0 / 50.0));
}

TEST(InitAdapter, Iter0MatchesZeroStepApproximation) {
    const Matrix w0 = gaussian(16, 16, 6);
    ApproxConfig cfg;
    cfg.rank = 3;
    cfg.steps = 0;
    cfg.init_sigma = 0.02;
    cfg.seed = 42;
    const auto zero = approximate(w0, cfg);
    const auto layer = init_adapter(w0, InitStrategy::iter0(0.02), 3, 42);
    EXPECT_EQ(layer.a(), zero.a);
    EXPECT_EQ(layer.b(), zero.b);
    EXPECT_EQ(layer.frozen(), zero.residual);
}

TEST(InitAdapter, StaleFactorsRejected) {
    const Matrix w0 = gaussian(12, 12, 7);
    const auto f = factors_for(gaussian(12, 12, 8), 3);
    EXPECT_THROW(init_adapter(w0, InitStrategy::inilora(), 3, 1, f), ValidationError);
}

TEST(InitAdapter, PreconditionErrors) {
    const Matrix w0 = gaussian(12, 10, 7);
    EXPECT_THROW(init_adapter(w0, InitStrategy::lora(), 10, 1), ValidationError);
    EXPECT_THROW(init_adapter(w0, InitStrategy::inilora(), 3, 1), ValidationError);
    EXPECT_THROW(init_adapter(w0, InitStrategy::lora(), 3, 1, factors_for(w0, 3)),
                 ValidationError);
    EXPECT_THROW(init_adapter(w0, InitStrategy::iter0(0.0), 3, 1), ValidationError);
    EXPECT_THROW(init_adapter(w0, InitStrategy::inilora(), 2, 1, factors_for(w0, 3)), ShapeError);
}

TEST(InitAdapter, NoResidualModeKeepsW0Frozen) {
    const Matrix w0 = gaussian(12, 10, 7);
    AdapterOptions opts;
    opts.preserve_output = false;
    const auto layer = make(w0, "inilora-alpha", 3, 1, opts);
    EXPECT_EQ(layer.frozen(), w0);
    EXPECT_GT(max_abs_diff(merge(layer), w0), 0.0);
}

TEST(InitAdapter, ParameterBudgetIndependentOfStrategy) {
    const Matrix w0 = gaussian(24, 16, 1);
    for (const auto& name : all_strategy_names()) {
        EXPECT_EQ(make(w0, name, 4, 9).trainable_parameters(), 4u * (24 + 16)) << name;
    }
}

TEST(Forward, FactoredAndMaterializedAgree) {
    const Matrix w0 = gaussian(16, 16, 10);
    auto layer = make(w0, "inilora-beta-kn", 3, 1);
    layer.a() = gaussian(3, 16, 11, 0.3);
    for (std::uint64_t s = 0; s < 5; ++s) {
        const Matrix x = gaussian(4, 16, 20 + s, 1.0);
        EXPECT_LE(relative_diff(adapter_forward(layer, x), adapter_forward_materialized(layer, x)),
                  1e-10);
    }
}

TEST(Forward, ZeroInputGivesZeroOutput) {
    const auto layer = make(gaussian(8, 6, 1), "inilora-alpha", 2, 1);
    EXPECT_EQ(adapter_forward(layer, Matrix(3, 6)), Matrix(3, 8));
}

TEST(Forward, RejectsWrongInputWidth) {
    const auto layer = make(gaussian(8, 6, 1), "lora", 2, 1);
    EXPECT_THROW(adapter_forward(layer, Matrix(3, 8)), ShapeError);
}

TEST(Merge, ScalingIsApplied) {
    const Matrix w0 = gaussian(8, 6, 1);
    AdapterOptions opts;
    opts.scaling = 2.0;
    auto layer = make(w0, "lora", 2, 1, opts);
    layer.b() = gaussian(8, 2, 3, 0.5);
    EXPECT_LE(max_abs_diff(merge(layer), add(w0, scaled(matmul(layer.b(), layer.a()), 2.0))),
              0.0);
}

double loss_of(const AdaptedLinear& layer, const Matrix& x, const Matrix& target) {
    const Matrix y = adapter_forward(layer, x);
    double total = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double e = y.values()[i] - target.values()[i];
        total += 0.5 * e * e;
    }
    return total;
}

TEST(AdapterGrads, MatchCentralDifferences) {
    for (std::uint64_t trial = 0; trial < 10; ++trial) {
        const Matrix w0 = gaussian(3, 5, trial, 1.0);
        AdapterOptions opts;
        opts.scaling = 1.0 + 0.25 * static_cast<double>(trial % 3);
        auto layer = make(w0, trial % 2 ? "inilora-alpha" : "inilora-beta-ku", 2, trial, opts);
        Matrix x = gaussian(4, 5, 50 + trial, 1.0);
        const Matrix target = gaussian(4, 3, 70 + trial, 1.0);
        const Matrix upstream = subtract(adapter_forward(layer, x), target);
        const auto g = adapter_grads(layer, x, upstream);
        auto loss = [&] { return loss_of(layer, x, target); };
        EXPECT_LT(gradient_relative_error(g.grad_a, central_difference(loss, layer.a())), 1e-5);
        EXPECT_LT(gradient_relative_error(g.grad_b, central_difference(loss, layer.b())), 1e-5);
        EXPECT_LT(gradient_relative_error(g.grad_x, central_difference(loss, x)), 1e-5);
    }
}

TEST(AdapterGrads, LoraHasExactlyZeroGradOnA) {
    const Matrix w0 = gaussian(10, 8, 1);
    const auto layer = make(w0, "lora", 3, 2);
    const Matrix x = gaussian(6, 8, 3, 1.0);
    const auto g = adapter_grads(layer, x, gaussian(6, 10, 4, 1.0));
    EXPECT_EQ(g.grad_a, Matrix::zeros(3, 8));
    EXPECT_GT(frobenius_sq(g.grad_b), 0.0);
}

TEST(AdapterGrads, IniloraHasNonzeroGradOnBothFactors) {
    const Matrix w0 = gaussian(10, 8, 1);
    const auto layer = make(w0, "inilora", 3, 2);
    const Matrix x = gaussian(6, 8, 3, 1.0);
    const auto g = adapter_grads(layer, x, gaussian(6, 10, 4, 1.0));
    EXPECT_GT(frobenius_sq(g.grad_a), 0.0);
    EXPECT_GT(frobenius_sq(g.grad_b), 0.0);
}

TEST(AdapterGrads, RejectsShapeMismatch) {
    const auto layer = make(gaussian(10, 8, 1), "lora", 3, 2);
    EXPECT_THROW(adapter_grads(layer, Matrix(6, 8), Matrix(5, 10)), ShapeError);
    EXPECT_THROW(adapter_grads(layer, Matrix(6, 7), Matrix(6, 10)), ShapeError);
}

TEST(AdaptedLinear, FrozenIsUntouchedByTraining) {
    const Matrix w0 = gaussian(10, 8, 1);
    auto layer = make(w0, "inilora", 3, 2);
    const std::string before = wtn1::encode(layer.frozen());
    AdamState sa(3, 8), sb(10, 3);
    const Matrix x = gaussian(6, 8, 3, 1.0);
    const Matrix target = gaussian(6, 10, 4, 1.0);
    for (int t = 0; t < 25; ++t) {
        const auto g = adapter_grads(layer, x, subtract(adapter_forward(layer, x), target));
        sa.apply(layer.a(), g.grad_a, 1e-2);
        sb.apply(layer.b(), g.grad_b, 1e-2);
    }
    EXPECT_EQ(wtn1::encode(layer.frozen()), before);
    EXPECT_GT(max_abs_diff(merge(layer), w0), 0.0);
}

TEST(AdapterCheckpoint, SaveLoadRoundTrip) {
    testing::TempDir tmp("adapter");
    const auto layer = make(gaussian(10, 8, 1), "inilora-alpha", 3, 2);
    save_adapter(tmp / "ckpt", layer);
    const auto back = load_adapter(tmp / "ckpt");
    EXPECT_EQ(back.a(), layer.a());
    EXPECT_EQ(back.b(), layer.b());
    EXPECT_EQ(back.frozen(), layer.frozen());
    EXPECT_EQ(back.strategy(), layer.strategy());
    EXPECT_EQ(back.seed(), layer.seed());
    EXPECT_EQ(back.w0_hash(), layer.w0_hash());
}

}  // namespace
}  // namespace inilora
