#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "inilora/error.hpp"
#include "inilora/matrix.hpp"
#include "inilora/optim.hpp"
#include "inilora/random.hpp"
#include "inilora/stats.hpp"
#include "inilora/wtn1.hpp"

namespace inilora {

/// Settings for one gradient-descent factorization W0 ~ B A.
struct ApproxConfig {
    std::size_t rank = 8;
    std::int64_t steps = 20000;
    StepLRSchedule schedule{};  // schedule.base_lr is the learning rate
    AdamHyper adam{};
    double init_mu = 0.0;
    /// Unset means "use the layer statistics"; approximate_model fills in sigma_bar.
    std::optional<double> init_sigma;
    std::uint64_t seed = 0;
    std::int64_t trajectory_stride = 100;
    std::vector<std::int64_t> checkpoint_steps;

    double lr() const noexcept { return schedule.base_lr; }

    void validate() const {
        if (rank < 1) throw ValidationError("rank must be >= 1");
        if (steps < 0) throw ValidationError("steps must be >= 0");
        if (trajectory_stride < 1) throw ValidationError("trajectory stride must be >= 1");
        if (init_sigma && !(*init_sigma > 0.0 && std::isfinite(*init_sigma))) {
            throw ValidationError("init sigma must be positive");
        }
        if (!std::isfinite(init_mu)) throw ValidationError("init mu must be finite");
        for (auto s : checkpoint_steps) {
            if (s < 0) throw ValidationError("checkpoint steps must be >= 0");
        }
        schedule.validate();
        adam.validate();
    }

    void validate_for(std::size_t d, std::size_t k) const {
        validate();
        if (rank >= std::min(d, k)) {
            throw ValidationError("rank must be < min(d,k): rank " + std::to_string(rank) +
                                  " for " + std::to_string(d) + "x" + std::to_string(k));
        }
    }

    std::string describe() const {
        std::ostringstream os;
        os << "rank=" << rank << " steps=" << steps << " lr=" << schedule.base_lr
           << " step_size=" << schedule.step_size << " gamma=" << schedule.gamma
           << " init_mu=" << init_mu << " init_sigma="
           << (init_sigma ? std::to_string(*init_sigma) : std::string("auto")) << " seed=" << seed;
        return os.str();
    }
};

struct TrajectoryPoint {
    std::int64_t step = 0;
    double frobenius_sq = 0.0;
    double mse = 0.0;

    friend bool operator==(const TrajectoryPoint&, const TrajectoryPoint&) = default;
};

/// Factors captured mid-run.
struct ApproxCheckpoint {
    std::int64_t step = 0;
    Matrix a;
    Matrix b;
    double mse = 0.0;
};

struct ApproxResult {
    Matrix a;         // r x k
    Matrix b;         // d x r
    Matrix residual;  // d x k, w0 - b a
    double final_frobenius_sq = 0.0;
    double final_mse = 0.0;
    std::vector<TrajectoryPoint> trajectory;
    std::vector<ApproxCheckpoint> checkpoints;
    ApproxConfig config;  // init_sigma always resolved
    std::string w0_hash;
    std::int64_t steps_executed = 0;
};

/// Initial factors A ~ N(mu, sigma^2) (r x k) and B ~ N(mu, sigma^2) (d x r),
/// each drawn from its own sub-seed of `seed`.
inline std::pair<Matrix, Matrix> draw_initial_factors(std::size_t d, std::size_t k,
                                                      std::size_t r, double mu, double sigma,
                                                      std::uint64_t seed) {
    const auto spec = DistributionSpec::normal(mu, sigma);
    return {sample(spec, r, k, rng::derive_seed(seed, "A")),
            sample(spec, d, r, rng::derive_seed(seed, "B"))};
}

/// residual = w0 - b a with the same product kernel used everywhere else.
inline Matrix residual_of(const Matrix& w0, const Matrix& a, const Matrix& b) {
    return subtract(w0, matmul(b, a));
}

/// Runs `cfg.steps` Adam updates on ||W0 - B A||_F^2 and returns the factors,
/// the residual and the MSE trajectory.
///
/// The trajectory holds step 0, every multiple of the stride, and the last
/// step. Throws DivergenceError if the objective stops being finite.
inline ApproxResult approximate(const Matrix& w0, ApproxConfig cfg,
                                Dtype hash_dtype = Dtype::f64) {
    const std::size_t d = w0.rows(), k = w0.cols(), r = cfg.rank;
    cfg.validate_for(d, k);
    if (!cfg.init_sigma) {
        const LayerStats own = layer_stats(w0, "w0");
        if (!(own.sigma > 0.0)) {
            throw ValidationError("cannot derive init sigma from a constant matrix");
        }
        cfg.init_sigma = own.sigma;
    }
    std::sort(cfg.checkpoint_steps.begin(), cfg.checkpoint_steps.end());
    cfg.checkpoint_steps.erase(std::unique(cfg.checkpoint_steps.begin(), cfg.checkpoint_steps.end()),
                               cfg.checkpoint_steps.end());

    auto [a, b] = draw_initial_factors(d, k, r, cfg.init_mu, *cfg.init_sigma, cfg.seed);
    AdamState adam_a(r, k, cfg.adam);
    AdamState adam_b(d, r, cfg.adam);
    detail::ApproxWorkspace ws(d, k, r);
    const double n = static_cast<double>(d * k);

    ApproxResult out{a, b, Matrix(d, k), 0.0, 0.0, {}, {}, cfg, content_hash(w0, hash_dtype), 0};
    auto next_ckpt = cfg.checkpoint_steps.begin();

    for (std::int64_t t = 0;; ++t) {
        const double frob = detail::approx_objective(w0, a, b, ws);
        if (!std::isfinite(frob)) {
            throw DivergenceError("approximation diverged at step " + std::to_string(t) + " (" +
                                      cfg.describe() + ")",
                                  t);
        }
        const double step_mse = frob / n;
        if (t % cfg.trajectory_stride == 0 || t == cfg.steps) {
            out.trajectory.push_back({t, frob, step_mse});
        }
        while (next_ckpt != cfg.checkpoint_steps.end() && *next_ckpt == t) {
            out.checkpoints.push_back({t, a, b, step_mse});
            ++next_ckpt;
        }
        if (t == cfg.steps) {
            out.final_frobenius_sq = frob;
            out.final_mse = step_mse;
            break;
        }
        const double lr = lr_at(cfg.schedule, t);
        try {
            adam_a.apply(a, ws.grad_a, lr);
            adam_b.apply(b, ws.grad_b, lr);
        } catch (const DivergenceError& e) {
            throw DivergenceError(std::string(e.what()) + " during approximation step " +
                                      std::to_string(t) + " (" + cfg.describe() + ")",
                                  t);
        }
    }

    out.steps_executed = cfg.steps;
    out.residual = residual_of(w0, a, b);
    out.a = std::move(a);
    out.b = std::move(b);
    return out;
}

}  // namespace inilora
