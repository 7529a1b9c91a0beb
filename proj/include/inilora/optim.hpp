#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>

#include "inilora/error.hpp"
#include "inilora/matrix.hpp"

namespace inilora {

// ---------------------------------------------------------------------------
// Reconstruction objective ||W0 - B A||_F^2 and its gradients.

struct ApproxGrads {
    Matrix grad_a;  // r x k
    Matrix grad_b;  // d x r
};

namespace detail {

inline void check_factor_shapes(const Matrix& w0, const Matrix& a, const Matrix& b) {
    if (b.cols() != a.rows() || b.rows() != w0.rows() || a.cols() != w0.cols()) {
        throw ShapeError("factor shapes inconsistent: w0 " + w0.shape_string() + ", a " +
                         a.shape_string() + ", b " + b.shape_string());
    }
}

/// Scratch buffers for repeated objective/gradient evaluation on one layer.
struct ApproxWorkspace {
    ApproxWorkspace(std::size_t d, std::size_t k, std::size_t r)
        : residual(d, k), grad_a(r, k), grad_b(d, r) {}

    Matrix residual;
    Matrix grad_a;
    Matrix grad_b;
};

/// Fills ws.residual = w0 - b a and both gradients; returns ||residual||_F^2.
inline double approx_objective(const Matrix& w0, const Matrix& a, const Matrix& b,
                               ApproxWorkspace& ws) {
    kernels::gemm_nn(b, a, ws.residual);
    auto res = ws.residual.values();
    auto w = w0.values();
    double frob = 0.0;
    for (std::size_t i = 0; i < res.size(); ++i) {
        res[i] = w[i] - res[i];
        frob += res[i] * res[i];
    }
    kernels::gemm_tn(b, ws.residual, ws.grad_a);
    kernels::gemm_nt(ws.residual, a, ws.grad_b);
    for (double& g : ws.grad_a.values()) {
        g *= -2.0;
    }
    for (double& g : ws.grad_b.values()) {
        g *= -2.0;
    }
    return frob;
}

}  // namespace detail

/// Gradients of ||W0 - B A||_F^2: -2 B^T (W0 - BA) and -2 (W0 - BA) A^T.
inline ApproxGrads approx_grads(const Matrix& w0, const Matrix& a, const Matrix& b) {
    detail::check_factor_shapes(w0, a, b);
    detail::ApproxWorkspace ws(w0.rows(), w0.cols(), a.rows());
    detail::approx_objective(w0, a, b, ws);
    ws.grad_a.require_finite("approx_grads");
    ws.grad_b.require_finite("approx_grads");
    return {std::move(ws.grad_a), std::move(ws.grad_b)};
}

// ---------------------------------------------------------------------------
// Adam.

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void validate() const {
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
            throw ValidationError("Adam betas must lie in [0, 1)");
        }
        if (!(epsilon > 0.0)) {
            throw ValidationError("Adam epsilon must be positive");
        }
    }
};

/// Moments for one parameter matrix.
class AdamState {
public:
    AdamState(std::size_t rows, std::size_t cols, AdamHyper hyper = {})
        : first_(rows, cols), second_(rows, cols), hyper_(hyper) {
        hyper_.validate();
    }

    const Matrix& first_moment() const noexcept { return first_; }
    const Matrix& second_moment() const noexcept { return second_; }
    std::int64_t step_count() const noexcept { return step_count_; }
    const AdamHyper& hyper() const noexcept { return hyper_; }

    /// One bias-corrected Adam update of `params` in place.
    void apply(Matrix& params, const Matrix& grads, double lr) {
        if (!params.same_shape(first_) || !grads.same_shape(first_)) {
            throw ShapeError("adam: params " + params.shape_string() + " / grads " +
                             grads.shape_string() + " do not match state " +
                             first_.shape_string());
        }
        if (!(lr > 0.0) || !std::isfinite(lr)) {
            throw ValidationError("adam: learning rate must be positive");
        }
        const std::int64_t step = step_count_ + 1;
        if (!grads.all_finite()) {
            throw DivergenceError("adam: non-finite gradient at step " + std::to_string(step),
                                  step);
        }
        const double b1 = hyper_.beta1, b2 = hyper_.beta2;
        const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step));
        const double bc2_sqrt = std::sqrt(1.0 - std::pow(b2, static_cast<double>(step)));
        const double step_size = lr / bc1;

        auto p = params.values();
        auto g = grads.values();
        auto m = first_.values();
        auto v = second_.values();
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            const double denom = std::sqrt(v[i]) / bc2_sqrt + hyper_.epsilon;
            p[i] -= step_size * m[i] / denom;
        }
        step_count_ = step;
    }

private:
    Matrix first_;
    Matrix second_;
    std::int64_t step_count_ = 0;
    AdamHyper hyper_;
};

/// Value-semantics form of AdamState::apply.
inline std::pair<Matrix, AdamState> adam_step(AdamState state, Matrix params, const Matrix& grads,
                                              double lr) {
    state.apply(params, grads, lr);
    return {std::move(params), std::move(state)};
}

// ---------------------------------------------------------------------------
// Step decay schedule: lr(t) = base_lr * gamma^floor(t / step_size).

struct StepLRSchedule {
    double base_lr = 5e-4;
    std::int64_t step_size = 5000;
    double gamma = 0.5;

    void validate() const {
        if (!(base_lr > 0.0) || !std::isfinite(base_lr)) {
            throw ValidationError("learning rate must be positive");
        }
        if (step_size < 1) {
            throw ValidationError("StepLR step_size must be >= 1");
        }
        if (!(gamma > 0.0 && gamma <= 1.0)) {
            throw ValidationError("StepLR gamma must lie in (0, 1]");
        }
    }

    friend bool operator==(const StepLRSchedule&, const StepLRSchedule&) = default;
};

inline double lr_at(const StepLRSchedule& schedule, std::int64_t step) {
    if (step < 0) {
        throw ValidationError("lr_at: step must be non-negative");
    }
    const auto decays = static_cast<double>(step / schedule.step_size);
    return schedule.base_lr * std::pow(schedule.gamma, decays);
}

}  // namespace inilora
