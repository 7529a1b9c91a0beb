#pragma once

// Synthetic teacher-student tasks. The teacher is the toy model with a
// low-rank shift added to each adapted layer, so an adapter of matching
// rank can represent it exactly.

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"

#include "inilora/harness/toy_model.hpp"

namespace inilora::harness {

enum class TaskKind { matrix_regression, token_classification };

inline std::string to_string(TaskKind k) {
    return k == TaskKind::matrix_regression ? "matrix-regression" : "token-classification";
}

inline TaskKind parse_task_kind(std::string_view s) {
    if (s == "matrix-regression" || s == "regression") return TaskKind::matrix_regression;
    if (s == "token-classification" || s == "classification") {
        return TaskKind::token_classification;
    }
    throw ValidationError("unknown task kind '" + std::string(s) + "'");
}

struct TaskSpec {
    TaskKind kind = TaskKind::matrix_regression;
    std::size_t n_train = 256;
    std::size_t n_eval = 256;
    std::size_t delta_rank = 4;  // 0 gives the null task
    double delta_scale = 0.1;    // std of each teacher factor entry
    std::uint64_t seed = 0;

    void validate(const ToyModelSpec& model) const {
        if (n_train < 1 || n_eval < 1) throw ValidationError("task sizes must be >= 1");
        if (delta_rank >= model.hidden_dim) {
            throw ValidationError("teacher rank must be < hidden dim");
        }
        if (!(delta_scale >= 0.0) || !std::isfinite(delta_scale)) {
            throw ValidationError("teacher scale must be finite and >= 0");
        }
        if (kind == TaskKind::token_classification && model.output_dim < 2) {
            throw ValidationError("classification needs output_dim >= 2");
        }
    }

    nlohmann::json to_json() const {
        return {{"kind", to_string(kind)},     {"n_train", n_train},
                {"n_eval", n_eval},           {"delta_rank", delta_rank},
                {"delta_scale", delta_scale}, {"seed", seed}};
    }
};

struct Dataset {
    TaskSpec spec;
    Matrix x_train;
    Matrix y_train;  // regression targets, or one-hot labels
    Matrix x_eval;
    Matrix y_eval;
    std::vector<std::size_t> labels_train;  // classification only
    std::vector<std::size_t> labels_eval;
    std::vector<Matrix> deltas;  // one per adapted layer, model order

    bool classification() const noexcept { return spec.kind == TaskKind::token_classification; }
};

inline std::size_t argmax_row(const Matrix& m, std::size_t i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < m.cols(); ++j) {
        if (m(i, j) > m(i, best)) best = j;
    }
    return best;
}

inline Matrix one_hot(const std::vector<std::size_t>& labels, std::size_t classes) {
    Matrix out(labels.size(), classes);
    for (std::size_t i = 0; i < labels.size(); ++i) out(i, labels[i]) = 1.0;
    return out;
}

inline Dataset make_task(const ToyModel& model, const TaskSpec& spec) {
    spec.validate(model.spec);
    const std::size_t in = model.spec.input_dim;
    Dataset ds{spec, Matrix(spec.n_train, in), Matrix(1, 1), Matrix(spec.n_eval, in),
               Matrix(1, 1), {}, {}, {}};
    ds.x_train = sample(DistributionSpec::normal(0.0, 1.0), spec.n_train, in,
                        rng::derive_seed(spec.seed, "x", "train"));
    ds.x_eval = sample(DistributionSpec::normal(0.0, 1.0), spec.n_eval, in,
                       rng::derive_seed(spec.seed, "x", "eval"));

    std::vector<Matrix> teacher;
    teacher.reserve(model.layers.size());
    for (const auto& l : model.layers) {
        if (!l.adapted) {
            teacher.push_back(l.weight);
            continue;
        }
        Matrix delta(l.spec.rows, l.spec.cols);
        if (spec.delta_rank > 0 && spec.delta_scale > 0.0) {
            const auto factor = DistributionSpec::normal(0.0, spec.delta_scale);
            delta = matmul(sample(factor, l.spec.rows, spec.delta_rank,
                                  rng::derive_seed(spec.seed, "delta.u", l.spec.name)),
                           sample(factor, spec.delta_rank, l.spec.cols,
                                  rng::derive_seed(spec.seed, "delta.v", l.spec.name)));
        }
        teacher.push_back(add(l.weight, delta));
        ds.deltas.push_back(std::move(delta));
    }
    std::vector<const Matrix*> w;
    for (const auto& t : teacher) w.push_back(&t);
    const Matrix out_train = forward_with(model, w, ds.x_train);
    const Matrix out_eval = forward_with(model, w, ds.x_eval);

    if (!ds.classification()) {
        ds.y_train = out_train;
        ds.y_eval = out_eval;
        return ds;
    }
    for (std::size_t i = 0; i < out_train.rows(); ++i) {
        ds.labels_train.push_back(argmax_row(out_train, i));
    }
    for (std::size_t i = 0; i < out_eval.rows(); ++i) {
        ds.labels_eval.push_back(argmax_row(out_eval, i));
    }
    ds.y_train = one_hot(ds.labels_train, model.spec.output_dim);
    ds.y_eval = one_hot(ds.labels_eval, model.spec.output_dim);
    return ds;
}

// ---------------------------------------------------------------------------
// Losses. Regression uses the mean over all output entries; classification
// uses mean softmax cross-entropy over rows.

struct LossValue {
    double loss = 0.0;
    Matrix grad;  // dL/d output
};

inline LossValue mse_loss(const Matrix& y, const Matrix& target) {
    LossValue out{0.0, subtract(y, target)};
    const double n = static_cast<double>(y.size());
    for (double& g : out.grad.values()) {
        out.loss += g * g;
        g *= 2.0 / n;
    }
    out.loss /= n;
    return out;
}

inline LossValue cross_entropy_loss(const Matrix& logits, const Matrix& one_hot_targets) {
    LossValue out{0.0, Matrix(logits.rows(), logits.cols())};
    const double n = static_cast<double>(logits.rows());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < logits.cols(); ++j) mx = std::max(mx, logits(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < logits.cols(); ++j) z += std::exp(logits(i, j) - mx);
        const double log_z = mx + std::log(z);
        for (std::size_t j = 0; j < logits.cols(); ++j) {
            const double p = std::exp(logits(i, j) - log_z);
            out.grad(i, j) = (p - one_hot_targets(i, j)) / n;
            out.loss -= one_hot_targets(i, j) * (logits(i, j) - log_z);
        }
    }
    out.loss /= n;
    return out;
}

inline LossValue task_loss(const Dataset& ds, const Matrix& y, const Matrix& target) {
    return ds.classification() ? cross_entropy_loss(y, target) : mse_loss(y, target);
}

inline std::string metric_name(const Dataset& ds) {
    return ds.classification() ? "accuracy" : "mse";
}

/// Exact-match accuracy for classification, MSE for regression.
inline double task_metric(const Dataset& ds, const Matrix& y, const Matrix& target) {
    if (!ds.classification()) return mse(y, target);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < y.rows(); ++i) {
        hits += target(i, argmax_row(y, i)) == 1.0 ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(y.rows());
}

}  // namespace inilora::harness
