#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "inilora/adapters.hpp"
#include "inilora/harness/task.hpp"
#include "inilora/harness/toy_model.hpp"
#include "inilora/optim.hpp"

namespace inilora::harness {

struct TrainConfig {
    std::int64_t steps = 500;
    std::size_t batch_size = 0;  // 0 = full batch
    double lr = 1e-3;
    std::uint64_t seed = 0;
    InitStrategy strategy = InitStrategy::lora();
    std::size_t rank = 4;
    std::int64_t eval_every = 50;
    double scaling = 1.0;
    bool preserve_output = true;
    bool train_head = false;

    void validate() const {
        if (steps < 0) throw ValidationError("train steps must be >= 0");
        if (!(lr > 0.0) || !std::isfinite(lr)) throw ValidationError("train lr must be positive");
        if (rank < 1) throw ValidationError("rank must be >= 1");
        if (eval_every < 1) throw ValidationError("eval_every must be >= 1");
        if (!(scaling > 0.0)) throw ValidationError("scaling must be positive");
    }

    nlohmann::json to_json() const {
        nlohmann::json j = {{"steps", steps},           {"batch_size", batch_size},
                            {"lr", lr},                 {"seed", seed},
                            {"strategy", strategy.name()}, {"rank", rank},
                            {"eval_every", eval_every}, {"scaling", scaling},
                            {"preserve_output", preserve_output}, {"train_head", train_head}};
        if (strategy.needs_sigma()) j["sigma"] = strategy.sigma;
        return j;
    }
};

struct EvalPoint {
    std::int64_t step = 0;
    double loss = 0.0;
    double metric = 0.0;
};

struct RunReport {
    std::string strategy;
    double sigma = 0.0;
    std::size_t rank = 0;
    std::uint64_t seed = 0;
    std::int64_t steps = 0;
    std::int64_t steps_completed = 0;
    double lr = 0.0;
    std::size_t batch_size = 0;
    std::string metric;
    std::size_t trainable_parameters = 0;
    double base_metric = 0.0;
    double base_loss = 0.0;
    std::vector<double> train_loss;  // batch loss before each update
    std::vector<EvalPoint> eval;
    double final_loss = std::numeric_limits<double>::quiet_NaN();  // full training set
    double final_metric = std::numeric_limits<double>::quiet_NaN();  // eval split
    bool diverged = false;
    std::int64_t diverged_step = -1;
    std::string divergence_message;
    double wall_time_seconds = 0.0;
};

namespace detail {

inline nlohmann::json number_or_null(double v) {
    return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

inline double number_or_nan(const nlohmann::json& j) {
    return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

}  // namespace detail

inline nlohmann::json to_json(const RunReport& r) {
    nlohmann::json eval = nlohmann::json::array();
    for (const auto& e : r.eval) {
        eval.push_back({{"step", e.step}, {"loss", e.loss}, {"metric", e.metric}});
    }
    return {{"strategy", r.strategy},
            {"sigma", r.sigma},
            {"rank", r.rank},
            {"seed", r.seed},
            {"steps", r.steps},
            {"steps_completed", r.steps_completed},
            {"lr", r.lr},
            {"batch_size", r.batch_size},
            {"metric", r.metric},
            {"trainable_parameters", r.trainable_parameters},
            {"base_metric", r.base_metric},
            {"base_loss", r.base_loss},
            {"train_loss", r.train_loss},
            {"eval", eval},
            {"final_loss", detail::number_or_null(r.final_loss)},
            {"final_metric", detail::number_or_null(r.final_metric)},
            {"diverged", r.diverged},
            {"diverged_step", r.diverged_step},
            {"divergence_message", r.divergence_message},
            {"wall_time_seconds", r.wall_time_seconds}};
}

inline RunReport run_report_from_json(const nlohmann::json& j) {
    RunReport r;
    r.strategy = j.at("strategy").get<std::string>();
    r.sigma = j.at("sigma").get<double>();
    r.rank = j.at("rank").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.steps = j.at("steps").get<std::int64_t>();
    r.steps_completed = j.at("steps_completed").get<std::int64_t>();
    r.lr = j.at("lr").get<double>();
    r.batch_size = j.at("batch_size").get<std::size_t>();
    r.metric = j.at("metric").get<std::string>();
    r.trainable_parameters = j.at("trainable_parameters").get<std::size_t>();
    r.base_metric = j.at("base_metric").get<double>();
    r.base_loss = j.at("base_loss").get<double>();
    r.train_loss = j.at("train_loss").get<std::vector<double>>();
    for (const auto& e : j.at("eval")) {
        r.eval.push_back({e.at("step").get<std::int64_t>(), e.at("loss").get<double>(),
                          e.at("metric").get<double>()});
    }
    r.final_loss = detail::number_or_nan(j.at("final_loss"));
    r.final_metric = detail::number_or_nan(j.at("final_metric"));
    r.diverged = j.at("diverged").get<bool>();
    r.diverged_step = j.at("diverged_step").get<std::int64_t>();
    r.divergence_message = j.at("divergence_message").get<std::string>();
    r.wall_time_seconds = j.at("wall_time_seconds").get<double>();
    return r;
}

inline void save_run_report(const std::filesystem::path& path, const RunReport& r) {
    std::ofstream out(path);
    out << to_json(r).dump(2) << '\n';
    if (!out) throw IoError("cannot write " + path.string());
}

inline RunReport load_run_report(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return run_report_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

/// Seed of the adapter on one layer for a given run seed.
inline std::uint64_t adapter_seed(std::uint64_t run_seed, const std::string& layer_name) {
    return rng::derive_seed(run_seed, "adapter", layer_name);
}

/// The model with adapters on its adapted layers, plus optimizer state.
class AdaptedModel {
public:
    AdaptedModel(const ToyModel& model, const TrainConfig& cfg,
                 const std::vector<ApproxFactors>* factors)
        : model_(&model), head_(model.layers.back().weight) {
        const auto adapted = model.adapted_indices();
        if (factors && factors->size() != adapted.size()) {
            throw ValidationError("expected approximation factors for " +
                                  std::to_string(adapted.size()) + " adapted layers");
        }
        AdapterOptions opts;
        opts.scaling = cfg.scaling;
        opts.preserve_output = cfg.preserve_output;
        slot_.assign(model.layers.size(), -1);
        for (std::size_t n = 0; n < adapted.size(); ++n) {
            const auto& layer = model.layers[adapted[n]];
            std::optional<ApproxFactors> f;
            if (cfg.strategy.kind == StrategyKind::inilora) {
                if (!factors) throw ValidationError("inilora requires approximation factors");
                f = (*factors)[n];
            }
            adapters_.push_back(init_adapter(layer.weight, cfg.strategy, cfg.rank,
                                             adapter_seed(cfg.seed, layer.spec.name), f, opts));
            adam_a_.emplace_back(cfg.rank, layer.spec.cols);
            adam_b_.emplace_back(layer.spec.rows, cfg.rank);
            slot_[adapted[n]] = static_cast<int>(n);
        }
        if (cfg.train_head) head_adam_.emplace(head_.rows(), head_.cols());
    }

    std::size_t trainable_parameters() const {
        std::size_t n = head_adam_ ? head_.size() : 0;
        for (const auto& a : adapters_) n += a.trainable_parameters();
        return n;
    }

    const std::vector<AdaptedLinear>& adapters() const noexcept { return adapters_; }

    Matrix forward(const Matrix& x) const {
        Matrix h = x;
        const auto& layers = model_->layers;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            h = apply_layer(i, h);
            if (i + 1 < layers.size()) apply_activation(model_->spec.nonlinearity, h);
        }
        return h;
    }

    struct Gradients {
        double loss = 0.0;
        std::vector<AdapterGrads> adapters;  // one per adapted layer
        std::optional<Matrix> head;          // set when the head is trainable
    };

    /// Loss on (x, target) and the gradients of every trainable matrix.
    Gradients gradients(const Dataset& ds, const Matrix& x, const Matrix& target) const {
        const auto& layers = model_->layers;
        std::vector<Matrix> inputs;
        inputs.reserve(layers.size());
        Matrix h = x;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            inputs.push_back(h);
            h = apply_layer(i, h);
            if (i + 1 < layers.size()) apply_activation(model_->spec.nonlinearity, h);
        }
        LossValue loss = task_loss(ds, h, target);
        if (!std::isfinite(loss.loss)) {
            throw NonFiniteError("training loss is not finite");
        }

        Gradients out{loss.loss, {}, {}};
        std::vector<std::optional<AdapterGrads>> grads(adapters_.size());
        Matrix g = std::move(loss.grad);
        const std::size_t stop = first_adapted();
        for (std::size_t i = layers.size(); i-- > 0;) {
            if (i + 1 < layers.size()) {
                // inputs[i + 1] is this layer's activation output.
                activation_backward(model_->spec.nonlinearity, inputs[i + 1], g);
            }
            if (slot_[i] >= 0) {
                auto ag = adapter_grads(adapters_[slot_[i]], inputs[i], g);
                g = std::move(ag.grad_x);
                grads[slot_[i]] = std::move(ag);
            } else {
                const bool head = i + 1 == layers.size();
                if (head && head_adam_) out.head = matmul_tn(g, inputs[i]);
                if (i > stop) g = matmul(g, head ? head_ : layers[i].weight);
            }
            if (i == stop) break;
        }
        for (auto& ag : grads) out.adapters.push_back(std::move(*ag));
        return out;
    }

    /// One forward/backward/update pass; returns the batch loss before the update.
    double train_step(const Dataset& ds, const Matrix& x, const Matrix& target, double lr) {
        auto g = gradients(ds, x, target);
        for (std::size_t n = 0; n < adapters_.size(); ++n) {
            adam_a_[n].apply(adapters_[n].a(), g.adapters[n].grad_a, lr);
            adam_b_[n].apply(adapters_[n].b(), g.adapters[n].grad_b, lr);
        }
        if (head_adam_) head_adam_->apply(head_, *g.head, lr);
        return g.loss;
    }

    std::vector<AdaptedLinear>& adapters() noexcept { return adapters_; }
    Matrix& head() noexcept { return head_; }

private:
    Matrix apply_layer(std::size_t i, const Matrix& h) const {
        if (slot_[i] >= 0) return adapter_forward(adapters_[slot_[i]], h);
        const bool head = i + 1 == model_->layers.size();
        return linear_forward(head ? head_ : model_->layers[i].weight, h);
    }

    std::size_t first_adapted() const {
        for (std::size_t i = 0; i < slot_.size(); ++i) {
            if (slot_[i] >= 0) return i;
        }
        return slot_.size();
    }

    const ToyModel* model_;
    Matrix head_;
    std::vector<AdaptedLinear> adapters_;
    std::vector<AdamState> adam_a_;
    std::vector<AdamState> adam_b_;
    std::optional<AdamState> head_adam_;
    std::vector<int> slot_;
};

namespace detail {

inline Matrix gather_rows(const Matrix& m, const std::vector<std::size_t>& rows) {
    Matrix out(rows.size(), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto src = m.row(rows[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

/// Minibatch rows for each step: consecutive slices of per-epoch permutations.
class BatchSampler {
public:
    BatchSampler(std::size_t n, std::size_t batch, std::uint64_t seed)
        : n_(n), batch_(batch == 0 || batch >= n ? n : batch), seed_(seed) {}

    bool full() const noexcept { return batch_ == n_; }

    std::vector<std::size_t> next() {
        std::vector<std::size_t> rows;
        while (rows.size() < batch_) {
            if (pos_ == order_.size()) {
                order_ = rng::permutation(n_, rng::derive_seed(seed_, "batch", std::to_string(epoch_++)));
                pos_ = 0;
            }
            rows.push_back(order_[pos_++]);
        }
        return rows;
    }

private:
    std::size_t n_;
    std::size_t batch_;
    std::uint64_t seed_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
    std::uint64_t epoch_ = 0;
};

}  // namespace detail

/// Trains the adapters of `model` on `ds`. `factors` holds one entry per
/// adapted layer and is required for the inilora strategy.
///
/// A non-finite loss, gradient or activation stops the run; the report keeps
/// everything up to that point and is flagged diverged.
inline RunReport finetune(const ToyModel& model, const Dataset& ds, const TrainConfig& cfg,
                          const std::vector<ApproxFactors>* factors = nullptr) {
    cfg.validate();
    const auto started = std::chrono::steady_clock::now();
    RunReport report;
    report.strategy = cfg.strategy.name();
    report.sigma = cfg.strategy.needs_sigma() ? cfg.strategy.sigma : 0.0;
    report.rank = cfg.rank;
    report.seed = cfg.seed;
    report.steps = cfg.steps;
    report.lr = cfg.lr;
    report.batch_size = cfg.batch_size;
    report.metric = metric_name(ds);

    const Matrix base_eval = base_forward(model, ds.x_eval);
    report.base_metric = task_metric(ds, base_eval, ds.y_eval);
    report.base_loss = task_loss(ds, base_eval, ds.y_eval).loss;

    auto evaluate = [&](const AdaptedModel& m, std::int64_t step) {
        const Matrix y = m.forward(ds.x_eval);
        report.eval.push_back({step, task_loss(ds, y, ds.y_eval).loss,
                               task_metric(ds, y, ds.y_eval)});
    };

    std::int64_t t = 0;
    try {
        AdaptedModel m(model, cfg, factors);
        report.trainable_parameters = m.trainable_parameters();
        detail::BatchSampler sampler(ds.x_train.rows(), cfg.batch_size,
                                     rng::derive_seed(cfg.seed, "batches"));
        for (;; ++t) {
            if (t % cfg.eval_every == 0 || t == cfg.steps) evaluate(m, t);
            if (t == cfg.steps) break;
            const double lr = cfg.lr;
            if (sampler.full()) {
                report.train_loss.push_back(m.train_step(ds, ds.x_train, ds.y_train, lr));
            } else {
                const auto rows = sampler.next();
                report.train_loss.push_back(m.train_step(ds, detail::gather_rows(ds.x_train, rows),
                                                         detail::gather_rows(ds.y_train, rows), lr));
            }
        }
        report.steps_completed = cfg.steps;
        report.final_loss = task_loss(ds, m.forward(ds.x_train), ds.y_train).loss;
        report.final_metric = report.eval.back().metric;
    } catch (const NonFiniteError& e) {
        report.diverged = true;
        report.diverged_step = t;
        report.steps_completed = t;
        report.divergence_message = e.what();
    }
    report.wall_time_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return report;
}

}  // namespace inilora::harness
