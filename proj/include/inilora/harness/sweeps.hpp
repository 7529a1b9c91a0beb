#pragma once

// Report-generating sweeps over the toy model: approximation degree,
// initialization std, and initialization distribution. Each (setting, seed)
// cell is an independent fine-tuning run; rows carry no timing so repeated
// seeds give identical rows.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "inilora/approx.hpp"
#include "inilora/cache.hpp"
#include "inilora/harness/finetune.hpp"

namespace inilora::harness {

namespace fs = std::filesystem;

inline const std::vector<std::int64_t>& default_approx_steps() {
    static const std::vector<std::int64_t> steps{100, 500, 1000, 2000, 4000, 10000, 20000};
    return steps;
}

inline const std::vector<double>& default_sigma_grid() {
    static const std::vector<double> sigmas{0.0001, 0.001, 0.01, 0.1, 0.5, 1.0};
    return sigmas;
}

struct DistributionChoice {
    std::string label;
    InitStrategy strategy;
};

/// normal(sigma_bar), normal(0.5), kaiming-normal, kaiming-uniform, lora.
inline std::vector<DistributionChoice> default_distribution_grid(double sigma_bar) {
    return {{"normal(sigma_bar)", InitStrategy::iter0(sigma_bar)},
            {"normal(0.5)", InitStrategy::alpha(0.5)},
            {"kaiming-normal", InitStrategy::beta_kn()},
            {"kaiming-uniform", InitStrategy::beta_ku()},
            {"lora", InitStrategy::lora()}};
}

inline DistributionChoice parse_distribution(std::string_view label, double sigma_bar) {
    for (auto& c : default_distribution_grid(sigma_bar)) {
        if (c.label == label) return c;
    }
    if (label.starts_with("normal(") && label.ends_with(")")) {
        const std::string inner(label.substr(7, label.size() - 8));
        char* end = nullptr;
        const double s = std::strtod(inner.c_str(), &end);
        if (end && *end == '\0' && s > 0.0) return {std::string(label), InitStrategy::alpha(s)};
    }
    throw ValidationError("unknown distribution '" + std::string(label) + "'");
}

struct SweepRow {
    std::string experiment;
    std::string setting;
    std::uint64_t seed = 0;
    std::string strategy;
    double sigma = 0.0;
    std::int64_t approx_step = -1;
    double approx_mse = std::numeric_limits<double>::quiet_NaN();
    std::size_t rank = 0;
    std::int64_t train_steps = 0;
    std::size_t trainable_parameters = 0;
    std::string metric;
    double base_metric = 0.0;
    double final_loss = std::numeric_limits<double>::quiet_NaN();
    double final_metric = std::numeric_limits<double>::quiet_NaN();
    bool diverged = false;
};

struct SummaryRow {
    std::string setting;
    std::size_t runs = 0;
    std::size_t diverged = 0;
    double metric_mean = std::numeric_limits<double>::quiet_NaN();
    double metric_std = std::numeric_limits<double>::quiet_NaN();
    double loss_mean = std::numeric_limits<double>::quiet_NaN();
    double loss_std = std::numeric_limits<double>::quiet_NaN();
    double approx_mse_mean = std::numeric_limits<double>::quiet_NaN();
};

struct CurvePoint {
    std::string series;
    std::uint64_t seed = 0;
    std::int64_t step = 0;
    double value = 0.0;
};

struct SweepResult {
    std::string experiment;
    std::vector<SweepRow> rows;
    std::vector<CurvePoint> curves;  // training loss per step, long format
    std::vector<std::string> warnings;
};

using SweepProgress = std::function<void(const std::string&)>;

struct SweepOptions {
    TrainConfig train;  // strategy is overridden per setting
    std::vector<std::uint64_t> seeds{0, 1, 2};
    std::size_t jobs = 1;
    SweepProgress progress;
};

/// Runs fn(0..n-1) on up to `jobs` threads; rethrows the first failure.
inline void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_lock;
    auto worker = [&] {
        for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> g(failure_lock);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    const std::size_t workers = std::max<std::size_t>(1, std::min(jobs, n));
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    }
    if (failure) std::rethrow_exception(failure);
}

inline std::string format_setting(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

namespace detail {

struct Cell {
    std::string setting;
    std::uint64_t seed = 0;
    InitStrategy strategy;
    std::int64_t approx_step = -1;
    double approx_mse = std::numeric_limits<double>::quiet_NaN();
    const std::vector<ApproxFactors>* factors = nullptr;
};

inline SweepResult run_cells(const std::string& experiment, const ToyModel& model,
                             const Dataset& task, const SweepOptions& opts,
                             const std::vector<Cell>& cells) {
    std::vector<RunReport> reports(cells.size());
    std::mutex progress_lock;
    parallel_for(cells.size(), opts.jobs, [&](std::size_t i) {
        TrainConfig cfg = opts.train;
        cfg.seed = cells[i].seed;
        cfg.strategy = cells[i].strategy;
        reports[i] = finetune(model, task, cfg, cells[i].factors);
        if (opts.progress) {
            std::lock_guard<std::mutex> g(progress_lock);
            opts.progress(experiment + " " + cells[i].setting + " seed " +
                          std::to_string(cells[i].seed) +
                          (reports[i].diverged ? ": diverged"
                                               : ": " + reports[i].metric + " " +
                                                     format_double(reports[i].final_metric)));
        }
    });

    SweepResult out{experiment, {}, {}, {}};
    for (std::size_t i = 0; i < cells.size(); ++i) {
        const auto& c = cells[i];
        const auto& r = reports[i];
        SweepRow row;
        row.experiment = experiment;
        row.setting = c.setting;
        row.seed = c.seed;
        row.strategy = r.strategy;
        row.sigma = r.sigma;
        row.approx_step = c.approx_step;
        row.approx_mse = c.approx_mse;
        row.rank = r.rank;
        row.train_steps = r.steps;
        row.trainable_parameters = r.trainable_parameters;
        row.metric = r.metric;
        row.base_metric = r.base_metric;
        row.final_loss = r.final_loss;
        row.final_metric = r.final_metric;
        row.diverged = r.diverged;
        out.rows.push_back(std::move(row));
        for (std::size_t t = 0; t < r.train_loss.size(); ++t) {
            out.curves.push_back({c.setting, c.seed, static_cast<std::int64_t>(t), r.train_loss[t]});
        }
    }
    return out;
}

}  // namespace detail

/// Approximation with checkpoints for every adapted layer, keyed by the
/// adapter seed so that the step-0 checkpoint coincides with inilora-iter0.
struct ApproxDegreeConfig {
    std::vector<std::int64_t> checkpoint_steps = default_approx_steps();
    ApproxConfig approx{};  // rank and seed are set per run; steps defaults to the last checkpoint
    std::optional<std::int64_t> approx_steps;
};

/// approximate() on one toy layer, through the cache when one is given.
inline ApproxResult approximate_toy_layer(const ToyModel& model, std::size_t layer_index,
                                          const ApproxConfig& cfg, ApproxCache* cache) {
    const auto& layer = model.layers[layer_index];
    if (!cache) return approximate(layer.weight, cfg);
    const ManifestLayer ml{layer.spec.name, layer.spec.role, layer.spec.name + ".wtn1",
                           layer.spec.rows, layer.spec.cols};
    const std::string w0_hash = content_hash(layer.weight);
    ApproxConfig resolved = cfg;
    if (!resolved.init_sigma) resolved.init_sigma = layer_stats(layer.weight, "w0").sigma;
    const auto key = CacheKey::from(model.spec.model_id, ml, resolved, cfg.seed, w0_hash);
    if (auto hit = cache->lookup(key, cfg.checkpoint_steps)) {
        auto t = cache->load(*hit);
        return ApproxResult{std::move(t.a),           std::move(t.b),
                            std::move(t.residual),    hit->final_frobenius_sq,
                            hit->final_mse,           std::move(t.trajectory),
                            std::move(t.checkpoints), resolved,
                            w0_hash,                  0};
    }
    auto result = approximate(layer.weight, resolved);
    cache->store(key, result);
    return result;
}

inline SweepResult sweep_approx_degree(const ToyModel& model, const Dataset& task,
                                       const SweepOptions& opts, const ApproxDegreeConfig& deg,
                                       ApproxCache* cache = nullptr) {
    if (deg.checkpoint_steps.empty()) throw ValidationError("no checkpoint steps given");
    ApproxConfig base = deg.approx;
    base.rank = opts.train.rank;
    base.steps = deg.approx_steps.value_or(
        *std::max_element(deg.checkpoint_steps.begin(), deg.checkpoint_steps.end()));
    if (!base.init_sigma) base.init_sigma = model.adapted_stats().sigma_bar;
    base.checkpoint_steps.clear();
    for (auto s : deg.checkpoint_steps) {
        if (s >= 0 && s <= base.steps) base.checkpoint_steps.push_back(s);
    }
    base.validate();

    const auto adapted = model.adapted_indices();
    // factors[seed][step] -> one ApproxFactors per adapted layer
    std::vector<std::map<std::int64_t, std::vector<ApproxFactors>>> factors(opts.seeds.size());
    std::vector<std::map<std::int64_t, std::vector<double>>> mses(opts.seeds.size());
    std::vector<std::vector<std::vector<ApproxCheckpoint>>> ckpts(
        opts.seeds.size(), std::vector<std::vector<ApproxCheckpoint>>(adapted.size()));
    std::mutex progress_lock;
    parallel_for(opts.seeds.size() * adapted.size(), opts.jobs, [&](std::size_t job) {
        const std::size_t s = job / adapted.size(), n = job % adapted.size();
        ApproxConfig cfg = base;
        cfg.seed = adapter_seed(opts.seeds[s], model.layers[adapted[n]].spec.name);
        ckpts[s][n] = approximate_toy_layer(model, adapted[n], cfg, cache).checkpoints;
        if (opts.progress) {
            std::lock_guard<std::mutex> g(progress_lock);
            opts.progress("approximated " + model.layers[adapted[n]].spec.name + " seed " +
                          std::to_string(opts.seeds[s]));
        }
    });
    for (std::size_t s = 0; s < opts.seeds.size(); ++s) {
        for (std::size_t n = 0; n < adapted.size(); ++n) {
            const Matrix& w0 = model.layers[adapted[n]].weight;
            for (const auto& c : ckpts[s][n]) {
                factors[s][c.step].push_back(ApproxFactors::from_checkpoint(w0, c));
                mses[s][c.step].push_back(c.mse);
            }
        }
    }

    std::vector<detail::Cell> cells;
    std::vector<std::string> warnings;
    for (auto step : deg.checkpoint_steps) {
        for (std::size_t s = 0; s < opts.seeds.size(); ++s) {
            auto it = factors[s].find(step);
            if (it == factors[s].end() || it->second.size() != adapted.size()) {
                if (s == 0) {
                    warnings.push_back("missing checkpoint at step " + std::to_string(step) +
                                       "; row skipped");
                    if (opts.progress) opts.progress("warning: " + warnings.back());
                }
                continue;
            }
            double m = 0.0;
            for (double v : mses[s][step]) m += v;
            m /= static_cast<double>(mses[s][step].size());
            cells.push_back({std::to_string(step), opts.seeds[s], InitStrategy::inilora(), step, m,
                             &it->second});
        }
    }
    auto out = detail::run_cells("sweep-approx", model, task, opts, cells);
    out.warnings = std::move(warnings);
    return out;
}

/// A, B ~ N(0, sigma^2) for each sigma, with the residual folded in.
inline SweepResult sweep_sigma(const ToyModel& model, const Dataset& task, const SweepOptions& opts,
                               const std::vector<double>& sigmas = default_sigma_grid()) {
    std::vector<detail::Cell> cells;
    for (double sigma : sigmas) {
        if (!(sigma > 0.0) || !std::isfinite(sigma)) {
            throw ValidationError("sigma values must be positive");
        }
        for (auto seed : opts.seeds) {
            cells.push_back({format_setting(sigma), seed, InitStrategy::alpha(sigma)});
        }
    }
    return detail::run_cells("sweep-sigma", model, task, opts, cells);
}

inline SweepResult sweep_distributions(const ToyModel& model, const Dataset& task,
                                       const SweepOptions& opts,
                                       const std::vector<DistributionChoice>& grid) {
    std::vector<detail::Cell> cells;
    for (const auto& choice : grid) {
        for (auto seed : opts.seeds) cells.push_back({choice.label, seed, choice.strategy});
    }
    return detail::run_cells("sweep-dist", model, task, opts, cells);
}

// ---------------------------------------------------------------------------
// Aggregation and files.

inline std::vector<SummaryRow> summarize(const std::vector<SweepRow>& rows) {
    std::vector<SummaryRow> out;
    std::map<std::string, std::size_t> index;
    std::vector<std::vector<const SweepRow*>> groups;
    for (const auto& r : rows) {
        auto [it, inserted] = index.emplace(r.setting, groups.size());
        if (inserted) {
            groups.emplace_back();
            out.push_back({r.setting});
        }
        groups[it->second].push_back(&r);
    }
    auto mean_std = [](const std::vector<double>& v) {
        if (v.empty()) {
            return std::pair{std::numeric_limits<double>::quiet_NaN(),
                             std::numeric_limits<double>::quiet_NaN()};
        }
        double m = 0.0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        double ss = 0.0;
        for (double x : v) ss += (x - m) * (x - m);
        const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
        return std::pair{m, sd};
    };
    for (std::size_t g = 0; g < groups.size(); ++g) {
        std::vector<double> metric, loss, amse;
        for (const auto* r : groups[g]) {
            ++out[g].runs;
            if (std::isfinite(r->approx_mse)) amse.push_back(r->approx_mse);
            if (r->diverged) {
                ++out[g].diverged;
                continue;
            }
            metric.push_back(r->final_metric);
            loss.push_back(r->final_loss);
        }
        std::tie(out[g].metric_mean, out[g].metric_std) = mean_std(metric);
        std::tie(out[g].loss_mean, out[g].loss_std) = mean_std(loss);
        if (!amse.empty()) out[g].approx_mse_mean = mean_std(amse).first;
    }
    return out;
}

inline const std::vector<std::string>& raw_csv_columns() {
    static const std::vector<std::string> cols{
        "experiment", "setting",    "seed",   "strategy",    "sigma",       "approx_step",
        "approx_mse", "rank",       "train_steps", "trainable_parameters", "metric",
        "base_metric", "final_loss", "final_metric", "diverged"};
    return cols;
}

inline const std::vector<std::string>& summary_csv_columns() {
    static const std::vector<std::string> cols{"setting",   "runs",     "diverged",
                                               "metric_mean", "metric_std", "loss_mean",
                                               "loss_std",  "approx_mse_mean"};
    return cols;
}

namespace detail {

inline std::string csv_number(double v) { return std::isfinite(v) ? format_double(v) : ""; }

inline std::string join(const std::vector<std::string>& v, char sep = ',') {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += sep;
        out += v[i];
    }
    return out;
}

inline std::vector<std::string> split(const std::string& line, char sep = ',') {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

inline double parse_number(const std::string& s) {
    if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (*end != '\0') throw IoError("malformed number '" + s + "'");
    return v;
}

inline void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw IoError("cannot write " + path.string());
}

}  // namespace detail

inline std::string raw_csv(const std::vector<SweepRow>& rows) {
    std::string out = detail::join(raw_csv_columns()) + "\n";
    for (const auto& r : rows) {
        out += detail::join({r.experiment, r.setting, std::to_string(r.seed), r.strategy,
                             detail::csv_number(r.sigma),
                             r.approx_step >= 0 ? std::to_string(r.approx_step) : "",
                             detail::csv_number(r.approx_mse), std::to_string(r.rank),
                             std::to_string(r.train_steps), std::to_string(r.trainable_parameters),
                             r.metric, detail::csv_number(r.base_metric),
                             detail::csv_number(r.final_loss), detail::csv_number(r.final_metric),
                             r.diverged ? "1" : "0"}) +
               "\n";
    }
    return out;
}

inline std::vector<SweepRow> parse_raw_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    if (detail::split(line) != raw_csv_columns()) throw IoError("raw.csv: unexpected header");
    std::vector<SweepRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = detail::split(line);
        if (f.size() != raw_csv_columns().size()) throw IoError("raw.csv: wrong field count");
        SweepRow r;
        r.experiment = f[0];
        r.setting = f[1];
        r.seed = std::stoull(f[2]);
        r.strategy = f[3];
        r.sigma = detail::parse_number(f[4]);
        r.approx_step = f[5].empty() ? -1 : std::stoll(f[5]);
        r.approx_mse = detail::parse_number(f[6]);
        r.rank = std::stoull(f[7]);
        r.train_steps = std::stoll(f[8]);
        r.trainable_parameters = std::stoull(f[9]);
        r.metric = f[10];
        r.base_metric = detail::parse_number(f[11]);
        r.final_loss = detail::parse_number(f[12]);
        r.final_metric = detail::parse_number(f[13]);
        r.diverged = f[14] == "1";
        rows.push_back(std::move(r));
    }
    return rows;
}

inline std::string summary_csv(const std::vector<SummaryRow>& rows) {
    std::string out = detail::join(summary_csv_columns()) + "\n";
    for (const auto& s : rows) {
        out += detail::join({s.setting, std::to_string(s.runs), std::to_string(s.diverged),
                             detail::csv_number(s.metric_mean), detail::csv_number(s.metric_std),
                             detail::csv_number(s.loss_mean), detail::csv_number(s.loss_std),
                             detail::csv_number(s.approx_mse_mean)}) +
               "\n";
    }
    return out;
}

inline std::string curves_csv(const std::vector<CurvePoint>& points) {
    std::string out = "series,seed,step,value\n";
    for (const auto& p : points) {
        out += p.series + "," + std::to_string(p.seed) + "," + std::to_string(p.step) + "," +
               format_double(p.value) + "\n";
    }
    return out;
}

inline nlohmann::json summary_json(const std::vector<SummaryRow>& rows) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& s : rows) {
        out.push_back({{"setting", s.setting},
                       {"runs", s.runs},
                       {"diverged", s.diverged},
                       {"metric_mean", detail::number_or_null(s.metric_mean)},
                       {"metric_std", detail::number_or_null(s.metric_std)},
                       {"loss_mean", detail::number_or_null(s.loss_mean)},
                       {"loss_std", detail::number_or_null(s.loss_std)},
                       {"approx_mse_mean", detail::number_or_null(s.approx_mse_mean)}});
    }
    return out;
}

/// raw.csv, summary.csv, curves.csv and report.json under `dir`.
inline void write_sweep(const fs::path& dir, const SweepResult& result,
                        const nlohmann::json& config) {
    fs::create_directories(dir);
    const auto summary = summarize(result.rows);
    detail::write_text(dir / "raw.csv", raw_csv(result.rows));
    detail::write_text(dir / "summary.csv", summary_csv(summary));
    detail::write_text(dir / "curves.csv", curves_csv(result.curves));
    const nlohmann::json report = {{"experiment", result.experiment},
                                   {"config", config},
                                   {"rows", result.rows.size()},
                                   {"summary", summary_json(summary)},
                                   {"warnings", result.warnings},
                                   {"files", {"raw.csv", "summary.csv", "curves.csv"}}};
    detail::write_text(dir / "report.json", report.dump(2) + "\n");
}

}  // namespace inilora::harness
