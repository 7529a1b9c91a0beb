#pragma once

// Command-line front end. Every run writes into <out>/<command>/<run-id>/ and
// starts by echoing its resolved settings to config.json; passing that file
// back through --config reproduces the run. Explicit flags win over the file.
//
// Exit codes: 0 success, 1 invalid input or usage, 2 runtime failure.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "inilora/adapters.hpp"
#include "inilora/approx.hpp"
#include "inilora/cache.hpp"
#include "inilora/driver.hpp"
#include "inilora/harness.hpp"
#include "inilora/manifest.hpp"
#include "inilora/stats.hpp"

namespace inilora::cli {

namespace fs = std::filesystem;
using nlohmann::json;

/// Flag values that can also come from a config file and are echoed back.
class Bindings {
public:
    template <typename T>
    CLI::Option* option(CLI::App* app, const std::string& key, T& var, const std::string& desc) {
        auto* opt = app->add_option("--" + key, var, desc)->capture_default_str();
        if constexpr (is_vector<T>::value) opt->delimiter(',');
        add(key, opt, [&var](const json& j) { var = j.get<T>(); }, [&var] { return json(var); });
        return opt;
    }

    CLI::Option* flag(CLI::App* app, const std::string& key, bool& var, const std::string& desc) {
        auto* opt = app->add_flag("--" + key, var, desc);
        add(key, opt, [&var](const json& j) { var = j.get<bool>(); }, [&var] { return json(var); });
        return opt;
    }

    CLI::Option* optional(CLI::App* app, const std::string& key, std::optional<double>& var,
                          const std::string& desc) {
        auto* opt = app->add_option_function<double>(
            "--" + key, [&var](const double& v) { var = v; }, desc);
        add(key, opt, [&var](const json& j) { var = j.is_null() ? std::nullopt : std::optional(j.get<double>()); },
            [&var] { return var ? json(*var) : json(nullptr); });
        return opt;
    }

    /// Values from `cfg` for every option not given on the command line.
    void apply(const json& cfg, const std::string& command) const {
        for (const auto& [key, value] : cfg.items()) {
            if (key == "command") {
                if (value != command) {
                    throw ValidationError("config file is for '" + value.get<std::string>() +
                                          "', not '" + command + "'");
                }
                continue;
            }
            const Entry* e = find(key);
            if (!e) throw ValidationError("config file: unknown key '" + key + "'");
            if (e->opt->count() > 0) continue;
            try {
                e->set(value);
                from_config_.push_back(key);
            } catch (const json::exception& ex) {
                throw ValidationError("config file: bad value for '" + key + "': " + ex.what());
            }
        }
    }

    /// Marks a key that must come from the command line or the config file.
    void require(const std::string& key) { required_.push_back(key); }

    void check_required() const {
        for (const auto& key : required_) {
            const Entry* e = find(key);
            const bool from_cfg =
                std::find(from_config_.begin(), from_config_.end(), key) != from_config_.end();
            if (e->opt->count() == 0 && !from_cfg) throw CLI::RequiredError("--" + key);
        }
    }

    json echo(const std::string& command) const {
        json out = {{"command", command}};
        for (const auto& e : entries_) out[e.key] = e.get();
        return out;
    }


private:
    template <typename T>
    struct is_vector : std::false_type {};
    template <typename T>
    struct is_vector<std::vector<T>> : std::true_type {};

    struct Entry {
        std::string key;
        CLI::Option* opt;
        std::function<void(const json&)> set;
        std::function<json()> get;
    };

    void add(const std::string& key, CLI::Option* opt, std::function<void(const json&)> set,
             std::function<json()> get) {
        entries_.push_back({key, opt, std::move(set), std::move(get)});
    }

    const Entry* find(const std::string& key) const {
        for (const auto& e : entries_) {
            if (e.key == key) return &e;
        }
        return nullptr;
    }

    std::vector<Entry> entries_;
    std::vector<std::string> required_;
    mutable std::vector<std::string> from_config_;
};

struct Globals {
    std::uint64_t seed = 0;
    std::string out = "out";
    std::string cache = "inilora-cache";
    std::string run_id;
    std::string config;
};

inline std::string default_run_id() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
    return buf;
}

inline void log(const std::string& command, const std::string& msg) {
    std::cerr << "[" << command << "] " << msg << std::endl;
}

inline void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    out << j.dump(2) << '\n';
    if (!out) throw IoError("cannot write " + path.string());
}

inline std::vector<std::string> expand_targets(const std::vector<std::string>& targets) {
    if (targets.size() == 1 && targets[0] == "all") return {};
    return targets;
}

// ---------------------------------------------------------------------------
// Flag groups shared by several commands.

struct ApproxFlags {
    std::size_t rank = 8;
    std::int64_t steps = 20000;
    double lr = 5e-4;
    std::int64_t step_size = 5000;
    double gamma = 0.5;
    double init_mu = 0.0;
    std::optional<double> init_sigma;
    std::int64_t trajectory_stride = 100;
    std::vector<std::int64_t> checkpoint_steps;

    ApproxConfig config(std::uint64_t seed) const {
        ApproxConfig c;
        c.rank = rank;
        c.steps = steps;
        c.schedule = {lr, step_size, gamma};
        c.init_mu = init_mu;
        c.init_sigma = init_sigma;
        c.seed = seed;
        c.trajectory_stride = trajectory_stride;
        c.checkpoint_steps = checkpoint_steps;
        return c;
    }
};

/// --rank --steps --lr --step-size --gamma --init-mu --init-sigma --trajectory-stride,
/// with an optional prefix for commands that also train.
inline void add_approx_flags(CLI::App* app, Bindings& b, ApproxFlags& f, const std::string& prefix,
                             bool with_rank) {
    if (with_rank) b.option(app, prefix + "rank", f.rank, "factor rank r");
    b.option(app, prefix + "steps", f.steps, "optimization steps");
    b.option(app, prefix + "lr", f.lr, "Adam learning rate");
    b.option(app, prefix + "step-size", f.step_size, "StepLR period");
    b.option(app, prefix + "gamma", f.gamma, "StepLR decay factor");
    b.option(app, prefix + "init-mu", f.init_mu, "mean of the initial factors");
    b.optional(app, prefix + "init-sigma", f.init_sigma,
               "std of the initial factors (default: mean std of the target layers)");
    b.option(app, prefix + "trajectory-stride", f.trajectory_stride, "trajectory sampling stride");
}

struct ToyFlags {
    harness::ToyModelSpec model;
    harness::TaskSpec task;
    std::string nonlinearity = "tanh";
    std::string task_kind = "matrix-regression";
    std::vector<std::string> adapted = {"query", "value"};
    std::uint64_t model_seed = 0;
    std::uint64_t task_seed = 0;

    harness::ToyModel build_model() {
        model.nonlinearity = harness::parse_nonlinearity(nonlinearity);
        model.adapted_roles.clear();
        for (const auto& r : adapted) model.adapted_roles.push_back(parse_role(r));
        model.base_seed = model_seed;
        return harness::make_toy_model(model);
    }

    harness::Dataset build_task(const harness::ToyModel& m) {
        task.kind = harness::parse_task_kind(task_kind);
        task.seed = task_seed;
        return harness::make_task(m, task);
    }
};

inline void add_model_flags(CLI::App* app, Bindings& b, ToyFlags& f) {
    b.option(app, "input-dim", f.model.input_dim, "toy model input width");
    b.option(app, "hidden-dim", f.model.hidden_dim, "toy model hidden width");
    b.option(app, "output-dim", f.model.output_dim, "toy model output width / classes");
    b.option(app, "blocks", f.model.blocks, "number of query/value blocks");
    b.option(app, "nonlinearity", f.nonlinearity, "tanh or relu");
    b.option(app, "adapted", f.adapted, "roles that get adapters");
    b.option(app, "model-seed", f.model_seed, "seed of the base weights");
    b.option(app, "model-id", f.model.model_id, "model id used in cache keys");
}

inline void add_task_flags(CLI::App* app, Bindings& b, ToyFlags& f) {
    b.option(app, "task", f.task_kind, "matrix-regression or token-classification");
    b.option(app, "n-train", f.task.n_train, "training rows");
    b.option(app, "n-eval", f.task.n_eval, "evaluation rows");
    b.option(app, "delta-rank", f.task.delta_rank, "rank of the teacher shift (0 = null task)");
    b.option(app, "delta-scale", f.task.delta_scale, "std of the teacher shift factors");
    b.option(app, "task-seed", f.task_seed, "seed of the task data");
}

struct TrainFlags {
    harness::TrainConfig cfg;
    std::string strategy = "lora";
    std::optional<double> sigma;
    bool no_residual = false;
};

inline void add_train_flags(CLI::App* app, Bindings& b, TrainFlags& f, bool with_strategy) {
    if (with_strategy) {
        b.option(app, "strategy", f.strategy,
                 "lora | inilora | inilora-alpha | inilora-beta-kn | inilora-beta-ku | inilora-iter0");
        b.optional(app, "sigma", f.sigma,
                   "std for inilora-alpha (default 0.5) or inilora-iter0 (default sigma_bar)");
    }
    b.option(app, "rank", f.cfg.rank, "adapter rank");
    b.option(app, "train-steps", f.cfg.steps, "fine-tuning steps");
    b.option(app, "batch-size", f.cfg.batch_size, "minibatch rows (0 = full batch)");
    b.option(app, "train-lr", f.cfg.lr, "fine-tuning learning rate");
    b.option(app, "eval-every", f.cfg.eval_every, "evaluation period in steps");
    b.option(app, "scaling", f.cfg.scaling, "adapter scaling");
    b.flag(app, "no-residual", f.no_residual,
           "keep W0 frozen for alpha/beta/iter0 instead of folding in -BA");
    b.flag(app, "train-head", f.cfg.train_head, "also train the output head");
}

inline InitStrategy resolve_strategy(const std::string& name, std::optional<double> sigma,
                                     double sigma_bar) {
    auto s = parse_strategy(name, sigma_bar);
    if (sigma && s.needs_sigma()) s.sigma = *sigma;
    return s;
}

// ---------------------------------------------------------------------------

class Runner {
public:
    Runner() : app_("Low-rank adapter initialization toolkit", "inilora") {
        app_.set_version_flag("--version", "inilora 0.1.0");
        app_.require_subcommand(1);
        app_.fallthrough();
        b_.option(&app_, "seed", g_.seed, "base random seed");
        b_.option(&app_, "out", g_.out, "output root directory");
        b_.option(&app_, "cache", g_.cache, "approximation cache directory");
        app_.add_option("--run-id", g_.run_id, "output sub-directory name (default: UTC timestamp)");
        app_.add_option("--config", g_.config, "JSON config file (same schema as config.json)");
        setup_stats();
        setup_approx();
        setup_init();
        setup_make_toy();
        setup_train();
        setup_sweep_approx();
        setup_sweep_sigma();
        setup_sweep_dist();
        setup_report();
    }

    int run(int argc, char** argv) {
        try {
            app_.parse(argc, argv);
        } catch (const CLI::ParseError& e) {
            const int code = app_.exit(e);
            return code == 0 ? 0 : 1;
        }
        CLI::App* sub = app_.get_subcommands().front();
        const std::string command = sub->get_name();
        try {
            if (!g_.config.empty()) {
                std::ifstream in(g_.config);
                if (!in) throw ValidationError("cannot open config file " + g_.config);
                json cfg;
                try {
                    cfg = json::parse(in);
                } catch (const json::exception& e) {
                    throw ValidationError("config file " + g_.config + ": " + e.what());
                }
                bindings_for(command).apply(cfg, command);
            }
            bindings_for(command).check_required();
            if (g_.run_id.empty()) g_.run_id = default_run_id();
            return actions_.at(command)();
        } catch (const ValidationError& e) {
            log(command, std::string("error: ") + e.what());
            return 1;
        } catch (const CLI::Error& e) {
            log(command, std::string("error: ") + e.what());
            return 1;
        } catch (const std::exception& e) {
            log(command, std::string("failed: ") + e.what());
            return 2;
        }
    }

private:
    Bindings& bindings_for(const std::string& command) { return sub_bindings_.at(command); }

    /// Registers a subcommand whose Bindings start with copies of the globals.
    CLI::App* command(const std::string& name, const std::string& desc, Bindings*& b,
                      std::function<int()> action) {
        CLI::App* sub = app_.add_subcommand(name, desc);
        sub_bindings_.emplace(name, b_);
        b = &sub_bindings_.at(name);
        actions_.emplace(name, std::move(action));
        return sub;
    }

    fs::path run_dir(const std::string& command) {
        const fs::path dir = fs::path(g_.out) / command / g_.run_id;
        fs::create_directories(dir);
        write_json(dir / "config.json", bindings_for(command).echo(command));
        return dir;
    }

    std::function<void(const std::string&)> progress(const std::string& command) {
        return [command](const std::string& m) { log(command, m); };
    }

    // -- stats -------------------------------------------------------------
    struct StatsFlags {
        std::string manifest;
        std::vector<std::string> targets{"query", "value"};
    } stats_;

    void setup_stats() {
        Bindings* b = nullptr;
        auto* sub = command("stats", "per-layer and global weight statistics", b, [this] {
            const auto manifest = load_manifest(stats_.manifest);
            const auto layers = select_layers(manifest, expand_targets(stats_.targets));
            if (layers.empty()) throw ValidationError("no manifest layers match the targets");
            std::vector<LayerStats> per_layer;
            for (const auto& l : layers) {
                per_layer.push_back(layer_stats(manifest.load_layer(l).matrix, l.name));
            }
            const auto global = global_init(per_layer);
            const auto dir = run_dir("stats");
            write_json(dir / "stats.json", stats_report(manifest.model_id, per_layer, global));
            log("stats", std::to_string(per_layer.size()) + " layers, mu_bar " +
                             format_double(global.mu_bar) + ", sigma_bar " +
                             format_double(global.sigma_bar) + " -> " +
                             (dir / "stats.json").string());
            return 0;
        });
        b->option(sub, "manifest", stats_.manifest, "model manifest JSON");
        b->require("manifest");
        b->option(sub, "targets", stats_.targets, "layer roles or names to include ('all' for every layer)");
    }

    // -- approx ------------------------------------------------------------
    struct ApproxCmd {
        std::string manifest;
        std::vector<std::string> targets{"query", "value"};
        std::size_t concurrency = kDefaultConcurrency;
        ApproxFlags approx;
    } approx_;

    void setup_approx() {
        Bindings* b = nullptr;
        auto* sub = command("approx", "factorize target layers into the cache", b, [this] {
            const auto manifest = load_manifest(approx_.manifest);
            ApproxCache cache(g_.cache);
            const auto report =
                approximate_model(manifest, expand_targets(approx_.targets),
                                  approx_.approx.config(g_.seed), approx_.concurrency, cache,
                                  progress("approx"));
            const auto dir = run_dir("approx");
            json entries = json::array();
            for (const auto& e : report.entries) entries.push_back(e.summary());
            json failures = json::array();
            for (const auto& f : report.failures) {
                failures.push_back({{"layer", f.layer_name}, {"error", f.message}});
            }
            write_json(dir / "approx.json", {{"model_id", manifest.model_id},
                                             {"init_sigma", report.init_sigma},
                                             {"cache_hits", report.cache_hits},
                                             {"computed", report.computed},
                                             {"steps_executed", report.steps_executed},
                                             {"entries", entries},
                                             {"failures", failures}});
            log("approx", std::to_string(report.entries.size()) + " layers ready (" +
                              std::to_string(report.cache_hits) + " cache hits), " +
                              std::to_string(report.failures.size()) + " failed");
            return report.ok() ? 0 : 2;
        });
        b->option(sub, "manifest", approx_.manifest, "model manifest JSON");
        b->require("manifest");
        b->option(sub, "targets", approx_.targets, "layer roles or names ('all' for every layer)");
        b->option(sub, "concurrency", approx_.concurrency, "layers approximated in parallel");
        add_approx_flags(sub, *b, approx_.approx, "", true);
        b->option(sub, "checkpoint-steps", approx_.approx.checkpoint_steps,
                  "steps at which to keep (A, B) snapshots");
    }

    // -- init --------------------------------------------------------------
    struct InitCmd {
        std::string manifest;
        std::string layer;
        std::vector<std::string> targets{"query", "value"};
        std::string strategy = "inilora";
        std::optional<double> sigma;
        double scaling = 1.0;
        bool no_residual = false;
        std::size_t concurrency = kDefaultConcurrency;
        ApproxFlags approx;
    } init_;

    void setup_init() {
        Bindings* b = nullptr;
        auto* sub = command("init", "build one adapted layer and save it", b, [this] {
            const auto manifest = load_manifest(init_.manifest);
            const auto& layer = manifest.find(init_.layer);
            const auto w0 = manifest.load_layer(layer);

            std::vector<LayerStats> stats;
            for (const auto& l : select_layers(manifest, expand_targets(init_.targets))) {
                stats.push_back(layer_stats(manifest.load_layer(l).matrix, l.name));
            }
            if (stats.empty()) throw ValidationError("no manifest layers match the targets");
            const double sigma_bar = global_init(stats).sigma_bar;

            const auto strategy = resolve_strategy(init_.strategy, init_.sigma, sigma_bar);
            AdapterOptions opts;
            opts.scaling = init_.scaling;
            opts.preserve_output = !init_.no_residual;
            opts.w0_dtype = w0.dtype;

            std::optional<ApproxFactors> factors;
            std::string key_digest;
            if (strategy.kind == StrategyKind::inilora) {
                auto cfg = init_.approx.config(g_.seed);
                if (!cfg.init_sigma) cfg.init_sigma = sigma_bar;
                ApproxCache cache(g_.cache);
                const auto report = approximate_model(manifest, {layer.name}, cfg, 1, cache,
                                                      progress("init"));
                if (!report.ok()) throw IoError(report.failures.front().message);
                const auto& entry = report.entries.front();
                const auto t = cache.load(entry);
                factors = ApproxFactors{t.a, t.b, t.residual, entry.key.w0_hash};
                key_digest = entry.key_digest;
            }
            const auto adapter = init_adapter(w0.matrix, strategy, init_.approx.rank,
                                              layer_seed(g_.seed, layer), factors, opts);
            const auto dir = run_dir("init");
            save_adapter(dir / "adapter", adapter, opts.preserve_output);
            const double drift = max_abs_diff(merge(adapter), w0.matrix);
            json summary = {{"layer", layer.name},
                            {"strategy", strategy.name()},
                            {"rank", adapter.rank()},
                            {"trainable_parameters", adapter.trainable_parameters()},
                            {"sigma_bar", sigma_bar},
                            {"max_abs_merge_minus_w0", drift},
                            {"adapter_dir", (dir / "adapter").string()}};
            if (!key_digest.empty()) summary["cache_key_digest"] = key_digest;
            write_json(dir / "init.json", summary);
            log("init", strategy.name() + " adapter for " + layer.name + ", max|W_eff - W0| = " +
                            format_double(drift));
            return 0;
        });
        b->option(sub, "manifest", init_.manifest, "model manifest JSON");
        b->require("manifest");
        b->option(sub, "layer", init_.layer, "layer name");
        b->require("layer");
        b->option(sub, "targets", init_.targets, "layers that define sigma_bar");
        b->option(sub, "strategy", init_.strategy, "initialization strategy");
        b->optional(sub, "sigma", init_.sigma, "std override for inilora-alpha / inilora-iter0");
        b->option(sub, "scaling", init_.scaling, "adapter scaling");
        b->flag(sub, "no-residual", init_.no_residual,
                "keep W0 frozen for alpha/beta/iter0 instead of folding in -BA");
        add_approx_flags(sub, *b, init_.approx, "", true);
    }

    // -- make-toy ----------------------------------------------------------
    ToyFlags toy_only_;

    void setup_make_toy() {
        Bindings* b = nullptr;
        auto* sub = command("make-toy", "write the toy model's weights and manifest", b, [this] {
            const auto model = toy_only_.build_model();
            const auto dir = run_dir("make-toy");
            const auto path = harness::write_toy_manifest(model, dir / "model");
            log("make-toy", "wrote " + path.string());
            return 0;
        });
        add_model_flags(sub, *b, toy_only_);
    }

    // -- train -------------------------------------------------------------
    ToyFlags train_toy_;
    TrainFlags train_;
    ApproxFlags train_approx_;

    std::optional<std::vector<ApproxFactors>> toy_factors(const harness::ToyModel& model,
                                                          const ApproxFlags& flags,
                                                          std::size_t rank, std::uint64_t run_seed,
                                                          const std::string& command) {
        std::vector<ApproxFactors> out;
        ApproxCache cache(g_.cache);
        for (auto i : model.adapted_indices()) {
            auto cfg = flags.config(harness::adapter_seed(run_seed, model.layers[i].spec.name));
            cfg.rank = rank;
            if (!cfg.init_sigma) cfg.init_sigma = model.adapted_stats().sigma_bar;
            const auto r = harness::approximate_toy_layer(model, i, cfg, &cache);
            log(command, "approximation of " + model.layers[i].spec.name + ": mse " +
                             format_double(r.final_mse));
            out.push_back(ApproxFactors::from(r));
        }
        return out;
    }

    void setup_train() {
        Bindings* b = nullptr;
        auto* sub = command("train", "fine-tune adapters on a synthetic task", b, [this] {
            const auto model = train_toy_.build_model();
            const auto task = train_toy_.build_task(model);
            auto cfg = train_.cfg;
            cfg.seed = g_.seed;
            cfg.preserve_output = !train_.no_residual;
            cfg.strategy = resolve_strategy(train_.strategy, train_.sigma,
                                            model.adapted_stats().sigma_bar);
            std::optional<std::vector<ApproxFactors>> factors;
            if (cfg.strategy.kind == StrategyKind::inilora) {
                factors = toy_factors(model, train_approx_, cfg.rank, cfg.seed, "train");
            }
            const auto report = harness::finetune(model, task, cfg, factors ? &*factors : nullptr);
            const auto dir = run_dir("train");
            harness::save_run_report(dir / "report.json", report);
            std::vector<harness::CurvePoint> curve;
            for (std::size_t t = 0; t < report.train_loss.size(); ++t) {
                curve.push_back({report.strategy, cfg.seed, static_cast<std::int64_t>(t),
                                 report.train_loss[t]});
            }
            harness::detail::write_text(dir / "loss.csv", harness::curves_csv(curve));
            if (report.diverged) {
                log("train", "diverged at step " + std::to_string(report.diverged_step) + ": " +
                                 report.divergence_message);
                return 2;
            }
            log("train", report.strategy + ": " + report.metric + " " +
                             format_double(report.base_metric) + " -> " +
                             format_double(report.final_metric));
            return 0;
        });
        add_model_flags(sub, *b, train_toy_);
        add_task_flags(sub, *b, train_toy_);
        add_train_flags(sub, *b, train_, true);
        train_approx_.steps = 20000;
        add_approx_flags(sub, *b, train_approx_, "approx-", false);
    }

    // -- sweeps ------------------------------------------------------------
    struct SweepFlags {
        ToyFlags toy;
        TrainFlags train;
        std::vector<std::uint64_t> seeds{0, 1, 2};
        std::size_t jobs = 1;
    };

    void add_sweep_flags(CLI::App* sub, Bindings& b, SweepFlags& f) {
        add_model_flags(sub, b, f.toy);
        add_task_flags(sub, b, f.toy);
        add_train_flags(sub, b, f.train, false);
        b.option(sub, "seeds", f.seeds, "fine-tuning seeds (repeats allowed)");
        b.option(sub, "jobs", f.jobs, "cells run in parallel");
    }

    harness::SweepOptions sweep_options(SweepFlags& f, const std::string& command) {
        harness::SweepOptions o;
        o.train = f.train.cfg;
        o.train.preserve_output = !f.train.no_residual;
        o.seeds = f.seeds;
        o.jobs = f.jobs;
        o.progress = progress(command);
        if (o.seeds.empty()) throw ValidationError("--seeds must not be empty");
        if (o.jobs < 1) throw ValidationError("--jobs must be >= 1");
        return o;
    }

    int finish_sweep(const std::string& command, const harness::SweepResult& res) {
        const auto dir = run_dir(command);
        harness::write_sweep(dir, res, bindings_for(command).echo(command));
        std::size_t diverged = 0;
        for (const auto& r : res.rows) diverged += r.diverged ? 1 : 0;
        log(command, std::to_string(res.rows.size()) + " runs (" + std::to_string(diverged) +
                         " diverged) -> " + dir.string());
        return 0;
    }

    SweepFlags sweep_approx_;
    ApproxFlags sweep_approx_flags_;

    void setup_sweep_approx() {
        Bindings* b = nullptr;
        auto* sub = command("sweep-approx", "fine-tune from approximation checkpoints", b, [this] {
            const auto model = sweep_approx_.toy.build_model();
            const auto task = sweep_approx_.toy.build_task(model);
            auto opts = sweep_options(sweep_approx_, "sweep-approx");
            harness::ApproxDegreeConfig deg;
            deg.checkpoint_steps = sweep_approx_flags_.checkpoint_steps;
            deg.approx = sweep_approx_flags_.config(0);
            if (sweep_approx_flags_.steps > 0) deg.approx_steps = sweep_approx_flags_.steps;
            ApproxCache cache(g_.cache);
            return finish_sweep("sweep-approx",
                                harness::sweep_approx_degree(model, task, opts, deg, &cache));
        });
        add_sweep_flags(sub, *b, sweep_approx_);
        sweep_approx_flags_.checkpoint_steps = harness::default_approx_steps();
        sweep_approx_flags_.steps = 0;
        add_approx_flags(sub, *b, sweep_approx_flags_, "approx-", false);
        b->option(sub, "checkpoint-steps", sweep_approx_flags_.checkpoint_steps,
                  "approximation steps to fine-tune from");
    }

    SweepFlags sweep_sigma_;
    std::vector<double> sigmas_ = harness::default_sigma_grid();

    void setup_sweep_sigma() {
        Bindings* b = nullptr;
        auto* sub = command("sweep-sigma", "fine-tune from N(0, sigma^2) factors", b, [this] {
            const auto model = sweep_sigma_.toy.build_model();
            const auto task = sweep_sigma_.toy.build_task(model);
            return finish_sweep("sweep-sigma",
                                harness::sweep_sigma(model, task,
                                                     sweep_options(sweep_sigma_, "sweep-sigma"),
                                                     sigmas_));
        });
        add_sweep_flags(sub, *b, sweep_sigma_);
        b->option(sub, "sigmas", sigmas_, "standard deviations to try");
    }

    SweepFlags sweep_dist_;
    std::vector<std::string> dists_{"normal(sigma_bar)", "normal(0.5)", "kaiming-normal",
                                    "kaiming-uniform", "lora"};

    void setup_sweep_dist() {
        Bindings* b = nullptr;
        auto* sub = command("sweep-dist", "fine-tune from different factor distributions", b, [this] {
            const auto model = sweep_dist_.toy.build_model();
            const auto task = sweep_dist_.toy.build_task(model);
            const double sb = model.adapted_stats().sigma_bar;
            std::vector<harness::DistributionChoice> grid;
            for (const auto& d : dists_) grid.push_back(harness::parse_distribution(d, sb));
            return finish_sweep("sweep-dist",
                                harness::sweep_distributions(
                                    model, task, sweep_options(sweep_dist_, "sweep-dist"), grid));
        });
        add_sweep_flags(sub, *b, sweep_dist_);
        b->option(sub, "dists", dists_,
                  "normal(sigma_bar), normal(<std>), kaiming-normal, kaiming-uniform, lora");
    }

    // -- report ------------------------------------------------------------
    std::string report_in_;

    void setup_report() {
        Bindings* b = nullptr;
        auto* sub = command("report", "summarize a sweep's raw.csv", b, [this] {
            const fs::path raw = fs::path(report_in_) / "raw.csv";
            if (!fs::exists(raw)) throw IoError("no raw.csv in " + report_in_);
            const auto rows = harness::parse_raw_csv(wtn1::read_bytes(raw));
            const auto summary = harness::summarize(rows);
            const auto dir = run_dir("report");
            harness::detail::write_text(dir / "summary.csv", harness::summary_csv(summary));
            write_json(dir / "report.json",
                       {{"source", report_in_},
                        {"experiment", rows.empty() ? "" : rows.front().experiment},
                        {"rows", rows.size()},
                        {"summary", harness::summary_json(summary)}});
            for (const auto& s : summary) {
                char line[160];
                std::snprintf(line, sizeof line, "%-20s runs %zu  diverged %zu  metric %.6g +- %.3g",
                              s.setting.c_str(), s.runs, s.diverged, s.metric_mean, s.metric_std);
                log("report", line);
            }
            return 0;
        });
        b->option(sub, "in", report_in_, "sweep output directory containing raw.csv");
        b->require("in");
    }

    CLI::App app_;
    Globals g_;
    Bindings b_;
    std::map<std::string, Bindings> sub_bindings_;
    std::map<std::string, std::function<int()>> actions_;
};

/// Entry point used by the `inilora` executable.
inline int run(int argc, char** argv) {
    Runner runner;
    return runner.run(argc, argv);
}

}  // namespace inilora::cli
