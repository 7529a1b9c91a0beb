#pragma once

// Content-addressed store of approximation results.
//
// Layout: <root>/<model_id>/<layer_name>/<key-digest>/
//           a.wtn1 b.wtn1 r.wtn1 meta.json trajectory.csv [checkpoints/<step>/{a,b}.wtn1]
// meta.json records the full key and a SHA-256 per payload file. Entries that
// fail verification are moved under <root>/.quarantine/ and reported as misses.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "inilora/approx.hpp"
#include "inilora/digest.hpp"
#include "inilora/error.hpp"
#include "inilora/manifest.hpp"
#include "inilora/wtn1.hpp"

namespace inilora {

namespace fs = std::filesystem;

/// Everything that determines an approximation result.
struct CacheKey {
    std::string model_id;
    std::string layer_name;
    LayerRole role = LayerRole::other;
    std::string w0_hash;
    std::size_t rank = 0;
    std::int64_t steps = 0;
    std::uint64_t seed = 0;        // base seed
    std::uint64_t layer_seed = 0;  // seed actually used for the draw
    StepLRSchedule schedule{};
    AdamHyper adam{};
    double init_mu = 0.0;
    double init_sigma = 0.0;
    std::int64_t trajectory_stride = 100;

    nlohmann::json to_json() const {
        return {{"model_id", model_id},
                {"layer_name", layer_name},
                {"role", to_string(role)},
                {"w0_hash", w0_hash},
                {"rank", rank},
                {"steps", steps},
                {"seed", seed},
                {"layer_seed", layer_seed},
                {"lr", schedule.base_lr},
                {"schedule", {{"step_size", schedule.step_size}, {"gamma", schedule.gamma}}},
                {"adam", {{"beta1", adam.beta1}, {"beta2", adam.beta2}, {"epsilon", adam.epsilon}}},
                {"init_mu", init_mu},
                {"init_sigma", init_sigma},
                {"trajectory_stride", trajectory_stride}};
    }

    std::string digest() const { return sha256_hex(to_json().dump()); }

    static CacheKey from(const std::string& model_id, const ManifestLayer& layer,
                         const ApproxConfig& cfg, std::uint64_t layer_seed,
                         const std::string& w0_hash) {
        CacheKey key;
        key.model_id = model_id;
        key.layer_name = layer.name;
        key.role = layer.role;
        key.w0_hash = w0_hash;
        key.rank = cfg.rank;
        key.steps = cfg.steps;
        key.seed = cfg.seed;
        key.layer_seed = layer_seed;
        key.schedule = cfg.schedule;
        key.adam = cfg.adam;
        key.init_mu = cfg.init_mu;
        key.init_sigma = cfg.init_sigma.value_or(0.0);
        key.trajectory_stride = cfg.trajectory_stride;
        return key;
    }
};

struct CacheEntry {
    CacheKey key;
    std::string key_digest;
    fs::path dir;
    fs::path a_path, b_path, residual_path, meta_path, trajectory_path;
    double final_mse = 0.0;
    double final_frobenius_sq = 0.0;
    std::vector<std::int64_t> checkpoint_steps;
    std::string created_at;

    /// Digest of the entry's content: meta.json without created_at plus file hashes.
    std::string content_digest() const {
        std::ifstream in(meta_path);
        nlohmann::json meta = nlohmann::json::parse(in);
        meta.erase("created_at");
        return sha256_hex(meta.dump());
    }

    nlohmann::json summary() const {
        nlohmann::json j = key.to_json();
        j["key_digest"] = key_digest;
        j["paths"] = {{"a", a_path.string()},
                      {"b", b_path.string()},
                      {"residual", residual_path.string()},
                      {"trajectory", trajectory_path.string()}};
        j["final_mse"] = final_mse;
        j["final_frobenius_sq"] = final_frobenius_sq;
        j["checkpoint_steps"] = checkpoint_steps;
        j["created_at"] = created_at;
        return j;
    }
};

/// Tensors of an entry read back from disk.
struct CachedTensors {
    Matrix a;
    Matrix b;
    Matrix residual;
    std::vector<TrajectoryPoint> trajectory;
    std::vector<ApproxCheckpoint> checkpoints;
};

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Replaces characters that are unsafe in a single path component.
inline std::string path_component(const std::string& s) {
    std::string out = s;
    for (char& c : out) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                        c == '.' || c == '-' || c == '_';
        if (!ok) c = '_';
    }
    if (out.empty() || out == "." || out == "..") out = "_" + out;
    return out;
}

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string trajectory_csv(const std::vector<TrajectoryPoint>& points) {
    std::string out = "step,frobenius_sq,mse\n";
    for (const auto& p : points) {
        out += std::to_string(p.step) + "," + format_double(p.frobenius_sq) + "," +
               format_double(p.mse) + "\n";
    }
    return out;
}

inline std::vector<TrajectoryPoint> parse_trajectory_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    if (line != "step,frobenius_sq,mse") {
        throw IoError("trajectory.csv: unexpected header");
    }
    std::vector<TrajectoryPoint> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        TrajectoryPoint p;
        char* end = nullptr;
        p.step = std::strtoll(line.c_str(), &end, 10);
        if (*end != ',') throw IoError("trajectory.csv: malformed row");
        p.frobenius_sq = std::strtod(end + 1, &end);
        if (*end != ',') throw IoError("trajectory.csv: malformed row");
        p.mse = std::strtod(end + 1, &end);
        out.push_back(p);
    }
    return out;
}

class ApproxCache {
public:
    explicit ApproxCache(fs::path root) : root_(std::move(root)) {}

    const fs::path& root() const noexcept { return root_; }

    fs::path entry_dir(const CacheKey& key) const {
        return root_ / path_component(key.model_id) / path_component(key.layer_name) /
               key.digest();
    }

    /// Verified entry for `key`, or nothing. Corrupt entries are quarantined.
    /// A verified entry lacking any of `required_checkpoints` is a plain miss.
    std::optional<CacheEntry> lookup(const CacheKey& key,
                                     const std::vector<std::int64_t>& required_checkpoints = {}) {
        const fs::path dir = entry_dir(key);
        std::lock_guard<std::mutex> guard(lock_for(key.digest()));
        if (!fs::exists(dir / "meta.json")) {
            if (fs::exists(dir)) quarantine(dir);
            return std::nullopt;
        }
        std::optional<CacheEntry> entry;
        try {
            entry = verify(dir, key);
        } catch (const std::exception&) {
            entry.reset();
        }
        if (!entry) {
            quarantine(dir);
            return std::nullopt;
        }
        for (auto s : required_checkpoints) {
            if (std::find(entry->checkpoint_steps.begin(), entry->checkpoint_steps.end(), s) ==
                entry->checkpoint_steps.end()) {
                return std::nullopt;
            }
        }
        return entry;
    }

    /// Writes the entry to a temporary directory and renames it into place.
    CacheEntry store(const CacheKey& key, const ApproxResult& result) {
        const std::string digest = key.digest();
        const fs::path dir = entry_dir(key);
        fs::create_directories(dir.parent_path());
        std::ostringstream tmp_name;
        tmp_name << ".tmp-" << digest << "-" << std::this_thread::get_id();
        const fs::path tmp = dir.parent_path() / tmp_name.str();
        fs::remove_all(tmp);
        fs::create_directories(tmp);

        nlohmann::json files = nlohmann::json::object();
        auto put = [&](const std::string& rel, const std::string& bytes) {
            fs::create_directories((tmp / rel).parent_path());
            wtn1::write_bytes(tmp / rel, bytes);
            files[rel] = sha256_hex(bytes);
        };
        put("a.wtn1", wtn1::encode(result.a));
        put("b.wtn1", wtn1::encode(result.b));
        put("r.wtn1", wtn1::encode(result.residual));
        put("trajectory.csv", trajectory_csv(result.trajectory));
        std::vector<std::int64_t> ckpt_steps;
        nlohmann::json ckpt_mse = nlohmann::json::object();
        for (const auto& c : result.checkpoints) {
            const std::string base = "checkpoints/" + std::to_string(c.step) + "/";
            put(base + "a.wtn1", wtn1::encode(c.a));
            put(base + "b.wtn1", wtn1::encode(c.b));
            ckpt_steps.push_back(c.step);
            ckpt_mse[std::to_string(c.step)] = c.mse;
        }

        const std::string created = utc_timestamp();
        nlohmann::json meta = {{"key", key.to_json()},
                               {"key_digest", digest},
                               {"files", files},
                               {"final_mse", result.final_mse},
                               {"final_frobenius_sq", result.final_frobenius_sq},
                               {"checkpoint_steps", ckpt_steps},
                               {"checkpoint_mse", ckpt_mse},
                               {"created_at", created}};
        wtn1::write_bytes(tmp / "meta.json", meta.dump(2) + "\n");

        std::lock_guard<std::mutex> guard(lock_for(digest));
        fs::remove_all(dir);
        fs::rename(tmp, dir);
        return make_entry(dir, key, meta);
    }

    CachedTensors load(const CacheEntry& entry) const {
        CachedTensors out{wtn1::load(entry.a_path).matrix, wtn1::load(entry.b_path).matrix,
                          wtn1::load(entry.residual_path).matrix,
                          parse_trajectory_csv(wtn1::read_bytes(entry.trajectory_path)),
                          {}};
        std::ifstream in(entry.meta_path);
        const auto meta = nlohmann::json::parse(in);
        for (auto s : entry.checkpoint_steps) {
            const fs::path base = entry.dir / "checkpoints" / std::to_string(s);
            out.checkpoints.push_back({s, wtn1::load(base / "a.wtn1").matrix,
                                       wtn1::load(base / "b.wtn1").matrix,
                                       meta.at("checkpoint_mse").at(std::to_string(s)).get<double>()});
        }
        return out;
    }

    std::vector<fs::path> quarantined() const {
        std::vector<fs::path> out;
        const fs::path q = root_ / ".quarantine";
        if (!fs::exists(q)) return out;
        for (const auto& e : fs::recursive_directory_iterator(q)) {
            if (e.is_directory() && fs::exists(e.path() / "meta.json")) out.push_back(e.path());
        }
        return out;
    }

private:
    static CacheEntry make_entry(const fs::path& dir, const CacheKey& key,
                                 const nlohmann::json& meta) {
        CacheEntry e;
        e.key = key;
        e.key_digest = meta.at("key_digest").get<std::string>();
        e.dir = dir;
        e.a_path = dir / "a.wtn1";
        e.b_path = dir / "b.wtn1";
        e.residual_path = dir / "r.wtn1";
        e.meta_path = dir / "meta.json";
        e.trajectory_path = dir / "trajectory.csv";
        e.final_mse = meta.at("final_mse").get<double>();
        e.final_frobenius_sq = meta.at("final_frobenius_sq").get<double>();
        e.checkpoint_steps = meta.at("checkpoint_steps").get<std::vector<std::int64_t>>();
        e.created_at = meta.at("created_at").get<std::string>();
        return e;
    }

    static std::optional<CacheEntry> verify(const fs::path& dir, const CacheKey& key) {
        std::ifstream in(dir / "meta.json");
        const auto meta = nlohmann::json::parse(in);
        if (meta.at("key") != key.to_json() || meta.at("key_digest") != key.digest()) {
            return std::nullopt;
        }
        for (const auto& [rel, sha] : meta.at("files").items()) {
            const fs::path p = dir / rel;
            if (!fs::exists(p) || sha256_file(p) != sha.get<std::string>()) {
                return std::nullopt;
            }
        }
        for (const char* required : {"a.wtn1", "b.wtn1", "r.wtn1", "trajectory.csv"}) {
            if (!meta.at("files").contains(required)) return std::nullopt;
        }
        return make_entry(dir, key, meta);
    }

    void quarantine(const fs::path& dir) {
        const fs::path rel = fs::relative(dir, root_);
        fs::path target = root_ / ".quarantine" / rel;
        fs::create_directories(target.parent_path());
        for (int n = 1; fs::exists(target); ++n) {
            target = root_ / ".quarantine" / (rel.string() + "-" + std::to_string(n));
        }
        std::error_code ec;
        fs::rename(dir, target, ec);
        if (ec) fs::remove_all(dir);
    }

    std::mutex& lock_for(const std::string& digest) {
        std::lock_guard<std::mutex> guard(map_lock_);
        return locks_[digest];
    }

    fs::path root_;
    std::mutex map_lock_;
    std::map<std::string, std::mutex> locks_;
};

}  // namespace inilora
