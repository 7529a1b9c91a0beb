#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "inilora/cache.hpp"
#include "inilora/driver.hpp"
#include "support/fixtures.hpp"

namespace inilora {
namespace {

namespace fs = std::filesystem;
using testing::TempDir;

struct Stored {
    CacheKey key;
    ApproxResult result;
};

Stored make_result(std::size_t rank = 3, std::vector<std::int64_t> ckpts = {}) {
    const Matrix w0 = sample(DistributionSpec::normal(0.0, 0.02), 12, 10, 1);
    ApproxConfig cfg;
    cfg.rank = rank;
    cfg.steps = 50;
    cfg.seed = 4;
    cfg.trajectory_stride = 10;
    cfg.checkpoint_steps = std::move(ckpts);
    auto result = approximate(w0, cfg);
    const ManifestLayer layer{"layer0.query", LayerRole::query, "q.wtn1", 12, 10};
    return {CacheKey::from("toy", layer, result.config, cfg.seed, result.w0_hash), result};
}

std::string file_bytes(const fs::path& p) { return wtn1::read_bytes(p); }

TEST(Cache, RoundTripIsBitIdentical) {
    TempDir tmp("cache");
    ApproxCache cache(tmp.path());
    auto [key, result] = make_result(3, {0, 20});
    EXPECT_FALSE(cache.lookup(key).has_value());
    const auto stored = cache.store(key, result);
    const auto hit = cache.lookup(key, {20});
    ASSERT_TRUE(hit.has_value());
    EXPECT_EQ(hit->key_digest, stored.key_digest);
    const auto t = cache.load(*hit);
    EXPECT_EQ(t.a, result.a);
    EXPECT_EQ(t.b, result.b);
    EXPECT_EQ(t.residual, result.residual);
    EXPECT_EQ(t.trajectory, result.trajectory);
    ASSERT_EQ(t.checkpoints.size(), 2u);
    EXPECT_EQ(t.checkpoints[1].a, result.checkpoints[1].a);
    EXPECT_EQ(t.checkpoints[1].mse, result.checkpoints[1].mse);
    EXPECT_EQ(hit->final_mse, result.final_mse);
}

TEST(Cache, LayoutFollowsModelLayerDigest) {
    TempDir tmp("cache");
    ApproxCache cache(tmp.path());
    auto [key, result] = make_result();
    const auto e = cache.store(key, result);
    EXPECT_EQ(e.dir, tmp.path() / "toy" / "layer0.query" / key.digest());
    for (const char* f : {"a.wtn1", "b.wtn1", "r.wtn1", "meta.json", "trajectory.csv"}) {
        EXPECT_TRUE(fs::exists(e.dir / f)) << f;
    }
    EXPECT_EQ(file_bytes(e.trajectory_path).rfind("step,frobenius_sq,mse\n", 0), 0u);
}

TEST(Cache, KeyDiscrimination) {
    TempDir tmp("cache");
    ApproxCache cache(tmp.path());
    auto [key, result] = make_result();
    cache.store(key, result);
    auto other = key;
    other.rank = 4;
    EXPECT_FALSE(cache.lookup(other).has_value());
    other = key;
    other.steps = 51;
    EXPECT_FALSE(cache.lookup(other).has_value());
    other = key;
    other.schedule.gamma = 0.25;
    EXPECT_FALSE(cache.lookup(other).has_value());
    other = key;
    other.init_sigma *= 2;
    EXPECT_FALSE(cache.lookup(other).has_value());
    other = key;
    other.w0_hash[0] = other.w0_hash[0] == '0' ? '1' : '0';
    EXPECT_FALSE(cache.lookup(other).has_value());
    EXPECT_TRUE(cache.lookup(key).has_value());
    EXPECT_TRUE(cache.quarantined().empty());
}

TEST(Cache, MissingCheckpointIsPlainMiss) {
    TempDir tmp("cache");
    ApproxCache cache(tmp.path());
    auto [key, result] = make_result(3, {10});
    cache.store(key, result);
    EXPECT_FALSE(cache.lookup(key, {10, 30}).has_value());
    EXPECT_TRUE(cache.lookup(key, {10}).has_value());
    EXPECT_TRUE(cache.quarantined().empty());
}

TEST(Cache, TamperedPayloadIsQuarantined) {
    TempDir tmp("cache");
    ApproxCache cache(tmp.path());
    auto [key, result] = make_result();
    const auto e = cache.store(key, result);
    {
        std::fstream f(e.a_path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(30);
        char c = 0;
        f.read(&c, 1);
        f.seekp(30);
        c = static_cast<char>(c ^ 0x01);
        f.write(&c, 1);
    }
    EXPECT_FALSE(cache.lookup(key).has_value());
    EXPECT_FALSE(fs::exists(e.dir));
    EXPECT_EQ(cache.quarantined().size(), 1u);
    cache.store(key, result);
    EXPECT_TRUE(cache.lookup(key).has_value());
}

TEST(Cache, MissingMetaIsQuarantined) {
    TempDir tmp("cache");
    ApproxCache cache(tmp.path());
    auto [key, result] = make_result();
    const auto e = cache.store(key, result);
    fs::remove(e.meta_path);
    EXPECT_FALSE(cache.lookup(key).has_value());
    EXPECT_FALSE(fs::exists(e.dir));
}

TEST(Cache, ContentDigestIgnoresTimestamp) {
    TempDir t1("cache"), t2("cache");
    ApproxCache c1(t1.path()), c2(t2.path());
    auto [key, result] = make_result();
    EXPECT_EQ(c1.store(key, result).content_digest(), c2.store(key, result).content_digest());
}

class ModelDriver : public ::testing::Test {
protected:
    ModelDriver() : tmp_("driver") {
        manifest_path_ = testing::write_gaussian_model(tmp_ / "model", "toy", 4, 16, 12, 3);
        cfg_.rank = 2;
        cfg_.steps = 60;
        cfg_.seed = 11;
    }

    ModelApproxReport run(const fs::path& cache_dir, std::size_t concurrency) {
        ApproxCache cache(cache_dir);
        return approximate_model(load_manifest(manifest_path_), {"query", "value"}, cfg_,
                                 concurrency, cache);
    }

    TempDir tmp_;
    fs::path manifest_path_;
    ApproxConfig cfg_;
};

TEST_F(ModelDriver, SerialAndParallelRunsAreByteIdentical) {
    const auto serial = run(tmp_ / "c1", 1);
    const auto parallel = run(tmp_ / "c64", 64);
    ASSERT_TRUE(serial.ok());
    ASSERT_TRUE(parallel.ok());
    ASSERT_EQ(serial.entries.size(), 4u);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(serial.entries[i].key_digest, parallel.entries[i].key_digest);
        EXPECT_EQ(serial.entries[i].content_digest(), parallel.entries[i].content_digest());
        EXPECT_EQ(file_bytes(serial.entries[i].a_path), file_bytes(parallel.entries[i].a_path));
        EXPECT_EQ(file_bytes(serial.entries[i].residual_path),
                  file_bytes(parallel.entries[i].residual_path));
    }
}

TEST_F(ModelDriver, SecondRunIsAllHits) {
    const auto first = run(tmp_ / "c", 4);
    EXPECT_EQ(first.computed, 4u);
    EXPECT_EQ(first.steps_executed, 4 * cfg_.steps);
    const auto second = run(tmp_ / "c", 4);
    EXPECT_EQ(second.cache_hits, 4u);
    EXPECT_EQ(second.computed, 0u);
    EXPECT_EQ(second.steps_executed, 0);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(first.entries[i].key_digest, second.entries[i].key_digest);
    }
}

TEST_F(ModelDriver, LayerSeedsDifferAndSigmaIsShared) {
    const auto report = run(tmp_ / "c", 2);
    std::set<std::uint64_t> seeds;
    for (const auto& e : report.entries) {
        seeds.insert(e.key.layer_seed);
        EXPECT_EQ(e.key.init_sigma, report.init_sigma);
    }
    EXPECT_EQ(seeds.size(), 4u);
    EXPECT_GT(report.init_sigma, 0.015);
    EXPECT_LT(report.init_sigma, 0.025);
}

TEST_F(ModelDriver, TargetFilterSelectsRoles) {
    ApproxCache cache(tmp_ / "c");
    const auto report =
        approximate_model(load_manifest(manifest_path_), {"value"}, cfg_, 2, cache);
    ASSERT_EQ(report.entries.size(), 2u);
    for (const auto& e : report.entries) EXPECT_EQ(e.key.role, LayerRole::value);
}

TEST_F(ModelDriver, MissingLayerFailsAloneWithExplicitSigma) {
    fs::remove(tmp_ / "model" / "layer0.value.wtn1");
    cfg_.init_sigma = 0.02;
    const auto report = run(tmp_ / "c", 3);
    EXPECT_FALSE(report.ok());
    ASSERT_EQ(report.failures.size(), 1u);
    EXPECT_EQ(report.failures[0].layer_name, "layer0.value");
    EXPECT_EQ(report.entries.size(), 3u);
}

TEST_F(ModelDriver, MissingLayerFailsAloneWithDerivedSigma) {
    fs::remove(tmp_ / "model" / "layer1.query.wtn1");
    const auto report = run(tmp_ / "c", 3);
    ASSERT_EQ(report.failures.size(), 1u);
    EXPECT_EQ(report.failures[0].layer_name, "layer1.query");
    EXPECT_EQ(report.entries.size(), 3u);
}

TEST_F(ModelDriver, RankTooLargeIsRejectedUpFront) {
    cfg_.rank = 12;
    EXPECT_THROW(run(tmp_ / "c", 1), ValidationError);
    EXPECT_FALSE(fs::exists(tmp_ / "c" / "toy"));
}

TEST(Driver, DefaultConcurrency) { EXPECT_EQ(kDefaultConcurrency, 64u); }

}  // namespace
}  // namespace inilora
