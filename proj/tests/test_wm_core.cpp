#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>

#include "wmkit/wm_core.hpp"

using namespace wmkit;

namespace {

WatermarkKey key_of(std::uint8_t fill) {
    WatermarkKey key;
    key.bytes.fill(fill);
    key.key_id = "fill-" + std::to_string(fill);
    return key;
}

WatermarkKey sequential_key() {
    WatermarkKey key;
    for (std::size_t i = 0; i < kKeyBytes; ++i) {
        key.bytes[i] = static_cast<std::uint8_t>(i);
    }
    key.key_id = "seq";
    return key;
}

std::map<std::string, std::string> load_goldens() {
    std::map<std::string, std::string> m;
    for (const auto& [desc, hex] :
         read_golden_vectors(std::string(WMKIT_TEST_DATA_DIR) + "/golden_vectors.txt")) {
        m[desc] = hex;
    }
    return m;
}

std::string seed_hex(std::uint64_t seed) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(seed));
    return buf;
}

std::string gbits_hex(const GVector& gv) {
    unsigned v = 0;
    for (int i = 0; i < gv.depth(); ++i) {
        v |= static_cast<unsigned>(gv.bits[static_cast<std::size_t>(i)]) << i;
    }
    char buf[3];
    std::snprintf(buf, sizeof(buf), "%02x", v);
    return buf;
}

} // namespace

TEST_CASE("derive_seed matches the frozen golden vectors") {
    const auto goldens = load_goldens();
    const WatermarkKey zeros = key_of(0);
    const WatermarkKey seq = sequential_key();

    CHECK(seed_hex(derive_seed(zeros, SeedContext{{1, 2, 3, 4}}, 0)) ==
          goldens.at("seed/key=zeros32/window=1,2,3,4/salt=0"));
    CHECK(seed_hex(derive_seed(seq, SeedContext{{1, 2, 3, 4}}, 0)) ==
          goldens.at("seed/key=seq00-1f/window=1,2,3,4/salt=0"));
    CHECK(seed_hex(derive_seed(zeros, SeedContext{{1, 2, 3, 4}}, 7)) ==
          goldens.at("seed/key=zeros32/window=1,2,3,4/salt=7"));
    CHECK(seed_hex(derive_seed(zeros, SeedContext{{1, 2, 3, 5}}, 0)) ==
          goldens.at("seed/key=zeros32/window=1,2,3,5/salt=0"));
    CHECK(seed_hex(derive_seed(zeros, SeedContext{{42}}, 0)) ==
          goldens.at("seed/key=zeros32/window=42/salt=0"));
}

TEST_CASE("g_vector matches the frozen golden vectors") {
    const auto goldens = load_goldens();
    const std::uint64_t seed = 0x9af90a0fcf944677ULL;
    CHECK(gbits_hex(g_vector(seed, 7, 4)) == goldens.at("gbits/seed=9af90a0fcf944677/token=7/d=4"));
    CHECK(gbits_hex(g_vector(seed, 9, 4)) == goldens.at("gbits/seed=9af90a0fcf944677/token=9/d=4"));
    CHECK(gbits_hex(g_vector(0xdeadbeefULL, 3, 8)) ==
          goldens.at("gbits/seed=00000000deadbeef/token=3/d=8"));
}

TEST_CASE("derive_seed is deterministic and sensitive to every input") {
    const WatermarkKey a = key_of(0x11);
    const WatermarkKey b = key_of(0x22);
    const SeedContext ctx{{5, 6, 7, 8}};

    CHECK(derive_seed(a, ctx, 0) == derive_seed(a, ctx, 0));
    CHECK(derive_seed(a, ctx, 0) != derive_seed(b, ctx, 0));
    CHECK(derive_seed(a, ctx, 0) != derive_seed(a, SeedContext{{5, 6, 7, 9}}, 0));
    CHECK(derive_seed(a, ctx, 0) != derive_seed(a, ctx, 1));
    CHECK_THROWS(derive_seed(a, SeedContext{}, 0));
}

TEST_CASE("make_window pads with the reserved id and keeps the last w tokens") {
    const std::vector<TokenId> context = {10, 11, 12};
    CHECK(make_window(context, 4, kBosId).window == std::vector<TokenId>{kBosId, 10, 11, 12});
    CHECK(make_window(context, 2, kBosId).window == std::vector<TokenId>{11, 12});
    CHECK(make_window({}, 3, kBosId).window == std::vector<TokenId>{kBosId, kBosId, kBosId});
    CHECK_THROWS(make_window(context, 0, kBosId));
}

TEST_CASE("g_vector is deterministic and validates depth") {
    const GVector a = g_vector(123, 45, 6);
    const GVector b = g_vector(123, 45, 6);
    CHECK(a.bits == b.bits);
    CHECK(a.depth() == 6);
    for (const auto bit : a.bits) { CHECK((bit == 0 || bit == 1)); }
    CHECK_THROWS(g_vector(1, 2, 0));
    CHECK_THROWS(g_vector(1, 2, 65));
}

TEST_CASE("g bits behave as fair coins over random seeds") {
    constexpr int kN = 100000;
    constexpr int kDepth = 4;
    SplitMix64 rng(2024);
    std::array<long, kDepth> ones{};
    for (int i = 0; i < kN; ++i) {
        const GVector gv = g_vector(rng.next(), 7, kDepth);
        for (int j = 0; j < kDepth; ++j) { ones[static_cast<std::size_t>(j)] += gv.bits[static_cast<std::size_t>(j)]; }
    }
    for (int j = 0; j < kDepth; ++j) {
        const double mean = static_cast<double>(ones[static_cast<std::size_t>(j)]) / kN;
        CHECK(mean > 0.494);
        CHECK(mean < 0.506);
    }
}

TEST_CASE("g bits behave as fair coins over random keys for a fixed context") {
    constexpr int kN = 100000;
    SplitMix64 rng(77);
    const SeedContext ctx{{3, 1, 4, 1}};
    long ones = 0;
    for (int i = 0; i < kN; ++i) {
        const WatermarkKey key = WatermarkKey::random("k", rng);
        ones += g_vector(derive_seed(key, ctx, 0), 11, 1).bits[0];
    }
    const double mean = static_cast<double>(ones) / kN;
    CHECK(mean > 0.494);
    CHECK(mean < 0.506);
}

TEST_CASE("depth_weights follow 2(d+1-i)/(d+1) and sum to d") {
    CHECK(depth_weights(1).weights == std::vector<double>{1.0});

    const DepthWeights d3 = depth_weights(3);
    CHECK(d3.weights[0] == doctest::Approx(1.5).epsilon(1e-15));
    CHECK(d3.weights[1] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(d3.weights[2] == doctest::Approx(0.5).epsilon(1e-15));

    const DepthWeights d2 = depth_weights(2);
    CHECK(d2.weights[0] == doctest::Approx(4.0 / 3.0).epsilon(1e-15));
    CHECK(d2.weights[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

    for (int d = 1; d <= 12; ++d) {
        const DepthWeights dw = depth_weights(d);
        double sum = 0.0;
        for (std::size_t i = 0; i < dw.weights.size(); ++i) {
            sum += dw.weights[i];
            if (i > 0) { CHECK(dw.weights[i] < dw.weights[i - 1]); }
        }
        CHECK(std::fabs(sum - d) <= 1e-12);
    }
    CHECK_THROWS(depth_weights(0));
}

TEST_CASE("effective_depth matches the closed form under canonical weights") {
    CHECK(effective_depth(depth_weights(1)) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(effective_depth(depth_weights(3)) == doctest::Approx(9.0 / 3.5).epsilon(1e-15));

    DepthWeights uniform;
    uniform.weights = {1.0, 1.0, 1.0, 1.0, 1.0};
    CHECK(effective_depth(uniform) == doctest::Approx(5.0).epsilon(1e-15));

    for (int d = 1; d <= 12; ++d) {
        const double expect = 3.0 * d * (d + 1) / (2.0 * (2 * d + 1));
        CHECK(std::fabs(effective_depth(depth_weights(d)) - expect) <= 1e-12);
    }
}

TEST_CASE("weighted_g arithmetic and bounds") {
    const DepthWeights w3 = depth_weights(3);
    GVector all_ones{{1, 1, 1}};
    GVector all_zero{{0, 0, 0}};
    GVector mixed{{1, 0, 1}};
    CHECK(weighted_g(all_ones, w3) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(weighted_g(all_zero, w3) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(weighted_g(mixed, w3) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

    GVector wrong_depth{{1, 0}};
    CHECK_THROWS(weighted_g(wrong_depth, w3));
}

TEST_CASE("weighted score has null expectation 1/2 over random keys") {
    constexpr int kN = 100000;
    constexpr int kDepth = 4;
    const DepthWeights weights = depth_weights(kDepth);
    SplitMix64 rng(99);
    const SeedContext ctx{{8, 8, 8, 8}};
    double sum = 0.0;
    for (int i = 0; i < kN; ++i) {
        const WatermarkKey key = WatermarkKey::random("k", rng);
        sum += weighted_g(g_vector(derive_seed(key, ctx, 0), 5, kDepth), weights);
    }
    const double mean = sum / kN;
    double w_sq = 0.0;
    for (const double w : weights.weights) { w_sq += w * w; }
    const double sigma = std::sqrt(w_sq / (4.0 * kDepth * kDepth) / kN);
    CHECK(std::fabs(mean - 0.5) < 4.0 * sigma);
}

TEST_CASE("key files round-trip and reject malformed input") {
    const std::string path = "test_key_roundtrip.key";
    SplitMix64 rng(5);
    const WatermarkKey key = WatermarkKey::random("owner-a", rng);
    save_key_file(key, path);
    const WatermarkKey loaded = load_key_file(path);
    CHECK(loaded.bytes == key.bytes);
    CHECK(loaded.key_id == key.key_id);

    {
        std::ofstream bad("test_key_bad.key", std::ios::trunc);
        bad << "deadbeef\nshort-key\n";
    }
    CHECK_THROWS(load_key_file("test_key_bad.key"));
    CHECK_THROWS(load_key_file("does_not_exist.key"));
}

TEST_CASE("golden-vector reader enforces the TAB format") {
    {
        std::ofstream bad("test_golden_bad.txt", std::ios::trunc);
        bad << "descriptor-without-tab\n";
    }
    CHECK_THROWS(read_golden_vectors("test_golden_bad.txt"));
}
