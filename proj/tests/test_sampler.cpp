#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "wmkit/sampler.hpp"

using namespace wmkit;

namespace {

TokenDistribution dist_of(std::initializer_list<std::pair<TokenId, double>> entries) {
    TokenDistribution d;
    for (const auto& e : entries) { d.probs.push_back(e); }
    return d;
}

// Fixed next-token distribution regardless of context.
class FixedModel final : public NextTokenModel {
public:
    explicit FixedModel(TokenDistribution dist) : dist_(std::move(dist)) {}
    TokenDistribution next_token_distribution(std::span<const TokenId>) const override {
        return dist_;
    }

private:
    TokenDistribution dist_;
};

double total_variation(const std::map<TokenId, double>& a, const std::map<TokenId, double>& b) {
    double tv = 0.0;
    for (const auto& [id, p] : a) {
        const auto it = b.find(id);
        tv += std::fabs(p - (it == b.end() ? 0.0 : it->second));
    }
    for (const auto& [id, p] : b) {
        if (a.find(id) == a.end()) { tv += p; }
    }
    return tv / 2.0;
}

WatermarkKey test_key(std::uint64_t n) {
    SplitMix64 rng(n);
    return WatermarkKey::random("test-" + std::to_string(n), rng);
}

} // namespace

TEST_CASE("identity shaping returns the input unchanged") {
    const TokenDistribution d = dist_of({{0, 0.25}, {1, 0.5}, {2, 0.25}});
    const TokenDistribution shaped =
        shape_distribution(d, 1.0, static_cast<int>(d.probs.size()), 1.0);
    REQUIRE(shaped.probs.size() == d.probs.size());
    for (std::size_t i = 0; i < d.probs.size(); ++i) {
        CHECK(shaped.probs[i].first == d.probs[i].first);
        CHECK(shaped.probs[i].second == doctest::Approx(d.probs[i].second).epsilon(1e-12));
    }
}

TEST_CASE("top-k over a uniform distribution keeps the lowest token ids") {
    const TokenDistribution d = dist_of({{3, 0.25}, {5, 0.25}, {9, 0.25}, {12, 0.25}});
    const TokenDistribution shaped = shape_distribution(d, 1.0, 2, 1.0);
    REQUIRE(shaped.probs.size() == 2);
    CHECK(shaped.probs[0].first == 3);
    CHECK(shaped.probs[1].first == 5);
    CHECK(shaped.probs[0].second == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(shaped.probs[1].second == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("top-p keeps the smallest prefix reaching the target mass") {
    const TokenDistribution d = dist_of({{0, 0.7}, {1, 0.2}, {2, 0.1}});
    const TokenDistribution shaped = shape_distribution(d, 1.0, 3, 0.8);
    REQUIRE(shaped.probs.size() == 2);
    CHECK(shaped.probs[0].first == 0);
    CHECK(shaped.probs[0].second == doctest::Approx(7.0 / 9.0).epsilon(1e-12));
    CHECK(shaped.probs[1].first == 1);
    CHECK(shaped.probs[1].second == doctest::Approx(2.0 / 9.0).epsilon(1e-12));
}

TEST_CASE("temperature sharpens in the stated order of operations") {
    // temperature 0.5 squares probabilities before renormalization
    const TokenDistribution d = dist_of({{0, 0.8}, {1, 0.2}});
    const TokenDistribution shaped = shape_distribution(d, 0.5, 2, 1.0);
    const double expect0 = 0.64 / (0.64 + 0.04);
    CHECK(shaped.probs[0].second == doctest::Approx(expect0).epsilon(1e-12));
}

TEST_CASE("shaping rejects bad parameters") {
    const TokenDistribution d = dist_of({{0, 1.0}});
    CHECK_THROWS(shape_distribution(d, 0.0, 1, 1.0));
    CHECK_THROWS(shape_distribution(d, 1.0, 0, 1.0));
    CHECK_THROWS(shape_distribution(d, 1.0, 1, 0.0));
    CHECK_THROWS(shape_distribution(TokenDistribution{}, 1.0, 1, 1.0));
}

TEST_CASE("tournament bracket follows the layer-j comparison rule") {
    SplitMix64 rng(1);

    SUBCASE("d=1: higher layer-1 bit wins") {
        const TokenId candidates[] = {100, 200};
        const GVector gv[] = {GVector{{1}}, GVector{{0}}};
        CHECK(tournament_select(candidates, gv, rng) == 100);
    }

    SUBCASE("identical candidates produce that token") {
        const TokenId candidates[] = {7, 7, 7, 7};
        const GVector gv[] = {GVector{{1, 0}}, GVector{{1, 0}}, GVector{{1, 0}}, GVector{{1, 0}}};
        CHECK(tournament_select(candidates, gv, rng) == 7);
    }

    SUBCASE("hand-simulated 4-candidate bracket") {
        // pairs (A,B) and (C,D): round 1 layer-1 bits pick A and C, round 2
        // layer-2 bits (0 vs 1) pick C.
        const TokenId candidates[] = {1, 2, 3, 4};
        const GVector gv[] = {GVector{{1, 0}}, GVector{{0, 1}}, GVector{{1, 1}}, GVector{{0, 0}}};
        CHECK(tournament_select(candidates, gv, rng) == 3);
    }

    SUBCASE("candidate count must be 2^depth") {
        const TokenId three[] = {1, 2, 3};
        const GVector gv3[] = {GVector{{1}}, GVector{{0}}, GVector{{1}}};
        CHECK_THROWS(tournament_select(three, gv3, rng));

        const TokenId two[] = {1, 2};
        const GVector gv_deep[] = {GVector{{1, 1}}, GVector{{0, 0}}};
        CHECK_THROWS(tournament_select(two, gv_deep, rng));
    }
}

TEST_CASE("key-averaged tournament output converges to the base distribution") {
    // Smaller replica of the acceptance check: 8-token skewed base, d=4.
    const TokenDistribution base = dist_of({{0, 0.35},
                                            {1, 0.20},
                                            {2, 0.15},
                                            {3, 0.10},
                                            {4, 0.08},
                                            {5, 0.06},
                                            {6, 0.04},
                                            {7, 0.02}});
    constexpr int kKeys = 20000;
    constexpr int kDepth = 4;
    const SeedContext ctx{{2, 4, 6, 8}};
    SplitMix64 rng(42);
    std::map<TokenId, double> histogram;
    std::vector<TokenId> candidates(1 << kDepth);
    std::vector<GVector> gvectors(1 << kDepth);
    for (int k = 0; k < kKeys; ++k) {
        const WatermarkKey key = WatermarkKey::random("mc", rng);
        const std::uint64_t seed = derive_seed(key, ctx, 0);
        for (std::size_t c = 0; c < candidates.size(); ++c) {
            candidates[c] = sample_from(base, rng);
            gvectors[c] = g_vector(seed, candidates[c], kDepth);
        }
        histogram[tournament_select(candidates, gvectors, rng)] += 1.0 / kKeys;
    }
    std::map<TokenId, double> target;
    for (const auto& [id, p] : base.probs) { target[id] = p; }
    CHECK(total_variation(histogram, target) < 0.025);
}

TEST_CASE("point-mass distributions make the output key-independent") {
    const FixedModel model(dist_of({{5, 1.0}}));
    SamplerConfig cfg;
    cfg.rng_seed = 3;
    const std::vector<TokenId> prompt = {1, 2};
    const GenerationRecord a =
        generate_sequence(model, prompt, test_key(1), cfg, 20, std::span<const TokenId>());
    const GenerationRecord b =
        generate_sequence(model, prompt, test_key(2), cfg, 20, std::span<const TokenId>());
    CHECK(a.tokens == b.tokens);
    CHECK(a.generated_len() == 20);
    for (const TokenId t : a.generated()) { CHECK(t == 5); }
}

TEST_CASE("generation is reproducible for fixed seed, key, prompt and model") {
    const FixedModel model(dist_of({{0, 0.4}, {1, 0.3}, {2, 0.2}, {3, 0.1}}));
    SamplerConfig cfg;
    cfg.rng_seed = 11;
    const std::vector<TokenId> prompt = {3, 3};
    const WatermarkKey key = test_key(9);
    const GenerationRecord a = generate_sequence(model, prompt, key, cfg, 64, std::span<const TokenId>());
    const GenerationRecord b = generate_sequence(model, prompt, key, cfg, 64, std::span<const TokenId>());
    CHECK(a.tokens == b.tokens);
    CHECK(a.seeds == b.seeds);
    for (std::size_t i = 0; i < a.gvectors.size(); ++i) {
        CHECK(a.gvectors[i].bits == b.gvectors[i].bits);
    }
    CHECK(a.prompt_len == 2);
    CHECK(a.gvectors.size() == a.generated_len());
}

TEST_CASE("max_tokens zero yields an empty record and stop ids halt generation") {
    const FixedModel model(dist_of({{0, 0.5}, {1, 0.5}}));
    SamplerConfig cfg;
    const std::vector<TokenId> prompt = {1};
    const GenerationRecord empty =
        generate_sequence(model, prompt, test_key(1), cfg, 0, std::span<const TokenId>());
    CHECK(empty.generated_len() == 0);

    const TokenId stop[] = {0};
    const GenerationRecord stopped = generate_sequence(model, prompt, test_key(1), cfg, 1000, stop);
    CHECK(stopped.generated_len() < 1000);
    CHECK(stopped.tokens.back() == 0);
}

TEST_CASE("unweighted score of random tokens under a fresh key is near 1/2") {
    SamplerConfig cfg;
    cfg.depth = 4;
    cfg.num_candidates = 16;
    // 25000 tokens * depth 4 = 1e5 bits
    SplitMix64 rng(123);
    std::vector<TokenId> tokens(25000);
    for (TokenId& t : tokens) { t = static_cast<TokenId>(rng.next_below(500)); }
    const double score = score_sequence_unweighted(tokens, 0, test_key(4), cfg);
    CHECK(score > 0.494);
    CHECK(score < 0.506);
}

TEST_CASE("watermarked generation scores above 1/2 with the generating key") {
    const FixedModel model(
        dist_of({{0, 0.25}, {1, 0.2}, {2, 0.15}, {3, 0.15}, {4, 0.1}, {5, 0.15}}));
    SamplerConfig cfg;
    cfg.rng_seed = 21;
    const WatermarkKey key = test_key(77);
    const std::vector<TokenId> prompt = {0};
    const GenerationRecord rec =
        generate_sequence(model, prompt, key, cfg, 5000, std::span<const TokenId>());
    const double own = score_sequence_unweighted(rec.tokens, rec.prompt_len, key, cfg);
    // Null sigma for T*d bits is 0.5/sqrt(20000) ~ 0.0035; demand 5 sigma.
    CHECK(own > 0.5 + 5.0 * 0.0035);
    const double other = score_sequence_unweighted(rec.tokens, rec.prompt_len, test_key(78), cfg);
    CHECK(std::fabs(other - 0.5) < 5.0 * 0.0035);
    CHECK_THROWS(score_sequence_unweighted(rec.tokens, rec.tokens.size(), key, cfg));
}

TEST_CASE("repeated-context masking skips repeated windows when enabled") {
    const FixedModel model(dist_of({{4, 0.5}, {5, 0.5}}));
    SamplerConfig cfg;
    cfg.rng_seed = 8;
    cfg.mask_repeated_context = true;
    cfg.window = 2;
    const std::vector<TokenId> prompt = {4, 4};
    const GenerationRecord rec =
        generate_sequence(model, prompt, test_key(5), cfg, 200, std::span<const TokenId>());
    std::size_t masked = 0;
    for (const auto w : rec.watermarked) { masked += w == 0 ? 1 : 0; }
    // Two-token vocabulary: only 4 distinct windows exist, so nearly every
    // position repeats one.
    CHECK(masked >= rec.generated_len() - 4);
}

TEST_CASE("generation records serialize to one JSON object per line") {
    const FixedModel model(dist_of({{0, 0.5}, {1, 0.5}}));
    SamplerConfig cfg;
    cfg.rng_seed = 2;
    const std::vector<TokenId> prompt = {1};
    const GenerationRecord rec =
        generate_sequence(model, prompt, test_key(3), cfg, 16, std::span<const TokenId>());
    const std::string line = generation_record_jsonl(rec, cfg);
    CHECK(line.find("\"tokens\"") != std::string::npos);
    CHECK(line.find("\"prompt_len\"") != std::string::npos);
    CHECK(line.find("\"key_id\"") != std::string::npos);
    CHECK(line.find("\"config\"") != std::string::npos);
    CHECK(line.find("\"g_summary\"") != std::string::npos);
    CHECK(line.find('\n') == std::string::npos);
}
