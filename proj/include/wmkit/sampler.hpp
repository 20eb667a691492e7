#pragma once
// Watermarked generation: temperature/top-k/top-p shaping and the d-round
// tournament that picks each emitted token, plus the plain shaped sampler
// used on the detection query path (no watermark there by construction).

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "wmkit/model.hpp"
#include "wmkit/rng.hpp"
#include "wmkit/wm_core.hpp"

namespace wmkit {

struct SamplerConfig {
    int depth = 4;            // tournament rounds d
    int num_candidates = 16;  // 2^depth in paper-faithful mode
    int window = 4;           // seed context window length w
    double temperature = 1.0;
    int top_k = std::numeric_limits<int>::max();
    double top_p = 1.0;
    bool mask_repeated_context = false;
    std::uint64_t rng_seed = 0;

    void validate() const; // throws on violated invariants
};

// Sampling parameters used when producing watermarked rewrites.
SamplerConfig rewrite_sampler_config();

struct GenerationRecord {
    std::vector<TokenId> tokens; // prompt followed by generated tokens
    std::size_t prompt_len = 0;
    std::string key_id;
    // Parallel per-generated-token data; prompt tokens carry none.
    std::vector<GVector> gvectors;
    std::vector<std::uint64_t> seeds;
    std::vector<std::uint8_t> watermarked; // 0 when masked by repeated-context

    std::size_t generated_len() const { return tokens.size() - prompt_len; }
    std::span<const TokenId> generated() const {
        return std::span<const TokenId>(tokens).subspan(prompt_len);
    }
};

// One JSON object: {tokens, prompt_len, key_id, config, g_summary}.
std::string generation_record_jsonl(const GenerationRecord& record, const SamplerConfig& cfg);

// Temperature on log-probabilities, then top-k, then smallest prefix with
// cumulative mass >= top_p, then renormalize. Probability ties break by
// ascending token id.
TokenDistribution shape_distribution(const TokenDistribution& dist, double temperature,
                                     int top_k, double top_p);

// Adjacent pairing bracket; round j compares layer-j g-bits, ties resolved by
// an rng coin. Candidate count must be a power of two.
TokenId tournament_select(std::span<const TokenId> candidates,
                          std::span<const GVector> gvectors, SplitMix64& rng);

TokenId sample_from(const TokenDistribution& dist, SplitMix64& rng);

GenerationRecord generate_sequence(const NextTokenModel& model, std::span<const TokenId> prompt,
                                   const WatermarkKey& key, const SamplerConfig& cfg,
                                   std::size_t max_tokens, std::span<const TokenId> stop_ids,
                                   SplitMix64& rng);

// Convenience overload seeding the rng from cfg.rng_seed.
GenerationRecord generate_sequence(const NextTokenModel& model, std::span<const TokenId> prompt,
                                   const WatermarkKey& key, const SamplerConfig& cfg,
                                   std::size_t max_tokens, std::span<const TokenId> stop_ids);

// Plain shaped sampling, no tournament.
std::vector<TokenId> sample_sequence(const NextTokenModel& model, std::span<const TokenId> prompt,
                                     double temperature, int top_k, double top_p,
                                     std::size_t max_tokens, std::span<const TokenId> stop_ids,
                                     SplitMix64& rng);

// Recomputes g-values from the key (stored gvectors are never trusted) and
// returns the grand mean over the T*d bits of the generated positions.
double score_sequence_unweighted(std::span<const TokenId> tokens, std::size_t prompt_len,
                                 const WatermarkKey& key, const SamplerConfig& cfg);

} // namespace wmkit
