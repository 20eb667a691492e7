#pragma once
// Entropy-gated radioactivity test: per-token watermark scores against a key,
// auxiliary-model entropy ranking, hard top-q% gate, Z statistic and one-sided
// p-value, plus multi-key attribution over cached outputs.

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wmkit/rng.hpp"
#include "wmkit/toy_lm.hpp"
#include "wmkit/wm_core.hpp"

namespace wmkit {

struct ScoredToken {
    TokenId token = 0;
    std::uint32_t seq = 0;    // sequence index within the pooled outputs
    std::uint32_t offset = 0; // absolute position within the sequence
    double entropy = 0.0;     // auxiliary-model H_t, nats
    double gbar = 0.0;        // depth-weighted score in [0,1]
    GVector gvec;
};

struct GatedSet {
    std::vector<ScoredToken> tokens; // the floor(q/100 * N0) highest-entropy entries
    double q = 100.0;
    std::size_t pre_gate_count = 0; // N0
};

struct DetectionConfig {
    int depth = 4;
    int window = 4;
    double q = 40.0;                 // gate percentage
    std::size_t token_budget = 100000;
    std::size_t min_tokens = 1000;   // below this the report is LOW_POWER
    std::size_t min_gated = 30;      // below this no p is emitted (LOW_POWER)
    double temperature = 0.5;        // detection-time query sampling
    double top_p = 0.9;
    int top_k = std::numeric_limits<int>::max();
    std::size_t max_new_tokens_per_prompt = 128;
    bool mask_repeated_context = false;
    std::uint64_t rng_seed = 0;
    double alpha = 0.05;
};

struct TailStats {
    double mean_gbar = 0.0;
    double z = 0.0;
    double p_value = 1.0;
    double log10_p = 0.0;
    std::size_t size = 0;
};

struct DetectionReport {
    std::string key_id;
    std::size_t n0 = 0;
    double q = 100.0;
    int depth = 0;
    double d_eff = 0.0;
    TailStats gated;
    TailStats ungated;
    bool low_power = false;
    std::size_t skipped_sequences = 0;
    double alpha = 0.05;
    std::uint64_t seed = 0;
    std::string outputs_digest;
    std::string config_digest;
    std::string prf_version;
    std::string timestamp;

    bool significant() const { return !low_power && gated.p_value < alpha; }
    std::string to_json_string() const; // single JSON document, sorted keys
};

// One collected model output: prompt tokens followed by generated tokens,
// everything in the detector-side (auxiliary model) tokenization.
struct TokenSequence {
    std::vector<TokenId> tokens;
    std::size_t prompt_len = 0;
};

// Black-box surface of a suspect model: prompt text in, continuation text out.
class TextGenerator {
public:
    virtual ~TextGenerator() = default;
    virtual std::string generate(const std::string& prompt_text, std::size_t max_new_tokens,
                                 SplitMix64& rng) const = 0;
};

// Plain shaped sampling from an n-gram model; stops at its own EOS. The query
// path carries no watermark so any detected signal comes from the model.
class NgramTextGenerator final : public TextGenerator {
public:
    NgramTextGenerator(const NgramModel& model, double temperature, int top_k, double top_p)
        : model_(&model), temperature_(temperature), top_k_(top_k), top_p_(top_p) {}

    std::string generate(const std::string& prompt_text, std::size_t max_new_tokens,
                         SplitMix64& rng) const override;

private:
    const NgramModel* model_;
    double temperature_;
    int top_k_;
    double top_p_;
};

// Queries the generator prompt by prompt (re-tokenizing text with the given
// tokenizer) until token_budget generated tokens are collected or prompts run
// out. Outputs are key-independent by construction.
std::vector<TokenSequence> collect_outputs(const TextGenerator& generator,
                                           std::span<const std::string> prompts,
                                           const Tokenizer& tokenizer,
                                           const DetectionConfig& cfg,
                                           std::size_t* skipped_sequences = nullptr);

// Per generated position: entropy under the auxiliary model given the full
// preceding context, and the depth-weighted watermark score under the key.
// Honors cfg.token_budget (0 = unlimited) and cfg.mask_repeated_context.
std::vector<ScoredToken> score_outputs(std::span<const TokenSequence> outputs,
                                       const WatermarkKey& key, const NgramModel& aux,
                                       const DetectionConfig& cfg,
                                       std::size_t* skipped_sequences = nullptr);

// Keeps the floor(q/100 * N0) highest-entropy tokens; entropy ties break by
// (seq, offset) ascending. Throws when the gate would be empty.
GatedSet entropy_gate(std::vector<ScoredToken> tokens, double q);

double z_statistic(const GatedSet& gated, const DepthWeights& weights);

double p_value(double z);        // 1 - Phi(z)
double log10_p_value(double z);  // survives p underflow for large z

DetectionReport detect_on_outputs(std::span<const TokenSequence> outputs,
                                  const WatermarkKey& key, const NgramModel& aux,
                                  const DetectionConfig& cfg,
                                  std::size_t collect_skipped = 0);

DetectionReport detect(const TextGenerator& suspect, std::span<const std::string> prompts,
                       const WatermarkKey& key, const NgramModel& aux,
                       const DetectionConfig& cfg);

struct AttributionResult {
    std::vector<DetectionReport> reports;   // one per key, in key order
    std::vector<std::size_t> significant;   // indices with p < alpha
    std::optional<std::size_t> attributed;  // set iff exactly one significant
    bool ambiguous = false;                 // two or more keys below alpha
};

// Runs the test once per key over the same cached outputs.
AttributionResult attribute(const TextGenerator& suspect, std::span<const std::string> prompts,
                            std::span<const WatermarkKey> keys, const NgramModel& aux,
                            const DetectionConfig& cfg);

AttributionResult attribute_on_outputs(std::span<const TokenSequence> outputs,
                                       std::span<const WatermarkKey> keys, const NgramModel& aux,
                                       const DetectionConfig& cfg,
                                       std::size_t collect_skipped = 0);

// (seq, offset, token, entropy, gbar, gated) rows for external plotting.
void write_score_csv(const std::string& path, std::span<const ScoredToken> all,
                     const GatedSet& gated);

std::string outputs_digest(std::span<const TokenSequence> outputs);

} // namespace wmkit
