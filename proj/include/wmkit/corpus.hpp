#pragma once
// JSONL corpus ingestion with an error manifest, the watermark-rewrite pass
// over a rho-fraction of records, and prompt construction for the two
// detection modes.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "wmkit/sampler.hpp"
#include "wmkit/toy_lm.hpp"
#include "wmkit/wm_core.hpp"

namespace wmkit {

struct CorpusRecord {
    std::string id;
    std::string prompt;
    std::string response;
    std::string context;     // optional
    nlohmann::json metadata; // optional object
};

using Corpus = std::vector<CorpusRecord>;

struct IngestIssue {
    std::size_t line = 0;
    std::string reason;
};

struct IngestResult {
    Corpus records;
    std::vector<IngestIssue> manifest; // malformed lines, never silently dropped
};

// One record per line with fields id/prompt/response and optional
// context/metadata. Throws when more than 1% of nonempty lines are malformed.
IngestResult ingest_jsonl(const std::string& path, bool require_response = true);

void export_jsonl(std::span<const CorpusRecord> records, const std::string& path);

struct RewriteManifest {
    std::vector<std::string> rewritten_ids;
    std::vector<std::pair<std::string, std::string>> failures; // (id, reason)
    std::string key_id;
    double rho = 0.0;
    std::uint64_t seed = 0;

    std::string to_json_string() const;
};

// Regenerates the responses of a seeded-shuffle-selected floor(rho*n) subset
// of records through watermarked generation conditioned on each record's
// prompt. Ids and prompts are never touched; a failed rewrite keeps the
// original response and is logged.
Corpus watermark_corpus(const Corpus& corpus, const WatermarkKey& key,
                        const NgramModel& rewriter, const SamplerConfig& cfg, double rho,
                        std::uint64_t seed, RewriteManifest* manifest = nullptr);

enum class PromptMode { kQa, kContinuation };

struct PromptSet {
    std::vector<std::string> prompts;
    std::size_t skipped_short = 0; // continuation records under 8 tokens
};

// qa: the stored question. continuation: the first ceil(fraction*len) tokens
// of the response, detokenized; fraction must lie in (0,1).
PromptSet build_prompts(const Corpus& corpus, PromptMode mode, double prefix_fraction,
                        const Tokenizer& tokenizer);

// prompt + response in one string, the unit scored by the MIA baselines.
std::vector<std::string> corpus_sample_texts(const Corpus& corpus);

// Token sequences (prompt then response) used for model training.
std::vector<std::vector<TokenId>> corpus_token_sequences(const Corpus& corpus,
                                                         const Tokenizer& tokenizer);

} // namespace wmkit
