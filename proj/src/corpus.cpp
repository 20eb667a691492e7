#include "wmkit/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <unordered_set>

namespace wmkit {

IngestResult ingest_jsonl(const std::string& path, bool require_response) {
    std::ifstream in(path);
    if (!in.is_open()) {
        throw std::runtime_error("cannot open corpus file: " + path);
    }
    IngestResult result;
    std::unordered_set<std::string> seen_ids;
    std::string line;
    std::size_t lineno = 0;
    std::size_t considered = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) { continue; }
        ++considered;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            result.manifest.push_back({lineno, "invalid JSON object"});
            continue;
        }
        CorpusRecord rec;
        if (!j.contains("id") || !j["id"].is_string() || j["id"].get<std::string>().empty()) {
            result.manifest.push_back({lineno, "missing or empty id"});
            continue;
        }
        rec.id = j["id"].get<std::string>();
        if (!seen_ids.insert(rec.id).second) {
            result.manifest.push_back({lineno, "duplicate id: " + rec.id});
            continue;
        }
        if (!j.contains("prompt") || !j["prompt"].is_string() ||
            j["prompt"].get<std::string>().empty()) {
            result.manifest.push_back({lineno, "missing or empty prompt"});
            continue;
        }
        rec.prompt = j["prompt"].get<std::string>();
        if (j.contains("response") && j["response"].is_string()) {
            rec.response = j["response"].get<std::string>();
        }
        if (require_response && rec.response.empty()) {
            result.manifest.push_back({lineno, "missing or empty response"});
            continue;
        }
        if (j.contains("context") && j["context"].is_string()) {
            rec.context = j["context"].get<std::string>();
        }
        if (j.contains("metadata") && j["metadata"].is_object()) {
            rec.metadata = j["metadata"];
        }
        result.records.push_back(std::move(rec));
    }
    if (considered == 0) {
        std::cerr << "warning: corpus file is empty: " << path << "\n";
        return result;
    }
    if (static_cast<double>(result.manifest.size()) >
        0.01 * static_cast<double>(considered)) {
        throw std::runtime_error("more than 1% malformed lines in " + path + " (" +
                                 std::to_string(result.manifest.size()) + " of " +
                                 std::to_string(considered) + ")");
    }
    return result;
}

void export_jsonl(std::span<const CorpusRecord> records, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out.is_open()) {
        throw std::runtime_error("cannot write corpus file: " + path);
    }
    for (const CorpusRecord& rec : records) {
        nlohmann::json j{{"id", rec.id}, {"prompt", rec.prompt}, {"response", rec.response}};
        if (!rec.context.empty()) { j["context"] = rec.context; }
        if (rec.metadata.is_object() && !rec.metadata.empty()) { j["metadata"] = rec.metadata; }
        out << j.dump() << '\n';
    }
}

Corpus watermark_corpus(const Corpus& corpus, const WatermarkKey& key,
                        const NgramModel& rewriter, const SamplerConfig& cfg, double rho,
                        std::uint64_t seed, RewriteManifest* manifest) {
    if (rho < 0.0 || rho > 1.0) {
        throw std::invalid_argument("rho must lie in [0,1]");
    }
    cfg.validate();

    // Selection by seeded shuffle over the id-sorted order, so the rewritten
    // set is reproducible and independent of input record order.
    std::vector<std::size_t> order(corpus.size());
    for (std::size_t i = 0; i < order.size(); ++i) { order[i] = i; }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return corpus[a].id < corpus[b].id;
    });
    SplitMix64 rng(seed);
    rng.shuffle(order);
    const std::size_t n_rewrite =
        static_cast<std::size_t>(std::floor(rho * static_cast<double>(corpus.size())));

    std::vector<bool> rewrite(corpus.size(), false);
    for (std::size_t i = 0; i < n_rewrite; ++i) { rewrite[order[i]] = true; }

    RewriteManifest local;
    local.key_id = key.key_id;
    local.rho = rho;
    local.seed = seed;

    Corpus out = corpus;
    const Tokenizer& tok = rewriter.tokenizer();
    SplitMix64 gen_rng(seed ^ 0x9e3779b97f4a7c15ULL);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        if (!rewrite[i]) { continue; }
        const CorpusRecord& rec = corpus[i];
        try {
            const std::vector<TokenId> prompt_ids = tok.encode(rec.prompt);
            const std::size_t target_len = tok.encode(rec.response).size();
            if (target_len == 0) {
                throw std::runtime_error("original response tokenizes to nothing");
            }
            const GenerationRecord gen = generate_sequence(
                rewriter, prompt_ids, key, cfg, target_len, std::span<const TokenId>(), gen_rng);
            if (gen.generated_len() == 0) {
                throw std::runtime_error("rewrite produced no tokens");
            }
            out[i].response = tok.decode(gen.generated());
            local.rewritten_ids.push_back(rec.id);
        } catch (const std::exception& e) {
            // Keep the original record on failure; never drop it.
            local.failures.emplace_back(rec.id, e.what());
        }
    }
    if (manifest != nullptr) { *manifest = std::move(local); }
    return out;
}

PromptSet build_prompts(const Corpus& corpus, PromptMode mode, double prefix_fraction,
                        const Tokenizer& tokenizer) {
    if (corpus.empty()) {
        throw std::invalid_argument("cannot build prompts from an empty corpus");
    }
    PromptSet set;
    if (mode == PromptMode::kQa) {
        set.prompts.reserve(corpus.size());
        for (const CorpusRecord& rec : corpus) { set.prompts.push_back(rec.prompt); }
        return set;
    }
    if (!(prefix_fraction > 0.0) || prefix_fraction >= 1.0) {
        throw std::invalid_argument("continuation prefix fraction must lie in (0,1)");
    }
    constexpr std::size_t kMinTokens = 8;
    for (const CorpusRecord& rec : corpus) {
        const std::vector<TokenId> ids = tokenizer.encode(rec.response);
        if (ids.size() < kMinTokens) {
            ++set.skipped_short;
            continue;
        }
        const std::size_t keep = static_cast<std::size_t>(
            std::ceil(prefix_fraction * static_cast<double>(ids.size())));
        set.prompts.push_back(
            tokenizer.decode(std::span<const TokenId>(ids).subspan(0, keep)));
    }
    return set;
}

std::vector<std::string> corpus_sample_texts(const Corpus& corpus) {
    std::vector<std::string> texts;
    texts.reserve(corpus.size());
    for (const CorpusRecord& rec : corpus) {
        texts.push_back(rec.prompt + " " + rec.response);
    }
    return texts;
}

std::vector<std::vector<TokenId>> corpus_token_sequences(const Corpus& corpus,
                                                         const Tokenizer& tokenizer) {
    std::vector<std::vector<TokenId>> seqs;
    seqs.reserve(corpus.size());
    for (const CorpusRecord& rec : corpus) {
        std::vector<TokenId> ids = tokenizer.encode(rec.prompt);
        const std::vector<TokenId> resp = tokenizer.encode(rec.response);
        ids.insert(ids.end(), resp.begin(), resp.end());
        ids.push_back(Tokenizer::kEos);
        seqs.push_back(std::move(ids));
    }
    return seqs;
}

std::string RewriteManifest::to_json_string() const {
    nlohmann::json fails = nlohmann::json::array();
    for (const auto& [id, reason] : failures) {
        fails.push_back({{"id", id}, {"reason", reason}});
    }
    const nlohmann::json j{
        {"failures", fails},
        {"key_id", key_id},
        {"rewritten_ids", rewritten_ids},
        {"rho", rho},
        {"seed", seed},
    };
    return j.dump(2);
}

} // namespace wmkit
