#include "wmkit/detector.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <stdexcept>
#include <unordered_set>

#include <json.hpp>

#include "wmkit/sampler.hpp"
#include "wmkit/stats.hpp"

namespace wmkit {

namespace {

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t tt = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

nlohmann::json config_json(const DetectionConfig& cfg) {
    return nlohmann::json{
        {"alpha", cfg.alpha},
        {"d", cfg.depth},
        {"mask_repeated_context", cfg.mask_repeated_context},
        {"max_new_tokens_per_prompt", cfg.max_new_tokens_per_prompt},
        {"min_gated", cfg.min_gated},
        {"min_tokens", cfg.min_tokens},
        {"q", cfg.q},
        {"rng_seed", cfg.rng_seed},
        {"temperature", cfg.temperature},
        {"token_budget", cfg.token_budget},
        {"top_k", cfg.top_k},
        {"top_p", cfg.top_p},
        {"w", cfg.window},
    };
}

std::string pack_window_key(const SeedContext& ctx) {
    std::string key;
    key.reserve(ctx.window.size() * 4);
    for (const TokenId t : ctx.window) {
        key.push_back(static_cast<char>(t & 0xff));
        key.push_back(static_cast<char>((t >> 8) & 0xff));
        key.push_back(static_cast<char>((t >> 16) & 0xff));
        key.push_back(static_cast<char>((t >> 24) & 0xff));
    }
    return key;
}

TailStats tail_stats(std::span<const ScoredToken> tokens, const DepthWeights& weights) {
    TailStats stats;
    stats.size = tokens.size();
    if (tokens.empty()) { return stats; }
    double sum = 0.0;
    for (const ScoredToken& t : tokens) { sum += t.gbar; }
    stats.mean_gbar = sum / static_cast<double>(tokens.size());
    const double d_eff = effective_depth(weights);
    stats.z = (stats.mean_gbar - 0.5) *
              std::sqrt(4.0 * d_eff * static_cast<double>(tokens.size()));
    stats.p_value = p_value(stats.z);
    stats.log10_p = log10_p_value(stats.z);
    return stats;
}

nlohmann::json tail_json(const TailStats& s, bool emit_p) {
    nlohmann::json j{
        {"mean_gbar", s.mean_gbar},
        {"size", s.size},
        {"z", s.z},
    };
    if (emit_p) {
        j["p_value"] = s.p_value;
        j["log10_p"] = s.log10_p;
    } else {
        j["p_value"] = nullptr;
        j["log10_p"] = nullptr;
    }
    return j;
}

} // namespace

std::string NgramTextGenerator::generate(const std::string& prompt_text,
                                         std::size_t max_new_tokens, SplitMix64& rng) const {
    const std::vector<TokenId> prompt = model_->tokenizer().encode(prompt_text);
    const TokenId stop[] = {Tokenizer::kEos};
    const std::vector<TokenId> out =
        sample_sequence(*model_, prompt, temperature_, top_k_, top_p_, max_new_tokens, stop, rng);
    return model_->tokenizer().decode(out);
}

std::vector<TokenSequence> collect_outputs(const TextGenerator& generator,
                                           std::span<const std::string> prompts,
                                           const Tokenizer& tokenizer,
                                           const DetectionConfig& cfg,
                                           std::size_t* skipped_sequences) {
    if (prompts.empty()) {
        throw std::invalid_argument("no prompts to query the model with");
    }
    SplitMix64 rng(cfg.rng_seed);
    std::vector<TokenSequence> outputs;
    std::size_t skipped = 0;
    std::size_t collected = 0;
    for (const std::string& prompt_text : prompts) {
        if (cfg.token_budget > 0 && collected >= cfg.token_budget) { break; }
        const std::string out_text =
            generator.generate(prompt_text, cfg.max_new_tokens_per_prompt, rng);
        TokenSequence seq;
        seq.tokens = tokenizer.encode(prompt_text);
        seq.prompt_len = seq.tokens.size();
        const std::vector<TokenId> generated = tokenizer.encode(out_text);
        if (generated.empty()) {
            ++skipped;
            continue;
        }
        seq.tokens.insert(seq.tokens.end(), generated.begin(), generated.end());
        collected += generated.size();
        outputs.push_back(std::move(seq));
    }
    if (skipped_sequences != nullptr) { *skipped_sequences = skipped; }
    return outputs;
}

std::vector<ScoredToken> score_outputs(std::span<const TokenSequence> outputs,
                                       const WatermarkKey& key, const NgramModel& aux,
                                       const DetectionConfig& cfg,
                                       std::size_t* skipped_sequences) {
    const DepthWeights weights = depth_weights(cfg.depth);
    std::vector<ScoredToken> scored;
    std::size_t skipped = 0;
    std::unordered_set<std::string> seen_windows;
    for (std::size_t s = 0; s < outputs.size(); ++s) {
        const TokenSequence& seq = outputs[s];
        if (seq.tokens.size() <= seq.prompt_len) {
            ++skipped;
            continue;
        }
        if (cfg.mask_repeated_context) { seen_windows.clear(); }
        const std::span<const TokenId> tokens(seq.tokens);
        for (std::size_t t = seq.prompt_len; t < seq.tokens.size(); ++t) {
            if (cfg.token_budget > 0 && scored.size() >= cfg.token_budget) { break; }
            const std::span<const TokenId> context = tokens.subspan(0, t);
            const SeedContext ctx = make_window(context, cfg.window, kBosId);
            if (cfg.mask_repeated_context &&
                !seen_windows.insert(pack_window_key(ctx)).second) {
                continue;
            }
            ScoredToken st;
            st.token = seq.tokens[t];
            st.seq = static_cast<std::uint32_t>(s);
            st.offset = static_cast<std::uint32_t>(t);
            st.entropy = aux.entropy(context);
            st.gvec = g_vector(derive_seed(key, ctx, 0), st.token, cfg.depth);
            st.gbar = weighted_g(st.gvec, weights);
            scored.push_back(std::move(st));
        }
        if (cfg.token_budget > 0 && scored.size() >= cfg.token_budget) { break; }
    }
    if (skipped_sequences != nullptr) { *skipped_sequences = skipped; }
    return scored;
}

GatedSet entropy_gate(std::vector<ScoredToken> tokens, double q) {
    if (!(q > 0.0) || q > 100.0) {
        throw std::invalid_argument("gate percentage must lie in (0,100]");
    }
    if (tokens.empty()) {
        throw std::invalid_argument("entropy gate on an empty token list");
    }
    const std::size_t n0 = tokens.size();
    const std::size_t b =
        static_cast<std::size_t>(std::floor(q / 100.0 * static_cast<double>(n0)));
    if (b == 0) {
        throw std::invalid_argument("entropy gate selected zero tokens");
    }
    std::sort(tokens.begin(), tokens.end(), [](const ScoredToken& a, const ScoredToken& b) {
        if (a.entropy != b.entropy) { return a.entropy > b.entropy; }
        if (a.seq != b.seq) { return a.seq < b.seq; }
        return a.offset < b.offset;
    });
    tokens.resize(b);
    GatedSet gated;
    gated.tokens = std::move(tokens);
    gated.q = q;
    gated.pre_gate_count = n0;
    return gated;
}

double z_statistic(const GatedSet& gated, const DepthWeights& weights) {
    if (gated.tokens.empty()) {
        throw std::invalid_argument("z statistic of an empty scored set");
    }
    return tail_stats(gated.tokens, weights).z;
}

double p_value(double z) {
    if (!std::isfinite(z)) {
        throw std::invalid_argument("z statistic must be finite");
    }
    return normal_upper_tail(z);
}

double log10_p_value(double z) {
    if (!std::isfinite(z)) {
        throw std::invalid_argument("z statistic must be finite");
    }
    return log10_normal_upper_tail(z);
}

DetectionReport detect_on_outputs(std::span<const TokenSequence> outputs,
                                  const WatermarkKey& key, const NgramModel& aux,
                                  const DetectionConfig& cfg, std::size_t collect_skipped) {
    const DepthWeights weights = depth_weights(cfg.depth);

    DetectionReport report;
    report.key_id = key.key_id;
    report.q = cfg.q;
    report.depth = cfg.depth;
    report.d_eff = effective_depth(weights);
    report.alpha = cfg.alpha;
    report.seed = cfg.rng_seed;
    report.prf_version = kPrfVersion;
    report.outputs_digest = outputs_digest(outputs);
    report.config_digest = digest_hex(config_json(cfg).dump());
    report.timestamp = utc_timestamp();

    std::size_t score_skipped = 0;
    std::vector<ScoredToken> scored = score_outputs(outputs, key, aux, cfg, &score_skipped);
    report.skipped_sequences = collect_skipped + score_skipped;
    report.n0 = scored.size();

    if (scored.empty()) {
        report.low_power = true;
        return report;
    }
    report.ungated = tail_stats(scored, weights);

    const std::size_t b =
        static_cast<std::size_t>(std::floor(cfg.q / 100.0 * static_cast<double>(scored.size())));
    if (b == 0) {
        report.low_power = true;
        return report;
    }
    const GatedSet gated = entropy_gate(std::move(scored), cfg.q);
    report.gated = tail_stats(gated.tokens, weights);

    if (report.n0 < cfg.min_tokens || report.gated.size < cfg.min_gated) {
        report.low_power = true;
    }
    return report;
}

DetectionReport detect(const TextGenerator& suspect, std::span<const std::string> prompts,
                       const WatermarkKey& key, const NgramModel& aux,
                       const DetectionConfig& cfg) {
    std::size_t skipped = 0;
    const std::vector<TokenSequence> outputs =
        collect_outputs(suspect, prompts, aux.tokenizer(), cfg, &skipped);
    return detect_on_outputs(outputs, key, aux, cfg, skipped);
}

AttributionResult attribute_on_outputs(std::span<const TokenSequence> outputs,
                                       std::span<const WatermarkKey> keys, const NgramModel& aux,
                                       const DetectionConfig& cfg, std::size_t collect_skipped) {
    if (keys.empty()) {
        throw std::invalid_argument("attribution needs at least one key");
    }
    AttributionResult result;
    result.reports.reserve(keys.size());
    for (const WatermarkKey& key : keys) {
        result.reports.push_back(detect_on_outputs(outputs, key, aux, cfg, collect_skipped));
    }
    for (std::size_t i = 0; i < result.reports.size(); ++i) {
        if (result.reports[i].significant()) { result.significant.push_back(i); }
    }
    if (result.significant.size() == 1) {
        result.attributed = result.significant.front();
    } else if (result.significant.size() > 1) {
        result.ambiguous = true;
    }
    return result;
}

AttributionResult attribute(const TextGenerator& suspect, std::span<const std::string> prompts,
                            std::span<const WatermarkKey> keys, const NgramModel& aux,
                            const DetectionConfig& cfg) {
    std::size_t skipped = 0;
    const std::vector<TokenSequence> outputs =
        collect_outputs(suspect, prompts, aux.tokenizer(), cfg, &skipped);
    return attribute_on_outputs(outputs, keys, aux, cfg, skipped);
}

std::string outputs_digest(std::span<const TokenSequence> outputs) {
    std::string bytes;
    for (const TokenSequence& seq : outputs) {
        bytes.push_back('|');
        for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
            const TokenId t = seq.tokens[i];
            bytes.push_back(i == seq.prompt_len ? ';' : ',');
            bytes.push_back(static_cast<char>(t & 0xff));
            bytes.push_back(static_cast<char>((t >> 8) & 0xff));
            bytes.push_back(static_cast<char>((t >> 16) & 0xff));
            bytes.push_back(static_cast<char>((t >> 24) & 0xff));
        }
    }
    return digest_hex(bytes);
}

std::string DetectionReport::to_json_string() const {
    const bool emit_p = !low_power;
    nlohmann::json j{
        {"alpha", alpha},
        {"config_digest", config_digest},
        {"d", depth},
        {"d_eff", d_eff},
        {"gated", tail_json(gated, emit_p)},
        {"key_id", key_id},
        {"low_power", low_power},
        {"method", "entropy_gated_watermark"},
        {"n0", n0},
        {"outputs_digest", outputs_digest},
        {"prf", prf_version},
        {"q", q},
        {"schema", 1},
        {"seed", seed},
        {"skipped_sequences", skipped_sequences},
        {"timestamp", timestamp},
        {"ungated", tail_json(ungated, emit_p)},
    };
    return j.dump(2);
}

void write_score_csv(const std::string& path, std::span<const ScoredToken> all,
                     const GatedSet& gated) {
    std::ofstream out(path, std::ios::trunc);
    if (!out.is_open()) {
        throw std::runtime_error("cannot write CSV: " + path);
    }
    std::unordered_set<std::uint64_t> in_gate;
    in_gate.reserve(gated.tokens.size());
    for (const ScoredToken& t : gated.tokens) {
        in_gate.insert((static_cast<std::uint64_t>(t.seq) << 32) | t.offset);
    }
    out << "seq,offset,token,entropy,gbar,gated\n";
    char buf[160];
    for (const ScoredToken& t : all) {
        const bool g =
            in_gate.count((static_cast<std::uint64_t>(t.seq) << 32) | t.offset) != 0;
        std::snprintf(buf, sizeof(buf), "%u,%u,%u,%.17g,%.17g,%d\n", t.seq, t.offset, t.token,
                      t.entropy, t.gbar, g ? 1 : 0);
        out << buf;
    }
}

} // namespace wmkit
