#include "wmkit/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include <json.hpp>

namespace wmkit {

namespace {

bool is_power_of_two(std::size_t n) {
    return n != 0 && (n & (n - 1)) == 0;
}

std::string pack_window(const SeedContext& ctx) {
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

} // namespace

void SamplerConfig::validate() const {
    if (depth < 1 || depth > kMaxDepth) {
        throw std::invalid_argument("tournament depth out of range [1,64]");
    }
    if (num_candidates < 2 || !is_power_of_two(static_cast<std::size_t>(num_candidates))) {
        throw std::invalid_argument("num_candidates must be a power of two >= 2");
    }
    if (num_candidates != (1 << depth)) {
        throw std::invalid_argument("num_candidates must equal 2^depth");
    }
    if (window < 1) {
        throw std::invalid_argument("context window must be >= 1");
    }
    if (!(temperature > 0.0)) {
        throw std::invalid_argument("temperature must be > 0");
    }
    if (top_k < 1) {
        throw std::invalid_argument("top_k must be >= 1");
    }
    if (!(top_p > 0.0) || top_p > 1.0) {
        throw std::invalid_argument("top_p must lie in (0,1]");
    }
}

SamplerConfig rewrite_sampler_config() {
    SamplerConfig cfg;
    cfg.depth = 4;
    cfg.num_candidates = 16;
    cfg.window = 4;
    cfg.temperature = 0.8;
    cfg.top_k = 50;
    cfg.top_p = 0.95;
    return cfg;
}

TokenDistribution shape_distribution(const TokenDistribution& dist, double temperature,
                                     int top_k, double top_p) {
    if (dist.probs.empty()) {
        throw std::invalid_argument("cannot shape an empty distribution");
    }
    if (!(temperature > 0.0)) {
        throw std::invalid_argument("temperature must be > 0");
    }
    if (top_k < 1) {
        throw std::invalid_argument("top_k must be >= 1");
    }
    if (!(top_p > 0.0) || top_p > 1.0) {
        throw std::invalid_argument("top_p must lie in (0,1]");
    }

    // Temperature acts on log-probabilities: p^(1/T), renormalized below.
    std::vector<std::pair<TokenId, double>> entries;
    entries.reserve(dist.probs.size());
    const double inv_t = 1.0 / temperature;
    for (const auto& [id, p] : dist.probs) {
        if (p < 0.0) {
            throw std::invalid_argument("distribution holds a negative probability");
        }
        if (p > 0.0) {
            entries.emplace_back(id, std::exp(std::log(p) * inv_t));
        }
    }
    if (entries.empty()) {
        throw std::invalid_argument("distribution has empty support");
    }

    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) { return a.second > b.second; }
        return a.first < b.first;
    });
    if (entries.size() > static_cast<std::size_t>(top_k)) {
        entries.resize(static_cast<std::size_t>(top_k));
    }

    double mass = 0.0;
    for (const auto& [id, p] : entries) { mass += p; }
    const double threshold = top_p * mass;
    double cum = 0.0;
    std::size_t keep = entries.size();
    for (std::size_t i = 0; i < entries.size(); ++i) {
        cum += entries[i].second;
        if (cum >= threshold - 1e-12 * mass) {
            keep = i + 1;
            break;
        }
    }
    entries.resize(keep);

    double total = 0.0;
    for (const auto& [id, p] : entries) { total += p; }
    TokenDistribution out;
    out.probs.reserve(entries.size());
    std::sort(entries.begin(), entries.end());
    for (const auto& [id, p] : entries) {
        out.probs.emplace_back(id, p / total);
    }
    return out;
}

TokenId tournament_select(std::span<const TokenId> candidates,
                          std::span<const GVector> gvectors, SplitMix64& rng) {
    if (!is_power_of_two(candidates.size()) || candidates.size() < 2) {
        throw std::invalid_argument("tournament needs a power-of-two candidate count >= 2");
    }
    if (gvectors.size() != candidates.size()) {
        throw std::invalid_argument("one g-vector required per candidate");
    }
    const int depth = gvectors[0].depth();
    if ((std::size_t{1} << depth) != candidates.size()) {
        throw std::invalid_argument("candidate count must equal 2^depth");
    }

    std::vector<std::size_t> alive(candidates.size());
    for (std::size_t i = 0; i < alive.size(); ++i) { alive[i] = i; }
    for (int round = 0; round < depth; ++round) {
        std::vector<std::size_t> winners;
        winners.reserve(alive.size() / 2);
        for (std::size_t m = 0; m + 1 < alive.size(); m += 2) {
            const std::size_t a = alive[m];
            const std::size_t b = alive[m + 1];
            const std::uint8_t ga = gvectors[a].bits[static_cast<std::size_t>(round)];
            const std::uint8_t gb = gvectors[b].bits[static_cast<std::size_t>(round)];
            std::size_t win;
            if (ga != gb) {
                win = ga > gb ? a : b;
            } else {
                win = rng.coin() ? b : a;
            }
            winners.push_back(win);
        }
        alive.swap(winners);
    }
    return candidates[alive[0]];
}

TokenId sample_from(const TokenDistribution& dist, SplitMix64& rng) {
    if (dist.probs.empty()) {
        throw std::invalid_argument("cannot sample from an empty distribution");
    }
    const double r = rng.uniform01();
    double cum = 0.0;
    for (const auto& [id, p] : dist.probs) {
        cum += p;
        if (r < cum) { return id; }
    }
    return dist.probs.back().first;
}

GenerationRecord generate_sequence(const NextTokenModel& model, std::span<const TokenId> prompt,
                                   const WatermarkKey& key, const SamplerConfig& cfg,
                                   std::size_t max_tokens, std::span<const TokenId> stop_ids,
                                   SplitMix64& rng) {
    cfg.validate();
    GenerationRecord record;
    record.tokens.assign(prompt.begin(), prompt.end());
    record.prompt_len = prompt.size();
    record.key_id = key.key_id;

    const std::size_t n_cand = static_cast<std::size_t>(cfg.num_candidates);
    std::vector<TokenId> candidates(n_cand);
    std::vector<GVector> gvectors(n_cand);
    std::unordered_set<std::string> seen_windows;

    for (std::size_t t = 0; t < max_tokens; ++t) {
        TokenDistribution dist;
        try {
            dist = model.next_token_distribution(record.tokens);
        } catch (const std::exception& e) {
            throw std::runtime_error("model failed at position " + std::to_string(t) + ": " +
                                     e.what());
        }
        const TokenDistribution shaped =
            shape_distribution(dist, cfg.temperature, cfg.top_k, cfg.top_p);

        const SeedContext ctx = make_window(record.tokens, cfg.window, kBosId);
        const std::uint64_t seed = derive_seed(key, ctx, 0);

        bool watermark_here = true;
        if (cfg.mask_repeated_context) {
            watermark_here = seen_windows.insert(pack_window(ctx)).second;
        }

        TokenId winner;
        GVector winner_gv;
        if (!watermark_here) {
            winner = sample_from(shaped, rng);
        } else {
            for (std::size_t c = 0; c < n_cand; ++c) {
                candidates[c] = sample_from(shaped, rng);
                // Re-use the g-vector when the same token was already drawn
                // at this position.
                bool found = false;
                for (std::size_t p = 0; p < c; ++p) {
                    if (candidates[p] == candidates[c]) {
                        gvectors[c] = gvectors[p];
                        found = true;
                        break;
                    }
                }
                if (!found) {
                    gvectors[c] = g_vector(seed, candidates[c], cfg.depth);
                }
            }
            winner = tournament_select(candidates, gvectors, rng);
            for (std::size_t c = 0; c < n_cand; ++c) {
                if (candidates[c] == winner) {
                    winner_gv = gvectors[c];
                    break;
                }
            }
        }

        record.tokens.push_back(winner);
        record.gvectors.push_back(std::move(winner_gv));
        record.seeds.push_back(seed);
        record.watermarked.push_back(watermark_here ? 1 : 0);

        if (std::find(stop_ids.begin(), stop_ids.end(), winner) != stop_ids.end()) {
            break;
        }
    }
    return record;
}

GenerationRecord generate_sequence(const NextTokenModel& model, std::span<const TokenId> prompt,
                                   const WatermarkKey& key, const SamplerConfig& cfg,
                                   std::size_t max_tokens, std::span<const TokenId> stop_ids) {
    SplitMix64 rng(cfg.rng_seed);
    return generate_sequence(model, prompt, key, cfg, max_tokens, stop_ids, rng);
}

std::vector<TokenId> sample_sequence(const NextTokenModel& model, std::span<const TokenId> prompt,
                                     double temperature, int top_k, double top_p,
                                     std::size_t max_tokens, std::span<const TokenId> stop_ids,
                                     SplitMix64& rng) {
    std::vector<TokenId> tokens(prompt.begin(), prompt.end());
    for (std::size_t t = 0; t < max_tokens; ++t) {
        const TokenDistribution shaped =
            shape_distribution(model.next_token_distribution(tokens), temperature, top_k, top_p);
        const TokenId next = sample_from(shaped, rng);
        tokens.push_back(next);
        if (std::find(stop_ids.begin(), stop_ids.end(), next) != stop_ids.end()) {
            break;
        }
    }
    return std::vector<TokenId>(tokens.begin() + static_cast<std::ptrdiff_t>(prompt.size()),
                                tokens.end());
}

double score_sequence_unweighted(std::span<const TokenId> tokens, std::size_t prompt_len,
                                 const WatermarkKey& key, const SamplerConfig& cfg) {
    cfg.validate();
    if (tokens.size() <= prompt_len) {
        throw std::invalid_argument("no generated positions to score");
    }
    std::unordered_set<std::string> seen_windows;
    std::uint64_t ones = 0;
    std::uint64_t bits = 0;
    for (std::size_t t = prompt_len; t < tokens.size(); ++t) {
        const SeedContext ctx =
            make_window(tokens.subspan(0, t), cfg.window, kBosId);
        if (cfg.mask_repeated_context && !seen_windows.insert(pack_window(ctx)).second) {
            continue;
        }
        const std::uint64_t seed = derive_seed(key, ctx, 0);
        const GVector gv = g_vector(seed, tokens[t], cfg.depth);
        for (const std::uint8_t b : gv.bits) { ones += b; }
        bits += gv.bits.size();
    }
    if (bits == 0) {
        throw std::invalid_argument("every position was masked; nothing to score");
    }
    return static_cast<double>(ones) / static_cast<double>(bits);
}

std::string generation_record_jsonl(const GenerationRecord& record, const SamplerConfig& cfg) {
    nlohmann::json j;
    j["tokens"] = record.tokens;
    j["prompt_len"] = record.prompt_len;
    j["key_id"] = record.key_id;
    j["config"] = {
        {"d", cfg.depth},
        {"num_candidates", cfg.num_candidates},
        {"w", cfg.window},
        {"temperature", cfg.temperature},
        {"top_k", cfg.top_k},
        {"top_p", cfg.top_p},
        {"mask_repeated_context", cfg.mask_repeated_context},
        {"rng_seed", cfg.rng_seed},
    };
    const DepthWeights weights = depth_weights(cfg.depth);
    double sum_gbar = 0.0;
    std::size_t scored = 0;
    for (std::size_t i = 0; i < record.gvectors.size(); ++i) {
        if (record.watermarked[i] == 0) { continue; }
        sum_gbar += weighted_g(record.gvectors[i], weights);
        ++scored;
    }
    j["g_summary"] = {
        {"watermarked_positions", scored},
        {"mean_weighted_g", scored > 0 ? sum_gbar / static_cast<double>(scored) : 0.0},
    };
    return j.dump();
}

} // namespace wmkit
