#pragma once
// Deterministic trainable stand-in for every model role in the pipeline:
// rewrite model, suspect model and auxiliary entropy model. Interpolated
// add-k smoothed n-gram over a frozen word/punctuation tokenizer.

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "wmkit/model.hpp"
#include "wmkit/types.hpp"

namespace wmkit {

class Tokenizer {
public:
    static constexpr TokenId kBos = kBosId;
    static constexpr TokenId kEos = kEosId;
    static constexpr TokenId kUnk = kUnkId;
    static constexpr std::size_t kNumReserved = 3;

    Tokenizer();

    // Builds the vocabulary from corpus frequency, capped at max_vocab total
    // ids (reserved ids included). Ties in frequency break lexicographically.
    static Tokenizer build(std::span<const std::string> texts, std::size_t max_vocab);

    // Lowercased word/punctuation segmentation: runs of [a-z0-9] are words,
    // any other non-space byte is a single-character token.
    static std::vector<std::string> split(std::string_view text);

    std::vector<TokenId> encode(std::string_view text) const;

    // Words joined by single spaces; punctuation attaches to the previous
    // token. BOS/EOS render as nothing, UNK as "unk".
    std::string decode(std::span<const TokenId> ids) const;

    std::size_t vocab_size() const { return surfaces_.size(); }
    std::size_t max_vocab() const { return max_vocab_; }
    TokenId id_of(std::string_view surface) const;
    const std::string& surface(TokenId id) const;

private:
    friend class NgramModel;
    std::vector<std::string> surfaces_;                    // indexed by id
    std::unordered_map<std::string, TokenId> ids_;
    std::size_t max_vocab_ = kNumReserved;
};

class NgramModel final : public NextTokenModel {
public:
    struct Params {
        int order = 3;
        double add_k = 0.1;
        std::vector<double> lambda = {0.1, 0.3, 0.6}; // lambda[i-1] weights order i
        void validate() const;                        // throws on bad values
    };

    NgramModel() = default;
    NgramModel(Tokenizer tokenizer, Params params);

    // Accumulates counts; calling again with more data fine-tunes in place.
    // Contexts shorter than order-1 are BOS-padded; nothing is appended to
    // the sequences themselves.
    void train(std::span<const std::vector<TokenId>> corpus);

    TokenDistribution next_token_distribution(std::span<const TokenId> context) const override;

    // Shannon entropy (nats) of the next-token distribution.
    double entropy(std::span<const TokenId> context) const;

    double token_logprob(std::span<const TokenId> context, TokenId token) const;
    double sequence_logprob(std::span<const TokenId> tokens) const;
    std::vector<double> token_logprobs(std::span<const TokenId> tokens) const;
    double perplexity(std::span<const TokenId> tokens) const; // >= 1

    void save(const std::string& path) const;
    static NgramModel load(const std::string& path);

    const Tokenizer& tokenizer() const { return tokenizer_; }
    const Params& params() const { return params_; }
    std::uint64_t total_events() const { return total_events_; }

private:
    struct ContextCounts {
        std::uint64_t total = 0;
        std::unordered_map<TokenId, std::uint64_t> counts;
    };
    using Table = std::unordered_map<std::string, ContextCounts>;

    static std::string pack_context(std::span<const TokenId> ctx);
    void dense_probs(std::span<const TokenId> context, std::vector<double>& out) const;
    const ContextCounts* find_context(int order_index, std::span<const TokenId> context) const;
    // For each order: pointer (may be null) to the counts of the matching
    // context of that order, taken from the tail of `context`.
    std::vector<const ContextCounts*> context_chain(std::span<const TokenId> context) const;
    double logprob_from_chain(const std::vector<const ContextCounts*>& chain, TokenId token) const;

    Tokenizer tokenizer_;
    Params params_;
    std::vector<Table> tables_; // tables_[i] holds order i+1 counts
    std::uint64_t total_events_ = 0;
};

} // namespace wmkit
