#include "wmkit/toy_lm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace wmkit {

namespace {

constexpr char kMagic[4] = {'W', 'M', 'L', 'M'};
constexpr std::uint32_t kFormatVersion = 1;

bool is_word_char(unsigned char c) {
    return std::isalnum(c) != 0;
}

void write_u32(std::ofstream& out, std::uint32_t v) {
    char buf[4];
    for (int i = 0; i < 4; ++i) { buf[i] = static_cast<char>((v >> (8 * i)) & 0xff); }
    out.write(buf, 4);
}

void write_u64(std::ofstream& out, std::uint64_t v) {
    char buf[8];
    for (int i = 0; i < 8; ++i) { buf[i] = static_cast<char>((v >> (8 * i)) & 0xff); }
    out.write(buf, 8);
}

void write_f64(std::ofstream& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    write_u64(out, bits);
}

std::uint32_t read_u32(std::ifstream& in) {
    unsigned char buf[4];
    in.read(reinterpret_cast<char*>(buf), 4);
    if (!in) { throw std::runtime_error("model file truncated"); }
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) { v = (v << 8) | buf[i]; }
    return v;
}

std::uint64_t read_u64(std::ifstream& in) {
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), 8);
    if (!in) { throw std::runtime_error("model file truncated"); }
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) { v = (v << 8) | buf[i]; }
    return v;
}

double read_f64(std::ifstream& in) {
    const std::uint64_t bits = read_u64(in);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

} // namespace

// ---------------------------------------------------------------------------
// Tokenizer

Tokenizer::Tokenizer() {
    surfaces_ = {"<s>", "</s>", "<unk>"};
    for (TokenId id = 0; id < kNumReserved; ++id) {
        ids_.emplace(surfaces_[id], id);
    }
}

std::vector<std::string> Tokenizer::split(std::string_view text) {
    std::vector<std::string> tokens;
    std::string word;
    auto flush = [&] {
        if (!word.empty()) {
            tokens.push_back(word);
            word.clear();
        }
    };
    for (const char raw : text) {
        const auto c = static_cast<unsigned char>(raw);
        if (std::isspace(c) != 0) {
            flush();
        } else if (is_word_char(c)) {
            word.push_back(static_cast<char>(std::tolower(c)));
        } else {
            flush();
            tokens.push_back(std::string(1, static_cast<char>(c)));
        }
    }
    flush();
    return tokens;
}

Tokenizer Tokenizer::build(std::span<const std::string> texts, std::size_t max_vocab) {
    if (max_vocab <= kNumReserved) {
        throw std::invalid_argument("max_vocab must exceed the reserved id count");
    }
    std::unordered_map<std::string, std::uint64_t> freq;
    for (const std::string& text : texts) {
        for (std::string& tok : split(text)) {
            ++freq[std::move(tok)];
        }
    }
    std::vector<std::pair<std::string, std::uint64_t>> ranked(freq.begin(), freq.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) { return a.second > b.second; }
        return a.first < b.first;
    });

    Tokenizer tok;
    tok.max_vocab_ = max_vocab;
    const std::size_t keep = std::min(ranked.size(), max_vocab - kNumReserved);
    for (std::size_t i = 0; i < keep; ++i) {
        const TokenId id = static_cast<TokenId>(tok.surfaces_.size());
        tok.ids_.emplace(ranked[i].first, id);
        tok.surfaces_.push_back(std::move(ranked[i].first));
    }
    return tok;
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
    std::vector<TokenId> ids;
    for (const std::string& tok : split(text)) {
        const auto it = ids_.find(tok);
        ids.push_back(it == ids_.end() ? kUnk : it->second);
    }
    return ids;
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
    std::string out;
    for (const TokenId id : ids) {
        if (id == kBos || id == kEos) { continue; }
        const std::string& s = (id == kUnk) ? "unk" : surface(id);
        const bool punct = s.size() == 1 && !is_word_char(static_cast<unsigned char>(s[0]));
        if (!out.empty() && !punct) { out.push_back(' '); }
        out += s;
    }
    return out;
}

TokenId Tokenizer::id_of(std::string_view surface) const {
    const auto it = ids_.find(std::string(surface));
    return it == ids_.end() ? kUnk : it->second;
}

const std::string& Tokenizer::surface(TokenId id) const {
    if (id >= surfaces_.size()) {
        throw std::out_of_range("token id outside vocabulary");
    }
    return surfaces_[id];
}

// ---------------------------------------------------------------------------
// NgramModel

void NgramModel::Params::validate() const {
    if (order < 1) {
        throw std::invalid_argument("n-gram order must be >= 1");
    }
    if (add_k < 0.0) {
        throw std::invalid_argument("add_k must be >= 0");
    }
    if (lambda.size() != static_cast<std::size_t>(order)) {
        throw std::invalid_argument("need one interpolation weight per order");
    }
    double sum = 0.0;
    for (const double l : lambda) {
        if (l < 0.0) { throw std::invalid_argument("interpolation weights must be >= 0"); }
        sum += l;
    }
    if (std::fabs(sum - 1.0) > 1e-9) {
        throw std::invalid_argument("interpolation weights must sum to 1");
    }
}

NgramModel::NgramModel(Tokenizer tokenizer, Params params)
    : tokenizer_(std::move(tokenizer)), params_(std::move(params)) {
    params_.validate();
    tables_.resize(static_cast<std::size_t>(params_.order));
}

std::string NgramModel::pack_context(std::span<const TokenId> ctx) {
    std::string key;
    key.resize(ctx.size() * 4);
    for (std::size_t i = 0; i < ctx.size(); ++i) {
        const TokenId t = ctx[i];
        key[4 * i] = static_cast<char>(t & 0xff);
        key[4 * i + 1] = static_cast<char>((t >> 8) & 0xff);
        key[4 * i + 2] = static_cast<char>((t >> 16) & 0xff);
        key[4 * i + 3] = static_cast<char>((t >> 24) & 0xff);
    }
    return key;
}

void NgramModel::train(std::span<const std::vector<TokenId>> corpus) {
    if (corpus.empty()) {
        throw std::invalid_argument("training corpus is empty");
    }
    const int n = params_.order;
    std::vector<TokenId> ctx;
    for (const std::vector<TokenId>& seq : corpus) {
        for (std::size_t t = 0; t < seq.size(); ++t) {
            for (int i = 1; i <= n; ++i) {
                const int need = i - 1;
                ctx.clear();
                for (int j = need; j >= 1; --j) {
                    const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(t) - j;
                    ctx.push_back(pos < 0 ? Tokenizer::kBos : seq[static_cast<std::size_t>(pos)]);
                }
                ContextCounts& cc = tables_[static_cast<std::size_t>(i - 1)][pack_context(ctx)];
                ++cc.counts[seq[t]];
                ++cc.total;
            }
            ++total_events_;
        }
    }
}

const NgramModel::ContextCounts* NgramModel::find_context(int order_index,
                                                          std::span<const TokenId> context) const {
    const int need = order_index; // order i+1 conditions on i tokens
    std::vector<TokenId> ctx;
    ctx.reserve(static_cast<std::size_t>(need));
    for (int j = need; j >= 1; --j) {
        const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(context.size()) - j;
        ctx.push_back(pos < 0 ? Tokenizer::kBos : context[static_cast<std::size_t>(pos)]);
    }
    const Table& table = tables_[static_cast<std::size_t>(order_index)];
    const auto it = table.find(pack_context(ctx));
    return it == table.end() ? nullptr : &it->second;
}

std::vector<const NgramModel::ContextCounts*> NgramModel::context_chain(
    std::span<const TokenId> context) const {
    std::vector<const ContextCounts*> chain(static_cast<std::size_t>(params_.order));
    for (int i = 0; i < params_.order; ++i) {
        chain[static_cast<std::size_t>(i)] = find_context(i, context);
    }
    return chain;
}

double NgramModel::logprob_from_chain(const std::vector<const ContextCounts*>& chain,
                                      TokenId token) const {
    const double v = static_cast<double>(tokenizer_.vocab_size());
    const double k = params_.add_k;
    double p = 0.0;
    for (int i = 0; i < params_.order; ++i) {
        const double lambda = params_.lambda[static_cast<std::size_t>(i)];
        const ContextCounts* cc = chain[static_cast<std::size_t>(i)];
        const double total = cc ? static_cast<double>(cc->total) : 0.0;
        double count = 0.0;
        if (cc) {
            const auto it = cc->counts.find(token);
            if (it != cc->counts.end()) { count = static_cast<double>(it->second); }
        }
        const double denom = total + k * v;
        // add_k == 0 with an unseen context degenerates to uniform backoff
        p += lambda * (denom > 0.0 ? (count + k) / denom : 1.0 / v);
    }
    return std::log(p);
}

void NgramModel::dense_probs(std::span<const TokenId> context, std::vector<double>& out) const {
    const std::size_t v = tokenizer_.vocab_size();
    const double vd = static_cast<double>(v);
    const double k = params_.add_k;

    double floor = 0.0;
    const auto chain = context_chain(context);
    for (int i = 0; i < params_.order; ++i) {
        const double lambda = params_.lambda[static_cast<std::size_t>(i)];
        const ContextCounts* cc = chain[static_cast<std::size_t>(i)];
        const double total = cc ? static_cast<double>(cc->total) : 0.0;
        const double denom = total + k * vd;
        floor += lambda * (denom > 0.0 ? k / denom : 1.0 / vd);
    }
    out.assign(v, floor);
    // Observed counts enter in ascending order index, at most one addition per
    // slot per order, so the floating-point result does not depend on hash
    // iteration order.
    for (int i = 0; i < params_.order; ++i) {
        const ContextCounts* cc = chain[static_cast<std::size_t>(i)];
        if (!cc) { continue; }
        const double lambda = params_.lambda[static_cast<std::size_t>(i)];
        const double denom = static_cast<double>(cc->total) + k * vd;
        if (denom <= 0.0) { continue; }
        for (const auto& [token, count] : cc->counts) {
            out[token] += lambda * static_cast<double>(count) / denom;
        }
    }
}

TokenDistribution NgramModel::next_token_distribution(std::span<const TokenId> context) const {
    std::vector<double> dense;
    dense_probs(context, dense);
    TokenDistribution dist;
    dist.probs.reserve(dense.size());
    for (std::size_t x = 0; x < dense.size(); ++x) {
        dist.probs.emplace_back(static_cast<TokenId>(x), dense[x]);
    }
    return dist;
}

double NgramModel::entropy(std::span<const TokenId> context) const {
    std::vector<double> dense;
    dense_probs(context, dense);
    double h = 0.0;
    for (const double p : dense) {
        if (p > 0.0) { h -= p * std::log(p); }
    }
    return h;
}

double NgramModel::token_logprob(std::span<const TokenId> context, TokenId token) const {
    return logprob_from_chain(context_chain(context), token);
}

std::vector<double> NgramModel::token_logprobs(std::span<const TokenId> tokens) const {
    std::vector<double> lps;
    lps.reserve(tokens.size());
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        lps.push_back(token_logprob(tokens.subspan(0, t), tokens[t]));
    }
    return lps;
}

double NgramModel::sequence_logprob(std::span<const TokenId> tokens) const {
    if (tokens.empty()) {
        throw std::invalid_argument("sequence_logprob of an empty sequence");
    }
    double sum = 0.0;
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        sum += token_logprob(tokens.subspan(0, t), tokens[t]);
    }
    return sum;
}

double NgramModel::perplexity(std::span<const TokenId> tokens) const {
    if (tokens.empty()) {
        throw std::invalid_argument("perplexity of an empty sequence");
    }
    return std::exp(-sequence_logprob(tokens) / static_cast<double>(tokens.size()));
}

void NgramModel::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out.is_open()) {
        throw std::runtime_error("cannot write model file: " + path);
    }
    out.write(kMagic, 4);
    write_u32(out, kFormatVersion);
    write_u32(out, static_cast<std::uint32_t>(params_.order));
    write_f64(out, params_.add_k);
    for (const double l : params_.lambda) { write_f64(out, l); }

    write_u64(out, tokenizer_.max_vocab_);
    write_u32(out, static_cast<std::uint32_t>(tokenizer_.surfaces_.size()));
    for (std::size_t id = Tokenizer::kNumReserved; id < tokenizer_.surfaces_.size(); ++id) {
        const std::string& s = tokenizer_.surfaces_[id];
        write_u32(out, static_cast<std::uint32_t>(s.size()));
        out.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    write_u64(out, total_events_);

    for (const Table& table : tables_) {
        std::vector<const std::pair<const std::string, ContextCounts>*> entries;
        entries.reserve(table.size());
        for (const auto& e : table) { entries.push_back(&e); }
        std::sort(entries.begin(), entries.end(),
                  [](const auto* a, const auto* b) { return a->first < b->first; });
        write_u64(out, entries.size());
        for (const auto* e : entries) {
            write_u32(out, static_cast<std::uint32_t>(e->first.size()));
            out.write(e->first.data(), static_cast<std::streamsize>(e->first.size()));
            write_u64(out, e->second.total);
            std::vector<std::pair<TokenId, std::uint64_t>> counts(e->second.counts.begin(),
                                                                  e->second.counts.end());
            std::sort(counts.begin(), counts.end());
            write_u32(out, static_cast<std::uint32_t>(counts.size()));
            for (const auto& [token, count] : counts) {
                write_u32(out, token);
                write_u64(out, count);
            }
        }
    }
    if (!out) {
        throw std::runtime_error("failed while writing model file: " + path);
    }
}

NgramModel NgramModel::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.is_open()) {
        throw std::runtime_error("cannot open model file: " + path);
    }
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        throw std::runtime_error("not a model file (bad magic): " + path);
    }
    const std::uint32_t version = read_u32(in);
    if (version != kFormatVersion) {
        throw std::runtime_error("unsupported model format version " + std::to_string(version));
    }

    Params params;
    params.order = static_cast<int>(read_u32(in));
    if (params.order < 1 || params.order > 16) {
        throw std::runtime_error("model file has implausible order");
    }
    params.add_k = read_f64(in);
    params.lambda.resize(static_cast<std::size_t>(params.order));
    for (double& l : params.lambda) { l = read_f64(in); }

    Tokenizer tok;
    tok.max_vocab_ = read_u64(in);
    const std::uint32_t vocab_size = read_u32(in);
    if (vocab_size < Tokenizer::kNumReserved) {
        throw std::runtime_error("model file has truncated vocabulary");
    }
    for (std::uint32_t id = Tokenizer::kNumReserved; id < vocab_size; ++id) {
        const std::uint32_t len = read_u32(in);
        if (len > (1u << 20)) {
            throw std::runtime_error("model file has implausible surface length");
        }
        std::string s(len, '\0');
        in.read(s.data(), len);
        if (!in) { throw std::runtime_error("model file truncated"); }
        tok.ids_.emplace(s, id);
        tok.surfaces_.push_back(std::move(s));
    }

    NgramModel model(std::move(tok), std::move(params));
    model.total_events_ = read_u64(in);
    for (int i = 0; i < model.params_.order; ++i) {
        const std::uint64_t num_contexts = read_u64(in);
        Table& table = model.tables_[static_cast<std::size_t>(i)];
        table.reserve(static_cast<std::size_t>(num_contexts));
        for (std::uint64_t c = 0; c < num_contexts; ++c) {
            const std::uint32_t key_len = read_u32(in);
            if (key_len != static_cast<std::uint32_t>(i) * 4) {
                throw std::runtime_error("model file has malformed context key");
            }
            std::string key(key_len, '\0');
            in.read(key.data(), key_len);
            if (!in) { throw std::runtime_error("model file truncated"); }
            ContextCounts cc;
            cc.total = read_u64(in);
            const std::uint32_t entries = read_u32(in);
            cc.counts.reserve(entries);
            for (std::uint32_t e = 0; e < entries; ++e) {
                const TokenId token = read_u32(in);
                cc.counts.emplace(token, read_u64(in));
            }
            table.emplace(std::move(key), std::move(cc));
        }
    }
    return model;
}

} // namespace wmkit
