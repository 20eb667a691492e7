#include "wmkit/synth.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_set>

#include "wmkit/rng.hpp"

namespace wmkit {

namespace {

// Function vocabulary is spread over many alternatives per slot so that no
// single token dominates the unigram distribution; a dominant token would let
// the interpolated models chain it into degenerate loops.
const char* const kDeterminers[] = {"the", "a", "its", "their", "this", "that",
                                    "each", "some", "every", "one", "another", "any"};
const char* const kPrepositions[] = {"of", "in", "on", "near", "under",
                                     "over", "with", "from", "through", "between"};
const char* const kVerbs[] = {"is", "was", "has", "held", "became", "seemed", "carried",
                              "moved", "turned", "kept", "found", "made", "took", "left"};

const char* const kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r",
                               "s", "t", "v", "z", "br", "cl", "dr", "gr", "pl",
                               "st", "tr", "sk", "fl", "sp"};
const char* const kVowels[] = {"a", "e", "i", "o", "u", "ai", "or", "en", "ar", "il"};
const char* const kCodas[] = {"", "n", "r", "l", "s", "t", "k", "m", "sh", "nd"};

// Slots: %d determiner, %p preposition, %v verb, %t topic word, %g pool word.
const char* const kQuestionTemplates[] = {
    "what %v %d %t %t %p %d %t %t ?",
    "why %v %d %t %t %p %d %t ?",
    "how %v %t %t and %t %t %p %d %t ?",
    "which %t %t %v %d %t %p %d %t ?",
    "where %v %d %t %t %p %d %g %t ?",
};

const char* const kSentenceTemplates[] = {
    "%d %t %t %v %d %t %t %p %d %g .",
    "%t %t %v %t %g %p %d %t %t .",
    "%d %t %v %d %t %t , then %v %d %g .",
    "%t %t and %t %t %v %p %d %t %t .",
    "%d %g %t %v %t %t %p %t %t .",
    "%t %t %v %d %t %p %d %t %t , but %d %t %v %g .",
    "%d %t %v %d %t %t while %d %t %t %v .",
    "%d %t %t %v %t %t %p %d %t .",
};

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::vector<std::string> make_content_pool(const std::string& domain, std::size_t count) {
    std::unordered_set<std::string> taken;
    for (const char* w : kDeterminers) { taken.insert(w); }
    for (const char* w : kPrepositions) { taken.insert(w); }
    for (const char* w : kVerbs) { taken.insert(w); }
    taken.insert("unk");

    SplitMix64 rng(fnv1a(domain) ^ 0x5bd1e995u);
    std::vector<std::string> pool;
    pool.reserve(count);
    while (pool.size() < count) {
        std::string word;
        for (int s = 0; s < 3; ++s) {
            word += kOnsets[rng.next_below(std::size(kOnsets))];
            word += kVowels[rng.next_below(std::size(kVowels))];
        }
        word += kCodas[rng.next_below(std::size(kCodas))];
        if (taken.insert(word).second) {
            pool.push_back(std::move(word));
        }
    }
    return pool;
}

// Zipf-ish draw favoring the front of the list, so a record keeps returning
// to the same few topic words the way a document repeats its subjects.
std::size_t skewed_index(SplitMix64& rng, std::size_t n) {
    const double u = rng.uniform01();
    const double v = u * u;
    std::size_t idx = static_cast<std::size_t>(v * static_cast<double>(n));
    return idx >= n ? n - 1 : idx;
}

template <std::size_t N>
const char* pick(const char* const (&list)[N], SplitMix64& rng) {
    return list[rng.next_below(N)];
}

std::string fill_template(const std::string& tpl, const std::vector<std::string>& topic,
                          const std::vector<std::string>& pool, SplitMix64& rng) {
    std::string out;
    out.reserve(tpl.size() + 48);
    for (std::size_t i = 0; i < tpl.size(); ++i) {
        if (tpl[i] == '%' && i + 1 < tpl.size()) {
            const char kind = tpl[i + 1];
            ++i;
            switch (kind) {
            case 't': out += topic[skewed_index(rng, topic.size())]; break;
            case 'g': out += pool[rng.next_below(pool.size())]; break;
            case 'd': out += pick(kDeterminers, rng); break;
            case 'p': out += pick(kPrepositions, rng); break;
            case 'v': out += pick(kVerbs, rng); break;
            default: out.push_back(kind); break;
            }
        } else {
            out.push_back(tpl[i]);
        }
    }
    return out;
}

std::size_t count_words(const std::string& s) {
    std::size_t n = 0;
    bool in_word = false;
    for (const char c : s) {
        if (c == ' ') {
            in_word = false;
        } else if (!in_word) {
            in_word = true;
            ++n;
        }
    }
    return n;
}

} // namespace

Corpus synthesize_qa_corpus(const SynthSpec& spec) {
    if (spec.num_records == 0) {
        throw std::invalid_argument("num_records must be >= 1");
    }
    if (spec.topic_size < 4 || spec.topic_size > spec.content_vocab) {
        throw std::invalid_argument("topic_size must lie in [4, content_vocab]");
    }
    const std::vector<std::string> pool = make_content_pool(spec.domain, spec.content_vocab);
    SplitMix64 rng(spec.seed ^ fnv1a(spec.domain));

    Corpus corpus;
    corpus.reserve(spec.num_records);
    for (std::size_t r = 0; r < spec.num_records; ++r) {
        // Per-record topic: distinct pool words in draw order, so the skewed
        // slot sampler keeps reusing the same few subjects of this record.
        std::vector<std::string> topic;
        std::unordered_set<std::size_t> used;
        while (topic.size() < spec.topic_size) {
            const std::size_t p = rng.next_below(pool.size());
            if (used.insert(p).second) { topic.push_back(pool[p]); }
        }

        CorpusRecord rec;
        rec.id = "rec-" + spec.domain + "-" + std::to_string(r);
        rec.prompt = fill_template(
            kQuestionTemplates[rng.next_below(std::size(kQuestionTemplates))], topic, pool, rng);

        std::string response;
        std::size_t tokens = 0;
        while (tokens < spec.response_tokens_per_record) {
            const std::string sentence = fill_template(
                kSentenceTemplates[rng.next_below(std::size(kSentenceTemplates))], topic, pool,
                rng);
            if (!response.empty()) { response.push_back(' '); }
            response += sentence;
            tokens += count_words(sentence);
        }
        rec.response = std::move(response);
        corpus.push_back(std::move(rec));
    }
    return corpus;
}

} // namespace wmkit
