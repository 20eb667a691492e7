#pragma once
// Seeded synthetic QA corpora. Records mix a fixed function-word skeleton
// (predictable after training, low entropy) with open content slots drawn
// from per-record topics (high entropy), which gives the trained toy models
// the entropy spread the gate needs. Distinct domains draw nearly disjoint
// content vocabularies.

#include <cstdint>
#include <string>

#include "wmkit/corpus.hpp"

namespace wmkit {

struct SynthSpec {
    std::uint64_t seed = 1;
    std::size_t num_records = 2000;
    std::size_t response_tokens_per_record = 100; // sentences stop at or just past this
    std::string domain = "alpha";
    std::size_t content_vocab = 360;
    std::size_t topic_size = 24; // content words available to one record
};

Corpus synthesize_qa_corpus(const SynthSpec& spec);

} // namespace wmkit
