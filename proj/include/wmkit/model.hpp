#pragma once
// Next-token distribution interface decoupling the sampler and detector from
// any concrete language model.

#include <span>
#include <utility>
#include <vector>

#include "wmkit/types.hpp"

namespace wmkit {

// Sparse probability vector, entries sorted by ascending token id.
// Invariants: probabilities >= 0, sum == 1 within 1e-9, support nonempty.
struct TokenDistribution {
    std::vector<std::pair<TokenId, double>> probs;

    double sum() const {
        double s = 0.0;
        for (const auto& [id, p] : probs) { s += p; }
        return s;
    }
};

class NextTokenModel {
public:
    virtual ~NextTokenModel() = default;
    virtual TokenDistribution next_token_distribution(std::span<const TokenId> context) const = 0;
};

} // namespace wmkit
