#pragma once
// Keyed pseudorandomness behind the tournament watermark: seed derivation
// from (key, context window), per-token binary g-values, linearly decaying
// depth weights and the effective-depth constant of the weighted score.
//
// Pinned PRF (version "blake2b128-trunc64-v1"):
//   seed   = BE64( BLAKE2b-128(key = 32-byte secret,
//                    "wmkit-seed-v1" || be32(w) || be32(window[0..w-1]) || be64(salt))[0..7] )
//   g-hash = BE64( BLAKE2b-128("wmkit-g-v1" || be64(seed) || be32(token) || be32(j))[0..7] )
//   g-bit for layer j (1-based) = bit (j-1) of the g-hash.
// Frozen by the golden vectors under tests/data/.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "wmkit/rng.hpp"
#include "wmkit/types.hpp"

namespace wmkit {

inline constexpr std::size_t kKeyBytes = 32;
inline constexpr int kMaxDepth = 64;
inline constexpr char kPrfVersion[] = "blake2b128-trunc64-v1";

struct WatermarkKey {
    std::array<std::uint8_t, kKeyBytes> bytes{};
    std::string key_id;

    static WatermarkKey random(std::string key_id, SplitMix64& rng);
};

// Key file: hex-encoded 32 bytes on line 1, key_id on line 2, newline-terminated.
WatermarkKey load_key_file(const std::string& path);
void save_key_file(const WatermarkKey& key, const std::string& path);

// The w most recent token ids, oldest first, already BOS-padded by the caller
// (make_window does the padding).
struct SeedContext {
    std::vector<TokenId> window;
};

SeedContext make_window(std::span<const TokenId> context, int w, TokenId pad_id);

struct GVector {
    std::vector<std::uint8_t> bits; // each 0 or 1
    int depth() const { return static_cast<int>(bits.size()); }
};

// weights[i-1] = 2(d+1-i)/(d+1), i = 1..d; strictly decreasing, sums to d.
struct DepthWeights {
    std::vector<double> weights;
    int depth() const { return static_cast<int>(weights.size()); }
};

std::uint64_t derive_seed(const WatermarkKey& key, const SeedContext& ctx,
                          std::uint64_t position_salt);

GVector g_vector(std::uint64_t seed, TokenId candidate_token, int depth);

DepthWeights depth_weights(int depth); // throws on depth < 1

double effective_depth(const DepthWeights& weights); // d^2 / sum(w_i^2)

double weighted_g(const GVector& gv, const DepthWeights& weights); // in [0,1]

// Golden-vector file: text lines "input-descriptor TAB expected-hex".
std::vector<std::pair<std::string, std::string>> read_golden_vectors(const std::string& path);

// Short BLAKE2b digest of arbitrary bytes, hex-encoded. Used for config and
// output digests embedded in reports.
std::string digest_hex(std::span<const std::uint8_t> data);
std::string digest_hex(std::string_view data);

std::string to_hex(std::span<const std::uint8_t> data);
std::vector<std::uint8_t> from_hex(std::string_view hex);

} // namespace wmkit
