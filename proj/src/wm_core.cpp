#include "wmkit/wm_core.hpp"

#include <sodium.h>

#include <cstring>
#include <fstream>
#include <mutex>
#include <sstream>
#include <stdexcept>

namespace wmkit {

namespace {

constexpr std::size_t kHashBytes = 16; // BLAKE2b-128, truncated to 8 on use

void ensure_sodium() {
    static std::once_flag flag;
    std::call_once(flag, [] {
        if (sodium_init() < 0) {
            throw std::runtime_error("libsodium initialization failed");
        }
    });
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

void put_be64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    put_be32(out, static_cast<std::uint32_t>(v >> 32));
    put_be32(out, static_cast<std::uint32_t>(v));
}

std::uint64_t be64_of(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) { v = (v << 8) | p[i]; }
    return v;
}

std::uint64_t hash64(std::span<const std::uint8_t> msg, const std::uint8_t* key,
                     std::size_t key_len) {
    ensure_sodium();
    unsigned char out[kHashBytes];
    crypto_generichash(out, kHashBytes, msg.data(), msg.size(), key, key_len);
    return be64_of(out);
}

} // namespace

WatermarkKey WatermarkKey::random(std::string key_id, SplitMix64& rng) {
    WatermarkKey key;
    key.key_id = std::move(key_id);
    for (std::size_t i = 0; i < kKeyBytes; i += 8) {
        const std::uint64_t v = rng.next();
        for (std::size_t b = 0; b < 8; ++b) {
            key.bytes[i + b] = static_cast<std::uint8_t>(v >> (8 * b));
        }
    }
    return key;
}

SeedContext make_window(std::span<const TokenId> context, int w, TokenId pad_id) {
    if (w < 1) {
        throw std::invalid_argument("window length must be >= 1");
    }
    SeedContext ctx;
    ctx.window.resize(static_cast<std::size_t>(w), pad_id);
    const std::size_t have = std::min(context.size(), static_cast<std::size_t>(w));
    for (std::size_t i = 0; i < have; ++i) {
        ctx.window[static_cast<std::size_t>(w) - have + i] = context[context.size() - have + i];
    }
    return ctx;
}

std::uint64_t derive_seed(const WatermarkKey& key, const SeedContext& ctx,
                          std::uint64_t position_salt) {
    if (ctx.window.empty()) {
        throw std::invalid_argument("seed context window is empty");
    }
    static constexpr char kTag[] = "wmkit-seed-v1";
    std::vector<std::uint8_t> msg;
    msg.reserve(sizeof(kTag) + 4 + 4 * ctx.window.size() + 8);
    msg.insert(msg.end(), kTag, kTag + sizeof(kTag) - 1);
    put_be32(msg, static_cast<std::uint32_t>(ctx.window.size()));
    for (const TokenId t : ctx.window) { put_be32(msg, t); }
    put_be64(msg, position_salt);
    return hash64(msg, key.bytes.data(), key.bytes.size());
}

GVector g_vector(std::uint64_t seed, TokenId candidate_token, int depth) {
    if (depth < 1 || depth > kMaxDepth) {
        throw std::invalid_argument("g-vector depth out of range [1,64]");
    }
    static constexpr char kTag[] = "wmkit-g-v1";
    GVector gv;
    gv.bits.resize(static_cast<std::size_t>(depth));
    std::vector<std::uint8_t> msg;
    msg.reserve(sizeof(kTag) + 16);
    for (int j = 1; j <= depth; ++j) {
        msg.clear();
        msg.insert(msg.end(), kTag, kTag + sizeof(kTag) - 1);
        put_be64(msg, seed);
        put_be32(msg, candidate_token);
        put_be32(msg, static_cast<std::uint32_t>(j));
        const std::uint64_t h = hash64(msg, nullptr, 0);
        gv.bits[static_cast<std::size_t>(j - 1)] =
            static_cast<std::uint8_t>((h >> (j - 1)) & 1u);
    }
    return gv;
}

DepthWeights depth_weights(int depth) {
    if (depth < 1) {
        throw std::invalid_argument("depth must be >= 1");
    }
    DepthWeights dw;
    dw.weights.resize(static_cast<std::size_t>(depth));
    for (int i = 1; i <= depth; ++i) {
        dw.weights[static_cast<std::size_t>(i - 1)] =
            2.0 * static_cast<double>(depth + 1 - i) / static_cast<double>(depth + 1);
    }
    return dw;
}

double effective_depth(const DepthWeights& weights) {
    const int d = weights.depth();
    double sum_sq = 0.0;
    for (const double w : weights.weights) { sum_sq += w * w; }
    return static_cast<double>(d) * static_cast<double>(d) / sum_sq;
}

double weighted_g(const GVector& gv, const DepthWeights& weights) {
    if (gv.depth() != weights.depth()) {
        throw std::invalid_argument("g-vector depth does not match weight depth");
    }
    double acc = 0.0;
    for (int i = 0; i < gv.depth(); ++i) {
        acc += weights.weights[static_cast<std::size_t>(i)] * gv.bits[static_cast<std::size_t>(i)];
    }
    return acc / static_cast<double>(gv.depth());
}

WatermarkKey load_key_file(const std::string& path) {
    std::ifstream in(path);
    if (!in.is_open()) {
        throw std::runtime_error("cannot open key file: " + path);
    }
    std::string hex_line;
    std::string id_line;
    if (!std::getline(in, hex_line) || !std::getline(in, id_line)) {
        throw std::runtime_error("key file truncated: " + path);
    }
    const std::vector<std::uint8_t> raw = from_hex(hex_line);
    if (raw.size() != kKeyBytes) {
        throw std::runtime_error("key file must hold exactly 32 hex-encoded bytes: " + path);
    }
    if (id_line.empty()) {
        throw std::runtime_error("key_id is empty: " + path);
    }
    WatermarkKey key;
    std::memcpy(key.bytes.data(), raw.data(), kKeyBytes);
    key.key_id = id_line;
    return key;
}

void save_key_file(const WatermarkKey& key, const std::string& path) {
    if (key.key_id.empty()) {
        throw std::invalid_argument("key_id must be nonempty");
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out.is_open()) {
        throw std::runtime_error("cannot write key file: " + path);
    }
    out << to_hex(key.bytes) << '\n' << key.key_id << '\n';
}

std::vector<std::pair<std::string, std::string>> read_golden_vectors(const std::string& path) {
    std::ifstream in(path);
    if (!in.is_open()) {
        throw std::runtime_error("cannot open golden-vector file: " + path);
    }
    std::vector<std::pair<std::string, std::string>> entries;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') { continue; }
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos) {
            throw std::runtime_error("golden-vector line " + std::to_string(lineno) +
                                     " missing TAB separator");
        }
        entries.emplace_back(line.substr(0, tab), line.substr(tab + 1));
    }
    return entries;
}

std::string digest_hex(std::span<const std::uint8_t> data) {
    ensure_sodium();
    unsigned char out[kHashBytes];
    crypto_generichash(out, kHashBytes, data.data(), data.size(), nullptr, 0);
    return to_hex(std::span<const std::uint8_t>(out, kHashBytes));
}

std::string digest_hex(std::string_view data) {
    return digest_hex(std::span<const std::uint8_t>(
        reinterpret_cast<const std::uint8_t*>(data.data()), data.size()));
}

std::string to_hex(std::span<const std::uint8_t> data) {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out;
    out.reserve(data.size() * 2);
    for (const std::uint8_t b : data) {
        out.push_back(kDigits[b >> 4]);
        out.push_back(kDigits[b & 0xf]);
    }
    return out;
}

std::vector<std::uint8_t> from_hex(std::string_view hex) {
    auto nibble = [](char c) -> int {
        if (c >= '0' && c <= '9') { return c - '0'; }
        if (c >= 'a' && c <= 'f') { return c - 'a' + 10; }
        if (c >= 'A' && c <= 'F') { return c - 'A' + 10; }
        return -1;
    };
    if (hex.size() % 2 != 0) {
        throw std::runtime_error("hex string has odd length");
    }
    std::vector<std::uint8_t> out;
    out.reserve(hex.size() / 2);
    for (std::size_t i = 0; i < hex.size(); i += 2) {
        const int hi = nibble(hex[i]);
        const int lo = nibble(hex[i + 1]);
        if (hi < 0 || lo < 0) {
            throw std::runtime_error("invalid hex digit");
        }
        out.push_back(static_cast<std::uint8_t>((hi << 4) | lo));
    }
    return out;
}

} // namespace wmkit
