#include "wmkit/baselines.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "wmkit/rng.hpp"
#include "wmkit/stats.hpp"

namespace wmkit {

namespace {

struct MeanVar {
    double mean = 0.0;
    double var = 0.0; // sample variance, n-1 denominator
    std::size_t n = 0;
};

MeanVar mean_var(std::span<const double> xs) {
    MeanVar mv;
    mv.n = xs.size();
    if (mv.n == 0) { return mv; }
    double sum = 0.0;
    for (const double x : xs) { sum += x; }
    mv.mean = sum / static_cast<double>(mv.n);
    if (mv.n < 2) { return mv; }
    double ss = 0.0;
    for (const double x : xs) {
        const double d = x - mv.mean;
        ss += d * d;
    }
    mv.var = ss / static_cast<double>(mv.n - 1);
    return mv;
}

// Type-7 (linear interpolation) empirical quantile of a sorted vector.
double quantile_sorted(const std::vector<double>& sorted, double q) {
    const std::size_t n = sorted.size();
    if (n == 1) { return sorted[0]; }
    const double pos = q * static_cast<double>(n - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, n - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

// Gaussian elimination with partial pivoting; returns false when a pivot is
// numerically zero.
bool solve_linear(std::vector<std::vector<double>> a, std::vector<double> b,
                  std::vector<double>& x) {
    const std::size_t n = a.size();
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < n; ++r) {
            if (std::fabs(a[r][col]) > std::fabs(a[pivot][col])) { pivot = r; }
        }
        if (std::fabs(a[pivot][col]) < 1e-12) { return false; }
        std::swap(a[pivot], a[col]);
        std::swap(b[pivot], b[col]);
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = a[r][col] / a[col][col];
            for (std::size_t c = col; c < n; ++c) { a[r][c] -= f * a[col][c]; }
            b[r] -= f * b[col];
        }
    }
    x.assign(n, 0.0);
    for (std::size_t i = n; i-- > 0;) {
        double acc = b[i];
        for (std::size_t c = i + 1; c < n; ++c) { acc -= a[i][c] * x[c]; }
        x[i] = acc / a[i][i];
    }
    return true;
}

std::vector<std::size_t> canonical_order(std::span<const SampleFeatures> features) {
    std::vector<std::size_t> idx(features.size());
    std::iota(idx.begin(), idx.end(), 0u);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return features[a].as_array() < features[b].as_array();
    });
    return idx;
}

} // namespace

double mink_score(std::span<const double> token_logprobs, double k_fraction) {
    if (!(k_fraction > 0.0) || k_fraction > 1.0) {
        throw std::invalid_argument("k fraction must lie in (0,1]");
    }
    const std::size_t t = token_logprobs.size();
    const std::size_t keep =
        static_cast<std::size_t>(std::ceil(k_fraction * static_cast<double>(t)));
    if (t == 0 || keep == 0) {
        throw std::invalid_argument("min-k selection is empty");
    }
    std::vector<double> sorted(token_logprobs.begin(), token_logprobs.end());
    std::sort(sorted.begin(), sorted.end()); // lowest probability first
    double sum = 0.0;
    for (std::size_t i = 0; i < keep; ++i) { sum += sorted[i]; }
    return -sum / static_cast<double>(keep);
}

double compress_ratio(std::string_view bytes) {
    if (bytes.empty()) {
        throw std::invalid_argument("compress_ratio of empty input");
    }
    uLongf dest_len = compressBound(static_cast<uLong>(bytes.size()));
    std::vector<Bytef> dest(dest_len);
    const int rc = compress2(dest.data(), &dest_len,
                             reinterpret_cast<const Bytef*>(bytes.data()),
                             static_cast<uLong>(bytes.size()), kCompressionLevel);
    if (rc != Z_OK) {
        throw std::runtime_error("deflate compression failed");
    }
    return static_cast<double>(dest_len) / static_cast<double>(bytes.size());
}

SplitTestResult welch_t_one_sided(std::span<const double> pos_scores,
                                  std::span<const double> neg_scores, Alternative alternative) {
    SplitTestResult result;
    result.method = "welch_t";
    result.n_pos = pos_scores.size();
    result.n_neg = neg_scores.size();

    const MeanVar pos = mean_var(pos_scores);
    const MeanVar neg = mean_var(neg_scores);
    if (pos.n < 2 || neg.n < 2) {
        result.degenerate = true;
        result.p_value = std::nan("");
        return result;
    }
    const double vp = pos.var / static_cast<double>(pos.n);
    const double vn = neg.var / static_cast<double>(neg.n);
    const double se2 = vp + vn;
    if (!(se2 > 0.0)) {
        result.degenerate = true;
        result.p_value = std::nan("");
        return result;
    }
    const double diff =
        alternative == Alternative::kPosLess ? pos.mean - neg.mean : neg.mean - pos.mean;
    result.statistic = diff / std::sqrt(se2);
    result.df = se2 * se2 /
                (vp * vp / static_cast<double>(pos.n - 1) +
                 vn * vn / static_cast<double>(neg.n - 1));
    result.p_value = student_t_cdf(result.statistic, result.df);
    return result;
}

SplitTestResult two_proportion_z(std::uint64_t x_pos, std::uint64_t n_pos, std::uint64_t x_neg,
                                 std::uint64_t n_neg, Alternative alternative) {
    if (n_pos < 1 || n_neg < 1 || x_pos > n_pos || x_neg > n_neg) {
        throw std::invalid_argument("two_proportion_z counts out of range");
    }
    SplitTestResult result;
    result.method = "two_proportion_z";
    result.n_pos = n_pos;
    result.n_neg = n_neg;

    const double pooled = static_cast<double>(x_pos + x_neg) / static_cast<double>(n_pos + n_neg);
    if (pooled <= 0.0 || pooled >= 1.0) {
        result.degenerate = true; // z undefined when the pooled proportion is 0 or 1
        result.p_value = std::nan("");
        return result;
    }
    const double p_pos = static_cast<double>(x_pos) / static_cast<double>(n_pos);
    const double p_neg = static_cast<double>(x_neg) / static_cast<double>(n_neg);
    const double se = std::sqrt(pooled * (1.0 - pooled) *
                                (1.0 / static_cast<double>(n_pos) +
                                 1.0 / static_cast<double>(n_neg)));
    const double diff = alternative == Alternative::kPosLess ? p_pos - p_neg : p_neg - p_pos;
    result.statistic = diff / se;
    result.p_value = normal_cdf(result.statistic);
    return result;
}

SplitTestResult ddi_test(std::span<const SampleFeatures> suspect_features,
                         std::span<const SampleFeatures> validation_features,
                         std::uint64_t rng_seed) {
    constexpr std::size_t kNumFeatures = 6;
    constexpr std::size_t kMinSamples = 20;
    constexpr double kRidge = 1e-8;

    SplitTestResult result;
    result.method = "ddi";
    result.n_pos = suspect_features.size();
    result.n_neg = validation_features.size();
    if (suspect_features.size() < kMinSamples || validation_features.size() < kMinSamples) {
        result.degenerate = true;
        result.p_value = std::nan("");
        return result;
    }

    const std::size_t ns = suspect_features.size();
    const std::size_t nv = validation_features.size();
    const std::size_t n = ns + nv;
    std::vector<std::array<double, kNumFeatures>> rows(n);
    for (std::size_t i = 0; i < ns; ++i) { rows[i] = suspect_features[i].as_array(); }
    for (std::size_t i = 0; i < nv; ++i) { rows[ns + i] = validation_features[i].as_array(); }

    // Winsorize at the pooled 2.5%/97.5% quantiles, then standardize.
    for (std::size_t f = 0; f < kNumFeatures; ++f) {
        std::vector<double> col(n);
        for (std::size_t i = 0; i < n; ++i) { col[i] = rows[i][f]; }
        std::sort(col.begin(), col.end());
        const double lo = quantile_sorted(col, 0.025);
        const double hi = quantile_sorted(col, 0.975);
        for (std::size_t i = 0; i < n; ++i) { rows[i][f] = std::clamp(rows[i][f], lo, hi); }

        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) { mean += rows[i][f]; }
        mean /= static_cast<double>(n);
        double ss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = rows[i][f] - mean;
            ss += d * d;
        }
        const double sd = std::sqrt(ss / static_cast<double>(n - 1));
        for (std::size_t i = 0; i < n; ++i) {
            rows[i][f] = sd > 0.0 ? (rows[i][f] - mean) / sd : 0.0;
        }
    }

    // Seeded A/B halving over a canonical (permutation-invariant) order.
    SplitMix64 rng(rng_seed);
    std::vector<std::size_t> order_s = canonical_order(suspect_features);
    rng.shuffle(order_s);
    std::vector<std::size_t> order_v = canonical_order(validation_features);
    rng.shuffle(order_v);

    const std::size_t half_s = ns / 2;
    const std::size_t half_v = nv / 2;

    // Least squares with intercept on the A halves: labels suspect=0, val=1.
    constexpr std::size_t kDim = kNumFeatures + 1;
    std::vector<std::vector<double>> xtx(kDim, std::vector<double>(kDim, 0.0));
    std::vector<double> xty(kDim, 0.0);
    auto accumulate = [&](const std::array<double, kNumFeatures>& row, double label) {
        std::array<double, kDim> x{};
        for (std::size_t f = 0; f < kNumFeatures; ++f) { x[f] = row[f]; }
        x[kNumFeatures] = 1.0;
        for (std::size_t a = 0; a < kDim; ++a) {
            for (std::size_t b = 0; b < kDim; ++b) { xtx[a][b] += x[a] * x[b]; }
            xty[a] += x[a] * label;
        }
    };
    for (std::size_t i = 0; i < half_s; ++i) { accumulate(rows[order_s[i]], 0.0); }
    for (std::size_t i = 0; i < half_v; ++i) { accumulate(rows[ns + order_v[i]], 1.0); }

    std::vector<double> beta;
    if (!solve_linear(xtx, xty, beta)) {
        result.ridge_fallback = true;
        for (std::size_t a = 0; a < kDim; ++a) { xtx[a][a] += kRidge; }
        if (!solve_linear(xtx, xty, beta)) {
            result.degenerate = true;
            result.p_value = std::nan("");
            return result;
        }
    }

    auto score = [&](const std::array<double, kNumFeatures>& row) {
        double s = beta[kNumFeatures];
        for (std::size_t f = 0; f < kNumFeatures; ++f) { s += beta[f] * row[f]; }
        return s;
    };
    std::vector<double> b_suspect;
    std::vector<double> b_validation;
    for (std::size_t i = half_s; i < ns; ++i) { b_suspect.push_back(score(rows[order_s[i]])); }
    for (std::size_t i = half_v; i < nv; ++i) {
        b_validation.push_back(score(rows[ns + order_v[i]]));
    }

    SplitTestResult welch =
        welch_t_one_sided(b_suspect, b_validation, Alternative::kPosLess);
    result.statistic = welch.statistic;
    result.df = welch.df;
    result.p_value = welch.p_value;
    result.degenerate = welch.degenerate;
    return result;
}

SampleFeatures extract_features(const NgramModel& model, std::string_view text) {
    const std::vector<TokenId> ids = model.tokenizer().encode(text);
    if (ids.empty()) {
        throw std::invalid_argument("cannot extract features from an empty sample");
    }
    const std::vector<double> lps = model.token_logprobs(ids);

    SampleFeatures f;
    f.length = static_cast<double>(ids.size());
    double mean = 0.0;
    for (const double lp : lps) { mean += lp; }
    mean /= static_cast<double>(lps.size());
    f.mean_logp = mean;
    f.ppl = std::exp(-mean);

    std::vector<double> sorted(lps);
    std::sort(sorted.begin(), sorted.end());
    const std::size_t tail = static_cast<std::size_t>(
        std::ceil(kTailFraction * static_cast<double>(sorted.size())));
    double kmin = 0.0;
    double kmax = 0.0;
    for (std::size_t i = 0; i < tail; ++i) {
        kmin += sorted[i];
        kmax += sorted[sorted.size() - 1 - i];
    }
    f.kmin_logp = kmin / static_cast<double>(tail);
    f.kmax_logp = kmax / static_cast<double>(tail);
    f.compress_ratio = compress_ratio(text);
    return f;
}

std::vector<double> mia_scores(const NgramModel& model, std::span<const std::string> texts,
                               MiaMethod method) {
    std::vector<double> scores;
    scores.reserve(texts.size());
    for (const std::string& text : texts) {
        switch (method) {
        case MiaMethod::kPpl: {
            const std::vector<TokenId> ids = model.tokenizer().encode(text);
            if (ids.empty()) { throw std::invalid_argument("empty sample in corpus"); }
            scores.push_back(model.perplexity(ids));
            break;
        }
        case MiaMethod::kMink: {
            const std::vector<TokenId> ids = model.tokenizer().encode(text);
            if (ids.empty()) { throw std::invalid_argument("empty sample in corpus"); }
            scores.push_back(mink_score(model.token_logprobs(ids), kMinkDefaultFraction));
            break;
        }
        case MiaMethod::kCompress:
            // Model-free by definition.
            scores.push_back(compress_ratio(text));
            break;
        }
    }
    return scores;
}

SplitTestResult mia_split_test(const NgramModel& model, std::span<const std::string> pos_texts,
                               std::span<const std::string> neg_texts, MiaMethod method) {
    if (pos_texts.empty() || neg_texts.empty()) {
        throw std::invalid_argument("mia_split_test needs nonempty corpora");
    }
    const std::vector<double> pos = mia_scores(model, pos_texts, method);
    const std::vector<double> neg = mia_scores(model, neg_texts, method);
    SplitTestResult result = welch_t_one_sided(pos, neg, Alternative::kPosLess);
    switch (method) {
    case MiaMethod::kPpl: result.method = "mia_ppl"; break;
    case MiaMethod::kMink: result.method = "mia_mink"; break;
    case MiaMethod::kCompress: result.method = "mia_compress"; break;
    }
    return result;
}

std::string SplitTestResult::to_json_string() const {
    nlohmann::json j{
        {"degenerate", degenerate},
        {"df", df},
        {"method", method},
        {"n_neg", n_neg},
        {"n_pos", n_pos},
        {"ridge_fallback", ridge_fallback},
        {"schema", 1},
        {"statistic", statistic},
    };
    if (degenerate || std::isnan(p_value)) {
        j["p_value"] = nullptr;
    } else {
        j["p_value"] = p_value;
    }
    if (method == "ddi" || method == "mia_compress") {
        j["compression_level"] = kCompressionLevel;
    }
    return j.dump(2);
}

} // namespace wmkit
