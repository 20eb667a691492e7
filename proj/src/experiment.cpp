#include "wmkit/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace fs = std::filesystem;

namespace wmkit {

namespace {

constexpr std::uint64_t kOwnerKeySalt = 0x6f776e65724b6579ULL;
constexpr std::uint64_t kUnrelatedKeySalt = 0x77726f6e674b6579ULL;
constexpr std::size_t kBudgetGrid[] = {10000, 20000, 40000, 60000, 100000};

struct BundleWriter {
    explicit BundleWriter(const ExperimentSpec& spec) : spec_(spec) {
        fs::create_directories(fs::path(spec.out_dir) / "reports");
    }

    void add(ExperimentBundle& bundle, const std::string& name, std::uint64_t seed, double rho,
             std::size_t budget, const DetectionReport& report) {
        ExperimentRow row;
        row.name = name;
        row.seed = seed;
        row.key_id = report.key_id;
        row.rho = rho;
        row.budget = budget;
        row.q = report.q;
        row.n0 = report.n0;
        row.gated = report.gated.size;
        row.z = report.gated.z;
        row.p_value = report.gated.p_value;
        row.log10_p = report.gated.log10_p;
        row.low_power = report.low_power;
        row.significant = report.significant();
        bundle.rows.push_back(row);
        bundle.reports.emplace_back(name, report);

        const fs::path path = fs::path(spec_.out_dir) / "reports" / (name + ".json");
        std::ofstream out(path, std::ios::trunc);
        if (!out.is_open()) {
            throw std::runtime_error("cannot write report: " + path.string());
        }
        out << report.to_json_string() << '\n';
    }

    void finish(const ExperimentBundle& bundle) const {
        const fs::path csv_path = fs::path(spec_.out_dir) / "summary.csv";
        std::ofstream csv(csv_path, std::ios::trunc);
        csv << "name,seed,key_id,rho,budget,q,n0,gated,z,p_value,log10_p,minus_log10_p,"
               "low_power,significant\n";
        char buf[384];
        for (const ExperimentRow& r : bundle.rows) {
            std::snprintf(buf, sizeof(buf),
                          "%s,%llu,%s,%g,%zu,%g,%zu,%zu,%.17g,%.17g,%.17g,%.17g,%d,%d\n",
                          r.name.c_str(), static_cast<unsigned long long>(r.seed),
                          r.key_id.c_str(), r.rho, r.budget, r.q, r.n0, r.gated, r.z, r.p_value,
                          r.log10_p, -r.log10_p, r.low_power ? 1 : 0, r.significant ? 1 : 0);
            csv << buf;
        }

        std::ofstream txt(fs::path(spec_.out_dir) / "summary.txt", std::ios::trunc);
        txt << "mode: " << experiment_mode_name(spec_.mode) << "\n";
        for (const ExperimentRow& r : bundle.rows) {
            std::snprintf(buf, sizeof(buf),
                          "%-28s seed=%-4llu key=%-18s budget=%-7zu -log10(p)=%-10.3f %s\n",
                          r.name.c_str(), static_cast<unsigned long long>(r.seed),
                          r.key_id.c_str(), r.budget, -r.log10_p,
                          r.low_power ? "LOW_POWER" : (r.significant ? "significant" : "null"));
            txt << buf;
        }
    }

    const ExperimentSpec& spec_;
};

void write_bundle_config(const ExperimentSpec& spec) {
    nlohmann::json j{
        {"alpha", spec.alpha},
        {"continued_scale", spec.continued_scale},
        {"corpus_paths", spec.corpus_paths},
        {"key_paths", spec.key_paths},
        {"lm", {{"order", spec.lm_params.order},
                {"add_k", spec.lm_params.add_k},
                {"lambda", spec.lm_params.lambda}}},
        {"max_vocab", spec.max_vocab},
        {"mode", experiment_mode_name(spec.mode)},
        {"prefix_fraction", spec.prefix_fraction},
        {"prompt_mode", spec.prompt_mode == PromptMode::kQa ? "qa" : "continuation"},
        {"q", spec.q},
        {"rho", spec.rho},
        {"seeds", spec.seeds},
        {"synth", {{"num_records", spec.synth.num_records},
                   {"response_tokens_per_record", spec.synth.response_tokens_per_record},
                   {"content_vocab", spec.synth.content_vocab},
                   {"topic_size", spec.synth.topic_size}}},
        {"token_budget", spec.token_budget},
    };
    j["config_digest"] = digest_hex(j.dump());
    std::ofstream out(fs::path(spec.out_dir) / "config.json", std::ios::trunc);
    out << j.dump(2) << '\n';
}

Corpus corpus_for(const ExperimentSpec& spec, std::size_t index, std::uint64_t seed,
                  const std::string& domain, double scale = 1.0) {
    if (index < spec.corpus_paths.size()) {
        return ingest_jsonl(spec.corpus_paths[index]).records;
    }
    SynthSpec synth = spec.synth;
    synth.seed = seed;
    synth.domain = domain;
    synth.num_records = static_cast<std::size_t>(
        std::ceil(static_cast<double>(synth.num_records) * scale));
    return synthesize_qa_corpus(synth);
}

WatermarkKey key_for(const ExperimentSpec& spec, std::size_t index, std::uint64_t seed,
                     const std::string& fallback_id, std::uint64_t salt) {
    if (index < spec.key_paths.size()) {
        return load_key_file(spec.key_paths[index]);
    }
    return derive_key(seed ^ salt, fallback_id);
}

std::vector<std::string> detection_prompts(const ExperimentSpec& spec, const Corpus& watermarked,
                                           const Tokenizer& tokenizer) {
    const PromptSet set =
        build_prompts(watermarked, spec.prompt_mode, spec.prefix_fraction, tokenizer);
    return set.prompts;
}

// A stage label travels with any failure so a broken bundle names the stage,
// and partial outputs move under failed/.
template <class Fn>
auto stage(const ExperimentSpec& spec, const char* name, Fn&& fn) {
    try {
        return fn();
    } catch (const std::exception& e) {
        const fs::path out(spec.out_dir);
        const fs::path failed = out / "failed";
        fs::create_directories(failed);
        for (const char* entry : {"reports", "summary.csv", "summary.txt"}) {
            const fs::path p = out / entry;
            if (fs::exists(p) && !fs::exists(failed / entry)) {
                fs::rename(p, failed / entry);
            }
        }
        std::ofstream err(failed / "error.txt", std::ios::trunc);
        err << "stage: " << name << "\n" << e.what() << "\n";
        throw std::runtime_error(std::string("experiment stage '") + name +
                                 "' failed: " + e.what());
    }
}

std::vector<std::size_t> budget_grid(std::size_t max_budget) {
    std::vector<std::size_t> grid;
    for (const std::size_t b : kBudgetGrid) {
        if (b <= max_budget) { grid.push_back(b); }
    }
    if (grid.empty() || grid.back() != max_budget) { grid.push_back(max_budget); }
    return grid;
}

} // namespace

const char* experiment_mode_name(ExperimentMode mode) {
    switch (mode) {
    case ExperimentMode::kQaDetection: return "qa-detection";
    case ExperimentMode::kContinuationDetection: return "continuation-detection";
    case ExperimentMode::kAttribution: return "attribution";
    case ExperimentMode::kFprCalibration: return "fpr-calibration";
    case ExperimentMode::kProportionSweep: return "proportion-sweep";
    case ExperimentMode::kBudgetSweep: return "budget-sweep";
    case ExperimentMode::kContinuedTraining: return "continued-training";
    }
    return "unknown";
}

ExperimentMode parse_experiment_mode(const std::string& name) {
    for (const ExperimentMode mode :
         {ExperimentMode::kQaDetection, ExperimentMode::kContinuationDetection,
          ExperimentMode::kAttribution, ExperimentMode::kFprCalibration,
          ExperimentMode::kProportionSweep, ExperimentMode::kBudgetSweep,
          ExperimentMode::kContinuedTraining}) {
        if (name == experiment_mode_name(mode)) { return mode; }
    }
    throw std::invalid_argument("unknown experiment mode: " + name);
}

void ExperimentSpec::validate() const {
    if (rho < 0.0 || rho > 1.0) {
        throw std::invalid_argument("rho must lie in [0,1]");
    }
    if (token_budget < 1000) {
        throw std::invalid_argument("token budget must be >= 1000");
    }
    if (seeds.empty()) {
        throw std::invalid_argument("at least one seed required");
    }
    if (!(q > 0.0) || q > 100.0) {
        throw std::invalid_argument("q must lie in (0,100]");
    }
    lm_params.validate();
}

NgramModel train_model(const Corpus& corpus, const NgramModel::Params& params,
                       std::size_t max_vocab) {
    std::vector<std::string> texts;
    texts.reserve(corpus.size());
    for (const CorpusRecord& rec : corpus) {
        texts.push_back(rec.prompt + " " + rec.response);
    }
    Tokenizer tokenizer = Tokenizer::build(texts, max_vocab);
    NgramModel model(std::move(tokenizer), params);
    model.train(corpus_token_sequences(corpus, model.tokenizer()));
    return model;
}

WatermarkKey derive_key(std::uint64_t seed, const std::string& key_id) {
    SplitMix64 rng(seed);
    return WatermarkKey::random(key_id, rng);
}

Pipeline build_pipeline(Corpus base, const WatermarkKey& key, double rho,
                        const NgramModel::Params& params, std::size_t max_vocab,
                        std::uint64_t seed) {
    Pipeline pipe;
    pipe.key = key;
    pipe.base = std::move(base);
    pipe.clean = train_model(pipe.base, params, max_vocab);

    SamplerConfig rewrite_cfg = rewrite_sampler_config();
    rewrite_cfg.rng_seed = seed;
    pipe.watermarked =
        watermark_corpus(pipe.base, key, pipe.clean, rewrite_cfg, rho, seed, &pipe.manifest);
    pipe.suspect = train_model(pipe.watermarked, params, max_vocab);
    return pipe;
}

DetectionConfig make_detection_config(const ExperimentSpec& spec, std::uint64_t seed) {
    DetectionConfig cfg;
    cfg.q = spec.q;
    cfg.token_budget = spec.token_budget;
    cfg.alpha = spec.alpha;
    cfg.rng_seed = seed ^ 0xdec0de;
    return cfg;
}

ExperimentBundle run_experiment(const ExperimentSpec& spec) {
    spec.validate();
    ExperimentBundle bundle;
    BundleWriter writer(spec);
    write_bundle_config(spec);

    const auto prefix = [&](const char* tag, std::uint64_t seed) {
        return std::string(tag) + "_s" + std::to_string(seed);
    };

    switch (spec.mode) {
    case ExperimentMode::kQaDetection:
    case ExperimentMode::kContinuationDetection: {
        for (const std::uint64_t seed : spec.seeds) {
            const Pipeline pipe = stage(spec, "pipeline", [&] {
                return build_pipeline(corpus_for(spec, 0, seed, spec.synth.domain),
                                      key_for(spec, 0, seed, "owner-s" + std::to_string(seed),
                                              kOwnerKeySalt),
                                      spec.rho, spec.lm_params, spec.max_vocab, seed);
            });
            const DetectionConfig cfg = make_detection_config(spec, seed);
            const NgramTextGenerator suspect(pipe.suspect, cfg.temperature, cfg.top_k, cfg.top_p);
            const std::vector<TokenSequence> outputs = stage(spec, "collect", [&] {
                return collect_outputs(suspect,
                                       detection_prompts(spec, pipe.watermarked,
                                                         pipe.clean.tokenizer()),
                                       pipe.clean.tokenizer(), cfg);
            });
            const WatermarkKey unrelated =
                derive_key(seed ^ kUnrelatedKeySalt, "unrelated-s" + std::to_string(seed));
            stage(spec, "detect", [&] {
                writer.add(bundle, prefix("detect", seed) + "_owner", seed, spec.rho,
                           spec.token_budget,
                           detect_on_outputs(outputs, pipe.key, pipe.clean, cfg));
                writer.add(bundle, prefix("detect", seed) + "_unrelated", seed, spec.rho,
                           spec.token_budget,
                           detect_on_outputs(outputs, unrelated, pipe.clean, cfg));
                return 0;
            });
        }
        break;
    }

    case ExperimentMode::kAttribution: {
        for (const std::uint64_t seed : spec.seeds) {
            const Corpus base_a = corpus_for(spec, 0, seed, "alpha");
            const Corpus base_b = corpus_for(spec, 1, seed * 7919 + 1, "beta");
            const WatermarkKey key_a =
                key_for(spec, 0, seed, "keyA-s" + std::to_string(seed), kOwnerKeySalt);
            const WatermarkKey key_b = key_for(spec, 1, seed, "keyB-s" + std::to_string(seed),
                                               kOwnerKeySalt ^ 0xbeef);

            const auto artifacts = stage(spec, "pipeline", [&] {
                // One clean rewrite/aux model over the union, per-corpus keys,
                // one suspect trained on both watermarked corpora.
                Corpus union_base = base_a;
                union_base.insert(union_base.end(), base_b.begin(), base_b.end());
                NgramModel clean = train_model(union_base, spec.lm_params, spec.max_vocab);

                SamplerConfig rewrite_cfg = rewrite_sampler_config();
                rewrite_cfg.rng_seed = seed;
                Corpus wm_a = watermark_corpus(base_a, key_a, clean, rewrite_cfg, spec.rho, seed);
                rewrite_cfg.rng_seed = seed ^ 1;
                Corpus wm_b =
                    watermark_corpus(base_b, key_b, clean, rewrite_cfg, spec.rho, seed ^ 1);

                Corpus joint = wm_a;
                joint.insert(joint.end(), wm_b.begin(), wm_b.end());
                NgramModel suspect = train_model(joint, spec.lm_params, spec.max_vocab);
                return std::tuple<NgramModel, NgramModel, Corpus, Corpus>(
                    std::move(clean), std::move(suspect), std::move(wm_a), std::move(wm_b));
            });
            const NgramModel& clean = std::get<0>(artifacts);
            const NgramModel& suspect_model = std::get<1>(artifacts);

            const DetectionConfig cfg = make_detection_config(spec, seed);
            const NgramTextGenerator suspect(suspect_model, cfg.temperature, cfg.top_k,
                                             cfg.top_p);
            const WatermarkKey keys[] = {key_a, key_b};
            const char* corpus_tags[] = {"promptsA", "promptsB"};
            const Corpus* corpora[] = {&std::get<2>(artifacts), &std::get<3>(artifacts)};
            for (int c = 0; c < 2; ++c) {
                DetectionConfig ccfg = cfg;
                ccfg.rng_seed = cfg.rng_seed ^ static_cast<std::uint64_t>(c);
                const AttributionResult res = stage(spec, "attribute", [&] {
                    return attribute(suspect,
                                     detection_prompts(spec, *corpora[c], clean.tokenizer()),
                                     keys, clean, ccfg);
                });
                for (std::size_t k = 0; k < res.reports.size(); ++k) {
                    writer.add(bundle,
                               prefix("attr", seed) + "_" + corpus_tags[c] + "_" +
                                   res.reports[k].key_id,
                               seed, spec.rho, spec.token_budget, res.reports[k]);
                }
            }
        }
        break;
    }

    case ExperimentMode::kFprCalibration: {
        // 3 clean models x 4 corpora, every pair tested with that corpus's own
        // key; no watermarking anywhere.
        const std::uint64_t seed0 = spec.seeds.front();
        std::vector<NgramModel> models;
        stage(spec, "train-null-models", [&] {
            for (std::uint64_t m = 0; m < 3; ++m) {
                const Corpus c =
                    corpus_for(spec, spec.corpus_paths.size(), seed0 * 31 + m, "alpha");
                models.push_back(train_model(c, spec.lm_params, spec.max_vocab));
            }
            return 0;
        });
        for (std::uint64_t c = 0; c < 4; ++c) {
            const Corpus eval = corpus_for(spec, c, seed0 * 101 + 13 * c, "alpha");
            const WatermarkKey key = key_for(spec, c, seed0 * 7 + c,
                                             "null-key-c" + std::to_string(c), kOwnerKeySalt);
            for (std::size_t m = 0; m < models.size(); ++m) {
                DetectionConfig cfg = make_detection_config(spec, seed0);
                cfg.rng_seed = seed0 ^ (m * 4 + c) * 0x9e3779b9ULL;
                const NgramTextGenerator gen(models[m], cfg.temperature, cfg.top_k, cfg.top_p);
                const DetectionReport report = stage(spec, "detect", [&] {
                    return detect(gen, detection_prompts(spec, eval, models[m].tokenizer()), key,
                                  models[m], cfg);
                });
                writer.add(bundle,
                           "fpr_m" + std::to_string(m) + "_c" + std::to_string(c), seed0,
                           0.0, spec.token_budget, report);
            }
        }
        break;
    }

    case ExperimentMode::kProportionSweep:
    case ExperimentMode::kBudgetSweep: {
        for (const std::uint64_t seed : spec.seeds) {
            const Pipeline pipe = stage(spec, "pipeline", [&] {
                return build_pipeline(corpus_for(spec, 0, seed, spec.synth.domain),
                                      key_for(spec, 0, seed, "owner-s" + std::to_string(seed),
                                              kOwnerKeySalt),
                                      spec.rho, spec.lm_params, spec.max_vocab, seed);
            });
            DetectionConfig cfg = make_detection_config(spec, seed);
            const NgramTextGenerator suspect(pipe.suspect, cfg.temperature, cfg.top_k, cfg.top_p);
            const std::vector<TokenSequence> outputs = stage(spec, "collect", [&] {
                return collect_outputs(suspect,
                                       detection_prompts(spec, pipe.watermarked,
                                                         pipe.clean.tokenizer()),
                                       pipe.clean.tokenizer(), cfg);
            });
            for (const std::size_t budget : budget_grid(spec.token_budget)) {
                DetectionConfig bcfg = cfg;
                bcfg.token_budget = budget;
                stage(spec, "detect", [&] {
                    writer.add(bundle,
                               prefix("sweep", seed) + "_b" + std::to_string(budget), seed,
                               spec.rho, budget,
                               detect_on_outputs(outputs, pipe.key, pipe.clean, bcfg));
                    return 0;
                });
            }
        }
        break;
    }

    case ExperimentMode::kContinuedTraining: {
        for (const std::uint64_t seed : spec.seeds) {
            Pipeline pipe = stage(spec, "pipeline", [&] {
                return build_pipeline(corpus_for(spec, 0, seed, spec.synth.domain),
                                      key_for(spec, 0, seed, "owner-s" + std::to_string(seed),
                                              kOwnerKeySalt),
                                      spec.rho, spec.lm_params, spec.max_vocab, seed);
            });
            const DetectionConfig cfg = make_detection_config(spec, seed);
            const std::vector<std::string> prompts =
                detection_prompts(spec, pipe.watermarked, pipe.clean.tokenizer());
            {
                const NgramTextGenerator before(pipe.suspect, cfg.temperature, cfg.top_k,
                                                cfg.top_p);
                writer.add(bundle, prefix("ct", seed) + "_before", seed, spec.rho,
                           spec.token_budget, stage(spec, "detect-before", [&] {
                               return detect(before, prompts, pipe.key, pipe.clean, cfg);
                           }));
            }
            stage(spec, "continued-training", [&] {
                const Corpus clean_extra = corpus_for(spec, spec.corpus_paths.size(),
                                                      seed ^ 0xc0ffee, spec.synth.domain,
                                                      spec.continued_scale);
                pipe.suspect.train(
                    corpus_token_sequences(clean_extra, pipe.suspect.tokenizer()));
                return 0;
            });
            {
                DetectionConfig after_cfg = cfg;
                after_cfg.rng_seed = cfg.rng_seed ^ 0xafffe;
                const NgramTextGenerator after(pipe.suspect, after_cfg.temperature,
                                               after_cfg.top_k, after_cfg.top_p);
                writer.add(bundle, prefix("ct", seed) + "_after", seed, spec.rho,
                           spec.token_budget, stage(spec, "detect-after", [&] {
                               return detect(after, prompts, pipe.key, pipe.clean, after_cfg);
                           }));
            }
        }
        break;
    }
    }

    writer.finish(bundle);
    return bundle;
}

} // namespace wmkit
