// Command-line front end for the watermarking and provenance-detection
// toolkit. Verbs cover the full owner workflow: keygen -> train -> watermark
// -> finetune -> detect/attribute, plus baselines and experiment bundles.
//
// Exit codes: 0 = ran, 2 = LOW_POWER detection result, 3 = input error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include "wmkit/baselines.hpp"
#include "wmkit/experiment.hpp"

using namespace wmkit;
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitLowPower = 2;
constexpr int kExitInputError = 3;

struct LmFlags {
    int order = 3;
    double add_k = 0.1;
    std::vector<double> lambda = {0.1, 0.3, 0.6};
    std::size_t max_vocab = 5000;

    NgramModel::Params params() const {
        NgramModel::Params p;
        p.order = order;
        p.add_k = add_k;
        p.lambda = lambda;
        return p;
    }
};

void add_lm_flags(CLI::App* cmd, LmFlags& lm) {
    cmd->add_option("--order", lm.order, "n-gram order");
    cmd->add_option("--add-k", lm.add_k, "add-k smoothing constant");
    cmd->add_option("--lambda", lm.lambda, "interpolation weights, unigram first")
        ->delimiter(',');
    cmd->add_option("--max-vocab", lm.max_vocab, "vocabulary cap including reserved ids");
}

struct ShapingFlags {
    double temperature = 0.8;
    int top_k = 50;
    double top_p = 0.95;
    int depth = 4;
    int window = 4;
};

void add_shaping_flags(CLI::App* cmd, ShapingFlags& f) {
    cmd->add_option("--temperature", f.temperature, "sampling temperature");
    cmd->add_option("--top-k", f.top_k, "keep the k most probable tokens");
    cmd->add_option("--top-p", f.top_p, "nucleus mass");
    cmd->add_option("--depth", f.depth, "tournament depth d");
    cmd->add_option("--window", f.window, "seed context window w");
}

std::vector<std::string> prompts_from_corpus(const std::string& corpus_path,
                                             const std::string& mode, double prefix_fraction,
                                             const Tokenizer& tokenizer) {
    const Corpus corpus = ingest_jsonl(corpus_path).records;
    const PromptMode pm = mode == "continuation" ? PromptMode::kContinuation : PromptMode::kQa;
    const PromptSet set = build_prompts(corpus, pm, prefix_fraction, tokenizer);
    if (set.skipped_short > 0) {
        std::cerr << "note: skipped " << set.skipped_short
                  << " records too short for continuation prompts\n";
    }
    return set.prompts;
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::trunc);
    if (!out.is_open()) {
        throw std::runtime_error("cannot write " + path);
    }
    out << content;
    if (!content.empty() && content.back() != '\n') { out << '\n'; }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"text watermarking & dataset-provenance detection toolkit"};
    app.require_subcommand(1);
    app.set_config("--config", "", "flat config file; command-line flags win");

    std::uint64_t seed = 1;
    std::string out;
    app.add_option("--seed", seed, "global rng seed");
    app.add_option("--out", out, "output path (or directory for bundles)");

    // ---- keygen ----
    auto* keygen = app.add_subcommand("keygen", "create a watermark key file");
    std::string key_id;
    bool random_key = false;
    keygen->add_option("--key-id", key_id, "key label")->required();
    keygen->add_flag("--random", random_key, "draw from the OS entropy pool instead of --seed");

    // ---- synth ----
    auto* synth = app.add_subcommand("synth", "write a synthetic QA corpus");
    SynthSpec synth_spec;
    synth->add_option("--records", synth_spec.num_records, "record count");
    synth->add_option("--tokens-per-record", synth_spec.response_tokens_per_record,
                      "approximate response length");
    synth->add_option("--domain", synth_spec.domain, "content-vocabulary domain tag");
    synth->add_option("--content-vocab", synth_spec.content_vocab, "content pool size");

    // ---- train / finetune ----
    auto* train = app.add_subcommand("train", "train a toy model from a JSONL corpus");
    std::string train_corpus;
    LmFlags train_lm;
    train->add_option("--corpus", train_corpus, "JSONL corpus")->required();
    add_lm_flags(train, train_lm);

    auto* finetune = app.add_subcommand("finetune", "continue training an existing model");
    std::string ft_model;
    std::string ft_corpus;
    finetune->add_option("--model", ft_model, "model file to start from")->required();
    finetune->add_option("--corpus", ft_corpus, "JSONL corpus")->required();

    // ---- watermark ----
    auto* watermark = app.add_subcommand("watermark", "rewrite a rho-fraction of responses");
    std::string wm_corpus;
    std::string wm_key;
    std::string wm_model;
    std::string wm_manifest;
    double rho = 1.0;
    ShapingFlags wm_shape;
    watermark->add_option("--corpus", wm_corpus, "JSONL corpus")->required();
    watermark->add_option("--key", wm_key, "key file")->required();
    watermark->add_option("--model", wm_model, "trained rewrite model")->required();
    watermark->add_option("--rho", rho, "watermarked proportion in [0,1]");
    watermark->add_option("--manifest", wm_manifest, "rewrite manifest output path");
    add_shaping_flags(watermark, wm_shape);

    // ---- generate ----
    auto* generate = app.add_subcommand("generate", "sample text from a model");
    std::string gen_model;
    std::string gen_key;
    std::string gen_prompt;
    std::size_t gen_max = 128;
    std::size_t gen_count = 1;
    ShapingFlags gen_shape;
    generate->add_option("--model", gen_model, "model file")->required();
    generate->add_option("--key", gen_key, "key file; omit for plain sampling");
    generate->add_option("--prompt", gen_prompt, "prompt text")->required();
    generate->add_option("--max-tokens", gen_max, "tokens per sample");
    generate->add_option("--count", gen_count, "number of samples");
    add_shaping_flags(generate, gen_shape);

    // ---- detect / attribute ----
    auto* detect_cmd = app.add_subcommand("detect", "entropy-gated radioactivity test");
    auto* attribute_cmd = app.add_subcommand("attribute", "multi-key attribution");
    std::string det_suspect;
    std::string det_aux;
    std::string det_key;
    std::vector<std::string> det_keys;
    std::string det_corpus;
    std::string det_mode = "qa";
    std::string det_csv;
    double prefix_fraction = 0.5;
    DetectionConfig det_cfg;
    for (CLI::App* cmd : {detect_cmd, attribute_cmd}) {
        cmd->add_option("--suspect", det_suspect, "suspect model file")->required();
        cmd->add_option("--aux", det_aux, "auxiliary entropy model file")->required();
        cmd->add_option("--corpus", det_corpus, "JSONL corpus the prompts come from")
            ->required();
        cmd->add_option("--mode", det_mode, "qa | continuation");
        cmd->add_option("--prefix-fraction", prefix_fraction,
                        "continuation prompt prefix fraction");
        cmd->add_option("--q", det_cfg.q, "entropy gate percentage");
        cmd->add_option("--budget", det_cfg.token_budget, "scored token budget N0");
        cmd->add_option("--alpha", det_cfg.alpha, "significance threshold");
        cmd->add_option("--temperature", det_cfg.temperature, "detection sampling temperature");
        cmd->add_option("--top-p", det_cfg.top_p, "detection sampling nucleus mass");
        cmd->add_option("--max-new-tokens", det_cfg.max_new_tokens_per_prompt,
                        "generation cap per prompt");
        cmd->add_option("--min-tokens", det_cfg.min_tokens, "LOW_POWER floor");
    }
    detect_cmd->add_option("--key", det_key, "key file")->required();
    detect_cmd->add_option("--emit-csv", det_csv, "write (position, H_t, gbar) rows");
    attribute_cmd->add_option("--keys", det_keys, "key files")->required()->delimiter(',');

    // ---- baseline ----
    auto* baseline = app.add_subcommand("baseline", "grey-box split-level baselines");
    std::string bl_model;
    std::string bl_pos;
    std::string bl_neg;
    std::string bl_method = "ppl";
    std::string bl_csv;
    baseline->add_option("--model", bl_model, "suspect model file")->required();
    baseline->add_option("--pos", bl_pos, "positive (training) corpus")->required();
    baseline->add_option("--neg", bl_neg, "negative (evaluation) corpus")->required();
    baseline->add_option("--method", bl_method, "ppl | mink | compress | ddi");
    baseline->add_option("--emit-csv", bl_csv, "write per-sample scores");

    // ---- experiment ----
    auto* experiment = app.add_subcommand("experiment", "run a seeded experiment bundle");
    ExperimentSpec exp_spec;
    std::string exp_mode = "qa-detection";
    std::string exp_prompt_mode = "qa";
    experiment->add_option("--mode", exp_mode,
                           "qa-detection | continuation-detection | attribution | "
                           "fpr-calibration | proportion-sweep | budget-sweep | "
                           "continued-training");
    experiment->add_option("--seeds", exp_spec.seeds, "pinned seeds")->delimiter(',');
    experiment->add_option("--rho", exp_spec.rho, "watermarked proportion");
    experiment->add_option("--budget", exp_spec.token_budget, "scored token budget");
    experiment->add_option("--q", exp_spec.q, "entropy gate percentage");
    experiment->add_option("--alpha", exp_spec.alpha, "significance threshold");
    experiment->add_option("--corpus", exp_spec.corpus_paths, "JSONL corpora (else synthetic)")
        ->delimiter(',');
    experiment->add_option("--keys", exp_spec.key_paths, "key files (else derived)")
        ->delimiter(',');
    experiment->add_option("--prompt-mode", exp_prompt_mode, "qa | continuation");
    experiment->add_option("--prefix-fraction", exp_spec.prefix_fraction,
                           "continuation prefix fraction");
    experiment->add_option("--records", exp_spec.synth.num_records, "synthetic record count");
    experiment->add_option("--tokens-per-record", exp_spec.synth.response_tokens_per_record,
                           "synthetic response length");
    experiment->add_option("--continued-scale", exp_spec.continued_scale,
                           "clean corpus size multiple for continued-training");

    CLI11_PARSE(app, argc, argv);

    try {
        if (keygen->parsed()) {
            WatermarkKey key;
            if (random_key) {
                std::random_device rd;
                SplitMix64 rng((static_cast<std::uint64_t>(rd()) << 32) ^ rd());
                key = WatermarkKey::random(key_id, rng);
            } else {
                key = derive_key(seed, key_id);
            }
            save_key_file(key, out.empty() ? key_id + ".key" : out);
            return kExitOk;
        }

        if (synth->parsed()) {
            synth_spec.seed = seed;
            export_jsonl(synthesize_qa_corpus(synth_spec),
                         out.empty() ? "corpus.jsonl" : out);
            return kExitOk;
        }

        if (train->parsed()) {
            const Corpus corpus = ingest_jsonl(train_corpus).records;
            const NgramModel model =
                train_model(corpus, train_lm.params(), train_lm.max_vocab);
            model.save(out.empty() ? "model.wmlm" : out);
            return kExitOk;
        }

        if (finetune->parsed()) {
            NgramModel model = NgramModel::load(ft_model);
            const Corpus corpus = ingest_jsonl(ft_corpus).records;
            model.train(corpus_token_sequences(corpus, model.tokenizer()));
            model.save(out.empty() ? ft_model : out);
            return kExitOk;
        }

        if (watermark->parsed()) {
            const Corpus corpus = ingest_jsonl(wm_corpus).records;
            const WatermarkKey key = load_key_file(wm_key);
            const NgramModel model = NgramModel::load(wm_model);
            SamplerConfig cfg;
            cfg.depth = wm_shape.depth;
            cfg.num_candidates = 1 << wm_shape.depth;
            cfg.window = wm_shape.window;
            cfg.temperature = wm_shape.temperature;
            cfg.top_k = wm_shape.top_k;
            cfg.top_p = wm_shape.top_p;
            cfg.rng_seed = seed;
            RewriteManifest manifest;
            const Corpus rewritten =
                watermark_corpus(corpus, key, model, cfg, rho, seed, &manifest);
            export_jsonl(rewritten, out.empty() ? "watermarked.jsonl" : out);
            if (!wm_manifest.empty()) { write_text(wm_manifest, manifest.to_json_string()); }
            return kExitOk;
        }

        if (generate->parsed()) {
            const NgramModel model = NgramModel::load(gen_model);
            const std::vector<TokenId> prompt = model.tokenizer().encode(gen_prompt);
            std::ostringstream lines;
            SplitMix64 rng(seed);
            for (std::size_t i = 0; i < gen_count; ++i) {
                if (!gen_key.empty()) {
                    SamplerConfig cfg;
                    cfg.depth = gen_shape.depth;
                    cfg.num_candidates = 1 << gen_shape.depth;
                    cfg.window = gen_shape.window;
                    cfg.temperature = gen_shape.temperature;
                    cfg.top_k = gen_shape.top_k;
                    cfg.top_p = gen_shape.top_p;
                    cfg.rng_seed = seed;
                    const GenerationRecord rec =
                        generate_sequence(model, prompt, load_key_file(gen_key), cfg, gen_max,
                                          std::span<const TokenId>(), rng);
                    lines << generation_record_jsonl(rec, cfg) << '\n';
                    std::cout << model.tokenizer().decode(rec.generated()) << "\n";
                } else {
                    const TokenId stop[] = {Tokenizer::kEos};
                    const std::vector<TokenId> ids = sample_sequence(
                        model, prompt, gen_shape.temperature, gen_shape.top_k, gen_shape.top_p,
                        gen_max, stop, rng);
                    std::cout << model.tokenizer().decode(ids) << "\n";
                }
            }
            if (!out.empty() && !gen_key.empty()) { write_text(out, lines.str()); }
            return kExitOk;
        }

        if (detect_cmd->parsed() || attribute_cmd->parsed()) {
            const NgramModel suspect_model = NgramModel::load(det_suspect);
            const NgramModel aux = NgramModel::load(det_aux);
            det_cfg.rng_seed = seed;
            const std::vector<std::string> prompts =
                prompts_from_corpus(det_corpus, det_mode, prefix_fraction, aux.tokenizer());
            const NgramTextGenerator generator(suspect_model, det_cfg.temperature,
                                               det_cfg.top_k, det_cfg.top_p);

            if (detect_cmd->parsed()) {
                const WatermarkKey key = load_key_file(det_key);
                std::size_t skipped = 0;
                const std::vector<TokenSequence> outputs =
                    collect_outputs(generator, prompts, aux.tokenizer(), det_cfg, &skipped);
                const DetectionReport report =
                    detect_on_outputs(outputs, key, aux, det_cfg, skipped);
                write_text(out.empty() ? "report.json" : out, report.to_json_string());
                if (!det_csv.empty()) {
                    const auto scored = score_outputs(outputs, key, aux, det_cfg);
                    write_score_csv(det_csv, scored, entropy_gate(scored, det_cfg.q));
                }
                std::cout << "key " << report.key_id << ": p = " << report.gated.p_value
                          << " (log10 p = " << report.gated.log10_p << ")"
                          << (report.low_power ? " LOW_POWER" : "") << "\n";
                return report.low_power ? kExitLowPower : kExitOk;
            }

            std::vector<WatermarkKey> keys;
            for (const std::string& path : det_keys) { keys.push_back(load_key_file(path)); }
            const AttributionResult res = attribute(generator, prompts, keys, aux, det_cfg);
            const fs::path dir = out.empty() ? "attribution" : out;
            fs::create_directories(dir);
            bool any_low_power = false;
            nlohmann::json summary;
            summary["reports"] = nlohmann::json::array();
            for (const DetectionReport& report : res.reports) {
                write_text((dir / (report.key_id + ".json")).string(),
                           report.to_json_string());
                summary["reports"].push_back(
                    {{"key_id", report.key_id},
                     {"p_value", report.low_power ? nlohmann::json()
                                                  : nlohmann::json(report.gated.p_value)},
                     {"low_power", report.low_power}});
                any_low_power |= report.low_power;
            }
            summary["ambiguous"] = res.ambiguous;
            if (res.attributed.has_value()) {
                summary["attributed_key"] = res.reports[*res.attributed].key_id;
            } else {
                summary["attributed_key"] = nullptr;
            }
            write_text((dir / "attribution.json").string(), summary.dump(2));
            for (const DetectionReport& report : res.reports) {
                std::cout << "key " << report.key_id << ": p = " << report.gated.p_value
                          << (report.low_power ? " LOW_POWER" : "") << "\n";
            }
            if (res.ambiguous) {
                std::cout << "attribution ambiguous: multiple keys below alpha\n";
            } else if (res.attributed.has_value()) {
                std::cout << "attributed to " << res.reports[*res.attributed].key_id << "\n";
            } else {
                std::cout << "no key flagged\n";
            }
            return any_low_power ? kExitLowPower : kExitOk;
        }

        if (baseline->parsed()) {
            const NgramModel model = NgramModel::load(bl_model);
            const std::vector<std::string> pos =
                corpus_sample_texts(ingest_jsonl(bl_pos).records);
            const std::vector<std::string> neg =
                corpus_sample_texts(ingest_jsonl(bl_neg).records);
            SplitTestResult result;
            if (bl_method == "ddi") {
                std::vector<SampleFeatures> fp;
                std::vector<SampleFeatures> fn;
                for (const std::string& t : pos) { fp.push_back(extract_features(model, t)); }
                for (const std::string& t : neg) { fn.push_back(extract_features(model, t)); }
                result = ddi_test(fp, fn, seed);
            } else {
                MiaMethod method = MiaMethod::kPpl;
                if (bl_method == "mink") {
                    method = MiaMethod::kMink;
                } else if (bl_method == "compress") {
                    method = MiaMethod::kCompress;
                } else if (bl_method != "ppl") {
                    throw std::invalid_argument("unknown baseline method: " + bl_method);
                }
                result = mia_split_test(model, pos, neg, method);
                if (!bl_csv.empty()) {
                    std::ostringstream csv;
                    csv << "split,index,score\n";
                    const auto ps = mia_scores(model, pos, method);
                    const auto ns = mia_scores(model, neg, method);
                    for (std::size_t i = 0; i < ps.size(); ++i) {
                        csv << "pos," << i << ',' << ps[i] << '\n';
                    }
                    for (std::size_t i = 0; i < ns.size(); ++i) {
                        csv << "neg," << i << ',' << ns[i] << '\n';
                    }
                    write_text(bl_csv, csv.str());
                }
            }
            write_text(out.empty() ? "baseline.json" : out, result.to_json_string());
            std::cout << result.method << ": p = " << result.p_value
                      << (result.degenerate ? " (degenerate)" : "") << "\n";
            return kExitOk;
        }

        if (experiment->parsed()) {
            exp_spec.mode = parse_experiment_mode(exp_mode);
            exp_spec.prompt_mode =
                exp_prompt_mode == "continuation" ? PromptMode::kContinuation : PromptMode::kQa;
            if (exp_spec.mode == ExperimentMode::kContinuationDetection) {
                exp_spec.prompt_mode = PromptMode::kContinuation;
                if (!experiment->count("--q")) { exp_spec.q = 10.0; }
            }
            if (!out.empty()) { exp_spec.out_dir = out; }
            if (!experiment->count("--seeds")) { exp_spec.seeds = {seed}; }
            const ExperimentBundle bundle = run_experiment(exp_spec);
            std::cout << "wrote " << bundle.rows.size() << " reports under "
                      << exp_spec.out_dir << "\n";
            return kExitOk;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInputError;
    }
    return kExitOk;
}
