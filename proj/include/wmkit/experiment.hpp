#pragma once
// End-to-end experiment runner: watermark pipeline construction, detection
// and attribution runs, null-grid calibration, proportion/budget sweeps and
// continued-training robustness, with seeded reproducible report bundles.

#include <cstdint>
#include <string>
#include <vector>

#include "wmkit/corpus.hpp"
#include "wmkit/detector.hpp"
#include "wmkit/synth.hpp"

namespace wmkit {

enum class ExperimentMode {
    kQaDetection,
    kContinuationDetection,
    kAttribution,
    kFprCalibration,
    kProportionSweep,
    kBudgetSweep,
    kContinuedTraining,
};

const char* experiment_mode_name(ExperimentMode mode);
ExperimentMode parse_experiment_mode(const std::string& name); // throws on unknown

struct ExperimentSpec {
    ExperimentMode mode = ExperimentMode::kQaDetection;
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    double rho = 1.0;                  // watermarked proportion
    std::size_t token_budget = 100000; // >= 1000
    double q = 40.0;
    double alpha = 0.05;
    PromptMode prompt_mode = PromptMode::kQa;
    double prefix_fraction = 0.5;
    std::string out_dir = "wmkit-out";

    // Empty paths mean "synthesize"; loaded corpora are used in order.
    std::vector<std::string> corpus_paths;
    std::vector<std::string> key_paths; // empty: keys derived from the seed

    NgramModel::Params lm_params;
    std::size_t max_vocab = 5000;
    SynthSpec synth; // seed/domain fields are overridden per run

    // Continued-training corpus size as a multiple of the watermarked corpus.
    double continued_scale = 5.0;

    void validate() const;
};

struct ExperimentRow {
    std::string name;
    std::uint64_t seed = 0;
    std::string key_id;
    double rho = 0.0;
    std::size_t budget = 0;
    double q = 0.0;
    std::size_t n0 = 0;
    std::size_t gated = 0;
    double z = 0.0;
    double p_value = 1.0;
    double log10_p = 0.0;
    bool low_power = false;
    bool significant = false;
};

struct ExperimentBundle {
    std::vector<ExperimentRow> rows;
    std::vector<std::pair<std::string, DetectionReport>> reports; // (name, report)
};

ExperimentBundle run_experiment(const ExperimentSpec& spec);

// --- pipeline building blocks shared by the runner, the CLI and the tests ---

NgramModel train_model(const Corpus& corpus, const NgramModel::Params& params,
                       std::size_t max_vocab);

WatermarkKey derive_key(std::uint64_t seed, const std::string& key_id);

struct Pipeline {
    Corpus base;
    NgramModel clean; // rewrite + auxiliary entropy model
    Corpus watermarked;
    RewriteManifest manifest;
    NgramModel suspect; // fresh model trained on the watermarked corpus
    WatermarkKey key;
};

// base corpus -> clean model -> watermarked rewrite (proportion rho) ->
// fresh suspect trained on the rewrite.
Pipeline build_pipeline(Corpus base, const WatermarkKey& key, double rho,
                        const NgramModel::Params& params, std::size_t max_vocab,
                        std::uint64_t seed);

DetectionConfig make_detection_config(const ExperimentSpec& spec, std::uint64_t seed);

} // namespace wmkit
