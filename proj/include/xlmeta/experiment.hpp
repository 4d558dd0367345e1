// SPDX-License-Identifier: Apache-2.0
//
// Experiment runner: flat key-value configs (CLI > file > defaults), the
// generate/finetune/meta-train/evaluate pipeline, the auxiliary x target
// sweep matrix, and the report formatter behind the command-line tool.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "xlmeta/data.hpp"
#include "xlmeta/metatrain.hpp"

namespace xlmeta::experiment {

// A bad or missing config field; carries the field name for error messages
// and maps to CLI exit code 2.
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string field, const std::string& message)
        : std::runtime_error(field + ": " + message), field_(std::move(field)) {}
    const std::string& field() const { return field_; }

private:
    std::string field_;
};

using KeyValues = std::map<std::string, std::string>;

// `key = value` lines with # comments; a [section] header prefixes later
// keys as "section.key".
KeyValues parse_config_file(const std::filesystem::path& path);

// --key value, --key=value, or a bare boolean --flag; dashes in key names
// become underscores. Everything else lands in `positionals` in order.
KeyValues parse_cli_keys(const std::vector<std::string>& args,
                         std::vector<std::string>& positionals);

struct ExperimentConfig {
    // data family
    std::string task = "classification";  // "classification" | "span"
    std::vector<std::string> languages = {"en", "de", "ru", "hi", "fi", "tr", "ur", "sw"};
    std::string high_resource = "en";
    std::string outlier = "sw";
    std::vector<std::string> aux = {"de", "ru", "hi", "fi"};  // meta-training pool
    std::vector<std::string> targets = {"tr", "ur", "sw"};    // held-out evaluation
    std::size_t latent_dim = 8;
    std::size_t num_classes = 3;
    double angle_spread = 0.5;
    double class_sep = 2.0;
    double noise_std = 0.5;
    std::size_t vocab_size = 24;
    std::size_t seq_len = 12;
    data::CorpusLayout layout;
    std::string dataset_dir;  // nonempty: load JSONL splits instead of generating

    // model
    std::size_t hidden_dim = 16;
    std::size_t num_hidden_layers = 2;

    // training
    metatrain::TrainConfig train;
    std::vector<std::string> support_langs;  // empty: derived from the mode
    std::vector<std::string> query_langs;    // empty: the aux pool
    metatrain::FinetuneConfig finetune;      // high-resource pass
    metatrain::FinetuneConfig few_shot;      // target-language pass

    // plumbing
    std::uint64_t seed = 1;
    std::filesystem::path output_dir = "out";
    std::size_t checkpoint_interval = 100;

    void validate() const;  // throws ConfigError naming the offending field
};

// Defaults overlaid with the given keys; unknown keys and bad values raise
// ConfigError. A relative output_dir is joined under $XLMETA_OUTPUT_ROOT when
// that variable is set.
ExperimentConfig config_from_keys(const KeyValues& keys);

// The fully resolved config as flat keys, including the derived sub-seeds
// (seed.data / seed.sampler / seed.init / seed.finetune). This is what
// config.echo contains.
KeyValues echo_keys(const ExperimentConfig& cfg);

model::EncoderConfig encoder_config(const ExperimentConfig& cfg);
data::FamilyConfig family_config(const ExperimentConfig& cfg);

// Generate from the family (seed.data) or load dataset_dir/{train,dev,test}.jsonl.
data::Corpus make_corpus(const ExperimentConfig& cfg);

// gen-data verb: corpus JSONL plus family.json and config.echo under output_dir.
std::filesystem::path generate_dataset(const ExperimentConfig& cfg);

struct RunArtifacts {
    std::filesystem::path dir;
    ad::TensorMap theta;
    std::map<std::string, metatrain::EvalResult> zero_shot;  // per target language
    std::map<std::string, metatrain::EvalResult> few_shot;
    double zero_mean = 0.0;
    double few_mean = 0.0;
};

// Full pipeline; writes config.echo, metrics.jsonl, checkpoints/, results.json.
RunArtifacts run_experiment(const ExperimentConfig& cfg);

struct ResultsMatrix {
    std::vector<std::string> aux;
    std::vector<std::string> targets;
    std::map<std::string, double> baseline;  // target -> zero-shot metric
    // aux -> target -> delta vs baseline; the aux==target cell is absent (n/a).
    std::map<std::string, std::map<std::string, double>> cells;
};

// One xla-maml run per auxiliary language against a shared baseline run;
// writes matrix.csv and matrix.json under cfg.output_dir plus one run
// directory per row under sweep/.
ResultsMatrix sweep_matrix(const ExperimentConfig& cfg);

std::string matrix_csv(const ResultsMatrix& matrix);

// Per-language summary table over finished run directories (pure read);
// adds delta columns against the first baseline run when one is present.
std::string report(const std::vector<std::filesystem::path>& run_dirs);

// The command-line entry point (argv[1:]); returns the process exit code.
int cli_main(const std::vector<std::string>& args);

}  // namespace xlmeta::experiment
