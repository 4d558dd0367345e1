// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "xlmeta/rng.hpp"

namespace xlmeta::data {

enum class TaskKind { classification, span };

struct SpanLabel {
    std::size_t start = 0;
    std::size_t end = 0;  // inclusive, end >= start
};

// One rendered example as a task sees it.
struct Example {
    std::string language;
    std::int64_t latent_id = -1;  // -1 = absent (no parallel sampling)
    std::vector<double> features;       // classification input
    std::vector<std::int64_t> tokens;   // span-task input
    std::int64_t label = -1;            // classification gold
    SpanLabel span;                     // span-task gold
    bool is_span = false;
};

// The shared content behind one example, before any language transform.
struct LatentExample {
    std::int64_t latent_id = -1;
    std::vector<double> z;
    std::vector<std::int64_t> tokens;
    std::int64_t label = -1;
    SpanLabel span;
    bool is_span = false;
};

// A language is an orthogonal transform of latent space: plane rotations for
// continuous features (plane p covers coordinates 2p, 2p+1), a vocabulary
// permutation for token sequences.
struct LanguageSpec {
    std::string code;
    std::vector<double> plane_angles;      // classification families
    std::vector<std::int64_t> vocab_perm;  // span families
    std::string group;                     // "high-resource" | "core" | "outlier"
};

struct LanguageBag {
    std::string language;
    std::string split;  // "train" | "dev" | "test"
    std::vector<Example> examples;

    // True when every example carries a latent id (parallel sampling usable).
    bool parallel_ready() const;
};

struct FamilyConfig {
    TaskKind task = TaskKind::classification;
    std::vector<std::string> languages;  // unique codes
    std::string high_resource = "en";
    std::string outlier;  // optional; far transform (the distant-language analog)

    // classification family
    std::size_t latent_dim = 8;  // even
    std::size_t num_classes = 3;
    double angle_spread = 0.5;  // radians; in-family rotation scale
    double class_sep = 2.0;     // distance of class centers from origin
    double noise_std = 0.5;

    // span family
    std::size_t vocab_size = 24;
    std::size_t seq_len = 12;

    void validate() const;
};

// The token whose contiguous run is the gold answer span (span families).
inline constexpr std::int64_t kAnswerToken = 1;

struct CorpusLayout {
    std::size_t train_size = 2000;  // high-resource language only
    std::size_t dev_size = 250;     // per language, fully parallel
    std::size_t test_size = 500;    // per language, fully parallel

    void validate() const;
};

struct Corpus {
    FamilyConfig config;
    std::vector<LanguageSpec> specs;
    // split -> language -> bag
    std::map<std::string, std::map<std::string, LanguageBag>> splits;
};

// Deterministic in (cfg, seed). The high-resource language gets the identity
// transform; the outlier (when named) gets a rotation whose norm is 3.5x the
// median of the other languages' rotation norms.
std::vector<LanguageSpec> gen_language_family(const FamilyConfig& cfg, std::uint64_t seed);

// Rotate through the configured planes; inverse applies the reverse rotation.
std::vector<double> apply_rotation(const std::vector<double>& z,
                                   const std::vector<double>& plane_angles,
                                   bool inverse = false);

Example render(const LatentExample& z, const LanguageSpec& spec);

// Class-balanced latent pool for classification (label i%C on the i-th draw);
// span pools plant a 1-3 token answer run at a random position.
std::vector<LatentExample> gen_latent_pool(const FamilyConfig& cfg, std::size_t count,
                                           std::int64_t id_offset, Rng& rng);

// train: high-resource only. dev/test: one latent pool each, rendered in
// every language, so bags are fully parallel (same latent ids and labels).
Corpus gen_corpus(const CorpusLayout& layout, const FamilyConfig& cfg,
                  const std::vector<LanguageSpec>& specs, std::uint64_t seed);

// ---- JSONL interchange -------------------------------------------------------
// One object per line:
//   {"language": str, "latent_id": int?, "x": [numbers], "label": int | {"start","end"}}

void write_jsonl(const std::filesystem::path& path, const std::vector<LanguageBag>& bags);

std::map<std::string, LanguageBag> load_jsonl(const std::filesystem::path& path,
                                              const std::string& language_field = "language",
                                              const std::string& feature_field = "x",
                                              const std::string& label_field = "label",
                                              const std::string& latent_field = "latent_id");

}  // namespace xlmeta::data
