// SPDX-License-Identifier: Apache-2.0
#include "xlmeta/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace xlmeta::data {

bool LanguageBag::parallel_ready() const {
    if (examples.empty()) return false;
    return std::all_of(examples.begin(), examples.end(),
                       [](const Example& e) { return e.latent_id >= 0; });
}

void FamilyConfig::validate() const {
    if (languages.size() < 2) {
        throw std::invalid_argument("family: need at least 2 languages, got " +
                                    std::to_string(languages.size()));
    }
    std::vector<std::string> sorted = languages;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw std::invalid_argument("family: language codes must be unique");
    }
    auto has = [&](const std::string& code) {
        return std::find(languages.begin(), languages.end(), code) != languages.end();
    };
    if (!has(high_resource)) {
        throw std::invalid_argument("family: high-resource language '" + high_resource +
                                    "' is not in the language list");
    }
    if (!outlier.empty() && !has(outlier)) {
        throw std::invalid_argument("family: outlier language '" + outlier +
                                    "' is not in the language list");
    }
    if (!outlier.empty() && outlier == high_resource) {
        throw std::invalid_argument("family: outlier cannot be the high-resource language");
    }
    if (angle_spread < 0.0) throw std::invalid_argument("family: angle_spread must be >= 0");
    if (task == TaskKind::classification) {
        if (latent_dim < 2 || latent_dim % 2 != 0) {
            throw std::invalid_argument("family: latent_dim must be even and >= 2, got " +
                                        std::to_string(latent_dim));
        }
        if (num_classes < 2) throw std::invalid_argument("family: need >= 2 classes");
        if (noise_std < 0.0) throw std::invalid_argument("family: noise_std must be >= 0");
    } else {
        if (vocab_size < 3) throw std::invalid_argument("family: vocab_size must be >= 3");
        if (seq_len < 2) throw std::invalid_argument("family: seq_len must be >= 2");
    }
}

void CorpusLayout::validate() const {
    if (train_size < 1 || dev_size < 1 || test_size < 1) {
        throw std::invalid_argument("layout: all split sizes must be >= 1");
    }
}

namespace {

double angle_norm(const std::vector<double>& angles) {
    double s = 0.0;
    for (double a : angles) s += a * a;
    return std::sqrt(s);
}

}  // namespace

std::vector<LanguageSpec> gen_language_family(const FamilyConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const std::size_t planes = cfg.latent_dim / 2;
    std::vector<LanguageSpec> specs;
    specs.reserve(cfg.languages.size());

    // Draw every non-outlier language first so the outlier can be scaled
    // against the family's median rotation norm.
    std::vector<double> core_norms;
    for (const std::string& code : cfg.languages) {
        LanguageSpec spec;
        spec.code = code;
        Rng rng(derive_seed(seed, "language." + code));
        if (code == cfg.high_resource) {
            spec.group = "high-resource";
            if (cfg.task == TaskKind::classification) {
                spec.plane_angles.assign(planes, 0.0);
            } else {
                spec.vocab_perm.resize(cfg.vocab_size);
                std::iota(spec.vocab_perm.begin(), spec.vocab_perm.end(), 0);
            }
        } else if (cfg.task == TaskKind::classification) {
            spec.group = code == cfg.outlier ? "outlier" : "core";
            spec.plane_angles.resize(planes);
            for (auto& a : spec.plane_angles) a = rng.uniform_real(-cfg.angle_spread, cfg.angle_spread);
            if (code != cfg.outlier) core_norms.push_back(angle_norm(spec.plane_angles));
        } else {
            spec.group = code == cfg.outlier ? "outlier" : "core";
            spec.vocab_perm.resize(cfg.vocab_size);
            std::iota(spec.vocab_perm.begin(), spec.vocab_perm.end(), 0);
            rng.shuffle(spec.vocab_perm);
        }
        specs.push_back(std::move(spec));
    }

    if (cfg.task == TaskKind::classification && !cfg.outlier.empty()) {
        double median = cfg.angle_spread;
        if (!core_norms.empty()) {
            std::sort(core_norms.begin(), core_norms.end());
            median = core_norms[core_norms.size() / 2];
        }
        for (auto& spec : specs) {
            if (spec.code != cfg.outlier) continue;
            const double norm = angle_norm(spec.plane_angles);
            if (norm > 0.0 && median > 0.0) {
                const double target = 3.5 * median;
                for (auto& a : spec.plane_angles) a *= target / norm;
            }
        }
    }
    return specs;
}

std::vector<double> apply_rotation(const std::vector<double>& z,
                                   const std::vector<double>& plane_angles, bool inverse) {
    if (z.size() != 2 * plane_angles.size()) {
        throw std::invalid_argument("render: latent dimension " + std::to_string(z.size()) +
                                    " does not match a transform over " +
                                    std::to_string(2 * plane_angles.size()) + " coordinates");
    }
    std::vector<double> out(z.size());
    for (std::size_t p = 0; p < plane_angles.size(); ++p) {
        const double phi = inverse ? -plane_angles[p] : plane_angles[p];
        const double c = std::cos(phi), s = std::sin(phi);
        const double x = z[2 * p], y = z[2 * p + 1];
        out[2 * p] = c * x - s * y;
        out[2 * p + 1] = s * x + c * y;
    }
    return out;
}

Example render(const LatentExample& z, const LanguageSpec& spec) {
    Example e;
    e.language = spec.code;
    e.latent_id = z.latent_id;
    e.is_span = z.is_span;
    if (z.is_span) {
        e.tokens.reserve(z.tokens.size());
        for (std::int64_t t : z.tokens) {
            if (t < 0 || static_cast<std::size_t>(t) >= spec.vocab_perm.size()) {
                throw std::invalid_argument("render: token " + std::to_string(t) +
                                            " outside the " +
                                            std::to_string(spec.vocab_perm.size()) +
                                            "-token vocabulary of '" + spec.code + "'");
            }
            e.tokens.push_back(spec.vocab_perm[static_cast<std::size_t>(t)]);
        }
        e.span = z.span;
    } else {
        e.features = apply_rotation(z.z, spec.plane_angles);
        e.label = z.label;
    }
    return e;
}

std::vector<LatentExample> gen_latent_pool(const FamilyConfig& cfg, std::size_t count,
                                           std::int64_t id_offset, Rng& rng) {
    cfg.validate();
    std::vector<LatentExample> pool;
    pool.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        LatentExample ex;
        ex.latent_id = id_offset + static_cast<std::int64_t>(i);
        if (cfg.task == TaskKind::classification) {
            ex.label = static_cast<std::int64_t>(i % cfg.num_classes);
            ex.z.resize(cfg.latent_dim);
            // Class c's center sits at class_sep along coordinate 2c (distinct
            // rotation planes), so language rotations move classes apart.
            for (std::size_t d = 0; d < cfg.latent_dim; ++d) {
                ex.z[d] = cfg.noise_std * rng.normal();
            }
            const std::size_t axis = (2 * static_cast<std::size_t>(ex.label)) % cfg.latent_dim;
            ex.z[axis] += cfg.class_sep;
        } else {
            ex.is_span = true;
            ex.tokens.resize(cfg.seq_len);
            for (auto& t : ex.tokens) {
                // Uniform over the vocabulary minus the answer token.
                std::int64_t draw = static_cast<std::int64_t>(rng.uniform_index(cfg.vocab_size - 1));
                if (draw >= kAnswerToken) ++draw;
                t = draw;
            }
            const std::size_t max_len = std::min<std::size_t>(3, cfg.seq_len);
            const std::size_t run = 1 + rng.uniform_index(max_len);
            const std::size_t start = rng.uniform_index(cfg.seq_len - run + 1);
            for (std::size_t j = 0; j < run; ++j) ex.tokens[start + j] = kAnswerToken;
            ex.span = SpanLabel{start, start + run - 1};
        }
        pool.push_back(std::move(ex));
    }
    return pool;
}

Corpus gen_corpus(const CorpusLayout& layout, const FamilyConfig& cfg,
                  const std::vector<LanguageSpec>& specs, std::uint64_t seed) {
    layout.validate();
    cfg.validate();
    Corpus corpus;
    corpus.config = cfg;
    corpus.specs = specs;

    const LanguageSpec* high = nullptr;
    for (const auto& spec : specs) {
        if (spec.code == cfg.high_resource) high = &spec;
    }
    if (high == nullptr) {
        throw std::invalid_argument("gen_corpus: specs lack the high-resource language '" +
                                    cfg.high_resource + "'");
    }

    {
        Rng rng(derive_seed(seed, "latent.train"));
        auto pool = gen_latent_pool(cfg, layout.train_size, 0, rng);
        LanguageBag bag;
        bag.language = high->code;
        bag.split = "train";
        bag.examples.reserve(pool.size());
        for (const auto& z : pool) bag.examples.push_back(render(z, *high));
        corpus.splits["train"].emplace(high->code, std::move(bag));
    }

    const struct {
        const char* split;
        std::size_t size;
        std::int64_t offset;
    } parallel_splits[] = {{"dev", layout.dev_size, 1'000'000},
                           {"test", layout.test_size, 2'000'000}};
    for (const auto& ps : parallel_splits) {
        Rng rng(derive_seed(seed, std::string("latent.") + ps.split));
        const auto pool = gen_latent_pool(cfg, ps.size, ps.offset, rng);
        for (const auto& spec : specs) {
            LanguageBag bag;
            bag.language = spec.code;
            bag.split = ps.split;
            bag.examples.reserve(pool.size());
            for (const auto& z : pool) bag.examples.push_back(render(z, spec));
            corpus.splits[ps.split].emplace(spec.code, std::move(bag));
        }
    }
    return corpus;
}

// ---- JSONL ---------------------------------------------------------------

void write_jsonl(const std::filesystem::path& path, const std::vector<LanguageBag>& bags) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("jsonl: cannot open '" + path.string() + "' for write");
    for (const auto& bag : bags) {
        for (const auto& e : bag.examples) {
            nlohmann::ordered_json line;
            line["language"] = e.language;
            if (e.latent_id >= 0) line["latent_id"] = e.latent_id;
            if (e.is_span) {
                line["x"] = e.tokens;
                line["label"] = {{"start", e.span.start}, {"end", e.span.end}};
            } else {
                line["x"] = e.features;
                line["label"] = e.label;
            }
            f << line.dump() << '\n';
        }
    }
}

std::map<std::string, LanguageBag> load_jsonl(const std::filesystem::path& path,
                                              const std::string& language_field,
                                              const std::string& feature_field,
                                              const std::string& label_field,
                                              const std::string& latent_field) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("jsonl: cannot open '" + path.string() + "'");
    std::map<std::string, LanguageBag> bags;
    std::string line;
    std::size_t line_no = 0;
    auto fail = [&](const std::string& what) {
        throw std::runtime_error("jsonl: line " + std::to_string(line_no) + ": " + what);
    };
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            fail(std::string("malformed JSON: ") + e.what());
        }
        if (!obj.is_object()) fail("expected a JSON object");
        if (!obj.contains(language_field) || !obj.at(language_field).is_string()) {
            fail("missing string field '" + language_field + "'");
        }
        if (!obj.contains(feature_field) || !obj.at(feature_field).is_array()) {
            fail("missing array field '" + feature_field + "'");
        }
        if (!obj.contains(label_field)) fail("missing field '" + label_field + "'");

        Example e;
        e.language = obj.at(language_field).get<std::string>();
        if (obj.contains(latent_field)) {
            if (!obj.at(latent_field).is_number_integer()) {
                fail("field '" + latent_field + "' must be an integer");
            }
            e.latent_id = obj.at(latent_field).get<std::int64_t>();
        }
        const auto& label = obj.at(label_field);
        if (label.is_number_integer()) {
            e.is_span = false;
            e.label = label.get<std::int64_t>();
            for (const auto& v : obj.at(feature_field)) {
                if (!v.is_number()) fail("feature entries must be numbers");
                e.features.push_back(v.get<double>());
            }
        } else if (label.is_object() && label.contains("start") && label.contains("end")) {
            e.is_span = true;
            if (!label.at("start").is_number_integer() || !label.at("end").is_number_integer()) {
                fail("span label start/end must be integers");
            }
            const auto start = label.at("start").get<std::int64_t>();
            const auto end = label.at("end").get<std::int64_t>();
            if (start < 0 || end < start) fail("span label must satisfy 0 <= start <= end");
            e.span = SpanLabel{static_cast<std::size_t>(start), static_cast<std::size_t>(end)};
            for (const auto& v : obj.at(feature_field)) {
                if (!v.is_number_integer()) fail("token entries must be integers");
                e.tokens.push_back(v.get<std::int64_t>());
            }
            if (e.span.end >= e.tokens.size()) fail("span label exceeds sequence length");
        } else {
            fail("unknown label: expected an integer class or {\"start\", \"end\"}");
        }

        auto [it, inserted] = bags.try_emplace(e.language);
        if (inserted) it->second.language = e.language;
        if (!it->second.examples.empty() && it->second.examples.front().is_span != e.is_span) {
            fail("mixed label kinds for language '" + e.language + "'");
        }
        it->second.examples.push_back(std::move(e));
    }
    return bags;
}

}  // namespace xlmeta::data
