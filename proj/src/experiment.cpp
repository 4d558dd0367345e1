// SPDX-License-Identifier: Apache-2.0
#include "xlmeta/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "xlmeta/rng.hpp"

namespace xlmeta::experiment {

namespace fs = std::filesystem;
namespace mt = xlmeta::metatrain;
using nlohmann::ordered_json;

// ---- small string helpers ----------------------------------------------

namespace {

std::string trim(const std::string& s) {
    const auto from = s.find_first_not_of(" \t\r\n");
    if (from == std::string::npos) return "";
    const auto to = s.find_last_not_of(" \t\r\n");
    return s.substr(from, to - from + 1);
}

std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> out;
    std::string item;
    std::stringstream stream(value);
    while (std::getline(stream, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::string join_list(const std::vector<std::string>& items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += ",";
        out += items[i];
    }
    return out;
}

// Shortest round-trip representation, identical to the JSON artifacts.
std::string num_str(double v) { return nlohmann::json(v).dump(); }

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double out = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return out;
    } catch (const std::exception&) {
        throw ConfigError(key, "expected a number, got '" + value + "'");
    }
}

std::int64_t parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const std::int64_t out = std::stoll(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return out;
    } catch (const std::exception&) {
        throw ConfigError(key, "expected an integer, got '" + value + "'");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    const std::int64_t v = parse_int(key, value);
    if (v < 0) throw ConfigError(key, "expected a non-negative integer, got '" + value + "'");
    return static_cast<std::uint64_t>(v);
}

std::size_t parse_size(const std::string& key, const std::string& value) {
    return static_cast<std::size_t>(parse_u64(key, value));
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
    if (value == "false" || value == "0" || value == "no" || value == "off") return false;
    throw ConfigError(key, "expected a boolean, got '" + value + "'");
}

}  // namespace

// ---- key-value sources ------------------------------------------------------

KeyValues parse_config_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("config", "cannot open config file '" + path.string() + "'");
    }
    KeyValues out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            // Section headers group keys visually; names stay flat.
            if (line.back() != ']' || line.size() < 3) {
                throw ConfigError("config", "line " + std::to_string(lineno) +
                                                ": malformed section header '" + line + "'");
            }
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config",
                              "line " + std::to_string(lineno) + ": expected 'key = value'");
        }
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) {
            throw ConfigError("config", "line " + std::to_string(lineno) + ": empty key");
        }
        out[key] = trim(line.substr(eq + 1));
    }
    return out;
}

KeyValues parse_cli_keys(const std::vector<std::string>& args,
                         std::vector<std::string>& positionals) {
    KeyValues out;
    for (std::size_t i = 0; i < args.size(); ++i) {
        const std::string& token = args[i];
        if (token.rfind("--", 0) != 0) {
            positionals.push_back(token);
            continue;
        }
        std::string body = token.substr(2);
        if (body.empty()) throw ConfigError("--", "empty flag");
        std::string value;
        if (const auto eq = body.find('='); eq != std::string::npos) {
            value = body.substr(eq + 1);
            body.resize(eq);
        } else if (i + 1 < args.size() && args[i + 1].rfind("--", 0) != 0) {
            value = args[++i];
        } else {
            value = "true";  // bare boolean flag
        }
        std::replace(body.begin(), body.end(), '-', '_');
        out[body] = value;
    }
    return out;
}

// ---- config assembly -------------------------------------------------------

namespace {

void apply_key(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "task") cfg.task = value;
    else if (key == "languages") cfg.languages = split_list(value);
    else if (key == "high_resource") cfg.high_resource = value;
    else if (key == "outlier") cfg.outlier = value;
    else if (key == "aux") cfg.aux = split_list(value);
    else if (key == "targets") cfg.targets = split_list(value);
    else if (key == "latent_dim") cfg.latent_dim = parse_size(key, value);
    else if (key == "classes") cfg.num_classes = parse_size(key, value);
    else if (key == "spread") cfg.angle_spread = parse_double(key, value);
    else if (key == "class_sep") cfg.class_sep = parse_double(key, value);
    else if (key == "noise_std") cfg.noise_std = parse_double(key, value);
    else if (key == "vocab") cfg.vocab_size = parse_size(key, value);
    else if (key == "seq_len") cfg.seq_len = parse_size(key, value);
    else if (key == "train_size") cfg.layout.train_size = parse_size(key, value);
    else if (key == "dev_size") cfg.layout.dev_size = parse_size(key, value);
    else if (key == "test_size") cfg.layout.test_size = parse_size(key, value);
    else if (key == "dataset_dir") cfg.dataset_dir = value;
    else if (key == "hidden_dim") cfg.hidden_dim = parse_size(key, value);
    else if (key == "layers") cfg.num_hidden_layers = parse_size(key, value);
    else if (key == "mode") cfg.train.mode = value;
    else if (key == "strategy") cfg.train.sampler.strategy = value;
    else if (key == "parallel") cfg.train.sampler.parallel = parse_bool(key, value);
    else if (key == "same_subset") cfg.train.sampler.same_subset = parse_bool(key, value);
    else if (key == "support_subset") cfg.train.sampler.support_subset_size = parse_size(key, value);
    else if (key == "query_subset") cfg.train.sampler.query_subset_size = parse_size(key, value);
    else if (key == "k") cfg.train.sampler.k = parse_size(key, value);
    else if (key == "n") cfg.train.sampler.n = parse_size(key, value);
    else if (key == "alpha") cfg.train.alpha = parse_double(key, value);
    else if (key == "beta") cfg.train.beta = parse_double(key, value);
    else if (key == "inner_steps") cfg.train.inner_steps = static_cast<int>(parse_int(key, value));
    else if (key == "first_order") cfg.train.first_order = parse_bool(key, value);
    else if (key == "weight_decay") cfg.train.weight_decay = parse_double(key, value);
    else if (key == "iters_per_lang") {
        cfg.train.iters_per_language = static_cast<int>(parse_int(key, value));
    } else if (key == "episode_batch") {
        cfg.train.episode_batch = static_cast<int>(parse_int(key, value));
    } else if (key == "support_langs") cfg.support_langs = split_list(value);
    else if (key == "query_langs") cfg.query_langs = split_list(value);
    else if (key == "finetune_lr") cfg.finetune.lr = parse_double(key, value);
    else if (key == "finetune_epochs") cfg.finetune.epochs = static_cast<int>(parse_int(key, value));
    else if (key == "finetune_batch") cfg.finetune.batch_size = parse_size(key, value);
    else if (key == "finetune_weight_decay") cfg.finetune.weight_decay = parse_double(key, value);
    else if (key == "few_shot_lr") cfg.few_shot.lr = parse_double(key, value);
    else if (key == "few_shot_epochs") cfg.few_shot.epochs = static_cast<int>(parse_int(key, value));
    else if (key == "few_shot_batch") cfg.few_shot.batch_size = parse_size(key, value);
    else if (key == "seed") cfg.seed = parse_u64(key, value);
    else if (key == "output_dir") cfg.output_dir = value;
    else if (key == "checkpoint_interval") cfg.checkpoint_interval = parse_size(key, value);
    else throw ConfigError(key, "unknown config key");
}

// Resolved (support, query) language lists for the role pools.
std::pair<std::vector<std::string>, std::vector<std::string>> role_languages(
    const ExperimentConfig& cfg) {
    const auto query = cfg.query_langs.empty() ? cfg.aux : cfg.query_langs;
    std::vector<std::string> support;
    if (!cfg.support_langs.empty()) {
        support = cfg.support_langs;
    } else if (cfg.train.mode == "x-maml") {
        support = query;
    } else {
        support = {cfg.high_resource};
    }
    return {support, query};
}

void check_languages(const ExperimentConfig& cfg, const std::string& field,
                     const std::vector<std::string>& codes) {
    if (codes.empty()) throw ConfigError(field, "needs at least one language");
    for (const auto& code : codes) {
        if (std::find(cfg.languages.begin(), cfg.languages.end(), code) == cfg.languages.end()) {
            throw ConfigError(field, "language '" + code + "' is not in languages");
        }
    }
}

}  // namespace

void ExperimentConfig::validate() const {
    if (task != "classification" && task != "span") {
        throw ConfigError("task", "must be 'classification' or 'span', got '" + task + "'");
    }
    if (languages.empty()) throw ConfigError("languages", "needs at least one code");
    if (std::set<std::string>(languages.begin(), languages.end()).size() != languages.size()) {
        throw ConfigError("languages", "duplicate language codes");
    }
    check_languages(*this, "high_resource", {high_resource});
    if (!outlier.empty()) check_languages(*this, "outlier", {outlier});
    check_languages(*this, "aux", aux);
    check_languages(*this, "targets", targets);
    if (!support_langs.empty()) check_languages(*this, "support_langs", support_langs);
    if (!query_langs.empty()) check_languages(*this, "query_langs", query_langs);

    if (latent_dim < 2 || latent_dim % 2 != 0) {
        throw ConfigError("latent_dim", "must be an even dimension >= 2");
    }
    if (num_classes < 2) throw ConfigError("classes", "must be >= 2");
    if (angle_spread < 0.0) throw ConfigError("spread", "must be >= 0");
    if (noise_std < 0.0) throw ConfigError("noise_std", "must be >= 0");
    if (vocab_size < 3) throw ConfigError("vocab", "must be >= 3");
    if (seq_len < 2) throw ConfigError("seq_len", "must be >= 2");
    if (layout.train_size < 1) throw ConfigError("train_size", "must be >= 1");
    if (layout.dev_size < 1) throw ConfigError("dev_size", "must be >= 1");
    if (layout.test_size < 1) throw ConfigError("test_size", "must be >= 1");
    if (hidden_dim < 1) throw ConfigError("hidden_dim", "must be >= 1");

    if (train.mode != "xla-maml" && train.mode != "x-maml" && train.mode != "baseline") {
        throw ConfigError("mode", "must be xla-maml, x-maml, or baseline, got '" + train.mode +
                                      "'");
    }
    if (train.sampler.strategy != "random" && train.sampler.strategy != "covering") {
        throw ConfigError("strategy",
                          "must be random or covering, got '" + train.sampler.strategy + "'");
    }
    if (!(train.alpha > 0.0)) throw ConfigError("alpha", "must be > 0");
    if (!(train.beta > 0.0)) throw ConfigError("beta", "must be > 0");
    if (train.inner_steps < 1) throw ConfigError("inner_steps", "must be >= 1");
    if (train.iters_per_language < 0) throw ConfigError("iters_per_lang", "must be >= 0");
    if (train.episode_batch < 1) throw ConfigError("episode_batch", "must be >= 1");
    if (train.weight_decay < 0.0) throw ConfigError("weight_decay", "must be >= 0");
    if (train.sampler.k < 1) throw ConfigError("k", "must be >= 1");
    if (train.sampler.n < 1) throw ConfigError("n", "must be >= 1");
    if (train.sampler.parallel && train.sampler.k != train.sampler.n) {
        throw ConfigError("parallel", "parallel sampling requires k == n");
    }
    if (train.sampler.support_subset_size < 1) throw ConfigError("support_subset", "must be >= 1");
    if (train.sampler.query_subset_size < 1) throw ConfigError("query_subset", "must be >= 1");

    if (finetune.lr < 0.0) throw ConfigError("finetune_lr", "must be >= 0");
    if (finetune.epochs < 0) throw ConfigError("finetune_epochs", "must be >= 0");
    if (finetune.batch_size < 1) throw ConfigError("finetune_batch", "must be >= 1");
    if (few_shot.lr < 0.0) throw ConfigError("few_shot_lr", "must be >= 0");
    if (few_shot.epochs < 0) throw ConfigError("few_shot_epochs", "must be >= 0");
    if (few_shot.batch_size < 1) throw ConfigError("few_shot_batch", "must be >= 1");
    if (checkpoint_interval < 1) throw ConfigError("checkpoint_interval", "must be >= 1");
    if (output_dir.empty()) throw ConfigError("output_dir", "must not be empty");
    if (!dataset_dir.empty() && !fs::exists(dataset_dir)) {
        throw ConfigError("dataset_dir", "path does not exist: '" + dataset_dir + "'");
    }

    if (train.mode == "x-maml") {
        auto [support, query] = role_languages(*this);
        if (support != query) {
            throw ConfigError("support_langs",
                              "x-maml draws both roles from one pool; support_langs must equal "
                              "query_langs (or be left unset)");
        }
    }
}

ExperimentConfig config_from_keys(const KeyValues& keys) {
    ExperimentConfig cfg;
    for (const auto& [key, value] : keys) apply_key(cfg, key, value);
    if (const char* root = std::getenv("XLMETA_OUTPUT_ROOT");
        root && *root && cfg.output_dir.is_relative()) {
        cfg.output_dir = fs::path(root) / cfg.output_dir;
    }
    cfg.train.seed = cfg.seed;
    cfg.validate();
    return cfg;
}

KeyValues echo_keys(const ExperimentConfig& cfg) {
    const auto [support, query] = role_languages(cfg);
    KeyValues out;
    out["task"] = cfg.task;
    out["languages"] = join_list(cfg.languages);
    out["high_resource"] = cfg.high_resource;
    out["outlier"] = cfg.outlier;
    out["aux"] = join_list(cfg.aux);
    out["targets"] = join_list(cfg.targets);
    out["latent_dim"] = std::to_string(cfg.latent_dim);
    out["classes"] = std::to_string(cfg.num_classes);
    out["spread"] = num_str(cfg.angle_spread);
    out["class_sep"] = num_str(cfg.class_sep);
    out["noise_std"] = num_str(cfg.noise_std);
    out["vocab"] = std::to_string(cfg.vocab_size);
    out["seq_len"] = std::to_string(cfg.seq_len);
    out["train_size"] = std::to_string(cfg.layout.train_size);
    out["dev_size"] = std::to_string(cfg.layout.dev_size);
    out["test_size"] = std::to_string(cfg.layout.test_size);
    out["dataset_dir"] = cfg.dataset_dir;
    out["hidden_dim"] = std::to_string(cfg.hidden_dim);
    out["layers"] = std::to_string(cfg.num_hidden_layers);
    out["mode"] = cfg.train.mode;
    out["strategy"] = cfg.train.sampler.strategy;
    out["parallel"] = cfg.train.sampler.parallel ? "true" : "false";
    out["same_subset"] = cfg.train.sampler.same_subset ? "true" : "false";
    out["support_subset"] = std::to_string(cfg.train.sampler.support_subset_size);
    out["query_subset"] = std::to_string(cfg.train.sampler.query_subset_size);
    out["k"] = std::to_string(cfg.train.sampler.k);
    out["n"] = std::to_string(cfg.train.sampler.n);
    out["alpha"] = num_str(cfg.train.alpha);
    out["beta"] = num_str(cfg.train.beta);
    out["inner_steps"] = std::to_string(cfg.train.inner_steps);
    out["first_order"] = cfg.train.first_order ? "true" : "false";
    out["weight_decay"] = num_str(cfg.train.weight_decay);
    out["iters_per_lang"] = std::to_string(cfg.train.iters_per_language);
    out["episode_batch"] = std::to_string(cfg.train.episode_batch);
    out["support_langs"] = join_list(support);
    out["query_langs"] = join_list(query);
    out["finetune_lr"] = num_str(cfg.finetune.lr);
    out["finetune_epochs"] = std::to_string(cfg.finetune.epochs);
    out["finetune_batch"] = std::to_string(cfg.finetune.batch_size);
    out["finetune_weight_decay"] = num_str(cfg.finetune.weight_decay);
    out["few_shot_lr"] = num_str(cfg.few_shot.lr);
    out["few_shot_epochs"] = std::to_string(cfg.few_shot.epochs);
    out["few_shot_batch"] = std::to_string(cfg.few_shot.batch_size);
    out["seed"] = std::to_string(cfg.seed);
    out["output_dir"] = cfg.output_dir.string();
    out["checkpoint_interval"] = std::to_string(cfg.checkpoint_interval);
    out["seed.data"] = std::to_string(derive_seed(cfg.seed, "data"));
    out["seed.sampler"] = std::to_string(derive_seed(cfg.seed, "sampler"));
    out["seed.init"] = std::to_string(derive_seed(cfg.seed, "init"));
    out["seed.finetune"] = std::to_string(derive_seed(cfg.seed, "finetune"));
    return out;
}

// ---- pipeline pieces ------------------------------------------------------

model::EncoderConfig encoder_config(const ExperimentConfig& cfg) {
    model::EncoderConfig enc;
    enc.hidden_dim = cfg.hidden_dim;
    enc.num_hidden_layers = cfg.num_hidden_layers;
    if (cfg.task == "span") {
        enc.input_kind = model::InputKind::tokens;
        enc.vocab_size = cfg.vocab_size;
        enc.span_head = true;
    } else {
        enc.input_kind = model::InputKind::continuous;
        enc.input_dim = cfg.latent_dim;
        enc.num_classes = cfg.num_classes;
    }
    return enc;
}

data::FamilyConfig family_config(const ExperimentConfig& cfg) {
    data::FamilyConfig family;
    family.task = cfg.task == "span" ? data::TaskKind::span : data::TaskKind::classification;
    family.languages = cfg.languages;
    family.high_resource = cfg.high_resource;
    family.outlier = cfg.outlier;
    family.latent_dim = cfg.latent_dim;
    family.num_classes = cfg.num_classes;
    family.angle_spread = cfg.angle_spread;
    family.class_sep = cfg.class_sep;
    family.noise_std = cfg.noise_std;
    family.vocab_size = cfg.vocab_size;
    family.seq_len = cfg.seq_len;
    return family;
}

data::Corpus make_corpus(const ExperimentConfig& cfg) {
    if (cfg.dataset_dir.empty()) {
        const auto family = family_config(cfg);
        const auto data_seed = derive_seed(cfg.seed, "data");
        return data::gen_corpus(cfg.layout, family,
                                data::gen_language_family(family, data_seed), data_seed);
    }
    data::Corpus corpus;
    corpus.config = family_config(cfg);
    for (const char* split : {"train", "dev", "test"}) {
        const auto path = fs::path(cfg.dataset_dir) / (std::string(split) + ".jsonl");
        if (!fs::exists(path)) {
            throw ConfigError("dataset_dir", "missing file '" + path.string() + "'");
        }
        auto bags = data::load_jsonl(path);
        for (auto& [code, bag] : bags) bag.split = split;
        corpus.splits.emplace(split, std::move(bags));
    }
    return corpus;
}

namespace {

void write_config_echo(const fs::path& path, const ExperimentConfig& cfg) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    for (const auto& [key, value] : echo_keys(cfg)) out << key << " = " << value << "\n";
}

const data::LanguageBag& need_bag(const data::Corpus& corpus, const std::string& split,
                                  const std::string& code) {
    const auto s = corpus.splits.find(split);
    if (s == corpus.splits.end()) {
        throw ConfigError("dataset_dir", "corpus has no '" + split + "' split");
    }
    const auto b = s->second.find(code);
    if (b == s->second.end()) {
        throw ConfigError("languages",
                          "split '" + split + "' has no bag for language '" + code + "'");
    }
    return b->second;
}

ordered_json eval_json(const mt::EvalResult& r) {
    ordered_json out;
    out["metric"] = r.metric;
    out["accuracy"] = r.accuracy;
    out["em"] = r.em;
    out["f1"] = r.f1;
    out["count"] = r.count;
    out["primary"] = r.primary();
    return out;
}

ordered_json record_json(const mt::MetricsRecord& r) {
    ordered_json out;
    out["iteration"] = r.iteration;
    out["inner_loss"] = r.inner_loss;
    out["meta_loss"] = r.meta_loss;
    out["lr"] = r.lr_t;
    out["support_languages"] = r.support_languages;
    out["query_languages"] = r.query_languages;
    out["support_pass"] = r.support_pass;
    out["query_pass"] = r.query_pass;
    return out;
}

ordered_json results_json(const ExperimentConfig& cfg, const RunArtifacts& art) {
    ordered_json out;
    out["mode"] = cfg.train.mode;
    out["seed"] = cfg.seed;
    out["targets"] = cfg.targets;
    out["zero_shot"] = ordered_json::object();
    for (const auto& [code, r] : art.zero_shot) out["zero_shot"][code] = eval_json(r);
    out["few_shot"] = ordered_json::object();
    for (const auto& [code, r] : art.few_shot) out["few_shot"][code] = eval_json(r);
    out["zero_shot_mean"] = art.zero_mean;
    out["few_shot_mean"] = art.few_mean;
    return out;
}

}  // namespace

std::filesystem::path generate_dataset(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto out = cfg.output_dir;
    const auto data_dir = out / "data";
    fs::create_directories(data_dir);
    write_config_echo(out / "config.echo", cfg);

    auto base = cfg;
    base.dataset_dir.clear();  // always generate here
    const auto corpus = make_corpus(base);
    for (const auto& [split, bags] : corpus.splits) {
        std::vector<data::LanguageBag> ordered;
        ordered.reserve(bags.size());
        for (const auto& [code, bag] : bags) ordered.push_back(bag);
        data::write_jsonl(data_dir / (split + ".jsonl"), ordered);
    }

    ordered_json family = ordered_json::array();
    for (const auto& spec : corpus.specs) {
        ordered_json entry;
        entry["code"] = spec.code;
        entry["group"] = spec.group;
        if (!spec.plane_angles.empty()) entry["plane_angles"] = spec.plane_angles;
        if (!spec.vocab_perm.empty()) entry["vocab_perm"] = spec.vocab_perm;
        family.push_back(entry);
    }
    std::ofstream fam(out / "family.json");
    fam << family.dump(2) << "\n";
    return data_dir;
}

RunArtifacts run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto out = cfg.output_dir;
    fs::create_directories(out / "checkpoints");
    write_config_echo(out / "config.echo", cfg);

    const auto corpus = make_corpus(cfg);
    const auto enc = encoder_config(cfg);
    Rng init_rng(derive_seed(cfg.seed, "init"));
    auto theta = model::init_params(enc, init_rng);
    theta = mt::finetune(enc, theta, need_bag(corpus, "train", cfg.high_resource), cfg.finetune,
                         derive_seed(cfg.seed, "finetune"));

    std::ofstream metrics(out / "metrics.jsonl");
    if (!metrics) throw std::runtime_error("cannot write '" + (out / "metrics.jsonl").string() + "'");

    auto train = cfg.train;
    train.seed = cfg.seed;
    if (train.mode != "baseline") {
        const auto [support_codes, query_codes] = role_languages(cfg);
        episodes::RolePools pools;
        for (const auto& code : support_codes) {
            pools.support.emplace(code, need_bag(corpus, "dev", code));
        }
        for (const auto& code : query_codes) {
            pools.query.emplace(code, need_bag(corpus, "dev", code));
        }
        const auto hook = [&](const mt::MetricsRecord& r, const ad::TensorMap& t) {
            metrics << record_json(r).dump() << "\n";
            if ((r.iteration + 1) % cfg.checkpoint_interval == 0) {
                model::save_tensors_json(
                    out / "checkpoints" / ("step-" + std::to_string(r.iteration + 1) + ".json"),
                    t);
            }
        };
        theta = mt::run_meta_training(enc, train, pools, theta, hook).theta;
    }
    model::save_tensors_json(out / "checkpoints" / "final.json", theta);

    RunArtifacts art;
    art.dir = out;
    art.theta = theta;
    for (const auto& code : cfg.targets) {
        const auto& test = need_bag(corpus, "test", code);
        art.zero_shot.emplace(code, mt::evaluate_bag(enc, theta, test));
        art.few_shot.emplace(
            code, mt::few_shot_eval(enc, theta, need_bag(corpus, "dev", code), test, cfg.few_shot,
                                    derive_seed(cfg.seed, "few_shot." + code)));
        art.zero_mean += art.zero_shot.at(code).primary();
        art.few_mean += art.few_shot.at(code).primary();
    }
    art.zero_mean /= static_cast<double>(cfg.targets.size());
    art.few_mean /= static_cast<double>(cfg.targets.size());

    const auto results = results_json(cfg, art);
    ordered_json final_line;
    final_line["final"] = results;
    metrics << final_line.dump() << "\n";
    metrics.close();

    std::ofstream results_file(out / "results.json");
    results_file << results.dump(2) << "\n";
    return art;
}

// ---- sweep ----------------------------------------------------------

ResultsMatrix sweep_matrix(const ExperimentConfig& cfg) {
    cfg.validate();
    ResultsMatrix matrix;
    matrix.aux = cfg.aux;
    matrix.targets = cfg.targets;

    auto base_cfg = cfg;
    base_cfg.train.mode = "baseline";
    base_cfg.output_dir = cfg.output_dir / "sweep" / "baseline";
    const auto base = run_experiment(base_cfg);
    for (const auto& code : cfg.targets) {
        matrix.baseline[code] = base.zero_shot.at(code).primary();
    }

    for (const auto& aux : cfg.aux) {
        auto run_cfg = cfg;
        run_cfg.train.mode = "xla-maml";
        run_cfg.support_langs = {cfg.high_resource};
        run_cfg.query_langs = {aux};
        run_cfg.output_dir = cfg.output_dir / "sweep" / ("aux-" + aux);
        const auto art = run_experiment(run_cfg);
        matrix.cells[aux];  // row exists even when every cell is n/a
        for (const auto& target : cfg.targets) {
            if (target == aux) continue;  // n/a by convention
            matrix.cells[aux][target] = art.zero_shot.at(target).primary() -
                                        matrix.baseline.at(target);
        }
    }

    std::ofstream csv(cfg.output_dir / "matrix.csv");
    csv << matrix_csv(matrix);
    ordered_json doc;
    doc["aux"] = matrix.aux;
    doc["targets"] = matrix.targets;
    doc["baseline"] = ordered_json::object();
    for (const auto& [code, value] : matrix.baseline) doc["baseline"][code] = value;
    doc["cells"] = ordered_json::object();
    for (const auto& aux : matrix.aux) {
        doc["cells"][aux] = ordered_json::object();
        for (const auto& target : matrix.targets) {
            const auto row = matrix.cells.find(aux);
            const auto cell = row == matrix.cells.end() ? row->second.end()
                                                        : row->second.find(target);
            if (row != matrix.cells.end() && cell != row->second.end()) {
                doc["cells"][aux][target] = cell->second;
            } else {
                doc["cells"][aux][target] = nullptr;  // n/a
            }
        }
    }
    std::ofstream json_file(cfg.output_dir / "matrix.json");
    json_file << doc.dump(2) << "\n";
    return matrix;
}

std::string matrix_csv(const ResultsMatrix& matrix) {
    std::string out = "aux\\target";
    for (const auto& target : matrix.targets) out += "," + target;
    out += "\n";
    char buffer[64];
    for (const auto& aux : matrix.aux) {
        out += aux;
        for (const auto& target : matrix.targets) {
            const auto row = matrix.cells.find(aux);
            if (row != matrix.cells.end()) {
                const auto cell = row->second.find(target);
                if (cell != row->second.end()) {
                    std::snprintf(buffer, sizeof(buffer), "%.6f", cell->second);
                    out += std::string(",") + buffer;
                    continue;
                }
            }
            out += ",n/a";
        }
        out += "\n";
    }
    return out;
}

// ---- report ----------------------------------------------------------------

namespace {

struct LoadedRun {
    std::string label;
    std::string mode;
    std::string seed;
    fs::path dir;
    nlohmann::json results;
};

LoadedRun load_run(const fs::path& dir) {
    std::vector<std::string> missing;
    for (const char* name : {"config.echo", "metrics.jsonl", "results.json"}) {
        if (!fs::exists(dir / name)) missing.push_back(name);
    }
    if (!missing.empty()) {
        std::string what = "report: '" + dir.string() + "' is missing expected files:";
        for (const auto& name : missing) what += " " + name;
        throw std::runtime_error(what);
    }
    LoadedRun run;
    run.dir = dir;
    auto normal = dir.lexically_normal();
    run.label = normal.filename().string();
    if (run.label.empty() || run.label == ".") run.label = normal.parent_path().filename().string();
    if (run.label.empty()) run.label = dir.string();

    const auto echo = parse_config_file(dir / "config.echo");
    if (const auto it = echo.find("mode"); it != echo.end()) run.mode = it->second;
    if (const auto it = echo.find("seed"); it != echo.end()) run.seed = it->second;

    std::ifstream in(dir / "results.json");
    try {
        run.results = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& err) {
        throw std::runtime_error("report: cannot parse '" + (dir / "results.json").string() +
                                 "': " + err.what());
    }
    return run;
}

std::string fixed4(double v, bool sign = false) {
    char buffer[32];
    std::snprintf(buffer, sizeof(buffer), sign ? "%+.4f" : "%.4f", v);
    return buffer;
}

}  // namespace

std::string report(const std::vector<fs::path>& run_dirs) {
    if (run_dirs.empty()) throw std::runtime_error("report: no run directories given");
    std::vector<LoadedRun> runs;
    runs.reserve(run_dirs.size());
    for (const auto& dir : run_dirs) runs.push_back(load_run(dir));
    for (std::size_t i = 0; i < runs.size(); ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            if (runs[j].label == runs[i].label) {
                runs[i].label += "#" + std::to_string(i);
                break;
            }
        }
    }

    const LoadedRun* baseline = nullptr;
    for (const auto& run : runs) {
        if (run.mode == "baseline") {
            baseline = &run;
            break;
        }
    }

    // Target languages: first run's order, then any extras in later runs.
    std::vector<std::string> targets;
    for (const auto& run : runs) {
        for (const auto& code : run.results.value("targets", std::vector<std::string>{})) {
            if (std::find(targets.begin(), targets.end(), code) == targets.end()) {
                targets.push_back(code);
            }
        }
    }

    std::ostringstream out;
    out << "runs:\n";
    for (const auto& run : runs) {
        out << "  " << run.label << "  mode=" << run.mode << "  seed=" << run.seed << "  ("
            << run.dir.string() << ")\n";
    }
    out << "\nzero-shot primary metric per target language\n";

    std::size_t width = 8;
    for (const auto& code : targets) width = std::max(width, code.size());
    auto cell = [&](const std::string& s, std::size_t w) {
        std::string padded = s;
        if (padded.size() < w) padded.insert(0, w - padded.size(), ' ');
        return padded;
    };
    std::vector<std::size_t> col_width;
    out << cell("language", width);
    for (const auto& run : runs) {
        std::size_t w = std::max<std::size_t>(run.label.size(), 7);
        col_width.push_back(w);
        out << "  " << cell(run.label, w);
        if (baseline && &run != baseline) out << "  " << cell("delta", 7);
    }
    out << "\n";

    auto zero_of = [](const LoadedRun& run, const std::string& code) -> double {
        const auto& zs = run.results.at("zero_shot");
        if (!zs.contains(code)) return std::numeric_limits<double>::quiet_NaN();
        return zs.at(code).at("primary").get<double>();
    };
    for (const auto& code : targets) {
        out << cell(code, width);
        for (std::size_t i = 0; i < runs.size(); ++i) {
            const double v = zero_of(runs[i], code);
            out << "  " << cell(std::isnan(v) ? "-" : fixed4(v), col_width[i]);
            if (baseline && &runs[i] != baseline) {
                const double b = zero_of(*baseline, code);
                out << "  "
                    << cell(std::isnan(v) || std::isnan(b) ? "-" : fixed4(v - b, true), 7);
            }
        }
        out << "\n";
    }
    out << cell("mean", width);
    for (std::size_t i = 0; i < runs.size(); ++i) {
        const double v = runs[i].results.at("zero_shot_mean").get<double>();
        out << "  " << cell(fixed4(v), col_width[i]);
        if (baseline && &runs[i] != baseline) {
            const double b = baseline->results.at("zero_shot_mean").get<double>();
            out << "  " << cell(fixed4(v - b, true), 7);
        }
    }
    out << "\n\nfew-shot mean:";
    for (const auto& run : runs) {
        out << "  " << run.label << "=" << fixed4(run.results.at("few_shot_mean").get<double>());
    }
    out << "\n";
    return out.str();
}

// ---- CLI ----------------------------------------------------------------

namespace {

constexpr const char* kUsage =
    "usage: xlmeta-cli <verb> [--key value ...]\n"
    "verbs:\n"
    "  gen-data  write corpus JSONL under --output-dir\n"
    "  run       full pipeline: finetune, meta-train, evaluate, persist artifacts\n"
    "  sweep     one xla-maml run per auxiliary language; writes matrix.csv/.json\n"
    "  report <dir>...  summarize finished runs\n"
    "common flags: --config FILE --mode {baseline,x-maml,xla-maml}\n"
    "  --strategy {random,covering} --parallel --support-langs a,b --query-langs c,d\n"
    "  --seed N --iters-per-lang N --inner-steps N --alpha X --beta X --output-dir DIR\n";

}  // namespace

int cli_main(const std::vector<std::string>& args) {
    if (args.empty()) {
        std::cerr << kUsage;
        return 2;
    }
    const std::string verb = args[0];
    std::vector<std::string> rest(args.begin() + 1, args.end());
    try {
        std::vector<std::string> positionals;
        auto cli = parse_cli_keys(rest, positionals);

        if (verb == "report") {
            if (!cli.empty()) {
                std::cerr << "error: report takes run directories only\n";
                return 2;
            }
            if (positionals.empty()) {
                std::cerr << "error: report needs at least one run directory\n";
                return 2;
            }
            std::vector<fs::path> dirs(positionals.begin(), positionals.end());
            std::cout << report(dirs);
            return 0;
        }
        if (verb != "gen-data" && verb != "run" && verb != "sweep") {
            std::cerr << "error: unknown verb '" << verb << "'\n" << kUsage;
            return 2;
        }
        if (!positionals.empty()) {
            std::cerr << "error: unexpected argument '" << positionals.front() << "'\n";
            return 2;
        }

        KeyValues merged;
        if (const auto it = cli.find("config"); it != cli.end()) {
            merged = parse_config_file(it->second);
            cli.erase("config");
        }
        for (const auto& [key, value] : cli) merged[key] = value;  // CLI wins
        const auto cfg = config_from_keys(merged);

        if (verb == "gen-data") {
            const auto dir = generate_dataset(cfg);
            std::cout << "dataset written to " << dir.string() << "\n";
        } else if (verb == "run") {
            const auto art = run_experiment(cfg);
            std::cout << "mode=" << cfg.train.mode << " seed=" << cfg.seed << "\n";
            for (const auto& [code, r] : art.zero_shot) {
                std::cout << "  " << code << "  zero-shot=" << fixed4(r.primary())
                          << "  few-shot=" << fixed4(art.few_shot.at(code).primary()) << "\n";
            }
            std::cout << "zero-shot mean=" << fixed4(art.zero_mean)
                      << "  few-shot mean=" << fixed4(art.few_mean) << "\n";
            std::cout << "artifacts in " << art.dir.string() << "\n";
        } else {
            const auto matrix = sweep_matrix(cfg);
            std::cout << matrix_csv(matrix);
            std::cout << "artifacts in " << cfg.output_dir.string() << "\n";
        }
        return 0;
    } catch (const ConfigError& err) {
        std::cerr << "config error: " << err.what() << "\n";
        return 2;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 1;
    }
}

}  // namespace xlmeta::experiment
