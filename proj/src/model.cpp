// SPDX-License-Identifier: Apache-2.0
#include "xlmeta/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace xlmeta::model {

void EncoderConfig::validate() const {
    if (hidden_dim < 1) throw std::invalid_argument("encoder: hidden_dim must be >= 1");
    if (input_kind == InputKind::tokens) {
        if (vocab_size < 1) {
            throw std::invalid_argument("encoder: vocab_size must be >= 1 in token mode");
        }
    } else {
        if (input_dim < 1) {
            throw std::invalid_argument("encoder: input_dim must be >= 1 in continuous mode");
        }
    }
}

std::map<std::string, Shape> expected_shapes(const EncoderConfig& cfg) {
    cfg.validate();
    std::map<std::string, Shape> out;
    const std::size_t h = cfg.hidden_dim;
    if (cfg.input_kind == InputKind::tokens) {
        out.emplace("embed", Shape{cfg.vocab_size, h});
    } else {
        out.emplace("in.W", Shape{cfg.input_dim, h});
        out.emplace("in.b", Shape{h});
    }
    for (std::size_t l = 0; l < cfg.num_hidden_layers; ++l) {
        out.emplace("h" + std::to_string(l) + ".W", Shape{h, h});
        out.emplace("h" + std::to_string(l) + ".b", Shape{h});
    }
    if (cfg.num_classes > 0) {
        out.emplace("cls.W", Shape{h, cfg.num_classes});
        out.emplace("cls.b", Shape{cfg.num_classes});
    }
    if (cfg.span_head) {
        out.emplace("span.S", Shape{h});
        out.emplace("span.E", Shape{h});
    }
    return out;
}

ad::TensorMap init_params(const EncoderConfig& cfg, Rng& rng) {
    ad::TensorMap out;
    for (const auto& [name, shape] : expected_shapes(cfg)) {
        const bool is_bias = name.size() > 2 && name.compare(name.size() - 2, 2, ".b") == 0;
        if (is_bias) {
            out.emplace(name, Tensor::zeros(shape));
            continue;
        }
        const std::size_t fan_in = shape.size() == 2 && name != "embed" ? shape[0] : 1;
        const double stddev = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
        std::vector<double> v(shape_numel(shape));
        for (auto& x : v) x = stddev * rng.normal();
        out.emplace(name, Tensor::from_vector(shape, std::move(v)));
    }
    return out;
}

void validate_params(const ad::TensorMap& params, const EncoderConfig& cfg) {
    const auto expected = expected_shapes(cfg);
    for (const auto& [name, shape] : expected) {
        auto it = params.find(name);
        if (it == params.end()) {
            throw std::invalid_argument("params: missing parameter '" + name + "'");
        }
        if (it->second.shape() != shape) {
            throw std::invalid_argument("params: parameter '" + name + "' has shape " +
                                        shape_str(it->second.shape()) + ", expected " +
                                        shape_str(shape));
        }
    }
    for (const auto& [name, tensor] : params) {
        if (!expected.count(name)) {
            throw std::invalid_argument("params: unexpected parameter '" + name + "'");
        }
    }
}

namespace {

ad::NodePtr tanh_stack(ad::NodePtr h, const ad::ParamSet& params, const EncoderConfig& cfg) {
    const std::size_t m = h->value.rows();
    for (std::size_t l = 0; l < cfg.num_hidden_layers; ++l) {
        const std::string key = "h" + std::to_string(l);
        h = ad::tanh(ad::add(ad::matmul(h, params.at(key + ".W")),
                             ad::tile_rows(params.at(key + ".b"), m)));
    }
    return h;
}

}  // namespace

EncoderOutput encode_features(const ad::NodePtr& x, const ad::ParamSet& params,
                              const EncoderConfig& cfg) {
    cfg.validate();
    if (cfg.input_kind != InputKind::continuous) {
        throw std::invalid_argument("encode_features: encoder is configured for token input");
    }
    ad::NodePtr batch = x;
    if (batch->value.rank() == 1) {
        batch = ad::reshape(batch, {1, batch->value.numel()});
    }
    if (batch->value.rank() != 2 || batch->value.cols() != cfg.input_dim) {
        throw std::invalid_argument("encode_features: input " + shape_str(x->value.shape()) +
                                    " does not match input_dim " +
                                    std::to_string(cfg.input_dim));
    }
    const std::size_t m = batch->value.rows();
    ad::NodePtr z =
        ad::add(ad::matmul(batch, params.at("in.W")), ad::tile_rows(params.at("in.b"), m));
    return EncoderOutput{nullptr, tanh_stack(z, params, cfg)};
}

EncoderOutput encode_features(const Tensor& x, const ad::ParamSet& params,
                              const EncoderConfig& cfg) {
    return encode_features(ad::constant(x), params, cfg);
}

EncoderOutput encode_tokens(const std::vector<std::int64_t>& ids, const ad::ParamSet& params,
                            const EncoderConfig& cfg) {
    cfg.validate();
    if (cfg.input_kind != InputKind::tokens) {
        throw std::invalid_argument("encode_tokens: encoder is configured for continuous input");
    }
    if (ids.empty()) throw std::invalid_argument("encode_tokens: empty token sequence");
    ad::NodePtr states = ad::embed_rows(params.at("embed"), ids, cfg.vocab_size);
    states = tanh_stack(states, params, cfg);
    const std::size_t t = ids.size();
    ad::NodePtr pooled = ad::reshape(ad::scale(ad::col_sum(states), 1.0 / static_cast<double>(t)),
                                     {1, cfg.hidden_dim});
    return EncoderOutput{states, pooled};
}

ad::NodePtr classify(const ad::NodePtr& pooled, const ad::ParamSet& params) {
    const std::size_t m = pooled->value.rows();
    ad::NodePtr logits =
        ad::add(ad::matmul(pooled, params.at("cls.W")), ad::tile_rows(params.at("cls.b"), m));
    return ad::log_row_softmax(logits);
}

ad::NodePtr nll_loss(const ad::NodePtr& log_probs, const std::vector<std::int64_t>& labels) {
    if (log_probs->value.rows() != labels.size()) {
        throw std::invalid_argument("nll_loss: " + std::to_string(labels.size()) +
                                    " labels for log-probs " +
                                    shape_str(log_probs->value.shape()));
    }
    return ad::neg(ad::mean(ad::take_per_row(log_probs, labels)));
}

SpanScores span_scores(const ad::NodePtr& states, const ad::ParamSet& params) {
    if (states->value.rank() != 2 || states->value.rows() == 0) {
        throw std::invalid_argument("span_scores: need at least one position, got " +
                                    shape_str(states->value.shape()));
    }
    const std::size_t t = states->value.rows(), h = states->value.cols();
    auto project = [&](const ad::NodePtr& vec) {
        return ad::reshape(ad::matmul(states, ad::reshape(vec, {h, 1})), {t});
    };
    SpanScores out;
    out.start_logits = project(params.at("span.S"));
    out.end_logits = project(params.at("span.E"));
    out.start_dist = ad::row_softmax(out.start_logits);
    out.end_dist = ad::row_softmax(out.end_logits);
    return out;
}

std::pair<std::size_t, std::size_t> decode_span(const Tensor& start_logits,
                                                const Tensor& end_logits, std::size_t k) {
    if (!start_logits.same_shape(end_logits)) {
        throw std::invalid_argument("decode_span: logit shapes differ, " +
                                    shape_str(start_logits.shape()) + " vs " +
                                    shape_str(end_logits.shape()));
    }
    const std::size_t t = start_logits.numel();
    if (t == 0) throw std::invalid_argument("decode_span: empty logits");
    if (k < 1) throw std::invalid_argument("decode_span: k must be >= 1");

    struct Cand {
        double score;
        std::size_t i, j;
    };
    auto better = [](const Cand& a, const Cand& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.i != b.i) return a.i < b.i;
        return a.j < b.j;
    };

    // k-best over unconstrained (i, j), then validity filtering.
    std::vector<Cand> all;
    all.reserve(t * t);
    for (std::size_t i = 0; i < t; ++i) {
        for (std::size_t j = 0; j < t; ++j) {
            all.push_back({start_logits.at(i) + end_logits.at(j), i, j});
        }
    }
    const std::size_t keep = std::min(k, all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(),
                      better);
    for (std::size_t r = 0; r < keep; ++r) {
        if (all[r].j >= all[r].i) return {all[r].i, all[r].j};
    }

    // All k candidates were invalid: exhaustive search over valid pairs.
    Cand best{-std::numeric_limits<double>::infinity(), 0, 0};
    bool found = false;
    for (std::size_t i = 0; i < t; ++i) {
        for (std::size_t j = i; j < t; ++j) {
            Cand c{start_logits.at(i) + end_logits.at(j), i, j};
            if (!found || better(c, best)) {
                best = c;
                found = true;
            }
        }
    }
    return {best.i, best.j};
}

ad::NodePtr span_loss(const ad::NodePtr& start_logits, const ad::NodePtr& end_logits,
                      std::size_t gold_start, std::size_t gold_end) {
    const std::size_t t = start_logits->value.numel();
    if (gold_start >= t || gold_end >= t) {
        throw std::out_of_range("span_loss: gold span (" + std::to_string(gold_start) + ", " +
                                std::to_string(gold_end) + ") out of range for length " +
                                std::to_string(t));
    }
    if (gold_end < gold_start) {
        throw std::invalid_argument("span_loss: gold end " + std::to_string(gold_end) +
                                    " precedes gold start " + std::to_string(gold_start));
    }
    auto pick = [](const ad::NodePtr& logits, std::size_t idx) {
        const std::size_t n = logits->value.numel();
        auto log_probs = ad::log_row_softmax(ad::reshape(logits, {1, n}));
        return ad::take_per_row(log_probs, {static_cast<std::int64_t>(idx)});
    };
    return ad::neg(ad::sum(ad::add(pick(start_logits, gold_start), pick(end_logits, gold_end))));
}

// ---- checkpoint format -------------------------------------------------------

std::string tensors_to_json(const ad::TensorMap& tensors) {
    nlohmann::ordered_json root = nlohmann::ordered_json::object();
    for (const auto& [name, t] : tensors) {
        nlohmann::ordered_json entry;
        entry["shape"] = t.shape();
        entry["data"] = std::vector<double>(t.view().begin(), t.view().end());
        root[name] = std::move(entry);
    }
    return root.dump(2);
}

ad::TensorMap tensors_from_json(const std::string& text) {
    nlohmann::json root;
    try {
        root = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::invalid_argument(std::string("checkpoint: invalid JSON: ") + e.what());
    }
    if (!root.is_object()) throw std::invalid_argument("checkpoint: top level must be an object");
    ad::TensorMap out;
    for (const auto& [name, entry] : root.items()) {
        if (!entry.contains("shape") || !entry.contains("data")) {
            throw std::invalid_argument("checkpoint: entry '" + name +
                                        "' needs 'shape' and 'data'");
        }
        Shape shape = entry.at("shape").get<Shape>();
        std::vector<double> data = entry.at("data").get<std::vector<double>>();
        if (shape_numel(shape) != data.size()) {
            throw std::invalid_argument("checkpoint: entry '" + name + "' shape " +
                                        shape_str(shape) + " does not hold " +
                                        std::to_string(data.size()) + " values");
        }
        out.emplace(name, Tensor::from_vector(std::move(shape), std::move(data)));
    }
    return out;
}

void save_tensors_json(const std::filesystem::path& path, const ad::TensorMap& tensors) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("checkpoint: cannot open '" + path.string() + "' for write");
    f << tensors_to_json(tensors) << '\n';
}

ad::TensorMap load_tensors_json(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("checkpoint: cannot open '" + path.string() + "'");
    std::ostringstream buf;
    buf << f.rdbuf();
    return tensors_from_json(buf.str());
}

}  // namespace xlmeta::model
