// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "xlmeta/autodiff.hpp"
#include "xlmeta/rng.hpp"

namespace xlmeta::model {

enum class InputKind { continuous, tokens };

// Encoder = linear/embedding input layer + `num_hidden_layers` tanh layers of
// width H. Mean pooling over positions stands in for a [CLS] summary vector.
struct EncoderConfig {
    InputKind input_kind = InputKind::continuous;
    std::size_t input_dim = 0;          // continuous mode: feature count D
    std::size_t vocab_size = 0;         // token mode: V
    std::size_t hidden_dim = 16;        // H
    std::size_t num_hidden_layers = 2;  // tanh layers after the input layer
    std::size_t num_classes = 0;        // 0 = no classifier head
    bool span_head = false;

    void validate() const;  // throws std::invalid_argument on bad fields
};

// Parameter names and shapes implied by a config:
//   continuous: in.W (D x H), in.b (H);  tokens: embed (V x H)
//   hidden l:   h<l>.W (H x H), h<l>.b (H)
//   classifier: cls.W (H x C), cls.b (C);  span: span.S (H), span.E (H)
std::map<std::string, Shape> expected_shapes(const EncoderConfig& cfg);

// Gaussian init scaled by 1/sqrt(fan-in); biases zero. Deterministic in rng.
ad::TensorMap init_params(const EncoderConfig& cfg, Rng& rng);

// Throws if `params` is missing a name, has an extra name, or any shape
// disagrees with the config.
void validate_params(const ad::TensorMap& params, const EncoderConfig& cfg);

struct EncoderOutput {
    ad::NodePtr states;  // per-position hidden states (T x H); null in continuous mode
    ad::NodePtr pooled;  // (m x H) batch in continuous mode, (1 x H) in token mode
};

// x is a (m x D) batch (a bare (D) vector is accepted as one row).
EncoderOutput encode_features(const ad::NodePtr& x, const ad::ParamSet& params,
                              const EncoderConfig& cfg);
EncoderOutput encode_features(const Tensor& x, const ad::ParamSet& params,
                              const EncoderConfig& cfg);

// One token sequence; ids must lie in [0, vocab_size).
EncoderOutput encode_tokens(const std::vector<std::int64_t>& ids, const ad::ParamSet& params,
                            const EncoderConfig& cfg);

// pooled (m x H) -> log-probabilities (m x C), rows of a proper distribution.
ad::NodePtr classify(const ad::NodePtr& pooled, const ad::ParamSet& params);

// Mean negative log-likelihood of the gold labels under (m x C) log-probs.
ad::NodePtr nll_loss(const ad::NodePtr& log_probs, const std::vector<std::int64_t>& labels);

struct SpanScores {
    ad::NodePtr start_logits;  // (T), S . T_i
    ad::NodePtr end_logits;    // (T), E . T_i
    ad::NodePtr start_dist;    // softmax over positions
    ad::NodePtr end_dist;
};

SpanScores span_scores(const ad::NodePtr& states, const ad::ParamSet& params);

// Best pair (i, j) with j >= i by start_logit[i] + end_logit[j]: k-best over
// unconstrained pairs filtered for validity, exhaustive valid search if all k
// are invalid. Ties break to smaller i, then smaller j.
std::pair<std::size_t, std::size_t> decode_span(const Tensor& start_logits,
                                                const Tensor& end_logits, std::size_t k = 20);

// -(log P(start = gold_start) + log P(end = gold_end)), from raw logits.
ad::NodePtr span_loss(const ad::NodePtr& start_logits, const ad::NodePtr& end_logits,
                      std::size_t gold_start, std::size_t gold_end);

// ---- checkpoint format -----------------------------------------------------
// JSON object {name: {"shape": [ints], "data": [doubles]}}.

std::string tensors_to_json(const ad::TensorMap& tensors);
ad::TensorMap tensors_from_json(const std::string& text);
void save_tensors_json(const std::filesystem::path& path, const ad::TensorMap& tensors);
ad::TensorMap load_tensors_json(const std::filesystem::path& path);

}  // namespace xlmeta::model
