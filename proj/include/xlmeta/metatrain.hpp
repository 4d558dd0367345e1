// SPDX-License-Identifier: Apache-2.0
//
// Meta-training engine: high-resource finetuning, functional inner adaptation,
// exact second-order meta updates, and zero-/few-shot evaluation.
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "xlmeta/autodiff.hpp"
#include "xlmeta/data.hpp"
#include "xlmeta/episodes.hpp"
#include "xlmeta/model.hpp"
#include "xlmeta/optim.hpp"

namespace xlmeta::metatrain {

// ---- configuration -----------------------------------------------------

struct FinetuneConfig {
    double lr = 2e-5;  // AdamW base rate with a linear decay schedule
    double weight_decay = 0.01;
    int epochs = 1;
    std::size_t batch_size = 8;
};

struct TrainConfig {
    std::string mode = "xla-maml";  // "xla-maml" | "x-maml" | "baseline"
    double alpha = 1e-5;            // inner SGD learning rate
    int inner_steps = 1;
    double beta = 1e-5;  // meta AdamW base learning rate (linear decay)
    double weight_decay = 0.01;
    int iters_per_language = 500;  // total budget = this x |query-language pool|
    int episode_batch = 1;         // episodes summed per meta update
    bool first_order = false;      // ablation: detach inner gradients
    episodes::SamplerConfig sampler;
    std::uint64_t seed = 0;
    FinetuneConfig few_shot;  // used by few_shot_eval

    void validate() const;  // throws std::invalid_argument on bad fields
};

// ---- records -------------------------------------------------------------

struct MetricsRecord {
    std::size_t iteration = 0;
    double inner_loss = 0.0;  // support loss before adaptation
    double meta_loss = 0.0;   // query loss of the adapted model (sum over batch)
    double lr_t = 0.0;
    std::size_t support_pass = 0;  // covering pass indices (0 otherwise)
    std::size_t query_pass = 0;
    std::vector<std::string> support_languages;
    std::vector<std::string> query_languages;
};

struct EvalResult {
    std::string metric;  // "accuracy" | "em_f1"
    double accuracy = 0.0;
    double em = 0.0;
    double f1 = 0.0;
    std::size_t count = 0;

    // The headline number: accuracy for classification, F1 for spans.
    double primary() const { return metric == "em_f1" ? f1 : accuracy; }
};

// ---- losses ----------------------------------------------------------------

// Mean task loss of a mixed-language batch under the given parameters
// (classification NLL or span NLL depending on the examples).
ad::NodePtr batch_loss(const model::EncoderConfig& cfg, const ad::ParamSet& params,
                       const std::vector<data::Example>& batch);

// A differentiable loss as a function of named parameters; lets the meta
// machinery run on analytic toy objectives as well as encoder batches.
using LossFn = std::function<ad::NodePtr(const ad::ParamSet&)>;

struct EpisodeLoss {
    LossFn support;
    LossFn query;
};

// ---- inner loop ------------------------------------------------------------

struct AdaptResult {
    ad::ParamSet params;      // adapted parameters (graph nodes)
    double initial_loss = 0;  // support loss at the starting point
};

// `steps` functional SGD steps on the support loss. With track_meta_graph the
// result stays differentiable w.r.t. the originals (exact second order);
// without it the inner gradients are detached (first-order approximation).
AdaptResult inner_adapt(const ad::ParamSet& theta, const LossFn& support_loss, double alpha,
                        int steps, bool track_meta_graph);
AdaptResult inner_adapt(const model::EncoderConfig& cfg, const ad::ParamSet& theta,
                        const std::vector<data::Example>& support, double alpha, int steps,
                        bool track_meta_graph);

// ---- meta step ----------------------------------------------------------

struct MetaGradResult {
    ad::TensorMap grads;     // d(sum of query losses)/d(theta), through the inner steps
    double inner_loss = 0;   // mean initial support loss across episodes
    double meta_loss = 0;    // sum of adapted query losses
};

// Gradient of the summed post-adaptation query losses w.r.t. theta.
MetaGradResult meta_gradient(const ad::TensorMap& theta, const std::vector<EpisodeLoss>& episodes,
                             double alpha, int inner_steps, bool first_order);

struct MetaStepStats {
    double inner_loss = 0;
    double meta_loss = 0;
};

// One meta update: meta_gradient over the episodes, then an AdamW step on
// theta (in place) at rate lr_t.
MetaStepStats meta_step(const model::EncoderConfig& cfg, ad::TensorMap& theta,
                        const std::vector<episodes::Episode>& batch, double alpha, int inner_steps,
                        bool first_order, optim::AdamWState& opt, double lr_t);

// ---- supervised finetuning ---------------------------------------------

// Minibatch AdamW with a linear schedule over the whole run; returns new
// parameters, leaves theta untouched. Throws on non-finite loss.
ad::TensorMap finetune(const model::EncoderConfig& cfg, const ad::TensorMap& theta,
                       const data::LanguageBag& bag, const FinetuneConfig& ft, std::uint64_t seed);

// ---- the full loop --------------------------------------------------------

using IterationHook =
    std::function<void(const MetricsRecord& record, const ad::TensorMap& theta)>;

struct MetaTrainResult {
    ad::TensorMap theta;
    std::vector<MetricsRecord> log;
};

// Runs the episode loop for iters_per_language x |query pool| iterations with
// a fresh AdamW state. Mode "baseline" returns theta0 with an empty log;
// "x-maml" forces one shared language subset per episode. The hook (optional)
// fires after every iteration.
MetaTrainResult run_meta_training(const model::EncoderConfig& cfg, const TrainConfig& train,
                                  const episodes::RolePools& pools, const ad::TensorMap& theta0,
                                  const IterationHook& hook = {});

// ---- evaluation -------------------------------------------------------

// Exact-match / token-overlap F1 between two inclusive spans.
std::pair<double, double> compute_em_f1(const data::SpanLabel& pred, const data::SpanLabel& gold);

// Forward-only metrics on one bag: accuracy, or mean EM/F1 via decode_span.
EvalResult evaluate_bag(const model::EncoderConfig& cfg, const ad::TensorMap& theta,
                        const data::LanguageBag& bag);

std::map<std::string, EvalResult> zero_shot_eval(
    const model::EncoderConfig& cfg, const ad::TensorMap& theta,
    const std::map<std::string, data::LanguageBag>& test_bags);

// Clones theta, finetunes on the target dev bag, evaluates on the target
// test bag; theta itself is untouched.
EvalResult few_shot_eval(const model::EncoderConfig& cfg, const ad::TensorMap& theta,
                         const data::LanguageBag& dev_bag, const data::LanguageBag& test_bag,
                         const FinetuneConfig& ft, std::uint64_t seed);

}  // namespace xlmeta::metatrain
