// SPDX-License-Identifier: Apache-2.0
#include "xlmeta/metatrain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "xlmeta/rng.hpp"

namespace xlmeta::metatrain {

namespace ad = xlmeta::ad;

void TrainConfig::validate() const {
    if (mode != "xla-maml" && mode != "x-maml" && mode != "baseline") {
        throw std::invalid_argument("TrainConfig: mode must be xla-maml, x-maml, or baseline, got '" +
                                    mode + "'");
    }
    if (!(alpha > 0.0)) {
        throw std::invalid_argument("TrainConfig: alpha must be > 0, got " + std::to_string(alpha));
    }
    if (!(beta > 0.0)) {
        throw std::invalid_argument("TrainConfig: beta must be > 0, got " + std::to_string(beta));
    }
    if (inner_steps < 1) {
        throw std::invalid_argument("TrainConfig: inner_steps must be >= 1, got " +
                                    std::to_string(inner_steps));
    }
    if (iters_per_language < 0) {
        throw std::invalid_argument("TrainConfig: iters_per_language must be >= 0, got " +
                                    std::to_string(iters_per_language));
    }
    if (episode_batch < 1) {
        throw std::invalid_argument("TrainConfig: episode_batch must be >= 1, got " +
                                    std::to_string(episode_batch));
    }
    if (weight_decay < 0.0) {
        throw std::invalid_argument("TrainConfig: weight_decay must be >= 0, got " +
                                    std::to_string(weight_decay));
    }
}

// ---- losses ----------------------------------------------------------------

namespace {

double finite_scalar(const ad::NodePtr& loss, const char* where) {
    const double v = loss->value.scalar_value();
    if (!std::isfinite(v)) {
        throw std::runtime_error(std::string(where) + ": non-finite loss (" + std::to_string(v) +
                                 ")");
    }
    return v;
}

ad::ParamSet as_leaves(const ad::TensorMap& theta) {
    ad::ParamSet leaves;
    for (const auto& [name, value] : theta) leaves.emplace(name, ad::leaf(value));
    return leaves;
}

ad::NodePtr classification_loss(const model::EncoderConfig& cfg, const ad::ParamSet& params,
                                const std::vector<data::Example>& batch) {
    const std::size_t m = batch.size();
    const std::size_t d = cfg.input_dim;
    std::vector<double> flat;
    flat.reserve(m * d);
    std::vector<std::int64_t> labels;
    labels.reserve(m);
    for (const auto& e : batch) {
        if (e.features.size() != d) {
            throw std::invalid_argument("batch_loss: example has " +
                                        std::to_string(e.features.size()) + " features, expected " +
                                        std::to_string(d));
        }
        flat.insert(flat.end(), e.features.begin(), e.features.end());
        labels.push_back(e.label);
    }
    const auto x = Tensor::from_vector({m, d}, flat);
    const auto encoded = model::encode_features(x, params, cfg);
    return model::nll_loss(model::classify(encoded.pooled, params), labels);
}

ad::NodePtr span_batch_loss(const model::EncoderConfig& cfg, const ad::ParamSet& params,
                            const std::vector<data::Example>& batch) {
    ad::NodePtr total;
    for (const auto& e : batch) {
        const auto encoded = model::encode_tokens(e.tokens, params, cfg);
        const auto scores = model::span_scores(encoded.states, params);
        auto loss = model::span_loss(scores.start_logits, scores.end_logits, e.span.start,
                                     e.span.end);
        total = total ? ad::add(total, loss) : loss;
    }
    return ad::scale(total, 1.0 / static_cast<double>(batch.size()));
}

}  // namespace

ad::NodePtr batch_loss(const model::EncoderConfig& cfg, const ad::ParamSet& params,
                       const std::vector<data::Example>& batch) {
    if (batch.empty()) {
        throw std::invalid_argument("batch_loss: empty batch");
    }
    const bool span = batch.front().is_span;
    for (const auto& e : batch) {
        if (e.is_span != span) {
            throw std::invalid_argument("batch_loss: mixed classification and span examples");
        }
    }
    return span ? span_batch_loss(cfg, params, batch) : classification_loss(cfg, params, batch);
}

// ---- inner loop ------------------------------------------------------------

AdaptResult inner_adapt(const ad::ParamSet& theta, const LossFn& support_loss, double alpha,
                        int steps, bool track_meta_graph) {
    if (steps < 1) {
        throw std::invalid_argument("inner_adapt: steps must be >= 1, got " +
                                    std::to_string(steps));
    }
    if (alpha < 0.0) {
        throw std::invalid_argument("inner_adapt: alpha must be >= 0, got " +
                                    std::to_string(alpha));
    }
    AdaptResult out;
    out.params = theta;
    for (int s = 0; s < steps; ++s) {
        auto loss = support_loss(out.params);
        const double v = finite_scalar(loss, "inner_adapt");
        if (s == 0) out.initial_loss = v;
        auto grads = ad::grad(loss, out.params, /*create_graph=*/track_meta_graph);
        out.params = optim::sgd_functional_step(out.params, grads, alpha);
    }
    return out;
}

AdaptResult inner_adapt(const model::EncoderConfig& cfg, const ad::ParamSet& theta,
                        const std::vector<data::Example>& support, double alpha, int steps,
                        bool track_meta_graph) {
    if (support.empty()) {
        throw std::invalid_argument("inner_adapt: empty support set");
    }
    return inner_adapt(
        theta, [&](const ad::ParamSet& p) { return batch_loss(cfg, p, support); }, alpha, steps,
        track_meta_graph);
}

// ---- meta step ----------------------------------------------------------

MetaGradResult meta_gradient(const ad::TensorMap& theta, const std::vector<EpisodeLoss>& episodes,
                             double alpha, int inner_steps, bool first_order) {
    if (episodes.empty()) {
        throw std::invalid_argument("meta_gradient: need at least one episode");
    }
    const auto leaves = as_leaves(theta);
    ad::NodePtr total;
    double inner_sum = 0.0;
    for (const auto& episode : episodes) {
        auto adapted =
            inner_adapt(leaves, episode.support, alpha, inner_steps, /*track=*/!first_order);
        inner_sum += adapted.initial_loss;
        auto query = episode.query(adapted.params);
        total = total ? ad::add(total, query) : query;
    }
    MetaGradResult out;
    out.meta_loss = finite_scalar(total, "meta_gradient");
    out.inner_loss = inner_sum / static_cast<double>(episodes.size());
    for (auto& [name, node] : ad::grad(total, leaves)) {
        out.grads.emplace(name, node->value);
    }
    return out;
}

MetaStepStats meta_step(const model::EncoderConfig& cfg, ad::TensorMap& theta,
                        const std::vector<episodes::Episode>& batch, double alpha, int inner_steps,
                        bool first_order, optim::AdamWState& opt, double lr_t) {
    std::vector<EpisodeLoss> losses;
    losses.reserve(batch.size());
    for (const auto& episode : batch) {
        losses.push_back(EpisodeLoss{
            [&cfg, &episode](const ad::ParamSet& p) { return batch_loss(cfg, p, episode.support); },
            [&cfg, &episode](const ad::ParamSet& p) { return batch_loss(cfg, p, episode.query); }});
    }
    auto result = meta_gradient(theta, losses, alpha, inner_steps, first_order);
    optim::adamw_step(opt, theta, result.grads, lr_t);
    return MetaStepStats{result.inner_loss, result.meta_loss};
}

// ---- supervised finetuning ---------------------------------------------

ad::TensorMap finetune(const model::EncoderConfig& cfg, const ad::TensorMap& theta,
                       const data::LanguageBag& bag, const FinetuneConfig& ft, std::uint64_t seed) {
    if (bag.examples.empty()) {
        throw std::invalid_argument("finetune: empty bag");
    }
    if (ft.epochs < 0) {
        throw std::invalid_argument("finetune: epochs must be >= 0, got " +
                                    std::to_string(ft.epochs));
    }
    if (ft.batch_size < 1) {
        throw std::invalid_argument("finetune: batch_size must be >= 1");
    }
    ad::TensorMap params = theta;
    const std::size_t n = bag.examples.size();
    const std::size_t batches_per_epoch = (n + ft.batch_size - 1) / ft.batch_size;
    const std::int64_t total_steps =
        static_cast<std::int64_t>(batches_per_epoch) * static_cast<std::int64_t>(ft.epochs);
    if (total_steps == 0) return params;
    if (ft.lr == 0.0) return params;  // every step would be the identity

    Rng rng(derive_seed(seed, "finetune.order"));
    auto opt = optim::make_adamw(ft.lr, ft.weight_decay);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::int64_t step = 0;
    for (int epoch = 0; epoch < ft.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t at = 0; at < n; at += ft.batch_size) {
            const std::size_t stop = std::min(n, at + ft.batch_size);
            std::vector<data::Example> batch;
            batch.reserve(stop - at);
            for (std::size_t i = at; i < stop; ++i) batch.push_back(bag.examples[order[i]]);
            auto leaves = as_leaves(params);
            auto loss = batch_loss(cfg, leaves, batch);
            const double v = loss->value.scalar_value();
            if (!std::isfinite(v)) {
                throw std::runtime_error("finetune: diverged at epoch " + std::to_string(epoch) +
                                         " step " + std::to_string(step) + " (loss " +
                                         std::to_string(v) + ")");
            }
            ad::TensorMap grads;
            for (auto& [name, node] : ad::grad(loss, leaves)) grads.emplace(name, node->value);
            optim::adamw_step(opt, params, grads, optim::linear_lr(step, total_steps, ft.lr));
            ++step;
        }
    }
    return params;
}

// ---- the full loop --------------------------------------------------------

MetaTrainResult run_meta_training(const model::EncoderConfig& cfg, const TrainConfig& train,
                                  const episodes::RolePools& pools, const ad::TensorMap& theta0,
                                  const IterationHook& hook) {
    train.validate();
    MetaTrainResult out;
    out.theta = theta0;
    if (train.mode == "baseline") return out;

    auto sampler_cfg = train.sampler;
    if (train.mode == "x-maml") sampler_cfg.same_subset = true;
    episodes::EpisodeSampler sampler(pools, sampler_cfg, derive_seed(train.seed, "sampler"));

    const std::int64_t total = static_cast<std::int64_t>(train.iters_per_language) *
                               static_cast<std::int64_t>(pools.query.size());
    auto opt = optim::make_adamw(train.beta, train.weight_decay);
    out.log.reserve(static_cast<std::size_t>(total));
    for (std::int64_t it = 0; it < total; ++it) {
        std::vector<episodes::Episode> batch;
        batch.reserve(static_cast<std::size_t>(train.episode_batch));
        for (int b = 0; b < train.episode_batch; ++b) batch.push_back(sampler.next());
        const double lr_t = optim::linear_lr(it, total, train.beta);
        MetaStepStats stats;
        try {
            stats = meta_step(cfg, out.theta, batch, train.alpha, train.inner_steps,
                              train.first_order, opt, lr_t);
        } catch (const std::runtime_error& err) {
            throw std::runtime_error("run_meta_training: iteration " + std::to_string(it) + ": " +
                                     err.what());
        }
        MetricsRecord record;
        record.iteration = static_cast<std::size_t>(it);
        record.inner_loss = stats.inner_loss;
        record.meta_loss = stats.meta_loss;
        record.lr_t = lr_t;
        record.support_pass = batch.front().support_pass;
        record.query_pass = batch.front().query_pass;
        record.support_languages = batch.front().support_languages;
        record.query_languages = batch.front().query_languages;
        out.log.push_back(record);
        if (hook) hook(out.log.back(), out.theta);
    }
    return out;
}

// ---- evaluation -------------------------------------------------------

std::pair<double, double> compute_em_f1(const data::SpanLabel& pred, const data::SpanLabel& gold) {
    const double em = (pred.start == gold.start && pred.end == gold.end) ? 1.0 : 0.0;
    const std::size_t lo = std::max(pred.start, gold.start);
    const std::size_t hi = std::min(pred.end, gold.end);
    if (hi < lo) return {em, 0.0};
    const double overlap = static_cast<double>(hi - lo + 1);
    const double precision = overlap / static_cast<double>(pred.end - pred.start + 1);
    const double recall = overlap / static_cast<double>(gold.end - gold.start + 1);
    return {em, 2.0 * precision * recall / (precision + recall)};
}

namespace {

EvalResult eval_classification(const model::EncoderConfig& cfg, const ad::ParamSet& params,
                               const std::vector<data::Example>& examples) {
    const std::size_t m = examples.size();
    std::vector<double> flat;
    flat.reserve(m * cfg.input_dim);
    for (const auto& e : examples) flat.insert(flat.end(), e.features.begin(), e.features.end());
    const auto x = Tensor::from_vector({m, cfg.input_dim}, flat);
    const auto log_probs =
        model::classify(model::encode_features(x, params, cfg).pooled, params)->value;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < m; ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < cfg.num_classes; ++c) {
            if (log_probs.at(i, c) > log_probs.at(i, best)) best = c;
        }
        if (static_cast<std::int64_t>(best) == examples[i].label) ++correct;
    }
    EvalResult out;
    out.metric = "accuracy";
    out.count = m;
    out.accuracy = static_cast<double>(correct) / static_cast<double>(m);
    return out;
}

EvalResult eval_span(const model::EncoderConfig& cfg, const ad::ParamSet& params,
                     const std::vector<data::Example>& examples) {
    EvalResult out;
    out.metric = "em_f1";
    out.count = examples.size();
    for (const auto& e : examples) {
        const auto scores = model::span_scores(model::encode_tokens(e.tokens, params, cfg).states,
                                               params);
        const auto [i, j] = model::decode_span(scores.start_logits->value,
                                               scores.end_logits->value);
        const auto [em, f1] = compute_em_f1(data::SpanLabel{i, j}, e.span);
        out.em += em;
        out.f1 += f1;
    }
    out.em /= static_cast<double>(out.count);
    out.f1 /= static_cast<double>(out.count);
    return out;
}

}  // namespace

EvalResult evaluate_bag(const model::EncoderConfig& cfg, const ad::TensorMap& theta,
                        const data::LanguageBag& bag) {
    if (bag.examples.empty()) {
        throw std::invalid_argument("evaluate_bag: empty bag");
    }
    const auto params = as_leaves(theta);
    return bag.examples.front().is_span ? eval_span(cfg, params, bag.examples)
                                        : eval_classification(cfg, params, bag.examples);
}

std::map<std::string, EvalResult> zero_shot_eval(
    const model::EncoderConfig& cfg, const ad::TensorMap& theta,
    const std::map<std::string, data::LanguageBag>& test_bags) {
    if (test_bags.empty()) {
        throw std::invalid_argument("zero_shot_eval: no test bags");
    }
    std::map<std::string, EvalResult> out;
    for (const auto& [code, bag] : test_bags) out.emplace(code, evaluate_bag(cfg, theta, bag));
    return out;
}

EvalResult few_shot_eval(const model::EncoderConfig& cfg, const ad::TensorMap& theta,
                         const data::LanguageBag& dev_bag, const data::LanguageBag& test_bag,
                         const FinetuneConfig& ft, std::uint64_t seed) {
    const auto adapted = finetune(cfg, theta, dev_bag, ft, seed);
    return evaluate_bag(cfg, adapted, test_bag);
}

}  // namespace xlmeta::metatrain
