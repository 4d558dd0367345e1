// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "xlmeta/model.hpp"
#include "xlmeta/rng.hpp"

using namespace xlmeta;
namespace ad = xlmeta::ad;
namespace md = xlmeta::model;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform_real(lo, hi);
    return Tensor::from_vector(std::move(shape), std::move(v));
}

double fd_relative_error(const std::function<ad::NodePtr(const ad::ParamSet&)>& build,
                         const ad::TensorMap& tensors) {
    ad::ParamSet leaves = ad::leaves_from(tensors);
    ad::TensorMap analytic = ad::values(ad::grad(build(leaves), leaves));
    ad::TensorMap fd = ad::finite_difference_gradient(
        [&](const ad::TensorMap& ts) {
            return build(ad::leaves_from(ts, false))->value.scalar_value();
        },
        tensors, 1e-5);
    double worst = 0.0, denom = 1e-8;
    for (const auto& [name, w] : fd) {
        const Tensor& g = analytic.at(name);
        REQUIRE(g.same_shape(w));
        for (std::size_t i = 0; i < w.numel(); ++i) {
            worst = std::max(worst, std::fabs(g.at(i) - w.at(i)));
            denom = std::max(denom, std::fabs(w.at(i)));
        }
    }
    return worst / denom;
}

md::EncoderConfig classifier_config() {
    md::EncoderConfig cfg;
    cfg.input_kind = md::InputKind::continuous;
    cfg.input_dim = 3;
    cfg.hidden_dim = 4;
    cfg.num_hidden_layers = 2;
    cfg.num_classes = 3;
    return cfg;
}

md::EncoderConfig span_config() {
    md::EncoderConfig cfg;
    cfg.input_kind = md::InputKind::tokens;
    cfg.vocab_size = 6;
    cfg.hidden_dim = 3;
    cfg.num_hidden_layers = 2;
    cfg.span_head = true;
    return cfg;
}

}  // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("expected shapes and init agree") {
    Rng rng(derive_seed(41, "model-init"));
    for (const auto& cfg : {classifier_config(), span_config()}) {
        const auto shapes = md::expected_shapes(cfg);
        const auto params = md::init_params(cfg, rng);
        CHECK(params.size() == shapes.size());
        for (const auto& [name, shape] : shapes) {
            REQUIRE(params.count(name) == 1);
            CHECK(params.at(name).shape() == shape);
        }
        md::validate_params(params, cfg);  // must not throw
    }
}

TEST_CASE("config validation") {
    md::EncoderConfig cfg;
    cfg.input_kind = md::InputKind::continuous;
    cfg.input_dim = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.input_dim = 2;
    cfg.hidden_dim = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    md::EncoderConfig tok;
    tok.input_kind = md::InputKind::tokens;
    tok.vocab_size = 0;
    CHECK_THROWS_AS(tok.validate(), std::invalid_argument);
}

TEST_CASE("validate_params catches missing, extra, and misshapen entries") {
    Rng rng(derive_seed(41, "model-validate"));
    const auto cfg = classifier_config();
    auto params = md::init_params(cfg, rng);

    auto missing = params;
    missing.erase("cls.b");
    CHECK_THROWS_AS(md::validate_params(missing, cfg), std::invalid_argument);

    auto extra = params;
    extra.emplace("stray", Tensor::scalar(1.0));
    CHECK_THROWS_AS(md::validate_params(extra, cfg), std::invalid_argument);

    auto wrong = params;
    wrong["cls.b"] = Tensor::zeros({5});
    CHECK_THROWS_AS(md::validate_params(wrong, cfg), std::invalid_argument);
}

TEST_CASE("zero-weight encoder with no hidden layers pools to the bias") {
    md::EncoderConfig cfg;
    cfg.input_kind = md::InputKind::continuous;
    cfg.input_dim = 3;
    cfg.hidden_dim = 4;
    cfg.num_hidden_layers = 0;
    ad::TensorMap tensors{
        {"in.W", Tensor::zeros({3, 4})},
        {"in.b", Tensor::from_vector({4}, {0.1, -0.2, 0.3, -0.4})},
    };
    auto params = ad::leaves_from(tensors);
    auto out = md::encode_features(Tensor::from_vector({2, 3}, {5, 6, 7, -1, -2, -3}), params, cfg);
    for (std::size_t r = 0; r < 2; ++r) {
        CHECK(out.pooled->value.at(r, 0) == doctest::Approx(0.1));
        CHECK(out.pooled->value.at(r, 1) == doctest::Approx(-0.2));
        CHECK(out.pooled->value.at(r, 2) == doctest::Approx(0.3));
        CHECK(out.pooled->value.at(r, 3) == doctest::Approx(-0.4));
    }
}

TEST_CASE("encoding is deterministic") {
    Rng rng(derive_seed(41, "model-det"));
    const auto cfg = classifier_config();
    auto params = ad::leaves_from(md::init_params(cfg, rng));
    const Tensor x = random_tensor(rng, {4, 3});
    auto a = md::encode_features(x, params, cfg);
    auto b = md::encode_features(x, params, cfg);
    CHECK(tensor_fingerprint(a.pooled->value) == tensor_fingerprint(b.pooled->value));
}

TEST_CASE("encoder gradient matches finite differences") {
    Rng rng(derive_seed(41, "model-fd"));
    const auto cfg = classifier_config();
    const auto tensors = md::init_params(cfg, rng);
    const Tensor x = random_tensor(rng, {4, 3});
    auto build = [&](const ad::ParamSet& p) {
        return ad::mean(md::encode_features(x, p, cfg).pooled);
    };
    CHECK(fd_relative_error(build, tensors) <= 1e-4);
}

TEST_CASE("classifier head computes proper log-distributions") {
    // Zero head: C equal classes.
    ad::ParamSet zero = ad::leaves_from({{"cls.W", Tensor::zeros({2, 3})},
                                         {"cls.b", Tensor::zeros({3})}});
    auto pooled = ad::constant(Tensor::from_vector({1, 2}, {0.7, -1.1}));
    auto lp = md::classify(pooled, zero);
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK(std::exp(lp->value.at(0, c)) == doctest::Approx(1.0 / 3).epsilon(1e-9));
    }

    // Logits [0, ln 3] -> probs [0.25, 0.75].
    ad::ParamSet head = ad::leaves_from(
        {{"cls.W", Tensor::from_vector({1, 2}, {0.0, std::log(3.0)})},
         {"cls.b", Tensor::zeros({2})}});
    auto one = ad::constant(Tensor::from_vector({1, 1}, {1.0}));
    auto lp2 = md::classify(one, head);
    CHECK(std::exp(lp2->value.at(0, 0)) == doctest::Approx(0.25).epsilon(1e-9));
    CHECK(std::exp(lp2->value.at(0, 1)) == doctest::Approx(0.75).epsilon(1e-9));

    // Rows always sum to one.
    Rng rng(derive_seed(41, "model-cls"));
    ad::ParamSet rnd = ad::leaves_from({{"cls.W", random_tensor(rng, {2, 4})},
                                        {"cls.b", random_tensor(rng, {4})}});
    auto lp3 = md::classify(ad::constant(random_tensor(rng, {5, 2})), rnd);
    for (std::size_t r = 0; r < 5; ++r) {
        double total = 0.0;
        for (std::size_t c = 0; c < 4; ++c) {
            const double prob = std::exp(lp3->value.at(r, c));
            CHECK(prob >= 0.0);
            total += prob;
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("nll_loss equals hand-computed cross-entropy") {
    // Two rows with known log-probs; labels pick entries whose -log matches.
    const double l00 = std::log(0.2), l01 = std::log(0.8);
    const double l10 = std::log(0.6), l11 = std::log(0.4);
    auto lp = ad::constant(Tensor::from_vector({2, 2}, {l00, l01, l10, l11}));
    auto loss = md::nll_loss(lp, {1, 0});
    CHECK(loss->value.scalar_value() ==
          doctest::Approx(-(std::log(0.8) + std::log(0.6)) / 2).epsilon(1e-12));
    CHECK_THROWS_AS(md::nll_loss(lp, {0}), std::invalid_argument);
}

TEST_CASE("classification pipeline end to end matches finite differences") {
    Rng rng(derive_seed(41, "model-pipe"));
    const auto cfg = classifier_config();
    const auto tensors = md::init_params(cfg, rng);
    const Tensor x = random_tensor(rng, {4, 3});
    const std::vector<std::int64_t> labels{0, 2, 1, 2};
    auto build = [&](const ad::ParamSet& p) {
        return md::nll_loss(md::classify(md::encode_features(x, p, cfg).pooled, p), labels);
    };
    CHECK(fd_relative_error(build, tensors) <= 1e-4);
}

TEST_CASE("span scores are softmaxed dot products") {
    // All positions equal -> uniform distributions.
    ad::ParamSet head = ad::leaves_from({{"span.S", Tensor::from_vector({2}, {1.0, -1.0})},
                                         {"span.E", Tensor::from_vector({2}, {0.5, 2.0})}});
    auto equal_states = ad::constant(Tensor::from_vector({3, 2}, {0.4, 0.7, 0.4, 0.7, 0.4, 0.7}));
    auto sc = md::span_scores(equal_states, head);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(sc.start_dist->value.at(i) == doctest::Approx(1.0 / 3).epsilon(1e-9));
        CHECK(sc.end_dist->value.at(i) == doctest::Approx(1.0 / 3).epsilon(1e-9));
    }

    // S.T = [0, ln 3] -> start dist [0.25, 0.75].
    ad::ParamSet unit = ad::leaves_from({{"span.S", Tensor::from_vector({1}, {1.0})},
                                         {"span.E", Tensor::from_vector({1}, {1.0})}});
    auto states = ad::constant(Tensor::from_vector({2, 1}, {0.0, std::log(3.0)}));
    auto sc2 = md::span_scores(states, unit);
    CHECK(sc2.start_dist->value.at(0) == doctest::Approx(0.25).epsilon(1e-9));
    CHECK(sc2.start_dist->value.at(1) == doctest::Approx(0.75).epsilon(1e-9));

    // Brute-force oracle on random inputs.
    Rng rng(derive_seed(41, "model-span"));
    const Tensor st = random_tensor(rng, {5, 3});
    const Tensor s = random_tensor(rng, {3});
    const Tensor e = random_tensor(rng, {3});
    ad::ParamSet rnd = ad::leaves_from({{"span.S", s}, {"span.E", e}});
    auto sc3 = md::span_scores(ad::constant(st), rnd);
    std::vector<double> dots_s(5), dots_e(5);
    for (std::size_t i = 0; i < 5; ++i) {
        double ds = 0, de = 0;
        for (std::size_t h = 0; h < 3; ++h) {
            ds += st.at(i, h) * s.at(h);
            de += st.at(i, h) * e.at(h);
        }
        dots_s[i] = ds;
        dots_e[i] = de;
    }
    auto softmax = [](std::vector<double> z) {
        const double mx = *std::max_element(z.begin(), z.end());
        double total = 0;
        for (auto& x : z) {
            x = std::exp(x - mx);
            total += x;
        }
        for (auto& x : z) x /= total;
        return z;
    };
    const auto ps = softmax(dots_s), pe = softmax(dots_e);
    double sum_s = 0, sum_e = 0;
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(sc3.start_dist->value.at(i) == doctest::Approx(ps[i]).epsilon(1e-9));
        CHECK(sc3.end_dist->value.at(i) == doctest::Approx(pe[i]).epsilon(1e-9));
        CHECK(sc3.start_logits->value.at(i) == doctest::Approx(dots_s[i]).epsilon(1e-12));
        sum_s += sc3.start_dist->value.at(i);
        sum_e += sc3.end_dist->value.at(i);
    }
    CHECK(sum_s == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(sum_e == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("decode_span fixed examples") {
    auto t3 = [](std::vector<double> v) { return Tensor::from_vector({3}, std::move(v)); };
    auto best = md::decode_span(t3({0.1, 2.0, 0.3}), t3({1.5, 0.2, 2.5}));
    CHECK(best.first == 1);
    CHECK(best.second == 2);

    // Top unconstrained pair (2,0) is invalid; ties at 5.0 go to smaller i, j.
    auto tied = md::decode_span(t3({0, 0, 5}), t3({5, 0, 0}));
    CHECK(tied.first == 0);
    CHECK(tied.second == 0);

    // k=1 forces the exhaustive fallback on the same instance.
    auto fallback = md::decode_span(t3({0, 0, 5}), t3({5, 0, 0}), 1);
    CHECK(fallback.first == 0);
    CHECK(fallback.second == 0);

    auto single = md::decode_span(Tensor::from_vector({1}, {0.3}), Tensor::from_vector({1}, {0.9}));
    CHECK(single.first == 0);
    CHECK(single.second == 0);

    CHECK_THROWS_AS(md::decode_span(Tensor::zeros({0}), Tensor::zeros({0})),
                    std::invalid_argument);
    CHECK_THROWS_AS(md::decode_span(t3({1, 2, 3}), Tensor::zeros({2})), std::invalid_argument);
    CHECK_THROWS_AS(md::decode_span(t3({1, 2, 3}), t3({1, 2, 3}), 0), std::invalid_argument);
}

TEST_CASE("decode_span equals brute force over valid pairs") {
    Rng rng(derive_seed(41, "model-decode"));
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t t = 1 + rng.uniform_index(20);
        std::vector<double> s(t), e(t);
        for (auto& x : s) x = rng.uniform_real(-2.0, 2.0);
        for (auto& x : e) x = rng.uniform_real(-2.0, 2.0);
        // Quantize so score ties actually happen in some trials.
        for (auto& x : s) x = std::round(x * 2) / 2;
        for (auto& x : e) x = std::round(x * 2) / 2;
        const std::size_t k = std::vector<std::size_t>{1, 3, 20}[rng.uniform_index(3)];

        std::size_t bi = 0, bj = 0;
        double bscore = -1e300;
        for (std::size_t i = 0; i < t; ++i) {
            for (std::size_t j = i; j < t; ++j) {
                const double sc = s[i] + e[j];
                if (sc > bscore) {
                    bscore = sc;
                    bi = i;
                    bj = j;
                }
            }
        }
        // Strict improvement in (i asc, j asc) order makes (bi, bj) the
        // lexicographically first best pair — exactly the stated tie rule.
        auto got = md::decode_span(Tensor::from_vector({t}, s), Tensor::from_vector({t}, e), k);
        CHECK(got.second >= got.first);
        CHECK(got.first == bi);
        CHECK(got.second == bj);
    }
}

TEST_CASE("span_loss values and errors") {
    auto zero4 = ad::constant(Tensor::zeros({4}));
    auto loss = md::span_loss(zero4, zero4, 1, 2);
    CHECK(loss->value.scalar_value() == doctest::Approx(2 * std::log(4.0)).epsilon(1e-9));

    // Mass concentrated on the gold indices -> loss ~ 0.
    auto sharp_s = ad::constant(Tensor::from_vector({3}, {80.0, 0.0, 0.0}));
    auto sharp_e = ad::constant(Tensor::from_vector({3}, {0.0, 0.0, 80.0}));
    CHECK(md::span_loss(sharp_s, sharp_e, 0, 2)->value.scalar_value() ==
          doctest::Approx(0.0).epsilon(1e-9));

    // Hand-computed on uneven logits.
    const std::vector<double> s{0.3, -0.7, 1.1};
    const std::vector<double> e{-0.2, 0.9, 0.4};
    auto logp = [](const std::vector<double>& z, std::size_t idx) {
        double mx = *std::max_element(z.begin(), z.end());
        double total = 0;
        for (double x : z) total += std::exp(x - mx);
        return z[idx] - mx - std::log(total);
    };
    auto got = md::span_loss(ad::constant(Tensor::from_vector({3}, s)),
                             ad::constant(Tensor::from_vector({3}, e)), 0, 1);
    CHECK(got->value.scalar_value() == doctest::Approx(-(logp(s, 0) + logp(e, 1))).epsilon(1e-12));

    CHECK_THROWS_AS(md::span_loss(zero4, zero4, 4, 4), std::out_of_range);
    CHECK_THROWS_AS(md::span_loss(zero4, zero4, 2, 1), std::invalid_argument);
}

TEST_CASE("token pipeline end to end matches finite differences") {
    Rng rng(derive_seed(41, "model-tokens"));
    const auto cfg = span_config();
    const auto tensors = md::init_params(cfg, rng);
    const std::vector<std::int64_t> ids{3, 1, 5, 1};
    auto build = [&](const ad::ParamSet& p) {
        auto enc = md::encode_tokens(ids, p, cfg);
        auto sc = md::span_scores(enc.states, p);
        return md::span_loss(sc.start_logits, sc.end_logits, 1, 3);
    };
    CHECK(fd_relative_error(build, tensors) <= 1e-4);
}

TEST_CASE("token ids out of range are rejected") {
    Rng rng(derive_seed(41, "model-range"));
    const auto cfg = span_config();
    auto params = ad::leaves_from(md::init_params(cfg, rng));
    CHECK_THROWS_AS(md::encode_tokens({0, 6}, params, cfg), std::out_of_range);
    CHECK_THROWS_AS(md::encode_tokens({}, params, cfg), std::invalid_argument);
}

TEST_CASE("checkpoints roundtrip exactly") {
    Rng rng(derive_seed(41, "model-ckpt"));
    const auto cfg = classifier_config();
    const auto params = md::init_params(cfg, rng);
    const std::string text = md::tensors_to_json(params);
    const auto back = md::tensors_from_json(text);
    CHECK(back.size() == params.size());
    for (const auto& [name, t] : params) {
        REQUIRE(back.count(name) == 1);
        CHECK(back.at(name).shape() == t.shape());
        CHECK(tensor_fingerprint(back.at(name)) == tensor_fingerprint(t));
    }

    const auto path = std::filesystem::temp_directory_path() / "xlmeta_ckpt_test.json";
    md::save_tensors_json(path, params);
    const auto loaded = md::load_tensors_json(path);
    for (const auto& [name, t] : params) {
        CHECK(tensor_fingerprint(loaded.at(name)) == tensor_fingerprint(t));
    }
    std::filesystem::remove(path);

    CHECK_THROWS_AS(md::tensors_from_json("not json"), std::invalid_argument);
    CHECK_THROWS_AS(md::tensors_from_json("[1,2]"), std::invalid_argument);
    CHECK_THROWS_AS(md::tensors_from_json(R"({"w": {"shape": [3], "data": [1, 2]}})"),
                    std::invalid_argument);
}

TEST_SUITE_END();
