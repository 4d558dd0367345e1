// SPDX-License-Identifier: Apache-2.0
#include "xlmeta/episodes.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>
#include <unordered_map>

namespace xlmeta::episodes {

namespace {

std::vector<std::string> codes_of(const BagMap& bags) {
    std::vector<std::string> out;
    out.reserve(bags.size());
    for (const auto& [code, bag] : bags) out.push_back(code);
    return out;
}

const data::LanguageBag& bag_for(const BagMap& bags, const std::string& code,
                                 const char* role) {
    auto it = bags.find(code);
    if (it == bags.end()) {
        throw std::invalid_argument(std::string("episodes: ") + role + " pool has no bag for '" +
                                    code + "'");
    }
    return it->second;
}

// language -> latent id -> example index, for the chosen subset of bags.
std::map<std::string, std::unordered_map<std::int64_t, std::size_t>> latent_index(
    const BagMap& bags, const std::vector<std::string>& subset, const char* role) {
    std::map<std::string, std::unordered_map<std::int64_t, std::size_t>> out;
    for (const auto& code : subset) {
        const auto& bag = bag_for(bags, code, role);
        if (!bag.parallel_ready()) {
            throw std::invalid_argument("episodes: parallel sampling needs latent ids, but bag '" +
                                        code + "' lacks them");
        }
        auto& index = out[code];
        for (std::size_t i = 0; i < bag.examples.size(); ++i) {
            index.emplace(bag.examples[i].latent_id, i);
        }
    }
    return out;
}

}  // namespace

void SamplerConfig::validate(const RolePools& pools) const {
    if (strategy != "random" && strategy != "covering") {
        throw std::invalid_argument("sampler: strategy must be 'random' or 'covering', got '" +
                                    strategy + "'");
    }
    if (k < 1 || n < 1) throw std::invalid_argument("sampler: k and n must be >= 1");
    if (parallel && k != n) {
        throw std::invalid_argument("sampler: parallel sampling requires k == n, got k=" +
                                    std::to_string(k) + " n=" + std::to_string(n));
    }
    if (pools.support.empty() || pools.query.empty()) {
        throw std::invalid_argument("sampler: both role pools must be nonempty");
    }
    if (support_subset_size < 1 || support_subset_size > pools.support.size()) {
        throw std::invalid_argument("sampler: support subset size " +
                                    std::to_string(support_subset_size) + " not in [1, " +
                                    std::to_string(pools.support.size()) + "]");
    }
    if (query_subset_size < 1 || query_subset_size > pools.query.size()) {
        throw std::invalid_argument("sampler: query subset size " +
                                    std::to_string(query_subset_size) + " not in [1, " +
                                    std::to_string(pools.query.size()) + "]");
    }
    if (same_subset) {
        if (codes_of(pools.support) != codes_of(pools.query)) {
            throw std::invalid_argument(
                "sampler: same_subset requires identical support and query pools");
        }
        if (support_subset_size != query_subset_size) {
            throw std::invalid_argument(
                "sampler: same_subset requires equal subset sizes for both roles");
        }
    }
}

Subsets sample_language_subsets(const std::vector<std::string>& support_pool,
                                const std::vector<std::string>& query_pool,
                                std::size_t support_size, std::size_t query_size, Rng& rng) {
    auto pick = [&](const std::vector<std::string>& pool, std::size_t size, const char* role) {
        if (pool.empty()) {
            throw std::invalid_argument(std::string("episodes: ") + role + " pool is empty");
        }
        if (size < 1 || size > pool.size()) {
            throw std::invalid_argument(std::string("episodes: ") + role + " subset size " +
                                        std::to_string(size) + " not in [1, " +
                                        std::to_string(pool.size()) + "]");
        }
        std::vector<std::string> subset;
        subset.reserve(size);
        for (std::size_t idx : rng.sample_without_replacement(pool.size(), size)) {
            subset.push_back(pool[idx]);
        }
        return subset;
    };
    auto support = pick(support_pool, support_size, "support");
    auto query = pick(query_pool, query_size, "query");
    return {std::move(support), std::move(query)};
}

Episode sample_episode_random(const RolePools& pools, const Subsets& subsets, std::size_t k,
                              std::size_t n, Rng& rng) {
    auto draw = [&](const BagMap& bags, const std::vector<std::string>& subset, std::size_t want,
                    const char* role) {
        std::vector<const data::Example*> pool;
        for (const auto& code : subset) {
            for (const auto& e : bag_for(bags, code, role).examples) pool.push_back(&e);
        }
        if (pool.size() < want) {
            throw std::invalid_argument(std::string("episodes: ") + role + " union has " +
                                        std::to_string(pool.size()) + " examples, need " +
                                        std::to_string(want));
        }
        std::vector<data::Example> out;
        out.reserve(want);
        for (std::size_t idx : rng.sample_without_replacement(pool.size(), want)) {
            out.push_back(*pool[idx]);
        }
        return out;
    };
    Episode ep;
    ep.support_languages = subsets.first;
    ep.query_languages = subsets.second;
    ep.support = draw(pools.support, subsets.first, k, "support");
    ep.query = draw(pools.query, subsets.second, n, "query");
    return ep;
}

Episode sample_episode_parallel(const RolePools& pools, const Subsets& subsets, std::size_t k,
                                Rng& rng) {
    const auto s_index = latent_index(pools.support, subsets.first, "support");
    const auto q_index = latent_index(pools.query, subsets.second, "query");

    // Latent ids available in every chosen bag, in first-bag order.
    const auto& first_bag = bag_for(pools.support, subsets.first.front(), "support");
    std::vector<std::int64_t> common;
    for (const auto& e : first_bag.examples) {
        bool everywhere = true;
        for (const auto& [code, index] : s_index) {
            if (!index.count(e.latent_id)) everywhere = false;
        }
        for (const auto& [code, index] : q_index) {
            if (!index.count(e.latent_id)) everywhere = false;
        }
        if (everywhere) common.push_back(e.latent_id);
    }
    if (common.size() < k) {
        throw std::invalid_argument("episodes: only " + std::to_string(common.size()) +
                                    " latent ids are aligned across the chosen languages, need " +
                                    std::to_string(k));
    }

    Episode ep;
    ep.support_languages = subsets.first;
    ep.query_languages = subsets.second;
    for (std::size_t idx : rng.sample_without_replacement(common.size(), k)) {
        const std::int64_t id = common[idx];
        const auto& s_lang = subsets.first[rng.uniform_index(subsets.first.size())];
        const auto& q_lang = subsets.second[rng.uniform_index(subsets.second.size())];
        ep.support.push_back(
            pools.support.at(s_lang).examples[s_index.at(s_lang).at(id)]);
        ep.query.push_back(pools.query.at(q_lang).examples[q_index.at(q_lang).at(id)]);
    }
    return ep;
}

EpisodeSampler::EpisodeSampler(RolePools pools, SamplerConfig cfg, std::uint64_t seed)
    : pools_(std::move(pools)), cfg_(std::move(cfg)), rng_(seed) {
    cfg_.validate(pools_);
    if (cfg_.strategy == "covering") {
        reshuffle(support_state_, pools_.support);
        reshuffle(query_state_, pools_.query);
    }
}

void EpisodeSampler::reshuffle(CoverState& state, const BagMap& bags) {
    state.order.clear();
    for (const auto& [code, bag] : bags) {
        for (std::size_t i = 0; i < bag.examples.size(); ++i) state.order.emplace_back(code, i);
    }
    if (state.order.empty()) {
        throw std::invalid_argument("episodes: covering over an empty pool");
    }
    rng_.shuffle(state.order);
    state.cursor = 0;
    state.pass += 1;
}

std::vector<data::Example> EpisodeSampler::deal(CoverState& state, const BagMap& bags,
                                                std::size_t want,
                                                std::vector<std::string>& languages_out) {
    if (state.cursor >= state.order.size()) reshuffle(state, bags);
    const std::size_t chunk = std::min(want, state.order.size() - state.cursor);
    std::vector<data::Example> out;
    out.reserve(chunk);
    languages_out.clear();
    for (std::size_t i = 0; i < chunk; ++i) {
        const auto& [code, idx] = state.order[state.cursor + i];
        out.push_back(bags.at(code).examples[idx]);
        if (std::find(languages_out.begin(), languages_out.end(), code) == languages_out.end()) {
            languages_out.push_back(code);
        }
    }
    state.cursor += chunk;
    return out;
}

Episode EpisodeSampler::next() {
    if (cfg_.strategy == "random") {
        Subsets subsets;
        if (cfg_.same_subset) {
            auto pool = codes_of(pools_.support);
            subsets.first = sample_language_subsets(pool, pool, cfg_.support_subset_size,
                                                    cfg_.support_subset_size, rng_)
                                .first;
            subsets.second = subsets.first;
        } else {
            subsets = sample_language_subsets(codes_of(pools_.support), codes_of(pools_.query),
                                              cfg_.support_subset_size, cfg_.query_subset_size,
                                              rng_);
        }
        return cfg_.parallel ? sample_episode_parallel(pools_, subsets, cfg_.k, rng_)
                             : sample_episode_random(pools_, subsets, cfg_.k, cfg_.n, rng_);
    }

    // covering
    Episode ep;
    if (!cfg_.parallel) {
        ep.support = deal(support_state_, pools_.support, cfg_.k, ep.support_languages);
        ep.support_pass = support_state_.pass;
        ep.query = deal(query_state_, pools_.query, cfg_.n, ep.query_languages);
        ep.query_pass = query_state_.pass;
        return ep;
    }

    // Parallel covering: chunks cover the query pool; the support side mirrors
    // each chunk's latent ids in support languages.
    ep.query = deal(query_state_, pools_.query, cfg_.n, ep.query_languages);
    ep.query_pass = query_state_.pass;
    ep.support_pass = query_state_.pass;
    std::vector<std::string> s_subset;
    if (cfg_.same_subset) {
        s_subset = ep.query_languages;
    } else {
        auto pool = codes_of(pools_.support);
        for (std::size_t idx :
             rng_.sample_without_replacement(pool.size(), cfg_.support_subset_size)) {
            s_subset.push_back(pool[idx]);
        }
    }
    const auto s_index = latent_index(pools_.support, s_subset, "support");
    ep.support_languages = s_subset;
    for (const auto& q : ep.query) {
        if (q.latent_id < 0) {
            throw std::invalid_argument(
                "episodes: parallel covering needs latent ids on every query example");
        }
        const std::string& code = cfg_.same_subset
                                      ? q.language
                                      : s_subset[rng_.uniform_index(s_subset.size())];
        const auto& index = s_index.at(code);
        auto it = index.find(q.latent_id);
        if (it == index.end()) {
            throw std::invalid_argument("episodes: latent id " + std::to_string(q.latent_id) +
                                        " has no rendering in support language '" + code + "'");
        }
        ep.support.push_back(pools_.support.at(code).examples[it->second]);
    }
    return ep;
}

}  // namespace xlmeta::episodes
