// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "xlmeta/data.hpp"
#include "xlmeta/rng.hpp"

namespace xlmeta::episodes {

// One meta-task: adapt on `support`, evaluate the adapted model on `query`.
struct Episode {
    std::vector<data::Example> support;
    std::vector<data::Example> query;
    std::vector<std::string> support_languages;
    std::vector<std::string> query_languages;
    // 1-based covering pass indices (0 when the strategy is not covering).
    std::size_t support_pass = 0;
    std::size_t query_pass = 0;
};

using BagMap = std::map<std::string, data::LanguageBag>;
using Subsets = std::pair<std::vector<std::string>, std::vector<std::string>>;

// Which bags feed the support role and which feed the query role.
struct RolePools {
    BagMap support;
    BagMap query;
};

struct SamplerConfig {
    std::string strategy = "random";  // "random" | "covering"
    bool parallel = false;
    bool same_subset = false;  // one language subset shared by both roles
    std::size_t support_subset_size = 1;
    std::size_t query_subset_size = 1;
    std::size_t k = 8;  // |support|
    std::size_t n = 8;  // |query|

    void validate(const RolePools& pools) const;
};

// Uniform without-replacement language subsets, one per role.
Subsets sample_language_subsets(const std::vector<std::string>& support_pool,
                                const std::vector<std::string>& query_pool,
                                std::size_t support_size, std::size_t query_size, Rng& rng);

// Without-replacement uniform draws from the union of each role's chosen bags.
Episode sample_episode_random(const RolePools& pools, const Subsets& subsets, std::size_t k,
                              std::size_t n, Rng& rng);

// Draws k latent ids shared by every chosen bag; support and query are the
// same ids rendered in the respective roles' languages (translation pairs).
Episode sample_episode_parallel(const RolePools& pools, const Subsets& subsets, std::size_t k,
                                Rng& rng);

// Episode stream combining subset sampling with the configured strategy.
// Covering ignores subset sizes: it shuffles the role's full example pool
// (all languages) once per pass and deals consecutive chunks, keeping the
// short final chunk; a new shuffled pass starts silently and the episode's
// pass index ticks up. With parallel covering, chunks cover the query pool
// and the support side mirrors each chunk's latent ids in sampled support
// languages.
class EpisodeSampler {
public:
    EpisodeSampler(RolePools pools, SamplerConfig cfg, std::uint64_t seed);

    Episode next();

    std::size_t support_pass() const { return support_state_.pass; }
    std::size_t query_pass() const { return query_state_.pass; }
    const SamplerConfig& config() const { return cfg_; }

private:
    struct CoverState {
        std::vector<std::pair<std::string, std::size_t>> order;  // (language, index in bag)
        std::size_t cursor = 0;
        std::size_t pass = 0;
    };

    void reshuffle(CoverState& state, const BagMap& bags);
    std::vector<data::Example> deal(CoverState& state, const BagMap& bags, std::size_t want,
                                    std::vector<std::string>& languages_out);

    RolePools pools_;
    SamplerConfig cfg_;
    Rng rng_;
    CoverState support_state_;
    CoverState query_state_;
};

}  // namespace xlmeta::episodes
