#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "seqvault/schema.hpp"

namespace harness {

// Counter-based deterministic RNG (splitmix64 finalizer): value depends
// only on (seed, counter), so generation order never matters.
struct CounterRng {
    std::uint64_t seed = 1;

    std::uint64_t mix(std::uint64_t counter) const;
    double uniform(std::uint64_t counter) const;  // [0,1)
    std::uint64_t pick(std::uint64_t counter, std::uint64_t n) const;
};

struct SynthConfig {
    std::size_t n_users = 2000;
    std::size_t n_items = 10000;
    std::size_t n_topics = 50;
    std::size_t hist_len_min = 800;
    std::size_t hist_len_max = 1000;
    std::size_t planted_topics_per_user = 3;
    double planted_frac = 0.10;     // history share drawn from planted topics
    // Stale interests: decoy topics show up only in the old half of the
    // history and never drive labels, so time-blind encoders overcount
    // them. Zero disables the mechanism.
    std::size_t decoy_topics_per_user = 2;
    double decoy_frac = 0.0;
    double p_hi = 0.9;              // click prob when the target topic is planted
    double p_lo = 0.05;
    std::size_t samples_per_user = 4;
    // Planted items only appear at history depths >= this fraction of the
    // user's history (0 spreads them over the full depth). Makes the
    // signal live strictly beyond a truncation horizon.
    double deep_signal_min_frac = 0.0;
    std::uint64_t seed = 1;

    void validate() const;
    static SynthConfig from_json(const std::string& text);
    std::string to_json() const;
};

struct Sample {
    std::uint64_t user = 0;
    std::uint64_t target_item = 0;
    std::int64_t ts = 0;
    int label = 0;
};

struct Corpus {
    SynthConfig cfg;
    seqvault::SequenceSchema schema;
    // Per user, chronological (oldest first); samples sit after all events.
    std::unordered_map<std::uint64_t, std::vector<seqvault::BehaviorEvent>> events;
    std::vector<Sample> samples;

    std::uint32_t item_topic(std::uint64_t item) const;
    bool topic_planted(std::uint64_t user, std::uint32_t topic) const;
    std::vector<std::uint32_t> planted_topics(std::uint64_t user) const;
    std::vector<std::uint32_t> decoy_topics(std::uint64_t user) const;
};

/// Labels: Bernoulli(p_hi) when the target's topic is planted for the
/// user, Bernoulli(p_lo) otherwise; each user's history carries planted-
/// topic items at depths spread per deep_signal_min_frac.
Corpus gen_synthetic(const SynthConfig& cfg);

void save_corpus(const Corpus& corpus, const std::string& dir);
Corpus load_corpus(const std::string& dir);

}  // namespace harness
