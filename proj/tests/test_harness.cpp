#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "harness/metrics.hpp"
#include "harness/synth.hpp"

using namespace harness;
namespace fs = std::filesystem;

namespace {

SynthConfig small_cfg() {
    SynthConfig cfg;
    cfg.n_users = 80;
    cfg.n_items = 500;
    cfg.n_topics = 20;
    cfg.hist_len_min = 30;
    cfg.hist_len_max = 50;
    cfg.planted_topics_per_user = 3;
    cfg.samples_per_user = 4;
    cfg.seed = 42;
    return cfg;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("counter rng is order-independent and uniform-ish") {
    CounterRng rng{123};
    CHECK(rng.mix(7) == rng.mix(7));
    CHECK(rng.mix(7) != rng.mix(8));
    double sum = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform(static_cast<std::uint64_t>(i));
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        sum += u;
    }
    CHECK(sum / 10000.0 == doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("deterministic labels in the p_hi=1 p_lo=0 limit") {
    SynthConfig cfg = small_cfg();
    cfg.p_hi = 1.0;
    cfg.p_lo = 0.0;
    const Corpus corpus = gen_synthetic(cfg);
    CHECK(corpus.samples.size() == cfg.n_users * cfg.samples_per_user);
    for (const auto& s : corpus.samples) {
        const bool match = corpus.topic_planted(s.user, corpus.item_topic(s.target_item));
        CHECK(s.label == (match ? 1 : 0));
    }
}

TEST_CASE("same seed twice gives a bitwise identical corpus on disk") {
    const SynthConfig cfg = small_cfg();
    const Corpus a = gen_synthetic(cfg);
    const Corpus b = gen_synthetic(cfg);
    REQUIRE(a.samples.size() == b.samples.size());
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
        CHECK(a.samples[i].user == b.samples[i].user);
        CHECK(a.samples[i].target_item == b.samples[i].target_item);
        CHECK(a.samples[i].label == b.samples[i].label);
    }

    const fs::path da = fs::temp_directory_path() / "corpus_det_a";
    const fs::path db = fs::temp_directory_path() / "corpus_det_b";
    save_corpus(a, da.string());
    save_corpus(b, db.string());
    for (const char* name : {"meta.json", "events.jsonl", "samples.jsonl", "schema.json"})
        CHECK(slurp(da / name) == slurp(db / name));
    fs::remove_all(da);
    fs::remove_all(db);
}

TEST_CASE("corpus round-trips through the directory format") {
    const SynthConfig cfg = small_cfg();
    const Corpus a = gen_synthetic(cfg);
    const fs::path dir = fs::temp_directory_path() / "corpus_rt";
    save_corpus(a, dir.string());
    const Corpus b = load_corpus(dir.string());
    CHECK(b.cfg.seed == cfg.seed);
    CHECK(b.samples.size() == a.samples.size());
    CHECK(b.events.size() == a.events.size());
    const auto& ea = a.events.at(3);
    const auto& eb = b.events.at(3);
    REQUIRE(ea.size() == eb.size());
    for (std::size_t i = 0; i < ea.size(); ++i) CHECK(ea[i].values == eb[i].values);
    fs::remove_all(dir);
}

TEST_CASE("planted-match click rate sits within 3 sigma of p_hi") {
    SynthConfig cfg = small_cfg();
    cfg.n_users = 3000;
    cfg.samples_per_user = 6;
    cfg.hist_len_min = 5;  // history size doesn't matter for the label law
    cfg.hist_len_max = 8;
    cfg.p_hi = 0.85;
    cfg.p_lo = 0.1;
    const Corpus corpus = gen_synthetic(cfg);

    std::size_t match_n = 0, match_clicks = 0, other_n = 0, other_clicks = 0;
    for (const auto& s : corpus.samples) {
        const bool match = corpus.topic_planted(s.user, corpus.item_topic(s.target_item));
        if (match) {
            ++match_n;
            match_clicks += static_cast<std::size_t>(s.label);
        } else {
            ++other_n;
            other_clicks += static_cast<std::size_t>(s.label);
        }
    }
    REQUIRE(match_n >= 5000);
    const double rate = static_cast<double>(match_clicks) / static_cast<double>(match_n);
    const double sigma = std::sqrt(cfg.p_hi * (1 - cfg.p_hi) / static_cast<double>(match_n));
    CHECK(std::fabs(rate - cfg.p_hi) <= 3.0 * sigma);

    const double lo_rate = static_cast<double>(other_clicks) / static_cast<double>(other_n);
    const double lo_sigma = std::sqrt(cfg.p_lo * (1 - cfg.p_lo) / static_cast<double>(other_n));
    CHECK(std::fabs(lo_rate - cfg.p_lo) <= 3.0 * lo_sigma);
}

TEST_CASE("deep-signal corpora keep planted items beyond the horizon") {
    SynthConfig cfg = small_cfg();
    cfg.deep_signal_min_frac = 0.5;
    cfg.planted_frac = 0.3;
    const Corpus corpus = gen_synthetic(cfg);
    for (const auto& [user, events] : corpus.events) {
        const std::size_t len = events.size();
        for (std::size_t j = 0; j < len; ++j) {
            const std::size_t depth = len - 1 - j;
            if (static_cast<double>(depth) >= 0.5 * static_cast<double>(len)) continue;
            // Shallow events must not be planted-topic items beyond chance:
            // verify the generator never drew them from the planted pool.
            // (Random collisions are possible; check the draw rule instead
            // by regenerating: identical corpus means the rule held.)
        }
        CHECK(len >= cfg.hist_len_min);
    }
    // Statistical check: planted-topic frequency among shallow positions
    // stays near the random-collision baseline while deep positions are
    // enriched.
    std::size_t shallow = 0, shallow_planted = 0, deep = 0, deep_planted = 0;
    for (const auto& [user, events] : corpus.events) {
        const std::size_t len = events.size();
        for (std::size_t j = 0; j < len; ++j) {
            const std::size_t depth = len - 1 - j;
            const bool planted = corpus.topic_planted(
                user, corpus.item_topic(events[j].item_id(corpus.schema)));
            if (static_cast<double>(depth) >= 0.5 * static_cast<double>(len)) {
                ++deep;
                deep_planted += planted;
            } else {
                ++shallow;
                shallow_planted += planted;
            }
        }
    }
    const double base_rate = static_cast<double>(cfg.planted_topics_per_user) /
                             static_cast<double>(cfg.n_topics);
    const double shallow_rate =
        static_cast<double>(shallow_planted) / static_cast<double>(shallow);
    const double deep_rate = static_cast<double>(deep_planted) / static_cast<double>(deep);
    CHECK(shallow_rate < base_rate + 0.08);
    CHECK(deep_rate > shallow_rate + 0.15);
}

TEST_CASE("bce loss values and finite-difference gradient") {
    CHECK(bce_loss(0.5, 0) == doctest::Approx(std::log(2.0)));
    CHECK(bce_loss(0.5, 1) == doctest::Approx(std::log(2.0)));
    CHECK(bce_loss(0.999999, 1) < 1e-5);
    CHECK(bce_loss(1e-9, 0) < 1e-5);  // clamped, finite
    CHECK(std::isfinite(bce_loss(0.0, 1)));

    // d(loss)/d(logit) == sigmoid(logit) - label, checked by central FD.
    std::mt19937 rng(3);
    std::uniform_real_distribution<double> dist(-4.0, 4.0);
    for (int it = 0; it < 200; ++it) {
        const double logit = dist(rng);
        const int label = it % 2;
        const auto loss_at = [label](double z) {
            return bce_loss(1.0 / (1.0 + std::exp(-z)), label);
        };
        const double h = 1e-6;
        const double fd = (loss_at(logit + h) - loss_at(logit - h)) / (2 * h);
        const double an = bce_grad_logit(1.0 / (1.0 + std::exp(-logit)), label);
        CHECK(std::fabs(fd - an) < 1e-5 * std::max(1.0, std::fabs(an)));
    }
}

TEST_CASE("auc basics and the worked example") {
    std::vector<float> sep = {0.1f, 0.2f, 0.8f, 0.9f};
    std::vector<int> lsep = {0, 0, 1, 1};
    CHECK(auc(sep, lsep) == 1.0);

    std::vector<float> same(6, 0.5f);
    std::vector<int> lsame = {0, 1, 0, 1, 0, 1};
    CHECK(auc(same, lsame) == 0.5);

    std::vector<float> ex = {0.1f, 0.4f, 0.35f, 0.8f};
    std::vector<int> lex = {0, 0, 1, 1};
    CHECK(auc(ex, lex) == 0.75);  // 3 of the 4 pos-neg pairs win

    std::vector<float> one = {0.3f, 0.4f};
    std::vector<int> lone = {1, 1};
    CHECK_THROWS_AS(auc(one, lone), std::invalid_argument);
}

TEST_CASE("auc equals the brute-force all-pairs oracle exactly") {
    std::mt19937 rng(17);
    std::uniform_real_distribution<float> score(0.0f, 1.0f);
    std::bernoulli_distribution label(0.4);
    std::uniform_int_distribution<int> quant(1, 20);
    for (int it = 0; it < 30; ++it) {
        const std::size_t n = 50 + static_cast<std::size_t>(rng() % 950);
        std::vector<float> scores(n);
        std::vector<int> labels(n);
        bool pos = false, neg = false;
        for (std::size_t i = 0; i < n; ++i) {
            // Quantized scores force plenty of ties.
            scores[i] = static_cast<float>(quant(rng)) / 20.0f;
            labels[i] = label(rng) ? 1 : 0;
            (labels[i] ? pos : neg) = true;
        }
        if (!pos || !neg) continue;

        std::uint64_t wins2 = 0, pairs = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (!labels[i]) continue;
            for (std::size_t j = 0; j < n; ++j) {
                if (labels[j]) continue;
                ++pairs;
                if (scores[i] > scores[j])
                    wins2 += 2;
                else if (scores[i] == scores[j])
                    wins2 += 1;
            }
        }
        const double oracle =
            static_cast<double>(wins2) / (2.0 * static_cast<double>(pairs));
        CHECK(auc(scores, labels) == oracle);
    }
}
