#include "harness/synth.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace fs = std::filesystem;

namespace harness {

namespace {

constexpr std::uint64_t kTopicSalt = 0x746f706963ull;
constexpr std::uint64_t kPlantSalt = 0x706c616e74ull;
constexpr std::uint64_t kDecoySalt = 0x6465636f79ull;
constexpr std::uint64_t kHistSalt = 0x68697374ull;
constexpr std::uint64_t kLabelSalt = 0x6c6162656cull;
constexpr std::uint64_t kTargetSalt = 0x74676574ull;

}  // namespace

std::uint64_t CounterRng::mix(std::uint64_t counter) const {
    std::uint64_t z = seed + counter * 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

double CounterRng::uniform(std::uint64_t counter) const {
    return static_cast<double>(mix(counter) >> 11) * 0x1.0p-53;
}

std::uint64_t CounterRng::pick(std::uint64_t counter, std::uint64_t n) const {
    return n == 0 ? 0 : mix(counter) % n;
}

void SynthConfig::validate() const {
    if (n_users == 0 || n_items == 0 || n_topics == 0)
        throw std::invalid_argument("synth: zero users/items/topics");
    if (hist_len_min == 0 || hist_len_max < hist_len_min)
        throw std::invalid_argument("synth: bad history length range");
    if (!(0.0 <= p_lo && p_lo < p_hi && p_hi <= 1.0))
        throw std::invalid_argument("synth: need 0 <= p_lo < p_hi <= 1");
    if (planted_topics_per_user == 0 || planted_topics_per_user > n_topics)
        throw std::invalid_argument("synth: bad planted_topics_per_user");
    if (deep_signal_min_frac < 0.0 || deep_signal_min_frac >= 1.0)
        throw std::invalid_argument("synth: deep_signal_min_frac out of [0,1)");
}

SynthConfig SynthConfig::from_json(const std::string& text) {
    const auto doc = nlohmann::json::parse(text);
    SynthConfig cfg;
    auto grab = [&doc](const char* key, auto& slot) {
        if (doc.contains(key)) slot = doc[key].get<std::decay_t<decltype(slot)>>();
    };
    grab("n_users", cfg.n_users);
    grab("n_items", cfg.n_items);
    grab("n_topics", cfg.n_topics);
    grab("hist_len_min", cfg.hist_len_min);
    grab("hist_len_max", cfg.hist_len_max);
    grab("planted_topics_per_user", cfg.planted_topics_per_user);
    grab("planted_frac", cfg.planted_frac);
    grab("decoy_topics_per_user", cfg.decoy_topics_per_user);
    grab("decoy_frac", cfg.decoy_frac);
    grab("p_hi", cfg.p_hi);
    grab("p_lo", cfg.p_lo);
    grab("samples_per_user", cfg.samples_per_user);
    grab("deep_signal_min_frac", cfg.deep_signal_min_frac);
    grab("seed", cfg.seed);
    cfg.validate();
    return cfg;
}

std::string SynthConfig::to_json() const {
    nlohmann::json doc;
    doc["n_users"] = n_users;
    doc["n_items"] = n_items;
    doc["n_topics"] = n_topics;
    doc["hist_len_min"] = hist_len_min;
    doc["hist_len_max"] = hist_len_max;
    doc["planted_topics_per_user"] = planted_topics_per_user;
    doc["planted_frac"] = planted_frac;
    doc["decoy_topics_per_user"] = decoy_topics_per_user;
    doc["decoy_frac"] = decoy_frac;
    doc["p_hi"] = p_hi;
    doc["p_lo"] = p_lo;
    doc["samples_per_user"] = samples_per_user;
    doc["deep_signal_min_frac"] = deep_signal_min_frac;
    doc["seed"] = seed;
    return doc.dump(2);
}

std::uint32_t Corpus::item_topic(std::uint64_t item) const {
    CounterRng rng{cfg.seed ^ kTopicSalt};
    return static_cast<std::uint32_t>(rng.pick(item, cfg.n_topics));
}

std::vector<std::uint32_t> Corpus::planted_topics(std::uint64_t user) const {
    CounterRng rng{cfg.seed ^ kPlantSalt};
    std::vector<std::uint32_t> topics;
    std::uint64_t counter = user * 97;
    while (topics.size() < cfg.planted_topics_per_user) {
        const auto t = static_cast<std::uint32_t>(rng.pick(counter++, cfg.n_topics));
        if (std::find(topics.begin(), topics.end(), t) == topics.end()) topics.push_back(t);
    }
    return topics;
}

bool Corpus::topic_planted(std::uint64_t user, std::uint32_t topic) const {
    const auto topics = planted_topics(user);
    return std::find(topics.begin(), topics.end(), topic) != topics.end();
}

std::vector<std::uint32_t> Corpus::decoy_topics(std::uint64_t user) const {
    const auto planted = planted_topics(user);
    CounterRng rng{cfg.seed ^ kDecoySalt};
    std::vector<std::uint32_t> topics;
    std::uint64_t counter = user * 131;
    while (topics.size() < cfg.decoy_topics_per_user &&
           topics.size() + planted.size() < cfg.n_topics) {
        const auto t = static_cast<std::uint32_t>(rng.pick(counter++, cfg.n_topics));
        if (std::find(planted.begin(), planted.end(), t) != planted.end()) continue;
        if (std::find(topics.begin(), topics.end(), t) != topics.end()) continue;
        topics.push_back(t);
    }
    return topics;
}

Corpus gen_synthetic(const SynthConfig& cfg) {
    cfg.validate();
    Corpus corpus;
    corpus.cfg = cfg;
    corpus.schema = seqvault::SequenceSchema::reference();

    // Topic membership index so planted draws are O(1).
    std::vector<std::vector<std::uint64_t>> items_by_topic(cfg.n_topics);
    for (std::uint64_t item = 0; item < cfg.n_items; ++item)
        items_by_topic[corpus.item_topic(item)].push_back(item);
    for (std::size_t t = 0; t < cfg.n_topics; ++t)
        if (items_by_topic[t].empty())
            throw std::runtime_error("synth: topic " + std::to_string(t) +
                                     " has no items; raise n_items");

    const CounterRng hist{cfg.seed ^ kHistSalt};
    const CounterRng label_rng{cfg.seed ^ kLabelSalt};
    const CounterRng target_rng{cfg.seed ^ kTargetSalt};
    constexpr std::int64_t kBase = 1700000000;

    for (std::uint64_t user = 0; user < cfg.n_users; ++user) {
        const auto planted = corpus.planted_topics(user);
        const auto decoys = corpus.decoy_topics(user);
        const std::uint64_t uc = user * 1000003ull;
        const std::size_t len =
            cfg.hist_len_min + hist.pick(uc, cfg.hist_len_max - cfg.hist_len_min + 1);

        auto& events = corpus.events[user];
        events.reserve(len);
        for (std::size_t j = 0; j < len; ++j) {
            const std::uint64_t ec = uc + 7 + j * 7;
            // Depth from the newest event once the history is complete.
            const std::size_t depth = len - 1 - j;
            const bool deep_enough =
                static_cast<double>(depth) >=
                cfg.deep_signal_min_frac * static_cast<double>(len);
            const bool plant = deep_enough && hist.uniform(ec) < cfg.planted_frac;
            // Stale interests live only in the old half.
            const bool old_half =
                static_cast<double>(depth) >= 0.5 * static_cast<double>(len);
            const bool decoy = !plant && old_half && !decoys.empty() &&
                               hist.uniform(ec + 4) < cfg.decoy_frac;
            std::uint64_t item;
            if (plant) {
                const auto topic = planted[hist.pick(ec + 1, planted.size())];
                const auto& pool = items_by_topic[topic];
                item = pool[hist.pick(ec + 2, pool.size())];
            } else if (decoy) {
                const auto topic = decoys[hist.pick(ec + 5, decoys.size())];
                const auto& pool = items_by_topic[topic];
                item = pool[hist.pick(ec + 6, pool.size())];
            } else {
                item = hist.pick(ec + 3, cfg.n_items);
            }
            seqvault::BehaviorEvent e;
            e.values = {item,
                        static_cast<std::uint32_t>(hist.pick(ec + 4, 3)),
                        static_cast<std::uint32_t>(hist.pick(ec + 5, 4)),
                        kBase + static_cast<std::int64_t>(j) * 60,
                        static_cast<float>(hist.uniform(ec + 6))};
            events.push_back(std::move(e));
        }

        // Samples strictly after every history event.
        const std::int64_t first_sample_ts = kBase + static_cast<std::int64_t>(len) * 60 + 300;
        for (std::size_t s = 0; s < cfg.samples_per_user; ++s) {
            const std::uint64_t sc = uc + 13 + s * 11;
            Sample sample;
            sample.user = user;
            sample.ts = first_sample_ts + static_cast<std::int64_t>(s) * 60;
            // Targets mix planted topics (positives), decoy topics (the
            // hard negatives) and uniform draws so both label regimes and
            // the stale-interest confusion stay populated.
            const double pick = target_rng.uniform(sc);
            if (pick < 0.4) {
                const auto topic = planted[target_rng.pick(sc + 1, planted.size())];
                const auto& pool = items_by_topic[topic];
                sample.target_item = pool[target_rng.pick(sc + 2, pool.size())];
            } else if (pick < 0.7 && !decoys.empty() && cfg.decoy_frac > 0.0) {
                const auto topic = decoys[target_rng.pick(sc + 4, decoys.size())];
                const auto& pool = items_by_topic[topic];
                sample.target_item = pool[target_rng.pick(sc + 5, pool.size())];
            } else {
                sample.target_item = target_rng.pick(sc + 3, cfg.n_items);
            }
            const bool match = corpus.topic_planted(user, corpus.item_topic(sample.target_item));
            const double p = match ? cfg.p_hi : cfg.p_lo;
            sample.label = label_rng.uniform(sc + 4) < p ? 1 : 0;
            corpus.samples.push_back(sample);
        }
    }
    return corpus;
}

void save_corpus(const Corpus& corpus, const std::string& dir) {
    fs::create_directories(dir);
    {
        std::ofstream meta(fs::path(dir) / "meta.json", std::ios::trunc);
        meta << corpus.cfg.to_json() << "\n";
    }
    {
        std::ofstream schema(fs::path(dir) / "schema.json", std::ios::trunc);
        schema << corpus.schema.to_json() << "\n";
    }
    {
        std::ofstream out(fs::path(dir) / "events.jsonl", std::ios::trunc);
        std::vector<std::uint64_t> users;
        for (const auto& [user, events] : corpus.events) users.push_back(user);
        std::sort(users.begin(), users.end());
        for (const auto user : users) {
            for (const auto& e : corpus.events.at(user)) {
                nlohmann::json line;
                line["user"] = user;
                line["item"] = std::get<std::uint64_t>(*e.values[0]);
                line["scenario"] = std::get<std::uint32_t>(*e.values[1]);
                line["action"] = std::get<std::uint32_t>(*e.values[2]);
                line["ts"] = std::get<std::int64_t>(*e.values[3]);
                if (e.values[4].has_value())
                    line["similarity"] = std::get<float>(*e.values[4]);
                out << line.dump() << "\n";
            }
        }
    }
    {
        std::ofstream out(fs::path(dir) / "samples.jsonl", std::ios::trunc);
        for (const auto& s : corpus.samples) {
            nlohmann::json line;
            line["user"] = s.user;
            line["target"] = s.target_item;
            line["ts"] = s.ts;
            line["label"] = s.label;
            out << line.dump() << "\n";
        }
    }
}

Corpus load_corpus(const std::string& dir) {
    Corpus corpus;
    {
        std::ifstream meta(fs::path(dir) / "meta.json");
        if (!meta) throw std::runtime_error("corpus: missing meta.json in " + dir);
        std::string text((std::istreambuf_iterator<char>(meta)),
                         std::istreambuf_iterator<char>());
        corpus.cfg = SynthConfig::from_json(text);
    }
    {
        std::ifstream schema(fs::path(dir) / "schema.json");
        std::string text((std::istreambuf_iterator<char>(schema)),
                         std::istreambuf_iterator<char>());
        corpus.schema = seqvault::SequenceSchema::from_json(text);
    }
    {
        std::ifstream in(fs::path(dir) / "events.jsonl");
        if (!in) throw std::runtime_error("corpus: missing events.jsonl in " + dir);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto doc = nlohmann::json::parse(line);
            seqvault::BehaviorEvent e;
            e.values.resize(5);
            e.values[0] = doc.at("item").get<std::uint64_t>();
            e.values[1] = doc.at("scenario").get<std::uint32_t>();
            e.values[2] = doc.at("action").get<std::uint32_t>();
            e.values[3] = doc.at("ts").get<std::int64_t>();
            if (doc.contains("similarity")) e.values[4] = doc["similarity"].get<float>();
            corpus.events[doc.at("user").get<std::uint64_t>()].push_back(std::move(e));
        }
    }
    {
        std::ifstream in(fs::path(dir) / "samples.jsonl");
        if (!in) throw std::runtime_error("corpus: missing samples.jsonl in " + dir);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto doc = nlohmann::json::parse(line);
            Sample s;
            s.user = doc.at("user").get<std::uint64_t>();
            s.target_item = doc.at("target").get<std::uint64_t>();
            s.ts = doc.at("ts").get<std::int64_t>();
            s.label = doc.at("label").get<int>();
            corpus.samples.push_back(s);
        }
    }
    return corpus;
}

}  // namespace harness
