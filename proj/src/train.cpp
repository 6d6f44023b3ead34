#include "harness/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "harness/metrics.hpp"

namespace harness {

Dataset build_dataset(const Corpus& corpus) {
    Dataset ds;
    for (std::size_t idx = 0; idx < corpus.samples.size(); ++idx) {
        const Sample& s = corpus.samples[idx];
        SampleView view;
        view.sample = &s;
        const auto it = corpus.events.find(s.user);
        if (it != corpus.events.end()) {
            // Events are chronological; the sample sees those before its
            // timestamp, newest first.
            for (auto rit = it->second.rbegin(); rit != it->second.rend(); ++rit) {
                if (rit->timestamp(corpus.schema) >= s.ts) continue;
                view.history.push_back(*rit);
                view.items.push_back(rit->item_id(corpus.schema));
            }
        }
        (idx % 5 == 0 ? ds.val : ds.train).push_back(std::move(view));
    }
    return ds;
}

EvalReport evaluate(const CtrModel& model, const Corpus& corpus,
                    const std::vector<SampleView>& samples) {
    EvalReport rep;
    std::vector<float> scores;
    std::vector<int> labels;
    double loss_sum = 0.0;
    for (const auto& view : samples) {
        const auto input = build_input(model, view.history, corpus.schema,
                                       view.sample->target_item,
                                       static_cast<double>(view.sample->ts));
        const double p = model_forward(model, input, view.items, view.sample->target_item,
                                       nullptr);
        scores.push_back(static_cast<float>(p));
        labels.push_back(view.sample->label);
        loss_sum += bce_loss(p, view.sample->label);
    }
    rep.n_samples = samples.size();
    rep.logloss = samples.empty() ? 0.0 : loss_sum / static_cast<double>(samples.size());
    rep.auc = auc(scores, labels);
    return rep;
}

TrainResult train(const Corpus& corpus, const ModelConfig& model_cfg, const TrainConfig& tc) {
    model_cfg.validate();
    Dataset ds = build_dataset(corpus);
    if (ds.train.empty()) throw std::invalid_argument("train: empty training split");

    TrainResult result;
    result.model = CtrModel::init(model_cfg, tc.seed);
    AdagradState adagrad = AdagradState::init(model_cfg);

    std::mt19937 shuffle_rng(static_cast<std::uint32_t>(tc.seed * 7919 + 1));
    std::vector<std::size_t> order(ds.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::size_t step = 0;
    bool done = false;
    for (std::size_t epoch = 0; epoch < tc.epochs && !done; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (std::size_t at = 0; at < order.size() && !done; at += tc.batch) {
            const std::size_t take = std::min(tc.batch, order.size() - at);
            ModelGrads grads = ModelGrads::zeros(model_cfg);
            double loss_sum = 0.0;
            for (std::size_t b = 0; b < take; ++b) {
                const SampleView& view = ds.train[order[at + b]];
                const auto input = build_input(result.model, view.history, corpus.schema,
                                               view.sample->target_item,
                                               static_cast<double>(view.sample->ts));
                ModelForward cache;
                const double p = model_forward(result.model, input, view.items,
                                               view.sample->target_item, &cache);
                loss_sum += bce_loss(p, view.sample->label);
                const double g_logit = bce_grad_logit(p, view.sample->label) /
                                       static_cast<double>(take);
                const ModelGrads sample_grads =
                    model_backward(result.model, cache, g_logit);
                grads.accumulate(sample_grads, 1.0);
            }
            const double mean_loss = loss_sum / static_cast<double>(take);
            if (!std::isfinite(mean_loss))
                throw std::runtime_error(
                    "train: loss diverged to NaN/Inf at step " + std::to_string(step) +
                    " (epoch " + std::to_string(epoch) + ", lr " + std::to_string(tc.lr) + ")");
            result.step_losses.push_back(mean_loss);

            if (tc.adaptive)
                adagrad_apply(result.model, adagrad, grads, tc.lr, tc.clip_norm);
            else
                sgd_apply(result.model, grads, tc.lr, tc.clip_norm);
            ++step;
            if (tc.log_every && step % tc.log_every == 0)
                std::printf("step %zu loss %.4f\n", step, mean_loss);
            if (tc.max_steps && step >= tc.max_steps) done = true;
        }
    }
    result.steps = step;
    result.train_eval = evaluate(result.model, corpus, ds.train);
    result.val_eval = evaluate(result.model, corpus, ds.val);
    return result;
}

const char* ablation_name(Ablation a) {
    switch (a) {
        case Ablation::Full: return "full";
        case Ablation::SoftmaxSta: return "softmax_sta";
        case Ablation::NoFusion: return "no_fusion";
        case Ablation::NoRecency: return "no_recency";
    }
    return "?";
}

ModelConfig apply_ablation(ModelConfig cfg, Ablation a) {
    switch (a) {
        case Ablation::Full: break;
        case Ablation::SoftmaxSta: cfg.laser.sta_softmax = true; break;
        case Ablation::NoFusion: cfg.laser.fuse_full = false; break;
        case Ablation::NoRecency: cfg.laser.use_recency = false; break;
    }
    return cfg;
}

std::vector<AblationCell> eval_ablations(const Corpus& corpus, const ModelConfig& base,
                                         const TrainConfig& tc,
                                         const std::vector<std::uint64_t>& seeds,
                                         const std::vector<std::size_t>& widths) {
    std::vector<std::pair<std::string, ModelConfig>> cells;
    for (Ablation a :
         {Ablation::Full, Ablation::SoftmaxSta, Ablation::NoFusion, Ablation::NoRecency})
        cells.emplace_back(ablation_name(a), apply_ablation(base, a));
    for (std::size_t w : widths) {
        if (w == base.laser.segment_w) continue;
        ModelConfig cfg = base;
        cfg.laser.segment_w = w;
        cells.emplace_back("w" + std::to_string(w), cfg);
    }

    std::vector<AblationCell> report;
    double full_mean = 0.0;
    for (const auto& [name, cfg] : cells) {
        AblationCell cell;
        cell.name = name;
        for (std::uint64_t seed : seeds) {
            TrainConfig stc = tc;
            stc.seed = seed;
            const TrainResult r = train(corpus, cfg, stc);
            cell.per_seed.push_back(r.val_eval.auc);
            cell.mean_auc += r.val_eval.auc;
        }
        cell.mean_auc /= static_cast<double>(seeds.size());
        if (name == "full") full_mean = cell.mean_auc;
        report.push_back(std::move(cell));
    }
    for (auto& cell : report) cell.delta_vs_full = cell.mean_auc - full_mean;
    return report;
}

}  // namespace harness
