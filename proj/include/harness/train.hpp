#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "harness/model.hpp"
#include "harness/synth.hpp"

namespace harness {

struct TrainConfig {
    double lr = 0.05;
    std::size_t batch = 32;
    std::size_t epochs = 1;
    double clip_norm = 5.0;
    std::uint64_t seed = 1;
    bool adaptive = false;       // Adagrad instead of plain SGD
    std::size_t max_steps = 0;   // 0: run the full schedule
    std::size_t log_every = 0;   // 0: silent
};

struct EvalReport {
    double auc = 0.0;
    double logloss = 0.0;
    std::size_t n_samples = 0;
};

struct TrainResult {
    CtrModel model;
    std::vector<double> step_losses;  // mean loss per optimizer step
    EvalReport train_eval;
    EvalReport val_eval;
    std::size_t steps = 0;
};

// Histories are a per-user newest-first view over the corpus events,
// truncated to the model's sequence length at input-build time.
struct SampleView {
    const Sample* sample = nullptr;
    std::vector<seqvault::BehaviorEvent> history;  // newest-first
    std::vector<std::uint64_t> items;
};

struct Dataset {
    std::vector<SampleView> train;
    std::vector<SampleView> val;
};

/// Deterministic split: every 5th sample index validates.
Dataset build_dataset(const Corpus& corpus);

/// Mini-batch training; deterministic given (corpus, configs). Throws
/// std::runtime_error with step diagnostics when the loss turns NaN.
TrainResult train(const Corpus& corpus, const ModelConfig& model_cfg, const TrainConfig& tc);

EvalReport evaluate(const CtrModel& model, const Corpus& corpus,
                    const std::vector<SampleView>& samples);

enum class Ablation { Full, SoftmaxSta, NoFusion, NoRecency };
const char* ablation_name(Ablation a);
ModelConfig apply_ablation(ModelConfig cfg, Ablation a);

struct AblationCell {
    std::string name;
    double mean_auc = 0.0;
    double delta_vs_full = 0.0;
    std::vector<double> per_seed;
};

/// Trains every cell (full, softmax gate, no fusion, no recency, and the
/// segment widths) across the given seeds and reports seed-averaged AUC.
std::vector<AblationCell> eval_ablations(const Corpus& corpus, const ModelConfig& base,
                                         const TrainConfig& tc,
                                         const std::vector<std::uint64_t>& seeds,
                                         const std::vector<std::size_t>& widths = {5, 10, 20});

}  // namespace harness
