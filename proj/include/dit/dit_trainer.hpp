#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dit/lora.hpp"
#include "dit/model.hpp"
#include "dit/multitask.hpp"

namespace dit {

// The unit of adapter training data: a synthesized diff plus the fixed
// question and its ground-truth answer.
struct LabeledDiff {
    WeightDiff diff;
    std::string question;
    std::string answer;
    std::string task; // hidden_topic | news | trigger_prediction
    std::string id;   // stable identifier for manifests / hygiene checks
};

struct DitTrainConfig {
    int adapter_rank = 16;
    int batch = 16; // diffs per optimizer step
    double lr = 2e-3;
    int steps = 1200;
    int train_cap = 0; // 0 = use the whole corpus; sweeps set a cap
    uint64_t seed = 0;
    int eval_every = 0;       // held-out loss cadence, 0 = off
    int checkpoint_every = 0; // 0 = off
    std::filesystem::path checkpoint_dir;
    std::filesystem::path resume_from; // empty = fresh start
};

struct DitTrainLog {
    std::vector<double> loss_curve; // one entry per optimizer step
    std::vector<std::pair<int, double>> heldout_losses;
    int start_step = 0;
    int completed_steps = 0;
    std::filesystem::path last_checkpoint;
};

// Mean SFT loss of a labeled-diff batch under the composition
// base ⊕ diff_i ⊕ adapter; gradients never touch the diffs.
double dit_loss(const ToyTransformer& base, const LoraAdapter& adapter,
                const std::vector<const LabeledDiff*>& batch);

// Trains the interpretation adapter against the corpus. Deterministic given
// (config, corpus order); resuming from a checkpoint continues the exact
// trajectory.
LoraAdapter train_dit(const ToyTransformer& base, const std::vector<LabeledDiff>& corpus,
                      const std::vector<LabeledDiff>& heldout, const DitTrainConfig& cfg,
                      DitTrainLog* log = nullptr);

// Checkpoint = adapter archive + Adam moments + step counter.
void save_dit_checkpoint(const LoraAdapter& adapter, const AdamState<float>& state, int step,
                         const std::filesystem::path& path);
struct DitCheckpoint {
    LoraAdapter adapter;
    AdamState<float> state;
    int step = 0;
};
DitCheckpoint load_dit_checkpoint(const std::filesystem::path& path);

// Deterministic per-epoch batch composition (without replacement).
std::vector<size_t> dit_batch_indices(size_t corpus_size, int batch, int step, uint64_t seed);

struct SweepPoint {
    int size = 0;
    LoraAdapter adapter;
    double final_heldout_loss = 0.0;
};

// Trains one adapter per ascending train-set size over a shared held-out set.
std::vector<SweepPoint> data_scaling_sweep(const ToyTransformer& base,
                                           const std::vector<LabeledDiff>& corpus,
                                           const std::vector<LabeledDiff>& heldout,
                                           const std::vector<int>& sizes, const DitTrainConfig& cfg);

} // namespace dit
