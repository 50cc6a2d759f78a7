#pragma once

#include <optional>
#include <string>
#include <vector>

#include "uda/checkpoint.hpp"
#include "uda/data.hpp"
#include "uda/metrics.hpp"

namespace uda {

struct TrainConfig {
    int epochs = 80;       // segmenter training / fine-tuning
    int batch_size = 1;
    double lr_seg = 1e-4;
    double lr_gan = 2e-4;
    uint64_t seed = 42;
    double lambda_cycle = 10.0;

    // GAN stop rule: rolling discriminator accuracy above d_accuracy_min AND
    // rolling generator loss below g_loss_max, with a hard epoch cap
    double d_accuracy_min = 0.92;
    double g_loss_max = 3.0;
    int rolling_window = 50;
    int gan_max_epochs = 200;
    bool d_accuracy_on_heldout = true;

    int eval_every = 1;
    int sample_every = 0;  // translated sample grids every K epochs (0 = off)
    int threads = 1;

    // network sizes
    int in_channels = 3;
    int seg_base_width = 32;
    int gen_base_width = 64;
    int disc_base_width = 64;
    double gen_dropout_p = 0.5;

    void validate() const;
    std::string to_json() const;
    uint64_t digest() const { return fnv1a(to_json()); }
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    std::optional<MetricsReport> eval;
};

struct SegTrainResult {
    Checkpoint best;
    int best_epoch = 0;
    std::vector<EpochRecord> history;
};

// Step 1: train the segmenter on the labeled source dataset; returns the
// best-validation checkpoint plus the per-epoch history.
SegTrainResult step1_train_segmenter(const DomainDataset& source, const TrainConfig& cfg,
                                     const std::string& out_dir = "");

struct GanEpochRecord {
    int epoch = 0;
    double d_loss = 0.0;
    double g_adv = 0.0;
    double cycle = 0.0;
    double g_total = 0.0;       // rolling mean at epoch end
    double d_accuracy = 0.0;
};

struct GanTrainResult {
    Checkpoint g_st, g_ts, d_s, d_t;
    std::vector<GanEpochRecord> history;
    bool converged = false;   // stop rule fired before the epoch cap
    bool aborted = false;     // numerical failure; checkpoints are last-good
    std::string abort_reason;
};

// Step 2: adversarial training of both translation directions.
GanTrainResult step2_train_gan(const DomainDataset& source, const DomainDataset& target,
                               const TrainConfig& cfg, const std::string& out_dir = "");

// Step 3: translate every source patch through G_{S->T}; masks, order and
// origins are preserved bit-exactly.
DomainDataset step3_translate(const Checkpoint& g_st, const DomainDataset& source);

struct FinetuneResult {
    Checkpoint best;
    int best_epoch = 0;                // 0 means the warm start was never beaten
    MetricsReport initial_eval;        // epoch-0 target metrics of the warm start
    std::vector<EpochRecord> history;  // epochs 1..N
};

// Step 4: fine-tune the step-1 checkpoint on the translated dataset,
// evaluating on the target after every epoch.
FinetuneResult step4_finetune(const Checkpoint& m_s, const DomainDataset& translated,
                              const DomainDataset& target_eval, const TrainConfig& cfg,
                              const std::string& out_dir = "");

// Evaluate a segmenter checkpoint on every labeled patch of a dataset.
MetricsReport evaluate(const Checkpoint& m, const DomainDataset& ds);

// Keep only the patches carrying the given split tag.
DomainDataset subset(const DomainDataset& ds, const std::string& split);

// CSV history emission: header "epoch,metric,class,value".
void write_history_csv(const std::string& path, const std::vector<EpochRecord>& history,
                       const MetricsReport* initial_eval = nullptr);
void write_gan_history_csv(const std::string& path, const std::vector<GanEpochRecord>& history);

}  // namespace uda
