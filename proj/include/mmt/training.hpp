#pragma once

#include <iosfwd>
#include <memory>

#include "mmt/data.hpp"
#include "mmt/masking.hpp"
#include "mmt/metrics.hpp"
#include "mmt/model.hpp"

namespace mmt {

// Optimizer schedule: linear warmup to the peak over the first
// warmup_fraction of steps, then linear decay to zero.
struct TrainSchedule {
    double peak_lr = 5e-4;
    double warmup_fraction = 0.1;
    std::size_t batch_size = 64;
    std::size_t epochs = 30;
    std::size_t patience = 5;  // fine-tuning early stop, epochs without improvement

    void validate() const {
        if (peak_lr < 0.0) throw config_error("schedule: peak_lr must be nonnegative");
        if (warmup_fraction < 0.0 || warmup_fraction >= 1.0)
            throw config_error("schedule: warmup_fraction must be in [0,1)");
        if (batch_size == 0 || epochs == 0)
            throw config_error("schedule: batch_size and epochs must be positive");
    }
};

double lr_at(const TrainSchedule& schedule, std::size_t step, std::size_t total_steps);

struct PretrainLossReport {
    double l1_audio = 0.0;
    double l1_visual = 0.0;
    double total = 0.0;  // l1_audio + l1_visual
};

struct EpochRow {
    std::size_t epoch;
    std::string split;
    double loss;
    double metric;
    double lr;
};

void write_csv_header(std::ostream& os);
void write_csv_row(std::ostream& os, const EpochRow& row);

struct PretrainConfig {
    TrainSchedule schedule;
    MaskingConfig masking;
    std::uint64_t seed = 1;
};

struct PretrainResult {
    std::vector<EpochRow> history;
    double first_val_l1 = 0.0;
    double best_val_l1 = 0.0;
    std::size_t best_epoch = 0;  // 1-based
    std::size_t last_epoch = 0;
};

// One optimizer step over a batch of utterances: dynamic corruption plans,
// forward, masked dual-L1, backward, Adam at the scheduled rate.
PretrainLossReport pretrain_step(MultModel<float>& model,
                                 const std::vector<const UtteranceRecord*>& batch,
                                 const std::vector<MaskPlan>& plans, double lr,
                                 std::uint64_t step_seed);

// Full loop: dynamic masking on train, static masking on validation, best
// validation weights restored into the model on return. start_epoch > 0
// resumes a checkpointed run and reproduces the uninterrupted trajectory
// (randomness is keyed on absolute epoch numbers). stop_after_epoch > 0
// interrupts the run there, leaving the live (not best) state in the model.
PretrainResult pretrain(MultModel<float>& model, const std::vector<UtteranceRecord>& records,
                        const SplitIndices& split, const PretrainConfig& cfg,
                        std::ostream* csv = nullptr, std::size_t start_epoch = 0,
                        std::size_t stop_after_epoch = 0);

// Masked reconstruction L1 on a fixed (static-plan) split, no training.
PretrainLossReport masked_l1_eval(MultModel<float>& model,
                                  const std::vector<UtteranceRecord>& records,
                                  const std::vector<std::size_t>& indices,
                                  const MaskingConfig& masking, std::uint64_t seed);

// ---- fine-tuning ----

enum class TaskKind { classify, regress };

// Anything trainable on labeled utterances: the fine-tuned MulT and the
// comparison models all implement this.
template <typename T>
class SequenceModel {
public:
    virtual ~SequenceModel() = default;
    // [1, n_classes] logits or [1, n_targets] regression outputs.
    virtual Var<T> predict(FwdCtx<T>& ctx, const UtteranceRecord& rec) = 0;
    virtual std::vector<ParamStore<T>*> trainable_stores() = 0;
    virtual std::vector<ParamStore<T>*> all_stores() = 0;
    virtual double dropout_rate() const { return 0.0; }
};

// MulT backbone plus task head; the backbone is unfrozen by default.
class MultTaskModel : public SequenceModel<float> {
public:
    MultTaskModel(MultModel<float> backbone, std::size_t n_out, std::uint64_t seed,
                  bool freeze_backbone = false);

    Var<float> predict(FwdCtx<float>& ctx, const UtteranceRecord& rec) override;
    std::vector<ParamStore<float>*> trainable_stores() override;
    std::vector<ParamStore<float>*> all_stores() override;
    double dropout_rate() const override { return backbone_.cfg.dropout; }

    MultModel<float>& backbone() { return backbone_; }
    ParamStore<float>& head_store() { return head_store_; }

private:
    MultModel<float> backbone_;
    ParamStore<float> head_store_;
    FinetuneHead<float> head_;
    bool freeze_ = false;
};

struct FinetuneConfig {
    TrainSchedule schedule{1e-4, 0.1, 64, 30, 5};  // fine-tuning peak lr default 1e-4
    bool use_mse = false;                          // regression objective: 1-CCC by default
    std::uint64_t seed = 1;
};

struct FinetuneResult {
    std::vector<EpochRow> history;
    double best_val_metric = 0.0;
    std::size_t best_epoch = 0;
    std::size_t last_epoch = 0;
};

FinetuneResult finetune(SequenceModel<float>& model, const std::vector<UtteranceRecord>& records,
                        const std::vector<std::size_t>& train_idx,
                        const std::vector<std::size_t>& val_idx, TaskKind task,
                        const FinetuneConfig& cfg, std::ostream* csv = nullptr);

struct EvalResult {
    MetricsReport report;
    double mean_loss = 0.0;  // mean objective on the split
};

EvalResult evaluate(SequenceModel<float>& model, const std::vector<UtteranceRecord>& records,
                    const std::vector<std::size_t>& indices, TaskKind task);

// Full optimizer-state snapshots: early stopping restores the best epoch,
// and the pretraining checkpoint captures the best epoch's Adam state so a
// resumed run replays the uninterrupted trajectory.
struct StoreState {
    std::int64_t step = 0;
    struct ParamState {
        std::vector<float> value, m, v;
    };
    std::vector<ParamState> params;
};

StoreState capture_store(const ParamStore<float>& store);
void restore_store(ParamStore<float>& store, const StoreState& state);
std::vector<StoreState> capture_stores(const std::vector<ParamStore<float>*>& stores);
void restore_stores(const std::vector<ParamStore<float>*>& stores,
                    const std::vector<StoreState>& states);

// Differentiable concordance correlation of a prediction column against a
// constant target column; denominator gets a tiny epsilon so a constant
// prediction still yields a usable gradient (the strict metric lives in
// metrics.hpp).
Var<float> ccc_objective(const Var<float>& pred_col, const Var<float>& target_col);

}  // namespace mmt
