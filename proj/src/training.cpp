#include "mmt/training.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <sstream>

namespace mmt {

double lr_at(const TrainSchedule& schedule, std::size_t step, std::size_t total_steps) {
    if (total_steps == 0) throw config_error("lr_at: total_steps must be positive");
    if (step > total_steps) {
        std::cerr << "warning: lr_at called with step " << step << " past total " << total_steps
                  << ", clamping to 0\n";
        return 0.0;
    }
    const auto warmup = static_cast<std::size_t>(
        std::floor(schedule.warmup_fraction * static_cast<double>(total_steps)));
    if (warmup > 0 && step <= warmup)
        return schedule.peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
    return schedule.peak_lr * static_cast<double>(total_steps - step) /
           static_cast<double>(total_steps - warmup);
}

void write_csv_header(std::ostream& os) { os << "epoch,split,loss,metric,lr\n"; }

void write_csv_row(std::ostream& os, const EpochRow& row) {
    std::ostringstream line;  // fixed formatting keeps logs byte-stable
    line.precision(9);
    line << row.epoch << ',' << row.split << ',' << row.loss << ',' << row.metric << ','
         << row.lr << '\n';
    os << line.str();
}

namespace {

std::string join_ids(const std::vector<const UtteranceRecord*>& batch) {
    std::string out;
    for (const auto* r : batch) {
        if (!out.empty()) out += ",";
        out += r->utterance_id;
    }
    return out;
}

}  // namespace

PretrainLossReport pretrain_step(MultModel<float>& model,
                                 const std::vector<const UtteranceRecord*>& batch,
                                 const std::vector<MaskPlan>& plans, double lr,
                                 std::uint64_t step_seed) {
    if (batch.empty()) throw internal_error("pretrain_step: empty batch");
    if (batch.size() != plans.size())
        throw internal_error("pretrain_step: " + std::to_string(batch.size()) + " records vs " +
                             std::to_string(plans.size()) + " plans");
    Tape<float> tape;
    Rng drop_rng(mix64(step_seed, 0xd20b0c75ull));
    FwdCtx<float> ctx{tape};
    ctx.rng = &drop_rng;
    ctx.train = true;
    ctx.dropout = model.cfg.dropout;

    Var<float> sum_a, sum_v;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const UtteranceRecord& rec = *batch[i];
        const MaskPlan& plan = plans[i];
        const FrameMatrix audio = crop_rows(rec.audio.frames, model.cfg.seq_len);
        const FrameMatrix visual = crop_rows(rec.visual.frames, model.cfg.seq_len);
        Rng replace_rng(mix64(plan.seed, 0x4170706cull));
        const CorruptionResult corr = apply_plan(plan, audio, visual, replace_rng);

        auto fwd = model.forward(ctx, to_var(tape, corr.audio), to_var(tape, corr.visual));
        Var<float> l1a = l1_masked(fwd.recon_audio, to_var(tape, audio), corr.target_mask);
        Var<float> l1v = l1_masked(fwd.recon_visual, to_var(tape, visual), corr.target_mask);
        sum_a = sum_a.defined() ? add(sum_a, l1a) : l1a;
        sum_v = sum_v.defined() ? add(sum_v, l1v) : l1v;
    }
    const float inv = 1.0f / static_cast<float>(batch.size());
    Var<float> loss_a = scale(sum_a, inv);
    Var<float> loss_v = scale(sum_v, inv);
    Var<float> total = add(loss_a, loss_v);
    PretrainLossReport report{loss_a.item(), loss_v.item(), total.item()};
    if (!std::isfinite(report.total))
        throw internal_error("pretrain_step: loss is not finite (lr=" + std::to_string(lr) +
                             ", step_seed=" + std::to_string(step_seed) + ", batch=[" +
                             join_ids(batch) + "])");
    tape.backward(total);
    adam_step(model.params, lr);
    return report;
}

PretrainLossReport masked_l1_eval(MultModel<float>& model,
                                  const std::vector<UtteranceRecord>& records,
                                  const std::vector<std::size_t>& indices,
                                  const MaskingConfig& masking, std::uint64_t seed) {
    if (indices.empty()) throw config_error("masked_l1_eval: empty split");
    PretrainLossReport acc;
    for (std::size_t idx : indices) {
        const UtteranceRecord& rec = records[idx];
        const FrameMatrix audio = crop_rows(rec.audio.frames, model.cfg.seq_len);
        const FrameMatrix visual = crop_rows(rec.visual.frames, model.cfg.seq_len);
        const std::uint64_t plan_seed = static_plan_seed(seed, rec.utterance_id);
        const MaskPlan plan = make_plan(audio.rows, masking.chunk_len, masking.ratio, plan_seed,
                                        masking.per_frame_tags, rec.utterance_id);
        Rng replace_rng(mix64(plan.seed, 0x4170706cull));
        const CorruptionResult corr = apply_plan(plan, audio, visual, replace_rng);

        Tape<float> tape;
        FwdCtx<float> ctx{tape};
        ctx.grads = false;
        auto fwd = model.forward(ctx, to_var(tape, corr.audio), to_var(tape, corr.visual));
        acc.l1_audio += l1_masked(fwd.recon_audio, to_var(tape, audio), corr.target_mask).item();
        acc.l1_visual += l1_masked(fwd.recon_visual, to_var(tape, visual), corr.target_mask).item();
    }
    const auto n = static_cast<double>(indices.size());
    acc.l1_audio /= n;
    acc.l1_visual /= n;
    acc.total = acc.l1_audio + acc.l1_visual;
    return acc;
}

PretrainResult pretrain(MultModel<float>& model, const std::vector<UtteranceRecord>& records,
                        const SplitIndices& split, const PretrainConfig& cfg, std::ostream* csv,
                        std::size_t start_epoch, std::size_t stop_after_epoch) {
    cfg.schedule.validate();
    if (split.train.empty() || split.validation.empty())
        throw config_error("pretrain: train and validation splits must be nonempty");
    const std::size_t steps_per_epoch =
        (split.train.size() + cfg.schedule.batch_size - 1) / cfg.schedule.batch_size;
    const std::size_t total_steps = cfg.schedule.epochs * steps_per_epoch;
    std::size_t step = start_epoch * steps_per_epoch;

    PretrainResult result;
    StoreState best;
    double best_val = std::numeric_limits<double>::infinity();
    double last_lr = 0.0;

    for (std::size_t epoch = start_epoch + 1; epoch <= cfg.schedule.epochs; ++epoch) {
        std::vector<std::size_t> order = split.train;
        Rng shuffle_rng(mix64(cfg.seed, 0x53485546ull, epoch));
        shuffle_rng.shuffle(order);

        double epoch_loss = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t off = 0; off < order.size(); off += cfg.schedule.batch_size) {
            const std::size_t end = std::min(order.size(), off + cfg.schedule.batch_size);
            std::vector<const UtteranceRecord*> batch;
            std::vector<MaskPlan> plans;
            for (std::size_t i = off; i < end; ++i) {
                const UtteranceRecord& rec = records[order[i]];
                batch.push_back(&rec);
                const std::size_t t = std::min(rec.audio.frames.rows, model.cfg.seq_len);
                plans.push_back(make_plan(t, cfg.masking.chunk_len, cfg.masking.ratio,
                                          dynamic_plan_seed(cfg.seed, rec.utterance_id, epoch),
                                          cfg.masking.per_frame_tags, rec.utterance_id));
            }
            ++step;
            last_lr = lr_at(cfg.schedule, step, total_steps);
            const auto report =
                pretrain_step(model, batch, plans, last_lr, mix64(cfg.seed, 0x53544550ull, step));
            epoch_loss += report.total;
            ++n_batches;
        }
        epoch_loss /= static_cast<double>(n_batches);

        const auto val = masked_l1_eval(model, records, split.validation, cfg.masking, cfg.seed);
        result.history.push_back({epoch, "train", epoch_loss, epoch_loss, last_lr});
        result.history.push_back({epoch, "validation", val.total, val.total, last_lr});
        if (csv) {
            write_csv_row(*csv, result.history[result.history.size() - 2]);
            write_csv_row(*csv, result.history.back());
        }
        if (epoch == start_epoch + 1) result.first_val_l1 = val.total;
        if (val.total < best_val) {
            best_val = val.total;
            best = capture_store(model.params);
            result.best_epoch = epoch;
        }
        result.last_epoch = epoch;
        if (stop_after_epoch > 0 && epoch >= stop_after_epoch) {
            result.best_val_l1 = best_val;
            return result;  // interrupted: keep the live state for resume
        }
    }
    result.best_val_l1 = best_val;
    restore_store(model.params, best);
    return result;
}

// ---- fine-tuning ----

MultTaskModel::MultTaskModel(MultModel<float> backbone, std::size_t n_out, std::uint64_t seed,
                             bool freeze_backbone)
    : backbone_(std::move(backbone)), freeze_(freeze_backbone) {
    Rng rng(mix64(seed, 0x68656164ull));
    head_ = FinetuneHead<float>(head_store_, "task_head", backbone_.cfg.self_stack_dim(), n_out,
                                rng);
}

Var<float> MultTaskModel::predict(FwdCtx<float>& ctx, const UtteranceRecord& rec) {
    const FrameMatrix audio = crop_rows(rec.audio.frames, backbone_.cfg.seq_len);
    const FrameMatrix visual = crop_rows(rec.visual.frames, backbone_.cfg.seq_len);
    auto fwd = backbone_.forward(ctx, to_var(ctx.tape, audio), to_var(ctx.tape, visual));
    // last element of the fused output sequence feeds the head
    Var<float> last = row_slice(fwd.fused, fwd.fused.rows() - 1, fwd.fused.rows());
    return head_.forward(ctx, last);
}

std::vector<ParamStore<float>*> MultTaskModel::trainable_stores() {
    if (freeze_) return {&head_store_};
    return {&backbone_.params, &head_store_};
}

std::vector<ParamStore<float>*> MultTaskModel::all_stores() {
    return {&backbone_.params, &head_store_};
}

StoreState capture_store(const ParamStore<float>& store) {
    StoreState s;
    s.step = store.step;
    for (const auto& p : store) s.params.push_back({p.value, p.adam_m, p.adam_v});
    return s;
}

void restore_store(ParamStore<float>& store, const StoreState& state) {
    if (state.params.size() != store.count())
        throw internal_error("restore_store: parameter count mismatch");
    store.step = state.step;
    std::size_t i = 0;
    for (auto& p : store) {
        p.value = state.params[i].value;
        p.adam_m = state.params[i].m;
        p.adam_v = state.params[i].v;
        ++i;
    }
}

std::vector<StoreState> capture_stores(const std::vector<ParamStore<float>*>& stores) {
    std::vector<StoreState> out;
    for (const auto* s : stores) out.push_back(capture_store(*s));
    return out;
}

void restore_stores(const std::vector<ParamStore<float>*>& stores,
                    const std::vector<StoreState>& states) {
    if (stores.size() != states.size()) throw internal_error("restore_stores: count mismatch");
    for (std::size_t i = 0; i < stores.size(); ++i) restore_store(*stores[i], states[i]);
}

Var<float> ccc_objective(const Var<float>& pred_col, const Var<float>& target_col) {
    Var<float> mx = mean_all(pred_col);
    Var<float> my = mean_all(target_col);
    Var<float> xc = sub_bcast(pred_col, mx);
    Var<float> yc = sub_bcast(target_col, my);
    Var<float> vx = mean_all(mul(xc, xc));
    Var<float> vy = mean_all(mul(yc, yc));
    Var<float> cov = mean_all(mul(xc, yc));
    Var<float> dm = sub(mx, my);
    Var<float> den = add_const(add(add(vx, vy), mul(dm, dm)), 1e-8f);
    return div(scale(cov, 2.0f), den);
}

namespace {

struct LabelCheck {
    static void require(const std::vector<UtteranceRecord>& records,
                        const std::vector<std::size_t>& idx, TaskKind task, const char* what) {
        if (idx.empty()) throw config_error(std::string(what) + ": empty split");
        for (std::size_t i : idx) {
            const auto& lab = records[i].labels;
            if (task == TaskKind::classify && !lab.has_class())
                throw config_error(std::string(what) + ": record " + records[i].utterance_id +
                                   " has no class label");
            if (task == TaskKind::regress && !lab.has_regression())
                throw config_error(std::string(what) + ": record " + records[i].utterance_id +
                                   " has no arousal/valence labels");
        }
    }
};

// Batch boundaries; a trailing single-item batch is merged into its
// predecessor because the CCC objective needs batch variance.
std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n, std::size_t bs,
                                                              bool no_singleton) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t off = 0; off < n; off += bs) out.push_back({off, std::min(n, off + bs)});
    if (no_singleton && out.size() >= 2 && out.back().second - out.back().first < 2) {
        out[out.size() - 2].second = out.back().second;
        out.pop_back();
    }
    return out;
}

}  // namespace

EvalResult evaluate(SequenceModel<float>& model, const std::vector<UtteranceRecord>& records,
                    const std::vector<std::size_t>& indices, TaskKind task) {
    LabelCheck::require(records, indices, task, "evaluate");
    EvalResult out;
    out.report.sample_count = indices.size();
    if (task == TaskKind::classify) {
        out.report.task = "classify";
        std::vector<int> preds, truths;
        double ce = 0.0;
        for (std::size_t idx : indices) {
            Tape<float> tape;
            FwdCtx<float> ctx{tape};
            ctx.grads = false;
            Var<float> logits = model.predict(ctx, records[idx]);
            const auto& z = logits.value();
            const std::size_t pred =
                std::max_element(z.begin(), z.end()) - z.begin();
            preds.push_back(static_cast<int>(pred));
            truths.push_back(*records[idx].labels.cls);
            ce += cross_entropy_logits(logits, static_cast<std::size_t>(*records[idx].labels.cls))
                      .item();
        }
        out.report.accuracy = accuracy(preds, truths);
        out.mean_loss = ce / static_cast<double>(indices.size());
    } else {
        out.report.task = "regress";
        std::vector<double> pa, pv, ta, tv;
        for (std::size_t idx : indices) {
            Tape<float> tape;
            FwdCtx<float> ctx{tape};
            ctx.grads = false;
            Var<float> y = model.predict(ctx, records[idx]);
            if (y.size() != 2)
                throw internal_error("evaluate: regression output must have 2 targets");
            pa.push_back(y.value()[0]);
            pv.push_back(y.value()[1]);
            ta.push_back(*records[idx].labels.arousal);
            tv.push_back(*records[idx].labels.valence);
        }
        out.report.targets.push_back({"arousal", mae(pa, ta), ccc(pa, ta)});
        out.report.targets.push_back({"valence", mae(pv, tv), ccc(pv, tv)});
        out.mean_loss =
            1.0 - 0.5 * (out.report.targets[0].ccc + out.report.targets[1].ccc);
    }
    return out;
}

FinetuneResult finetune(SequenceModel<float>& model, const std::vector<UtteranceRecord>& records,
                        const std::vector<std::size_t>& train_idx,
                        const std::vector<std::size_t>& val_idx, TaskKind task,
                        const FinetuneConfig& cfg, std::ostream* csv) {
    cfg.schedule.validate();
    LabelCheck::require(records, train_idx, task, "finetune train");
    LabelCheck::require(records, val_idx, task, "finetune validation");

    const auto ranges0 = batch_ranges(train_idx.size(), cfg.schedule.batch_size,
                                      task == TaskKind::regress && !cfg.use_mse);
    const std::size_t total_steps = cfg.schedule.epochs * ranges0.size();
    std::size_t step = 0;

    FinetuneResult result;
    std::vector<StoreState> best = capture_stores(model.all_stores());
    double best_metric = -std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;
    double last_lr = 0.0;

    for (std::size_t epoch = 1; epoch <= cfg.schedule.epochs; ++epoch) {
        std::vector<std::size_t> order = train_idx;
        Rng shuffle_rng(mix64(cfg.seed, 0x46540000ull, epoch));
        shuffle_rng.shuffle(order);
        const auto ranges = batch_ranges(order.size(), cfg.schedule.batch_size,
                                         task == TaskKind::regress && !cfg.use_mse);

        double epoch_loss = 0.0;
        for (const auto& [off, end] : ranges) {
            Tape<float> tape;
            Rng drop_rng(mix64(cfg.seed, 0x46442200ull, step + 1));
            FwdCtx<float> ctx{tape};
            ctx.rng = &drop_rng;
            ctx.train = true;
            ctx.dropout = model.dropout_rate();

            Var<float> loss;
            if (task == TaskKind::classify) {
                Var<float> sum;
                for (std::size_t i = off; i < end; ++i) {
                    const auto& rec = records[order[i]];
                    Var<float> ce = cross_entropy_logits(
                        model.predict(ctx, rec), static_cast<std::size_t>(*rec.labels.cls));
                    sum = sum.defined() ? add(sum, ce) : ce;
                }
                loss = scale(sum, 1.0f / static_cast<float>(end - off));
            } else {
                std::vector<Var<float>> rows;
                std::vector<float> targets;
                for (std::size_t i = off; i < end; ++i) {
                    const auto& rec = records[order[i]];
                    rows.push_back(model.predict(ctx, rec));
                    targets.push_back(static_cast<float>(*rec.labels.arousal));
                    targets.push_back(static_cast<float>(*rec.labels.valence));
                }
                Var<float> pred = concat_rows(rows);
                Var<float> target = tape.constant({end - off, 2}, std::move(targets));
                if (cfg.use_mse) {
                    Var<float> d = sub(pred, target);
                    loss = mean_all(mul(d, d));
                } else {
                    Var<float> ca = ccc_objective(col_slice(pred, 0, 1), col_slice(target, 0, 1));
                    Var<float> cv = ccc_objective(col_slice(pred, 1, 2), col_slice(target, 1, 2));
                    loss = add_const(scale(add(ca, cv), -0.5f), 1.0f);
                }
            }
            if (!std::isfinite(loss.item()))
                throw internal_error("finetune: loss not finite at step " + std::to_string(step));
            tape.backward(loss);
            ++step;
            last_lr = lr_at(cfg.schedule, step, total_steps);
            for (auto* store : model.trainable_stores()) adam_step(*store, last_lr);
            epoch_loss += loss.item();
        }
        epoch_loss /= static_cast<double>(ranges.size());

        const EvalResult val = evaluate(model, records, val_idx, task);
        const double metric = task == TaskKind::classify
                                  ? *val.report.accuracy
                                  : 0.5 * (val.report.targets[0].ccc + val.report.targets[1].ccc);
        result.history.push_back({epoch, "train", epoch_loss, epoch_loss, last_lr});
        result.history.push_back({epoch, "validation", val.mean_loss, metric, last_lr});
        if (csv) {
            write_csv_row(*csv, result.history[result.history.size() - 2]);
            write_csv_row(*csv, result.history.back());
        }
        result.last_epoch = epoch;
        if (metric > best_metric) {
            best_metric = metric;
            best = capture_stores(model.all_stores());
            result.best_epoch = epoch;
            since_best = 0;
        } else if (++since_best >= cfg.schedule.patience) {
            break;
        }
    }
    result.best_val_metric = best_metric;
    restore_stores(model.all_stores(), best);
    return result;
}

}  // namespace mmt
