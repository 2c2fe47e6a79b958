#pragma once

#include <functional>

#include "mmt/training.hpp"

namespace mmt {

// Standard GRU recurrence; the hidden state stays in (-1,1) because it is a
// convex mix of the previous state and a tanh candidate.
template <typename T>
struct GruCell {
    std::size_t input_dim = 0;
    std::size_t hidden_dim = 0;
    Param<T>*wz = nullptr, *uz = nullptr, *bz = nullptr;
    Param<T>*wr = nullptr, *ur = nullptr, *br = nullptr;
    Param<T>*wc = nullptr, *uc = nullptr, *bc = nullptr;

    GruCell() = default;
    GruCell(ParamStore<T>& ps, const std::string& name, std::size_t din, std::size_t hidden,
            Rng& rng)
        : input_dim(din), hidden_dim(hidden) {
        auto make = [&](const char* gate, Param<T>*& w, Param<T>*& u, Param<T>*& b) {
            w = &ps.create(name + "." + gate + ".w", {din, hidden});
            u = &ps.create(name + "." + gate + ".u", {hidden, hidden});
            b = &ps.create(name + "." + gate + ".b", {hidden});
            init_uniform_fan_in(*w, din, rng);
            init_uniform_fan_in(*u, hidden, rng);
        };
        make("update", wz, uz, bz);
        make("reset", wr, ur, br);
        make("candidate", wc, uc, bc);
    }

    // x: [1, input_dim], h: [1, hidden_dim] -> [1, hidden_dim]
    Var<T> step(FwdCtx<T>& ctx, const Var<T>& x, const Var<T>& h) const {
        Var<T> z = sigmoid(add_bias(add(matmul(x, ctx.p(*wz)), matmul(h, ctx.p(*uz))), ctx.p(*bz)));
        Var<T> r = sigmoid(add_bias(add(matmul(x, ctx.p(*wr)), matmul(h, ctx.p(*ur))), ctx.p(*br)));
        Var<T> c = tanh_op(
            add_bias(add(matmul(x, ctx.p(*wc)), matmul(mul(r, h), ctx.p(*uc))), ctx.p(*bc)));
        Var<T> keep = add_const(scale(z, T(-1)), T(1));  // 1 - z
        return add(mul(keep, h), mul(z, c));
    }

    static std::size_t param_count(std::size_t din, std::size_t hidden) {
        return 3 * (din * hidden + hidden * hidden + hidden);
    }
};

template <typename T>
struct BiGruLayer {
    GruCell<T> fwd, bwd;

    BiGruLayer() = default;
    BiGruLayer(ParamStore<T>& ps, const std::string& name, std::size_t din, std::size_t hidden,
               Rng& rng) {
        fwd = GruCell<T>(ps, name + ".fwd", din, hidden, rng);
        bwd = GruCell<T>(ps, name + ".bwd", din, hidden, rng);
    }

    struct Output {
        std::vector<Var<T>> fwd_states;  // state after consuming row t, t = 0..T-1
        std::vector<Var<T>> bwd_states;  // state after consuming row t, scanning T-1..0
    };

    Output run(FwdCtx<T>& ctx, const Var<T>& x) const {
        const std::size_t Tn = x.shape()[0];
        if (Tn == 0) throw shape_error("gru: empty sequence");
        Output out;
        out.fwd_states.resize(Tn);
        out.bwd_states.resize(Tn);
        Var<T> h = ctx.tape.make({1, fwd.hidden_dim}, false);
        for (std::size_t t = 0; t < Tn; ++t) {
            h = fwd.step(ctx, row_slice(x, t, t + 1), h);
            out.fwd_states[t] = h;
        }
        h = ctx.tape.make({1, bwd.hidden_dim}, false);
        for (std::size_t t = Tn; t-- > 0;) {
            h = bwd.step(ctx, row_slice(x, t, t + 1), h);
            out.bwd_states[t] = h;
        }
        return out;
    }

    // [T, 2H]: per-step forward and backward states, for stacking.
    Var<T> sequence(FwdCtx<T>& ctx, const Var<T>& x) const {
        auto out = run(ctx, x);
        std::vector<Var<T>> rows;
        rows.reserve(out.fwd_states.size());
        for (std::size_t t = 0; t < out.fwd_states.size(); ++t)
            rows.push_back(concat_cols<T>({out.fwd_states[t], out.bwd_states[t]}));
        return concat_rows(rows);
    }

    // [1, 2H]: last forward state ++ first backward state.
    Var<T> final_state(FwdCtx<T>& ctx, const Var<T>& x) const {
        auto out = run(ctx, x);
        return concat_cols<T>({out.fwd_states.back(), out.bwd_states.front()});
    }
};

// Bidirectional GRU encoder, optionally stacked.
template <typename T>
struct BiGruEncoder {
    std::vector<BiGruLayer<T>> layers;
    std::size_t hidden = 0;

    BiGruEncoder() = default;
    BiGruEncoder(ParamStore<T>& ps, const std::string& name, std::size_t din, std::size_t hidden_,
                 std::size_t n_layers, Rng& rng)
        : hidden(hidden_) {
        if (n_layers == 0) throw config_error("gru encoder: needs at least one layer");
        std::size_t in = din;
        for (std::size_t l = 0; l < n_layers; ++l) {
            layers.emplace_back(ps, name + ".layer" + std::to_string(l), in, hidden_, rng);
            in = 2 * hidden_;
        }
    }

    Var<T> encode(FwdCtx<T>& ctx, const Var<T>& x) const {
        Var<T> h = x;
        for (std::size_t l = 0; l + 1 < layers.size(); ++l) h = layers[l].sequence(ctx, h);
        return layers.back().final_state(ctx, h);  // [1, 2H]
    }

    static std::size_t param_count(std::size_t din, std::size_t hidden, std::size_t n_layers) {
        std::size_t n = 2 * GruCell<T>::param_count(din, hidden);
        for (std::size_t l = 1; l < n_layers; ++l)
            n += 2 * GruCell<T>::param_count(2 * hidden, hidden);
        return n;
    }
};

inline std::size_t finetune_head_param_count(std::size_t dim, std::size_t n_out) {
    return 2 * (dim * dim + dim) + dim * n_out + n_out;
}

// ---- comparison models ----

struct GruModelConfig {
    std::size_t audio_dim = 32;
    std::size_t visual_dim = 17;
    std::size_t hidden = 16;
    std::size_t n_layers = 1;
    std::size_t n_out = 2;
    double dropout = 0.2;
};

// Early fusion: framewise concatenation through one bidirectional GRU.
template <typename T>
class EfGruModel : public SequenceModel<T> {
public:
    EfGruModel(const GruModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        Rng rng(mix64(seed, 0x65666772ull));
        enc_ = BiGruEncoder<T>(store_, "ef_gru", cfg.audio_dim + cfg.visual_dim, cfg.hidden,
                               cfg.n_layers, rng);
        head_ = FinetuneHead<T>(store_, "head", 2 * cfg.hidden, cfg.n_out, rng);
    }

    Var<T> predict(FwdCtx<T>& ctx, const UtteranceRecord& rec) override {
        if (rec.audio.frames.rows != rec.visual.frames.rows)
            throw shape_error("ef_gru: modalities misaligned (" +
                              std::to_string(rec.audio.frames.rows) + " vs " +
                              std::to_string(rec.visual.frames.rows) + " frames)");
        const std::size_t Tn = rec.audio.frames.rows;
        FrameMatrix joint(Tn, cfg_.audio_dim + cfg_.visual_dim);
        for (std::size_t t = 0; t < Tn; ++t) {
            std::copy_n(rec.audio.frames.row(t), cfg_.audio_dim, joint.row(t));
            std::copy_n(rec.visual.frames.row(t), cfg_.visual_dim, joint.row(t) + cfg_.audio_dim);
        }
        Var<T> z = ctx.drop(enc_.encode(ctx, to_var(ctx.tape, joint)));
        return head_.forward(ctx, z);
    }

    std::vector<ParamStore<T>*> trainable_stores() override { return {&store_}; }
    std::vector<ParamStore<T>*> all_stores() override { return {&store_}; }
    double dropout_rate() const override { return cfg_.dropout; }
    std::size_t parameter_count() const { return store_.total_scalars(); }

    static std::size_t expected_param_count(const GruModelConfig& cfg) {
        return BiGruEncoder<T>::param_count(cfg.audio_dim + cfg.visual_dim, cfg.hidden,
                                            cfg.n_layers) +
               finetune_head_param_count(2 * cfg.hidden, cfg.n_out);
    }

private:
    GruModelConfig cfg_;
    ParamStore<T> store_;
    BiGruEncoder<T> enc_;
    FinetuneHead<T> head_;
};

// Late fusion: one bidirectional GRU per modality, final states concatenated.
template <typename T>
class LfGruModel : public SequenceModel<T> {
public:
    LfGruModel(const GruModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        Rng rng(mix64(seed, 0x6c666772ull));
        enc_a_ = BiGruEncoder<T>(store_, "lf_gru.audio", cfg.audio_dim, cfg.hidden, cfg.n_layers,
                                 rng);
        enc_v_ = BiGruEncoder<T>(store_, "lf_gru.visual", cfg.visual_dim, cfg.hidden,
                                 cfg.n_layers, rng);
        head_ = FinetuneHead<T>(store_, "head", 4 * cfg.hidden, cfg.n_out, rng);
    }

    Var<T> predict(FwdCtx<T>& ctx, const UtteranceRecord& rec) override {
        if (rec.audio.frames.rows != rec.visual.frames.rows)
            throw shape_error("lf_gru: modalities misaligned");
        Var<T> za = enc_a_.encode(ctx, to_var(ctx.tape, rec.audio.frames));
        Var<T> zv = enc_v_.encode(ctx, to_var(ctx.tape, rec.visual.frames));
        return head_.forward(ctx, ctx.drop(concat_cols<T>({za, zv})));
    }

    std::vector<ParamStore<T>*> trainable_stores() override { return {&store_}; }
    std::vector<ParamStore<T>*> all_stores() override { return {&store_}; }
    double dropout_rate() const override { return cfg_.dropout; }
    std::size_t parameter_count() const { return store_.total_scalars(); }

    static std::size_t expected_param_count(const GruModelConfig& cfg) {
        return BiGruEncoder<T>::param_count(cfg.audio_dim, cfg.hidden, cfg.n_layers) +
               BiGruEncoder<T>::param_count(cfg.visual_dim, cfg.hidden, cfg.n_layers) +
               finetune_head_param_count(4 * cfg.hidden, cfg.n_out);
    }

private:
    GruModelConfig cfg_;
    ParamStore<T> store_;
    BiGruEncoder<T> enc_a_, enc_v_;
    FinetuneHead<T> head_;
};

// Fused tensor of one-appended static vectors: [za;1] (x) [zv;1], flattened.
template <typename T>
Var<T> tfn_fuse(Tape<T>& tape, const Var<T>& za_row, const Var<T>& zv_row) {
    Var<T> one = tape.constant({1, 1}, {T(1)});
    Var<T> u = concat_cols<T>({za_row, one});
    Var<T> v = concat_cols<T>({zv_row, one});
    Var<T> outer = matmul(transpose(u), v);  // [Da+1, Dv+1]
    return reshape(outer, {1, u.cols() * v.cols()});
}

struct TfnConfig {
    std::size_t audio_dim = 32;
    std::size_t visual_dim = 17;
    std::size_t hidden = 32;
    std::size_t n_out = 2;
    double dropout = 0.1;
};

// Static-input model: per-modality temporal means fused by outer product.
template <typename T>
class TfnModel : public SequenceModel<T> {
public:
    TfnModel(const TfnConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        Rng rng(mix64(seed, 0x74666e00ull));
        const std::size_t fused = (cfg.audio_dim + 1) * (cfg.visual_dim + 1);
        fc1_ = AffineLayer<T>(store_, "tfn.fc1", fused, cfg.hidden, rng);
        fc2_ = AffineLayer<T>(store_, "tfn.fc2", cfg.hidden, cfg.n_out, rng);
    }

    Var<T> predict(FwdCtx<T>& ctx, const UtteranceRecord& rec) override {
        Var<T> za = to_var(ctx.tape, temporal_mean(rec.audio.frames));
        Var<T> zv = to_var(ctx.tape, temporal_mean(rec.visual.frames));
        Var<T> fused = tfn_fuse(ctx.tape, za, zv);
        return fc2_.forward(ctx, ctx.drop(relu(fc1_.forward(ctx, fused))));
    }

    std::vector<ParamStore<T>*> trainable_stores() override { return {&store_}; }
    std::vector<ParamStore<T>*> all_stores() override { return {&store_}; }
    double dropout_rate() const override { return cfg_.dropout; }
    std::size_t parameter_count() const { return store_.total_scalars(); }

    static FrameMatrix temporal_mean(const FrameMatrix& m) {
        if (m.rows == 0) throw shape_error("temporal_mean: empty sequence");
        FrameMatrix out(1, m.cols);
        for (std::size_t t = 0; t < m.rows; ++t)
            for (std::size_t d = 0; d < m.cols; ++d) out.at(0, d) += m.at(t, d);
        for (std::size_t d = 0; d < m.cols; ++d)
            out.at(0, d) /= static_cast<float>(m.rows);
        return out;
    }

private:
    TfnConfig cfg_;
    ParamStore<T> store_;
    AffineLayer<T> fc1_, fc2_;
};

// ---- parameter-budget solver ----

struct GruBudget {
    std::size_t hidden = 0;
    std::size_t n_layers = 1;
    std::size_t param_count = 0;
    bool within_tolerance = false;
};

// Finds the hidden size (layers second) whose parameter count lands closest
// to the target; counts are monotone in the hidden size.
GruBudget solve_gru_budget(std::size_t target, double tolerance,
                           const std::function<std::size_t(std::size_t, std::size_t)>& count,
                           std::size_t max_hidden = 8192);

}  // namespace mmt
