#pragma once

#include <optional>
#include <unordered_map>

#include "mmt/adam.hpp"
#include "mmt/tensor.hpp"

namespace mmt {

// Per-forward context: one tape, one RNG for dropout, and a cache so a
// parameter leased several times in one pass becomes a single leaf.
template <typename T>
struct FwdCtx {
    explicit FwdCtx(Tape<T>& t) : tape(t) {}

    Tape<T>& tape;
    Rng* rng = nullptr;
    bool train = false;
    double dropout = 0.0;
    bool grads = true;  // false = inference only, parameters enter as constants

    Var<T> p(Param<T>& param) {
        auto it = cache_.find(&param);
        if (it != cache_.end()) return it->second;
        Var<T> v = grads ? tape.leaf(param) : tape.constant(param.shape, param.value);
        cache_.emplace(&param, v);
        return v;
    }

    Var<T> drop(const Var<T>& x) {
        if (!train || dropout == 0.0) return x;
        if (!rng) throw internal_error("dropout requested without an RNG");
        return mmt::dropout(x, dropout, *rng, true);
    }

private:
    std::unordered_map<const Param<T>*, Var<T>> cache_;
};

template <typename T>
struct AffineLayer {
    Param<T>* w = nullptr;
    Param<T>* b = nullptr;

    AffineLayer() = default;
    AffineLayer(ParamStore<T>& ps, const std::string& name, std::size_t din, std::size_t dout,
                Rng& rng) {
        w = &ps.create(name + ".w", {din, dout});
        b = &ps.create(name + ".b", {dout});
        init_uniform_fan_in(*w, din, rng);
    }

    Var<T> forward(FwdCtx<T>& ctx, const Var<T>& x) const {
        return add_bias(matmul(x, ctx.p(*w)), ctx.p(*b));
    }
};

template <typename T>
struct LayerNormLayer {
    Param<T>* gain = nullptr;
    Param<T>* bias = nullptr;

    LayerNormLayer() = default;
    LayerNormLayer(ParamStore<T>& ps, const std::string& name, std::size_t dim) {
        gain = &ps.create(name + ".gain", {dim});
        bias = &ps.create(name + ".bias", {dim});
        init_fill(*gain, T(1));
    }

    Var<T> forward(FwdCtx<T>& ctx, const Var<T>& x) const {
        return layernorm(x, ctx.p(*gain), ctx.p(*bias));
    }
};

// Sinusoidal table: PE[pos, 2i] = sin(pos / 10000^(2i/d)), PE[pos, 2i+1] = cos(...).
template <typename T>
class PositionalEncoding {
public:
    PositionalEncoding() = default;
    PositionalEncoding(std::size_t max_len, std::size_t dim) : max_len_(max_len), dim_(dim) {
        table_.resize(max_len * dim);
        for (std::size_t pos = 0; pos < max_len; ++pos)
            for (std::size_t i = 0; i < dim; ++i) {
                const double exponent = static_cast<double>(2 * (i / 2)) / static_cast<double>(dim);
                const double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
                table_[pos * dim + i] = static_cast<T>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
            }
    }

    Var<T> apply(FwdCtx<T>& ctx, const Var<T>& x) const {
        if (x.shape().size() != 2 || x.shape()[1] != dim_)
            throw shape_error("positional encoding: expected [T," + std::to_string(dim_) +
                              "], got " + shape_str(x.shape()));
        const std::size_t Tn = x.shape()[0];
        if (Tn > max_len_)
            throw config_error("positional encoding: sequence length " + std::to_string(Tn) +
                               " exceeds table length " + std::to_string(max_len_));
        std::vector<T> rows(table_.begin(), table_.begin() + Tn * dim_);
        return add(x, ctx.tape.constant({Tn, dim_}, std::move(rows)));
    }

    T at(std::size_t pos, std::size_t i) const { return table_[pos * dim_ + i]; }
    std::size_t max_len() const { return max_len_; }

private:
    std::size_t max_len_ = 0;
    std::size_t dim_ = 0;
    std::vector<T> table_;
};

// Optional instrumentation filled during forward.
template <typename T>
struct AttentionTrace {
    // One row-stochastic [Tq,Tk] matrix per head.
    std::vector<std::vector<T>> head_weights;
    std::size_t tq = 0, tk = 0;
};

template <typename T>
struct MultiheadAttention {
    std::size_t dim = 0;
    std::size_t heads = 0;
    AffineLayer<T> q, k, v, o;

    MultiheadAttention() = default;
    MultiheadAttention(ParamStore<T>& ps, const std::string& name, std::size_t dim_,
                       std::size_t heads_, Rng& rng)
        : dim(dim_), heads(heads_) {
        if (heads == 0 || dim % heads != 0)
            throw config_error("attention: model dim " + std::to_string(dim) +
                               " not divisible by heads " + std::to_string(heads));
        q = AffineLayer<T>(ps, name + ".q", dim, dim, rng);
        k = AffineLayer<T>(ps, name + ".k", dim, dim, rng);
        v = AffineLayer<T>(ps, name + ".v", dim, dim, rng);
        o = AffineLayer<T>(ps, name + ".o", dim, dim, rng);
    }

    // q_seq: [Tq,D], kv_seq: [Tk,D]; mask (optional) is [Tq,Tk], true = blocked.
    Var<T> forward(FwdCtx<T>& ctx, const Var<T>& q_seq, const Var<T>& kv_seq,
                   const std::vector<bool>* mask = nullptr,
                   AttentionTrace<T>* trace = nullptr) const {
        const std::size_t Tq = q_seq.shape()[0], Tk = kv_seq.shape()[0];
        if (q_seq.shape()[1] != dim || kv_seq.shape()[1] != dim)
            throw shape_error("attention: inputs " + shape_str(q_seq.shape()) + ", " +
                              shape_str(kv_seq.shape()) + " do not match model dim " +
                              std::to_string(dim));
        Var<T> mask_bias;
        if (mask) {
            if (mask->size() != Tq * Tk)
                throw shape_error("attention: mask size " + std::to_string(mask->size()) +
                                  " != Tq*Tk " + std::to_string(Tq * Tk));
            std::vector<T> bias(Tq * Tk, T(0));
            for (std::size_t i = 0; i < Tq; ++i) {
                bool any_open = false;
                for (std::size_t j = 0; j < Tk; ++j) {
                    if ((*mask)[i * Tk + j]) bias[i * Tk + j] = T(-1e30);
                    else any_open = true;
                }
                if (!any_open)
                    throw internal_error("attention: query row " + std::to_string(i) +
                                         " has every key masked out");
            }
            mask_bias = ctx.tape.constant({Tq, Tk}, std::move(bias));
        }

        const std::size_t dh = dim / heads;
        const T att_scale = T(1.0 / std::sqrt(static_cast<double>(dh)));
        Var<T> Q = q.forward(ctx, q_seq);
        Var<T> K = k.forward(ctx, kv_seq);
        Var<T> V = v.forward(ctx, kv_seq);

        if (trace) {
            trace->head_weights.clear();
            trace->tq = Tq;
            trace->tk = Tk;
        }
        std::vector<Var<T>> head_outs;
        head_outs.reserve(heads);
        for (std::size_t h = 0; h < heads; ++h) {
            Var<T> Qh = col_slice(Q, h * dh, (h + 1) * dh);
            Var<T> Kh = col_slice(K, h * dh, (h + 1) * dh);
            Var<T> Vh = col_slice(V, h * dh, (h + 1) * dh);
            Var<T> scores = scale(matmul(Qh, transpose(Kh)), att_scale);
            if (mask_bias.defined()) scores = add(scores, mask_bias);
            Var<T> weights = softmax_rows(scores);
            if (trace) trace->head_weights.push_back(weights.value());
            weights = ctx.drop(weights);
            head_outs.push_back(matmul(weights, Vh));
        }
        return o.forward(ctx, concat_cols(head_outs));
    }
};

// Pre-norm residual unit: x + Drop(Attn(LN1(x), LN1(kv))), then
// h + Drop(FF(LN2(h))). In cross-modal use kv is the other modality's
// layer-0 sequence; in self-attention use kv == x.
template <typename T>
struct TransformerBlock {
    std::size_t dim = 0;
    MultiheadAttention<T> attn;
    LayerNormLayer<T> ln_attn, ln_ff;
    AffineLayer<T> ff_in, ff_out;

    TransformerBlock() = default;
    TransformerBlock(ParamStore<T>& ps, const std::string& name, std::size_t dim_,
                     std::size_t ff_dim, std::size_t heads, Rng& rng)
        : dim(dim_) {
        attn = MultiheadAttention<T>(ps, name + ".attn", dim, heads, rng);
        ln_attn = LayerNormLayer<T>(ps, name + ".ln_attn", dim);
        ln_ff = LayerNormLayer<T>(ps, name + ".ln_ff", dim);
        ff_in = AffineLayer<T>(ps, name + ".ff_in", dim, ff_dim, rng);
        ff_out = AffineLayer<T>(ps, name + ".ff_out", ff_dim, dim, rng);
    }

    Var<T> forward(FwdCtx<T>& ctx, const Var<T>& x, const Var<T>& kv,
                   const std::vector<bool>* mask = nullptr,
                   AttentionTrace<T>* trace = nullptr) const {
        if (x.shape().back() != dim || kv.shape().back() != dim)
            throw shape_error("transformer block: inputs " + shape_str(x.shape()) + ", " +
                              shape_str(kv.shape()) + " vs dim " + std::to_string(dim));
        const bool self_mode = kv.data() == x.data();
        Var<T> qn = ln_attn.forward(ctx, x);
        Var<T> kvn = self_mode ? qn : ln_attn.forward(ctx, kv);
        Var<T> attended = ctx.drop(attn.forward(ctx, qn, kvn, mask, trace));
        Var<T> h = add(x, attended);
        Var<T> ffn = ff_out.forward(ctx, ctx.drop(relu(ff_in.forward(ctx, ln_ff.forward(ctx, h)))));
        return add(h, ctx.drop(ffn));
    }
};

}  // namespace mmt
