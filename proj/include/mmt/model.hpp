#pragma once

#include <map>

#include "mmt/attention.hpp"

namespace mmt {

// Architecture hyperparameters. BASE/LARGE follow the published configs;
// "tiny" is a smoke-test preset for CI and desk-scale training.
struct ModelConfig {
    std::string preset = "custom";
    std::size_t d_model = 8;
    std::size_t n_heads = 2;
    std::size_t n_cross_blocks = 1;  // per direction
    std::size_t n_self_blocks = 1;
    std::size_t ff_dim_cross = 16;
    std::size_t ff_dim_self = 32;
    std::size_t conv_kernel = 1;
    double dropout = 0.1;
    std::size_t seq_len = 10;
    std::size_t audio_feature_dim = 32;
    std::size_t visual_feature_dim = 17;
    bool pe_on_source = true;        // positional encoding also added to the K/V stream
    bool cross_modal = true;         // false = ablation: per-stream self-attention
    std::string fusion = "concat";   // concat (self stack at 2*d_model) | project (back to d_model)

    std::size_t self_stack_dim() const { return fusion == "project" ? d_model : 2 * d_model; }

    static ModelConfig tiny() {
        ModelConfig c;
        c.preset = "tiny";
        return c;
    }

    static ModelConfig base() {
        ModelConfig c;
        c.preset = "base";
        c.d_model = 288;
        c.n_heads = 12;
        c.n_cross_blocks = 6;
        c.n_self_blocks = 6;
        c.ff_dim_cross = 1152;
        c.ff_dim_self = 2304;
        c.conv_kernel = 1;
        c.dropout = 0.1;
        c.seq_len = 50;
        c.audio_feature_dim = 512;
        c.visual_feature_dim = 17;
        return c;
    }

    static ModelConfig large() {
        ModelConfig c = base();
        c.preset = "large";
        c.d_model = 576;
        c.n_cross_blocks = 8;
        c.n_self_blocks = 8;
        c.ff_dim_cross = 1536;
        c.ff_dim_self = 3072;
        return c;
    }

    void validate() const {
        auto fail = [](const std::string& what) { throw config_error("model config: " + what); };
        if (d_model == 0) fail("d_model must be positive");
        if (n_heads == 0) fail("n_heads must be positive");
        if (d_model % n_heads != 0)
            fail("d_model (" + std::to_string(d_model) + ") not divisible by n_heads (" +
                 std::to_string(n_heads) + ")");
        if (self_stack_dim() % n_heads != 0)
            fail("self_stack_dim (" + std::to_string(self_stack_dim()) +
                 ") not divisible by n_heads (" + std::to_string(n_heads) + ")");
        if (conv_kernel % 2 == 0)
            fail("conv_kernel must be odd, got " + std::to_string(conv_kernel));
        if (dropout < 0.0 || dropout >= 1.0) fail("dropout must be in [0,1)");
        if (seq_len == 0) fail("seq_len must be positive");
        if (audio_feature_dim == 0 || visual_feature_dim == 0)
            fail("feature dims must be positive");
        if (n_cross_blocks == 0 || n_self_blocks == 0) fail("block counts must be positive");
        if (fusion != "concat" && fusion != "project")
            fail("fusion must be 'concat' or 'project', got '" + fusion + "'");
    }
};

// Closed-form scalar count for a config, without allocating the model.
// Cross-checked against built models in the tests; used to report the LARGE
// variants whose weights would be pointlessly large to materialize.
inline std::size_t expected_parameter_count(const ModelConfig& cfg) {
    auto affine = [](std::size_t din, std::size_t dout) { return din * dout + dout; };
    auto block = [&](std::size_t dim, std::size_t ff) {
        return 4 * affine(dim, dim)              // q, k, v, o projections
               + affine(dim, ff) + affine(ff, dim)
               + 2 * 2 * dim;                    // two pre-norms
    };
    const std::size_t d = cfg.d_model;
    const std::size_t fused = cfg.self_stack_dim();
    std::size_t n = 0;
    n += cfg.conv_kernel * cfg.audio_feature_dim * d + d;
    n += cfg.conv_kernel * cfg.visual_feature_dim * d + d;
    n += 2 * cfg.n_cross_blocks * block(d, cfg.ff_dim_cross);
    n += 2 * 2 * d;  // per-branch final norms
    if (cfg.fusion == "project") n += affine(2 * d, d);
    n += cfg.n_self_blocks * block(fused, cfg.ff_dim_self);
    n += 2 * fused;  // self-stack final norm
    for (std::size_t out_dim : {cfg.audio_feature_dim, cfg.visual_feature_dim})
        n += affine(fused, fused) + 2 * fused + affine(fused, out_dim);  // recon head
    return n;
}

template <typename T>
struct ConvLayer {
    Param<T>* kernel = nullptr;
    Param<T>* bias = nullptr;

    ConvLayer() = default;
    ConvLayer(ParamStore<T>& ps, const std::string& name, std::size_t k, std::size_t din,
              std::size_t dout, Rng& rng) {
        kernel = &ps.create(name + ".kernel", {k, din, dout});
        bias = &ps.create(name + ".bias", {dout});
        init_uniform_fan_in(*kernel, k * din, rng);
    }

    Var<T> forward(FwdCtx<T>& ctx, const Var<T>& x) const {
        return conv1d_temporal(x, ctx.p(*kernel), ctx.p(*bias));
    }
};

// Reconstruction head: hidden transform + output projection back to the
// original feature dimension.
template <typename T>
struct ReconHead {
    AffineLayer<T> transform;
    LayerNormLayer<T> norm;
    AffineLayer<T> out;

    ReconHead() = default;
    ReconHead(ParamStore<T>& ps, const std::string& name, std::size_t hidden, std::size_t out_dim,
              Rng& rng) {
        transform = AffineLayer<T>(ps, name + ".transform", hidden, hidden, rng);
        norm = LayerNormLayer<T>(ps, name + ".norm", hidden);
        out = AffineLayer<T>(ps, name + ".out", hidden, out_dim, rng);
    }

    Var<T> forward(FwdCtx<T>& ctx, const Var<T>& x) const {
        return out.forward(ctx, norm.forward(ctx, relu(transform.forward(ctx, x))));
    }
};

// Task head for fine-tuning: residual block over the final fused frame,
// then a fully-connected map to the class logits or regression targets.
template <typename T>
struct FinetuneHead {
    AffineLayer<T> fc1, fc2, out;

    FinetuneHead() = default;
    FinetuneHead(ParamStore<T>& ps, const std::string& name, std::size_t dim, std::size_t n_out,
                 Rng& rng) {
        fc1 = AffineLayer<T>(ps, name + ".fc1", dim, dim, rng);
        fc2 = AffineLayer<T>(ps, name + ".fc2", dim, dim, rng);
        out = AffineLayer<T>(ps, name + ".out", dim, n_out, rng);
    }

    Var<T> forward(FwdCtx<T>& ctx, const Var<T>& z) const {
        Var<T> r = add(z, fc2.forward(ctx, ctx.drop(relu(fc1.forward(ctx, z)))));
        return out.forward(ctx, r);
    }
};

// Instrumentation: raw identities of the K/V inputs each cross block saw,
// so tests can verify every layer consumed the layer-0 sequence.
template <typename T>
struct ForwardTrace {
    const TensorData<T>* audio_low = nullptr;
    const TensorData<T>* visual_low = nullptr;
    std::vector<const TensorData<T>*> kv_audio_branch;   // V->A blocks
    std::vector<const TensorData<T>*> kv_visual_branch;  // A->V blocks
};

template <typename T>
struct MultForward {
    Var<T> recon_audio;   // [T, Da]
    Var<T> recon_visual;  // [T, Dv]
    Var<T> fused;         // [T, self_stack_dim]
};

// The two-modality Multimodal Transformer: per-modality temporal conv,
// positional encoding, V->A and A->V cross-modal stacks whose K/V always
// come from the other modality's layer-0 sequence, framewise fusion, a
// self-attention stack, and per-modality reconstruction heads.
template <typename T>
class MultModel {
public:
    ModelConfig cfg;
    ParamStore<T> params;

    MultModel() = default;
    MultModel(const MultModel&) = delete;
    MultModel& operator=(const MultModel&) = delete;
    MultModel(MultModel&&) = default;
    MultModel& operator=(MultModel&&) = default;

    static MultModel build(const ModelConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        MultModel m;
        m.cfg = cfg;
        Rng rng(mix64(seed, 0x6d6f64656cull));  // independent of any data stream
        const std::size_t d = cfg.d_model;
        const std::size_t fused_dim = cfg.self_stack_dim();
        m.conv_a_ = ConvLayer<T>(m.params, "conv_a", cfg.conv_kernel, cfg.audio_feature_dim, d, rng);
        m.conv_v_ = ConvLayer<T>(m.params, "conv_v", cfg.conv_kernel, cfg.visual_feature_dim, d, rng);
        m.pe_ = PositionalEncoding<T>(cfg.seq_len, d);
        for (std::size_t i = 0; i < cfg.n_cross_blocks; ++i) {
            m.cross_va_.emplace_back(m.params, "cross_va." + std::to_string(i), d,
                                     cfg.ff_dim_cross, cfg.n_heads, rng);
            m.cross_av_.emplace_back(m.params, "cross_av." + std::to_string(i), d,
                                     cfg.ff_dim_cross, cfg.n_heads, rng);
        }
        m.ln_branch_a_ = LayerNormLayer<T>(m.params, "cross_va.final_norm", d);
        m.ln_branch_v_ = LayerNormLayer<T>(m.params, "cross_av.final_norm", d);
        if (cfg.fusion == "project")
            m.fuse_proj_ = AffineLayer<T>(m.params, "fuse_proj", 2 * d, d, rng);
        for (std::size_t i = 0; i < cfg.n_self_blocks; ++i)
            m.self_stack_.emplace_back(m.params, "self_stack." + std::to_string(i), fused_dim,
                                       cfg.ff_dim_self, cfg.n_heads, rng);
        m.ln_self_ = LayerNormLayer<T>(m.params, "self_stack.final_norm", fused_dim);
        m.head_a_ = ReconHead<T>(m.params, "head_a", fused_dim, cfg.audio_feature_dim, rng);
        m.head_v_ = ReconHead<T>(m.params, "head_v", fused_dim, cfg.visual_feature_dim, rng);
        return m;
    }

    // audio: [T, Da], visual: [T, Dv]; both modalities aligned to the same T.
    MultForward<T> forward(FwdCtx<T>& ctx, const Var<T>& audio, const Var<T>& visual,
                           ForwardTrace<T>* trace = nullptr) const {
        if (audio.shape().size() != 2 || audio.shape()[1] != cfg.audio_feature_dim)
            throw shape_error("forward: audio " + shape_str(audio.shape()) + " vs feature dim " +
                              std::to_string(cfg.audio_feature_dim));
        if (visual.shape().size() != 2 || visual.shape()[1] != cfg.visual_feature_dim)
            throw shape_error("forward: visual " + shape_str(visual.shape()) +
                              " vs feature dim " + std::to_string(cfg.visual_feature_dim));
        if (audio.shape()[0] != visual.shape()[0])
            throw shape_error("forward: modalities misaligned, audio T=" +
                              std::to_string(audio.shape()[0]) + " visual T=" +
                              std::to_string(visual.shape()[0]));
        if (audio.shape()[0] == 0 || audio.shape()[0] > cfg.seq_len)
            throw shape_error("forward: T=" + std::to_string(audio.shape()[0]) +
                              " outside [1, seq_len=" + std::to_string(cfg.seq_len) + "]");

        Var<T> ca = conv_a_.forward(ctx, audio);
        Var<T> cv = conv_v_.forward(ctx, visual);
        Var<T> xa0 = pe_.apply(ctx, ca);
        Var<T> xv0 = pe_.apply(ctx, cv);
        // K/V route: always the other modality's layer-0 sequence.
        Var<T> kv_for_a = cfg.pe_on_source ? xv0 : cv;
        Var<T> kv_for_v = cfg.pe_on_source ? xa0 : ca;
        if (trace) {
            trace->audio_low = (cfg.pe_on_source ? xa0 : ca).data();
            trace->visual_low = (cfg.pe_on_source ? xv0 : cv).data();
            trace->kv_audio_branch.clear();
            trace->kv_visual_branch.clear();
        }

        Var<T> branch_a = xa0;
        for (const auto& block : cross_va_) {
            const Var<T>& kv = cfg.cross_modal ? kv_for_a : branch_a;
            if (trace) trace->kv_audio_branch.push_back(kv.data());
            branch_a = block.forward(ctx, branch_a, kv);
        }
        branch_a = ln_branch_a_.forward(ctx, branch_a);

        Var<T> branch_v = xv0;
        for (const auto& block : cross_av_) {
            const Var<T>& kv = cfg.cross_modal ? kv_for_v : branch_v;
            if (trace) trace->kv_visual_branch.push_back(kv.data());
            branch_v = block.forward(ctx, branch_v, kv);
        }
        branch_v = ln_branch_v_.forward(ctx, branch_v);

        Var<T> fused_in = concat_cols<T>({branch_a, branch_v});
        if (cfg.fusion == "project") fused_in = fuse_proj_.forward(ctx, fused_in);
        Var<T> run = fused_in;
        for (const auto& block : self_stack_) run = block.forward(ctx, run, run);
        Var<T> fused = ln_self_.forward(ctx, run);

        return {head_a_.forward(ctx, fused), head_v_.forward(ctx, fused), fused};
    }

    std::size_t parameter_count() const { return params.total_scalars(); }

    // Scalar counts grouped by the first segment of the parameter name.
    std::map<std::string, std::size_t> component_counts() const {
        std::map<std::string, std::size_t> out;
        for (const auto& p : params) {
            const auto dot = p.name.find('.');
            out[p.name.substr(0, dot)] += p.size();
        }
        return out;
    }

    const PositionalEncoding<T>& positional_encoding() const { return pe_; }

private:
    ConvLayer<T> conv_a_, conv_v_;
    PositionalEncoding<T> pe_;
    std::vector<TransformerBlock<T>> cross_va_, cross_av_;
    LayerNormLayer<T> ln_branch_a_, ln_branch_v_;
    AffineLayer<T> fuse_proj_;
    std::vector<TransformerBlock<T>> self_stack_;
    LayerNormLayer<T> ln_self_;
    ReconHead<T> head_a_, head_v_;
};

}  // namespace mmt
