#pragma once

#include "mmt/masking.hpp"
#include "mmt/model.hpp"
#include "test_util.hpp"

// Finite-difference gradient suite over every differentiable op plus the
// end-to-end tiny model, shared by the unit tests and the acceptance run.

namespace mmt::testutil {

struct OpGradResult {
    std::string op;
    double max_rel_err;
};

// Values kept away from the relu/|x| kinks so central differences see the
// smooth branch.
inline void fill_away_from_zero(std::vector<double>& v, Rng& rng, double margin = 0.1) {
    for (auto& x : v) {
        const double mag = margin + (1.0 - margin) * rng.next_uniform();
        x = rng.next_uniform() < 0.5 ? -mag : mag;
    }
}

inline std::vector<OpGradResult> run_op_gradient_suite(std::size_t instances_per_op,
                                                       std::uint64_t seed = 7) {
    std::vector<OpGradResult> results;
    Rng master(seed);

    auto run = [&](const char* name, auto setup) {
        double worst = 0.0;
        for (std::size_t inst = 0; inst < instances_per_op; ++inst) {
            Rng rng = master.child(fnv1a(name) + inst);
            ParamStore<double> ps;
            auto [params, build] = setup(ps, rng);
            worst = std::max(worst, grad_check(params, build));
        }
        results.push_back({name, worst});
    };

    using Build = std::function<Var<double>(FwdCtx<double>&)>;
    using Setup = std::pair<std::vector<Param<double>*>, Build>;

    run("add_sub_mul_div", [](ParamStore<double>& ps, Rng& rng) -> Setup {
        auto* a = make_param(ps, "a", {3, 4}, rng);
        auto* b = make_param(ps, "b", {3, 4}, rng);
        fill_away_from_zero(b->value, rng, 0.3);  // safe divisor
        auto wseed = rng.next_u64();
        Build f = [=](FwdCtx<double>& ctx) {
            Rng wr(wseed);
            Var<double> va = ctx.p(*a), vb = ctx.p(*b);
            Var<double> x = add(mul(va, vb), div(va, vb));
            x = sub(x, scale(vb, 0.5));
            return weighted_sum(ctx, add_const(x, 0.25), wr);
        };
        return {{a, b}, f};
    });

    run("unary_relu_sigmoid_tanh", [](ParamStore<double>& ps, Rng& rng) -> Setup {
        auto* a = make_param(ps, "a", {4, 3}, rng);
        fill_away_from_zero(a->value, rng);
        auto wseed = rng.next_u64();
        Build f = [=](FwdCtx<double>& ctx) {
            Rng wr(wseed);
            Var<double> v = ctx.p(*a);
            Var<double> x = add(relu(v), add(sigmoid(v), tanh_op(v)));
            return weighted_sum(ctx, x, wr);
        };
        return {{a}, f};
    });

    run("matmul", [](ParamStore<double>& ps, Rng& rng) -> Setup {
        auto* a = make_param(ps, "a", {4, 5}, rng);
        auto* b = make_param(ps, "b", {5, 3}, rng);
        auto wseed = rng.next_u64();
        Build f = [=](FwdCtx<double>& ctx) {
            Rng wr(wseed);
            return weighted_sum(ctx, matmul(ctx.p(*a), ctx.p(*b)), wr);
        };
        return {{a, b}, f};
    });

    run("matmul_batched", [](ParamStore<double>& ps, Rng& rng) -> Setup {
        auto* a = make_param(ps, "a", {2, 3, 4}, rng);
        auto* b = make_param(ps, "b", {2, 4, 2}, rng);
        auto wseed = rng.next_u64();
        Build f = [=](FwdCtx<double>& ctx) {
            Rng wr(wseed);
            return weighted_sum(ctx, matmul(ctx.p(*a), ctx.p(*b)), wr);
        };
        return {{a, b}, f};
    });

    run("transpose_reshape_slice_concat", [](ParamStore<double>& ps, Rng& rng) -> Setup {
        auto* a = make_param(ps, "a", {4, 6}, rng);
        auto wseed = rng.next_u64();
        Build f = [=](FwdCtx<double>& ctx) {
            Rng wr(wseed);
            Var<double> v = ctx.p(*a);
            Var<double> t = transpose(v);                       // [6,4]
            Var<double> r = reshape(t, {4, 6});
            Var<double> left = col_slice(v, 0, 3);
            Var<double> right = col_slice(v, 3, 6);
            Var<double> back = concat_cols<double>({left, right});
            Var<double> rows = concat_rows<double>({row_slice(v, 0, 2), row_slice(v, 2, 4)});
            return weighted_sum(ctx, add(add(r, back), rows), wr);
        };
        return {{a}, f};
    });

    run("softmax", [](ParamStore<double>& ps, Rng& rng) -> Setup {
        auto* a = make_param(ps, "a", {1, 7}, rng, -2.0, 2.0);
        auto wseed = rng.next_u64();
        Build f = [=](FwdCtx<double>& ctx) {
            Rng wr(wseed);
            return weighted_sum(ctx, softmax_rows(ctx.p(*a)), wr);
        };
        return {{a}, f};
    });

    run("layernorm", [](ParamStore<double>& ps, Rng& rng) -> Setup {
        auto* x = make_param(ps, "x", {3, 5}, rng);
        auto* g = make_param(ps, "g", {5}, rng, 0.5, 1.5);
        auto* b = make_param(ps, "b", {5}, rng, -0.5, 0.5);
        auto wseed = rng.next_u64();
        Build f = [=](FwdCtx<double>& ctx) {
            Rng wr(wseed);
            return weighted_sum(ctx, layernorm(ctx.p(*x), ctx.p(*g), ctx.p(*b)), wr);
        };
        return {{x, g, b}, f};
    });

    run("conv1d", [](ParamStore<double>& ps, Rng& rng) -> Setup {
        auto* x = make_param(ps, "x", {5, 2}, rng);
        auto* k = make_param(ps, "k", {3, 2, 3}, rng);
        auto* b = make_param(ps, "b", {3}, rng);
        auto wseed = rng.next_u64();
        Build f = [=](FwdCtx<double>& ctx) {
            Rng wr(wseed);
            return weighted_sum(ctx, conv1d_temporal(ctx.p(*x), ctx.p(*k), ctx.p(*b)), wr);
        };
        return {{x, k, b}, f};
    });

    run("reductions_bias_bcast", [](ParamStore<double>& ps, Rng& rng) -> Setup {
        auto* x = make_param(ps, "x", {4, 3}, rng);
        auto* b = make_param(ps, "b", {3}, rng);
        Build f = [=](FwdCtx<double>& ctx) {
            Var<double> v = add_bias(ctx.p(*x), ctx.p(*b));
            Var<double> centered = sub_bcast(v, mean_all(v));
            return add(sum_all(mul(centered, centered)), mean_all(v));
        };
        return {{x, b}, f};
    });

    run("dropout_fixed_mask", [](ParamStore<double>& ps, Rng& rng) -> Setup {
        auto* x = make_param(ps, "x", {4, 4}, rng);
        auto mask_seed = rng.next_u64();
        auto wseed = rng.next_u64();
        Build f = [=](FwdCtx<double>& ctx) {
            Rng wr(wseed);
            Rng mask_rng(mask_seed);  // same mask on every FD evaluation
            return weighted_sum(ctx, dropout(ctx.p(*x), 0.3, mask_rng, true), wr);
        };
        return {{x}, f};
    });

    run("l1_masked", [](ParamStore<double>& ps, Rng& rng) -> Setup {
        auto* pred = make_param(ps, "pred", {5, 3}, rng, 1.0, 2.0);
        auto* tgt = make_param(ps, "tgt", {5, 3}, rng, -2.0, -1.0);  // margin from the kink
        std::vector<bool> mask{true, false, true, true, false};
        Build f = [=](FwdCtx<double>& ctx) {
            return l1_masked(ctx.p(*pred), ctx.p(*tgt), mask);
        };
        return {{pred, tgt}, f};
    });

    run("cross_entropy", [](ParamStore<double>& ps, Rng& rng) -> Setup {
        auto* z = make_param(ps, "z", {1, 6}, rng, -2.0, 2.0);
        const std::size_t label = rng.next_index(6);
        Build f = [=](FwdCtx<double>& ctx) { return cross_entropy_logits(ctx.p(*z), label); };
        return {{z}, f};
    });

    return results;
}

// End-to-end finite-difference check of the tiny preset in 64-bit: masked
// dual-L1 loss against sampled parameters.
inline double run_e2e_gradient_check(std::size_t n_samples = 50, std::uint64_t seed = 11) {
    ModelConfig cfg = ModelConfig::tiny();
    cfg.dropout = 0.0;
    auto model = MultModel<double>::build(cfg, seed);

    Rng rng(mix64(seed, 0xe2e));
    const std::size_t T = cfg.seq_len;
    FrameMatrix audio(T, cfg.audio_feature_dim), visual(T, cfg.visual_feature_dim);
    for (auto& x : audio.v) x = static_cast<float>(rng.next_uniform(-1.0, 1.0));
    for (auto& x : visual.v) x = static_cast<float>(rng.next_uniform(-1.0, 1.0));
    const MaskPlan plan = make_plan(T, 3, 0.15, mix64(seed, 1), false, "e2e");
    Rng apply_rng(mix64(seed, 2));
    const CorruptionResult corr = apply_plan(plan, audio, visual, apply_rng);

    auto build = [&](FwdCtx<double>& ctx) {
        auto fwd = model.forward(ctx, to_var(ctx.tape, corr.audio), to_var(ctx.tape, corr.visual));
        Var<double> l1a = l1_masked(fwd.recon_audio, to_var(ctx.tape, audio), corr.target_mask);
        Var<double> l1v = l1_masked(fwd.recon_visual, to_var(ctx.tape, visual), corr.target_mask);
        return add(l1a, l1v);
    };
    std::vector<Param<double>*> params;
    for (auto& p : model.params) params.push_back(&p);
    Rng sample_rng(mix64(seed, 3));
    return grad_check_sampled(params, build, n_samples, sample_rng);
}

}  // namespace mmt::testutil
