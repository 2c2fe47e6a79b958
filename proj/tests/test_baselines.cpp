#include <doctest.h>

#include "mmt/baselines.hpp"
#include "test_util.hpp"

using namespace mmt;
using namespace mmt::testutil;

namespace {

UtteranceRecord make_record(std::size_t t, std::size_t da, std::size_t dv, Rng& rng) {
    UtteranceRecord rec;
    rec.utterance_id = "u";
    rec.speaker_id = "s";
    rec.audio.frames = FrameMatrix(t, da);
    rec.visual.frames = FrameMatrix(t, dv);
    for (auto& x : rec.audio.frames.v) x = static_cast<float>(rng.next_uniform(-1, 1));
    for (auto& x : rec.visual.frames.v) x = static_cast<float>(rng.next_uniform(-1, 1));
    return rec;
}

double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("gru cell matches a hand-unrolled recurrence") {
    ParamStore<double> ps;
    Rng rng(3);
    const std::size_t din = 2, h = 3, t_len = 2;
    GruCell<double> cell(ps, "cell", din, h, rng);

    std::vector<double> x(t_len * din);
    fill_uniform(x, rng);
    Tape<double> tape;
    FwdCtx<double> ctx(tape);
    auto xv = tape.constant({t_len, din}, std::vector<double>(x));
    Var<double> state = tape.make({1, h}, false);
    for (std::size_t t = 0; t < t_len; ++t)
        state = cell.step(ctx, row_slice(xv, t, t + 1), state);

    // raw-loop unroll
    std::vector<double> hh(h, 0.0);
    for (std::size_t t = 0; t < t_len; ++t) {
        std::vector<double> z(h), r(h), c(h), next(h);
        for (std::size_t j = 0; j < h; ++j) {
            double az = cell.bz->value[j], ar = cell.br->value[j];
            for (std::size_t i = 0; i < din; ++i) {
                az += x[t * din + i] * cell.wz->value[i * h + j];
                ar += x[t * din + i] * cell.wr->value[i * h + j];
            }
            for (std::size_t i = 0; i < h; ++i) {
                az += hh[i] * cell.uz->value[i * h + j];
                ar += hh[i] * cell.ur->value[i * h + j];
            }
            z[j] = sigmoid_ref(az);
            r[j] = sigmoid_ref(ar);
        }
        for (std::size_t j = 0; j < h; ++j) {
            double ac = cell.bc->value[j];
            for (std::size_t i = 0; i < din; ++i)
                ac += x[t * din + i] * cell.wc->value[i * h + j];
            for (std::size_t i = 0; i < h; ++i)
                ac += r[i] * hh[i] * cell.uc->value[i * h + j];
            c[j] = std::tanh(ac);
        }
        for (std::size_t j = 0; j < h; ++j) next[j] = (1.0 - z[j]) * hh[j] + z[j] * c[j];
        hh = next;
    }
    for (std::size_t j = 0; j < h; ++j) CHECK(std::abs(state.value()[j] - hh[j]) < 1e-6);
}

TEST_CASE("gru gradients match finite differences") {
    ParamStore<double> ps;
    Rng rng(7);
    GruCell<double> cell(ps, "cell", 2, 3, rng);
    auto* x = make_param(ps, "x", {4, 2}, rng);
    const auto wseed = rng.next_u64();
    std::vector<Param<double>*> params{x,        cell.wz, cell.uz, cell.bz, cell.wr,
                                       cell.ur,  cell.br, cell.wc, cell.uc, cell.bc};
    const double err = grad_check(params, [&](FwdCtx<double>& ctx) {
        Rng wr(wseed);
        Var<double> xv = ctx.p(*x);
        Var<double> state = ctx.tape.make({1, 3}, false);
        for (std::size_t t = 0; t < 4; ++t)
            state = cell.step(ctx, row_slice(xv, t, t + 1), state);
        return weighted_sum(ctx, state, wr);
    });
    CHECK(err < 1e-4);
}

TEST_CASE("gru hidden state is bounded by the tanh candidate mixing") {
    ParamStore<float> ps;
    Rng rng(11);
    GruCell<float> cell(ps, "cell", 3, 4, rng);

    // ordinary scale: strictly inside (-1,1)
    {
        Tape<float> tape;
        FwdCtx<float> ctx(tape);
        Var<float> state = tape.make({1, 4}, false);
        std::vector<float> x(30 * 3);
        for (auto& v : x) v = static_cast<float>(rng.next_uniform(-1, 1));
        auto xv = tape.constant({30, 3}, std::move(x));
        for (std::size_t t = 0; t < 30; ++t) {
            state = cell.step(ctx, row_slice(xv, t, t + 1), state);
            for (float v : state.value()) {
                CHECK(v > -1.0f);
                CHECK(v < 1.0f);
            }
        }
    }

    // exaggerated weights saturate float tanh at +/-1 but never escape
    for (auto& p : ps)
        for (auto& v : p.value) v *= 5.0f;
    Tape<float> tape;
    FwdCtx<float> ctx(tape);
    Var<float> state = tape.make({1, 4}, false);
    std::vector<float> big(30 * 3);
    for (auto& v : big) v = static_cast<float>(rng.next_uniform(-10, 10));
    auto xv = tape.constant({30, 3}, std::move(big));
    for (std::size_t t = 0; t < 30; ++t) {
        state = cell.step(ctx, row_slice(xv, t, t + 1), state);
        for (float v : state.value()) {
            CHECK(v >= -1.0f);
            CHECK(v <= 1.0f);
        }
    }
}

TEST_CASE("ef-gru handles a single frame and rejects misalignment") {
    GruModelConfig cfg;
    cfg.audio_dim = 4;
    cfg.visual_dim = 3;
    cfg.hidden = 5;
    cfg.n_out = 2;
    EfGruModel<float> model(cfg, 1);
    Rng rng(2);
    auto rec = make_record(1, 4, 3, rng);
    Tape<float> tape;
    FwdCtx<float> ctx(tape);
    auto out = model.predict(ctx, rec);
    CHECK(out.shape() == Shape{1, 2});
    for (float v : out.value()) CHECK(std::isfinite(v));

    auto bad = make_record(3, 4, 3, rng);
    bad.visual.frames = FrameMatrix(2, 3);
    Tape<float> t2;
    FwdCtx<float> c2(t2);
    CHECK_THROWS_AS(model.predict(c2, bad), shape_error);
}

TEST_CASE("zeroed gru weights leave the hidden at zero so the head bias passes through") {
    GruModelConfig cfg;
    cfg.audio_dim = 3;
    cfg.visual_dim = 2;
    cfg.hidden = 4;
    cfg.n_out = 2;
    EfGruModel<float> model(cfg, 5);
    for (auto* store : model.all_stores())
        for (auto& p : *store)
            if (p.name.rfind("ef_gru", 0) == 0 || p.name.find(".fc") != std::string::npos ||
                p.name.find(".out.w") != std::string::npos)
                std::fill(p.value.begin(), p.value.end(), 0.0f);
    // pin the surviving output bias
    for (auto* store : model.all_stores())
        for (auto& p : *store)
            if (p.name == "head.out.b") {
                p.value = {1.5f, -2.5f};
            }
    Rng rng(6);
    auto rec = make_record(5, 3, 2, rng);
    Tape<float> tape;
    FwdCtx<float> ctx(tape);
    auto out = model.predict(ctx, rec);
    CHECK(out.value()[0] == 1.5f);
    CHECK(out.value()[1] == -2.5f);
}

TEST_CASE("lf-gru with a zeroed visual encoder ignores visual input") {
    GruModelConfig cfg;
    cfg.audio_dim = 3;
    cfg.visual_dim = 2;
    cfg.hidden = 4;
    cfg.n_out = 2;
    LfGruModel<float> model(cfg, 9);
    for (auto* store : model.all_stores())
        for (auto& p : *store)
            if (p.name.rfind("lf_gru.visual", 0) == 0)
                std::fill(p.value.begin(), p.value.end(), 0.0f);
    Rng rng(10);
    auto rec1 = make_record(6, 3, 2, rng);
    auto rec2 = rec1;
    for (auto& v : rec2.visual.frames.v) v += 3.0f;  // perturb only the visual stream

    Tape<float> t1;
    FwdCtx<float> c1(t1);
    auto out1 = model.predict(c1, rec1);
    Tape<float> t2;
    FwdCtx<float> c2(t2);
    auto out2 = model.predict(c2, rec2);
    CHECK(out1.value() == out2.value());
}

TEST_CASE("budget solver matches EF and LF to the BASE parameter count") {
    const std::size_t target = expected_parameter_count(ModelConfig::base());
    const std::size_t da = 512, dv = 17, n_out = 6;

    auto ef_count = [&](std::size_t h, std::size_t layers) {
        GruModelConfig c;
        c.audio_dim = da;
        c.visual_dim = dv;
        c.hidden = h;
        c.n_layers = layers;
        c.n_out = n_out;
        return EfGruModel<float>::expected_param_count(c);
    };
    auto lf_count = [&](std::size_t h, std::size_t layers) {
        GruModelConfig c;
        c.audio_dim = da;
        c.visual_dim = dv;
        c.hidden = h;
        c.n_layers = layers;
        c.n_out = n_out;
        return LfGruModel<float>::expected_param_count(c);
    };

    const auto ef = solve_gru_budget(target, 0.10, ef_count);
    const auto lf = solve_gru_budget(target, 0.10, lf_count);
    CHECK(ef.within_tolerance);
    CHECK(lf.within_tolerance);
    const auto rel = [&](std::size_t n) {
        return std::abs(static_cast<double>(n) - static_cast<double>(target)) /
               static_cast<double>(target);
    };
    CHECK(rel(ef.param_count) <= 0.10);
    CHECK(rel(lf.param_count) <= 0.10);
    MESSAGE("EF-GRU budget: hidden=", ef.hidden, " layers=", ef.n_layers,
            " params=", ef.param_count);
    MESSAGE("LF-GRU budget: hidden=", lf.hidden, " layers=", lf.n_layers,
            " params=", lf.param_count);
}

TEST_CASE("count formulas agree with built models") {
    GruModelConfig cfg;
    cfg.audio_dim = 5;
    cfg.visual_dim = 3;
    cfg.hidden = 7;
    cfg.n_out = 4;
    SUBCASE("one layer") {
        cfg.n_layers = 1;
        CHECK(EfGruModel<float>(cfg, 1).parameter_count() ==
              EfGruModel<float>::expected_param_count(cfg));
        CHECK(LfGruModel<float>(cfg, 1).parameter_count() ==
              LfGruModel<float>::expected_param_count(cfg));
    }
    SUBCASE("two layers") {
        cfg.n_layers = 2;
        CHECK(EfGruModel<float>(cfg, 1).parameter_count() ==
              EfGruModel<float>::expected_param_count(cfg));
        // stacked layers still run forward
        Rng rng(3);
        EfGruModel<float> model(cfg, 2);
        auto rec = make_record(4, 5, 3, rng);
        Tape<float> tape;
        FwdCtx<float> ctx(tape);
        CHECK(model.predict(ctx, rec).shape() == Shape{1, 4});
    }
}

TEST_CASE("tfn fusion has the appended-one structure") {
    Tape<float> tape;
    // zero embeddings: only the 1 (x) 1 corner survives
    auto za = tape.constant({1, 3}, {0, 0, 0});
    auto zv = tape.constant({1, 2}, {0, 0});
    auto fused = tfn_fuse(tape, za, zv);
    CHECK(fused.shape() == Shape{1, 12});
    std::size_t nonzero = 0;
    for (float v : fused.value()) nonzero += v != 0.0f;
    CHECK(nonzero == 1);
    CHECK(fused.value()[11] == 1.0f);  // (za_dim, zv_dim) corner of the outer product

    // Da=2, Dv=1: 3x2 outer product, hand-checked
    auto a = tape.constant({1, 2}, {2, 3});
    auto v = tape.constant({1, 1}, {5});
    auto f = tfn_fuse(tape, a, v);
    CHECK(f.shape() == Shape{1, 6});
    CHECK(f.value() == std::vector<float>{10, 2, 15, 3, 5, 1});

    // both embeddings appear verbatim as slices
    // last column (j = Dv) is [za; 1]; last row (i = Da) is [zv; 1]
    CHECK(f.value()[0 * 2 + 1] == 2.0f);
    CHECK(f.value()[1 * 2 + 1] == 3.0f);
    CHECK(f.value()[2 * 2 + 0] == 5.0f);
}

TEST_CASE("tfn is invariant to visual frame order") {
    TfnConfig cfg;
    cfg.audio_dim = 4;
    cfg.visual_dim = 3;
    TfnModel<float> model(cfg, 13);
    Rng rng(14);
    auto rec = make_record(6, 4, 3, rng);
    auto shuffled = rec;
    // rotate the visual frames
    for (std::size_t t = 0; t < 6; ++t)
        for (std::size_t d = 0; d < 3; ++d)
            shuffled.visual.frames.at(t, d) = rec.visual.frames.at((t + 2) % 6, d);

    Tape<float> t1;
    FwdCtx<float> c1(t1);
    auto out1 = model.predict(c1, rec);
    Tape<float> t2;
    FwdCtx<float> c2(t2);
    auto out2 = model.predict(c2, shuffled);
    for (std::size_t i = 0; i < out1.size(); ++i)
        CHECK(out1.value()[i] == doctest::Approx(out2.value()[i]).epsilon(1e-5));
}
