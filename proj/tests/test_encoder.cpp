#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>

#include "distillkit/adam.hpp"
#include "distillkit/encoder.hpp"
#include "distillkit/kernels.hpp"

using namespace dk;

static EncoderConfig small_cfg() {
    EncoderConfig c;
    c.n_layers = 2;
    c.h_units = 8;
    c.h_mid = 16;
    c.n_heads = 2;
    c.vocab_size = 16;
    c.n_classes = 3;
    c.max_len = 12;
    return c;
}

TEST_CASE("forward shape contract") {
    Rng rng(1);
    EncoderModel m = EncoderModel::init(small_cfg(), rng);
    auto out = m.forward({1, 2, 3, 4, 5});
    CHECK(out.hidden.size() == 2);
    for (const Mat& h : out.hidden) {
        CHECK(h.rows == 5);
        CHECK(h.cols == 8);
    }
    CHECK(out.logits.rows == 1);
    CHECK(out.logits.cols == 3);

    EncoderConfig tc = small_cfg();
    tc.head = HeadKind::Tagging;
    EncoderModel tm = EncoderModel::init(tc, rng);
    auto tout = tm.forward({1, 2, 3});
    CHECK(tout.logits.rows == 3);
    CHECK(tout.logits.cols == 3);
}

TEST_CASE("zero network gives zero logits and uniform softmax") {
    Rng rng(2);
    EncoderModel m = EncoderModel::init(small_cfg(), rng);
    for (auto& [name, w] : m.params)
        for (double& x : w.a) x = 0.0;
    Mat p = m.predict_proba({0, 1, 2});
    for (double x : m.forward({0, 1, 2}).logits.a) CHECK(x == 0.0);
    for (double x : p.a) CHECK(x == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("single-layer hand-checkable forward on length-1 input") {
    // One layer, one head, h=2, zero attention/ff weights: every sublayer adds
    // zero, both layer norms normalize the embedding, head is identity-like.
    EncoderConfig c;
    c.n_layers = 1;
    c.h_units = 2;
    c.h_mid = 2;
    c.n_heads = 1;
    c.vocab_size = 4;
    c.n_classes = 2;
    c.max_len = 4;
    Rng rng(3);
    EncoderModel m = EncoderModel::init(c, rng);
    for (auto& [name, w] : m.params)
        for (double& x : w.a) x = 0.0;
    m.params["embed"](1, 0) = 3.0;
    m.params["embed"](1, 1) = 1.0;
    m.params["head.w"](0, 0) = 1.0;
    m.params["head.w"](1, 1) = 1.0;
    auto out = m.forward({1});
    // embedding (3,1): mean 2, var 1 -> layer norm gives (1,-1) twice over.
    double e = 1.0 / std::sqrt(1.0 + 1e-5);
    CHECK(out.logits(0, 0) == doctest::Approx(e).epsilon(1e-9));
    CHECK(out.logits(0, 1) == doctest::Approx(-e).epsilon(1e-9));
    CHECK(out.hidden[0](0, 0) == doctest::Approx(e).epsilon(1e-9));
}

TEST_CASE("forward is pure and deterministic") {
    Rng rng(4);
    EncoderModel m = EncoderModel::init(small_cfg(), rng);
    auto a = m.forward({3, 1, 4, 1, 5});
    auto b = m.forward({3, 1, 4, 1, 5});
    CHECK(a.logits.a == b.logits.a);
    for (size_t l = 0; l < a.hidden.size(); ++l) CHECK(a.hidden[l].a == b.hidden[l].a);
}

TEST_CASE("graph forward matches plain forward") {
    Rng rng(5);
    EncoderModel m = EncoderModel::init(small_cfg(), rng);
    auto plain = m.forward({2, 7, 1});
    Tape t;
    auto vars = m.lift(t);
    auto g = m.forward_graph(t, vars, {2, 7, 1});
    for (size_t i = 0; i < plain.logits.size(); ++i)
        CHECK(t.val(g.logits).a[i] == doctest::Approx(plain.logits.a[i]).epsilon(1e-12));
    for (size_t l = 0; l < plain.hidden.size(); ++l)
        for (size_t i = 0; i < plain.hidden[l].size(); ++i)
            CHECK(t.val(g.hidden[l]).a[i] == doctest::Approx(plain.hidden[l].a[i]).epsilon(1e-12));
}

TEST_CASE("input validation") {
    Rng rng(6);
    EncoderModel m = EncoderModel::init(small_cfg(), rng);
    CHECK_THROWS(m.forward({}));
    CHECK_THROWS(m.forward({99}));
    CHECK_THROWS(m.forward_embedded(Mat(2, 5)));  // wrong width
    EncoderConfig bad = small_cfg();
    bad.n_heads = 3;  // 8 % 3 != 0
    CHECK_THROWS(EncoderModel::init(bad, rng));
}

TEST_CASE("checkpoint round-trips bit-exactly") {
    Rng rng(7);
    EncoderModel m = EncoderModel::init(small_cfg(), rng);
    std::string path = "test_encoder_ckpt.json";
    save_checkpoint(m, path);
    EncoderModel r = load_checkpoint(path);
    std::remove(path.c_str());
    CHECK(r.cfg.n_layers == m.cfg.n_layers);
    CHECK(r.params.size() == m.params.size());
    for (const auto& [name, w] : m.params) CHECK(r.params.at(name).a == w.a);
}

TEST_CASE("adam first step and zero-grad behaviour") {
    ParamMap p;
    p["w"] = Mat(1, 1, {1.0});
    AdamState opt;
    opt.lr = 0.001;

    ParamMap zg;
    zg["w"] = Mat(1, 1, {0.0});
    opt.step(p, zg);
    CHECK(p["w"].a[0] == 1.0);  // zero grads leave params unchanged

    AdamState opt2;
    opt2.lr = 0.001;
    ParamMap q;
    q["w"] = Mat(1, 1, {1.0});
    ParamMap g;
    g["w"] = Mat(1, 1, {0.7});
    opt2.step(q, g);
    // bias-corrected first step moves by ~ -lr * sign(g)
    CHECK(q["w"].a[0] == doctest::Approx(1.0 - 0.001).epsilon(1e-4));

    ParamMap bad;
    bad["w"] = Mat(2, 2);
    CHECK_THROWS(opt2.step(q, bad));
}

TEST_CASE("adam training is deterministic given seed") {
    auto run = [] {
        Rng rng(11);
        EncoderModel m = EncoderModel::init(small_cfg(), rng);
        AdamState opt;
        for (int step = 0; step < 5; ++step) {
            Tape t;
            auto vars = m.lift(t);
            auto out = m.forward_graph(t, vars, {1, 2, 3});
            Var loss = t.sum_all(t.square(out.logits));
            t.backward(loss);
            ParamMap grads = zero_like(m.params);
            m.accumulate_grads(t, vars, grads);
            opt.step(m.params, grads);
        }
        return m;
    };
    EncoderModel a = run(), b = run();
    for (const auto& [name, w] : a.params) CHECK(b.params.at(name).a == w.a);
}
