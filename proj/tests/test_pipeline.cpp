#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>

#include "distillkit/pipeline.hpp"

using namespace dk;

namespace {

EncoderConfig teacher_cfg() {
    EncoderConfig c;
    c.n_layers = 2;
    c.h_units = 8;
    c.h_mid = 16;
    c.n_heads = 2;
    c.vocab_size = 16;
    c.n_classes = 2;
    c.max_len = 16;
    return c;
}

EncoderConfig student_cfg(int h = 8) {
    EncoderConfig c = teacher_cfg();
    c.n_layers = 1;
    c.h_units = h;
    c.h_mid = 2 * h;
    return c;
}

struct Fixture {
    Dataset data = synth_classification(40, 16, 2, 4, 6, 21);
    EncoderModel teacher, student;
    Lexicon lex = derived_lexicon(16);
    UnigramTable unigrams = UnigramTable::build(data.examples, 16);

    Fixture() {
        Rng tr(100), sr(200);
        teacher = EncoderModel::init(teacher_cfg(), tr);
        student = EncoderModel::init(student_cfg(), sr);
    }

    DistillerConfig quick_cfg() const {
        DistillerConfig c = DistillerConfig::defaults();
        c.inter_loss.kind = InterKind::MSE;
        c.epochs = 2;
        c.batch_size = 8;
        c.learning_rate = 3e-3;
        c.seed = 7;
        return c;
    }
};

bool params_equal(const ParamMap& a, const ParamMap& b) {
    if (a.size() != b.size()) return false;
    for (const auto& [k, v] : a) {
        auto it = b.find(k);
        if (it == b.end() || v.a != it->second.a) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("weight defaults depend on whether augmentation is active") {
    DistillerConfig plain = DistillerConfig::defaults();
    CHECK(plain.beta1 == 1.0);
    CHECK(plain.beta2 == 0.0);
    CHECK(plain.gamma1 == 0.0);
    CHECK(plain.gamma2 == 0.0);

    DistillerConfig aug = DistillerConfig::defaults(AugPolicy{{AugOp::CA}});
    CHECK(aug.beta1 == 1.0);
    CHECK(aug.beta2 == 1.0);
    CHECK(aug.gamma1 == 0.5);
    CHECK(aug.gamma2 == 0.5);
}

TEST_CASE("config text round-trips; bad keys and values are rejected") {
    DistillerConfig c = DistillerConfig::defaults(AugPolicy::parse("CA+Mixup"));
    c.inter_loss = {InterKind::MI_alpha, 0.9};
    c.mapping = MapStrategy::EMD;
    c.pred_loss = PredKind::MSE;
    c.epochs = 3;
    c.seed = 42;
    DistillerConfig back = DistillerConfig::parse_text(c.to_text());
    CHECK(back.to_text() == c.to_text());
    CHECK(back.inter_loss.kind == InterKind::MI_alpha);
    CHECK(back.inter_loss.alpha == 0.9);
    CHECK(back.aug_policy.describe() == "CA+Mixup");

    CHECK_THROWS(DistillerConfig::parse_text("no_such_key = 3\n"));
    CHECK_THROWS(DistillerConfig::parse_text("beta1 = -1\n"));
    CHECK_THROWS(DistillerConfig::parse_text("inter_loss.kind = Huh\n"));
    // comments and blank lines are fine
    DistillerConfig ok = DistillerConfig::parse_text("# recipe\n\nepochs = 5\n");
    CHECK(ok.epochs == 5);
}

TEST_CASE("presets expand to the documented recipes") {
    DistillerConfig tb = preset("tinybert-style");
    CHECK(tb.pred_loss == PredKind::CE);
    CHECK(tb.inter_loss.kind == InterKind::MSE);
    CHECK(tb.mapping == MapStrategy::Skip);
    CHECK(tb.aug_policy.describe() == "CA");

    DistillerConfig be = preset("bert-emd-style");
    CHECK(be.pred_loss == PredKind::CE);
    CHECK(be.inter_loss.kind == InterKind::MSE);
    CHECK(be.mapping == MapStrategy::EMD);
    CHECK(be.aug_policy.empty());

    DistillerConfig mk = preset("mixkd-style");
    CHECK(mk.pred_loss == PredKind::CE);
    CHECK(mk.aug_policy.describe() == "Mixup");
    CHECK(mk.inter_weight == 0.0);

    CHECK_THROWS(preset("unknown"));
}

TEST_CASE("distillation ratio") {
    CHECK(distillation_ratio(0.8, 0.8) == doctest::Approx(1.0));
    CHECK(distillation_ratio(48.0, 50.0) == doctest::Approx(0.96));
    CHECK(distillation_ratio(0.9, 0.8) > 1.0);
    CHECK_THROWS(distillation_ratio(0.5, 0.0));
}

TEST_CASE("evaluation scores") {
    // the all-zero model emits uniform logits; argmax ties resolve to class 0
    Rng r1(1);
    EncoderModel zero = EncoderModel::init(student_cfg(), r1);
    zero.params = zero_like(zero.params);

    Dataset all_zero{TaskKind::Classification, 16, 2, {}};
    Dataset balanced = all_zero;
    for (int i = 0; i < 10; ++i) {
        all_zero.examples.push_back({{1, 2, 3}, 0, {}});
        balanced.examples.push_back({{1, 2, 3}, i % 2, {}});
    }
    CHECK(evaluate(zero, all_zero) == doctest::Approx(1.0));
    CHECK(evaluate(zero, balanced) == doctest::Approx(0.5));
    CHECK(evaluate(zero, balanced) == evaluate(zero, balanced));  // reproducible
    CHECK_THROWS(evaluate(zero, Dataset{TaskKind::Classification, 16, 2, {}}));

    // tagging: a zero model tags everything 0, so an all-zero tag split is perfect
    EncoderConfig tagc = student_cfg();
    tagc.head = HeadKind::Tagging;
    Rng r2(2);
    EncoderModel tagger = EncoderModel::init(tagc, r2);
    tagger.params = zero_like(tagger.params);
    Dataset tags{TaskKind::Tagging, 16, 2, {{{1, 2, 3}, -1, {0, 0, 0}}}};
    EvalResult er = evaluate_detailed(tagger, tags);
    CHECK(er.accuracy == doctest::Approx(1.0));
    CHECK(er.span_f1 == doctest::Approx(1.0));
}

TEST_CASE("total objective composes exactly from independently computed terms") {
    Fixture f;
    std::vector<Example> batch(f.data.examples.begin(), f.data.examples.begin() + 4);

    DistillerConfig cfg = f.quick_cfg();  // no DA: gamma1 = 0, beta2 = gamma2 = 0
    DistillState st = init_distill_state(cfg, f.teacher, f.student);
    double total = total_objective_value(cfg, batch, f.teacher, st, TaskKind::Classification,
                                         f.lex, f.unigrams, 5);

    // oracle: evaluate each term with the already-tested single-purpose APIs
    double inter = 0.0, pred = 0.0;
    for (const Example& ex : batch) {
        ForwardResult sf = st.student.forward(ex.tokens);
        ForwardResult tf = f.teacher.forward(ex.tokens);
        for (auto [ti, sj] : st.pairs)
            inter += inter_loss_value(InterKind::MSE, sf.hidden[sj], tf.hidden[ti],
                                      st.projections[sj]) /
                     batch.size();
        Tape t;
        pred += t.val(pred_loss_teacher(t, PredKind::CE, t.leaf(sf.logits), tf.logits)).a[0] /
                batch.size();
    }
    CHECK(total == doctest::Approx(cfg.inter_weight * inter + cfg.beta1 * pred).epsilon(1e-10));

    SUBCASE("zero weights zero the loss") {
        DistillerConfig off = cfg;
        off.beta1 = 0.0;
        off.inter_weight = 0.0;
        CHECK(total_objective_value(off, batch, f.teacher, st, TaskKind::Classification, f.lex,
                                    f.unigrams, 5) == 0.0);
    }

    SUBCASE("dropping one weight removes exactly that term") {
        DistillerConfig no_pred = cfg;
        no_pred.beta1 = 0.0;
        double without = total_objective_value(no_pred, batch, f.teacher, st,
                                               TaskKind::Classification, f.lex, f.unigrams, 5);
        CHECK(total - without == doctest::Approx(cfg.beta1 * pred).epsilon(1e-9));
    }
}

TEST_CASE("augmented objective is finite and deterministic in the augmentation seed") {
    Fixture f;
    std::vector<Example> batch(f.data.examples.begin(), f.data.examples.begin() + 4);
    DistillerConfig cfg = DistillerConfig::defaults(AugPolicy::parse("RA+Mixup"));
    cfg.inter_loss.kind = InterKind::PKD;
    cfg.seed = 3;
    DistillState st = init_distill_state(cfg, f.teacher, f.student);
    double a = total_objective_value(cfg, batch, f.teacher, st, TaskKind::Classification, f.lex,
                                     f.unigrams, 9);
    double b = total_objective_value(cfg, batch, f.teacher, st, TaskKind::Classification, f.lex,
                                     f.unigrams, 9);
    double c = total_objective_value(cfg, batch, f.teacher, st, TaskKind::Classification, f.lex,
                                     f.unigrams, 10);
    CHECK(std::isfinite(a));
    CHECK(a == b);
    CHECK(a != c);  // different augmentation draws move the loss
}

TEST_CASE("supervised training learns the synthetic classification task") {
    Fixture f;
    auto [train, eval] = split_dataset(f.data, 0.8);
    double before = evaluate(f.teacher, eval);
    EncoderModel trained = train_supervised(f.teacher, train, 12, 8, 3e-3, 5);
    double after = evaluate(trained, eval);
    CHECK(after >= before);
    CHECK(after >= 0.7);
}

TEST_CASE("distill: zero epochs returns the initial student with a populated record") {
    Fixture f;
    auto [train, eval] = split_dataset(f.data, 0.8);
    DistillerConfig cfg = f.quick_cfg();
    cfg.epochs = 0;
    DistillResult r = distill(cfg, train, eval, f.teacher, f.student, "synthetic");
    CHECK(params_equal(r.student.params, f.student.params));
    CHECK(r.record.dataset_id == "synthetic");
    CHECK(r.record.teacher_score > 0.0);
    CHECK(r.record.ratio ==
          doctest::Approx(r.record.student_score / r.record.teacher_score));
    CHECK(r.record.wall_time >= 0.0);
}

TEST_CASE("distill reduces the objective and is bit-reproducible") {
    Fixture f;
    auto [train, eval] = split_dataset(f.data, 0.8);
    DistillerConfig cfg = f.quick_cfg();
    cfg.epochs = 3;
    DistillResult r1 = distill(cfg, train, eval, f.teacher, f.student);
    DistillResult r2 = distill(cfg, train, eval, f.teacher, f.student);

    REQUIRE(r1.epoch_loss.size() == 3);
    for (double l : r1.epoch_loss) CHECK(std::isfinite(l));
    CHECK(r1.epoch_loss.back() < r1.epoch_loss.front());

    CHECK(params_equal(r1.student.params, r2.student.params));
    CHECK(r1.record.student_score == r2.record.student_score);
    CHECK(r1.record.teacher_score == r2.record.teacher_score);
    CHECK(r1.epoch_loss == r2.epoch_loss);
}

TEST_CASE("distill works across mapping strategies, losses and a narrow student") {
    Fixture f;
    auto [train, eval] = split_dataset(f.data, 0.8);
    Rng sr(300);
    EncoderModel narrow = EncoderModel::init(student_cfg(4), sr);

    DistillerConfig cfg = f.quick_cfg();
    cfg.epochs = 1;

    SUBCASE("EMD mapping with projection") {
        cfg.mapping = MapStrategy::EMD;
        DistillResult r = distill(cfg, train, eval, f.teacher, narrow);
        CHECK(std::isfinite(r.epoch_loss.front()));
    }
    SUBCASE("MI intermediate loss with critics") {
        cfg.inter_loss = {InterKind::MI_alpha, 0.5};
        DistillResult r = distill(cfg, train, eval, f.teacher, narrow);
        CHECK(std::isfinite(r.epoch_loss.front()));
    }
    SUBCASE("augmentation stack") {
        DistillerConfig aug = DistillerConfig::defaults(AugPolicy::parse("CA+Mixup"));
        aug.inter_loss.kind = InterKind::Cos;
        aug.epochs = 1;
        aug.batch_size = 8;
        aug.learning_rate = 3e-3;
        aug.seed = 7;
        DistillResult r = distill(aug, train, eval, f.teacher, narrow);
        CHECK(std::isfinite(r.epoch_loss.front()));
    }
    SUBCASE("config errors surface before training") {
        cfg.learning_rate = 0.0;
        CHECK_THROWS(distill(cfg, train, eval, f.teacher, narrow));
    }
}

TEST_CASE("tagging distillation runs end to end") {
    Dataset data = synth_tagging(24, 16, 3, 4, 6, 31);
    auto [train, eval] = split_dataset(data, 0.75);
    EncoderConfig tc = teacher_cfg();
    tc.n_classes = 3;
    tc.head = HeadKind::Tagging;
    EncoderConfig sc = student_cfg();
    sc.n_classes = 3;
    sc.head = HeadKind::Tagging;
    Rng tr(1), sr(2);
    EncoderModel teacher = EncoderModel::init(tc, tr);
    EncoderModel student = EncoderModel::init(sc, sr);

    DistillerConfig cfg;
    cfg = DistillerConfig::defaults(AugPolicy::parse("Mixup"));
    cfg.inter_loss.kind = InterKind::MSE;
    cfg.epochs = 1;
    cfg.batch_size = 8;
    cfg.learning_rate = 3e-3;
    DistillResult r = distill(cfg, train, eval, teacher, student);
    CHECK(std::isfinite(r.epoch_loss.front()));
    EvalResult er = evaluate_detailed(r.student, eval);
    CHECK(er.accuracy >= 0.0);
    CHECK(er.span_f1 >= 0.0);
}

TEST_CASE("run records survive the JSONL round-trip") {
    RunRecord r;
    r.config = preset("tinybert-style");
    r.config.seed = 17;
    r.dataset_id = "synthetic-cls";
    r.teacher_score = 0.9;
    r.student_score = 0.87;
    r.ratio = r.student_score / r.teacher_score;
    r.wall_time = 1.25;
    r.seed = 17;
    RunRecord bad;
    bad.config = preset("mixkd-style");
    bad.failed = true;
    bad.error = "runner exploded";

    std::string path = "records_roundtrip.jsonl";
    save_run_records({r, bad}, path);
    auto back = load_run_records(path);
    std::remove(path.c_str());
    REQUIRE(back.size() == 2);
    CHECK(back[0].config.to_text() == r.config.to_text());
    CHECK(back[0].ratio == r.ratio);
    CHECK(back[0].dataset_id == "synthetic-cls");
    CHECK(back[1].failed);
    CHECK(back[1].error == "runner exploded");
}
