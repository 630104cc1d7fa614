#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>

#include "distillkit/search.hpp"

using namespace dk;

namespace {

// Records over a hand-picked factorial design with a scripted score function.
std::vector<RunRecord> scripted_records(
    const std::vector<InterLossKind>& inters, const std::vector<std::string>& augs,
    const std::function<double(size_t, size_t)>& score, int replicas = 1) {
    std::vector<RunRecord> out;
    for (int rep = 0; rep < replicas; ++rep)
        for (size_t i = 0; i < inters.size(); ++i)
            for (size_t a = 0; a < augs.size(); ++a) {
                RunRecord r;
                r.config = DistillerConfig::defaults(AugPolicy::parse(augs[a]));
                r.config.inter_loss = inters[i];
                r.ratio = score(i, a);
                out.push_back(std::move(r));
            }
    return out;
}

}  // namespace

TEST_CASE("the full space enumerates every component option") {
    SearchSpace s = SearchSpace::full();
    CHECK(s.inter.size() == 8);  // 5 distance losses + 3 MI settings
    CHECK(s.pred.size() == 2);
    CHECK(s.mapping.size() == 3);
    CHECK(s.aug.size() >= 5);
    CHECK(s.size() == s.inter.size() * 2 * 3 * s.aug.size());

    int mi = 0;
    for (const InterLossKind& k : s.inter)
        if (k.kind == InterKind::MI_alpha) {
            ++mi;
            CHECK((k.alpha == 0.1 || k.alpha == 0.5 || k.alpha == 0.9));
        }
    CHECK(mi == 3);
}

TEST_CASE("sampling is uniform-ish, in-space, valid and seeded") {
    SearchSpace s = SearchSpace::full();
    Rng r1(4), r2(4);
    for (int i = 0; i < 50; ++i) {
        DistillerConfig a = s.sample(r1);
        DistillerConfig b = s.sample(r2);
        CHECK(a.to_text() == b.to_text());
        CHECK(s.contains(a));
        CHECK_NOTHROW(a.validate());
        // weight defaults track the sampled augmentation
        if (a.aug_policy.empty()) CHECK(a.gamma2 == 0.0);
        else CHECK(a.gamma2 == 0.5);
    }
}

TEST_CASE("random search is ordered, deterministic and failure-tolerant") {
    SearchSpace s = SearchSpace::full();
    CHECK(random_search(s, 0, 1, [](const DistillerConfig&, int) { return RunRecord{}; }).empty());

    auto runner = [](const DistillerConfig& cfg, int trial) {
        if (trial % 3 == 1) throw std::runtime_error("boom " + std::to_string(trial));
        RunRecord r;
        r.config = cfg;
        r.ratio = 0.5 + 0.01 * trial;
        return r;
    };
    auto serial = random_search(s, 12, 99, runner, 1);
    auto parallel = random_search(s, 12, 99, runner, 4);
    REQUIRE(serial.size() == 12);
    for (int i = 0; i < 12; ++i) {
        CHECK(serial[i].config.to_text() == parallel[i].config.to_text());
        CHECK(serial[i].failed == (i % 3 == 1));
        if (serial[i].failed) {
            CHECK(serial[i].error == "boom " + std::to_string(i));
        } else {
            CHECK(serial[i].ratio == parallel[i].ratio);
            CHECK(s.contains(serial[i].config));
        }
    }

    auto again = random_search(s, 12, 99, runner, 1);
    for (int i = 0; i < 12; ++i) CHECK(serial[i].config.to_text() == again[i].config.to_text());
}

TEST_CASE("exact factorial decomposition on pinned grids") {
    SUBCASE("f(a,b) = a: all variance on axis a") {
        AnovaDecomposition d = brute_force_anova({2, 2}, {0, 0, 1, 1});
        CHECK(d.individual[0] == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(d.individual[1] == doctest::Approx(0.0));
        CHECK(d.pairwise[0][1] == doctest::Approx(0.0));
    }
    SUBCASE("f(a,b) = a*b: thirds") {
        AnovaDecomposition d = brute_force_anova({2, 2}, {0, 0, 0, 1});
        CHECK(d.grand_mean == doctest::Approx(0.25));
        CHECK(d.total_variance == doctest::Approx(0.1875).epsilon(1e-12));
        CHECK(d.individual[0] == doctest::Approx(1.0 / 3).epsilon(1e-12));
        CHECK(d.individual[1] == doctest::Approx(1.0 / 3).epsilon(1e-12));
        CHECK(d.pairwise[0][1] == doctest::Approx(1.0 / 3).epsilon(1e-12));
    }
    SUBCASE("two-axis fractions always total 1") {
        Rng rng(13);
        std::vector<double> scores(3 * 4);
        for (double& s : scores) s = rng.normal(0.0, 1.0);
        AnovaDecomposition d = brute_force_anova({3, 4}, scores);
        CHECK(d.individual[0] + d.individual[1] + d.pairwise[0][1] ==
              doctest::Approx(1.0).epsilon(1e-9));
    }
    SUBCASE("incomplete grids are rejected") {
        CHECK_THROWS(brute_force_anova({2, 2}, {0, 0, 1}));
        CHECK_THROWS(brute_force_anova({}, {}));
    }
}

TEST_CASE("importance: a single varying axis owns all the variance") {
    std::vector<InterLossKind> inters{{InterKind::MSE, 0.0}, {InterKind::PKD, 0.0}};
    auto records = scripted_records(inters, {"none"}, [](size_t i, size_t) { return i ? 0.9 : 0.5; },
                                    12);
    ImportanceReport rep = fanova_importance(records, 1);
    CHECK(rep.individual["inter_loss"] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(rep.individual["aug"] == doctest::Approx(0.0));
    CHECK(rep.individual["mapping"] == doctest::Approx(0.0));
    CHECK(rep.total_variance > 0.0);
}

TEST_CASE("importance: constant scores flag a zero-variance report") {
    std::vector<InterLossKind> inters{{InterKind::MSE, 0.0}, {InterKind::PKD, 0.0}};
    auto records = scripted_records(inters, {"none", "CA"}, [](size_t, size_t) { return 0.7; }, 6);
    ImportanceReport rep = fanova_importance(records, 1);
    CHECK(rep.total_variance == 0.0);
    for (const auto& [k, v] : rep.individual) CHECK(v == 0.0);
    for (const auto& [k, v] : rep.pairwise) CHECK(v == 0.0);
}

TEST_CASE("importance of an additive surface matches the exact oracle") {
    std::vector<InterLossKind> inters{
        {InterKind::MSE, 0.0}, {InterKind::Cos, 0.0}, {InterKind::MI_alpha, 0.5}};
    std::vector<std::string> augs{"none", "CA", "Mixup"};
    std::vector<double> g{0.0, 0.2, 0.5}, h{0.0, 0.1, -0.1};
    auto score = [&](size_t i, size_t a) { return 0.8 + g[i] + h[a]; };

    auto records = scripted_records(inters, augs, score, 8);
    ImportanceReport rep = fanova_importance(records, 3);

    std::vector<double> grid;
    for (double gi : g)
        for (double ha : h) grid.push_back(0.8 + gi + ha);
    AnovaDecomposition oracle = brute_force_anova({3, 3}, grid);

    CHECK(std::fabs(rep.individual["inter_loss"] - oracle.individual[0]) < 0.02);
    CHECK(std::fabs(rep.individual["aug"] - oracle.individual[1]) < 0.02);
    CHECK(rep.pairwise["inter_loss|aug"] <= 0.05);
}

TEST_CASE("importance is invariant to record order and to affine score rescaling") {
    std::vector<InterLossKind> inters{{InterKind::MSE, 0.0}, {InterKind::L2, 0.0}};
    std::vector<std::string> augs{"none", "RA"};
    auto records = scripted_records(inters, augs,
                                    [](size_t i, size_t a) { return 0.5 + 0.3 * i + 0.05 * a; }, 8);

    ImportanceReport base = fanova_importance(records, 7);

    std::vector<RunRecord> shuffled = records;
    Rng rng(2);
    for (size_t i = shuffled.size(); i > 1; --i) std::swap(shuffled[i - 1], shuffled[rng.below(i)]);
    ImportanceReport reordered = fanova_importance(shuffled, 7);
    for (const auto& [k, v] : base.individual) CHECK(reordered.individual[k] == v);
    for (const auto& [k, v] : base.pairwise) CHECK(reordered.pairwise[k] == v);

    std::vector<RunRecord> scaled = records;
    for (RunRecord& r : scaled) r.ratio = 3.0 * r.ratio - 1.0;
    ImportanceReport affine = fanova_importance(scaled, 7);
    for (const auto& [k, v] : base.individual)
        CHECK(affine.individual[k] == doctest::Approx(v).epsilon(1e-9));
}

TEST_CASE("importance preconditions and the report file") {
    std::vector<InterLossKind> inters{{InterKind::MSE, 0.0}, {InterKind::PKD, 0.0}};
    auto few = scripted_records(inters, {"none"}, [](size_t i, size_t) { return 0.5 + 0.1 * i; }, 2);
    CHECK_THROWS(fanova_importance(few, 1));  // < 20 successes

    auto records = scripted_records(inters, {"none"}, [](size_t i, size_t) { return 0.5 + 0.1 * i; },
                                    12);
    records.push_back(records.front());
    records.back().failed = true;
    ImportanceReport rep = fanova_importance(records, 1);
    CHECK(rep.failed_trials == 1);

    std::string path = "importance_report.json";
    save_importance_report(rep, path);
    std::ifstream in(path);
    REQUIRE(in.good());
    std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(body.find("inter_loss") != std::string::npos);
    CHECK(body.find("total_variance") != std::string::npos);
    std::remove(path.c_str());
}
