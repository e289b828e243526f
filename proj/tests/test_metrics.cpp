#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "cle/error.hpp"
#include "cle/metrics.hpp"

using namespace cle;

namespace {

std::vector<ScoredItem> items_from(const std::vector<double>& pos, const std::vector<double>& neg)
{
    std::vector<ScoredItem> out;
    for (double s : pos) out.push_back({s, Label::Diagnostic});
    for (double s : neg) out.push_back({s, Label::Nondiagnostic});
    return out;
}

// Brute-force pair statistic: P(pos > neg) + 0.5 P(pos == neg).
double mann_whitney(const std::vector<ScoredItem>& items)
{
    double wins = 0.0;
    std::size_t pairs = 0;
    for (const auto& p : items) {
        if (p.truth != Label::Diagnostic) continue;
        for (const auto& n : items) {
            if (n.truth != Label::Nondiagnostic) continue;
            ++pairs;
            wins += p.score > n.score ? 1.0 : p.score == n.score ? 0.5 : 0.0;
        }
    }
    return wins / static_cast<double>(pairs);
}

// Random items with both classes; coarse scores force ties.
std::vector<ScoredItem> random_items(std::mt19937_64& rng, std::size_t n, bool ties)
{
    std::vector<ScoredItem> out(n);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        double s = u(rng);
        if (ties) s = std::floor(s * 8.0) / 8.0;
        out[i] = {s, (i == 0 || (i > 1 && rng() % 2)) ? Label::Diagnostic : Label::Nondiagnostic};
    }
    return out;
}

void check_roc_invariants(const RocCurve& c)
{
    REQUIRE(c.points.size() >= 2);
    CHECK(c.points.front().fpr == 0.0);
    CHECK(c.points.front().tpr == 0.0);
    CHECK(c.points.back().fpr == 1.0);
    CHECK(c.points.back().tpr == 1.0);
    for (std::size_t i = 1; i < c.points.size(); ++i) {
        CHECK(c.points[i].fpr >= c.points[i - 1].fpr);
        CHECK(c.points[i].tpr >= c.points[i - 1].tpr);
    }
    CHECK(c.auc >= 0.0);
    CHECK(c.auc <= 1.0);
}

} // namespace

TEST_CASE("thresholded classification")
{
    const auto items = items_from({0.9, 0.5, 0.2}, {0.7, 0.5, 0.1, 0.0});

    SUBCASE("score equal to the threshold counts as diagnostic")
    {
        const auto c = classify_at_threshold(items, 0.5);
        CHECK(c == ConfusionCounts{2, 2, 2, 1});
    }

    SUBCASE("threshold 0 predicts everything diagnostic")
    {
        const auto r = rates(classify_at_threshold(items, 0.0));
        CHECK(*r.sensitivity == 1.0);
        CHECK(*r.specificity == 0.0);
    }

    SUBCASE("monotone in the threshold")
    {
        std::mt19937_64 rng(3);
        const auto many = random_items(rng, 300, false);
        ConfusionCounts prev = classify_at_threshold(many, 1.0);
        for (int i = 999; i >= 0; --i) {
            const auto c = classify_at_threshold(many, i / 1000.0);
            CHECK(c.tp >= prev.tp);
            CHECK(c.fp >= prev.fp);
            CHECK(c.total() == many.size());
            prev = c;
        }
    }

    SUBCASE("bad input")
    {
        CHECK_THROWS_AS(classify_at_threshold({}, 0.5), ValidationError);
        CHECK_THROWS_AS(classify_at_threshold(items, 1.5), ValidationError);
        CHECK_THROWS_AS(classify_at_threshold(items, -0.1), ValidationError);
        CHECK_THROWS_AS(classify_at_threshold(items_from({1.2}, {0.1}), 0.5), ValidationError);
    }
}

TEST_CASE("rates from counts")
{
    SUBCASE("all correct")
    {
        CHECK(*rates({5, 0, 7, 0}).accuracy == 1.0);
    }

    SUBCASE("counts matching a published mean row")
    {
        const auto r = rates({9071, 914, 9086, 929});
        CHECK(*r.sensitivity == doctest::Approx(0.9071).epsilon(1e-12));
        CHECK(*r.specificity == doctest::Approx(0.9086).epsilon(1e-12));
        CHECK(*r.accuracy == doctest::Approx(0.90785).epsilon(1e-12));
    }

    SUBCASE("zero denominators are undefined, not zero")
    {
        const auto r = rates({0, 3, 4, 0});
        CHECK_FALSE(r.sensitivity.has_value());
        CHECK(r.specificity.has_value());
        CHECK_FALSE(rates({}).accuracy.has_value());
        CHECK_FALSE(rates({2, 0, 0, 1}).specificity.has_value());
    }
}

TEST_CASE("ROC curve and AUC")
{
    SUBCASE("perfect separation and inversion")
    {
        CHECK(roc_curve(items_from({0.9, 0.8}, {0.1, 0.2})).auc == 1.0);
        CHECK(roc_curve(items_from({0.4}, {0.6})).auc == 0.0);
    }

    SUBCASE("sentinels and one point per distinct score")
    {
        const auto c = roc_curve(items_from({0.9, 0.5}, {0.5, 0.1}));
        REQUIRE(c.points.size() == 5);
        CHECK(std::isinf(c.points.front().threshold));
        CHECK(c.points.front().threshold > 0);
        CHECK(std::isinf(c.points.back().threshold));
        CHECK(c.points.back().threshold < 0);
        CHECK(c.points[2].threshold == 0.5);
        CHECK(c.points[2].fpr == 0.5);
        CHECK(c.points[2].tpr == 1.0);
        CHECK(c.auc == 0.875);
    }

    SUBCASE("single class is rejected")
    {
        CHECK_THROWS_AS(roc_curve(items_from({0.1, 0.2}, {})), ValidationError);
        CHECK_THROWS_AS(roc_curve(items_from({}, {0.3})), ValidationError);
    }

    SUBCASE("trapezoid equals the Mann-Whitney statistic")
    {
        std::mt19937_64 rng(2026);
        for (int trial = 0; trial < 300; ++trial) {
            const std::size_t n = trial == 0 ? 50 : 2 + rng() % 199;
            const auto items = random_items(rng, n, trial % 2 == 1);
            const auto c = roc_curve(items);
            CHECK(std::abs(c.auc - mann_whitney(items)) <= 1e-12);
            check_roc_invariants(c);
        }
    }

    SUBCASE("flipping scores mirrors the AUC")
    {
        std::mt19937_64 rng(8);
        for (int trial = 0; trial < 50; ++trial) {
            auto items = random_items(rng, 80, false);
            const double auc = roc_curve(items).auc;
            for (auto& it : items) it.score = 1.0 - it.score;
            CHECK(roc_curve(items).auc == doctest::Approx(1.0 - auc).epsilon(1e-12));
        }
    }

    SUBCASE("invariant under strictly increasing transforms")
    {
        std::mt19937_64 rng(9);
        for (int trial = 0; trial < 50; ++trial) {
            auto items = random_items(rng, 120, trial % 2 == 0);
            const double auc = roc_curve(items).auc;
            for (auto& it : items) it.score = std::pow(it.score, 3.0) * 0.5 + 0.25;
            CHECK(roc_curve(items).auc == auc);
        }
    }

    SUBCASE("threshold choice leaves the curve untouched")
    {
        std::mt19937_64 rng(10);
        const auto items = random_items(rng, 100, false);
        const auto before = roc_curve(items);
        classify_at_threshold(items, 0.5);
        classify_at_threshold(items, 1e-5);
        CHECK(roc_curve(items).auc == before.auc);
    }
}

TEST_CASE("mean ROC by vertical averaging")
{
    std::mt19937_64 rng(21);
    const auto a = roc_curve(random_items(rng, 60, false));
    const auto b = roc_curve(random_items(rng, 90, true));

    SUBCASE("grid, endpoints and (0,0)")
    {
        const RocCurve curves[] = {a, b};
        const auto m = mean_roc(curves);
        REQUIRE(m.points.size() == kRocGridPoints + 1);
        check_roc_invariants(m);
        CHECK(m.points[1].fpr == 0.0);
        CHECK(m.points[501].fpr == 0.5);
        CHECK(m.auc == (a.auc + b.auc) / 2);
    }

    SUBCASE("one curve and a curve with itself give that curve on the grid")
    {
        const RocCurve one[] = {a};
        const RocCurve twice[] = {a, a};
        const auto m1 = mean_roc(one);
        const auto m2 = mean_roc(twice);
        for (std::size_t j = 1; j < m1.points.size(); ++j) {
            CHECK(m1.points[j].tpr == doctest::Approx(tpr_at(a, m1.points[j].fpr)).epsilon(1e-15));
            CHECK(m2.points[j].tpr == doctest::Approx(m1.points[j].tpr).epsilon(1e-15));
        }
        CHECK(m1.auc == a.auc);
    }

    SUBCASE("vertical runs take the upper envelope")
    {
        const auto c = roc_curve(items_from({0.9, 0.5}, {0.5, 0.1}));
        CHECK(tpr_at(c, 0.5) == 1.0);
        CHECK(tpr_at(c, 0.0) == 0.5);
        CHECK(tpr_at(c, 0.25) == doctest::Approx(0.75));
    }

    SUBCASE("mean of the published fold AUCs")
    {
        std::vector<RocCurve> folds;
        for (double auc : {0.9607, 0.9583, 0.9584, 0.9556}) {
            RocCurve c = a;
            c.auc = auc;
            folds.push_back(c);
        }
        CHECK(std::round(mean_roc(folds).auc * 1e4) / 1e4 == doctest::Approx(0.9583).epsilon(1e-12));
    }
}

TEST_CASE("best-accuracy threshold")
{
    const auto items = items_from({0.9, 0.8, 0.3}, {0.6, 0.2, 0.1});
    // 0.8 and 0.3 both reach 5/6; the higher threshold wins.
    const auto best = best_accuracy_threshold(items);
    CHECK(best.threshold == 0.8);
    CHECK(best.counts == ConfusionCounts{2, 0, 3, 1});
}

TEST_CASE("ROC CSV export")
{
    const auto csv = roc_csv(roc_curve(items_from({0.75}, {0.25})));
    CHECK(csv == "fpr,tpr,threshold\n0,0,inf\n0,1,0.75\n1,1,0.25\n1,1,-inf\n");
}
