#include "cle/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>

#include "cle/error.hpp"

namespace cle {

namespace {

std::string format_double(double v)
{
    if (std::isnan(v)) return "";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

void check_scores(std::span<const ScoredItem> items)
{
    for (std::size_t i = 0; i < items.size(); ++i)
        if (!(items[i].score >= 0.0 && items[i].score <= 1.0))
            throw ValidationError("score " + format_double(items[i].score) + " of item " + std::to_string(i) +
                                  " is outside [0,1]");
}

} // namespace

ConfusionCounts classify_at_threshold(std::span<const ScoredItem> items, double threshold)
{
    if (items.empty()) throw ValidationError("cannot classify an empty item list");
    if (!(threshold >= 0.0 && threshold <= 1.0))
        throw ValidationError("threshold " + format_double(threshold) + " is outside [0,1]");
    check_scores(items);
    ConfusionCounts c;
    for (const auto& it : items) {
        const bool predicted = it.score >= threshold;
        if (it.truth == Label::Diagnostic)
            (predicted ? c.tp : c.fn)++;
        else
            (predicted ? c.fp : c.tn)++;
    }
    return c;
}

Rates rates(const ConfusionCounts& c)
{
    auto ratio = [](std::uint64_t num, std::uint64_t den) -> std::optional<double> {
        if (den == 0) return std::nullopt;
        return static_cast<double>(num) / static_cast<double>(den);
    };
    return {ratio(c.tp + c.tn, c.total()), ratio(c.tp, c.tp + c.fn), ratio(c.tn, c.tn + c.fp)};
}

RocCurve roc_curve(std::span<const ScoredItem> items)
{
    check_scores(items);
    std::vector<ScoredItem> sorted(items.begin(), items.end());
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const ScoredItem& a, const ScoredItem& b) { return a.score > b.score; });
    std::uint64_t P = 0, N = 0;
    for (const auto& it : sorted) (it.truth == Label::Diagnostic ? P : N)++;
    if (P == 0 || N == 0)
        throw ValidationError("ROC needs both classes, got " + std::to_string(P) + " diagnostic and " +
                              std::to_string(N) + " nondiagnostic items");

    RocCurve curve;
    curve.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
    std::uint64_t tp = 0, fp = 0, area2 = 0;  // area2 = 2 * P * N * AUC, exact
    for (std::size_t i = 0; i < sorted.size();) {
        const double t = sorted[i].score;
        const std::uint64_t tp0 = tp, fp0 = fp;
        for (; i < sorted.size() && sorted[i].score == t; ++i) (sorted[i].truth == Label::Diagnostic ? tp : fp)++;
        area2 += (fp - fp0) * (tp + tp0);
        curve.points.push_back({static_cast<double>(fp) / static_cast<double>(N),
                                static_cast<double>(tp) / static_cast<double>(P), t});
    }
    curve.points.push_back({1.0, 1.0, -std::numeric_limits<double>::infinity()});
    curve.auc = static_cast<double>(area2) / (2.0 * static_cast<double>(P) * static_cast<double>(N));
    return curve;
}

double tpr_at(const RocCurve& curve, double fpr)
{
    const auto& pts = curve.points;
    if (pts.empty()) throw ValidationError("empty ROC curve");
    // Last point with fpr <= x: on a vertical run this is the top.
    auto it = std::upper_bound(pts.begin(), pts.end(), fpr,
                               [](double x, const RocPoint& p) { return x < p.fpr; });
    if (it == pts.begin()) return pts.front().tpr;
    const RocPoint& lo = *(it - 1);
    if (lo.fpr == fpr || it == pts.end()) return lo.tpr;
    const RocPoint& hi = *it;
    return lo.tpr + (hi.tpr - lo.tpr) * (fpr - lo.fpr) / (hi.fpr - lo.fpr);
}

RocCurve mean_roc(std::span<const RocCurve> curves)
{
    if (curves.empty()) throw ValidationError("mean ROC of zero curves");
    const double nan = std::numeric_limits<double>::quiet_NaN();
    RocCurve mean;
    mean.points.push_back({0.0, 0.0, nan});
    for (std::size_t j = 0; j < kRocGridPoints; ++j) {
        const double x = static_cast<double>(j) / static_cast<double>(kRocGridPoints - 1);
        double s = 0.0;
        for (const auto& c : curves) s += tpr_at(c, x);
        mean.points.push_back({x, s / static_cast<double>(curves.size()), nan});
    }
    double auc = 0.0;
    for (const auto& c : curves) auc += c.auc;
    mean.auc = auc / static_cast<double>(curves.size());
    return mean;
}

ThresholdChoice best_accuracy_threshold(std::span<const ScoredItem> items)
{
    if (items.empty()) throw ValidationError("cannot pick a threshold for an empty item list");
    check_scores(items);
    std::vector<double> scores;
    for (const auto& it : items) scores.push_back(it.score);
    std::sort(scores.begin(), scores.end(), std::greater<>());
    scores.erase(std::unique(scores.begin(), scores.end()), scores.end());

    ThresholdChoice best{scores.front(), classify_at_threshold(items, scores.front())};
    for (double t : scores) {
        const ConfusionCounts c = classify_at_threshold(items, t);
        if (c.tp + c.tn > best.counts.tp + best.counts.tn) best = {t, c};
    }
    return best;
}

std::string roc_csv(const RocCurve& curve)
{
    std::string out = "fpr,tpr,threshold\n";
    for (const auto& p : curve.points)
        out += format_double(p.fpr) + "," + format_double(p.tpr) + "," + format_double(p.threshold) + "\n";
    return out;
}

} // namespace cle
