#include "cle/report.hpp"

#include <cstdio>
#include <fstream>

#include "cle/error.hpp"

namespace cle {

namespace {

using ojson = nlohmann::ordered_json;

template <typename T>
ojson opt(const std::optional<T>& v)
{
    return v ? ojson(*v) : ojson(nullptr);
}

std::optional<double> mean_of(const std::vector<std::optional<double>>& values)
{
    if (values.empty()) return std::nullopt;
    double s = 0.0;
    for (const auto& v : values) {
        if (!v) return std::nullopt;
        s += *v;
    }
    return s / static_cast<double>(values.size());
}

std::string xml_escape(const std::string& s)
{
    std::string out;
    for (char c : s) {
        if (c == '&') out += "&amp;";
        else if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else if (c == '"') out += "&quot;";
        else out += c;
    }
    return out;
}

ojson reference_row(const char* model, double acc, double sens, double spec, double auc)
{
    ojson j;
    j["model"] = model;
    j["accuracy"] = acc;
    j["sensitivity"] = sens;
    j["specificity"] = spec;
    j["auc"] = auc;
    return j;
}

} // namespace

FoldReport fold_report(const ScoredFold& fold, double threshold)
{
    FoldReport r;
    r.fold = fold.fold;
    r.counts = classify_at_threshold(fold.items, threshold);
    r.rates = rates(r.counts);
    bool pos = false, neg = false;
    for (const auto& it : fold.items) (it.truth == Label::Diagnostic ? pos : neg) = true;
    if (pos && neg) r.auc = roc_curve(fold.items).auc;
    r.best_threshold = best_accuracy_threshold(fold.items);
    r.epochs = fold.epochs;
    r.best_epoch = fold.best_epoch;
    return r;
}

MeanReport mean_report(const std::vector<FoldReport>& folds)
{
    std::vector<std::optional<double>> acc, sens, spec, auc, bsens, bspec;
    for (const auto& f : folds) {
        acc.push_back(f.rates.accuracy);
        sens.push_back(f.rates.sensitivity);
        spec.push_back(f.rates.specificity);
        auc.push_back(f.auc);
        const Rates b = f.best_threshold ? rates(f.best_threshold->counts) : Rates{};
        bsens.push_back(b.sensitivity);
        bspec.push_back(b.specificity);
    }
    return {mean_of(acc), mean_of(sens), mean_of(spec), mean_of(auc), mean_of(bsens), mean_of(bspec)};
}

ojson reference_values(const RunInfo& info)
{
    ojson ref;
    ref["source"] = "published results on the private clinical dataset (16,795 images); not reproducible here";
    if (info.kind == "entropy") {
        ref["results"] = reference_row("Entropy-based", 0.5720, 0.9820, 0.1787, 0.7122);
        return ref;
    }
    const bool inception = info.arch && info.arch->find("inception") != std::string::npos;
    const bool low = info.threshold < 0.5;
    if (inception) {
        ref["results"] = low ? reference_row("GoogLeNet II (threshold 0.00001)", 0.7975, 0.9791, 0.6233, 0.9553)
                             : reference_row("GoogLeNet (threshold 0.5)", 0.9074, 0.9080, 0.9067, 0.9553);
        ref["gpu_inference_images_per_second"] = 84;
    } else {
        ref["results"] = low ? reference_row("AlexNet II (threshold 0.00001)", 0.7595, 0.9842, 0.5440, 0.9583)
                             : reference_row("AlexNet (threshold 0.5)", 0.9079, 0.9071, 0.9086, 0.9583);
        ref["gpu_inference_images_per_second"] = 95;
    }
    return ref;
}

ojson build_report(const RunInfo& info, const std::vector<FoldReport>& folds, const Timings& timings)
{
    ojson j;
    j["kind"] = info.kind;
    j["arch"] = opt(info.arch);
    j["threshold"] = info.threshold;
    j["records"] = info.records;
    j["skipped"] = info.skipped;
    j["config"] = info.config;

    j["folds"] = ojson::array();
    for (const auto& f : folds) {
        ojson b;
        b["fold"] = f.fold;
        b["test_images"] = f.counts.total();
        b["counts"] = {{"tp", f.counts.tp}, {"fp", f.counts.fp}, {"tn", f.counts.tn}, {"fn", f.counts.fn}};
        b["accuracy"] = opt(f.rates.accuracy);
        b["sensitivity"] = opt(f.rates.sensitivity);
        b["specificity"] = opt(f.rates.specificity);
        b["auc"] = opt(f.auc);
        if (f.best_threshold) {
            const Rates r = rates(f.best_threshold->counts);
            b["best_threshold"] = {{"threshold", f.best_threshold->threshold},
                                   {"accuracy", opt(r.accuracy)},
                                   {"sensitivity", opt(r.sensitivity)},
                                   {"specificity", opt(r.specificity)}};
        } else {
            b["best_threshold"] = nullptr;
        }
        b["epochs"] = opt(f.epochs);
        b["best_epoch"] = opt(f.best_epoch);
        j["folds"].push_back(b);
    }

    const MeanReport m = mean_report(folds);
    j["mean"] = {{"accuracy", opt(m.accuracy)},
                 {"sensitivity", opt(m.sensitivity)},
                 {"specificity", opt(m.specificity)},
                 {"auc", opt(m.auc)},
                 {"best_threshold_sensitivity", opt(m.best_threshold_sensitivity)},
                 {"best_threshold_specificity", opt(m.best_threshold_specificity)}};
    j["reference"] = reference_values(info);

    ojson t;
    t["wall_seconds"] = timings.wall_seconds;
    t["scoring_seconds"] = timings.scoring_seconds;
    t["scored_images"] = timings.scored_images;
    t["images_per_second"] = timings.scoring_seconds > 0.0
                                 ? ojson(static_cast<double>(timings.scored_images) / timings.scoring_seconds)
                                 : ojson(nullptr);
    j["timings"] = t;
    return j;
}

std::string report_without_timings(const ojson& report)
{
    ojson copy = report;
    copy.erase("timings");
    return copy.dump(2);
}

std::string roc_svg(const std::vector<RocCurve>& folds, const RocCurve& mean, const std::string& title)
{
    constexpr double left = 70, top = 40, side = 400;
    char buf[96];
    auto polyline = [&](const RocCurve& c, const char* cls, const char* style) {
        std::string pts;
        for (const auto& p : c.points) {
            std::snprintf(buf, sizeof buf, "%s%.2f,%.2f", pts.empty() ? "" : " ", left + p.fpr * side,
                          top + (1.0 - p.tpr) * side);
            pts += buf;
        }
        return std::string("  <polyline class=\"") + cls + "\" fill=\"none\" " + style + " points=\"" + pts + "\"/>\n";
    };

    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"500\" height=\"520\" viewBox=\"0 0 500 520\">\n";
    svg += "  <rect width=\"500\" height=\"520\" fill=\"white\"/>\n";
    svg += "  <text x=\"270\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">" +
           xml_escape(title) + "</text>\n";
    svg += "  <rect x=\"70\" y=\"40\" width=\"400\" height=\"400\" fill=\"none\" stroke=\"black\"/>\n";
    svg += "  <line x1=\"70\" y1=\"440\" x2=\"470\" y2=\"40\" stroke=\"#bbbbbb\" stroke-dasharray=\"4 4\"/>\n";
    for (int i = 0; i <= 10; i += 2) {
        const double v = i / 10.0;
        std::snprintf(buf, sizeof buf, "%.1f", v);
        svg += "  <text x=\"" + std::to_string(static_cast<int>(left + v * side)) +
               "\" y=\"458\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" + buf + "</text>\n";
        svg += "  <text x=\"62\" y=\"" + std::to_string(static_cast<int>(top + (1 - v) * side + 4)) +
               "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" + buf + "</text>\n";
    }
    svg += "  <text x=\"270\" y=\"485\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">"
           "1 - specificity (FPR)</text>\n";
    svg += "  <text x=\"20\" y=\"240\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
           "transform=\"rotate(-90 20 240)\">sensitivity (TPR) of model</text>\n";
    const char* palette[] = {"#e41a1c", "#4daf4a", "#984ea3", "#ff7f00", "#a65628", "#f781bf"};
    for (std::size_t f = 0; f < folds.size(); ++f) {
        const std::string style = std::string("stroke=\"") + palette[f % 6] + "\" stroke-width=\"1.2\" stroke-opacity=\"0.8\"";
        svg += polyline(folds[f], "fold", style.c_str());
    }
    svg += polyline(mean, "mean", "stroke=\"#1f3a93\" stroke-width=\"2.5\"");
    std::snprintf(buf, sizeof buf, "mean AUC %.4f", mean.auc);
    svg += "  <text x=\"460\" y=\"425\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\">" +
           std::string(buf) + "</text>\n";
    svg += "</svg>\n";
    return svg;
}

void write_roc_files(const std::filesystem::path& dir, const std::vector<ScoredFold>& folds, const std::string& title)
{
    std::vector<RocCurve> curves;
    for (const auto& f : folds) {
        curves.push_back(roc_curve(f.items));
        write_text(dir / ("roc_fold" + std::to_string(f.fold) + ".csv"), roc_csv(curves.back()));
    }
    const RocCurve mean = mean_roc(curves);
    write_text(dir / "roc_mean.csv", roc_csv(mean));
    write_text(dir / "roc.svg", roc_svg(curves, mean, title));
}

void write_text(const std::filesystem::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

} // namespace cle
