// cle-triage: synthetic data generation, splitting, cross-validated training,
// evaluation, ROC export, the entropy baseline and the streaming bench.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "cle/checkpoint.hpp"
#include "cle/entropy.hpp"
#include "cle/error.hpp"
#include "cle/net_spec.hpp"
#include "cle/pipeline.hpp"
#include "cle/report.hpp"
#include "cle/stream.hpp"
#include "cle/synthetic.hpp"
#include "cle/trainer.hpp"

namespace fs = std::filesystem;
using namespace cle;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

void check_threshold(double t)
{
    if (!(t >= 0.0 && t <= 1.0)) {
        std::ostringstream msg;
        msg << "threshold " << t << " is outside [0,1]";
        throw ValidationError(msg.str());
    }
}

void emit_json(const nlohmann::ordered_json& j, const std::string& out)
{
    const std::string text = j.dump(2) + "\n";
    if (out.empty()) {
        std::cout << text;
    } else {
        write_text(out, text);
        std::cerr << "wrote " << out << "\n";
    }
}

std::string pct(const std::optional<double>& v)
{
    if (!v) return "n/a";
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * *v);
    return buf;
}

void print_summary(const std::vector<FoldReport>& folds)
{
    std::fprintf(stderr, "%-6s %9s %12s %12s %8s\n", "fold", "accuracy", "sensitivity", "specificity", "auc");
    for (const auto& f : folds)
        std::fprintf(stderr, "%-6zu %9s %12s %12s %8.4f\n", f.fold, pct(f.rates.accuracy).c_str(),
                     pct(f.rates.sensitivity).c_str(), pct(f.rates.specificity).c_str(), f.auc.value_or(NAN));
    const MeanReport m = mean_report(folds);
    std::fprintf(stderr, "%-6s %9s %12s %12s %8.4f\n", "mean", pct(m.accuracy).c_str(), pct(m.sensitivity).c_str(),
                 pct(m.specificity).c_str(), m.auc.value_or(NAN));
}

std::vector<FoldReport> fold_reports(const std::vector<ScoredFold>& folds, double threshold)
{
    std::vector<FoldReport> out;
    for (const auto& f : folds) out.push_back(fold_report(f, threshold));
    return out;
}

// ---- gen-data ----

struct GenArgs {
    std::size_t n_per_class = 1000;
    std::size_t size = 64;
    std::uint64_t seed = 7;
    std::string out;
};

void cmd_gen_data(const GenArgs& a)
{
    generate_synthetic_dataset(a.n_per_class, a.size, a.seed, a.out);
    std::cout << (fs::path(a.out) / "manifest.jsonl").string() << "\n";
}

// ---- split ----

struct SplitArgs {
    std::string manifest;
    std::size_t k = 4;
    std::uint64_t seed = 7;
    bool by_patient = false;
    std::string out;
};

void cmd_split(const SplitArgs& a)
{
    DatasetManifest m = read_manifest(a.manifest);
    std::vector<std::string> groups;
    if (a.by_patient) {
        for (const auto& r : m.records) {
            if (!r.patient) throw ValidationError("record '" + r.path + "' has no patient id for --by-patient");
            groups.push_back(*r.patient);
        }
    }
    const auto fold_of = stratified_kfold(m.labels(), a.k, a.seed, a.by_patient ? &groups : nullptr);
    for (std::size_t i = 0; i < m.records.size(); ++i) m.records[i].fold = fold_of[i];
    const fs::path out = a.out.empty() ? fs::path(a.manifest) : fs::path(a.out);
    write_manifest(out, m);

    std::vector<std::map<Label, std::size_t>> counts(a.k);
    for (const auto& r : m.records) ++counts[*r.fold][r.label];
    for (std::size_t f = 0; f < a.k; ++f)
        std::fprintf(stderr, "fold %zu: %zu diagnostic, %zu nondiagnostic\n", f, counts[f][Label::Diagnostic],
                     counts[f][Label::Nondiagnostic]);
    std::cout << out.string() << "\n";
}

// ---- train ----

struct TrainArgs {
    std::string manifest;
    std::string arch = "mini-alexnet";
    std::string config;
    std::string out_dir;
    double threshold = 0.5;
    bool quiet = false;
};

void cmd_train(const TrainArgs& a)
{
    check_threshold(a.threshold);
    const auto t0 = Clock::now();
    const NetSpec spec = build_architecture(a.arch);
    const TrainConfig config = a.config.empty() ? TrainConfig{} : load_train_config(a.config);
    const LoadedDataset data = load_dataset(a.manifest, spec);
    fs::create_directories(a.out_dir);
    const fs::path out(a.out_dir);

    EpochCallback progress;
    if (!a.quiet)
        progress = [&](std::size_t fold, const EpochRecord& r) {
            std::fprintf(stderr, "[%6.0fs] fold %zu epoch %2zu  lr %.0e  train_loss %.4f  val_loss %.4f  val_acc %.4f\n",
                         since(t0), fold, r.epoch, r.learning_rate, r.train_loss, r.val_loss, r.val_accuracy);
        };
    const auto outcomes = cross_validate(data.manifest, data.images, spec, config, progress);

    std::vector<Checkpoint> checkpoints;
    for (const auto& o : outcomes) {
        save_checkpoint(o.training.best, out / checkpoint_name(o.training.fold));
        write_text(out / ("curves_fold" + std::to_string(o.training.fold) + ".csv"), curves_csv(o.training.history));
        checkpoints.push_back(o.training.best);
    }

    // Score the test folds again from the saved weights, timed on its own.
    const auto ts = Clock::now();
    const auto rescored = score_with_checkpoints(data, checkpoints);
    const double scoring = since(ts);
    auto folds = scored_folds(outcomes);
    for (std::size_t f = 0; f < folds.size(); ++f)
        for (std::size_t j = 0; j < folds[f].items.size(); ++j)
            if (folds[f].items[j].score != rescored[f].items[j].score)
                throw Error("fold " + std::to_string(f) + ": saved checkpoint does not reproduce its test scores");

    const auto reports = fold_reports(folds, a.threshold);
    RunInfo info{"cnn", spec.name, a.threshold, to_json(config), data.manifest.records.size(), 0};
    std::size_t scored = 0;
    for (const auto& f : folds) scored += f.items.size();
    const auto report = build_report(info, reports, {since(t0), scoring, scored});
    write_text(out / "report.json", report.dump(2) + "\n");
    write_roc_files(out, folds, spec.name + " ROC, " + std::to_string(folds.size()) + "-fold");
    print_summary(reports);
    std::cout << (out / "report.json").string() << "\n";
}

// ---- eval / roc ----

struct EvalArgs {
    std::string manifest;
    std::string checkpoints_dir;
    double threshold = 0.5;
    std::string out;
};

std::pair<LoadedDataset, std::vector<ScoredFold>> score_from_checkpoints(const std::string& manifest,
                                                                         const std::string& dir, double& seconds)
{
    const DatasetManifest m = read_manifest(manifest);
    const auto checkpoints = load_fold_checkpoints(dir, test_folds(m).size());
    LoadedDataset data = load_dataset(manifest, checkpoints.front().spec);
    const auto t0 = Clock::now();
    auto folds = score_with_checkpoints(data, checkpoints);
    seconds = since(t0);
    return {std::move(data), std::move(folds)};
}

void cmd_eval(const EvalArgs& a)
{
    check_threshold(a.threshold);
    const auto t0 = Clock::now();
    double scoring = 0.0;
    const auto [data, folds] = score_from_checkpoints(a.manifest, a.checkpoints_dir, scoring);
    const auto ckpt = load_checkpoint(fs::path(a.checkpoints_dir) / checkpoint_name(0));
    const auto reports = fold_reports(folds, a.threshold);
    RunInfo info{"cnn", ckpt.spec.name, a.threshold, nullptr, data.manifest.records.size(), 0};
    std::size_t scored = 0;
    for (const auto& f : folds) scored += f.items.size();
    print_summary(reports);
    emit_json(build_report(info, reports, {since(t0), scoring, scored}), a.out);
}

struct RocArgs {
    std::string manifest;
    std::string checkpoints_dir;
    bool entropy = false;
    std::string out_dir;
};

void cmd_roc(const RocArgs& a)
{
    if (a.entropy == !a.checkpoints_dir.empty())
        throw UsageError("give exactly one of --checkpoints-dir or --entropy");
    fs::create_directories(a.out_dir);
    if (a.entropy) {
        const DatasetManifest m = read_manifest(a.manifest);
        write_roc_files(a.out_dir, entropy_folds(m, entropy_classifier(m)), "entropy baseline ROC");
    } else {
        double scoring = 0.0;
        const auto [data, folds] = score_from_checkpoints(a.manifest, a.checkpoints_dir, scoring);
        write_roc_files(a.out_dir, folds, "CNN ROC, " + std::to_string(folds.size()) + "-fold");
    }
    std::cout << (fs::path(a.out_dir) / "roc.svg").string() << "\n";
}

// ---- entropy-eval ----

struct EntropyArgs {
    std::string manifest;
    double threshold = 0.5;
    std::string out;
    std::string scores_csv;
};

void cmd_entropy_eval(const EntropyArgs& a)
{
    check_threshold(a.threshold);
    const auto t0 = Clock::now();
    const DatasetManifest m = read_manifest(a.manifest);
    test_folds(m);  // fail early on unassigned records
    const auto ts = Clock::now();
    const EntropyScoring scoring = entropy_classifier(m);
    const double scoring_seconds = since(ts);
    for (const auto& e : scoring.errors) std::cerr << "warning: skipped " << e << "\n";
    if (!a.scores_csv.empty()) write_text(a.scores_csv, entropy_csv(m, scoring));

    const auto reports = fold_reports(entropy_folds(m, scoring), a.threshold);
    RunInfo info{"entropy", std::nullopt, a.threshold, nullptr, m.records.size(), scoring.skipped()};
    print_summary(reports);
    emit_json(build_report(info, reports, {since(t0), scoring_seconds, scoring.items.size()}), a.out);
}

// ---- stream-bench ----

struct StreamArgs {
    std::string checkpoint;
    std::string manifest;
    StreamOptions options;
    std::string out;
};

void cmd_stream_bench(const StreamArgs& a)
{
    const Checkpoint ckpt = load_checkpoint(a.checkpoint);
    const DatasetManifest m = read_manifest(a.manifest);
    const StreamResult r = run_stream_bench(ckpt, m, a.options);
    std::fprintf(stderr, "%zu frames: %.1f images/s end to end, %.1f images/s inference only, p50 %.2f ms, p99 %.2f ms\n",
                 r.frames, r.throughput(), r.inference_throughput(), r.latency_p50_ms, r.latency_p99_ms);
    emit_json(stream_report(r, a.options), a.out);
    if (!r.bit_exact) throw Error("streamed scores differ from batch evaluation");
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Triage of confocal endomicroscopy frames into diagnostic and nondiagnostic"};
    app.require_subcommand(1);

    GenArgs gen;
    auto* g = app.add_subcommand("gen-data", "Generate the synthetic surrogate dataset");
    g->add_option("--n-per-class", gen.n_per_class, "Images per class")->capture_default_str();
    g->add_option("--size", gen.size, "Square image size (>= 32)")->capture_default_str();
    g->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
    g->add_option("--out", gen.out, "Output directory")->required();
    g->callback([&] { cmd_gen_data(gen); });

    SplitArgs split;
    auto* s = app.add_subcommand("split", "Assign stratified k-fold test folds");
    s->add_option("--manifest", split.manifest, "Manifest (JSON lines)")->required();
    s->add_option("--k", split.k, "Number of folds")->capture_default_str();
    s->add_option("--seed", split.seed, "Shuffle seed")->capture_default_str();
    s->add_flag("--by-patient", split.by_patient, "Keep every patient's frames in one fold");
    s->add_option("--out", split.out, "Output manifest (default: rewrite the input)");
    s->callback([&] { cmd_split(split); });

    TrainArgs train;
    auto* t = app.add_subcommand("train", "Cross-validated training");
    t->add_option("--manifest", train.manifest, "Fold-assigned manifest")->required();
    t->add_option("--arch", train.arch, "mini-alexnet, mini-inception or full-alexnet")->capture_default_str();
    t->add_option("--config", train.config, "Training config JSON");
    t->add_option("--out-dir", train.out_dir, "Directory for checkpoints, curves and report")->required();
    t->add_option("--threshold", train.threshold, "Decision threshold for the report")->capture_default_str();
    t->add_flag("--quiet", train.quiet, "No per-epoch progress");
    t->callback([&] { cmd_train(train); });

    EvalArgs eval;
    auto* e = app.add_subcommand("eval", "Score test folds with their fold checkpoints");
    e->add_option("--manifest", eval.manifest, "Fold-assigned manifest")->required();
    e->add_option("--checkpoints-dir", eval.checkpoints_dir, "Directory with fold<K>.ckpt")->required();
    e->add_option("--threshold", eval.threshold, "Decision threshold")->capture_default_str();
    e->add_option("--out", eval.out, "Report path (default: stdout)");
    e->callback([&] { cmd_eval(eval); });

    RocArgs roc;
    auto* r = app.add_subcommand("roc", "Per-fold and mean ROC as CSV and SVG");
    r->add_option("--manifest", roc.manifest, "Fold-assigned manifest")->required();
    r->add_option("--checkpoints-dir", roc.checkpoints_dir, "Directory with fold<K>.ckpt");
    r->add_flag("--entropy", roc.entropy, "Use the entropy baseline instead of checkpoints");
    r->add_option("--out-dir", roc.out_dir, "Output directory")->required();
    r->callback([&] { cmd_roc(roc); });

    EntropyArgs ent;
    auto* en = app.add_subcommand("entropy-eval", "Entropy baseline on the test folds");
    en->add_option("--manifest", ent.manifest, "Fold-assigned manifest")->required();
    en->add_option("--threshold", ent.threshold, "Decision threshold")->capture_default_str();
    en->add_option("--out", ent.out, "Report path (default: stdout)");
    en->add_option("--scores-csv", ent.scores_csv, "Also write path,label,entropy_norm");
    en->callback([&] { cmd_entropy_eval(ent); });

    StreamArgs stream;
    auto* sb = app.add_subcommand("stream-bench", "Streaming decode/preprocess/inference benchmark");
    sb->add_option("--checkpoint", stream.checkpoint, "Checkpoint file")->required();
    sb->add_option("--manifest", stream.manifest, "Frames to replay")->required();
    sb->add_option("--batch", stream.options.batch, "Frames per inference call")->capture_default_str();
    sb->add_option("--limit", stream.options.limit, "Replay at most this many frames (0 = all)")->capture_default_str();
    sb->add_option("--queue", stream.options.queue_capacity, "Queue capacity between stages")->capture_default_str();
    sb->add_option("--out", stream.out, "Report path (default: stdout)");
    sb->callback([&] { cmd_stream_bench(stream); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& ex) {
        return app.exit(ex);
    } catch (const CLI::ParseError& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 2;
    } catch (const UsageError& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 2;
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 1;
    }
    return 0;
}
