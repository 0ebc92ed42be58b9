// fusionctl: generate data, train, evaluate, quantize, infer, bench and
// estimate power from the command line.
//
// Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical failure.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fusion/checkpoint.hpp"
#include "fusion/errors.hpp"
#include "fusion/experiment.hpp"
#include "fusion/io.hpp"
#include "fusion/metrics.hpp"
#include "fusion/power.hpp"
#include "fusion/quantization.hpp"
#include "fusion/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fusion;

namespace {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

struct Options {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    bool quiet = false;
};

ExperimentConfig resolve_config(const Options& o)
{
    ExperimentConfig c = o.config_path.empty() ? ExperimentConfig{} : load_experiment_config(o.config_path);
    if (o.seed)
        c.seed = *o.seed;
    return c;
}

void write_json(const fs::path& path, const json& j)
{
    io::write_text_atomic(path, j.dump(2) + "\n");
}

void snapshot(const ExperimentConfig& c, const fs::path& dir)
{
    ExperimentConfig checked = c;
    checked.validate();
    save_experiment_config(checked, dir / "config.resolved.json");
}

std::vector<std::string> class_names()
{
    return {kGestureNames.begin(), kGestureNames.end()};
}

Dataset require_dataset(const std::string& path)
{
    if (!fs::exists(path))
        throw FormatError("dataset " + path + " does not exist (run `fusionctl generate` first)");
    return load_dataset(path);
}

std::vector<std::size_t> complement(std::size_t n, std::span<const std::size_t> excluded)
{
    std::vector<bool> skip(n, false);
    for (std::size_t i : excluded)
        skip.at(i) = true;
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < n; ++i)
        if (!skip[i])
            out.push_back(i);
    return out;
}

std::vector<std::size_t> seeded_subset(std::vector<std::size_t> pool, std::size_t count, std::uint64_t seed)
{
    Rng rng(derive_seed(seed, 0x7375627365));
    rng.shuffle(pool);
    pool.resize(std::min(count, pool.size()));
    std::sort(pool.begin(), pool.end());
    return pool;
}

// ---------------------------------------------------------------------------
// generate

struct GenerateArgs {
    std::string output;
    std::optional<int> samples_per_class;
    bool no_ambiguity = false;
};

int run_generate(const Options& o, const GenerateArgs& a)
{
    ExperimentConfig c = resolve_config(o);
    if (!a.output.empty())
        c.paths.dataset = a.output;
    if (a.samples_per_class)
        c.generator.samples_per_class = *a.samples_per_class;
    if (a.no_ambiguity)
        c.generator.ambiguity_pairs = false;
    c.generator.seed = c.seed;
    c.validate();

    const Dataset ds = generate_dataset(c.generator);
    save_dataset(ds, c.paths.dataset);
    const fs::path out = fs::path(c.paths.dataset);
    save_experiment_config(c, fs::path(out.string() + ".config.json"));
    if (!o.quiet)
        std::cout << "wrote " << ds.size() << " samples (" << c.generator.samples_per_class
                  << " per class) to " << out.string() << "\n";
    return kOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
    std::string strategy;
    std::string dataset;
    std::optional<int> jobs;
    std::optional<int> folds;
    std::optional<int> max_epochs;
};

std::string history_csv(const CrossValResult& r)
{
    std::ostringstream os;
    os << std::setprecision(17) << "fold,epoch,train_loss,train_accuracy,val_loss,val_accuracy\n";
    for (std::size_t f = 0; f < r.runs.size(); ++f)
        for (const auto& e : r.runs[f].history)
            os << r.splits[f].k << ',' << e.epoch << ',' << e.train_loss << ',' << e.train_accuracy << ','
               << e.val_loss << ',' << e.val_accuracy << '\n';
    return os.str();
}

int run_train(const Options& o, const TrainArgs& a)
{
    ExperimentConfig c = resolve_config(o);
    if (!a.strategy.empty())
        c.model = ModelConfig::for_strategy(FusionStrategy::parse(a.strategy).kind);
    if (!a.dataset.empty())
        c.paths.dataset = a.dataset;
    if (a.folds)
        c.folds = *a.folds;
    if (a.max_epochs)
        c.train.max_epochs = *a.max_epochs;
    c.train.seed = c.seed;
    c.validate();
    const int jobs = a.jobs.value_or(1);
    if (jobs < 1)
        throw ConfigError("--jobs must be >= 1");

    const Dataset ds = require_dataset(c.paths.dataset);
    const std::string name = c.model.strategy.name();
    const fs::path ckpt_dir = fs::path(c.paths.checkpoints) / name;
    const fs::path report_dir = fs::path(c.paths.reports) / name;

    CrossValResult r = cross_validate(ds, c.model, c.train, c.seed, c.folds, jobs);
    for (std::size_t f = 0; f < r.models.size(); ++f) {
        const fs::path p = ckpt_dir / ("fold" + std::to_string(r.splits[f].k) + ".json");
        save_checkpoint(r.models[f], p);
        r.report.folds[f].checkpoint = p.string();
    }
    write_json(report_dir / "cv_report.json", to_json(r.report));
    io::write_text_atomic(report_dir / "history.csv", history_csv(r));
    snapshot(c, report_dir);

    if (!o.quiet) {
        std::cout << "strategy " << name << ", seed " << c.seed << ", " << c.folds << " folds\n";
        std::cout << std::fixed << std::setprecision(4);
        for (const auto& f : r.report.folds)
            std::cout << "  fold " << f.k << "  accuracy " << f.accuracy << "  epochs " << f.epochs << "  best "
                      << f.best_epoch << "\n";
        std::cout << "  mean " << r.report.mean_accuracy << " +- " << r.report.std_accuracy << "\n";
        std::cout << "report: " << (report_dir / "cv_report.json").string() << "\n";
    }
    return kOk;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
    std::string checkpoint;
    std::string report;
    std::string dataset;
    std::string output;
};

int run_evaluate(const Options& o, const EvaluateArgs& a)
{
    ExperimentConfig c = resolve_config(o);
    if (!a.dataset.empty())
        c.paths.dataset = a.dataset;
    if (a.checkpoint.empty() == a.report.empty())
        throw ConfigError("evaluate needs exactly one of --checkpoint or --report");
    const Dataset ds = require_dataset(c.paths.dataset);

    ConfusionMatrix cm;
    json per_fold = json::array();
    double sil = 0.0, db = 0.0;
    std::string strategy;
    fs::path out_dir;
    if (!a.report.empty()) {
        // pooled out-of-fold predictions; cluster indices averaged over folds
        const CrossValReport rep = cross_val_report_from_json(json::parse(io::read_text(a.report)));
        strategy = rep.strategy;
        out_dir = a.output.empty() ? fs::path(a.report).parent_path() / "eval" : fs::path(a.output);
        for (const auto& f : rep.folds) {
            const Model m = load_checkpoint(f.checkpoint);
            const auto preds = predict_classes(m, ds, f.test_indices);
            std::vector<int> labels;
            for (std::size_t i : f.test_indices)
                labels.push_back(ds.samples.at(i).label);
            const auto fold_cm = ConfusionMatrix::from_predictions(preds, labels);
            for (std::size_t i = 0; i < preds.size(); ++i)
                cm.add(labels[i], preds[i]);
            const auto report = make_report(fold_cm, embeddings(m, ds, f.test_indices), labels);
            sil += report.silhouette;
            db += report.davies_bouldin;
            per_fold.push_back({{"k", f.k}, {"metrics", to_json(report, class_names())}});
        }
        sil /= static_cast<double>(rep.folds.size());
        db /= static_cast<double>(rep.folds.size());
    } else {
        const Model m = load_checkpoint(a.checkpoint);
        strategy = m.config.strategy.name();
        out_dir = a.output.empty() ? fs::path(a.checkpoint).parent_path() / "eval" : fs::path(a.output);
        std::vector<std::size_t> all(ds.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        const auto preds = predict_classes(m, ds, all);
        const auto labels = ds.labels();
        cm = ConfusionMatrix::from_predictions(preds, labels);
        const auto report = make_report(cm, embeddings(m, ds, all), labels);
        sil = report.silhouette;
        db = report.davies_bouldin;
    }

    const auto names = class_names();
    const auto f1 = f1_scores(cm);
    MetricsReport summary;
    summary.accuracy = accuracy(cm);
    summary.precision = f1.precision;
    summary.recall = f1.recall;
    summary.f1 = f1.f1;
    summary.macro_f1 = f1.macro_f1;
    summary.silhouette = sil;
    summary.davies_bouldin = db;
    json j = to_json(summary, names);
    j["strategy"] = strategy;
    if (!per_fold.empty())
        j["folds"] = per_fold;
    write_json(out_dir / "metrics.json", j);
    io::write_text_atomic(out_dir / "confusion.csv", cm.to_csv(names));
    snapshot(c, out_dir);

    if (!o.quiet) {
        std::cout << cm.to_table(names) << std::fixed << std::setprecision(4) << "accuracy " << summary.accuracy
                  << "  macro F1 " << summary.macro_f1 << "  silhouette " << sil << "  davies-bouldin " << db << "\n";
        std::cout << "wrote " << (out_dir / "metrics.json").string() << "\n";
    }
    return kOk;
}

// ---------------------------------------------------------------------------
// quantize

struct QuantizeArgs {
    std::string checkpoint;
    std::string report;
    int fold = -1;
    std::string dataset;
    std::string output;
    std::optional<int> calibration;
    std::optional<int> samples;
};

int run_quantize(const Options& o, const QuantizeArgs& a)
{
    ExperimentConfig c = resolve_config(o);
    if (!a.dataset.empty())
        c.paths.dataset = a.dataset;
    if (a.calibration)
        c.calibration_samples = *a.calibration;
    if (a.samples)
        c.agreement_samples = *a.samples;
    c.validate();
    const Dataset ds = require_dataset(c.paths.dataset);

    std::string checkpoint = a.checkpoint;
    std::vector<std::size_t> calib_pool, held_out;
    if (!a.report.empty()) {
        // calibrate on the fold's training data, check agreement on its test data
        const CrossValReport rep = cross_val_report_from_json(json::parse(io::read_text(a.report)));
        const int k = a.fold < 0 ? 0 : a.fold;
        const auto it = std::find_if(rep.folds.begin(), rep.folds.end(), [&](const FoldResult& f) { return f.k == k; });
        if (it == rep.folds.end())
            throw ConfigError("fold " + std::to_string(k) + " not in " + a.report);
        if (checkpoint.empty())
            checkpoint = it->checkpoint;
        held_out = it->test_indices;
        calib_pool = complement(ds.size(), held_out);
    } else {
        if (checkpoint.empty())
            throw ConfigError("quantize needs --checkpoint or --report");
        std::vector<std::size_t> all(ds.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        calib_pool = seeded_subset(all, static_cast<std::size_t>(c.calibration_samples), c.seed);
        held_out = complement(ds.size(), calib_pool);
    }
    const auto calib = seeded_subset(calib_pool, static_cast<std::size_t>(c.calibration_samples), c.seed);
    const auto check = seeded_subset(held_out, static_cast<std::size_t>(c.agreement_samples), c.seed + 1);

    const Model m = load_checkpoint(checkpoint);
    const auto channels = m.config.strategy.input_channels();
    const QuantizedModel qm = post_training_quantize(m, make_batch(ds, calib, m.normalization, channels));
    const fs::path out = a.output.empty() ? fs::path(checkpoint).replace_extension(".qfg") : fs::path(a.output);
    save_quantized(qm, out);
    const auto agree = agreement(m, qm, ds, check);

    json acts = json::array();
    for (const auto& p : qm.activations)
        acts.push_back({{"scale", p.scale}, {"zero_point", p.zero_point}});
    const json report = {{"checkpoint", checkpoint},
                         {"model_file", out.string()},
                         {"file_bytes", fs::file_size(out)},
                         {"weight_payload_bytes", weight_payload_bytes(qm)},
                         {"calibration_samples", calib.size()},
                         {"agreement_samples", agree.samples},
                         {"top1_agreement", agree.rate()},
                         {"float_accuracy", agree.samples ? double(agree.float_correct) / double(agree.samples) : 0.0},
                         {"int8_accuracy", agree.samples ? double(agree.int8_correct) / double(agree.samples) : 0.0},
                         {"max_probability_error", agree.max_prob_error},
                         {"mean_probability_error", agree.mean_prob_error},
                         {"logit_correlation", agree.logit_correlation},
                         {"activations", acts}};
    const fs::path report_path = fs::path(out.string() + ".report.json");
    write_json(report_path, report);
    snapshot(c, out.parent_path().empty() ? fs::path(".") : out.parent_path());

    if (!o.quiet)
        std::cout << std::fixed << std::setprecision(4) << "wrote " << out.string() << " (" << fs::file_size(out)
                  << " bytes, weight payload " << weight_payload_bytes(qm) << " bytes)\n"
                  << "top-1 agreement " << agree.rate() << " over " << agree.samples << " held-out samples\n";
    return kOk;
}

// ---------------------------------------------------------------------------
// infer / bench

struct LoadedModel {
    std::optional<Model> float_model;
    std::optional<QuantizedModel> quantized;

    const ModelConfig& config() const { return float_model ? float_model->config : quantized->config; }
    const NormalizationStats& normalization() const
    {
        return float_model ? float_model->normalization : quantized->normalization;
    }
    Eigen::VectorXd probabilities(const TensorD& x) const
    {
        return float_model ? predict(*float_model, x) : quantized_infer(*quantized, x);
    }
};

LoadedModel load_any_model(const std::string& path)
{
    const auto bytes = io::read_file(path);
    LoadedModel m;
    if (bytes.size() >= 4 && std::equal(bytes.begin(), bytes.begin() + 4, "QFG1"))
        m.quantized = decode_quantized(bytes);
    else
        m.float_model = load_checkpoint(path);
    return m;
}

/// Raw frame file: 64 thermal then 64 depth float32 values, little-endian.
FramePair read_raw_frame(const std::string& path)
{
    const auto bytes = io::read_file(path);
    io::ByteReader r(bytes, "raw frame " + path);
    FramePair f;
    for (Index i = 0; i < f.thermal.size(); ++i)
        f.thermal.data()[i] = r.get<float>();
    for (Index i = 0; i < f.depth.size(); ++i)
        f.depth.data()[i] = r.get<float>();
    if (r.remaining() != 0)
        throw FormatError("raw frame " + path + " has " + std::to_string(r.remaining()) + " trailing bytes");
    if (!f.thermal.allFinite() || !f.depth.allFinite())
        throw FormatError("raw frame " + path + " contains non-finite values");
    f.label = -1;
    return f;
}

struct InferArgs {
    std::string model;
    std::string dataset;
    std::optional<std::size_t> sample;
    std::string frame;
    bool as_json = false;
};

int run_infer(const Options& o, const InferArgs& a)
{
    ExperimentConfig c = resolve_config(o);
    if (!a.dataset.empty())
        c.paths.dataset = a.dataset;
    if (a.sample.has_value() == !a.frame.empty())
        throw ConfigError("infer needs exactly one of --sample or --frame");
    const LoadedModel m = load_any_model(a.model);
    FramePair frame;
    if (a.sample) {
        const Dataset ds = require_dataset(c.paths.dataset);
        if (*a.sample >= ds.size())
            throw ConfigError("--sample " + std::to_string(*a.sample) + " outside dataset of " +
                              std::to_string(ds.size()));
        frame = ds.samples[*a.sample];
    } else {
        frame = read_raw_frame(a.frame);
    }
    const auto channels = m.config().strategy.input_channels();
    const Eigen::VectorXd p = m.probabilities(model_input(frame, m.normalization(), channels));
    Index best = 0;
    p.maxCoeff(&best);

    if (a.as_json) {
        json j = {{"predicted", best}, {"class", kGestureNames[static_cast<std::size_t>(best)]},
                  {"probabilities", std::vector<double>(p.data(), p.data() + p.size())},
                  {"quantized", m.quantized.has_value()}};
        if (frame.label >= 0)
            j["label"] = frame.label;
        std::cout << j.dump() << "\n";
    } else {
        std::cout << "predicted " << kGestureNames[static_cast<std::size_t>(best)] << " (" << best << ")";
        if (frame.label >= 0)
            std::cout << ", label " << kGestureNames[static_cast<std::size_t>(frame.label)];
        std::cout << "\n" << std::fixed << std::setprecision(4);
        for (Index k = 0; k < p.size(); ++k)
            std::cout << "  " << std::setw(9) << std::left << kGestureNames[static_cast<std::size_t>(k)] << p[k] << "\n";
    }
    return kOk;
}

struct BenchArgs {
    std::string model;
    int iterations = 1000;
    int warmup = 50;
    std::string output;
};

int run_bench(const Options& o, const BenchArgs& a)
{
    if (a.iterations < 1 || a.warmup < 0)
        throw ConfigError("--iterations must be >= 1 and --warmup >= 0");
    const LoadedModel m = load_any_model(a.model);
    const auto& cfg = m.config();
    Rng rng(derive_seed(resolve_config(o).seed, 0x62656e6368));
    TensorD x({cfg.height, cfg.width, cfg.in_channels});
    for (Index i = 0; i < x.size(); ++i)
        x[i] = rng.normal(0.0, 1.0);

    volatile double sink = 0.0; // keeps the timed calls from being optimized away
    for (int i = 0; i < a.warmup; ++i)
        sink = sink + m.probabilities(x)[0];
    std::vector<double> us;
    us.reserve(static_cast<std::size_t>(a.iterations));
    for (int i = 0; i < a.iterations; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        sink = sink + m.probabilities(x)[0];
        us.push_back(std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - t0).count());
    }
    std::sort(us.begin(), us.end());
    const auto pct = [&](double q) { return us[static_cast<std::size_t>(q * static_cast<double>(us.size() - 1))]; };
    const double mean = std::accumulate(us.begin(), us.end(), 0.0) / static_cast<double>(us.size());
    const json j = {{"model", a.model},
                    {"quantized", m.quantized.has_value()},
                    {"strategy", cfg.strategy.name()},
                    {"macs", count_macs(cfg)},
                    {"iterations", a.iterations},
                    {"mean_us", mean},
                    {"min_us", us.front()},
                    {"p50_us", pct(0.5)},
                    {"p95_us", pct(0.95)},
                    {"max_us", us.back()},
                    {"note", "host wall-clock; not comparable to MCU latencies"}};
    if (!a.output.empty())
        write_json(a.output, j);
    if (!o.quiet)
        std::cout << std::fixed << std::setprecision(2) << cfg.strategy.name()
                  << (m.quantized ? " int8" : " float") << ": mean " << mean << " us, p50 " << pct(0.5)
                  << " us, p95 " << pct(0.95) << " us over " << a.iterations << " runs\n";
    return kOk;
}

// ---------------------------------------------------------------------------
// power

struct PowerArgs {
    std::string latency_csv;
    std::string output;
    std::optional<double> latency_ms;
    std::optional<double> active_mw;
};

int run_power(const Options& o, const PowerArgs& a)
{
    ExperimentConfig c = resolve_config(o);
    if (a.latency_ms)
        c.power.inference_latency = *a.latency_ms;
    if (a.active_mw)
        c.power.p_mcu_active = *a.active_mw;
    c.validate();
    const fs::path out_dir = a.output.empty() ? fs::path(c.paths.reports) / "power" : fs::path(a.output);

    if (a.latency_csv.empty()) {
        const PowerEstimate e = estimate(c.power);
        const json j = {{"config", c.power},
                        {"duty_cycle", e.duty_cycle},
                        {"mean_power_mw", e.mean_power},
                        {"battery_life_h", e.battery_life}};
        write_json(out_dir / "power_report.json", j);
        snapshot(c, out_dir);
        if (!o.quiet)
            std::cout << std::fixed << std::setprecision(2) << "duty cycle " << 100.0 * e.duty_cycle
                      << " %, mean power " << e.mean_power << " mW, battery life " << e.battery_life << " h\n";
        return kOk;
    }

    const auto table = compare_strategies(read_latency_csv(a.latency_csv), c.power);
    write_json(out_dir / "power_report.json", to_json(table));
    io::write_text_atomic(out_dir / "power_report.csv", to_csv(table));
    snapshot(c, out_dir);
    if (!o.quiet) {
        std::cout << std::left << std::setw(10) << "platform" << std::setw(10) << "strategy" << std::right
                  << std::setw(12) << "latency ms" << std::setw(10) << "duty %" << std::setw(12) << "mean mW"
                  << std::setw(12) << "life h" << "\n"
                  << std::fixed << std::setprecision(2);
        for (const auto& s : table)
            std::cout << std::left << std::setw(10) << s.entry.platform << std::setw(10) << s.entry.strategy
                      << std::right << std::setw(12) << s.entry.latency_ms << std::setw(10)
                      << 100.0 * s.estimate.duty_cycle << std::setw(12) << s.estimate.mean_power << std::setw(12)
                      << s.estimate.battery_life << "\n";
    }
    return kOk;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Thermal + depth gesture recognition: data, training, quantization and power tools"};
    app.require_subcommand(1);
    Options opt;
    app.add_option("-c,--config", opt.config_path, "Experiment config JSON")->check(CLI::ExistingFile);
    app.add_option("--seed", opt.seed, "Overrides the config seed");
    app.add_flag("-q,--quiet", opt.quiet, "Suppress human-readable output");

    GenerateArgs gen;
    auto* g = app.add_subcommand("generate", "Render the synthetic dataset");
    g->add_option("-o,--output", gen.output, "Dataset file (default: paths.dataset)");
    g->add_option("--samples-per-class", gen.samples_per_class);
    g->add_flag("--no-ambiguity", gen.no_ambiguity, "Give every class a distinct template in both modalities");

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Stratified k-fold cross-validation for one strategy");
    t->add_option("-s,--strategy", tr.strategy, "vanilla | early | mid | late | ir_only | tof_only");
    t->add_option("-d,--dataset", tr.dataset);
    t->add_option("-j,--jobs", tr.jobs, "Folds trained in parallel");
    t->add_option("--folds", tr.folds);
    t->add_option("--max-epochs", tr.max_epochs);

    EvaluateArgs ev;
    auto* e = app.add_subcommand("evaluate", "Metrics and confusion matrix");
    e->add_option("--checkpoint", ev.checkpoint, "Evaluate one model on the whole dataset");
    e->add_option("--report", ev.report, "Evaluate every fold of a cv_report.json on its test split");
    e->add_option("-d,--dataset", ev.dataset);
    e->add_option("-o,--output", ev.output, "Output directory");

    QuantizeArgs qa;
    auto* q = app.add_subcommand("quantize", "int8 post-training quantization");
    q->add_option("--checkpoint", qa.checkpoint);
    q->add_option("--report", qa.report, "Take the checkpoint and held-out split from a cv_report.json");
    q->add_option("--fold", qa.fold, "Fold of --report (default 0)");
    q->add_option("-d,--dataset", qa.dataset);
    q->add_option("-o,--output", qa.output, "Quantized model file (default: checkpoint with .qfg)");
    q->add_option("--calibration", qa.calibration, "Calibration samples");
    q->add_option("--samples", qa.samples, "Held-out samples for the agreement check");

    InferArgs in;
    auto* i = app.add_subcommand("infer", "Classify one frame pair");
    i->add_option("-m,--model", in.model, "Checkpoint JSON or QFG1 file")->required();
    i->add_option("-d,--dataset", in.dataset);
    i->add_option("--sample", in.sample, "Dataset sample index");
    i->add_option("--frame", in.frame, "Raw frame: 64 thermal + 64 depth float32 LE");
    i->add_flag("--json", in.as_json);

    BenchArgs be;
    auto* b = app.add_subcommand("bench", "Host latency of one inference");
    b->add_option("-m,--model", be.model)->required();
    b->add_option("-n,--iterations", be.iterations);
    b->add_option("--warmup", be.warmup);
    b->add_option("-o,--output", be.output, "JSON report path");

    PowerArgs pw;
    auto* p = app.add_subcommand("power", "Duty-cycle power and battery-life estimate");
    p->add_option("--latency", pw.latency_csv, "CSV: strategy,platform,latency_ms,p_active_mw");
    p->add_option("--latency-ms", pw.latency_ms, "Single estimate: inference latency");
    p->add_option("--active-mw", pw.active_mw, "Single estimate: MCU active power");
    p->add_option("-o,--output", pw.output, "Output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*g)
            return run_generate(opt, gen);
        if (*t)
            return run_train(opt, tr);
        if (*e)
            return run_evaluate(opt, ev);
        if (*q)
            return run_quantize(opt, qa);
        if (*i)
            return run_infer(opt, in);
        if (*b)
            return run_bench(opt, be);
        if (*p)
            return run_power(opt, pw);
    } catch (const NumericalError& err) {
        std::cerr << "fusionctl: numerical failure: " << err.what() << "\n";
        return kNumerical;
    } catch (const ConfigError& err) {
        std::cerr << "fusionctl: " << err.what() << "\n";
        return kUsage;
    } catch (const nlohmann::json::exception& err) {
        std::cerr << "fusionctl: malformed JSON: " << err.what() << "\n";
        return kData;
    } catch (const std::exception& err) {
        std::cerr << "fusionctl: " << err.what() << "\n";
        return kData;
    }
    return kUsage;
}
