// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
//
//   acceptance [--only 1,5,9]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "fusion/checkpoint.hpp"
#include "fusion/data.hpp"
#include "fusion/errors.hpp"
#include "fusion/metrics.hpp"
#include "fusion/power.hpp"
#include "fusion/quantization.hpp"
#include "fusion/training.hpp"
#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "reference_values.hpp"

using namespace fusion;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int digits = 4)
{
    std::ostringstream os;
    os.precision(digits);
    os << v;
    return os.str();
}

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what)
    {
        if (!ok) {
            pass = false;
            detail += (detail.empty() ? "" : "; ") + std::string("failed: ") + what;
        }
    }
    void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

constexpr std::uint64_t kSeed = 0;

/// Shared, lazily computed experiment state.
class Experiment {
public:
    const Dataset& dataset()
    {
        if (!dataset_) {
            GeneratorConfig g;
            g.seed = kSeed;
            dataset_ = generate_dataset(g);
        }
        return *dataset_;
    }

    const CrossValResult& cv(Strategy s)
    {
        auto it = runs_.find(s);
        if (it == runs_.end()) {
            const auto t0 = Clock::now();
            const int jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
            it = runs_.emplace(s, cross_validate(dataset(), s, TrainConfig{}, kSeed, 5, jobs)).first;
            training_seconds_ += seconds_since(t0);
            std::cerr << "  trained " << FusionStrategy::of(s).name() << " (5 folds): mean accuracy "
                      << fmt(it->second.report.mean_accuracy) << " in " << fmt(seconds_since(t0), 3) << " s\n";
        }
        return it->second;
    }

    double training_seconds() const { return training_seconds_; }

    struct Quantized {
        QuantizedModel model;
        AgreementReport agreement;
    };

    const Quantized& quantized()
    {
        if (!quantized_) {
            const auto& run = cv(Strategy::early);
            const Model& model = run.models[0];
            const FoldSplit& split = run.splits[0];
            Rng rng(derive_seed(kSeed, 77));
            std::vector<std::size_t> calib(split.train.begin(), split.train.end());
            rng.shuffle(calib);
            calib.resize(512);
            std::vector<std::size_t> held(split.test.begin(), split.test.end());
            rng.shuffle(held);
            held.resize(1000);
            const auto channels = model.config.strategy.input_channels();
            Quantized q;
            q.model = post_training_quantize(model, make_batch(dataset(), calib, model.normalization, channels));
            q.agreement = agreement(model, q.model, dataset(), held);
            quantized_ = std::move(q);
        }
        return *quantized_;
    }

private:
    std::optional<Dataset> dataset_;
    std::map<Strategy, CrossValResult> runs_;
    std::optional<Quantized> quantized_;
    double training_seconds_ = 0.0;
};

// ---------------------------------------------------------------------------

Outcome parameter_counts(Experiment&)
{
    Outcome o;
    const std::array<std::pair<Strategy, Index>, 5> expected{{{Strategy::vanilla, 6415},
                                                              {Strategy::early, 6343},
                                                              {Strategy::mid, 5767},
                                                              {Strategy::late, 3463},
                                                              {Strategy::ir_only, 6343}}};
    std::string got;
    for (const auto& [s, n] : expected) {
        const auto cfg = ModelConfig::for_strategy(s);
        const Index c = count_params(cfg);
        got += (got.empty() ? "" : "/") + std::to_string(c);
        o.require(c == n, FusionStrategy::of(s).name() + " has " + std::to_string(c));
        o.require(count_params(build_model(cfg, 3)) == c, "built model disagrees for " + FusionStrategy::of(s).name());
    }
    o.require(count_params(ModelConfig::for_strategy(Strategy::tof_only)) == 6343, "tof_only count");
    o.note("vanilla/early/mid/late/unimodal = " + got);
    return o;
}

Outcome gradients(Experiment&)
{
    Outcome o;
    long checked = 0, kinks = 0;
    double worst = 0.0, worst_fine = 0.0;
    for (Strategy s : {Strategy::vanilla, Strategy::early, Strategy::mid, Strategy::late}) {
        gradcheck::Worst w, fine;
        gradcheck::check_model(s, w, fine);
        o.require(w.failed == 0 && fine.failed == 0, FusionStrategy::of(s).name() + " worst " + fmt(w.error) + " at " + w.where);
        checked += w.checked + fine.checked;
        kinks += w.kinks;
        worst = std::max(worst, w.error);
        worst_fine = std::max(worst_fine, fine.error);
    }
    o.note(std::to_string(checked) + " parameters (conv, BN, dense) at 4x4, worst relative error " + fmt(worst) + "; " +
           std::to_string(kinks) + " ReLU-kink probes re-checked at h=1e-7, worst " + fmt(worst_fine));
    return o;
}

Outcome grouped_conv(Experiment&)
{
    Outcome o;
    Rng rng(2024);
    double worst = 0.0;
    for (int t = 0; t < 200; ++t) {
        const Index cg_in = 1 + static_cast<Index>(rng.below(4)), cg_out = 1 + static_cast<Index>(rng.below(4));
        const Index h = 1 + static_cast<Index>(rng.below(8)), w = 1 + static_cast<Index>(rng.below(8));
        const Index n = 1 + static_cast<Index>(rng.below(3));
        auto p = ConvParams<double>::zeros(2 * cg_in, 2 * cg_out, 2);
        p.kernel = oracle::random_tensor(p.kernel.shape(), rng);
        p.bias = oracle::random_tensor(p.bias.shape(), rng);
        const TensorD x = oracle::random_tensor({n, h, w, 2 * cg_in}, rng);
        auto dense = ConvParams<double>::zeros(2 * cg_in, 2 * cg_out, 1);
        dense.kernel = oracle::block_diagonal(p.kernel, 2);
        dense.bias = p.bias;
        const double d = (conv2d_grouped(x, p).array() - conv2d_grouped(x, dense).array()).abs().maxCoeff();
        worst = std::max(worst, d);
    }
    o.require(worst < 1e-12, "max difference " + fmt(worst));
    o.note("200 instances, max |grouped - block-diagonal| = " + fmt(worst));
    return o;
}

Outcome bn_folding(Experiment&)
{
    Outcome o;
    double worst = 0.0;
    for (Strategy s : {Strategy::vanilla, Strategy::early, Strategy::mid, Strategy::late}) {
        const Model m = fixture::trained_looking_model(ModelConfig::for_strategy(s), 300 + static_cast<std::uint64_t>(s));
        const Model f = fold_batchnorm(m);
        Rng rng(301);
        const TensorD x = oracle::random_tensor({1000, 8, 8, m.config.in_channels}, rng, -3.0, 3.0);
        worst = std::max(worst, (forward_logits(m, x).array() - forward_logits(f, x).array()).abs().maxCoeff());
    }
    o.require(worst < 1e-6, "max logit difference " + fmt(worst));
    o.note("1000 random inputs per strategy, max |logit diff| = " + fmt(worst));
    return o;
}

Outcome metric_arithmetic(Experiment&)
{
    Outcome o;
    const auto t0 = Clock::now();
    double worst = 0.0;
    for (const auto& m : reference::kModalities) {
        const auto s = f1_scores(reference::matrix(m));
        for (Index c = 0; c < 7; ++c)
            worst = std::max(worst, std::abs(s.f1[c] - m.f1[static_cast<std::size_t>(c)]));
    }
    const double macro = f1_scores(reference::matrix(reference::kModalities[2])).macro_f1;
    const double elapsed = seconds_since(t0);
    o.require(worst <= 0.02, "per-class F1 deviation " + fmt(worst));
    o.require(std::abs(macro - reference::kEarlyMacroF1) <= 0.01, "early macro F1 " + fmt(macro));
    o.require(elapsed < 1.0, "runtime " + fmt(elapsed) + " s");
    o.note("21 per-class F1 within " + fmt(worst, 2) + " of the published table; early macro F1 " + fmt(macro));
    return o;
}

Outcome cluster_oracles(Experiment&)
{
    Outcome o;
    Rng rng(606);
    double worst = 0.0;
    int instances = 0;
    for (int t = 0; t < 50; ++t) {
        const int n = 4 + static_cast<int>(rng.below(7));
        const int k = 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::min(3, n - 2))));
        const int dim = 1 + static_cast<int>(rng.below(5));
        oracle::Points pts(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(dim)));
        std::vector<int> labels(static_cast<std::size_t>(n));
        Eigen::MatrixXd x(n, dim);
        for (int i = 0; i < n; ++i) {
            labels[static_cast<std::size_t>(i)] = i < k ? i : static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
            for (int d = 0; d < dim; ++d)
                x(i, d) = pts[static_cast<std::size_t>(i)][static_cast<std::size_t>(d)] =
                    rng.uniform(-3.0, 3.0) + 2.0 * labels[static_cast<std::size_t>(i)];
        }
        worst = std::max(worst, std::abs(silhouette(x, labels) - oracle::silhouette(pts, labels)));
        const double db = davies_bouldin(x, labels);
        worst = std::max(worst, std::abs(db - oracle::davies_bouldin(pts, labels)));
        for (double scale : {0.5, 3.0, 1e4})
            o.require(std::abs(davies_bouldin(x * scale, labels) - db) <= 1e-12 * std::max(1.0, db),
                      "DB scale invariance");
        ++instances;
    }
    o.require(worst <= 1e-12, "oracle difference " + fmt(worst));

    Eigen::MatrixXd base(80, 3);
    std::vector<int> labels(80);
    for (Index i = 0; i < 80; ++i) {
        labels[static_cast<std::size_t>(i)] = i < 40 ? 0 : 1;
        base.row(i) << rng.normal(), rng.normal(), rng.normal();
    }
    double prev = -1.0;
    bool monotone = true;
    for (double sep = 0.0; sep <= 20.0; sep += 0.5) {
        Eigen::MatrixXd x = base;
        x.bottomRows(40).col(0).array() += sep;
        const double s = silhouette(x, labels);
        monotone &= s > prev;
        prev = s;
    }
    o.require(monotone, "silhouette not increasing with separation");
    o.note(std::to_string(instances) + " instances of <= 10 points, max |impl - oracle| = " + fmt(worst) +
           "; DB scale-invariant; silhouette monotone over 41 separations");
    return o;
}

double mean_test_silhouette(const Dataset& d, const CrossValResult& r, double& db)
{
    double sil = 0.0;
    db = 0.0;
    for (std::size_t k = 0; k < r.models.size(); ++k) {
        const auto& idx = r.splits[k].test;
        std::vector<int> labels;
        for (std::size_t i : idx)
            labels.push_back(d.samples[i].label);
        const Eigen::MatrixXd e = embeddings(r.models[k], d, idx);
        sil += silhouette(e, labels);
        db += davies_bouldin(e, labels);
    }
    db /= static_cast<double>(r.models.size());
    return sil / static_cast<double>(r.models.size());
}

Outcome fusion_advantage(Experiment& ex)
{
    Outcome o;
    const auto& early = ex.cv(Strategy::early);
    const auto& ir = ex.cv(Strategy::ir_only);
    const auto& tof = ex.cv(Strategy::tof_only);
    const double a_e = early.report.mean_accuracy, a_i = ir.report.mean_accuracy, a_t = tof.report.mean_accuracy;
    double db_e = 0, db_i = 0, db_t = 0;
    const double s_e = mean_test_silhouette(ex.dataset(), early, db_e);
    const double s_i = mean_test_silhouette(ex.dataset(), ir, db_i);
    const double s_t = mean_test_silhouette(ex.dataset(), tof, db_t);
    o.require(a_e - a_i >= 0.02, "early - ir_only = " + fmt(100 * (a_e - a_i)) + " pp");
    o.require(a_e - a_t >= 0.02, "early - tof_only = " + fmt(100 * (a_e - a_t)) + " pp");
    o.require(s_e > std::min(s_i, s_t), "fused silhouette not above a unimodal one");
    o.require(ex.training_seconds() < 1800.0, "15 fold-trainings took " + fmt(ex.training_seconds()) + " s");
    o.note("5-fold accuracy early " + fmt(100 * a_e) + "% vs ir_only " + fmt(100 * a_i) + "% / tof_only " +
           fmt(100 * a_t) + "%; silhouette " + fmt(s_e, 3) + " vs " + fmt(s_i, 3) + " / " + fmt(s_t, 3) +
           "; Davies-Bouldin " + fmt(db_e, 3) + " vs " + fmt(db_i, 3) + " / " + fmt(db_t, 3) + "; training " +
           fmt(ex.training_seconds(), 4) + " s");
    return o;
}

Outcome quantization_fidelity(Experiment& ex)
{
    Outcome o;
    const auto& q = ex.quantized();
    const double rate = q.agreement.rate();
    const std::size_t file = encode_quantized(q.model).size();
    const std::size_t payload = weight_payload_bytes(q.model);
    o.require(q.agreement.samples == 1000, "sample count");
    o.require(rate >= 0.95, "agreement " + fmt(100 * rate) + "%");
    for (std::size_t bytes : {file, payload})
        o.require(bytes >= 5500 && bytes <= 8500, std::to_string(bytes) + " bytes outside 7 +- 1.5 kB");
    o.note("top-1 agreement " + fmt(100 * rate) + "% on 1000 held-out samples (float " +
           fmt(q.agreement.float_correct / 10.0) + "% / int8 " + fmt(q.agreement.int8_correct / 10.0) +
           "% correct), mean |dp| " + fmt(q.agreement.mean_prob_error, 3) + ", logit r " +
           fmt(q.agreement.logit_correlation, 5) + "; weight payload " + std::to_string(payload) + " B, QFG1 file " + std::to_string(file) + " B");
    return o;
}

Outcome power_model(Experiment&)
{
    Outcome o;
    PowerConfig c;
    c.inference_latency = 11.56;
    c.p_mcu_active = 47.65;
    c.frame_rate = 5.0;
    c.battery_energy = 740.0;
    o.require(std::abs(c.p_sensor_ir + c.p_sensor_tof - 47.2) < 1e-12, "sensor floor");
    const auto e = estimate(c);
    o.require(std::abs(e.duty_cycle - 0.0578) < 1e-12 && e.duty_cycle < 0.06, "duty " + fmt(e.duty_cycle));
    o.require(std::abs(e.mean_power - 49.95) <= 0.5, "mean power " + fmt(e.mean_power));
    o.require(std::abs(e.battery_life - 14.8) <= 0.3, "battery life " + fmt(e.battery_life));
    o.note("duty " + fmt(100 * e.duty_cycle, 3) + "%, mean " + fmt(e.mean_power) + " mW, life " +
           fmt(e.battery_life, 3) + " h");
    return o;
}

Outcome mac_accounting(Experiment&)
{
    Outcome o;
    Index prev = std::numeric_limits<Index>::max();
    std::string got;
    for (Strategy s : fusion_strategies()) {
        const auto cfg = ModelConfig::for_strategy(s);
        const Index macs = count_macs(cfg);
        o.require(macs == oracle::recount_macs(cfg.in_channels, cfg.strategy.groups),
                  FusionStrategy::of(s).name() + " recount");
        o.require(macs < prev, "not strictly decreasing at " + FusionStrategy::of(s).name());
        prev = macs;
        got += (got.empty() ? "" : " > ") + std::to_string(macs);
    }
    std::ifstream doc(FUSION_DOCS_DIR "/design.md");
    const std::string text((std::istreambuf_iterator<char>(doc)), {});
    o.require(text.find("hardware effect") != std::string::npos, "latency-ordering note missing from docs/design.md");
    o.note("MACs vanilla/early/mid/late " + got + "; latency-ordering note present in docs/design.md");
    return o;
}

Outcome determinism(Experiment& ex)
{
    Outcome o;
    GeneratorConfig g;
    g.samples_per_class = 20;
    g.seed = 5;
    const Dataset small = generate_dataset(g);
    TrainConfig t;
    t.max_epochs = 4;
    t.batch_size = 32;
    const auto a = cross_validate(small, Strategy::early, t, 42, 5, 1);
    const auto b = cross_validate(small, Strategy::early, t, 42, 5, 1);
    const auto c = cross_validate(small, Strategy::early, t, 42, 5, 3);
    for (std::size_t k = 0; k < 5; ++k) {
        o.require(a.report.folds[k].accuracy == b.report.folds[k].accuracy, "repeat run differs");
        o.require(a.report.folds[k].accuracy == c.report.folds[k].accuracy, "job count changes accuracy");
        o.require(model_to_json(a.models[k]).dump() == model_to_json(c.models[k]).dump(), "job count changes weights");
    }
    o.require(to_json(a.report).dump() == to_json(b.report).dump(), "report bytes differ");

    const auto bytes = encode_dataset(ex.dataset());
    o.require(decode_dataset(bytes) == ex.dataset() && encode_dataset(decode_dataset(bytes)) == bytes, "FGD1");

    const auto dir = std::filesystem::temp_directory_path() / "fusion_acceptance";
    std::filesystem::create_directories(dir);
    const Model& m = ex.cv(Strategy::early).models[0];
    save_checkpoint(m, dir / "a.json");
    save_checkpoint(load_checkpoint(dir / "a.json"), dir / "b.json");
    std::ifstream fa(dir / "a.json"), fb(dir / "b.json");
    const std::string ta((std::istreambuf_iterator<char>(fa)), {}), tb((std::istreambuf_iterator<char>(fb)), {});
    o.require(ta == tb, "checkpoint rewrite differs");
    const TensorD probe = make_batch(ex.dataset(), std::vector<std::size_t>{0, 1, 2}, m.normalization,
                                     m.config.strategy.input_channels());
    o.require(forward_logits(load_checkpoint(dir / "a.json"), probe) == forward_logits(m, probe), "checkpoint logits");

    const auto& qm = ex.quantized().model;
    save_quantized(qm, dir / "m.qfg");
    const QuantizedModel back = load_quantized(dir / "m.qfg");
    o.require(back == qm && encode_quantized(back) == encode_quantized(qm), "QFG1");
    std::filesystem::remove_all(dir);
    o.note("cross_validate bitwise repeatable (jobs 1 and 3); FGD1, checkpoint and QFG1 round-trip exactly");
    return o;
}

struct Criterion {
    int id;
    const char* name;
    std::function<Outcome(Experiment&)> run;
};

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Acceptance criteria"};
    std::vector<int> only;
    app.add_option("--only", only, "Run only these criteria")->delimiter(',');
    CLI11_PARSE(app, argc, argv);
    set_warnings_enabled(false);

    // 7 runs before 8 and 11, which reuse its trained models.
    const std::vector<Criterion> criteria{
        {1, "parameter counts", parameter_counts},
        {2, "gradient correctness", gradients},
        {3, "grouped-conv oracle", grouped_conv},
        {4, "BN-fold equivalence", bn_folding},
        {5, "metric arithmetic", metric_arithmetic},
        {6, "cluster-index oracles", cluster_oracles},
        {7, "fusion advantage", fusion_advantage},
        {8, "quantization fidelity", quantization_fidelity},
        {9, "power model", power_model},
        {10, "MAC accounting", mac_accounting},
        {11, "determinism and round-trips", determinism},
    };

    Experiment ex;
    std::map<int, std::string> lines;
    bool all = true;
    for (const auto& c : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end())
            continue;
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = c.run(ex);
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        all &= o.pass;
        std::ostringstream line;
        line << (o.pass ? "PASS" : "FAIL") << "  " << c.id << ". " << c.name << " (" << fmt(seconds_since(t0), 3)
             << " s): " << o.detail;
        lines[c.id] = line.str();
        std::cout << lines[c.id] << std::endl;
    }
    if (only.empty() || only.size() > 1) {
        std::cout << "\nSummary\n";
        for (const auto& [id, text] : lines)
            std::cout << text.substr(0, text.find(" (")) << "\n";
    }
    return all ? 0 : 1;
}
