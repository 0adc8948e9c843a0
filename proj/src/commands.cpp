#include "nearl/commands.hpp"

#include <cstdio>
#include <fstream>

#include "nearl/analysis.hpp"
#include "nearl/checkpoint.hpp"
#include "nearl/error.hpp"
#include "nearl/model.hpp"
#include "nearl/train.hpp"

namespace nearl {

using nlohmann::json;

namespace {

bool same_spec(const DatasetSpec& a, const DatasetSpec& b) {
    return a.n_classes == b.n_classes && a.n_train == b.n_train && a.n_val == b.n_val &&
           a.n_test == b.n_test && a.n_patches == b.n_patches && a.patch_dim == b.patch_dim &&
           a.signal_fraction == b.signal_fraction && a.noise_std == b.noise_std &&
           a.class_separation == b.class_separation && a.seed == b.seed;
}

void prepare_output(const RunConfig& config) {
    std::error_code ec;
    std::filesystem::create_directories(config.output_dir, ec);
    if (ec) fail(ErrorKind::missing_file, "cannot create output_dir " + config.output_dir.string() + ": " + ec.message());
}

void write_file(const RunConfig& config, const std::string& name, const std::string& bytes) {
    const auto path = config.output_dir / name;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::missing_file, "cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void write_manifest(const RunConfig& config, const std::string& command) {
    RunConfig echo = config;
    echo.command = command;
    write_file(config, "manifest.json", to_json(echo).dump(2) + "\n");
}

json metrics_json(const EvalResult& r) {
    json j;
    j["n"] = r.predictions.size();
    j["loss"] = r.loss;
    j["acc"] = r.metrics.accuracy;
    j["f1"] = r.metrics.macro_f1;
    j["per_class_f1"] = r.metrics.per_class_f1;
    j["confusion"] = r.metrics.confusion;
    return j;
}

json cosine_json(const CosineReport& r) {
    json j;
    j["intra_mean"] = r.intra_mean;
    j["intra_std"] = r.intra_std;
    j["inter_mean"] = r.inter_mean;
    j["inter_std"] = r.inter_std;
    j["gap"] = r.gap;
    j["intra_pairs"] = r.intra_pairs;
    j["inter_pairs"] = r.inter_pairs;
    return j;
}

Model model_with_checkpoint(const RunConfig& config) {
    Model model = Model::build(config.model);
    if (config.checkpoint) restore(model, load_checkpoint(*config.checkpoint));
    return model;
}

std::string fixed6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace

Dataset obtain_dataset(const RunConfig& config) {
    if (config.data.path) {
        Dataset ds = load_dataset(*config.data.path);
        if (config.data.spec && !same_spec(*config.data.spec, ds.spec)) {
            fail(ErrorKind::config, "data.spec does not match the header of " + config.data.path->string());
        }
        return ds;
    }
    if (config.data.spec) return gen_dataset(*config.data.spec);
    fail(ErrorKind::config, "this command needs a data block (path or spec)");
}

void cmd_gen_data(const RunConfig& config, std::ostream& log) {
    if (!config.data.spec) fail(ErrorKind::config, "gen-data needs data.spec");
    const Dataset ds = gen_dataset(*config.data.spec);
    prepare_output(config);
    save_dataset(config.output_dir / "dataset.nrld", ds);
    write_manifest(config, "gen-data");
    log << "wrote " << (config.output_dir / "dataset.nrld").string() << " (" << ds.train.size() << "/"
        << ds.val.size() << "/" << ds.test.size() << " samples)\n";
}

void cmd_train(const RunConfig& config, std::ostream& log) {
    const Dataset ds = obtain_dataset(config);
    Model model = Model::build(config.model);
    check_compatible(ds, config.model);
    prepare_output(config);
    const TrainResult r = train(model, ds, config.train);
    const EvalResult test = evaluate(model, ds.test);
    write_file(config, "metrics.csv", metrics_csv(r));
    save_checkpoint(config.output_dir / "checkpoint.nearl", model.named());
    json summary;
    summary["best_epoch"] = r.best_epoch;
    summary["best_val_acc"] = r.best_val_acc;
    summary["test"] = metrics_json(test);
    summary["trainable_params"] = element_count(trainable_registry(model.bank, config.model.mode));
    summary["backbone_checksum_before"] = r.backbone_checksum_before;
    summary["backbone_checksum_after"] = r.backbone_checksum_after;
    summary["ortho_checks"] = r.ortho_checks;
    summary["ortho_max_abs_cos"] = r.ortho.max_abs_cos;
    summary["ortho_max_abs_cos_nondegenerate"] = r.ortho.max_abs_cos_nondegenerate;
    write_file(config, "summary.json", summary.dump(2) + "\n");
    write_manifest(config, "train");
    log << "best val acc " << fixed6(r.best_val_acc) << " at epoch " << r.best_epoch << "; test acc "
        << fixed6(test.metrics.accuracy) << " f1 " << fixed6(test.metrics.macro_f1) << "\n";
}

void cmd_eval(const RunConfig& config, std::ostream& log) {
    const Dataset ds = obtain_dataset(config);
    check_compatible(ds, config.model);
    const Model model = model_with_checkpoint(config);
    prepare_output(config);
    json out;
    for (const auto& [name, split] : {std::pair<const char*, const Split*>{"val", &ds.val}, {"test", &ds.test}}) {
        const EvalResult r = evaluate(model, *split);
        json j = metrics_json(r);
        const auto [lo, hi] = chance_band(split->size(), config.model.n_classes);
        j["chance_band_99"] = {lo, hi};
        j["within_chance_band"] = r.metrics.accuracy >= lo && r.metrics.accuracy <= hi;
        out[name] = j;
        log << name << " acc " << fixed6(r.metrics.accuracy) << " f1 " << fixed6(r.metrics.macro_f1) << "\n";
    }
    write_file(config, "eval.json", out.dump(2) + "\n");
    write_manifest(config, "eval");
}

void cmd_ablate(const RunConfig& config, std::ostream& log) {
    if (!config.suite) fail(ErrorKind::config, "ablate needs a suite");
    const AblationSuite suite = parse_ablation_suite(*config.suite);
    const Dataset ds = obtain_dataset(config);
    check_compatible(ds, config.model);
    prepare_output(config);
    const auto rows = run_ablations(config.model, config.train, ds, suite);
    const std::string csv = ablation_csv(rows);
    write_file(config, "ablation_" + std::string(to_string(suite)) + ".csv", csv);
    write_manifest(config, "ablate");
    log << csv;
}

void cmd_params(const RunConfig& config, std::ostream& log) {
    const ParamAudit audit = count_trainable(config.model);
    const std::size_t registry =
        element_count(trainable_registry(AdapterBank::init(config.model), config.model.mode));
    if (registry != audit.total) {
        fail(ErrorKind::invariant, "closed-form total " + std::to_string(audit.total) +
                                       " differs from registry total " + std::to_string(registry));
    }
    std::string report = audit_report(config.model, audit);
    char line[96];
    std::snprintf(line, sizeof line, "%-32s %12zu\n", "registry_total", registry);
    report += line;
    prepare_output(config);
    write_file(config, "audit.txt", report);
    write_manifest(config, "params");
    log << report;
}

void cmd_analyze(const RunConfig& config, std::ostream& log) {
    if (!config.checkpoint) fail(ErrorKind::config, "analyze needs a checkpoint");
    const Dataset ds = obtain_dataset(config);
    check_compatible(ds, config.model);
    const Model adapted = model_with_checkpoint(config);
    ModelConfig frozen_config = config.model;
    frozen_config.mode = AblationMode::frozen;
    frozen_config.layer_mask.reset();
    const Model frozen = Model::build(frozen_config);
    prepare_output(config);

    json out;
    std::string pca_csv = "model,index,label,pc1,pc2\n";
    std::string hist_csv = "model,pairs,bin_lo,bin_hi,count\n";
    for (const auto& [name, model] : {std::pair<const char*, const Model*>{"frozen", &frozen}, {"adapted", &adapted}}) {
        const Tensor features = image_embeddings(*model, ds.test);
        const CosineReport cos = cosine_stats(features, ds.test.labels);
        const Pca2 pca = pca2(features);
        json j = cosine_json(cos);
        j["pca_explained"] = {pca.explained[0], pca.explained[1]};
        out[name] = j;
        for (std::size_t i = 0; i < ds.test.size(); ++i) {
            pca_csv += std::string(name) + "," + std::to_string(i) + "," + std::to_string(ds.test.labels[i]) + "," +
                       fixed6(pca.coords.at({i, 0})) + "," + fixed6(pca.coords.at({i, 1})) + "\n";
        }
        for (std::size_t b = 0; b < kHistogramBins; ++b) {
            const double lo = -1.0 + 2.0 * static_cast<double>(b) / kHistogramBins;
            const double hi = -1.0 + 2.0 * static_cast<double>(b + 1) / kHistogramBins;
            hist_csv += std::string(name) + ",intra," + fixed6(lo) + "," + fixed6(hi) + "," +
                        std::to_string(cos.intra_hist[b]) + "\n";
            hist_csv += std::string(name) + ",inter," + fixed6(lo) + "," + fixed6(hi) + "," +
                        std::to_string(cos.inter_hist[b]) + "\n";
        }
        log << name << " intra " << fixed6(cos.intra_mean) << " inter " << fixed6(cos.inter_mean) << " gap "
            << fixed6(cos.gap) << "\n";
    }
    out["gap_increase"] = out["adapted"]["gap"].get<double>() - out["frozen"]["gap"].get<double>();
    write_file(config, "analysis.json", out.dump(2) + "\n");
    write_file(config, "pca.csv", pca_csv);
    write_file(config, "cosine_hist.csv", hist_csv);
    write_manifest(config, "analyze");
}

int exit_code(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::config: return 2;
        case ErrorKind::missing_file: return 3;
        case ErrorKind::format: return 4;
        case ErrorKind::truncated: return 5;
        case ErrorKind::dim_mismatch: return 6;
        case ErrorKind::non_finite: return 7;
        case ErrorKind::shape: return 8;
        case ErrorKind::vocabulary: return 9;
        case ErrorKind::invariant: return 10;
    }
    return 1;
}

}  // namespace nearl
