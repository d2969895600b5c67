#include "hetsurv/commands.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "hetsurv/checkpoint.hpp"
#include "hetsurv/errors.hpp"
#include "hetsurv/eval.hpp"

namespace hetsurv {

using nlohmann::json;

namespace {

std::string iso_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

void write_manifest(const Config& config, const std::string& command,
                    const std::vector<std::string>& outputs, const std::string& path) {
    json m;
    m["format"] = "hetsurv-manifest-v1";
    m["version"] = kVersionTag;
    m["command"] = command;
    {
        std::ostringstream os;
        os << "0x" << std::hex << std::setw(16) << std::setfill('0') << config_hash(config);
        m["config_hash"] = os.str();
    }
    m["seed"] = config.train_seed;
    m["created"] = iso_timestamp();
    m["outputs"] = outputs;
    atomic_write_file(path, m.dump(2) + "\n");
}

std::string fmt17(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

// Cohort graphs must match the configured feature width before any pipeline
// is built against them.
void check_cohort_dims(const std::vector<PatientRecord>& cohort, const Config& config) {
    for (const auto& p : cohort) {
        for (int mi = 0; mi < kModalityCount; ++mi) {
            const Modality m = static_cast<Modality>(mi);
            if (!p.has(m)) continue;
            const int d = p.graph(m).features.cols();
            if (d != config.data_feature_dim) {
                throw DimensionError("cohort patient " + p.id + " " + modality_name(m) + " features have width " +
                                     std::to_string(d) + " but config expects " +
                                     std::to_string(config.data_feature_dim));
            }
        }
    }
}

std::string km_csv(const SurvivalCurve& high, const SurvivalCurve& low) {
    std::ostringstream os;
    os << "time,survival,group\n";
    os << "0,1,high\n";
    for (std::size_t i = 0; i < high.times.size(); ++i) {
        os << fmt17(high.times[i]) << "," << fmt17(high.survival[i]) << ",high\n";
    }
    os << "0,1,low\n";
    for (std::size_t i = 0; i < low.times.size(); ++i) {
        os << fmt17(low.times[i]) << "," << fmt17(low.survival[i]) << ",low\n";
    }
    return os.str();
}

json scheme_report_json(const SchemeReport& sr) {
    json folds = json::array();
    for (const auto& fm : sr.folds) {
        json f;
        f["fold"] = fm.fold;
        f["c_index"] = fm.c_index_valid ? json(fm.c_index) : json();
        f["logrank_chi2"] = fm.logrank_valid ? json(fm.logrank_chi2) : json();
        f["logrank_p"] = fm.logrank_valid ? json(fm.logrank_p) : json();
        f["n_events"] = fm.n_events;
        f["n_test"] = fm.n_test;
        f["n_excluded"] = fm.n_excluded;
        folds.push_back(std::move(f));
    }
    json out;
    out["folds"] = std::move(folds);
    out["mean_c_index"] = sr.mean_c_index >= 0.0 ? json(sr.mean_c_index) : json();
    out["sd_c_index"] = sr.mean_c_index >= 0.0 ? json(sr.sd_c_index) : json();
    json pooled;
    pooled["n"] = sr.pooled.n;
    pooled["c_index"] = sr.pooled.c_index_valid ? json(sr.pooled.c_index) : json();
    pooled["logrank_chi2"] = sr.pooled.logrank_valid ? json(sr.pooled.logrank.chi_square) : json();
    pooled["logrank_p"] = sr.pooled.logrank_valid ? json(sr.pooled.logrank.p_value) : json();
    pooled["significant"] = sr.pooled.logrank_valid ? json(sr.pooled.logrank.significant) : json();
    out["pooled"] = std::move(pooled);
    return out;
}

std::string km_path_for(const std::string& out_path, const std::string& scheme_label) {
    std::filesystem::path p(out_path);
    std::filesystem::path dir = p.parent_path();
    std::string stem = p.stem().string();
    return (dir / (stem + "_km_" + scheme_label + ".csv")).string();
}

}  // namespace

void cmd_generate(const Config& config, const std::string& out_path) {
    config.validate();
    SyntheticCohort cohort = generate_synthetic_cohort(config.cohort_spec(), config.train_seed);
    write_cohort(cohort.records, out_path);

    int events = 0;
    for (const auto& r : cohort.records) events += r.event;
    std::cout << "generated " << cohort.records.size() << " patients -> " << out_path
              << " (event rate " << std::setprecision(4)
              << static_cast<double>(events) / static_cast<double>(cohort.records.size()) << ", D = "
              << config.data_feature_dim << ", grid " << config.data_grid_h << "x" << config.data_grid_w
              << ", genes " << config.data_genes << ", clinical fields " << config.data_clinical_fields
              << ")\n";
}

void cmd_train(const Config& config, const std::string& cohort_path, const std::string& out_ckpt) {
    config.validate();
    std::vector<PatientRecord> cohort = read_cohort(cohort_path);
    check_cohort_dims(cohort, config);

    const std::filesystem::path out(out_ckpt);
    const std::string trace_path =
        (out.parent_path() / "loss_trace.csv").string();
    write_manifest(config, "train", {out_ckpt, trace_path}, out_ckpt + ".manifest.json");

    Pipeline pipeline(config, config.train_seed);
    TrainResult result = train_pipeline(pipeline, cohort, config);

    std::ostringstream trace;
    trace << "epoch,i_mer,i_cmae,i_cox_P,i_cox_G,i_cox_C,i_total\n";
    for (const auto& row : result.trace) {
        trace << row.epoch << "," << fmt17(row.i_mer) << "," << fmt17(row.i_cmae) << ","
              << fmt17(row.i_cox[0]) << "," << fmt17(row.i_cox[1]) << "," << fmt17(row.i_cox[2]) << ","
              << fmt17(row.i_total) << "\n";
    }
    atomic_write_file(trace_path, trace.str());
    save_checkpoint(pipeline, config.train_seed, out_ckpt);

    std::cout << "trained " << config.train_epochs << " epochs on " << cohort.size() << " patients -> "
              << out_ckpt << "\n";
    if (!result.trace.empty()) {
        std::cout << "  first-epoch total " << result.trace.front().i_total << ", last-epoch total "
                  << result.trace.back().i_total << "\n";
    }
}

void cmd_evaluate(const Config& config, const std::string& cohort_path, const std::string& ckpt_path,
                  const std::string& out_path) {
    config.validate();
    std::vector<PatientRecord> cohort = read_cohort(cohort_path);
    check_cohort_dims(cohort, config);

    json report;
    report["format"] = "hetsurv-metrics-v1";
    report["seed"] = config.train_seed;
    report["mode"] = config.eval_mode;

    std::vector<std::pair<std::string, std::string>> km_files;  // path, payload
    json schemes = json::object();

    if (config.eval_mode == "cv") {
        write_manifest(config, "evaluate", {out_path}, out_path + ".manifest.json");
        CvReport cv = cross_validate(cohort, config, config.train_seed);
        report["skipped_folds"] = cv.skipped_folds;
        for (const auto& sr : cv.schemes) {
            schemes[sr.scheme.label()] = scheme_report_json(sr);
            if (sr.pooled.logrank_valid) {
                km_files.emplace_back(km_path_for(out_path, sr.scheme.label()),
                                      km_csv(sr.pooled.km_high, sr.pooled.km_low));
            }
        }
    } else {
        if (ckpt_path.empty()) throw ConfigError("eval.mode = single requires --ckpt");
        Pipeline pipeline(config, config.train_seed);
        load_checkpoint_into(pipeline, ckpt_path);
        for (const auto& scheme : config.schemes) {
            SchemeReport sr = evaluate_pipeline(pipeline, cohort, scheme);
            schemes[scheme.label()] = scheme_report_json(sr);
            if (sr.pooled.logrank_valid) {
                km_files.emplace_back(km_path_for(out_path, scheme.label()),
                                      km_csv(sr.pooled.km_high, sr.pooled.km_low));
            }
        }
    }
    report["schemes"] = std::move(schemes);

    atomic_write_file(out_path, report.dump(2) + "\n");
    for (const auto& [path, payload] : km_files) atomic_write_file(path, payload);

    std::cout << "evaluation report -> " << out_path << " (" << km_files.size() << " KM curve files)\n";
    for (const auto& [label, block] : report["schemes"].items()) {
        std::cout << "  scheme " << label << ": mean c-index "
                  << (block["mean_c_index"].is_null() ? std::string("n/a")
                                                      : fmt17(block["mean_c_index"].get<double>()))
                  << "\n";
    }
}

void cmd_predict(const Config& config, const std::string& ckpt_path, const std::string& cohort_path,
                 const Scheme& scheme, const std::string& out_path) {
    config.validate();
    std::vector<PatientRecord> cohort = read_cohort(cohort_path);
    check_cohort_dims(cohort, config);

    Pipeline pipeline(config, config.train_seed);
    load_checkpoint_into(pipeline, ckpt_path);

    std::ostringstream csv;
    csv << "patient_id,scheme,s_final,risk\n";
    int rows = 0, skipped = 0;
    for (const auto& patient : cohort) {
        bool ok = true;
        for (Modality m : scheme.modalities()) ok = ok && patient.has(m);
        if (!ok) {
            ++skipped;
            continue;
        }
        const RiskScore score = pipeline.predict(patient, scheme);
        csv << patient.id << "," << scheme.label() << "," << fmt17(score.s_final) << ","
            << fmt17(score.risk) << "\n";
        ++rows;
    }
    if (rows == 0) {
        throw StatError("predict: no patient carries every modality of scheme " + scheme.label());
    }
    atomic_write_file(out_path, csv.str());
    std::cout << "predicted " << rows << " patients under scheme " << scheme.label() << " -> " << out_path;
    if (skipped > 0) std::cout << " (skipped " << skipped << " missing-modality patients)";
    std::cout << "\n";
}

}  // namespace hetsurv
