#pragma once

#include <string>

#include "hetsurv/config.hpp"

namespace hetsurv {

inline constexpr const char* kVersionTag = "hetsurv 0.1.0";

// Subcommand bodies. All of them throw hetsurv::Error subclasses; the CLI
// maps validation-type errors to exit 1 and runtime failures to exit 2.
// Every output file is written atomically (temp + rename).

// Writes a hetsurv-cohort-v1 file and prints a cohort summary line.
void cmd_generate(const Config& config, const std::string& out_path);

// Trains on the cohort and writes the checkpoint to out_ckpt plus
// loss_trace.csv next to it. A run manifest goes to <out_ckpt>.manifest.json
// before training starts.
void cmd_train(const Config& config, const std::string& cohort_path, const std::string& out_ckpt);

// eval.mode = "cv": five-fold cross-validation (ckpt_path ignored, may be
// empty). eval.mode = "single": loads the checkpoint and scores the whole
// cohort. Writes the metrics JSON to out_path and one KM CSV per scheme
// (<out stem>_km_<scheme>.csv).
void cmd_evaluate(const Config& config, const std::string& cohort_path, const std::string& ckpt_path,
                  const std::string& out_path);

// Per-patient risk CSV (patient_id,scheme,s_final,risk) for one scheme;
// patients missing a scheme modality are skipped with a counted warning.
void cmd_predict(const Config& config, const std::string& ckpt_path, const std::string& cohort_path,
                 const Scheme& scheme, const std::string& out_path);

}  // namespace hetsurv
