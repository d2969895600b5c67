#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hetsurv/cohort.hpp"

namespace hetsurv {

// All pipeline knobs. Loaded from a dotted-key text file, overridable from
// the command line; every field is validated on load and unknown keys are
// rejected.
struct Config {
    // data (synthetic cohort shape)
    int data_patients = 200;
    int data_feature_dim = 64;
    int data_grid_h = 6;
    int data_grid_w = 6;
    int data_genes = 40;
    int data_clinical_fields = 6;
    double data_censor_rate = 0.3;
    double data_latent_scale = 10.0;
    double data_signal = 1.0;
    double data_noise = 0.5;
    int data_signal_dims = 8;

    // feature edge reconstruction
    double fer_pe = 0.5;
    double fer_tau = 2.0;
    int fer_layers = 2;

    // convolutional masked autoencoder
    double cmae_mask_ratio = 0.6;
    int cmae_depth = 1;
    bool cmae_grn_literal = false;

    // survival head / objective
    double survival_alpha = 5.0;
    double survival_beta = 1.0;
    std::string survival_sign = "neg";  // risk = -S_final ("neg") or +S_final ("pos")

    // training
    int train_batch = 32;
    int train_epochs = 50;
    double train_lr = 3e-3;
    double train_dropout = 0.1;
    std::uint64_t train_seed = 7;

    // evaluation harness
    int eval_folds = 5;
    double eval_val_fraction = 0.25;
    std::string eval_mode = "cv";  // "cv" or "single"
    bool eval_parallel_folds = false;

    std::vector<Scheme> schemes = Scheme::all_seven();

    CohortSpec cohort_spec() const;
    void validate() const;  // throws ConfigError

    bool operator==(const Config& o) const;
};

// Dotted-key text format: one `section.key = value` per line, `#` comments.
Config parse_config(const std::string& text);
Config load_config(const std::string& path);
std::string serialize_config(const Config& config);

// Applies one `key = value` assignment (CLI override path).
void apply_config_entry(Config& config, const std::string& key, const std::string& value);

// Optimal values from the hyperparameter sweep: batch 128, epochs 500,
// lr 3e-4, dropout 0.3.
void apply_paper_scale(Config& config);

// FNV-1a over the canonical serialization.
std::uint64_t config_hash(const Config& config);

}  // namespace hetsurv
