#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hetsurv/hetgraph.hpp"

namespace hetsurv {

enum class Modality { Pathology, Genomic, Clinical };
constexpr int kModalityCount = 3;

char modality_letter(Modality m);
std::string modality_name(Modality m);
NodeKind modality_node_kind(Modality m);

// Nonempty modality subset used for prediction; seven combinations exist.
struct Scheme {
    bool use[kModalityCount] = {false, false, false};

    bool contains(Modality m) const { return use[static_cast<int>(m)]; }
    int arity() const;
    // Modalities in canonical (P, G, C) order.
    std::vector<Modality> modalities() const;
    // Canonical label, e.g. "P", "GC", "PGC".
    std::string label() const;
    // Accepts letters P/G/C in any order/case with optional '&' separators.
    static Scheme parse(const std::string& text);  // throws ConfigError
    static std::vector<Scheme> all_seven();

    bool operator==(const Scheme& o) const;
    bool operator<(const Scheme& o) const;
};

// One patient: up to three modality graphs plus the survival label
// (observation time, event indicator).
struct PatientRecord {
    std::string id;
    std::optional<HetGraph> pathology;
    std::optional<HetGraph> genomic;
    std::optional<HetGraph> clinical;
    double time = 0.0;
    int event = 0;

    bool has(Modality m) const;
    const HetGraph& graph(Modality m) const;  // throws MissingModalityError naming the modality
    std::optional<HetGraph>& slot(Modality m);
};

// Cohort-shape knobs for the synthetic generator.
struct CohortSpec {
    int n_patients = 200;
    int feature_dim = 64;  // D after zero padding, shared across modalities
    int grid_h = 6;
    int grid_w = 6;
    int genes = 40;
    int clinical_fields = 6;
    double censor_rate = 0.3;
    // Planted risk model: latent z ~ N(0, latent_scale^2) drives both the
    // survival time (hazard exp(z)) and the feature signal.
    double latent_scale = 10.0;
    double signal = 1.0;
    double noise = 0.5;
    int signal_dims = 8;  // leading feature columns that carry z
};

struct SyntheticCohort {
    std::vector<PatientRecord> records;
    std::vector<double> latent_risk;  // planted z per patient, for oracle checks
};

// Deterministic per seed; per-patient streams derived from it so generation
// order never matters.
SyntheticCohort generate_synthetic_cohort(const CohortSpec& spec, std::uint64_t seed);

// Line-delimited JSON, one patient per line, with a version header line
// {"format":"hetsurv-cohort-v1"} first. Round-trips bit-exactly.
inline constexpr const char* kCohortFormat = "hetsurv-cohort-v1";

std::string cohort_to_jsonl(const std::vector<PatientRecord>& records);
std::vector<PatientRecord> cohort_from_jsonl(const std::string& text);

void write_cohort(const std::vector<PatientRecord>& records, const std::string& path);
std::vector<PatientRecord> read_cohort(const std::string& path);

}  // namespace hetsurv
