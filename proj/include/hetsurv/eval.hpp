#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hetsurv/survival.hpp"

namespace hetsurv {

// Kaplan-Meier product-limit curve: S(t) stepwise over distinct event times,
// 1 before the first event, non-increasing.
struct SurvivalCurve {
    std::vector<double> times;     // sorted distinct event times
    std::vector<double> survival;  // S after each event time

    double at(double t) const;  // stepwise evaluation
};

struct StratifiedGroups {
    std::vector<int> high_risk;  // indices with risk > threshold
    std::vector<int> low_risk;   // risk <= threshold
    double threshold = 0.0;      // median (lower middle order statistic for even n)
    bool degenerate = false;     // all risks equal; everyone lands in low
};

struct FoldPlan {
    std::vector<std::vector<int>> folds;  // disjoint, covering, sizes differ by <= 1
    std::uint64_t seed = 0;
};

struct LogRankResult {
    double chi_square = 0.0;
    double p_value = 1.0;
    bool significant = false;  // p < 0.05
};

// Harrell's C over comparable pairs (t_i < t_j, event_i = 1): ties in risk
// count 1/2, tied times are not comparable. O(n log n) via a Fenwick tree
// over risk ranks. Throws StatError when no comparable pair exists.
double concordance_index(const std::vector<double>& risks, const std::vector<SurvivalLabel>& labels);
// Same, but returns -1 instead of throwing (used for epoch selection).
double concordance_index_or_nan(const std::vector<double>& risks,
                                const std::vector<SurvivalLabel>& labels);

SurvivalCurve km_estimator(const std::vector<SurvivalLabel>& labels);

// Two-group log-rank: observed vs expected events under the pooled hazard,
// hypergeometric variance, p from chi-square with 1 dof. Throws StatError on
// empty groups, zero events, or zero variance.
LogRankResult logrank_test(const std::vector<SurvivalLabel>& group_a,
                           const std::vector<SurvivalLabel>& group_b);

StratifiedGroups stratify_by_median(const std::vector<double>& risks);

FoldPlan make_fold_plan(int n, int k, std::uint64_t seed);

// Regularized incomplete gamma functions (series + continued fraction) and
// the chi-square survival function built on them.
double gamma_p(double a, double x);
double gamma_q(double a, double x);
double chi2_sf(double x, double dof);

// ---------------------------------------------------------------------------
// Cross-validation harness
// ---------------------------------------------------------------------------

struct FoldMetrics {
    int fold = 0;  // 1-based
    double c_index = -1.0;
    bool c_index_valid = false;
    double logrank_chi2 = 0.0;
    double logrank_p = 1.0;
    bool logrank_valid = false;
    int n_events = 0;
    int n_test = 0;
    int n_excluded = 0;  // test patients missing a scheme modality
};

struct PooledStats {
    std::vector<double> risks;
    std::vector<SurvivalLabel> labels;
    double c_index = -1.0;
    bool c_index_valid = false;
    LogRankResult logrank;
    bool logrank_valid = false;
    SurvivalCurve km_high, km_low;
    int n = 0;
};

struct SchemeReport {
    Scheme scheme;
    std::vector<FoldMetrics> folds;
    double mean_c_index = -1.0;
    double sd_c_index = 0.0;
    PooledStats pooled;
};

struct CvReport {
    FoldPlan plan;
    std::vector<SchemeReport> schemes;
    std::vector<int> skipped_folds;  // 1-based fold ids skipped for zero events
};

// Five-fold protocol: per fold, train on the other folds (with a validation
// carve-out for best-epoch selection on validation C-index), predict the held
// fold under every configured scheme. Folds with zero train or test events
// are skipped with a warning; all-skipped is an error.
CvReport cross_validate(const std::vector<PatientRecord>& cohort, const Config& config,
                        std::uint64_t seed);

// Whole-cohort evaluation of an already trained pipeline (single-split mode).
SchemeReport evaluate_pipeline(const Pipeline& pipeline, const std::vector<PatientRecord>& cohort,
                               const Scheme& scheme);

}  // namespace hetsurv
