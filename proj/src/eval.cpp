#include "hetsurv/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <thread>

#include "hetsurv/errors.hpp"

namespace hetsurv {

double SurvivalCurve::at(double t) const {
    double s = 1.0;
    for (std::size_t k = 0; k < times.size(); ++k) {
        if (times[k] <= t) s = survival[k];
        else break;
    }
    return s;
}

// ---------------------------------------------------------------------------
// Concordance index
// ---------------------------------------------------------------------------

namespace {

// Fenwick tree over risk ranks; counts previously inserted patients.
class Fenwick {
  public:
    explicit Fenwick(int n) : tree_(static_cast<std::size_t>(n) + 1, 0), n_(n) {}
    void add(int i) {
        for (++i; i <= n_; i += i & (-i)) tree_[static_cast<std::size_t>(i)] += 1;
    }
    // count of inserted ranks < i
    long long count_below(int i) const {
        long long s = 0;
        for (; i > 0; i -= i & (-i)) s += tree_[static_cast<std::size_t>(i)];
        return s;
    }

  private:
    std::vector<long long> tree_;
    int n_;
};

}  // namespace

double concordance_index(const std::vector<double>& risks, const std::vector<SurvivalLabel>& labels) {
    const int n = static_cast<int>(risks.size());
    if (labels.size() != risks.size()) throw DimensionError("concordance_index: size mismatch");

    // Rank-compress risks.
    std::vector<double> sorted = risks;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    const auto rank_of = [&](double r) {
        return static_cast<int>(std::lower_bound(sorted.begin(), sorted.end(), r) - sorted.begin());
    };

    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
        return labels[static_cast<std::size_t>(a)].time > labels[static_cast<std::size_t>(b)].time;
    });

    // Walk times in descending order; the tree holds all patients with
    // strictly longer time, so tied times never pair up.
    Fenwick tree(static_cast<int>(sorted.size()));
    long long inserted = 0;
    long long num2 = 0;  // doubled concordance units
    long long comparable = 0;
    std::size_t k = 0;
    while (k < idx.size()) {
        std::size_t j = k;
        const double t = labels[static_cast<std::size_t>(idx[k])].time;
        while (j < idx.size() && labels[static_cast<std::size_t>(idx[j])].time == t) ++j;
        for (std::size_t q = k; q < j; ++q) {
            const int i = idx[q];
            if (!labels[static_cast<std::size_t>(i)].event) continue;
            const int r = rank_of(risks[static_cast<std::size_t>(i)]);
            const long long less = tree.count_below(r);        // risk_j < risk_i
            const long long leq = tree.count_below(r + 1);     // risk_j <= risk_i
            num2 += 2 * less + (leq - less);
            comparable += inserted;
        }
        for (std::size_t q = k; q < j; ++q) tree.add(rank_of(risks[static_cast<std::size_t>(idx[q])]));
        inserted += static_cast<long long>(j - k);
        k = j;
    }
    if (comparable == 0) {
        throw StatError("concordance_index: no comparable pair (need an event preceding a longer time)");
    }
    return static_cast<double>(num2) / (2.0 * static_cast<double>(comparable));
}

double concordance_index_or_nan(const std::vector<double>& risks,
                                const std::vector<SurvivalLabel>& labels) {
    try {
        return concordance_index(risks, labels);
    } catch (const StatError&) {
        return -1.0;
    }
}

// ---------------------------------------------------------------------------
// Kaplan-Meier and log-rank
// ---------------------------------------------------------------------------

SurvivalCurve km_estimator(const std::vector<SurvivalLabel>& labels) {
    if (labels.empty()) throw StatError("km_estimator: empty cohort");
    std::vector<double> event_times;
    for (const auto& l : labels) {
        if (l.event) event_times.push_back(l.time);
    }
    std::sort(event_times.begin(), event_times.end());
    event_times.erase(std::unique(event_times.begin(), event_times.end()), event_times.end());

    SurvivalCurve curve;
    double s = 1.0;
    for (double t : event_times) {
        int at_risk = 0, deaths = 0;
        for (const auto& l : labels) {
            if (l.time >= t) ++at_risk;
            if (l.event && l.time == t) ++deaths;
        }
        if (at_risk == 0) break;
        s *= 1.0 - static_cast<double>(deaths) / static_cast<double>(at_risk);
        curve.times.push_back(t);
        curve.survival.push_back(s);
    }
    return curve;
}

LogRankResult logrank_test(const std::vector<SurvivalLabel>& group_a,
                           const std::vector<SurvivalLabel>& group_b) {
    if (group_a.empty() || group_b.empty()) throw StatError("logrank_test: both groups must be nonempty");

    std::vector<double> event_times;
    for (const auto& l : group_a)
        if (l.event) event_times.push_back(l.time);
    for (const auto& l : group_b)
        if (l.event) event_times.push_back(l.time);
    if (event_times.empty()) throw StatError("logrank_test: no events in either group");
    std::sort(event_times.begin(), event_times.end());
    event_times.erase(std::unique(event_times.begin(), event_times.end()), event_times.end());

    double observed_a = 0.0, expected_a = 0.0, variance = 0.0;
    for (double t : event_times) {
        double n1 = 0, n2 = 0, d1 = 0, d2 = 0;
        for (const auto& l : group_a) {
            if (l.time >= t) ++n1;
            if (l.event && l.time == t) ++d1;
        }
        for (const auto& l : group_b) {
            if (l.time >= t) ++n2;
            if (l.event && l.time == t) ++d2;
        }
        const double n = n1 + n2, d = d1 + d2;
        if (n < 2 || d == 0) {
            observed_a += d1;
            expected_a += n > 0 ? d * n1 / n : 0.0;
            continue;
        }
        observed_a += d1;
        expected_a += d * n1 / n;
        variance += d * (n1 / n) * (n2 / n) * (n - d) / (n - 1);
    }
    if (variance <= 0.0) throw StatError("logrank_test: zero variance, groups are not comparable");

    LogRankResult out;
    const double diff = observed_a - expected_a;
    out.chi_square = diff * diff / variance;
    out.p_value = chi2_sf(out.chi_square, 1.0);
    out.significant = out.p_value < 0.05;
    return out;
}

StratifiedGroups stratify_by_median(const std::vector<double>& risks) {
    const int n = static_cast<int>(risks.size());
    if (n < 2) throw StatError("stratify_by_median: need at least 2 patients");
    std::vector<double> sorted = risks;
    std::sort(sorted.begin(), sorted.end());
    // Lower of the two middle order statistics for even n.
    const double median = sorted[static_cast<std::size_t>((n - 1) / 2)];

    StratifiedGroups out;
    out.threshold = median;
    for (int i = 0; i < n; ++i) {
        if (risks[static_cast<std::size_t>(i)] > median) out.high_risk.push_back(i);
        else out.low_risk.push_back(i);
    }
    if (out.high_risk.empty()) out.degenerate = true;
    return out;
}

FoldPlan make_fold_plan(int n, int k, std::uint64_t seed) {
    if (n < k) throw ConfigError("fold plan: cohort smaller than fold count");
    FoldPlan plan;
    plan.seed = seed;
    std::vector<int> ids(static_cast<std::size_t>(n));
    std::iota(ids.begin(), ids.end(), 0);
    Rng rng(mix64(seed ^ 0x666f6c64));
    rng.shuffle(ids);
    plan.folds.resize(static_cast<std::size_t>(k));
    std::size_t pos = 0;
    for (int f = 0; f < k; ++f) {
        const int size = n / k + (f < n % k ? 1 : 0);
        for (int i = 0; i < size; ++i) plan.folds[static_cast<std::size_t>(f)].push_back(ids[pos++]);
    }
    return plan;
}

// ---------------------------------------------------------------------------
// Regularized incomplete gamma
// ---------------------------------------------------------------------------

namespace {

// Series expansion for P(a, x); converges fast for x < a + 1.
double gamma_p_series(double a, double x) {
    double ap = a;
    double sum = 1.0 / a;
    double del = sum;
    for (int i = 0; i < 500; ++i) {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if (std::fabs(del) < std::fabs(sum) * 1e-16) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Lentz continued fraction for Q(a, x); converges fast for x >= a + 1.
double gamma_q_cf(double a, double x) {
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= 500; ++i) {
        const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < 1e-16) break;
    }
    return h * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

}  // namespace

double gamma_p(double a, double x) {
    if (x < 0.0 || a <= 0.0) throw NumericError("gamma_p: domain error");
    if (x == 0.0) return 0.0;
    if (x < a + 1.0) return gamma_p_series(a, x);
    return 1.0 - gamma_q_cf(a, x);
}

double gamma_q(double a, double x) {
    if (x < 0.0 || a <= 0.0) throw NumericError("gamma_q: domain error");
    if (x == 0.0) return 1.0;
    if (x < a + 1.0) return 1.0 - gamma_p_series(a, x);
    return gamma_q_cf(a, x);
}

double chi2_sf(double x, double dof) { return gamma_q(dof / 2.0, x / 2.0); }

// ---------------------------------------------------------------------------
// Cross-validation
// ---------------------------------------------------------------------------

namespace {

struct FoldOutcome {
    bool skipped = false;
    // per configured scheme: (test cohort index, risk) plus exclusions
    std::vector<std::vector<std::pair<int, double>>> risks_per_scheme;
    std::vector<int> excluded_per_scheme;
};

FoldOutcome run_fold(const std::vector<PatientRecord>& cohort, const Config& config,
                     const FoldPlan& plan, int fold, std::uint64_t seed) {
    FoldOutcome out;
    const auto& test_ids = plan.folds[static_cast<std::size_t>(fold)];

    std::vector<int> pool;
    for (int f = 0; f < static_cast<int>(plan.folds.size()); ++f) {
        if (f == fold) continue;
        for (int id : plan.folds[static_cast<std::size_t>(f)]) pool.push_back(id);
    }
    // 25% of the training portion goes to validation for epoch selection.
    Rng carve_rng(mix64(seed ^ (0xabcd0000ULL + static_cast<std::uint64_t>(fold))));
    carve_rng.shuffle(pool);
    const std::size_t val_n = static_cast<std::size_t>(
        std::floor(config.eval_val_fraction * static_cast<double>(pool.size())));
    std::vector<const PatientRecord*> val, train;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        (i < val_n ? val : train).push_back(&cohort[static_cast<std::size_t>(pool[i])]);
    }

    int train_events = 0, test_events = 0;
    for (const auto* p : train) train_events += p->event;
    for (int id : test_ids) test_events += cohort[static_cast<std::size_t>(id)].event;
    if (train_events == 0 || test_events == 0) {
        out.skipped = true;
        return out;
    }

    Config fold_config = config;
    fold_config.train_seed = mix64(seed ^ (0x1111ULL * (static_cast<std::uint64_t>(fold) + 1)));
    Pipeline pipeline(fold_config, mix64(seed + static_cast<std::uint64_t>(fold) * 31));
    train_pipeline(pipeline, train, val, fold_config);

    out.risks_per_scheme.resize(config.schemes.size());
    out.excluded_per_scheme.assign(config.schemes.size(), 0);
    for (std::size_t s = 0; s < config.schemes.size(); ++s) {
        for (int id : test_ids) {
            const PatientRecord& patient = cohort[static_cast<std::size_t>(id)];
            bool ok = true;
            for (Modality m : config.schemes[s].modalities()) ok = ok && patient.has(m);
            if (!ok) {
                ++out.excluded_per_scheme[s];
                continue;
            }
            out.risks_per_scheme[s].emplace_back(id, pipeline.predict(patient, config.schemes[s]).risk);
        }
    }
    return out;
}

}  // namespace

CvReport cross_validate(const std::vector<PatientRecord>& cohort, const Config& config,
                        std::uint64_t seed) {
    if (cohort.size() < 10) throw ConfigError("cross_validate: cohort must have at least 10 patients");
    CvReport report;
    report.plan = make_fold_plan(static_cast<int>(cohort.size()), config.eval_folds, seed);
    const int k = config.eval_folds;

    std::vector<FoldOutcome> outcomes(static_cast<std::size_t>(k));
    if (config.eval_parallel_folds) {
        std::vector<std::thread> workers;
        workers.reserve(static_cast<std::size_t>(k));
        for (int f = 0; f < k; ++f) {
            workers.emplace_back([&, f]() {
                outcomes[static_cast<std::size_t>(f)] = run_fold(cohort, config, report.plan, f, seed);
            });
        }
        for (auto& t : workers) t.join();
    } else {
        for (int f = 0; f < k; ++f) {
            outcomes[static_cast<std::size_t>(f)] = run_fold(cohort, config, report.plan, f, seed);
        }
    }

    int usable = 0;
    for (int f = 0; f < k; ++f) {
        if (outcomes[static_cast<std::size_t>(f)].skipped) {
            report.skipped_folds.push_back(f + 1);
            std::cerr << "[eval] fold " << (f + 1) << " skipped: zero events in train or test split\n";
        } else {
            ++usable;
        }
    }
    if (usable == 0) throw StatError("cross_validate: every fold was skipped for zero events");

    report.schemes.resize(config.schemes.size());
    for (std::size_t s = 0; s < config.schemes.size(); ++s) {
        SchemeReport& sr = report.schemes[s];
        sr.scheme = config.schemes[s];

        std::vector<double> fold_cs;
        for (int f = 0; f < k; ++f) {
            const FoldOutcome& oc = outcomes[static_cast<std::size_t>(f)];
            if (oc.skipped) continue;
            FoldMetrics fm;
            fm.fold = f + 1;
            fm.n_excluded = oc.excluded_per_scheme[s];
            std::vector<double> risks;
            std::vector<SurvivalLabel> labels;
            for (const auto& [id, risk] : oc.risks_per_scheme[s]) {
                risks.push_back(risk);
                const auto& p = cohort[static_cast<std::size_t>(id)];
                labels.push_back({p.time, p.event});
                fm.n_events += p.event;
                sr.pooled.risks.push_back(risk);
                sr.pooled.labels.push_back({p.time, p.event});
            }
            fm.n_test = static_cast<int>(risks.size());
            if (risks.size() >= 2) {
                const double c = concordance_index_or_nan(risks, labels);
                if (c >= 0.0) {
                    fm.c_index = c;
                    fm.c_index_valid = true;
                    fold_cs.push_back(c);
                }
                try {
                    StratifiedGroups groups = stratify_by_median(risks);
                    std::vector<SurvivalLabel> high, low;
                    for (int i : groups.high_risk) high.push_back(labels[static_cast<std::size_t>(i)]);
                    for (int i : groups.low_risk) low.push_back(labels[static_cast<std::size_t>(i)]);
                    LogRankResult lr = logrank_test(high, low);
                    fm.logrank_chi2 = lr.chi_square;
                    fm.logrank_p = lr.p_value;
                    fm.logrank_valid = true;
                } catch (const StatError&) {
                    fm.logrank_valid = false;
                }
            }
            sr.folds.push_back(fm);
        }

        if (!fold_cs.empty()) {
            double mean = 0.0;
            for (double c : fold_cs) mean += c;
            mean /= static_cast<double>(fold_cs.size());
            double var = 0.0;
            for (double c : fold_cs) var += (c - mean) * (c - mean);
            sr.mean_c_index = mean;
            sr.sd_c_index = fold_cs.size() > 1 ? std::sqrt(var / static_cast<double>(fold_cs.size() - 1)) : 0.0;
        }

        sr.pooled.n = static_cast<int>(sr.pooled.risks.size());
        if (sr.pooled.n >= 2) {
            const double c = concordance_index_or_nan(sr.pooled.risks, sr.pooled.labels);
            sr.pooled.c_index = c;
            sr.pooled.c_index_valid = c >= 0.0;
            try {
                StratifiedGroups groups = stratify_by_median(sr.pooled.risks);
                std::vector<SurvivalLabel> high, low;
                for (int i : groups.high_risk) high.push_back(sr.pooled.labels[static_cast<std::size_t>(i)]);
                for (int i : groups.low_risk) low.push_back(sr.pooled.labels[static_cast<std::size_t>(i)]);
                sr.pooled.logrank = logrank_test(high, low);
                sr.pooled.logrank_valid = true;
                sr.pooled.km_high = km_estimator(high);
                sr.pooled.km_low = km_estimator(low);
            } catch (const StatError&) {
                sr.pooled.logrank_valid = false;
            }
        }
    }
    return report;
}

SchemeReport evaluate_pipeline(const Pipeline& pipeline, const std::vector<PatientRecord>& cohort,
                               const Scheme& scheme) {
    SchemeReport sr;
    sr.scheme = scheme;
    FoldMetrics fm;
    fm.fold = 1;
    std::vector<double> risks;
    std::vector<SurvivalLabel> labels;
    for (const auto& patient : cohort) {
        bool ok = true;
        for (Modality m : scheme.modalities()) ok = ok && patient.has(m);
        if (!ok) {
            ++fm.n_excluded;
            continue;
        }
        risks.push_back(pipeline.predict(patient, scheme).risk);
        labels.push_back({patient.time, patient.event});
        fm.n_events += patient.event;
        sr.pooled.risks.push_back(risks.back());
        sr.pooled.labels.push_back(labels.back());
    }
    fm.n_test = static_cast<int>(risks.size());
    if (risks.size() >= 2) {
        const double c = concordance_index_or_nan(risks, labels);
        if (c >= 0.0) {
            fm.c_index = c;
            fm.c_index_valid = true;
            sr.mean_c_index = c;
        }
        try {
            StratifiedGroups groups = stratify_by_median(risks);
            std::vector<SurvivalLabel> high, low;
            for (int i : groups.high_risk) high.push_back(labels[static_cast<std::size_t>(i)]);
            for (int i : groups.low_risk) low.push_back(labels[static_cast<std::size_t>(i)]);
            LogRankResult lr = logrank_test(high, low);
            fm.logrank_chi2 = lr.chi_square;
            fm.logrank_p = lr.p_value;
            fm.logrank_valid = true;
            sr.pooled.logrank = lr;
            sr.pooled.logrank_valid = true;
            sr.pooled.km_high = km_estimator(high);
            sr.pooled.km_low = km_estimator(low);
        } catch (const StatError&) {
        }
        sr.pooled.c_index = fm.c_index;
        sr.pooled.c_index_valid = fm.c_index_valid;
    }
    sr.pooled.n = fm.n_test;
    sr.folds.push_back(fm);
    return sr;
}

}  // namespace hetsurv
