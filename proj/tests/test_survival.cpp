#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hetsurv/errors.hpp"
#include "hetsurv/survival.hpp"
#include "test_util.hpp"

using namespace hetsurv;
using testutil::random_tensor;

namespace {

std::vector<SurvivalLabel> random_labels(int n, double censor_p, Rng& rng, int max_tied_time = 0) {
    std::vector<SurvivalLabel> out;
    for (int i = 0; i < n; ++i) {
        double t;
        if (max_tied_time > 0) {
            t = 1.0 + rng.uniform_int(max_tied_time);  // deliberate ties
        } else {
            t = rng.uniform(0.1, 10.0);
        }
        out.push_back({t, rng.uniform() < censor_p ? 0 : 1});
    }
    return out;
}

Config tiny_config() {
    Config config;
    config.data_patients = 24;
    config.data_feature_dim = 8;
    config.data_signal_dims = 4;
    config.data_grid_h = 2;
    config.data_grid_w = 3;
    config.data_genes = 8;
    config.data_clinical_fields = 3;
    config.train_batch = 8;
    config.train_epochs = 2;
    config.train_lr = 1e-3;
    config.train_dropout = 0.1;
    config.train_seed = 7;
    config.schemes = {Scheme::parse("P"), Scheme::parse("PGC")};
    return config;
}

}  // namespace

TEST_CASE("cox_loss trivial cases") {
    // no events -> 0
    {
        ag::Var scores = ag::constant(Tensor({3}, {0.3, -0.2, 1.0}));
        ag::Var loss = cox_loss(scores, {{1.0, 0}, {2.0, 0}, {3.0, 0}});
        CHECK(loss->value.scalar_value() == 0.0);
    }
    // singleton risk set -> exactly 0
    {
        ag::Var scores = ag::constant(Tensor({1}, {0.73}));
        ag::Var loss = cox_loss(scores, {{2.0, 1}});
        CHECK(loss->value.scalar_value() == doctest::Approx(0.0).epsilon(1e-15));
    }
    // two patients, event first: h1 + log(exp(-h1) + exp(-h2))
    {
        const double h1 = 0.4, h2 = -1.1;
        ag::Var scores = ag::constant(Tensor({2}, {h1, h2}));
        ag::Var loss = cox_loss(scores, {{1.0, 1}, {2.0, 0}});
        CHECK(loss->value.scalar_value() ==
              doctest::Approx(h1 + std::log(std::exp(-h1) + std::exp(-h2))).epsilon(1e-12));
    }
    CHECK_THROWS_AS(cox_loss(ag::constant(Tensor({1}, {0.0})), {}), DimensionError);
    CHECK_THROWS_AS(ag::cox_loss(ag::constant(Tensor({3})), {}, {}), DimensionError);
}

TEST_CASE("cox_loss equals the brute-force double sum on cohorts up to 8 with ties") {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 1 + rng.uniform_int(8);
        std::vector<SurvivalLabel> labels = random_labels(n, 0.3, rng, trial % 2 ? 3 : 0);
        std::vector<double> scores(static_cast<std::size_t>(n));
        for (auto& s : scores) s = rng.normal();
        const double fast = cox_loss_value(scores, labels);
        const double slow = testutil::cox_double_sum(scores, labels);
        CHECK(std::fabs(fast - slow) <= 1e-10);
    }
}

TEST_CASE("cox_loss shift invariance") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 2 + rng.uniform_int(10);
        std::vector<SurvivalLabel> labels = random_labels(n, 0.3, rng);
        std::vector<double> scores(static_cast<std::size_t>(n)), shifted(static_cast<std::size_t>(n));
        const double c = rng.uniform(-5.0, 5.0);
        for (int i = 0; i < n; ++i) {
            scores[static_cast<std::size_t>(i)] = rng.normal();
            shifted[static_cast<std::size_t>(i)] = scores[static_cast<std::size_t>(i)] + c;
        }
        CHECK(std::fabs(cox_loss_value(scores, labels) - cox_loss_value(shifted, labels)) <= 1e-9);
    }
}

TEST_CASE("cox_loss gradient matches finite differences at 1e-6") {
    Rng rng(7);
    for (int trial = 0; trial < 5; ++trial) {
        const int n = 6;
        std::vector<SurvivalLabel> labels = random_labels(n, 0.3, rng, 3);
        ag::Parameter scores("s", random_tensor({n}, rng));
        const double err = grad_check([&]() { return cox_loss(scores.node(), labels); }, {scores});
        CHECK(err <= 1e-6);
    }
}

TEST_CASE("total_loss arithmetic") {
    CHECK(total_loss(0.0, 0.0, {}, {5.0, 1.0}) == 0.0);
    CHECK(total_loss(1.0, 2.0, {{"P", 3.0}}, {5.0, 1.0}) == doctest::Approx(14.0).epsilon(1e-15));
    // beta = 0 removes survival supervision
    CHECK(total_loss(1.0, 2.0, {{"P", 3.0}, {"G", 9.0}}, {5.0, 0.0}) ==
          doctest::Approx(11.0).epsilon(1e-15));
    // affine in each component
    CHECK(total_loss(2.0, 2.0, {{"P", 3.0}}, {5.0, 1.0}) -
              total_loss(1.0, 2.0, {{"P", 3.0}}, {5.0, 1.0}) ==
          doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("survival head: zero weights give zero, 1-layer dot product") {
    Rng rng(9);
    SurvivalHead head("h", 2, 4, rng);
    // zero everything: score 0 for any input
    std::vector<ag::Parameter> params = head.params();
    for (auto& p : params) p.value().fill(0.0);
    Rng drop(1);
    ag::Var score = head.forward(ag::constant(Tensor({2}, {2.0, 3.0})), 0.0, false, drop);
    CHECK(score->value.scalar_value() == 0.0);

    // reconstruct a 1-layer w=[1,1], b=0 head: first layer passes channels
    // through (identity into the hidden slots), second sums them
    for (auto& p : params) {
        if (p.name() == "h.w1") {
            p.value() = Tensor({2, 4});
            p.value().at(0, 0) = 1.0;
            p.value().at(1, 1) = 1.0;
        } else if (p.name() == "h.w2") {
            p.value() = Tensor({4, 1}, {1.0, 1.0, 0.0, 0.0});
        } else if (p.name() == "h.slope") {
            p.value()[0] = 1.0;  // linear
        }
    }
    ag::Var dot = head.forward(ag::constant(Tensor({2}, {2.0, 3.0})), 0.0, false, drop);
    CHECK(dot->value.scalar_value() == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("pipeline predict: score count, mean fusion, risk sign") {
    Config config = tiny_config();
    SyntheticCohort cohort = generate_synthetic_cohort(config.cohort_spec(), 7);
    Pipeline pipe(config, 7);

    const PatientRecord& p0 = cohort.records[0];
    RiskScore full = pipe.predict(p0, Scheme::parse("PGC"));
    CHECK(full.modality_scores.size() == 3);
    double mean = 0.0;
    for (const auto& [m, s] : full.modality_scores) mean += s;
    mean /= 3.0;
    CHECK(full.s_final == doctest::Approx(mean).epsilon(1e-12));
    CHECK(full.risk == doctest::Approx(-full.s_final).epsilon(1e-12));

    RiskScore single = pipe.predict(p0, Scheme::parse("P"));
    CHECK(single.modality_scores.size() == 1);
    CHECK(single.s_final == doctest::Approx(single.modality_scores[0].second).epsilon(1e-12));

    // deterministic: same checkpoint, same input -> bit-identical
    RiskScore again = pipe.predict(p0, Scheme::parse("PGC"));
    CHECK(again.s_final == full.s_final);

    // missing modality raises a named error
    PatientRecord stripped = p0;
    stripped.clinical.reset();
    CHECK_THROWS_AS(pipe.predict(stripped, Scheme::parse("PGC")), MissingModalityError);
}

TEST_CASE("pipeline predict under the positive sign convention") {
    Config config = tiny_config();
    config.survival_sign = "pos";
    SyntheticCohort cohort = generate_synthetic_cohort(config.cohort_spec(), 7);
    Pipeline pipe(config, 7);
    RiskScore score = pipe.predict(cohort.records[0], Scheme::parse("P"));
    CHECK(score.risk == doctest::Approx(score.s_final).epsilon(1e-15));
}

TEST_CASE("mean degeneracy: duplicated modality with forced-equal scores") {
    // Patient whose G graph equals its P graph; zeroed fusion models and
    // identical heads force score_G == score_P, so scheme PG must equal
    // scheme P.
    Config config = tiny_config();
    config.schemes = {Scheme::parse("P"), Scheme::parse("PG")};
    // make the two graphs structurally identical: reuse the gene slot for a
    // second copy of pathology
    SyntheticCohort cohort = generate_synthetic_cohort(config.cohort_spec(), 7);
    PatientRecord patient = cohort.records[0];
    patient.genomic = patient.pathology;  // same features, schema differs only by node typing
    // the towers for P and G must also match: copy every P parameter into G
    Pipeline pipe(config, 7);
    // force G tower == P tower is not expressible (different metapath sets),
    // so instead collapse everything after pooling: zero the fusion models
    // and copy the P head into both heads of PG.
    pipe.fusion(Scheme::parse("P")).zero_all();
    pipe.fusion(Scheme::parse("PG")).zero_all();

    // give all three heads identical weights
    Rng hrng(123);
    std::vector<Tensor> head_values;
    {
        SurvivalHead ref("ref", config.data_feature_dim, 16, hrng);
        for (const auto& p : ref.params()) head_values.push_back(p.value());
    }
    const auto load_head = [&](SurvivalHead& h) {
        auto ps = h.params();
        for (std::size_t i = 0; i < ps.size(); ++i) ps[i].value() = head_values[i];
    };
    load_head(pipe.head(Scheme::parse("P"), Modality::Pathology));
    load_head(pipe.head(Scheme::parse("PG"), Modality::Pathology));
    load_head(pipe.head(Scheme::parse("PG"), Modality::Genomic));

    // and make the G tower identical to the P tower by loading P's parameters
    // into G (same shapes: same D, same layer counts; metapaths differ but the
    // duplicated graph carries the same relations under gene names? It does
    // not, so this only works because the towers are evaluated per modality on
    // the SAME pathology graph content when the metapath adjacencies coincide.
    // The gene metapaths (same_group / same_group->cross_group) do not exist
    // on a pathology graph, so predict() would throw. Instead, verify the
    // degeneracy at the fusion/head level directly below.
    ag::NoGradGuard guard;
    Rng drop(1);
    Tensor token = random_tensor({config.data_feature_dim}, hrng);
    std::vector<std::pair<Modality, ag::Var>> one = {{Modality::Pathology, ag::constant(token)}};
    std::vector<std::pair<Modality, ag::Var>> two = {{Modality::Pathology, ag::constant(token)},
                                                     {Modality::Genomic, ag::constant(token)}};
    auto s1 = pipe.scheme_scores(Scheme::parse("P"), one, 0.0, false, drop);
    auto s2 = pipe.scheme_scores(Scheme::parse("PG"), two, 0.0, false, drop);
    REQUIRE(s1.size() == 1);
    REQUIRE(s2.size() == 2);
    // zero fusion => H'' rows are 2*token in both schemes; equal heads =>
    // equal scores; the mean over {m, m'} equals the single-modality score
    CHECK(s2[0]->value.scalar_value() == doctest::Approx(s1[0]->value.scalar_value()).epsilon(1e-12));
    CHECK(s2[1]->value.scalar_value() == doctest::Approx(s1[0]->value.scalar_value()).epsilon(1e-12));
    const double mean2 = 0.5 * (s2[0]->value.scalar_value() + s2[1]->value.scalar_value());
    CHECK(mean2 == doctest::Approx(s1[0]->value.scalar_value()).epsilon(1e-12));
}

TEST_CASE("train: lr = 0 leaves parameters unchanged") {
    Config config = tiny_config();
    config.train_lr = 1e-300;  // adam with lr ~ 0
    SyntheticCohort cohort = generate_synthetic_cohort(config.cohort_spec(), 7);
    Pipeline pipe(config, 7);
    std::vector<Tensor> before = pipe.snapshot();
    train_pipeline(pipe, cohort.records, config);
    std::vector<Tensor> after = pipe.snapshot();
    for (std::size_t i = 0; i < before.size(); ++i) {
        CHECK(max_abs_diff(before[i], after[i]) <= 1e-290);
    }
}

TEST_CASE("train: errors on degenerate cohorts") {
    Config config = tiny_config();
    SyntheticCohort cohort = generate_synthetic_cohort(config.cohort_spec(), 7);
    for (auto& r : cohort.records) r.event = 0;
    Pipeline pipe(config, 7);
    CHECK_THROWS_AS(train_pipeline(pipe, cohort.records, config), TrainError);

    std::vector<PatientRecord> one = {cohort.records[0]};
    CHECK_THROWS_AS(train_pipeline(pipe, one, config), TrainError);
}

TEST_CASE("train: loss decreases and trace is reproducible") {
    Config config = tiny_config();
    config.train_epochs = 6;
    config.train_lr = 3e-3;
    SyntheticCohort cohort = generate_synthetic_cohort(config.cohort_spec(), 7);

    Pipeline pipe_a(config, 7);
    TrainResult a = train_pipeline(pipe_a, cohort.records, config);
    REQUIRE(a.trace.size() == 6);
    CHECK(a.trace.back().i_total < a.trace.front().i_total);

    Pipeline pipe_b(config, 7);
    TrainResult b = train_pipeline(pipe_b, cohort.records, config);
    for (std::size_t e = 0; e < a.trace.size(); ++e) {
        CHECK(a.trace[e].i_total == b.trace[e].i_total);
        CHECK(a.trace[e].i_mer == b.trace[e].i_mer);
        CHECK(a.trace[e].i_cmae == b.trace[e].i_cmae);
    }

    // Eq-13 style consistency on every row
    const LossWeights w{config.survival_alpha, config.survival_beta};
    for (const auto& row : a.trace) {
        const double expect = row.i_mer + w.alpha * row.i_cmae +
                              w.beta * (row.i_cox[0] + row.i_cox[1] + row.i_cox[2]);
        CHECK(std::fabs(row.i_total - expect) <= 1e-9);
    }
}

TEST_CASE("validation selection restores the best epoch") {
    Config config = tiny_config();
    config.train_epochs = 4;
    SyntheticCohort cohort = generate_synthetic_cohort(config.cohort_spec(), 7);
    std::vector<const PatientRecord*> train, val;
    for (std::size_t i = 0; i < cohort.records.size(); ++i) {
        (i < 6 ? val : train).push_back(&cohort.records[i]);
    }
    Pipeline pipe(config, 7);
    TrainResult result = train_pipeline(pipe, train, val, config);
    CHECK(result.best_epoch >= 1);
    CHECK(result.best_epoch <= 4);
    double best = -1.0;
    for (const auto& row : result.trace) best = std::max(best, row.val_c_index);
    CHECK(result.trace[static_cast<std::size_t>(result.best_epoch - 1)].val_c_index ==
          doctest::Approx(best).epsilon(1e-15));
}
