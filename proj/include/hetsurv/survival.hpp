#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hetsurv/cmae.hpp"
#include "hetsurv/config.hpp"
#include "hetsurv/fer.hpp"
#include "hetsurv/fusion.hpp"

namespace hetsurv {

struct SurvivalLabel {
    double time = 0.0;
    int event = 0;
};

struct LossWeights {
    double alpha = 5.0;
    double beta = 1.0;
};

// Per-patient prediction: one score per modality in the scheme, their mean,
// and the oriented risk (higher risk = shorter expected survival).
struct RiskScore {
    std::vector<std::pair<Modality, double>> modality_scores;
    double s_final = 0.0;
    double risk = 0.0;
};

// Cox partial likelihood over a jointly processed batch; risk sets are
// {j : t_j >= t_i} including ties. Autograd form plus a plain-value helper.
ag::Var cox_loss(const ag::Var& scores, const std::vector<SurvivalLabel>& labels);
double cox_loss_value(const std::vector<double>& scores, const std::vector<SurvivalLabel>& labels);

// I_total = I_MER + alpha*I_CMAE + sum_m beta*I_Cox^m.
double total_loss(double i_mer, double i_cmae, const std::map<std::string, double>& i_cox,
                  const LossWeights& w);

// Scalar survival head: MLP from the fused channel vector to one score.
class SurvivalHead {
  public:
    SurvivalHead() = default;
    SurvivalHead(const std::string& name, int channels, int hidden, Rng& rng);

    ag::Var forward(const ag::Var& token, double dropout_rate, bool training, Rng& rng) const;
    std::vector<ag::Parameter> params() const;

  private:
    ag::Parameter w1_, b1_, slope_, w2_, b2_;
};

// Shared per-modality FER+CMAE towers, one fusion model and one head set per
// scheme. Construction order (and therefore initialization) is deterministic
// given the seed.
class Pipeline {
  public:
    Pipeline(const Config& config, std::uint64_t init_seed);

    const Config& config() const { return config_; }

    struct TowerOutput {
        ag::Var i_mer;
        ag::Var i_cmae;
        ag::Var token;  // pooled modality channel vector [C]
    };
    // training=true masks meta-path edges (fer.pe) and grid cells
    // (cmae.mask_ratio); inference leaves everything visible.
    TowerOutput tower_forward(Modality m, const HetGraph& graph, bool training,
                              std::uint64_t step_seed) const;

    // Scores for every modality of the scheme, one fused forward.
    std::vector<ag::Var> scheme_scores(const Scheme& scheme,
                                       const std::vector<std::pair<Modality, ag::Var>>& tokens,
                                       double dropout_rate, bool training, Rng& rng) const;

    RiskScore predict(const PatientRecord& patient, const Scheme& scheme) const;

    bool has_tower(Modality m) const { return fer_[static_cast<int>(m)].has_value(); }
    const FERModel& fer(Modality m) const { return *fer_[static_cast<int>(m)]; }
    const CMAEModel& cmae(Modality m) const { return *cmae_[static_cast<int>(m)]; }
    FusionModel& fusion(const Scheme& scheme);
    SurvivalHead& head(const Scheme& scheme, Modality m);

    std::vector<ag::Parameter>& params() { return params_; }
    const std::vector<ag::Parameter>& params() const { return params_; }

    // Deep copies of parameter values, for best-epoch snapshots.
    std::vector<Tensor> snapshot() const;
    void restore(const std::vector<Tensor>& snap);

  private:
    Config config_;
    std::array<std::optional<FERModel>, kModalityCount> fer_;
    std::array<std::optional<CMAEModel>, kModalityCount> cmae_;
    std::array<std::vector<MetaPath>, kModalityCount> metapaths_;
    std::map<std::string, FusionModel> fusion_;
    std::map<std::string, std::array<std::optional<SurvivalHead>, kModalityCount>> heads_;
    std::vector<ag::Parameter> params_;
};

struct EpochTrace {
    int epoch = 0;
    double i_mer = 0.0;
    double i_cmae = 0.0;
    std::array<double, kModalityCount> i_cox = {0.0, 0.0, 0.0};
    double i_total = 0.0;
    double val_c_index = -1.0;  // -1 when no validation set
};

struct TrainResult {
    std::vector<EpochTrace> trace;
    int best_epoch = -1;  // 1-based; -1 when no validation selection ran
};

// Minibatch Adam on the joint objective. Requires >= 2 patients and >= 1
// event. When val is nonempty, tracks validation C-index (on the widest
// configured scheme every patient supports) and restores the best epoch's
// parameters before returning.
TrainResult train_pipeline(Pipeline& pipeline, const std::vector<const PatientRecord*>& train,
                           const std::vector<const PatientRecord*>& val, const Config& config);

// Convenience over the whole cohort (no validation split).
TrainResult train_pipeline(Pipeline& pipeline, const std::vector<PatientRecord>& cohort,
                           const Config& config);

}  // namespace hetsurv
