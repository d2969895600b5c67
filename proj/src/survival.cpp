#include "hetsurv/survival.hpp"

#include <algorithm>
#include <cmath>

#include "hetsurv/errors.hpp"
#include "hetsurv/eval.hpp"

namespace hetsurv {

ag::Var cox_loss(const ag::Var& scores, const std::vector<SurvivalLabel>& labels) {
    std::vector<double> times;
    std::vector<int> events;
    times.reserve(labels.size());
    events.reserve(labels.size());
    for (const auto& l : labels) {
        times.push_back(l.time);
        events.push_back(l.event);
    }
    return ag::cox_loss(scores, times, events);
}

double cox_loss_value(const std::vector<double>& scores, const std::vector<SurvivalLabel>& labels) {
    ag::NoGradGuard guard;
    return cox_loss(ag::constant(Tensor({static_cast<int>(scores.size())}, scores)), labels)
        ->value.scalar_value();
}

double total_loss(double i_mer, double i_cmae, const std::map<std::string, double>& i_cox,
                  const LossWeights& w) {
    double total = i_mer + w.alpha * i_cmae;
    for (const auto& [_, v] : i_cox) total += w.beta * v;
    return total;
}

// ---------------------------------------------------------------------------
// Survival head
// ---------------------------------------------------------------------------

SurvivalHead::SurvivalHead(const std::string& name, int channels, int hidden, Rng& rng) {
    w1_ = ag::Parameter(name + ".w1", glorot_init(channels, hidden, {channels, hidden}, rng));
    b1_ = ag::Parameter(name + ".b1", Tensor({hidden}));
    slope_ = ag::Parameter(name + ".slope", Tensor::scalar(0.25));
    w2_ = ag::Parameter(name + ".w2", glorot_init(hidden, 1, {hidden, 1}, rng));
    b2_ = ag::Parameter(name + ".b2", Tensor({1}));
}

ag::Var SurvivalHead::forward(const ag::Var& token, double dropout_rate, bool training, Rng& rng) const {
    ag::Var x = ag::reshape(token, {1, static_cast<int>(token->value.size())});
    x = ag::prelu(ag::dense_forward(x, w1_.node(), b1_.node()), slope_.node());
    x = ag::dropout(x, dropout_rate, training, rng);
    x = ag::dense_forward(x, w2_.node(), b2_.node());
    return ag::reshape(x, {1});
}

std::vector<ag::Parameter> SurvivalHead::params() const { return {w1_, b1_, slope_, w2_, b2_}; }

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

namespace {

constexpr int kHeadHidden = 16;

std::array<bool, kModalityCount> union_modalities(const std::vector<Scheme>& schemes) {
    std::array<bool, kModalityCount> used = {false, false, false};
    for (const auto& s : schemes) {
        for (int m = 0; m < kModalityCount; ++m) used[static_cast<std::size_t>(m)] |= s.use[m];
    }
    return used;
}

}  // namespace

Pipeline::Pipeline(const Config& config, std::uint64_t init_seed) : config_(config) {
    config_.validate();
    Rng rng(mix64(init_seed));
    const int d = config_.data_feature_dim;

    const auto used = union_modalities(config_.schemes);
    for (int mi = 0; mi < kModalityCount; ++mi) {
        if (!used[static_cast<std::size_t>(mi)]) continue;
        const Modality m = static_cast<Modality>(mi);
        const std::string tag(1, modality_letter(m));
        fer_[mi].emplace("fer." + tag, d, config_.fer_layers, config_.fer_tau, rng);
        cmae_[mi].emplace("cmae." + tag, d, config_.cmae_depth, config_.cmae_grn_literal, rng);
        metapaths_[mi] = default_metapaths(modality_node_kind(m));
    }

    for (const auto& scheme : config_.schemes) {
        const std::string label = scheme.label();
        fusion_.emplace(label, FusionModel("fusion." + label, scheme.arity(), d, rng));
        auto& hs = heads_[label];
        for (Modality m : scheme.modalities()) {
            const std::string tag(1, modality_letter(m));
            hs[static_cast<int>(m)].emplace("head." + label + "." + tag, d, kHeadHidden, rng);
        }
    }

    for (int mi = 0; mi < kModalityCount; ++mi) {
        if (!fer_[mi]) continue;
        for (const auto& p : fer_[mi]->params()) params_.push_back(p);
        for (const auto& p : cmae_[mi]->params()) params_.push_back(p);
    }
    for (const auto& scheme : config_.schemes) {
        for (const auto& p : fusion_.at(scheme.label()).params()) params_.push_back(p);
        for (Modality m : scheme.modalities()) {
            for (const auto& p : heads_.at(scheme.label())[static_cast<int>(m)]->params()) {
                params_.push_back(p);
            }
        }
    }
}

FusionModel& Pipeline::fusion(const Scheme& scheme) {
    auto it = fusion_.find(scheme.label());
    if (it == fusion_.end()) throw ConfigError("scheme " + scheme.label() + " is not configured");
    return it->second;
}

SurvivalHead& Pipeline::head(const Scheme& scheme, Modality m) {
    auto it = heads_.find(scheme.label());
    if (it == heads_.end() || !it->second[static_cast<int>(m)]) {
        throw ConfigError("no head for scheme " + scheme.label() + " modality " + modality_name(m));
    }
    return *it->second[static_cast<int>(m)];
}

Pipeline::TowerOutput Pipeline::tower_forward(Modality m, const HetGraph& graph, bool training,
                                              std::uint64_t step_seed) const {
    const int mi = static_cast<int>(m);
    if (!fer_[mi]) throw ConfigError("no tower built for modality " + modality_name(m));
    if (graph.features.cols() != config_.data_feature_dim) {
        throw DimensionError("modality " + modality_name(m) + " features " + graph.features.shape_str() +
                             " do not match configured dim " + std::to_string(config_.data_feature_dim));
    }

    const double pe = training ? config_.fer_pe : 0.0;
    MetaPathBatch fer_out = fer_forward(*fer_[mi], graph, metapaths_[mi], pe, mix64(step_seed));

    const bool is_grid = m == Modality::Pathology && graph.grid_h > 0;
    const int h = is_grid ? graph.grid_h : 1;
    const int w = is_grid ? graph.grid_w : graph.node_count();
    ag::Var grid = grid_from_embedding_var(
        fer_out.embedding, is_grid ? GridLayout::PathologyGrid : GridLayout::Sequence, h, w);

    GridMask mask = training ? mask_grid(h, w, config_.cmae_mask_ratio, mix64(step_seed ^ 0x5bd1e995))
                             : all_visible_mask(h, w);
    CmaeForwardResult cm = cmae_[mi]->forward(grid, mask);

    TowerOutput out;
    out.i_mer = fer_out.loss;
    out.i_cmae = cmae_loss(cm.reconstruction, grid, mask);
    out.token = pool_modality(cm.latent, mask);
    return out;
}

std::vector<ag::Var> Pipeline::scheme_scores(const Scheme& scheme,
                                             const std::vector<std::pair<Modality, ag::Var>>& tokens,
                                             double dropout_rate, bool training, Rng& rng) const {
    std::vector<ag::Var> rows;
    std::vector<Modality> order = scheme.modalities();
    for (Modality m : order) {
        bool found = false;
        for (const auto& [tm, tok] : tokens) {
            if (tm == m) {
                rows.push_back(tok);
                found = true;
                break;
            }
        }
        if (!found) throw MissingModalityError("scheme " + scheme.label() + " is missing a token for " +
                                               modality_name(m));
    }

    ag::Var stacked = ag::stack_rows(rows);
    const FusionModel& fm = fusion_.at(scheme.label());
    ag::Var fused = skip_connect(stacked, fm.cross_fuse(stacked));

    std::vector<ag::Var> scores;
    const auto& hs = heads_.at(scheme.label());
    for (std::size_t i = 0; i < order.size(); ++i) {
        const SurvivalHead& head = *hs[static_cast<int>(order[i])];
        scores.push_back(head.forward(ag::take_row(fused, static_cast<int>(i)), dropout_rate, training, rng));
    }
    return scores;
}

RiskScore Pipeline::predict(const PatientRecord& patient, const Scheme& scheme) const {
    ag::NoGradGuard guard;
    Rng rng(0);  // dropout is off at inference; stream never drawn from

    std::vector<std::pair<Modality, ag::Var>> tokens;
    for (Modality m : scheme.modalities()) {
        const HetGraph& g = patient.graph(m);  // throws MissingModalityError
        tokens.emplace_back(m, tower_forward(m, g, false, 0).token);
    }
    std::vector<ag::Var> scores = scheme_scores(scheme, tokens, 0.0, false, rng);

    RiskScore out;
    const auto order = scheme.modalities();
    double sum = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const double s = scores[i]->value.scalar_value();
        out.modality_scores.emplace_back(order[i], s);
        sum += s;
    }
    out.s_final = sum / static_cast<double>(scores.size());
    out.risk = config_.survival_sign == "neg" ? -out.s_final : out.s_final;
    return out;
}

std::vector<Tensor> Pipeline::snapshot() const {
    std::vector<Tensor> snap;
    snap.reserve(params_.size());
    for (const auto& p : params_) snap.push_back(p.value());
    return snap;
}

void Pipeline::restore(const std::vector<Tensor>& snap) {
    if (snap.size() != params_.size()) throw DimensionError("snapshot size mismatch");
    for (std::size_t i = 0; i < snap.size(); ++i) params_[i].value() = snap[i];
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

// Widest configured scheme every training run can rely on; used for
// validation-based model selection.
Scheme selection_scheme(const Config& config) {
    Scheme best = config.schemes.front();
    for (const auto& s : config.schemes) {
        if (s.arity() > best.arity()) best = s;
    }
    return best;
}

}  // namespace

TrainResult train_pipeline(Pipeline& pipeline, const std::vector<const PatientRecord*>& train,
                           const std::vector<const PatientRecord*>& val, const Config& config) {
    if (train.size() < 2) throw TrainError("training needs at least 2 patients");
    int events = 0;
    for (const auto* p : train) events += p->event;
    if (events == 0) throw TrainError("training cohort has zero events; Cox loss undefined");

    AdamOptimizer opt(pipeline.params(), config.train_lr);
    const LossWeights weights{config.survival_alpha, config.survival_beta};
    Rng rng(mix64(config.train_seed ^ 0x7261696e));

    const auto used = union_modalities(config.schemes);
    const Scheme sel = selection_scheme(config);

    TrainResult result;
    std::vector<Tensor> best_snapshot;
    double best_val = -1.0;

    std::vector<int> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[static_cast<int>(i)] = static_cast<int>(i);

    for (int epoch = 1; epoch <= config.train_epochs; ++epoch) {
        rng.shuffle(order);
        Rng dropout_rng = rng.derive(static_cast<std::uint64_t>(epoch) * 3 + 1);

        EpochTrace row;
        row.epoch = epoch;
        int batches = 0;

        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.train_batch)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.train_batch));
            const int bsize = static_cast<int>(end - start);
            opt.zero_grad();

            // Tower passes for every patient/modality in the batch.
            std::vector<ag::Var> mer_terms, cmae_terms;
            std::vector<std::array<std::optional<ag::Var>, kModalityCount>> tokens(
                static_cast<std::size_t>(bsize));
            for (int b = 0; b < bsize; ++b) {
                const int pi = order[start + static_cast<std::size_t>(b)];
                const PatientRecord& patient = *train[static_cast<std::size_t>(pi)];
                for (int mi = 0; mi < kModalityCount; ++mi) {
                    if (!used[static_cast<std::size_t>(mi)]) continue;
                    const Modality m = static_cast<Modality>(mi);
                    if (!patient.has(m)) continue;
                    const std::uint64_t step_seed =
                        mix64(config.train_seed + 0x9e37 * static_cast<std::uint64_t>(epoch)) ^
                        mix64((static_cast<std::uint64_t>(pi) << 8) | static_cast<std::uint64_t>(mi));
                    auto tower = pipeline.tower_forward(m, patient.graph(m), true, step_seed);
                    mer_terms.push_back(tower.i_mer);
                    cmae_terms.push_back(tower.i_cmae);
                    tokens[static_cast<std::size_t>(b)][mi] = tower.token;
                }
            }

            const double inv_b = 1.0 / static_cast<double>(bsize);
            ag::Var i_mer = ag::affine_sum(mer_terms, std::vector<double>(mer_terms.size(), inv_b));
            ag::Var i_cmae = ag::affine_sum(cmae_terms, std::vector<double>(cmae_terms.size(), inv_b));

            // Per-scheme Cox losses over the batch's risk sets, then folded
            // into one term per modality for the trace.
            std::array<std::vector<ag::Var>, kModalityCount> cox_by_modality;
            for (const auto& scheme : config.schemes) {
                std::vector<int> eligible;
                for (int b = 0; b < bsize; ++b) {
                    bool ok = true;
                    for (Modality m : scheme.modalities()) {
                        if (!tokens[static_cast<std::size_t>(b)][static_cast<int>(m)]) ok = false;
                    }
                    if (ok) eligible.push_back(b);
                }
                if (eligible.empty()) continue;

                std::vector<SurvivalLabel> labels;
                std::vector<std::vector<ag::Var>> scheme_scores_per_patient;
                for (int b : eligible) {
                    const int pi = order[start + static_cast<std::size_t>(b)];
                    const PatientRecord& patient = *train[static_cast<std::size_t>(pi)];
                    labels.push_back({patient.time, patient.event});
                    std::vector<std::pair<Modality, ag::Var>> toks;
                    for (Modality m : scheme.modalities()) {
                        toks.emplace_back(m, *tokens[static_cast<std::size_t>(b)][static_cast<int>(m)]);
                    }
                    scheme_scores_per_patient.push_back(
                        pipeline.scheme_scores(scheme, toks, config.train_dropout, true, dropout_rng));
                }
                const auto mods = scheme.modalities();
                for (std::size_t k = 0; k < mods.size(); ++k) {
                    std::vector<ag::Var> column;
                    for (auto& ss : scheme_scores_per_patient) column.push_back(ss[k]);
                    ag::Var cox = cox_loss(ag::stack_scalars(column), labels);
                    cox_by_modality[static_cast<int>(mods[k])].push_back(cox);
                }
            }

            std::vector<ag::Var> comps = {i_mer, i_cmae};
            std::vector<double> coeffs = {1.0, weights.alpha};
            std::array<double, kModalityCount> cox_values = {0.0, 0.0, 0.0};
            for (int mi = 0; mi < kModalityCount; ++mi) {
                if (cox_by_modality[mi].empty()) continue;
                ag::Var combined = ag::affine_sum(cox_by_modality[mi],
                                                  std::vector<double>(cox_by_modality[mi].size(), 1.0));
                cox_values[static_cast<std::size_t>(mi)] = combined->value.scalar_value();
                comps.push_back(combined);
                coeffs.push_back(weights.beta);
            }
            ag::Var total = ag::affine_sum(comps, coeffs);

            ag::backward(total);
            opt.step();

            row.i_mer += i_mer->value.scalar_value();
            row.i_cmae += i_cmae->value.scalar_value();
            for (int mi = 0; mi < kModalityCount; ++mi) {
                row.i_cox[static_cast<std::size_t>(mi)] += cox_values[static_cast<std::size_t>(mi)];
            }
            row.i_total += total->value.scalar_value();
            ++batches;
        }

        if (batches > 0) {
            row.i_mer /= batches;
            row.i_cmae /= batches;
            for (auto& v : row.i_cox) v /= batches;
            row.i_total /= batches;
        }

        if (!val.empty()) {
            std::vector<double> risks;
            std::vector<SurvivalLabel> labels;
            for (const auto* p : val) {
                bool ok = true;
                for (Modality m : sel.modalities()) ok = ok && p->has(m);
                if (!ok) continue;
                risks.push_back(pipeline.predict(*p, sel).risk);
                labels.push_back({p->time, p->event});
            }
            row.val_c_index = risks.size() >= 2 ? concordance_index_or_nan(risks, labels) : -1.0;
            if (row.val_c_index >= 0.0 && row.val_c_index > best_val) {
                best_val = row.val_c_index;
                best_snapshot = pipeline.snapshot();
                result.best_epoch = epoch;
            }
        }

        result.trace.push_back(row);
    }

    if (!best_snapshot.empty()) pipeline.restore(best_snapshot);
    return result;
}

TrainResult train_pipeline(Pipeline& pipeline, const std::vector<PatientRecord>& cohort,
                           const Config& config) {
    std::vector<const PatientRecord*> train;
    train.reserve(cohort.size());
    for (const auto& p : cohort) train.push_back(&p);
    return train_pipeline(pipeline, train, {}, config);
}

}  // namespace hetsurv
