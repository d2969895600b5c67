#include "hetsurv/fer.hpp"

#include <cmath>

#include "hetsurv/errors.hpp"

namespace hetsurv {

std::pair<Tensor, EdgeMask> mask_edges(const Tensor& a, double pe, std::uint64_t seed) {
    if (pe < 0.0 || pe >= 1.0) {
        throw ConfigError("edge masking rate must satisfy 0 <= pe < 1, got " + std::to_string(pe));
    }
    if (a.rank() != 2 || a.dim(0) != a.dim(1)) {
        throw DimensionError("mask_edges expects a square adjacency, got " + a.shape_str());
    }
    const int n = a.dim(0);
    EdgeMask em;
    em.rate = pe;
    em.seed = seed;
    em.mask = Tensor({n, n}, 1.0);
    Rng rng(seed);
    Tensor masked = a;
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            if (a.at(i, j) == 0.0) continue;
            if (rng.uniform() < pe) {
                em.mask.at(i, j) = 0.0;
                em.mask.at(j, i) = 0.0;
                masked.at(i, j) = 0.0;
                masked.at(j, i) = 0.0;
            }
        }
    }
    return {std::move(masked), std::move(em)};
}

FERModel::FERModel(const std::string& name, int input_dim, int layers, double tau, Rng& rng)
    : name_(name), input_dim_(input_dim), tau_(tau) {
    if (layers < 1) throw ConfigError("fer.layers must be >= 1");
    if (tau <= 0.0) throw ConfigError("fer.tau must be positive");
    const int d = input_dim;
    for (int l = 0; l < layers; ++l) {
        encoder_.emplace_back(name + ".enc" + std::to_string(l), glorot_init(d, d, {d, d}, rng));
        decoder_.emplace_back(name + ".dec" + std::to_string(l), glorot_init(d, d, {d, d}, rng));
    }
    enc_slope_ = ag::Parameter(name + ".enc_slope", Tensor::scalar(0.25));
    dec_slope_ = ag::Parameter(name + ".dec_slope", Tensor::scalar(0.25));
    const int da = d;  // attention width follows the hidden dim
    attn_w_ = ag::Parameter(name + ".attn_w", glorot_init(d, da, {d, da}, rng));
    attn_b_ = ag::Parameter(name + ".attn_b", Tensor({da}));
    attn_q_ = ag::Parameter(name + ".attn_q", glorot_init(da, 1, {da, 1}, rng));
}

ag::Var FERModel::run_stack(const std::vector<ag::Parameter>& weights, const Tensor& adj_hat,
                            const ag::Var& x) const {
    ag::Var h = x;
    const ag::Parameter& slope = (&weights == &encoder_) ? enc_slope_ : dec_slope_;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        h = ag::gcn_forward_normalized(adj_hat, h, weights[l].node());
        if (l + 1 < weights.size()) h = ag::prelu(h, slope.node());
    }
    return h;
}

ag::Var FERModel::encode(const Tensor& masked_adj, const ag::Var& x) const {
    if (x->value.cols() != input_dim_) {
        throw DimensionError("fer_encode: feature width " + std::to_string(x->value.cols()) +
                             " does not match model input dim " + std::to_string(input_dim_));
    }
    return run_stack(encoder_, ag::gcn_normalize_adj(masked_adj), x);
}

std::pair<ag::Var, ag::Var> FERModel::reconstruct(const Tensor& masked_adj, const ag::Var& h1) const {
    ag::Var h2 = run_stack(decoder_, ag::gcn_normalize_adj(masked_adj), h1);
    // A'[i][j] = sigmoid(<row i, row j>), symmetric by construction.
    ag::Var a_prime = ag::sigmoid(ag::matmul(h2, ag::transpose(h2)));
    return {std::move(h2), std::move(a_prime)};
}

ag::Var FERModel::semantic_weights(const std::vector<ag::Var>& latents) const {
    if (latents.empty()) throw SchemaError("semantic_weights: need at least one meta-path");
    std::vector<ag::Var> scores;
    scores.reserve(latents.size());
    for (const auto& h : latents) {
        // mean over nodes of q^T tanh(W h + b)
        ag::Var proj = ag::vtanh(ag::add_rowvec(ag::matmul(h, attn_w_.node()), attn_b_.node()));
        scores.push_back(ag::mean_all(ag::matmul(proj, attn_q_.node())));
    }
    return ag::softmax_vec(ag::stack_scalars(scores));
}

std::vector<ag::Parameter> FERModel::params() const {
    std::vector<ag::Parameter> out;
    for (const auto& p : encoder_) out.push_back(p);
    for (const auto& p : decoder_) out.push_back(p);
    out.push_back(enc_slope_);
    out.push_back(dec_slope_);
    out.push_back(attn_w_);
    out.push_back(attn_b_);
    out.push_back(attn_q_);
    return out;
}

ag::Var fer_loss(const std::map<std::string, ag::Var>& losses,
                 const std::map<std::string, ag::Var>& weights) {
    if (losses.size() != weights.size()) {
        throw SchemaError("fer_loss: loss/weight key sets differ in size");
    }
    std::vector<ag::Var> ls, ws;
    for (const auto& [key, loss] : losses) {
        auto it = weights.find(key);
        if (it == weights.end()) throw SchemaError("fer_loss: no weight for meta-path " + key);
        ls.push_back(loss);
        ws.push_back(it->second);
    }
    ag::Var out = ag::dot_weighted(ag::stack_scalars(ws), ls);
    return out;
}

MetaPathBatch fer_forward(const FERModel& model, const HetGraph& graph,
                          const std::vector<MetaPath>& paths, double pe, std::uint64_t mask_seed) {
    if (paths.empty()) throw SchemaError("fer_forward: no meta-paths configured");
    MetaPathBatch batch;
    ag::Var x = ag::constant(graph.features);

    for (std::size_t k = 0; k < paths.size(); ++k) {
        Tensor a = metapath_adjacency(graph, paths[k]);
        auto [masked, em] = mask_edges(a, pe, mix64(mask_seed + k));
        bool empty = true;
        for (std::int64_t i = 0; i < a.size() && empty; ++i) empty = a[i] == 0.0;

        ag::Var h1 = model.encode(masked, x);
        auto [h2, a_prime] = model.reconstruct(masked, h1);
        // Empty meta-paths have no reconstructable edges; they stay in the
        // attention blend but contribute zero loss.
        ag::Var loss = empty ? ag::constant(Tensor::scalar(0.0)) : ag::sce_loss(a, a_prime, model.tau());

        batch.path_names.push_back(paths[k].name);
        batch.originals.push_back(std::move(a));
        batch.masked.push_back(std::move(masked));
        batch.latents.push_back(std::move(h1));
        batch.decoded.push_back(std::move(h2));
        batch.reconstructed.push_back(std::move(a_prime));
        batch.losses.push_back(std::move(loss));
    }

    batch.weights = model.semantic_weights(batch.latents);
    batch.loss = ag::dot_weighted(batch.weights, batch.losses);
    batch.embedding = ag::blend_rows(batch.weights, batch.latents);
    return batch;
}

ag::Var fer_embed(const FERModel& model, const HetGraph& graph, const std::vector<MetaPath>& paths) {
    return fer_forward(model, graph, paths, 0.0, 0).embedding;
}

}  // namespace hetsurv
