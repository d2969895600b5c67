#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hetsurv/hetgraph.hpp"
#include "hetsurv/ops.hpp"
#include "hetsurv/optim.hpp"

namespace hetsurv {

// Symmetric binary edge mask drawn per undirected edge; only positions where
// the underlying adjacency is 1 are ever dropped.
struct EdgeMask {
    Tensor mask;  // N x N, entries in {0, 1}
    double rate = 0.0;
    std::uint64_t seed = 0;
};

// Each undirected edge survives with probability 1 - pe; both symmetric
// entries are dropped together. Returns (mask (x) a, mask).
std::pair<Tensor, EdgeMask> mask_edges(const Tensor& a, double pe, std::uint64_t seed);

// Graph-convolutional encoder/decoder stacks plus the semantic attention that
// weighs meta-paths. Encoder input dim D, all hidden dims D as well.
class FERModel {
  public:
    FERModel() = default;
    // layers = GCN layers per stack (encoder and decoder each), PReLU between.
    FERModel(const std::string& name, int input_dim, int layers, double tau, Rng& rng);

    int input_dim() const { return input_dim_; }
    int hidden_dim() const { return input_dim_; }
    double tau() const { return tau_; }

    // H1 = f_E(adj~, X): stacked GCN over the masked adjacency.
    ag::Var encode(const Tensor& masked_adj, const ag::Var& x) const;
    // H2 = f_D(adj~, H1) and A' = sigmoid(H2 H2^T).
    std::pair<ag::Var, ag::Var> reconstruct(const Tensor& masked_adj, const ag::Var& h1) const;
    // Softmax over per-path mean attention scores; latents keyed by path name.
    ag::Var semantic_weights(const std::vector<ag::Var>& latents) const;

    std::vector<ag::Parameter> params() const;

  private:
    ag::Var run_stack(const std::vector<ag::Parameter>& weights, const Tensor& adj_hat,
                      const ag::Var& x) const;

    std::string name_;
    int input_dim_ = 0;
    double tau_ = 2.0;
    std::vector<ag::Parameter> encoder_;
    std::vector<ag::Parameter> decoder_;
    ag::Parameter enc_slope_;
    ag::Parameter dec_slope_;
    ag::Parameter attn_w_;  // [D x Da]
    ag::Parameter attn_b_;  // [Da]
    ag::Parameter attn_q_;  // [Da]
};

// Per-meta-path intermediates of one forward pass; weights sum to 1.
struct MetaPathBatch {
    std::vector<std::string> path_names;
    std::vector<Tensor> originals;      // A^psi
    std::vector<Tensor> masked;         // A~^psi
    std::vector<ag::Var> latents;       // H1^psi
    std::vector<ag::Var> decoded;       // H2^psi
    std::vector<ag::Var> reconstructed; // A'^psi
    std::vector<ag::Var> losses;        // I^psi (0 for empty paths)
    ag::Var weights;                    // softmax over paths
    ag::Var loss;                       // I_MER
    ag::Var embedding;                  // weighted sum of latents, N x D
};

// I_MER = sum_psi weight^psi * I^psi; key sets must agree.
ag::Var fer_loss(const std::map<std::string, ag::Var>& losses,
                 const std::map<std::string, ag::Var>& weights);

// Full pass over one graph: mask each meta-path adjacency, encode/decode,
// reconstruct, score, blend. pe = 0 leaves every edge intact (inference).
// Meta-paths whose adjacency is empty contribute zero loss but still take
// part in the attention blend.
MetaPathBatch fer_forward(const FERModel& model, const HetGraph& graph,
                          const std::vector<MetaPath>& paths, double pe, std::uint64_t mask_seed);

// The module's forward output for the pipeline: attention-weighted latents.
ag::Var fer_embed(const FERModel& model, const HetGraph& graph, const std::vector<MetaPath>& paths);

}  // namespace hetsurv
