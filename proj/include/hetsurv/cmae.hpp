#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hetsurv/ops.hpp"
#include "hetsurv/optim.hpp"

namespace hetsurv {

enum class GridLayout { PathologyGrid, Sequence };

// Gridded modality embedding [h x w x c]. Pathology embeddings keep their
// patch-grid layout; gene/clinical sequences become a 1 x N grid.
struct FeatureGrid {
    Tensor data;
    GridLayout layout = GridLayout::Sequence;

    int h() const { return data.dim(0); }
    int w() const { return data.dim(1); }
    int c() const { return data.dim(2); }
};

// Cell-level visibility; zeros are masked. Invariant: at least one visible.
struct GridMask {
    std::vector<std::uint8_t> visible;  // h*w entries
    double ratio = 0.0;
    std::uint64_t seed = 0;

    int visible_count() const;
};

GridMask all_visible_mask(int h, int w);

// Cells masked i.i.d. with probability ratio; if the draw masks everything,
// the lowest-index cell is forced visible.
GridMask mask_grid(int h, int w, double ratio, std::uint64_t seed);

FeatureGrid grid_from_embedding(const Tensor& h_nodes, GridLayout layout, int h, int w);
// Var-level reshape used inside the pipeline; pathology requires N == h*w.
ag::Var grid_from_embedding_var(const ag::Var& h_nodes, GridLayout layout, int h, int w);

// One ConvNeXt-style block: depthwise 3x3 sparse conv, LayerNorm, 4x pointwise
// expansion, PReLU, GRN, pointwise contraction, residual. All normalization
// statistics are computed over visible cells only and masked cells stay zero.
struct CmaeBlock {
    ag::Parameter dw_kernel;   // [3 x 3 x c]
    ag::Parameter dw_bias;     // [c]
    ag::Parameter ln_gamma, ln_beta;    // [c]
    ag::Parameter expand_w, expand_b;   // [c x 4c], [4c]
    ag::Parameter slope;                // PReLU
    ag::Parameter grn_gamma, grn_beta;  // [4c]
    ag::Parameter contract_w, contract_b;  // [4c x c], [c]

    CmaeBlock() = default;
    CmaeBlock(const std::string& name, int channels, Rng& rng);
    std::vector<ag::Parameter> params() const;
};

ag::Var cmae_block_forward(const CmaeBlock& block, const ag::Var& x,
                           const std::vector<std::uint8_t>& visible, bool grn_literal);

struct CmaeForwardResult {
    ag::Var reconstruction;  // full grid, decoder output
    ag::Var latent;          // encoder output; masked cells exactly zero
};

// Encoder stages in the 1:1:3:1 ratio scaled by a depth multiplier, running
// submanifold-sparse over visible cells; masked cells are then filled with a
// learned token and a single dense block decodes the full grid.
class CMAEModel {
  public:
    CMAEModel() = default;
    CMAEModel(const std::string& name, int channels, int depth_multiplier, bool grn_literal, Rng& rng);

    int channels() const { return channels_; }
    int encoder_blocks() const { return static_cast<int>(encoder_.size()); }
    bool grn_literal() const { return grn_literal_; }

    CmaeForwardResult forward(const ag::Var& grid, const GridMask& mask) const;
    std::vector<ag::Parameter> params() const;

  private:
    std::string name_;
    int channels_ = 0;
    bool grn_literal_ = false;
    std::vector<CmaeBlock> encoder_;
    CmaeBlock decoder_;
    ag::Parameter mask_token_;  // [c]
};

// Mean squared error over masked cells; zero when everything is visible.
ag::Var cmae_loss(const ag::Var& reconstruction, const ag::Var& original, const GridMask& mask);

// Visible-mean pooling to one token per modality ([c]).
ag::Var pool_modality(const ag::Var& latent, const GridMask& mask);

}  // namespace hetsurv
