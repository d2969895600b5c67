#include "hetsurv/cmae.hpp"

#include "hetsurv/errors.hpp"

namespace hetsurv {

int GridMask::visible_count() const {
    int n = 0;
    for (auto v : visible) n += v ? 1 : 0;
    return n;
}

GridMask all_visible_mask(int h, int w) {
    GridMask m;
    m.visible.assign(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), 1);
    return m;
}

GridMask mask_grid(int h, int w, double ratio, std::uint64_t seed) {
    if (ratio < 0.0 || ratio >= 1.0) {
        throw ConfigError("mask ratio must lie in [0, 1), got " + std::to_string(ratio));
    }
    GridMask m;
    m.ratio = ratio;
    m.seed = seed;
    m.visible.assign(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), 1);
    Rng rng(seed);
    bool any = false;
    for (auto& v : m.visible) {
        v = rng.uniform() < ratio ? 0 : 1;
        any = any || v;
    }
    if (!any) m.visible[0] = 1;
    return m;
}

FeatureGrid grid_from_embedding(const Tensor& h_nodes, GridLayout layout, int h, int w) {
    if (h_nodes.rank() != 2) {
        throw DimensionError("grid_from_embedding expects [N x c] embeddings, got " + h_nodes.shape_str());
    }
    const int n = h_nodes.dim(0), c = h_nodes.dim(1);
    FeatureGrid g;
    g.layout = layout;
    if (layout == GridLayout::PathologyGrid) {
        if (h * w != n) {
            throw DimensionError("pathology layout " + std::to_string(h) + "x" + std::to_string(w) +
                                 " does not match " + std::to_string(n) + " nodes");
        }
        g.data = Tensor({h, w, c}, h_nodes.values());
    } else {
        g.data = Tensor({1, n, c}, h_nodes.values());
    }
    return g;
}

ag::Var grid_from_embedding_var(const ag::Var& h_nodes, GridLayout layout, int h, int w) {
    const int n = h_nodes->value.dim(0), c = h_nodes->value.dim(1);
    if (layout == GridLayout::PathologyGrid) {
        if (h * w != n) {
            throw DimensionError("pathology layout " + std::to_string(h) + "x" + std::to_string(w) +
                                 " does not match " + std::to_string(n) + " nodes");
        }
        return ag::reshape(h_nodes, {h, w, c});
    }
    return ag::reshape(h_nodes, {1, n, c});
}

CmaeBlock::CmaeBlock(const std::string& name, int c, Rng& rng) {
    const int e = 4 * c;
    dw_kernel = ag::Parameter(name + ".dw_k", glorot_init(9, 1, {3, 3, c}, rng));
    dw_bias = ag::Parameter(name + ".dw_b", Tensor({c}));
    ln_gamma = ag::Parameter(name + ".ln_g", Tensor({c}, 1.0));
    ln_beta = ag::Parameter(name + ".ln_b", Tensor({c}));
    expand_w = ag::Parameter(name + ".up_w", glorot_init(c, e, {c, e}, rng));
    expand_b = ag::Parameter(name + ".up_b", Tensor({e}));
    slope = ag::Parameter(name + ".slope", Tensor::scalar(0.25));
    // gamma = 0 makes GRN start as identity in the standard form.
    grn_gamma = ag::Parameter(name + ".grn_g", Tensor({e}));
    grn_beta = ag::Parameter(name + ".grn_b", Tensor({e}));
    contract_w = ag::Parameter(name + ".dn_w", glorot_init(e, c, {e, c}, rng, 0.1));
    contract_b = ag::Parameter(name + ".dn_b", Tensor({c}));
}

std::vector<ag::Parameter> CmaeBlock::params() const {
    return {dw_kernel, dw_bias, ln_gamma,   ln_beta,   expand_w,  expand_b,
            slope,     grn_gamma, grn_beta, contract_w, contract_b};
}

ag::Var cmae_block_forward(const CmaeBlock& block, const ag::Var& x,
                           const std::vector<std::uint8_t>& visible, bool grn_literal) {
    const int h = x->value.dim(0), w = x->value.dim(1);
    ag::Var y = ag::sparse_dwconv3x3(x, visible, block.dw_kernel.node(), block.dw_bias.node());
    // Pointwise stages run on gathered visible rows so masked cells never see
    // the biases and stay exactly zero.
    ag::Var rows = ag::gather_visible(y, visible);
    rows = ag::layer_norm(rows, block.ln_gamma.node(), block.ln_beta.node());
    rows = ag::dense_forward(rows, block.expand_w.node(), block.expand_b.node());
    rows = ag::prelu(rows, block.slope.node());
    ag::Var og = ag::grn_aggregate(rows);
    ag::Var n = ag::grn_normalize(og);
    rows = ag::grn_calibrate(rows, n, block.grn_gamma.node(), block.grn_beta.node(), grn_literal);
    rows = ag::dense_forward(rows, block.contract_w.node(), block.contract_b.node());
    ag::Var branch = ag::scatter_visible(rows, visible, h, w);
    return ag::add(x, branch);
}

CMAEModel::CMAEModel(const std::string& name, int channels, int depth_multiplier, bool grn_literal,
                     Rng& rng)
    : name_(name), channels_(channels), grn_literal_(grn_literal) {
    if (depth_multiplier < 1) throw ConfigError("cmae.depth must be >= 1");
    const int stage_ratio[4] = {1, 1, 3, 1};
    int idx = 0;
    for (int stage = 0; stage < 4; ++stage) {
        for (int b = 0; b < stage_ratio[stage] * depth_multiplier; ++b) {
            encoder_.emplace_back(name + ".enc" + std::to_string(idx++), channels, rng);
        }
    }
    decoder_ = CmaeBlock(name + ".dec0", channels, rng);
    mask_token_ = ag::Parameter(name + ".mask_token", Tensor({channels}));
}

CmaeForwardResult CMAEModel::forward(const ag::Var& grid, const GridMask& mask) const {
    if (grid->value.dim(2) != channels_) {
        throw DimensionError("cmae: grid channels " + std::to_string(grid->value.dim(2)) +
                             " do not match model channels " + std::to_string(channels_));
    }
    const int h = grid->value.dim(0), w = grid->value.dim(1);

    // Zero out masked cells up front so the residual path cannot leak them.
    ag::Var x = ag::scatter_visible(ag::gather_visible(grid, mask.visible), mask.visible, h, w);
    for (const auto& block : encoder_) {
        x = cmae_block_forward(block, x, mask.visible, grn_literal_);
    }

    CmaeForwardResult out;
    out.latent = x;
    ag::Var filled = ag::fill_masked(x, mask.visible, mask_token_.node());
    const GridMask dense = all_visible_mask(h, w);
    out.reconstruction = cmae_block_forward(decoder_, filled, dense.visible, grn_literal_);
    return out;
}

std::vector<ag::Parameter> CMAEModel::params() const {
    std::vector<ag::Parameter> out;
    for (const auto& b : encoder_) {
        auto bp = b.params();
        out.insert(out.end(), bp.begin(), bp.end());
    }
    auto dp = decoder_.params();
    out.insert(out.end(), dp.begin(), dp.end());
    out.push_back(mask_token_);
    return out;
}

ag::Var cmae_loss(const ag::Var& reconstruction, const ag::Var& original, const GridMask& mask) {
    return ag::masked_mse(reconstruction, original, mask.visible);
}

ag::Var pool_modality(const ag::Var& latent, const GridMask& mask) {
    return ag::col_mean(ag::gather_visible(latent, mask.visible));
}

}  // namespace hetsurv
