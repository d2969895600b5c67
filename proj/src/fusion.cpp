#include "hetsurv/fusion.hpp"

#include <algorithm>

#include "hetsurv/errors.hpp"

namespace hetsurv {

FusionModel::FusionModel(const std::string& name, int m, int c, Rng& rng) : name_(name), m_(m), c_(c) {
    if (m < 1 || c < 1) throw ConfigError("fusion model needs at least one modality and channel");
    const int hm = std::max(4, 2 * m);
    const int hc = std::max(4, 2 * c);
    ln1_gamma_ = ag::Parameter(name + ".ln1_g", Tensor({c}, 1.0));
    ln1_beta_ = ag::Parameter(name + ".ln1_b", Tensor({c}));
    mlp2_w1_ = ag::Parameter(name + ".mlp2_w1", glorot_init(m, hm, {m, hm}, rng));
    mlp2_b1_ = ag::Parameter(name + ".mlp2_b1", Tensor({hm}));
    mlp2_w2_ = ag::Parameter(name + ".mlp2_w2", glorot_init(hm, m, {hm, m}, rng));
    mlp2_b2_ = ag::Parameter(name + ".mlp2_b2", Tensor({m}));
    mlp2_slope_ = ag::Parameter(name + ".mlp2_slope", Tensor::scalar(0.25));
    ln2_gamma_ = ag::Parameter(name + ".ln2_g", Tensor({m}, 1.0));
    ln2_beta_ = ag::Parameter(name + ".ln2_b", Tensor({m}));
    mlp3_w1_ = ag::Parameter(name + ".mlp3_w1", glorot_init(c, hc, {c, hc}, rng));
    mlp3_b1_ = ag::Parameter(name + ".mlp3_b1", Tensor({hc}));
    mlp3_w2_ = ag::Parameter(name + ".mlp3_w2", glorot_init(hc, c, {hc, c}, rng));
    mlp3_b2_ = ag::Parameter(name + ".mlp3_b2", Tensor({c}));
    mlp3_slope_ = ag::Parameter(name + ".mlp3_slope", Tensor::scalar(0.25));
}

ag::Var FusionModel::mlp(const ag::Var& x, const ag::Parameter& w1, const ag::Parameter& b1,
                         const ag::Parameter& w2, const ag::Parameter& b2,
                         const ag::Parameter& slope) const {
    ag::Var h = ag::prelu(ag::dense_forward(x, w1.node(), b1.node()), slope.node());
    return ag::dense_forward(h, w2.node(), b2.node());
}

ag::Var FusionModel::cross_fuse(const ag::Var& tokens) const {
    if (tokens->value.rank() != 2 || tokens->value.dim(0) != m_ || tokens->value.dim(1) != c_) {
        throw DimensionError("cross_fuse: expected " + std::to_string(m_) + "x" + std::to_string(c_) +
                             " tokens, got " + tokens->value.shape_str());
    }
    // Step 1 (token mixing, per channel): U = H^T + MLP2(LN(H)^T), U is C x M.
    ag::Var ln1 = ag::layer_norm(tokens, ln1_gamma_.node(), ln1_beta_.node());
    ag::Var u = ag::add(ag::transpose(tokens),
                        mlp(ag::transpose(ln1), mlp2_w1_, mlp2_b1_, mlp2_w2_, mlp2_b2_, mlp2_slope_));
    // Step 2 (channel mixing, per modality): H_inter = U^T + MLP3(LN(U)^T).
    ag::Var ln2 = ag::layer_norm(u, ln2_gamma_.node(), ln2_beta_.node());
    return ag::add(ag::transpose(u),
                   mlp(ag::transpose(ln2), mlp3_w1_, mlp3_b1_, mlp3_w2_, mlp3_b2_, mlp3_slope_));
}

std::vector<ag::Parameter> FusionModel::params() const {
    return {ln1_gamma_, ln1_beta_, mlp2_w1_, mlp2_b1_, mlp2_w2_, mlp2_b2_, mlp2_slope_,
            ln2_gamma_, ln2_beta_, mlp3_w1_, mlp3_b1_, mlp3_w2_, mlp3_b2_, mlp3_slope_};
}

void FusionModel::zero_all() {
    for (auto& p : params()) p.value().fill(0.0);
}

ag::Var skip_connect(const ag::Var& h, const ag::Var& h_inter) {
    require_same_shape(h->value, h_inter->value, "skip_connect");
    return ag::add(h, h_inter);
}

}  // namespace hetsurv
