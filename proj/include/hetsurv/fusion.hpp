#pragma once

#include <string>
#include <vector>

#include "hetsurv/ops.hpp"
#include "hetsurv/optim.hpp"

namespace hetsurv {

// Cross-modal feature interaction over M pooled modality tokens [M x C]:
// a token-mixing MLP along the modality axis, then a channel-mixing MLP,
// each in the normalize -> transpose -> MLP -> add-to-transposed-input form.
// Token-mixing width depends on M, so one instance exists per scheme.
class FusionModel {
  public:
    FusionModel() = default;
    FusionModel(const std::string& name, int modalities, int channels, Rng& rng);

    int modalities() const { return m_; }
    int channels() const { return c_; }

    // H_inter per the two mixing steps; output shape M x C.
    ag::Var cross_fuse(const ag::Var& tokens) const;

    std::vector<ag::Parameter> params() const;

    // Test hook: zero every weight (identity behavior through the residuals).
    void zero_all();

  private:
    ag::Var mlp(const ag::Var& x, const ag::Parameter& w1, const ag::Parameter& b1,
                const ag::Parameter& w2, const ag::Parameter& b2, const ag::Parameter& slope) const;

    std::string name_;
    int m_ = 0, c_ = 0;
    ag::Parameter ln1_gamma_, ln1_beta_;  // [C]
    ag::Parameter mlp2_w1_, mlp2_b1_, mlp2_w2_, mlp2_b2_, mlp2_slope_;  // M -> hidden -> M
    ag::Parameter ln2_gamma_, ln2_beta_;  // [M]
    ag::Parameter mlp3_w1_, mlp3_b1_, mlp3_w2_, mlp3_b2_, mlp3_slope_;  // C -> hidden -> C
};

// Eq-10 skip connection: elementwise sum of same-shaped maps.
ag::Var skip_connect(const ag::Var& h, const ag::Var& h_inter);

}  // namespace hetsurv
