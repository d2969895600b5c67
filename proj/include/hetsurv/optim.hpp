#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "hetsurv/autograd.hpp"
#include "hetsurv/rng.hpp"

namespace hetsurv {

// Bias-corrected Adam moments for one parameter.
struct AdamState {
    Tensor first_moment;
    Tensor second_moment;
    std::int64_t step_count = 0;
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    AdamState() = default;
    AdamState(const ag::Parameter& p, double lr);
};

// One Adam update from the parameter's accumulated gradient.
void adam_step(ag::Parameter& p, AdamState& s);

// Adam over a whole parameter set; keeps states aligned by index.
class AdamOptimizer {
  public:
    AdamOptimizer(std::vector<ag::Parameter> params, double lr);
    void zero_grad();
    void step();
    void set_lr(double lr);
    const std::vector<ag::Parameter>& params() const { return params_; }

  private:
    std::vector<ag::Parameter> params_;
    std::vector<AdamState> states_;
};

// Central-difference verification of analytic gradients. The loss must be a
// deterministic function of the parameter values (fix all rng seeds inside).
// Returns the max relative error over up to max_coords_per_param sampled
// coordinates per parameter; the denominator is floored at 1e-4 so that
// near-zero gradient pairs compare absolutely.
double grad_check(const std::function<ag::Var()>& loss_fn, std::vector<ag::Parameter> params,
                  double h = 1e-5, int max_coords_per_param = 0, Rng* coord_rng = nullptr);

// Initialization helpers; all randomness comes from the caller's stream.
Tensor glorot_init(int fan_in, int fan_out, std::vector<int> shape, Rng& rng, double gain = 1.0);

}  // namespace hetsurv
