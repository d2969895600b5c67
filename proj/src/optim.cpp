#include "hetsurv/optim.hpp"

#include <cmath>

#include "hetsurv/errors.hpp"

namespace hetsurv {

AdamState::AdamState(const ag::Parameter& p, double lr)
    : first_moment(p.value().shape()), second_moment(p.value().shape()), lr(lr) {}

void adam_step(ag::Parameter& p, AdamState& s) {
    Tensor& value = p.value();
    const Tensor& grad = p.grad();
    if (!s.first_moment.same_shape(value)) {
        s.first_moment = Tensor(value.shape());
        s.second_moment = Tensor(value.shape());
    }
    s.step_count += 1;
    const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step_count));
    const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step_count));
    for (std::int64_t i = 0; i < value.size(); ++i) {
        const double g = grad[i];
        s.first_moment[i] = s.beta1 * s.first_moment[i] + (1.0 - s.beta1) * g;
        s.second_moment[i] = s.beta2 * s.second_moment[i] + (1.0 - s.beta2) * g * g;
        const double mhat = s.first_moment[i] / bc1;
        const double vhat = s.second_moment[i] / bc2;
        value[i] -= s.lr * mhat / (std::sqrt(vhat) + s.eps);
    }
}

AdamOptimizer::AdamOptimizer(std::vector<ag::Parameter> params, double lr) : params_(std::move(params)) {
    states_.reserve(params_.size());
    for (const auto& p : params_) states_.emplace_back(p, lr);
}

void AdamOptimizer::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

void AdamOptimizer::step() {
    for (std::size_t i = 0; i < params_.size(); ++i) adam_step(params_[i], states_[i]);
}

void AdamOptimizer::set_lr(double lr) {
    for (auto& s : states_) s.lr = lr;
}

double grad_check(const std::function<ag::Var()>& loss_fn, std::vector<ag::Parameter> params, double h,
                  int max_coords_per_param, Rng* coord_rng) {
    for (auto& p : params) p.zero_grad();
    ag::Var loss = loss_fn();
    if (!std::isfinite(loss->value.scalar_value())) {
        throw NumericError("grad_check: non-finite loss");
    }
    ag::backward(loss);

    const auto eval = [&]() {
        ag::NoGradGuard guard;
        const double v = loss_fn()->value.scalar_value();
        if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss during probing");
        return v;
    };

    double max_rel = 0.0;
    for (auto& p : params) {
        const std::int64_t n = p.value().size();
        std::vector<std::int64_t> coords;
        if (max_coords_per_param > 0 && n > max_coords_per_param && coord_rng != nullptr) {
            for (int i = 0; i < max_coords_per_param; ++i) {
                coords.push_back(coord_rng->uniform_int(static_cast<int>(n)));
            }
        } else {
            coords.resize(static_cast<std::size_t>(n));
            for (std::int64_t i = 0; i < n; ++i) coords[static_cast<std::size_t>(i)] = i;
        }
        for (std::int64_t idx : coords) {
            const double saved = p.value()[idx];
            p.value()[idx] = saved + h;
            const double up = eval();
            p.value()[idx] = saved - h;
            const double down = eval();
            p.value()[idx] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double analytic = p.grad()[idx];
            const double denom = std::max({1e-4, std::fabs(numeric), std::fabs(analytic)});
            max_rel = std::max(max_rel, std::fabs(numeric - analytic) / denom);
        }
    }
    return max_rel;
}

Tensor glorot_init(int fan_in, int fan_out, std::vector<int> shape, Rng& rng, double gain) {
    Tensor t(std::move(shape));
    const double stddev = gain * std::sqrt(2.0 / (fan_in + fan_out));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, stddev);
    return t;
}

}  // namespace hetsurv
