#include "seslr/lif.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace seslr {

void LIFConfig::validate() const {
    if (!(tau > 0.0)) throw std::invalid_argument("LIFConfig: tau must be positive");
    if (!(dt > 0.0)) throw std::invalid_argument("LIFConfig: dt must be positive");
    double k = dt / tau;
    if (!(k > 0.0 && k <= 1.0)) throw std::invalid_argument("LIFConfig: dt/tau must lie in (0, 1]");
    if (!(v_th > v_rest)) throw std::invalid_argument("LIFConfig: v_th must exceed v_rest");
    if (!(surrogate_alpha > 0.0)) throw std::invalid_argument("LIFConfig: surrogate_alpha must be positive");
}

LIFState LIFState::zeros(const Shape& shape) {
    LIFState s;
    s.u = Tensor(shape, 0.0);
    s.o_prev = SpikeTensor::zeros(shape);
    return s;
}

LIFStepResult lif_step(const LIFState& state, const Tensor& input, const LIFConfig& cfg) {
    cfg.validate();
    if (!state.u.same_shape(input))
        throw std::invalid_argument("lif_step: input shape " + shape_str(input.shape()) +
                                    " does not match state shape " + shape_str(state.u.shape()));
    if (!state.u.same_shape(state.o_prev.values()))
        throw std::invalid_argument("lif_step: state potentials and previous spikes disagree in shape");

    const double k = cfg.leak();
    const double decay = 1.0 - k;
    const size_t n = input.size();

    Tensor u_next(input.shape());
    Tensor spikes(input.shape());
    for (size_t i = 0; i < n; ++i) {
        double alpha = state.o_prev.bit(i) ? 0.0 : decay;
        double u_new = alpha * state.u[i] + k * input[i];
        bool fired = u_new >= cfg.v_th;
        spikes[i] = fired ? 1.0 : 0.0;
        u_next[i] = fired ? cfg.v_rest : u_new;
    }
    u_next.check_finite("lif_step");

    LIFStepResult out;
    out.spikes = SpikeTensor::from_binary_unchecked(spikes);
    out.next.u = std::move(u_next);
    out.next.o_prev = out.spikes;
    return out;
}

double surrogate_spike_grad(double u, const LIFConfig& cfg) {
    double a = cfg.surrogate_alpha;
    double x = u - cfg.v_th;
    return a / (std::numbers::pi * (1.0 + a * a * x * x));
}

double soft_spike(double u, const LIFConfig& cfg) {
    double a = cfg.surrogate_alpha;
    double x = u - cfg.v_th;
    return 0.5 + std::atan(a * x) / std::numbers::pi;
}

}  // namespace seslr
