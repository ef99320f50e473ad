#pragma once

#include "seslr/tensor.hpp"

namespace seslr {

/// Leaky integrate-and-fire constants. The resting potential is fixed at 0
/// and the discrete update uses one Euler step of size dt.
struct LIFConfig {
    double tau = 2.0;
    double dt = 1.0;
    double v_th = 1.0;
    double v_rest = 0.0;
    double surrogate_alpha = 2.0;  ///< sharpness of the spike surrogate

    double leak() const { return dt / tau; }
    void validate() const;
};

/// Per-neuron membrane potentials and previous-step spike outputs.
struct LIFState {
    Tensor u;
    SpikeTensor o_prev;

    static LIFState zeros(const Shape& shape);
};

struct LIFStepResult {
    SpikeTensor spikes;
    LIFState next;
};

/// One membrane update: the decay factor is 0 for neurons that spiked on
/// the previous step and (1 - dt/tau) otherwise, u_new = decay * u +
/// (dt/tau) * input, a spike fires when u_new >= v_th, and the stored
/// potential hard-resets to v_rest on spike.
LIFStepResult lif_step(const LIFState& state, const Tensor& input, const LIFConfig& cfg);

/// Derivative of the smooth spike surrogate at membrane potential u:
/// a Cauchy bump centered on v_th, symmetric, maximal at v_th, and with
/// unit integral over the real line.
double surrogate_spike_grad(double u, const LIFConfig& cfg);

/// Smooth antiderivative of surrogate_spike_grad — the "soft" spike used
/// by gradient checking in place of the Heaviside step.
double soft_spike(double u, const LIFConfig& cfg);

}  // namespace seslr
