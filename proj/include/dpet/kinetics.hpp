// kinetics.hpp - one-compartment kinetic model: convolution with the blood
// input curve, frame averaging, and blood-pool spill-over mixing.

#pragma once

#include <vector>

#include "dpet/frames.hpp"
#include "dpet/input_function.hpp"

namespace dpet {

// Uptake K1 (mL/min/cc) and washout k2 (1/min); both finite and >= 0.
struct KineticParams {
    double K1 = 0.0;
    double k2 = 0.0;
};

// Blood-pool contamination fractions; f_lv, f_rv in [0,1], f_lv + f_rv <= 1.
struct SpilloverFractions {
    double f_lv = 0.0;
    double f_rv = 0.0;
};

// Ventricular TACs driving the spill-over terms. The plasma input is the LV
// curve scaled by the plasma fraction.
struct SpilloverInputs {
    InputFunction c_lv;
    InputFunction c_rv;
    double plasma_fraction = 1.0;

    InputFunction plasma() const { return c_lv.scaled(plasma_fraction); }
};

void validate(const KineticParams& p);
void validate(const SpilloverFractions& f);

// Tissue concentration at time t (minutes, t >= 0):
//   K1 * integral_0^t Cp(s) exp(-k2 (t - s)) ds,
// evaluated by the exact per-segment closed form for the piecewise-linear
// input. No quadrature step size is involved.
double tissue_tac(const KineticParams& params, const InputFunction& input, double t);

// Frame-averaged tissue concentration, element t:
//   (1 / dt_t) * integral over frame t of tissue_tac,
// again via the exact per-segment closed form. If used_extrapolation is
// non-null it is set when any part of the frame span falls outside the
// sampled input range (hold-last / leading-zero rule applied).
std::vector<double> frame_averaged_tac(const KineticParams& params, const InputFunction& input,
                                       const FrameScheme& frames,
                                       bool* used_extrapolation = nullptr);

// Spill-over corrected frame TAC:
//   f_lv * <C_lv>_t + f_rv * <C_rv>_t + (1 - f_lv - f_rv) * tissue term,
// where <.>_t is the exact frame average of the sampled curve, so all three
// terms share the same per-frame discretization.
std::vector<double> spillover_frame_tac(const KineticParams& params, const SpilloverFractions& fracs,
                                        const SpilloverInputs& sp, const FrameScheme& frames,
                                        bool* used_extrapolation = nullptr);

// Frame average of a sampled curve (exact piecewise-linear integral / dt).
std::vector<double> frame_averaged_input(const InputFunction& input, const FrameScheme& frames);

}  // namespace dpet
