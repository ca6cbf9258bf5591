#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dpet/frames.hpp"
#include "dpet/image.hpp"
#include "dpet/input_function.hpp"
#include "dpet/kinetics.hpp"

namespace dpet {

enum class FitStatus { CONVERGED, MAX_ITER, AT_BOUND, FAILED };

const char* to_string(FitStatus s);
FitStatus fit_status_from_string(const std::string& s);

// Box bounds on the fitted parameters. Infinite limits are represented by the
// finite cap 1e3 so proposal/step arithmetic stays finite.
struct FitBounds {
    double k1_lo = 0.0;
    double k1_hi = 1e3;
    double k2_lo = 0.0;
    double k2_hi = 5.0;
    double f_lo = 0.0;
    double f_hi = 1.0;

    void validate() const;
};

struct FitConfig {
    std::vector<double> weights;  // length T; empty means unit weights
    FitBounds bounds;
    KineticParams init{0.5, 0.1};
    bool spillover = false;
    SpilloverFractions init_fractions{0.05, 0.05};
    std::optional<SpilloverInputs> spill;  // required when spillover
    int max_iter = 200;
    double grad_tol = 1e-8;
    double step_tol = 1e-10;
    double damping_init = 1e-3;
    double damping_up = 10.0;
    double damping_down = 0.5;
    bool record_trace = false;  // keep per-iteration objective values

    void validate(int T) const;
};

struct VoxelFit {
    KineticParams params{0.0, 0.0};
    SpilloverFractions fractions{0.0, 0.0};
    double wrss = 0.0;
    int iterations = 0;
    FitStatus status = FitStatus::FAILED;
    std::vector<double> wrss_trace;  // filled when cfg.record_trace
};

// w_t = (frame duration in seconds)^2 / counts_t; zero counts give zero weight.
std::vector<double> weights_from_counts(const FrameScheme& frames,
                                        const std::vector<double>& frame_counts);

VoxelFit lm_fit_voxel(const std::vector<double>& y, const InputFunction& input,
                      const FrameScheme& frames, const FitConfig& cfg);

// Independent per-voxel fits in raster order; per-voxel failures are reported
// through FitStatus::FAILED instead of aborting the image.
std::vector<VoxelFit> fit_image(const DynamicImage& img, const InputFunction& input,
                                const FrameScheme& frames, const FitConfig& cfg,
                                int threads = 0);

// Parametric-map CSV: x,y,K1,k2[,f_lv,f_rv],wrss,status
void write_fit_csv(const std::string& path, int nx, int ny,
                   const std::vector<VoxelFit>& fits, bool spillover = false);
std::vector<VoxelFit> read_fit_csv(const std::string& path, int& nx, int& ny);

}  // namespace dpet
