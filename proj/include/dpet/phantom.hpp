// phantom.hpp - ground-truth phantom generation and image-domain noise.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dpet/frames.hpp"
#include "dpet/image.hpp"
#include "dpet/input_function.hpp"
#include "dpet/kinetics.hpp"

namespace dpet {

struct PhantomRegion {
    int id = 0;
    std::vector<int> voxels;  // lattice indices
    KineticParams params;     // ignored when is_noise
    bool is_noise = false;
};

// Regions must partition the lattice exactly; at most one region is the
// zero-activity noise background.
struct PhantomSpec {
    int nx = 0, ny = 0;
    std::vector<PhantomRegion> regions;
    FrameScheme frames;
    InputFunction input;

    void validate() const;

    // JSON document with dims and regions; regions may be rectangles
    // ("rect": [x0, y0, width, height]) or explicit voxel lists
    // ("voxels": [[x, y], ...]), each with either {"K1", "k2"} or
    // "noise": true. Frames and input are attached by the caller.
    static PhantomSpec from_json_file(const std::string& path, FrameScheme frames,
                                      InputFunction input);
    static PhantomSpec from_json_text(const std::string& text, FrameScheme frames,
                                      InputFunction input);
    std::string to_json_text() const;
};

enum class NoiseKind { GaussianHetero, ScaledPoisson };

struct NoiseModel {
    NoiseKind kind = NoiseKind::GaussianHetero;
    double level = 0.0;
    std::uint64_t seed = 0;
};

NoiseKind noise_kind_from_string(const std::string& s);
std::string to_string(NoiseKind k);

// Scaled-Poisson at this level gives roughly 6-16 counts per voxel-frame on
// the late frames of the default phantom's normal region; used as the default
// by the CLI and the replicate studies.
inline NoiseModel default_noise(std::uint64_t seed) {
    return NoiseModel{NoiseKind::ScaledPoisson, 0.014, seed};
}

// Renders the noise-free dynamic image: every voxel carries the exact
// frame-averaged TAC of its region; noise-region voxels are zero. Truth is
// attached to the result.
DynamicImage render_noise_free(const PhantomSpec& spec);

// Adds reproducible image-domain noise. Per-voxel generator substreams make
// the output independent of thread count.
//   GaussianHetero: y <- max(0, y + e), e ~ N(0, (level * mean_t / sqrt(dt_t))^2)
//                   with mean_t the frame mean over non-noise voxels.
//   ScaledPoisson:  y <- Poisson(y * dt_t / level) * level / dt_t
//                   (level is activity per count; must be > 0).
DynamicImage add_noise(const DynamicImage& img, const NoiseModel& noise, const FrameScheme& frames,
                       int threads = 0);

// Built-in 32x32 three-region phantom (normal / abnormal / noise background)
// on the default cardiac frames and bolus input; used throughout the tests.
PhantomSpec default_phantom();

}  // namespace dpet
