#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dpet/frames.hpp"
#include "dpet/image.hpp"
#include "dpet/input_function.hpp"
#include "dpet/kinetics.hpp"
#include "dpet/scf.hpp"

namespace dpet {

// Spatially regularized K-means: alternate (a) LM fits of each cluster-mean
// TAC for kinetic parameters, (b) raster reassignment minimizing
// ||y_i - C(k_g)||^2 - beta * #{8-neighbors with label g}. Agreement is
// rewarded (penalty subtracted), consistent with beta acting as a spatial
// regularizer.
struct SkmsConfig {
    int G = 2;
    double beta = 0.2;
    int max_iter = 100;
    double conv_tol = 1e-6;  // on max change of fitted cluster TACs
    std::uint64_t seed = 0;
    FitConfig fit;        // cluster-mean LM settings; unit weights keep the
                          // alternating objective exactly non-increasing
    bool spatial = true;  // false drops the neighbor term entirely

    void validate() const;
};

struct SkmsResult {
    std::vector<int> labels;  // 1..G
    std::vector<KineticParams> cluster_params;
    std::vector<std::vector<double>> cluster_tacs;  // fitted model TACs, G x T
    std::vector<double> objective;                  // end-of-iteration values
    int iterations = 0;
    bool converged = false;
    int reseeds = 0;
};

// Combined objective: sum_i ||y_i - C_{z_i}||^2 - beta * #{agreeing edges}.
double skms_objective(const DynamicImage& img, const std::vector<int>& labels,
                      const std::vector<std::vector<double>>& cluster_tacs, double beta,
                      bool spatial = true);

// Full algorithm with k-means++ initialization on TAC vectors.
SkmsResult skms_fit(const DynamicImage& img, const InputFunction& input,
                    const FrameScheme& frames, const SkmsConfig& cfg);

// Same loop from caller-provided initial cluster-mean TACs (one per cluster).
SkmsResult skms_fit_from(const DynamicImage& img, const InputFunction& input,
                         const FrameScheme& frames, const SkmsConfig& cfg,
                         const std::vector<std::vector<double>>& init_means);

// Labels CSV: x,y,cluster_id
void write_labels_csv(const std::string& path, int nx, int ny, const std::vector<int>& labels);
std::vector<int> read_labels_csv(const std::string& path, int& nx, int& ny);

}  // namespace dpet
