// evalmetrics.hpp - bias metrics against ground truth and threshold-based
// tissue classification, aggregated across noise realizations.

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dpet/image.hpp"
#include "dpet/kinetics.hpp"
#include "dpet/scf.hpp"

namespace dpet {

// Per-parameter bias of a single realization at one voxel. Relative bias
// (est - truth) / truth everywhere except the noise region, where the
// denominator is 1 and the value is the absolute error.
struct ParamBias {
    double K1 = 0.0;
    double k2 = 0.0;
};

ParamBias voxel_bias(const KineticParams& estimate, const KineticParams& truth,
                     bool noise_region);

// Biases of a whole fitted map against the phantom truth, raster order.
std::vector<ParamBias> bias_map(const std::vector<VoxelFit>& fits,
                                const std::vector<VoxelTruth>& truth);

// Aggregates over the N realizations at one voxel: mean bias, mean of the
// squared biases, and the sample standard deviation (NaN when N < 2). The
// three are tied by mean_sq = std^2 * (N-1)/N + mean^2.
struct VoxelBiasStats {
    double mean = 0.0;
    double mean_sq = 0.0;
    double std = 0.0;  // quiet NaN when N < 2
};

// Lower median: element at index (n-1)/2 of the sorted values. Stable for
// even counts (no averaging), NaN-free inputs expected.
double lower_median(std::vector<double> v);

// Per-ROI distribution summary. ROI membership comes from the ground-truth
// region ids, not from any classifier. region_id -1 aggregates all voxels.
struct RoiBiasSummary {
    int region_id = 0;
    bool is_noise = false;
    int voxel_count = 0;
    double median_mean_k1 = 0.0, median_mean_sq_k1 = 0.0, median_std_k1 = 0.0;
    double median_mean_k2 = 0.0, median_mean_sq_k2 = 0.0, median_std_k2 = 0.0;
};

struct BiasReport {
    int nx = 0, ny = 0;
    int realizations = 0;
    std::vector<VoxelBiasStats> k1;  // one entry per voxel, raster order
    std::vector<VoxelBiasStats> k2;
    std::vector<VoxelTruth> truth;   // ROI membership for the summaries
    std::vector<RoiBiasSummary> rois;  // all-voxel row first, then per region id

    const RoiBiasSummary& roi(int region_id) const;  // throws if absent
    const RoiBiasSummary& all() const { return roi(-1); }
};

// Eq.-style aggregation: per_realization[n][i] is the bias at voxel i in
// realization n; all realizations must cover the same voxel grid.
BiasReport aggregate_bias(const std::vector<std::vector<ParamBias>>& per_realization,
                          const std::vector<VoxelTruth>& truth, int nx, int ny);

// K1 thresholds: < 0.3 noise, [0.3, 0.6) abnormal, >= 0.6 normal. Boundary
// values go to the upper class.
enum class TissueClass : int { NOISE = 0, ABNORMAL = 1, NORMAL = 2 };

const char* to_string(TissueClass c);
TissueClass classify_k1_value(double k1);
std::vector<TissueClass> classify_k1(const std::vector<double>& k1_map);

// True tissue class of a phantom voxel (noise flag wins, else by true K1).
TissueClass truth_class(const VoxelTruth& t);
std::vector<TissueClass> truth_classes(const std::vector<VoxelTruth>& truth);

// counts[t][p]: voxels of true class t labeled p. correct_rate[t] is the
// diagonal fraction of row t (NaN for empty rows).
struct ConfusionMatrix {
    std::array<std::array<std::int64_t, 3>, 3> counts{};
    std::array<double, 3> correct_rate{};
    double overall_rate = 0.0;
    std::int64_t total = 0;
};

ConfusionMatrix misclassification_table(const std::vector<TissueClass>& labels,
                                        const std::vector<TissueClass>& truth);

// Report emission: per-voxel CSV (x,y,region,stats per parameter), the
// per-ROI median CSV, and a short human-readable summary.
void write_bias_voxel_csv(const std::string& path, const BiasReport& report);
void write_bias_roi_csv(const std::string& path, const BiasReport& report);
std::string bias_summary_text(const BiasReport& report);
std::string confusion_text(const ConfusionMatrix& m);

}  // namespace dpet
