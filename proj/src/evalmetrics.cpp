#include "dpet/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include "dpet/csv.hpp"

namespace dpet {

namespace {

double bias_one(double est, double tru, bool noise_region) {
    if (!std::isfinite(tru)) throw std::invalid_argument("voxel_bias: non-finite truth");
    if (noise_region) return est - tru;  // denominator fixed at 1
    if (tru == 0.0)
        throw std::invalid_argument("voxel_bias: zero truth outside the noise region");
    return (est - tru) / tru;
}

}  // namespace

ParamBias voxel_bias(const KineticParams& estimate, const KineticParams& truth,
                     bool noise_region) {
    return {bias_one(estimate.K1, truth.K1, noise_region),
            bias_one(estimate.k2, truth.k2, noise_region)};
}

std::vector<ParamBias> bias_map(const std::vector<VoxelFit>& fits,
                                const std::vector<VoxelTruth>& truth) {
    if (fits.size() != truth.size())
        throw std::invalid_argument("bias_map: fit/truth size mismatch");
    std::vector<ParamBias> out(fits.size());
    for (std::size_t i = 0; i < fits.size(); ++i)
        out[i] = voxel_bias(fits[i].params, truth[i].params, truth[i].is_noise);
    return out;
}

double lower_median(std::vector<double> v) {
    if (v.empty()) throw std::invalid_argument("lower_median: empty input");
    const std::size_t k = (v.size() - 1) / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
    return v[k];
}

const RoiBiasSummary& BiasReport::roi(int region_id) const {
    for (const auto& r : rois)
        if (r.region_id == region_id) return r;
    throw std::invalid_argument("BiasReport: no ROI with id " + std::to_string(region_id));
}

namespace {

VoxelBiasStats stats_over_realizations(const std::vector<std::vector<ParamBias>>& per,
                                       std::size_t voxel, double ParamBias::*field) {
    const std::size_t n = per.size();
    VoxelBiasStats s;
    double sum = 0.0, sum_sq = 0.0;
    for (const auto& r : per) {
        const double b = r[voxel].*field;
        sum += b;
        sum_sq += b * b;
    }
    s.mean = sum / static_cast<double>(n);
    s.mean_sq = sum_sq / static_cast<double>(n);
    if (n >= 2) {
        double ssd = 0.0;  // two-pass for a tight Eq.-identity residual
        for (const auto& r : per) {
            const double d = r[voxel].*field - s.mean;
            ssd += d * d;
        }
        s.std = std::sqrt(ssd / static_cast<double>(n - 1));
        // keep mean_sq exactly consistent with (mean, std)
        s.mean_sq = s.std * s.std * static_cast<double>(n - 1) / static_cast<double>(n) +
                    s.mean * s.mean;
    } else {
        s.std = std::numeric_limits<double>::quiet_NaN();
    }
    return s;
}

RoiBiasSummary summarize(int region_id, bool is_noise, const std::vector<int>& members,
                         const BiasReport& rep) {
    RoiBiasSummary s;
    s.region_id = region_id;
    s.is_noise = is_noise;
    s.voxel_count = static_cast<int>(members.size());
    std::vector<double> buf;
    buf.reserve(members.size());
    auto med = [&](const std::vector<VoxelBiasStats>& v, double VoxelBiasStats::*f) {
        buf.clear();
        for (int i : members) buf.push_back(v[static_cast<std::size_t>(i)].*f);
        return lower_median(buf);
    };
    s.median_mean_k1 = med(rep.k1, &VoxelBiasStats::mean);
    s.median_mean_sq_k1 = med(rep.k1, &VoxelBiasStats::mean_sq);
    s.median_mean_k2 = med(rep.k2, &VoxelBiasStats::mean);
    s.median_mean_sq_k2 = med(rep.k2, &VoxelBiasStats::mean_sq);
    if (rep.realizations >= 2) {
        s.median_std_k1 = med(rep.k1, &VoxelBiasStats::std);
        s.median_std_k2 = med(rep.k2, &VoxelBiasStats::std);
    } else {
        s.median_std_k1 = std::numeric_limits<double>::quiet_NaN();
        s.median_std_k2 = std::numeric_limits<double>::quiet_NaN();
    }
    return s;
}

}  // namespace

BiasReport aggregate_bias(const std::vector<std::vector<ParamBias>>& per_realization,
                          const std::vector<VoxelTruth>& truth, int nx, int ny) {
    if (per_realization.empty())
        throw std::invalid_argument("aggregate_bias: need at least one realization");
    const std::size_t nvox = static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny);
    if (truth.size() != nvox)
        throw std::invalid_argument("aggregate_bias: truth size mismatch");
    for (const auto& r : per_realization)
        if (r.size() != nvox)
            throw std::invalid_argument("aggregate_bias: realization size mismatch");

    BiasReport rep;
    rep.nx = nx;
    rep.ny = ny;
    rep.realizations = static_cast<int>(per_realization.size());
    rep.truth = truth;
    rep.k1.resize(nvox);
    rep.k2.resize(nvox);
    for (std::size_t i = 0; i < nvox; ++i) {
        rep.k1[i] = stats_over_realizations(per_realization, i, &ParamBias::K1);
        rep.k2[i] = stats_over_realizations(per_realization, i, &ParamBias::k2);
    }

    std::vector<int> all(nvox);
    for (std::size_t i = 0; i < nvox; ++i) all[i] = static_cast<int>(i);
    rep.rois.push_back(summarize(-1, false, all, rep));
    std::map<int, std::vector<int>> by_region;
    for (std::size_t i = 0; i < nvox; ++i)
        by_region[truth[i].region_id].push_back(static_cast<int>(i));
    for (const auto& [id, members] : by_region)
        rep.rois.push_back(
            summarize(id, truth[static_cast<std::size_t>(members.front())].is_noise, members, rep));
    return rep;
}

const char* to_string(TissueClass c) {
    switch (c) {
        case TissueClass::NOISE: return "noise";
        case TissueClass::ABNORMAL: return "abnormal";
        case TissueClass::NORMAL: return "normal";
    }
    throw std::invalid_argument("to_string: bad TissueClass");
}

TissueClass classify_k1_value(double k1) {
    if (!std::isfinite(k1)) throw std::invalid_argument("classify_k1: non-finite K1");
    if (k1 < 0.3) return TissueClass::NOISE;
    if (k1 < 0.6) return TissueClass::ABNORMAL;
    return TissueClass::NORMAL;
}

std::vector<TissueClass> classify_k1(const std::vector<double>& k1_map) {
    std::vector<TissueClass> out(k1_map.size());
    for (std::size_t i = 0; i < k1_map.size(); ++i) out[i] = classify_k1_value(k1_map[i]);
    return out;
}

TissueClass truth_class(const VoxelTruth& t) {
    if (t.is_noise) return TissueClass::NOISE;
    return classify_k1_value(t.params.K1);
}

std::vector<TissueClass> truth_classes(const std::vector<VoxelTruth>& truth) {
    std::vector<TissueClass> out(truth.size());
    for (std::size_t i = 0; i < truth.size(); ++i) out[i] = truth_class(truth[i]);
    return out;
}

ConfusionMatrix misclassification_table(const std::vector<TissueClass>& labels,
                                        const std::vector<TissueClass>& truth) {
    if (labels.size() != truth.size())
        throw std::invalid_argument("misclassification_table: size mismatch");
    ConfusionMatrix m;
    for (std::size_t i = 0; i < labels.size(); ++i)
        ++m.counts[static_cast<int>(truth[i])][static_cast<int>(labels[i])];
    std::int64_t diag = 0;
    for (int t = 0; t < 3; ++t) {
        std::int64_t row = 0;
        for (int p = 0; p < 3; ++p) row += m.counts[t][p];
        m.total += row;
        diag += m.counts[t][t];
        m.correct_rate[t] = row > 0 ? static_cast<double>(m.counts[t][t]) / static_cast<double>(row)
                                    : std::numeric_limits<double>::quiet_NaN();
    }
    m.overall_rate = m.total > 0 ? static_cast<double>(diag) / static_cast<double>(m.total)
                                 : std::numeric_limits<double>::quiet_NaN();
    return m;
}

void write_bias_voxel_csv(const std::string& path, const BiasReport& report) {
    csv::Writer w(path);
    w.row({"x", "y", "region_id", "is_noise", "mean_bias_k1", "mean_sq_bias_k1", "std_bias_k1",
           "mean_bias_k2", "mean_sq_bias_k2", "std_bias_k2"});
    for (int y = 0; y < report.ny; ++y)
        for (int x = 0; x < report.nx; ++x) {
            const std::size_t i =
                static_cast<std::size_t>(y) * static_cast<std::size_t>(report.nx) +
                static_cast<std::size_t>(x);
            const auto& t = report.truth[i];
            w.row({std::to_string(x), std::to_string(y), std::to_string(t.region_id),
                   t.is_noise ? "1" : "0", csv::format_double(report.k1[i].mean),
                   csv::format_double(report.k1[i].mean_sq), csv::format_double(report.k1[i].std),
                   csv::format_double(report.k2[i].mean), csv::format_double(report.k2[i].mean_sq),
                   csv::format_double(report.k2[i].std)});
        }
}

void write_bias_roi_csv(const std::string& path, const BiasReport& report) {
    csv::Writer w(path);
    w.row({"region_id", "is_noise", "voxels", "median_mean_bias_k1", "median_mean_sq_bias_k1",
           "median_std_bias_k1", "median_mean_bias_k2", "median_mean_sq_bias_k2",
           "median_std_bias_k2"});
    for (const auto& r : report.rois)
        w.row({std::to_string(r.region_id), r.is_noise ? "1" : "0", std::to_string(r.voxel_count),
               csv::format_double(r.median_mean_k1), csv::format_double(r.median_mean_sq_k1),
               csv::format_double(r.median_std_k1), csv::format_double(r.median_mean_k2),
               csv::format_double(r.median_mean_sq_k2), csv::format_double(r.median_std_k2)});
}

std::string bias_summary_text(const BiasReport& report) {
    std::ostringstream os;
    os << "bias report: " << report.nx << "x" << report.ny << " voxels, " << report.realizations
       << " realization(s)\n";
    for (const auto& r : report.rois) {
        if (r.region_id == -1)
            os << "  all voxels";
        else
            os << "  region " << r.region_id << (r.is_noise ? " (noise)" : "");
        os << " [" << r.voxel_count << " vox]"
           << "  K1 median bias " << r.median_mean_k1 << ", median msq " << r.median_mean_sq_k1
           << ", median std " << r.median_std_k1 << "; k2 median bias " << r.median_mean_k2
           << ", median msq " << r.median_mean_sq_k2 << ", median std " << r.median_std_k2 << "\n";
    }
    return os.str();
}

std::string confusion_text(const ConfusionMatrix& m) {
    std::ostringstream os;
    os << "classification (rows = truth, cols = labeled as) noise/abnormal/normal\n";
    for (int t = 0; t < 3; ++t) {
        os << "  " << to_string(static_cast<TissueClass>(t)) << ":";
        for (int p = 0; p < 3; ++p) os << " " << m.counts[t][p];
        os << "  (correct " << m.correct_rate[t] << ")\n";
    }
    os << "  overall correct rate " << m.overall_rate << " of " << m.total << " voxels\n";
    return os.str();
}

}  // namespace dpet
