// image.hpp - dynamic image container and the DPET binary format.

#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dpet/kinetics.hpp"

namespace dpet {

struct VoxelTruth {
    int region_id = 0;
    KineticParams params;
    bool is_noise = false;
};

// A 2D lattice of voxels, each carrying a length-T concentration vector.
// Data are stored voxel-major in memory; the on-disk DPET format is
// frame-major (see read_dpet/write_dpet).
class DynamicImage {
public:
    DynamicImage(int nx, int ny, int T);

    int nx() const { return nx_; }
    int ny() const { return ny_; }
    int frames() const { return T_; }
    int voxels() const { return nx_ * ny_; }

    int index(int x, int y) const { return y * nx_ + x; }
    int x_of(int i) const { return i % nx_; }
    int y_of(int i) const { return i / nx_; }

    std::span<double> voxel(int i) { return {data_.data() + static_cast<std::size_t>(i) * T_, static_cast<std::size_t>(T_)}; }
    std::span<const double> voxel(int i) const { return {data_.data() + static_cast<std::size_t>(i) * T_, static_cast<std::size_t>(T_)}; }
    double& at(int i, int t) { return data_[static_cast<std::size_t>(i) * T_ + t]; }
    double at(int i, int t) const { return data_[static_cast<std::size_t>(i) * T_ + t]; }
    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    bool has_truth() const { return truth_.has_value(); }
    const std::vector<VoxelTruth>& truth() const;
    void set_truth(std::vector<VoxelTruth> t);

    // Mean over voxels at frame t; when the image carries truth and
    // exclude_noise is set, noise-region voxels are left out.
    double frame_mean(int t, bool exclude_noise) const;

    void validate_finite() const;

    // DPET: magic 'DPET', u32 LE version=1, nx, ny, nz=1, T, then
    // nx*ny*T float64 LE values frame-major (all voxels of frame 1 first).
    static DynamicImage read_dpet(const std::string& path);
    void write_dpet(const std::string& path) const;

    // Sidecar truth CSV: x,y,region_id,K1,k2. Noise voxels are rows with
    // K1 = k2 = 0.
    void write_truth_csv(const std::string& path) const;
    static std::vector<VoxelTruth> read_truth_csv(const std::string& path, int nx, int ny);

private:
    int nx_, ny_, T_;
    std::vector<double> data_;
    std::optional<std::vector<VoxelTruth>> truth_;
};

// Single-frame helper for parameter maps (T=1 DPET files).
DynamicImage map_image(int nx, int ny, const std::vector<double>& values);

}  // namespace dpet
