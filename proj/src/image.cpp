#include "dpet/image.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "dpet/csv.hpp"

namespace dpet {
namespace {

constexpr char kMagic[4] = {'D', 'P', 'E', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::ifstream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw std::invalid_argument("dpet: truncated header in '" + path + "'");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

static_assert(sizeof(double) == 8);

}  // namespace

DynamicImage::DynamicImage(int nx, int ny, int T) : nx_(nx), ny_(ny), T_(T) {
    if (nx <= 0 || ny <= 0 || T <= 0) throw std::invalid_argument("DynamicImage: bad dimensions");
    data_.assign(static_cast<std::size_t>(nx) * ny * T, 0.0);
}

const std::vector<VoxelTruth>& DynamicImage::truth() const {
    if (!truth_) throw std::invalid_argument("DynamicImage: no truth attached");
    return *truth_;
}

void DynamicImage::set_truth(std::vector<VoxelTruth> t) {
    if (static_cast<int>(t.size()) != voxels())
        throw std::invalid_argument("DynamicImage: truth size mismatch");
    truth_ = std::move(t);
}

double DynamicImage::frame_mean(int t, bool exclude_noise) const {
    double sum = 0.0;
    long count = 0;
    const bool use_truth = exclude_noise && truth_.has_value();
    for (int i = 0; i < voxels(); ++i) {
        if (use_truth && (*truth_)[i].is_noise) continue;
        sum += at(i, t);
        ++count;
    }
    return count > 0 ? sum / count : 0.0;
}

void DynamicImage::validate_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) throw std::invalid_argument("DynamicImage: non-finite value");
}

DynamicImage DynamicImage::read_dpet(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("dpet: cannot open '" + path + "'");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw std::invalid_argument("dpet: bad magic in '" + path + "'");
    const std::uint32_t version = get_u32(in, path);
    if (version != kVersion) throw std::invalid_argument("dpet: unsupported version in '" + path + "'");
    const std::uint32_t nx = get_u32(in, path);
    const std::uint32_t ny = get_u32(in, path);
    const std::uint32_t nz = get_u32(in, path);
    const std::uint32_t T = get_u32(in, path);
    if (nz != 1) throw std::invalid_argument("dpet: only single-slice images supported");
    if (nx == 0 || ny == 0 || T == 0) throw std::invalid_argument("dpet: zero dimension in '" + path + "'");
    DynamicImage img(static_cast<int>(nx), static_cast<int>(ny), static_cast<int>(T));
    const std::size_t n = static_cast<std::size_t>(nx) * ny;
    std::vector<double> frame(n);
    for (std::uint32_t t = 0; t < T; ++t) {
        in.read(reinterpret_cast<char*>(frame.data()), static_cast<std::streamsize>(n * 8));
        if (!in) throw std::invalid_argument("dpet: truncated data in '" + path + "'");
        for (std::size_t i = 0; i < n; ++i) img.at(static_cast<int>(i), static_cast<int>(t)) = frame[i];
    }
    return img;
}

void DynamicImage::write_dpet(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("dpet: cannot write '" + path + "'");
    out.write(kMagic, 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(nx_));
    put_u32(out, static_cast<std::uint32_t>(ny_));
    put_u32(out, 1);
    put_u32(out, static_cast<std::uint32_t>(T_));
    const std::size_t n = static_cast<std::size_t>(nx_) * ny_;
    std::vector<double> frame(n);
    for (int t = 0; t < T_; ++t) {
        for (std::size_t i = 0; i < n; ++i) frame[i] = at(static_cast<int>(i), t);
        out.write(reinterpret_cast<const char*>(frame.data()), static_cast<std::streamsize>(n * 8));
    }
    if (!out) throw std::runtime_error("dpet: write failed for '" + path + "'");
}

void DynamicImage::write_truth_csv(const std::string& path) const {
    const auto& tr = truth();
    csv::Writer w(path);
    w.row({"x", "y", "region_id", "K1", "k2"});
    for (int i = 0; i < voxels(); ++i) {
        w.row({std::to_string(x_of(i)), std::to_string(y_of(i)), std::to_string(tr[i].region_id),
               csv::format_double(tr[i].params.K1), csv::format_double(tr[i].params.k2)});
    }
}

std::vector<VoxelTruth> DynamicImage::read_truth_csv(const std::string& path, int nx, int ny) {
    const auto t = csv::read_file(path);
    const int cx = t.column("x"), cy = t.column("y"), cr = t.column("region_id");
    const int ck1 = t.column("K1"), ck2 = t.column("k2");
    std::vector<VoxelTruth> truth(static_cast<std::size_t>(nx) * ny);
    std::vector<bool> seen(truth.size(), false);
    for (const auto& r : t.rows) {
        const long x = csv::to_long(r[cx]);
        const long y = csv::to_long(r[cy]);
        if (x < 0 || x >= nx || y < 0 || y >= ny)
            throw std::invalid_argument("truth csv: voxel out of range");
        const std::size_t i = static_cast<std::size_t>(y) * nx + x;
        VoxelTruth v;
        v.region_id = static_cast<int>(csv::to_long(r[cr]));
        v.params.K1 = csv::to_double(r[ck1]);
        v.params.k2 = csv::to_double(r[ck2]);
        v.is_noise = (v.params.K1 == 0.0 && v.params.k2 == 0.0);
        truth[i] = v;
        seen[i] = true;
    }
    for (bool s : seen)
        if (!s) throw std::invalid_argument("truth csv: incomplete voxel coverage");
    return truth;
}

DynamicImage map_image(int nx, int ny, const std::vector<double>& values) {
    if (static_cast<std::size_t>(nx) * ny != values.size())
        throw std::invalid_argument("map_image: size mismatch");
    DynamicImage img(nx, ny, 1);
    for (std::size_t i = 0; i < values.size(); ++i) img.at(static_cast<int>(i), 0) = values[i];
    return img;
}

}  // namespace dpet
