#include "dpet/phantom.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "dpet/rng.hpp"
#include "dpet/threads.hpp"

namespace dpet {

using nlohmann::json;

void PhantomSpec::validate() const {
    if (nx <= 0 || ny <= 0) throw std::invalid_argument("PhantomSpec: bad dims");
    if (regions.empty()) throw std::invalid_argument("PhantomSpec: no regions");
    std::vector<int> owner(static_cast<std::size_t>(nx) * ny, -1);
    int noise_regions = 0;
    for (const auto& r : regions) {
        if (r.is_noise) ++noise_regions;
        if (!r.is_noise) dpet::validate(r.params);
        for (int v : r.voxels) {
            if (v < 0 || v >= nx * ny)
                throw std::invalid_argument("PhantomSpec: voxel index out of range");
            if (owner[v] != -1)
                throw std::invalid_argument("PhantomSpec: regions overlap at voxel " + std::to_string(v));
            owner[v] = r.id;
        }
    }
    if (noise_regions > 1) throw std::invalid_argument("PhantomSpec: more than one noise region");
    for (int v = 0; v < nx * ny; ++v)
        if (owner[v] == -1)
            throw std::invalid_argument("PhantomSpec: voxel " + std::to_string(v) + " not covered");
}

namespace {

PhantomRegion region_from_json(const json& j, int nx, int ny) {
    PhantomRegion r;
    r.id = j.at("id").get<int>();
    if (j.contains("rect")) {
        const auto rect = j.at("rect");
        if (!rect.is_array() || rect.size() != 4)
            throw std::invalid_argument("PhantomSpec: rect must be [x0,y0,width,height]");
        const int x0 = rect[0].get<int>(), y0 = rect[1].get<int>();
        const int w = rect[2].get<int>(), h = rect[3].get<int>();
        for (int y = y0; y < y0 + h; ++y)
            for (int x = x0; x < x0 + w; ++x) {
                if (x < 0 || x >= nx || y < 0 || y >= ny)
                    throw std::invalid_argument("PhantomSpec: rect exceeds lattice");
                r.voxels.push_back(y * nx + x);
            }
    } else if (j.contains("voxels")) {
        for (const auto& v : j.at("voxels")) {
            const int x = v.at(0).get<int>(), y = v.at(1).get<int>();
            if (x < 0 || x >= nx || y < 0 || y >= ny)
                throw std::invalid_argument("PhantomSpec: voxel exceeds lattice");
            r.voxels.push_back(y * nx + x);
        }
    } else {
        throw std::invalid_argument("PhantomSpec: region needs 'rect' or 'voxels'");
    }
    if (j.value("noise", false)) {
        r.is_noise = true;
    } else {
        r.params.K1 = j.at("K1").get<double>();
        r.params.k2 = j.at("k2").get<double>();
    }
    return r;
}

}  // namespace

PhantomSpec PhantomSpec::from_json_text(const std::string& text, FrameScheme frames,
                                        InputFunction input) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(std::string("PhantomSpec: bad JSON: ") + e.what());
    }
    PhantomSpec spec{.nx = 0, .ny = 0, .regions = {}, .frames = std::move(frames), .input = std::move(input)};
    try {
        const auto dims = j.at("dims");
        spec.nx = dims.at(0).get<int>();
        spec.ny = dims.at(1).get<int>();
        for (const auto& rj : j.at("regions")) spec.regions.push_back(region_from_json(rj, spec.nx, spec.ny));
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("PhantomSpec: ") + e.what());
    }
    spec.validate();
    return spec;
}

PhantomSpec PhantomSpec::from_json_file(const std::string& path, FrameScheme frames,
                                        InputFunction input) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("PhantomSpec: cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str(), std::move(frames), std::move(input));
}

std::string PhantomSpec::to_json_text() const {
    json j;
    j["dims"] = {nx, ny};
    json regions_json = json::array();
    for (const auto& r : regions) {
        json rj;
        rj["id"] = r.id;
        json voxels = json::array();
        for (int v : r.voxels) voxels.push_back({v % nx, v / nx});
        rj["voxels"] = voxels;
        if (r.is_noise) {
            rj["noise"] = true;
        } else {
            rj["K1"] = r.params.K1;
            rj["k2"] = r.params.k2;
        }
        regions_json.push_back(rj);
    }
    j["regions"] = regions_json;
    return j.dump(2);
}

NoiseKind noise_kind_from_string(const std::string& s) {
    if (s == "gaussian") return NoiseKind::GaussianHetero;
    if (s == "poisson") return NoiseKind::ScaledPoisson;
    throw std::invalid_argument("noise kind must be 'gaussian' or 'poisson', got '" + s + "'");
}

std::string to_string(NoiseKind k) {
    return k == NoiseKind::GaussianHetero ? "gaussian" : "poisson";
}

DynamicImage render_noise_free(const PhantomSpec& spec) {
    spec.validate();
    const int T = static_cast<int>(spec.frames.size());
    DynamicImage img(spec.nx, spec.ny, T);
    std::vector<VoxelTruth> truth(static_cast<std::size_t>(spec.nx) * spec.ny);
    for (const auto& r : spec.regions) {
        std::vector<double> tac(T, 0.0);
        if (!r.is_noise) tac = frame_averaged_tac(r.params, spec.input, spec.frames);
        for (int v : r.voxels) {
            auto dst = img.voxel(v);
            for (int t = 0; t < T; ++t) dst[t] = tac[t];
            truth[v].region_id = r.id;
            truth[v].params = r.is_noise ? KineticParams{0.0, 0.0} : r.params;
            truth[v].is_noise = r.is_noise;
        }
    }
    img.set_truth(std::move(truth));
    return img;
}

DynamicImage add_noise(const DynamicImage& img, const NoiseModel& noise, const FrameScheme& frames,
                       int threads) {
    img.validate_finite();
    if (static_cast<int>(frames.size()) != img.frames())
        throw std::invalid_argument("add_noise: frame scheme does not match image");
    if (noise.level < 0.0 || !std::isfinite(noise.level))
        throw std::invalid_argument("add_noise: level must be finite and >= 0");
    if (noise.kind == NoiseKind::ScaledPoisson && noise.level == 0.0)
        throw std::invalid_argument("add_noise: scaled-Poisson needs level > 0");

    const int T = img.frames();
    DynamicImage out = img;

    if (noise.kind == NoiseKind::GaussianHetero) {
        if (noise.level == 0.0) return out;
        std::vector<double> sd(T);
        for (int t = 0; t < T; ++t)
            sd[t] = noise.level * img.frame_mean(t, /*exclude_noise=*/true) /
                    std::sqrt(frames.duration(t));
        parallel_for(img.voxels(), threads, [&](std::int64_t i) {
            Rng rng = Rng::stream(noise.seed, static_cast<std::uint64_t>(i));
            auto v = out.voxel(static_cast<int>(i));
            for (int t = 0; t < T; ++t) v[t] = std::max(0.0, v[t] + sd[t] * rng.normal());
        });
    } else {
        parallel_for(img.voxels(), threads, [&](std::int64_t i) {
            Rng rng = Rng::stream(noise.seed, static_cast<std::uint64_t>(i));
            auto v = out.voxel(static_cast<int>(i));
            for (int t = 0; t < T; ++t) {
                const double dt = frames.duration(t);
                const double mean_counts = v[t] * dt / noise.level;
                v[t] = static_cast<double>(rng.poisson(mean_counts)) * noise.level / dt;
            }
        });
    }
    return out;
}

PhantomSpec default_phantom() {
    // 32x32, three regions: normal myocardium (midinferoseptal values), an
    // abnormal territory made of three 4x4 defects (apex values), and a
    // zero-activity background.
    const int nx = 32, ny = 32;
    PhantomRegion normal, abnormal, background;
    normal.id = 1;
    normal.params = {0.9016, 0.0730};
    abnormal.id = 2;
    abnormal.params = {0.3290, 0.0554};
    background.id = 0;
    background.is_noise = true;
    for (int y = 0; y < ny; ++y)
        for (int x = 0; x < nx; ++x) {
            const int i = y * nx + x;
            const bool defect = (x >= 6 && x < 10 && y >= 6 && y < 10) ||
                                (x >= 19 && x < 23 && y >= 7 && y < 11) ||
                                (x >= 10 && x < 14 && y >= 19 && y < 23);
            const bool mid = x >= 4 && x < 28 && y >= 4 && y < 28;
            if (defect)
                abnormal.voxels.push_back(i);
            else if (mid)
                normal.voxels.push_back(i);
            else
                background.voxels.push_back(i);
        }
    PhantomSpec spec{.nx = nx,
                     .ny = ny,
                     .regions = {background, normal, abnormal},
                     .frames = FrameScheme::cardiac_default(),
                     .input = InputFunction::bolus_default()};
    spec.validate();
    return spec;
}

}  // namespace dpet
