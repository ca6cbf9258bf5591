#include "dpet/skms.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "dpet/csv.hpp"
#include "dpet/potts.hpp"
#include "dpet/rng.hpp"

namespace dpet {

void SkmsConfig::validate() const {
    if (G < 2) throw std::invalid_argument("skms: G must be >= 2");
    if (!(beta >= 0)) throw std::invalid_argument("skms: beta must be >= 0");
    if (max_iter < 1) throw std::invalid_argument("skms: max_iter must be >= 1");
    if (!(conv_tol > 0)) throw std::invalid_argument("skms: conv_tol must be > 0");
}

namespace {

double sq_dist(std::span<const double> a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t t = 0; t < b.size(); ++t) {
        double d = a[t] - b[t];
        s += d * d;
    }
    return s;
}

std::vector<std::vector<double>> member_means(const DynamicImage& img,
                                              const std::vector<int>& labels, int G) {
    const int T = img.frames();
    std::vector<std::vector<double>> means(G, std::vector<double>(T, 0.0));
    std::vector<int> count(G, 0);
    for (int i = 0; i < img.voxels(); ++i) {
        int g = labels[i] - 1;
        ++count[g];
        auto v = img.voxel(i);
        for (int t = 0; t < T; ++t) means[g][t] += v[t];
    }
    for (int g = 0; g < G; ++g)
        if (count[g] > 0)
            for (int t = 0; t < T; ++t) means[g][t] /= count[g];
    return means;
}

}  // namespace

double skms_objective(const DynamicImage& img, const std::vector<int>& labels,
                      const std::vector<std::vector<double>>& cluster_tacs, double beta,
                      bool spatial) {
    double e = 0;
    for (int i = 0; i < img.voxels(); ++i)
        e += sq_dist(img.voxel(i), cluster_tacs[labels[i] - 1]);
    if (spatial && beta > 0) {
        NeighborGraph graph = NeighborGraph::lattice8(img.nx(), img.ny());
        e -= beta * static_cast<double>(
                        potts_energy(labels, graph, static_cast<int>(cluster_tacs.size())));
    }
    return e;
}

SkmsResult skms_fit_from(const DynamicImage& img, const InputFunction& input,
                         const FrameScheme& frames, const SkmsConfig& cfg,
                         const std::vector<std::vector<double>>& init_means) {
    cfg.validate();
    img.validate_finite();
    const int n = img.voxels();
    const int T = img.frames();
    const int G = cfg.G;
    if (G > n) throw std::invalid_argument("skms: more clusters than voxels");
    if (static_cast<int>(init_means.size()) != G)
        throw std::invalid_argument("skms: need one initial mean per cluster");
    for (const auto& m : init_means)
        if (static_cast<int>(m.size()) != T)
            throw std::invalid_argument("skms: initial mean length mismatch");
    if (img.frames() != static_cast<int>(frames.size()))
        throw std::invalid_argument("skms: image frame count does not match frame scheme");

    NeighborGraph graph = NeighborGraph::lattice8(img.nx(), img.ny());

    // Initial labels: nearest initial mean, no spatial term (no labels yet).
    std::vector<int> labels(n, 1);
    for (int i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        int bg = 1;
        for (int g = 0; g < G; ++g) {
            double d = sq_dist(img.voxel(i), init_means[g]);
            if (d < best) {
                best = d;
                bg = g + 1;
            }
        }
        labels[i] = bg;
    }

    SkmsResult res;
    std::vector<std::vector<double>> means = member_means(img, labels, G);
    std::vector<KineticParams> kin(G, cfg.fit.init);
    std::vector<std::vector<double>> ctac(G), ctac_prev;
    std::vector<int> count(G, 0);

    int iter = 0;
    for (; iter < cfg.max_iter; ++iter) {
        // Fit each cluster-mean TAC; warm start at the previous estimate so
        // the refit can only reduce ||mean - C||^2.
        for (int g = 0; g < G; ++g) {
            FitConfig fc = cfg.fit;
            fc.init = kin[g];
            VoxelFit fit = lm_fit_voxel(means[g], input, frames, fc);
            kin[g] = fit.params;
            ctac[g] = frame_averaged_tac(kin[g], input, frames);
        }

        if (!ctac_prev.empty()) {
            double dmax = 0;
            for (int g = 0; g < G; ++g)
                for (int t = 0; t < T; ++t)
                    dmax = std::max(dmax, std::abs(ctac[g][t] - ctac_prev[g][t]));
            if (dmax < cfg.conv_tol) {
                res.converged = true;
                break;
            }
        }
        ctac_prev = ctac;

        // Sequential raster reassignment against the fitted TACs; the spatial
        // term sees current neighbor labels.
        for (int i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            int bg = labels[i];
            for (int g = 1; g <= G; ++g) {
                double score = sq_dist(img.voxel(i), ctac[g - 1]);
                if (cfg.spatial && cfg.beta > 0) {
                    int agree = 0;
                    for (int j : graph.neigh(i))
                        if (labels[j] == g) ++agree;
                    score -= cfg.beta * agree;
                }
                if (score < best) {
                    best = score;
                    bg = g;
                }
            }
            labels[i] = bg;
        }

        // Reseed empty clusters from the worst-fit voxel.
        std::fill(count.begin(), count.end(), 0);
        for (int i = 0; i < n; ++i) ++count[labels[i] - 1];
        for (int g = 0; g < G; ++g) {
            if (count[g] > 0) continue;
            double worst = -1;
            int pick = -1;
            for (int i = 0; i < n; ++i) {
                if (count[labels[i] - 1] <= 1) continue;  // keep other clusters alive
                double d = sq_dist(img.voxel(i), ctac[labels[i] - 1]);
                if (d > worst) {
                    worst = d;
                    pick = i;
                }
            }
            if (pick >= 0) {
                --count[labels[pick] - 1];
                labels[pick] = g + 1;
                ++count[g];
                ++res.reseeds;
            }
        }

        means = member_means(img, labels, G);
        res.objective.push_back(skms_objective(img, labels, ctac, cfg.beta, cfg.spatial));
    }

    res.labels = std::move(labels);
    res.cluster_params = std::move(kin);
    res.cluster_tacs = std::move(ctac);
    res.iterations = iter;
    return res;
}

SkmsResult skms_fit(const DynamicImage& img, const InputFunction& input,
                    const FrameScheme& frames, const SkmsConfig& cfg) {
    cfg.validate();
    const int n = img.voxels();
    if (cfg.G > n) throw std::invalid_argument("skms: more clusters than voxels");

    // k-means++ seeding on the TAC vectors.
    Rng rng = Rng::stream(cfg.seed, 0);
    std::vector<std::vector<double>> centers;
    std::vector<double> d2(n, 0.0);
    int first = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
    centers.emplace_back(img.voxel(first).begin(), img.voxel(first).end());
    for (int i = 0; i < n; ++i) d2[i] = sq_dist(img.voxel(i), centers[0]);
    while (static_cast<int>(centers.size()) < cfg.G) {
        double total = 0;
        for (double d : d2) total += d;
        int pick;
        if (total > 0) {
            double u = rng.uniform() * total, acc = 0;
            pick = n - 1;
            for (int i = 0; i < n; ++i) {
                acc += d2[i];
                if (u < acc) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
        }
        centers.emplace_back(img.voxel(pick).begin(), img.voxel(pick).end());
        for (int i = 0; i < n; ++i) d2[i] = std::min(d2[i], sq_dist(img.voxel(i), centers.back()));
    }
    return skms_fit_from(img, input, frames, cfg, centers);
}

void write_labels_csv(const std::string& path, int nx, int ny, const std::vector<int>& labels) {
    if (static_cast<int>(labels.size()) != nx * ny)
        throw std::invalid_argument("labels size does not match image dims");
    csv::Writer wr(path);
    wr.row({"x", "y", "cluster_id"});
    for (int y = 0; y < ny; ++y)
        for (int x = 0; x < nx; ++x)
            wr.row({std::to_string(x), std::to_string(y),
                    std::to_string(labels[static_cast<std::size_t>(y) * nx + x])});
}

std::vector<int> read_labels_csv(const std::string& path, int& nx, int& ny) {
    csv::Table t = csv::read_file(path);
    auto xs = t.cells("x");
    auto ys = t.cells("y");
    auto ids = t.cells("cluster_id");
    long mx = -1, my = -1;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx = std::max(mx, csv::to_long(xs[i]));
        my = std::max(my, csv::to_long(ys[i]));
    }
    nx = static_cast<int>(mx + 1);
    ny = static_cast<int>(my + 1);
    if (xs.size() != static_cast<std::size_t>(nx) * ny)
        throw std::invalid_argument("labels CSV does not cover the lattice: " + path);
    std::vector<int> labels(xs.size(), 0);
    for (std::size_t i = 0; i < xs.size(); ++i) {
        std::size_t idx = static_cast<std::size_t>(csv::to_long(ys[i])) * nx + csv::to_long(xs[i]);
        labels[idx] = static_cast<int>(csv::to_long(ids[i]));
    }
    return labels;
}

}  // namespace dpet
