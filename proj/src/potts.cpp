#include "dpet/potts.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "dpet/csv.hpp"
#include "dpet/threads.hpp"

namespace dpet {

NeighborGraph NeighborGraph::lattice8(int nx, int ny) {
    if (nx < 1 || ny < 1) throw std::invalid_argument("lattice dims must be >= 1");
    NeighborGraph g;
    g.nx = nx;
    g.ny = ny;
    const int n = nx * ny;
    g.offsets.assign(n + 1, 0);
    g.neighbors.reserve(static_cast<std::size_t>(n) * 8);
    for (int y = 0; y < ny; ++y)
        for (int x = 0; x < nx; ++x) {
            const int i = y * nx + x;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    if (dx == 0 && dy == 0) continue;
                    const int xx = x + dx, yy = y + dy;
                    if (xx < 0 || xx >= nx || yy < 0 || yy >= ny) continue;
                    const int j = yy * nx + xx;
                    g.neighbors.push_back(j);
                    if (i < j) g.edges.emplace_back(i, j);
                }
            g.offsets[i + 1] = static_cast<int>(g.neighbors.size());
        }
    return g;
}

long potts_energy(const std::vector<int>& z, const NeighborGraph& graph, int G) {
    if (static_cast<int>(z.size()) != graph.n())
        throw std::invalid_argument("label map size does not match lattice");
    for (int v : z)
        if (v < 1 || v > G) throw std::invalid_argument("label out of range 1..G");
    long u = 0;
    for (const auto& [i, j] : graph.edges)
        if (z[i] == z[j]) ++u;
    return u;
}

namespace {

void check_enumerable(int G, int n) {
    if (G < 1) throw std::invalid_argument("G must be >= 1");
    if (n * std::log(static_cast<double>(G)) > std::log(1e7))
        throw std::invalid_argument("state space too large for brute-force enumeration");
}

}  // namespace

std::vector<long> potts_energy_histogram(int G, const NeighborGraph& graph) {
    const int n = graph.n();
    check_enumerable(G, n);
    std::vector<long> hist(graph.edges.size() + 1, 0);
    std::vector<int> z(n, 1);
    while (true) {
        ++hist[potts_energy(z, graph, G)];
        int p = 0;
        while (p < n && z[p] == G) z[p++] = 1;
        if (p == n) break;
        ++z[p];
    }
    return hist;
}

double brute_force_log_partition(int G, const NeighborGraph& graph, double beta) {
    auto hist = potts_energy_histogram(G, graph);
    const double umax = static_cast<double>(hist.size() - 1);
    double s = 0;
    for (std::size_t u = 0; u < hist.size(); ++u)
        if (hist[u] > 0) s += hist[u] * std::exp(beta * (static_cast<double>(u) - umax));
    return beta * umax + std::log(s);
}

void gibbs_prior_sweep(std::vector<int>& z, int G, double beta, const NeighborGraph& graph,
                       Rng& rng) {
    // Degrees are at most 8, so exp(beta*m) is a 9-entry lookup.
    std::array<double, 9> ew;
    for (int m = 0; m <= 8; ++m) ew[m] = std::exp(beta * m);
    std::vector<int> count(G + 1);
    const int n = graph.n();
    for (int i = 0; i < n; ++i) {
        std::fill(count.begin(), count.end(), 0);
        for (int j : graph.neigh(i)) ++count[z[j]];
        double total = 0;
        for (int g = 1; g <= G; ++g) total += ew[count[g]];
        double u = rng.uniform() * total;
        int pick = G;
        double acc = 0;
        for (int g = 1; g <= G; ++g) {
            acc += ew[count[g]];
            if (u < acc) {
                pick = g;
                break;
            }
        }
        z[i] = pick;
    }
}

PartitionTable estimate_partition(int G, const NeighborGraph& graph, double beta_max,
                                  double grid_step, const McConfig& mc, int threads) {
    if (!(beta_max > 0) || !(grid_step > 0))
        throw std::invalid_argument("beta_max and grid_step must be > 0");
    if (G < 2) throw std::invalid_argument("G must be >= 2");
    if (mc.sweeps < 1 || mc.burnin < 0) throw std::invalid_argument("invalid MC settings");

    std::vector<double> grid;
    for (int k = 0;; ++k) {
        double b = k * grid_step;
        if (b >= beta_max - 1e-12) {
            grid.push_back(beta_max);
            break;
        }
        grid.push_back(b);
    }

    const int n = graph.n();
    const int K = static_cast<int>(grid.size());
    std::vector<double> mean_u(K, 0.0);
    parallel_for(K, threads, [&](std::int64_t k) {
        Rng rng = Rng::stream(mc.seed, static_cast<std::uint64_t>(k));
        std::vector<int> z(n);
        for (int i = 0; i < n; ++i) z[i] = 1 + static_cast<int>(rng.below(G));
        const double beta = grid[k];
        for (int s = 0; s < mc.burnin; ++s) gibbs_prior_sweep(z, G, beta, graph, rng);
        double acc = 0;
        for (int s = 0; s < mc.sweeps; ++s) {
            gibbs_prior_sweep(z, G, beta, graph, rng);
            acc += static_cast<double>(potts_energy(z, graph, G));
        }
        mean_u[k] = acc / mc.sweeps;
    });

    PartitionTable tab;
    tab.nx = graph.nx;
    tab.ny = graph.ny;
    tab.G = G;
    tab.beta_grid = grid;
    tab.mc_samples = mc.sweeps;
    tab.mc_burnin = mc.burnin;
    tab.seed = mc.seed;
    tab.log_c.assign(K, 0.0);
    const double base = n * std::log(static_cast<double>(G));
    tab.log_c[0] = base;
    double cum = 0;
    for (int k = 1; k < K; ++k) {
        cum += 0.5 * (mean_u[k - 1] + mean_u[k]) * (grid[k] - grid[k - 1]);
        tab.log_c[k] = base + cum;
    }
    return tab;
}

void PartitionTable::validate() const {
    if (nx < 1 || ny < 1 || G < 2) throw std::invalid_argument("partition table: bad lattice/G");
    if (beta_grid.size() < 2 || beta_grid.size() != log_c.size())
        throw std::invalid_argument("partition table: grid/log_c size mismatch");
    if (beta_grid.front() != 0.0)
        throw std::invalid_argument("partition table: grid must start at beta=0");
    for (std::size_t k = 1; k < beta_grid.size(); ++k)
        if (!(beta_grid[k] > beta_grid[k - 1]))
            throw std::invalid_argument("partition table: grid must ascend");
    const double base = static_cast<double>(nx) * ny * std::log(static_cast<double>(G));
    if (std::abs(log_c.front() - base) > 1e-9 * std::max(1.0, base))
        throw std::invalid_argument("partition table: log C(0) != n ln G");
    for (std::size_t k = 1; k < log_c.size(); ++k)
        if (log_c[k] < log_c[k - 1] - 1e-12)
            throw std::invalid_argument("partition table: log C must be non-decreasing");
}

double PartitionTable::log_c_at(double beta) const {
    if (beta < beta_grid.front() - 1e-12 || beta > beta_grid.back() + 1e-12)
        throw std::invalid_argument("beta outside partition table range");
    beta = std::clamp(beta, beta_grid.front(), beta_grid.back());
    auto it = std::upper_bound(beta_grid.begin(), beta_grid.end(), beta);
    if (it == beta_grid.begin()) return log_c.front();
    if (it == beta_grid.end()) return log_c.back();
    std::size_t hi = static_cast<std::size_t>(it - beta_grid.begin());
    std::size_t lo = hi - 1;
    double w = (beta - beta_grid[lo]) / (beta_grid[hi] - beta_grid[lo]);
    return (1.0 - w) * log_c[lo] + w * log_c[hi];
}

double log_potts_prior(const std::vector<int>& z, double beta, const PartitionTable& table,
                       const NeighborGraph& graph) {
    if (graph.nx != table.nx || graph.ny != table.ny)
        throw std::invalid_argument("partition table lattice does not match graph");
    long u = potts_energy(z, graph, table.G);
    return beta * static_cast<double>(u) - table.log_c_at(beta);
}

namespace {

std::string sidecar_path(const std::string& csv_path) {
    std::filesystem::path p(csv_path);
    p.replace_extension(".json");
    return p.string();
}

}  // namespace

void PartitionTable::write(const std::string& csv_path) const {
    validate();
    csv::Writer wr(csv_path);
    wr.row({"beta", "log_c"});
    for (std::size_t k = 0; k < beta_grid.size(); ++k)
        wr.row({csv::format_double(beta_grid[k]), csv::format_double(log_c[k])});

    nlohmann::json j;
    j["nx"] = nx;
    j["ny"] = ny;
    j["G"] = G;
    j["mc_samples"] = mc_samples;
    j["mc_burnin"] = mc_burnin;
    j["seed"] = seed;
    std::ofstream out(sidecar_path(csv_path), std::ios::binary);
    if (!out) throw std::runtime_error("cannot write partition table sidecar");
    out << j.dump(2) << "\n";
}

PartitionTable PartitionTable::read(const std::string& csv_path) {
    csv::Table t = csv::read_file(csv_path);
    PartitionTable tab;
    for (const auto& row : t.rows) {
        tab.beta_grid.push_back(csv::to_double(row[t.column("beta")]));
        tab.log_c.push_back(csv::to_double(row[t.column("log_c")]));
    }
    std::ifstream in(sidecar_path(csv_path), std::ios::binary);
    if (!in) throw std::invalid_argument("missing partition table sidecar for " + csv_path);
    nlohmann::json j = nlohmann::json::parse(in);
    tab.nx = j.at("nx").get<int>();
    tab.ny = j.at("ny").get<int>();
    tab.G = j.at("G").get<int>();
    tab.mc_samples = j.at("mc_samples").get<int>();
    tab.mc_burnin = j.at("mc_burnin").get<int>();
    tab.seed = j.at("seed").get<std::uint64_t>();
    tab.validate();
    return tab;
}

PartitionTable load_or_compute_table(const std::string& cache_dir, int nx, int ny, int G,
                                     double beta_max, double grid_step, const McConfig& mc,
                                     int threads) {
    namespace fs = std::filesystem;
    fs::create_directories(cache_dir);
    fs::path file = fs::path(cache_dir) /
                    ("potts_" + std::to_string(nx) + "x" + std::to_string(ny) + "_g" +
                     std::to_string(G) + ".csv");
    if (fs::exists(file)) {
        try {
            PartitionTable tab = PartitionTable::read(file.string());
            bool grid_ok = std::abs(tab.beta_max() - beta_max) < 1e-12 &&
                           tab.beta_grid.size() >= 2 &&
                           std::abs(tab.beta_grid[1] - tab.beta_grid[0] - grid_step) < 1e-12;
            if (tab.nx == nx && tab.ny == ny && tab.G == G && grid_ok &&
                tab.mc_samples == mc.sweeps && tab.mc_burnin == mc.burnin && tab.seed == mc.seed)
                return tab;
        } catch (const std::exception&) {
            // fall through and recompute
        }
    }
    PartitionTable tab = estimate_partition(G, NeighborGraph::lattice8(nx, ny), beta_max,
                                            grid_step, mc, threads);
    tab.write(file.string());
    return tab;
}

}  // namespace dpet
