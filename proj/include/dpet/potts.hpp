#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dpet/rng.hpp"

namespace dpet {

// 8-neighborhood lattice graph in CSR form plus an explicit i<j edge list.
struct NeighborGraph {
    int nx = 0;
    int ny = 0;
    std::vector<int> offsets;    // size n+1
    std::vector<int> neighbors;  // concatenated adjacency
    std::vector<std::pair<int, int>> edges;

    int n() const { return nx * ny; }

    std::span<const int> neigh(int i) const {
        return {neighbors.data() + offsets[i],
                static_cast<std::size_t>(offsets[i + 1] - offsets[i])};
    }

    static NeighborGraph lattice8(int nx, int ny);
};

struct McConfig {
    int sweeps = 2000;
    int burnin = 500;
    std::uint64_t seed = 0;
};

// log C(beta) on an ascending beta grid starting at 0, log_c[0] = n ln G.
struct PartitionTable {
    int nx = 0;
    int ny = 0;
    int G = 0;
    std::vector<double> beta_grid;
    std::vector<double> log_c;
    int mc_samples = 0;
    int mc_burnin = 0;
    std::uint64_t seed = 0;

    double beta_max() const { return beta_grid.back(); }
    double log_c_at(double beta) const;  // linear interpolation on the grid
    void validate() const;

    // CSV beta,log_c plus a same-stem .json sidecar with lattice and MC settings.
    void write(const std::string& csv_path) const;
    static PartitionTable read(const std::string& csv_path);
};

// U(z): number of edges whose endpoints share a label. Labels are 1..G.
long potts_energy(const std::vector<int>& z, const NeighborGraph& graph, int G);

// Counts of configurations per energy value U = 0..|edges| by enumeration.
std::vector<long> potts_energy_histogram(int G, const NeighborGraph& graph);

// log sum_z exp(beta U(z)) by exhaustive enumeration; refuses G^n > 1e7.
double brute_force_log_partition(int G, const NeighborGraph& graph, double beta);

// One sequential single-site Gibbs sweep over the Potts prior at fixed beta.
void gibbs_prior_sweep(std::vector<int>& z, int G, double beta, const NeighborGraph& graph,
                       Rng& rng);

// Thermodynamic integration: log C(beta) = n ln G + int_0^beta E[U] dbeta',
// E[U] estimated per grid point by single-site Gibbs, trapezoid in between.
PartitionTable estimate_partition(int G, const NeighborGraph& graph, double beta_max,
                                  double grid_step, const McConfig& mc, int threads = 0);

// beta * U(z) - log C(beta) with log C interpolated from the table.
double log_potts_prior(const std::vector<int>& z, double beta, const PartitionTable& table,
                       const NeighborGraph& graph);

// Disk cache keyed by (nx, ny, G); recomputes when the stored grid or MC
// settings differ from the request.
PartitionTable load_or_compute_table(const std::string& cache_dir, int nx, int ny, int G,
                                     double beta_max, double grid_step, const McConfig& mc,
                                     int threads = 0);

}  // namespace dpet
