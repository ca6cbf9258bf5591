#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "dpet/potts.hpp"
#include "dpet/rng.hpp"

using namespace dpet;

TEST_SUITE("potts") {

TEST_CASE("8-neighborhood lattice has the expected edge count") {
    auto count = [](int nx, int ny) {
        return (nx - 1) * ny + nx * (ny - 1) + 2 * (nx - 1) * (ny - 1);
    };
    for (auto [nx, ny] : {std::pair{2, 2}, {3, 3}, {4, 5}, {32, 32}}) {
        NeighborGraph g = NeighborGraph::lattice8(nx, ny);
        CHECK(static_cast<int>(g.edges.size()) == count(nx, ny));
        // CSR adjacency is symmetric: total degree = 2 * edges
        CHECK(g.offsets.back() == 2 * static_cast<int>(g.edges.size()));
    }
    NeighborGraph g = NeighborGraph::lattice8(3, 3);
    CHECK(g.neigh(4).size() == 8);  // centre voxel sees all eight
    CHECK(g.neigh(0).size() == 3);  // corner sees three
}

TEST_CASE("energy counts agreeing edges") {
    NeighborGraph g = NeighborGraph::lattice8(2, 2);
    CHECK(potts_energy({1, 1, 1, 1}, g, 2) == 6);
    CHECK(potts_energy({1, 2, 2, 1}, g, 2) == 2);  // only the two diagonals agree
    CHECK(potts_energy({1, 2, 1, 2}, g, 2) == 2);  // vertical pairs agree
    CHECK(potts_energy({1, 2, 3, 4}, g, 4) == 0);
    CHECK_THROWS_AS(potts_energy({1, 2, 3}, g, 3), std::invalid_argument);
    CHECK_THROWS_AS(potts_energy({1, 2, 5, 1}, g, 4), std::invalid_argument);
}

TEST_CASE("energy histogram enumerates all configurations") {
    NeighborGraph g = NeighborGraph::lattice8(2, 2);
    auto hist = potts_energy_histogram(2, g);
    REQUIRE(hist.size() == 7);  // U = 0..6
    CHECK(std::accumulate(hist.begin(), hist.end(), 0L) == 16);
    CHECK(hist[6] == 2);  // two all-equal configurations
    // symmetric lattice: energy 2 realized by the six balanced splits
    CHECK(hist[2] == 6);
}

TEST_CASE("brute force matches the histogram-based partition sum") {
    NeighborGraph g = NeighborGraph::lattice8(3, 3);
    for (int G : {2, 3}) {
        auto hist = potts_energy_histogram(G, g);
        for (double beta : {0.0, 0.1, 0.5, 1.0}) {
            // independent reduction of the same enumeration
            double lo = 0.0, hi = 0.0;
            double m = beta * static_cast<double>(hist.size() - 1);
            double s = 0.0;
            for (std::size_t u = 0; u < hist.size(); ++u)
                s += static_cast<double>(hist[u]) * std::exp(beta * static_cast<double>(u) - m);
            (void)lo;
            (void)hi;
            const double want = m + std::log(s);
            CHECK(brute_force_log_partition(G, g, beta) == doctest::Approx(want).epsilon(1e-12));
        }
    }
    CHECK(brute_force_log_partition(2, g, 0.0) == doctest::Approx(9.0 * std::log(2.0)));
}

TEST_CASE("brute force refuses exploding state spaces") {
    NeighborGraph g = NeighborGraph::lattice8(6, 6);
    CHECK_THROWS_AS(brute_force_log_partition(4, g, 0.1), std::invalid_argument);
}

TEST_CASE("prior Gibbs sweeps reach the exact energy distribution") {
    NeighborGraph g = NeighborGraph::lattice8(3, 3);
    const int G = 2;
    const double beta = 0.3;
    auto hist = potts_energy_histogram(G, g);
    // exact E[U] and Var[U] from the enumeration
    double z = 0.0, m1 = 0.0, m2 = 0.0;
    for (std::size_t u = 0; u < hist.size(); ++u) {
        const double w = static_cast<double>(hist[u]) * std::exp(beta * static_cast<double>(u));
        z += w;
        m1 += w * static_cast<double>(u);
        m2 += w * static_cast<double>(u) * static_cast<double>(u);
    }
    m1 /= z;
    m2 /= z;
    const double var = m2 - m1 * m1;

    Rng rng(17);
    std::vector<int> zed(9, 1);
    for (int s = 0; s < 500; ++s) gibbs_prior_sweep(zed, G, beta, g, rng);
    const int n_samp = 4000;
    double sum = 0.0;
    for (int s = 0; s < n_samp; ++s) {
        gibbs_prior_sweep(zed, G, beta, g, rng);
        sum += static_cast<double>(potts_energy(zed, g, G));
    }
    const double mean = sum / n_samp;
    // autocorrelated draws: allow a generous effective-sample-size factor
    const double se = std::sqrt(var / (n_samp / 10.0));
    CHECK(std::abs(mean - m1) < 4.0 * se);
}

TEST_CASE("thermodynamic integration starts exactly at n ln G") {
    NeighborGraph g = NeighborGraph::lattice8(3, 3);
    McConfig mc{800, 200, 5};
    PartitionTable t = estimate_partition(3, g, 0.6, 0.1, mc, 1);
    CHECK(t.beta_grid.front() == 0.0);
    CHECK(t.log_c.front() == doctest::Approx(9.0 * std::log(3.0)).epsilon(1e-15));
    for (std::size_t k = 1; k < t.log_c.size(); ++k)
        CHECK(t.log_c[k] > t.log_c[k - 1]);  // E[U] > 0 makes log C increasing
}

TEST_CASE("thermodynamic integration tracks brute force on a 3x3 lattice") {
    NeighborGraph g = NeighborGraph::lattice8(3, 3);
    McConfig mc{3000, 500, 11};
    PartitionTable t = estimate_partition(2, g, 1.0, 0.05, mc, 0);
    for (double beta : {0.3, 0.6, 1.0}) {
        const double want = brute_force_log_partition(2, g, beta);
        CHECK(std::abs(t.log_c_at(beta) - want) / want < 0.02);
    }
}

TEST_CASE("estimates are reproducible and thread-invariant") {
    NeighborGraph g = NeighborGraph::lattice8(4, 4);
    McConfig mc{400, 100, 21};
    PartitionTable a = estimate_partition(3, g, 0.5, 0.1, mc, 1);
    PartitionTable b = estimate_partition(3, g, 0.5, 0.1, mc, 4);
    CHECK(a.log_c == b.log_c);
}

TEST_CASE("table interpolation and bounds") {
    PartitionTable t;
    t.nx = 2;
    t.ny = 1;
    t.G = 2;
    t.beta_grid = {0.0, 0.5, 1.0};
    t.log_c = {std::log(4.0), 1.7, 2.1};
    t.mc_samples = 1;
    t.mc_burnin = 0;
    t.validate();
    CHECK(t.log_c_at(0.0) == doctest::Approx(std::log(4.0)));
    CHECK(t.log_c_at(0.25) == doctest::Approx(0.5 * (std::log(4.0) + 1.7)));
    CHECK(t.log_c_at(1.0) == doctest::Approx(2.1));
    CHECK_THROWS_AS(t.log_c_at(1.5), std::invalid_argument);
    CHECK_THROWS_AS(t.log_c_at(-0.1), std::invalid_argument);
}

TEST_CASE("table csv round-trip and disk cache") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "dpet_test_ptab";
    fs::remove_all(dir);
    fs::create_directories(dir);

    NeighborGraph g = NeighborGraph::lattice8(3, 3);
    McConfig mc{300, 100, 2};
    PartitionTable t = estimate_partition(2, g, 0.4, 0.1, mc, 1);
    const auto path = (dir / "tab.csv").string();
    t.write(path);
    PartitionTable back = PartitionTable::read(path);
    CHECK(back.nx == t.nx);
    CHECK(back.G == t.G);
    CHECK(back.beta_grid == t.beta_grid);
    CHECK(back.log_c == t.log_c);
    CHECK(back.seed == t.seed);

    PartitionTable c1 = load_or_compute_table(dir.string(), 3, 3, 2, 0.4, 0.1, mc, 1);
    PartitionTable c2 = load_or_compute_table(dir.string(), 3, 3, 2, 0.4, 0.1, mc, 1);
    CHECK(c1.log_c == c2.log_c);
    // cache files are keyed by lattice and G
    bool found = false;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().filename().string().find("3x3") != std::string::npos) found = true;
    CHECK(found);
}

TEST_CASE("potts prior log density uses the interpolated constant") {
    NeighborGraph g = NeighborGraph::lattice8(3, 3);
    McConfig mc{400, 100, 3};
    PartitionTable t = estimate_partition(2, g, 0.5, 0.1, mc, 1);
    std::vector<int> z(9, 1);
    const double beta = 0.35;
    const double want = beta * 20.0 - t.log_c_at(beta);  // all 20 edges agree
    CHECK(log_potts_prior(z, beta, t, g) == doctest::Approx(want).epsilon(1e-12));
}

}  // TEST_SUITE
