#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "dpet/frames.hpp"
#include "dpet/image.hpp"
#include "dpet/input_function.hpp"
#include "dpet/kinetics.hpp"
#include "dpet/potts.hpp"
#include "dpet/rng.hpp"

namespace dpet {

// Prior support. Unbounded uniform limits are represented by the finite cap
// 1e3 so random-walk proposal arithmetic stays finite; support checks use the
// caps. a_K1 > 0 separates kinetic components from the noise component.
struct Priors {
    double k1_lo = 0.3;
    double k1_hi = 1e3;
    double k2_lo = 0.0;
    double k2_hi = 1e3;
    double noise_lo = 0.0;
    double noise_hi = 1e3;
    double sigma_a = 0.001;
    double sigma_b = 0.001;
    double beta_max = 1.0;
    bool spillover = false;
    double f_lo = 0.0;
    double f_hi = 1.0;

    static Priors simulation();        // a_K1 = 0.3
    static Priors spillover_preset();  // a_K1 = 0.1, b_K1 = 1, fractions on
    void validate() const;
};

// Random-walk proposal standard deviations.
struct ProposalScales {
    double k1 = 0.006;
    double k2 = 0.001;
    double noise_mean = 0.00013;
    double beta = 0.002;
    double f = 0.01;

    static ProposalScales simulation();  // 0.006, 0.001, 0.00013, 0.002
    static ProposalScales pig();         // 0.005, 0.003, 0.001, 0.004, f 0.01
    ProposalScales scaled(double m) const;
    void validate() const;
};

// Global multiplier applied to ProposalScales::simulation() that keeps all
// four acceptance rates inside [0.1, 0.6] on the default phantom at the
// default noise level.  Calibrated empirically; see README.
inline constexpr double kDefaultProposalMultiplier = 12.0;

enum class ChainMode { FULL_POSTERIOR, MAP_ONLY };

struct MCMCConfig {
    int iterations = 10000;
    int burn_in = 4000;
    int thin = 10;
    std::uint64_t seed = 0;
    ChainMode mode = ChainMode::FULL_POSTERIOR;
    int G = 3;               // component count including the noise component
    bool fix_beta = false;   // skip the beta update (test hook)
    bool fix_z = false;      // skip the label sweep (test hook)
    void validate() const;
};

// Component G is the noise component g*; components 1..G-1 are kinetic.
struct ChainState {
    std::vector<int> z;                    // per-voxel labels 1..G
    std::vector<KineticParams> kin;        // size G-1
    std::vector<SpilloverFractions> frac;  // size G-1 when spill-over enabled
    std::vector<double> noise_mean;        // length T
    std::vector<double> sigma2;            // length T, > 0
    double beta = 0.1;
};

struct AcceptanceRates {
    long k1_prop = 0, k1_acc = 0;
    long k2_prop = 0, k2_acc = 0;
    long f_prop = 0, f_acc = 0;
    long noise_prop = 0, noise_acc = 0;
    long beta_prop = 0, beta_acc = 0;

    static double rate(long acc, long prop) {
        return prop > 0 ? static_cast<double>(acc) / static_cast<double>(prop) : 0.0;
    }
    double k1() const { return rate(k1_acc, k1_prop); }
    double k2() const { return rate(k2_acc, k2_prop); }
    double f() const { return rate(f_acc, f_prop); }
    double noise() const { return rate(noise_acc, noise_prop); }
    double beta() const { return rate(beta_acc, beta_prop); }
};

struct SampleRow {
    int iter = 0;
    int component = 0;  // 1..G-1
    double k1 = 0, k2 = 0, f_lv = 0, f_rv = 0;
};

struct ComponentSummary {
    double k1_mean = 0, k1_lo = 0, k1_hi = 0;
    double k2_mean = 0, k2_lo = 0, k2_hi = 0;
};

struct PosteriorSummary {
    int G = 0, n = 0, T = 0;
    std::vector<SampleRow> samples;     // relabeled, FULL_POSTERIOR only
    std::vector<double> beta_samples;   // thinned post-burn-in draws
    std::vector<double> logpost_trace;  // one entry per iteration, unthinned
    ChainState map_state;               // relabeled
    double map_log_posterior = -std::numeric_limits<double>::infinity();
    double map_log_likelihood = -std::numeric_limits<double>::infinity();
    std::vector<ComponentSummary> components;  // size G-1
    std::vector<double> membership;            // n x G row-major frequencies
    AcceptanceRates accept;
};

double log_ig_pdf(double x, double a, double b);

// Metropolis-within-Gibbs sampler over (kin, noise_mean, sigma2, z, beta).
// Per-component data sufficient statistics (count, per-frame sum and sum of
// squares) make every Metropolis ratio O(T).
class MixtureSampler {
public:
    MixtureSampler(const DynamicImage& img, const InputFunction& input, const FrameScheme& frames,
                   const Priors& priors, const ProposalScales& scales, int G,
                   const PartitionTable& table,
                   std::optional<SpilloverInputs> spill = std::nullopt);

    void init_state(Rng& rng);  // K-means labels, per-cluster LM fits, beta=0.1
    ChainState state_from_labels(const std::vector<int>& labels) const;
    void set_state(const ChainState& s);
    const ChainState& state() const { return state_; }
    int G() const { return G_; }
    int T() const { return T_; }
    int n() const { return n_; }

    // One full iteration: kinetic params, noise mean, variances, labels, beta.
    void iterate(Rng& rng, bool fix_z = false, bool fix_beta = false);

    void update_k1(Rng& rng);
    void update_k2(Rng& rng);
    void update_fractions(Rng& rng);
    void update_noise_mean(Rng& rng);
    void update_sigma(Rng& rng);
    void update_z(Rng& rng);
    void update_beta(Rng& rng);

    double log_likelihood() const;  // complete-data: Gaussian terms + Potts
    double log_posterior() const;

    // Log acceptance ratios for hypothetical proposals (test hooks; -inf when
    // the proposal leaves the prior support).
    double k1_log_alpha(int g, double proposed) const;
    double k2_log_alpha(int g, double proposed) const;
    double flv_log_alpha(int g, double proposed) const;
    double frv_log_alpha(int g, double proposed) const;
    double noise_log_alpha(int t, double proposed) const;
    double beta_log_alpha(double proposed) const;
    // Normalized categorical probabilities for the label of voxel i given the
    // current neighbors.
    std::vector<double> z_conditional(int i) const;

    const AcceptanceRates& counters() const { return acc_; }
    void reset_counters() { acc_ = AcceptanceRates{}; }

private:
    void rebuild_stats();
    void refresh_mu(int g);  // recompute component-mean TAC from parameters
    double ss(int g, int t, double mu) const;  // sum over members of (y - mu)^2
    double comp_delta(int g, const std::vector<double>& mu_new) const;
    bool in_support(const ChainState& s) const;
    void z_weights(int i, const double* inv_s2, std::vector<double>& w) const;

    const DynamicImage& img_;
    const InputFunction& input_;
    const FrameScheme& frames_;
    Priors priors_;
    ProposalScales scales_;
    int G_, T_, n_;
    const PartitionTable& table_;
    std::optional<SpilloverInputs> spill_;
    NeighborGraph graph_;

    ChainState state_;
    std::vector<double> mu_;      // G x T component means, row-major
    std::vector<long> count_;     // members per component
    std::vector<double> sum_;     // G x T member sums
    std::vector<double> sumsq_;   // G x T member sums of squares
    AcceptanceRates acc_;
};

PosteriorSummary run_mcmc(const DynamicImage& img, const InputFunction& input,
                          const FrameScheme& frames, const Priors& priors,
                          const ProposalScales& scales, const MCMCConfig& cfg,
                          const PartitionTable& table,
                          std::optional<SpilloverInputs> spill = std::nullopt);

// BIC = -2 log f + DF (ln n - ln 2pi); DF = 2(G-1) + 2T + 1, or
// 4(G-1) + 2T + 1 when spill-over fractions are fitted.
int bic_degrees_of_freedom(int G, int T, bool spillover);
double bic(double loglik, int G, int T, std::int64_t n, bool spillover);

struct BicRow {
    int G = 0;
    double loglik = 0;
    int DF = 0;
    double bic = 0;
};

struct SelectionResult {
    int best_g = 0;
    std::vector<BicRow> rows;
};

using TableProvider = std::function<PartitionTable(int)>;

// MAP_ONLY chain per G; smallest BIC wins. Chain g uses seed base_cfg.seed + g.
SelectionResult select_components(const DynamicImage& img, const InputFunction& input,
                                  const FrameScheme& frames, const Priors& priors,
                                  const ProposalScales& scales, const MCMCConfig& base_cfg,
                                  int g_min, int g_max, const TableProvider& tables,
                                  std::optional<SpilloverInputs> spill = std::nullopt);

// Canonical per-sample relabeling: within each recorded iteration the kinetic
// components are reordered by ascending K1 (noise component G pinned).
// Optional per-sample label maps are permuted consistently; rows must be
// grouped by iteration.
void relabel_samples(int G, std::vector<SampleRow>& rows,
                     std::vector<std::vector<int>>* z_draws = nullptr);
void relabel_state(ChainState& s);

void write_samples_csv(const std::string& path, const std::vector<SampleRow>& rows,
                       bool spillover);
void write_beta_csv(const std::string& path, const std::vector<double>& beta_samples);
void write_bic_csv(const std::string& path, const std::vector<BicRow>& rows);

}  // namespace dpet
