#include "dpet/smm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "dpet/csv.hpp"
#include "dpet/scf.hpp"

namespace dpet {

Priors Priors::simulation() { return Priors{}; }

Priors Priors::spillover_preset() {
    Priors p;
    p.k1_lo = 0.1;
    p.k1_hi = 1.0;
    p.spillover = true;
    return p;
}

void Priors::validate() const {
    if (!(k1_lo > 0)) throw std::invalid_argument("priors: a_K1 must be > 0");
    if (!(k1_lo < k1_hi) || !(k2_lo <= k2_hi) || !(noise_lo <= noise_hi))
        throw std::invalid_argument("priors: empty support interval");
    if (k2_lo < 0 || noise_lo < 0) throw std::invalid_argument("priors: negative lower bound");
    if (!(sigma_a > 0) || !(sigma_b > 0))
        throw std::invalid_argument("priors: IG hyperparameters must be > 0");
    if (!(beta_max > 0)) throw std::invalid_argument("priors: b_beta must be > 0");
    if (spillover && !(f_lo >= 0 && f_lo < f_hi && f_hi <= 1))
        throw std::invalid_argument("priors: fraction bounds must satisfy 0 <= lo < hi <= 1");
}

ProposalScales ProposalScales::simulation() { return ProposalScales{}; }

ProposalScales ProposalScales::pig() {
    ProposalScales s;
    s.k1 = 0.005;
    s.k2 = 0.003;
    s.noise_mean = 0.001;
    s.beta = 0.004;
    s.f = 0.01;
    return s;
}

ProposalScales ProposalScales::scaled(double m) const {
    if (!(m > 0)) throw std::invalid_argument("proposal multiplier must be > 0");
    ProposalScales s = *this;
    s.k1 *= m;
    s.k2 *= m;
    s.noise_mean *= m;
    s.beta *= m;
    s.f *= m;
    return s;
}

void ProposalScales::validate() const {
    if (!(k1 > 0 && k2 > 0 && noise_mean > 0 && beta > 0 && f > 0))
        throw std::invalid_argument("proposal scales must be > 0");
}

void MCMCConfig::validate() const {
    if (iterations < 1) throw std::invalid_argument("mcmc: iterations must be >= 1");
    if (burn_in < 0 || burn_in >= iterations)
        throw std::invalid_argument("mcmc: burn_in must be in [0, iterations)");
    if (thin < 1) throw std::invalid_argument("mcmc: thin must be >= 1");
    if (G < 2) throw std::invalid_argument("mcmc: G must be >= 2");
}

double log_ig_pdf(double x, double a, double b) {
    if (!(x > 0)) return -std::numeric_limits<double>::infinity();
    return a * std::log(b) - std::lgamma(a) - (a + 1.0) * std::log(x) - b / x;
}

MixtureSampler::MixtureSampler(const DynamicImage& img, const InputFunction& input,
                               const FrameScheme& frames, const Priors& priors,
                               const ProposalScales& scales, int G, const PartitionTable& table,
                               std::optional<SpilloverInputs> spill)
    : img_(img),
      input_(input),
      frames_(frames),
      priors_(priors),
      scales_(scales),
      G_(G),
      T_(img.frames()),
      n_(img.voxels()),
      table_(table),
      spill_(std::move(spill)),
      graph_(NeighborGraph::lattice8(img.nx(), img.ny())) {
    priors_.validate();
    scales_.validate();
    if (G_ < 2) throw std::invalid_argument("smm: G must be >= 2");
    if (img_.frames() != static_cast<int>(frames_.size()))
        throw std::invalid_argument("smm: image frame count does not match frame scheme");
    if (table_.G != G_)
        throw std::invalid_argument("smm: partition table was computed for a different G");
    if (table_.nx != img_.nx() || table_.ny != img_.ny())
        throw std::invalid_argument("smm: partition table lattice does not match image");
    if (table_.beta_max() < priors_.beta_max - 1e-12)
        throw std::invalid_argument("smm: partition table does not cover [0, b_beta]");
    if (priors_.spillover && !spill_.has_value())
        throw std::invalid_argument("smm: spill-over priors require blood-pool inputs");
    img_.validate_finite();
}

void MixtureSampler::refresh_mu(int g) {
    if (g == G_ - 1) {
        std::copy(state_.noise_mean.begin(), state_.noise_mean.end(),
                  mu_.begin() + static_cast<std::size_t>(g) * T_);
        return;
    }
    std::vector<double> m =
        priors_.spillover
            ? spillover_frame_tac(state_.kin[g], state_.frac[g], *spill_, frames_)
            : frame_averaged_tac(state_.kin[g], input_, frames_);
    std::copy(m.begin(), m.end(), mu_.begin() + static_cast<std::size_t>(g) * T_);
}

void MixtureSampler::rebuild_stats() {
    count_.assign(G_, 0);
    sum_.assign(static_cast<std::size_t>(G_) * T_, 0.0);
    sumsq_.assign(static_cast<std::size_t>(G_) * T_, 0.0);
    for (int i = 0; i < n_; ++i) {
        const int g = state_.z[i] - 1;
        ++count_[g];
        auto y = img_.voxel(i);
        double* s = sum_.data() + static_cast<std::size_t>(g) * T_;
        double* q = sumsq_.data() + static_cast<std::size_t>(g) * T_;
        for (int t = 0; t < T_; ++t) {
            s[t] += y[t];
            q[t] += y[t] * y[t];
        }
    }
    mu_.assign(static_cast<std::size_t>(G_) * T_, 0.0);
    for (int g = 0; g < G_; ++g) refresh_mu(g);
}

void MixtureSampler::set_state(const ChainState& s) {
    if (static_cast<int>(s.z.size()) != n_ || static_cast<int>(s.kin.size()) != G_ - 1 ||
        static_cast<int>(s.noise_mean.size()) != T_ || static_cast<int>(s.sigma2.size()) != T_)
        throw std::invalid_argument("smm: chain state dimensions do not match sampler");
    if (priors_.spillover && static_cast<int>(s.frac.size()) != G_ - 1)
        throw std::invalid_argument("smm: missing spill-over fractions in state");
    for (int v : s.z)
        if (v < 1 || v > G_) throw std::invalid_argument("smm: label out of range");
    state_ = s;
    rebuild_stats();
}

double MixtureSampler::ss(int g, int t, double mu) const {
    const std::size_t k = static_cast<std::size_t>(g) * T_ + t;
    return sumsq_[k] - 2.0 * mu * sum_[k] + static_cast<double>(count_[g]) * mu * mu;
}

double MixtureSampler::comp_delta(int g, const std::vector<double>& mu_new) const {
    // log-likelihood change when component g's mean moves from mu_ to mu_new
    double d = 0;
    const double* mo = mu_.data() + static_cast<std::size_t>(g) * T_;
    const double* s = sum_.data() + static_cast<std::size_t>(g) * T_;
    const double ng = static_cast<double>(count_[g]);
    for (int t = 0; t < T_; ++t) {
        const double diff = mu_new[t] - mo[t];
        d += diff * (2.0 * s[t] - ng * (mu_new[t] + mo[t])) / (2.0 * state_.sigma2[t]);
    }
    return d;
}

bool MixtureSampler::in_support(const ChainState& s) const {
    for (const auto& k : s.kin)
        if (!(k.K1 >= priors_.k1_lo && k.K1 <= priors_.k1_hi && k.k2 >= priors_.k2_lo &&
              k.k2 <= priors_.k2_hi))
            return false;
    if (priors_.spillover)
        for (const auto& f : s.frac)
            if (!(f.f_lv >= priors_.f_lo && f.f_lv <= priors_.f_hi && f.f_rv >= priors_.f_lo &&
                  f.f_rv <= priors_.f_hi && f.f_lv + f.f_rv <= 1.0))
                return false;
    for (double m : s.noise_mean)
        if (!(m >= priors_.noise_lo && m <= priors_.noise_hi)) return false;
    for (double v : s.sigma2)
        if (!(v > 0) || !std::isfinite(v)) return false;
    if (!(s.beta >= 0 && s.beta <= priors_.beta_max)) return false;
    return true;
}

double MixtureSampler::log_likelihood() const {
    double ll = 0;
    for (int g = 0; g < G_; ++g) {
        if (count_[g] == 0) continue;
        const double* mo = mu_.data() + static_cast<std::size_t>(g) * T_;
        for (int t = 0; t < T_; ++t) {
            const double s2 = state_.sigma2[t];
            ll += -0.5 * count_[g] * std::log(2.0 * M_PI * s2) - ss(g, t, mo[t]) / (2.0 * s2);
        }
    }
    ll += log_potts_prior(state_.z, state_.beta, table_, graph_);
    return ll;
}

double MixtureSampler::log_posterior() const {
    if (!in_support(state_)) return -std::numeric_limits<double>::infinity();
    double lp = log_likelihood();
    for (int t = 0; t < T_; ++t)
        lp += log_ig_pdf(state_.sigma2[t], priors_.sigma_a, priors_.sigma_b);
    // flat-prior normalizing constants (exact within support)
    lp -= (G_ - 1) *
          (std::log(priors_.k1_hi - priors_.k1_lo) + std::log(priors_.k2_hi - priors_.k2_lo));
    lp -= T_ * std::log(priors_.noise_hi - priors_.noise_lo);
    lp -= std::log(priors_.beta_max);
    if (priors_.spillover) lp -= 2.0 * (G_ - 1) * std::log(priors_.f_hi - priors_.f_lo);
    return lp;
}

double MixtureSampler::k1_log_alpha(int g, double proposed) const {
    if (g < 1 || g > G_ - 1) throw std::invalid_argument("component index out of range");
    if (!(proposed >= priors_.k1_lo && proposed <= priors_.k1_hi))
        return -std::numeric_limits<double>::infinity();
    KineticParams trial = state_.kin[g - 1];
    trial.K1 = proposed;
    std::vector<double> mu_new =
        priors_.spillover ? spillover_frame_tac(trial, state_.frac[g - 1], *spill_, frames_)
                          : frame_averaged_tac(trial, input_, frames_);
    return comp_delta(g - 1, mu_new);
}

double MixtureSampler::k2_log_alpha(int g, double proposed) const {
    if (g < 1 || g > G_ - 1) throw std::invalid_argument("component index out of range");
    if (!(proposed >= priors_.k2_lo && proposed <= priors_.k2_hi))
        return -std::numeric_limits<double>::infinity();
    KineticParams trial = state_.kin[g - 1];
    trial.k2 = proposed;
    std::vector<double> mu_new =
        priors_.spillover ? spillover_frame_tac(trial, state_.frac[g - 1], *spill_, frames_)
                          : frame_averaged_tac(trial, input_, frames_);
    return comp_delta(g - 1, mu_new);
}

double MixtureSampler::flv_log_alpha(int g, double proposed) const {
    if (g < 1 || g > G_ - 1) throw std::invalid_argument("component index out of range");
    SpilloverFractions trial = state_.frac[g - 1];
    trial.f_lv = proposed;
    if (!(proposed >= priors_.f_lo && proposed <= priors_.f_hi &&
          trial.f_lv + trial.f_rv <= 1.0))
        return -std::numeric_limits<double>::infinity();
    return comp_delta(g - 1, spillover_frame_tac(state_.kin[g - 1], trial, *spill_, frames_));
}

double MixtureSampler::frv_log_alpha(int g, double proposed) const {
    if (g < 1 || g > G_ - 1) throw std::invalid_argument("component index out of range");
    SpilloverFractions trial = state_.frac[g - 1];
    trial.f_rv = proposed;
    if (!(proposed >= priors_.f_lo && proposed <= priors_.f_hi &&
          trial.f_lv + trial.f_rv <= 1.0))
        return -std::numeric_limits<double>::infinity();
    return comp_delta(g - 1, spillover_frame_tac(state_.kin[g - 1], trial, *spill_, frames_));
}

double MixtureSampler::noise_log_alpha(int t, double proposed) const {
    if (t < 0 || t >= T_) throw std::invalid_argument("frame index out of range");
    if (!(proposed >= priors_.noise_lo && proposed <= priors_.noise_hi))
        return -std::numeric_limits<double>::infinity();
    // diagonal covariance: only frame t's factor survives the ratio
    const int g = G_ - 1;
    const double mo = mu_[static_cast<std::size_t>(g) * T_ + t];
    const double diff = proposed - mo;
    const std::size_t k = static_cast<std::size_t>(g) * T_ + t;
    return diff * (2.0 * sum_[k] - static_cast<double>(count_[g]) * (proposed + mo)) /
           (2.0 * state_.sigma2[t]);
}

double MixtureSampler::beta_log_alpha(double proposed) const {
    if (!(proposed >= 0 && proposed <= priors_.beta_max))
        return -std::numeric_limits<double>::infinity();
    const long u = potts_energy(state_.z, graph_, G_);
    return (proposed - state_.beta) * static_cast<double>(u) + table_.log_c_at(state_.beta) -
           table_.log_c_at(proposed);
}

namespace {

inline bool mh_accept(double log_alpha, Rng& rng) {
    if (log_alpha >= 0) {
        rng.uniform_pos();  // keep the stream aligned across accept branches
        return true;
    }
    return std::log(rng.uniform_pos()) < log_alpha;
}

}  // namespace

void MixtureSampler::update_k1(Rng& rng) {
    for (int g = 1; g <= G_ - 1; ++g) {
        const double prop = state_.kin[g - 1].K1 + scales_.k1 * rng.normal();
        ++acc_.k1_prop;
        const double la = k1_log_alpha(g, prop);
        if (mh_accept(la, rng)) {
            state_.kin[g - 1].K1 = prop;
            refresh_mu(g - 1);
            ++acc_.k1_acc;
        }
    }
}

void MixtureSampler::update_k2(Rng& rng) {
    for (int g = 1; g <= G_ - 1; ++g) {
        const double prop = state_.kin[g - 1].k2 + scales_.k2 * rng.normal();
        ++acc_.k2_prop;
        const double la = k2_log_alpha(g, prop);
        if (mh_accept(la, rng)) {
            state_.kin[g - 1].k2 = prop;
            refresh_mu(g - 1);
            ++acc_.k2_acc;
        }
    }
}

void MixtureSampler::update_fractions(Rng& rng) {
    if (!priors_.spillover) return;
    for (int g = 1; g <= G_ - 1; ++g) {
        double prop = state_.frac[g - 1].f_lv + scales_.f * rng.normal();
        ++acc_.f_prop;
        if (mh_accept(flv_log_alpha(g, prop), rng)) {
            state_.frac[g - 1].f_lv = prop;
            refresh_mu(g - 1);
            ++acc_.f_acc;
        }
        prop = state_.frac[g - 1].f_rv + scales_.f * rng.normal();
        ++acc_.f_prop;
        if (mh_accept(frv_log_alpha(g, prop), rng)) {
            state_.frac[g - 1].f_rv = prop;
            refresh_mu(g - 1);
            ++acc_.f_acc;
        }
    }
}

void MixtureSampler::update_noise_mean(Rng& rng) {
    const int g = G_ - 1;
    for (int t = 0; t < T_; ++t) {
        const double prop = state_.noise_mean[t] + scales_.noise_mean * rng.normal();
        ++acc_.noise_prop;
        if (mh_accept(noise_log_alpha(t, prop), rng)) {
            state_.noise_mean[t] = prop;
            mu_[static_cast<std::size_t>(g) * T_ + t] = prop;
            ++acc_.noise_acc;
        }
    }
}

void MixtureSampler::update_sigma(Rng& rng) {
    const double shape = 0.5 * n_ + priors_.sigma_a;
    for (int t = 0; t < T_; ++t) {
        double total = 0;
        for (int g = 0; g < G_; ++g)
            if (count_[g] > 0) total += ss(g, t, mu_[static_cast<std::size_t>(g) * T_ + t]);
        const double rate = priors_.sigma_b + 0.5 * std::max(total, 0.0);
        state_.sigma2[t] = rng.inverse_gamma(shape, rate);
    }
}

void MixtureSampler::z_weights(int i, const double* inv_s2, std::vector<double>& w) const {
    auto y = img_.voxel(i);
    w.assign(G_, 0.0);
    for (int g = 0; g < G_; ++g) {
        const double* m = mu_.data() + static_cast<std::size_t>(g) * T_;
        double q = 0;
        for (int t = 0; t < T_; ++t) {
            const double r = y[t] - m[t];
            q += r * r * inv_s2[t];
        }
        w[g] = -0.5 * q;
    }
    if (state_.beta > 0) {
        for (int j : graph_.neigh(i)) w[state_.z[j] - 1] += state_.beta;
    }
    const double wmax = *std::max_element(w.begin(), w.end());
    double total = 0;
    for (double& v : w) {
        v = std::exp(v - wmax);
        total += v;
    }
    for (double& v : w) v /= total;
}

std::vector<double> MixtureSampler::z_conditional(int i) const {
    if (i < 0 || i >= n_) throw std::invalid_argument("voxel index out of range");
    std::vector<double> inv(T_);
    for (int t = 0; t < T_; ++t) inv[t] = 1.0 / state_.sigma2[t];
    std::vector<double> w;
    z_weights(i, inv.data(), w);
    return w;
}

void MixtureSampler::update_z(Rng& rng) {
    std::vector<double> inv(T_);
    for (int t = 0; t < T_; ++t) inv[t] = 1.0 / state_.sigma2[t];
    std::vector<double> p;
    for (int i = 0; i < n_; ++i) {
        z_weights(i, inv.data(), p);
        const double u = rng.uniform();
        double acc = 0;
        int pick = G_;
        for (int g = 0; g < G_; ++g) {
            acc += p[g];
            if (u < acc) {
                pick = g + 1;
                break;
            }
        }
        const int old = state_.z[i];
        if (pick != old) {
            state_.z[i] = pick;
            auto y = img_.voxel(i);
            const std::size_t ko = static_cast<std::size_t>(old - 1) * T_;
            const std::size_t kn = static_cast<std::size_t>(pick - 1) * T_;
            --count_[old - 1];
            ++count_[pick - 1];
            for (int t = 0; t < T_; ++t) {
                sum_[ko + t] -= y[t];
                sumsq_[ko + t] -= y[t] * y[t];
                sum_[kn + t] += y[t];
                sumsq_[kn + t] += y[t] * y[t];
            }
        }
    }
}

void MixtureSampler::update_beta(Rng& rng) {
    const double prop = state_.beta + scales_.beta * rng.normal();
    ++acc_.beta_prop;
    if (mh_accept(beta_log_alpha(prop), rng)) {
        state_.beta = prop;
        ++acc_.beta_acc;
    }
}

void MixtureSampler::iterate(Rng& rng, bool fix_z, bool fix_beta) {
    update_k1(rng);
    update_k2(rng);
    if (priors_.spillover) update_fractions(rng);
    update_noise_mean(rng);
    update_sigma(rng);
    if (!fix_z) update_z(rng);
    if (!fix_beta) update_beta(rng);
}

namespace {

// One K-means run (k-means++ seeding, Lloyd refinement) on voxel TACs.
// Frame durations weight the distance so short, noisy frames do not dominate.
std::vector<int> kmeans_once(const DynamicImage& img, const std::vector<double>& w, int G,
                             Rng& rng) {
    const int n = img.voxels();
    const int T = img.frames();
    auto dist2 = [&](int i, const std::vector<double>& c) {
        auto y = img.voxel(i);
        double s = 0;
        for (int t = 0; t < T; ++t) {
            const double d = y[t] - c[t];
            s += w[t] * d * d;
        }
        return s;
    };
    std::vector<std::vector<double>> centers;
    std::vector<double> d2(n);
    const int first = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
    centers.emplace_back(img.voxel(first).begin(), img.voxel(first).end());
    for (int i = 0; i < n; ++i) d2[i] = dist2(i, centers[0]);
    while (static_cast<int>(centers.size()) < G) {
        double total = std::accumulate(d2.begin(), d2.end(), 0.0);
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
        for (int i = 0; i < n; ++i) d2[i] = std::min(d2[i], dist2(i, centers.back()));
    }

    std::vector<int> labels(n, 0);
    for (int it = 0; it < 25; ++it) {
        bool changed = false;
        for (int i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            int bg = 0;
            for (int g = 0; g < G; ++g) {
                const double d = dist2(i, centers[g]);
                if (d < best) {
                    best = d;
                    bg = g;
                }
            }
            if (labels[i] != bg) {
                labels[i] = bg;
                changed = true;
            }
        }
        if (!changed && it > 0) break;
        std::vector<std::vector<double>> nc(G, std::vector<double>(T, 0.0));
        std::vector<int> cnt(G, 0);
        for (int i = 0; i < n; ++i) {
            auto y = img.voxel(i);
            ++cnt[labels[i]];
            for (int t = 0; t < T; ++t) nc[labels[i]][t] += y[t];
        }
        for (int g = 0; g < G; ++g)
            if (cnt[g] > 0) {
                for (int t = 0; t < T; ++t) nc[g][t] /= cnt[g];
                centers[g] = std::move(nc[g]);
            }
    }
    return labels;  // 0-based cluster ids
}

}  // namespace

void MixtureSampler::init_state(Rng& rng) {
    // Cluster a 3x3 boxcar-smoothed copy of the image: small structures keep
    // their interior signal while voxel noise drops threefold, which makes the
    // K-means seeding far more reliable on low-count data. The chain state is
    // still built from the raw voxels.
    DynamicImage smooth = img_;
    const int nx = img_.nx(), ny = img_.ny();
    for (int y = 0; y < ny; ++y)
        for (int x = 0; x < nx; ++x) {
            auto dst = smooth.voxel(img_.index(x, y));
            std::fill(dst.begin(), dst.end(), 0.0);
            int m = 0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int xx = x + dx, yy = y + dy;
                    if (xx < 0 || xx >= nx || yy < 0 || yy >= ny) continue;
                    auto src = img_.voxel(img_.index(xx, yy));
                    for (int t = 0; t < T_; ++t) dst[t] += src[t];
                    ++m;
                }
            for (int t = 0; t < T_; ++t) dst[t] /= m;
        }

    // Lloyd's algorithm is prone to local optima when a small cluster sits
    // near a large diffuse one; run several seeded restarts and keep the
    // candidate state with the best log-posterior.
    constexpr int kRestarts = 8;
    std::vector<double> w(static_cast<size_t>(T_));
    for (int t = 0; t < T_; ++t) w[t] = frames_.duration(static_cast<size_t>(t));
    ChainState best;
    double best_lp = -std::numeric_limits<double>::infinity();
    for (int r = 0; r < kRestarts; ++r) {
        std::vector<int> cl = kmeans_once(smooth, w, G_, rng);
        ChainState cand = state_from_labels(cl);
        set_state(cand);
        const double lp = log_posterior();
        if (lp > best_lp || r == 0) {
            best_lp = lp;
            best = std::move(cand);
        }
    }
    set_state(best);
}

ChainState MixtureSampler::state_from_labels(const std::vector<int>& cl) const {
    // The cluster with the smallest total activity becomes the noise
    // component g* = G; the rest keep their relative order.
    std::vector<std::vector<double>> means(G_, std::vector<double>(T_, 0.0));
    std::vector<int> cnt(G_, 0);
    for (int i = 0; i < n_; ++i) {
        auto y = img_.voxel(i);
        ++cnt[cl[i]];
        for (int t = 0; t < T_; ++t) means[cl[i]][t] += y[t];
    }
    for (int g = 0; g < G_; ++g)
        if (cnt[g] > 0)
            for (int t = 0; t < T_; ++t) means[g][t] /= cnt[g];
    int noise_cluster = 0;
    double low = std::numeric_limits<double>::infinity();
    for (int g = 0; g < G_; ++g) {
        const double s = std::accumulate(means[g].begin(), means[g].end(), 0.0);
        if (s < low) {
            low = s;
            noise_cluster = g;
        }
    }
    std::vector<int> comp_of(G_);  // cluster id -> component 1..G
    int next = 1;
    for (int g = 0; g < G_; ++g) comp_of[g] = (g == noise_cluster) ? G_ : next++;

    ChainState s;
    s.z.resize(n_);
    for (int i = 0; i < n_; ++i) s.z[i] = comp_of[cl[i]];

    // Per-cluster LM fits clamped into the prior box.
    FitConfig fc;
    fc.bounds.k1_lo = priors_.k1_lo;
    fc.bounds.k1_hi = priors_.k1_hi;
    fc.bounds.k2_lo = priors_.k2_lo;
    fc.bounds.k2_hi = priors_.k2_hi;
    fc.init = {std::clamp(0.5, priors_.k1_lo, priors_.k1_hi),
               std::clamp(0.1, priors_.k2_lo, priors_.k2_hi)};
    s.kin.assign(G_ - 1, fc.init);
    if (priors_.spillover) {
        const double f0 = std::clamp(0.05, priors_.f_lo, priors_.f_hi);
        s.frac.assign(G_ - 1, SpilloverFractions{f0, f0});
        fc.spillover = true;
        fc.spill = spill_;
        fc.init_fractions = {f0, f0};
        fc.bounds.f_lo = priors_.f_lo;
        fc.bounds.f_hi = priors_.f_hi;
    }
    // Within-cluster variance per frame, floored to keep the state proper.
    s.sigma2.assign(T_, 0.0);
    for (int i = 0; i < n_; ++i) {
        auto y = img_.voxel(i);
        for (int t = 0; t < T_; ++t) {
            const double r = y[t] - means[cl[i]][t];
            s.sigma2[t] += r * r;
        }
    }
    for (int t = 0; t < T_; ++t) s.sigma2[t] = std::max(s.sigma2[t] / n_, 1e-10);

    // Inverse-variance frame weights put the fits at the mode of the
    // conditional the sampler will actually explore. Frames that happen to be
    // empty (zero variance) must not dominate, so floor at 1% of the median.
    std::vector<double> sorted_s2 = s.sigma2;
    std::sort(sorted_s2.begin(), sorted_s2.end());
    const double s2_floor = 0.01 * sorted_s2[sorted_s2.size() / 2];
    fc.weights.resize(static_cast<size_t>(T_));
    for (int t = 0; t < T_; ++t)
        fc.weights[static_cast<size_t>(t)] = 1.0 / std::max(s.sigma2[t], s2_floor);
    for (int g = 0; g < G_; ++g) {
        if (g == noise_cluster || cnt[g] == 0) continue;
        try {
            VoxelFit fit = lm_fit_voxel(means[g], input_, frames_, fc);
            const int c = comp_of[g] - 1;
            s.kin[c] = fit.params;
            if (priors_.spillover) s.frac[c] = fit.fractions;
        } catch (const std::exception&) {
            // keep the default init for this component
        }
    }

    s.noise_mean.assign(T_, 0.0);
    if (cnt[noise_cluster] > 0)
        for (int t = 0; t < T_; ++t)
            s.noise_mean[t] =
                std::clamp(means[noise_cluster][t], priors_.noise_lo, priors_.noise_hi);

    s.beta = std::min(0.1, priors_.beta_max);
    return s;
}

PosteriorSummary run_mcmc(const DynamicImage& img, const InputFunction& input,
                          const FrameScheme& frames, const Priors& priors,
                          const ProposalScales& scales, const MCMCConfig& cfg,
                          const PartitionTable& table, std::optional<SpilloverInputs> spill) {
    cfg.validate();
    MixtureSampler sampler(img, input, frames, priors, scales, cfg.G, table, std::move(spill));
    Rng rng = Rng::stream(cfg.seed, 0);
    sampler.init_state(rng);

    PosteriorSummary out;
    out.G = cfg.G;
    out.n = sampler.n();
    out.T = sampler.T();

    double lp = sampler.log_posterior();
    if (!std::isfinite(lp))
        throw std::runtime_error("smm: non-finite log-posterior at initialization");
    out.map_state = sampler.state();
    out.map_log_posterior = lp;
    out.logpost_trace.reserve(cfg.iterations);

    const int G = cfg.G;
    std::vector<double> membership(static_cast<std::size_t>(sampler.n()) * G, 0.0);
    long n_samples = 0;
    std::vector<int> order(G - 1), rank(G - 1);

    for (int l = 1; l <= cfg.iterations; ++l) {
        sampler.iterate(rng, cfg.fix_z, cfg.fix_beta);
        lp = sampler.log_posterior();
        out.logpost_trace.push_back(lp);
        if (lp > out.map_log_posterior) {
            out.map_log_posterior = lp;
            out.map_state = sampler.state();
        }
        if (cfg.mode == ChainMode::FULL_POSTERIOR && l > cfg.burn_in &&
            (l - cfg.burn_in) % cfg.thin == 0) {
            const ChainState& st = sampler.state();
            // canonical per-sample order: ascending K1, noise pinned
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
                if (st.kin[a].K1 != st.kin[b].K1) return st.kin[a].K1 < st.kin[b].K1;
                return st.kin[a].k2 < st.kin[b].k2;
            });
            for (int r = 0; r < G - 1; ++r) rank[order[r]] = r;
            for (int r = 0; r < G - 1; ++r) {
                SampleRow row;
                row.iter = l;
                row.component = r + 1;
                row.k1 = st.kin[order[r]].K1;
                row.k2 = st.kin[order[r]].k2;
                if (priors.spillover) {
                    row.f_lv = st.frac[order[r]].f_lv;
                    row.f_rv = st.frac[order[r]].f_rv;
                }
                out.samples.push_back(row);
            }
            out.beta_samples.push_back(st.beta);
            for (int i = 0; i < sampler.n(); ++i) {
                const int c = st.z[i];
                const int nc = (c == G) ? G : rank[c - 1] + 1;
                membership[static_cast<std::size_t>(i) * G + nc - 1] += 1.0;
            }
            ++n_samples;
        }
    }

    relabel_state(out.map_state);
    out.accept = sampler.counters();

    // complete-data log-likelihood at the MAP (used by BIC)
    sampler.set_state(out.map_state);
    out.map_log_likelihood = sampler.log_likelihood();

    if (cfg.mode == ChainMode::FULL_POSTERIOR && n_samples > 0) {
        for (double& m : membership) m /= static_cast<double>(n_samples);
        out.membership = std::move(membership);
    } else {
        out.membership.assign(static_cast<std::size_t>(sampler.n()) * G, 0.0);
        for (int i = 0; i < sampler.n(); ++i)
            out.membership[static_cast<std::size_t>(i) * G + out.map_state.z[i] - 1] = 1.0;
    }

    // per-component summaries
    out.components.assign(G - 1, ComponentSummary{});
    if (!out.samples.empty()) {
        for (int c = 1; c <= G - 1; ++c) {
            std::vector<double> k1s, k2s;
            for (const auto& r : out.samples)
                if (r.component == c) {
                    k1s.push_back(r.k1);
                    k2s.push_back(r.k2);
                }
            auto summarize = [](std::vector<double>& v, double& mean, double& lo, double& hi) {
                std::sort(v.begin(), v.end());
                mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
                const std::size_t m = v.size();
                lo = v[static_cast<std::size_t>(0.025 * (m - 1))];
                hi = v[static_cast<std::size_t>(std::ceil(0.975 * (m - 1)))];
            };
            ComponentSummary& cs = out.components[c - 1];
            summarize(k1s, cs.k1_mean, cs.k1_lo, cs.k1_hi);
            summarize(k2s, cs.k2_mean, cs.k2_lo, cs.k2_hi);
        }
    } else {
        for (int c = 0; c < G - 1; ++c) {
            ComponentSummary& cs = out.components[c];
            cs.k1_mean = cs.k1_lo = cs.k1_hi = out.map_state.kin[c].K1;
            cs.k2_mean = cs.k2_lo = cs.k2_hi = out.map_state.kin[c].k2;
        }
    }
    return out;
}

int bic_degrees_of_freedom(int G, int T, bool spillover) {
    return (spillover ? 4 : 2) * (G - 1) + 2 * T + 1;
}

double bic(double loglik, int G, int T, std::int64_t n, bool spillover) {
    const int df = bic_degrees_of_freedom(G, T, spillover);
    return -2.0 * loglik +
           df * (std::log(static_cast<double>(n)) - std::log(2.0 * M_PI));
}

SelectionResult select_components(const DynamicImage& img, const InputFunction& input,
                                  const FrameScheme& frames, const Priors& priors,
                                  const ProposalScales& scales, const MCMCConfig& base_cfg,
                                  int g_min, int g_max, const TableProvider& tables,
                                  std::optional<SpilloverInputs> spill) {
    if (g_min < 2 || g_max < g_min) throw std::invalid_argument("invalid G range");
    SelectionResult res;
    double best = std::numeric_limits<double>::infinity();
    for (int g = g_min; g <= g_max; ++g) {
        MCMCConfig cfg = base_cfg;
        cfg.G = g;
        cfg.mode = ChainMode::MAP_ONLY;
        cfg.burn_in = 0;
        cfg.seed = base_cfg.seed + static_cast<std::uint64_t>(g);
        PartitionTable table = tables(g);
        PosteriorSummary sum = run_mcmc(img, input, frames, priors, scales, cfg, table, spill);
        BicRow row;
        row.G = g;
        row.loglik = sum.map_log_likelihood;
        row.DF = bic_degrees_of_freedom(g, sum.T, priors.spillover);
        row.bic = bic(sum.map_log_likelihood, g, sum.T, sum.n, priors.spillover);
        res.rows.push_back(row);
        if (row.bic < best) {
            best = row.bic;
            res.best_g = g;
        }
    }
    return res;
}

void relabel_samples(int G, std::vector<SampleRow>& rows,
                     std::vector<std::vector<int>>* z_draws) {
    std::size_t pos = 0, sample_idx = 0;
    while (pos < rows.size()) {
        std::size_t end = pos + 1;
        while (end < rows.size() && rows[end].iter == rows[pos].iter) ++end;
        std::vector<std::size_t> idx;
        for (std::size_t k = pos; k < end; ++k) idx.push_back(k);
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            if (rows[a].k1 != rows[b].k1) return rows[a].k1 < rows[b].k1;
            return rows[a].k2 < rows[b].k2;
        });
        std::vector<int> perm(G + 1, 0);  // old component -> new component
        perm[G] = G;
        std::vector<SampleRow> relabeled;
        relabeled.reserve(idx.size());
        for (std::size_t r = 0; r < idx.size(); ++r) {
            SampleRow row = rows[idx[r]];
            if (row.component < 1 || row.component > G)
                throw std::invalid_argument("relabel: component index out of range");
            perm[row.component] = static_cast<int>(r) + 1;
            row.component = static_cast<int>(r) + 1;
            relabeled.push_back(row);
        }
        for (std::size_t r = 0; r < idx.size(); ++r) rows[pos + r] = relabeled[r];
        if (z_draws) {
            if (sample_idx >= z_draws->size())
                throw std::invalid_argument("relabel: fewer label maps than sample groups");
            for (int& zi : (*z_draws)[sample_idx])
                zi = perm[zi] > 0 ? perm[zi] : zi;
        }
        ++sample_idx;
        pos = end;
    }
    if (z_draws && sample_idx != z_draws->size())
        throw std::invalid_argument("relabel: label map count does not match sample groups");
}

void relabel_state(ChainState& s) {
    const int G = static_cast<int>(s.kin.size()) + 1;
    std::vector<int> order(G - 1);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (s.kin[a].K1 != s.kin[b].K1) return s.kin[a].K1 < s.kin[b].K1;
        return s.kin[a].k2 < s.kin[b].k2;
    });
    std::vector<int> perm(G + 1);
    perm[G] = G;
    for (int r = 0; r < G - 1; ++r) perm[order[r] + 1] = r + 1;
    std::vector<KineticParams> kin(G - 1);
    for (int r = 0; r < G - 1; ++r) kin[r] = s.kin[order[r]];
    s.kin = std::move(kin);
    if (!s.frac.empty()) {
        std::vector<SpilloverFractions> frac(G - 1);
        for (int r = 0; r < G - 1; ++r) frac[r] = s.frac[order[r]];
        s.frac = std::move(frac);
    }
    for (int& zi : s.z) zi = perm[zi];
}

void write_samples_csv(const std::string& path, const std::vector<SampleRow>& rows,
                       bool spillover) {
    csv::Writer wr(path);
    if (spillover)
        wr.row({"iter", "component", "K1", "k2", "f_lv", "f_rv"});
    else
        wr.row({"iter", "component", "K1", "k2"});
    for (const auto& r : rows) {
        std::vector<std::string> cells{std::to_string(r.iter), std::to_string(r.component),
                                       csv::format_double(r.k1), csv::format_double(r.k2)};
        if (spillover) {
            cells.push_back(csv::format_double(r.f_lv));
            cells.push_back(csv::format_double(r.f_rv));
        }
        wr.row(cells);
    }
}

void write_beta_csv(const std::string& path, const std::vector<double>& beta_samples) {
    csv::Writer wr(path);
    wr.row({"sample", "beta"});
    for (std::size_t i = 0; i < beta_samples.size(); ++i)
        wr.row({std::to_string(i), csv::format_double(beta_samples[i])});
}

void write_bic_csv(const std::string& path, const std::vector<BicRow>& rows) {
    csv::Writer wr(path);
    wr.row({"G", "loglik", "DF", "BIC"});
    for (const auto& r : rows)
        wr.row({std::to_string(r.G), csv::format_double(r.loglik), std::to_string(r.DF),
                csv::format_double(r.bic)});
}

}  // namespace dpet
