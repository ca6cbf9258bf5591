#include "dpet/scf.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "dpet/csv.hpp"
#include "dpet/threads.hpp"

namespace dpet {

const char* to_string(FitStatus s) {
    switch (s) {
        case FitStatus::CONVERGED: return "CONVERGED";
        case FitStatus::MAX_ITER: return "MAX_ITER";
        case FitStatus::AT_BOUND: return "AT_BOUND";
        case FitStatus::FAILED: return "FAILED";
    }
    return "FAILED";
}

FitStatus fit_status_from_string(const std::string& s) {
    if (s == "CONVERGED") return FitStatus::CONVERGED;
    if (s == "MAX_ITER") return FitStatus::MAX_ITER;
    if (s == "AT_BOUND") return FitStatus::AT_BOUND;
    if (s == "FAILED") return FitStatus::FAILED;
    throw std::invalid_argument("unknown fit status: " + s);
}

void FitBounds::validate() const {
    auto pair_ok = [](double lo, double hi) {
        return std::isfinite(lo) && std::isfinite(hi) && lo <= hi;
    };
    if (!pair_ok(k1_lo, k1_hi) || !pair_ok(k2_lo, k2_hi) || !pair_ok(f_lo, f_hi))
        throw std::invalid_argument("fit bounds: lower must be <= upper and finite");
    if (k1_lo < 0 || k2_lo < 0 || f_lo < 0)
        throw std::invalid_argument("fit bounds: rate constants and fractions are non-negative");
}

void FitConfig::validate(int T) const {
    bounds.validate();
    if (!weights.empty()) {
        if (static_cast<int>(weights.size()) != T)
            throw std::invalid_argument("fit weights length does not match frame count");
        bool any_pos = false;
        for (double w : weights) {
            if (!std::isfinite(w) || w < 0)
                throw std::invalid_argument("fit weights must be finite and >= 0");
            if (w > 0) any_pos = true;
        }
        if (!any_pos) throw std::invalid_argument("fit weights are all zero");
    }
    if (max_iter < 1) throw std::invalid_argument("max_iter must be >= 1");
    if (!(grad_tol > 0) || !(step_tol > 0))
        throw std::invalid_argument("fit tolerances must be > 0");
    if (!(damping_init > 0) || !(damping_up > 1) || !(damping_down <= 1) || !(damping_down > 0))
        throw std::invalid_argument("invalid damping schedule");
    if (spillover && !spill.has_value())
        throw std::invalid_argument("spill-over fit requires blood-pool inputs");
    if (!std::isfinite(init.K1) || !std::isfinite(init.k2))
        throw std::invalid_argument("fit init must be finite");
}

std::vector<double> weights_from_counts(const FrameScheme& frames,
                                        const std::vector<double>& frame_counts) {
    if (frame_counts.size() != static_cast<size_t>(frames.size()))
        throw std::invalid_argument("frame_counts length does not match frame count");
    std::vector<double> w(frame_counts.size());
    for (size_t t = 0; t < frame_counts.size(); ++t) {
        double c = frame_counts[t];
        if (!std::isfinite(c) || c < 0)
            throw std::invalid_argument("frame counts must be finite and >= 0");
        double dt_sec = frames.duration(static_cast<int>(t)) * 60.0;
        w[t] = (c == 0) ? 0.0 : dt_sec * dt_sec / c;
    }
    return w;
}

namespace {

struct Problem {
    const InputFunction* input;
    const FrameScheme* frames;
    const FitConfig* cfg;
    int dim;  // 2 or 4
    std::vector<double> lo, hi;

    // Project onto the box, then onto f_lv + f_rv <= 1 when fitting spill-over.
    void project(Eigen::VectorXd& p) const {
        for (int j = 0; j < dim; ++j) p[j] = std::clamp(p[j], lo[j], hi[j]);
        if (dim == 4) {
            double sum = p[2] + p[3];
            if (sum > 1.0) {
                double excess = sum - 1.0;
                p[2] -= excess * 0.5;
                p[3] -= excess * 0.5;
                for (int j = 2; j < 4; ++j) p[j] = std::clamp(p[j], lo[j], hi[j]);
                if (p[2] + p[3] > 1.0) {  // lower bounds blocked symmetric shrink
                    double room2 = p[2] - lo[2], room3 = p[3] - lo[3];
                    double need = p[2] + p[3] - 1.0;
                    double take2 = std::min(room2, need);
                    p[2] -= take2;
                    p[3] -= std::min(room3, need - take2);
                }
            }
        }
    }

    bool feasible(const Eigen::VectorXd& p) const {
        for (int j = 0; j < dim; ++j)
            if (p[j] < lo[j] || p[j] > hi[j]) return false;
        if (dim == 4 && p[2] + p[3] > 1.0) return false;
        return true;
    }

    std::vector<double> model(const Eigen::VectorXd& p) const {
        KineticParams k{p[0], p[1]};
        if (dim == 4) {
            SpilloverFractions f{p[2], p[3]};
            return spillover_frame_tac(k, f, *cfg->spill, *frames);
        }
        return frame_averaged_tac(k, *input, *frames);
    }
};

double wrss_of(const std::vector<double>& y, const std::vector<double>& m,
               const std::vector<double>& w) {
    double s = 0;
    for (size_t t = 0; t < y.size(); ++t) {
        double r = y[t] - m[t];
        s += w[t] * r * r;
    }
    return s;
}

}  // namespace

VoxelFit lm_fit_voxel(const std::vector<double>& y, const InputFunction& input,
                      const FrameScheme& frames, const FitConfig& cfg) {
    const int T = static_cast<int>(frames.size());
    if (static_cast<int>(y.size()) != T)
        throw std::invalid_argument("voxel TAC length does not match frame count");
    for (double v : y)
        if (!std::isfinite(v)) throw std::invalid_argument("voxel TAC contains non-finite values");
    cfg.validate(T);

    std::vector<double> w = cfg.weights;
    if (w.empty()) w.assign(T, 1.0);

    Problem prob;
    prob.input = &input;
    prob.frames = &frames;
    prob.cfg = &cfg;
    prob.dim = cfg.spillover ? 4 : 2;
    prob.lo = {cfg.bounds.k1_lo, cfg.bounds.k2_lo};
    prob.hi = {cfg.bounds.k1_hi, cfg.bounds.k2_hi};
    if (prob.dim == 4) {
        prob.lo.insert(prob.lo.end(), {cfg.bounds.f_lo, cfg.bounds.f_lo});
        prob.hi.insert(prob.hi.end(), {cfg.bounds.f_hi, cfg.bounds.f_hi});
    }

    Eigen::VectorXd p(prob.dim);
    p[0] = cfg.init.K1;
    p[1] = cfg.init.k2;
    if (prob.dim == 4) {
        p[2] = cfg.init_fractions.f_lv;
        p[3] = cfg.init_fractions.f_rv;
    }
    prob.project(p);

    std::vector<double> mu = prob.model(p);
    double F = wrss_of(y, mu, w);
    if (!std::isfinite(F)) throw std::invalid_argument("objective non-finite at initialization");

    VoxelFit out;
    if (cfg.record_trace) out.wrss_trace.push_back(F);

    const double fd_rel = 1e-6;
    Eigen::MatrixXd J(T, prob.dim);
    double lambda = cfg.damping_init;
    FitStatus status = FitStatus::MAX_ITER;
    int iter = 0;

    for (; iter < cfg.max_iter; ++iter) {
        // Forward-difference Jacobian; fall back to a backward step when the
        // forward point leaves the feasible set.
        for (int j = 0; j < prob.dim; ++j) {
            double h = fd_rel * std::max(std::abs(p[j]), 1.0);
            Eigen::VectorXd q = p;
            q[j] += h;
            if (!prob.feasible(q)) {
                q[j] = p[j] - h;
                h = -h;
            }
            if (!prob.feasible(q)) {
                J.col(j).setZero();
                continue;
            }
            std::vector<double> mj = prob.model(q);
            for (int t = 0; t < T; ++t) J(t, j) = (mj[t] - mu[t]) / h;
        }

        // Weighted normal equations: g = J' W r, A = J' W J.
        Eigen::VectorXd g = Eigen::VectorXd::Zero(prob.dim);
        Eigen::MatrixXd A = Eigen::MatrixXd::Zero(prob.dim, prob.dim);
        for (int t = 0; t < T; ++t) {
            double r = y[t] - mu[t];
            for (int j = 0; j < prob.dim; ++j) {
                g[j] += w[t] * r * J(t, j);
                for (int k = j; k < prob.dim; ++k) A(j, k) += w[t] * J(t, j) * J(t, k);
            }
        }
        for (int j = 0; j < prob.dim; ++j)
            for (int k = 0; k < j; ++k) A(j, k) = A(k, j);

        // Projected gradient of F (dF/dp = -2 g) with active bounds zeroed.
        bool any_active = false;
        double pg_max = 0;
        for (int j = 0; j < prob.dim; ++j) {
            double d = -2.0 * g[j];
            bool active = (p[j] <= prob.lo[j] && d > 0) || (p[j] >= prob.hi[j] && d < 0);
            if (prob.dim == 4 && j >= 2 && p[2] + p[3] >= 1.0 && d < 0) active = true;
            if (active) {
                any_active = true;
                continue;
            }
            pg_max = std::max(pg_max, std::abs(d) * std::max(std::abs(p[j]), 1.0));
        }
        if (pg_max <= cfg.grad_tol * std::max(1.0, F)) {
            status = any_active ? FitStatus::AT_BOUND : FitStatus::CONVERGED;
            break;
        }

        double diag_floor = 1e-12 * std::max(A.diagonal().maxCoeff(), 1e-30);
        bool improved = false;
        while (lambda < 1e15) {
            Eigen::MatrixXd Ad = A;
            for (int j = 0; j < prob.dim; ++j)
                Ad(j, j) += lambda * std::max(A(j, j), diag_floor);
            Eigen::VectorXd delta = Ad.ldlt().solve(g);
            if (!delta.allFinite()) {
                lambda *= cfg.damping_up;
                continue;
            }
            Eigen::VectorXd cand = p + delta;
            prob.project(cand);
            Eigen::VectorXd step = cand - p;
            if (step.norm() == 0) {
                lambda *= cfg.damping_up;
                continue;
            }
            std::vector<double> mc = prob.model(cand);
            double Fc = wrss_of(y, mc, w);
            if (std::isfinite(Fc) && Fc < F) {
                bool tiny = step.norm() <= cfg.step_tol * (p.norm() + cfg.step_tol);
                p = cand;
                mu = std::move(mc);
                F = Fc;
                lambda = std::max(lambda * cfg.damping_down, 1e-12);
                improved = true;
                if (cfg.record_trace) out.wrss_trace.push_back(F);
                if (tiny) status = FitStatus::CONVERGED;
                break;
            }
            lambda *= cfg.damping_up;
        }
        if (!improved || status == FitStatus::CONVERGED) {
            if (!improved) status = FitStatus::CONVERGED;
            // Stalled or tiny step: report AT_BOUND when a bound is active.
            bool at_bound = false;
            for (int j = 0; j < prob.dim; ++j)
                if (p[j] <= prob.lo[j] || p[j] >= prob.hi[j]) at_bound = true;
            if (prob.dim == 4 && p[2] + p[3] >= 1.0) at_bound = true;
            if (at_bound) status = FitStatus::AT_BOUND;
            ++iter;
            break;
        }
    }

    out.params = {p[0], p[1]};
    if (prob.dim == 4) out.fractions = {p[2], p[3]};
    out.wrss = F;
    out.iterations = iter;
    out.status = status;
    return out;
}

std::vector<VoxelFit> fit_image(const DynamicImage& img, const InputFunction& input,
                                const FrameScheme& frames, const FitConfig& cfg, int threads) {
    if (img.frames() != static_cast<int>(frames.size()))
        throw std::invalid_argument("image frame count does not match frame scheme");
    cfg.validate(img.frames());

    std::vector<VoxelFit> fits(img.voxels());
    parallel_for(img.voxels(), threads, [&](std::int64_t i) {
        auto v = img.voxel(static_cast<int>(i));
        std::vector<double> y(v.begin(), v.end());
        try {
            fits[i] = lm_fit_voxel(y, input, frames, cfg);
        } catch (const std::exception&) {
            fits[i] = VoxelFit{};
            fits[i].params = cfg.init;
            fits[i].wrss = std::numeric_limits<double>::infinity();
            fits[i].status = FitStatus::FAILED;
        }
    });
    return fits;
}

void write_fit_csv(const std::string& path, int nx, int ny, const std::vector<VoxelFit>& fits,
                   bool spillover) {
    if (static_cast<std::int64_t>(fits.size()) != static_cast<std::int64_t>(nx) * ny)
        throw std::invalid_argument("fit vector size does not match image dims");
    csv::Writer wr(path);
    if (spillover)
        wr.row({"x", "y", "K1", "k2", "f_lv", "f_rv", "wrss", "status"});
    else
        wr.row({"x", "y", "K1", "k2", "wrss", "status"});
    for (int yy = 0; yy < ny; ++yy)
        for (int xx = 0; xx < nx; ++xx) {
            const VoxelFit& f = fits[static_cast<size_t>(yy) * nx + xx];
            std::vector<std::string> row{std::to_string(xx), std::to_string(yy),
                                         csv::format_double(f.params.K1),
                                         csv::format_double(f.params.k2)};
            if (spillover) {
                row.push_back(csv::format_double(f.fractions.f_lv));
                row.push_back(csv::format_double(f.fractions.f_rv));
            }
            row.push_back(csv::format_double(f.wrss));
            row.push_back(to_string(f.status));
            wr.row(row);
        }
}

std::vector<VoxelFit> read_fit_csv(const std::string& path, int& nx, int& ny) {
    csv::Table tab = csv::read_file(path);
    auto xs = tab.cells("x");
    auto ys = tab.cells("y");
    auto k1 = tab.cells("K1");
    auto k2 = tab.cells("k2");
    auto wrss = tab.cells("wrss");
    auto status = tab.cells("status");
    bool spill = tab.has_column("f_lv");
    std::vector<std::string> flv, frv;
    if (spill) {
        flv = tab.cells("f_lv");
        frv = tab.cells("f_rv");
    }
    long max_x = -1, max_y = -1;
    for (size_t i = 0; i < xs.size(); ++i) {
        max_x = std::max(max_x, csv::to_long(xs[i]));
        max_y = std::max(max_y, csv::to_long(ys[i]));
    }
    nx = static_cast<int>(max_x + 1);
    ny = static_cast<int>(max_y + 1);
    if (xs.size() != static_cast<size_t>(nx) * ny)
        throw std::invalid_argument("fit CSV does not cover the full lattice: " + path);
    std::vector<VoxelFit> fits(xs.size());
    std::vector<bool> seen(xs.size(), false);
    for (size_t i = 0; i < xs.size(); ++i) {
        long x = csv::to_long(xs[i]), y = csv::to_long(ys[i]);
        if (x < 0 || y < 0) throw std::invalid_argument("negative voxel index in " + path);
        size_t idx = static_cast<size_t>(y) * nx + static_cast<size_t>(x);
        if (seen[idx]) throw std::invalid_argument("duplicate voxel in " + path);
        seen[idx] = true;
        VoxelFit f;
        f.params = {csv::to_double(k1[i]), csv::to_double(k2[i])};
        if (spill) f.fractions = {csv::to_double(flv[i]), csv::to_double(frv[i])};
        f.wrss = csv::to_double(wrss[i]);
        f.status = fit_status_from_string(status[i]);
        fits[idx] = f;
    }
    for (bool s : seen)
        if (!s) throw std::invalid_argument("missing voxel row in " + path);
    return fits;
}

}  // namespace dpet
