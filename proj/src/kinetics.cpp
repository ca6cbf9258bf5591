#include "dpet/kinetics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dpet {
namespace {

// phi_j(x) = sum_{k>=0} (-x)^k / (k+j)!   for j = 1, 2, 3:
//   phi1 = (1 - e^-x)/x,  phi2 = (1 - phi1)/x,  phi3 = (1/2 - phi2)/x.
// Below the switch point the direct forms lose ~eps/x relative accuracy, so
// a truncated series is used there (error < 1e-20 at x = 0.03).
struct Phi {
    double e;  // exp(-x)
    double p1, p2, p3;
};

Phi eval_phi(double x) {
    Phi r;
    if (x < 0.03) {
        double term = 1.0;  // (-x)^k / k!
        double p1 = 0.0, p2 = 0.0, p3 = 0.0;
        for (int k = 0; k < 9; ++k) {
            const double a = k + 1.0;
            const double b = a * (k + 2.0);
            p1 += term / a;            // (-x)^k / (k+1)!
            p2 += term / b;            // (-x)^k / (k+2)!
            p3 += term / (b * (k + 3.0));
            term *= -x / a;
        }
        r.e = std::exp(-x);
        r.p1 = p1;
        r.p2 = p2;
        r.p3 = p3;
    } else {
        r.e = std::exp(-x);
        r.p1 = -std::expm1(-x) / x;
        r.p2 = (1.0 - r.p1) / x;
        r.p3 = (0.5 - r.p2) / x;
    }
    return r;
}

// One linear piece of the input, duration d, value c0 at the left edge,
// slope m. Advances the convolution state H and returns the integral of H
// over the piece:
//   H_new      = H e^{-k2 d} + c0 d phi1 + m d^2 phi2
//   int_piece  = H d phi1 + c0 d^2 phi2 + m d^3 phi3
double advance(double& H, double c0, double m, double d, double k2) {
    const Phi f = eval_phi(k2 * d);
    const double integral = H * d * f.p1 + c0 * d * d * f.p2 + m * d * d * d * f.p3;
    H = H * f.e + c0 * d * f.p1 + m * d * d * f.p2;
    return integral;
}

// Linear description of the input on an interval known to contain no sample
// point in its interior: value at the left edge and slope.
void piece_at(const InputFunction& input, double u, double v, double& c0, double& m) {
    const auto& ts = input.times();
    const auto& vs = input.values();
    const double mid = 0.5 * (u + v);
    if (mid < ts.front()) {
        c0 = 0.0;
        m = 0.0;
    } else if (mid >= ts.back()) {
        c0 = vs.back();
        m = 0.0;
    } else {
        const auto it = std::upper_bound(ts.begin(), ts.end(), mid);
        const std::size_t hi = static_cast<std::size_t>(it - ts.begin());
        const std::size_t lo = hi - 1;
        m = (vs[hi] - vs[lo]) / (ts[hi] - ts[lo]);
        c0 = vs[lo] + m * (u - ts[lo]);
    }
}

std::vector<double> breakpoints(const InputFunction& input, const FrameScheme* frames,
                                double t_end) {
    std::vector<double> bp;
    bp.push_back(0.0);
    for (double s : input.times())
        if (s > 0.0 && s < t_end) bp.push_back(s);
    if (frames) {
        for (const auto& [s, e] : frames->frames()) {
            if (s > 0.0 && s < t_end) bp.push_back(s);
            if (e > 0.0 && e < t_end) bp.push_back(e);
        }
    }
    bp.push_back(t_end);
    std::sort(bp.begin(), bp.end());
    bp.erase(std::unique(bp.begin(), bp.end()), bp.end());
    return bp;
}

}  // namespace

void validate(const KineticParams& p) {
    if (!std::isfinite(p.K1) || !std::isfinite(p.k2) || p.K1 < 0.0 || p.k2 < 0.0)
        throw std::invalid_argument("KineticParams: K1 and k2 must be finite and non-negative");
}

void validate(const SpilloverFractions& f) {
    if (!std::isfinite(f.f_lv) || !std::isfinite(f.f_rv) || f.f_lv < 0.0 || f.f_rv < 0.0 ||
        f.f_lv > 1.0 || f.f_rv > 1.0 || f.f_lv + f.f_rv > 1.0)
        throw std::invalid_argument("SpilloverFractions: need f in [0,1] with f_lv + f_rv <= 1");
}

double tissue_tac(const KineticParams& params, const InputFunction& input, double t) {
    validate(params);
    if (!std::isfinite(t) || t < 0.0) throw std::invalid_argument("tissue_tac: t must be >= 0");
    if (t == 0.0) return 0.0;
    const auto bp = breakpoints(input, nullptr, t);
    double H = 0.0;
    for (std::size_t i = 0; i + 1 < bp.size(); ++i) {
        double c0, m;
        piece_at(input, bp[i], bp[i + 1], c0, m);
        advance(H, c0, m, bp[i + 1] - bp[i], params.k2);
    }
    return params.K1 * H;
}

std::vector<double> frame_averaged_tac(const KineticParams& params, const InputFunction& input,
                                       const FrameScheme& frames, bool* used_extrapolation) {
    validate(params);
    if (frames.span_start() < 0.0)
        throw std::invalid_argument("frame_averaged_tac: frames must start at or after 0");
    if (used_extrapolation)
        *used_extrapolation =
            frames.span_end() > input.last_time() || input.first_time() > 0.0;

    const double t_end = frames.span_end();
    const auto bp = breakpoints(input, &frames, t_end);

    std::vector<double> out(frames.size(), 0.0);
    double H = 0.0;
    std::size_t frame = 0;
    for (std::size_t i = 0; i + 1 < bp.size(); ++i) {
        const double u = bp[i], v = bp[i + 1];
        double c0, m;
        piece_at(input, u, v, c0, m);
        const double piece_integral = advance(H, c0, m, v - u, params.k2);
        while (frame < frames.size() && frames.end(frame) <= u) ++frame;
        if (frame < frames.size() && frames.start(frame) <= u && v <= frames.end(frame))
            out[frame] += piece_integral;
    }
    for (std::size_t t = 0; t < frames.size(); ++t)
        out[t] *= params.K1 / frames.duration(t);
    return out;
}

std::vector<double> frame_averaged_input(const InputFunction& input, const FrameScheme& frames) {
    std::vector<double> out(frames.size());
    for (std::size_t t = 0; t < frames.size(); ++t)
        out[t] = input.integral(frames.start(t), frames.end(t)) / frames.duration(t);
    return out;
}

std::vector<double> spillover_frame_tac(const KineticParams& params, const SpilloverFractions& fracs,
                                        const SpilloverInputs& sp, const FrameScheme& frames,
                                        bool* used_extrapolation) {
    validate(fracs);
    if (!(sp.plasma_fraction > 0.0) || sp.plasma_fraction > 1.0)
        throw std::invalid_argument("SpilloverInputs: plasma_fraction must be in (0,1]");
    const InputFunction plasma = sp.plasma();
    std::vector<double> out = frame_averaged_tac(params, plasma, frames, used_extrapolation);
    const std::vector<double> lv = frame_averaged_input(sp.c_lv, frames);
    const std::vector<double> rv = frame_averaged_input(sp.c_rv, frames);
    const double tissue_weight = 1.0 - fracs.f_lv - fracs.f_rv;
    for (std::size_t t = 0; t < out.size(); ++t)
        out[t] = fracs.f_lv * lv[t] + fracs.f_rv * rv[t] + tissue_weight * out[t];
    return out;
}

}  // namespace dpet
