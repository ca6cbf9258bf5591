#include "dpet/input_function.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dpet/csv.hpp"

namespace dpet {

InputFunction::InputFunction(std::vector<double> times, std::vector<double> values)
    : times_(std::move(times)), values_(std::move(values)) {
    if (times_.size() != values_.size())
        throw std::invalid_argument("InputFunction: times/values length mismatch");
    if (times_.size() < 2) throw std::invalid_argument("InputFunction: need at least 2 samples");
    for (std::size_t i = 0; i < times_.size(); ++i) {
        if (!std::isfinite(times_[i]) || !std::isfinite(values_[i]))
            throw std::invalid_argument("InputFunction: non-finite sample");
        if (values_[i] < 0.0) throw std::invalid_argument("InputFunction: negative value");
        if (i > 0 && !(times_[i] > times_[i - 1]))
            throw std::invalid_argument("InputFunction: times must be strictly increasing");
    }
}

double InputFunction::operator()(double t) const {
    if (t < times_.front()) return 0.0;
    if (t >= times_.back()) return values_.back();
    const auto it = std::upper_bound(times_.begin(), times_.end(), t);
    const std::size_t hi = static_cast<std::size_t>(it - times_.begin());
    const std::size_t lo = hi - 1;
    const double w = (t - times_[lo]) / (times_[hi] - times_[lo]);
    return values_[lo] + w * (values_[hi] - values_[lo]);
}

double InputFunction::integral(double a, double b) const {
    if (!(a <= b)) throw std::invalid_argument("InputFunction::integral: a > b");
    // Clip against the leading-zero region, then accumulate trapezoids per
    // linear piece; the held tail is a constant piece.
    double total = 0.0;
    double lo = std::max(a, times_.front());
    if (lo >= b) {
        // Entirely before the first sample or degenerate range; the only
        // nonzero case is a range fully in the held tail handled below.
        if (a >= times_.back()) return (b - a) * values_.back();
        return 0.0;
    }
    if (b > times_.back()) {
        total += (b - std::max(lo, times_.back())) * values_.back();
    }
    const double hi = std::min(b, times_.back());
    // Sum over sample intervals intersecting [lo, hi].
    auto it = std::upper_bound(times_.begin(), times_.end(), lo);
    std::size_t seg = static_cast<std::size_t>(it - times_.begin());
    if (seg == 0) seg = 1;
    for (; seg < times_.size() && times_[seg - 1] < hi; ++seg) {
        const double s0 = times_[seg - 1], s1 = times_[seg];
        const double c0 = values_[seg - 1], c1 = values_[seg];
        const double x0 = std::max(lo, s0), x1 = std::min(hi, s1);
        if (x1 <= x0) continue;
        const double m = (c1 - c0) / (s1 - s0);
        const double v0 = c0 + m * (x0 - s0);
        const double v1 = c0 + m * (x1 - s0);
        total += 0.5 * (v0 + v1) * (x1 - x0);
    }
    return total;
}

InputFunction InputFunction::scaled(double factor) const {
    if (!(factor >= 0.0) || !std::isfinite(factor))
        throw std::invalid_argument("InputFunction::scaled: bad factor");
    std::vector<double> v = values_;
    for (auto& x : v) x *= factor;
    return InputFunction(times_, std::move(v));
}

InputFunction InputFunction::bolus_default() {
    // Feng-type model: (A1 t - A2 - A3) e^{-l1 t} + A2 e^{-l2 t} + A3 e^{-l3 t},
    // rescaled so the bolus peaks near 0.038 (matching the activity units the
    // sampler's proposal scales assume) and clipped at zero. Dense samples
    // early where the curve is steep, sparser on the tail.
    const double scale = 0.0005;
    const double A1 = 851.1225 * scale, A2 = 21.8798 * scale, A3 = 20.8113 * scale;
    const double l1 = 4.133859, l2 = 0.01043449, l3 = 0.1190996;
    auto feng = [&](double t) {
        if (t <= 0.0) return 0.0;
        const double v = (A1 * t - A2 - A3) * std::exp(-l1 * t) + A2 * std::exp(-l2 * t) +
                         A3 * std::exp(-l3 * t);
        return std::max(0.0, v);
    };
    std::vector<double> times, values;
    for (double t = 0.0; t <= 3.0 + 1e-12; t += 0.05) times.push_back(t);
    for (double t = 3.25; t <= 15.0 + 1e-12; t += 0.25) times.push_back(t);
    values.reserve(times.size());
    for (double t : times) values.push_back(feng(t));
    return InputFunction(std::move(times), std::move(values));
}

InputFunction InputFunction::read_csv(const std::string& path) {
    const auto t = csv::read_file(path);
    const int ct = t.column("time_min");
    const int cv = t.column("value");
    std::vector<double> times, values;
    times.reserve(t.rows.size());
    values.reserve(t.rows.size());
    for (const auto& r : t.rows) {
        times.push_back(csv::to_double(r[ct]));
        values.push_back(csv::to_double(r[cv]));
    }
    return InputFunction(std::move(times), std::move(values));
}

void InputFunction::write_csv(const std::string& path) const {
    csv::Writer w(path);
    w.row({"time_min", "value"});
    for (std::size_t i = 0; i < times_.size(); ++i)
        w.row({csv::format_double(times_[i]), csv::format_double(values_[i])});
}

}  // namespace dpet
