// input_function.hpp - sampled blood input curve.

#pragma once

#include <string>
#include <vector>

namespace dpet {

// Piecewise-linear curve through (time, value) samples. Evaluation is 0
// before the first sample and holds the last value after the final sample.
// Times are minutes and strictly increasing; values are non-negative.
class InputFunction {
public:
    InputFunction(std::vector<double> times, std::vector<double> values);

    double operator()(double t) const;

    // Exact integral of the curve over [a, b], a <= b.
    double integral(double a, double b) const;

    double first_time() const { return times_.front(); }
    double last_time() const { return times_.back(); }
    const std::vector<double>& times() const { return times_; }
    const std::vector<double>& values() const { return values_; }

    // Scaled copy (used for plasma-fraction correction).
    InputFunction scaled(double factor) const;

    // Analytic bolus-plus-washout curve sampled densely over [0, 15] min,
    // Feng-type sum of exponentials scaled to a peak of about 0.038.
    static InputFunction bolus_default();

    // CSV columns: time_min,value
    static InputFunction read_csv(const std::string& path);
    void write_csv(const std::string& path) const;

private:
    std::vector<double> times_;
    std::vector<double> values_;
};

}  // namespace dpet
