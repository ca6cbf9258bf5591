#include "dpet/frames.hpp"

#include <cmath>
#include <stdexcept>

#include "dpet/csv.hpp"

namespace dpet {

FrameScheme::FrameScheme(std::vector<std::pair<double, double>> frames)
    : frames_(std::move(frames)) {
    if (frames_.empty()) throw std::invalid_argument("FrameScheme: no frames");
    double prev_end = -std::numeric_limits<double>::infinity();
    for (const auto& [s, e] : frames_) {
        if (!std::isfinite(s) || !std::isfinite(e))
            throw std::invalid_argument("FrameScheme: non-finite frame bound");
        if (!(s < e)) throw std::invalid_argument("FrameScheme: frame start must precede end");
        if (s < prev_end) throw std::invalid_argument("FrameScheme: frames overlap or are unsorted");
        prev_end = e;
    }
}

FrameScheme FrameScheme::cardiac_default() {
    std::vector<std::pair<double, double>> f;
    double t = 0.0;
    auto push = [&](int count, double dur_s) {
        const double d = dur_s / 60.0;
        for (int i = 0; i < count; ++i) {
            f.emplace_back(t, t + d);
            t += d;
        }
    };
    push(6, 5.0);
    push(3, 30.0);
    push(5, 60.0);
    push(3, 120.0);
    return FrameScheme(std::move(f));
}

FrameScheme FrameScheme::read_csv(const std::string& path) {
    const auto t = csv::read_file(path);
    const int cs = t.column("t_start_min");
    const int ce = t.column("t_end_min");
    std::vector<std::pair<double, double>> frames;
    frames.reserve(t.rows.size());
    for (const auto& r : t.rows)
        frames.emplace_back(csv::to_double(r[cs]), csv::to_double(r[ce]));
    return FrameScheme(std::move(frames));
}

void FrameScheme::write_csv(const std::string& path) const {
    csv::Writer w(path);
    w.row({"t_start_min", "t_end_min"});
    for (const auto& [s, e] : frames_) w.row({csv::format_double(s), csv::format_double(e)});
}

}  // namespace dpet
