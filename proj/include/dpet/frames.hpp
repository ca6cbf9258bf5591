// frames.hpp - acquisition frame scheme for a dynamic scan.

#pragma once

#include <string>
#include <utility>
#include <vector>

namespace dpet {

// Ordered, non-overlapping acquisition frames. All times are minutes.
class FrameScheme {
public:
    // Validates: each start < end, frames sorted ascending and non-overlapping,
    // at least one frame. Throws std::invalid_argument otherwise.
    explicit FrameScheme(std::vector<std::pair<double, double>> frames);

    std::size_t size() const { return frames_.size(); }
    double start(std::size_t t) const { return frames_[t].first; }
    double end(std::size_t t) const { return frames_[t].second; }
    double duration(std::size_t t) const { return frames_[t].second - frames_[t].first; }
    double mid(std::size_t t) const { return 0.5 * (frames_[t].first + frames_[t].second); }
    double span_start() const { return frames_.front().first; }
    double span_end() const { return frames_.back().second; }
    const std::vector<std::pair<double, double>>& frames() const { return frames_; }

    // The 13-min cardiac protocol: 6 x 5 s, 3 x 30 s, 5 x 60 s, 3 x 120 s.
    static FrameScheme cardiac_default();

    // CSV columns: t_start_min,t_end_min
    static FrameScheme read_csv(const std::string& path);
    void write_csv(const std::string& path) const;

private:
    std::vector<std::pair<double, double>> frames_;
};

}  // namespace dpet
