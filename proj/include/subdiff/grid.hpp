#pragma once

#include <cstddef>
#include <memory>
#include <vector>

#include "subdiff/error.hpp"

namespace subdiff {

/// Clock-time discretization 0 = t_0 < t_1 < ... < t_N = T.
class TimeGrid {
public:
    TimeGrid() = default;

    explicit TimeGrid(std::vector<double> nodes) : nodes_(std::move(nodes)) {
        if (nodes_.size() < 2) fail(ErrorKind::domain, "time grid needs at least two nodes");
        if (nodes_.front() != 0.0) fail(ErrorKind::domain, "time grid must start at 0");
        for (std::size_t i = 1; i < nodes_.size(); ++i)
            if (!(nodes_[i] > nodes_[i - 1]))
                fail(ErrorKind::domain, "time grid must be strictly increasing");
    }

    /// N equal steps on [0, horizon].
    static TimeGrid uniform(double horizon, std::size_t steps) {
        if (!(horizon > 0.0)) fail(ErrorKind::domain, "horizon T must be positive");
        if (steps == 0) fail(ErrorKind::domain, "step count N must be positive");
        std::vector<double> nodes(steps + 1);
        for (std::size_t i = 0; i <= steps; ++i)
            nodes[i] = horizon * static_cast<double>(i) / static_cast<double>(steps);
        nodes[steps] = horizon;
        return TimeGrid(std::move(nodes));
    }

    [[nodiscard]] std::size_t steps() const noexcept { return nodes_.size() - 1; }
    [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }
    [[nodiscard]] double horizon() const noexcept { return nodes_.back(); }
    [[nodiscard]] double operator[](std::size_t i) const noexcept { return nodes_[i]; }
    [[nodiscard]] double dt(std::size_t cell) const noexcept { return nodes_[cell + 1] - nodes_[cell]; }
    [[nodiscard]] double midpoint(std::size_t cell) const noexcept {
        return nodes_[cell] + 0.5 * (nodes_[cell + 1] - nodes_[cell]);
    }
    [[nodiscard]] const std::vector<double>& nodes() const noexcept { return nodes_; }

    friend bool operator==(const TimeGrid& a, const TimeGrid& b) { return a.nodes_ == b.nodes_; }

private:
    std::vector<double> nodes_;
};

using GridPtr = std::shared_ptr<const TimeGrid>;

inline GridPtr make_grid(double horizon, std::size_t steps) {
    return std::make_shared<const TimeGrid>(TimeGrid::uniform(horizon, steps));
}

}  // namespace subdiff
