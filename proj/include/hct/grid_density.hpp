#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "hct/errors.hpp"

namespace hct {

// Univariate distribution discretised on a strictly increasing grid. `mass`
// holds trapezoid-rule probabilities summing to one.
class GridDensity {
 public:
  GridDensity() = default;

  // From unnormalised density values at the grid points.
  static GridDensity from_density(std::vector<double> grid, const std::vector<double>& density) {
    require(grid.size() == density.size() && grid.size() >= 2, "GridDensity: grid and density sizes differ");
    for (std::size_t i = 1; i < grid.size(); ++i)
      require(grid[i] > grid[i - 1], "GridDensity: grid must be strictly increasing");
    const auto w = trapezoid_weights(grid);
    std::vector<double> mass(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
      require(density[i] >= 0.0 && std::isfinite(density[i]), "GridDensity: density must be finite, >= 0");
      mass[i] = density[i] * w[i];
    }
    return from_mass(std::move(grid), std::move(mass));
  }

  // From unnormalised point masses.
  static GridDensity from_mass(std::vector<double> grid, std::vector<double> mass) {
    require(grid.size() == mass.size() && grid.size() >= 2, "GridDensity: grid and mass sizes differ");
    const double total = std::accumulate(mass.begin(), mass.end(), 0.0);
    if (!(total > 0.0) || !std::isfinite(total)) throw NumericalError("GridDensity: total mass is zero or non-finite");
    for (double& m : mass) m /= total;
    GridDensity g;
    g.grid_ = std::move(grid);
    g.mass_ = std::move(mass);
    return g;
  }

  static std::vector<double> trapezoid_weights(const std::vector<double>& grid) {
    std::vector<double> w(grid.size(), 0.0);
    for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
      const double h = 0.5 * (grid[i + 1] - grid[i]);
      w[i] += h;
      w[i + 1] += h;
    }
    return w;
  }

  const std::vector<double>& grid() const noexcept { return grid_; }
  const std::vector<double>& mass() const noexcept { return mass_; }
  std::size_t size() const noexcept { return grid_.size(); }

  // Density values recovered from the masses.
  std::vector<double> density() const {
    const auto w = trapezoid_weights(grid_);
    std::vector<double> d(grid_.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = mass_[i] / w[i];
    return d;
  }

  double mean() const {
    double m = 0.0;
    for (std::size_t i = 0; i < grid_.size(); ++i) m += mass_[i] * grid_[i];
    return m;
  }

  double variance() const {
    const double m = mean();
    double v = 0.0;
    for (std::size_t i = 0; i < grid_.size(); ++i) v += mass_[i] * (grid_[i] - m) * (grid_[i] - m);
    return v;
  }

  double sd() const { return std::sqrt(variance()); }

  double total_mass() const { return std::accumulate(mass_.begin(), mass_.end(), 0.0); }

 private:
  std::vector<double> grid_;
  std::vector<double> mass_;
};

inline std::vector<double> uniform_grid(double lo, double hi, int points) {
  require(points >= 2 && hi > lo, "uniform_grid: need hi > lo and >= 2 points");
  std::vector<double> g(points);
  const double h = (hi - lo) / (points - 1);
  for (int i = 0; i < points; ++i) g[i] = lo + h * i;
  g.back() = hi;
  return g;
}

}  // namespace hct
