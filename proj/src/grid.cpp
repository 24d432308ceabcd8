#include "nemo/grid.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "nemo/errors.hpp"

namespace nemo {

SubjectIndexMap::SubjectIndexMap(std::vector<Eigen::Index> indices, Eigen::Index grid_size)
    : indices_(std::move(indices)) {
  for (std::size_t j = 0; j < indices_.size(); ++j) {
    if (indices_[j] < 0 || indices_[j] >= grid_size)
      throw InvalidGrid("subject index " + std::to_string(indices_[j]) + " outside grid of size " +
                        std::to_string(grid_size));
    if (j > 0 && indices_[j] <= indices_[j - 1])
      throw InvalidGrid("subject indices must be strictly increasing");
  }
}

Eigen::VectorXd SubjectIndexMap::gather(const Eigen::Ref<const Eigen::VectorXd>& common) const {
  Eigen::VectorXd out(size());
  for (Eigen::Index j = 0; j < size(); ++j) out[j] = common[(*this)[j]];
  return out;
}

void SubjectIndexMap::scatter_add(const Eigen::Ref<const Eigen::VectorXd>& values,
                                  Eigen::Ref<Eigen::VectorXd> common) const {
  if (values.size() != size()) throw DimensionError("scatter_add: length mismatch");
  for (Eigen::Index j = 0; j < size(); ++j) common[(*this)[j]] += values[j];
}

Eigen::VectorXd build_weights(std::span<const double> points) {
  const auto m = static_cast<Eigen::Index>(points.size());
  if (m < 2) throw InvalidGrid("a grid needs at least two points");
  for (Eigen::Index l = 1; l < m; ++l) {
    if (!(points[l] > points[l - 1])) throw InvalidGrid("grid points must be strictly increasing");
  }
  Eigen::VectorXd w(m);
  w[0] = (points[1] - points[0]) / 2.0;
  for (Eigen::Index l = 1; l + 1 < m; ++l) w[l] = (points[l + 1] - points[l - 1]) / 2.0;
  w[m - 1] = (points[m - 1] - points[m - 2]) / 2.0;
  return w;
}

Grid::Grid(std::vector<double> points)
    : points_(Eigen::Map<const Eigen::VectorXd>(points.data(), static_cast<Eigen::Index>(points.size()))),
      weights_(build_weights(points)) {}

Grid::Grid(const Eigen::VectorXd& points)
    : points_(points), weights_(build_weights(std::span<const double>(points.data(), points.size()))) {}

Grid Grid::uniform(double lo, double hi, Eigen::Index m) {
  if (m < 2 || !(hi > lo)) throw InvalidGrid("uniform grid needs m >= 2 and hi > lo");
  std::vector<double> pts(static_cast<std::size_t>(m));
  for (Eigen::Index l = 0; l < m; ++l)
    pts[static_cast<std::size_t>(l)] = lo + (hi - lo) * static_cast<double>(l) / static_cast<double>(m - 1);
  pts.back() = hi;
  return Grid(std::move(pts));
}

double inner_product(const Eigen::Ref<const Eigen::VectorXd>& f, const Eigen::Ref<const Eigen::VectorXd>& g,
                     const Grid& grid) {
  if (f.size() != grid.size() || g.size() != grid.size())
    throw DimensionError("inner_product: vectors must match the grid size " + std::to_string(grid.size()));
  // f*g first so the result is exactly symmetric in (f, g)
  return (grid.weights().array() * (f.array() * g.array())).sum();
}

MergedGrid merge_grids(const std::vector<std::vector<double>>& subject_points, double tolerance) {
  if (subject_points.empty()) throw EmptyDataset("no subjects to merge");
  std::vector<double> all;
  for (std::size_t i = 0; i < subject_points.size(); ++i) {
    const auto& pts = subject_points[i];
    if (pts.empty()) throw EmptyDataset("subject " + std::to_string(i) + " has no observations");
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (!std::isfinite(pts[j])) throw InvalidGrid("non-finite time stamp");
      if (j > 0 && !(pts[j] > pts[j - 1]))
        throw InvalidGrid("subject " + std::to_string(i) + " time stamps must be strictly increasing");
    }
    all.insert(all.end(), pts.begin(), pts.end());
  }
  std::sort(all.begin(), all.end());
  std::vector<double> unique;
  for (double t : all) {
    if (unique.empty() || t - unique.back() > tolerance) unique.push_back(t);
  }
  const auto m = static_cast<Eigen::Index>(unique.size());

  std::vector<SubjectIndexMap> maps;
  maps.reserve(subject_points.size());
  for (const auto& pts : subject_points) {
    std::vector<Eigen::Index> idx;
    idx.reserve(pts.size());
    for (double t : pts) {
      // Representative of a cluster is its smallest member, so search from t - tol.
      auto it = std::lower_bound(unique.begin(), unique.end(), t - tolerance);
      idx.push_back(static_cast<Eigen::Index>(it - unique.begin()));
    }
    maps.emplace_back(std::move(idx), m);
  }
  return {Grid(std::move(unique)), std::move(maps)};
}

}  // namespace nemo
