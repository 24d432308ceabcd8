#pragma once

#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace nemo {

/// Strictly increasing list of common-grid positions observed for one subject.
class SubjectIndexMap {
 public:
  SubjectIndexMap() = default;
  /// Throws InvalidGrid unless indices are strictly increasing and < grid_size.
  SubjectIndexMap(std::vector<Eigen::Index> indices, Eigen::Index grid_size);

  const std::vector<Eigen::Index>& indices() const { return indices_; }
  Eigen::Index size() const { return static_cast<Eigen::Index>(indices_.size()); }
  Eigen::Index operator[](Eigen::Index j) const { return indices_[static_cast<std::size_t>(j)]; }

  /// f(t_i): values of a common-grid vector at this subject's points.
  Eigen::VectorXd gather(const Eigen::Ref<const Eigen::VectorXd>& common) const;
  /// common[indices] += values.
  void scatter_add(const Eigen::Ref<const Eigen::VectorXd>& values, Eigen::Ref<Eigen::VectorXd> common) const;

  friend bool operator==(const SubjectIndexMap&, const SubjectIndexMap&) = default;

 private:
  std::vector<Eigen::Index> indices_;
};

/// Trapezoid quadrature weights for an increasing grid:
/// w_1 = (t_2 - t_1)/2, w_l = (t_{l+1} - t_{l-1})/2, w_m = (t_m - t_{m-1})/2.
Eigen::VectorXd build_weights(std::span<const double> points);

/// Common evaluation grid. Weights are computed once at construction.
class Grid {
 public:
  Grid() = default;
  explicit Grid(std::vector<double> points);
  explicit Grid(const Eigen::VectorXd& points);

  /// m equally spaced points on [lo, hi].
  static Grid uniform(double lo, double hi, Eigen::Index m);

  const Eigen::VectorXd& points() const { return points_; }
  const Eigen::VectorXd& weights() const { return weights_; }
  Eigen::Index size() const { return points_.size(); }
  double front() const { return points_[0]; }
  double back() const { return points_[points_.size() - 1]; }
  double length() const { return back() - front(); }

  friend bool operator==(const Grid& a, const Grid& b) { return a.points_ == b.points_; }

 private:
  Eigen::VectorXd points_;
  Eigen::VectorXd weights_;
};

/// Discrete L2 inner product sum_l w_l f(t_l) g(t_l).
double inner_product(const Eigen::Ref<const Eigen::VectorXd>& f,
                     const Eigen::Ref<const Eigen::VectorXd>& g, const Grid& grid);

inline double l2_norm(const Eigen::Ref<const Eigen::VectorXd>& f, const Grid& grid) {
  return std::sqrt(inner_product(f, f, grid));
}

struct MergedGrid {
  Grid grid;
  std::vector<SubjectIndexMap> maps;
};

inline constexpr double kGridMergeTolerance = 1e-9;

/// Sorted union of all subject grids, deduplicated with an absolute tolerance,
/// plus each subject's index map into it.
MergedGrid merge_grids(const std::vector<std::vector<double>>& subject_points,
                       double tolerance = kGridMergeTolerance);

}  // namespace nemo
