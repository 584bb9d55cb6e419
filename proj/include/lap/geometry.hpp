#pragma once

#include <vector>

#include "lap/types.hpp"

namespace lap {

/// Rectangular cell-centered grid on a box domain in 2 or 3 dimensions.
/// Cells are ordered lexicographically with axis 0 varying fastest.
class Grid {
 public:
  Grid() = default;
  /// Throws std::invalid_argument for a non-positive cell count or an empty
  /// box along any axis, or when dim is not 2 or 3.
  Grid(std::vector<Index> cells, std::vector<double> lo, std::vector<double> hi);

  int dim() const { return static_cast<int>(cells_.size()); }
  Index cells(int axis) const { return cells_[axis]; }
  const std::vector<Index>& cells() const { return cells_; }
  double lo(int axis) const { return lo_[axis]; }
  double hi(int axis) const { return hi_[axis]; }
  double cell_size(int axis) const { return (hi_[axis] - lo_[axis]) / static_cast<double>(cells_[axis]); }
  double cell_volume() const;
  Index size() const;
  /// Center of the domain box.
  VecR center() const;
  /// Linear index of a multi-index (axis 0 fastest).
  Index linear_index(const Index* multi) const;

  bool operator==(const Grid&) const = default;

 private:
  std::vector<Index> cells_;
  std::vector<double> lo_;
  std::vector<double> hi_;
};

/// Parameters of one rigid transformation: 1 angle in 2D, 3 Euler angles in
/// 3D (radians), plus a translation in domain units.
struct RigidMotion {
  VecR angles;
  VecR translation;

  static RigidMotion identity(int dim);
  static RigidMotion from_params(int dim, const Eigen::Ref<const VecR>& params);

  int dim() const { return static_cast<int>(translation.size()); }
  /// Flattened parameters (angles first, then translation).
  VecR params() const;
};

/// Number of rigid parameters per frame: 3 in 2D, 6 in 3D.
constexpr int rigid_param_count(int dim) { return dim == 2 ? 3 : 6; }

/// Ordered per-frame motions.
struct MotionStack {
  std::vector<RigidMotion> frames;

  static MotionStack unflatten(int dim, const VecR& w);
  VecR flatten() const;
  Index size() const { return static_cast<Index>(frames.size()); }
};

/// Points y_i (one row per cell center) in domain units.
struct TransformedGrid {
  MatR points;  // n x dim
};

/// Rotation matrix Q(angles). 2D is a plane rotation, 3D is Rz(a3) Ry(a2) Rx(a1).
MatR rotation_matrix(const VecR& angles);
/// Derivative of rotation_matrix with respect to angle j.
MatR rotation_derivative(const VecR& angles, int j);

TransformedGrid cell_centers(const Grid& grid);

/// y_i = Q (xi_i - c) + c + b where c is the domain-box center.
TransformedGrid rigid_apply(const RigidMotion& motion, const Grid& grid);

/// Derivative of rigid_apply with respect to the motion parameters. Row
/// i*dim + a holds the derivative of coordinate a of point i.
MatR rigid_jacobian(const RigidMotion& motion, const Grid& grid);

/// Bi/trilinear interpolation matrix sampling a cell-centered image at the
/// points y, with zero extension outside the lattice.
SparseMatrix interp_matrix(const TransformedGrid& y, const Grid& grid);

/// Interpolated values at the points together with their spatial gradient
/// (n x dim, one-sided derivative on stencil boundaries). Real and
/// imaginary parts are interpolated independently.
template <class Scalar>
struct InterpolatedField {
  Vec<Scalar> values;
  Mat<Scalar> gradient;
};

template <class Scalar>
InterpolatedField<Scalar> interpolate_with_gradient(const Vec<Scalar>& x, const TransformedGrid& y,
                                                    const Grid& grid);

/// d(T(y(w)) x)/dw for a single frame, n x q.
template <class Scalar>
Mat<Scalar> transformed_image_jacobian(const Vec<Scalar>& x, const RigidMotion& motion, const Grid& grid);

}  // namespace lap
