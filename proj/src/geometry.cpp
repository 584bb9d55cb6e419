#include "lap/geometry.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace lap {

Grid::Grid(std::vector<Index> cells, std::vector<double> lo, std::vector<double> hi)
    : cells_(std::move(cells)), lo_(std::move(lo)), hi_(std::move(hi)) {
  const auto d = cells_.size();
  if (d != 2 && d != 3) throw std::invalid_argument("Grid: dimension must be 2 or 3");
  if (lo_.size() != d || hi_.size() != d) throw std::invalid_argument("Grid: box dimension mismatch");
  for (std::size_t a = 0; a < d; ++a) {
    if (cells_[a] <= 0) throw std::invalid_argument("Grid: non-positive cell count on axis " + std::to_string(a));
    if (!(hi_[a] > lo_[a])) throw std::invalid_argument("Grid: empty domain interval on axis " + std::to_string(a));
  }
}

Index Grid::size() const {
  Index n = 1;
  for (auto c : cells_) n *= c;
  return n;
}

double Grid::cell_volume() const {
  double v = 1.0;
  for (int a = 0; a < dim(); ++a) v *= cell_size(a);
  return v;
}

VecR Grid::center() const {
  VecR c(dim());
  for (int a = 0; a < dim(); ++a) c[a] = 0.5 * (lo_[a] + hi_[a]);
  return c;
}

Index Grid::linear_index(const Index* multi) const {
  Index idx = 0;
  Index stride = 1;
  for (int a = 0; a < dim(); ++a) {
    idx += multi[a] * stride;
    stride *= cells_[a];
  }
  return idx;
}

RigidMotion RigidMotion::identity(int dim) {
  RigidMotion m;
  m.angles = VecR::Zero(dim == 2 ? 1 : 3);
  m.translation = VecR::Zero(dim);
  return m;
}

RigidMotion RigidMotion::from_params(int dim, const Eigen::Ref<const VecR>& params) {
  const int q = rigid_param_count(dim);
  if (params.size() != q) throw std::invalid_argument("RigidMotion: expected " + std::to_string(q) + " parameters");
  const int n_angles = q - dim;
  RigidMotion m;
  m.angles = params.head(n_angles);
  m.translation = params.tail(dim);
  return m;
}

VecR RigidMotion::params() const {
  VecR p(angles.size() + translation.size());
  p << angles, translation;
  return p;
}

MotionStack MotionStack::unflatten(int dim, const VecR& w) {
  const int q = rigid_param_count(dim);
  if (w.size() % q != 0) throw std::invalid_argument("MotionStack: length not a multiple of q");
  MotionStack s;
  for (Index k = 0; k < w.size() / q; ++k) s.frames.push_back(RigidMotion::from_params(dim, w.segment(k * q, q)));
  return s;
}

VecR MotionStack::flatten() const {
  if (frames.empty()) return VecR();
  const Index q = frames.front().angles.size() + frames.front().translation.size();
  VecR w(q * size());
  for (Index k = 0; k < size(); ++k) w.segment(k * q, q) = frames[k].params();
  return w;
}

namespace {

Eigen::Matrix3d rot_x(double a) {
  Eigen::Matrix3d r;
  r << 1, 0, 0, 0, std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a);
  return r;
}
Eigen::Matrix3d rot_y(double a) {
  Eigen::Matrix3d r;
  r << std::cos(a), 0, std::sin(a), 0, 1, 0, -std::sin(a), 0, std::cos(a);
  return r;
}
Eigen::Matrix3d rot_z(double a) {
  Eigen::Matrix3d r;
  r << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
  return r;
}
Eigen::Matrix3d drot_x(double a) {
  Eigen::Matrix3d r;
  r << 0, 0, 0, 0, -std::sin(a), -std::cos(a), 0, std::cos(a), -std::sin(a);
  return r;
}
Eigen::Matrix3d drot_y(double a) {
  Eigen::Matrix3d r;
  r << -std::sin(a), 0, std::cos(a), 0, 0, 0, -std::cos(a), 0, -std::sin(a);
  return r;
}
Eigen::Matrix3d drot_z(double a) {
  Eigen::Matrix3d r;
  r << -std::sin(a), -std::cos(a), 0, std::cos(a), -std::sin(a), 0, 0, 0, 0;
  return r;
}

// Q - I, evaluated without cancellation at zero angles.
MatR rotation_minus_identity(const VecR& angles) {
  MatR q = rotation_matrix(angles);
  q.diagonal().array() -= 1.0;
  if (angles.isZero(0.0)) q.setZero();
  return q;
}

}  // namespace

MatR rotation_matrix(const VecR& angles) {
  if (angles.size() == 1) {
    const double c = std::cos(angles[0]), s = std::sin(angles[0]);
    MatR q(2, 2);
    q << c, -s, s, c;
    return q;
  }
  if (angles.size() == 3) return rot_z(angles[2]) * rot_y(angles[1]) * rot_x(angles[0]);
  throw std::invalid_argument("rotation_matrix: expected 1 or 3 angles");
}

MatR rotation_derivative(const VecR& angles, int j) {
  if (angles.size() == 1) {
    const double c = std::cos(angles[0]), s = std::sin(angles[0]);
    MatR dq(2, 2);
    dq << -s, -c, c, -s;
    return dq;
  }
  switch (j) {
    case 0: return rot_z(angles[2]) * rot_y(angles[1]) * drot_x(angles[0]);
    case 1: return rot_z(angles[2]) * drot_y(angles[1]) * rot_x(angles[0]);
    case 2: return drot_z(angles[2]) * rot_y(angles[1]) * rot_x(angles[0]);
    default: throw std::invalid_argument("rotation_derivative: angle index out of range");
  }
}

TransformedGrid cell_centers(const Grid& grid) {
  const int d = grid.dim();
  const Index n = grid.size();
  TransformedGrid out{MatR(n, d)};
  std::vector<Index> multi(d, 0);
  for (Index i = 0; i < n; ++i) {
    for (int a = 0; a < d; ++a)
      out.points(i, a) = grid.lo(a) + (static_cast<double>(multi[a]) + 0.5) * grid.cell_size(a);
    for (int a = 0; a < d; ++a) {
      if (++multi[a] < grid.cells(a)) break;
      multi[a] = 0;
    }
  }
  return out;
}

TransformedGrid rigid_apply(const RigidMotion& motion, const Grid& grid) {
  if (motion.dim() != grid.dim()) throw std::invalid_argument("rigid_apply: dimension mismatch");
  TransformedGrid y = cell_centers(grid);
  const MatR qmi = rotation_minus_identity(motion.angles);
  const VecR c = grid.center();
  // y = xi + (Q - I)(xi - c) + b keeps the identity motion exact.
  for (Index i = 0; i < y.points.rows(); ++i) {
    const VecR xi = y.points.row(i).transpose();
    y.points.row(i) = (xi + qmi * (xi - c) + motion.translation).transpose();
  }
  return y;
}

MatR rigid_jacobian(const RigidMotion& motion, const Grid& grid) {
  if (motion.dim() != grid.dim()) throw std::invalid_argument("rigid_jacobian: dimension mismatch");
  const int d = grid.dim();
  const int n_angles = static_cast<int>(motion.angles.size());
  const int q = n_angles + d;
  const TransformedGrid xi = cell_centers(grid);
  const VecR c = grid.center();
  std::vector<MatR> dq;
  for (int j = 0; j < n_angles; ++j) dq.push_back(rotation_derivative(motion.angles, j));
  MatR jac = MatR::Zero(grid.size() * d, q);
  for (Index i = 0; i < grid.size(); ++i) {
    const VecR u = xi.points.row(i).transpose() - c;
    for (int j = 0; j < n_angles; ++j) jac.block(i * d, j, d, 1) = dq[j] * u;
    for (int a = 0; a < d; ++a) jac(i * d + a, n_angles + a) = 1.0;
  }
  return jac;
}

namespace {

// Stencil of a point: base lattice index and fractional offsets per axis.
struct Stencil {
  Index base[3];
  double frac[3];
};

Stencil locate(const Grid& grid, const double* point) {
  Stencil s{};
  for (int a = 0; a < grid.dim(); ++a) {
    double t = (point[a] - grid.lo(a)) / grid.cell_size(a) - 0.5;
    const double r = std::round(t);
    if (std::abs(t - r) < 1e-12) t = r;
    const double f = std::floor(t);
    s.base[a] = static_cast<Index>(f);
    s.frac[a] = t - f;
  }
  return s;
}

}  // namespace

SparseMatrix interp_matrix(const TransformedGrid& y, const Grid& grid) {
  const int d = grid.dim();
  const Index n = y.points.rows();
  const int corners = 1 << d;
  std::vector<Eigen::Triplet<double, int>> trip;
  trip.reserve(static_cast<std::size_t>(n) * corners);
  double pt[3];
  for (Index i = 0; i < n; ++i) {
    for (int a = 0; a < d; ++a) pt[a] = y.points(i, a);
    const Stencil s = locate(grid, pt);
    for (int corner = 0; corner < corners; ++corner) {
      Index multi[3];
      double weight = 1.0;
      bool inside = true;
      for (int a = 0; a < d; ++a) {
        const int bit = (corner >> a) & 1;
        multi[a] = s.base[a] + bit;
        weight *= bit ? s.frac[a] : 1.0 - s.frac[a];
        inside = inside && multi[a] >= 0 && multi[a] < grid.cells(a);
      }
      if (inside && weight != 0.0)
        trip.emplace_back(static_cast<int>(i), static_cast<int>(grid.linear_index(multi)), weight);
    }
  }
  SparseMatrix T(n, grid.size());
  T.setFromTriplets(trip.begin(), trip.end());
  T.makeCompressed();
  return T;
}

template <class Scalar>
InterpolatedField<Scalar> interpolate_with_gradient(const Vec<Scalar>& x, const TransformedGrid& y,
                                                    const Grid& grid) {
  if (x.size() != grid.size()) throw std::invalid_argument("interpolate_with_gradient: image size mismatch");
  const int d = grid.dim();
  const Index n = y.points.rows();
  const int corners = 1 << d;
  InterpolatedField<Scalar> out{Vec<Scalar>::Zero(n), Mat<Scalar>::Zero(n, d)};
  double pt[3];
  for (Index i = 0; i < n; ++i) {
    for (int a = 0; a < d; ++a) pt[a] = y.points(i, a);
    const Stencil s = locate(grid, pt);
    for (int corner = 0; corner < corners; ++corner) {
      Index multi[3];
      double w[3], dw[3];
      bool inside = true;
      for (int a = 0; a < d; ++a) {
        const int bit = (corner >> a) & 1;
        multi[a] = s.base[a] + bit;
        w[a] = bit ? s.frac[a] : 1.0 - s.frac[a];
        dw[a] = (bit ? 1.0 : -1.0) / grid.cell_size(a);
        inside = inside && multi[a] >= 0 && multi[a] < grid.cells(a);
      }
      if (!inside) continue;
      const Scalar xv = x[grid.linear_index(multi)];
      double weight = 1.0;
      for (int a = 0; a < d; ++a) weight *= w[a];
      out.values[i] += weight * xv;
      for (int a = 0; a < d; ++a) {
        double g = dw[a];
        for (int b = 0; b < d; ++b)
          if (b != a) g *= w[b];
        out.gradient(i, a) += g * xv;
      }
    }
  }
  return out;
}

template <class Scalar>
Mat<Scalar> transformed_image_jacobian(const Vec<Scalar>& x, const RigidMotion& motion, const Grid& grid) {
  const int d = grid.dim();
  const int n_angles = static_cast<int>(motion.angles.size());
  const int q = n_angles + d;
  const auto field = interpolate_with_gradient(x, rigid_apply(motion, grid), grid);
  const TransformedGrid xi = cell_centers(grid);
  const VecR c = grid.center();
  std::vector<MatR> dq;
  for (int j = 0; j < n_angles; ++j) dq.push_back(rotation_derivative(motion.angles, j));
  Mat<Scalar> jac(grid.size(), q);
  for (Index i = 0; i < grid.size(); ++i) {
    const VecR u = xi.points.row(i).transpose() - c;
    for (int j = 0; j < n_angles; ++j) {
      const VecR dy = dq[j] * u;
      Scalar acc(0);
      for (int a = 0; a < d; ++a) acc += field.gradient(i, a) * dy[a];
      jac(i, j) = acc;
    }
    for (int a = 0; a < d; ++a) jac(i, n_angles + a) = field.gradient(i, a);
  }
  return jac;
}

template InterpolatedField<double> interpolate_with_gradient(const VecR&, const TransformedGrid&, const Grid&);
template InterpolatedField<Complex> interpolate_with_gradient(const VecC&, const TransformedGrid&, const Grid&);
template MatR transformed_image_jacobian(const VecR&, const RigidMotion&, const Grid&);
template MatC transformed_image_jacobian(const VecC&, const RigidMotion&, const Grid&);

}  // namespace lap
