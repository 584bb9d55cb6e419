#pragma once

#include <atomic>
#include <functional>
#include <memory>
#include <vector>

#include "lap/geometry.hpp"
#include "lap/types.hpp"

namespace lap {

/// Matrix-free linear operator over Scalar (double or std::complex<double>).
/// `adjoint` is the adjoint with respect to Re(a^H b), which coincides with
/// the conjugate transpose for complex-linear maps.
template <class Scalar>
class LinearMap {
 public:
  using Vector = Vec<Scalar>;
  using Action = std::function<Vector(const Vector&)>;

  LinearMap() = default;
  LinearMap(Index rows, Index cols, Action apply, Action adjoint)
      : rows_(rows), cols_(cols), apply_(std::move(apply)), adjoint_(std::move(adjoint)) {}

  Index rows() const { return rows_; }
  Index cols() const { return cols_; }

  Vector apply(const Vector& v) const;
  Vector adjoint(const Vector& u) const;
  Vector operator*(const Vector& v) const { return apply(v); }

 private:
  Index rows_ = 0;
  Index cols_ = 0;
  Action apply_;
  Action adjoint_;
};

/// Shared, thread-safe tally of operator applications.
struct MatvecCounter {
  std::atomic<long> applies{0};
  std::atomic<long> adjoints{0};
  long total() const { return applies.load() + adjoints.load(); }
};

template <class Scalar>
LinearMap<Scalar> identity_map(Index n);
template <class Scalar>
LinearMap<Scalar> zero_map(Index rows, Index cols);
template <class Scalar>
LinearMap<Scalar> scaled(const LinearMap<Scalar>& A, double s);
/// A real sparse matrix acting on Scalar vectors.
template <class Scalar>
LinearMap<Scalar> sparse_map(SparseMatrix M);
template <class Scalar>
LinearMap<Scalar> dense_map(Mat<Scalar> M);
/// A o B.
template <class Scalar>
LinearMap<Scalar> compose(const LinearMap<Scalar>& A, const LinearMap<Scalar>& B);
/// A diag(mask): columns with mask false are dropped (zeroed).
template <class Scalar>
LinearMap<Scalar> mask_columns(const LinearMap<Scalar>& A, std::vector<bool> keep);

/// Block-diagonal operator; throws std::invalid_argument on an empty list.
template <class Scalar>
LinearMap<Scalar> block_diagonal(const std::vector<LinearMap<Scalar>>& maps);
/// [A_1; A_2; ...]; throws std::invalid_argument when column counts differ.
template <class Scalar>
LinearMap<Scalar> vstack(const std::vector<LinearMap<Scalar>>& maps);

/// Wraps a map so that every apply/adjoint increments `counter`.
template <class Scalar>
LinearMap<Scalar> counting(const LinearMap<Scalar>& A, std::shared_ptr<MatvecCounter> counter);

/// Forward-difference gradient, scaled by 1/h per axis, no boundary
/// differences. Axis blocks are stacked in axis order.
SparseMatrix grad_matrix(const Grid& grid);
template <class Scalar>
LinearMap<Scalar> grad_operator(const Grid& grid);

/// Explicit matrix of a map, built column by column.
template <class Scalar>
Mat<Scalar> to_dense(const LinearMap<Scalar>& A);

/// Thin QR factorization A = Q R.
template <class Scalar>
struct ThinQr {
  Mat<Scalar> Q;
  Mat<Scalar> R;
  bool rank_deficient = false;
};

/// Householder thin QR with R's diagonal made real and nonnegative. Sets
/// rank_deficient when some |R_jj| < 1e-12 max_i |R_ii|. Requires rows >= cols.
template <class Scalar>
ThinQr<Scalar> thin_qr(const Mat<Scalar>& A);

/// QR of a complex block treated as a real (2m x q) matrix, so that Q has
/// orthonormal columns under Re(a^H b) and R is real. For real input this is
/// thin_qr.
template <class Scalar>
struct RealQr {
  Mat<Scalar> Q;
  MatR R;
  bool rank_deficient = false;
};
template <class Scalar>
RealQr<Scalar> thin_qr_over_reals(const Mat<Scalar>& A);

/// (R^T R)^{-1} rhs by two triangular solves. Throws std::domain_error when R
/// has a zero diagonal entry.
VecR chol_solve_normal(const MatR& R, const VecR& rhs);

}  // namespace lap
