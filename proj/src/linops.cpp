#include "lap/linops.hpp"

#include <Eigen/QR>
#include <stdexcept>
#include <string>

namespace lap {

template <class Scalar>
typename LinearMap<Scalar>::Vector LinearMap<Scalar>::apply(const Vector& v) const {
  if (v.size() != cols_)
    throw std::invalid_argument("LinearMap::apply: expected length " + std::to_string(cols_) + ", got " +
                                std::to_string(v.size()));
  return apply_(v);
}

template <class Scalar>
typename LinearMap<Scalar>::Vector LinearMap<Scalar>::adjoint(const Vector& u) const {
  if (u.size() != rows_)
    throw std::invalid_argument("LinearMap::adjoint: expected length " + std::to_string(rows_) + ", got " +
                                std::to_string(u.size()));
  return adjoint_(u);
}

template <class Scalar>
LinearMap<Scalar> identity_map(Index n) {
  auto id = [](const Vec<Scalar>& v) { return v; };
  return {n, n, id, id};
}

template <class Scalar>
LinearMap<Scalar> zero_map(Index rows, Index cols) {
  return {rows, cols, [rows](const Vec<Scalar>&) -> Vec<Scalar> { return Vec<Scalar>::Zero(rows); },
          [cols](const Vec<Scalar>&) -> Vec<Scalar> { return Vec<Scalar>::Zero(cols); }};
}

template <class Scalar>
LinearMap<Scalar> scaled(const LinearMap<Scalar>& A, double s) {
  return {A.rows(), A.cols(), [A, s](const Vec<Scalar>& v) -> Vec<Scalar> { return s * A.apply(v); },
          [A, s](const Vec<Scalar>& u) -> Vec<Scalar> { return s * A.adjoint(u); }};
}

template <class Scalar>
LinearMap<Scalar> sparse_map(SparseMatrix M) {
  auto shared = std::make_shared<const SparseMatrix>(std::move(M));
  return {shared->rows(), shared->cols(),
          [shared](const Vec<Scalar>& v) { return sparse_times<Scalar>(*shared, v); },
          [shared](const Vec<Scalar>& u) { return sparse_adjoint_times<Scalar>(*shared, u); }};
}

template <class Scalar>
LinearMap<Scalar> dense_map(Mat<Scalar> M) {
  auto shared = std::make_shared<const Mat<Scalar>>(std::move(M));
  return {shared->rows(), shared->cols(),
          [shared](const Vec<Scalar>& v) -> Vec<Scalar> { return (*shared) * v; },
          [shared](const Vec<Scalar>& u) -> Vec<Scalar> { return shared->adjoint() * u; }};
}

template <class Scalar>
LinearMap<Scalar> compose(const LinearMap<Scalar>& A, const LinearMap<Scalar>& B) {
  if (A.cols() != B.rows()) throw std::invalid_argument("compose: inner dimensions differ");
  return {A.rows(), B.cols(), [A, B](const Vec<Scalar>& v) { return A.apply(B.apply(v)); },
          [A, B](const Vec<Scalar>& u) { return B.adjoint(A.adjoint(u)); }};
}

template <class Scalar>
LinearMap<Scalar> mask_columns(const LinearMap<Scalar>& A, std::vector<bool> keep) {
  if (static_cast<Index>(keep.size()) != A.cols()) throw std::invalid_argument("mask_columns: mask length mismatch");
  auto mask = std::make_shared<const std::vector<bool>>(std::move(keep));
  auto zero_out = [mask](Vec<Scalar> v) {
    for (Index i = 0; i < v.size(); ++i)
      if (!(*mask)[i]) v[i] = Scalar(0);
    return v;
  };
  return {A.rows(), A.cols(), [A, zero_out](const Vec<Scalar>& v) { return A.apply(zero_out(v)); },
          [A, zero_out](const Vec<Scalar>& u) { return zero_out(A.adjoint(u)); }};
}

template <class Scalar>
LinearMap<Scalar> block_diagonal(const std::vector<LinearMap<Scalar>>& maps) {
  if (maps.empty()) throw std::invalid_argument("block_diagonal: no blocks");
  Index rows = 0, cols = 0;
  for (const auto& m : maps) {
    rows += m.rows();
    cols += m.cols();
  }
  auto blocks = std::make_shared<const std::vector<LinearMap<Scalar>>>(maps);
  auto fwd = [blocks, rows](const Vec<Scalar>& v) {
    Vec<Scalar> out(rows);
    Index r = 0, c = 0;
    for (const auto& b : *blocks) {
      out.segment(r, b.rows()) = b.apply(v.segment(c, b.cols()));
      r += b.rows();
      c += b.cols();
    }
    return out;
  };
  auto adj = [blocks, cols](const Vec<Scalar>& u) {
    Vec<Scalar> out(cols);
    Index r = 0, c = 0;
    for (const auto& b : *blocks) {
      out.segment(c, b.cols()) = b.adjoint(u.segment(r, b.rows()));
      r += b.rows();
      c += b.cols();
    }
    return out;
  };
  return {rows, cols, fwd, adj};
}

template <class Scalar>
LinearMap<Scalar> vstack(const std::vector<LinearMap<Scalar>>& maps) {
  if (maps.empty()) throw std::invalid_argument("vstack: no blocks");
  const Index cols = maps.front().cols();
  Index rows = 0;
  for (const auto& m : maps) {
    if (m.cols() != cols) throw std::invalid_argument("vstack: column counts differ");
    rows += m.rows();
  }
  auto blocks = std::make_shared<const std::vector<LinearMap<Scalar>>>(maps);
  auto fwd = [blocks, rows](const Vec<Scalar>& v) {
    Vec<Scalar> out(rows);
    Index r = 0;
    for (const auto& b : *blocks) {
      out.segment(r, b.rows()) = b.apply(v);
      r += b.rows();
    }
    return out;
  };
  auto adj = [blocks, cols](const Vec<Scalar>& u) {
    Vec<Scalar> out = Vec<Scalar>::Zero(cols);
    Index r = 0;
    for (const auto& b : *blocks) {
      out += b.adjoint(u.segment(r, b.rows()));
      r += b.rows();
    }
    return out;
  };
  return {rows, cols, fwd, adj};
}

template <class Scalar>
LinearMap<Scalar> counting(const LinearMap<Scalar>& A, std::shared_ptr<MatvecCounter> counter) {
  return {A.rows(), A.cols(),
          [A, counter](const Vec<Scalar>& v) {
            counter->applies.fetch_add(1);
            return A.apply(v);
          },
          [A, counter](const Vec<Scalar>& u) {
            counter->adjoints.fetch_add(1);
            return A.adjoint(u);
          }};
}

SparseMatrix grad_matrix(const Grid& grid) {
  const int d = grid.dim();
  const Index n = grid.size();
  std::vector<Eigen::Triplet<double, int>> trip;
  Index row = 0;
  Index stride = 1;
  for (int a = 0; a < d; ++a) {
    const double inv_h = 1.0 / grid.cell_size(a);
    std::vector<Index> multi(d, 0);
    for (Index i = 0; i < n; ++i) {
      if (multi[a] + 1 < grid.cells(a)) {
        trip.emplace_back(static_cast<int>(row), static_cast<int>(i), -inv_h);
        trip.emplace_back(static_cast<int>(row), static_cast<int>(i + stride), inv_h);
        ++row;
      }
      for (int b = 0; b < d; ++b) {
        if (++multi[b] < grid.cells(b)) break;
        multi[b] = 0;
      }
    }
    stride *= grid.cells(a);
  }
  SparseMatrix G(row, n);
  G.setFromTriplets(trip.begin(), trip.end());
  G.makeCompressed();
  return G;
}

template <class Scalar>
LinearMap<Scalar> grad_operator(const Grid& grid) {
  return sparse_map<Scalar>(grad_matrix(grid));
}

template <class Scalar>
Mat<Scalar> to_dense(const LinearMap<Scalar>& A) {
  Mat<Scalar> M(A.rows(), A.cols());
  Vec<Scalar> e = Vec<Scalar>::Zero(A.cols());
  for (Index j = 0; j < A.cols(); ++j) {
    e[j] = Scalar(1);
    M.col(j) = A.apply(e);
    e[j] = Scalar(0);
  }
  return M;
}

namespace {

template <class Scalar>
bool deficient(const Eigen::Ref<const Mat<Scalar>>& R) {
  if (R.cols() == 0) return false;
  const double largest = R.diagonal().cwiseAbs().maxCoeff();
  if (!(largest > 0.0)) return true;
  return R.diagonal().cwiseAbs().minCoeff() < 1e-12 * largest;
}

}  // namespace

template <class Scalar>
ThinQr<Scalar> thin_qr(const Mat<Scalar>& A) {
  const Index m = A.rows(), q = A.cols();
  if (m < q) throw std::invalid_argument("thin_qr: requires rows >= cols");
  Eigen::HouseholderQR<Mat<Scalar>> qr(A);
  ThinQr<Scalar> out;
  out.Q = qr.householderQ() * Mat<Scalar>::Identity(m, q);
  out.R = qr.matrixQR().topRows(q).template triangularView<Eigen::Upper>();
  for (Index j = 0; j < q; ++j) {
    const Scalar d = out.R(j, j);
    const double mag = std::abs(d);
    if (mag == 0.0) continue;
    const Scalar phase = d / mag;
    out.R.row(j) *= Eigen::numext::conj(phase);
    out.Q.col(j) *= phase;
    out.R(j, j) = Scalar(mag);
  }
  out.rank_deficient = deficient<Scalar>(out.R);
  return out;
}

template <class Scalar>
RealQr<Scalar> thin_qr_over_reals(const Mat<Scalar>& A) {
  if constexpr (is_complex_v<Scalar>) {
    const Index m = A.rows();
    MatR embedded(2 * m, A.cols());
    embedded.topRows(m) = A.real();
    embedded.bottomRows(m) = A.imag();
    auto f = thin_qr<double>(embedded);
    RealQr<Scalar> out;
    out.Q.resize(m, A.cols());
    out.Q.real() = f.Q.topRows(m);
    out.Q.imag() = f.Q.bottomRows(m);
    out.R = std::move(f.R);
    out.rank_deficient = f.rank_deficient;
    return out;
  } else {
    auto f = thin_qr<double>(A);
    return {std::move(f.Q), std::move(f.R), f.rank_deficient};
  }
}

VecR chol_solve_normal(const MatR& R, const VecR& rhs) {
  if (R.rows() != R.cols() || R.rows() != rhs.size()) throw std::invalid_argument("chol_solve_normal: shape mismatch");
  for (Index j = 0; j < R.rows(); ++j)
    if (R(j, j) == 0.0) throw std::domain_error("chol_solve_normal: singular triangular factor");
  const VecR z = R.transpose().triangularView<Eigen::Lower>().solve(rhs);
  return R.triangularView<Eigen::Upper>().solve(z);
}

#define LAP_INSTANTIATE_LINOPS(S)                                                         \
  template class LinearMap<S>;                                                            \
  template LinearMap<S> identity_map<S>(Index);                                           \
  template LinearMap<S> zero_map<S>(Index, Index);                                        \
  template LinearMap<S> scaled<S>(const LinearMap<S>&, double);                           \
  template LinearMap<S> sparse_map<S>(SparseMatrix);                                      \
  template LinearMap<S> dense_map<S>(Mat<S>);                                             \
  template LinearMap<S> compose<S>(const LinearMap<S>&, const LinearMap<S>&);             \
  template LinearMap<S> mask_columns<S>(const LinearMap<S>&, std::vector<bool>);          \
  template LinearMap<S> block_diagonal<S>(const std::vector<LinearMap<S>>&);              \
  template LinearMap<S> vstack<S>(const std::vector<LinearMap<S>>&);                      \
  template LinearMap<S> counting<S>(const LinearMap<S>&, std::shared_ptr<MatvecCounter>); \
  template LinearMap<S> grad_operator<S>(const Grid&);                                    \
  template Mat<S> to_dense<S>(const LinearMap<S>&);                                       \
  template ThinQr<S> thin_qr<S>(const Mat<S>&);                                           \
  template RealQr<S> thin_qr_over_reals<S>(const Mat<S>&);

LAP_INSTANTIATE_LINOPS(double)
LAP_INSTANTIATE_LINOPS(Complex)

}  // namespace lap
