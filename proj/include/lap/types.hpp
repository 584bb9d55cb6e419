#pragma once

#include <complex>
#include <type_traits>

#include <Eigen/Core>
#include <Eigen/SparseCore>

namespace lap {

using Index = Eigen::Index;
using Complex = std::complex<double>;

template <class Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <class Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using VecR = Vec<double>;
using MatR = Mat<double>;
using VecC = Vec<Complex>;
using MatC = Mat<Complex>;

/// Compressed-row sparse matrix with real weights.
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor, int>;

template <class Scalar>
inline constexpr bool is_complex_v = !std::is_same_v<Scalar, double>;

/// Real inner product Re(a^H b). Complex vectors are treated as R^{2n}.
template <class DerivedA, class DerivedB>
double inner(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  return std::real(a.dot(b));
}

/// Multiply a (possibly complex) vector by a real sparse matrix; real and
/// imaginary parts are transformed independently.
template <class Scalar>
Vec<Scalar> sparse_times(const SparseMatrix& A, const Vec<Scalar>& v) {
  if constexpr (is_complex_v<Scalar>) {
    const VecR re = A * v.real();
    const VecR im = A * v.imag();
    Vec<Scalar> out(re.size());
    out.real() = re;
    out.imag() = im;
    return out;
  } else {
    return A * v;
  }
}

template <class Scalar>
Vec<Scalar> sparse_adjoint_times(const SparseMatrix& A, const Vec<Scalar>& v) {
  if constexpr (is_complex_v<Scalar>) {
    const VecR re = A.transpose() * v.real();
    const VecR im = A.transpose() * v.imag();
    Vec<Scalar> out(re.size());
    out.real() = re;
    out.imag() = im;
    return out;
  } else {
    return A.transpose() * v;
  }
}

}  // namespace lap
